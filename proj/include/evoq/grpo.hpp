// Copyright 2026 The evoq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <vector>

#include "evoq/policy.hpp"

namespace evoq {

struct GrpoConfig {
  double clip_epsilon = 0.2;
  double beta = 0.05;
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double moment_epsilon = 1e-8;

  void validate() const;
};

/// One sampled action o_k for an image, with everything the objective needs
/// that does not depend on the parameters being optimized.
struct TrajectoryRecord {
  int image_id = 0;
  int bin = 0;
  std::vector<double> features;
  double advantage = 0.0;
  double logp_old = 0.0;  // under the sampling snapshot
  double logp_ref = 0.0;  // under the fixed reference snapshot
};

/// Records grouped by image; every group must hold the same number K.
using TrajectoryBatch = std::vector<std::vector<TrajectoryRecord>>;

struct LossBreakdown {
  double surrogate = 0.0;  // mean clipped surrogate
  double kl = 0.0;         // mean KL estimate
  double total = 0.0;      // -(surrogate - beta * kl)
};

struct PolicyGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;

  double norm() const;
  bool all_finite() const { return weights.allFinite() && biases.allFinite(); }
};

double importance_ratio(double logp_new, double logp_old);
double clipped_surrogate(double ratio, double advantage, double clip_epsilon);

/// r - log r - 1 with r = p_ref / p_theta.
double kl_approx(double p_ref, double p_theta);

LossBreakdown grpo_loss(const PolicyParams& params, const TrajectoryBatch& batch,
                        const GrpoConfig& config);

/// Exact gradient of grpo_loss().total for the categorical policy. When the
/// unclipped and clipped branches tie, the unclipped branch is used.
PolicyGradient loss_gradient(const PolicyParams& params, const TrajectoryBatch& batch,
                             const GrpoConfig& config);

struct AdamWState {
  Eigen::MatrixXd m_weights, v_weights;
  Eigen::VectorXd m_biases, v_biases;
  long step = 0;
  long total_steps = 1;  // linear decay horizon

  static AdamWState for_params(const PolicyParams& params, long total_steps);
};

/// Decoupled weight decay plus bias-corrected adaptive moments. The learning
/// rate decays linearly from config.learning_rate to 0 over total_steps.
/// Returns the learning rate used. Throws kNumericalFailure (leaving params
/// untouched) on a non-finite gradient.
double optimizer_step(PolicyParams& params, const PolicyGradient& gradient, AdamWState& state,
                      const GrpoConfig& config);

}  // namespace evoq
