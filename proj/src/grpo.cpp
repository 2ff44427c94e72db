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

#include "evoq/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "evoq/error.hpp"

namespace evoq {

namespace {

constexpr double kMaxLogRatio = 700.0;

void check_shape(const PolicyParams& params, const TrajectoryBatch& batch) {
  if (batch.empty()) fail(ErrorKind::kBatchShape, "empty trajectory batch");
  const std::size_t k = batch.front().size();
  if (k == 0) fail(ErrorKind::kBatchShape, "image group without trajectories");
  for (const auto& group : batch) {
    if (group.size() != k)
      fail(ErrorKind::kBatchShape, "ragged batch: groups of size " + std::to_string(group.size()) +
                                       " and " + std::to_string(k));
    for (const auto& rec : group)
      if (!params.scale.valid_bin(rec.bin) || rec.bin >= params.n_bins())
        fail(ErrorKind::kLookup, "trajectory bin out of range");
  }
}

// r - log r - 1 evaluated from log r, which stays accurate when the
// probabilities themselves underflow.
double kl_from_log_ratio(double log_r) { return std::exp(log_r) - log_r - 1.0; }

}  // namespace

void GrpoConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    fail(ErrorKind::kConfig, "grpo.clip_epsilon must lie in (0, 1)");
  if (!(beta >= 0.0)) fail(ErrorKind::kConfig, "grpo.beta must be >= 0");
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "grpo.learning_rate must be positive");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::kConfig, "grpo.weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorKind::kConfig, "grpo.beta1 and grpo.beta2 must lie in [0, 1)");
  if (!(moment_epsilon > 0.0)) fail(ErrorKind::kConfig, "grpo.moment_epsilon must be positive");
}

double PolicyGradient::norm() const {
  return std::sqrt(weights.squaredNorm() + biases.squaredNorm());
}

double importance_ratio(double logp_new, double logp_old) {
  const double diff = logp_new - logp_old;
  if (!std::isfinite(diff) || diff > kMaxLogRatio)
    fail(ErrorKind::kDivergedPolicy, "importance ratio overflow (log-ratio " + std::to_string(diff) + ")");
  return std::exp(diff);
}

double clipped_surrogate(double ratio, double advantage, double clip_epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

double kl_approx(double p_ref, double p_theta) {
  if (!(p_ref > 0.0) || !(p_theta > 0.0))
    fail(ErrorKind::kDegenerateSupport, "KL estimate needs strictly positive probabilities");
  const double r = p_ref / p_theta;
  return r - std::log(r) - 1.0;
}

LossBreakdown grpo_loss(const PolicyParams& params, const TrajectoryBatch& batch,
                        const GrpoConfig& config) {
  check_shape(params, batch);
  double surrogate = 0.0;
  double kl = 0.0;
  std::size_t count = 0;
  for (const auto& group : batch) {
    for (const auto& rec : group) {
      const double logp = log_prob_of(params, rec.features, rec.bin);
      surrogate += clipped_surrogate(importance_ratio(logp, rec.logp_old), rec.advantage,
                                     config.clip_epsilon);
      kl += kl_from_log_ratio(rec.logp_ref - logp);
      ++count;
    }
  }
  LossBreakdown out;
  out.surrogate = surrogate / static_cast<double>(count);
  out.kl = kl / static_cast<double>(count);
  out.total = -(out.surrogate - config.beta * out.kl);
  return out;
}

PolicyGradient loss_gradient(const PolicyParams& params, const TrajectoryBatch& batch,
                             const GrpoConfig& config) {
  check_shape(params, batch);
  const std::size_t count = batch.size() * batch.front().size();
  const double scale = 1.0 / static_cast<double>(count);
  PolicyGradient grad{Eigen::MatrixXd::Zero(params.weights.rows(), params.weights.cols()),
                      Eigen::VectorXd::Zero(params.biases.size())};
  for (const auto& group : batch) {
    for (const auto& rec : group) {
      const Eigen::VectorXd logp_all = log_score_distribution(params, rec.features);
      const double logp = logp_all[rec.bin];
      const double ratio = importance_ratio(logp, rec.logp_old);
      const double clipped =
          std::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
      // d(surrogate)/d(logp): ratio * a on the unclipped branch, zero when
      // the clipped (parameter-free) branch is the strict minimum.
      const double d_surrogate =
          ratio * rec.advantage <= clipped * rec.advantage ? ratio * rec.advantage : 0.0;
      // d(kl)/d(logp) with r = exp(logp_ref - logp): 1 - r.
      const double d_kl = 1.0 - std::exp(rec.logp_ref - logp);
      const double d_logp = -scale * (d_surrogate - config.beta * d_kl);

      // d logp_bin / d logits = onehot(bin) - softmax.
      Eigen::VectorXd d_logits = -logp_all.array().exp().matrix();
      d_logits[rec.bin] += 1.0;
      d_logits *= d_logp;
      const Eigen::Map<const Eigen::VectorXd> f(rec.features.data(),
                                                static_cast<Eigen::Index>(rec.features.size()));
      grad.weights.noalias() += d_logits * f.transpose();
      grad.biases += d_logits;
    }
  }
  return grad;
}

AdamWState AdamWState::for_params(const PolicyParams& params, long total_steps) {
  AdamWState s;
  s.m_weights = Eigen::MatrixXd::Zero(params.weights.rows(), params.weights.cols());
  s.v_weights = s.m_weights;
  s.m_biases = Eigen::VectorXd::Zero(params.biases.size());
  s.v_biases = s.m_biases;
  s.total_steps = std::max(1L, total_steps);
  return s;
}

double optimizer_step(PolicyParams& params, const PolicyGradient& gradient, AdamWState& state,
                      const GrpoConfig& config) {
  if (!gradient.all_finite())
    fail(ErrorKind::kNumericalFailure, "non-finite gradient");
  const double progress = static_cast<double>(state.step) / static_cast<double>(state.total_steps);
  const double lr = config.learning_rate * std::max(0.0, 1.0 - progress);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);

  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    theta *= (1.0 - lr * config.weight_decay);
    theta.array() -= lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + config.moment_epsilon));
  };
  update(params.weights, gradient.weights, state.m_weights, state.v_weights);
  update(params.biases, gradient.biases, state.m_biases, state.v_biases);
  return lr;
}

}  // namespace evoq
