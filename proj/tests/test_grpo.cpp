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

#include <doctest.h>

#include <cmath>

#include "evoq/error.hpp"
#include "evoq/grpo.hpp"
#include "evoq/seed.hpp"

using namespace evoq;

namespace {

const QualityScale kScale;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

PolicyParams random_params(int d, Engine& e, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  PolicyParams p = PolicyParams::zeros(kScale, d);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = n(e);
  for (Eigen::Index i = 0; i < p.biases.size(); ++i) p.biases[i] = n(e);
  return p;
}

// Batch whose old/ref log-probs come from nearby parameter sets, so ratios
// straddle the clip range.
TrajectoryBatch random_batch(const PolicyParams& p, Engine& e, int groups, int k) {
  const int d = p.feature_dim();
  PolicyParams old_p = p, ref_p = p;
  std::normal_distribution<double> n(0.0, 0.15);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) {
    old_p.weights.data()[i] += n(e);
    ref_p.weights.data()[i] += n(e);
  }
  TrajectoryBatch batch;
  std::normal_distribution<double> feat(0.0, 1.0);
  for (int g = 0; g < groups; ++g) {
    std::vector<double> f(static_cast<std::size_t>(d));
    for (double& x : f) x = feat(e);
    std::vector<TrajectoryRecord> group;
    for (int s = 0; s < k; ++s) {
      TrajectoryRecord r;
      r.image_id = g;
      r.bin = static_cast<int>(uniform_index(e, 17));
      r.features = f;
      r.advantage = feat(e);
      r.logp_old = log_prob_of(old_p, f, r.bin);
      r.logp_ref = log_prob_of(ref_p, f, r.bin);
      group.push_back(r);
    }
    batch.push_back(group);
  }
  return batch;
}

TrajectoryRecord on_policy(const PolicyParams& p, std::vector<double> f, int bin, double adv) {
  TrajectoryRecord r;
  r.bin = bin;
  r.features = std::move(f);
  r.advantage = adv;
  r.logp_old = r.logp_ref = log_prob_of(p, r.features, bin);
  return r;
}

double rel_error(const PolicyGradient& a, const PolicyGradient& b) {
  const double diff = std::sqrt((a.weights - b.weights).squaredNorm() + (a.biases - b.biases).squaredNorm());
  return diff / std::max(1e-12, b.norm());
}

PolicyGradient numeric_gradient(const PolicyParams& p, const TrajectoryBatch& batch, const GrpoConfig& cfg) {
  const double h = 1e-6;
  PolicyGradient g{Eigen::MatrixXd::Zero(p.weights.rows(), p.weights.cols()),
                   Eigen::VectorXd::Zero(p.biases.size())};
  PolicyParams q = p;
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) {
    q.weights.data()[i] = p.weights.data()[i] + h;
    const double up = grpo_loss(q, batch, cfg).total;
    q.weights.data()[i] = p.weights.data()[i] - h;
    const double down = grpo_loss(q, batch, cfg).total;
    q.weights.data()[i] = p.weights.data()[i];
    g.weights.data()[i] = (up - down) / (2 * h);
  }
  for (Eigen::Index i = 0; i < p.biases.size(); ++i) {
    q.biases[i] = p.biases[i] + h;
    const double up = grpo_loss(q, batch, cfg).total;
    q.biases[i] = p.biases[i] - h;
    const double down = grpo_loss(q, batch, cfg).total;
    q.biases[i] = p.biases[i];
    g.biases[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("importance ratio") {
  CHECK(importance_ratio(0.0, 0.0) == 1.0);
  CHECK(importance_ratio(std::log(0.3), std::log(0.25)) == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(kind_of([] { importance_ratio(710.0, 0.0); }) == ErrorKind::kDivergedPolicy);
  CHECK(kind_of([] { importance_ratio(std::nan(""), 0.0); }) == ErrorKind::kDivergedPolicy);
}

TEST_CASE("clipped surrogate") {
  CHECK(clipped_surrogate(1.2, 2.0, 0.2) == doctest::Approx(2.4));
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4));
  CHECK(clipped_surrogate(0.5, 2.0, 0.2) == doctest::Approx(1.0));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
  CHECK(clipped_surrogate(1.0, 0.0, 0.2) == 0.0);
}

TEST_CASE("KL estimate") {
  CHECK(kl_approx(0.5, 0.25) == doctest::Approx(2.0 - std::log(2.0) - 1.0).epsilon(1e-15));
  CHECK(kl_approx(0.5, 0.25) == doctest::Approx(0.306853).epsilon(1e-6));
  CHECK(kl_approx(0.25, 0.5) == doctest::Approx(0.193147).epsilon(1e-6));
  CHECK(kl_approx(0.3, 0.3) == 0.0);
  CHECK(kind_of([] { kl_approx(0.0, 0.5); }) == ErrorKind::kDegenerateSupport);
  CHECK(kind_of([] { kl_approx(0.5, 0.0); }) == ErrorKind::kDegenerateSupport);
}

TEST_CASE("loss on a single on-policy record") {
  const PolicyParams p = PolicyParams::zeros(kScale, 2);
  const GrpoConfig cfg;
  TrajectoryBatch batch{{on_policy(p, {0.5, 0.5}, 3, 1.0)}};
  LossBreakdown l = grpo_loss(p, batch, cfg);
  CHECK(l.surrogate == doctest::Approx(1.0));
  CHECK(l.kl == 0.0);
  CHECK(l.total == doctest::Approx(-1.0));
  batch[0][0].advantage = 0.8;
  CHECK(grpo_loss(p, batch, cfg).total == doctest::Approx(-0.8));

  // Reference twice as likely as the current policy: KL = 2 - ln 2 - 1.
  batch[0][0].logp_ref = batch[0][0].logp_old + std::log(2.0);
  l = grpo_loss(p, batch, cfg);
  CHECK(l.kl == doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-12));
  CHECK(l.total == doctest::Approx(-(0.8 - 0.05 * (1.0 - std::log(2.0)))).epsilon(1e-12));
}

TEST_CASE("batch shape errors") {
  const PolicyParams p = PolicyParams::zeros(kScale, 1);
  const GrpoConfig cfg;
  const TrajectoryRecord r = on_policy(p, {1.0}, 0, 1.0);
  CHECK(kind_of([&] { grpo_loss(p, TrajectoryBatch{{r, r}, {r}}, cfg); }) == ErrorKind::kBatchShape);
  CHECK(kind_of([&] { grpo_loss(p, TrajectoryBatch{}, cfg); }) == ErrorKind::kBatchShape);
  CHECK(kind_of([&] { loss_gradient(p, TrajectoryBatch{{r}, {r, r}}, cfg); }) == ErrorKind::kBatchShape);
}

TEST_CASE("analytic gradient matches central differences") {
  Engine e = make_engine(20);
  GrpoConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const PolicyParams p = random_params(4, e, 0.5);
    const TrajectoryBatch batch = random_batch(p, e, 3, 4);
    const double err = rel_error(loss_gradient(p, batch, cfg), numeric_gradient(p, batch, cfg));
    worst = std::max(worst, err);
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("zero-gradient cases") {
  const PolicyParams p = PolicyParams::zeros(kScale, 2);
  GrpoConfig cfg;
  // On-policy, zero advantage, reference equal to current.
  TrajectoryBatch batch{{on_policy(p, {0.3, 0.1}, 5, 0.0), on_policy(p, {0.3, 0.1}, 9, 0.0)}};
  CHECK(loss_gradient(p, batch, cfg).norm() == 0.0);

  // Ratio above 1 + eps with a positive advantage: clipped branch, no pull.
  cfg.beta = 0.0;
  TrajectoryRecord r = on_policy(p, {0.3, 0.1}, 5, 1.0);
  r.logp_old -= 0.5;
  CHECK(loss_gradient(p, TrajectoryBatch{{r}}, cfg).norm() == 0.0);
  r.advantage = -1.0;
  CHECK(loss_gradient(p, TrajectoryBatch{{r}}, cfg).norm() > 0.0);
}

TEST_CASE("AdamW first step has the closed form lr * g / (|g| + eps)") {
  Engine e = make_engine(3);
  PolicyParams p = random_params(3, e, 1.0);
  const PolicyParams before = p;
  PolicyGradient g{Eigen::MatrixXd::Random(17, 3), Eigen::VectorXd::Random(17)};
  GrpoConfig cfg;
  AdamWState st = AdamWState::for_params(p, 10);
  CHECK(optimizer_step(p, g, st, cfg) == cfg.learning_rate);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) {
    const double gi = g.weights.data()[i];
    CHECK(p.weights.data()[i] ==
          doctest::Approx(before.weights.data()[i] - 1e-2 * gi / (std::fabs(gi) + 1e-8)).epsilon(1e-12));
  }
  CHECK(st.step == 1);
}

TEST_CASE("AdamW decoupled decay and linear schedule") {
  PolicyParams p = PolicyParams::zeros(kScale, 2);
  p.weights.setConstant(2.0);
  p.biases.setConstant(-1.0);
  GrpoConfig cfg;
  cfg.weight_decay = 0.1;
  AdamWState st = AdamWState::for_params(p, 4);
  const PolicyGradient zero{Eigen::MatrixXd::Zero(17, 2), Eigen::VectorXd::Zero(17)};
  const double expected_lr[] = {1e-2, 7.5e-3, 5e-3, 2.5e-3};
  double w = 2.0;
  for (double lr : expected_lr) {
    CHECK(optimizer_step(p, zero, st, cfg) == doctest::Approx(lr).epsilon(1e-15));
    w *= 1.0 - lr * 0.1;
    CHECK(p.weights(0, 0) == doctest::Approx(w).epsilon(1e-15));
  }
}

TEST_CASE("non-finite gradient leaves parameters untouched") {
  PolicyParams p = PolicyParams::zeros(kScale, 2);
  PolicyGradient g{Eigen::MatrixXd::Zero(17, 2), Eigen::VectorXd::Zero(17)};
  g.weights(3, 1) = std::numeric_limits<double>::infinity();
  AdamWState st = AdamWState::for_params(p, 4);
  CHECK(kind_of([&] { optimizer_step(p, g, st, GrpoConfig{}); }) == ErrorKind::kNumericalFailure);
  CHECK(p.weights.isZero());
  CHECK(st.step == 0);
}

TEST_CASE("a positive advantage raises the sampled bin's probability") {
  PolicyParams p = PolicyParams::zeros(kScale, 2);
  const std::vector<double> f{0.4, -0.2};
  TrajectoryBatch batch{{on_policy(p, f, 11, 1.0), on_policy(p, f, 2, -1.0)}};
  const double lp11 = log_prob_of(p, f, 11);
  const double lp2 = log_prob_of(p, f, 2);
  GrpoConfig cfg;
  AdamWState st = AdamWState::for_params(p, 10);
  optimizer_step(p, loss_gradient(p, batch, cfg), st, cfg);
  CHECK(log_prob_of(p, f, 11) > lp11);
  CHECK(log_prob_of(p, f, 2) < lp2);
}

TEST_CASE("loss decreases over successive small steps") {
  Engine e = make_engine(8);
  PolicyParams p = random_params(4, e, 0.3);
  TrajectoryBatch batch = random_batch(p, e, 4, 8);
  for (auto& g : batch)
    for (auto& r : g) r.logp_old = r.logp_ref = log_prob_of(p, r.features, r.bin);
  GrpoConfig cfg;
  cfg.learning_rate = 1e-3;
  AdamWState st = AdamWState::for_params(p, 1000);
  double prev = grpo_loss(p, batch, cfg).total;
  for (int s = 0; s < 5; ++s) {
    optimizer_step(p, loss_gradient(p, batch, cfg), st, cfg);
    const double now = grpo_loss(p, batch, cfg).total;
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("config validation names the field") {
  GrpoConfig c;
  c.clip_epsilon = 0.0;
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    CHECK(std::string(e.what()).find("grpo.clip_epsilon") != std::string::npos);
  }
}
