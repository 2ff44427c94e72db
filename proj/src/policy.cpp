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

#include "evoq/policy.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evoq/error.hpp"
#include "evoq/seed.hpp"
#include "evoq/world.hpp"

namespace evoq {

using nlohmann::json;

void QualityScale::validate() const {
  if (n_bins < 2) fail(ErrorKind::kConfig, "policy.n_bins must be at least 2");
  if (!(max_score > min_score)) fail(ErrorKind::kConfig, "policy.max_score must exceed policy.min_score");
}

double QualityScale::center(int bin) const {
  const double raw = min_score + (max_score - min_score) * bin / (n_bins - 1);
  return std::round(raw * 100.0) / 100.0;
}

std::vector<double> QualityScale::centers() const {
  std::vector<double> out(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) out[static_cast<std::size_t>(b)] = center(b);
  return out;
}

PolicyParams PolicyParams::zeros(const QualityScale& scale, int feature_dim) {
  scale.validate();
  PolicyParams p;
  p.scale = scale;
  p.weights = Eigen::MatrixXd::Zero(scale.n_bins, feature_dim);
  p.biases = Eigen::VectorXd::Zero(scale.n_bins);
  return p;
}

std::string_view to_string(PolicyRole role) {
  switch (role) {
    case PolicyRole::kCurrent: return "current";
    case PolicyRole::kOld: return "old";
    case PolicyRole::kReference: return "reference";
  }
  return "current";
}

PolicyRole parse_policy_role(std::string_view text) {
  if (text == "current") return PolicyRole::kCurrent;
  if (text == "old") return PolicyRole::kOld;
  if (text == "reference") return PolicyRole::kReference;
  fail(ErrorKind::kIo, "unknown policy role '" + std::string(text) + "'");
}

PolicySnapshot PolicySnapshot::take(const PolicyParams& params, PolicyRole role,
                                    std::string tag) {
  return PolicySnapshot{role, std::make_shared<const PolicyParams>(params), std::move(tag)};
}

Eigen::VectorXd log_score_distribution(const PolicyParams& params,
                                       std::span<const double> features) {
  if (static_cast<Eigen::Index>(features.size()) != params.weights.cols())
    fail(ErrorKind::kShape, "feature dimension " + std::to_string(features.size()) +
                                " does not match policy dimension " +
                                std::to_string(params.weights.cols()));
  const Eigen::Map<const Eigen::VectorXd> f(features.data(),
                                            static_cast<Eigen::Index>(features.size()));
  Eigen::VectorXd z = params.weights * f + params.biases;
  const double shift = z.maxCoeff();
  const double lse = shift + std::log((z.array() - shift).exp().sum());
  z.array() -= lse;
  return z;
}

std::vector<double> score_distribution(const PolicyParams& params,
                                       std::span<const double> features) {
  const Eigen::VectorXd logp = log_score_distribution(params, features);
  std::vector<double> p(static_cast<std::size_t>(logp.size()));
  for (Eigen::Index b = 0; b < logp.size(); ++b) p[static_cast<std::size_t>(b)] = std::exp(logp[b]);
  return p;
}

double log_prob_of(const PolicyParams& params, std::span<const double> features, int bin) {
  if (!params.scale.valid_bin(bin) || bin >= params.n_bins())
    fail(ErrorKind::kLookup, "invalid bin index " + std::to_string(bin));
  return log_score_distribution(params, features)[bin];
}

namespace {

int draw_bin(const std::vector<double>& probs, Engine& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    if (probs[b] <= 0.0) continue;
    last_positive = static_cast<int>(b);
    acc += probs[b];
    if (u < acc) return static_cast<int>(b);
  }
  // u landed in the rounding slack above the accumulated total.
  return last_positive;
}

}  // namespace

std::vector<ScoreSample> sample_scores(const PolicyParams& params,
                                       std::span<const double> features, int k,
                                       std::uint64_t seed, std::string_view tag) {
  if (k < 1) fail(ErrorKind::kEmptyBudget, "sampling budget K must be at least 1");
  const Eigen::VectorXd logp = log_score_distribution(params, features);
  std::vector<double> probs(static_cast<std::size_t>(logp.size()));
  for (Eigen::Index b = 0; b < logp.size(); ++b) probs[static_cast<std::size_t>(b)] = std::exp(logp[b]);
  Engine rng = make_engine(seed);
  std::vector<ScoreSample> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int bin = draw_bin(probs, rng);
    out.push_back({params.scale.center(bin), bin, logp[bin], std::string(tag)});
  }
  return out;
}

Vote compare(const PolicyParams& params, std::span<const double> features_a,
             std::span<const double> features_b, double position_bias,
             std::uint64_t seed) {
  const auto pa = score_distribution(params, features_a);
  const auto pb = score_distribution(params, features_b);
  Engine rng = make_engine(seed);
  const double a = params.scale.center(draw_bin(pa, rng)) + position_bias;
  const double b = params.scale.center(draw_bin(pb, rng));
  if (a > b) return Vote::kFirst;
  if (b > a) return Vote::kSecond;
  return fair_coin(rng) ? Vote::kFirst : Vote::kSecond;
}

double expected_score(const PolicyParams& params, std::span<const double> features) {
  const auto p = score_distribution(params, features);
  double mean = 0.0;
  for (int b = 0; b < params.n_bins(); ++b) mean += p[static_cast<std::size_t>(b)] * params.scale.center(b);
  return mean;
}

void PolicyInit::validate() const {
  if (!(weight_std >= 0.0) || !std::isfinite(weight_std))
    fail(ErrorKind::kConfig, "policy.init_weight_std must be a finite value >= 0");
  if (!std::isfinite(prior_strength))
    fail(ErrorKind::kConfig, "policy.prior_strength must be finite");
  if (!(prior_contamination >= 0.0) || !std::isfinite(prior_contamination))
    fail(ErrorKind::kConfig, "policy.prior_contamination must be a finite value >= 0");
}

PolicyParams initialize_policy(const QualityScale& scale, int feature_dim,
                               const PolicyInit& init, std::uint64_t seed) {
  PolicyParams p = PolicyParams::zeros(scale, feature_dim);
  const SeedDerivation seeds(seed);
  Engine noise_rng = make_engine(seeds.derive("policy/init/weights"));
  Engine prior_rng = make_engine(seeds.derive("policy/init/prior"));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Read-out direction: a ramp over the bump centers (which orders the
  // embedding by quality) blended with a random direction.
  Eigen::VectorXd ramp(feature_dim);
  const double grid = feature_dim > 1 ? (kMaxQuality - kMinQuality) / (feature_dim - 1) : 0.0;
  for (int j = 0; j < feature_dim; ++j) ramp[j] = (kMinQuality + grid * j - 3.0) / 2.0;
  if (feature_dim == 1) ramp[0] = 1.0;
  Eigen::VectorXd random_dir(feature_dim);
  for (int j = 0; j < feature_dim; ++j) random_dir[j] = normal(prior_rng);
  Eigen::VectorXd direction = ramp.normalized();
  if (random_dir.norm() > 0.0) direction += init.prior_contamination * random_dir.normalized();

  const double mid = 0.5 * (scale.min_score + scale.max_score);
  const double half = 0.5 * (scale.max_score - scale.min_score);
  for (int b = 0; b < scale.n_bins; ++b) {
    const double slope = init.prior_strength * (scale.center(b) - mid) / half;
    for (int j = 0; j < feature_dim; ++j)
      p.weights(b, j) = slope * direction[j] + init.weight_std * normal(noise_rng);
  }
  return p;
}

std::string checkpoint_json(const PolicySnapshot& snapshot) {
  const PolicyParams& p = *snapshot.params;
  std::vector<double> weights;
  weights.reserve(static_cast<std::size_t>(p.weights.size()));
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) weights.push_back(p.weights(r, c));
  std::vector<double> biases(p.biases.data(), p.biases.data() + p.biases.size());
  json doc = {{"role", std::string(to_string(snapshot.role))},
              {"tag", snapshot.tag},
              {"n_bins", p.n_bins()},
              {"d", p.feature_dim()},
              {"weights", weights},
              {"biases", biases}};
  return doc.dump();
}

void write_checkpoint(const PolicySnapshot& snapshot, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << checkpoint_json(snapshot) << '\n';
}

PolicySnapshot parse_checkpoint(std::string_view text) {
  try {
    const json doc = json::parse(text);
    const int n_bins = doc.at("n_bins").get<int>();
    const int d = doc.at("d").get<int>();
    const auto weights = doc.at("weights").get<std::vector<double>>();
    const auto biases = doc.at("biases").get<std::vector<double>>();
    if (n_bins < 2 || d < 1 ||
        weights.size() != static_cast<std::size_t>(n_bins) * static_cast<std::size_t>(d) ||
        biases.size() != static_cast<std::size_t>(n_bins))
      fail(ErrorKind::kShape, "checkpoint shape does not match n_bins x d");
    QualityScale scale;
    scale.n_bins = n_bins;
    PolicyParams p = PolicyParams::zeros(scale, d);
    for (int r = 0; r < n_bins; ++r)
      for (int c = 0; c < d; ++c) p.weights(r, c) = weights[static_cast<std::size_t>(r * d + c)];
    for (int r = 0; r < n_bins; ++r) p.biases[r] = biases[static_cast<std::size_t>(r)];
    if (!p.all_finite()) fail(ErrorKind::kNumericalFailure, "checkpoint holds non-finite values");
    return PolicySnapshot::take(p, parse_policy_role(doc.at("role").get<std::string>()),
                                doc.at("tag").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("malformed checkpoint: ") + e.what());
  }
}

PolicySnapshot read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace evoq
