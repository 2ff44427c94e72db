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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "evoq/bridge.hpp"
#include "evoq/cli.hpp"
#include "evoq/error.hpp"
#include "evoq/eval.hpp"
#include "evoq/grpo.hpp"
#include "evoq/loop.hpp"
#include "evoq/reward.hpp"
#include "evoq/seed.hpp"
#include "evoq/voting.hpp"
#include "oracles.hpp"

using namespace evoq;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict exact_math() {
  Verdict v;
  auto tally = [](int kx, int ky) {
    VoteTally t;
    t.k_x = kx, t.k_y = ky, t.k = kx + ky;
    return tally_to_label(t).p_star;
  };
  v.require(tally(20, 12) == 1.0 && tally(16, 16) == 0.5 && tally(5, 27) == 0.0, "label branch table");

  const RewardConfig rc;
  v.require(gaussian_cdf(0.0) == 0.5, "Phi(0)");
  // var_i + var_j + gamma = 1 exactly: groups with variance 0.5 - gamma/2 each.
  RewardConfig unit;
  unit.gamma = 1e-6;
  ScoreGroup gi, gj;
  gi.variance = 0.5 - 0.5e-6;
  gj.variance = 0.5 - 0.5e-6;
  gj.mean = 3.0;
  const double p = comparative_probability(4.0, gi, gj, unit);
  v.require(std::fabs(p - oracle::normal_cdf(1.0)) <= 1e-6 && std::fabs(p - 0.841345) <= 1e-6,
            fmt("comparative probability %.9f", p));

  v.require(fidelity_term(0.5, 0.5) == 1.0, "fidelity(0.5, 0.5)");
  v.require(std::fabs(fidelity_term(0.5, 0.9) - 0.894427191) <= 1e-9, "fidelity(0.5, 0.9)");

  Engine e = make_engine(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> r(2 + t % 31);
    for (double& x : r) x = uniform01(e) * (t + 1);
    const auto a = advantages(r, rc);
    double mean = 0, ss = 0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    for (double x : a) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(a.size()));
    if (std::fabs(mean) > 1e-9 || std::fabs(sd - 1.0) > 1e-6) {
      v.require(false, "advantage standardization");
      break;
    }
  }
  const std::vector<double> flat(6, 0.37);
  bool zeros = true;
  for (double x : advantages(flat, rc)) zeros = zeros && x == 0.0;
  v.require(zeros, "constant rewards");

  const PolicyParams uniform = PolicyParams::zeros(QualityScale{}, 1);
  const std::vector<double> f{1.0};
  auto rec = [&](int bin, double ratio, double adv) {
    TrajectoryRecord r;
    r.bin = bin;
    r.features = f;
    r.advantage = adv;
    r.logp_ref = log_prob_of(uniform, f, bin);
    r.logp_old = r.logp_ref - std::log(ratio);
    return r;
  };
  GrpoConfig gc;
  gc.beta = 0.0;
  const double loss = grpo_loss(uniform, TrajectoryBatch{{rec(3, 1.5, 2.0), rec(7, 0.5, -1.0)}}, gc).total;
  v.require(std::fabs(loss + 0.8) <= 1e-12, fmt("hand-case loss %.15f", loss));

  v.require(std::fabs(kl_approx(2.0, 1.0) - 0.306853) <= 1e-6 &&
                std::fabs(kl_approx(2.0, 1.0) - (1.0 - std::log(2.0))) <= 1e-9,
            "KL at r = 2");
  bool kl_ok = true;
  for (int n = -300; n <= 300; ++n) {
    const double r = std::pow(10.0, n / 100.0);
    const double k = kl_approx(r, 1.0);
    kl_ok = kl_ok && k >= 0.0 && ((k == 0.0) == (n == 0));
  }
  v.require(kl_ok, "KL nonnegative over [1e-3, 1e3], zero only at r = 1");
  if (v.pass) v.detail = "label table, Phi, fidelity, advantages, loss -0.8, KL grid";
  return v;
}

Verdict gradient_oracle() {
  Verdict v;
  Engine e = make_engine(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  GrpoConfig cfg;
  const QualityScale scale;
  double worst = 0.0;
  int batches = 0;
  while (batches < 50) {
    PolicyParams p = PolicyParams::zeros(scale, 3);
    for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = 0.5 * n(e);
    for (Eigen::Index i = 0; i < p.biases.size(); ++i) p.biases[i] = 0.5 * n(e);
    TrajectoryBatch batch;
    bool kink = false;
    for (int g = 0; g < 2; ++g) {
      std::vector<double> f{n(e), n(e), n(e)};
      std::vector<TrajectoryRecord> group;
      for (int k = 0; k < 4; ++k) {
        TrajectoryRecord r;
        r.bin = static_cast<int>(uniform_index(e, 17));
        r.features = f;
        r.advantage = n(e);
        const double lp = log_prob_of(p, f, r.bin);
        r.logp_old = lp + 0.3 * n(e);
        r.logp_ref = lp + 0.3 * n(e);
        const double ratio = std::exp(lp - r.logp_old);
        // Stay clear of the clip boundaries, where the loss has a kink.
        kink = kink || std::fabs(ratio - 0.8) < 1e-2 || std::fabs(ratio - 1.2) < 1e-2;
        group.push_back(r);
      }
      batch.push_back(group);
    }
    if (kink) continue;
    ++batches;
    const PolicyGradient g = loss_gradient(p, batch, cfg);
    // Fourth-order central stencil.
    const double h = 1e-3;
    auto coord = [&](double& x, double analytic) {
      const double keep = x;
      auto at = [&](double dx) {
        x = keep + dx;
        return grpo_loss(p, batch, cfg).total;
      };
      const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      x = keep;
      const double scale = std::max(std::fabs(analytic), std::fabs(fd));
      if (scale > 0.0) worst = std::max(worst, std::fabs(analytic - fd) / scale);
    };
    for (Eigen::Index i = 0; i < p.weights.size(); ++i) coord(p.weights.data()[i], g.weights.data()[i]);
    for (Eigen::Index i = 0; i < p.biases.size(); ++i) coord(p.biases[i], g.biases[i]);
  }
  v.require(worst <= 1e-5, "max relative error too large");
  v.detail = fmt("50 batches, max per-coordinate relative error %.2e", worst) +
             (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

// Answers correctly with probability q per query, from the latent order.
class EngineeredVoter final : public PolicyBackend {
 public:
  EngineeredVoter(const Corpus& c, double q) : corpus_(c), q_(q) {}
  std::vector<Vote> compare(const ImageRef& a, const ImageRef& b, int k, std::uint64_t seed) override {
    Engine e = make_engine(seed);
    const bool a_better = corpus_.at(a.id).true_quality > corpus_.at(b.id).true_quality;
    std::vector<Vote> out;
    for (int i = 0; i < k; ++i)
      out.push_back((uniform01(e) < q_) == a_better ? Vote::kFirst : Vote::kSecond);
    return out;
  }
  ScoreDraws sample_scores(const ImageRef&, int, std::uint64_t) override { return {}; }
  bool concurrent() const override { return true; }

 private:
  const Corpus& corpus_;
  double q_;
};

Verdict majority_amplification() {
  Verdict v;
  const double q = 0.65;
  const double expect = oracle::majority_accuracy(32, q);
  WorldConfig wc;
  wc.n_references = 200;
  const Corpus c = generate_corpus(wc, derive_seed(7, "acceptance/amplification"));
  const PairSet pairs = sample_pairs(c, 2000, PairMode::kUnrestricted, 3, PairPool::kReferences);
  EngineeredVoter voter(c, q);
  OfflineOptions o;
  o.k = 32;
  const double acc32 = label_accuracy(c, run_offline_stage(voter, c, pairs, 11, o).labels);
  o.k = 1;
  const double acc1 = label_accuracy(c, run_offline_stage(voter, c, pairs, 11, o).labels);
  const double sigma = std::sqrt(expect * (1 - expect) / 2000.0);
  v.require(std::fabs(acc32 - expect) <= 3 * sigma, "K=32 accuracy outside 3 sigma");
  v.require(acc32 > acc1, "K=32 not above K=1");
  v.detail = fmt("q=0.65: K=32 accuracy %.4f vs binomial %.5f (3 sigma %.4f), K=1 %.4f", acc32, expect,
                 3 * sigma, acc1) + (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

Verdict positional_bias() {
  Verdict v;
  // A confident policy: both images score 3.0 unless the slot bias intervenes.
  PolicyParams p = PolicyParams::zeros(QualityScale{}, 1);
  p.biases[8] = 40.0;
  const PolicySnapshot snap = PolicySnapshot::take(p, PolicyRole::kCurrent, "bias");
  LatentImage a;
  a.id = 0;
  a.features = {1.0};
  LatentImage b = a;
  b.id = 1;
  int on = 0, off = 0, total = 0;
  for (int r = 0; total < 10000; ++r) {
    const std::uint64_t s = derive_seed(1, "bias/" + std::to_string(r));
    on += vote_on_pair(snap, a, b, 32, 0.25, s, true).k_x;
    off += vote_on_pair(snap, a, b, 32, 0.25, s, false).k_x;
    total += 32;
  }
  const double f_on = static_cast<double>(on) / total, f_off = static_cast<double>(off) / total;
  v.require(std::fabs(f_on - 0.5) <= 0.02, "permuted frequency off 0.5");
  v.require(f_off > 0.9, "unpermuted frequency not above 0.9");
  v.detail = fmt("%.0f votes: slot-0 frequency %.4f with permutation, %.4f without", total, f_on, f_off) +
             (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

Verdict end_to_end() {
  Verdict v;
  const EvolutionSetup s = RunConfig{}.scaled_setup();
  v.require(s.world.n_references == 200 && s.evolution.n_pairs == 2000 && s.evolution.k == 32 &&
                s.evolution.batches == 100 && s.evolution.batch_size == 4 && s.evolution.rounds == 2 &&
                s.evolution.mode == EvolutionMode::kQuality,
            "setup differs from the specified desk scale");
  const auto root = oracle::scratch_dir("acceptance_e2e");
  const auto t0 = Clock::now();
  const EvolutionResult a = run_evolution(s, root / "a");
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const EvolutionResult b = run_evolution(s, root / "b");
  v.require(!a.failure && a.rounds.size() == 2, "run failed");
  if (!v.pass) return v;
  const double r0 = a.baseline.wavg_srcc, r1 = a.rounds[0].metrics.wavg_srcc, r2 = a.rounds[1].metrics.wavg_srcc;
  v.require(r1 - r0 >= 0.05, "round-1 gain below 0.05");
  v.require(r2 >= r1 - 0.01, "round 2 regressed");
  v.require(secs <= 300.0, "slower than 5 minutes");
  v.require(oracle::slurp(a.run_directory / "manifest.json") == oracle::slurp(b.run_directory / "manifest.json") &&
                a.final_params.weights == b.final_params.weights,
            "second execution differs");
  v.detail = fmt("SRCC %.4f -> %.4f -> %.4f, %.1f s per run", r0, r1, r2, secs) +
             ", manifests identical across two runs" + (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

Verdict k_sweep() {
  Verdict v;
  const auto root = oracle::scratch_dir("acceptance_ablate");
  std::ostringstream out, err;
  const int code = run_command({"ablate-k", "--output", root.string()}, out, err);
  v.require(code == 0, "ablate-k failed: " + err.str());
  if (!v.pass) return v;
  std::vector<double> srcc;
  for (int k : kAblationBudgets)
    srcc.push_back(read_metrics(root / "ablate_k" / ("K" + std::to_string(k)) / "metrics.json").wavg_srcc);
  int inversions = 0;
  bool small = true;
  for (std::size_t i = 1; i < srcc.size(); ++i)
    if (srcc[i] < srcc[i - 1]) ++inversions, small = small && srcc[i - 1] - srcc[i] <= 0.02;
  v.require(inversions <= 1 && small, "final SRCC not nondecreasing in K");
  v.detail = fmt("final SRCC K=1 %.4f, K=8 %.4f, K=16 %.4f, K=32 %.4f", srcc[0], srcc[1], srcc[2], srcc[3]) +
             (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

Verdict metric_oracles() {
  Verdict v;
  Engine e = make_engine(99);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(10), y(10);
    for (std::size_t i = 0; i < 10; ++i) {
      x[i] = std::floor(uniform01(e) * 8);
      y[i] = uniform01(e) + 0.1 * x[i];
    }
    x[0] = 0, x[1] = 7;
    worst = std::max(worst, std::fabs(plcc(x, y) - oracle::pearson(x, y)));
    worst = std::max(worst, std::fabs(srcc(x, y) - oracle::spearman(x, y)));
  }
  v.require(worst <= 1e-12, "correlation mismatch");
  std::vector<MetricReport> r(2);
  r[0].n_images = 100, r[0].srcc = 0.8;
  r[1].n_images = 300, r[1].srcc = 0.6;
  const double w = weighted_average(r, WeightedMetric::kSrcc);
  v.require(w == 0.65, fmt("weighted average %.17g", w));
  v.detail = fmt("100 vectors, max deviation %.1e; weighted average %.17g", worst, w) +
             (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

Verdict bridge_loopback() {
  Verdict v;
  const EvolutionSetup s = RunConfig{}.scaled_setup();
  const auto root = oracle::scratch_dir("acceptance_bridge");
  const EvolutionResult direct = run_evolution(s, root / "direct");

  const PolicyParams base =
      initialize_policy(s.scale, s.world.feature_dim, s.init, derive_seed(s.master_seed, "policy/init"));
  auto [client, server] = make_socket_pair();
  InProcessBackend served(PolicySnapshot::take(base, PolicyRole::kCurrent, "served"));
  SessionSummary summary;
  std::thread peer([&, srv = server.get()] {
    try {
      summary = serve_policy_over_bridge(*srv, served);
    } catch (const Error&) {
    }
  });
  EvolutionSetup one = s;
  one.evolution.rounds = 1;
  EvolutionResult bridged;
  {
    RemotePolicyAdapter adapter(*client);
    bridged = run_evolution(one, root / "bridged", &adapter);
  }
  peer.join();
  v.require(!bridged.failure, "bridged run failed");
  const std::string a = oracle::slurp(direct.run_directory / "round_1" / "votes.jsonl");
  const std::string b = oracle::slurp(bridged.run_directory / "round_1" / "votes.jsonl");
  v.require(!a.empty() && a == b, "vote logs differ");
  v.require(oracle::slurp(direct.run_directory / "round_1" / "pseudo_labels.jsonl") ==
                oracle::slurp(bridged.run_directory / "round_1" / "pseudo_labels.jsonl"),
            "pseudo-labels differ");
  v.detail = fmt("%.0f bridged requests, vote log of %.0f bytes identical to the direct path",
                 summary.requests_served, static_cast<double>(a.size())) +
             (v.detail.empty() ? "" : "; " + v.detail);
  return v;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {"exact-math suite", 10, exact_math},
      {"gradient oracle", 30, gradient_oracle},
      {"majority amplification", 60, majority_amplification},
      {"positional-bias neutralization", 30, positional_bias},
      {"end-to-end self-evolution", 600, end_to_end},
      {"K-sweep direction", 1e9, k_sweep},
      {"metric oracles", 1e9, metric_oracles},
      {"bridge loopback", 1e9, bridge_loopback},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      v.pass = false;
      v.detail += fmt("; took %.1f s, budget %.0f s", secs, c.budget_seconds);
    }
    std::printf("%s  %-32s %s (%.2f s)\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
