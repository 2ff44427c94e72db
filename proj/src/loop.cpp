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

#include "evoq/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "evoq/error.hpp"
#include "evoq/seed.hpp"

namespace evoq {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(EvolutionMode mode) {
  return mode == EvolutionMode::kEstimate ? "estimate" : "quality";
}

EvolutionMode parse_evolution_mode(std::string_view text) {
  if (text == "quality") return EvolutionMode::kQuality;
  if (text == "estimate") return EvolutionMode::kEstimate;
  fail(ErrorKind::kConfig, "unknown mode '" + std::string(text) + "' (expected quality|estimate)");
}

const PairRegime& EvolutionConfig::regime(int round) const {
  const auto idx = static_cast<std::size_t>(std::clamp<int>(round, 1, static_cast<int>(regimes.size())) - 1);
  return regimes[idx];
}

void EvolutionConfig::validate() const {
  if (rounds < 1) fail(ErrorKind::kConfig, "evolution.T must be at least 1");
  if (batches < 0) fail(ErrorKind::kConfig, "evolution.M must be >= 0");
  if (batch_size < 1) fail(ErrorKind::kConfig, "evolution.B must be at least 1");
  if (k < 1) fail(ErrorKind::kConfig, "evolution.K must be at least 1");
  if (online_k < 0 || (batches > 0 && sampling_k() < 2))
    fail(ErrorKind::kConfig, "evolution.online_K must be at least 2 (group-relative advantages)");
  if (n_pairs < 1) fail(ErrorKind::kConfig, "evolution.n_pairs must be positive");
  if (static_cast<std::size_t>(batches) * static_cast<std::size_t>(batch_size) > n_pairs)
    fail(ErrorKind::kConfig, "evolution.M * evolution.B cannot exceed evolution.n_pairs");
  if (!(estimate_tolerance > 0.0)) fail(ErrorKind::kConfig, "evolution.estimate_tolerance must be positive");
  if (n_threads < 1) fail(ErrorKind::kConfig, "evolution.threads must be at least 1");
  if (regimes.empty()) fail(ErrorKind::kConfig, "evolution needs at least one pair regime");
}

void EvolutionSetup::validate() const {
  world.validate();
  scale.validate();
  init.validate();
  evolution.validate();
  reward.validate();
  grpo.validate();
}

json EvolutionSetup::to_json() const {
  json regimes = json::array();
  for (const auto& r : evolution.regimes)
    regimes.push_back({{"pool", r.pool == PairPool::kAll ? "all" : "references"},
                       {"mode", std::string(to_string(r.mode))}});
  return {
      {"master_seed", master_seed},
      {"world",
       {{"n_references", world.n_references},
        {"variants_per_reference", world.variants_per_reference},
        {"n_distortion_types", world.n_distortion_types},
        {"n_severity_levels", world.n_severity_levels},
        {"feature_dim", world.feature_dim},
        {"feature_bandwidth", world.feature_bandwidth},
        {"feature_noise_sigma", world.feature_noise_sigma},
        {"quality_drop_per_severity", world.quality_drop_per_severity}}},
      {"policy",
       {{"n_bins", scale.n_bins},
        {"init_weight_std", init.weight_std},
        {"prior_strength", init.prior_strength},
        {"prior_contamination", init.prior_contamination}}},
      {"evolution",
       {{"T", evolution.rounds},
        {"M", evolution.batches},
        {"B", evolution.batch_size},
        {"K", evolution.k},
        {"online_K", evolution.sampling_k()},
        {"n_pairs", evolution.n_pairs},
        {"mode", std::string(to_string(evolution.mode))},
        {"estimate_tolerance", evolution.estimate_tolerance},
        {"permute", evolution.permute},
        {"position_bias", evolution.position_bias},
        {"regimes", regimes}}},
      {"reward", {{"gamma", reward.gamma}, {"std_floor", reward.std_floor}}},
      {"grpo",
       {{"clip_epsilon", grpo.clip_epsilon},
        {"beta", grpo.beta},
        {"learning_rate", grpo.learning_rate},
        {"weight_decay", grpo.weight_decay},
        {"beta1", grpo.beta1},
        {"beta2", grpo.beta2},
        {"moment_epsilon", grpo.moment_epsilon}}},
  };
}

std::string run_id(const EvolutionSetup& setup) {
  return "run_" + sha256_hex(setup.to_json().dump()).substr(0, 12);
}

std::map<int, double> evoestimate_offline(PolicyBackend& backend, const Corpus& corpus,
                                          std::span<const int> image_ids, int k,
                                          std::uint64_t seed) {
  if (k < 1) fail(ErrorKind::kEmptyBudget, "estimate budget K must be at least 1");
  const SeedDerivation seeds(seed);
  std::map<int, double> mos;
  for (int id : image_ids) {
    if (mos.count(id)) continue;
    const auto draws =
        backend.sample_scores(ImageRef::of(corpus.at(id)), k, seeds.derive("img/" + std::to_string(id)));
    if (draws.scores.empty()) fail(ErrorKind::kEmptyBudget, "backend returned no scores");
    double sum = 0.0;
    for (double s : draws.scores) sum += s;
    mos[id] = sum / static_cast<double>(draws.scores.size());
  }
  return mos;
}

double evoestimate_reward(double q_k, double pseudo_mos, double tolerance) {
  if (!(tolerance > 0.0)) fail(ErrorKind::kConfig, "estimate tolerance must be positive");
  return std::fabs(q_k - pseudo_mos) <= tolerance ? 1.0 : 0.0;
}

double label_accuracy(const Corpus& corpus, std::span<const PseudoLabel> labels) {
  double credit = 0.0;
  std::size_t counted = 0;
  for (const auto& l : labels) {
    const double qi = corpus.at(l.pair.first).true_quality;
    const double qj = corpus.at(l.pair.second).true_quality;
    if (qi == qj) continue;
    const double truth = qi > qj ? 1.0 : 0.0;
    credit += l.p_star == 0.5 ? 0.5 : (l.p_star == truth ? 1.0 : 0.0);
    ++counted;
  }
  return counted ? credit / static_cast<double>(counted) : 0.0;
}

namespace {

struct PartnerLabel {
  int partner = 0;
  double p_star = 0.5;  // from this image's point of view
};

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class LineWriter {
 public:
  explicit LineWriter(const fs::path& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorKind::kIo, "cannot write " + path.string());
  }
  void line(const std::string& s) {
    if (out_.is_open()) out_ << s << '\n';
  }

 private:
  std::ofstream out_;
};

fs::path file_in(const fs::path& dir, const char* name) {
  return dir.empty() ? fs::path{} : dir / name;
}

}  // namespace

RoundArtifacts run_round(const RoundContext& ctx, PolicyParams& params) {
  const EvolutionSetup& setup = ctx.setup;
  const EvolutionConfig& evo = setup.evolution;
  const Corpus& corpus = ctx.corpus;
  const SeedDerivation seeds(ctx.round_seed);
  const std::string round_tag = "round_" + std::to_string(ctx.round);
  if (!ctx.directory.empty()) fs::create_directories(ctx.directory);

  RoundArtifacts art;
  art.round = ctx.round;
  art.directory = ctx.directory;

  // Pair set for this round.
  const PairRegime& regime = evo.regime(ctx.round);
  const PairSet pairs =
      sample_pairs(corpus, evo.n_pairs, regime.mode, seeds.derive("pairs"), regime.pool);
  if (!ctx.directory.empty()) write_pairs(pairs, ctx.directory / "pairs.jsonl");

  const PolicySnapshot reference =
      PolicySnapshot::take(params, PolicyRole::kReference, round_tag + "/start");

  // Offline stage.
  InProcessBackend round_start_backend(reference, evo.position_bias);
  PolicyBackend& offline_backend = ctx.external ? *ctx.external : round_start_backend;
  std::vector<PseudoLabel> labels;
  std::map<int, double> pseudo_mos;
  if (evo.mode == EvolutionMode::kQuality) {
    OfflineOptions opts;
    opts.k = evo.k;
    opts.permute = evo.permute;
    opts.n_threads = evo.n_threads;
    OfflineResult offline = run_offline_stage(offline_backend, corpus, pairs, seeds.derive("vote"), opts);
    labels = std::move(offline.labels);
    art.label_accuracy = label_accuracy(corpus, labels);
    if (!ctx.directory.empty()) {
      write_vote_log(offline.tallies, ctx.directory / "votes.jsonl");
      write_pseudo_labels(labels, ctx.directory / "pseudo_labels.jsonl");
    }
  } else {
    std::vector<int> ids;
    for (const auto& [i, j] : pairs.pairs) {
      ids.push_back(i);
      ids.push_back(j);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    pseudo_mos = evoestimate_offline(offline_backend, corpus, ids, evo.k, seeds.derive("estimate"));
    LineWriter mos_out(file_in(ctx.directory, "pseudo_labels.jsonl"));
    LineWriter vote_out(file_in(ctx.directory, "votes.jsonl"));
    for (const auto& [id, mos] : pseudo_mos) {
      mos_out.line(json{{"image_id", id}, {"pseudo_mos", mos}}.dump());
      vote_out.line(json{{"image_id", id}, {"K", evo.k}, {"pseudo_mos", mos}}.dump());
    }
  }

  // Partner lists per image, one entry per pairing occurrence, with the
  // label oriented from that image's side (the swap step).
  std::vector<std::vector<PartnerLabel>> partners(corpus.size());
  for (std::size_t n = 0; n < pairs.pairs.size(); ++n) {
    const auto [i, j] = pairs.pairs[n];
    const double p = labels.empty() ? 0.5 : labels[n].p_star;
    partners[static_cast<std::size_t>(i)].push_back({j, p});
    partners[static_cast<std::size_t>(j)].push_back({i, 1.0 - p});
  }

  // All M batches are drawn up front: a seeded shuffle of the pair indices.
  std::vector<std::size_t> order(pairs.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  {
    Engine rng = make_engine(seeds.derive("batches"));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }

  LineWriter reward_log(file_in(ctx.directory, "rewards.jsonl"));
  LineWriter train_log(file_in(ctx.directory, "train_log.csv"));
  train_log.line("step,round,batch,loss_total,surrogate,kl,grad_norm,lr");

  const int group_k = evo.sampling_k();
  AdamWState opt_state = AdamWState::for_params(params, evo.batches);
  const auto batch_size = static_cast<std::size_t>(evo.batch_size);

  for (int m = 0; m < evo.batches; ++m) {
    // Distinct images of the batch, in order of appearance.
    std::vector<int> batch_images;
    for (std::size_t s = 0; s < batch_size; ++s) {
      const auto [i, j] = pairs.pairs[order[static_cast<std::size_t>(m) * batch_size + s]];
      for (int id : {i, j})
        if (std::find(batch_images.begin(), batch_images.end(), id) == batch_images.end())
          batch_images.push_back(id);
    }
    std::set<int> needed(batch_images.begin(), batch_images.end());
    if (evo.mode == EvolutionMode::kQuality)
      for (int id : batch_images)
        for (const auto& pl : partners[static_cast<std::size_t>(id)]) needed.insert(pl.partner);

    // Sampling pass under pi_old (the params as of this batch).
    const PolicySnapshot old = PolicySnapshot::take(params, PolicyRole::kOld,
                                                    round_tag + "/batch_" + std::to_string(m));
    InProcessBackend old_backend(old, evo.position_bias);
    PolicyBackend& sampler = ctx.external ? *ctx.external : old_backend;
    const SeedDerivation batch_seeds = seeds.child("batch/" + std::to_string(m));
    std::map<int, ScoreDraws> draws;
    std::map<int, ScoreGroup> groups;
    for (int id : needed) {
      ScoreDraws d = sampler.sample_scores(ImageRef::of(corpus.at(id)), group_k,
                                           batch_seeds.derive("img/" + std::to_string(id)));
      // External peers may drop invalid scores; a group still needs two.
      if (ctx.external ? d.scores.size() < 2 : d.scores.size() != static_cast<std::size_t>(group_k))
        fail(ErrorKind::kProtocol, "backend returned " + std::to_string(d.scores.size()) +
                                       " scores, expected " + std::to_string(group_k));
      groups.emplace(id, ScoreGroup::of(id, d.scores));
      draws.emplace(id, std::move(d));
    }

    TrajectoryBatch batch;
    AdvantageExport exported;
    exported.round = ctx.round;
    exported.batch = m;
    bool have_log_probs = true;
    for (int id : batch_images) {
      const ScoreGroup& own = groups.at(id);
      const ScoreDraws& d = draws.at(id);
      const int n_scores = static_cast<int>(own.scores.size());
      std::vector<double> rewards(static_cast<std::size_t>(n_scores));
      json partner_ids = json::array();
      if (evo.mode == EvolutionMode::kQuality) {
        const auto& plist = partners[static_cast<std::size_t>(id)];
        for (const auto& pl : plist) partner_ids.push_back(pl.partner);
        std::vector<LabelledProbability> terms(plist.size());
        for (int k = 0; k < n_scores; ++k) {
          for (std::size_t t = 0; t < plist.size(); ++t)
            terms[t] = {plist[t].p_star,
                        comparative_probability(own.scores[static_cast<std::size_t>(k)], own,
                                                groups.at(plist[t].partner), setup.reward)};
          rewards[static_cast<std::size_t>(k)] = fidelity_reward(terms);
        }
      } else {
        const double mos = pseudo_mos.at(id);
        for (int k = 0; k < n_scores; ++k)
          rewards[static_cast<std::size_t>(k)] =
              evoestimate_reward(own.scores[static_cast<std::size_t>(k)], mos, evo.estimate_tolerance);
      }
      const auto adv = advantages(rewards, setup.reward);

      std::vector<TrajectoryRecord> group;
      for (int k = 0; k < n_scores; ++k) {
        const auto sk = static_cast<std::size_t>(k);
        reward_log.line(json{{"image_id", id},
                             {"k", k},
                             {"q_k", own.scores[sk]},
                             {"r_k", rewards[sk]},
                             {"a_k", adv[sk]},
                             {"partners", partner_ids}}
                            .dump());
        exported.trajectory_ids.push_back(round_tag + "/batch_" + std::to_string(m) + "/img_" +
                                          std::to_string(id) + "/k_" + std::to_string(k));
        exported.advantages.push_back(adv[sk]);
        if (d.log_probs) {
          if (!exported.log_probs) exported.log_probs.emplace();
          exported.log_probs->push_back((*d.log_probs)[sk]);
        } else {
          have_log_probs = false;
        }
        if (!ctx.external) {
          const auto& features = corpus.at(id).features;
          TrajectoryRecord rec;
          rec.image_id = id;
          rec.bin = d.bins[sk];
          rec.features = features;
          rec.advantage = adv[sk];
          rec.logp_old = (*d.log_probs)[sk];
          rec.logp_ref = log_prob_of(*reference.params, features, rec.bin);
          group.push_back(std::move(rec));
        }
      }
      if (!ctx.external) batch.push_back(std::move(group));
    }

    if (ctx.external) {
      if (!have_log_probs) exported.log_probs.reset();
      ctx.external->export_advantages(exported);
      art.completed_batches = m + 1;
      continue;
    }

    try {
      const LossBreakdown loss = grpo_loss(params, batch, setup.grpo);
      const PolicyGradient grad = loss_gradient(params, batch, setup.grpo);
      const double lr = optimizer_step(params, grad, opt_state, setup.grpo);
      if (!params.all_finite()) {
        params = *old.params;
        fail(ErrorKind::kNumericalFailure, "parameters became non-finite");
      }
      const long step = static_cast<long>(ctx.round - 1) * evo.batches + m + 1;
      train_log.line(std::to_string(step) + "," + std::to_string(ctx.round) + "," +
                     std::to_string(m) + "," + fmt17(loss.total) + "," + fmt17(loss.surrogate) +
                     "," + fmt17(loss.kl) + "," + fmt17(grad.norm()) + "," + fmt17(lr));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumericalFailure && e.kind() != ErrorKind::kDivergedPolicy) throw;
      art.failure = std::string(to_string(e.kind())) + ": " + e.what();
      break;
    }
    art.completed_batches = m + 1;
  }

  art.checkpoint = PolicySnapshot::take(params, PolicyRole::kCurrent, round_tag + "/end");
  art.metrics = evaluate_policy(params, corpus, ctx.round);
  if (!ctx.directory.empty()) {
    write_checkpoint(art.checkpoint, ctx.directory / "checkpoint.json");
    write_metrics(art.metrics, ctx.directory / "metrics.json");
  }
  return art;
}

namespace {

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

void write_manifest(const EvolutionSetup& setup, const EvolutionResult& result,
                    const std::vector<std::uint64_t>& round_seeds) {
  const fs::path& dir = result.run_directory;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  json digests = json::object();
  for (const auto& f : files)
    digests[fs::relative(f, dir).generic_string()] = file_digest(f);
  json rounds = json::array();
  for (std::size_t t = 0; t < round_seeds.size(); ++t)
    rounds.push_back({{"round", t + 1}, {"seed", round_seeds[t]}});
  json manifest = {{"config", setup.to_json()},
                   {"seeds",
                    {{"master", setup.master_seed},
                     {"corpus", derive_seed(setup.master_seed, "world/corpus")},
                     {"policy_init", derive_seed(setup.master_seed, "policy/init")},
                     {"rounds", rounds}}},
                   {"artifacts", digests},
                   {"completed_rounds", result.rounds.size()},
                   {"failure", result.failure ? json(*result.failure) : json(nullptr)}};
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write manifest");
  out << manifest.dump(2) << '\n';
}

}  // namespace

EvolutionResult run_evolution(const EvolutionSetup& setup, const fs::path& output_root,
                              PolicyBackend* external) {
  setup.validate();
  const SeedDerivation seeds(setup.master_seed);
  EvolutionResult result;
  result.corpus = generate_corpus(setup.world, seeds.derive("world/corpus"));
  PolicyParams params = initialize_policy(setup.scale, setup.world.feature_dim, setup.init,
                                          seeds.derive("policy/init"));

  if (!output_root.empty()) {
    result.run_directory = output_root / run_id(setup);
    fs::create_directories(result.run_directory / "round_0");
    write_corpus(result.corpus, result.run_directory / "corpus.jsonl");
    write_checkpoint(PolicySnapshot::take(params, PolicyRole::kCurrent, "round_0"),
                     result.run_directory / "round_0" / "checkpoint.json");
  }
  result.baseline = evaluate_policy(params, result.corpus, 0);
  if (!output_root.empty())
    write_metrics(result.baseline, result.run_directory / "round_0" / "metrics.json");

  std::vector<std::uint64_t> round_seeds;
  for (int t = 1; t <= setup.evolution.rounds; ++t) {
    const std::uint64_t round_seed = seeds.derive("round/" + std::to_string(t));
    round_seeds.push_back(round_seed);
    RoundContext ctx{result.corpus, setup, t, round_seed, external,
                     output_root.empty() ? fs::path{}
                                         : result.run_directory / ("round_" + std::to_string(t))};
    RoundArtifacts art = run_round(ctx, params);
    const bool failed = art.failure.has_value();
    if (failed) result.failure = "round " + std::to_string(t) + ": " + *art.failure;
    result.rounds.push_back(std::move(art));
    if (failed) break;
  }
  result.final_params = params;
  if (!output_root.empty()) write_manifest(setup, result, round_seeds);
  return result;
}

}  // namespace evoq
