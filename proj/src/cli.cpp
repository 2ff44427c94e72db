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

#include "evoq/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "evoq/bridge.hpp"
#include "evoq/error.hpp"
#include "evoq/seed.hpp"

extern char** environ;

namespace evoq {

namespace fs = std::filesystem;

EvolutionSetup RunConfig::defaults() {
  EvolutionSetup s;
  s.world.n_references = 2000;
  s.evolution.n_pairs = 20000;
  s.master_seed = 7;
  return s;
}

EvolutionSetup RunConfig::scaled_setup() const {
  EvolutionSetup s = setup;
  s.world.n_references =
      std::max(1, static_cast<int>(std::llround(setup.world.n_references * desk_scale)));
  s.evolution.n_pairs = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(static_cast<double>(setup.evolution.n_pairs) * desk_scale)));
  return s;
}

void RunConfig::validate() const {
  if (!(desk_scale > 0.0 && desk_scale <= 1.0))
    fail(ErrorKind::kConfig, "desk_scale must lie in (0, 1]");
  if (bridge_timeout_seconds <= 0.0 || !std::isfinite(bridge_timeout_seconds))
    fail(ErrorKind::kConfig, "bridge_timeout_seconds must be positive");
  if (backend != "builtin" && !backend.starts_with("bridge:exec:") &&
      !backend.starts_with("bridge:unix:"))
    fail(ErrorKind::kConfig,
         "backend must be 'builtin', 'bridge:exec:<command>' or 'bridge:unix:<path>'");
  if (output_dir.empty()) fail(ErrorKind::kConfig, "output_dir must not be empty");
  scaled_setup().validate();
}

// ---------------------------------------------------------------------------
// TOML binding

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string where(const toml::node& node) {
  const auto line = node.source().begin.line;
  return line ? " (line " + std::to_string(line) + ")" : std::string{};
}

[[noreturn]] void type_error(const toml::node& node, const std::string& name, const char* want) {
  fail(ErrorKind::kConfig, name + ": expected " + want + where(node));
}

long long as_int(const toml::node& node, const std::string& name) {
  if (!node.is_integer()) type_error(node, name, "an integer");
  return node.as_integer()->get();
}

int as_int32(const toml::node& node, const std::string& name) {
  const long long v = as_int(node, name);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    fail(ErrorKind::kConfig, name + ": value out of range" + where(node));
  return static_cast<int>(v);
}

double as_double(const toml::node& node, const std::string& name) {
  if (node.is_integer()) return static_cast<double>(node.as_integer()->get());
  if (!node.is_floating_point()) type_error(node, name, "a number");
  return node.as_floating_point()->get();
}

bool as_bool(const toml::node& node, const std::string& name) {
  if (!node.is_boolean()) type_error(node, name, "true or false");
  return node.as_boolean()->get();
}

std::string as_string(const toml::node& node, const std::string& name) {
  if (!node.is_string()) type_error(node, name, "a string");
  return node.as_string()->get();
}

std::vector<double> as_doubles(const toml::node& node, const std::string& name) {
  if (!node.is_array()) type_error(node, name, "an array of numbers");
  std::vector<double> out;
  for (const auto& v : *node.as_array()) out.push_back(as_double(v, name));
  return out;
}

struct Field {
  std::string section;  // empty for top-level keys
  std::string key;
  std::function<void(const toml::node&, const std::string&)> load;
  std::function<void(toml::table&)> save;

  std::string name() const { return section.empty() ? key : section + "." + key; }
};

toml::array to_array(const std::vector<double>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}

std::vector<Field> fields(RunConfig& c) {
  auto& w = c.setup.world;
  auto& sc = c.setup.scale;
  auto& in = c.setup.init;
  auto& ev = c.setup.evolution;
  auto& rw = c.setup.reward;
  auto& gr = c.setup.grpo;
  std::vector<Field> f;
  auto add_int = [&](std::string section, std::string key, int& ref) {
    f.push_back({section, key, [&ref](const toml::node& n, const std::string& nm) { ref = as_int32(n, nm); },
                 [&ref, key](toml::table& t) { t.insert_or_assign(key, static_cast<int64_t>(ref)); }});
  };
  auto add_double = [&](std::string section, std::string key, double& ref) {
    f.push_back({section, key, [&ref](const toml::node& n, const std::string& nm) { ref = as_double(n, nm); },
                 [&ref, key](toml::table& t) { t.insert_or_assign(key, ref); }});
  };
  auto add_bool = [&](std::string section, std::string key, bool& ref) {
    f.push_back({section, key, [&ref](const toml::node& n, const std::string& nm) { ref = as_bool(n, nm); },
                 [&ref, key](toml::table& t) { t.insert_or_assign(key, ref); }});
  };

  f.push_back({"", "master_seed",
               [&c](const toml::node& n, const std::string& nm) {
                 const long long v = as_int(n, nm);
                 if (v < 0) fail(ErrorKind::kConfig, nm + " must be >= 0" + where(n));
                 c.setup.master_seed = static_cast<std::uint64_t>(v);
               },
               [&c](toml::table& t) {
                 t.insert_or_assign("master_seed", static_cast<int64_t>(c.setup.master_seed));
               }});
  add_double("", "desk_scale", c.desk_scale);
  f.push_back({"", "backend",
               [&c](const toml::node& n, const std::string& nm) { c.backend = as_string(n, nm); },
               [&c](toml::table& t) { t.insert_or_assign("backend", c.backend); }});
  f.push_back({"", "output_dir",
               [&c](const toml::node& n, const std::string& nm) { c.output_dir = as_string(n, nm); },
               [&c](toml::table& t) { t.insert_or_assign("output_dir", c.output_dir.generic_string()); }});
  add_double("", "bridge_timeout_seconds", c.bridge_timeout_seconds);

  add_int("world", "n_references", w.n_references);
  add_int("world", "variants_per_reference", w.variants_per_reference);
  add_int("world", "n_distortion_types", w.n_distortion_types);
  add_int("world", "n_severity_levels", w.n_severity_levels);
  add_int("world", "feature_dim", w.feature_dim);
  add_double("world", "feature_bandwidth", w.feature_bandwidth);
  add_double("world", "feature_noise_sigma", w.feature_noise_sigma);
  f.push_back({"world", "quality_drop_per_severity",
               [&w](const toml::node& n, const std::string& nm) {
                 w.quality_drop_per_severity = as_doubles(n, nm);
               },
               [&w](toml::table& t) {
                 t.insert_or_assign("quality_drop_per_severity", to_array(w.quality_drop_per_severity));
               }});

  add_int("policy", "n_bins", sc.n_bins);
  add_double("policy", "min_score", sc.min_score);
  add_double("policy", "max_score", sc.max_score);
  add_double("policy", "init_weight_std", in.weight_std);
  add_double("policy", "prior_strength", in.prior_strength);
  add_double("policy", "prior_contamination", in.prior_contamination);

  add_int("evolution", "T", ev.rounds);
  add_int("evolution", "M", ev.batches);
  add_int("evolution", "B", ev.batch_size);
  add_int("evolution", "K", ev.k);
  add_int("evolution", "online_K", ev.online_k);
  f.push_back({"evolution", "n_pairs",
               [&ev](const toml::node& n, const std::string& nm) {
                 const long long v = as_int(n, nm);
                 if (v < 1) fail(ErrorKind::kConfig, nm + " must be positive" + where(n));
                 ev.n_pairs = static_cast<std::size_t>(v);
               },
               [&ev](toml::table& t) { t.insert_or_assign("n_pairs", static_cast<int64_t>(ev.n_pairs)); }});
  f.push_back({"evolution", "mode",
               [&ev](const toml::node& n, const std::string& nm) {
                 try {
                   ev.mode = parse_evolution_mode(as_string(n, nm));
                 } catch (const Error& e) {
                   fail(ErrorKind::kConfig, nm + ": " + e.what() + where(n));
                 }
               },
               [&ev](toml::table& t) { t.insert_or_assign("mode", std::string(to_string(ev.mode))); }});
  add_double("evolution", "estimate_tolerance", ev.estimate_tolerance);
  add_bool("evolution", "permute", ev.permute);
  add_double("evolution", "position_bias", ev.position_bias);
  add_int("evolution", "threads", ev.n_threads);
  f.push_back({"evolution", "regimes",
               [&ev](const toml::node& n, const std::string& nm) {
                 if (!n.is_array()) type_error(n, nm, "an array of {pool, pairing} tables");
                 std::vector<PairRegime> regimes;
                 for (const auto& item : *n.as_array()) {
                   if (!item.is_table()) type_error(item, nm, "an array of {pool, pairing} tables");
                   PairRegime r;
                   for (const auto& [k, v] : *item.as_table()) {
                     const std::string key(k.str());
                     const std::string s = as_string(v, nm + "." + key);
                     if (key == "pool") {
                       if (s != "all" && s != "references")
                         fail(ErrorKind::kConfig, nm + ".pool must be 'all' or 'references'" + where(v));
                       r.pool = s == "all" ? PairPool::kAll : PairPool::kReferences;
                     } else if (key == "pairing") {
                       try {
                         r.mode = parse_pair_mode(s);
                       } catch (const Error& e) {
                         fail(ErrorKind::kConfig, nm + ".pairing: " + e.what() + where(v));
                       }
                     } else {
                       fail(ErrorKind::kConfig, "unknown key '" + nm + "." + key + "'" + where(v));
                     }
                   }
                   regimes.push_back(r);
                 }
                 ev.regimes = std::move(regimes);
               },
               [&ev](toml::table& t) {
                 toml::array a;
                 for (const auto& r : ev.regimes)
                   a.push_back(toml::table{{"pool", r.pool == PairPool::kAll ? "all" : "references"},
                                           {"pairing", std::string(to_string(r.mode))}});
                 t.insert_or_assign("regimes", std::move(a));
               }});

  add_double("reward", "gamma", rw.gamma);
  add_double("reward", "std_floor", rw.std_floor);

  add_double("grpo", "clip_epsilon", gr.clip_epsilon);
  add_double("grpo", "beta", gr.beta);
  add_double("grpo", "learning_rate", gr.learning_rate);
  add_double("grpo", "weight_decay", gr.weight_decay);
  add_double("grpo", "beta1", gr.beta1);
  add_double("grpo", "beta2", gr.beta2);
  add_double("grpo", "moment_epsilon", gr.moment_epsilon);
  return f;
}

const char* const kSections[] = {"world", "policy", "evolution", "reward", "grpo"};

void apply_table(RunConfig& config, const toml::table& doc) {
  auto fs_list = fields(config);
  auto find = [&](const std::string& section, const std::string& key) -> Field* {
    for (auto& f : fs_list)
      if (f.section == section && f.key == key) return &f;
    return nullptr;
  };
  for (const auto& [k, node] : doc) {
    const std::string key(k.str());
    const bool is_section = std::find(std::begin(kSections), std::end(kSections), key) != std::end(kSections);
    if (is_section) {
      if (!node.is_table()) type_error(node, key, "a table");
      for (const auto& [sk, snode] : *node.as_table()) {
        const std::string skey(sk.str());
        Field* f = find(key, skey);
        if (!f) fail(ErrorKind::kConfig, "unknown key '" + key + "." + skey + "'" + where(snode));
        f->load(snode, f->name());
      }
      continue;
    }
    Field* f = find("", key);
    if (!f) fail(ErrorKind::kConfig, "unknown key '" + key + "'" + where(node));
    f->load(node, f->name());
  }
}

toml::table parse_toml(std::string_view text, std::string_view source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::kConfig, std::string(source) + ":" + std::to_string(e.source().begin.line) +
                                 ": " + std::string(e.description()));
  }
}

void apply_environment(RunConfig& config, const std::vector<std::string>& environment) {
  constexpr std::string_view kPrefix = "EVOQ_";
  for (const auto& entry : environment) {
    if (!entry.starts_with(kPrefix)) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string var = entry.substr(0, eq);
    const std::string value = entry.substr(eq + 1);
    const std::string wanted = lower(var.substr(kPrefix.size()));
    auto fs_list = fields(config);
    Field* match = nullptr;
    for (auto& f : fs_list) {
      const std::string candidate = lower(f.section.empty() ? f.key : f.section + "_" + f.key);
      if (candidate == wanted && f.key != "regimes") match = &f;
    }
    if (!match) fail(ErrorKind::kConfig, "unknown configuration override " + var);
    // The value is read as a TOML value; anything that does not parse is a string.
    toml::table holder;
    try {
      holder = toml::parse("v = " + value);
    } catch (const toml::parse_error&) {
      holder.insert_or_assign("v", value);
    }
    const toml::node* node = holder.get("v");
    match->load(*node, var);
  }
}

}  // namespace

RunConfig parse_config(std::string_view text, std::string_view source) {
  RunConfig config;
  apply_table(config, parse_toml(text, source));
  config.validate();
  return config;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

RunConfig load_config(const fs::path* path, const std::vector<std::string>& environment) {
  RunConfig config;
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) fail(ErrorKind::kIo, "cannot read config " + path->string());
    std::stringstream buf;
    buf << in.rdbuf();
    apply_table(config, parse_toml(buf.str(), path->string()));
  }
  apply_environment(config, environment);
  config.validate();
  return config;
}

std::string config_toml(const RunConfig& config) {
  RunConfig copy = config;
  toml::table root;
  std::map<std::string, toml::table> sections;
  for (auto& f : fields(copy)) {
    if (f.section.empty()) f.save(root);
    else f.save(sections[f.section]);
  }
  std::ostringstream os;
  os << root << "\n";
  for (const char* name : kSections) {
    toml::table wrapper;
    wrapper.insert_or_assign(name, sections[name]);
    os << "\n" << wrapper << "\n";
  }
  return os.str();
}

void save_config(const RunConfig& config, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << config_toml(config);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::optional<double> desk_scale;
  std::string mode;
  std::string backend;
  std::string checkpoint;
  int round = 1;
};

std::vector<std::string> current_environment() {
  std::vector<std::string> env;
  for (char** e = environ; e && *e; ++e) env.emplace_back(*e);
  return env;
}

RunConfig resolve(const CommonOptions& o) {
  const fs::path path(o.config);
  RunConfig c = load_config(o.config.empty() ? nullptr : &path, current_environment());
  if (o.seed) c.setup.master_seed = *o.seed;
  if (!o.output.empty()) c.output_dir = o.output;
  if (o.desk_scale) c.desk_scale = *o.desk_scale;
  if (!o.mode.empty()) {
    try {
      c.setup.evolution.mode = parse_evolution_mode(o.mode);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, std::string("--mode: ") + e.what());
    }
  }
  if (!o.backend.empty()) c.backend = o.backend;
  c.validate();
  return c;
}

PolicyParams starting_policy(const EvolutionSetup& setup, const std::string& checkpoint) {
  if (!checkpoint.empty()) {
    const PolicySnapshot snap = read_checkpoint(checkpoint);
    if (snap.params->feature_dim() != setup.world.feature_dim)
      fail(ErrorKind::kShape, "checkpoint feature dimension does not match world.feature_dim");
    return *snap.params;
  }
  return initialize_policy(setup.scale, setup.world.feature_dim, setup.init,
                           derive_seed(setup.master_seed, "policy/init"));
}

// Owns the transport and adapter of a bridge-backed run.
struct ExternalPeer {
  std::unique_ptr<Transport> transport;
  std::unique_ptr<RemotePolicyAdapter> adapter;

  void close() {
    if (adapter) adapter->shutdown();
    adapter.reset();
    if (auto* child = dynamic_cast<ChildProcessTransport*>(transport.get())) {
      const int status = child->finish();
      if (status != 0)
        fail(ErrorKind::kSessionAborted, "bridge peer exited with status " + std::to_string(status));
    }
    transport.reset();
  }
};

std::optional<ExternalPeer> open_peer(const RunConfig& c, const EvolutionSetup& setup) {
  if (c.backend == "builtin") return std::nullopt;
  ExternalPeer peer;
  peer.transport = open_bridge_endpoint(c.backend);
  AdapterOptions opts;
  opts.timeout = std::chrono::milliseconds(std::llround(c.bridge_timeout_seconds * 1000.0));
  opts.budget_k = setup.evolution.k;
  opts.scale = {setup.scale.min_score, setup.scale.max_score, setup.scale.n_bins};
  peer.adapter = std::make_unique<RemotePolicyAdapter>(*peer.transport, opts);
  return peer;
}

void print_metrics(std::ostream& out, const RoundMetrics& m) {
  for (const auto& d : m.datasets)
    out << "  " << std::left << std::setw(10) << d.dataset << " n=" << d.n_images << std::fixed
        << std::setprecision(4) << "  PLCC " << d.plcc << "  SRCC " << d.srcc << "\n";
  out << "  WAVG       PLCC " << m.wavg_plcc << "  SRCC " << m.wavg_srcc << "\n";
  out.unsetf(std::ios::floatfield);
}

int cmd_world_gen(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  const Corpus corpus = generate_corpus(s.world, derive_seed(s.master_seed, "world/corpus"));
  fs::create_directories(c.output_dir);
  const fs::path path = c.output_dir / "corpus.jsonl";
  write_corpus(corpus, path);
  out << "wrote " << corpus.size() << " images (" << corpus.reference_ids().size()
      << " references) to " << path.string() << "\n";
  return 0;
}

int cmd_vote(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  if (o.round < 1) fail(ErrorKind::kConfig, "--round must be at least 1");
  const Corpus corpus = generate_corpus(s.world, derive_seed(s.master_seed, "world/corpus"));
  const PolicyParams params = starting_policy(s, o.checkpoint);
  const SeedDerivation round_seeds(derive_seed(s.master_seed, "round/" + std::to_string(o.round)));
  const PairRegime& regime = s.evolution.regime(o.round);
  const PairSet pairs = sample_pairs(corpus, s.evolution.n_pairs, regime.mode,
                                     round_seeds.derive("pairs"), regime.pool);

  InProcessBackend builtin(PolicySnapshot::take(params, PolicyRole::kCurrent, "vote"),
                           s.evolution.position_bias);
  auto peer = open_peer(c, s);
  PolicyBackend& backend = peer ? static_cast<PolicyBackend&>(*peer->adapter) : builtin;
  OfflineOptions opts;
  opts.k = s.evolution.k;
  opts.permute = s.evolution.permute;
  opts.n_threads = s.evolution.n_threads;
  const OfflineResult result = run_offline_stage(backend, corpus, pairs, round_seeds.derive("vote"), opts);
  if (peer) peer->close();

  const fs::path dir = c.output_dir / ("vote_round_" + std::to_string(o.round));
  fs::create_directories(dir);
  write_pairs(pairs, dir / "pairs.jsonl");
  write_vote_log(result.tallies, dir / "votes.jsonl");
  write_pseudo_labels(result.labels, dir / "pseudo_labels.jsonl");
  out << "voted " << pairs.pairs.size() << " pairs with K=" << opts.k << " into " << dir.string()
      << "\nlabel accuracy " << std::fixed << std::setprecision(4)
      << label_accuracy(corpus, result.labels) << "\n";
  out.unsetf(std::ios::floatfield);
  return 0;
}

int cmd_train(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  if (o.round < 1) fail(ErrorKind::kConfig, "--round must be at least 1");
  const Corpus corpus = generate_corpus(s.world, derive_seed(s.master_seed, "world/corpus"));
  PolicyParams params = starting_policy(s, o.checkpoint);
  auto peer = open_peer(c, s);
  const fs::path dir = c.output_dir / ("train_round_" + std::to_string(o.round));
  RoundContext ctx{corpus, s, o.round, derive_seed(s.master_seed, "round/" + std::to_string(o.round)),
                   peer ? peer->adapter.get() : nullptr, dir};
  const RoundArtifacts art = run_round(ctx, params);
  if (peer) peer->close();
  out << "round " << o.round << ": " << art.completed_batches << " batches, artifacts in "
      << dir.string() << "\n";
  print_metrics(out, art.metrics);
  if (art.failure) fail(ErrorKind::kNumericalFailure, *art.failure);
  return 0;
}

int cmd_evolve(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  auto peer = open_peer(c, s);
  const EvolutionResult r = run_evolution(s, c.output_dir, peer ? peer->adapter.get() : nullptr);
  if (peer) {
    out << "exported advantages for " << peer->adapter->exports_sent() << " batches\n";
    peer->close();
  }
  std::vector<RoundMetrics> rounds{r.baseline};
  for (const auto& a : r.rounds) rounds.push_back(a.metrics);
  out << "run directory " << r.run_directory.string() << "\n" << render_report(rounds);
  if (r.failure) fail(ErrorKind::kNumericalFailure, *r.failure);
  return 0;
}

int cmd_eval(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  const Corpus corpus = generate_corpus(s.world, derive_seed(s.master_seed, "world/corpus"));
  const PolicyParams params = starting_policy(s, o.checkpoint);
  const RoundMetrics m = evaluate_policy(params, corpus, 0);
  const fs::path dir = c.output_dir / "eval";
  fs::create_directories(dir);
  write_metrics(m, dir / "metrics.json");
  out << (o.checkpoint.empty() ? std::string("base policy") : o.checkpoint) << "\n";
  print_metrics(out, m);
  return 0;
}

std::vector<RoundMetrics> collect_rounds(const fs::path& run) {
  if (!fs::is_directory(run)) fail(ErrorKind::kIo, "not a run directory: " + run.string());
  std::map<int, RoundMetrics> by_round;
  for (const auto& entry : fs::directory_iterator(run)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || !name.starts_with("round_")) continue;
    const fs::path metrics = entry.path() / "metrics.json";
    if (!fs::exists(metrics)) continue;
    RoundMetrics m = read_metrics(metrics);
    by_round[m.round] = std::move(m);
  }
  if (by_round.empty()) fail(ErrorKind::kIo, "no round metrics under " + run.string());
  std::vector<RoundMetrics> out;
  for (auto& [t, m] : by_round) out.push_back(std::move(m));
  return out;
}

int cmd_report(const std::string& run, std::ostream& out) {
  const auto rounds = collect_rounds(run);
  out << render_report(rounds);
  return 0;
}

int cmd_serve(const CommonOptions& o, const std::string& listen, std::ostream& err) {
  const RunConfig c = resolve(o);
  const EvolutionSetup s = c.scaled_setup();
  const PolicyParams params = starting_policy(s, o.checkpoint);
  InProcessBackend policy(PolicySnapshot::take(params, PolicyRole::kCurrent, "served"),
                          s.evolution.position_bias);
  std::unique_ptr<Transport> transport;
  if (listen.empty()) {
    transport = std::make_unique<FdTransport>(0, 1, false);
  } else {
    transport = accept_unix(listen, std::chrono::milliseconds(
                                        std::llround(c.bridge_timeout_seconds * 1000.0)));
  }
  ServeOptions opts;
  int exported = 0;
  opts.on_advantages = [&](const AdvantageExport&) { ++exported; };
  const SessionSummary summary = serve_policy_over_bridge(*transport, policy, opts);
  err << "served " << summary.requests_served << " requests (" << summary.compare_requests
      << " compare, " << summary.score_requests << " score, " << summary.advantage_exports
      << " advantage exports, " << summary.errors << " errors)\n";
  return 0;
}

int cmd_ablate_k(const CommonOptions& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const fs::path root = c.output_dir / "ablate_k";
  struct Row {
    int k;
    RoundMetrics final_metrics;
    std::vector<double> accuracy;
  };
  std::vector<Row> rows;
  for (int k : kAblationBudgets) {
    RunConfig ck = c;
    // Only the voting budget varies; online sampling keeps the base budget.
    ck.setup.evolution.online_k = c.setup.evolution.sampling_k();
    ck.setup.evolution.k = k;
    ck.validate();
    const EvolutionSetup s = ck.scaled_setup();
    const fs::path dir = root / ("K" + std::to_string(k));
    auto peer = open_peer(ck, s);
    const EvolutionResult r = run_evolution(s, dir, peer ? peer->adapter.get() : nullptr);
    if (peer) peer->close();
    if (r.failure) fail(ErrorKind::kNumericalFailure, "K=" + std::to_string(k) + ": " + *r.failure);
    const RoundMetrics& last = r.rounds.empty() ? r.baseline : r.rounds.back().metrics;
    write_metrics(last, dir / "metrics.json");
    Row row{k, last, {}};
    for (const auto& a : r.rounds) row.accuracy.push_back(a.label_accuracy);
    rows.push_back(std::move(row));
  }
  std::ostringstream table;
  table << "K     final PLCC   final SRCC   label accuracy per round\n";
  std::ofstream csv(root / "summary.csv", std::ios::binary | std::ios::trunc);
  csv << "K,plcc,srcc\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-5d %-12.4f %-12.4f", r.k, r.final_metrics.wavg_plcc,
                  r.final_metrics.wavg_srcc);
    table << buf;
    for (double a : r.accuracy) {
      std::snprintf(buf, sizeof buf, " %.4f", a);
      table << buf;
    }
    table << "\n";
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.k, r.final_metrics.wavg_plcc,
                  r.final_metrics.wavg_srcc);
    csv << buf;
  }
  out << table.str() << "metrics under " << root.string() << "\n";
  return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-evolving image quality ranking engine", "evoq"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOptions o;
  std::string listen;
  std::string run_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "TOML run configuration");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--output", o.output, "output directory");
    sub->add_option("--desk-scale", o.desk_scale, "scale factor for corpus and pair counts");
    sub->add_option("--mode", o.mode, "quality or estimate");
    sub->add_option("--backend", o.backend,
                    "builtin, bridge:exec:<command> or bridge:unix:<path>");
  };

  auto* world_gen = app.add_subcommand("world-gen", "generate the synthetic corpus");
  auto* vote = app.add_subcommand("vote", "offline pseudo-labelling of one round's pairs");
  auto* train = app.add_subcommand("train", "run a single evolution round");
  auto* evolve = app.add_subcommand("evolve", "run all rounds and write a run directory");
  auto* eval = app.add_subcommand("eval", "evaluate a policy against the latent truth");
  auto* report = app.add_subcommand("report", "tabulate the rounds of a finished run");
  auto* serve = app.add_subcommand("serve-bridge", "serve the built-in policy over the bridge");
  auto* ablate = app.add_subcommand("ablate-k", "sweep the voting budget K over 1, 8, 16, 32");
  for (auto* sub : {world_gen, vote, train, evolve, eval, serve, ablate}) common(sub);
  for (auto* sub : {vote, train, eval, serve})
    sub->add_option("--checkpoint", o.checkpoint, "policy checkpoint (default: base policy)");
  for (auto* sub : {vote, train}) sub->add_option("--round", o.round, "round number");
  serve->add_option("--listen", listen, "unix socket path (default: stdin/stdout)");
  report->add_option("run", run_dir, "run directory")->required();

  std::vector<std::string> argv_store{"evoq"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (world_gen->parsed()) return cmd_world_gen(o, out);
    if (vote->parsed()) return cmd_vote(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (evolve->parsed()) return cmd_evolve(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (report->parsed()) return cmd_report(run_dir, out);
    if (serve->parsed()) return cmd_serve(o, listen, err);
    if (ablate->parsed()) return cmd_ablate_k(o, out);
  } catch (const Error& e) {
    err << "evoq: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    err << "evoq: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace evoq
