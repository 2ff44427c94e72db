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

#include "evoq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evoq/error.hpp"

namespace evoq {

using nlohmann::json;

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::kShape, "correlation inputs differ in length");
  if (a.size() < 2) fail(ErrorKind::kShape, "correlation needs at least two points");
}

}  // namespace

double plcc(std::span<const double> predictions, std::span<const double> truths) {
  check_lengths(predictions, truths);
  const auto n = static_cast<double>(predictions.size());
  const double mx = std::accumulate(predictions.begin(), predictions.end(), 0.0) / n;
  const double my = std::accumulate(truths.begin(), truths.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double dx = predictions[i] - mx;
    const double dy = truths[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(ErrorKind::kUndefinedCorrelation, "correlation of a constant vector is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double srcc(std::span<const double> predictions, std::span<const double> truths) {
  check_lengths(predictions, truths);
  const auto rx = midranks(predictions);
  const auto ry = midranks(truths);
  return plcc(rx, ry);
}

double weighted_average(std::span<const MetricReport> reports, WeightedMetric metric) {
  if (reports.empty()) fail(ErrorKind::kShape, "weighted average of no reports");
  double num = 0.0, den = 0.0;
  for (const auto& r : reports) {
    if (r.n_images == 0) fail(ErrorKind::kShape, "report with zero images");
    const double w = static_cast<double>(r.n_images);
    num += w * (metric == WeightedMetric::kPlcc ? r.plcc : r.srcc);
    den += w;
  }
  return num / den;
}

double policy_quality_estimate(const PolicyParams& params, const LatentImage& image,
                               EstimateMode mode, int k, std::uint64_t seed) {
  switch (mode) {
    case EstimateMode::kMean:
      return expected_score(params, image.features);
    case EstimateMode::kModeBin: {
      const auto p = score_distribution(params, image.features);
      const auto best = std::max_element(p.begin(), p.end()) - p.begin();
      return params.scale.center(static_cast<int>(best));
    }
    case EstimateMode::kSampleMean: {
      const auto samples = sample_scores(params, image.features, k, seed);
      double sum = 0.0;
      for (const auto& s : samples) sum += s.score;
      return sum / static_cast<double>(samples.size());
    }
  }
  return expected_score(params, image.features);
}

RoundMetrics evaluate_policy(const PolicyParams& params, const Corpus& corpus, int round) {
  RoundMetrics out;
  out.round = round;
  struct Split {
    const char* name;
    std::vector<double> pred, truth;
  };
  Split pristine{"pristine", {}, {}};
  Split distorted{"distorted", {}, {}};
  for (const auto& img : corpus.images) {
    Split& s = img.is_reference() ? pristine : distorted;
    s.pred.push_back(expected_score(params, img.features));
    s.truth.push_back(img.true_quality);
  }
  for (Split* s : {&pristine, &distorted}) {
    if (s->pred.size() < 2) continue;
    MetricReport r;
    r.dataset = s->name;
    r.n_images = s->pred.size();
    r.round_tag = "round_" + std::to_string(round);
    try {
      r.plcc = plcc(s->pred, s->truth);
      r.srcc = srcc(s->pred, s->truth);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedCorrelation) throw;
      continue;
    }
    out.datasets.push_back(r);
  }
  if (!out.datasets.empty()) {
    out.wavg_plcc = weighted_average(out.datasets, WeightedMetric::kPlcc);
    out.wavg_srcc = weighted_average(out.datasets, WeightedMetric::kSrcc);
  }
  return out;
}

std::string metrics_json(const RoundMetrics& metrics) {
  json datasets = json::array();
  for (const auto& r : metrics.datasets)
    datasets.push_back({{"name", r.dataset}, {"n", r.n_images}, {"plcc", r.plcc}, {"srcc", r.srcc}});
  json doc = {{"round", metrics.round},
              {"datasets", datasets},
              {"wavg_plcc", metrics.wavg_plcc},
              {"wavg_srcc", metrics.wavg_srcc}};
  return doc.dump(2);
}

void write_metrics(const RoundMetrics& metrics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << metrics_json(metrics) << '\n';
}

RoundMetrics read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  try {
    const json doc = json::parse(in);
    RoundMetrics m;
    m.round = doc.at("round").get<int>();
    for (const auto& d : doc.at("datasets")) {
      MetricReport r;
      r.dataset = d.at("name").get<std::string>();
      r.n_images = d.at("n").get<std::size_t>();
      r.plcc = d.at("plcc").get<double>();
      r.srcc = d.at("srcc").get<double>();
      r.round_tag = "round_" + std::to_string(m.round);
      m.datasets.push_back(r);
    }
    m.wavg_plcc = doc.at("wavg_plcc").get<double>();
    m.wavg_srcc = doc.at("wavg_srcc").get<double>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": " + e.what());
  }
}

namespace {

std::string cell(double value, const double* baseline) {
  char buf[48];
  if (!baseline) {
    std::snprintf(buf, sizeof buf, "%.3f", value);
  } else if (*baseline == 0.0) {
    std::snprintf(buf, sizeof buf, "%.3f (n/a)", value);
  } else {
    std::snprintf(buf, sizeof buf, "%.3f (%+.1f%%)", value,
                  100.0 * (value - *baseline) / std::fabs(*baseline));
  }
  return buf;
}

}  // namespace

std::string render_report(std::span<const RoundMetrics> rounds) {
  if (rounds.empty()) return "no rounds\n";
  std::vector<std::string> names;
  for (const auto& m : rounds)
    for (const auto& r : m.datasets)
      if (std::find(names.begin(), names.end(), r.dataset) == names.end()) names.push_back(r.dataset);

  constexpr int kNameWidth = 12;
  constexpr int kCellWidth = 17;
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", kNameWidth, "Dataset");
  os << buf;
  for (const auto& m : rounds) {
    const std::string title = m.round == 0 ? "Round0 (base)" : "Round" + std::to_string(m.round);
    std::snprintf(buf, sizeof buf, " | %-*s", 2 * kCellWidth + 1, title.c_str());
    os << buf;
  }
  os << '\n';
  std::snprintf(buf, sizeof buf, "%-*s", kNameWidth, "");
  os << buf;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    std::snprintf(buf, sizeof buf, " | %-*s %-*s", kCellWidth, "PLCC", kCellWidth, "SRCC");
    os << buf;
  }
  os << '\n';

  auto row = [&](const std::string& name, auto get) {
    std::snprintf(buf, sizeof buf, "%-*s", kNameWidth, name.c_str());
    os << buf;
    const auto base = get(rounds.front());
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      const auto vals = get(rounds[i]);
      std::string p = "-", s = "-";
      if (vals.first) {
        const double* bp = i == 0 || !base.first ? nullptr : &*base.first;
        const double* bs = i == 0 || !base.second ? nullptr : &*base.second;
        p = cell(*vals.first, bp);
        s = cell(*vals.second, bs);
      }
      std::snprintf(buf, sizeof buf, " | %-*s %-*s", kCellWidth, p.c_str(), kCellWidth, s.c_str());
      os << buf;
    }
    os << '\n';
  };
  using Pair = std::pair<std::optional<double>, std::optional<double>>;
  for (const auto& name : names) {
    row(name, [&](const RoundMetrics& m) -> Pair {
      for (const auto& r : m.datasets)
        if (r.dataset == name) return {r.plcc, r.srcc};
      return {};
    });
  }
  row("WAVG", [](const RoundMetrics& m) -> Pair {
    if (m.datasets.empty()) return {};
    return {m.wavg_plcc, m.wavg_srcc};
  });
  return os.str();
}

}  // namespace evoq
