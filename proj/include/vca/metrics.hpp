// Copyright 2026  The vca-toolkit Authors

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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/io.hpp"
#include "vca/selection.hpp"
#include "vca/trainer.hpp"

namespace vca {

struct Trial {
  int label = 0;  // 1 = target (same speaker), 0 = nontarget
  std::string utt_a;
  std::string utt_b;

  friend bool operator==(const Trial&, const Trial&) = default;
};

/// Detection-cost parameters. Defaults follow the common VoxCeleb setting.
struct DcfParams {
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
};

struct EvalReport {
  std::size_t n_trials = 0;
  double eer = 0.0;
  double min_dcf = 0.0;
  double p_target = 0.01;
  double c_miss = 1.0;
  double c_fa = 1.0;
  double threshold_at_eer = 0.0;
};

/// Cosine between the model embeddings of each trial's two utterances, in
/// trial order. Each utterance is embedded once.
inline std::vector<double> score_trials(std::span<const Trial> trials, const LinearSpeakerModel& model,
                                        const EmbeddingStore& store) {
  std::map<std::string_view, std::vector<double>> cache;
  const auto emb = [&](const std::string& id) -> const std::vector<double>& {
    auto it = cache.find(id);
    if (it != cache.end()) return it->second;
    if (!store.contains(id)) throw DataError("trial utterance '" + id + "' has no embedding");
    return cache.emplace(id, embed(model, store.get(id))).first->second;
  };
  std::vector<double> scores;
  scores.reserve(trials.size());
  for (const auto& t : trials) scores.push_back(cosine(emb(t.utt_a), emb(t.utt_b)));
  return scores;
}

/// One point of the threshold sweep under the rule "accept iff score >= theta".
struct OperatingPoint {
  double threshold;
  std::size_t misses;        // targets with score < threshold
  std::size_t false_alarms;  // nontargets with score >= threshold
};

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels, std::size_t& n_target,
                         std::size_t& n_nontarget) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  n_target = n_nontarget = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("trial labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DataError("non-finite score");
    (labels[i] ? n_target : n_nontarget) += 1;
  }
  if (n_target == 0 || n_nontarget == 0) {
    throw DataError("need at least one target and one nontarget trial");
  }
}

}  // namespace detail

/// Operating points at -inf, every distinct score (ascending) and +inf.
inline std::vector<OperatingPoint> sweep_operating_points(std::span<const double> scores, std::span<const int> labels) {
  std::size_t n_target = 0, n_nontarget = 0;
  detail::check_scores(scores, labels, n_target, n_nontarget);
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<OperatingPoint> points;
  points.push_back({-kInf, 0, n_nontarget});
  std::size_t targets_below = 0, nontargets_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    points.push_back({s, targets_below, n_nontarget - nontargets_below});
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] ? targets_below : nontargets_below) += 1;
    }
  }
  points.push_back({kInf, n_target, 0});
  return points;
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Equal error rate from a sorted sweep: the first operating point where the
/// miss rate reaches the false-alarm rate; if the rates cross between two
/// points rather than at one, the two are linearly interpolated.
inline EerResult eer(std::span<const double> scores, std::span<const int> labels) {
  const auto points = sweep_operating_points(scores, labels);
  const std::size_t n_target = points.back().misses;
  const std::size_t n_nontarget = points.front().false_alarms;
  const auto rate_miss = [&](const OperatingPoint& p) { return static_cast<double>(p.misses) / n_target; };
  const auto rate_fa = [&](const OperatingPoint& p) { return static_cast<double>(p.false_alarms) / n_nontarget; };
  const auto finite_threshold = [&](double t) {
    return std::isfinite(t) ? t : *std::max_element(scores.begin(), scores.end());
  };
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& p = points[i];
    // Exact rational comparison miss/nT >= fa/nN.
    const auto lhs = static_cast<unsigned __int128>(p.misses) * n_nontarget;
    const auto rhs = static_cast<unsigned __int128>(p.false_alarms) * n_target;
    if (lhs < rhs) continue;
    if (lhs == rhs) return {rate_miss(p), finite_threshold(p.threshold)};
    const auto& q = points[i - 1];
    const double gap_before = rate_fa(q) - rate_miss(q);  // > 0
    const double gap_after = rate_fa(p) - rate_miss(p);   // < 0
    const double t = gap_before / (gap_before - gap_after);
    return {rate_miss(q) + t * (rate_miss(p) - rate_miss(q)), finite_threshold(p.threshold)};
  }
  throw DataError("eer: sweep did not cross");  // unreachable: the +inf point always crosses
}

inline void validate(const DcfParams& p) {
  if (!(p.p_target > 0.0 && p.p_target < 1.0)) throw DataError("p_target must lie in (0, 1)");
  if (!(p.c_miss > 0.0) || !(p.c_fa > 0.0)) throw DataError("c_miss and c_fa must be positive");
}

/// Minimum normalized detection cost over all swept thresholds.
inline double min_dcf(std::span<const double> scores, std::span<const int> labels, const DcfParams& params = {}) {
  validate(params);
  const auto points = sweep_operating_points(scores, labels);
  const double n_target = static_cast<double>(points.back().misses);
  const double n_nontarget = static_cast<double>(points.front().false_alarms);
  const double w_miss = params.c_miss * params.p_target;
  const double w_fa = params.c_fa * (1.0 - params.p_target);
  const double norm = std::min(w_miss, w_fa);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    const double cost = (w_miss * (p.misses / n_target) + w_fa * (p.false_alarms / n_nontarget)) / norm;
    best = std::min(best, cost);
  }
  return best;
}

inline EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, const DcfParams& params = {}) {
  EvalReport r;
  r.n_trials = scores.size();
  const auto e = eer(scores, labels);
  r.eer = e.eer;
  r.threshold_at_eer = e.threshold;
  r.min_dcf = min_dcf(scores, labels, params);
  r.p_target = params.p_target;
  r.c_miss = params.c_miss;
  r.c_fa = params.c_fa;
  return r;
}

inline std::vector<int> trial_labels(std::span<const Trial> trials) {
  std::vector<int> labels;
  labels.reserve(trials.size());
  for (const auto& t : trials) labels.push_back(t.label);
  return labels;
}

// ---------------------------------------------------------------------------
// Files

/// Trial list: one "<label 0|1> <utt_a> <utt_b>" per line.
inline std::vector<Trial> parse_trials(std::string_view text) {
  std::vector<Trial> trials;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string label, extra;
    Trial t;
    if (!(fields >> label >> t.utt_a >> t.utt_b) || (fields >> extra) || (label != "0" && label != "1")) {
      throw DataError("trial list line " + std::to_string(line_no) + ": expected \"<0|1> <utt_a> <utt_b>\"");
    }
    t.label = label == "1";
    trials.push_back(std::move(t));
  }
  return trials;
}

inline std::vector<Trial> load_trials(const std::filesystem::path& path) { return parse_trials(io::read_file(path)); }

inline std::string trials_to_string(std::span<const Trial> trials) {
  std::string out;
  for (const auto& t : trials) out += std::to_string(t.label) + " " + t.utt_a + " " + t.utt_b + "\n";
  return out;
}

inline std::string scores_to_string(std::span<const Trial> trials, std::span<const double> scores) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < trials.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", scores[i]);
    out += trials[i].utt_a + " " + trials[i].utt_b + " " + buf + "\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n_trials"] = r.n_trials;
  j["eer"] = r.eer;
  j["min_dcf"] = r.min_dcf;
  j["p_target"] = r.p_target;
  j["c_miss"] = r.c_miss;
  j["c_fa"] = r.c_fa;
  j["threshold_at_eer"] = r.threshold_at_eer;
  return j;
}

}  // namespace vca
