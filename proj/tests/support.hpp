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

// Brute-force reference implementations and small fixture builders shared by
// the unit tests and the acceptance runner.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "vca/vca.hpp"

namespace vca::testing {

// ---------------------------------------------------------------------------
// Top-K: score everything, sort everything, take the head.

template <typename T, typename U>
std::vector<std::string> top_k_full_sort(const std::vector<T>& target, const std::vector<Candidate<U>>& candidates,
                                         std::size_t k, const std::set<std::string, std::less<>>& excluded = {}) {
  struct Row {
    double sim;
    std::string id;
  };
  std::vector<Row> rows;
  for (const auto& c : candidates) {
    if (excluded.contains(c.id)) continue;
    rows.push_back({cosine(std::span<const T>(target), c.embedding), std::string(c.id)});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.id < b.id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, rows.size()); ++i) out.push_back(rows[i].id);
  return out;
}

// ---------------------------------------------------------------------------
// Detection metrics by exhaustive threshold sweep, O(n^2).

struct BruteRates {
  double p_miss;
  double p_fa;
};

// Operating points from every score used as a threshold under both decision
// conventions (accept iff s >= t, and accept iff s > t), plus the two
// extremes; duplicates are merged and points ordered from "accept all" to
// "reject all".
inline std::vector<BruteRates> brute_operating_points(const std::vector<double>& scores,
                                                      const std::vector<int>& labels) {
  double nt = 0, nn = 0;
  for (int l : labels) (l ? nt : nn) += 1;
  std::vector<std::pair<long, long>> counts;  // (misses, false alarms)
  counts.push_back({0, static_cast<long>(nn)});
  counts.push_back({static_cast<long>(nt), 0});
  for (double t : scores) {
    long miss_ge = 0, fa_ge = 0, miss_gt = 0, fa_gt = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i]) {
        miss_ge += scores[i] < t;
        miss_gt += scores[i] <= t;
      } else {
        fa_ge += scores[i] >= t;
        fa_gt += scores[i] > t;
      }
    }
    counts.push_back({miss_ge, fa_ge});
    counts.push_back({miss_gt, fa_gt});
  }
  std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  });
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  std::vector<BruteRates> out;
  for (const auto& [m, f] : counts) out.push_back({m / nt, f / nn});
  return out;
}

// First point with p_miss >= p_fa; interpolated with its predecessor when the
// rates cross strictly between the two.
inline double brute_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  const auto pts = brute_operating_points(scores, labels);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].p_miss < pts[i].p_fa) continue;
    if (pts[i].p_miss == pts[i].p_fa || i == 0) return pts[i].p_miss;
    const auto& a = pts[i - 1];
    const auto& b = pts[i];
    const double ga = a.p_fa - a.p_miss;
    const double gb = b.p_fa - b.p_miss;
    const double t = ga / (ga - gb);
    return a.p_miss + t * (b.p_miss - a.p_miss);
  }
  return 1.0;
}

inline double brute_min_dcf(const std::vector<double>& scores, const std::vector<int>& labels,
                            const DcfParams& p = {}) {
  const double wm = p.c_miss * p.p_target;
  const double wf = p.c_fa * (1.0 - p.p_target);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : brute_operating_points(scores, labels)) {
    best = std::min(best, (wm * r.p_miss + wf * r.p_fa) / std::min(wm, wf));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Central finite differences of the mean softmax loss.

struct NumericGradient {
  Eigen::MatrixXd transform;
  Eigen::MatrixXd class_weights;
};

inline NumericGradient finite_difference_gradient(const LinearSpeakerModel& m, const Eigen::MatrixXd& x,
                                                  const std::vector<int>& y, double h = 1e-5) {
  NumericGradient g;
  const auto probe = [&](Eigen::MatrixXd LinearSpeakerModel::*field) {
    Eigen::MatrixXd out((m.*field).rows(), (m.*field).cols());
    LinearSpeakerModel w = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        const double keep = (w.*field)(r, c);
        (w.*field)(r, c) = keep + h;
        const double up = softmax_loss(w, x, y);
        (w.*field)(r, c) = keep - h;
        const double down = softmax_loss(w, x, y);
        (w.*field)(r, c) = keep;
        out(r, c) = (up - down) / (2.0 * h);
      }
    }
    return out;
  };
  g.transform = probe(&LinearSpeakerModel::transform);
  g.class_weights = probe(&LinearSpeakerModel::class_weights);
  return g;
}

// Largest element-wise relative error, with a floor on the denominator so
// that entries that are both ~0 do not dominate.
inline double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Fixtures

inline UtteranceRecord real(std::string id, std::optional<std::string> spk = std::nullopt) {
  UtteranceRecord r;
  r.utt_id = std::move(id);
  r.speaker_id = std::move(spk);
  return r;
}

// n_speakers x per_speaker labelled utterances "s0000-u00" with random
// Gaussian embeddings of dimension dim.
struct Corpus {
  std::vector<UtteranceRecord> records;
  EmbeddingStore store;
};

inline Corpus labelled_corpus(std::size_t n_speakers, std::size_t per_speaker, std::uint32_t dim,
                              std::uint64_t seed) {
  Corpus c{{}, EmbeddingStore(dim)};
  Rng rng(seed, "fixture/corpus");
  char buf[48];
  for (std::size_t s = 0; s < n_speakers; ++s) {
    std::snprintf(buf, sizeof buf, "s%05zu", s);
    const std::string spk = buf;
    for (std::size_t u = 0; u < per_speaker; ++u) {
      std::snprintf(buf, sizeof buf, "%s-u%02zu", spk.c_str(), u);
      c.records.push_back(real(buf, spk));
      c.store.insert(buf, rng.gaussian_vector(dim));
    }
  }
  return c;
}

// A fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vca-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace vca::testing
