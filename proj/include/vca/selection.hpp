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
#include <exception>
#include <filesystem>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/io.hpp"
#include "vca/random.hpp"
#include "vca/scenario.hpp"

namespace vca {

// ---------------------------------------------------------------------------
// Similarity

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double l2_norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

namespace detail {

// The one formula every similarity in the toolkit goes through, so cached
// norms reproduce cosine() bit for bit.
inline double cosine_from_parts(double dot_ab, double norm_a, double norm_b) {
  return std::clamp(dot_ab / (norm_a * norm_b), -1.0, 1.0);
}

}  // namespace detail

/// Cosine similarity a.b / (|a| |b|), clamped to [-1, 1].
template <typename A, typename B>
double cosine(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) {
    throw DataError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw DataError("cosine: zero-norm vector");
  return detail::cosine_from_parts(dot(a, b), na, nb);
}

template <typename A, typename B>
double cosine(const std::vector<A>& a, const std::vector<B>& b) {
  return cosine(std::span<const A>(a), std::span<const B>(b));
}

// ---------------------------------------------------------------------------
// Top-K

/// Ranking used everywhere: higher similarity first, ties by ascending id.
struct ScoredCandidate {
  double similarity;
  std::string_view id;
  std::size_t index;  // position in the caller's candidate list
};

inline bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

/// Keeps the K best candidates seen so far in a heap whose top is the worst
/// kept element: O(log K) per offer.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(const ScoredCandidate& c) {
    if (k_ == 0) return;
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (ranks_before(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }

  /// Best first.
  std::vector<ScoredCandidate> take_sorted() && {
    std::sort_heap(heap_.begin(), heap_.end(), ranks_before);
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<ScoredCandidate> heap_;
};

template <typename T>
struct Candidate {
  std::string_view id;
  std::span<const T> embedding;
};

/// The min(K, eligible) candidates most cosine-similar to `target`, best
/// first, ties broken by ascending id. Candidates whose id is in `excluded`
/// are skipped.
template <typename T, typename U>
std::vector<std::string> top_k(std::span<const T> target, std::span<const Candidate<U>> candidates, std::size_t k,
                               const std::set<std::string, std::less<>>& excluded = {}) {
  if (k == 0) throw DataError("top_k: K must be at least 1");
  const double target_norm = l2_norm(target);
  if (target_norm == 0.0) throw DataError("cosine: zero-norm vector");
  BestK best(k);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (excluded.contains(c.id)) continue;
    if (c.embedding.size() != target.size()) {
      throw DataError("top_k: candidate '" + std::string(c.id) + "' has mismatched dimension");
    }
    const double cn = l2_norm(c.embedding);
    if (cn == 0.0) throw DataError("cosine: zero-norm vector for '" + std::string(c.id) + "'");
    best.offer({detail::cosine_from_parts(dot(target, c.embedding), target_norm, cn), c.id, i});
  }
  std::vector<std::string> out;
  for (const auto& c : std::move(best).take_sorted()) out.emplace_back(c.id);
  return out;
}

template <typename T, typename U>
std::vector<std::string> top_k(const std::vector<T>& target, const std::vector<Candidate<U>>& candidates,
                               std::size_t k, const std::set<std::string, std::less<>>& excluded = {}) {
  return top_k(std::span<const T>(target), std::span<const Candidate<U>>(candidates), k, excluded);
}

// ---------------------------------------------------------------------------
// Plans

enum class Strategy { kRandom, kNearest };

inline std::string_view to_string(Strategy s) { return s == Strategy::kRandom ? "rs" : "nn"; }

inline Strategy parse_strategy(std::string_view s) {
  if (s == "rs") return Strategy::kRandom;
  if (s == "nn") return Strategy::kNearest;
  throw DataError("unknown strategy '" + std::string(s) + "' (expected rs|nn)");
}

inline std::string pseudo_utt_id(std::string_view target_utt, std::uint32_t k_index) {
  return std::string(target_utt) + "#vca" + std::to_string(k_index);
}

struct ConversionJob {
  std::string job_id;
  std::string target_utt;
  std::string source_utt;
  std::string assigned_speaker;  // the target's label
  std::uint32_t k_index = 0;
  std::string pseudo_utt_id;

  friend bool operator==(const ConversionJob&, const ConversionJob&) = default;
};

inline ConversionJob make_job(const UtteranceRecord& target, std::string source_utt, std::uint32_t k) {
  ConversionJob job;
  job.target_utt = target.utt_id;
  job.source_utt = std::move(source_utt);
  job.assigned_speaker = *target.speaker_id;
  job.k_index = k;
  job.pseudo_utt_id = pseudo_utt_id(target.utt_id, k);
  job.job_id = "job:" + job.pseudo_utt_id;
  return job;
}

/// K conversion jobs per target. `k` is the generation coefficient; K = 0
/// is the empty (baseline) plan.
struct AugmentationPlan {
  Strategy strategy = Strategy::kRandom;
  std::uint32_t k = 0;
  std::vector<ConversionJob> jobs;  // sorted by (target_utt, k_index)
  std::optional<std::uint64_t> seed;   // rs only
  std::optional<std::string> phi_tag;  // nn only

  friend bool operator==(const AugmentationPlan&, const AugmentationPlan&) = default;
};

struct PlanOptions {
  // Drop nearest-neighbour candidates whose cosine is below this value.
  std::optional<double> min_similarity;
  // Worker threads for per-target work; 0 = hardware concurrency.
  unsigned threads = 1;
};

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) over `threads` workers, striped. Results must be
// written by index so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Source eligibility per target: never the target utterance itself, and never
// a same-speaker source when both labels are known.
class EligibilityIndex {
 public:
  explicit EligibilityIndex(const Scenario& s) : sources_(s.sources) {
    std::map<std::string_view, int> codes;
    source_speaker_.reserve(sources_.size());
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      const auto& r = sources_[i];
      position_.emplace(r.utt_id, i);
      if (r.speaker_id) {
        auto [it, _] = codes.emplace(*r.speaker_id, static_cast<int>(codes.size()));
        source_speaker_.push_back(it->second);
      } else {
        source_speaker_.push_back(-1);
      }
    }
    codes_ = std::move(codes);
  }

  bool eligible(std::size_t source, int target_speaker, std::size_t self) const {
    if (source == self) return false;
    return !(target_speaker >= 0 && source_speaker_[source] == target_speaker);
  }

  // Code of a target's speaker among the source labels (-1 if none share it).
  int speaker_code(const UtteranceRecord& target) const {
    if (!target.speaker_id) return -1;
    auto it = codes_.find(*target.speaker_id);
    return it == codes_.end() ? -1 : it->second;
  }

  // Index of the target within the sources, or npos.
  std::size_t self_index(const UtteranceRecord& target) const {
    auto it = position_.find(target.utt_id);
    return it == position_.end() ? npos : it->second;
  }

  std::size_t size() const noexcept { return sources_.size(); }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  const std::vector<UtteranceRecord>& sources_;
  std::vector<int> source_speaker_;
  std::map<std::string_view, int> codes_;
  std::map<std::string_view, std::size_t> position_;
};

inline void require_labelled_targets(const Scenario& s) {
  for (const auto& t : s.targets) {
    if (!t.speaker_id) throw DataError("target '" + t.utt_id + "' is unlabelled");
  }
}

inline std::string pool_error(const std::string& target, std::size_t pool, std::size_t k) {
  return "eligible pool " + std::to_string(pool) + " < K = " + std::to_string(k) + " for target '" + target + "'";
}

// Plans depend on the content of T and S, not on their order: planners work
// on an id-sorted view, copying only when the input is not already sorted.
inline const Scenario& canonical(const Scenario& s, std::optional<Scenario>& storage) {
  const auto by_id = [](const UtteranceRecord& a, const UtteranceRecord& b) { return a.utt_id < b.utt_id; };
  if (std::is_sorted(s.targets.begin(), s.targets.end(), by_id) &&
      std::is_sorted(s.sources.begin(), s.sources.end(), by_id)) {
    return s;
  }
  storage = s;
  std::sort(storage->targets.begin(), storage->targets.end(), by_id);
  std::sort(storage->sources.begin(), storage->sources.end(), by_id);
  return *storage;
}

}  // namespace detail

/// VCA-RS: per target, K distinct eligible sources drawn uniformly without
/// replacement from a stream seeded by (seed, target utt_id).
inline AugmentationPlan plan_rs(const Scenario& input, std::uint32_t k, std::uint64_t seed,
                                const PlanOptions& opts = {}) {
  std::optional<Scenario> sorted;
  const Scenario& scenario = detail::canonical(input, sorted);
  detail::require_labelled_targets(scenario);
  AugmentationPlan plan;
  plan.strategy = Strategy::kRandom;
  plan.k = k;
  plan.seed = seed;
  if (k == 0) return plan;

  const detail::EligibilityIndex index(scenario);
  std::vector<std::vector<ConversionJob>> per_target(scenario.targets.size());
  detail::parallel_for(scenario.targets.size(), opts.threads, [&](std::size_t ti) {
    const auto& target = scenario.targets[ti];
    const int spk = index.speaker_code(target);
    const std::size_t self = index.self_index(target);
    std::vector<std::uint32_t> pool;
    pool.reserve(index.size());
    for (std::size_t s = 0; s < index.size(); ++s) {
      if (index.eligible(s, spk, self)) pool.push_back(static_cast<std::uint32_t>(s));
    }
    if (pool.size() < k) throw DataError(detail::pool_error(target.utt_id, pool.size(), k));
    Rng rng(seed, target.utt_id);
    const auto picked = rng.sample(std::move(pool), k);
    auto& jobs = per_target[ti];
    for (std::uint32_t kk = 0; kk < k; ++kk) {
      jobs.push_back(make_job(target, scenario.sources[picked[kk]].utt_id, kk));
    }
  });
  for (auto& jobs : per_target) {
    std::move(jobs.begin(), jobs.end(), std::back_inserter(plan.jobs));
  }
  std::sort(plan.jobs.begin(), plan.jobs.end(), [](const auto& a, const auto& b) {
    return a.target_utt != b.target_utt ? a.target_utt < b.target_utt : a.k_index < b.k_index;
  });
  return plan;
}

/// VCA-NN: per target, the K eligible sources with the highest cosine
/// similarity in the space of `phi_store`; k_index follows descending
/// similarity. Deterministic, no seed.
inline AugmentationPlan plan_nn(const Scenario& input, std::uint32_t k, const EmbeddingStore& phi_store,
                                std::string phi_tag = "identity", const PlanOptions& opts = {}) {
  std::optional<Scenario> sorted;
  const Scenario& scenario = detail::canonical(input, sorted);
  detail::require_labelled_targets(scenario);
  AugmentationPlan plan;
  plan.strategy = Strategy::kNearest;
  plan.k = k;
  plan.phi_tag = std::move(phi_tag);

  // Cache spans and norms once; every similarity below uses the same
  // formula as cosine().
  const auto lookup = [&](const UtteranceRecord& r) {
    if (!phi_store.contains(r.utt_id)) throw DataError("missing phi embedding for '" + r.utt_id + "'");
    return phi_store.get(r.utt_id);
  };
  std::vector<std::span<const float>> src_vec;
  std::vector<double> src_norm;
  src_vec.reserve(scenario.sources.size());
  for (const auto& s : scenario.sources) {
    src_vec.push_back(lookup(s));
    src_norm.push_back(l2_norm(src_vec.back()));
  }
  std::vector<std::span<const float>> tgt_vec;
  for (const auto& t : scenario.targets) tgt_vec.push_back(lookup(t));
  if (k == 0) return plan;

  const detail::EligibilityIndex index(scenario);
  std::vector<std::vector<ConversionJob>> per_target(scenario.targets.size());
  detail::parallel_for(scenario.targets.size(), opts.threads, [&](std::size_t ti) {
    const auto& target = scenario.targets[ti];
    const int spk = index.speaker_code(target);
    const std::size_t self = index.self_index(target);
    const auto tv = tgt_vec[ti];
    const double tn = l2_norm(tv);
    if (tn == 0.0) throw DataError("cosine: zero-norm vector for '" + target.utt_id + "'");
    BestK best(k);
    std::size_t eligible = 0;
    for (std::size_t s = 0; s < index.size(); ++s) {
      if (!index.eligible(s, spk, self)) continue;
      if (src_norm[s] == 0.0) {
        throw DataError("cosine: zero-norm vector for '" + scenario.sources[s].utt_id + "'");
      }
      const double sim = detail::cosine_from_parts(dot(tv, src_vec[s]), tn, src_norm[s]);
      if (opts.min_similarity && sim < *opts.min_similarity) continue;
      ++eligible;
      best.offer({sim, scenario.sources[s].utt_id, s});
    }
    if (eligible < k) throw DataError(detail::pool_error(target.utt_id, eligible, k));
    auto ranked = std::move(best).take_sorted();
    auto& jobs = per_target[ti];
    for (std::uint32_t kk = 0; kk < k; ++kk) {
      jobs.push_back(make_job(target, std::string(ranked[kk].id), kk));
    }
  });
  for (auto& jobs : per_target) {
    std::move(jobs.begin(), jobs.end(), std::back_inserter(plan.jobs));
  }
  std::sort(plan.jobs.begin(), plan.jobs.end(), [](const auto& a, const auto& b) {
    return a.target_utt != b.target_utt ? a.target_utt < b.target_utt : a.k_index < b.k_index;
  });
  return plan;
}

/// Checks the structural invariants that hold for any plan: canonical order,
/// k_index 0..K-1 once per target, distinct sources per target, source
/// differs from target, id conventions.
inline void validate_plan(const AugmentationPlan& plan) {
  std::size_t i = 0;
  std::string prev_target;
  bool first = true;
  while (i < plan.jobs.size()) {
    const auto& target = plan.jobs[i].target_utt;
    if (!first && !(prev_target < target)) throw DataError("plan jobs not in canonical (target_utt, k_index) order");
    first = false;
    std::set<std::string_view> sources;
    std::uint32_t expected_k = 0;
    for (; i < plan.jobs.size() && plan.jobs[i].target_utt == target; ++i, ++expected_k) {
      const auto& j = plan.jobs[i];
      if (j.k_index != expected_k) {
        throw DataError("target '" + target + "': k_index " + std::to_string(j.k_index) + " where " +
                        std::to_string(expected_k) + " expected");
      }
      if (j.source_utt == j.target_utt) throw DataError("job '" + j.job_id + "' converts an utterance to itself");
      if (!sources.insert(j.source_utt).second) {
        throw DataError("target '" + target + "' uses source '" + j.source_utt + "' twice");
      }
      if (j.pseudo_utt_id != pseudo_utt_id(j.target_utt, j.k_index)) {
        throw DataError("job '" + j.job_id + "' has non-canonical pseudo_utt_id '" + j.pseudo_utt_id + "'");
      }
    }
    if (expected_k != plan.k) {
      throw DataError("target '" + target + "' has " + std::to_string(expected_k) + " jobs, K = " +
                      std::to_string(plan.k));
    }
    prev_target = target;
  }
}

/// validate_plan plus membership against a scenario: every target has K jobs,
/// targets come from T and sources from S.
inline void validate_plan(const AugmentationPlan& plan, const Scenario& scenario) {
  validate_plan(plan);
  if (plan.jobs.size() != std::size_t{plan.k} * scenario.targets.size()) {
    throw DataError("plan has " + std::to_string(plan.jobs.size()) + " jobs, expected K x |T| = " +
                    std::to_string(std::size_t{plan.k} * scenario.targets.size()));
  }
  std::map<std::string_view, const UtteranceRecord*> targets;
  for (const auto& t : scenario.targets) targets.emplace(t.utt_id, &t);
  std::set<std::string_view> sources;
  for (const auto& s : scenario.sources) sources.insert(s.utt_id);
  for (const auto& j : plan.jobs) {
    auto it = targets.find(j.target_utt);
    if (it == targets.end()) throw DataError("job '" + j.job_id + "': target not in target set");
    if (!sources.contains(j.source_utt)) throw DataError("job '" + j.job_id + "': source not in source set");
    if (j.assigned_speaker != *it->second->speaker_id) {
      throw DataError("job '" + j.job_id + "': assigned speaker differs from the target's label");
    }
  }
}

// ---------------------------------------------------------------------------
// Plan file: JSON Lines. Line 1 is the header object, then one job per line.

inline constexpr std::uint32_t kPlanFormatVersion = 1;

inline nlohmann::ordered_json plan_header_json(const AugmentationPlan& plan) {
  nlohmann::ordered_json h;
  h["strategy"] = to_string(plan.strategy);
  h["K"] = plan.k;
  h["seed"] = plan.seed ? nlohmann::ordered_json(*plan.seed) : nlohmann::ordered_json(nullptr);
  h["phi_tag"] = plan.phi_tag ? nlohmann::ordered_json(*plan.phi_tag) : nlohmann::ordered_json(nullptr);
  h["version"] = kPlanFormatVersion;
  return h;
}

inline nlohmann::ordered_json job_to_json(const ConversionJob& j) {
  nlohmann::ordered_json o;
  o["job_id"] = j.job_id;
  o["target_utt"] = j.target_utt;
  o["source_utt"] = j.source_utt;
  o["assigned_speaker"] = j.assigned_speaker;
  o["k_index"] = j.k_index;
  o["pseudo_utt_id"] = j.pseudo_utt_id;
  return o;
}

inline std::string plan_to_string(const AugmentationPlan& plan) {
  std::string out = plan_header_json(plan).dump() + "\n";
  for (const auto& j : plan.jobs) out += job_to_json(j).dump() + "\n";
  return out;
}

inline void save_plan(const AugmentationPlan& plan, const std::filesystem::path& path) {
  io::write_file_atomic(path, plan_to_string(plan));
}

/// Parses a plan file (also accepts the external-job variant with endpoint
/// audio paths) and validates its structural invariants.
inline AugmentationPlan parse_plan(std::string_view text) {
  AugmentationPlan plan;
  bool have_header = false;
  for_each_json_line(text, [&](std::size_t line_no, const nlohmann::json& j) {
    if (!have_header) {
      have_header = true;
      if (!j.is_object() || !j.contains("strategy") || !j.contains("K")) {
        throw DataError("plan header must be an object with \"strategy\" and \"K\"");
      }
      if (j.contains("version") && j.at("version") != kPlanFormatVersion) {
        throw DataError("unsupported plan version " + j.at("version").dump());
      }
      plan.strategy = parse_strategy(j.at("strategy").get<std::string>());
      plan.k = j.at("K").get<std::uint32_t>();
      if (j.contains("seed") && !j.at("seed").is_null()) plan.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("phi_tag") && !j.at("phi_tag").is_null()) plan.phi_tag = j.at("phi_tag").get<std::string>();
      return;
    }
    (void)line_no;
    ConversionJob job;
    job.job_id = j.at("job_id").get<std::string>();
    job.target_utt = j.at("target_utt").get<std::string>();
    job.source_utt = j.at("source_utt").get<std::string>();
    job.assigned_speaker = j.at("assigned_speaker").get<std::string>();
    job.k_index = j.at("k_index").get<std::uint32_t>();
    job.pseudo_utt_id = j.at("pseudo_utt_id").get<std::string>();
    plan.jobs.push_back(std::move(job));
  });
  if (!have_header) throw DataError("plan file is empty (missing header line)");
  validate_plan(plan);
  return plan;
}

inline AugmentationPlan load_plan(const std::filesystem::path& path) { return parse_plan(io::read_file(path)); }

}  // namespace vca
