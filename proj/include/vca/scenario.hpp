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
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/io.hpp"
#include "vca/random.hpp"

namespace vca {

enum class ScenarioKind { kSemi, kSmall, kImbalanced };

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kSemi: return "semi";
    case ScenarioKind::kSmall: return "small";
    case ScenarioKind::kImbalanced: return "imbalanced";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(std::string_view s) {
  if (s == "semi") return ScenarioKind::kSemi;
  if (s == "small") return ScenarioKind::kSmall;
  if (s == "imbalanced" || s == "imb") return ScenarioKind::kImbalanced;
  throw DataError("unknown scenario kind '" + std::string(s) + "' (expected semi|small|imbalanced)");
}

/// Construction parameters. For imbalanced scenarios the "labelled" fields
/// describe the majority part (the source set).
struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kSemi;
  std::uint32_t n_labelled_speakers = 0;
  std::uint32_t utts_per_labelled_speaker = 0;
  std::optional<std::uint32_t> n_unlabelled_utts;          // semi only
  std::optional<std::uint32_t> n_minority_speakers;        // imbalanced only
  std::optional<std::uint32_t> utts_per_minority_speaker;  // imbalanced only
  std::uint64_t seed = 0;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

inline void validate(const ScenarioConfig& cfg) {
  if (cfg.n_labelled_speakers == 0) throw DataError("n_labelled_speakers must be positive");
  if (cfg.utts_per_labelled_speaker == 0) throw DataError("utts_per_labelled_speaker must be positive");
  switch (cfg.kind) {
    case ScenarioKind::kSemi:
      if (!cfg.n_unlabelled_utts) throw DataError("semi scenario requires n_unlabelled_utts");
      break;
    case ScenarioKind::kSmall:
      break;
    case ScenarioKind::kImbalanced:
      if (!cfg.n_minority_speakers || *cfg.n_minority_speakers == 0) {
        throw DataError("imbalanced scenario requires a positive n_minority_speakers");
      }
      if (!cfg.utts_per_minority_speaker || *cfg.utts_per_minority_speaker == 0) {
        throw DataError("imbalanced scenario requires a positive utts_per_minority_speaker");
      }
      break;
  }
}

inline nlohmann::ordered_json to_json(const ScenarioConfig& cfg) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(cfg.kind);
  j["n_labelled_speakers"] = cfg.n_labelled_speakers;
  j["utts_per_labelled_speaker"] = cfg.utts_per_labelled_speaker;
  if (cfg.n_unlabelled_utts) j["n_unlabelled_utts"] = *cfg.n_unlabelled_utts;
  if (cfg.n_minority_speakers) j["n_minority_speakers"] = *cfg.n_minority_speakers;
  if (cfg.utts_per_minority_speaker) j["utts_per_minority_speaker"] = *cfg.utts_per_minority_speaker;
  j["seed"] = cfg.seed;
  return j;
}

/// Reads a config object. `kind` and `seed` may be supplied by the caller
/// (CLI flags) and override what the document says.
inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  try {
    ScenarioConfig cfg;
    if (j.contains("kind")) cfg.kind = parse_scenario_kind(j.at("kind").get<std::string>());
    cfg.n_labelled_speakers = j.at("n_labelled_speakers").get<std::uint32_t>();
    cfg.utts_per_labelled_speaker = j.at("utts_per_labelled_speaker").get<std::uint32_t>();
    if (j.contains("n_unlabelled_utts")) cfg.n_unlabelled_utts = j.at("n_unlabelled_utts").get<std::uint32_t>();
    if (j.contains("n_minority_speakers")) {
      cfg.n_minority_speakers = j.at("n_minority_speakers").get<std::uint32_t>();
    }
    if (j.contains("utts_per_minority_speaker")) {
      cfg.utts_per_minority_speaker = j.at("utts_per_minority_speaker").get<std::uint32_t>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid scenario config: ") + e.what());
  }
}

/// A corpus partitioned into a target set and a source set. Held-out labels
/// of stripped sources are deliberately not part of this type; see
/// BuiltScenario.
struct Scenario {
  ScenarioConfig config;
  std::vector<UtteranceRecord> targets;  // labelled, ascending utt_id
  std::vector<UtteranceRecord> sources;  // ascending utt_id

  ScenarioKind kind() const noexcept { return config.kind; }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Builder output: the scenario plus the true labels of stripped sources.
/// Only evaluation and test code should touch `held_out_truth`.
struct BuiltScenario {
  Scenario scenario;
  std::map<std::string, std::string> held_out_truth;

  friend bool operator==(const BuiltScenario&, const BuiltScenario&) = default;
};

/// The labelled records a scenario offers for classification training:
/// targets (semi, small) or majority plus minority (imbalanced).
inline std::vector<UtteranceRecord> labelled_training_set(const Scenario& s) {
  std::vector<UtteranceRecord> out = s.targets;
  if (s.kind() == ScenarioKind::kImbalanced) {
    out.insert(out.end(), s.sources.begin(), s.sources.end());
    std::sort(out.begin(), out.end(),
              [](const UtteranceRecord& a, const UtteranceRecord& b) { return a.utt_id < b.utt_id; });
  }
  return out;
}

namespace detail {

using SpeakerIndex = std::map<std::string, std::vector<const UtteranceRecord*>>;

inline SpeakerIndex index_by_speaker(const std::vector<UtteranceRecord>& corpus, const EmbeddingStore& store) {
  SpeakerIndex index;
  std::set<std::string_view> seen;
  for (const auto& r : corpus) {
    if (!r.speaker_id) throw DataError("corpus record '" + r.utt_id + "' is unlabelled");
    if (!seen.insert(r.utt_id).second) throw DataError("duplicate utt_id '" + r.utt_id + "' in corpus");
    if (!store.contains(r.utt_id)) throw DataError("corpus record '" + r.utt_id + "' has no embedding");
    index[*r.speaker_id].push_back(&r);
  }
  for (auto& [_, utts] : index) {
    std::sort(utts.begin(), utts.end(), [](auto* a, auto* b) { return a->utt_id < b->utt_id; });
  }
  return index;
}

inline std::vector<std::string> speakers_with_at_least(const SpeakerIndex& index, std::size_t min_utts,
                                                       const std::set<std::string>& exclude = {}) {
  std::vector<std::string> out;
  for (const auto& [spk, utts] : index) {
    if (utts.size() >= min_utts && !exclude.contains(spk)) out.push_back(spk);
  }
  return out;
}

inline std::vector<std::string> pick_speakers(const std::vector<std::string>& eligible, std::size_t n,
                                              std::size_t min_utts, std::uint64_t seed, std::string_view tag) {
  if (eligible.size() < n) {
    throw DataError("insufficient speakers for " + std::string(tag) + ": need " + std::to_string(n) +
                    " with >= " + std::to_string(min_utts) + " utterances, corpus has " +
                    std::to_string(eligible.size()) + " (shortfall " + std::to_string(n - eligible.size()) + ")");
  }
  Rng rng(seed, tag);
  auto picked = rng.sample(eligible, n);
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline void pick_utterances(const SpeakerIndex& index, const std::vector<std::string>& speakers,
                            std::size_t per_speaker, std::uint64_t seed, std::string_view tag,
                            std::vector<UtteranceRecord>& out) {
  const std::uint64_t utt_seed = derive_seed(seed, tag);
  for (const auto& spk : speakers) {
    Rng rng(utt_seed, spk);
    for (const auto* r : rng.sample(index.at(spk), per_speaker)) out.push_back(*r);
  }
}

inline void sort_by_id(std::vector<UtteranceRecord>& v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.utt_id < b.utt_id; });
}

}  // namespace detail

/// Semi-supervised: a labelled target set plus an unlabelled source pool
/// drawn from speakers outside the labelled set.
inline BuiltScenario build_semi(const std::vector<UtteranceRecord>& corpus, const EmbeddingStore& store,
                                ScenarioConfig cfg) {
  cfg.kind = ScenarioKind::kSemi;
  validate(cfg);
  const auto index = detail::index_by_speaker(corpus, store);
  const auto labelled = detail::pick_speakers(detail::speakers_with_at_least(index, cfg.utts_per_labelled_speaker),
                                              cfg.n_labelled_speakers, cfg.utts_per_labelled_speaker, cfg.seed,
                                              "semi/labelled-speakers");
  BuiltScenario out;
  out.scenario.config = cfg;
  detail::pick_utterances(index, labelled, cfg.utts_per_labelled_speaker, cfg.seed, "semi/labelled-utts",
                          out.scenario.targets);

  const std::set<std::string> labelled_set(labelled.begin(), labelled.end());
  std::vector<const UtteranceRecord*> pool;
  for (const auto& [spk, utts] : index) {
    if (!labelled_set.contains(spk)) pool.insert(pool.end(), utts.begin(), utts.end());
  }
  std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->utt_id < b->utt_id; });
  if (pool.size() < *cfg.n_unlabelled_utts) {
    throw DataError("insufficient unlabelled utterances: need " + std::to_string(*cfg.n_unlabelled_utts) +
                    " from speakers outside the labelled set, corpus has " + std::to_string(pool.size()) +
                    " (shortfall " + std::to_string(*cfg.n_unlabelled_utts - pool.size()) + ")");
  }
  Rng rng(cfg.seed, "semi/unlabelled-utts");
  for (const auto* r : rng.sample(pool, *cfg.n_unlabelled_utts)) {
    UtteranceRecord stripped = *r;
    out.held_out_truth.emplace(stripped.utt_id, *stripped.speaker_id);
    stripped.speaker_id.reset();
    out.scenario.sources.push_back(std::move(stripped));
  }
  detail::sort_by_id(out.scenario.targets);
  detail::sort_by_id(out.scenario.sources);
  return out;
}

/// Small-scale: one labelled set acts as both targets and sources.
inline BuiltScenario build_small(const std::vector<UtteranceRecord>& corpus, const EmbeddingStore& store,
                                 ScenarioConfig cfg) {
  cfg.kind = ScenarioKind::kSmall;
  validate(cfg);
  const auto index = detail::index_by_speaker(corpus, store);
  const auto speakers = detail::pick_speakers(detail::speakers_with_at_least(index, cfg.utts_per_labelled_speaker),
                                              cfg.n_labelled_speakers, cfg.utts_per_labelled_speaker, cfg.seed,
                                              "small/speakers");
  BuiltScenario out;
  out.scenario.config = cfg;
  detail::pick_utterances(index, speakers, cfg.utts_per_labelled_speaker, cfg.seed, "small/utts",
                          out.scenario.targets);
  detail::sort_by_id(out.scenario.targets);
  out.scenario.sources = out.scenario.targets;
  return out;
}

/// Imbalanced: majority speakers become sources, a disjoint set of minority
/// speakers become targets.
inline BuiltScenario build_imbalanced(const std::vector<UtteranceRecord>& corpus, const EmbeddingStore& store,
                                      ScenarioConfig cfg) {
  cfg.kind = ScenarioKind::kImbalanced;
  validate(cfg);
  const auto index = detail::index_by_speaker(corpus, store);
  const auto majority = detail::pick_speakers(detail::speakers_with_at_least(index, cfg.utts_per_labelled_speaker),
                                              cfg.n_labelled_speakers, cfg.utts_per_labelled_speaker, cfg.seed,
                                              "imbalanced/majority-speakers");
  const std::set<std::string> majority_set(majority.begin(), majority.end());
  const auto minority = detail::pick_speakers(
      detail::speakers_with_at_least(index, *cfg.utts_per_minority_speaker, majority_set), *cfg.n_minority_speakers,
      *cfg.utts_per_minority_speaker, cfg.seed, "imbalanced/minority-speakers");
  BuiltScenario out;
  out.scenario.config = cfg;
  detail::pick_utterances(index, majority, cfg.utts_per_labelled_speaker, cfg.seed, "imbalanced/majority-utts",
                          out.scenario.sources);
  detail::pick_utterances(index, minority, *cfg.utts_per_minority_speaker, cfg.seed, "imbalanced/minority-utts",
                          out.scenario.targets);
  detail::sort_by_id(out.scenario.targets);
  detail::sort_by_id(out.scenario.sources);
  return out;
}

inline BuiltScenario build_scenario(const std::vector<UtteranceRecord>& corpus, const EmbeddingStore& store,
                                    const ScenarioConfig& cfg) {
  switch (cfg.kind) {
    case ScenarioKind::kSemi: return build_semi(corpus, store, cfg);
    case ScenarioKind::kSmall: return build_small(corpus, store, cfg);
    case ScenarioKind::kImbalanced: return build_imbalanced(corpus, store, cfg);
  }
  throw DataError("unknown scenario kind");
}

// Directory layout: scenario.json, targets.jsonl, sources.jsonl, truth.jsonl.
inline constexpr std::uint32_t kScenarioFormatVersion = 1;

inline std::string scenario_header(const ScenarioConfig& cfg) {
  nlohmann::ordered_json j;
  j["version"] = kScenarioFormatVersion;
  j["kind"] = to_string(cfg.kind);
  j["config"] = to_json(cfg);
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

inline std::string truth_to_string(const std::map<std::string, std::string>& truth) {
  std::string out;
  for (const auto& [utt, spk] : truth) {
    nlohmann::ordered_json j;
    j["utt_id"] = utt;
    j["speaker_id"] = spk;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void save_scenario(const BuiltScenario& built, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create scenario directory " + dir.string());
  io::write_file_atomic(dir / "targets.jsonl", manifest_to_string(built.scenario.targets));
  io::write_file_atomic(dir / "sources.jsonl", manifest_to_string(built.scenario.sources));
  io::write_file_atomic(dir / "truth.jsonl", truth_to_string(built.held_out_truth));
  // Header last: a directory without scenario.json is not a scenario.
  io::write_file_atomic(dir / "scenario.json", scenario_header(built.scenario.config));
}

/// Loads targets, sources and configuration; truth.jsonl is not read.
inline Scenario load_scenario(const std::filesystem::path& dir) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_file(dir / "scenario.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("scenario.json: " + std::string(e.what()));
  }
  if (!header.contains("version") || header.at("version") != kScenarioFormatVersion) {
    throw DataError("scenario.json: unsupported or missing version");
  }
  Scenario s;
  s.config = scenario_config_from_json(header.at("config"));
  s.config.kind = parse_scenario_kind(header.at("kind").get<std::string>());
  s.targets = load_manifest(dir / "targets.jsonl");
  s.sources = load_manifest(dir / "sources.jsonl");
  return s;
}

inline std::map<std::string, std::string> load_truth(const std::filesystem::path& dir) {
  std::map<std::string, std::string> truth;
  for_each_json_line(io::read_file(dir / "truth.jsonl"), [&](std::size_t, const nlohmann::json& j) {
    truth.emplace(j.at("utt_id").get<std::string>(), j.at("speaker_id").get<std::string>());
  });
  return truth;
}

}  // namespace vca
