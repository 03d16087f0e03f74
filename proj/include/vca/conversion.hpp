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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/io.hpp"
#include "vca/random.hpp"
#include "vca/selection.hpp"

namespace vca {

/// Embedding-space stand-in for a diffusion VC model. Output quality degrades
/// with the source/target mismatch d = (1 - cos) / 2: the pseudo embedding
/// drifts toward the source by lambda_drift * d and picks up isotropic noise of
/// scale sigma_base + lambda_noise * d.
struct SyntheticVCParams {
  double sigma_base = 0.05;
  double lambda_noise = 0.5;
  double lambda_drift = 0.5;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticVCParams& p) {
  if (!std::isfinite(p.sigma_base) || p.sigma_base < 0) throw DataError("sigma_base must be finite and >= 0");
  if (!std::isfinite(p.lambda_noise) || p.lambda_noise < 0) throw DataError("lambda_noise must be finite and >= 0");
  if (!std::isfinite(p.lambda_drift) || p.lambda_drift < 0 || p.lambda_drift > 1) {
    throw DataError("lambda_drift must lie in [0, 1]");
  }
}

struct PseudoUtterance {
  UtteranceRecord record;
  std::vector<double> embedding;  // unit norm
};

inline UtteranceRecord pseudo_record(const ConversionJob& job) {
  UtteranceRecord r;
  r.utt_id = job.pseudo_utt_id;
  r.speaker_id = job.assigned_speaker;
  r.origin = Origin::kPseudo;
  r.source_utt = job.source_utt;
  r.target_utt = job.target_utt;
  r.k_index = job.k_index;
  return r;
}

namespace detail {

inline std::vector<double> unit(std::span<const float> v, std::string_view id) {
  const double n = l2_norm(v);
  if (n == 0.0) throw DataError("zero-norm embedding for '" + std::string(id) + "'");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]) / n;
  return out;
}

}  // namespace detail

inline PseudoUtterance convert_synthetic(const ConversionJob& job, const EmbeddingStore& store,
                                         const SyntheticVCParams& params) {
  if (!store.contains(job.target_utt)) throw DataError("missing embedding for target '" + job.target_utt + "'");
  if (!store.contains(job.source_utt)) throw DataError("missing embedding for source '" + job.source_utt + "'");
  const auto t = detail::unit(store.get(job.target_utt), job.target_utt);
  const auto s = detail::unit(store.get(job.source_utt), job.source_utt);
  const double c = cosine(std::span<const double>(s), std::span<const double>(t));
  const double d = (1.0 - c) / 2.0;
  const double sigma = params.sigma_base + params.lambda_noise * d;
  const double drift = params.lambda_drift * d;

  Rng rng(params.seed, job.job_id);
  const auto g = rng.gaussian_vector(t.size());
  std::vector<double> p(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    p[i] = t[i] + drift * (s[i] - t[i]) + sigma * g[i];
  }
  const double n = l2_norm(std::span<const double>(p));
  if (n == 0.0) throw DataError("synthetic conversion produced a zero vector for '" + job.job_id + "'");
  for (double& x : p) x /= n;
  return {pseudo_record(job), std::move(p)};
}

/// Original records plus pseudo records, with a store covering both.
struct AugmentedCorpus {
  std::vector<UtteranceRecord> records;
  EmbeddingStore store;
};

// ---------------------------------------------------------------------------
// External VC exchange

/// Writes the plan in the plan-file format with each job extended by the
/// audio paths of its endpoints (null when unknown).
inline std::string external_jobs_to_string(const AugmentationPlan& plan,
                                           std::span<const UtteranceRecord> known_records) {
  std::map<std::string_view, const UtteranceRecord*> by_id;
  for (const auto& r : known_records) by_id.emplace(r.utt_id, &r);
  const auto audio = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end() || !it->second->audio_path) return nlohmann::ordered_json(nullptr);
    return nlohmann::ordered_json(*it->second->audio_path);
  };
  std::string out = plan_header_json(plan).dump() + "\n";
  for (const auto& job : plan.jobs) {
    auto j = job_to_json(job);
    j["target_audio_path"] = audio(job.target_utt);
    j["source_audio_path"] = audio(job.source_utt);
    out += j.dump() + "\n";
  }
  return out;
}

inline void emit_external_jobs(const AugmentationPlan& plan, std::span<const UtteranceRecord> known_records,
                               const std::filesystem::path& manifest_out) {
  validate_plan(plan);
  io::write_file_atomic(manifest_out, external_jobs_to_string(plan, known_records));
}

struct IngestResult {
  std::vector<UtteranceRecord> pseudo_records;
  EmbeddingStore store;                      // base plus ingested pseudo embeddings
  std::vector<std::string> failed_jobs;      // pseudo ids reported with a non-"ok" status
};

/// Merges an external VC run back in. The result manifest uses the manifest
/// schema plus an optional "status" key; lines whose status is not "ok" are
/// reported in failed_jobs and not merged.
inline IngestResult ingest_external_results(std::string_view result_manifest_text, const EmbeddingStore& result_store,
                                            const EmbeddingStore& base, const AugmentationPlan& plan) {
  if (result_store.dim() != base.dim()) {
    throw DataError("result store dim " + std::to_string(result_store.dim()) + " does not match base dim " +
                    std::to_string(base.dim()));
  }
  std::map<std::string_view, const ConversionJob*> jobs;
  for (const auto& j : plan.jobs) jobs.emplace(j.pseudo_utt_id, &j);

  IngestResult out;
  out.store = base;
  std::set<std::string> listed;
  static constexpr std::string_view kExtra[] = {"status"};
  for_each_json_line(result_manifest_text, [&](std::size_t, const nlohmann::json& j) {
    auto r = record_from_json(j, kExtra);
    if (!listed.insert(r.utt_id).second) throw DataError("duplicate result for '" + r.utt_id + "'");
    auto it = jobs.find(r.utt_id);
    if (it == jobs.end()) throw DataError("unknown pseudo id '" + r.utt_id + "' (not in the emitted plan)");
    const auto& job = *it->second;
    if (j.contains("status") && j.at("status") != "ok") {
      out.failed_jobs.push_back(r.utt_id);
      return;
    }
    if (r.origin != Origin::kPseudo || r.source_utt != job.source_utt || r.target_utt != job.target_utt ||
        r.k_index != job.k_index) {
      throw DataError("result '" + r.utt_id + "' provenance does not match its job");
    }
    if (r.speaker_id != job.assigned_speaker) {
      throw DataError("result '" + r.utt_id + "' speaker_id does not match the assigned speaker");
    }
    if (!result_store.contains(r.utt_id)) throw DataError("missing embedding for result '" + r.utt_id + "'");
    out.store.insert(r.utt_id, result_store.get(r.utt_id));
    out.pseudo_records.push_back(std::move(r));
  });
  for (const auto& [id, _] : result_store.entries()) {
    if (!listed.contains(id)) throw DataError("result store has an embedding for unlisted id '" + id + "'");
  }
  return out;
}

inline IngestResult ingest_external_results(const std::filesystem::path& result_manifest,
                                            const std::filesystem::path& result_store, const EmbeddingStore& base,
                                            const AugmentationPlan& plan) {
  return ingest_external_results(io::read_file(result_manifest), load_store(result_store), base, plan);
}

// ---------------------------------------------------------------------------
// Plan execution

/// Results of a finished external run.
struct ExternalBackend {
  std::filesystem::path result_manifest;
  std::filesystem::path result_store;
};

using Backend = std::variant<SyntheticVCParams, ExternalBackend>;

/// Executes `plan` and appends one pseudo record per job (labelled with the
/// target's speaker) to `records`.
inline AugmentedCorpus apply_plan(const AugmentationPlan& plan, std::span<const UtteranceRecord> records,
                                  const EmbeddingStore& store, const Backend& backend, unsigned threads = 1) {
  validate_plan(plan);
  AugmentedCorpus out;
  out.records.assign(records.begin(), records.end());
  if (const auto* params = std::get_if<SyntheticVCParams>(&backend)) {
    validate(*params);
    out.store = store;
    std::vector<PseudoUtterance> made(plan.jobs.size());
    detail::parallel_for(plan.jobs.size(), threads,
                         [&](std::size_t i) { made[i] = convert_synthetic(plan.jobs[i], store, *params); });
    for (auto& p : made) {
      out.store.insert(p.record.utt_id, p.embedding);
      out.records.push_back(std::move(p.record));
    }
  } else {
    const auto& ext = std::get<ExternalBackend>(backend);
    auto ingested = ingest_external_results(ext.result_manifest, ext.result_store, store, plan);
    out.store = std::move(ingested.store);
    for (auto& r : ingested.pseudo_records) out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace vca
