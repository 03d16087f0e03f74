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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/conversion.hpp"
#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/metrics.hpp"
#include "vca/random.hpp"
#include "vca/scenario.hpp"
#include "vca/selection.hpp"
#include "vca/trainer.hpp"

namespace vca::sim {

/// Synthetic speaker universe. Speaker identities are random unit vectors,
/// isotropic inside a random speaker subspace of rank speaker_rank; an
/// utterance is normalize(v_spk + sigma_within * g) with g standard normal in
/// all dim components. Directions outside the speaker subspace carry only
/// within-speaker noise, which is what a trained transform can learn to damp.
struct UniverseConfig {
  std::uint32_t n_train_speakers = 60;
  std::uint32_t n_eval_speakers = 40;
  std::uint32_t dim = 32;
  double sigma_within = 0.3;
  std::uint32_t utts_per_train_speaker = 20;
  std::uint32_t utts_per_eval_speaker = 12;
  std::uint32_t speaker_rank = 8;  // 0 = full space
  std::uint64_t master_seed = 0;
};

inline void validate(const UniverseConfig& c) {
  if (c.n_train_speakers == 0 || c.n_eval_speakers < 2 || c.dim == 0 || c.utts_per_train_speaker == 0 ||
      c.utts_per_eval_speaker < 2) {
    throw DataError("universe config: counts must be positive (>= 2 eval speakers and eval utterances)");
  }
  if (!std::isfinite(c.sigma_within) || c.sigma_within < 0) throw DataError("universe config: sigma_within must be >= 0");
  if (c.speaker_rank > c.dim) throw DataError("universe config: speaker_rank exceeds dim");
}

struct Universe {
  std::vector<UtteranceRecord> corpus;  // training speakers only, labelled
  std::vector<UtteranceRecord> eval_records;
  EmbeddingStore store;                 // training and evaluation utterances
  std::vector<Trial> trials;            // evaluation speakers only
};

namespace detail {

inline std::string speaker_name(std::string_view prefix, std::uint32_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*s%05u", static_cast<int>(prefix.size()), prefix.data(), i);
  return buf;
}

inline std::string utt_name(const std::string& spk, std::uint32_t j) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "-u%03u", j);
  return spk + buf;
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = l2_norm(std::span<const double>(v));
  for (double& x : v) x /= n;
  return v;
}

// Gram-Schmidt over Gaussian draws.
inline std::vector<std::vector<double>> random_orthonormal_basis(std::uint32_t dim, std::uint32_t rank,
                                                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> basis;
  while (basis.size() < rank) {
    auto v = rng.gaussian_vector(dim);
    for (const auto& b : basis) {
      const double p = dot(std::span<const double>(v), std::span<const double>(b));
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= p * b[k];
    }
    if (l2_norm(std::span<const double>(v)) < 1e-6) continue;
    basis.push_back(normalized(std::move(v)));
  }
  return basis;
}

}  // namespace detail

/// Builds the corpus, store and evaluation trials. Every target pair of an
/// evaluation speaker is listed, plus as many seeded cross-speaker pairs.
inline Universe generate_universe(const UniverseConfig& cfg) {
  validate(cfg);
  Universe u;
  u.store = EmbeddingStore(cfg.dim);
  Rng speakers_rng(cfg.master_seed, "universe/speakers");
  Rng utts_rng(cfg.master_seed, "universe/utterances");

  const auto speaker_basis =
      cfg.speaker_rank == 0 ? std::vector<std::vector<double>>{}
                            : detail::random_orthonormal_basis(cfg.dim, cfg.speaker_rank,
                                                               derive_seed(cfg.master_seed, "universe/speaker-basis"));
  const auto draw_identity = [&] {
    if (speaker_basis.empty()) return detail::normalized(speakers_rng.gaussian_vector(cfg.dim));
    std::vector<double> v(cfg.dim, 0.0);
    for (const auto& axis : speaker_basis) {
      const double w = speakers_rng.gaussian();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += w * axis[k];
    }
    return detail::normalized(std::move(v));
  };
  const auto make_speaker = [&](const std::string& spk, std::uint32_t n_utts, std::vector<UtteranceRecord>& out) {
    const auto identity = draw_identity();
    for (std::uint32_t j = 0; j < n_utts; ++j) {
      std::vector<double> x(identity);
      for (double& v : x) v += cfg.sigma_within * utts_rng.gaussian();
      UtteranceRecord r;
      r.utt_id = detail::utt_name(spk, j);
      r.speaker_id = spk;
      u.store.insert(r.utt_id, detail::normalized(std::move(x)));
      out.push_back(std::move(r));
    }
  };
  for (std::uint32_t i = 0; i < cfg.n_train_speakers; ++i) {
    make_speaker(detail::speaker_name("tr", i), cfg.utts_per_train_speaker, u.corpus);
  }
  for (std::uint32_t i = 0; i < cfg.n_eval_speakers; ++i) {
    make_speaker(detail::speaker_name("ev", i), cfg.utts_per_eval_speaker, u.eval_records);
  }

  Rng trial_rng(cfg.master_seed, "universe/trials");
  const std::uint32_t per = cfg.utts_per_eval_speaker;
  for (std::uint32_t s = 0; s < cfg.n_eval_speakers; ++s) {
    const auto spk = detail::speaker_name("ev", s);
    for (std::uint32_t a = 0; a < per; ++a) {
      for (std::uint32_t b = a + 1; b < per; ++b) {
        u.trials.push_back({1, detail::utt_name(spk, a), detail::utt_name(spk, b)});
        auto other = static_cast<std::uint32_t>(trial_rng.below(cfg.n_eval_speakers - 1));
        if (other >= s) ++other;
        const auto ua = static_cast<std::uint32_t>(trial_rng.below(per));
        const auto ub = static_cast<std::uint32_t>(trial_rng.below(per));
        u.trials.push_back({0, detail::utt_name(spk, ua), detail::utt_name(detail::speaker_name("ev", other), ub)});
      }
    }
  }
  return u;
}

/// One arm of the experiment: baseline (no augmentation) or a selection
/// strategy at a given K.
enum class Arm { kBaseline, kRandom, kNearest };

inline std::string_view to_string(Arm a) {
  switch (a) {
    case Arm::kBaseline: return "baseline";
    case Arm::kRandom: return "rs";
    case Arm::kNearest: return "nn";
  }
  return "?";
}

inline Arm parse_arm(std::string_view s) {
  if (s == "baseline") return Arm::kBaseline;
  if (s == "rs") return Arm::kRandom;
  if (s == "nn") return Arm::kNearest;
  throw DataError("unknown arm '" + std::string(s) + "' (expected baseline|rs|nn)");
}

struct ExperimentConfig {
  UniverseConfig universe;
  ScenarioConfig scenario;
  std::vector<Arm> arms = {Arm::kBaseline, Arm::kRandom, Arm::kNearest};
  std::vector<std::uint32_t> k_values = {9};
  std::uint32_t n_seeds = 10;
  std::uint64_t seed = 0;
  TrainConfig train;
  TrainConfig phi_train;
  PhiMode phi = PhiMode::kTrained;
  SyntheticVCParams vc;
  DcfParams dcf;
  unsigned threads = 1;
};

struct ArmResult {
  std::uint32_t seed_index = 0;
  Arm arm = Arm::kBaseline;
  std::uint32_t k = 0;
  std::size_t train_size = 0;
  double eer = 0.0;
  double min_dcf = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ArmResult> results;  // ordered by (seed, arm, k)

  /// Mean over seeds for one (arm, K) cell.
  struct Cell {
    double eer = 0.0;
    double min_dcf = 0.0;
    std::size_t n = 0;
  };
  Cell mean(Arm arm, std::uint32_t k) const {
    Cell c;
    for (const auto& r : results) {
      if (r.arm == arm && r.k == k) {
        c.eer += r.eer;
        c.min_dcf += r.min_dcf;
        ++c.n;
      }
    }
    if (c.n) {
      c.eer /= static_cast<double>(c.n);
      c.min_dcf /= static_cast<double>(c.n);
    }
    return c;
  }
  const ArmResult& at(std::uint32_t seed_index, Arm arm, std::uint32_t k) const {
    for (const auto& r : results) {
      if (r.seed_index == seed_index && r.arm == arm && r.k == k) return r;
    }
    throw DataError("no result for the requested cell");
  }
};

/// Everything one seed needs, shared by all arms of that seed.
struct SeedContext {
  Universe universe;
  BuiltScenario scenario;
  std::vector<UtteranceRecord> labelled;
  std::vector<int> labels;
};

inline SeedContext prepare_seed(const ExperimentConfig& cfg, std::uint32_t seed_index) {
  const std::uint64_t seed = derive_seed(cfg.seed, seed_index);
  SeedContext ctx;
  UniverseConfig ucfg = cfg.universe;
  ucfg.master_seed = derive_seed(seed, "universe");
  ctx.universe = generate_universe(ucfg);
  ScenarioConfig scfg = cfg.scenario;
  scfg.seed = derive_seed(seed, "scenario");
  ctx.scenario = build_scenario(ctx.universe.corpus, ctx.universe.store, scfg);
  ctx.labelled = labelled_training_set(ctx.scenario.scenario);
  ctx.labels = trial_labels(ctx.universe.trials);
  return ctx;
}

/// Trains the evaluation model on `records` and scores the fixed trial list.
inline ArmResult evaluate_training_set(const ExperimentConfig& cfg, const SeedContext& ctx,
                                       std::span<const UtteranceRecord> records, const EmbeddingStore& store,
                                       std::uint64_t seed) {
  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(seed, "eval-model");
  const auto model = train(records, store, tcfg);
  const auto scores = score_trials(ctx.universe.trials, model, store);
  ArmResult r;
  r.train_size = records.size();
  r.eer = eer(scores, ctx.labels).eer;
  r.min_dcf = min_dcf(scores, ctx.labels, cfg.dcf);
  return r;
}

/// Builds the plan for one augmented arm.
inline AugmentationPlan plan_arm(const ExperimentConfig& cfg, const SeedContext& ctx, Arm arm, std::uint32_t k,
                                 std::uint64_t seed) {
  const auto& scenario = ctx.scenario.scenario;
  PlanOptions opts;
  opts.threads = cfg.threads;
  if (arm == Arm::kRandom) return plan_rs(scenario, k, derive_seed(seed, "plan-rs"), opts);
  TrainConfig pcfg = cfg.phi_train;
  pcfg.seed = derive_seed(seed, "phi");
  const auto phi = train_phi(scenario, ctx.universe.store, pcfg, cfg.phi);
  std::vector<UtteranceRecord> both = scenario.targets;
  both.insert(both.end(), scenario.sources.begin(), scenario.sources.end());
  const auto phi_store = embed_store(phi, ctx.universe.store, both);
  return plan_nn(scenario, k, phi_store, cfg.phi == PhiMode::kTrained ? "trained" : "identity", opts);
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.n_seeds == 0) throw DataError("n_seeds must be positive");
  if (cfg.arms.empty()) throw DataError("at least one arm is required");
  ExperimentReport report;
  report.config = cfg;
  for (std::uint32_t si = 0; si < cfg.n_seeds; ++si) {
    const std::uint64_t seed = derive_seed(cfg.seed, si);
    const auto ctx = prepare_seed(cfg, si);
    const auto& scenario = ctx.scenario.scenario;
    std::optional<ArmResult> baseline;
    const auto get_baseline = [&] {
      if (!baseline) baseline = evaluate_training_set(cfg, ctx, ctx.labelled, ctx.universe.store, seed);
      return *baseline;
    };
    for (Arm arm : cfg.arms) {
      if (arm == Arm::kBaseline) {
        ArmResult r = get_baseline();
        r.seed_index = si;
        r.arm = arm;
        r.k = 0;
        report.results.push_back(r);
        continue;
      }
      for (std::uint32_t k : cfg.k_values) {
        ArmResult r;
        if (k == 0) {
          r = get_baseline();
        } else {
          const auto plan = plan_arm(cfg, ctx, arm, k, seed);
          SyntheticVCParams vc = cfg.vc;
          vc.seed = derive_seed(seed, "vc");
          const auto augmented = apply_plan(plan, ctx.labelled, ctx.universe.store, vc, cfg.threads);
          const std::size_t expected = ctx.labelled.size() + std::size_t{k} * scenario.targets.size();
          if (augmented.records.size() != expected) {
            throw DataError("pipeline integrity: augmented training set has " +
                            std::to_string(augmented.records.size()) + " records, expected " +
                            std::to_string(expected));
          }
          r = evaluate_training_set(cfg, ctx, augmented.records, augmented.store, seed);
        }
        r.seed_index = si;
        r.arm = arm;
        r.k = k;
        report.results.push_back(r);
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Config and report documents

namespace detail {

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  read_if(j, "epochs", base.epochs);
  read_if(j, "batch", base.batch);
  read_if(j, "lr", base.lr);
  read_if(j, "seed", base.seed);
  validate(base);
  return base;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  return j;
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) { return detail::train_config_from_json(j); }

inline constexpr std::uint32_t kConfigVersion = 1;

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::read_if;
  try {
    ExperimentConfig c;
    if (j.contains("version") && j.at("version") != kConfigVersion) {
      throw DataError("unsupported experiment config version " + j.at("version").dump());
    }
    if (j.contains("universe")) {
      const auto& u = j.at("universe");
      read_if(u, "n_train_speakers", c.universe.n_train_speakers);
      read_if(u, "n_eval_speakers", c.universe.n_eval_speakers);
      read_if(u, "dim", c.universe.dim);
      read_if(u, "sigma_within", c.universe.sigma_within);
      read_if(u, "utts_per_train_speaker", c.universe.utts_per_train_speaker);
      read_if(u, "utts_per_eval_speaker", c.universe.utts_per_eval_speaker);
      read_if(u, "speaker_rank", c.universe.speaker_rank);
    }
    c.scenario = scenario_config_from_json(j.at("scenario"));
    validate(c.scenario);
    if (j.contains("arms")) {
      c.arms.clear();
      for (const auto& a : j.at("arms")) c.arms.push_back(parse_arm(a.get<std::string>()));
    }
    read_if(j, "k_values", c.k_values);
    read_if(j, "n_seeds", c.n_seeds);
    read_if(j, "seed", c.seed);
    if (j.contains("train")) c.train = detail::train_config_from_json(j.at("train"));
    c.phi_train = c.train;
    if (j.contains("phi_train")) c.phi_train = detail::train_config_from_json(j.at("phi_train"), c.train);
    if (j.contains("phi")) {
      const auto phi = j.at("phi").get<std::string>();
      if (phi == "trained") {
        c.phi = PhiMode::kTrained;
      } else if (phi == "identity") {
        c.phi = PhiMode::kIdentity;
      } else {
        throw DataError("phi must be \"trained\" or \"identity\"");
      }
    }
    if (j.contains("vc")) {
      const auto& v = j.at("vc");
      read_if(v, "sigma_base", c.vc.sigma_base);
      read_if(v, "lambda_noise", c.vc.lambda_noise);
      read_if(v, "lambda_drift", c.vc.lambda_drift);
      validate(c.vc);
    }
    if (j.contains("dcf")) {
      const auto& d = j.at("dcf");
      read_if(d, "p_target", c.dcf.p_target);
      read_if(d, "c_miss", c.dcf.c_miss);
      read_if(d, "c_fa", c.dcf.c_fa);
      validate(c.dcf);
    }
    validate(c.universe);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid experiment config: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["version"] = kConfigVersion;
  auto& u = j["universe"];
  u["n_train_speakers"] = c.universe.n_train_speakers;
  u["n_eval_speakers"] = c.universe.n_eval_speakers;
  u["dim"] = c.universe.dim;
  u["sigma_within"] = c.universe.sigma_within;
  u["utts_per_train_speaker"] = c.universe.utts_per_train_speaker;
  u["utts_per_eval_speaker"] = c.universe.utts_per_eval_speaker;
  u["speaker_rank"] = c.universe.speaker_rank;
  j["scenario"] = vca::to_json(c.scenario);
  j["scenario"].erase("seed");
  auto arms = nlohmann::ordered_json::array();
  for (Arm a : c.arms) arms.push_back(to_string(a));
  j["arms"] = arms;
  j["k_values"] = c.k_values;
  j["n_seeds"] = c.n_seeds;
  j["seed"] = c.seed;
  j["train"] = detail::to_json(c.train);
  j["phi_train"] = detail::to_json(c.phi_train);
  j["phi"] = c.phi == PhiMode::kTrained ? "trained" : "identity";
  j["vc"] = {{"sigma_base", c.vc.sigma_base}, {"lambda_noise", c.vc.lambda_noise}, {"lambda_drift", c.vc.lambda_drift}};
  j["dcf"] = {{"p_target", c.dcf.p_target}, {"c_miss", c.dcf.c_miss}, {"c_fa", c.dcf.c_fa}};
  return j;
}

inline constexpr std::uint32_t kReportVersion = 1;

/// Distinct (arm, K) cells in first-appearance order.
inline std::vector<std::pair<Arm, std::uint32_t>> report_cells(const ExperimentReport& r) {
  std::vector<std::pair<Arm, std::uint32_t>> cells;
  for (const auto& x : r.results) {
    const std::pair<Arm, std::uint32_t> cell{x.arm, x.k};
    if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
  }
  return cells;
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["version"] = kReportVersion;
  j["config"] = to_json(r.config);
  auto results = nlohmann::ordered_json::array();
  for (const auto& x : r.results) {
    nlohmann::ordered_json o;
    o["seed_index"] = x.seed_index;
    o["arm"] = to_string(x.arm);
    o["K"] = x.k;
    o["train_size"] = x.train_size;
    o["eer"] = x.eer;
    o["min_dcf"] = x.min_dcf;
    results.push_back(o);
  }
  j["results"] = results;
  auto means = nlohmann::ordered_json::array();
  for (const auto& [arm, k] : report_cells(r)) {
    const auto m = r.mean(arm, k);
    means.push_back({{"arm", to_string(arm)}, {"K", k}, {"n_seeds", m.n}, {"mean_eer", m.eer},
                     {"mean_min_dcf", m.min_dcf}});
  }
  j["means"] = means;
  return j;
}

/// Table of mean EER (%) and minDCF per (arm, K), one row per cell.
inline std::string report_csv(const ExperimentReport& r) {
  std::string out = "arm,K,n_seeds,mean_eer_percent,mean_min_dcf\n";
  char buf[128];
  for (const auto& [arm, k] : report_cells(r)) {
    const auto m = r.mean(arm, k);
    std::snprintf(buf, sizeof buf, "%s,%u,%zu,%.4f,%.4f\n", std::string(to_string(arm)).c_str(), k, m.n,
                  100.0 * m.eer, m.min_dcf);
    out += buf;
  }
  return out;
}

}  // namespace vca::sim
