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

// vca: command-line front end for the voice-conversion augmentation toolkit.
//
// Exit status: 0 on success, 1 on a usage error, 2 on a data error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vca/vca.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string log_level = "info";
  unsigned threads = 0;
};

unsigned resolve_threads(unsigned flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("VCA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw vca::UsageError(std::string("VCA_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(vca::io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw vca::DataError(path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
  vca::io::write_file_atomic(path, j.dump(2) + "\n");
}

// A corpus directory holds manifest.jsonl and embeddings.vcae, with exactly
// one embedding per manifest record.
void save_corpus(std::span<const vca::UtteranceRecord> records, const vca::EmbeddingStore& store,
                 const fs::path& dir) {
  vca::EmbeddingStore covered(store.dim());
  for (const auto& r : records) covered.insert(r.utt_id, store.get(r.utt_id));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw vca::DataError("cannot create output directory " + dir.string());
  vca::save_store(covered, dir / "embeddings.vcae");
  vca::save_manifest(records, dir / "manifest.jsonl");
}

// Every manifest record must have an embedding and vice versa.
void check_coverage(std::span<const vca::UtteranceRecord> records, const vca::EmbeddingStore& store) {
  std::set<std::string, std::less<>> ids;
  for (const auto& r : records) {
    if (!store.contains(r.utt_id)) throw vca::DataError("no embedding for utt_id '" + r.utt_id + "'");
    ids.insert(r.utt_id);
  }
  for (const auto& [id, v] : store.entries()) {
    if (!ids.contains(id)) throw vca::DataError("embedding '" + id + "' has no manifest record");
  }
}

void require(const std::string& value, const char* flag, const char* sub) {
  if (value.empty()) throw vca::UsageError(std::string(sub) + ": " + flag + " is required");
}

vca::TrainConfig train_config(const std::string& path) {
  if (path.empty()) return {};
  return vca::sim::train_config_from_json(read_json(path));
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  CLI::App app{"vca: voice-conversion data augmentation for speaker recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  auto* seed_opt = app.add_option("--seed", g.seed, "Master seed for every seeded stage (default 0)");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.add_option("--threads", g.threads, "Worker cap (default: $VCA_THREADS or 1)")->check(CLI::PositiveNumber);

  // ingest
  std::string in_manifest, in_embeddings, in_out;
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and its VCAE store; write a canonical corpus directory");
  ingest->add_option("--manifest", in_manifest, "Utterance manifest (JSON Lines)")->required();
  ingest->add_option("--embeddings", in_embeddings, "Embedding store (VCAE)")->required();
  ingest->add_option("--out", in_out, "Output corpus directory")->required();

  // scenario
  std::string sc_kind, sc_config, sc_manifest, sc_store, sc_out;
  auto* scenario = app.add_subcommand("scenario", "Partition a labelled corpus into targets T and sources S");
  scenario->add_option("--kind", sc_kind, "semi|small|imb")->check(CLI::IsMember({"semi", "small", "imb", "imbalanced"}));
  scenario->add_option("--config", sc_config, "Scenario config (JSON)");
  scenario->add_option("--manifest", sc_manifest, "Corpus manifest (JSON Lines)")->required();
  scenario->add_option("--store", sc_store, "Corpus embeddings (VCAE)")->required();
  scenario->add_option("--out", sc_out, "Output scenario directory")->required();

  // plan
  std::string pl_strategy, pl_scenario, pl_store, pl_phi = "identity", pl_phi_config, pl_out;
  std::uint32_t pl_k = 0;
  std::optional<double> pl_min_sim;
  auto* plan = app.add_subcommand("plan", "Select K sources per target (random or nearest in phi space)");
  plan->add_option("--strategy", pl_strategy, "rs|nn")->required()->check(CLI::IsMember({"rs", "nn"}));
  plan->add_option("--k", pl_k, "Pseudo utterances per target")->required();
  plan->add_option("--scenario", pl_scenario, "Scenario directory")->required();
  plan->add_option("--store", pl_store, "Embeddings covering T and S (VCAE); required for nn");
  plan->add_option("--phi", pl_phi, "Similarity space for nn: identity|trained")
      ->check(CLI::IsMember({"identity", "trained"}));
  plan->add_option("--phi-config", pl_phi_config, "Training config for --phi trained (JSON)");
  plan->add_option("--min-similarity", pl_min_sim, "Drop nn candidates below this cosine");
  plan->add_option("--out", pl_out, "Output plan file")->required();

  // convert
  std::string cv_backend, cv_plan, cv_store, cv_corpus, cv_out, cv_results, cv_result_store;
  vca::SyntheticVCParams cv_params;
  auto* convert = app.add_subcommand("convert", "Execute a plan: synthetic VC, or exchange with an external VC model");
  convert->add_option("--backend", cv_backend, "synthetic|external-emit|external-ingest")
      ->required()
      ->check(CLI::IsMember({"synthetic", "external-emit", "external-ingest"}));
  convert->add_option("--plan", cv_plan, "Plan file")->required();
  convert->add_option("--store", cv_store, "Embeddings of the plan's targets and sources (VCAE)");
  convert->add_option("--corpus", cv_corpus, "Manifest of the records to augment (JSON Lines)");
  convert->add_option("--results", cv_results, "external-ingest: result manifest (JSON Lines)");
  convert->add_option("--result-store", cv_result_store, "external-ingest: pseudo embeddings (VCAE)");
  convert->add_option("--sigma-base", cv_params.sigma_base, "synthetic: base noise scale");
  convert->add_option("--lambda-noise", cv_params.lambda_noise, "synthetic: distance-dependent noise");
  convert->add_option("--lambda-drift", cv_params.lambda_drift, "synthetic: drift toward the source");
  convert->add_option("--out", cv_out, "Output corpus directory, or job manifest for external-emit")->required();

  // train
  std::string tr_corpus, tr_store, tr_config, tr_out;
  auto* train = app.add_subcommand("train", "Train the linear softmax speaker model");
  train->add_option("--corpus", tr_corpus, "Labelled training manifest (JSON Lines)")->required();
  train->add_option("--store", tr_store, "Embeddings (VCAE)")->required();
  train->add_option("--config", tr_config, "Training config (JSON: epochs, batch, lr, seed)");
  train->add_option("--out", tr_out, "Output model checkpoint (VCAM)")->required();

  // eval
  std::string ev_trials, ev_model, ev_store, ev_report, ev_scores;
  vca::DcfParams ev_dcf;
  auto* eval = app.add_subcommand("eval", "Score a trial list and report EER and minDCF");
  eval->add_option("--trials", ev_trials, "Trial list: <0|1> <utt_a> <utt_b> per line")->required();
  eval->add_option("--model", ev_model, "Model checkpoint (VCAM); identity transform if omitted");
  eval->add_option("--store", ev_store, "Embeddings (VCAE)")->required();
  eval->add_option("--report", ev_report, "Output report (JSON)")->required();
  eval->add_option("--scores", ev_scores, "Optional per-trial score file");
  eval->add_option("--p-target", ev_dcf.p_target, "minDCF target prior");
  eval->add_option("--c-miss", ev_dcf.c_miss, "minDCF miss cost");
  eval->add_option("--c-fa", ev_dcf.c_fa, "minDCF false-alarm cost");

  // simulate
  std::string sm_config, sm_report, sm_csv;
  auto* simulate = app.add_subcommand("simulate", "Run the seeded baseline/rs/nn experiment on a synthetic universe");
  simulate->add_option("--config", sm_config, "Experiment config (JSON)")->required();
  simulate->add_option("--report", sm_report, "Output report (JSON)")->required();
  simulate->add_option("--csv", sm_csv, "Optional table of per-arm means (CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "vca: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  g.seed_given = seed_opt->count() > 0;

  auto logger = spdlog::stderr_color_mt("vca");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    const unsigned threads = resolve_threads(g.threads);

    if (*ingest) {
      const auto records = vca::load_manifest(in_manifest);
      const auto store = vca::load_store(in_embeddings);
      check_coverage(records, store);
      save_corpus(records, store, in_out);
      spdlog::info("ingested {} utterances, dim {}", records.size(), store.dim());
    } else if (*scenario) {
      vca::ScenarioConfig cfg;
      if (!sc_config.empty()) cfg = vca::scenario_config_from_json(read_json(sc_config));
      if (!sc_kind.empty()) cfg.kind = vca::parse_scenario_kind(sc_kind);
      if (sc_config.empty() && sc_kind.empty()) throw vca::UsageError("scenario: --kind or --config is required");
      if (g.seed_given) cfg.seed = g.seed;
      vca::validate(cfg);
      const auto corpus = vca::load_manifest(sc_manifest);
      const auto store = vca::load_store(sc_store);
      const auto built = vca::build_scenario(corpus, store, cfg);
      vca::save_scenario(built, sc_out);
      spdlog::info("scenario {}: |T| = {}, |S| = {}", vca::to_string(cfg.kind), built.scenario.targets.size(),
                   built.scenario.sources.size());
    } else if (*plan) {
      const auto sc = vca::load_scenario(pl_scenario);
      vca::PlanOptions opts;
      opts.threads = threads;
      opts.min_similarity = pl_min_sim;
      vca::AugmentationPlan p;
      if (pl_strategy == "rs") {
        if (pl_min_sim) throw vca::UsageError("plan: --min-similarity applies to --strategy nn only");
        p = vca::plan_rs(sc, pl_k, g.seed, opts);
      } else {
        require(pl_store, "--store", "plan");
        const auto store = vca::load_store(pl_store);
        if (pl_phi == "identity") {
          if (!pl_phi_config.empty()) throw vca::UsageError("plan: --phi-config needs --phi trained");
          p = vca::plan_nn(sc, pl_k, store, "identity", opts);
        } else {
          auto cfg = train_config(pl_phi_config);
          if (g.seed_given) cfg.seed = g.seed;
          const auto phi = vca::train_phi(sc, store, cfg, vca::PhiMode::kTrained);
          std::vector<vca::UtteranceRecord> both = sc.targets;
          both.insert(both.end(), sc.sources.begin(), sc.sources.end());
          p = vca::plan_nn(sc, pl_k, vca::embed_store(phi, store, both), "trained", opts);
        }
      }
      vca::save_plan(p, pl_out);
      spdlog::info("plan {}: K = {}, {} jobs", vca::to_string(p.strategy), p.k, p.jobs.size());
    } else if (*convert) {
      const auto p = vca::load_plan(cv_plan);
      if (cv_backend == "external-emit") {
        std::vector<vca::UtteranceRecord> known;
        if (!cv_corpus.empty()) known = vca::load_manifest(cv_corpus);
        vca::emit_external_jobs(p, known, cv_out);
        spdlog::info("emitted {} external jobs", p.jobs.size());
      } else {
        require(cv_store, "--store", "convert");
        require(cv_corpus, "--corpus", "convert");
        const auto records = vca::load_manifest(cv_corpus);
        const auto store = vca::load_store(cv_store);
        vca::Backend backend;
        if (cv_backend == "synthetic") {
          cv_params.seed = g.seed;
          backend = cv_params;
        } else {
          require(cv_results, "--results", "convert");
          require(cv_result_store, "--result-store", "convert");
          backend = vca::ExternalBackend{cv_results, cv_result_store};
        }
        const auto out = vca::apply_plan(p, records, store, backend, threads);
        save_corpus(out.records, out.store, cv_out);
        spdlog::info("augmented corpus: {} records ({} pseudo)", out.records.size(),
                     out.records.size() - records.size());
      }
    } else if (*train) {
      auto cfg = train_config(tr_config);
      if (g.seed_given) cfg.seed = g.seed;
      const auto records = vca::load_manifest(tr_corpus);
      const auto store = vca::load_store(tr_store);
      vca::TrainHooks hooks;
      hooks.on_step = [](std::size_t step, double loss) { spdlog::debug("step {} loss {:.6f}", step, loss); };
      const auto model = vca::train(records, store, cfg, hooks);
      vca::save_model(model, tr_out);
      spdlog::info("trained {} classes, training accuracy {:.4f}", model.classes.size(),
                   vca::training_accuracy(model, records, store));
    } else if (*eval) {
      vca::validate(ev_dcf);
      const auto trials = vca::load_trials(ev_trials);
      const auto store = vca::load_store(ev_store);
      const auto model = ev_model.empty() ? vca::identity_model(store.dim()) : vca::load_model(ev_model);
      const auto scores = vca::score_trials(trials, model, store);
      const auto report = vca::evaluate(scores, vca::trial_labels(trials), ev_dcf);
      if (!ev_scores.empty()) vca::io::write_file_atomic(ev_scores, vca::scores_to_string(trials, scores));
      write_json(vca::to_json(report), ev_report);
      spdlog::info("EER {:.4f}%  minDCF {:.4f}", 100.0 * report.eer, report.min_dcf);
    } else if (*simulate) {
      auto cfg = vca::sim::experiment_config_from_json(read_json(sm_config));
      if (g.seed_given) cfg.seed = g.seed;
      cfg.threads = threads;
      const auto report = vca::sim::run_experiment(cfg);
      write_json(vca::sim::to_json(report), sm_report);
      if (!sm_csv.empty()) vca::io::write_file_atomic(sm_csv, vca::sim::report_csv(report));
      for (const auto& [arm, k] : vca::sim::report_cells(report)) {
        const auto m = report.mean(arm, k);
        spdlog::info("{:>8} K={} mean EER {:.4f}%  minDCF {:.4f}", vca::sim::to_string(arm), k, 100.0 * m.eer,
                     m.min_dcf);
      }
    }
  } catch (const vca::UsageError& e) {
    std::cerr << "vca: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const vca::DataError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
