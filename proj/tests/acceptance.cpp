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

// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "support.hpp"

namespace {

using namespace vca;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome top_k_oracle() {
  Rng rng(derive_seed(2026, "acceptance/top-k"));
  std::size_t instances = 0, with_ties = 0, mismatches = 0;
  for (; instances < 1000; ++instances) {
    const std::size_t n = 1 + rng.below(2000);
    const std::size_t dim = 1 + rng.below(64);
    const bool force_ties = instances % 2 == 0;
    std::vector<std::vector<double>> vecs;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      if (force_ties && !vecs.empty() && rng.below(3) == 0) {
        vecs.push_back(vecs[rng.below(vecs.size())]);
      } else {
        vecs.push_back(rng.gaussian_vector(dim));
      }
      ids.push_back("c" + std::to_string(rng.below(1000000)) + "_" + std::to_string(i));
    }
    std::vector<Candidate<double>> cands;
    for (std::size_t i = 0; i < n; ++i) cands.push_back({ids[i], vecs[i]});
    std::set<std::string, std::less<>> excluded;
    for (std::size_t e = rng.below(4); e > 0; --e) excluded.insert(ids[rng.below(n)]);
    const auto target = rng.gaussian_vector(dim);
    const std::size_t k = rng.below(5) == 0 ? n + 1 : 1 + rng.below(std::min<std::size_t>(n, 50));
    const auto got = top_k(target, cands, k, excluded);
    const auto want = testing::top_k_full_sort(target, cands, k, excluded);
    if (got != want) ++mismatches;
    if (force_ties) ++with_ties;
  }
  return {mismatches == 0, fmt("%zu instances (%zu with forced ties), %zu mismatches", instances, with_ties,
                               mismatches)};
}

Outcome metric_oracle() {
  Rng rng(derive_seed(2026, "acceptance/metrics"));
  const auto worked_scores = std::vector<double>{0.9, 0.8, 0.7, 0.75, 0.6, 0.2};
  const auto worked_labels = std::vector<int>{1, 1, 1, 0, 0, 0};
  const double we = eer(worked_scores, worked_labels).eer;
  const double wd = min_dcf(worked_scores, worked_labels);
  const bool worked = std::abs(we - 1.0 / 3.0) < 1e-12 && std::abs(wd - 1.0 / 3.0) < 1e-12 &&
                      std::abs(testing::brute_eer(worked_scores, worked_labels) - 1.0 / 3.0) < 1e-12 &&
                      std::abs(testing::brute_min_dcf(worked_scores, worked_labels) - 1.0 / 3.0) < 1e-12;
  double worst = 0.0;
  std::size_t sets = 0, largest = 0;
  for (; sets < 200; ++sets) {
    // Log-uniform sizes in [2, 10000]; the last set is the maximum size.
    const std::size_t n =
        sets == 199 ? 10000 : static_cast<std::size_t>(std::exp(std::log(2.0) + rng.uniform() * std::log(5000.0)));
    largest = std::max(largest, n);
    const int mode = static_cast<int>(rng.below(3));  // continuous, coarse ties, heavy ties
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
      double s = rng.gaussian() + 1.5 * label;
      if (mode == 1) s = std::round(s * 20.0) / 20.0;
      if (mode == 2) s = std::round(s);
      scores.push_back(s);
      labels.push_back(label);
    }
    const DcfParams p{0.001 + 0.998 * rng.uniform(), 0.5 + rng.uniform(), 0.5 + rng.uniform()};
    worst = std::max(worst, std::abs(eer(scores, labels).eer - testing::brute_eer(scores, labels)));
    worst = std::max(worst, std::abs(min_dcf(scores, labels, p) - testing::brute_min_dcf(scores, labels, p)));
    const DcfParams d{};
    worst = std::max(worst, std::abs(min_dcf(scores, labels, d) - testing::brute_min_dcf(scores, labels, d)));
  }
  return {worked && worst <= 1e-12,
          fmt("worked example EER=%.15f minDCF=%.15f; %zu sets up to %zu trials, max |diff| = %.3g", we, wd, sets,
              largest, worst)};
}

Outcome scenario_fidelity() {
  // 6000 speakers x 10 utterances, dim 4.
  const auto corpus = testing::labelled_corpus(6000, 10, 4, 5);
  std::string detail;
  bool ok = true;
  const auto count_per_speaker = [](const std::vector<UtteranceRecord>& v) {
    std::map<std::string, std::size_t> out;
    for (const auto& r : v) ++out[*r.speaker_id];
    return out;
  };
  const auto uniform = [](const std::map<std::string, std::size_t>& m, std::size_t speakers, std::size_t per) {
    if (m.size() != speakers) return false;
    for (const auto& [_, n] : m) {
      if (n != per) return false;
    }
    return true;
  };
  struct Case {
    const char* name;
    ScenarioConfig cfg;
    std::size_t t, s, speakers, per;  // |T|, |S|, then augmented shape
  };
  ScenarioConfig semi{ScenarioKind::kSemi, 1000, 10, 40000, std::nullopt, std::nullopt, 11};
  ScenarioConfig small{ScenarioKind::kSmall, 1000, 5, std::nullopt, std::nullopt, std::nullopt, 12};
  ScenarioConfig imb{ScenarioKind::kImbalanced, 1000, 10, std::nullopt, 4000, 1, 13};
  for (const Case& c : {Case{"semi", semi, 10000, 40000, 1000, 100}, Case{"small", small, 5000, 5000, 1000, 50},
                        Case{"imb", imb, 4000, 10000, 5000, 10}}) {
    const auto built = build_scenario(corpus.records, corpus.store, c.cfg);
    const auto& s = built.scenario;
    const auto labelled = labelled_training_set(s);
    const auto plan = plan_rs(s, 9, 7);
    const auto out = apply_plan(plan, labelled, corpus.store, SyntheticVCParams{});
    const bool case_ok = s.targets.size() == c.t && s.sources.size() == c.s &&
                         uniform(count_per_speaker(out.records), c.speakers, c.per);
    ok = ok && case_ok;
    if (!detail.empty()) detail += "; ";
    detail += fmt("%s |T|=%zu |S|=%zu -> %zu speakers x %zu%s", c.name, s.targets.size(), s.sources.size(),
                  count_per_speaker(out.records).size(), out.records.size() / std::max<std::size_t>(1, count_per_speaker(out.records).size()),
                  case_ok ? "" : " MISMATCH");
  }
  return {ok, detail};
}

sim::ExperimentConfig load_config(const char* name) {
  const fs::path root = VCA_SOURCE_DIR;
  return sim::experiment_config_from_json(nlohmann::json::parse(io::read_file(root / "configs" / name)));
}

Outcome directional() {
  const auto cfg = load_config("sim.json");
  const auto r = sim::run_experiment(cfg);
  const std::uint32_t k = 9;
  std::size_t nn_wins = 0, rs_wins = 0;
  for (std::uint32_t s = 0; s < cfg.n_seeds; ++s) {
    const double base = r.at(s, sim::Arm::kBaseline, 0).eer;
    nn_wins += r.at(s, sim::Arm::kNearest, k).eer < base;
    rs_wins += r.at(s, sim::Arm::kRandom, k).eer < base;
  }
  const double mb = r.mean(sim::Arm::kBaseline, 0).eer;
  const double mr = r.mean(sim::Arm::kRandom, k).eer;
  const double mn = r.mean(sim::Arm::kNearest, k).eer;
  const bool ok = cfg.n_seeds == 10 && mn < mb && mr < mb && nn_wins >= 8 && rs_wins >= 8 && mn <= mr;
  return {ok, fmt("imbalanced, %u seeds, K=9: mean EER baseline %.3f%% rs %.3f%% nn %.3f%%; wins rs %zu/10 nn %zu/10",
                  cfg.n_seeds, 100 * mb, 100 * mr, 100 * mn, rs_wins, nn_wins)};
}

Outcome k_sweep() {
  const auto cfg = load_config("sim_ksweep.json");
  const auto r = sim::run_experiment(cfg);
  const double rs0 = r.mean(sim::Arm::kRandom, 0).eer, rs3 = r.mean(sim::Arm::kRandom, 3).eer,
               rs9 = r.mean(sim::Arm::kRandom, 9).eer;
  const double nn0 = r.mean(sim::Arm::kNearest, 0).eer, nn3 = r.mean(sim::Arm::kNearest, 3).eer,
               nn9 = r.mean(sim::Arm::kNearest, 9).eer;
  const bool ok = cfg.n_seeds == 10 && rs9 < rs0 && nn9 < nn0;
  return {ok, fmt("semi, %u seeds, mean EER rs K=0/3/9 %.3f/%.3f/%.3f%%, nn %.3f/%.3f/%.3f%%", cfg.n_seeds, 100 * rs0,
                  100 * rs3, 100 * rs9, 100 * nn0, 100 * nn3, 100 * nn9)};
}

Outcome determinism() {
  std::vector<std::string> failed;
  std::size_t compared = 0;
  const auto check = [&](const char* what, const std::string& a, const std::string& b) {
    ++compared;
    if (a != b) failed.push_back(what);
  };
  sim::UniverseConfig ucfg;
  ucfg.master_seed = 77;
  const auto u1 = sim::generate_universe(ucfg);
  const auto u2 = sim::generate_universe(ucfg);
  check("store", serialize_store(u1.store), serialize_store(u2.store));
  check("trials", trials_to_string(u1.trials), trials_to_string(u2.trials));

  auto shuffled_corpus = u1.corpus;
  Rng(1).shuffle(shuffled_corpus);
  ScenarioConfig scfg{ScenarioKind::kSemi, 20, 10, 400, std::nullopt, std::nullopt, 5};
  const auto b1 = build_scenario(u1.corpus, u1.store, scfg);
  const auto b2 = build_scenario(shuffled_corpus, u2.store, scfg);
  const auto scenario_bytes = [](const BuiltScenario& b) {
    return scenario_header(b.scenario.config) + manifest_to_string(b.scenario.targets) +
           manifest_to_string(b.scenario.sources) + truth_to_string(b.held_out_truth);
  };
  check("scenario", scenario_bytes(b1), scenario_bytes(b2));

  auto permuted = b1.scenario;
  Rng(2).shuffle(permuted.targets);
  Rng(3).shuffle(permuted.sources);
  PlanOptions many;
  many.threads = 4;
  const auto rs = plan_rs(b1.scenario, 9, 123);
  check("plan rs rerun", plan_to_string(rs), plan_to_string(plan_rs(b1.scenario, 9, 123)));
  check("plan rs permuted", plan_to_string(rs), plan_to_string(plan_rs(permuted, 9, 123)));
  check("plan rs workers", plan_to_string(rs), plan_to_string(plan_rs(b1.scenario, 9, 123, many)));

  TrainConfig tcfg;
  tcfg.seed = 9;
  const auto phi = train_phi(b1.scenario, u1.store, tcfg);
  check("phi model", serialize_model(phi), serialize_model(train_phi(b2.scenario, u2.store, tcfg)));
  std::vector<UtteranceRecord> both = b1.scenario.targets;
  both.insert(both.end(), b1.scenario.sources.begin(), b1.scenario.sources.end());
  const auto phi_store = embed_store(phi, u1.store, both);
  const auto nn = plan_nn(b1.scenario, 9, phi_store, "trained");
  check("plan nn rerun", plan_to_string(nn), plan_to_string(plan_nn(b1.scenario, 9, phi_store, "trained")));
  check("plan nn permuted", plan_to_string(nn), plan_to_string(plan_nn(permuted, 9, phi_store, "trained")));
  check("plan nn workers", plan_to_string(nn), plan_to_string(plan_nn(b1.scenario, 9, phi_store, "trained", many)));

  const auto labelled = labelled_training_set(b1.scenario);
  SyntheticVCParams vc;
  vc.seed = 4;
  const auto a1 = apply_plan(nn, labelled, u1.store, vc, 1);
  const auto a2 = apply_plan(nn, labelled, u1.store, vc, 4);
  check("augmented store", serialize_store(a1.store), serialize_store(a2.store));
  check("augmented manifest", manifest_to_string(a1.records), manifest_to_string(a2.records));

  const auto m1 = train(a1.records, a1.store, tcfg);
  const auto m2 = train(a2.records, a2.store, tcfg);
  check("model", serialize_model(m1), serialize_model(m2));
  const auto labels = trial_labels(u1.trials);
  const auto s1 = score_trials(u1.trials, m1, a1.store);
  const auto s2 = score_trials(u2.trials, m2, a2.store);
  check("scores", scores_to_string(u1.trials, s1), scores_to_string(u2.trials, s2));
  check("eval report", to_json(evaluate(s1, labels)).dump(), to_json(evaluate(s2, labels)).dump());

  auto ecfg = load_config("sim.json");
  ecfg.n_seeds = 2;
  const auto r1 = sim::to_json(sim::run_experiment(ecfg)).dump();
  ecfg.threads = 4;
  auto rep = sim::run_experiment(ecfg);
  rep.config.threads = 1;
  check("experiment report", r1, sim::to_json(rep).dump());

  std::string detail = std::to_string(compared) + " stage outputs compared";
  if (!failed.empty()) {
    detail += "; differing:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (i + j) / 2.0;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

Outcome vc_monotonicity() {
  // Random unit targets; sources at angles uniform in [0, pi] so that the
  // distance d = (1 - cos) / 2 spans [0, 1]. 10,000 samples per decile.
  const std::uint32_t dim = 32;
  const std::size_t per_decile = 10000;
  Rng rng(derive_seed(2026, "acceptance/vc"));
  SyntheticVCParams params;
  params.seed = 31;
  std::vector<std::pair<double, double>> samples;  // (d, cos(pseudo, target))
  EmbeddingStore store(dim);
  std::vector<ConversionJob> jobs;
  for (std::size_t i = 0; i < 10 * per_decile; ++i) {
    auto t = rng.gaussian_vector(dim);
    auto u = rng.gaussian_vector(dim);
    const double tn = l2_norm(std::span<const double>(t));
    for (double& x : t) x /= tn;
    const double p = dot(std::span<const double>(u), std::span<const double>(t));
    for (std::size_t k = 0; k < dim; ++k) u[k] -= p * t[k];
    const double un = l2_norm(std::span<const double>(u));
    for (double& x : u) x /= un;
    const double theta = std::acos(1.0 - 2.0 * rng.uniform());
    std::vector<double> s(dim);
    for (std::size_t k = 0; k < dim; ++k) s[k] = std::cos(theta) * t[k] + std::sin(theta) * u[k];
    const std::string ti = "t" + std::to_string(i), si = "s" + std::to_string(i);
    store.insert(ti, t);
    store.insert(si, s);
    UtteranceRecord target;
    target.utt_id = ti;
    target.speaker_id = "spk";
    jobs.push_back(make_job(target, si, 0));
  }
  for (const auto& job : jobs) {
    const auto out = convert_synthetic(job, store, params);
    const auto t = store.get(job.target_utt);
    const double c = cosine(store.get(job.source_utt), t);
    samples.push_back({(1.0 - c) / 2.0, cosine(std::span<const double>(out.embedding), t)});
  }
  std::sort(samples.begin(), samples.end());
  std::vector<double> decile, mean_cos;
  for (std::size_t q = 0; q < 10; ++q) {
    double sum = 0;
    for (std::size_t i = q * per_decile; i < (q + 1) * per_decile; ++i) sum += samples[i].second;
    decile.push_back(static_cast<double>(q));
    mean_cos.push_back(sum / per_decile);
  }
  const double rho = spearman(decile, mean_cos);
  return {rho < -0.9, fmt("%zu samples, decile mean cos %.4f .. %.4f, Spearman rho = %.4f", samples.size(),
                          mean_cos.front(), mean_cos.back(), rho)};
}

Outcome gradient_check() {
  Rng rng(derive_seed(2026, "acceptance/gradient"));
  // 3 speakers, dim 8: a trained-from-data point and a random point.
  const auto corpus = testing::labelled_corpus(3, 6, 8, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto trained = train(corpus.records, corpus.store, cfg);
  const auto ts = make_training_set(corpus.records, corpus.store);
  LinearSpeakerModel random = trained;
  for (Eigen::Index i = 0; i < random.transform.size(); ++i) random.transform.data()[i] += 0.5 * rng.gaussian();
  for (Eigen::Index i = 0; i < random.class_weights.size(); ++i) random.class_weights.data()[i] = rng.gaussian();
  double worst = 0.0;
  for (const LinearSpeakerModel* m : std::array<const LinearSpeakerModel*, 2>{&trained, &random}) {
    const auto g = softmax_loss_gradient(*m, ts.x, ts.y);
    const auto fd = testing::finite_difference_gradient(*m, ts.x, ts.y);
    worst = std::max(worst, static_cast<double>(testing::max_relative_error(g.transform, fd.transform)));
    worst = std::max(worst, static_cast<double>(testing::max_relative_error(g.class_weights, fd.class_weights)));
  }
  return {worst < 1e-4, fmt("3 speakers, dim 8, max relative error vs central differences = %.3g", worst)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"top-k oracle equivalence", 30, top_k_oracle},
      {"metric oracle equivalence", 60, metric_oracle},
      {"scenario fidelity at full scale", 120, scenario_fidelity},
      {"directional result (imbalanced, K=9)", 600, directional},
      {"K-sweep trend (semi, K in {0,3,9})", 600, k_sweep},
      {"determinism suite", 0, determinism},
      {"synthetic-VC quality monotonicity", 0, vc_monotonicity},
      {"gradient check", 0, gradient_check},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    std::printf("%s  %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
