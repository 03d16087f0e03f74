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
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vca/embedding_store.hpp"
#include "vca/error.hpp"
#include "vca/io.hpp"
#include "vca/random.hpp"
#include "vca/scenario.hpp"

namespace vca {

/// Linear speaker model: embeddings are A x, class logits are C A x.
struct LinearSpeakerModel {
  Eigen::MatrixXd transform;      // A, d x d
  Eigen::MatrixXd class_weights;  // C, n_classes x d
  std::vector<std::string> classes;  // row i of C belongs to classes[i]

  std::size_t dim() const noexcept { return static_cast<std::size_t>(transform.rows()); }
  std::size_t n_classes() const noexcept { return classes.size(); }

  std::size_t class_row(std::string_view speaker) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == speaker) return i;
    }
    throw DataError("unknown class '" + std::string(speaker) + "'");
  }

  friend bool operator==(const LinearSpeakerModel& a, const LinearSpeakerModel& b) {
    return a.classes == b.classes && a.transform.rows() == b.transform.rows() &&
           a.transform.cols() == b.transform.cols() && a.class_weights.rows() == b.class_weights.rows() &&
           a.class_weights.cols() == b.class_weights.cols() && a.transform == b.transform &&
           a.class_weights == b.class_weights;
  }
};

struct TrainConfig {
  std::uint32_t epochs = 20;
  std::uint32_t batch = 64;
  double lr = 0.1;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch == 0) throw DataError("batch must be positive");
  if (!(cfg.lr > 0) || !std::isfinite(cfg.lr)) throw DataError("lr must be positive and finite");
}

/// Test instrumentation. on_sample sees every record that enters a gradient
/// step; on_step receives the mean batch loss evaluated before the update.
struct TrainHooks {
  std::function<void(const UtteranceRecord&)> on_sample;
  std::function<void(std::size_t step, double loss)> on_step;
};

inline LinearSpeakerModel identity_model(std::size_t dim) {
  LinearSpeakerModel m;
  m.transform = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  m.class_weights = Eigen::MatrixXd::Zero(0, static_cast<Eigen::Index>(dim));
  return m;
}

struct LossGradient {
  double loss = 0.0;
  Eigen::MatrixXd transform;      // dL/dA
  Eigen::MatrixXd class_weights;  // dL/dC
};

/// Mean softmax cross-entropy over the columns of `x` (d x B) with class rows
/// `y`, and its gradient with respect to A and C.
inline LossGradient softmax_loss_gradient(const LinearSpeakerModel& m, const Eigen::MatrixXd& x,
                                          std::span<const int> y, bool with_gradient = true) {
  const auto batch = x.cols();
  const Eigen::MatrixXd h = m.transform * x;
  Eigen::MatrixXd z = m.class_weights * h;
  LossGradient out;
  for (Eigen::Index i = 0; i < batch; ++i) {
    auto col = z.col(i);
    const double mx = col.maxCoeff();
    col.array() = (col.array() - mx).exp();
    const double sum = col.sum();
    col /= sum;
    out.loss -= std::log(col(y[static_cast<std::size_t>(i)]));
  }
  out.loss /= static_cast<double>(batch);
  if (!with_gradient) return out;
  // z now holds the probabilities P; dL/dZ = (P - Y) / B.
  for (Eigen::Index i = 0; i < batch; ++i) z(y[static_cast<std::size_t>(i)], i) -= 1.0;
  z /= static_cast<double>(batch);
  out.class_weights = z * h.transpose();
  out.transform = (m.class_weights.transpose() * z) * x.transpose();
  return out;
}

inline double softmax_loss(const LinearSpeakerModel& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  return softmax_loss_gradient(m, x, y, false).loss;
}

/// Labelled design matrix (d x N) plus class rows, built from records.
struct TrainingSet {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<std::string> classes;
  std::vector<const UtteranceRecord*> records;
};

inline TrainingSet make_training_set(std::span<const UtteranceRecord> records, const EmbeddingStore& store) {
  TrainingSet ts;
  std::map<std::string, int> class_of;
  for (const auto& r : records) {
    if (!r.speaker_id) throw DataError("training record '" + r.utt_id + "' is unlabelled");
    if (!store.contains(r.utt_id)) throw DataError("training record '" + r.utt_id + "' has no embedding");
    class_of.emplace(*r.speaker_id, 0);
  }
  if (class_of.size() < 2) throw DataError("training needs at least 2 speakers, got " + std::to_string(class_of.size()));
  int next = 0;
  for (auto& [spk, idx] : class_of) {
    idx = next++;
    ts.classes.push_back(spk);
  }
  const auto d = static_cast<Eigen::Index>(store.dim());
  ts.x.resize(d, static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto v = store.get(records[i].utt_id);
    for (Eigen::Index k = 0; k < d; ++k) ts.x(k, static_cast<Eigen::Index>(i)) = v[static_cast<std::size_t>(k)];
    ts.y.push_back(class_of.at(*records[i].speaker_id));
    ts.records.push_back(&records[i]);
  }
  return ts;
}

/// Mini-batch gradient descent on softmax cross-entropy. A starts at the
/// identity, C at N(0, 0.01^2); batches follow a seeded per-epoch shuffle.
/// Deterministic for fixed inputs.
inline LinearSpeakerModel train(std::span<const UtteranceRecord> records, const EmbeddingStore& store,
                                const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  const TrainingSet ts = make_training_set(records, store);
  const auto d = static_cast<Eigen::Index>(store.dim());
  const auto n_classes = static_cast<Eigen::Index>(ts.classes.size());

  LinearSpeakerModel m = identity_model(store.dim());
  m.classes = ts.classes;
  m.class_weights.resize(n_classes, d);
  Rng init(cfg.seed, "trainer/init");
  for (Eigen::Index r = 0; r < n_classes; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) m.class_weights(r, c) = 0.01 * init.gaussian();
  }

  Rng shuffler(cfg.seed, "trainer/shuffle");
  std::vector<std::size_t> order(records.size());
  std::size_t step = 0;
  Eigen::MatrixXd xb;
  std::vector<int> yb;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffler.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      xb.resize(d, static_cast<Eigen::Index>(end - start));
      yb.clear();
      for (std::size_t i = start; i < end; ++i) {
        xb.col(static_cast<Eigen::Index>(i - start)) = ts.x.col(static_cast<Eigen::Index>(order[i]));
        yb.push_back(ts.y[order[i]]);
        if (hooks.on_sample) hooks.on_sample(*ts.records[order[i]]);
      }
      auto g = softmax_loss_gradient(m, xb, yb);
      if (hooks.on_step) hooks.on_step(step, g.loss);
      m.transform -= cfg.lr * g.transform;
      m.class_weights -= cfg.lr * g.class_weights;
      ++step;
    }
  }
  if (!m.transform.allFinite() || !m.class_weights.allFinite()) {
    throw DataError("training diverged (non-finite parameters); lower lr");
  }
  return m;
}

template <typename T>
std::vector<double> embed(const LinearSpeakerModel& m, std::span<const T> x) {
  if (x.size() != m.dim()) {
    throw DataError("embed: input dim " + std::to_string(x.size()) + " does not match model dim " +
                    std::to_string(m.dim()));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(x[i]);
  const Eigen::VectorXd out = m.transform * v;
  return {out.data(), out.data() + out.size()};
}

template <typename T>
std::vector<double> embed(const LinearSpeakerModel& m, const std::vector<T>& x) {
  return embed(m, std::span<const T>(x));
}

/// Index of the highest-scoring class for x.
template <typename T>
std::size_t predict(const LinearSpeakerModel& m, std::span<const T> x) {
  const auto h = embed(m, x);
  const Eigen::VectorXd z = m.class_weights * Eigen::Map<const Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  Eigen::Index best = 0;
  z.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

inline double training_accuracy(const LinearSpeakerModel& m, std::span<const UtteranceRecord> records,
                                const EmbeddingStore& store) {
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (m.classes[predict(m, store.get(r.utt_id))] == *r.speaker_id) ++correct;
  }
  return records.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(records.size());
}

/// Maps every listed utterance through the model into a new store.
inline EmbeddingStore embed_store(const LinearSpeakerModel& m, const EmbeddingStore& store,
                                  std::span<const UtteranceRecord> records) {
  EmbeddingStore out(static_cast<std::uint32_t>(m.dim()));
  for (const auto& r : records) {
    if (out.contains(r.utt_id)) continue;
    if (!store.contains(r.utt_id)) throw DataError("missing embedding for '" + r.utt_id + "'");
    out.insert(r.utt_id, embed(m, store.get(r.utt_id)));
  }
  return out;
}

enum class PhiMode { kIdentity, kTrained };

/// Stage-1 model for nearest-neighbour selection, trained on the scenario's
/// labelled records only. kIdentity skips training.
inline LinearSpeakerModel train_phi(const Scenario& scenario, const EmbeddingStore& store, const TrainConfig& cfg,
                                    PhiMode mode = PhiMode::kTrained, const TrainHooks& hooks = {}) {
  if (mode == PhiMode::kIdentity) return identity_model(store.dim());
  const auto labelled = labelled_training_set(scenario);
  return train(labelled, store, cfg, hooks);
}

// Checkpoint: "VCAM", u32 version, u32 d, u32 n_classes, A then C row-major
// as f64, then n_classes x {u32 length, id bytes}.
inline constexpr char kModelMagic[4] = {'V', 'C', 'A', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string serialize_model(const LinearSpeakerModel& m) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kModelMagic, 4));
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.n_classes()));
  for (Eigen::Index r = 0; r < m.transform.rows(); ++r)
    for (Eigen::Index c = 0; c < m.transform.cols(); ++c) w.put<double>(m.transform(r, c));
  for (Eigen::Index r = 0; r < m.class_weights.rows(); ++r)
    for (Eigen::Index c = 0; c < m.class_weights.cols(); ++c) w.put<double>(m.class_weights(r, c));
  for (const auto& id : m.classes) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.put_bytes(id);
  }
  return std::move(w).take();
}

inline LinearSpeakerModel deserialize_model(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != std::string_view(kModelMagic, 4)) throw DataError("bad magic: not a VCAM model");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion) throw DataError("unsupported VCAM version " + std::to_string(version));
  const auto d = static_cast<Eigen::Index>(r.get<std::uint32_t>("dim"));
  const auto n = static_cast<Eigen::Index>(r.get<std::uint32_t>("n_classes"));
  if (d == 0) throw DataError("VCAM header declares dim = 0");
  if (static_cast<std::uint64_t>((d + n) * d) * 8 > r.remaining()) throw DataError("truncated payload in VCAM model");
  LinearSpeakerModel m;
  m.transform.resize(d, d);
  m.class_weights.resize(n, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m.transform(i, j) = r.get<double>("A");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m.class_weights(i, j) = r.get<double>("C");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>("class id length");
    m.classes.emplace_back(r.get_bytes(len, "class id"));
  }
  if (r.remaining() != 0) throw DataError("trailing bytes in VCAM model");
  if (!m.transform.allFinite() || !m.class_weights.allFinite()) throw DataError("non-finite value in VCAM model");
  return m;
}

inline void save_model(const LinearSpeakerModel& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_model(m));
}

inline LinearSpeakerModel load_model(const std::filesystem::path& path) {
  return deserialize_model(io::read_file(path));
}

}  // namespace vca
