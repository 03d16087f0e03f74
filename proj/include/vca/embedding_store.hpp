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
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "vca/error.hpp"
#include "vca/io.hpp"

namespace vca {

enum class Origin { kReal, kPseudo };

inline std::string_view to_string(Origin o) { return o == Origin::kReal ? "real" : "pseudo"; }

/// One utterance of a manifest. Pseudo utterances carry provenance links
/// (source, target, k) back to the conversion job that produced them.
struct UtteranceRecord {
  std::string utt_id;
  std::optional<std::string> speaker_id;  // absent = unlabelled
  std::optional<std::string> audio_path;
  Origin origin = Origin::kReal;
  std::optional<std::string> source_utt;
  std::optional<std::string> target_utt;
  std::optional<std::uint32_t> k_index;

  bool labelled() const noexcept { return speaker_id.has_value(); }

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

/// Checks the origin/provenance invariant; the message names the record.
inline void validate_record(const UtteranceRecord& r) {
  if (r.utt_id.empty()) throw DataError("record with empty utt_id");
  const bool has_any = r.source_utt || r.target_utt || r.k_index;
  const bool has_all = r.source_utt && r.target_utt && r.k_index;
  if (r.origin == Origin::kPseudo && !has_all) {
    throw DataError("pseudo record '" + r.utt_id +
                    "' is missing provenance fields (source_utt, target_utt, k_index)");
  }
  if (r.origin == Origin::kReal && has_any) {
    throw DataError("real record '" + r.utt_id + "' carries provenance fields");
  }
}

namespace detail {

template <typename Json>
Json optional_json(const std::optional<std::string>& v) {
  return v ? Json(*v) : Json(nullptr);
}

inline std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw DataError(std::string("field '") + key + "' must be a string or null");
  return v.get<std::string>();
}

}  // namespace detail

inline nlohmann::ordered_json record_to_json(const UtteranceRecord& r) {
  using J = nlohmann::ordered_json;
  J j;
  j["utt_id"] = r.utt_id;
  j["speaker_id"] = detail::optional_json<J>(r.speaker_id);
  j["audio_path"] = detail::optional_json<J>(r.audio_path);
  j["origin"] = to_string(r.origin);
  j["source_utt"] = detail::optional_json<J>(r.source_utt);
  j["target_utt"] = detail::optional_json<J>(r.target_utt);
  j["k_index"] = r.k_index ? J(*r.k_index) : J(nullptr);
  return j;
}

inline constexpr std::string_view kManifestKeys[] = {
    "utt_id", "speaker_id", "audio_path", "origin", "source_utt", "target_utt", "k_index"};

/// Parses one manifest object. `extra_keys` lists keys tolerated beyond the
/// seven manifest keys (result manifests carry "status").
inline UtteranceRecord record_from_json(const nlohmann::json& j,
                                        std::span<const std::string_view> extra_keys = {}) {
  if (!j.is_object()) throw DataError("manifest line is not a JSON object");
  for (auto key : kManifestKeys) {
    if (!j.contains(key)) throw DataError("missing key '" + std::string(key) + "'");
  }
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto k : kManifestKeys) known = known || key == k;
    for (auto k : extra_keys) known = known || key == k;
    if (!known) throw DataError("unexpected key '" + key + "'");
  }
  UtteranceRecord r;
  if (!j.at("utt_id").is_string()) throw DataError("field 'utt_id' must be a string");
  r.utt_id = j.at("utt_id").get<std::string>();
  r.speaker_id = detail::optional_string(j, "speaker_id");
  r.audio_path = detail::optional_string(j, "audio_path");
  const auto& origin = j.at("origin");
  if (origin == "real") {
    r.origin = Origin::kReal;
  } else if (origin == "pseudo") {
    r.origin = Origin::kPseudo;
  } else {
    throw DataError("field 'origin' must be \"real\" or \"pseudo\"");
  }
  r.source_utt = detail::optional_string(j, "source_utt");
  r.target_utt = detail::optional_string(j, "target_utt");
  const auto& k = j.at("k_index");
  if (!k.is_null()) {
    if (!k.is_number_integer() || k.get<std::int64_t>() < 0 ||
        k.get<std::int64_t>() > std::int64_t{UINT32_MAX}) {
      throw DataError("field 'k_index' must be a non-negative integer or null");
    }
    r.k_index = static_cast<std::uint32_t>(k.get<std::int64_t>());
  }
  validate_record(r);
  return r;
}

/// Splits JSON Lines text, invoking fn(line_number, json) per non-blank line.
/// Parse failures are reported with their 1-based line number.
template <typename Fn>
void for_each_json_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    try {
      fn(line_no, j);
    } catch (const DataError& e) {
      const std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      throw DataError("line " + std::to_string(line_no) + ": " + msg);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::vector<UtteranceRecord> parse_manifest(std::string_view text,
                                                   std::span<const std::string_view> extra_keys = {}) {
  std::vector<UtteranceRecord> records;
  std::map<std::string, std::size_t, std::less<>> first_line;
  for_each_json_line(text, [&](std::size_t line_no, const nlohmann::json& j) {
    auto r = record_from_json(j, extra_keys);
    auto [it, inserted] = first_line.emplace(r.utt_id, line_no);
    if (!inserted) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate utt_id '" + r.utt_id +
                      "' (first seen on line " + std::to_string(it->second) + ")");
    }
    records.push_back(std::move(r));
  });
  return records;
}

/// Reads a JSON Lines manifest; records are returned in file order.
inline std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path));
}

inline std::string manifest_to_string(std::span<const UtteranceRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void save_manifest(std::span<const UtteranceRecord> records, const std::filesystem::path& path) {
  io::write_file_atomic(path, manifest_to_string(records));
}

/// Id-indexed collection of fixed-dimension embeddings. Values are held as
/// 32-bit floats, the on-disk precision, so a save/load cycle is exact;
/// similarity math widens to double.
class EmbeddingStore {
 public:
  using Vector = std::vector<float>;
  using Map = std::map<std::string, Vector, std::less<>>;

  EmbeddingStore() = default;
  explicit EmbeddingStore(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool contains(std::string_view id) const { return entries_.find(id) != entries_.end(); }

  /// Iteration is in ascending utt_id order.
  const Map& entries() const noexcept { return entries_; }

  template <typename T>
  void insert(std::string id, std::span<const T> values) {
    if (values.size() != dim_) {
      throw DataError("embedding '" + id + "' has " + std::to_string(values.size()) +
                      " components, store dim is " + std::to_string(dim_));
    }
    Vector v(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = static_cast<float>(values[i]);
      if (!std::isfinite(v[i])) throw DataError("embedding '" + id + "' has a non-finite value");
    }
    if (entries_.contains(id)) throw DataError("duplicate utt_id '" + id + "' in embedding store");
    entries_.emplace(std::move(id), std::move(v));
  }
  template <typename T>
  void insert(std::string id, const std::vector<T>& values) {
    insert(std::move(id), std::span<const T>(values));
  }

  std::span<const float> get(std::string_view id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw DataError("no embedding for utt_id '" + std::string(id) + "'");
    return it->second;
  }

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;

 private:
  std::uint32_t dim_ = 0;
  Map entries_;
};

inline std::span<const float> get(const EmbeddingStore& store, std::string_view id) { return store.get(id); }

// VCAE layout: "VCAE", u32 version, u32 dim, u64 count, then per record
// {u32 id length, id bytes, dim x f32}. Records in ascending utt_id order.
inline constexpr char kStoreMagic[4] = {'V', 'C', 'A', 'E'};
inline constexpr std::uint32_t kStoreVersion = 1;

inline std::string serialize_store(const EmbeddingStore& store) {
  if (store.dim() == 0) throw DataError("refusing to serialize a store with dim = 0");
  io::ByteWriter w;
  w.put_bytes(std::string_view(kStoreMagic, 4));
  w.put<std::uint32_t>(kStoreVersion);
  w.put<std::uint32_t>(store.dim());
  w.put<std::uint64_t>(store.size());
  for (const auto& [id, vec] : store.entries()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.put_bytes(id);
    for (float x : vec) w.put<float>(x);
  }
  return std::move(w).take();
}

inline EmbeddingStore deserialize_store(std::string_view bytes) {
  io::ByteReader r(bytes);
  auto magic = r.get_bytes(4, "magic");
  if (magic != std::string_view(kStoreMagic, 4)) throw DataError("bad magic: not a VCAE embedding file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kStoreVersion) {
    throw DataError("unsupported VCAE version " + std::to_string(version));
  }
  const auto dim = r.get<std::uint32_t>("dim");
  const auto count = r.get<std::uint64_t>("count");
  if (dim == 0) throw DataError("VCAE header declares dim = 0");
  // Each record needs at least 4 + dim * 4 bytes.
  const std::uint64_t min_record = 4 + std::uint64_t{dim} * 4;
  if (count > r.remaining() / min_record) {
    throw DataError("truncated payload: header declares " + std::to_string(count) + " records of dim " +
                    std::to_string(dim) + " but only " + std::to_string(r.remaining()) + " bytes follow");
  }
  EmbeddingStore store(dim);
  std::vector<float> values(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("id length");
    std::string id(r.get_bytes(len, "id"));
    for (auto& v : values) v = r.get<float>("embedding values");
    store.insert(std::move(id), std::span<const float>(values));
  }
  if (r.remaining() != 0) {
    throw DataError("trailing bytes after " + std::to_string(count) + " declared records");
  }
  return store;
}

inline EmbeddingStore load_store(const std::filesystem::path& path) {
  return deserialize_store(io::read_file(path));
}

inline void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_store(store));
}

}  // namespace vca
