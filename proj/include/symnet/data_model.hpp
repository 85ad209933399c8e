#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "symnet/binary_io.hpp"
#include "symnet/error.hpp"
#include "symnet/matrix.hpp"

namespace symnet {

// Warnings from the library go through this sink; the CLI leaves it on stderr.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct Pair {
  std::size_t attr = 0;
  std::size_t obj = 0;
  friend auto operator<=>(const Pair&, const Pair&) = default;
};

struct SampleRecord {
  std::string sample_id;
  std::size_t attr = 0;
  std::size_t obj = 0;
  Split split = Split::Train;
};

struct DatasetMeta {
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
  std::vector<Pair> train_pairs;
  std::vector<Pair> test_pairs;
  std::optional<std::vector<Pair>> val_pairs;
  std::vector<SampleRecord> samples;

  std::size_t n_attrs() const { return attributes.size(); }
  std::size_t n_objs() const { return objects.size(); }

  bool is_train_pair(std::size_t a, std::size_t o) const {
    return std::find(train_pairs.begin(), train_pairs.end(), Pair{a, o}) != train_pairs.end();
  }

  std::vector<std::size_t> sample_indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == split) out.push_back(i);
    return out;
  }

  std::optional<std::size_t> find_sample(const std::string& id) const {
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].sample_id == id) return i;
    return std::nullopt;
  }
};

// Raw image features (count x dim) and attribute word vectors (n x dim).
using FeatureMatrix = Matrix<float>;
using EmbeddingTable = Matrix<float>;

inline constexpr std::string_view kFeatureMagic = "SYMF";
inline constexpr std::string_view kEmbeddingMagic = "SYME";
inline constexpr std::uint32_t kTensorFileVersion = 1;

// ---------------------------------------------------------------------------
// Metadata

namespace detail {

inline void violation(const std::string& rule) { fail(ErrorCode::InvariantViolation, rule); }

inline std::string pair_str(const Pair& p) {
  return "(" + std::to_string(p.attr) + "," + std::to_string(p.obj) + ")";
}

inline void check_pairs(const std::vector<Pair>& pairs, const DatasetMeta& m, const char* field) {
  std::set<Pair> seen;
  for (const auto& p : pairs) {
    if (p.attr >= m.n_attrs() || p.obj >= m.n_objs())
      violation(std::string(field) + " pair " + pair_str(p) + " out of range");
    if (!seen.insert(p).second) violation(std::string(field) + " has duplicate pair " + pair_str(p));
  }
}

}  // namespace detail

// Throws InvariantViolation naming the first broken rule.
//
// Test-split samples may carry a train pair: those are the seen-pair held-out
// samples the generalized protocol scores. Closed-world evaluation only uses
// test samples whose pair is in test_pairs.
inline void validate(const DatasetMeta& m) {
  using detail::violation;
  auto unique = [](const std::vector<std::string>& names, const char* field) {
    std::unordered_set<std::string> seen;
    for (const auto& n : names)
      if (!seen.insert(n).second) violation(std::string(field) + " name '" + n + "' is not unique");
  };
  unique(m.attributes, "attributes");
  unique(m.objects, "objects");
  detail::check_pairs(m.train_pairs, m, "train_pairs");
  detail::check_pairs(m.test_pairs, m, "test_pairs");
  if (m.val_pairs) detail::check_pairs(*m.val_pairs, m, "val_pairs");

  const std::set<Pair> train(m.train_pairs.begin(), m.train_pairs.end());
  const std::set<Pair> test(m.test_pairs.begin(), m.test_pairs.end());
  std::set<std::size_t> train_attrs, train_objs;
  for (const auto& p : m.train_pairs) {
    train_attrs.insert(p.attr);
    train_objs.insert(p.obj);
  }
  for (const auto& p : m.test_pairs) {
    if (train.contains(p)) violation("train_pairs and test_pairs overlap at " + detail::pair_str(p));
    if (!train_attrs.contains(p.attr))
      violation("test attribute " + std::to_string(p.attr) + " never appears in train_pairs");
    if (!train_objs.contains(p.obj))
      violation("test object " + std::to_string(p.obj) + " never appears in train_pairs");
  }
  std::set<Pair> val;
  if (m.val_pairs) val.insert(m.val_pairs->begin(), m.val_pairs->end());

  std::unordered_set<std::string> ids;
  for (const auto& s : m.samples) {
    if (!ids.insert(s.sample_id).second) violation("duplicate sample id '" + s.sample_id + "'");
    if (s.attr >= m.n_attrs() || s.obj >= m.n_objs())
      violation("sample '" + s.sample_id + "' label out of range");
    const Pair p{s.attr, s.obj};
    switch (s.split) {
      case Split::Train:
        if (!train.contains(p))
          violation("train sample '" + s.sample_id + "' has pair " + detail::pair_str(p) +
                    " outside train_pairs");
        break;
      case Split::Test:
        if (!test.contains(p) && !train.contains(p))
          violation("test sample '" + s.sample_id + "' has pair " + detail::pair_str(p) +
                    " outside test_pairs");
        break;
      case Split::Val:
        if (!train.contains(p) && !test.contains(p) && !val.contains(p))
          violation("val sample '" + s.sample_id + "' has an unknown pair " + detail::pair_str(p));
        break;
    }
  }
}

namespace detail {

using nlohmann::json;

inline const json& field(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object()) fail(ErrorCode::ParseError, ctx + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorCode::ParseError, ctx + ": missing field '" + key + "'");
  return *it;
}

inline std::size_t index_value(const json& j, const std::string& ctx) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0)
    fail(ErrorCode::ParseError, ctx + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::vector<std::string> names(const json& j, const std::string& ctx) {
  if (!j.is_array()) fail(ErrorCode::ParseError, ctx + ": expected an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_string()) fail(ErrorCode::ParseError, ctx + "[" + std::to_string(i) + "]: expected a string");
    out.push_back(j[i].get<std::string>());
  }
  return out;
}

inline std::vector<Pair> pairs(const json& j, const std::string& ctx) {
  if (!j.is_array()) fail(ErrorCode::ParseError, ctx + ": expected an array");
  std::vector<Pair> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string c = ctx + "[" + std::to_string(i) + "]";
    if (!j[i].is_array() || j[i].size() != 2) fail(ErrorCode::ParseError, c + ": expected [attr, obj]");
    out.push_back({index_value(j[i][0], c + "[0]"), index_value(j[i][1], c + "[1]")});
  }
  return out;
}

inline json pairs_json(const std::vector<Pair>& ps) {
  json arr = json::array();
  for (const auto& p : ps) arr.push_back({p.attr, p.obj});
  return arr;
}

inline std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
}

}  // namespace detail

inline DatasetMeta parse_metadata(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, "meta.json line " + std::to_string(detail::line_of(text, e.byte)) + ": " +
                                    e.what());
  }
  DatasetMeta m;
  m.attributes = detail::names(detail::field(j, "attributes", "meta"), "attributes");
  m.objects = detail::names(detail::field(j, "objects", "meta"), "objects");
  m.train_pairs = detail::pairs(detail::field(j, "train_pairs", "meta"), "train_pairs");
  m.test_pairs = detail::pairs(detail::field(j, "test_pairs", "meta"), "test_pairs");
  if (j.contains("val_pairs") && !j["val_pairs"].is_null())
    m.val_pairs = detail::pairs(j["val_pairs"], "val_pairs");
  const json& samples = detail::field(j, "samples", "meta");
  if (!samples.is_array()) fail(ErrorCode::ParseError, "samples: expected an array");
  m.samples.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string ctx = "samples[" + std::to_string(i) + "]";
    const json& s = samples[i];
    SampleRecord r;
    const json& id = detail::field(s, "id", ctx);
    if (!id.is_string()) fail(ErrorCode::ParseError, ctx + ".id: expected a string");
    r.sample_id = id.get<std::string>();
    r.attr = detail::index_value(detail::field(s, "attr", ctx), ctx + ".attr");
    r.obj = detail::index_value(detail::field(s, "obj", ctx), ctx + ".obj");
    const json& split = detail::field(s, "split", ctx);
    const std::string sp = split.is_string() ? split.get<std::string>() : "";
    if (sp == "train") r.split = Split::Train;
    else if (sp == "val") r.split = Split::Val;
    else if (sp == "test") r.split = Split::Test;
    else fail(ErrorCode::ParseError, ctx + ".split: expected \"train\", \"val\" or \"test\"");
    m.samples.push_back(std::move(r));
  }
  validate(m);
  return m;
}

inline DatasetMeta load_metadata(const std::filesystem::path& path) {
  return parse_metadata(io::read_text(path));
}

inline std::string metadata_to_json(const DatasetMeta& m) {
  using detail::json;
  json j;
  j["attributes"] = m.attributes;
  j["objects"] = m.objects;
  j["train_pairs"] = detail::pairs_json(m.train_pairs);
  j["test_pairs"] = detail::pairs_json(m.test_pairs);
  if (m.val_pairs) j["val_pairs"] = detail::pairs_json(*m.val_pairs);
  json samples = json::array();
  for (const auto& s : m.samples)
    samples.push_back({{"id", s.sample_id}, {"attr", s.attr}, {"obj", s.obj}, {"split", split_name(s.split)}});
  j["samples"] = std::move(samples);
  return j.dump(1);
}

inline void save_metadata(const DatasetMeta& m, const std::filesystem::path& path) {
  io::write_text(path, metadata_to_json(m) + "\n");
}

// ---------------------------------------------------------------------------
// SYMF / SYME tensor files

inline io::Bytes encode_tensor_file(const Matrix<float>& m, std::string_view magic) {
  io::Bytes out;
  out.reserve(16 + 4 * m.size());
  io::put_bytes(out, magic);
  io::put_u32(out, kTensorFileVersion);
  io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) io::put_f32(out, v);
  return out;
}

inline Matrix<float> decode_tensor_file(const io::Bytes& bytes, std::string_view magic,
                                        const std::string& context) {
  io::Reader r(bytes, context);
  if (bytes.size() < 4 || r.bytes(4, "magic") != magic) {
    fail(ErrorCode::BadMagic, context + ": expected magic " + std::string(magic));
  }
  const std::uint32_t version = r.u32("version");
  if (version != kTensorFileVersion)
    fail(ErrorCode::VersionMismatch, context + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  if (dim == 0) fail(ErrorCode::ParseError, context + ": dim must be positive");
  const std::uint64_t expected = std::uint64_t(count) * dim * 4;
  if (r.remaining() != expected) {
    fail(ErrorCode::ParseError, context + ": header declares " + std::to_string(count) + "x" +
                                    std::to_string(dim) + " floats but payload has " +
                                    std::to_string(r.remaining()) + " bytes");
  }
  Matrix<float> m(count, dim);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float v = r.f32("payload");
    if (!std::isfinite(v)) {
      fail(ErrorCode::NonFiniteValue, context + ": non-finite value at row " + std::to_string(i / dim));
    }
    m[i] = v;
  }
  return m;
}

inline FeatureMatrix load_features(const std::filesystem::path& path,
                                   std::optional<std::size_t> expected_count = std::nullopt) {
  FeatureMatrix m = decode_tensor_file(io::read_file(path), kFeatureMagic, path.string());
  if (expected_count && m.rows() != *expected_count) {
    fail(ErrorCode::DimensionMismatch, path.string() + ": " + std::to_string(m.rows()) +
                                           " feature rows for " + std::to_string(*expected_count) +
                                           " samples");
  }
  return m;
}

inline void save_features(const FeatureMatrix& m, const std::filesystem::path& path) {
  io::write_file(path, encode_tensor_file(m, kFeatureMagic));
}

// Rows are positional: row i embeds meta.attributes[i]. A zero expected_dim
// accepts any width.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path, const DatasetMeta& meta,
                                      std::size_t expected_dim = 0) {
  EmbeddingTable t = decode_tensor_file(io::read_file(path), kEmbeddingMagic, path.string());
  if (t.rows() != meta.n_attrs()) {
    fail(ErrorCode::RowCountMismatch, path.string() + ": " + std::to_string(t.rows()) +
                                          " rows for " + std::to_string(meta.n_attrs()) + " attributes");
  }
  if (expected_dim != 0 && t.cols() != expected_dim) {
    fail(ErrorCode::DimMismatch, path.string() + ": embedding dim " + std::to_string(t.cols()) +
                                     ", expected " + std::to_string(expected_dim));
  }
  return t;
}

inline void save_embeddings(const EmbeddingTable& t, const std::filesystem::path& path) {
  io::write_file(path, encode_tensor_file(t, kEmbeddingMagic));
}

inline EmbeddingTable one_hot_embeddings(std::size_t n) {
  EmbeddingTable t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

// ---------------------------------------------------------------------------
// Candidate masks

enum class Protocol { ClosedWorld, Generalized };

struct PairMask {
  std::size_t n = 0;
  std::size_t m = 0;
  Protocol protocol = Protocol::ClosedWorld;
  std::vector<std::uint8_t> cells;

  bool operator()(std::size_t a, std::size_t o) const { return cells[a * m + o] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }
};

// The unseen candidate pairs of an evaluation split. Val falls back to
// test_pairs when the metadata has no val_pairs.
inline const std::vector<Pair>& eval_pairs(const DatasetMeta& meta, Split split) {
  if (split == Split::Val) {
    if (meta.val_pairs) return *meta.val_pairs;
    warn("metadata has no val_pairs; validation reuses test_pairs");
  }
  return meta.test_pairs;
}

inline PairMask build_pair_mask(const DatasetMeta& meta, Protocol protocol, Split split = Split::Test) {
  PairMask mask;
  mask.n = meta.n_attrs();
  mask.m = meta.n_objs();
  mask.protocol = protocol;
  mask.cells.assign(mask.n * mask.m, 0);
  for (const auto& p : eval_pairs(meta, split)) mask.cells[p.attr * mask.m + p.obj] = 1;
  if (protocol == Protocol::Generalized)
    for (const auto& p : meta.train_pairs) mask.cells[p.attr * mask.m + p.obj] = 1;
  return mask;
}

// ---------------------------------------------------------------------------
// Negative sampling

// Index of train samples by object, for drawing negatives with the same object
// and a different attribute.
class NegativeSampler {
 public:
  explicit NegativeSampler(const DatasetMeta& meta) : meta_(&meta), by_obj_(meta.n_objs()) {
    for (std::size_t i = 0; i < meta.samples.size(); ++i)
      if (meta.samples[i].split == Split::Train) by_obj_[meta.samples[i].obj].push_back(i);
  }

  // Uniform draw among eligible train samples. Samples flagged in `used` are
  // skipped while any unused candidate remains. Returns nullopt when the
  // object appears with a single attribute.
  template <typename Rng>
  std::optional<std::size_t> sample(std::size_t attr, std::size_t obj, Rng& rng,
                                    const std::vector<std::uint8_t>* used = nullptr) const {
    candidates_.clear();
    for (std::size_t idx : by_obj_.at(obj))
      if (meta_->samples[idx].attr != attr) candidates_.push_back(idx);
    if (candidates_.empty()) return std::nullopt;
    if (used) {
      fresh_.clear();
      for (std::size_t idx : candidates_)
        if (!(*used)[idx]) fresh_.push_back(idx);
      if (!fresh_.empty()) return pick(fresh_, rng);
    }
    return pick(candidates_, rng);
  }

 private:
  template <typename Rng>
  static std::size_t pick(const std::vector<std::size_t>& from, Rng& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, from.size() - 1);
    return from[dist(rng)];
  }

  const DatasetMeta* meta_;
  std::vector<std::vector<std::size_t>> by_obj_;
  mutable std::vector<std::size_t> candidates_;
  mutable std::vector<std::size_t> fresh_;
};

template <typename Rng>
const SampleRecord& sample_negative(const DatasetMeta& meta, const SampleRecord& anchor, Rng& rng) {
  const NegativeSampler sampler(meta);
  const auto idx = sampler.sample(anchor.attr, anchor.obj, rng);
  if (!idx) {
    fail(ErrorCode::NoNegativeAvailable, "object " + std::to_string(anchor.obj) +
                                             " has no train sample with an attribute other than " +
                                             std::to_string(anchor.attr));
  }
  return meta.samples[*idx];
}

}  // namespace symnet
