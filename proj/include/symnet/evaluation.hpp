#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symnet/binary_io.hpp"
#include "symnet/checkpoint.hpp"
#include "symnet/data_model.hpp"
#include "symnet/error.hpp"
#include "symnet/rmd.hpp"

namespace symnet {

// ---------------------------------------------------------------------------
// Reports

struct CzslReport {
  std::map<std::size_t, double> topk;
  double attr_acc = 0;
  double obj_acc = 0;
  std::size_t n_samples = 0;
};

struct ComponentReport {
  double attr_acc = 0;
  double obj_acc = 0;
  std::size_t n_samples = 0;
};

struct GeneralizedReport {
  std::vector<double> bias_grid;  // top-1 grid, ascending, with -inf / +inf ends
  std::vector<double> seen_curve;
  std::vector<double> unseen_curve;
  std::map<std::size_t, double> auc_topk;
  double best_hm = 0;
  double seen_at_best = 0;
  double unseen_at_best = 0;
  double bias_at_best = 0;
  std::size_t n_seen = 0;
  std::size_t n_unseen = 0;
};

// Scores for one evaluated sample: the full n x m pair matrix plus its truth.
struct ScoredSample {
  std::vector<double> pair;  // n x m, row-major
  Pair truth;
};

// ---------------------------------------------------------------------------
// Metric cores over precomputed scores

// Position of the truth cell among admitted cells under ranks_before.
inline std::size_t truth_rank(std::span<const double> scores, std::size_t truth_cell,
                              std::span<const std::uint8_t> admitted) {
  std::size_t rank = 0;
  const double t = scores[truth_cell];
  for (std::size_t c = 0; c < scores.size(); ++c)
    if (admitted[c] && c != truth_cell && ranks_before(scores[c], c, t, truth_cell)) ++rank;
  return rank;
}

inline std::size_t argmax_first(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline ComponentReport component_accuracy(std::span<const SampleScores> scores, std::span<const Pair> truths) {
  ComponentReport r;
  r.n_samples = scores.size();
  if (scores.empty()) return r;
  std::size_t attr_ok = 0, obj_ok = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (argmax_first(scores[i].p_attr) == truths[i].attr) ++attr_ok;
    if (argmax_first(scores[i].p_obj) == truths[i].obj) ++obj_ok;
  }
  r.attr_acc = double(attr_ok) / double(scores.size());
  r.obj_acc = double(obj_ok) / double(scores.size());
  return r;
}

// Closed-world top-k over admitted cells. Every truth must be admitted.
inline std::map<std::size_t, double> closed_topk(std::span<const ScoredSample> samples, const PairMask& mask,
                                                 std::span<const std::size_t> ks) {
  if (mask.count() == 0) fail(ErrorCode::EmptyCandidateSet, "closed-world mask admits no pairs");
  std::map<std::size_t, double> out;
  for (std::size_t k : ks) out[k] = 0;
  if (samples.empty()) return out;
  for (const auto& s : samples) {
    const std::size_t cell = s.truth.attr * mask.m + s.truth.obj;
    if (!mask.cells[cell]) fail(ErrorCode::InvariantViolation, "truth pair is not a candidate");
    const std::size_t rank = truth_rank(s.pair, cell, mask.cells);
    for (std::size_t k : ks)
      if (rank < k) out[k] += 1;
  }
  for (auto& [k, v] : out) v /= double(samples.size());
  return out;
}

inline double harmonic_mean(double s, double u) { return s + u > 0 ? 2 * s * u / (s + u) : 0.0; }

// Trapezoid area under the unseen-vs-seen curve, points sorted by seen.
inline double trapezoid_auc(std::span<const double> seen, std::span<const double> unseen) {
  if (seen.size() != unseen.size()) fail(ErrorCode::ShapeMismatch, "curve lengths differ");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < seen.size(); ++i) pts.emplace_back(seen[i], unseen[i]);
  std::sort(pts.begin(), pts.end());
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2;
  return area;
}

// For a sample and k, the bias where top-k correctness flips. A seen-truth
// sample is correct for bias < threshold, an unseen-truth sample for
// bias > threshold. Infinite thresholds mean "never" / "always".
inline double flip_bias(std::span<const double> scores, std::size_t truth_cell, std::span<const std::uint8_t> admitted,
                        std::span<const std::uint8_t> unseen, std::size_t k) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const bool truth_unseen = unseen[truth_cell] != 0;
  const double t = scores[truth_cell];
  std::size_t fixed_before = 0;
  std::vector<double> other;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (!admitted[c] || c == truth_cell) continue;
    if ((unseen[c] != 0) == truth_unseen) {
      if (ranks_before(scores[c], c, t, truth_cell)) ++fixed_before;
    } else {
      other.push_back(scores[c]);
    }
  }
  if (fixed_before >= k) return truth_unseen ? inf : -inf;
  const std::size_t r = k - fixed_before;
  if (other.size() < r) return truth_unseen ? -inf : inf;
  std::nth_element(other.begin(), other.begin() + static_cast<std::ptrdiff_t>(r - 1), other.end(), std::greater<>());
  const double pivot = other[r - 1];
  return truth_unseen ? pivot - t : t - pivot;
}

struct BiasGridSpec {
  std::optional<std::vector<double>> explicit_grid;  // exact sweep when absent
};

struct Curve {
  std::vector<double> grid, seen, unseen;
};

inline Curve sweep(std::span<const double> thresholds, std::span<const std::uint8_t> is_unseen,
                   const BiasGridSpec& spec) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Curve c;
  if (spec.explicit_grid) {
    if (spec.explicit_grid->empty()) fail(ErrorCode::EmptyGrid, "bias grid is empty");
    c.grid = *spec.explicit_grid;
    std::sort(c.grid.begin(), c.grid.end());
  } else {
    if (thresholds.empty()) fail(ErrorCode::EmptyGrid, "no samples to derive a bias grid from");
    std::vector<double> finite;
    for (double t : thresholds)
      if (std::isfinite(t)) finite.push_back(t);
    std::sort(finite.begin(), finite.end());
    finite.erase(std::unique(finite.begin(), finite.end()), finite.end());
    c.grid.push_back(-inf);
    for (std::size_t i = 1; i < finite.size(); ++i) c.grid.push_back((finite[i - 1] + finite[i]) / 2);
    c.grid.push_back(inf);
  }
  std::size_t n_seen = 0, n_unseen = 0;
  for (auto u : is_unseen) (u ? n_unseen : n_seen)++;
  for (double b : c.grid) {
    std::size_t seen_ok = 0, unseen_ok = 0;
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      // An infinite threshold in the sample's favour means correct at every
      // bias, the infinite grid ends included.
      const double t = thresholds[i];
      if (is_unseen[i]) unseen_ok += t == -inf || b > t;
      else seen_ok += t == inf || b < t;
    }
    c.seen.push_back(n_seen ? double(seen_ok) / double(n_seen) : 0.0);
    c.unseen.push_back(n_unseen ? double(unseen_ok) / double(n_unseen) : 0.0);
  }
  return c;
}

// Generalized protocol: admitted cells are seen plus unseen candidate pairs;
// `unseen` flags the cells that receive the calibration bias.
inline GeneralizedReport generalized_metrics(std::span<const ScoredSample> samples, const PairMask& mask,
                                             std::span<const std::uint8_t> unseen, std::span<const std::size_t> ks,
                                             const BiasGridSpec& spec = {}) {
  GeneralizedReport rep;
  std::vector<std::uint8_t> truth_unseen;
  for (const auto& s : samples) {
    const std::size_t cell = s.truth.attr * mask.m + s.truth.obj;
    if (!mask.cells[cell]) fail(ErrorCode::InvariantViolation, "truth pair is not a candidate");
    truth_unseen.push_back(unseen[cell]);
  }
  rep.n_unseen = static_cast<std::size_t>(std::count(truth_unseen.begin(), truth_unseen.end(), 1));
  rep.n_seen = samples.size() - rep.n_unseen;
  if (!samples.empty() && (rep.n_seen == 0 || rep.n_unseen == 0))
    warn("generalized evaluation has no " + std::string(rep.n_seen == 0 ? "seen" : "unseen") + "-pair samples");

  std::vector<std::size_t> all_k(ks.begin(), ks.end());
  if (std::find(all_k.begin(), all_k.end(), 1) == all_k.end()) all_k.push_back(1);
  for (std::size_t k : all_k) {
    std::vector<double> thresholds;
    thresholds.reserve(samples.size());
    for (const auto& s : samples)
      thresholds.push_back(flip_bias(s.pair, s.truth.attr * mask.m + s.truth.obj, mask.cells, unseen, k));
    const Curve c = sweep(thresholds, truth_unseen, spec);
    if (std::find(ks.begin(), ks.end(), k) != ks.end()) rep.auc_topk[k] = trapezoid_auc(c.seen, c.unseen);
    if (k == 1) {
      rep.bias_grid = c.grid;
      rep.seen_curve = c.seen;
      rep.unseen_curve = c.unseen;
      rep.best_hm = -1;
      for (std::size_t i = 0; i < c.grid.size(); ++i) {
        const double hm = harmonic_mean(c.seen[i], c.unseen[i]);
        if (hm > rep.best_hm) {
          rep.best_hm = hm;
          rep.seen_at_best = c.seen[i];
          rep.unseen_at_best = c.unseen[i];
          rep.bias_at_best = c.grid[i];
        }
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Model-driven evaluation

struct EvalInputs {
  const DatasetMeta& meta;
  const FeatureMatrix& features;
  const EmbeddingTable& embeds;
};

inline void check_eval_inputs(const Checkpoint& ck, const EvalInputs& in) {
  const auto& mc = ck.model.config;
  if (in.features.rows() != in.meta.samples.size())
    fail(ErrorCode::DimensionMismatch, "feature rows do not match sample count");
  if (in.features.cols() != mc.feat_dim) fail(ErrorCode::DimMismatch, "feature dim does not match checkpoint");
  if (in.embeds.rows() != mc.n_attrs || in.meta.n_attrs() != mc.n_attrs)
    fail(ErrorCode::RowCountMismatch, "attribute count does not match checkpoint");
  if (in.embeds.cols() != mc.embed_dim) fail(ErrorCode::DimMismatch, "embedding dim does not match checkpoint");
  if (in.meta.n_objs() != mc.n_objs) fail(ErrorCode::DimMismatch, "object count does not match checkpoint");
}

inline std::vector<SampleScores> score_samples(const Checkpoint& ck, const EvalInputs& in,
                                               std::span<const std::size_t> rows) {
  check_eval_inputs(ck, in);
  return infer(ck.model, in.features, rows, in.embeds, ck.config.gamma, distance_config(ck.config));
}

inline std::vector<ScoredSample> to_scored(std::span<const SampleScores> scores, std::span<const Pair> truths) {
  std::vector<ScoredSample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    const std::size_t n = s.p_attr.size(), m = s.p_obj.size();
    out[i].pair.resize(n * m);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t o = 0; o < m; ++o) out[i].pair[a * m + o] = s.p_attr[a] * s.p_obj[o];
    out[i].truth = truths[i];
  }
  return out;
}

// Samples of `split` whose pair is admitted by the closed-world mask.
inline std::vector<std::size_t> closed_world_rows(const DatasetMeta& meta, const PairMask& mask, Split split) {
  std::vector<std::size_t> rows;
  for (std::size_t i : meta.sample_indices(split))
    if (mask(meta.samples[i].attr, meta.samples[i].obj)) rows.push_back(i);
  return rows;
}

inline std::vector<Pair> truths_of(const DatasetMeta& meta, std::span<const std::size_t> rows) {
  std::vector<Pair> t;
  for (std::size_t i : rows) t.push_back({meta.samples[i].attr, meta.samples[i].obj});
  return t;
}

struct ClosedEvaluation {
  CzslReport report;
  std::vector<std::size_t> rows;
  std::vector<ScoredSample> scored;
};

inline ClosedEvaluation evaluate_closed_full(const Checkpoint& ck, const EvalInputs& in,
                                             std::span<const std::size_t> ks, Split split = Split::Test) {
  const PairMask mask = build_pair_mask(in.meta, Protocol::ClosedWorld, split);
  if (mask.count() == 0) fail(ErrorCode::EmptyCandidateSet, "closed-world mask admits no pairs");
  ClosedEvaluation ev;
  ev.rows = closed_world_rows(in.meta, mask, split);
  if (ev.rows.empty()) fail(ErrorCode::InvariantViolation, "evaluation split has no unseen-pair samples");
  const auto scores = score_samples(ck, in, ev.rows);
  const auto truths = truths_of(in.meta, ev.rows);
  ev.scored = to_scored(scores, truths);
  ev.report.topk = closed_topk(ev.scored, mask, ks);
  const auto comp = component_accuracy(scores, truths);
  ev.report.attr_acc = comp.attr_acc;
  ev.report.obj_acc = comp.obj_acc;
  ev.report.n_samples = ev.rows.size();
  return ev;
}

inline CzslReport evaluate_closed(const Checkpoint& ck, const EvalInputs& in,
                                  std::span<const std::size_t> ks = std::vector<std::size_t>{1, 2, 3},
                                  Split split = Split::Test) {
  return evaluate_closed_full(ck, in, ks, split).report;
}

// Attribute and object accuracy by independent argmax over every sample of
// the split.
inline ComponentReport evaluate_components(const Checkpoint& ck, const EvalInputs& in, Split split = Split::Test) {
  const auto rows = in.meta.sample_indices(split);
  const auto scores = score_samples(ck, in, rows);
  return component_accuracy(scores, truths_of(in.meta, rows));
}

struct GeneralizedEvaluation {
  GeneralizedReport report;
  std::vector<std::size_t> rows;
  std::vector<ScoredSample> scored;
};

inline GeneralizedEvaluation evaluate_generalized_full(const Checkpoint& ck, const EvalInputs& in,
                                                       std::span<const std::size_t> ks, const BiasGridSpec& spec = {},
                                                       Split split = Split::Test) {
  const PairMask mask = build_pair_mask(in.meta, Protocol::Generalized, split);
  std::vector<std::uint8_t> unseen(mask.cells.size(), 0);
  for (std::size_t c = 0; c < unseen.size(); ++c)
    unseen[c] = mask.cells[c] && !in.meta.is_train_pair(c / mask.m, c % mask.m);
  GeneralizedEvaluation ev;
  for (std::size_t i : in.meta.sample_indices(split))
    if (mask(in.meta.samples[i].attr, in.meta.samples[i].obj)) ev.rows.push_back(i);
  const auto scores = score_samples(ck, in, ev.rows);
  ev.scored = to_scored(scores, truths_of(in.meta, ev.rows));
  ev.report = generalized_metrics(ev.scored, mask, unseen, ks, spec);
  return ev;
}

inline GeneralizedReport evaluate_generalized(const Checkpoint& ck, const EvalInputs& in,
                                              std::span<const std::size_t> ks = std::vector<std::size_t>{1, 2, 3},
                                              const BiasGridSpec& spec = {}, Split split = Split::Test) {
  return evaluate_generalized_full(ck, in, ks, spec, split).report;
}

// ---------------------------------------------------------------------------
// Score dump: "SYMS" u32 count u32 n u32 m, then count x n*m f32 with masked
// cells written as NaN.

inline io::Bytes encode_score_dump(std::span<const ScoredSample> samples, const PairMask& mask) {
  io::Bytes out;
  io::put_bytes(out, "SYMS");
  io::put_u32(out, static_cast<std::uint32_t>(samples.size()));
  io::put_u32(out, static_cast<std::uint32_t>(mask.n));
  io::put_u32(out, static_cast<std::uint32_t>(mask.m));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (const auto& s : samples)
    for (std::size_t c = 0; c < s.pair.size(); ++c) io::put_f32(out, mask.cells[c] ? float(s.pair[c]) : nan);
  return out;
}

struct ScoreDump {
  std::size_t n = 0, m = 0;
  std::vector<std::vector<float>> scores;
};

inline ScoreDump decode_score_dump(const io::Bytes& bytes) {
  io::Reader r(bytes, "score dump");
  if (bytes.size() < 4 || r.bytes(4, "magic") != "SYMS") fail(ErrorCode::BadMagic, "expected magic SYMS");
  ScoreDump d;
  const std::size_t count = r.u32("count");
  d.n = r.u32("n");
  d.m = r.u32("m");
  r.need(count * d.n * d.m * 4, "scores");
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<float> row(d.n * d.m);
    for (auto& v : row) v = r.f32("score");
    d.scores.push_back(std::move(row));
  }
  if (!r.at_end()) fail(ErrorCode::ParseError, "score dump: trailing bytes");
  return d;
}

inline io::Bytes encode_score_dump(const ScoreDump& d) {
  io::Bytes out;
  io::put_bytes(out, "SYMS");
  io::put_u32(out, static_cast<std::uint32_t>(d.scores.size()));
  io::put_u32(out, static_cast<std::uint32_t>(d.n));
  io::put_u32(out, static_cast<std::uint32_t>(d.m));
  for (const auto& row : d.scores)
    for (float v : row) io::put_f32(out, v);
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval after attribute manipulation

struct RetrievalHit {
  std::size_t rank = 0;  // 1-based
  std::size_t sample = 0;
  std::string sample_id;
  double distance = 0;
};

// k nearest gallery rows to `query` by L2, skipping `exclude`; ties by
// gallery position.
template <typename T>
std::vector<std::pair<std::size_t, double>> nearest_rows(std::span<const T> query, const Matrix<T>& gallery,
                                                         std::optional<std::size_t> exclude, std::size_t k) {
  std::vector<std::pair<std::size_t, double>> d;
  for (std::size_t i = 0; i < gallery.rows(); ++i) {
    if (exclude && *exclude == i) continue;
    d.emplace_back(i, static_cast<double>(l2_distance<T>(query, gallery.row(i))));
  }
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(), [](const auto& a, const auto& b) {
    return a.second < b.second || (a.second == b.second && a.first < b.first);
  });
  d.resize(k);
  return d;
}

// q = f . T-(remove) . T+(add)
template <typename T>
Var manipulated_query(Graph<T>&, Var f, Var remove_emb, Var add_emb, const TransformFn<T>& con,
                      const TransformFn<T>& decon) {
  return con(decon(f, remove_emb), add_emb);
}

inline std::vector<RetrievalHit> retrieve(const Checkpoint& ck, const EvalInputs& in, const std::string& source_id,
                                          std::size_t remove_attr, std::size_t add_attr, std::size_t k) {
  check_eval_inputs(ck, in);
  const auto src = in.meta.find_sample(source_id);
  if (!src) fail(ErrorCode::UnknownSampleId, "no sample '" + source_id + "'");
  if (remove_attr >= in.meta.n_attrs() || add_attr >= in.meta.n_attrs())
    fail(ErrorCode::AttrOutOfRange, "attribute index out of range");
  if (remove_attr == add_attr) fail(ErrorCode::IdenticalAttrIndices, "remove and add attributes must differ");
  if (k == 0) fail(ErrorCode::InvalidConfig, "k must be at least 1");

  const auto gallery_rows = in.meta.sample_indices(Split::Test);
  Matrix<float> raw(gallery_rows.size(), in.features.cols());
  std::optional<std::size_t> exclude;
  for (std::size_t i = 0; i < gallery_rows.size(); ++i) {
    std::copy(in.features.row(gallery_rows[i]).begin(), in.features.row(gallery_rows[i]).end(), raw.row(i).begin());
    if (gallery_rows[i] == *src) exclude = i;
  }
  const Matrix<float> gallery = project_features(ck.model, raw);

  auto& m = frozen(ck.model);
  Graph<float> g(false);
  Matrix<float> src_raw(1, in.features.cols());
  std::copy(in.features.row(*src).begin(), in.features.row(*src).end(), src_raw.row(0).begin());
  Var f = project_feature(g, m, g.constant(src_raw));
  auto row_of = [&](std::size_t a) {
    Matrix<float> e(1, in.embeds.cols());
    std::copy(in.embeds.row(a).begin(), in.embeds.row(a).end(), e.row(0).begin());
    return g.constant(std::move(e));
  };
  Var q = manipulated_query(g, f, row_of(remove_attr), row_of(add_attr),
                            transform_fn(g, m, Branch::Couple, Mode::Eval),
                            transform_fn(g, m, Branch::Decouple, Mode::Eval));
  const auto hits = nearest_rows<float>(g.value(q).row(0), gallery, exclude, k);
  std::vector<RetrievalHit> out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const std::size_t sample = gallery_rows[hits[i].first];
    out.push_back({i + 1, sample, in.meta.samples[sample].sample_id, hits[i].second});
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const CzslReport& r) {
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, v] : r.topk) topk[std::to_string(k)] = v;
  return {{"protocol", "closed"}, {"topk", topk}, {"attr_acc", r.attr_acc}, {"obj_acc", r.obj_acc},
          {"n_samples", r.n_samples}};
}

inline nlohmann::json to_json(const ComponentReport& r) {
  return {{"attr_acc", r.attr_acc}, {"obj_acc", r.obj_acc}, {"n_samples", r.n_samples}};
}

// Infinite grid ends are written as the strings "-inf" / "inf".
inline nlohmann::json bias_json(double b) {
  if (std::isinf(b)) return b < 0 ? "-inf" : "inf";
  return b;
}

inline nlohmann::json to_json(const GeneralizedReport& r) {
  nlohmann::json grid = nlohmann::json::array();
  for (double b : r.bias_grid) grid.push_back(bias_json(b));
  nlohmann::json auc = nlohmann::json::object();
  for (const auto& [k, v] : r.auc_topk) auc[std::to_string(k)] = v;
  return {{"protocol", "generalized"},   {"bias_grid", grid},          {"seen_curve", r.seen_curve},
          {"unseen_curve", r.unseen_curve}, {"auc_topk", auc},           {"best_hm", r.best_hm},
          {"seen_at_best", r.seen_at_best}, {"unseen_at_best", r.unseen_at_best},
          {"bias_at_best", bias_json(r.bias_at_best)}, {"n_seen", r.n_seen}, {"n_unseen", r.n_unseen}};
}

}  // namespace symnet
