#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "symnet/autodiff.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"

namespace symnet {

struct LossWeights {
  double lambda_sym = 0.05;       // symmetry
  double lambda_axiom = 0.01;     // closure + invertibility + commutativity
  double lambda_cls_attr = 1.0;   // attribute classification
  double lambda_cls_obj = 0.01;   // object classification
  double lambda_tri = 0.03;       // RMD triplet
  double margin = 0.5;            // triplet margin
};

inline void validate(const LossWeights& w) {
  for (double v : {w.lambda_sym, w.lambda_axiom, w.lambda_cls_attr, w.lambda_cls_obj, w.lambda_tri}) {
    if (!std::isfinite(v) || v < 0) fail(ErrorCode::InvalidConfig, "loss weights must be finite and >= 0");
  }
  if (!(w.margin > 0) || !std::isfinite(w.margin)) fail(ErrorCode::InvalidConfig, "triplet margin must be > 0");
}

struct LossBreakdown {
  double sym = 0, clo = 0, inv = 0, com = 0, axiom = 0;
  double cls_a = 0, cls_o = 0, tri = 0, total = 0;
};

// Fills axiom and total from the component terms.
inline LossBreakdown loss_total(LossBreakdown b, const LossWeights& w) {
  b.axiom = b.clo + b.inv + b.com;
  b.total = w.lambda_sym * b.sym + w.lambda_axiom * b.axiom + w.lambda_cls_attr * b.cls_a +
            w.lambda_cls_obj * b.cls_o + w.lambda_tri * b.tri;
  return b;
}

enum class DistKind { L2, L1, Cos };

struct DistanceConfig {
  DistKind kind = DistKind::L2;
  bool squared = false;  // only meaningful for L2
};

// Row-wise distance between two equally shaped batches, (rows x 1).
template <typename T>
Var distance(Graph<T>& g, Var a, Var b, const DistanceConfig& d = {}) {
  switch (d.kind) {
    case DistKind::L1: return g.row_l1(g.sub(a, b));
    case DistKind::Cos: return g.row_cos_distance(a, b);
    case DistKind::L2: break;
  }
  return d.squared ? g.row_sq_norm(g.sub(a, b)) : g.row_l2(g.sub(a, b));
}

// Every single- and two-step transform of f the axiom objectives use,
// computed on first request and then reused. Names read left to right:
// plus_i_minus_j() is f . T+(a_i) . T-(a_j).
template <typename T>
class TransformedSet {
 public:
  TransformedSet(Graph<T>& g, Var f, Var emb_i, Var emb_j, TransformFn<T> con, TransformFn<T> decon)
      : g_(g), f_(f), ei_(emb_i), ej_(emb_j), con_(std::move(con)), decon_(std::move(decon)) {}

  Graph<T>& graph() { return g_; }
  Var f() const { return f_; }
  Var emb_i() const { return ei_; }
  Var emb_j() const { return ej_; }

  Var plus_i() { return memo(plus_i_, [&] { return con_(f_, ei_); }); }
  Var plus_j() { return memo(plus_j_, [&] { return con_(f_, ej_); }); }
  Var minus_i() { return memo(minus_i_, [&] { return decon_(f_, ei_); }); }
  Var minus_j() { return memo(minus_j_, [&] { return decon_(f_, ej_); }); }
  Var plus_i_minus_i() { return memo(pimi_, [&] { return decon_(plus_i(), ei_); }); }
  Var minus_j_plus_j() { return memo(mjpj_, [&] { return con_(minus_j(), ej_); }); }
  Var plus_j_minus_j() { return memo(pjmj_, [&] { return decon_(plus_j(), ej_); }); }
  Var minus_i_plus_i() { return memo(mipi_, [&] { return con_(minus_i(), ei_); }); }
  Var plus_i_minus_j() { return memo(pimj_, [&] { return decon_(plus_i(), ej_); }); }
  Var minus_j_plus_i() { return memo(mjpi_, [&] { return con_(minus_j(), ei_); }); }

 private:
  template <typename F>
  Var memo(std::optional<Var>& slot, F&& make) {
    if (!slot) slot = make();
    return *slot;
  }

  Graph<T>& g_;
  Var f_, ei_, ej_;
  TransformFn<T> con_, decon_;
  std::optional<Var> plus_i_, plus_j_, minus_i_, minus_j_;
  std::optional<Var> pimi_, mjpj_, pjmj_, mipi_, pimj_, mjpi_;
};

inline void check_distinct_attrs(std::span<const std::size_t> attr_i, std::span<const std::size_t> attr_j) {
  if (attr_i.size() != attr_j.size()) fail(ErrorCode::ShapeMismatch, "attribute index lists differ in length");
  for (std::size_t r = 0; r < attr_i.size(); ++r) {
    if (attr_i[r] == attr_j[r]) {
      fail(ErrorCode::IdenticalAttrIndices, "row " + std::to_string(r) + " uses attribute " +
                                                std::to_string(attr_i[r]) + " as both a_i and a_j");
    }
  }
}

// Per-row axiom losses, each (rows x 1).

// ||f - f.T+(a_i)|| + ||f - f.T-(a_j)||
template <typename T>
Var loss_sym(TransformedSet<T>& s, const DistanceConfig& d = {}) {
  auto& g = s.graph();
  return g.add(distance(g, s.f(), s.plus_i(), d), distance(g, s.f(), s.minus_j(), d));
}

// ||f.T+(a_i).T-(a_i) - f.T-(a_i)|| + ||f.T-(a_j).T+(a_j) - f.T+(a_j)||
template <typename T>
Var loss_clo(TransformedSet<T>& s, const DistanceConfig& d = {}) {
  auto& g = s.graph();
  return g.add(distance(g, s.plus_i_minus_i(), s.minus_i(), d),
               distance(g, s.minus_j_plus_j(), s.plus_j(), d));
}

// ||f.T+(a_j).T-(a_j) - f|| + ||f.T-(a_i).T+(a_i) - f||
template <typename T>
Var loss_inv(TransformedSet<T>& s, const DistanceConfig& d = {}) {
  auto& g = s.graph();
  return g.add(distance(g, s.plus_j_minus_j(), t_e(s.f()), d),
               distance(g, s.minus_i_plus_i(), t_e(s.f()), d));
}

// ||f.T+(a_i).T-(a_j) - f.T-(a_j).T+(a_i)||
template <typename T>
Var loss_com(TransformedSet<T>& s, const DistanceConfig& d = {}) {
  auto& g = s.graph();
  return distance(g, s.plus_i_minus_j(), s.minus_j_plus_i(), d);
}

// Hinge terms of the RMD triplet loss over an (rows*n x 1) column laid out
// sample-major, with one labeled attribute per sample. Returns the sum over
// all samples and attributes.
template <typename T>
Var loss_triplet(Graph<T>& g, Var d_plus, Var d_minus, std::span<const std::size_t> labels,
                 std::size_t n_attrs, T margin) {
  const auto& dp = g.value(d_plus);
  if (dp.cols() != 1 || dp.rows() != labels.size() * n_attrs || !dp.same_shape(g.value(d_minus))) {
    fail(ErrorCode::ShapeMismatch, "triplet distances " + shape_string(dp) + " for " +
                                       std::to_string(labels.size()) + " samples x " +
                                       std::to_string(n_attrs) + " attributes");
  }
  Matrix<T> sign(dp.rows(), 1, T(-1));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= n_attrs) fail(ErrorCode::LabelOutOfRange, "attribute label " + std::to_string(labels[r]));
    sign[r * n_attrs + labels[r]] = T(1);
  }
  Var diff = g.mul(g.constant(std::move(sign)), g.sub(d_plus, d_minus));
  return g.sum(g.relu(g.add_scalar(diff, margin)));
}

// Scalar form for one sample:
//   sum_{i in X} [d+_i - d-_i + a]_+ + sum_{j not in X} [d-_j - d+_j + a]_+
inline double loss_triplet(std::span<const double> d_plus, std::span<const double> d_minus,
                           std::size_t label, double margin) {
  if (d_plus.size() != d_minus.size() || d_plus.empty())
    fail(ErrorCode::ShapeMismatch, "d_plus and d_minus must be non-empty and equal length");
  if (label >= d_plus.size()) fail(ErrorCode::LabelOutOfRange, "attribute label " + std::to_string(label));
  double total = 0;
  for (std::size_t i = 0; i < d_plus.size(); ++i) {
    const double h = i == label ? d_plus[i] - d_minus[i] + margin : d_minus[i] - d_plus[i] + margin;
    total += std::max(0.0, h);
  }
  return total;
}

inline double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  return kernels::log_sum_exp<double>(logits) - logits[label];
}

// Classification terms. cls_o averages object cross-entropy over f and its
// four single-step transforms; cls_a averages attribute cross-entropy over
// f -> a_i and f.T+(a_j) -> a_j. Both are returned as sums with their counts
// so callers can pool rows that lack a negative.
template <typename T>
struct ClsSums {
  Var attr_sum;
  Var obj_sum;
  std::size_t attr_count = 0;
  std::size_t obj_count = 0;
};

template <typename T>
ClsSums<T> loss_cls(Graph<T>& g, SymNetModel<T>& m, TransformedSet<T>& s,
                    std::span<const std::size_t> attr_i, std::span<const std::size_t> attr_j,
                    std::span<const std::size_t> obj) {
  std::vector<std::size_t> ai(attr_i.begin(), attr_i.end()), aj(attr_j.begin(), attr_j.end());
  std::vector<std::size_t> o(obj.begin(), obj.end());
  ClsSums<T> out;
  out.attr_sum = g.add(g.sum(g.cross_entropy(attr_logits(g, m, s.f()), ai)),
                       g.sum(g.cross_entropy(attr_logits(g, m, s.plus_j()), aj)));
  out.attr_count = 2 * ai.size();
  Var obj_sum = g.sum(g.cross_entropy(obj_logits(g, m, s.f()), o));
  for (Var t : {s.plus_j(), s.minus_i(), s.plus_i(), s.minus_j()})
    obj_sum = g.add(obj_sum, g.sum(g.cross_entropy(obj_logits(g, m, t), o)));
  out.obj_sum = obj_sum;
  out.obj_count = 5 * o.size();
  return out;
}

// ---------------------------------------------------------------------------
// One training batch.

struct BatchRow {
  std::size_t sample = 0;  // row index into the feature matrix
  std::size_t attr = 0;
  std::size_t obj = 0;
  std::optional<std::size_t> neg_attr;  // a_j; absent when no negative exists
};

struct ObjectiveConfig {
  LossWeights weights;
  DistanceConfig dist;
};

template <typename T>
struct StepLoss {
  Var total;
  LossBreakdown breakdown;
};

// Builds the full weighted objective for a batch in train mode. Rows without
// a negative contribute only to the triplet term and to classification of the
// untransformed feature.
template <typename T>
StepLoss<T> build_objective(Graph<T>& g, SymNetModel<T>& m, const Matrix<T>& raw_features,
                            const Matrix<T>& embeddings, std::span<const BatchRow> rows,
                            const ObjectiveConfig& cfg, Mode mode = Mode::Train) {
  if (rows.empty()) fail(ErrorCode::ShapeMismatch, "empty batch");
  const std::size_t n = embeddings.rows();
  if (n != m.config.n_attrs) fail(ErrorCode::ShapeMismatch, "embedding rows do not match n_attrs");
  std::vector<std::size_t> sample_idx, attr, obj, pidx, pattr, pneg, pobj;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    sample_idx.push_back(rows[r].sample);
    attr.push_back(rows[r].attr);
    obj.push_back(rows[r].obj);
    if (rows[r].neg_attr) {
      pidx.push_back(r);
      pattr.push_back(rows[r].attr);
      pneg.push_back(*rows[r].neg_attr);
      pobj.push_back(rows[r].obj);
    }
  }
  check_distinct_attrs(pattr, pneg);
  const T margin = static_cast<T>(cfg.weights.margin);
  const std::size_t R = rows.size();

  Var raw = g.gather_rows(g.constant(raw_features), sample_idx);
  Var E = g.constant(embeddings);
  Var F = project_feature(g, m, raw);
  auto con = transform_fn(g, m, Branch::Couple, mode);
  auto decon = transform_fn(g, m, Branch::Decouple, mode);

  // RMD triplet over all attributes for every row.
  std::vector<std::size_t> rep, tiled;
  rep.reserve(R * n);
  tiled.reserve(R * n);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t a = 0; a < n; ++a) {
      rep.push_back(r);
      tiled.push_back(a);
    }
  Var Frep = g.gather_rows(F, rep);
  Var Eall = g.gather_rows(E, tiled);
  Var d_plus = distance(g, Frep, con(Frep, Eall), cfg.dist);
  Var d_minus = distance(g, Frep, decon(Frep, Eall), cfg.dist);
  Var tri = g.scale(loss_triplet(g, d_plus, d_minus, attr, n, margin), T(1) / T(R));

  Var cls_a_sum = g.sum(g.cross_entropy(attr_logits(g, m, F), attr));
  Var cls_o_sum = g.sum(g.cross_entropy(obj_logits(g, m, F), obj));
  std::size_t cls_a_count = R, cls_o_count = R;

  Var zero = g.constant(Matrix<T>(1, 1));
  Var sym = zero, clo = zero, inv = zero, com = zero;
  if (!pidx.empty()) {
    Var Fp = g.gather_rows(F, pidx);
    TransformedSet<T> s(g, Fp, g.gather_rows(E, pattr), g.gather_rows(E, pneg), con, decon);
    const T inv_p = T(1) / T(pidx.size());
    sym = g.scale(g.sum(loss_sym(s, cfg.dist)), inv_p);
    clo = g.scale(g.sum(loss_clo(s, cfg.dist)), inv_p);
    inv = g.scale(g.sum(loss_inv(s, cfg.dist)), inv_p);
    com = g.scale(g.sum(loss_com(s, cfg.dist)), inv_p);
    // f itself was already classified with the full batch above.
    cls_a_sum = g.add(cls_a_sum, g.sum(g.cross_entropy(attr_logits(g, m, s.plus_j()), pneg)));
    cls_a_count += pidx.size();
    for (Var t : {s.plus_j(), s.minus_i(), s.plus_i(), s.minus_j()})
      cls_o_sum = g.add(cls_o_sum, g.sum(g.cross_entropy(obj_logits(g, m, t), pobj)));
    cls_o_count += 4 * pidx.size();
  }
  Var cls_a = g.scale(cls_a_sum, T(1) / T(cls_a_count));
  Var cls_o = g.scale(cls_o_sum, T(1) / T(cls_o_count));

  const auto& w = cfg.weights;
  Var axiom = g.add(g.add(clo, inv), com);
  Var total = g.scale(sym, T(w.lambda_sym));
  total = g.add(total, g.scale(axiom, T(w.lambda_axiom)));
  total = g.add(total, g.scale(cls_a, T(w.lambda_cls_attr)));
  total = g.add(total, g.scale(cls_o, T(w.lambda_cls_obj)));
  total = g.add(total, g.scale(tri, T(w.lambda_tri)));

  LossBreakdown b;
  b.sym = g.scalar(sym);
  b.clo = g.scalar(clo);
  b.inv = g.scalar(inv);
  b.com = g.scalar(com);
  b.cls_a = g.scalar(cls_a);
  b.cls_o = g.scalar(cls_o);
  b.tri = g.scalar(tri);
  b = loss_total(b, w);
  return {total, b};
}

}  // namespace symnet
