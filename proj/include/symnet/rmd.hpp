#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "symnet/autodiff.hpp"
#include "symnet/data_model.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"

namespace symnet {

struct RmdResult {
  std::vector<double> d_plus;
  std::vector<double> d_minus;
  std::vector<double> d;       // d_minus - d_plus
  std::vector<double> p_attr;  // sigmoid(gamma * d); empty until attr_probs runs
};

// Attribute decision rule: d >= 0 means the sample has the attribute.
inline bool has_attribute(double d) { return d >= 0.0; }

// d+ and d- columns (B*n x 1, sample-major) for a batch of latent features
// against every attribute embedding.
template <typename T>
std::pair<Var, Var> rmd_distances(Graph<T>& g, Var F, Var E, const TransformFn<T>& con,
                                  const TransformFn<T>& decon, const DistanceConfig& dist = {}) {
  const std::size_t B = g.value(F).rows(), n = g.value(E).rows();
  std::vector<std::size_t> rep, tiled;
  rep.reserve(B * n);
  tiled.reserve(B * n);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < n; ++a) {
      rep.push_back(b);
      tiled.push_back(a);
    }
  Var Frep = g.gather_rows(F, rep);
  Var Eall = g.gather_rows(E, tiled);
  return {distance(g, Frep, con(Frep, Eall), dist), distance(g, Frep, decon(Frep, Eall), dist)};
}

template <typename T>
std::vector<RmdResult> unpack_rmd(const Matrix<T>& d_plus, const Matrix<T>& d_minus, std::size_t n) {
  const std::size_t B = n == 0 ? 0 : d_plus.rows() / n;
  std::vector<RmdResult> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& r = out[b];
    r.d_plus.resize(n);
    r.d_minus.resize(n);
    r.d.resize(n);
    for (std::size_t a = 0; a < n; ++a) {
      r.d_plus[a] = static_cast<double>(d_plus[b * n + a]);
      r.d_minus[a] = static_cast<double>(d_minus[b * n + a]);
      r.d[a] = r.d_minus[a] - r.d_plus[a];
    }
  }
  return out;
}

// Eval-mode graph over a frozen model. Evaluation never writes to the store,
// so several of these may run concurrently on one model.
template <typename T>
SymNetModel<T>& frozen(const SymNetModel<T>& m) {
  return const_cast<SymNetModel<T>&>(m);
}

// RMD for a batch of latent (already projected) features [B x latent] in one
// pass over a [B*n] stacked input.
template <typename T>
std::vector<RmdResult> rmd_scores(const SymNetModel<T>& model, const Matrix<T>& latent,
                                  const Matrix<T>& embeddings, const DistanceConfig& dist = {}) {
  auto& m = frozen(model);
  if (latent.cols() != m.config.latent_dim || embeddings.cols() != m.config.embed_dim) {
    fail(ErrorCode::ShapeMismatch, "rmd_scores: latent " + shape_string(latent) + ", embeddings " +
                                       shape_string(embeddings));
  }
  Graph<T> g(false);
  auto [dp, dm] = rmd_distances(g, g.constant(latent), g.constant(embeddings),
                                transform_fn(g, m, Branch::Couple, Mode::Eval),
                                transform_fn(g, m, Branch::Decouple, Mode::Eval), dist);
  return unpack_rmd(g.value(dp), g.value(dm), embeddings.rows());
}

template <typename T>
RmdResult rmd_scores(const SymNetModel<T>& model, std::span<const T> f, const Matrix<T>& embeddings,
                     const DistanceConfig& dist = {}) {
  Matrix<T> one(1, f.size(), std::vector<T>(f.begin(), f.end()));
  return rmd_scores(model, one, embeddings, dist).front();
}

inline std::vector<double> attr_probs(std::span<const double> d, double gamma) {
  if (!(gamma > 0)) fail(ErrorCode::NonPositiveGamma, "gamma must be positive, got " + std::to_string(gamma));
  std::vector<double> p(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) p[i] = kernels::sigmoid(gamma * d[i]);
  return p;
}

inline void attr_probs(RmdResult& r, double gamma) { r.p_attr = attr_probs(r.d, gamma); }

template <typename T>
Matrix<T> project_features(const SymNetModel<T>& model, const Matrix<T>& raw) {
  auto& m = frozen(model);
  Graph<T> g(false);
  return g.value(project_feature(g, m, g.constant(raw)));
}

// Softmax object probabilities, one row per latent feature.
template <typename T>
std::vector<std::vector<double>> object_probs(const SymNetModel<T>& model, const Matrix<T>& latent) {
  auto& m = frozen(model);
  if (latent.cols() != m.config.latent_dim)
    fail(ErrorCode::ShapeMismatch, "object_probs: latent " + shape_string(latent));
  Graph<T> g(false);
  const Matrix<T>& logits = g.value(obj_logits(g, m, g.constant(latent)));
  std::vector<std::vector<double>> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::vector<double> row(logits.row(i).begin(), logits.row(i).end());
    out[i] = softmax(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair scores

struct PairScores {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> p_pair;  // n x m, row-major
  const PairMask* mask = nullptr;

  double operator()(std::size_t a, std::size_t o) const { return p_pair[a * m + o]; }
};

inline PairScores pair_scores(std::span<const double> p_attr, std::span<const double> p_obj,
                              const PairMask& mask) {
  if (p_attr.size() != mask.n || p_obj.size() != mask.m) {
    fail(ErrorCode::ShapeMismatch, "pair_scores: " + std::to_string(p_attr.size()) + "x" +
                                       std::to_string(p_obj.size()) + " for mask " +
                                       std::to_string(mask.n) + "x" + std::to_string(mask.m));
  }
  PairScores s;
  s.n = mask.n;
  s.m = mask.m;
  s.mask = &mask;
  s.p_pair.resize(s.n * s.m);
  for (std::size_t a = 0; a < s.n; ++a)
    for (std::size_t o = 0; o < s.m; ++o) s.p_pair[a * s.m + o] = p_attr[a] * p_obj[o];
  return s;
}

// Candidate order: higher score first, ties by lower flat index.
inline bool ranks_before(double sa, std::size_t ia, double sb, std::size_t ib) {
  return sa > sb || (sa == sb && ia < ib);
}

// Top-k unmasked pairs. Masked cells are never returned.
inline std::vector<Pair> top_k(const PairScores& s, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t c = 0; c < s.p_pair.size(); ++c)
    if (s.mask->cells[c]) idx.push_back(c);
  if (idx.empty()) fail(ErrorCode::EmptyCandidateSet, "no unmasked candidate pairs");
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return ranks_before(s.p_pair[a], a, s.p_pair[b], b); });
  std::vector<Pair> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i] / s.m, idx[i] % s.m});
  return out;
}

// ---------------------------------------------------------------------------
// Batched inference over feature rows.

struct SampleScores {
  std::vector<double> d;       // RMD per attribute
  std::vector<double> p_attr;  // n
  std::vector<double> p_obj;   // m
};

// Worker count from SYMNET_THREADS (0 or unset = hardware concurrency).
inline std::size_t eval_threads() {
  std::size_t n = 0;
  if (const char* env = std::getenv("SYMNET_THREADS")) n = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

// Runs fn(chunk) for chunk in [0, chunks). Chunks write disjoint outputs, so
// results do not depend on the schedule.
template <typename F>
void parallel_chunks(std::size_t chunks, std::size_t threads, F&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t c = t; c < chunks; c += threads) fn(c);
    });
}

template <typename T>
std::vector<SampleScores> infer(const SymNetModel<T>& model, const Matrix<T>& raw_features,
                                std::span<const std::size_t> rows, const Matrix<T>& embeddings,
                                double gamma, const DistanceConfig& dist = {}, std::size_t chunk = 64) {
  if (!(gamma > 0)) fail(ErrorCode::NonPositiveGamma, "gamma must be positive");
  std::vector<SampleScores> out(rows.size());
  const std::size_t chunks = (rows.size() + chunk - 1) / chunk;
  parallel_chunks(chunks, eval_threads(), [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(rows.size(), begin + chunk);
    Matrix<T> raw(end - begin, raw_features.cols());
    for (std::size_t i = begin; i < end; ++i) {
      const auto src = raw_features.row(rows[i]);
      std::copy(src.begin(), src.end(), raw.row(i - begin).begin());
    }
    const Matrix<T> latent = project_features(model, raw);
    auto rmd = rmd_scores(model, latent, embeddings, dist);
    auto pobj = object_probs(model, latent);
    for (std::size_t i = begin; i < end; ++i) {
      auto& s = out[i];
      s.d = std::move(rmd[i - begin].d);
      s.p_attr = attr_probs(s.d, gamma);
      s.p_obj = std::move(pobj[i - begin]);
    }
  });
  return out;
}

}  // namespace symnet
