#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "symnet/autodiff.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"

namespace symnet {

// Builds a scalar loss for the model's current parameters. Called once for
// the analytic pass and twice per checked coordinate, so it must not draw
// fresh randomness.
using LossBuilder = std::function<Var(Graph<double>&, SymNetModel<double>&)>;

struct GradcheckProblem {
  SymNetModel<double> model;
  LossBuilder loss;
};

struct GradOffender {
  std::string param;
  std::size_t row = 0, col = 0;
  double analytic = 0, numeric = 0, rel_err = 0;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double h = 0, tol = 0;
  std::size_t n_checked = 0;
  double max_rel_err = 0;
  std::vector<GradOffender> worst;  // descending rel_err
  bool passed() const { return max_rel_err <= tol; }
};

inline constexpr double kKinkMargin = 2e-4;
inline constexpr int kKinkRetries = 200;

// Tiny SymNet over random data with the complete training objective in
// train mode: projector, both transformers with batch norm, both classifiers.
//
// Central differences are only meaningful where the loss is smooth, so the
// point is redrawn until every relu input (including the triplet hinges)
// is at least kKinkMargin away from zero.
inline GradcheckProblem tiny_problem(std::uint64_t seed) {
  ModelConfig mc;
  mc.feat_dim = 4;
  mc.embed_dim = 4;
  mc.latent_dim = 4;
  mc.attn_hidden = 6;
  mc.cls_hidden = 6;
  mc.n_attrs = 3;
  mc.n_objs = 3;
  std::mt19937_64 rng(seed);
  ObjectiveConfig cfg;
  cfg.weights = {0.7, 0.3, 1.0, 0.6, 0.4, 0.5};
  const std::vector<BatchRow> rows = {
      {0, 0, 0, 1}, {1, 1, 0, 0}, {2, 2, 1, 0}, {3, 0, 1, 2}, {4, 1, 2, std::nullopt}, {5, 2, 2, 1},
  };

  for (int attempt = 0; attempt < kKinkRetries; ++attempt) {
    GradcheckProblem p;
    p.model = SymNetModel<double>::init(mc, rng());

    // Biases and BN affine parameters leave their 0/1 init: with zero biases
    // an all-inactive relu row maps to an exact zero vector, which lands the
    // next relu exactly on its kink.
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& [name, e] : p.model.params)
      if (name.ends_with(".b") || name.ends_with(".gamma") || name.ends_with(".beta"))
        for (auto& v : e.value.values()) v += u(rng);

    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix<double> raw(6, mc.feat_dim), emb(mc.n_attrs, mc.embed_dim);
    for (auto& v : raw.values()) v = nd(rng);
    for (auto& v : emb.values()) v = nd(rng);
    p.loss = [raw, emb, rows, cfg](Graph<double>& g, SymNetModel<double>& m) {
      return build_objective(g, m, raw, emb, rows, cfg, Mode::Train).total;
    };

    auto probe = p.model;
    Graph<double> g(false);
    p.loss(g, probe);
    if (g.relu_margin() >= kKinkMargin) return p;
  }
  fail(ErrorCode::InvariantViolation, "no kink-free gradcheck point for seed " + std::to_string(seed));
}

// Central differences over every trainable coordinate, compared with the
// reverse-mode gradient: |analytic - numeric| / max(1, |numeric|).
inline GradcheckReport run_gradcheck(GradcheckProblem problem, std::uint64_t seed, double h = 1e-5,
                                     double tol = 1e-4, std::size_t keep_worst = 5) {
  GradcheckReport rep;
  rep.seed = seed;
  rep.h = h;
  rep.tol = tol;
  auto& model = problem.model;
  const ParameterStore<double> snapshot = model.params;

  GradientMap<double> analytic;
  {
    Graph<double> g(true);
    Var loss = problem.loss(g, model);
    g.backward(loss);
    analytic = g.gradients(model.params);
  }
  auto eval = [&] {
    Graph<double> g(false);
    return g.scalar(problem.loss(g, model));
  };

  std::vector<GradOffender> all;
  for (const auto& name : snapshot.trainable_names()) {
    const auto& grad = analytic.at(name);
    const std::size_t cols = grad.cols();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      model.params = snapshot;
      auto& v = model.params.at(name);
      const double orig = v[i];
      v[i] = orig + h;
      const double up = eval();
      model.params = snapshot;
      model.params.at(name)[i] = orig - h;
      const double down = eval();
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(numeric));
      all.push_back({name, i / cols, i % cols, grad[i], numeric, rel});
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.n_checked;
    }
  }
  model.params = snapshot;
  keep_worst = std::min(keep_worst, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep_worst), all.end(),
                    [](const auto& a, const auto& b) { return a.rel_err > b.rel_err; });
  all.resize(keep_worst);
  rep.worst = std::move(all);
  return rep;
}

inline void require_passed(const GradcheckReport& rep) {
  if (rep.passed()) return;
  const auto& w = rep.worst.front();
  fail(ErrorCode::ToleranceExceeded, w.param + "[" + std::to_string(w.row) + "," + std::to_string(w.col) +
                                         "]: analytic " + std::to_string(w.analytic) + ", numeric " +
                                         std::to_string(w.numeric) + ", rel err " + std::to_string(w.rel_err));
}

inline GradcheckReport gradcheck(std::uint64_t seed, double h = 1e-5, double tol = 1e-4) {
  auto rep = run_gradcheck(tiny_problem(seed), seed, h, tol);
  require_passed(rep);
  return rep;
}

inline nlohmann::json to_json(const GradcheckReport& r) {
  nlohmann::json worst = nlohmann::json::array();
  for (const auto& w : r.worst)
    worst.push_back({{"param", w.param},
                     {"row", w.row},
                     {"col", w.col},
                     {"analytic", w.analytic},
                     {"numeric", w.numeric},
                     {"rel_err", w.rel_err}});
  return {{"seed", r.seed}, {"h", r.h},         {"tol", r.tol},   {"n_checked", r.n_checked},
          {"max_rel_err", r.max_rel_err}, {"passed", r.passed()}, {"worst", worst}};
}

}  // namespace symnet
