#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "symnet/autodiff.hpp"
#include "symnet/checkpoint.hpp"
#include "symnet/config.hpp"
#include "symnet/data_model.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"

namespace symnet {

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step index
  LossBreakdown loss;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> steps;
  std::vector<LossBreakdown> epoch_means;
};

inline nlohmann::json to_json(const StepLog& s) {
  const auto& l = s.loss;
  return {{"epoch", s.epoch}, {"step", s.step}, {"sym", l.sym},     {"clo", l.clo},
          {"inv", l.inv},     {"com", l.com},   {"cls_a", l.cls_a}, {"cls_o", l.cls_o},
          {"tri", l.tri},     {"total", l.total}};
}

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) fail(ErrorCode::ParseError, "invalid rng state");
  return rng;
}

inline void check_training_inputs(const DatasetMeta& meta, const FeatureMatrix& features,
                                  const EmbeddingTable& embeds, const TrainConfig& cfg) {
  if (features.rows() != meta.samples.size()) {
    fail(ErrorCode::DimensionMismatch, std::to_string(features.rows()) + " feature rows for " +
                                           std::to_string(meta.samples.size()) + " samples");
  }
  if (features.cols() != cfg.feat_dim) {
    fail(ErrorCode::DimMismatch, "feature dim " + std::to_string(features.cols()) + ", config feat_dim " +
                                     std::to_string(cfg.feat_dim));
  }
  if (embeds.rows() != meta.n_attrs()) {
    fail(ErrorCode::RowCountMismatch, std::to_string(embeds.rows()) + " embedding rows for " +
                                          std::to_string(meta.n_attrs()) + " attributes");
  }
  if (embeds.cols() != cfg.embed_dim) {
    fail(ErrorCode::DimMismatch, "embedding dim " + std::to_string(embeds.cols()) + ", config embed_dim " +
                                     std::to_string(cfg.embed_dim));
  }
}

// Pairs each anchor with a same-object, different-attribute negative and adds
// the negative as a row of its own with the roles swapped.
template <typename Rng>
std::vector<BatchRow> assemble_batch(const DatasetMeta& meta, const NegativeSampler& sampler,
                                     std::span<const std::size_t> anchors, Rng& rng,
                                     std::vector<std::uint8_t>& used) {
  std::vector<BatchRow> rows;
  std::vector<std::size_t> touched;
  rows.reserve(2 * anchors.size());
  for (std::size_t idx : anchors) {
    const auto& s = meta.samples[idx];
    const auto neg = sampler.sample(s.attr, s.obj, rng, &used);
    if (!neg) {
      rows.push_back({idx, s.attr, s.obj, std::nullopt});
      continue;
    }
    const auto& ns = meta.samples[*neg];
    used[*neg] = 1;
    touched.push_back(*neg);
    rows.push_back({idx, s.attr, s.obj, ns.attr});
    rows.push_back({*neg, ns.attr, ns.obj, s.attr});
  }
  for (std::size_t t : touched) used[t] = 0;
  return rows;
}

inline void check_finite(const LossBreakdown& b, std::size_t step) {
  const std::pair<const char*, double> terms[] = {{"sym", b.sym},     {"clo", b.clo},     {"inv", b.inv},
                                                  {"com", b.com},     {"cls_a", b.cls_a}, {"cls_o", b.cls_o},
                                                  {"tri", b.tri},     {"total", b.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      fail(ErrorCode::NonFiniteLoss, std::string("term ") + name + " is non-finite at step " + std::to_string(step));
}

// Deterministic SGD training. Epoch order and negative draws both come from
// one rng seeded by cfg.seed, so a seed fixes the whole trajectory.
inline TrainResult train(const DatasetMeta& meta, const FeatureMatrix& features, const EmbeddingTable& embeds,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  validate(cfg);
  check_training_inputs(meta, features, embeds, cfg);
  std::vector<std::size_t> order = meta.sample_indices(Split::Train);
  if (order.empty()) fail(ErrorCode::EmptyTrainSplit, "no train samples");

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  auto& model = result.checkpoint.model;
  model = SymNetModel<float>::init(model_config(cfg, meta.n_attrs(), meta.n_objs()), rng());
  const ObjectiveConfig objective = objective_config(cfg);
  const NegativeSampler sampler(meta);
  std::vector<std::uint8_t> used(meta.samples.size(), 0);
  const float lr = static_cast<float>(cfg.lr);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    std::size_t steps_in_epoch = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const auto rows = assemble_batch(meta, sampler, std::span(order).subspan(begin, end - begin), rng, used);

      Graph<float> g(true);
      const auto loss = build_objective(g, model, features, embeds, rows, objective, Mode::Train);
      check_finite(loss.breakdown, step);
      g.backward(loss.total);
      sgd_step(model.params, g.gradients(model.params), lr);

      const StepLog entry{epoch, step, loss.breakdown};
      if (log && step % cfg.log_every == 0) *log << to_json(entry).dump() << '\n';
      result.steps.push_back(entry);
      const auto& b = loss.breakdown;
      sum.sym += b.sym;
      sum.clo += b.clo;
      sum.inv += b.inv;
      sum.com += b.com;
      sum.cls_a += b.cls_a;
      sum.cls_o += b.cls_o;
      sum.tri += b.tri;
      ++steps_in_epoch;
      ++step;
    }
    const double k = 1.0 / double(steps_in_epoch);
    LossBreakdown mean{sum.sym * k, sum.clo * k, sum.inv * k, sum.com * k, 0, sum.cls_a * k, sum.cls_o * k,
                       sum.tri * k, 0};
    result.epoch_means.push_back(loss_total(mean, cfg.weights));
  }
  result.checkpoint.config = cfg;
  result.checkpoint.epoch = cfg.epochs;
  result.checkpoint.rng_state = rng_state(rng);
  return result;
}

}  // namespace symnet
