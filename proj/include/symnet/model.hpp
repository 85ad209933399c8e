#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

#include "symnet/autodiff.hpp"
#include "symnet/error.hpp"
#include "symnet/net_core.hpp"

namespace symnet {

enum class AttnActivation { Sigmoid, Softmax };
enum class Branch { Couple, Decouple };

inline std::string_view branch_prefix(Branch b) { return b == Branch::Couple ? "con" : "decon"; }

// Architecture of a SymNet model. Everything a checkpoint needs to rebuild
// the parameter layout.
struct ModelConfig {
  std::size_t feat_dim = 512;
  std::size_t embed_dim = 300;
  std::size_t latent_dim = 300;
  std::size_t attn_hidden = 768;
  std::size_t cls_hidden = 512;
  std::size_t n_attrs = 0;
  std::size_t n_objs = 0;
  std::size_t obj_layers = 2;  // 2 or 3
  AttnActivation attn_act = AttnActivation::Sigmoid;
  bool no_attention = false;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

inline void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) fail(ErrorCode::InvalidConfig, std::string(what) + " must be positive");
  };
  positive(c.feat_dim, "feat_dim");
  positive(c.embed_dim, "embed_dim");
  positive(c.latent_dim, "latent_dim");
  positive(c.attn_hidden, "attn_hidden");
  positive(c.cls_hidden, "cls_hidden");
  positive(c.n_attrs, "n_attrs");
  positive(c.n_objs, "n_objs");
  if (c.obj_layers != 2 && c.obj_layers != 3) fail(ErrorCode::InvalidConfig, "obj_layers must be 2 or 3");
  if (!(c.bn_eps > 0)) fail(ErrorCode::InvalidConfig, "bn_eps must be positive");
  if (!(c.bn_momentum > 0 && c.bn_momentum < 1)) fail(ErrorCode::InvalidConfig, "bn_momentum must be in (0,1)");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"feat_dim", c.feat_dim},     {"embed_dim", c.embed_dim},
          {"latent_dim", c.latent_dim}, {"attn_hidden", c.attn_hidden},
          {"cls_hidden", c.cls_hidden}, {"n_attrs", c.n_attrs},
          {"n_objs", c.n_objs},         {"obj_layers", c.obj_layers},
          {"attn_act", c.attn_act == AttnActivation::Sigmoid ? "sigmoid" : "softmax"},
          {"no_attention", c.no_attention}, {"bn_eps", c.bn_eps}, {"bn_momentum", c.bn_momentum}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.feat_dim = j.at("feat_dim").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.attn_hidden = j.at("attn_hidden").get<std::size_t>();
    c.cls_hidden = j.at("cls_hidden").get<std::size_t>();
    c.n_attrs = j.at("n_attrs").get<std::size_t>();
    c.n_objs = j.at("n_objs").get<std::size_t>();
    c.obj_layers = j.at("obj_layers").get<std::size_t>();
    const auto act = j.at("attn_act").get<std::string>();
    if (act != "sigmoid" && act != "softmax") fail(ErrorCode::InvalidConfig, "attn_act '" + act + "'");
    c.attn_act = act == "sigmoid" ? AttnActivation::Sigmoid : AttnActivation::Softmax;
    c.no_attention = j.at("no_attention").get<bool>();
    c.bn_eps = j.at("bn_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

// All trainable tensors plus batch-norm buffers.
//
// Parameter names are part of the checkpoint format:
//   proj.{W,b}
//   {con,decon}.{attn_fc1,attn_fc2,main_fc1,main_fc2}.{W,b}
//   {con,decon}.{bn_attn,bn_main}.{gamma,beta,running_mean,running_var}
//   attr_clf.{fc1,fc2}.{W,b}
//   obj_clf.{fc1,fc2[,fc3]}.{W,b}
template <typename T>
struct SymNetModel {
  ModelConfig config;
  ParameterStore<T> params;

  SymNetModel() = default;
  SymNetModel(ModelConfig cfg, ParameterStore<T> store) : config(cfg), params(std::move(store)) {}

  static SymNetModel init(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    std::mt19937_64 rng(seed);
    SymNetModel m;
    m.config = cfg;
    auto& p = m.params;
    add_dense(p, "proj", cfg.feat_dim, cfg.latent_dim, rng);
    for (Branch b : {Branch::Couple, Branch::Decouple}) {
      const std::string pre(branch_prefix(b));
      add_dense(p, pre + ".attn_fc1", cfg.embed_dim, cfg.attn_hidden, rng);
      add_batchnorm(p, pre + ".bn_attn", cfg.attn_hidden);
      add_dense(p, pre + ".attn_fc2", cfg.attn_hidden, cfg.latent_dim, rng);
      add_dense(p, pre + ".main_fc1", cfg.latent_dim + cfg.embed_dim, cfg.latent_dim, rng);
      add_batchnorm(p, pre + ".bn_main", cfg.latent_dim);
      add_dense(p, pre + ".main_fc2", cfg.latent_dim, cfg.latent_dim, rng);
    }
    add_dense(p, "attr_clf.fc1", cfg.latent_dim, cfg.cls_hidden, rng);
    add_dense(p, "attr_clf.fc2", cfg.cls_hidden, cfg.n_attrs, rng);
    add_dense(p, "obj_clf.fc1", cfg.latent_dim, cfg.cls_hidden, rng);
    if (cfg.obj_layers == 3) {
      add_dense(p, "obj_clf.fc2", cfg.cls_hidden, cfg.cls_hidden, rng);
      add_dense(p, "obj_clf.fc3", cfg.cls_hidden, cfg.n_objs, rng);
    } else {
      add_dense(p, "obj_clf.fc2", cfg.cls_hidden, cfg.n_objs, rng);
    }
    return m;
  }

  template <typename U>
  SymNetModel<U> cast() const {
    return SymNetModel<U>(config, params.template cast<U>());
  }
};

// ---------------------------------------------------------------------------
// Graph builders. `mode` only affects batch normalization.

template <typename T>
Var dense(Graph<T>& g, ParameterStore<T>& p, const std::string& prefix, Var x) {
  return g.affine(x, g.parameter(p, prefix + ".W"), g.parameter(p, prefix + ".b"));
}

template <typename T>
Var batchnorm(Graph<T>& g, SymNetModel<T>& m, const std::string& prefix, Var x, Mode mode) {
  auto& p = m.params;
  return g.batchnorm(x, g.parameter(p, prefix + ".gamma"), g.parameter(p, prefix + ".beta"),
                     p.at(prefix + ".running_mean"), p.at(prefix + ".running_var"), mode,
                     static_cast<T>(m.config.bn_eps), static_cast<T>(m.config.bn_momentum));
}

// Single affine map from raw backbone features to the latent space.
template <typename T>
Var project_feature(Graph<T>& g, SymNetModel<T>& m, Var raw) {
  return dense(g, m.params, "proj", raw);
}

// att = act(fc2(relu(bn(fc1(attr_emb)))))
template <typename T>
Var attention(Graph<T>& g, SymNetModel<T>& m, Branch branch, Var attr_emb, Mode mode) {
  const std::string pre(branch_prefix(branch));
  Var h = dense(g, m.params, pre + ".attn_fc1", attr_emb);
  h = g.relu(batchnorm(g, m, pre + ".bn_attn", h, mode));
  Var a = dense(g, m.params, pre + ".attn_fc2", h);
  return m.config.attn_act == AttnActivation::Sigmoid ? g.sigmoid(a) : g.softmax_rows(a);
}

// CoN / DecoN: gate the feature by the attribute attention with a residual,
// append the attribute embedding, and map back to the latent space.
template <typename T>
Var apply_transform(Graph<T>& g, SymNetModel<T>& m, Branch branch, Var f, Var attr_emb, Mode mode) {
  const std::string pre(branch_prefix(branch));
  Var h = f;
  if (!m.config.no_attention) h = g.add(g.mul(f, attention(g, m, branch, attr_emb, mode)), f);
  Var z = g.concat_cols(h, attr_emb);
  Var u = dense(g, m.params, pre + ".main_fc1", z);
  u = g.relu(batchnorm(g, m, pre + ".bn_main", u, mode));
  return dense(g, m.params, pre + ".main_fc2", u);
}

// Identity element: a skip connection.
inline Var t_e(Var f) { return f; }

template <typename T>
Var attr_logits(Graph<T>& g, SymNetModel<T>& m, Var f) {
  Var h = g.relu(dense(g, m.params, "attr_clf.fc1", f));
  return dense(g, m.params, "attr_clf.fc2", h);
}

template <typename T>
Var obj_logits(Graph<T>& g, SymNetModel<T>& m, Var f) {
  Var h = g.relu(dense(g, m.params, "obj_clf.fc1", f));
  if (m.config.obj_layers == 3) {
    h = g.relu(dense(g, m.params, "obj_clf.fc2", h));
    return dense(g, m.params, "obj_clf.fc3", h);
  }
  return dense(g, m.params, "obj_clf.fc2", h);
}

// Transform function type used by the objectives, so tests can substitute
// closed-form mocks for CoN/DecoN.
template <typename T>
using TransformFn = std::function<Var(Var f, Var attr_emb)>;

template <typename T>
TransformFn<T> transform_fn(Graph<T>& g, SymNetModel<T>& m, Branch branch, Mode mode) {
  return [&g, &m, branch, mode](Var f, Var e) { return apply_transform(g, m, branch, f, e, mode); };
}

}  // namespace symnet
