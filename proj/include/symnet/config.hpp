#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "symnet/error.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"

namespace symnet {

enum class Profile { Mit, Ut, Custom };

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 512;
  std::size_t epochs = 320;
  LossWeights weights;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 300;
  std::size_t feat_dim = 512;
  std::size_t latent_dim = 300;
  std::size_t attn_hidden = 768;
  std::size_t cls_hidden = 512;
  std::size_t obj_layers = 2;
  Profile profile = Profile::Mit;
  DistKind dist = DistKind::L2;
  AttnActivation attn_act = AttnActivation::Sigmoid;
  bool no_attention = false;
  bool squared_dist = false;
  std::size_t log_every = 1;
};

inline std::string_view profile_name(Profile p) {
  switch (p) {
    case Profile::Mit: return "mit";
    case Profile::Ut: return "ut";
    case Profile::Custom: return "custom";
  }
  return "?";
}

inline std::string_view dist_name(DistKind d) {
  switch (d) {
    case DistKind::L2: return "l2";
    case DistKind::L1: return "l1";
    case DistKind::Cos: return "cos";
  }
  return "?";
}

inline DistKind parse_dist(const std::string& s) {
  if (s == "l2") return DistKind::L2;
  if (s == "l1") return DistKind::L1;
  if (s == "cos") return DistKind::Cos;
  fail(ErrorCode::InvalidConfig, "dist must be l2, l1 or cos, got '" + s + "'");
}

inline AttnActivation parse_attn_act(const std::string& s) {
  if (s == "sigmoid") return AttnActivation::Sigmoid;
  if (s == "softmax") return AttnActivation::Softmax;
  fail(ErrorCode::InvalidConfig, "attn_act must be sigmoid or softmax, got '" + s + "'");
}

// Hyperparameter presets for the two benchmark profiles.
inline TrainConfig make_profile(std::string_view name) {
  TrainConfig c;
  if (name == "mit") {
    c.profile = Profile::Mit;
    c.lr = 5e-4;
    c.batch_size = 512;
    c.epochs = 320;
    c.weights = {0.05, 0.01, 1.0, 0.01, 0.03, 0.5};
  } else if (name == "ut") {
    c.profile = Profile::Ut;
    c.lr = 1e-4;
    c.batch_size = 256;
    c.epochs = 600;
    c.weights = {0.01, 0.03, 1.0, 0.5, 0.5, 0.5};
  } else {
    fail(ErrorCode::UnknownProfile, "unknown profile '" + std::string(name) + "'");
  }
  return c;
}

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0)) fail(ErrorCode::InvalidConfig, "lr must be positive");
  if (c.batch_size == 0) fail(ErrorCode::InvalidConfig, "batch_size must be positive");
  if (c.epochs == 0) fail(ErrorCode::InvalidConfig, "epochs must be positive");
  if (!(c.gamma > 0)) fail(ErrorCode::NonPositiveGamma, "gamma must be positive");
  if (c.log_every == 0) fail(ErrorCode::InvalidConfig, "log_every must be positive");
  validate(c.weights);
}

inline ModelConfig model_config(const TrainConfig& c, std::size_t n_attrs, std::size_t n_objs) {
  ModelConfig m;
  m.feat_dim = c.feat_dim;
  m.embed_dim = c.embed_dim;
  m.latent_dim = c.latent_dim;
  m.attn_hidden = c.attn_hidden;
  m.cls_hidden = c.cls_hidden;
  m.obj_layers = c.obj_layers;
  m.n_attrs = n_attrs;
  m.n_objs = n_objs;
  m.attn_act = c.attn_act;
  m.no_attention = c.no_attention;
  return m;
}

inline ObjectiveConfig objective_config(const TrainConfig& c) {
  return {c.weights, DistanceConfig{c.dist, c.squared_dist}};
}

inline DistanceConfig distance_config(const TrainConfig& c) { return {c.dist, c.squared_dist}; }

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda1", w.lambda_sym},      {"lambda2", w.lambda_axiom}, {"lambda3", w.lambda_cls_attr},
          {"lambda4", w.lambda_cls_obj},  {"lambda5", w.lambda_tri},   {"alpha", w.margin}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"weights", to_json(c.weights)},
          {"gamma", c.gamma},
          {"seed", c.seed},
          {"embed_dim", c.embed_dim},
          {"feat_dim", c.feat_dim},
          {"latent_dim", c.latent_dim},
          {"attn_hidden", c.attn_hidden},
          {"cls_hidden", c.cls_hidden},
          {"obj_layers", c.obj_layers},
          {"profile", profile_name(c.profile)},
          {"dist", dist_name(c.dist)},
          {"attn_act", c.attn_act == AttnActivation::Sigmoid ? "sigmoid" : "softmax"},
          {"no_attention", c.no_attention},
          {"squared_dist", c.squared_dist},
          {"log_every", c.log_every}};
}

namespace detail {

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<V>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, std::string("config field '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

// Reads a config object. A "mit"/"ut" profile starts from its preset and
// lets the file override individual fields; "custom" requires every
// hyperparameter to be spelled out.
inline TrainConfig train_config_from_json(const nlohmann::json& j, std::string_view default_profile = "custom") {
  if (!j.is_object()) fail(ErrorCode::ParseError, "config must be a JSON object");
  std::string profile(default_profile);
  detail::read_opt(j, "profile", profile);
  TrainConfig c;
  if (profile == "custom") {
    static constexpr const char* kRequired[] = {"lr", "batch_size", "epochs", "weights", "gamma",
                                                "embed_dim", "feat_dim", "latent_dim", "attn_hidden"};
    for (const char* key : kRequired)
      if (!j.contains(key)) fail(ErrorCode::InvalidConfig, std::string("custom profile requires '") + key + "'");
    for (const char* key : {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "alpha"})
      if (!j["weights"].contains(key))
        fail(ErrorCode::InvalidConfig, std::string("custom profile requires weights.") + key);
    c.profile = Profile::Custom;
  } else {
    c = make_profile(profile);
  }
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "epochs", c.epochs);
  if (auto it = j.find("weights"); it != j.end()) {
    detail::read_opt(*it, "lambda1", c.weights.lambda_sym);
    detail::read_opt(*it, "lambda2", c.weights.lambda_axiom);
    detail::read_opt(*it, "lambda3", c.weights.lambda_cls_attr);
    detail::read_opt(*it, "lambda4", c.weights.lambda_cls_obj);
    detail::read_opt(*it, "lambda5", c.weights.lambda_tri);
    detail::read_opt(*it, "alpha", c.weights.margin);
  }
  detail::read_opt(j, "gamma", c.gamma);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "feat_dim", c.feat_dim);
  detail::read_opt(j, "latent_dim", c.latent_dim);
  detail::read_opt(j, "attn_hidden", c.attn_hidden);
  detail::read_opt(j, "cls_hidden", c.cls_hidden);
  detail::read_opt(j, "obj_layers", c.obj_layers);
  std::string s;
  if (j.contains("dist")) {
    detail::read_opt(j, "dist", s);
    c.dist = parse_dist(s);
  }
  if (j.contains("attn_act")) {
    detail::read_opt(j, "attn_act", s);
    c.attn_act = parse_attn_act(s);
  }
  detail::read_opt(j, "no_attention", c.no_attention);
  detail::read_opt(j, "squared_dist", c.squared_dist);
  detail::read_opt(j, "log_every", c.log_every);
  validate(c);
  return c;
}

}  // namespace symnet
