#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "symnet/autodiff.hpp"
#include "symnet/binary_io.hpp"
#include "symnet/config.hpp"
#include "symnet/data_model.hpp"
#include "symnet/error.hpp"
#include "symnet/model.hpp"
#include "symnet/objectives.hpp"
#include "symnet/rmd.hpp"

namespace symnet {

struct SynthSpec {
  std::size_t n_attrs = 6;
  std::size_t n_objs = 8;
  std::size_t feat_dim = 512;
  std::size_t latent_dim = 300;
  std::size_t samples_per_pair = 40;
  double unseen_fraction = 0.15;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  // Extra held-out test samples drawn for every seen pair, so the
  // generalized protocol has seen-pair samples to score.
  std::size_t seen_test_per_pair = 0;
  double embed_noise = 0.01;

  // Desk-scale setting used by the acceptance runs.
  static SynthSpec acceptance_default(std::uint64_t seed = 0) {
    SynthSpec s;
    s.latent_dim = 32;
    s.feat_dim = 64;
    s.seed = seed;
    return s;
  }
};

struct SynthTruth {
  Matrix<double> prototypes;  // n_objs x latent
  Matrix<double> offsets;     // n_attrs x latent
  Matrix<double> mixing;      // feat x latent
};

struct SynthData {
  DatasetMeta meta;
  FeatureMatrix features;
  EmbeddingTable embeds;
  SynthTruth truth;
  Matrix<double> latent;  // one row per sample, before mixing
};

inline void validate(const SynthSpec& s) {
  if (s.n_attrs < 2 || s.n_objs < 2) fail(ErrorCode::InvalidConfig, "need at least 2 attributes and 2 objects");
  if (s.feat_dim == 0 || s.latent_dim == 0) fail(ErrorCode::InvalidConfig, "dims must be positive");
  if (s.samples_per_pair == 0) fail(ErrorCode::InvalidConfig, "samples_per_pair must be positive");
  if (!(s.unseen_fraction > 0 && s.unseen_fraction < 1))
    fail(ErrorCode::InvalidConfig, "unseen_fraction must be in (0,1)");
  if (!(s.noise_sigma >= 0) || !std::isfinite(s.noise_sigma))
    fail(ErrorCode::InvalidConfig, "noise_sigma must be finite and >= 0");
  if (!(s.embed_noise >= 0) || !std::isfinite(s.embed_noise))
    fail(ErrorCode::InvalidConfig, "embed_noise must be finite and >= 0");
}

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n_attrs", s.n_attrs},
          {"n_objs", s.n_objs},
          {"feat_dim", s.feat_dim},
          {"latent_dim", s.latent_dim},
          {"samples_per_pair", s.samples_per_pair},
          {"unseen_fraction", s.unseen_fraction},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"seen_test_per_pair", s.seen_test_per_pair},
          {"embed_noise", s.embed_noise}};
}

// Missing fields keep the defaults of SynthSpec.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::ParseError, "synth spec must be a JSON object");
  SynthSpec s;
  detail::read_opt(j, "n_attrs", s.n_attrs);
  detail::read_opt(j, "n_objs", s.n_objs);
  detail::read_opt(j, "feat_dim", s.feat_dim);
  detail::read_opt(j, "latent_dim", s.latent_dim);
  detail::read_opt(j, "samples_per_pair", s.samples_per_pair);
  detail::read_opt(j, "unseen_fraction", s.unseen_fraction);
  detail::read_opt(j, "noise_sigma", s.noise_sigma);
  detail::read_opt(j, "seed", s.seed);
  detail::read_opt(j, "seen_test_per_pair", s.seen_test_per_pair);
  detail::read_opt(j, "embed_noise", s.embed_noise);
  validate(s);
  return s;
}

namespace detail {

inline double row_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double min_pairwise(const Matrix<double>& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.rows(); ++j) best = std::min(best, row_dist(m.row(i), m.row(j)));
  return best;
}

template <typename Rng>
Matrix<double> gaussian(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (auto& v : m.values()) v = sd * nd(rng);
  return m;
}

// Every attribute and every object keeps at least one seen pair.
inline bool covers_components(const std::vector<Pair>& seen, std::size_t n, std::size_t m) {
  std::vector<std::uint8_t> a(n, 0), o(m, 0);
  for (const auto& p : seen) a[p.attr] = o[p.obj] = 1;
  return std::all_of(a.begin(), a.end(), [](auto v) { return v; }) &&
         std::all_of(o.begin(), o.end(), [](auto v) { return v; });
}

}  // namespace detail

inline constexpr int kSplitRetries = 1000;

// Latent sample of pair (a, o) is prototype_o + u_a + N(0, sigma^2); the raw
// feature is mixing * latent. Everything is drawn from one rng seeded by
// spec.seed.
inline SynthData gen_synthetic(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = spec.n_attrs, m = spec.n_objs, L = spec.latent_dim;
  SynthData out;
  auto& t = out.truth;

  // Unit-variance coordinates give pairwise offset distances near sqrt(2L);
  // rescale when the noise level asks for more room.
  t.prototypes = detail::gaussian(m, L, 1.0, rng);
  t.offsets = detail::gaussian(n, L, 1.0, rng);
  const double required = 4.0 * spec.noise_sigma * std::sqrt(double(L));
  const double closest = detail::min_pairwise(t.offsets);
  if (closest < required * 1.05) {
    const double k = required * 1.05 / closest;
    for (auto& v : t.offsets.values()) v *= k;
  }
  t.mixing = detail::gaussian(spec.feat_dim, L, 1.0 / std::sqrt(double(L)), rng);

  // Pair split.
  std::vector<Pair> all;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t o = 0; o < m; ++o) all.push_back({a, o});
  const auto n_unseen = static_cast<std::size_t>(std::ceil(spec.unseen_fraction * double(all.size()) - 1e-9));
  if (n_unseen >= all.size()) fail(ErrorCode::InfeasibleSplit, "unseen_fraction leaves no seen pairs");
  std::vector<Pair> seen, unseen;
  bool ok = false;
  for (int attempt = 0; attempt < kSplitRetries && !ok; ++attempt) {
    std::vector<Pair> shuffled = all;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    unseen.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_unseen));
    seen.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_unseen), shuffled.end());
    ok = detail::covers_components(seen, n, m);
  }
  if (!ok) fail(ErrorCode::InfeasibleSplit, "no split keeps every attribute and object seen");
  std::sort(seen.begin(), seen.end());
  std::sort(unseen.begin(), unseen.end());

  auto& meta = out.meta;
  for (std::size_t a = 0; a < n; ++a) meta.attributes.push_back("attr" + std::to_string(a));
  for (std::size_t o = 0; o < m; ++o) meta.objects.push_back("obj" + std::to_string(o));
  meta.train_pairs = seen;
  meta.test_pairs = unseen;

  struct Draw {
    Pair p;
    Split split;
  };
  std::vector<Draw> draws;
  for (const auto& p : all) {
    const bool is_seen = std::binary_search(seen.begin(), seen.end(), p);
    for (std::size_t k = 0; k < spec.samples_per_pair; ++k) draws.push_back({p, is_seen ? Split::Train : Split::Test});
    if (is_seen)
      for (std::size_t k = 0; k < spec.seen_test_per_pair; ++k) draws.push_back({p, Split::Test});
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  out.latent = Matrix<double>(draws.size(), L);
  out.features = FeatureMatrix(draws.size(), spec.feat_dim);
  std::vector<double> z(L);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto& d = draws[i];
    for (std::size_t c = 0; c < L; ++c) {
      z[c] = t.prototypes(d.p.obj, c) + t.offsets(d.p.attr, c) + spec.noise_sigma * nd(rng);
      out.latent(i, c) = z[c];
    }
    for (std::size_t r = 0; r < spec.feat_dim; ++r)
      out.features(i, r) = static_cast<float>(dot(t.mixing.row(r).data(), z.data(), L));
    meta.samples.push_back({"s" + std::to_string(i), d.p.attr, d.p.obj, d.split});
  }

  out.embeds = EmbeddingTable(n, L);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t c = 0; c < L; ++c)
      out.embeds(a, c) = static_cast<float>(t.offsets(a, c) + spec.embed_noise * nd(rng));

  validate(meta);
  return out;
}

// Generating pair of a latent point: the nearest prototype_o + u_a.
inline Pair nearest_truth_pair(const SynthTruth& truth, std::span<const double> latent) {
  Pair best{0, 0};
  double best_d = std::numeric_limits<double>::infinity();
  const std::size_t L = truth.offsets.cols();
  for (std::size_t a = 0; a < truth.offsets.rows(); ++a)
    for (std::size_t o = 0; o < truth.prototypes.rows(); ++o) {
      double s = 0;
      for (std::size_t c = 0; c < L; ++c) {
        const double e = latent[c] - truth.prototypes(o, c) - truth.offsets(a, c);
        s += e * e;
      }
      if (s < best_d) {
        best_d = s;
        best = {a, o};
      }
    }
  return best;
}

// Ground truth for the d >= 0 rule: does this latent sample carry `attr`?
inline bool oracle_rmd_sign(const SynthTruth& truth, std::span<const double> latent, std::size_t attr) {
  return nearest_truth_pair(truth, latent).attr == attr;
}

// Fraction of (sample, attribute) cells where the model's sign rule agrees
// with the oracle.
inline double sign_agreement(const SynthTruth& truth, const Matrix<double>& latent,
                             std::span<const std::size_t> rows, std::span<const SampleScores> scores) {
  if (rows.size() != scores.size()) fail(ErrorCode::ShapeMismatch, "rows and scores differ in length");
  std::size_t agree = 0, total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t generating = nearest_truth_pair(truth, latent.row(rows[i])).attr;
    for (std::size_t a = 0; a < scores[i].d.size(); ++a) {
      agree += has_attribute(scores[i].d[a]) == (a == generating);
      ++total;
    }
  }
  return total ? double(agree) / double(total) : 0.0;
}

struct AxiomResiduals {
  double sym = 0, clo = 0, inv = 0, com = 0;
  std::size_t n_samples = 0;
};

// Mean axiom losses over `rows` in eval mode. Each sample's a_j is the
// attribute of a train negative drawn with the same object; samples whose
// object has no such negative are skipped.
template <typename T>
AxiomResiduals axiom_residuals(const SymNetModel<T>& model, const DatasetMeta& meta, const Matrix<T>& features,
                               const Matrix<T>& embeds, std::span<const std::size_t> rows, std::uint64_t seed,
                               const DistanceConfig& dist = {}) {
  std::mt19937_64 rng(seed);
  const NegativeSampler sampler(meta);
  std::vector<std::size_t> idx, ai, aj;
  for (std::size_t r : rows) {
    const auto& s = meta.samples.at(r);
    const auto neg = sampler.sample(s.attr, s.obj, rng);
    if (!neg) continue;
    idx.push_back(r);
    ai.push_back(s.attr);
    aj.push_back(meta.samples[*neg].attr);
  }
  AxiomResiduals out;
  out.n_samples = idx.size();
  if (idx.empty()) return out;

  auto& m = frozen(model);
  Graph<T> g(false);
  Var E = g.constant(embeds);
  Var F = project_feature(g, m, g.gather_rows(g.constant(features), idx));
  TransformedSet<T> s(g, F, g.gather_rows(E, ai), g.gather_rows(E, aj),
                      transform_fn(g, m, Branch::Couple, Mode::Eval),
                      transform_fn(g, m, Branch::Decouple, Mode::Eval));
  const double k = 1.0 / double(idx.size());
  out.sym = g.scalar(g.sum(loss_sym(s, dist))) * k;
  out.clo = g.scalar(g.sum(loss_clo(s, dist))) * k;
  out.inv = g.scalar(g.sum(loss_inv(s, dist))) * k;
  out.com = g.scalar(g.sum(loss_com(s, dist))) * k;
  return out;
}

inline nlohmann::json to_json(const AxiomResiduals& r) {
  return {{"sym", r.sym}, {"clo", r.clo}, {"inv", r.inv}, {"com", r.com}, {"n_samples", r.n_samples}};
}

inline nlohmann::json to_json(const SynthTruth& t) {
  auto rows = [](const Matrix<double>& m) {
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) a.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return a;
  };
  return {{"prototypes", rows(t.prototypes)}, {"offsets", rows(t.offsets)}, {"mixing", rows(t.mixing)}};
}

// meta.json, features.bin, embeds.bin, truth.json
inline void write_synthetic(const SynthData& d, const SynthSpec& spec, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  save_metadata(d.meta, dir / "meta.json");
  save_features(d.features, dir / "features.bin");
  save_embeddings(d.embeds, dir / "embeds.bin");
  nlohmann::json truth = to_json(d.truth);
  truth["spec"] = to_json(spec);
  truth["unseen_pairs"] = nlohmann::json::array();
  for (const auto& p : d.meta.test_pairs) truth["unseen_pairs"].push_back({p.attr, p.obj});
  io::write_text(dir / "truth.json", truth.dump(1) + "\n");
}

}  // namespace symnet
