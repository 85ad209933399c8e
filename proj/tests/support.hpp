#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "symnet/symnet.hpp"

namespace symnet::test {

// Evaluates expr and checks that it raises a symnet::Error with the given code.
#define EXPECT_SYMNET_ERROR(expr, ecode)                                                   \
  do {                                                                                     \
    try {                                                                                  \
      (void)(expr);                                                                        \
      ADD_FAILURE() << "expected " << ::symnet::error_code_name(ecode) << ", nothing thrown"; \
    } catch (const ::symnet::Error& e_) {                                                  \
      EXPECT_EQ(e_.code(), ecode) << e_.what();                                            \
    }                                                                                      \
  } while (0)

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("symnet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Closed-form stand-ins for CoN / DecoN. The embedding row passed in is used
// directly as the attribute offset u_a.
template <typename T>
struct Mocks {
  TransformFn<T> con, decon;
};

template <typename T>
Mocks<T> identity_mocks() {
  auto id = [](Var f, Var) { return f; };
  return {id, id};
}

template <typename T>
Mocks<T> additive_mocks(Graph<T>& g) {
  return {[&g](Var f, Var e) { return g.add(f, e); }, [&g](Var f, Var e) { return g.sub(f, e); }};
}

inline DatasetMeta two_by_two_meta() {
  DatasetMeta m;
  m.attributes = {"red", "peeled"};
  m.objects = {"apple", "pear"};
  m.train_pairs = {{0, 0}, {1, 1}};
  m.test_pairs = {{0, 1}};
  m.samples = {{"s0", 0, 0, Split::Train}, {"s1", 1, 1, Split::Train}, {"s2", 0, 1, Split::Test}};
  return m;
}

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix<T> m(r, c);
  for (auto& v : m.values()) v = static_cast<T>(nd(rng));
  return m;
}

inline ModelConfig small_model_config(std::size_t n_attrs, std::size_t n_objs, std::size_t feat = 6,
                                      std::size_t embed = 5, std::size_t latent = 4) {
  ModelConfig c;
  c.feat_dim = feat;
  c.embed_dim = embed;
  c.latent_dim = latent;
  c.attn_hidden = 7;
  c.cls_hidden = 6;
  c.n_attrs = n_attrs;
  c.n_objs = n_objs;
  return c;
}

// Small synthetic training setup that trains in well under a second.
inline SynthSpec quick_spec(std::uint64_t seed) {
  SynthSpec s;
  s.n_attrs = 3;
  s.n_objs = 4;
  s.feat_dim = 12;
  s.latent_dim = 8;
  s.samples_per_pair = 6;
  s.unseen_fraction = 0.25;
  s.seed = seed;
  s.seen_test_per_pair = 2;
  return s;
}

inline TrainConfig quick_config(const SynthSpec& s, std::uint64_t seed) {
  TrainConfig c = make_profile("ut");
  c.profile = Profile::Custom;
  c.feat_dim = s.feat_dim;
  c.embed_dim = s.latent_dim;
  c.latent_dim = 8;
  c.attn_hidden = 8;
  c.cls_hidden = 8;
  c.lr = 0.05;
  c.batch_size = 16;
  c.epochs = 2;
  c.seed = seed;
  return c;
}

}  // namespace symnet::test
