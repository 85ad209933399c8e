#include <cstring>

#include "support.hpp"

namespace symnet {
namespace {

SymNetModel<double> model(std::uint64_t seed = 3) {
  return SymNetModel<double>::init(test::small_model_config(3, 2), seed);
}

TEST(Projector, ZeroInputGivesBias) {
  auto m = model();
  std::mt19937_64 rng(1);
  m.params.at("proj.b") = test::random_matrix<double>(1, 4, rng);
  Graph<double> g(false);
  Var f = project_feature(g, m, g.constant(Matrix<double>(1, 6)));
  EXPECT_EQ(g.value(f), m.params.at("proj.b"));
}

TEST(Attention, ZeroWeightsGiveHalfGate) {
  auto m = model();
  m.params.at("con.attn_fc2.W").fill(0);
  std::mt19937_64 rng(2);
  Graph<double> g(false);
  Var a = attention(g, m, Branch::Couple, g.constant(test::random_matrix<double>(3, 5, rng)), Mode::Eval);
  for (double v : g.value(a).values()) EXPECT_EQ(v, 0.5);
}

TEST(Attention, SoftmaxVariantSumsToOne) {
  auto cfg = test::small_model_config(3, 2);
  cfg.attn_act = AttnActivation::Softmax;
  auto m = SymNetModel<double>::init(cfg, 1);
  std::mt19937_64 rng(2);
  Graph<double> g(false);
  Var a = attention(g, m, Branch::Decouple, g.constant(test::random_matrix<double>(2, 5, rng)), Mode::Eval);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (double v : g.value(a).row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Transform, ZeroedHeadReturnsBias) {
  auto m = model();
  m.params.at("con.main_fc2.W").fill(0);
  std::mt19937_64 rng(5);
  m.params.at("con.main_fc2.b") = test::random_matrix<double>(1, 4, rng);
  for (int trial = 0; trial < 3; ++trial) {
    Graph<double> g(false);
    Var out = apply_transform(g, m, Branch::Couple, g.constant(test::random_matrix<double>(1, 4, rng)),
                              g.constant(test::random_matrix<double>(1, 5, rng)), Mode::Eval);
    EXPECT_EQ(g.value(out), m.params.at("con.main_fc2.b"));
  }
}

TEST(Transform, IdentityElementIsSkip) {
  Graph<double> g(false);
  Var f = g.constant(Matrix<double>{{1, 2, 3}});
  EXPECT_EQ(g.value(t_e(f)), (Matrix<double>{{1, 2, 3}}));
}

TEST(Transform, BranchesHaveSeparateParameters) {
  auto m = model();
  std::mt19937_64 rng(6);
  const auto f = test::random_matrix<double>(2, 4, rng), e = test::random_matrix<double>(2, 5, rng);
  Graph<double> g(false);
  Var c = apply_transform(g, m, Branch::Couple, g.constant(f), g.constant(e), Mode::Eval);
  Var d = apply_transform(g, m, Branch::Decouple, g.constant(f), g.constant(e), Mode::Eval);
  EXPECT_NE(g.value(c), g.value(d));
}

TEST(Transform, NoAttentionIgnoresGate) {
  auto cfg = test::small_model_config(3, 2);
  cfg.no_attention = true;
  auto m = SymNetModel<double>::init(cfg, 4);
  m.params.at("con.attn_fc1.W").fill(1e6);
  std::mt19937_64 rng(6);
  const auto f = test::random_matrix<double>(2, 4, rng), e = test::random_matrix<double>(2, 5, rng);
  Graph<double> g(false);
  Var out = apply_transform(g, m, Branch::Couple, g.constant(f), g.constant(e), Mode::Eval);
  EXPECT_TRUE(g.value(out).all_finite());
}

TEST(Transform, EvalModeIsDeterministicAndBatchInvariant) {
  auto cfg = test::small_model_config(3, 2);
  auto m = SymNetModel<float>::init(cfg, 9);
  std::mt19937_64 rng(6);
  m.params.at("con.bn_main.running_mean") = test::random_matrix<float>(1, 4, rng, 0.3);
  const auto f = test::random_matrix<float>(5, 4, rng), e = test::random_matrix<float>(5, 5, rng);
  auto run = [&](const Matrix<float>& ff, const Matrix<float>& ee) {
    Graph<float> g(false);
    return g.value(apply_transform(g, m, Branch::Couple, g.constant(ff), g.constant(ee), Mode::Eval));
  };
  const auto a = run(f, e), b = run(f, e);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
  for (std::size_t i = 0; i < 5; ++i) {
    Matrix<float> fi(1, 4, std::vector<float>(f.row(i).begin(), f.row(i).end()));
    Matrix<float> ei(1, 5, std::vector<float>(e.row(i).begin(), e.row(i).end()));
    const auto r = run(fi, ei);
    EXPECT_EQ(std::memcmp(r.data(), a.row(i).data(), 4 * sizeof(float)), 0) << "row " << i;
  }
}

TEST(Transform, TrainModeUpdatesRunningStats) {
  auto m = model();
  std::mt19937_64 rng(6);
  const auto before = m.params.at("decon.bn_attn.running_mean");
  Graph<double> g;
  apply_transform(g, m, Branch::Decouple, g.constant(test::random_matrix<double>(4, 4, rng)),
                  g.constant(test::random_matrix<double>(4, 5, rng)), Mode::Train);
  EXPECT_NE(m.params.at("decon.bn_attn.running_mean"), before);
  EXPECT_EQ(m.params.at("con.bn_attn.running_mean"), before);
}

TEST(Classifiers, OutputWidths) {
  auto cfg = test::small_model_config(3, 2);
  cfg.obj_layers = 3;
  auto m = SymNetModel<double>::init(cfg, 1);
  Graph<double> g(false);
  Var f = g.constant(Matrix<double>(2, 4, 0.3));
  EXPECT_EQ(g.value(attr_logits(g, m, f)).cols(), 3u);
  EXPECT_EQ(g.value(obj_logits(g, m, f)).cols(), 2u);
  EXPECT_TRUE(m.params.contains("obj_clf.fc3.W"));
}

TEST(Classifiers, ZeroWeightsGiveUniformObjects) {
  auto m = SymNetModel<float>::init(test::small_model_config(3, 5), 1);
  m.params.at("obj_clf.fc2.W").fill(0);
  const auto p = object_probs(m, Matrix<float>(2, 4, 0.7f));
  for (const auto& row : p)
    for (double v : row) EXPECT_NEAR(v, 0.2, 1e-7);
}

TEST(ModelConfigJson, RoundTripAndValidation) {
  auto cfg = test::small_model_config(3, 2);
  cfg.attn_act = AttnActivation::Softmax;
  cfg.obj_layers = 3;
  const auto back = model_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  auto bad = to_json(cfg);
  bad["obj_layers"] = 4;
  EXPECT_SYMNET_ERROR(model_config_from_json(bad), ErrorCode::InvalidConfig);
  bad = to_json(cfg);
  bad.erase("latent_dim");
  EXPECT_SYMNET_ERROR(model_config_from_json(bad), ErrorCode::ParseError);
}

}  // namespace
}  // namespace symnet
