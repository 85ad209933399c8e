#include <cmath>

#include "oracles.hpp"
#include "support.hpp"

namespace symnet {
namespace {

// Two samples against two unit-norm attribute embeddings.
struct MockRmd : ::testing::Test {
  Graph<double> g{false};
  Var F = g.constant(Matrix<double>{{0.5, -1.0, 2.0}, {0.0, 3.0, 1.0}});
  Var E = g.constant(Matrix<double>{{1, 0, 0}, {0, 0.6, 0.8}});

  std::vector<RmdResult> run(TransformFn<double> con, TransformFn<double> decon) {
    auto [dp, dm] = rmd_distances(g, F, E, con, decon);
    return unpack_rmd(g.value(dp), g.value(dm), 2);
  }
};

TEST_F(MockRmd, SharedTransformGivesZero) {
  auto shift = [this](Var x, Var e) { return g.add(x, g.scale(e, 0.7)); };
  for (const auto& r : run(shift, shift))
    for (double d : r.d) EXPECT_EQ(d, 0.0);
}

TEST_F(MockRmd, KnownDistances) {
  const auto res = run([this](Var x, Var e) { return g.add(x, g.scale(e, 0.2)); },
                       [this](Var x, Var e) { return g.sub(x, e); });
  ASSERT_EQ(res.size(), 2u);
  for (const auto& r : res)
    for (std::size_t a = 0; a < 2; ++a) {
      EXPECT_NEAR(r.d_plus[a], 0.2, 1e-12);
      EXPECT_NEAR(r.d_minus[a], 1.0, 1e-12);
      EXPECT_NEAR(r.d[a], 0.8, 1e-12);
      EXPECT_TRUE(has_attribute(r.d[a]));
    }
  EXPECT_TRUE(has_attribute(0.0));
  EXPECT_FALSE(has_attribute(-1e-12));
}

TEST(AttrProbs, Values) {
  const double d[] = {0.0, 0.8, -0.8};
  const auto p = attr_probs(d, 1.0);
  EXPECT_EQ(p[0], 0.5);
  EXPECT_NEAR(p[1], 0.68997448112, 1e-10);
  EXPECT_NEAR(p[1] + p[2], 1.0, 1e-15);
  EXPECT_NEAR(attr_probs(d, 2.0)[1], kernels::sigmoid(1.6), 1e-15);
  EXPECT_SYMNET_ERROR(attr_probs(d, 0.0), ErrorCode::NonPositiveGamma);
  EXPECT_SYMNET_ERROR(attr_probs(d, -1.0), ErrorCode::NonPositiveGamma);
}

TEST(ObjectProbs, SoftmaxOfEqualLogits) {
  EXPECT_EQ(softmax(std::vector<double>{0, 0}), (std::vector<double>{0.5, 0.5}));
  // Zeroed classifier output layer gives equal logits.
  auto model = SymNetModel<double>::init(test::small_model_config(2, 4), 3);
  for (const char* n : {"obj_clf.fc2.W", "obj_clf.fc2.b"}) model.params.at(n).fill(0.0);
  std::mt19937_64 rng(1);
  for (const auto& row : object_probs(model, test::random_matrix<double>(3, 4, rng)))
    for (double p : row) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(PairScores, ProductAndTopK) {
  PairMask mask;
  mask.n = 2;
  mask.m = 2;
  mask.cells = {1, 1, 1, 1};
  const double pa[] = {0.8, 0.3}, po[] = {0.5, 0.5};
  const auto s = pair_scores(pa, po, mask);
  EXPECT_DOUBLE_EQ(s(0, 0), 0.4);
  EXPECT_DOUBLE_EQ(s(1, 1), 0.15);
  // Ties go to the lower flat index.
  EXPECT_EQ(top_k(s, 3), (std::vector<Pair>{{0, 0}, {0, 1}, {1, 0}}));
  EXPECT_EQ(top_k(s, 99).size(), 4u);
  const double bad[] = {0.1, 0.2, 0.3};
  EXPECT_SYMNET_ERROR(pair_scores(bad, po, mask), ErrorCode::ShapeMismatch);
}

TEST(PairScores, MaskTakesPrecedence) {
  PairMask mask;
  mask.n = 2;
  mask.m = 2;
  mask.cells = {0, 1, 0, 0};
  const double pa[] = {0.9, 0.1}, po[] = {0.99, 0.01};
  const auto s = pair_scores(pa, po, mask);
  EXPECT_EQ(top_k(s, 1), (std::vector<Pair>{{0, 1}}));
  mask.cells = {0, 0, 0, 0};
  EXPECT_SYMNET_ERROR(top_k(pair_scores(pa, po, mask), 1), ErrorCode::EmptyCandidateSet);
}

TEST(RmdScores, BatchedEqualsOneAtATime) {
  EXPECT_LE(test::rmd_batch_gap(40, 5), 1e-6);
}

TEST(RmdScores, ShapeChecks) {
  auto model = SymNetModel<float>::init(test::small_model_config(3, 2), 1);
  EXPECT_SYMNET_ERROR(rmd_scores(model, Matrix<float>(2, 5), Matrix<float>(3, 5)), ErrorCode::ShapeMismatch);
  EXPECT_SYMNET_ERROR(rmd_scores(model, Matrix<float>(2, 4), Matrix<float>(3, 2)), ErrorCode::ShapeMismatch);
  EXPECT_SYMNET_ERROR(object_probs(model, Matrix<float>(2, 3)), ErrorCode::ShapeMismatch);
}

// infer() is the projected, batched form of rmd_scores + object_probs.
TEST(Infer, MatchesComponentCalls) {
  auto model = SymNetModel<double>::init(test::small_model_config(3, 2), 9);
  std::mt19937_64 rng(4);
  const Matrix<double> raw = test::random_matrix<double>(7, 6, rng), emb = test::random_matrix<double>(3, 5, rng);
  const std::vector<std::size_t> rows = {6, 0, 3};
  const auto got = infer(model, raw, rows, emb, 2.0, {}, 2);
  const Matrix<double> latent = project_features(model, raw);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto want = rmd_scores<double>(model, latent.row(rows[i]), emb);
    attr_probs(want, 2.0);
    EXPECT_EQ(got[i].d, want.d);
    EXPECT_EQ(got[i].p_attr, want.p_attr);
    Matrix<double> one(1, latent.cols(), std::vector<double>(latent.row(rows[i]).begin(), latent.row(rows[i]).end()));
    EXPECT_EQ(got[i].p_obj, object_probs(model, one).front());
  }
  EXPECT_SYMNET_ERROR(infer(model, raw, rows, emb, 0.0), ErrorCode::NonPositiveGamma);
}

TEST(EvalThreads, ReadsEnvironment) {
  ::setenv("SYMNET_THREADS", "3", 1);
  EXPECT_EQ(eval_threads(), 3u);
  ::setenv("SYMNET_THREADS", "0", 1);
  EXPECT_GE(eval_threads(), 1u);
  ::unsetenv("SYMNET_THREADS");
  EXPECT_GE(eval_threads(), 1u);
}

}  // namespace
}  // namespace symnet
