#include <fstream>
#include <sstream>

#include "support.hpp"

namespace symnet {
namespace {

TEST(Profiles, PresetValues) {
  const auto mit = make_profile("mit");
  EXPECT_EQ(mit.profile, Profile::Mit);
  EXPECT_DOUBLE_EQ(mit.lr, 5e-4);
  EXPECT_EQ(mit.batch_size, 512u);
  EXPECT_EQ(mit.epochs, 320u);
  EXPECT_DOUBLE_EQ(mit.weights.lambda_sym, 0.05);
  EXPECT_DOUBLE_EQ(mit.weights.lambda_axiom, 0.01);
  EXPECT_DOUBLE_EQ(mit.weights.lambda_cls_attr, 1.0);
  EXPECT_DOUBLE_EQ(mit.weights.lambda_cls_obj, 0.01);
  EXPECT_DOUBLE_EQ(mit.weights.lambda_tri, 0.03);

  const auto ut = make_profile("ut");
  EXPECT_EQ(ut.profile, Profile::Ut);
  EXPECT_DOUBLE_EQ(ut.weights.lambda_sym, 0.01);
  EXPECT_DOUBLE_EQ(ut.weights.lambda_axiom, 0.03);
  EXPECT_DOUBLE_EQ(ut.weights.lambda_cls_obj, 0.5);
  EXPECT_DOUBLE_EQ(ut.weights.lambda_tri, 0.5);
  EXPECT_DOUBLE_EQ(ut.weights.margin, 0.5);

  EXPECT_SYMNET_ERROR(make_profile("cub"), ErrorCode::UnknownProfile);
}

TEST(Config, JsonRoundTrip) {
  auto c = make_profile("ut");
  c.seed = 42;
  c.dist = DistKind::L1;
  c.no_attention = true;
  c.weights.lambda_tri = 0;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.dist, DistKind::L1);
}

TEST(Config, CustomProfileNeedsEveryField) {
  nlohmann::json j = {{"profile", "custom"}, {"lr", 0.1}};
  EXPECT_SYMNET_ERROR(train_config_from_json(j), ErrorCode::InvalidConfig);
  EXPECT_SYMNET_ERROR(train_config_from_json(nlohmann::json::array()), ErrorCode::ParseError);
  EXPECT_EQ(train_config_from_json({{"profile", "mit"}, {"epochs", 3}}).epochs, 3u);
}

TEST(Config, Validation) {
  auto c = make_profile("mit");
  c.lr = 0;
  EXPECT_SYMNET_ERROR(validate(c), ErrorCode::InvalidConfig);
  c = make_profile("mit");
  c.gamma = -1;
  EXPECT_SYMNET_ERROR(validate(c), ErrorCode::NonPositiveGamma);
}

struct Training : ::testing::Test {
  SynthSpec spec = test::quick_spec(2);
  SynthData data = gen_synthetic(spec);
  TrainConfig cfg = test::quick_config(spec, 5);
};

TEST_F(Training, SameSeedGivesIdenticalCheckpoints) {
  const auto a = train(data.meta, data.features, data.embeds, cfg);
  const auto b = train(data.meta, data.features, data.embeds, cfg);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  cfg.seed = 6;
  const auto c = train(data.meta, data.features, data.embeds, cfg);
  EXPECT_NE(encode_checkpoint(a.checkpoint), encode_checkpoint(c.checkpoint));
}

TEST_F(Training, LossLogHasOneJsonLinePerStep) {
  std::ostringstream log;
  const auto r = train(data.meta, data.features, data.embeds, cfg, &log);
  std::istringstream in(log.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    EXPECT_EQ(keys, (std::vector<std::string>{"clo", "cls_a", "cls_o", "com", "epoch", "inv", "step", "sym", "total",
                                              "tri"}));
    EXPECT_EQ(j.at("step"), n);
    ++n;
  }
  EXPECT_EQ(n, r.steps.size());
  const std::size_t train_n = data.meta.sample_indices(Split::Train).size();
  EXPECT_EQ(n, cfg.epochs * ((train_n + cfg.batch_size - 1) / cfg.batch_size));
  EXPECT_EQ(r.epoch_means.size(), cfg.epochs);
}

TEST_F(Training, LossDecreasesOverEpochs) {
  cfg.epochs = 15;
  const auto r = train(data.meta, data.features, data.embeds, cfg);
  EXPECT_LT(r.epoch_means.back().total, r.epoch_means.front().total);
}

TEST_F(Training, CheckpointRoundTripIsByteIdentical) {
  const auto r = train(data.meta, data.features, data.embeds, cfg);
  test::TempDir dir;
  save_checkpoint(r.checkpoint, dir / "a.symc");
  const Checkpoint back = load_checkpoint(dir / "a.symc");
  save_checkpoint(back, dir / "b.symc");
  EXPECT_EQ(io::read_file(dir / "a.symc"), io::read_file(dir / "b.symc"));
  EXPECT_EQ(back.model.params, r.checkpoint.model.params);
  EXPECT_EQ(back.epoch, cfg.epochs);
  // The stored rng state resumes the same stream.
  auto rng = rng_from_state(back.rng_state);
  auto again = rng_from_state(r.checkpoint.rng_state);
  EXPECT_EQ(rng(), again());
}

TEST_F(Training, CheckpointTensorSetIsChecked) {
  const auto r = train(data.meta, data.features, data.embeds, cfg);
  ParameterStore<float> missing, extra;
  for (const auto& [name, e] : r.checkpoint.model.params) {
    extra.add(name, e.value, e.rank, e.trainable);
    if (name != "con.main_fc1.W" && name != "proj.W") missing.add(name, e.value, e.rank, e.trainable);
  }
  extra.add("stray.W", Matrix<float>(2, 2), 2);
  Checkpoint ck = r.checkpoint;
  ck.model = SymNetModel<float>(r.checkpoint.model.config, missing);
  EXPECT_SYMNET_ERROR(decode_checkpoint(encode_checkpoint(ck)), ErrorCode::MissingParameter);
  ck.model = SymNetModel<float>(r.checkpoint.model.config, extra);
  EXPECT_SYMNET_ERROR(decode_checkpoint(encode_checkpoint(ck)), ErrorCode::MissingParameter);

  io::Bytes bytes = encode_checkpoint(r.checkpoint);
  bytes[4] = 2;
  EXPECT_SYMNET_ERROR(decode_checkpoint(bytes), ErrorCode::VersionMismatch);
  bytes[0] = 'X';
  EXPECT_SYMNET_ERROR(decode_checkpoint(bytes), ErrorCode::BadMagic);
  bytes = encode_checkpoint(r.checkpoint);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes), Error);
}

TEST_F(Training, InputErrors) {
  DatasetMeta no_train = data.meta;
  for (auto& s : no_train.samples) s.split = Split::Test;
  EXPECT_SYMNET_ERROR(train(no_train, data.features, data.embeds, cfg), ErrorCode::EmptyTrainSplit);
  FeatureMatrix narrow(data.features.rows(), 3);
  EXPECT_SYMNET_ERROR(train(data.meta, narrow, data.embeds, cfg), ErrorCode::DimMismatch);
  EmbeddingTable few(1, data.embeds.cols());
  EXPECT_SYMNET_ERROR(train(data.meta, data.features, few, cfg), ErrorCode::RowCountMismatch);
  cfg.batch_size = 0;
  EXPECT_SYMNET_ERROR(train(data.meta, data.features, data.embeds, cfg), ErrorCode::InvalidConfig);
}

// Every anchor with a negative contributes a second, role-swapped row.
TEST_F(Training, BatchesAreSymmetric) {
  const NegativeSampler sampler(data.meta);
  std::vector<std::uint8_t> used(data.meta.samples.size(), 0);
  std::mt19937_64 rng(3);
  const auto anchors = data.meta.sample_indices(Split::Train);
  const auto rows = assemble_batch(data.meta, sampler, std::span(anchors).subspan(0, 8), rng, used);
  std::size_t i = 0;
  for (std::size_t a = 0; a < 8; ++a) {
    ASSERT_LT(i, rows.size());
    EXPECT_EQ(rows[i].sample, anchors[a]);
    if (!rows[i].neg_attr) {
      ++i;
      continue;
    }
    const auto& neg = rows[i + 1];
    EXPECT_EQ(neg.obj, rows[i].obj);
    EXPECT_EQ(neg.attr, *rows[i].neg_attr);
    EXPECT_EQ(*neg.neg_attr, rows[i].attr);
    i += 2;
  }
  EXPECT_EQ(i, rows.size());
  EXPECT_EQ(std::count(used.begin(), used.end(), 1), 0);
}

}  // namespace
}  // namespace symnet
