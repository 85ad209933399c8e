#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

#ifndef SYMNET_CLI_PATH
#error "SYMNET_CLI_PATH must name the symnet executable"
#endif

namespace symnet {
namespace {

struct RunResult {
  int status = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  test::TempDir dir;

  RunResult run(const std::string& args) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(SYMNET_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = io::read_text(out);
    r.err = io::read_text(err);
    return r;
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& text) { io::write_text(dir / name, text); }

  // Small dataset plus a fast training config.
  void make_dataset() {
    nlohmann::json spec = to_json(test::quick_spec(1));
    write("spec.json", spec.dump());
    ASSERT_EQ(run("synth --spec " + path("spec.json") + " --out " + path("ds")).status, 0);
    write("cfg.json", R"({"profile": "ut", "lr": 0.05, "batch_size": 16, "epochs": 2,
                          "latent_dim": 8, "attn_hidden": 8, "cls_hidden": 8})");
  }

  RunResult train(const std::string& out, const std::string& extra = "") {
    return run("train --data " + path("ds") + " --config " + path("cfg.json") + " --out " + path(out) + " --log " +
               path(out + ".log") + " " + extra);
  }
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("eval --data x").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("train --data x --out y --dist l3").status, 2);
}

TEST_F(Cli, GradcheckSucceeds) {
  const auto r = run("gradcheck --seed 7");
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out).at("passed").get<bool>());
}

TEST_F(Cli, DomainErrorExitsOneWithJson) {
  const auto r = run("eval --data " + path("missing") + " --ckpt " + path("none.symc"));
  EXPECT_EQ(r.status, 1);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "MissingFile");
  EXPECT_TRUE(j.contains("message"));
}

TEST_F(Cli, SynthTrainEvalPipeline) {
  make_dataset();
  const auto t = train("m.symc");
  ASSERT_EQ(t.status, 0) << t.err;
  std::ifstream log(path("m.symc.log"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).contains("total"));
    ++lines;
  }
  EXPECT_GT(lines, 0u);

  const auto e = run("eval --data " + path("ds") + " --ckpt " + path("m.symc") + " --dump-scores " + path("s.syms") +
                     " --report " + path("r.json"));
  ASSERT_EQ(e.status, 0) << e.err;
  const auto rep = nlohmann::json::parse(e.out);
  EXPECT_EQ(rep.at("protocol"), "closed");
  for (const char* k : {"1", "2", "3"}) EXPECT_TRUE(rep.at("topk").contains(k));
  EXPECT_EQ(nlohmann::json::parse(io::read_text(path("r.json"))), rep);
  EXPECT_EQ(decode_score_dump(io::read_file(path("s.syms"))).scores.size(), rep.at("n_samples").get<std::size_t>());

  const auto gz = run("eval --protocol generalized --topk 1,2 --data " + path("ds") + " --ckpt " + path("m.symc"));
  ASSERT_EQ(gz.status, 0) << gz.err;
  EXPECT_EQ(nlohmann::json::parse(gz.out).at("bias_grid").back(), "inf");
  EXPECT_EQ(run("eval --topk 0 --data " + path("ds") + " --ckpt " + path("m.symc")).status, 2);

  const auto c = run("components --data " + path("ds") + " --ckpt " + path("m.symc"));
  ASSERT_EQ(c.status, 0) << c.err;
  EXPECT_TRUE(nlohmann::json::parse(c.out).contains("obj_acc"));
}

TEST_F(Cli, TrainingIsReproducible) {
  make_dataset();
  ASSERT_EQ(train("a.symc", "--seed 3").status, 0);
  ASSERT_EQ(train("b.symc", "--seed 3").status, 0);
  EXPECT_EQ(io::read_file(path("a.symc")), io::read_file(path("b.symc")));
}

TEST_F(Cli, AblationFlagsReachTheCheckpoint) {
  make_dataset();
  const auto r = train("abl.symc", "--no-loss sym,tri --no-attention --dist l1");
  ASSERT_EQ(r.status, 0) << r.err;
  const Checkpoint ck = load_checkpoint(path("abl.symc"));
  EXPECT_EQ(ck.config.weights.lambda_sym, 0.0);
  EXPECT_EQ(ck.config.weights.lambda_tri, 0.0);
  EXPECT_GT(ck.config.weights.lambda_axiom, 0.0);
  EXPECT_TRUE(ck.config.no_attention);
  EXPECT_EQ(ck.config.dist, DistKind::L1);
  EXPECT_EQ(train("bad.symc", "--no-loss foo").status, 2);
}

TEST_F(Cli, RetrieveWritesTsv) {
  make_dataset();
  ASSERT_EQ(train("m.symc").status, 0);
  const auto meta = load_metadata(dir / "ds" / "meta.json");
  const std::string id = meta.samples[meta.sample_indices(Split::Test).front()].sample_id;
  const auto r = run("retrieve --data " + path("ds") + " --ckpt " + path("m.symc") + " --sample " + id +
                     " --remove attr0 --add 1 --k 4");
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "rank\tsample_id\tdistance");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2);
    EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(++rows));
  }
  EXPECT_EQ(rows, 4u);
  const auto bad = run("retrieve --data " + path("ds") + " --ckpt " + path("m.symc") + " --sample " + id +
                       " --remove 1 --add 1");
  EXPECT_EQ(bad.status, 1);
  EXPECT_EQ(nlohmann::json::parse(bad.err).at("error"), "IdenticalAttrIndices");
}

}  // namespace
}  // namespace symnet
