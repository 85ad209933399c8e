// symnet command-line tool: synth, train, eval, components, retrieve, gradcheck.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "symnet/symnet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace symnet;

namespace {

// Thrown for flag combinations CLI11 cannot express; exits with status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  DatasetMeta meta;
  FeatureMatrix features;
  EmbeddingTable embeds;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.meta = load_metadata(dir / "meta.json");
  d.features = load_features(dir / "features.bin", d.meta.samples.size());
  d.embeds = load_embeddings(dir / "embeds.bin", d.meta);
  return d;
}

json read_json_file(const fs::path& path) {
  const std::string text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> parse_topk(const std::string& s) {
  std::vector<std::size_t> ks;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || v == 0) throw UsageError("--topk expects positive integers, got '" + tok + "'");
    ks.push_back(v);
  }
  if (ks.empty()) throw UsageError("--topk is empty");
  return ks;
}

// Attribute by name or by index.
std::size_t resolve_attr(const DatasetMeta& meta, const std::string& s) {
  for (std::size_t i = 0; i < meta.attributes.size(); ++i)
    if (meta.attributes[i] == s) return i;
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || v >= meta.n_attrs())
    fail(ErrorCode::AttrOutOfRange, "unknown attribute '" + s + "'");
  return v;
}

void emit_report(const json& report, const std::string& path) {
  std::cout << report.dump(2) << '\n';
  if (!path.empty()) io::write_text(path, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, profile = "mit", config, out, log, no_loss, dist;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool profile_set = false;
  bool no_attention = false;
};

void apply_no_loss(TrainConfig& cfg, const std::string& list) {
  std::stringstream in(list);
  std::string term;
  while (std::getline(in, term, ',')) {
    auto& w = cfg.weights;
    if (term == "sym") w.lambda_sym = 0;
    else if (term == "axiom") w.lambda_axiom = 0;
    else if (term == "cls") w.lambda_cls_attr = w.lambda_cls_obj = 0;
    else if (term == "cls_a") w.lambda_cls_attr = 0;
    else if (term == "cls_o") w.lambda_cls_obj = 0;
    else if (term == "tri") w.lambda_tri = 0;
    else throw UsageError("--no-loss: unknown term '" + term + "' (sym, axiom, cls, cls_a, cls_o, tri)");
  }
}

int run_train(const TrainArgs& a) {
  if (a.profile == "custom" && a.config.empty()) throw UsageError("--profile custom requires --config");
  const Dataset d = load_dataset(a.data);

  json file = json::object();
  if (!a.config.empty()) file = read_json_file(a.config);
  if (!file.is_object()) fail(ErrorCode::ParseError, a.config + ": config must be a JSON object");
  // Input widths come from the data unless the config pins them.
  if (!file.contains("feat_dim")) file["feat_dim"] = d.features.cols();
  if (!file.contains("embed_dim")) file["embed_dim"] = d.embeds.cols();
  if (a.profile_set || !file.contains("profile")) file["profile"] = a.profile;
  TrainConfig cfg = train_config_from_json(file, a.profile);

  if (a.seed_set) cfg.seed = a.seed;
  if (!a.no_loss.empty()) apply_no_loss(cfg, a.no_loss);
  if (a.no_attention) cfg.no_attention = true;
  if (!a.dist.empty()) cfg.dist = parse_dist(a.dist);
  validate(cfg);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::binary);
    if (!log_file) fail(ErrorCode::IoError, "cannot open " + a.log);
    log = &log_file;
  }
  const TrainResult r = train(d.meta, d.features, d.embeds, cfg, log);
  save_checkpoint(r.checkpoint, a.out);
  const auto& last = r.epoch_means.back();
  std::cerr << "trained " << cfg.epochs << " epochs, " << r.steps.size() << " steps; last epoch total "
            << last.total << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, protocol = "closed", topk = "1,2,3", dump, report;
};

void print_closed_table(const CzslReport& r) {
  std::cerr << "closed-world, " << r.n_samples << " samples\n";
  for (const auto& [k, v] : r.topk) std::cerr << "  top-" << k << "  " << std::fixed << std::setprecision(4) << v << "\n";
  std::cerr << "  attr    " << r.attr_acc << "\n  obj     " << r.obj_acc << "\n";
}

void print_generalized_table(const GeneralizedReport& r) {
  std::cerr << "generalized, " << r.n_seen << " seen + " << r.n_unseen << " unseen samples\n";
  for (const auto& [k, v] : r.auc_topk)
    std::cerr << "  AUC top-" << k << "  " << std::fixed << std::setprecision(4) << v << "\n";
  std::cerr << "  seen " << r.seen_at_best << "  unseen " << r.unseen_at_best << "  HM " << r.best_hm << "\n";
}

int run_eval(const EvalArgs& a) {
  if (a.protocol != "closed" && a.protocol != "generalized")
    throw UsageError("--protocol must be closed or generalized");
  const auto ks = parse_topk(a.topk);
  const Dataset d = load_dataset(a.data);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const EvalInputs in{d.meta, d.features, d.embeds};
  if (a.protocol == "closed") {
    const auto ev = evaluate_closed_full(ck, in, ks);
    if (!a.dump.empty())
      io::write_file(a.dump, encode_score_dump(ev.scored, build_pair_mask(d.meta, Protocol::ClosedWorld)));
    emit_report(to_json(ev.report), a.report);
    print_closed_table(ev.report);
  } else {
    const auto ev = evaluate_generalized_full(ck, in, ks);
    if (!a.dump.empty())
      io::write_file(a.dump, encode_score_dump(ev.scored, build_pair_mask(d.meta, Protocol::Generalized)));
    emit_report(to_json(ev.report), a.report);
    print_generalized_table(ev.report);
  }
  return 0;
}

int run_components(const std::string& data, const std::string& ckpt) {
  const Dataset d = load_dataset(data);
  const Checkpoint ck = load_checkpoint(ckpt);
  const auto r = evaluate_components(ck, EvalInputs{d.meta, d.features, d.embeds});
  std::cout << to_json(r).dump(2) << '\n';
  std::cerr << "attr " << r.attr_acc << "  obj " << r.obj_acc << "  (" << r.n_samples << " samples)\n";
  return 0;
}

struct RetrieveArgs {
  std::string data, ckpt, sample, remove, add;
  std::size_t k = 5;
};

int run_retrieve(const RetrieveArgs& a) {
  const Dataset d = load_dataset(a.data);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto hits = retrieve(ck, EvalInputs{d.meta, d.features, d.embeds}, a.sample, resolve_attr(d.meta, a.remove),
                             resolve_attr(d.meta, a.add), a.k);
  std::cout << "rank\tsample_id\tdistance\n";
  for (const auto& h : hits) std::cout << h.rank << '\t' << h.sample_id << '\t' << std::setprecision(9) << h.distance << '\n';
  return 0;
}

int run_gradcheck_cmd(std::uint64_t seed, double tol, double h) {
  const auto rep = run_gradcheck(tiny_problem(seed), seed, h, tol);
  std::cout << to_json(rep).dump(2) << '\n';
  require_passed(rep);
  std::cerr << "gradcheck seed " << seed << ": " << rep.n_checked << " coordinates, max rel err "
            << rep.max_rel_err << "\n";
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
  SynthSpec spec = synth_spec_from_json(read_json_file(spec_path));
  if (seed) spec.seed = *seed;
  const SynthData d = gen_synthetic(spec);
  write_synthetic(d, spec, out);
  std::cerr << "wrote " << d.meta.samples.size() << " samples, " << d.meta.train_pairs.size() << " seen + "
            << d.meta.test_pairs.size() << " unseen pairs to " << out << "\n";
  return 0;
}

void report_domain_error(const Error& e) {
  std::string msg = e.what();
  const std::string prefix = std::string(error_code_name(e.code())) + ": ";
  if (msg.starts_with(prefix)) msg.erase(0, prefix.size());
  std::cerr << json{{"error", error_code_name(e.code())}, {"message", msg}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symmetry-based attribute-object composition learning"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", ta.data, "dataset directory")->required();
  auto* profile_opt = train_cmd->add_option("--profile", ta.profile, "hyperparameter profile")
      ->check(CLI::IsMember({"mit", "ut", "custom"}));
  train_cmd->add_option("--config", ta.config, "JSON config overriding the profile");
  train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
  auto* seed_opt = train_cmd->add_option("--seed", ta.seed, "random seed");
  train_cmd->add_option("--log", ta.log, "loss log path (default stdout)");
  train_cmd->add_option("--no-loss", ta.no_loss, "comma list of terms to disable: sym,axiom,cls,cls_a,cls_o,tri");
  train_cmd->add_flag("--no-attention", ta.no_attention, "drop attribute-as-attention gating");
  train_cmd->add_option("--dist", ta.dist, "distance for axioms and RMD")->check(CLI::IsMember({"l2", "l1", "cos"}));

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate pair recognition");
  eval_cmd->add_option("--data", ea.data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", ea.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--protocol", ea.protocol, "closed or generalized")
      ->check(CLI::IsMember({"closed", "generalized"}));
  eval_cmd->add_option("--topk", ea.topk, "comma list of k");
  eval_cmd->add_option("--dump-scores", ea.dump, "write per-sample pair scores");
  eval_cmd->add_option("--report", ea.report, "also write the JSON report here");

  std::string c_data, c_ckpt;
  auto* comp_cmd = app.add_subcommand("components", "attribute and object accuracy");
  comp_cmd->add_option("--data", c_data, "dataset directory")->required();
  comp_cmd->add_option("--ckpt", c_ckpt, "checkpoint")->required();

  RetrieveArgs ra;
  auto* ret_cmd = app.add_subcommand("retrieve", "nearest neighbours after attribute manipulation");
  ret_cmd->add_option("--data", ra.data, "dataset directory")->required();
  ret_cmd->add_option("--ckpt", ra.ckpt, "checkpoint")->required();
  ret_cmd->add_option("--sample", ra.sample, "source sample id")->required();
  ret_cmd->add_option("--remove", ra.remove, "attribute to remove (name or index)")->required();
  ret_cmd->add_option("--add", ra.add, "attribute to add (name or index)")->required();
  ret_cmd->add_option("--k", ra.k, "neighbours to return")->check(CLI::PositiveNumber);

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4, gc_h = 1e-5;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  gc_cmd->add_option("--seed", gc_seed, "random seed");
  gc_cmd->add_option("--tol", gc_tol, "relative tolerance")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--step", gc_h, "finite difference step")->check(CLI::PositiveNumber);

  std::string s_spec, s_out;
  std::uint64_t s_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--spec", s_spec, "JSON spec")->required();
  synth_cmd->add_option("--out", s_out, "output directory")->required();
  auto* s_seed_opt = synth_cmd->add_option("--seed", s_seed, "override the spec seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) {
      ta.seed_set = seed_opt->count() > 0;
      ta.profile_set = profile_opt->count() > 0;
      return run_train(ta);
    }
    if (*eval_cmd) return run_eval(ea);
    if (*comp_cmd) return run_components(c_data, c_ckpt);
    if (*ret_cmd) return run_retrieve(ra);
    if (*gc_cmd) return run_gradcheck_cmd(gc_seed, gc_tol, gc_h);
    if (*synth_cmd)
      return run_synth(s_spec, s_out, s_seed_opt->count() ? std::optional<std::uint64_t>(s_seed) : std::nullopt);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const Error& e) {
    report_domain_error(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 2;
}
