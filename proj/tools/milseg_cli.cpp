// milseg: synthetic-data weakly supervised segmentation pipeline.
//
// Exit codes: 0 success, 1 usage or config error, 2 gradient check failure,
// 3 I/O error.

#include "milseg/commands.hpp"
#include "milseg/errors.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace milseg;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::vector<std::string> overrides;
};

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.threads) cfg.threads = *f.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised segmentation from image-level labels"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonFlags common;
  app.add_option("--config", common.config, "config file (key = value lines)");
  app.add_option("--seed", common.seed, "master seed");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--threads", common.threads, "worker threads");
  app.add_option("--set", common.overrides, "override one config key, key=value");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset to --out");

  auto* train = app.add_subcommand("train", "train from image labels; writes checkpoint.bin and loss_log.csv");
  std::string train_data;
  train->add_option("--data", train_data, "training dataset (defaults to the config's dataset)");

  auto* infer_cmd = app.add_subcommand("infer", "segment images; writes <stem>.pgm per image");
  InferRequest req;
  std::string prior;
  std::string thresholds_path, proposals_path, proposals_dir;
  Index naive = 0;
  std::vector<std::string> inputs;
  infer_cmd->add_option("--checkpoint", req.checkpoint, "trained checkpoint")->required();
  infer_cmd->add_option("--prior", prior, "none | ilp | ilp+sppxl | ilp+bb | ilp+seg");
  infer_cmd->add_option("--thresholds", thresholds_path, "thresholds JSON from gridsearch");
  infer_cmd->add_option("--proposals", proposals_path, "proposal file used for every image");
  infer_cmd->add_option("--proposals-dir", proposals_dir, "directory of <stem>.txt proposal files");
  infer_cmd->add_option("--naive-proposals", naive, "score N sliding windows per image as proposals");
  infer_cmd->add_flag("--dump-probs", req.dump_probs, "also write <stem>.probs");
  infer_cmd->add_option("inputs", inputs, "images or dataset directories")->required();

  auto* eval_cmd = app.add_subcommand("eval", "compare predicted masks against ground truth");
  std::string pred_dir, gt_dir, eval_thresholds, report;
  eval_cmd->add_option("--pred", pred_dir, "directory of predicted masks")->required();
  eval_cmd->add_option("--gt", gt_dir, "ground-truth masks or dataset directory")->required();
  eval_cmd->add_option("--thresholds", eval_thresholds, "thresholds JSON to include in the report");
  eval_cmd->add_option("--report", report, "report path (default <out>/metrics.json)");

  auto* grid = app.add_subcommand("gridsearch", "choose per-class thresholds on a validation set");
  std::string grid_ckpt, val_dir, grid_proposals;
  grid->add_option("--checkpoint", grid_ckpt, "trained checkpoint")->required();
  grid->add_option("--val", val_dir, "validation dataset (defaults to the config's val_dataset)");
  grid->add_option("--proposals-dir", grid_proposals, "directory of NNNNN.txt proposal files");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  GradcheckOptions gc_opts;
  gc->add_option("--instances", gc_opts.instances, "random instances per suite");
  gc->add_flag("--inject-fault", gc_opts.inject_fault, "perturb analytic gradients (the check must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = resolve(common);
    if (*gen) {
      const fs::path out = common.out ? fs::path(*common.out) : fs::path(cfg.dataset);
      cmd_gen_data(cfg, out);
      std::cout << "wrote " << cfg.class_count * cfg.per_class << " samples to " << out.string() << '\n';
    } else if (*train) {
      if (!train_data.empty()) cfg.dataset = train_data;
      const auto model = cmd_train(cfg, cfg.out, &std::cout);
      std::cout << "checkpoint written to " << (fs::path(cfg.out) / "checkpoint.bin").string() << '\n';
      (void)model;
    } else if (*infer_cmd) {
      if (!prior.empty()) cfg.prior = parse_prior(prior);
      req.out = cfg.out;
      for (const auto& i : inputs) req.images.emplace_back(i);
      if (!thresholds_path.empty()) req.thresholds = thresholds_path;
      if (!proposals_path.empty()) req.proposals = proposals_path;
      if (!proposals_dir.empty()) req.proposals_dir = proposals_dir;
      if (naive > 0) req.naive_proposals = naive;
      cmd_infer(cfg, req);
    } else if (*eval_cmd) {
      const fs::path report_path = report.empty() ? fs::path(cfg.out) / "metrics.json" : fs::path(report);
      std::optional<fs::path> t;
      if (!eval_thresholds.empty()) t = eval_thresholds;
      const auto j = cmd_eval(cfg, pred_dir, gt_dir, t, report_path);
      std::cout << j.dump(2) << '\n';
    } else if (*grid) {
      std::optional<fs::path> p;
      if (!grid_proposals.empty()) p = grid_proposals;
      const auto t = cmd_gridsearch(cfg, grid_ckpt, val_dir.empty() ? cfg.val_dataset : val_dir, p,
                                    fs::path(cfg.out) / "thresholds.json");
      std::cout << thresholds_to_json(t).dump() << '\n';
    } else if (*gc) {
      gc_opts.seed = cfg.seed;
      const auto start = std::chrono::steady_clock::now();
      const auto suites = run_gradcheck(gc_opts);
      bool ok = true;
      for (const auto& s : suites) {
        ok = ok && s.passed();
        std::cout << std::left << std::setw(22) << s.name << " max rel err " << std::scientific << std::setprecision(3)
                  << s.max_relative_error << "  (tol " << s.tolerance << ", " << s.instances << " instances, "
                  << s.checked << " checked, " << s.skipped << " skipped)  " << (s.passed() ? "ok" : "FAIL") << '\n';
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << std::defaultfloat << "gradcheck " << (ok ? "passed" : "FAILED") << " in " << secs << " s\n";
      return ok ? 0 : 2;
    }
    return 0;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
