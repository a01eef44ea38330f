#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "loopkit/backbone.hpp"
#include "loopkit/experiment.hpp"
#include "loopkit/pr.hpp"

namespace fs = std::filesystem;
using namespace loopkit;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream os(dir / name);
  if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
  return os;
}

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, bool config_required = false) {
  auto* opt = sub->add_option("--config", c.config, "JSON config file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  sub->add_option("--seed", c.seed, "Seed override");
}

int cmd_flops(const Common& c) {
  const nlohmann::json cfg = c.config.empty() ? default_flop_config() : load_json(c.config);
  const auto rows = flop_report(cfg);
  auto os = open_out(c.out, "flops.csv");
  write_flop_csv(os, rows);
  for (const auto& r : rows)
    fmt::print("{:<22} {:>8}  {:9.3f} GFLOPs  {:12} params  D={}\n", r.config, r.input, r.gflops, r.params,
               r.desc_dim);
  return kOk;
}

int cmd_train(const Common& c, const std::string& loss, bool compare) {
  ToyExperimentConfig cfg = c.config.empty() ? ToyExperimentConfig{} : ToyExperimentConfig::from_json(load_json(c.config));
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.dataset.seed = *c.seed;
  }
  if (compare) {
    const LossComparison cmp = compare_losses(cfg);
    {
      auto os = open_out(c.out, "train_triplet.csv");
      write_train_log_csv(os, cmp.triplet.log);
    }
    {
      auto os = open_out(c.out, "train_allpair.csv");
      write_train_log_csv(os, cmp.allpair.log);
    }
    const auto summary = cmp.summary();
    open_out(c.out, "comparison.json") << summary.dump(2) << '\n';
    std::cout << summary.dump(2) << '\n';
    return cmp.val_pairs_dominates && cmp.zero_loss_dominates ? kOk : kCheckFailed;
  }
  const LossKind kind = parse_loss_kind(loss);
  const ToyDataset data = generate_toy_dataset(cfg.dataset);
  const TrainResult r = toy_train(data, cfg.train, kind);
  auto os = open_out(c.out, fmt::format("train_{}.csv", loss_name(kind)));
  write_train_log_csv(os, r.log);
  if (!r.log.empty()) {
    const auto& last = r.log.back();
    fmt::print("{}: iter {} val pairs {:.2f}% train pairs {:.2f}% cumulative zero-loss {}\n", loss_name(kind),
               last.iter, last.val_pairs_pct, last.train_pairs_pct, r.cumulative_zero_loss);
  }
  return r.diverged ? kCheckFailed : kOk;
}

int cmd_gradcheck(const Common& c, bool flip_sign) {
  GradcheckConfig cfg;
  if (!c.config.empty()) {
    const auto j = load_json(c.config);
    cfg.tuples = j.value("tuples", cfg.tuples);
    cfg.tolerance = j.value("tolerance", cfg.tolerance);
    cfg.step = j.value("step", cfg.step);
    cfg.kink_margin = j.value("kink_margin", cfg.kink_margin);
    cfg.margin = j.value("margin", cfg.margin);
    cfg.seed = j.value("seed", cfg.seed);
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.flip_sign = flip_sign;
  const auto results = run_gradcheck(cfg);
  nlohmann::json report = nlohmann::json::array();
  bool ok = true;
  for (const auto& r : results) {
    fmt::print("{:<22} tuples {:4}  max rel err {:.3e}  {}\n", r.name, r.checked, r.max_relative_error,
               r.passed ? "ok" : "FAIL");
    report.push_back({{"check", r.name}, {"tuples", r.checked}, {"max_relative_error", r.max_relative_error},
                      {"passed", r.passed}});
    ok = ok && r.passed;
  }
  open_out(c.out, "gradcheck.json") << report.dump(2) << '\n';
  return ok ? kOk : kCheckFailed;
}

int cmd_simulate(const Common& c) {
  SimulationConfig cfg = SimulationConfig::from_json(load_json(c.config));
  if (c.seed) cfg.sim.seed = *c.seed;
  const SimulationRun run = run_simulation(cfg);
  write_simulation_reports(c.out, run);
  std::cout << run.metrics().dump(2) << '\n';
  return kOk;
}

int cmd_pr_eval(const Common& c, const std::string& stream_path, const std::string& gt_path) {
  PlaceDbConfig db;
  if (!c.config.empty()) db = PlaceDbConfig::from_json(load_json(c.config));
  const GroundTruth truth = GroundTruth::from_json(load_json(gt_path));
  db.exclusion_window = truth.exclusion_window;
  std::ifstream is(stream_path);
  if (!is) throw UsageError("cannot open " + stream_path);
  const auto stream = read_keyframes_jsonl(is);
  const auto records = retrieval_records(stream, db, [&](KeyframeId id) { return truth.true_matches(id); });
  const PrCurve curve = pr_curve(records);
  {
    auto os = open_out(c.out, "pr.csv");
    write_pr_csv(os, curve);
  }
  open_out(c.out, "pr.json") << nlohmann::json{{"auc", curve.auc}, {"points", curve.points.size()}}.dump(2) << '\n';
  fmt::print("AUC {:.6f} over {} keyframes\n", curve.auc, stream.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loop-closure and kidnap-recovery toolkit"};
  app.require_subcommand(1);

  Common flops_opts, train_opts, grad_opts, sim_opts, pr_opts;
  auto* flops = app.add_subcommand("flops", "Write the FLOP/parameter table for the configured backbones");
  add_common(flops, flops_opts);

  auto* train = app.add_subcommand("train-toy", "Train the toy NetVLAD model and write the training log");
  add_common(train, train_opts);
  std::string loss = "allpair";
  bool compare = false;
  train->add_option("--loss", loss, "Loss function")->check(CLI::IsMember({"triplet", "allpair"}))->capture_default_str();
  train->add_flag("--compare", compare, "Run both losses with one seed and write a comparison summary");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  add_common(grad, grad_opts);
  bool flip_sign = false;
  grad->add_flag("--flip-sign", flip_sign, "Negate the analytic gradient (the check must then fail)");

  auto* sim = app.add_subcommand("simulate", "Generate a keyframe stream, run the pipeline and write reports");
  add_common(sim, sim_opts, true);

  auto* pr = app.add_subcommand("pr-eval", "Precision-recall curve of top-1 retrieval over a stream");
  add_common(pr, pr_opts);
  std::string stream_path, gt_path;
  pr->add_option("--stream", stream_path, "Keyframe stream (JSONL)")->required();
  pr->add_option("--gt", gt_path, "Ground truth (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*flops) return cmd_flops(flops_opts);
    if (*train) return cmd_train(train_opts, loss, compare);
    if (*grad) return cmd_gradcheck(grad_opts, flip_sign);
    if (*sim) return cmd_simulate(sim_opts);
    if (*pr) return cmd_pr_eval(pr_opts, stream_path, gt_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kUsage;
}
