#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oltr/checkpoint.hpp"
#include "oltr/config.hpp"
#include "oltr/evaluate.hpp"
#include "oltr/explore.hpp"
#include "oltr/gradient_suite.hpp"
#include "oltr/train.hpp"

namespace {

using namespace oltr;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string data_dir;
  std::string checkpoint_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string precision;
};

ExperimentConfig load_config(const CommonArgs& args) {
  ExperimentConfig cfg =
      args.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(args.config_path);
  if (!args.precision.empty()) {
    if (args.precision != "f32" && args.precision != "f64") {
      throw ConfigError("config: --precision must be f32 or f64");
    }
    cfg.training.precision = args.precision;
  }
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << text;
}

Dataset load_data(const CommonArgs& args) {
  if (args.data_dir.empty()) throw ConfigError("config: --data directory is required");
  return load_dataset(args.data_dir + "/dataset.json", args.data_dir + "/dataset.bin");
}

int cmd_gen_data(CommonArgs args) {
  ExperimentConfig cfg = load_config(args);
  if (args.seed_set) cfg.dataset.seed = args.seed;
  Dataset ds = generate_dataset(cfg);
  fs::create_directories(args.out_dir);
  save_dataset(ds, args.out_dir + "/dataset.json", args.out_dir + "/dataset.bin");
  write_text(args.out_dir + "/config.json", cfg.to_json() + "\n");
  std::cout << "wrote " << ds.train_size() << " train / " << ds.test_size() << " test samples to "
            << args.out_dir << "\n";
  return 0;
}

template <std::floating_point T>
int run_train(const ExperimentConfig& cfg, const Dataset& ds, const CommonArgs& args) {
  std::vector<EpochLogRow> log;
  EpochCallback<T> on_epoch;
  if (cfg.training.checkpoint_every > 0) {
    on_epoch = [&](const TrainState<T>& state, int epoch) {
      if (epoch % cfg.training.checkpoint_every == 0) {
        save_checkpoint(state, cfg, args.out_dir + "/checkpoint-epoch-" + std::to_string(epoch));
      }
    };
  }
  TrainState<T> state =
      train<T>(ds, cfg.model_settings(), cfg.train_config(), cfg.objective_config(), &log, on_epoch);

  std::ostringstream csv;
  csv << EpochLogRow::csv_header() << "\n";
  for (const auto& row : log) csv << row.csv_row() << "\n";
  write_text(args.out_dir + "/epochs.csv", csv.str());
  save_checkpoint(state, cfg, args.out_dir + "/checkpoint");
  write_text(args.out_dir + "/config.json", cfg.to_json() + "\n");
  if (!log.empty()) {
    std::cout << "trained " << log.size() << " epochs, final loss " << log.back().loss << "\n";
  } else {
    std::cout << "warm-up-only training finished\n";
  }
  return 0;
}

int cmd_train(CommonArgs args) {
  ExperimentConfig cfg = load_config(args);
  if (args.seed_set) cfg.training.seed = args.seed;
  Dataset ds = load_data(args);
  fs::create_directories(args.out_dir);
  if (cfg.training.precision == "f64") return run_train<double>(cfg, ds, args);
  return run_train<float>(cfg, ds, args);
}

template <std::floating_point T>
int run_eval(const ExperimentConfig& cfg, const Dataset& ds, const CommonArgs& args) {
  TrainState<T> state = load_checkpoint<T>(args.checkpoint_dir, cfg);
  const ShotSplit split = split_by_shot(ds.train_counts);
  const EvalReport report = evaluate_model(state.model, ds, split, cfg.openset.threshold);
  fs::create_directories(args.out_dir);
  write_text(args.out_dir + "/report.json", report.to_json() + "\n");
  write_text(args.out_dir + "/report.csv",
             EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
  std::cout << report.to_json() << "\n";
  return 0;
}

int cmd_eval(CommonArgs args) {
  ExperimentConfig cfg = load_config(args);
  Dataset ds = load_data(args);
  if (args.checkpoint_dir.empty()) throw ConfigError("config: --checkpoint is required");
  if (cfg.training.precision == "f64") return run_eval<double>(cfg, ds, args);
  return run_eval<float>(cfg, ds, args);
}

template <std::floating_point T>
int run_explore(const ExperimentConfig& cfg, const Dataset& ds, const CommonArgs& args) {
  TrainState<T> trained = load_checkpoint<T>(args.checkpoint_dir, cfg);
  auto state = DynamicLoopState<T>::from_model(std::move(trained.model));

  const auto pools = generate_stage_pools(cfg);
  std::vector<int> hidden;
  for (const auto& pool : pools) {
    hidden.insert(hidden.end(), pool.hidden_labels.begin(), pool.hidden_labels.end());
  }
  SimulatedOracle oracle(std::move(hidden));
  Rng selection_rng(cfg.active.pool_seed ^ 0x5e1ec7ULL);
  const auto reports =
      run_dynamic_loop(state, pools, oracle, cfg.active.budget, cfg.active.temperature,
                       cfg.fine_tune_config(), ds, cfg.selection_policy(), &selection_rng);

  std::ostringstream csv;
  csv << StageReport::csv_header() << "\n";
  for (const auto& r : reports) csv << r.csv_row() << "\n";
  fs::create_directories(args.out_dir);
  write_text(args.out_dir + "/loop.csv", csv.str());
  std::cout << "explored " << pools.size() << " stages, classifier width "
            << reports.back().classifier_width << ", annotations " << oracle.query_count() << "\n";
  return 0;
}

int cmd_explore(CommonArgs args) {
  ExperimentConfig cfg = load_config(args);
  if (args.seed_set) cfg.active.pool_seed = args.seed;
  Dataset ds = load_data(args);
  if (args.checkpoint_dir.empty()) throw ConfigError("config: --checkpoint is required");
  if (cfg.training.precision == "f64") return run_explore<double>(cfg, ds, args);
  return run_explore<float>(cfg, ds, args);
}

int cmd_gradcheck(int trials, std::uint64_t seed) {
  const auto result = run_gradient_suite(trials, seed);
  for (const auto& entry : result.checks) {
    std::cout << entry.name << ": max rel err " << entry.max_rel_err << " over " << entry.trials
              << " trials\n";
  }
  std::cout << "gradient suite max rel err: " << result.max_rel_err << "\n";
  if (!result.passed()) {
    std::cerr << "gradient suite FAILED tolerance 1e-4\n";
    return 1;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& in_dirs, const std::string& out_file) {
  std::ostringstream merged;
  merged << "source,file,row\n";
  for (const auto& dir : in_dirs) {
    for (const char* name : {"epochs.csv", "report.csv", "loop.csv"}) {
      const fs::path path = fs::path(dir) / name;
      if (!fs::exists(path)) continue;
      std::ifstream in(path);
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {  // skip per-file headers
          first = false;
          continue;
        }
        if (!line.empty()) merged << dir << ',' << name << ",\"" << line << "\"\n";
      }
    }
  }
  if (!out_file.empty()) {
    write_text(out_file, merged.str());
  }
  std::cout << merged.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open long-tailed recognition experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  int gradcheck_trials = 100;
  std::uint64_t gradcheck_seed = 20260809ULL;
  std::vector<std::string> report_in;
  std::string report_out;

  auto add_common = [&](CLI::App* cmd, bool data, bool ckpt, bool out) {
    cmd->add_option("--config", args.config_path, "experiment config JSON");
    cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
      args.seed_set = true;
    });
    cmd->add_option("--precision", args.precision, "f32 or f64 (overrides config)");
    if (data) cmd->add_option("--data", args.data_dir, "dataset directory");
    if (ckpt) cmd->add_option("--checkpoint", args.checkpoint_dir, "checkpoint directory");
    if (out) cmd->add_option("--out", args.out_dir, "output directory")->required();
  };

  add_common(app.add_subcommand("gen-data", "generate a synthetic dataset"), false, false, true);
  add_common(app.add_subcommand("train", "train a model"), true, false, true);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint"), true, true, true);
  add_common(app.add_subcommand("explore", "run the active-exploration loop"), true, true, true);
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  gc->add_option("--trials", gradcheck_trials, "trials per check");
  gc->add_option("--seed", gradcheck_seed, "suite seed");
  auto* rp = app.add_subcommand("report", "merge result CSVs");
  rp->add_option("--in", report_in, "result directories")->required();
  rp->add_option("--out", report_out, "merged CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(args);
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("eval")) return cmd_eval(args);
    if (app.got_subcommand("explore")) return cmd_explore(args);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck(gradcheck_trials, gradcheck_seed);
    if (app.got_subcommand("report")) return cmd_report(report_in, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
