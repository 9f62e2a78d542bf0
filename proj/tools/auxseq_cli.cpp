// auxseq: data verification, training, evaluation and experiment runner.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "auxseq/checkpoint.hpp"
#include "auxseq/config.hpp"
#include "auxseq/data.hpp"
#include "auxseq/eval.hpp"
#include "auxseq/experiments.hpp"
#include "auxseq/selftest.hpp"
#include "auxseq/train.hpp"

#ifndef AUXSEQ_DEFAULT_DATA_DIR
#define AUXSEQ_DEFAULT_DATA_DIR "data/scan"
#endif

namespace fs = std::filesystem;
using namespace auxseq;

namespace {

std::string default_data_dir() {
  if (const char* env = std::getenv("AUXSEQ_DATA_DIR"); env && *env) return env;
  return AUXSEQ_DEFAULT_DATA_DIR;
}

struct RunOptions {
  std::string split;
  std::string data_dir = default_data_dir();
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--split", o.split, "Split name (length, addjump, mcd1, mcd2, mcd3)")->required();
  cmd->add_option("--data-dir", o.data_dir, "Directory holding <split>/{train,dev,test}.txt")->capture_default_str();
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "Run seed (overrides the config file)");
  cmd->add_option("--out", o.out, "Output directory")->required();
}

void load_configs(const RunOptions& o, ModelConfig& model, TrainConfig& train) {
  if (!o.config.empty()) apply_config(read_config_file(o.config), model, train);
  if (o.seed) train.seed = *o.seed;
}

int verify_data(const std::string& split, const std::string& data_dir) {
  const auto spec = SplitSpec::from_dir(data_dir, split);
  std::vector<fs::path> files{spec.train};
  if (spec.dev != spec.test) files.push_back(spec.dev);
  files.push_back(spec.test);
  bool ok = true;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  for (const auto& f : files) {
    const auto r = verify_file(f);
    ok = ok && r.ok();
    report.push_back({{"file", r.path},
                      {"lines", r.lines},
                      {"format_errors", r.format_errors},
                      {"oracle_mismatches", r.oracle_mismatches},
                      {"aux_violations", r.aux_violations},
                      {"first_errors", r.first_errors},
                      {"ok", r.ok()}});
  }
  std::cout << report.dump(2) << '\n';
  return ok ? 0 : 1;
}

int export_augmented_cmd(const std::string& split, const std::string& data_dir, const std::string& subset,
                         const std::string& out) {
  const auto spec = SplitSpec::from_dir(data_dir, split);
  const auto path = subset == "train" ? spec.train : subset == "dev" ? spec.dev : spec.test;
  const auto examples = load_file(path);
  if (out == "-") {
    export_augmented(examples, std::cout);
    return 0;
  }
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  export_augmented(examples, os);
  os.flush();
  if (!os) throw DiskFull(out);
  std::cerr << "wrote " << examples.size() << " examples to " << out << '\n';
  return 0;
}

int train_cmd(const RunOptions& o, std::optional<double> fraction_train, std::optional<double> fraction_aux) {
  ModelConfig model;
  TrainConfig train;
  load_configs(o, model, train);
  if (fraction_train) train.fraction_train = *fraction_train;
  if (fraction_aux) train.fraction_aux = *fraction_aux;
  const auto split = load_split(SplitSpec::from_dir(o.data_dir, o.split));
  const auto s = run_training(split, model, train, o.out, [](const nlohmann::ordered_json& j) {
    std::cerr << j.dump() << '\n';
  });
  std::cout << to_json(s).dump(2) << '\n';
  return 0;
}

int evaluate_cmd(const std::string& checkpoint, const std::string& split_name, const std::string& data_dir,
                 const std::string& subset, std::uint64_t seed) {
  const auto spec = SplitSpec::from_dir(data_dir, split_name);
  const auto examples = load_file(subset == "dev" ? spec.dev : spec.test);
  const auto loaded = load_checkpoint<float>(checkpoint);
  auto j = to_json(evaluate(loaded.model, std::span<const LabeledExample>(examples), seed));
  j["subset"] = subset;
  j["split"] = split_name;
  j["checkpoint_step"] = loaded.step;
  std::cout << j.dump(2) << '\n';
  return 0;
}

int ablate_cmd(const RunOptions& o) {
  ModelConfig model;
  TrainConfig train;
  load_configs(o, model, train);
  const auto split = load_split(SplitSpec::from_dir(o.data_dir, o.split));
  const auto cells = run_ablation_grid(split, model, train, o.out, [](const GridCell& c) {
    std::cerr << c.id() << ": ";
    if (c.run) std::cerr << "dev action " << percent(c.run->dev.action_acc) << " aux1 " << percent(c.run->dev.aux1_acc);
    else std::cerr << "error: " << c.error;
    if (!coupled(c)) std::cerr << " (action and aux1 accuracies differ by >= 10 points)";
    std::cerr << '\n';
  });
  std::cout << grid_markdown(cells);
  for (const auto& c : cells)
    if (!c.run) return 1;
  return 0;
}

int fewshot_cmd(const RunOptions& o, const std::string& mode_name, const std::vector<double>& fractions) {
  ModelConfig model;
  TrainConfig train;
  load_configs(o, model, train);
  const auto mode = fewshot_mode_from_string(mode_name);
  const auto split = load_split(SplitSpec::from_dir(o.data_dir, o.split));
  const auto pts = run_fewshot_suite(split, model, train, *mode, fractions, o.out, [](const CurvePoint& p) {
    std::cerr << "fraction " << p.fraction << ": ";
    if (p.run) std::cerr << "dev action " << percent(p.run->dev.action_acc) << '\n';
    else std::cerr << "error: " << p.error << '\n';
  });
  std::cout << curve_csv(*mode, pts);
  for (const auto& p : pts)
    if (!p.run) return 1;
  return 0;
}

int selftest_cmd(const std::string& data_dir, bool skip_overfit, const std::string& out) {
  std::vector<CheckResult> results{check_grammar_oracle(data_dir), check_enumeration(data_dir), check_aux_fixtures(),
                                   check_gradients()};
  if (!skip_overfit) {
    const fs::path dir = out.empty() ? fs::temp_directory_path() / "auxseq_selftest_overfit" : fs::path(out);
    fs::remove_all(dir);
    results.push_back(check_overfit(data_dir, dir));
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auxseq: auxiliary-sequence Transformer for SCAN"};
  app.require_subcommand(1);

  std::string split, data_dir = default_data_dir(), out, subset, checkpoint, mode;
  std::uint64_t eval_seed = 0;
  bool skip_overfit = false;

  auto* verify = app.add_subcommand("verify-data", "Check split files against the grammar oracle and aux invariants");
  verify->add_option("--split", split, "Split name")->required();
  verify->add_option("--data-dir", data_dir, "Data directory")->capture_default_str();

  auto* exp = app.add_subcommand("export-augmented", "Write command, actions, aux1, aux2 as tab-separated lines");
  std::string export_subset = "train";
  exp->add_option("--split", split, "Split name")->required();
  exp->add_option("--data-dir", data_dir, "Data directory")->capture_default_str();
  exp->add_option("--subset", export_subset, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}))
      ->capture_default_str();
  exp->add_option("--out", out, "Output file, or - for stdout")->required();

  RunOptions train_opts;
  std::optional<double> fraction_train, fraction_aux;
  auto* tr = app.add_subcommand("train", "Train one model and score its best checkpoint");
  add_run_options(tr, train_opts);
  tr->add_option("--fraction-train", fraction_train, "Fraction of training examples kept")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--fraction-aux", fraction_aux, "Fraction of kept examples with aux supervision")
      ->check(CLI::Range(0.0, 1.0));

  auto* ev = app.add_subcommand("evaluate", "Greedy-decode a split subset and print RunMetrics JSON");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  ev->add_option("--split", split, "Split name")->required();
  ev->add_option("--subset", subset, "dev or test")->required()->check(CLI::IsMember({"dev", "test"}));
  ev->add_option("--data-dir", data_dir, "Data directory")->capture_default_str();
  ev->add_option("--seed", eval_seed, "Seed recorded in the metrics");

  RunOptions ablate_opts;
  auto* ab = app.add_subcommand("ablate", "Train the 4x3 aux query/key/value grid");
  add_run_options(ab, ablate_opts);

  RunOptions fewshot_opts;
  std::vector<double> fractions = default_fractions();
  auto* fs_cmd = app.add_subcommand("fewshot", "Accuracy against training-example or aux-supervision fraction");
  add_run_options(fs_cmd, fewshot_opts);
  fs_cmd->add_option("--mode", mode, "examples or aux")->required()->check(CLI::IsMember({"examples", "aux"}));
  fs_cmd->add_option("--fractions", fractions, "Fractions to run")->delimiter(',')->capture_default_str();

  auto* st = app.add_subcommand("selftest", "Grammar oracle, aux fixtures, gradient check and overfit smoke test");
  st->add_option("--data-dir", data_dir, "Data directory")->capture_default_str();
  st->add_flag("--skip-overfit", skip_overfit, "Skip the overfit smoke test");
  st->add_option("--out", out, "Scratch directory for the overfit run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) return verify_data(split, data_dir);
    if (*exp) return export_augmented_cmd(split, data_dir, export_subset, out);
    if (*tr) return train_cmd(train_opts, fraction_train, fraction_aux);
    if (*ev) return evaluate_cmd(checkpoint, split, data_dir, subset, eval_seed);
    if (*ab) return ablate_cmd(ablate_opts);
    if (*fs_cmd) return fewshot_cmd(fewshot_opts, mode, fractions);
    if (*st) return selftest_cmd(data_dir, skip_overfit, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
