// Built-in checks shared by `auxseq selftest` and the acceptance runner.
#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "auxseq/data.hpp"
#include "auxseq/eval.hpp"
#include "auxseq/model.hpp"
#include "auxseq/rng.hpp"
#include "auxseq/train.hpp"

namespace auxseq {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// SCAN-format files under `data_dir`, sorted.
inline std::vector<std::filesystem::path> scan_files(const std::filesystem::path& data_dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(data_dir)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(data_dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline CheckResult check_grammar_oracle(const std::filesystem::path& data_dir) {
  CheckResult r{"grammar oracle", true, {}};
  const auto files = scan_files(data_dir);
  if (files.empty()) return {r.name, false, "no split files under " + data_dir.string()};
  std::size_t lines = 0, mismatches = 0, other = 0;
  for (const auto& f : files) {
    const auto rep = verify_file(f);
    lines += rep.lines;
    mismatches += rep.oracle_mismatches;
    other += rep.format_errors + rep.aux_violations;
    if (!rep.ok()) {
      r.passed = false;
      if (!rep.first_errors.empty()) r.detail += rep.path + ": " + rep.first_errors.front() + "; ";
    }
  }
  r.detail += std::to_string(files.size()) + " files, " + std::to_string(lines) + " lines, " +
              std::to_string(mismatches) + " oracle mismatches, " + std::to_string(other) + " other errors";
  return r;
}

inline CheckResult check_enumeration(const std::filesystem::path& data_dir) {
  const auto all = enumerate_all();
  std::set<std::pair<std::string, std::string>> enumerated;
  for (const auto& p : all) enumerated.emplace(join(std::span<const Word>(p.command)), join(std::span<const Action>(p.actions)));
  std::set<std::pair<std::string, std::string>> files;
  for (const auto& f : scan_files(data_dir)) {
    std::ifstream in(f);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty() || line == "\r") continue;
      const auto raw = parse_scan_line(line, n);
      files.emplace(join(std::span<const Word>(raw.command)), join(std::span<const Action>(raw.actions)));
    }
  }
  std::ostringstream d;
  d << all.size() << " enumerated (" << enumerated.size() << " distinct), " << files.size()
    << " distinct pairs in split files";
  const bool ok = all.size() == 20910 && enumerated.size() == 20910 && enumerated == files;
  if (!ok && enumerated != files) d << "; pair sets differ";
  return {"enumeration", ok, d.str()};
}

struct AuxFixture {
  const char* command;
  std::vector<int> aux1;
  std::vector<int> aux2;
};

/// Labeled rows of the published SCAN example tables.
inline const std::vector<AuxFixture>& published_aux_fixtures() {
  static const std::vector<AuxFixture> rows = {
      {"jump opposite left twice", {1, 1, 1, 0, 0, 0}, {2, 1, 0, 2, 1, 0}},
      {"jump around left thrice",
       {2, 2, 2, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0},
       {7, 6, 5, 4, 3, 2, 1, 0, 7, 6, 5, 4, 3, 2, 1, 0, 7, 6, 5, 4, 3, 2, 1, 0}},
      {"jump opposite left thrice", {2, 2, 2, 1, 1, 1, 0, 0, 0}, {2, 1, 0, 2, 1, 0, 2, 1, 0}},
      {"jump around left twice",
       {1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0},
       {7, 6, 5, 4, 3, 2, 1, 0, 7, 6, 5, 4, 3, 2, 1, 0}},
      {"jump opposite left twice and walk right thrice",
       {1, 1, 1, 0, 0, 0, 5, 5, 4, 4, 3, 3},
       {2, 1, 0, 2, 1, 0, 9, 8, 9, 8, 9, 8}},
      {"walk right twice after jump opposite left thrice",
       {5, 5, 5, 4, 4, 4, 3, 3, 3, 1, 1, 0, 0},
       {10, 9, 8, 10, 9, 8, 10, 9, 8, 1, 0, 1, 0}},
      {"jump around left after walk right twice",
       {4, 4, 3, 3, 0, 0, 0, 0, 0, 0, 0, 0},
       {9, 8, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0}},
  };
  return rows;
}

inline CheckResult check_aux_fixtures() {
  std::size_t ok = 0;
  std::string bad;
  for (const auto& f : published_aux_fixtures()) {
    const auto labels = gen_aux(parse(f.command));
    if (labels.aux1 == f.aux1 && labels.aux2 == f.aux2) ++ok;
    else bad += std::string(" ") + f.command + ";";
  }
  const auto n = published_aux_fixtures().size();
  return {"aux fixtures", ok == n,
          std::to_string(ok) + "/" + std::to_string(n) + " rows bit-exact" + (bad.empty() ? "" : ", failing:" + bad)};
}

inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kGradientEps = 1e-5;

/// Finite differences on the tiny double-precision model, every aux grid cell.
inline CheckResult check_gradients() {
  const std::vector<ExampleIds> batch = [] {
    auto sup = label(parse("jump opposite left after walk twice"));
    auto unsup = label(parse("look thrice and run right"));
    unsup.aux_supervised = false;
    return std::vector<ExampleIds>{example_ids(sup), example_ids(unsup)};
  }();
  double worst = 0;
  std::string worst_where;
  std::size_t probes = 0;
  for (auto [k, v] : supported_aux_pairs()) {
    for (QuerySource q : {QuerySource::l1_int, QuerySource::l1_out, QuerySource::l2_out}) {
      auto cfg = tiny_config();
      cfg.aux_query = q;
      cfg.aux_key = k;
      cfg.aux_value = v;
      auto model = AuxTransformer<double>::create(cfg, VocabSizes::of(VocabSet::standard()), 3);
      SplitMix64 rng(77);
      for (auto& t : model.params().tensors())
        for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] += 0.3 * rng.normal();
      const auto r = gradient_check(model, batch, kGradientEps, 3);
      probes += r.probes;
      for (const auto& [name, err] : r.per_tensor)
        if (err > worst) {
          worst = err;
          worst_where = to_string(q) + "/" + to_string(k) + "/" + to_string(v) + " " + name;
        }
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst << " (" << worst_where << "), " << probes << " probes, 12 cells";
  return {"gradient check", worst < kGradientTolerance, d.str()};
}

inline constexpr std::size_t kOverfitExamples = 64;
inline constexpr int kOverfitMaxSteps = 2000;

/// The first `k` examples of a seeded shuffle.
inline std::vector<LabeledExample> sample_examples(const std::vector<LabeledExample>& all, std::size_t k,
                                                   std::uint64_t seed) {
  const auto idx = shuffled_indices(all.size(), seed);
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[idx[i]]);
  return out;
}

/// 64 length-split training examples must reach exact match on all three
/// channels (greedy decoding) within 2000 steps.
inline CheckResult check_overfit(const std::filesystem::path& data_dir, const std::filesystem::path& out) {
  const std::string name = "overfit smoke test";
  std::vector<LabeledExample> data;
  try {
    data = sample_examples(load_file(SplitSpec::from_dir(data_dir, "length").train), kOverfitExamples, 1);
  } catch (const std::exception& e) {
    return {name, false, e.what()};
  }
  TrainConfig cfg;
  cfg.lr = kSmallSetLr;
  cfg.batch_size = static_cast<int>(kOverfitExamples);
  cfg.max_steps = kOverfitMaxSteps;
  cfg.eval_every = 50;
  cfg.log_every = 50;
  cfg.seed = 1;
  cfg.early_stop_acc = 1.0;
  auto model = AuxTransformer<float>::create(ModelConfig{}, VocabSizes::of(VocabSet::standard()), model_init_seed(cfg.seed));
  const auto res = train(model, data, data, cfg, out);
  const auto m = evaluate(model, std::span<const LabeledExample>(data));
  std::vector<ExampleIds> ids;
  for (const auto& ex : data) ids.push_back(example_ids(ex));
  const auto loss = batch_objective<float>(model, ids, std::nullopt, nullptr, 0.0);
  std::ostringstream d;
  d << data.size() << " examples, " << res.steps << " steps, action/aux1/aux2 exact " << m.action_acc << "/"
    << m.aux1_acc << "/" << m.aux2_acc << ", loss without L2 " << loss.loss;
  const bool ok = data.size() == kOverfitExamples && res.steps <= kOverfitMaxSteps && m.action_acc == 1.0 &&
                  m.aux1_acc == 1.0 && m.aux2_acc == 1.0;
  return {name, ok, d.str()};
}

}  // namespace auxseq
