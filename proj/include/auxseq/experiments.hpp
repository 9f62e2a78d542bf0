// Run orchestration: single runs, the aux-head ablation grid and few-shot curves.
// Every run directory holds config.txt, metrics.jsonl, best/, final/ and summary.json.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "auxseq/checkpoint.hpp"
#include "auxseq/data.hpp"
#include "auxseq/eval.hpp"
#include "auxseq/model.hpp"
#include "auxseq/train.hpp"
#include <json.hpp>

namespace auxseq {

struct RunSummary {
  ModelConfig model;
  TrainConfig train;
  TrainResult result;
  RunMetrics dev;   // best checkpoint on the full dev set
  RunMetrics test;  // best checkpoint on the full test set
  std::size_t n_train = 0;
  std::size_t n_aux_supervised = 0;
};

inline nlohmann::ordered_json to_json(const RunSummary& s) {
  return {{"model", to_json(s.model)},
          {"seed", s.train.seed},
          {"fraction_train", s.train.fraction_train},
          {"fraction_aux", s.train.fraction_aux},
          {"n_train", s.n_train},
          {"n_aux_supervised", s.n_aux_supervised},
          {"steps", s.result.steps},
          {"best_step", s.result.best_step},
          {"stopped_early", s.result.stopped_early},
          {"dev", to_json(s.dev)},
          {"test", to_json(s.test)}};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << text;
  f.flush();
  if (!f) throw DiskFull(p);
}

/// Trains a fresh model on `split`, then scores the best-dev checkpoint on
/// dev and test and writes <out>/summary.json.
inline RunSummary run_training(const SplitData& split, const ModelConfig& model_cfg, const TrainConfig& cfg,
                               const std::filesystem::path& out,
                               const std::function<void(const nlohmann::ordered_json&)>& on_record = {}) {
  auto model = AuxTransformer<float>::create(model_cfg, VocabSizes::of(VocabSet::standard()),
                                             model_init_seed(cfg.seed));
  RunSummary s;
  s.train = cfg;
  s.result = train(model, split.train, split.dev, cfg, out, on_record);
  s.model = model.config();
  const auto data = training_set(split.train, cfg);
  s.n_train = data.size();
  for (const auto& ex : data) s.n_aux_supervised += ex.aux_supervised;
  const auto best = load_checkpoint<float>(out / "best").model;
  s.dev = evaluate(best, std::span<const LabeledExample>(split.dev), cfg.seed);
  s.test = evaluate(best, std::span<const LabeledExample>(split.test), cfg.seed);
  write_text(out / "summary.json", to_json(s).dump(2) + "\n");
  return s;
}

// ---------------------------------------------------------------------------
// Ablation grid

struct GridCell {
  QuerySource query;
  KeySource key;
  ValueSource value;
  std::optional<RunSummary> run;
  std::string error;  // non-empty when the cell's run threw

  std::string id() const { return to_string(query) + "_" + to_string(key) + to_string(value); }
};

/// Cells whose action and aux1 dev accuracies differ by at least this much
/// are flagged in the tables.
inline constexpr double kCoupledAccuracyGap = 0.10;

inline bool coupled(const GridCell& c) {
  return !c.run || std::abs(c.run->dev.action_acc - c.run->dev.aux1_acc) < kCoupledAccuracyGap;
}

inline std::string percent(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * x;
  return os.str();
}

inline std::string grid_csv(const std::vector<GridCell>& cells) {
  std::ostringstream os;
  os << "query,key,value,dev_action_acc,dev_aux1_acc,dev_aux2_acc,test_action_acc,best_step,coupled,error\n";
  for (const auto& c : cells) {
    os << to_string(c.query) << ',' << to_string(c.key) << ',' << to_string(c.value) << ',';
    if (c.run)
      os << c.run->dev.action_acc << ',' << c.run->dev.aux1_acc << ',' << c.run->dev.aux2_acc << ','
         << c.run->test.action_acc << ',' << c.run->result.best_step;
    else
      os << ",,,,";
    std::string err = c.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ' ';
    os << ',' << (coupled(c) ? "true" : "false") << ',' << err << '\n';
  }
  return os.str();
}

/// Rows are (key, value) pairs, columns query sources; cells "action/aux1"
/// dev accuracy in percent. A trailing * marks an uncoupled cell.
inline std::string grid_markdown(const std::vector<GridCell>& cells) {
  const QuerySource queries[] = {QuerySource::l1_int, QuerySource::l1_out, QuerySource::l2_out};
  std::ostringstream os;
  os << "| K & V |";
  for (auto q : queries) os << ' ' << to_string(q) << " |";
  os << "\n|---|---|---|---|\n";
  for (auto [k, v] : supported_aux_pairs()) {
    os << "| " << to_string(k) << " & " << to_string(v) << " |";
    for (auto q : queries) {
      const GridCell* cell = nullptr;
      for (const auto& c : cells)
        if (c.query == q && c.key == k && c.value == v) cell = &c;
      if (!cell) os << " - |";
      else if (!cell->run) os << " error |";
      else os << ' ' << percent(cell->run->dev.action_acc) << '/' << percent(cell->run->dev.aux1_acc)
              << (coupled(*cell) ? "" : "*") << " |";
    }
    os << '\n';
  }
  return os.str();
}

/// Trains one model per grid cell under <out>/<cell id>/. A failing cell is
/// recorded and the grid continues.
inline std::vector<GridCell> run_ablation_grid(const SplitData& split, const ModelConfig& base,
                                               const TrainConfig& cfg, const std::filesystem::path& out,
                                               const std::function<void(const GridCell&)>& on_cell = {}) {
  std::filesystem::create_directories(out);
  std::vector<GridCell> cells;
  std::ofstream jsonl(out / "grid.jsonl", std::ios::binary | std::ios::trunc);
  for (auto [k, v] : supported_aux_pairs()) {
    for (QuerySource q : {QuerySource::l1_int, QuerySource::l1_out, QuerySource::l2_out}) {
      GridCell cell{q, k, v, std::nullopt, {}};
      auto mc = base;
      mc.aux_query = q;
      mc.aux_key = k;
      mc.aux_value = v;
      try {
        cell.run = run_training(split, mc, cfg, out / cell.id());
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      nlohmann::ordered_json j{{"query", to_string(q)}, {"key", to_string(k)}, {"value", to_string(v)}};
      if (cell.run) j["run"] = to_json(*cell.run);
      j["coupled"] = coupled(cell);
      j["error"] = cell.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(cell.error);
      jsonl << j.dump() << '\n';
      jsonl.flush();
      if (on_cell) on_cell(cell);
      cells.push_back(std::move(cell));
    }
  }
  if (!jsonl) throw DiskFull(out / "grid.jsonl");
  write_text(out / "grid.csv", grid_csv(cells));
  write_text(out / "grid.md", grid_markdown(cells));
  return cells;
}

// ---------------------------------------------------------------------------
// Few-shot curves

enum class FewShotMode { examples, aux };

inline std::string to_string(FewShotMode m) { return m == FewShotMode::examples ? "examples" : "aux"; }

inline std::optional<FewShotMode> fewshot_mode_from_string(std::string_view s) {
  if (s == "examples") return FewShotMode::examples;
  if (s == "aux") return FewShotMode::aux;
  return std::nullopt;
}

inline const std::vector<double>& default_fractions() {
  static const std::vector<double> f = {0.02, 0.05, 0.10, 0.25, 1.0};
  return f;
}

struct CurvePoint {
  double fraction = 0;
  std::optional<RunSummary> run;
  std::string error;
};

inline std::string curve_csv(FewShotMode mode, const std::vector<CurvePoint>& pts) {
  std::ostringstream os;
  os << "mode,fraction,n_train,n_aux_supervised,dev_action_acc,dev_aux1_acc,dev_aux2_acc,test_action_acc,error\n";
  for (const auto& p : pts) {
    os << to_string(mode) << ',' << p.fraction << ',';
    if (p.run)
      os << p.run->n_train << ',' << p.run->n_aux_supervised << ',' << p.run->dev.action_acc << ','
         << p.run->dev.aux1_acc << ',' << p.run->dev.aux2_acc << ',' << p.run->test.action_acc;
    else
      os << ",,,,,";
    std::string err = p.error;
    for (auto& ch : err)
      if (ch == ',' || ch == '\n') ch = ' ';
    os << ',' << err << '\n';
  }
  return os.str();
}

/// Dev accuracy (action, aux1, aux2) against training fraction, fractions
/// evenly spaced along x.
inline std::string curve_svg(FewShotMode mode, const std::vector<CurvePoint>& pts) {
  constexpr double W = 480, H = 320, L = 60, R = 20, T = 30, B = 50;
  const auto n = pts.size();
  auto x = [&](std::size_t i) { return n < 2 ? L + (W - L - R) / 2 : L + (W - L - R) * static_cast<double>(i) / static_cast<double>(n - 1); };
  auto y = [&](double acc) { return T + (H - T - B) * (1.0 - acc); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\">dev accuracy, mode=" << to_string(mode) << "</text>\n";
  for (int g = 0; g <= 4; ++g) {
    const double acc = g / 4.0;
    os << "<line x1=\"" << L << "\" x2=\"" << W - R << "\" y1=\"" << y(acc) << "\" y2=\"" << y(acc)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << y(acc) + 4 << "\" text-anchor=\"end\">" << g * 25 << "%</text>\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::ostringstream lbl;
    lbl << pts[i].fraction * 100 << '%';
    os << "<text x=\"" << x(i) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << lbl.str() << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
     << (mode == FewShotMode::examples ? "fraction of training examples" : "fraction with aux supervision") << "</text>\n";
  struct Series {
    const char* name;
    const char* colour;
    double RunMetrics::*acc;
  };
  const Series series[] = {{"action", "#1f77b4", &RunMetrics::action_acc},
                           {"aux1", "#ff7f0e", &RunMetrics::aux1_acc},
                           {"aux2", "#2ca02c", &RunMetrics::aux2_acc}};
  for (std::size_t s = 0; s < 3; ++s) {
    os << "<polyline fill=\"none\" stroke=\"" << series[s].colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i)
      if (pts[i].run) os << x(i) << ',' << y(pts[i].run->dev.*series[s].acc) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 50 << "\" y=\"" << H - B - 12 - 14.0 * static_cast<double>(2 - s) << "\" fill=\""
       << series[s].colour << "\">" << series[s].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// One run per fraction under <out>/frac_<f>/, varying fraction_train
/// (examples) or fraction_aux (aux). Writes curve.csv, curve.jsonl, curve.svg.
inline std::vector<CurvePoint> run_fewshot_suite(const SplitData& split, const ModelConfig& base,
                                                 const TrainConfig& cfg, FewShotMode mode,
                                                 const std::vector<double>& fractions,
                                                 const std::filesystem::path& out,
                                                 const std::function<void(const CurvePoint&)>& on_point = {}) {
  std::filesystem::create_directories(out);
  std::vector<CurvePoint> pts;
  std::ofstream jsonl(out / "curve.jsonl", std::ios::binary | std::ios::trunc);
  for (double f : fractions) {
    CurvePoint p{f, std::nullopt, {}};
    auto tc = cfg;
    if (mode == FewShotMode::examples) tc.fraction_train = f;
    else tc.fraction_aux = f;
    std::ostringstream dir;
    dir << "frac_" << f;
    try {
      p.run = run_training(split, base, tc, out / dir.str());
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    nlohmann::ordered_json j{{"mode", to_string(mode)}, {"fraction", f}};
    if (p.run) j["run"] = to_json(*p.run);
    j["error"] = p.error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(p.error);
    jsonl << j.dump() << '\n';
    jsonl.flush();
    if (on_point) on_point(p);
    pts.push_back(std::move(p));
  }
  if (!jsonl) throw DiskFull(out / "curve.jsonl");
  write_text(out / "curve.csv", curve_csv(mode, pts));
  write_text(out / "curve.svg", curve_svg(mode, pts));
  return pts;
}

}  // namespace auxseq
