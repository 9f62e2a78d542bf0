#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "auxseq/experiments.hpp"

using namespace auxseq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "auxseq_experiments_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SplitData tiny_split() {
  SplitData s;
  for (const char* c : {"jump twice", "walk left", "run after look", "turn right thrice", "look opposite left"})
    s.train.push_back(label(parse(c)));
  s.dev = {label(parse("jump left")), label(parse("walk twice"))};
  s.test = {label(parse("run twice and jump"))};
  return s;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.head_dim = 4;
  c.ffn_dim = 16;
  return c;
}

TrainConfig few_steps() {
  TrainConfig t;
  t.max_steps = 3;
  t.eval_every = 3;
  t.log_every = 1;
  t.batch_size = 2;
  return t;
}

}  // namespace

TEST(AblationGrid, TrainsEveryCellAndWritesTables) {
  const auto out = temp_dir("grid");
  const auto cells = run_ablation_grid(tiny_split(), tiny_model(), few_steps(), out);
  ASSERT_EQ(cells.size(), 12u);
  for (const auto& c : cells) {
    ASSERT_TRUE(c.run) << c.id() << ": " << c.error;
    EXPECT_EQ(c.run->model.aux_query, c.query);
    EXPECT_EQ(c.run->model.aux_key, c.key);
    EXPECT_EQ(c.run->model.aux_value, c.value);
    EXPECT_TRUE(fs::exists(out / c.id() / "summary.json"));
  }
  const auto csv = slurp(out / "grid.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  const auto md = slurp(out / "grid.md");
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 6);
  EXPECT_NE(md.find("| c & p |"), std::string::npos);
  const auto jsonl = slurp(out / "grid.jsonl");
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 12);
}

TEST(AblationGrid, FailingCellsDoNotAbortTheGrid) {
  auto split = tiny_split();
  split.train.clear();
  const auto out = temp_dir("grid_err");
  const auto cells = run_ablation_grid(split, tiny_model(), few_steps(), out);
  ASSERT_EQ(cells.size(), 12u);
  for (const auto& c : cells) {
    EXPECT_FALSE(c.run);
    EXPECT_FALSE(c.error.empty());
  }
  EXPECT_NE(slurp(out / "grid.md").find("error"), std::string::npos);
}

TEST(AblationGrid, CouplingFlag) {
  GridCell c{QuerySource::l2_out, KeySource::f, ValueSource::c, RunSummary{}, {}};
  c.run->dev.action_acc = 0.5287;
  c.run->dev.aux1_acc = 0.4704;
  EXPECT_TRUE(coupled(c));
  c.run->dev.aux1_acc = 0.40;
  EXPECT_FALSE(coupled(c));
  EXPECT_NE(grid_markdown({c}).find("52.87/40.00*"), std::string::npos);
}

TEST(FewShot, FullFractionSameInBothModes) {
  const auto split = tiny_split();
  const auto dir_a = temp_dir("fs_ex"), dir_b = temp_dir("fs_aux");
  const auto a = run_fewshot_suite(split, tiny_model(), few_steps(), FewShotMode::examples, {1.0}, dir_a);
  const auto b = run_fewshot_suite(split, tiny_model(), few_steps(), FewShotMode::aux, {1.0}, dir_b);
  ASSERT_TRUE(a[0].run && b[0].run);
  EXPECT_EQ(a[0].run->n_train, b[0].run->n_train);
  EXPECT_EQ(a[0].run->n_aux_supervised, b[0].run->n_aux_supervised);
  EXPECT_EQ(a[0].run->dev, b[0].run->dev);
  const auto log_a = slurp(dir_a / "frac_1" / "metrics.jsonl");
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, slurp(dir_b / "frac_1" / "metrics.jsonl"));
}

TEST(FewShot, CurveArtifacts) {
  const auto out = temp_dir("fs_curve");
  const auto pts = run_fewshot_suite(tiny_split(), tiny_model(), few_steps(), FewShotMode::aux, {0.0, 0.4, 1.0}, out);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].run->n_aux_supervised, 0u);
  EXPECT_EQ(pts[1].run->n_aux_supervised, 2u);
  EXPECT_EQ(pts[2].run->n_aux_supervised, 5u);
  EXPECT_FALSE(pts[0].run->model.feed_aux);
  const auto csv = slurp(out / "curve.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const auto svg = slurp(out / "curve.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 3u);
}

TEST(FewShot, ModeNames) {
  EXPECT_EQ(fewshot_mode_from_string("examples"), FewShotMode::examples);
  EXPECT_EQ(fewshot_mode_from_string("aux"), FewShotMode::aux);
  EXPECT_FALSE(fewshot_mode_from_string("subsample"));
  EXPECT_EQ(default_fractions(), (std::vector<double>{0.02, 0.05, 0.10, 0.25, 1.0}));
}
