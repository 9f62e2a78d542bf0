#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "auxseq/train.hpp"

using namespace auxseq;
namespace fs = std::filesystem;

namespace {

const VocabSizes kVocab = VocabSizes::of(VocabSet::standard());

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "auxseq_train_test" / name;
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

std::vector<LabeledExample> examples(std::initializer_list<const char*> cmds) {
  std::vector<LabeledExample> out;
  for (const auto* c : cmds) out.push_back(label(parse(c)));
  return out;
}

ModelConfig small_config() {
  ModelConfig c;
  c.head_dim = 16;
  c.ffn_dim = 64;
  return c;
}

TrainConfig quick_train(int steps) {
  TrainConfig t;
  t.max_steps = steps;
  t.eval_every = steps;
  t.log_every = 10;
  t.batch_size = 8;
  t.seed = 11;
  return t;
}

}  // namespace

TEST(Adam, FirstStepIsSignedLearningRate) {
  Mat<double> w(1, 3), g(1, 3), m = Mat<double>::Zero(1, 3), v = Mat<double>::Zero(1, 3);
  w << 1.0, -2.0, 0.5;
  g << 0.3, -7.0, 1e-4;
  const Mat<double> w0 = w;
  adam_update(w, g, m, v, 1, AdamHyper{});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(w(0, i) - w0(0, i), -5e-3 * (g(0, i) > 0 ? 1 : -1), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto model = AuxTransformer<float>::create(tiny_config(), kVocab, 1);
  auto before = model.params();
  auto grads = Parameters<float>::shaped_like(model.params());
  auto state = AdamState<float>::for_params(model.params());
  for (int i = 0; i < 3; ++i) adam_step(model.params(), grads, state, AdamHyper{});
  auto a = before.tensors();
  auto b = model.params().tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  EXPECT_EQ(state.t, 3);
}

TEST(Adam, QuadraticDecreasesMonotonically) {
  Mat<double> w = Mat<double>::Constant(1, 1, 1.0), m = Mat<double>::Zero(1, 1), v = Mat<double>::Zero(1, 1);
  double prev = 1.0;
  for (long t = 1; t <= 50; ++t) {
    const Mat<double> g = 2.0 * w;
    adam_update(w, g, m, v, t, AdamHyper{});
    EXPECT_LT(std::abs(w(0, 0)), prev) << t;
    prev = std::abs(w(0, 0));
  }
}

TEST(Adam, NonFiniteGradientAborts) {
  auto model = AuxTransformer<float>::create(tiny_config(), kVocab, 1);
  auto grads = Parameters<float>::shaped_like(model.params());
  auto state = AdamState<float>::for_params(model.params());
  grads.aux2_out.b(0, 2) = std::nanf("");
  try {
    adam_step(model.params(), grads, state, AdamHyper{});
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.tensor(), "aux2_out.b");
    EXPECT_EQ(e.step(), 1);
  }
  EXPECT_EQ(state.t, 0);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  auto p = Parameters<double>::shaped_like(Parameters<double>::zeros(tiny_config(), kVocab));
  p.embed_func(0, 0) = 3.0;
  p.action_out.b(0, 1) = 4.0;
  EXPECT_DOUBLE_EQ(clip_global_norm(p, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(p.embed_func(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(p, 1.0), 5.0);
  EXPECT_NEAR(p.embed_func(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(p.action_out.b(0, 1), 0.8, 1e-12);
}

TEST(Batching, EpochIsSeededPartition) {
  const auto a = epoch_batches(21, 8, 3, 0);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[2].size(), 5u);
  std::vector<std::size_t> flat;
  for (const auto& b : a) flat.insert(flat.end(), b.begin(), b.end());
  std::sort(flat.begin(), flat.end());
  for (std::size_t i = 0; i < 21; ++i) EXPECT_EQ(flat[i], i);
  EXPECT_EQ(epoch_batches(21, 8, 3, 0), a);
  EXPECT_NE(epoch_batches(21, 8, 3, 1), a);
}

TEST(TrainingSet, FullFractionSameInBothModes) {
  const auto all = enumerate_all();
  std::vector<LabeledExample> data;
  for (std::size_t i = 0; i < 200; ++i) data.push_back(label(parse(std::span<const Word>(all[i * 7].command))));
  TrainConfig a, b;
  a.fraction_train = 1.0;
  b.fraction_aux = 1.0;
  EXPECT_EQ(training_set(data, a), training_set(data, b));
  EXPECT_EQ(training_set(data, a), data);
  b.fraction_aux = 0.05;
  std::size_t sup = 0;
  for (const auto& e : training_set(data, b)) sup += e.aux_supervised;
  EXPECT_EQ(sup, 10u);
  a.fraction_train = 0.05;
  EXPECT_EQ(training_set(data, a).size(), 10u);
}

TEST(Config, RoundTripAndErrors) {
  ModelConfig m = small_config();
  m.aux_query = QuerySource::l2_out;
  m.aux_key = KeySource::c;
  m.aux_value = ValueSource::p;
  TrainConfig t;
  t.lr = 1e-3;
  t.early_stop_acc = 0.999;
  t.seed = 12345678901234ULL;
  std::istringstream in(config_text(m, t));
  ModelConfig m2;
  TrainConfig t2;
  apply_config(parse_config_text(in), m2, t2);
  EXPECT_EQ(m2, m);
  EXPECT_EQ(t2, t);

  std::istringstream bad("# comment\nlayers = 2\nlearning_rate = 1\n");
  EXPECT_THROW(apply_config(parse_config_text(bad), m2, t2), ConfigError);
  std::istringstream bad_value("heads = two\n");
  EXPECT_THROW(apply_config(parse_config_text(bad_value), m2, t2), ConfigError);
  std::istringstream combo("aux_key_source = c\naux_value_source = f\n");
  EXPECT_THROW(apply_config(parse_config_text(combo), m2, t2), InvalidCombo);
}

TEST(Checkpoint, RoundTripPreservesMetrics) {
  auto model = AuxTransformer<float>::create(small_config(), kVocab, 4);
  const auto dir = temp_dir("ckpt");
  save_checkpoint(dir, model, 17);
  const auto loaded = load_checkpoint<float>(dir);
  EXPECT_EQ(loaded.step, 17);
  EXPECT_EQ(loaded.model.config(), model.config());
  auto a = const_cast<Parameters<float>&>(model.params()).tensors();
  auto b = const_cast<Parameters<float>&>(loaded.model.params()).tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  const auto dev = examples({"jump twice", "walk left after run", "look around right"});
  EXPECT_EQ(evaluate(model, std::span<const LabeledExample>(dev)), evaluate(loaded.model, std::span<const LabeledExample>(dev)));
}

TEST(Checkpoint, ShapeMismatchRejected) {
  auto model = AuxTransformer<float>::create(small_config(), kVocab, 4);
  const auto dir = temp_dir("ckpt_bad");
  save_checkpoint(dir, model, 1);
  auto text = slurp(dir / "manifest.json");
  const auto pos = text.find("\"ffn_dim\": 64");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "\"ffn_dim\": 32");
  std::ofstream(dir / "manifest.json") << text;
  EXPECT_THROW(load_checkpoint<float>(dir), CheckpointError);
  EXPECT_THROW(load_checkpoint<float>(temp_dir("empty")), CheckpointError);
}

// Logits frozen from tests/oracles/cgps_torch.py run on the same checkpoints.
TEST(Checkpoint, ForwardMatchesReferenceImplementation) {
  struct Case {
    QuerySource q;
    KeySource k;
    ValueSource v;
    double aux1_3_4, aux2_last_18, aux2_5_7;
  };
  const Case cases[] = {
      {QuerySource::l1_int, KeySource::f, ValueSource::c, -1.3174929552801493, 0.08195457259811076, -0.6592579438477125},
      {QuerySource::l1_out, KeySource::c, ValueSource::p, 0.06897149887976994, 0.22761706175380983, -0.3704877025657496},
      {QuerySource::l2_out, KeySource::f, ValueSource::f, 0.22902468075082713, 0.8729872245754531, -1.069931977757587},
  };
  const auto ex = label(parse("jump around left after walk twice"));
  for (const auto& c : cases) {
    auto cfg = small_config();
    cfg.aux_query = c.q;
    cfg.aux_key = c.k;
    cfg.aux_value = c.v;
    auto model = AuxTransformer<double>::create(cfg, kVocab, 21);
    SplitMix64 rng(5);
    for (auto& t : model.params().tensors())
      for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] += 0.05 * rng.normal();
    const auto dir = temp_dir("xref");
    save_checkpoint(dir, model, 0);
    const auto loaded = load_checkpoint<double>(dir).model;
    ForwardCache<double> fc;
    loaded.forward(example_ids(ex), ForwardContext{}, fc);
    ASSERT_EQ(fc.action_logits.rows(), 11);
    EXPECT_NEAR(fc.action_logits(0, 3), 0.3080127978031005, 1e-9);
    EXPECT_NEAR(fc.action_logits(10, 2), -0.28678490434522536, 1e-9);
    EXPECT_NEAR(fc.aux1_logits(3, 4), c.aux1_3_4, 1e-9);
    EXPECT_NEAR(fc.aux2_logits(10, 18), c.aux2_last_18, 1e-9);
    EXPECT_NEAR(fc.aux2_logits(5, 7), c.aux2_5_7, 1e-9);
  }
}

TEST(Train, DeterministicMetricsLog) {
  const auto data = examples({"jump", "walk twice", "run left", "look opposite right", "turn around left",
                              "jump and walk", "run after look twice", "walk right thrice"});
  std::string logs[2];
  for (int r = 0; r < 2; ++r) {
    auto model = AuxTransformer<float>::create(small_config(), kVocab, 5);
    const auto dir = temp_dir("det" + std::to_string(r));
    train(model, data, data, quick_train(20), dir);
    logs[r] = slurp(dir / "metrics.jsonl");
    EXPECT_TRUE(fs::exists(dir / "best" / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "final" / "params.bin"));
    EXPECT_TRUE(fs::exists(dir / "config.txt"));
  }
  EXPECT_FALSE(logs[0].empty());
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_NE(logs[0].find("\"wall_ms\":null"), std::string::npos);
}

TEST(Train, NoAuxSupervisionNeverTouchesAuxHead) {
  const auto data = examples({"jump", "walk twice", "run left", "look opposite right"});
  auto model = AuxTransformer<float>::create(small_config(), kVocab, 6);
  const auto before = model.params();
  auto cfg = quick_train(10);
  cfg.fraction_aux = 0.0;
  train(model, data, data, cfg, temp_dir("noaux"));
  EXPECT_EQ(model.params().aux1_out.w, before.aux1_out.w);
  EXPECT_EQ(model.params().aux2_out.b, before.aux2_out.b);
  EXPECT_EQ(model.params().aux_attn.q.w, before.aux_attn.q.w);
  EXPECT_NE(model.params().action_out.w, before.action_out.w);
  EXPECT_FALSE(model.config().feed_aux);
}

TEST(Train, L2PenaltyShrinksEmbeddings) {
  const auto data = examples({"jump left"});
  auto model = AuxTransformer<float>::create(small_config(), kVocab, 7);
  const float f0 = model.params().embed_func.norm(), p0 = model.params().embed_prim.norm();
  auto cfg = quick_train(100);
  cfg.l2_coeff = 1.0;
  train(model, data, data, cfg, temp_dir("l2"));
  EXPECT_LT(model.params().embed_func.norm(), f0);
  EXPECT_LT(model.params().embed_prim.norm(), p0);
}

TEST(Train, OverfitSingleExample) {
  const auto data = examples({"walk opposite right twice after jump"});
  auto model = AuxTransformer<float>::create(ModelConfig{}, kVocab, 8);
  auto cfg = quick_train(200);
  cfg.lr = kSmallSetLr;
  cfg.early_stop_acc = 1.0;
  cfg.eval_every = 10;
  train(model, data, data, cfg, temp_dir("single"));
  const auto m = evaluate(model, std::span<const LabeledExample>(data));
  EXPECT_EQ(m.action_acc, 1.0);
  EXPECT_EQ(m.aux1_acc, 1.0);
  EXPECT_EQ(m.aux2_acc, 1.0);
}

TEST(Train, SwappingPrimitiveEmbeddingsSwapsEmittedPrimitive) {
  // Multi-word commands only: a one-word command cannot end in EOS (see model_test).
  const auto data = examples({"jump twice", "walk twice", "run twice", "look twice", "jump left", "walk left",
                              "run right", "look right", "jump thrice", "walk thrice"});
  auto model = AuxTransformer<float>::create(ModelConfig{}, kVocab, 9);
  auto cfg = quick_train(400);
  cfg.lr = kSmallSetLr;
  cfg.early_stop_acc = 1.0;
  cfg.eval_every = 25;
  train(model, data, data, cfg, temp_dir("swap"));
  ASSERT_EQ(evaluate(model, std::span<const LabeledExample>(data)).action_acc, 1.0);
  auto& ep = model.params().embed_prim;
  ep.row(word_id(Word::jump)).swap(ep.row(word_id(Word::walk)));
  const auto pred = predict(model, std::span<const LabeledExample>(examples({"jump twice", "walk left", "jump thrice"})));
  EXPECT_EQ(pred[0].actions, (std::vector<Action>{Action::walk, Action::walk}));
  EXPECT_EQ(pred[1].actions, (std::vector<Action>{Action::lturn, Action::jump}));
  EXPECT_EQ(pred[2].actions, (std::vector<Action>{Action::walk, Action::walk, Action::walk}));
}
