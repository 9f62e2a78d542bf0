// Optimization: Adam, gradient clipping, batching and the training loop.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxseq/checkpoint.hpp"
#include "auxseq/config.hpp"
#include "auxseq/data.hpp"
#include "auxseq/eval.hpp"
#include "auxseq/model.hpp"
#include "auxseq/rng.hpp"
#include <json.hpp>

namespace auxseq {

/// Rate for fitting a handful of examples. The default rate stalls on tiny
/// sets in this post-LN stack without warmup.
inline constexpr double kSmallSetLr = 1e-3;

/// Parameter initialization seed for a run seed.
inline std::uint64_t model_init_seed(std::uint64_t seed) { return derive_seed(seed, 0x1417); }

struct TrainConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  int batch_size = 512;
  int max_steps = 30000;
  int eval_every = 500;
  int log_every = 50;
  std::uint64_t seed = 1;
  double fraction_train = 1.0;
  double fraction_aux = 1.0;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  double l2_coeff = kEmbeddingL2;
  std::optional<double> early_stop_acc;  // stop once dev action/aux1/aux2 all reach it
  std::size_t eval_limit = 0;            // evaluate on the first N dev examples (0 = all)
  bool record_wall_time = false;         // wall_ms is null otherwise, keeping logs byte-stable

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& tensor, int step)
      : std::runtime_error("non-finite gradient in " + tensor + " at step " + std::to_string(step)),
        tensor_(tensor),
        step_(step) {}
  const std::string& tensor() const { return tensor_; }
  int step() const { return step_; }

 private:
  std::string tensor_;
  int step_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;

  static AdamHyper from(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_eps}; }
};

/// One bias-corrected Adam update of `w` at 1-based step `t`.
template <class S>
void adam_update(Mat<S>& w, const Mat<S>& g, Mat<S>& m, Mat<S>& v, long t, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const S b1 = static_cast<S>(h.beta1), b2 = static_cast<S>(h.beta2);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const S gi = g.data()[i];
    S& mi = m.data()[i];
    S& vi = v.data()[i];
    mi = b1 * mi + (S(1) - b1) * gi;
    vi = b2 * vi + (S(1) - b2) * gi * gi;
    const double mhat = static_cast<double>(mi) / c1;
    const double vhat = static_cast<double>(vi) / c2;
    w.data()[i] -= static_cast<S>(h.lr * mhat / (std::sqrt(vhat) + h.eps));
  }
}

template <class S>
struct AdamState {
  Parameters<S> m;
  Parameters<S> v;
  long t = 0;

  static AdamState for_params(const Parameters<S>& p) {
    return {Parameters<S>::shaped_like(p), Parameters<S>::shaped_like(p), 0};
  }
};

template <class S>
void check_finite(Parameters<S>& grads, int step) {
  for (auto& t : grads.tensors())
    if (!t.value->allFinite()) throw NonFiniteGradient(t.name, step);
}

template <class S>
void adam_step(Parameters<S>& params, Parameters<S>& grads, AdamState<S>& state, const AdamHyper& h) {
  check_finite(grads, static_cast<int>(state.t + 1));
  ++state.t;
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) adam_update(*p[i].value, *g[i].value, *m[i].value, *v[i].value, state.t, h);
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
template <class S>
double clip_global_norm(Parameters<S>& grads, double max_norm) {
  double sq = 0;
  for (auto& t : grads.tensors()) sq += static_cast<double>(t.value->squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S scale = static_cast<S>(max_norm / norm);
    for (auto& t : grads.tensors()) *t.value *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Data preparation and batching

/// Applies the example and aux-supervision fractions. A fraction of 1.0
/// leaves the set untouched, so both few-shot modes coincide at full data.
inline std::vector<LabeledExample> training_set(const std::vector<LabeledExample>& train, const TrainConfig& cfg) {
  std::vector<LabeledExample> out = cfg.fraction_train < 1.0 ? subsample(train, cfg.fraction_train, cfg.seed) : train;
  if (cfg.fraction_aux < 1.0) out = mask_aux_supervision(out, cfg.fraction_aux, cfg.seed);
  return out;
}

/// Example indices for every step of one epoch: a seeded permutation cut into
/// consecutive batches (the last one may be short).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed,
                                                           std::uint64_t epoch) {
  const auto order = shuffled_indices(n, derive_seed(seed, 0xBA7C, epoch));
  const auto bs = static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += bs)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + bs)));
  return batches;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  int steps = 0;
  int best_step = -1;
  RunMetrics best_dev;
  RunMetrics final_dev;
  bool stopped_early = false;
};

inline nlohmann::ordered_json metrics_record(int step, const std::string& split, double loss, double action_acc,
                                             std::optional<double> aux1_acc, std::optional<double> aux2_acc,
                                             std::uint64_t seed, std::optional<double> wall_ms) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["split"] = split;
  j["loss"] = loss;
  j["action_acc"] = action_acc;
  j["aux1_acc"] = aux1_acc ? nlohmann::ordered_json(*aux1_acc) : nlohmann::ordered_json(nullptr);
  j["aux2_acc"] = aux2_acc ? nlohmann::ordered_json(*aux2_acc) : nlohmann::ordered_json(nullptr);
  j["seed"] = seed;
  j["wall_ms"] = wall_ms ? nlohmann::ordered_json(*wall_ms) : nlohmann::ordered_json(nullptr);
  return j;
}

/// Trains `model` in place. Writes <out>/metrics.jsonl and the checkpoints
/// <out>/best and <out>/final. `on_record` sees every logged record.
template <class S>
TrainResult train(AuxTransformer<S>& model, const std::vector<LabeledExample>& train_examples,
                  const std::vector<LabeledExample>& dev_examples, const TrainConfig& cfg,
                  const std::filesystem::path& out,
                  const std::function<void(const nlohmann::ordered_json&)>& on_record = {}) {
  if (cfg.batch_size < 1 || cfg.max_steps < 0 || cfg.eval_every < 1 || cfg.log_every < 1)
    throw std::invalid_argument("batch_size, eval_every and log_every must be positive");
  const auto data = training_set(train_examples, cfg);
  if (data.empty()) throw EmptySubset("training set is empty");
  if (cfg.fraction_aux <= 0.0) model.mutable_config().feed_aux = false;

  std::vector<ExampleIds> ids;
  ids.reserve(data.size());
  for (const auto& ex : data) ids.push_back(example_ids(ex));
  std::vector<LabeledExample> dev(dev_examples.begin(),
                                  cfg.eval_limit && cfg.eval_limit < dev_examples.size()
                                      ? dev_examples.begin() + static_cast<std::ptrdiff_t>(cfg.eval_limit)
                                      : dev_examples.end());
  std::vector<ExampleIds> dev_ids;
  for (const auto& ex : dev) dev_ids.push_back(example_ids(ex));

  std::filesystem::create_directories(out);
  {
    std::ofstream meta(out / "config.txt");
    meta << config_text(model.config(), cfg);
    if (!meta) throw DiskFull(out / "config.txt");
  }
  std::ofstream log(out / "metrics.jsonl", std::ios::binary);
  if (!log) throw DiskFull(out / "metrics.jsonl");
  const auto start = std::chrono::steady_clock::now();
  auto wall = [&]() -> std::optional<double> {
    if (!cfg.record_wall_time) return std::nullopt;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  auto emit = [&](const nlohmann::ordered_json& j) {
    log << j.dump() << '\n';
    log.flush();
    if (!log) throw DiskFull(out / "metrics.jsonl");
    if (on_record) on_record(j);
  };

  auto state = AdamState<S>::for_params(model.params());
  auto grads = Parameters<S>::shaped_like(model.params());
  const auto hyper = AdamHyper::from(cfg);
  TrainResult res;
  bool have_best = false;

  auto evaluate_dev = [&](int step) {
    const auto metrics = evaluate(model, std::span<const LabeledExample>(dev), cfg.seed);
    const auto loss = dev_ids.empty() ? BatchStats{}
                                      : batch_objective<S>(model, dev_ids, std::nullopt, nullptr, cfg.l2_coeff);
    emit(metrics_record(step, "dev", loss.loss, metrics.action_acc, metrics.aux1_acc, metrics.aux2_acc, cfg.seed,
                        wall()));
    res.final_dev = metrics;
    if (!have_best || metrics.action_acc > res.best_dev.action_acc) {
      have_best = true;
      res.best_dev = metrics;
      res.best_step = step;
      save_checkpoint(out / "best", model, step);
    }
    return metrics;
  };

  int step = 0;
  for (std::uint64_t epoch = 0; step < cfg.max_steps; ++epoch) {
    for (const auto& batch_idx : epoch_batches(ids.size(), cfg.batch_size, cfg.seed, epoch)) {
      if (step >= cfg.max_steps) break;
      std::vector<ExampleIds> batch;
      batch.reserve(batch_idx.size());
      for (auto i : batch_idx) batch.push_back(ids[i]);
      grads.set_zero();
      const auto st = batch_objective<S>(model, batch, derive_seed(cfg.seed, 0x57E9, static_cast<std::uint64_t>(step)),
                                         &grads, cfg.l2_coeff);
      check_finite(grads, step + 1);
      clip_global_norm(grads, cfg.grad_clip);
      adam_step(model.params(), grads, state, hyper);
      ++step;
      if (step % cfg.log_every == 0 || step == 1) {
        const auto n = static_cast<double>(st.examples);
        const auto sup = static_cast<double>(st.aux_supervised);
        std::optional<double> a1, a2;
        if (st.aux_supervised) {
          a1 = static_cast<double>(st.aux1_exact) / sup;
          a2 = static_cast<double>(st.aux2_exact) / sup;
        }
        emit(metrics_record(step, "train", st.loss, static_cast<double>(st.action_exact) / n, a1, a2, cfg.seed,
                            wall()));
      }
      if (step % cfg.eval_every == 0) {
        const auto m = evaluate_dev(step);
        if (cfg.early_stop_acc && m.action_acc >= *cfg.early_stop_acc && m.aux1_acc >= *cfg.early_stop_acc &&
            m.aux2_acc >= *cfg.early_stop_acc) {
          res.stopped_early = true;
          break;
        }
      }
    }
    if (res.stopped_early) break;
  }
  res.steps = step;
  if (!have_best || step % cfg.eval_every != 0) evaluate_dev(step);
  save_checkpoint(out / "final", model, step);
  return res;
}

}  // namespace auxseq
