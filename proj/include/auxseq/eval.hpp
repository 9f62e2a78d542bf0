// Exact-match evaluation and error taxonomy.
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "auxseq/auxgen.hpp"
#include "auxseq/data.hpp"
#include "auxseq/model.hpp"
#include <json.hpp>

namespace auxseq {

template <class T>
bool exact_match(std::span<const T> pred, std::span<const T> gold) {
  return std::equal(pred.begin(), pred.end(), gold.begin(), gold.end());
}

template <class T>
bool exact_match(const std::vector<T>& pred, const std::vector<T>& gold) {
  return pred == gold;
}

enum class ErrorKind { wrong_repetition_count, wrong_unit_semantics, length_overrun, other };

inline std::string to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::wrong_repetition_count: return "wrong_repetition_count";
    case ErrorKind::wrong_unit_semantics: return "wrong_unit_semantics";
    case ErrorKind::length_overrun: return "length_overrun";
    case ErrorKind::other: return "other";
  }
  return "?";
}

struct ErrorBuckets {
  std::size_t wrong_repetition_count = 0;
  std::size_t wrong_unit_semantics = 0;
  std::size_t length_overrun = 0;
  std::size_t other = 0;

  std::size_t total() const { return wrong_repetition_count + wrong_unit_semantics + length_overrun + other; }
  void add(ErrorKind k) {
    switch (k) {
      case ErrorKind::wrong_repetition_count: ++wrong_repetition_count; break;
      case ErrorKind::wrong_unit_semantics: ++wrong_unit_semantics; break;
      case ErrorKind::length_overrun: ++length_overrun; break;
      case ErrorKind::other: ++other; break;
    }
  }
  friend bool operator==(const ErrorBuckets&, const ErrorBuckets&) = default;
};

struct RunMetrics {
  double action_acc = 0;
  double aux1_acc = 0;
  double aux2_acc = 0;
  ErrorBuckets errors;
  std::size_t n_examples = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

inline nlohmann::ordered_json to_json(const RunMetrics& m) {
  return {{"n_examples", m.n_examples},
          {"seed", m.seed},
          {"action_acc", m.action_acc},
          {"aux1_acc", m.aux1_acc},
          {"aux2_acc", m.aux2_acc},
          {"errors",
           {{"wrong_repetition_count", m.errors.wrong_repetition_count},
            {"wrong_unit_semantics", m.errors.wrong_unit_semantics},
            {"length_overrun", m.errors.length_overrun},
            {"other", m.errors.other}}}};
}

/// Model output in raw label space (actions and aux counters, no specials).
struct DecodedOutput {
  std::vector<Action> actions;
  std::vector<int> aux1;
  std::vector<int> aux2;
  bool truncated = false;
  bool well_formed = true;  // no special ids among the emitted tokens
};

inline DecodedOutput to_labels(const Prediction& p) {
  DecodedOutput out;
  out.truncated = p.truncated;
  for (int id : p.actions) {
    if (id < kNumSpecials) {
      out.well_formed = false;
      continue;
    }
    out.actions.push_back(static_cast<Action>(id - kNumSpecials));
  }
  for (int id : p.aux1) {
    if (id < kNumSpecials) out.well_formed = false;
    out.aux1.push_back(id - kNumSpecials);
  }
  for (int id : p.aux2) {
    if (id < kNumSpecials) out.well_formed = false;
    out.aux2.push_back(id - kNumSpecials);
  }
  return out;
}

inline DecodedOutput gold_output(const LabeledExample& ex) { return {ex.actions, ex.aux1, ex.aux2, false, true}; }

namespace detail {

inline std::size_t minimal_period(std::span<const Action> s) {
  for (std::size_t p = 1; p < s.size(); ++p) {
    if (s.size() % p) continue;
    bool ok = true;
    for (std::size_t i = p; i < s.size() && ok; ++i) ok = s[i] == s[i - p];
    if (ok) return p;
  }
  return s.size();
}

/// Number of whole copies of `period` making up `s`, if any.
inline std::optional<std::size_t> power_of(std::span<const Action> s, std::span<const Action> period) {
  if (s.empty() || s.size() % period.size()) return std::nullopt;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] != period[i % period.size()]) return std::nullopt;
  return s.size() / period.size();
}

}  // namespace detail

/// Classifies an action mismatch. Clause structure decoded from the predicted
/// aux sequences is compared with the gold (R, L) per clause; when it is
/// unusable, predicted actions are matched clause by clause against whole
/// powers of the gold clause's minimal period.
inline ErrorKind classify_error(const CommandAst& gold, const DecodedOutput& pred) {
  if (pred.truncated) return ErrorKind::length_overrun;
  const auto gold_shapes = clause_shapes(gold);

  if (pred.well_formed) {
    if (const auto shapes = decode_structure(pred.aux1, pred.aux2)) {
      std::size_t len = 0;
      for (const auto& s : *shapes) len += static_cast<std::size_t>(s.repetitions * s.unit_length);
      if (len == pred.actions.size()) {
        if (shapes->size() != gold_shapes.size()) return ErrorKind::other;
        bool reps_differ = false, units_differ = false;
        for (std::size_t i = 0; i < shapes->size(); ++i) {
          if ((*shapes)[i].textual_index != gold_shapes[i].textual_index) return ErrorKind::other;
          reps_differ |= (*shapes)[i].repetitions != gold_shapes[i].repetitions;
          units_differ |= (*shapes)[i].unit_length != gold_shapes[i].unit_length;
        }
        if (reps_differ && !units_differ) return ErrorKind::wrong_repetition_count;
        if (!reps_differ) return ErrorKind::wrong_unit_semantics;
        return ErrorKind::other;
      }
    }
  }

  // Action-level fallback.
  std::vector<std::vector<Action>> periods;
  std::vector<std::size_t> gold_counts;
  for (const auto& [idx, sc] : execution_order(gold)) {
    const auto cu = interpret_sub(*sc);
    const auto p = detail::minimal_period(cu.unit);
    periods.emplace_back(cu.unit.begin(), cu.unit.begin() + static_cast<std::ptrdiff_t>(p));
    gold_counts.push_back(cu.unit.size() / p * static_cast<std::size_t>(cu.repetitions));
  }
  const std::span<const Action> acts(pred.actions);
  if (periods.size() == 1) {
    if (const auto k = detail::power_of(acts, periods[0]); k && *k != gold_counts[0])
      return ErrorKind::wrong_repetition_count;
  } else {
    for (std::size_t split = 1; split < acts.size(); ++split) {
      const auto k1 = detail::power_of(acts.first(split), periods[0]);
      const auto k2 = detail::power_of(acts.subspan(split), periods[1]);
      if (k1 && k2 && (*k1 != gold_counts[0] || *k2 != gold_counts[1])) return ErrorKind::wrong_repetition_count;
    }
  }
  std::size_t gold_len = 0;
  for (const auto& s : gold_shapes) gold_len += static_cast<std::size_t>(s.repetitions * s.unit_length);
  if (pred.actions.size() == gold_len) return ErrorKind::wrong_unit_semantics;
  return ErrorKind::other;
}

/// Scores precomputed outputs against gold examples.
inline RunMetrics score(std::span<const LabeledExample> gold, std::span<const DecodedOutput> pred,
                        std::uint64_t seed = 0) {
  if (gold.size() != pred.size()) throw std::invalid_argument("prediction count does not match examples");
  RunMetrics m;
  m.n_examples = gold.size();
  m.seed = seed;
  std::size_t act = 0, a1 = 0, a2 = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool ok = !pred[i].truncated && pred[i].well_formed && exact_match(pred[i].actions, gold[i].actions);
    act += ok;
    a1 += !pred[i].truncated && exact_match(pred[i].aux1, gold[i].aux1);
    a2 += !pred[i].truncated && exact_match(pred[i].aux2, gold[i].aux2);
    if (!ok) m.errors.add(classify_error(parse(std::span<const Word>(gold[i].command)), pred[i]));
  }
  if (!gold.empty()) {
    const auto n = static_cast<double>(gold.size());
    m.action_acc = static_cast<double>(act) / n;
    m.aux1_acc = static_cast<double>(a1) / n;
    m.aux2_acc = static_cast<double>(a2) / n;
  }
  return m;
}

template <class S>
std::vector<DecodedOutput> predict(const AuxTransformer<S>& model, std::span<const LabeledExample> examples) {
  std::vector<DecodedOutput> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    std::vector<int> ids;
    for (auto w : ex.command) ids.push_back(word_id(w));
    out.push_back(to_labels(model.greedy_decode(ids, model.config().max_len)));
  }
  return out;
}

/// Greedy decoding plus scoring.
template <class S>
RunMetrics evaluate(const AuxTransformer<S>& model, std::span<const LabeledExample> examples, std::uint64_t seed = 0) {
  const auto pred = predict(model, examples);
  return score(examples, pred, seed);
}

}  // namespace auxseq
