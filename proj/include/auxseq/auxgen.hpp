// Auxiliary supervision sequences.
//
// aux1 counts down the remaining repetitions of the current clause's unit,
// one id per emitted action. aux2 counts down the position inside the current
// unit. Ids of the textually second clause are shifted by 3 (aux1) and 8 (aux2)
// so that both clauses share one table per channel. Blocks follow execution
// order, so for "X after Y" the shifted block of Y comes first.
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "auxseq/grammar.hpp"

namespace auxseq {

inline constexpr int kMaxRepetition = 3;
inline constexpr int kMaxUnitLength = 8;
inline constexpr int kAux1Offset = kMaxRepetition;  // second clause shift
inline constexpr int kAux2Offset = kMaxUnitLength;

struct AuxBounds {
  int aux1_max;
  int aux2_max;
};

constexpr AuxBounds aux_vocab_bounds() {
  return {kMaxRepetition - 1 + kAux1Offset, kMaxUnitLength - 1 + kAux2Offset};
}

struct AuxLabels {
  std::vector<int> aux1;
  std::vector<int> aux2;
};

/// Per-clause repetition count R and unit length L.
struct ClauseShape {
  int textual_index = 0;
  int repetitions = 1;
  int unit_length = 1;

  friend bool operator==(const ClauseShape&, const ClauseShape&) = default;
};

/// Gold clause shapes in execution order.
inline std::vector<ClauseShape> clause_shapes(const CommandAst& ast) {
  std::vector<ClauseShape> out;
  for (const auto& [idx, sc] : execution_order(ast)) {
    const auto cu = interpret_sub(*sc);
    out.push_back({idx, cu.repetitions, static_cast<int>(cu.unit.size())});
  }
  return out;
}

inline AuxLabels gen_aux(const CommandAst& ast) {
  AuxLabels out;
  for (const auto& shape : clause_shapes(ast)) {
    const int off1 = shape.textual_index * kAux1Offset;
    const int off2 = shape.textual_index * kAux2Offset;
    for (int r = 0; r < shape.repetitions; ++r) {
      for (int k = 0; k < shape.unit_length; ++k) {
        out.aux1.push_back(shape.repetitions - 1 - r + off1);
        out.aux2.push_back(shape.unit_length - 1 - k + off2);
      }
    }
  }
  return out;
}

inline std::vector<int> gen_aux1(const CommandAst& ast) { return gen_aux(ast).aux1; }
inline std::vector<int> gen_aux2(const CommandAst& ast) { return gen_aux(ast).aux2; }

/// Recovers clause shapes (execution order) from a pair of aux sequences.
/// Returns nullopt unless both sequences are exactly the pattern some
/// one- or two-clause command would produce.
inline std::optional<std::vector<ClauseShape>> decode_structure(std::span<const int> aux1,
                                                                std::span<const int> aux2) {
  if (aux1.size() != aux2.size() || aux1.empty()) return std::nullopt;
  const auto bounds = aux_vocab_bounds();
  std::vector<ClauseShape> shapes;
  std::size_t i = 0;
  while (i < aux1.size()) {
    if (aux1[i] < 0 || aux1[i] > bounds.aux1_max || aux2[i] < 0 || aux2[i] > bounds.aux2_max)
      return std::nullopt;
    const int clause = aux1[i] >= kAux1Offset ? 1 : 0;
    if ((aux2[i] >= kAux2Offset ? 1 : 0) != clause) return std::nullopt;
    const int off1 = clause * kAux1Offset;
    const int off2 = clause * kAux2Offset;
    ClauseShape s{clause, aux1[i] - off1 + 1, aux2[i] - off2 + 1};
    const std::size_t len = static_cast<std::size_t>(s.repetitions * s.unit_length);
    if (i + len > aux1.size()) return std::nullopt;
    for (int r = 0; r < s.repetitions; ++r) {
      for (int k = 0; k < s.unit_length; ++k) {
        const std::size_t j = i + static_cast<std::size_t>(r * s.unit_length + k);
        if (aux1[j] != s.repetitions - 1 - r + off1) return std::nullopt;
        if (aux2[j] != s.unit_length - 1 - k + off2) return std::nullopt;
      }
    }
    shapes.push_back(s);
    i += len;
  }
  if (shapes.size() > 2) return std::nullopt;
  if (shapes.size() == 2 && shapes[0].textual_index == shapes[1].textual_index) return std::nullopt;
  if (shapes.size() == 1 && shapes[0].textual_index != 0) return std::nullopt;
  return shapes;
}

}  // namespace auxseq
