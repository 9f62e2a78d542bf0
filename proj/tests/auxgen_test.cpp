#include <gtest/gtest.h>

#include "auxseq/auxgen.hpp"

using namespace auxseq;

namespace {

struct Fixture {
  const char* command;
  std::vector<int> aux1;
  std::vector<int> aux2;
};

// Labeled rows from the published example tables, plus the worked
// "walk left thrice" example.
const std::vector<Fixture> kFixtures = {
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
    {"walk left thrice", {2, 2, 1, 1, 0, 0}, {1, 0, 1, 0, 1, 0}},
};

}  // namespace

TEST(AuxGen, PublishedFixturesBitExact) {
  for (const auto& f : kFixtures) {
    const auto ast = parse(f.command);
    EXPECT_EQ(gen_aux1(ast), f.aux1) << f.command;
    EXPECT_EQ(gen_aux2(ast), f.aux2) << f.command;
  }
}

TEST(AuxGen, AtomicCommand) {
  EXPECT_EQ(gen_aux1(parse("jump")), std::vector<int>{0});
  EXPECT_EQ(gen_aux2(parse("jump")), std::vector<int>{0});
}

TEST(AuxGen, TurnCountsEmittedActions) {
  EXPECT_EQ(gen_aux2(parse("turn around left")), (std::vector<int>{3, 2, 1, 0}));
  EXPECT_EQ(gen_aux2(parse("turn opposite right twice")), (std::vector<int>{1, 0, 1, 0}));
  EXPECT_EQ(gen_aux1(parse("turn left thrice")), (std::vector<int>{2, 1, 0}));
}

TEST(AuxGen, Bounds) {
  constexpr auto b = aux_vocab_bounds();
  EXPECT_EQ(b.aux1_max, 5);
  EXPECT_EQ(b.aux2_max, 15);
}

TEST(AuxGen, InvariantsOverWholeGrammar) {
  const auto bounds = aux_vocab_bounds();
  int seen_max1 = 0, seen_max2 = 0;
  for (const auto& p : enumerate_all()) {
    const auto ast = parse(std::span<const Word>(p.command));
    const auto aux = gen_aux(ast);
    ASSERT_EQ(aux.aux1.size(), p.actions.size());
    ASSERT_EQ(aux.aux2.size(), p.actions.size());
    for (std::size_t i = 0; i < aux.aux1.size(); ++i) {
      ASSERT_GE(aux.aux1[i], 0);
      ASSERT_LE(aux.aux1[i], bounds.aux1_max);
      ASSERT_GE(aux.aux2[i], 0);
      ASSERT_LE(aux.aux2[i], bounds.aux2_max);
      seen_max1 = std::max(seen_max1, aux.aux1[i]);
      seen_max2 = std::max(seen_max2, aux.aux2[i]);
    }
    // Per clause: aux1 non-increasing; aux2 = R identical strictly decreasing runs.
    std::size_t start = 0;
    for (const auto& shape : clause_shapes(ast)) {
      const auto len = static_cast<std::size_t>(shape.repetitions * shape.unit_length);
      for (std::size_t i = start + 1; i < start + len; ++i) ASSERT_LE(aux.aux1[i], aux.aux1[i - 1]);
      for (int r = 0; r < shape.repetitions; ++r) {
        const std::size_t s = start + static_cast<std::size_t>(r * shape.unit_length);
        for (int k = 1; k < shape.unit_length; ++k)
          ASSERT_EQ(aux.aux2[s + k], aux.aux2[s + k - 1] - 1);
        for (int k = 0; k < shape.unit_length; ++k) ASSERT_EQ(aux.aux2[s + k], aux.aux2[start + k]);
      }
      start += len;
    }
    ASSERT_EQ(start, p.actions.size());
  }
  EXPECT_EQ(seen_max1, 5);
  EXPECT_EQ(seen_max2, 15);
}

TEST(AuxGen, StructureIsDecodableFromLabels) {
  for (const auto& p : enumerate_all()) {
    const auto ast = parse(std::span<const Word>(p.command));
    const auto aux = gen_aux(ast);
    const auto decoded = decode_structure(aux.aux1, aux.aux2);
    ASSERT_TRUE(decoded) << join(p.command);
    ASSERT_EQ(*decoded, clause_shapes(ast)) << join(p.command);
  }
}

TEST(AuxGen, DecodeRejectsMalformed) {
  EXPECT_FALSE(decode_structure(std::vector<int>{1, 0}, std::vector<int>{1, 0}));  // R=2,L=2 needs 4
  EXPECT_FALSE(decode_structure(std::vector<int>{0}, std::vector<int>{0, 0}));
  EXPECT_FALSE(decode_structure(std::vector<int>{}, std::vector<int>{}));
  EXPECT_FALSE(decode_structure(std::vector<int>{3}, std::vector<int>{8}));         // lone second clause
  EXPECT_FALSE(decode_structure(std::vector<int>{0, 0}, std::vector<int>{0, 0}));   // clause 0 twice
  EXPECT_FALSE(decode_structure(std::vector<int>{1, 1, 0}, std::vector<int>{1, 0, 1}));  // truncated
  EXPECT_FALSE(decode_structure(std::vector<int>{6}, std::vector<int>{0}));
}
