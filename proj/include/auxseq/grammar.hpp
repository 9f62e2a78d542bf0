// SCAN command grammar: lexicon, tokenizer, parser, interpreter and an
// exhaustive enumerator that doubles as the ground-truth oracle for data files.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace auxseq {

// Declared in alphabetical order so that comparing enum values compares the
// underlying words lexicographically.
enum class Word : std::uint8_t {
  after,
  and_,
  around,
  jump,
  left,
  look,
  opposite,
  right,
  run,
  thrice,
  turn,
  twice,
  walk,
};
inline constexpr int kNumWords = 13;

enum class Action : std::uint8_t { walk, look, run, jump, lturn, rturn };
inline constexpr int kNumActions = 6;

enum class Primitive : std::uint8_t { walk, look, run, jump, turn };
enum class Direction : std::uint8_t { left, right };
enum class Manner : std::uint8_t { opposite, around };
enum class Conjunction : std::uint8_t { and_, after };

inline constexpr std::array<std::string_view, kNumWords> kWordNames = {
    "after", "and",   "around", "jump",   "left", "look",
    "opposite", "right", "run", "thrice", "turn", "twice", "walk"};

inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "WALK", "LOOK", "RUN", "JUMP", "LTURN", "RTURN"};

constexpr std::string_view to_string(Word w) { return kWordNames[static_cast<std::size_t>(w)]; }
constexpr std::string_view to_string(Action a) { return kActionNames[static_cast<std::size_t>(a)]; }

class UnknownWord : public std::runtime_error {
 public:
  explicit UnknownWord(std::string word)
      : std::runtime_error("unknown word: '" + word + "'"), word_(std::move(word)) {}
  const std::string& word() const noexcept { return word_; }

 private:
  std::string word_;
};

class MalformedCommand : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SubCommand {
  Primitive primitive = Primitive::walk;
  std::optional<Direction> direction;
  std::optional<Manner> manner;
  int repetition = 1;

  friend bool operator==(const SubCommand&, const SubCommand&) = default;
};

struct CommandAst {
  SubCommand first;
  std::optional<std::pair<Conjunction, SubCommand>> rest;

  friend bool operator==(const CommandAst&, const CommandAst&) = default;

  int num_clauses() const { return rest ? 2 : 1; }
};

/// Action list for one repetition of a sub-command, plus the repetition count.
struct ClauseUnit {
  std::vector<Action> unit;
  int repetitions = 1;
};

struct ScanPair {
  std::vector<Word> command;
  std::vector<Action> actions;
};

// ---------------------------------------------------------------------------

inline std::optional<Word> word_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kWordNames.size(); ++i)
    if (kWordNames[i] == s) return static_cast<Word>(i);
  return std::nullopt;
}

inline std::optional<Action> action_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i)
    if (kActionNames[i] == s) return static_cast<Action>(i);
  return std::nullopt;
}

inline std::vector<Word> tokenize(std::string_view text) {
  std::vector<Word> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\n' && text[j] != '\r') ++j;
    const auto piece = text.substr(i, j - i);
    const auto w = word_from_string(piece);
    if (!w) throw UnknownWord(std::string(piece));
    out.push_back(*w);
    i = j;
  }
  return out;
}

inline std::string join(std::span<const Word> words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += to_string(words[i]);
  }
  return s;
}

inline std::string join(std::span<const Action> actions) {
  std::string s;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (i) s += ' ';
    s += to_string(actions[i]);
  }
  return s;
}

namespace detail {

inline std::optional<Primitive> as_primitive(Word w) {
  switch (w) {
    case Word::walk: return Primitive::walk;
    case Word::look: return Primitive::look;
    case Word::run: return Primitive::run;
    case Word::jump: return Primitive::jump;
    case Word::turn: return Primitive::turn;
    default: return std::nullopt;
  }
}

inline Word primitive_word(Primitive p) {
  constexpr std::array<Word, 5> words = {Word::walk, Word::look, Word::run, Word::jump, Word::turn};
  return words[static_cast<std::size_t>(p)];
}

// sub := primitive [manner] direction [repetition] | primitive [repetition]
// (turn requires a direction)
inline SubCommand parse_sub(std::span<const Word> toks) {
  if (toks.empty()) throw MalformedCommand("empty sub-command");
  SubCommand sc;
  const auto prim = as_primitive(toks[0]);
  if (!prim) throw MalformedCommand("sub-command must start with a primitive, got '" + std::string(to_string(toks[0])) + "'");
  sc.primitive = *prim;
  std::size_t i = 1;
  if (i < toks.size() && (toks[i] == Word::opposite || toks[i] == Word::around)) {
    sc.manner = toks[i] == Word::opposite ? Manner::opposite : Manner::around;
    ++i;
    if (i >= toks.size() || (toks[i] != Word::left && toks[i] != Word::right))
      throw MalformedCommand("manner adverb must be followed by a direction");
  }
  if (i < toks.size() && (toks[i] == Word::left || toks[i] == Word::right)) {
    sc.direction = toks[i] == Word::left ? Direction::left : Direction::right;
    ++i;
  }
  if (i < toks.size() && (toks[i] == Word::twice || toks[i] == Word::thrice)) {
    sc.repetition = toks[i] == Word::twice ? 2 : 3;
    ++i;
  }
  if (i != toks.size())
    throw MalformedCommand("unexpected word '" + std::string(to_string(toks[i])) + "' in sub-command");
  if (sc.primitive == Primitive::turn && !sc.direction)
    throw MalformedCommand("'turn' requires a direction");
  return sc;
}

inline void emit_sub(const SubCommand& sc, std::vector<Word>& out) {
  out.push_back(primitive_word(sc.primitive));
  if (sc.manner) out.push_back(*sc.manner == Manner::opposite ? Word::opposite : Word::around);
  if (sc.direction) out.push_back(*sc.direction == Direction::left ? Word::left : Word::right);
  if (sc.repetition == 2) out.push_back(Word::twice);
  if (sc.repetition == 3) out.push_back(Word::thrice);
}

}  // namespace detail

inline CommandAst parse(std::span<const Word> tokens) {
  std::optional<std::size_t> conj;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Word::and_ || tokens[i] == Word::after) {
      if (conj) throw MalformedCommand("more than one conjunction");
      conj = i;
    }
  }
  CommandAst ast;
  if (!conj) {
    ast.first = detail::parse_sub(tokens);
    return ast;
  }
  if (*conj == 0 || *conj + 1 == tokens.size()) throw MalformedCommand("conjunction without two operands");
  ast.first = detail::parse_sub(tokens.first(*conj));
  const auto c = tokens[*conj] == Word::and_ ? Conjunction::and_ : Conjunction::after;
  ast.rest = std::make_pair(c, detail::parse_sub(tokens.subspan(*conj + 1)));
  return ast;
}

inline CommandAst parse(std::string_view text) {
  const auto toks = tokenize(text);
  return parse(std::span<const Word>(toks));
}

inline std::vector<Word> to_tokens(const CommandAst& ast) {
  std::vector<Word> out;
  detail::emit_sub(ast.first, out);
  if (ast.rest) {
    out.push_back(ast.rest->first == Conjunction::and_ ? Word::and_ : Word::after);
    detail::emit_sub(ast.rest->second, out);
  }
  return out;
}

inline ClauseUnit interpret_sub(const SubCommand& sc) {
  ClauseUnit cu;
  cu.repetitions = sc.repetition;
  std::vector<Action> act;
  if (sc.primitive != Primitive::turn) {
    constexpr std::array<Action, 4> prims = {Action::walk, Action::look, Action::run, Action::jump};
    act.push_back(prims[static_cast<std::size_t>(sc.primitive)]);
  }
  if (!sc.direction) {
    cu.unit = std::move(act);
    return cu;
  }
  const Action t = *sc.direction == Direction::left ? Action::lturn : Action::rturn;
  std::vector<Action> step{t};
  step.insert(step.end(), act.begin(), act.end());
  if (!sc.manner) {
    cu.unit = step;
  } else if (*sc.manner == Manner::opposite) {
    cu.unit = {t};
    cu.unit.insert(cu.unit.end(), step.begin(), step.end());
  } else {
    for (int k = 0; k < 4; ++k) cu.unit.insert(cu.unit.end(), step.begin(), step.end());
  }
  return cu;
}

/// Clause actions (unit repeated R times) for a single sub-command.
inline std::vector<Action> expand(const SubCommand& sc) {
  const auto cu = interpret_sub(sc);
  std::vector<Action> out;
  out.reserve(cu.unit.size() * static_cast<std::size_t>(cu.repetitions));
  for (int r = 0; r < cu.repetitions; ++r) out.insert(out.end(), cu.unit.begin(), cu.unit.end());
  return out;
}

/// Sub-commands in execution order, paired with their textual index (0 or 1).
/// "after" runs the textually second clause first.
inline std::vector<std::pair<int, const SubCommand*>> execution_order(const CommandAst& ast) {
  if (!ast.rest) return {{0, &ast.first}};
  if (ast.rest->first == Conjunction::and_) return {{0, &ast.first}, {1, &ast.rest->second}};
  return {{1, &ast.rest->second}, {0, &ast.first}};
}

inline std::vector<Action> interpret(const CommandAst& ast) {
  std::vector<Action> out;
  for (const auto& [idx, sc] : execution_order(ast)) {
    const auto part = expand(*sc);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

/// All valid sub-commands (34 forms x 3 repetition options = 102).
inline std::vector<SubCommand> all_subcommands() {
  std::vector<SubCommand> out;
  for (auto p : {Primitive::walk, Primitive::look, Primitive::run, Primitive::jump, Primitive::turn}) {
    std::vector<SubCommand> forms;
    if (p != Primitive::turn) forms.push_back({p, std::nullopt, std::nullopt, 1});
    for (auto d : {Direction::left, Direction::right}) {
      forms.push_back({p, d, std::nullopt, 1});
      forms.push_back({p, d, Manner::opposite, 1});
      forms.push_back({p, d, Manner::around, 1});
    }
    for (const auto& f : forms)
      for (int r = 1; r <= 3; ++r) {
        auto sc = f;
        sc.repetition = r;
        out.push_back(sc);
      }
  }
  return out;
}

/// Every command the grammar derives with its action sequence, sorted
/// lexicographically by token list.
inline std::vector<ScanPair> enumerate_all() {
  const auto subs = all_subcommands();
  std::vector<CommandAst> asts;
  asts.reserve(subs.size() + 2 * subs.size() * subs.size());
  for (const auto& a : subs) asts.push_back({a, std::nullopt});
  for (auto c : {Conjunction::and_, Conjunction::after})
    for (const auto& a : subs)
      for (const auto& b : subs) asts.push_back({a, std::make_pair(c, b)});

  std::vector<ScanPair> out;
  out.reserve(asts.size());
  for (const auto& ast : asts) out.push_back({to_tokens(ast), interpret(ast)});
  std::sort(out.begin(), out.end(),
            [](const ScanPair& x, const ScanPair& y) { return x.command < y.command; });
  return out;
}

}  // namespace auxseq
