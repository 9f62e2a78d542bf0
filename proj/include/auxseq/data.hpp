// Dataset ingestion: SCAN "IN: ... OUT: ..." files, vocabularies, auxiliary
// labels, and deterministic few-shot / partial-supervision variants.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "auxseq/auxgen.hpp"
#include "auxseq/grammar.hpp"
#include "auxseq/rng.hpp"

namespace auxseq {

// ---------------------------------------------------------------------------
// Vocabularies

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kNumSpecials = 3;

/// Ordered symbol names; the id of a symbol is its index. PAD is always 0.
class SymbolTable {
 public:
  SymbolTable() = default;
  explicit SymbolTable(std::vector<std::string> names) : names_(std::move(names)) {}

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }

  int id(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    throw std::out_of_range("symbol not in table: " + std::string(name));
  }

  /// FNV-1a over the ordered names.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : names_) {
      for (unsigned char ch : n) {
        h ^= ch;
        h *= 0x100000001b3ULL;
      }
      h ^= 0xff;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::vector<std::string> names_;
};

/// Four symbol tables. Input: PAD + 13 words. Output channels: PAD, SOS, EOS
/// followed by the channel's symbols, so symbol k has id k + 3.
struct VocabSet {
  SymbolTable input;
  SymbolTable action;
  SymbolTable aux1;
  SymbolTable aux2;

  static VocabSet standard() {
    VocabSet v;
    std::vector<std::string> in{"<pad>"};
    for (auto w : kWordNames) in.emplace_back(w);
    v.input = SymbolTable(std::move(in));

    std::vector<std::string> act{"<pad>", "<sos>", "<eos>"};
    for (auto a : kActionNames) act.emplace_back(a);
    v.action = SymbolTable(std::move(act));

    const auto bounds = aux_vocab_bounds();
    std::vector<std::string> a1{"<pad>", "<sos>", "<eos>"};
    for (int i = 0; i <= bounds.aux1_max; ++i) a1.push_back(std::to_string(i));
    v.aux1 = SymbolTable(std::move(a1));
    std::vector<std::string> a2{"<pad>", "<sos>", "<eos>"};
    for (int i = 0; i <= bounds.aux2_max; ++i) a2.push_back(std::to_string(i));
    v.aux2 = SymbolTable(std::move(a2));
    return v;
  }
};

inline int word_id(Word w) { return static_cast<int>(w) + 1; }
inline int action_id(Action a) { return static_cast<int>(a) + kNumSpecials; }
inline int aux_id(int label) { return label + kNumSpecials; }

// ---------------------------------------------------------------------------
// Examples

struct LabeledExample {
  std::vector<Word> command;
  std::vector<Action> actions;
  std::vector<int> aux1;
  std::vector<int> aux2;
  bool aux_supervised = true;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class OracleMismatch : public std::runtime_error {
 public:
  explicit OracleMismatch(std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": interpreter output differs from file"),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptySubset : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Official file action tokens.
inline std::string_view file_action_name(Action a) {
  switch (a) {
    case Action::walk: return "I_WALK";
    case Action::look: return "I_LOOK";
    case Action::run: return "I_RUN";
    case Action::jump: return "I_JUMP";
    case Action::lturn: return "I_TURN_LEFT";
    case Action::rturn: return "I_TURN_RIGHT";
  }
  return "";
}

inline std::optional<Action> action_from_file_name(std::string_view s) {
  for (auto a : {Action::walk, Action::look, Action::run, Action::jump, Action::lturn, Action::rturn})
    if (file_action_name(a) == s) return a;
  return std::nullopt;
}

struct RawLine {
  std::vector<Word> command;
  std::vector<Action> actions;
};

/// Parses one "IN: <words> OUT: <actions>" line. Throws FormatError.
inline RawLine parse_scan_line(std::string_view line, std::size_t line_no) {
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  if (line.substr(0, 4) != "IN: ") throw FormatError(line_no, "missing 'IN: ' prefix");
  const auto out_pos = line.find(" OUT: ");
  if (out_pos == std::string_view::npos) throw FormatError(line_no, "missing ' OUT: ' separator");
  RawLine r;
  try {
    r.command = tokenize(line.substr(4, out_pos - 4));
  } catch (const UnknownWord& e) {
    throw FormatError(line_no, e.what());
  }
  if (r.command.empty()) throw FormatError(line_no, "empty command");
  std::istringstream actions{std::string(line.substr(out_pos + 6))};
  std::string tok;
  while (actions >> tok) {
    const auto a = action_from_file_name(tok);
    if (!a) throw FormatError(line_no, "unknown action token '" + tok + "'");
    r.actions.push_back(*a);
  }
  return r;
}

inline LabeledExample label(const CommandAst& ast) {
  LabeledExample ex;
  ex.command = to_tokens(ast);
  ex.actions = interpret(ast);
  auto aux = gen_aux(ast);
  ex.aux1 = std::move(aux.aux1);
  ex.aux2 = std::move(aux.aux2);
  return ex;
}

/// Reads a whole SCAN file; every line is parsed, re-interpreted and labeled.
/// Throws FormatError or OracleMismatch (1-based line numbers).
inline std::vector<LabeledExample> load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    auto raw = parse_scan_line(line, n);
    CommandAst ast;
    try {
      ast = parse(std::span<const Word>(raw.command));
    } catch (const MalformedCommand& e) {
      throw FormatError(n, e.what());
    }
    auto ex = label(ast);
    if (ex.actions != raw.actions) throw OracleMismatch(n);
    out.push_back(std::move(ex));
  }
  return out;
}

struct VerifyReport {
  std::string path;
  std::size_t lines = 0;
  std::size_t format_errors = 0;
  std::size_t oracle_mismatches = 0;
  std::size_t aux_violations = 0;
  std::vector<std::string> first_errors;

  bool ok() const { return lines > 0 && format_errors == 0 && oracle_mismatches == 0 && aux_violations == 0; }
};

/// Checks the aux invariants for one labeled example: equal lengths, id
/// bounds and exact recoverability of the clause shapes from the labels.
inline bool aux_invariants_hold(const LabeledExample& ex) {
  if (ex.aux1.size() != ex.actions.size() || ex.aux2.size() != ex.actions.size()) return false;
  const auto bounds = aux_vocab_bounds();
  for (std::size_t i = 0; i < ex.aux1.size(); ++i) {
    if (ex.aux1[i] < 0 || ex.aux1[i] > bounds.aux1_max) return false;
    if (ex.aux2[i] < 0 || ex.aux2[i] > bounds.aux2_max) return false;
  }
  const auto shapes = decode_structure(ex.aux1, ex.aux2);
  if (!shapes) return false;
  return *shapes == clause_shapes(parse(std::span<const Word>(ex.command)));
}

/// Non-throwing variant of load_file that counts every problem.
inline VerifyReport verify_file(const std::filesystem::path& path) {
  VerifyReport rep;
  rep.path = path.string();
  std::ifstream in(path);
  if (!in) {
    rep.first_errors.push_back("cannot open " + path.string());
    ++rep.format_errors;
    return rep;
  }
  auto note = [&](const std::string& msg) {
    if (rep.first_errors.size() < 10) rep.first_errors.push_back(msg);
  };
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    ++rep.lines;
    try {
      auto raw = parse_scan_line(line, n);
      const auto ast = parse(std::span<const Word>(raw.command));
      const auto ex = label(ast);
      if (ex.actions != raw.actions) {
        ++rep.oracle_mismatches;
        note(OracleMismatch(n).what());
        continue;
      }
      if (!aux_invariants_hold(ex)) {
        ++rep.aux_violations;
        note("line " + std::to_string(n) + ": aux invariant violated");
      }
    } catch (const std::exception& e) {
      ++rep.format_errors;
      note(e.what());
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path test;

  static bool known_name(std::string_view n) {
    return n == "addjump" || n == "length" || n == "mcd1" || n == "mcd2" || n == "mcd3";
  }

  /// <data_dir>/<name>/{train,dev,test}.txt; a missing dev file falls back to test.
  static SplitSpec from_dir(const std::filesystem::path& data_dir, const std::string& name) {
    if (!known_name(name)) throw std::invalid_argument("unknown split: " + name);
    SplitSpec s;
    s.name = name;
    const auto dir = data_dir / name;
    s.train = dir / "train.txt";
    s.test = dir / "test.txt";
    s.dev = std::filesystem::exists(dir / "dev.txt") ? dir / "dev.txt" : s.test;
    for (const auto* p : {&s.train, &s.test})
      if (!std::filesystem::exists(*p)) throw std::runtime_error("missing split file: " + p->string());
    return s;
  }
};

struct SplitData {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> dev;
  std::vector<LabeledExample> test;
};

inline SplitData load_split(const SplitSpec& spec) {
  SplitData d;
  d.train = load_file(spec.train);
  d.dev = load_file(spec.dev);
  d.test = load_file(spec.test);
  return d;
}

inline std::size_t fraction_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
}

/// Shuffles with the portable generator and keeps the first floor(n * fraction).
inline std::vector<LabeledExample> subsample(const std::vector<LabeledExample>& examples, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
  const std::size_t k = fraction_count(examples.size(), fraction);
  if (k == 0) throw EmptySubset("subsample would select 0 examples");
  const auto idx = shuffled_indices(examples.size(), seed);
  std::vector<LabeledExample> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(examples[idx[i]]);
  return out;
}

/// Keeps aux supervision on floor(n * fraction) examples chosen by the
/// portable shuffle; the rest are flagged unsupervised. Order is preserved.
inline std::vector<LabeledExample> mask_aux_supervision(const std::vector<LabeledExample>& examples,
                                                        double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in [0, 1]");
  const std::size_t k = fraction_count(examples.size(), fraction);
  const auto idx = shuffled_indices(examples.size(), seed);
  std::vector<LabeledExample> out = examples;
  for (auto& ex : out) ex.aux_supervised = false;
  for (std::size_t i = 0; i < k; ++i) out[idx[i]].aux_supervised = true;
  return out;
}

/// One record per line: command \t actions \t aux1 \t aux2.
inline void export_augmented(const std::vector<LabeledExample>& examples, std::ostream& os) {
  auto ints = [&](const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ' ';
      os << v[i];
    }
  };
  for (const auto& ex : examples) {
    os << join(ex.command) << '\t' << join(ex.actions) << '\t';
    ints(ex.aux1);
    os << '\t';
    ints(ex.aux2);
    os << '\n';
  }
}

}  // namespace auxseq
