// Flat key=value configuration files covering ModelConfig and TrainConfig.
//
//   # comment
//   layers = 2
//   aux_query_source = L1-Int
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "auxseq/model.hpp"

namespace auxseq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": " + v);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad value for " + key + ": " + v);
}

inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

}  // namespace detail

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_text(std::istream& in) {
  ConfigMap m;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const auto body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    m[detail::trim(std::string_view(body).substr(0, eq))] = detail::trim(std::string_view(body).substr(eq + 1));
  }
  return m;
}

inline ConfigMap read_config_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file " + p.string());
  return parse_config_text(in);
}

/// Applies recognized keys; throws ConfigError on unknown keys or bad values.
template <class TrainCfg>
void apply_config(const ConfigMap& m, ModelConfig& model, TrainCfg& train) {
  using detail::parse_bool;
  using detail::parse_number;
  for (const auto& [k, v] : m) {
    if (k == "layers") model.layers = parse_number<int>(k, v);
    else if (k == "heads") model.heads = parse_number<int>(k, v);
    else if (k == "head_dim") model.head_dim = parse_number<int>(k, v);
    else if (k == "ffn_dim") model.ffn_dim = parse_number<int>(k, v);
    else if (k == "max_len") model.max_len = parse_number<int>(k, v);
    else if (k == "aux_query_source") {
      const auto q = query_source_from_string(v);
      if (!q) throw ConfigError("bad value for " + k + ": " + v);
      model.aux_query = *q;
    } else if (k == "aux_key_source") {
      const auto s = key_source_from_string(v);
      if (!s) throw ConfigError("bad value for " + k + ": " + v);
      model.aux_key = *s;
    } else if (k == "aux_value_source") {
      const auto s = value_source_from_string(v);
      if (!s) throw ConfigError("bad value for " + k + ": " + v);
      model.aux_value = *s;
    } else if (k == "embed_noise_sigma") model.embed_noise_sigma = parse_number<double>(k, v);
    else if (k == "dropout_rate") model.dropout = parse_number<double>(k, v);
    else if (k == "feed_aux") model.feed_aux = parse_bool(k, v);
    else if (k == "lr") train.lr = parse_number<double>(k, v);
    else if (k == "beta1") train.beta1 = parse_number<double>(k, v);
    else if (k == "beta2") train.beta2 = parse_number<double>(k, v);
    else if (k == "adam_eps") train.adam_eps = parse_number<double>(k, v);
    else if (k == "batch_size") train.batch_size = parse_number<int>(k, v);
    else if (k == "max_steps") train.max_steps = parse_number<int>(k, v);
    else if (k == "eval_every") train.eval_every = parse_number<int>(k, v);
    else if (k == "log_every") train.log_every = parse_number<int>(k, v);
    else if (k == "seed") train.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "fraction_train") train.fraction_train = parse_number<double>(k, v);
    else if (k == "fraction_aux") train.fraction_aux = parse_number<double>(k, v);
    else if (k == "grad_clip") train.grad_clip = parse_number<double>(k, v);
    else if (k == "l2_coeff") train.l2_coeff = parse_number<double>(k, v);
    else if (k == "early_stop_acc") {
      if (v == "none") train.early_stop_acc.reset();
      else train.early_stop_acc = parse_number<double>(k, v);
    } else if (k == "eval_limit") train.eval_limit = parse_number<std::size_t>(k, v);
    else if (k == "record_wall_time") train.record_wall_time = parse_bool(k, v);
    else throw ConfigError("unknown config key: " + k);
  }
  validate(model);
}

/// Every field, in a form `apply_config` reads back exactly.
template <class TrainCfg>
std::string config_text(const ModelConfig& model, const TrainCfg& train) {
  using detail::format_double;
  std::ostringstream os;
  os << "layers = " << model.layers << '\n'
     << "heads = " << model.heads << '\n'
     << "head_dim = " << model.head_dim << '\n'
     << "ffn_dim = " << model.ffn_dim << '\n'
     << "max_len = " << model.max_len << '\n'
     << "aux_query_source = " << to_string(model.aux_query) << '\n'
     << "aux_key_source = " << to_string(model.aux_key) << '\n'
     << "aux_value_source = " << to_string(model.aux_value) << '\n'
     << "embed_noise_sigma = " << format_double(model.embed_noise_sigma) << '\n'
     << "dropout_rate = " << format_double(model.dropout) << '\n'
     << "feed_aux = " << (model.feed_aux ? "true" : "false") << '\n'
     << "lr = " << format_double(train.lr) << '\n'
     << "beta1 = " << format_double(train.beta1) << '\n'
     << "beta2 = " << format_double(train.beta2) << '\n'
     << "adam_eps = " << format_double(train.adam_eps) << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "max_steps = " << train.max_steps << '\n'
     << "eval_every = " << train.eval_every << '\n'
     << "log_every = " << train.log_every << '\n'
     << "seed = " << train.seed << '\n'
     << "fraction_train = " << format_double(train.fraction_train) << '\n'
     << "fraction_aux = " << format_double(train.fraction_aux) << '\n'
     << "grad_clip = " << format_double(train.grad_clip) << '\n'
     << "l2_coeff = " << format_double(train.l2_coeff) << '\n'
     << "early_stop_acc = " << (train.early_stop_acc ? format_double(*train.early_stop_acc) : "none") << '\n'
     << "eval_limit = " << train.eval_limit << '\n'
     << "record_wall_time = " << (train.record_wall_time ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace auxseq
