// Checkpoint directories: manifest.json (config, vocab hashes, tensor table)
// and params.bin (little-endian IEEE-754 float32, tensors back to back).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxseq/data.hpp"
#include "auxseq/model.hpp"
#include <json.hpp>

namespace auxseq {

class DiskFull : public std::runtime_error {
 public:
  explicit DiskFull(const std::filesystem::path& p) : std::runtime_error("write failed: " + p.string()) {}
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "auxseq-checkpoint-v1";

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},
          {"max_len", c.max_len},
          {"aux_query_source", to_string(c.aux_query)},
          {"aux_key_source", to_string(c.aux_key)},
          {"aux_value_source", to_string(c.aux_value)},
          {"embed_noise_sigma", c.embed_noise_sigma},
          {"dropout_rate", c.dropout},
          {"feed_aux", c.feed_aux}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.at("layers").template get<int>();
    c.heads = j.at("heads").template get<int>();
    c.head_dim = j.at("head_dim").template get<int>();
    c.ffn_dim = j.at("ffn_dim").template get<int>();
    c.max_len = j.at("max_len").template get<int>();
    const auto q = query_source_from_string(j.at("aux_query_source").template get<std::string>());
    const auto k = key_source_from_string(j.at("aux_key_source").template get<std::string>());
    const auto v = value_source_from_string(j.at("aux_value_source").template get<std::string>());
    if (!q || !k || !v) throw CheckpointError("bad aux source in manifest");
    c.aux_query = *q;
    c.aux_key = *k;
    c.aux_value = *v;
    c.embed_noise_sigma = j.at("embed_noise_sigma").template get<double>();
    c.dropout = j.at("dropout_rate").template get<double>();
    c.feed_aux = j.at("feed_aux").template get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config in manifest: ") + e.what());
  }
  validate(c);
  return c;
}

template <class S>
void save_checkpoint(const std::filesystem::path& dir, const AuxTransformer<S>& model, int step,
                     const VocabSet& vocab = VocabSet::standard()) {
  std::filesystem::create_directories(dir);
  auto& params = const_cast<Parameters<S>&>(model.params());
  nlohmann::ordered_json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = "float32";
  manifest["byte_order"] = "little";
  manifest["step"] = step;
  manifest["model"] = to_json(model.config());
  manifest["vocab"] = {{"input", {{"size", vocab.input.size()}, {"hash", vocab.input.hash()}}},
                       {"action", {{"size", vocab.action.size()}, {"hash", vocab.action.hash()}}},
                       {"aux1", {{"size", vocab.aux1.size()}, {"hash", vocab.aux1.hash()}}},
                       {"aux2", {{"size", vocab.aux2.size()}, {"hash", vocab.aux2.hash()}}}};
  auto tensors = nlohmann::ordered_json::array();
  std::vector<char> bytes;
  for (auto& t : params.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", {t.value->rows(), t.value->cols()}}, {"offset", bytes.size()}});
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(t.value->data()[i]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
    }
  }
  manifest["tensors"] = tensors;
  {
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    bin.flush();
    if (!bin) throw DiskFull(dir / "params.bin");
  }
  std::ofstream man(dir / "manifest.json", std::ios::trunc);
  man << manifest.dump(2) << '\n';
  man.flush();
  if (!man) throw DiskFull(dir / "manifest.json");
}

template <class S>
struct LoadedCheckpoint {
  AuxTransformer<S> model;
  int step;
};

template <class S = float>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& dir, const VocabSet& vocab = VocabSet::standard()) {
  std::ifstream man(dir / "manifest.json");
  if (!man) throw CheckpointError("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    man >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("unreadable manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) throw CheckpointError("unknown checkpoint format");
  if (manifest.value("dtype", "") != "float32" || manifest.value("byte_order", "") != "little")
    throw CheckpointError("unsupported dtype or byte order");
  const auto cfg = model_config_from_json(manifest.at("model"));
  const std::pair<const char*, const SymbolTable*> tables[] = {
      {"input", &vocab.input}, {"action", &vocab.action}, {"aux1", &vocab.aux1}, {"aux2", &vocab.aux2}};
  for (const auto& [name, table] : tables) {
    const auto& v = manifest.at("vocab").at(name);
    if (v.at("size").template get<int>() != table->size() || v.at("hash").template get<std::uint64_t>() != table->hash())
      throw CheckpointError(std::string("vocabulary mismatch: ") + name);
  }

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw CheckpointError("missing " + (dir / "params.bin").string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  auto params = Parameters<S>::zeros(cfg, VocabSizes::of(vocab));
  auto tensors = params.tensors();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != tensors.size()) throw CheckpointError("tensor count does not match the model config");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = entries[i];
    Mat<S>& m = *tensors[i].value;
    if (e.at("name").template get<std::string>() != tensors[i].name) throw CheckpointError("unexpected tensor " + e.at("name").dump());
    if (e.at("shape")[0].template get<Eigen::Index>() != m.rows() || e.at("shape")[1].template get<Eigen::Index>() != m.cols())
      throw CheckpointError("shape mismatch for " + tensors[i].name);
    const auto offset = e.at("offset").template get<std::size_t>();
    if (offset + 4 * static_cast<std::size_t>(m.size()) > bytes.size())
      throw CheckpointError("params.bin is truncated at " + tensors[i].name);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 4 * static_cast<std::size_t>(k) + static_cast<std::size_t>(b)]))
             << (8 * b);
      m.data()[k] = static_cast<S>(std::bit_cast<float>(u));
    }
  }
  if (!all_finite(params)) throw CheckpointError("non-finite parameter values");
  return {AuxTransformer<S>(cfg, VocabSizes::of(vocab), std::move(params)), manifest.value("step", 0)};
}

}  // namespace auxseq
