// Dual-embedding Transformer that predicts the action sequence and both
// auxiliary sequences jointly.
//
// Input words get two embeddings: a functional one (f) that feeds the encoder,
// and a primitive one (p) that only ever appears as attention values. The
// action head attends from the decoder output z onto the encoder states c and
// averages p; the auxiliary head attends from a configurable decoder vector
// (first-layer intermediate, first-layer output, or final output) with
// configurable key/value sources and feeds two separate projections.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auxseq/data.hpp"
#include "auxseq/nn.hpp"
#include "auxseq/rng.hpp"

namespace auxseq {

enum class QuerySource { l1_int, l1_out, l2_out };
enum class KeySource { f, c };
enum class ValueSource { f, c, p };

inline std::string to_string(QuerySource q) {
  switch (q) {
    case QuerySource::l1_int: return "L1-Int";
    case QuerySource::l1_out: return "L1-Out";
    case QuerySource::l2_out: return "L2-Out";
  }
  return "?";
}
inline std::string to_string(KeySource k) { return k == KeySource::f ? "f" : "c"; }
inline std::string to_string(ValueSource v) {
  return v == ValueSource::f ? "f" : v == ValueSource::c ? "c" : "p";
}

inline std::optional<QuerySource> query_source_from_string(std::string_view s) {
  if (s == "L1-Int" || s == "l1_int") return QuerySource::l1_int;
  if (s == "L1-Out" || s == "l1_out") return QuerySource::l1_out;
  if (s == "L2-Out" || s == "l2_out") return QuerySource::l2_out;
  return std::nullopt;
}
inline std::optional<KeySource> key_source_from_string(std::string_view s) {
  if (s == "f") return KeySource::f;
  if (s == "c") return KeySource::c;
  return std::nullopt;
}
inline std::optional<ValueSource> value_source_from_string(std::string_view s) {
  if (s == "f") return ValueSource::f;
  if (s == "c") return ValueSource::c;
  if (s == "p") return ValueSource::p;
  return std::nullopt;
}

class InvalidCombo : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int layers = 2;
  int heads = 2;
  int head_dim = 64;
  int ffn_dim = 256;
  int max_len = 60;  // decoding limit (SCAN max 48 actions + EOS)
  QuerySource aux_query = QuerySource::l1_int;
  KeySource aux_key = KeySource::f;
  ValueSource aux_value = ValueSource::c;
  double embed_noise_sigma = 0.1;
  double dropout = 0.1;
  bool feed_aux = true;  // greedy decoding feeds predicted aux ids back; otherwise SOS

  int width() const { return heads * head_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Supported (key, value) pairs for the auxiliary head.
inline bool supported_aux_combo(KeySource k, ValueSource v) {
  return (k == KeySource::f && (v == ValueSource::c || v == ValueSource::f)) ||
         (k == KeySource::c && (v == ValueSource::c || v == ValueSource::p));
}

/// The (key, value) rows of the ablation grid, in table order.
inline std::vector<std::pair<KeySource, ValueSource>> supported_aux_pairs() {
  return {{KeySource::f, ValueSource::c}, {KeySource::f, ValueSource::f}, {KeySource::c, ValueSource::c},
          {KeySource::c, ValueSource::p}};
}

inline void validate(const ModelConfig& cfg) {
  if (cfg.layers < 1 || cfg.heads < 1 || cfg.head_dim < 1 || cfg.ffn_dim < 1)
    throw std::invalid_argument("model dimensions must be positive");
  if (cfg.max_len < 1) throw std::invalid_argument("max_len must be positive");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (cfg.embed_noise_sigma < 0.0) throw std::invalid_argument("embed_noise_sigma must be >= 0");
  if (!supported_aux_combo(cfg.aux_key, cfg.aux_value))
    throw InvalidCombo("unsupported aux key/value combination (" + to_string(cfg.aux_key) + ", " +
                       to_string(cfg.aux_value) + ")");
}

struct VocabSizes {
  int input = 0;
  int action = 0;
  int aux1 = 0;
  int aux2 = 0;

  static VocabSizes of(const VocabSet& v) { return {v.input.size(), v.action.size(), v.aux1.size(), v.aux2.size()}; }
  friend bool operator==(const VocabSizes&, const VocabSizes&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

template <class S>
struct EncoderLayer {
  Attention<S> self_attn;
  LayerNorm<S> norm1;
  FeedForward<S> ffn;
  LayerNorm<S> norm2;
};

template <class S>
struct DecoderLayer {
  Attention<S> self_attn;
  LayerNorm<S> norm1;
  Attention<S> cross_attn;
  LayerNorm<S> norm2;
  FeedForward<S> ffn;
  LayerNorm<S> norm3;
};

template <class S>
struct NamedTensor {
  std::string name;
  Mat<S>* value;
};

template <class S>
struct Parameters {
  Mat<S> embed_func;  // E_f
  Mat<S> embed_prim;  // E_p
  Mat<S> embed_action;
  Mat<S> embed_aux1;
  Mat<S> embed_aux2;
  std::vector<EncoderLayer<S>> encoder;
  std::vector<DecoderLayer<S>> decoder;
  Attention<S> action_attn;
  Linear<S> action_out;
  Attention<S> aux_attn;
  Linear<S> aux1_out;
  Linear<S> aux2_out;

  /// Every trainable array with a stable name, in a fixed order.
  std::vector<NamedTensor<S>> tensors() {
    std::vector<NamedTensor<S>> t;
    auto lin = [&](const std::string& n, Linear<S>& l) {
      t.push_back({n + ".w", &l.w});
      t.push_back({n + ".b", &l.b});
    };
    auto ln = [&](const std::string& n, LayerNorm<S>& l) {
      t.push_back({n + ".gamma", &l.gamma});
      t.push_back({n + ".beta", &l.beta});
    };
    auto att = [&](const std::string& n, Attention<S>& a) {
      lin(n + ".q", a.q);
      lin(n + ".k", a.k);
      lin(n + ".v", a.v);
      lin(n + ".o", a.o);
    };
    auto ffn = [&](const std::string& n, FeedForward<S>& f) {
      lin(n + ".in", f.in);
      lin(n + ".out", f.out);
    };
    t.push_back({"embed_func", &embed_func});
    t.push_back({"embed_prim", &embed_prim});
    t.push_back({"embed_action", &embed_action});
    t.push_back({"embed_aux1", &embed_aux1});
    t.push_back({"embed_aux2", &embed_aux2});
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const auto n = "encoder." + std::to_string(i);
      att(n + ".self_attn", encoder[i].self_attn);
      ln(n + ".norm1", encoder[i].norm1);
      ffn(n + ".ffn", encoder[i].ffn);
      ln(n + ".norm2", encoder[i].norm2);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      const auto n = "decoder." + std::to_string(i);
      att(n + ".self_attn", decoder[i].self_attn);
      ln(n + ".norm1", decoder[i].norm1);
      att(n + ".cross_attn", decoder[i].cross_attn);
      ln(n + ".norm2", decoder[i].norm2);
      ffn(n + ".ffn", decoder[i].ffn);
      ln(n + ".norm3", decoder[i].norm3);
    }
    att("action_attn", action_attn);
    lin("action_out", action_out);
    att("aux_attn", aux_attn);
    lin("aux1_out", aux1_out);
    lin("aux2_out", aux2_out);
    return t;
  }

  std::size_t num_values() {
    std::size_t n = 0;
    for (auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
  }

  void set_zero() {
    for (auto& t : tensors()) t.value->setZero();
  }

  template <class T>
  Parameters<T> cast() const {
    Parameters<T> out = Parameters<T>::shaped_like(*this);
    auto src = const_cast<Parameters*>(this)->tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<T>();
    return out;
  }

  template <class U>
  static Parameters shaped_like(const Parameters<U>& other) {
    Parameters p;
    p.encoder.resize(other.encoder.size());
    p.decoder.resize(other.decoder.size());
    auto src = const_cast<Parameters<U>&>(other).tensors();
    auto dst = p.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = Mat<S>::Zero(src[i].value->rows(), src[i].value->cols());
    return p;
  }

  /// Shapes for a configuration; all zeros except layer-norm gains.
  static Parameters zeros(const ModelConfig& cfg, const VocabSizes& v) {
    const int d = cfg.width();
    auto lin = [](Linear<S>& l, int out, int in) {
      l.w = Mat<S>::Zero(out, in);
      l.b = Mat<S>::Zero(1, out);
    };
    auto ln = [&](LayerNorm<S>& l) {
      l.gamma = Mat<S>::Ones(1, d);
      l.beta = Mat<S>::Zero(1, d);
    };
    auto att = [&](Attention<S>& a) {
      lin(a.q, d, d);
      lin(a.k, d, d);
      lin(a.v, d, d);
      lin(a.o, d, d);
    };
    auto ffn = [&](FeedForward<S>& f) {
      lin(f.in, cfg.ffn_dim, d);
      lin(f.out, d, cfg.ffn_dim);
    };
    Parameters p;
    p.embed_func = Mat<S>::Zero(v.input, d);
    p.embed_prim = Mat<S>::Zero(v.input, d);
    p.embed_action = Mat<S>::Zero(v.action, d);
    p.embed_aux1 = Mat<S>::Zero(v.aux1, d);
    p.embed_aux2 = Mat<S>::Zero(v.aux2, d);
    p.encoder.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& l : p.encoder) {
      att(l.self_attn);
      ln(l.norm1);
      ffn(l.ffn);
      ln(l.norm2);
    }
    p.decoder.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& l : p.decoder) {
      att(l.self_attn);
      ln(l.norm1);
      att(l.cross_attn);
      ln(l.norm2);
      ffn(l.ffn);
      ln(l.norm3);
    }
    att(p.action_attn);
    lin(p.action_out, v.action, d);
    att(p.aux_attn);
    lin(p.aux1_out, v.aux1, d);
    lin(p.aux2_out, v.aux2, d);
    return p;
  }

  /// Embeddings ~ N(0, 1); weight matrices Xavier-uniform; biases 0; norms identity.
  static Parameters initialized(const ModelConfig& cfg, const VocabSizes& v, std::uint64_t seed) {
    Parameters p = zeros(cfg, v);
    SplitMix64 rng(derive_seed(seed, 0x1417));
    for (auto& t : p.tensors()) {
      const auto& n = t.name;
      const bool is_embed = n.rfind("embed_", 0) == 0;
      const bool is_weight = n.size() > 2 && n.compare(n.size() - 2, 2, ".w") == 0;
      Mat<S>& m = *t.value;
      if (is_embed) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
      } else if (is_weight) {
        const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i)
          m.data()[i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * limit);
      }
    }
    return p;
  }
};

template <class S>
bool all_finite(Parameters<S>& p) {
  for (auto& t : p.tensors())
    if (!t.value->allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Forward state

/// Per-position decoder vectors that may serve as the auxiliary query.
template <class S>
struct DecoderTrace {
  Mat<S> l1_int;  // first layer, after self-attention + norm (before cross-attention)
  Mat<S> l1_out;  // first layer output
  Mat<S> l2_out;  // final decoder output z

  const Mat<S>& select(QuerySource q) const {
    switch (q) {
      case QuerySource::l1_int: return l1_int;
      case QuerySource::l1_out: return l1_out;
      case QuerySource::l2_out: return l2_out;
    }
    return l2_out;
  }
};

template <class S>
struct InputEmbedding {
  Mat<S> f;
  Mat<S> p;
};

/// Training-time randomness. A null rng means evaluation mode.
struct ForwardContext {
  SplitMix64* rng = nullptr;
  double dropout = 0.0;
  double embed_noise_sigma = 0.0;

  bool training() const { return rng != nullptr; }
};

template <class S>
struct EncoderLayerCache {
  AttentionCache<S> attn;
  Mat<S> mask1, mask2;
  LayerNormCache<S> norm1, norm2;
  FeedForwardCache<S> ffn;
};

template <class S>
struct DecoderLayerCache {
  AttentionCache<S> self_attn, cross_attn;
  Mat<S> mask1, mask2, mask3;
  LayerNormCache<S> norm1, norm2, norm3;
  FeedForwardCache<S> ffn;
};

template <class S>
struct ForwardCache {
  std::vector<int> input_ids;
  std::vector<int> act_in, aux1_in, aux2_in;
  InputEmbedding<S> emb;
  std::vector<EncoderLayerCache<S>> enc;
  Mat<S> c;
  std::vector<DecoderLayerCache<S>> dec;
  DecoderTrace<S> trace;
  AttentionCache<S> action_attn, aux_attn;
  Mat<S> action_ctx, aux_ctx;
  Mat<S> action_logits, aux1_logits, aux2_logits;
};

/// Teacher-forcing decoder inputs and next-token targets for one example.
struct ExampleIds {
  std::vector<int> input;
  std::vector<int> act_in, aux1_in, aux2_in;
  std::vector<int> act_out, aux1_out, aux2_out;
  bool aux_supervised = true;
};

inline ExampleIds example_ids(const LabeledExample& ex) {
  ExampleIds ids;
  ids.aux_supervised = ex.aux_supervised;
  for (auto w : ex.command) ids.input.push_back(word_id(w));
  const std::size_t t = ex.actions.size();
  ids.act_in.push_back(kSos);
  ids.aux1_in.push_back(kSos);
  ids.aux2_in.push_back(kSos);
  for (std::size_t i = 0; i < t; ++i) {
    const int a = action_id(ex.actions[i]);
    const int u = aux_id(ex.aux1[i]);
    const int v = aux_id(ex.aux2[i]);
    ids.act_out.push_back(a);
    ids.aux1_out.push_back(u);
    ids.aux2_out.push_back(v);
    ids.act_in.push_back(a);
    ids.aux1_in.push_back(ex.aux_supervised ? u : kSos);
    ids.aux2_in.push_back(ex.aux_supervised ? v : kSos);
  }
  ids.act_out.push_back(kEos);
  ids.aux1_out.push_back(kEos);
  ids.aux2_out.push_back(kEos);
  return ids;
}

struct Prediction {
  std::vector<int> actions;  // vocab ids, EOS excluded
  std::vector<int> aux1;
  std::vector<int> aux2;
  bool truncated = false;  // max_len reached without EOS
};

/// Per-example loss pieces; sums over positions (not yet normalized).
struct LossSums {
  double action = 0;
  double aux1 = 0;
  double aux2 = 0;
  std::size_t action_tokens = 0;
  std::size_t aux_tokens = 0;
  bool action_exact = false;  // teacher-forced argmax matches every target
  bool aux1_exact = false;
  bool aux2_exact = false;
};

// ---------------------------------------------------------------------------

template <class S>
class AuxTransformer {
 public:
  AuxTransformer(ModelConfig cfg, VocabSizes vocab, Parameters<S> params)
      : cfg_(cfg), vocab_(vocab), params_(std::move(params)) {
    validate(cfg_);
  }

  static AuxTransformer create(const ModelConfig& cfg, const VocabSizes& vocab, std::uint64_t seed) {
    validate(cfg);
    return AuxTransformer(cfg, vocab, Parameters<S>::initialized(cfg, vocab, seed));
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const VocabSizes& vocab() const { return vocab_; }
  const Parameters<S>& params() const { return params_; }
  Parameters<S>& params() { return params_; }

  // ----- individual stages (evaluation mode unless a context is given) -----

  InputEmbedding<S> embed_input(std::span<const int> ids, const ForwardContext& ctx = {}) const {
    const int d = cfg_.width();
    InputEmbedding<S> e{Mat<S>(static_cast<Eigen::Index>(ids.size()), d),
                        Mat<S>(static_cast<Eigen::Index>(ids.size()), d)};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      e.f.row(static_cast<Eigen::Index>(i)) = params_.embed_func.row(ids[i]);
      e.p.row(static_cast<Eigen::Index>(i)) = params_.embed_prim.row(ids[i]);
    }
    if (ctx.training() && ctx.embed_noise_sigma > 0.0) {
      for (Eigen::Index i = 0; i < e.f.size(); ++i)
        e.f.data()[i] += static_cast<S>(ctx.embed_noise_sigma * ctx.rng->normal());
      for (Eigen::Index i = 0; i < e.p.size(); ++i)
        e.p.data()[i] += static_cast<S>(ctx.embed_noise_sigma * ctx.rng->normal());
    }
    return e;
  }

  Mat<S> encode(const Mat<S>& f, const ForwardContext& ctx = {}, std::vector<EncoderLayerCache<S>>* caches = nullptr) const {
    Mat<S> x = f + sinusoidal_positions<S>(f.rows(), f.cols());
    if (caches) caches->assign(params_.encoder.size(), {});
    for (std::size_t l = 0; l < params_.encoder.size(); ++l) {
      const auto& L = params_.encoder[l];
      EncoderLayerCache<S>* c = caches ? &(*caches)[l] : nullptr;
      Mat<S> a = attention_forward(L.self_attn, cfg_.heads, x, x, x, false, c ? &c->attn : nullptr);
      Mat<S> m1 = dropout_mask<S>(a.rows(), a.cols(), cfg_.dropout, ctx.rng);
      Mat<S> h = layer_norm_forward(L.norm1, Mat<S>(x + apply_mask(a, m1)), c ? &c->norm1 : nullptr);
      Mat<S> ff = feed_forward_forward(L.ffn, h, c ? &c->ffn : nullptr);
      Mat<S> m2 = dropout_mask<S>(ff.rows(), ff.cols(), cfg_.dropout, ctx.rng);
      x = layer_norm_forward(L.norm2, Mat<S>(h + apply_mask(ff, m2)), c ? &c->norm2 : nullptr);
      if (c) {
        c->mask1 = std::move(m1);
        c->mask2 = std::move(m2);
      }
    }
    return x;
  }

  Mat<S> decoder_inputs(std::span<const int> act, std::span<const int> aux1, std::span<const int> aux2) const {
    if (act.size() != aux1.size() || act.size() != aux2.size())
      throw LengthMismatch("decoder channels must have equal length");
    const auto n = static_cast<Eigen::Index>(act.size());
    Mat<S> y = sinusoidal_positions<S>(n, cfg_.width());
    for (Eigen::Index t = 0; t < n; ++t) {
      const auto i = static_cast<std::size_t>(t);
      y.row(t) += params_.embed_action.row(act[i]) + params_.embed_aux1.row(aux1[i]) + params_.embed_aux2.row(aux2[i]);
    }
    return y;
  }

  DecoderTrace<S> decode(std::span<const int> act, std::span<const int> aux1, std::span<const int> aux2, const Mat<S>& c,
                         const ForwardContext& ctx = {}, std::vector<DecoderLayerCache<S>>* caches = nullptr) const {
    Mat<S> y = decoder_inputs(act, aux1, aux2);
    DecoderTrace<S> trace;
    if (caches) caches->assign(params_.decoder.size(), {});
    for (std::size_t l = 0; l < params_.decoder.size(); ++l) {
      const auto& L = params_.decoder[l];
      DecoderLayerCache<S>* k = caches ? &(*caches)[l] : nullptr;
      Mat<S> s = attention_forward(L.self_attn, cfg_.heads, y, y, y, true, k ? &k->self_attn : nullptr);
      Mat<S> m1 = dropout_mask<S>(s.rows(), s.cols(), cfg_.dropout, ctx.rng);
      Mat<S> h = layer_norm_forward(L.norm1, Mat<S>(y + apply_mask(s, m1)), k ? &k->norm1 : nullptr);
      Mat<S> x = attention_forward(L.cross_attn, cfg_.heads, h, c, c, false, k ? &k->cross_attn : nullptr);
      Mat<S> m2 = dropout_mask<S>(x.rows(), x.cols(), cfg_.dropout, ctx.rng);
      Mat<S> h2 = layer_norm_forward(L.norm2, Mat<S>(h + apply_mask(x, m2)), k ? &k->norm2 : nullptr);
      Mat<S> ff = feed_forward_forward(L.ffn, h2, k ? &k->ffn : nullptr);
      Mat<S> m3 = dropout_mask<S>(ff.rows(), ff.cols(), cfg_.dropout, ctx.rng);
      Mat<S> out = layer_norm_forward(L.norm3, Mat<S>(h2 + apply_mask(ff, m3)), k ? &k->norm3 : nullptr);
      if (l == 0) {
        trace.l1_int = h;
        trace.l1_out = out;
      }
      if (k) {
        k->mask1 = std::move(m1);
        k->mask2 = std::move(m2);
        k->mask3 = std::move(m3);
      }
      y = std::move(out);
    }
    trace.l2_out = std::move(y);
    return trace;
  }

  Mat<S> action_head(const Mat<S>& z, const Mat<S>& c, const Mat<S>& p, AttentionCache<S>* cache = nullptr,
                     Mat<S>* ctx_out = nullptr) const {
    Mat<S> o = attention_forward(params_.action_attn, cfg_.heads, z, c, p, false, cache);
    Mat<S> logits = linear_forward(params_.action_out, o);
    if (ctx_out) *ctx_out = std::move(o);
    return logits;
  }

  const Mat<S>& aux_key(const InputEmbedding<S>& e, const Mat<S>& c) const {
    return cfg_.aux_key == KeySource::f ? e.f : c;
  }
  const Mat<S>& aux_value(const InputEmbedding<S>& e, const Mat<S>& c) const {
    switch (cfg_.aux_value) {
      case ValueSource::f: return e.f;
      case ValueSource::c: return c;
      case ValueSource::p: return e.p;
    }
    return c;
  }

  std::pair<Mat<S>, Mat<S>> aux_head(const DecoderTrace<S>& trace, const InputEmbedding<S>& e, const Mat<S>& c,
                                     AttentionCache<S>* cache = nullptr, Mat<S>* ctx_out = nullptr) const {
    validate(cfg_);
    Mat<S> o = attention_forward(params_.aux_attn, cfg_.heads, trace.select(cfg_.aux_query), aux_key(e, c),
                                 aux_value(e, c), false, cache);
    auto out = std::make_pair(linear_forward(params_.aux1_out, o), linear_forward(params_.aux2_out, o));
    if (ctx_out) *ctx_out = std::move(o);
    return out;
  }

  /// 0.01-weighted mean squared entry of E_f plus that of E_p.
  double regularization(double coeff) const {
    const auto nf = static_cast<double>(params_.embed_func.size());
    const auto np = static_cast<double>(params_.embed_prim.size());
    return coeff * (static_cast<double>(params_.embed_func.squaredNorm()) / nf +
                    static_cast<double>(params_.embed_prim.squaredNorm()) / np);
  }

  void add_regularization_grad(Parameters<S>& g, double coeff) const {
    g.embed_func += params_.embed_func * static_cast<S>(2.0 * coeff / static_cast<double>(params_.embed_func.size()));
    g.embed_prim += params_.embed_prim * static_cast<S>(2.0 * coeff / static_cast<double>(params_.embed_prim.size()));
  }

  // ----- full teacher-forced pass -----

  void forward(const ExampleIds& ids, const ForwardContext& ctx, ForwardCache<S>& fc) const {
    fc.input_ids = ids.input;
    fc.act_in = ids.act_in;
    fc.aux1_in = ids.aux1_in;
    fc.aux2_in = ids.aux2_in;
    fc.emb = embed_input(ids.input, ctx);
    fc.c = encode(fc.emb.f, ctx, &fc.enc);
    fc.trace = decode(ids.act_in, ids.aux1_in, ids.aux2_in, fc.c, ctx, &fc.dec);
    fc.action_logits = action_head(fc.trace.l2_out, fc.c, fc.emb.p, &fc.action_attn, &fc.action_ctx);
    auto [l1, l2] = aux_head(fc.trace, fc.emb, fc.c, &fc.aux_attn, &fc.aux_ctx);
    fc.aux1_logits = std::move(l1);
    fc.aux2_logits = std::move(l2);
  }

  /// Cross-entropy sums for one example; if `grads` is non-null, accumulates
  /// the gradient of action_scale * action_sum + aux_scale * (aux1_sum + aux2_sum).
  LossSums forward_backward(const ExampleIds& ids, const ForwardContext& ctx, S action_scale, S aux_scale,
                            Parameters<S>* grads) const {
    ForwardCache<S> fc;
    forward(ids, ctx, fc);
    LossSums ls;
    Mat<S> d_act, d_aux1, d_aux2;
    ls.action = softmax_cross_entropy(fc.action_logits, ids.act_out, action_scale, grads ? &d_act : nullptr);
    ls.action_tokens = ids.act_out.size();
    ls.action_exact = rows_match(fc.action_logits, ids.act_out);
    if (ids.aux_supervised) {
      ls.aux1 = softmax_cross_entropy(fc.aux1_logits, ids.aux1_out, aux_scale, grads ? &d_aux1 : nullptr);
      ls.aux2 = softmax_cross_entropy(fc.aux2_logits, ids.aux2_out, aux_scale, grads ? &d_aux2 : nullptr);
      ls.aux_tokens = ids.aux1_out.size();
      ls.aux1_exact = rows_match(fc.aux1_logits, ids.aux1_out);
      ls.aux2_exact = rows_match(fc.aux2_logits, ids.aux2_out);
    }
    if (grads) backward(fc, d_act, ids.aux_supervised ? &d_aux1 : nullptr, ids.aux_supervised ? &d_aux2 : nullptr, *grads);
    return ls;
  }

  /// Backpropagates logit gradients through the whole network. Null aux
  /// gradients mean the auxiliary head receives no signal.
  void backward(const ForwardCache<S>& fc, const Mat<S>& d_act, const Mat<S>* d_aux1, const Mat<S>* d_aux2,
                Parameters<S>& g) const {
    const auto& P = params_;
    const int H = cfg_.heads;
    Mat<S> dc = Mat<S>::Zero(fc.c.rows(), fc.c.cols());
    Mat<S> df = Mat<S>::Zero(fc.emb.f.rows(), fc.emb.f.cols());
    Mat<S> dp = Mat<S>::Zero(fc.emb.p.rows(), fc.emb.p.cols());
    Mat<S> dz = Mat<S>::Zero(fc.trace.l2_out.rows(), fc.trace.l2_out.cols());
    Mat<S> dl1_int = Mat<S>::Zero(dz.rows(), dz.cols());
    Mat<S> dl1_out = Mat<S>::Zero(dz.rows(), dz.cols());

    // action head
    {
      const Mat<S> dctx = linear_backward(P.action_out, &g.action_out, fc.action_ctx, d_act);
      const auto ag = attention_backward(P.action_attn, &g.action_attn, H, fc.action_attn, dctx);
      dz += ag.dq_in;
      dc += ag.dk_in;
      dp += ag.dv_in;
    }
    // aux head
    if (d_aux1 && d_aux2) {
      Mat<S> dctx = linear_backward(P.aux1_out, &g.aux1_out, fc.aux_ctx, *d_aux1);
      dctx += linear_backward(P.aux2_out, &g.aux2_out, fc.aux_ctx, *d_aux2);
      const auto ag = attention_backward(P.aux_attn, &g.aux_attn, H, fc.aux_attn, dctx);
      switch (cfg_.aux_query) {
        case QuerySource::l1_int: dl1_int += ag.dq_in; break;
        case QuerySource::l1_out: dl1_out += ag.dq_in; break;
        case QuerySource::l2_out: dz += ag.dq_in; break;
      }
      (cfg_.aux_key == KeySource::f ? df : dc) += ag.dk_in;
      switch (cfg_.aux_value) {
        case ValueSource::f: df += ag.dv_in; break;
        case ValueSource::c: dc += ag.dv_in; break;
        case ValueSource::p: dp += ag.dv_in; break;
      }
    }

    // decoder, top to bottom
    Mat<S> dy = dz;
    for (std::size_t li = P.decoder.size(); li-- > 0;) {
      const auto& L = P.decoder[li];
      auto& G = g.decoder[li];
      const auto& k = fc.dec[li];
      if (li == 0) dy += dl1_out;
      Mat<S> dr3 = layer_norm_backward(L.norm3, &G.norm3, k.norm3, dy);
      Mat<S> dh2 = dr3 + feed_forward_backward(L.ffn, &G.ffn, k.ffn, apply_mask(dr3, k.mask3));
      Mat<S> dr2 = layer_norm_backward(L.norm2, &G.norm2, k.norm2, dh2);
      const auto cg = attention_backward(L.cross_attn, &G.cross_attn, H, k.cross_attn, apply_mask(dr2, k.mask2));
      Mat<S> dh = dr2 + cg.dq_in;
      dc += cg.dk_in + cg.dv_in;
      if (li == 0) dh += dl1_int;
      Mat<S> dr1 = layer_norm_backward(L.norm1, &G.norm1, k.norm1, dh);
      const auto sg = attention_backward(L.self_attn, &G.self_attn, H, k.self_attn, apply_mask(dr1, k.mask1));
      dy = dr1 + sg.dq_in + sg.dk_in + sg.dv_in;
    }
    for (std::size_t t = 0; t < fc.act_in.size(); ++t) {
      const auto row = dy.row(static_cast<Eigen::Index>(t));
      g.embed_action.row(fc.act_in[t]) += row;
      g.embed_aux1.row(fc.aux1_in[t]) += row;
      g.embed_aux2.row(fc.aux2_in[t]) += row;
    }

    // encoder, top to bottom
    Mat<S> dx = dc;
    for (std::size_t li = P.encoder.size(); li-- > 0;) {
      const auto& L = P.encoder[li];
      auto& G = g.encoder[li];
      const auto& k = fc.enc[li];
      Mat<S> dr2 = layer_norm_backward(L.norm2, &G.norm2, k.norm2, dx);
      Mat<S> dh = dr2 + feed_forward_backward(L.ffn, &G.ffn, k.ffn, apply_mask(dr2, k.mask2));
      Mat<S> dr1 = layer_norm_backward(L.norm1, &G.norm1, k.norm1, dh);
      const auto ag = attention_backward(L.self_attn, &G.self_attn, H, k.attn, apply_mask(dr1, k.mask1));
      dx = dr1 + ag.dq_in + ag.dk_in + ag.dv_in;
    }
    df += dx;  // positional encodings are constant
    for (std::size_t i = 0; i < fc.input_ids.size(); ++i) {
      g.embed_func.row(fc.input_ids[i]) += df.row(static_cast<Eigen::Index>(i));
      g.embed_prim.row(fc.input_ids[i]) += dp.row(static_cast<Eigen::Index>(i));
    }
  }

  // ----- inference -----

  /// Greedy joint decoding with cached self-attention keys/values. Step t
  /// feeds the argmax ids of all three channels from step t-1.
  Prediction greedy_decode(std::span<const int> input_ids, int max_len, DecoderTrace<S>* trace_out = nullptr,
                           std::vector<int>* forced_act = nullptr, std::vector<int>* forced_aux1 = nullptr,
                           std::vector<int>* forced_aux2 = nullptr) const {
    const auto& P = params_;
    const int H = cfg_.heads;
    const int d = cfg_.width();
    const auto emb = embed_input(input_ids);
    const Mat<S> c = encode(emb.f);

    struct LayerState {
      Mat<S> k_self, v_self, k_cross, v_cross;
    };
    std::vector<LayerState> st(P.decoder.size());
    for (std::size_t l = 0; l < P.decoder.size(); ++l) {
      st[l].k_self.resize(0, d);
      st[l].v_self.resize(0, d);
      st[l].k_cross = linear_forward(P.decoder[l].cross_attn.k, c);
      st[l].v_cross = linear_forward(P.decoder[l].cross_attn.v, c);
    }
    const Mat<S> act_k = linear_forward(P.action_attn.k, c);
    const Mat<S> act_v = linear_forward(P.action_attn.v, emb.p);
    const Mat<S> aux_k = linear_forward(P.aux_attn.k, aux_key(emb, c));
    const Mat<S> aux_v = linear_forward(P.aux_attn.v, aux_value(emb, c));
    const auto steps = forced_act ? std::max<std::size_t>(forced_act->size(), static_cast<std::size_t>(max_len) + 1)
                                  : static_cast<std::size_t>(max_len) + 1;
    const Mat<S> pe = sinusoidal_positions<S>(static_cast<Eigen::Index>(steps), d);

    Prediction pred;
    int prev_act = kSos, prev_aux1 = kSos, prev_aux2 = kSos;
    if (trace_out) {
      trace_out->l1_int.resize(0, d);
      trace_out->l1_out.resize(0, d);
      trace_out->l2_out.resize(0, d);
    }
    auto append_row = [](Mat<S>& m, const Mat<S>& row) {
      m.conservativeResize(m.rows() + 1, Eigen::NoChange);
      m.row(m.rows() - 1) = row.row(0);
    };

    for (int t = 0; t <= max_len; ++t) {
      if (forced_act && static_cast<std::size_t>(t) >= forced_act->size()) break;
      if (forced_act) {
        prev_act = (*forced_act)[static_cast<std::size_t>(t)];
        prev_aux1 = (*forced_aux1)[static_cast<std::size_t>(t)];
        prev_aux2 = (*forced_aux2)[static_cast<std::size_t>(t)];
      }
      Mat<S> y = pe.row(t) + P.embed_action.row(prev_act) + P.embed_aux1.row(prev_aux1) + P.embed_aux2.row(prev_aux2);
      Mat<S> l1_int, l1_out;
      for (std::size_t l = 0; l < P.decoder.size(); ++l) {
        const auto& L = P.decoder[l];
        append_row(st[l].k_self, linear_forward(L.self_attn.k, y));
        append_row(st[l].v_self, linear_forward(L.self_attn.v, y));
        const Mat<S> q = linear_forward(L.self_attn.q, y);
        const Mat<S> s = linear_forward(L.self_attn.o, attend<S>(q, st[l].k_self, st[l].v_self, H, false, nullptr));
        const Mat<S> h = layer_norm_forward<S>(L.norm1, y + s, nullptr);
        const Mat<S> qc = linear_forward(L.cross_attn.q, h);
        const Mat<S> x = linear_forward(L.cross_attn.o, attend<S>(qc, st[l].k_cross, st[l].v_cross, H, false, nullptr));
        const Mat<S> h2 = layer_norm_forward<S>(L.norm2, h + x, nullptr);
        const Mat<S> ff = feed_forward_forward<S>(L.ffn, h2, nullptr);
        Mat<S> out = layer_norm_forward<S>(L.norm3, h2 + ff, nullptr);
        if (l == 0) {
          l1_int = h;
          l1_out = out;
        }
        y = std::move(out);
      }
      const Mat<S>& query = cfg_.aux_query == QuerySource::l1_int   ? l1_int
                            : cfg_.aux_query == QuerySource::l1_out ? l1_out
                                                                    : y;
      const Mat<S> a_ctx = linear_forward(
          P.action_attn.o, attend<S>(linear_forward(P.action_attn.q, y), act_k, act_v, H, false, nullptr));
      const Mat<S> act_logits = linear_forward(P.action_out, a_ctx);
      const Mat<S> x_ctx = linear_forward(
          P.aux_attn.o, attend<S>(linear_forward(P.aux_attn.q, query), aux_k, aux_v, H, false, nullptr));
      const Mat<S> aux1_logits = linear_forward(P.aux1_out, x_ctx);
      const Mat<S> aux2_logits = linear_forward(P.aux2_out, x_ctx);
      if (trace_out) {
        append_row(trace_out->l1_int, l1_int);
        append_row(trace_out->l1_out, l1_out);
        append_row(trace_out->l2_out, y);
      }
      if (forced_act) continue;

      prev_act = argmax(act_logits.row(0));
      prev_aux1 = argmax(aux1_logits.row(0));
      prev_aux2 = argmax(aux2_logits.row(0));
      if (prev_act == kEos) return pred;
      if (t == max_len) break;
      pred.actions.push_back(prev_act);
      pred.aux1.push_back(prev_aux1);
      pred.aux2.push_back(prev_aux2);
      if (!cfg_.feed_aux) prev_aux1 = prev_aux2 = kSos;
    }
    pred.truncated = forced_act == nullptr;
    return pred;
  }

 private:
  static bool rows_match(const Mat<S>& logits, const std::vector<int>& targets) {
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
      if (argmax(logits.row(i)) != targets[static_cast<std::size_t>(i)]) return false;
    return true;
  }

  ModelConfig cfg_;
  VocabSizes vocab_;
  Parameters<S> params_;
};

// ---------------------------------------------------------------------------
// Standalone loss over already-computed logits

inline constexpr double kEmbeddingL2 = 0.01;

/// Mean action CE + masked mean CE per aux channel + L2 term on E_f and E_p.
/// Rows of each logits matrix align with the next-token targets.
template <class S>
double sequence_loss(const std::vector<Mat<S>>& action_logits, const std::vector<Mat<S>>& aux1_logits,
                     const std::vector<Mat<S>>& aux2_logits, const std::vector<std::vector<int>>& action_targets,
                     const std::vector<std::vector<int>>& aux1_targets, const std::vector<std::vector<int>>& aux2_targets,
                     const std::vector<bool>& aux_mask, double l2_term) {
  double act = 0, a1 = 0, a2 = 0;
  std::size_t n_act = 0, n_aux = 0;
  for (std::size_t i = 0; i < action_logits.size(); ++i) {
    act += softmax_cross_entropy<S>(action_logits[i], action_targets[i], S(1), nullptr);
    n_act += action_targets[i].size();
    if (aux_mask[i]) {
      a1 += softmax_cross_entropy<S>(aux1_logits[i], aux1_targets[i], S(1), nullptr);
      a2 += softmax_cross_entropy<S>(aux2_logits[i], aux2_targets[i], S(1), nullptr);
      n_aux += aux1_targets[i].size();
    }
  }
  double loss = n_act ? act / static_cast<double>(n_act) : 0.0;
  if (n_aux) loss += (a1 + a2) / static_cast<double>(n_aux);
  return loss + l2_term;
}

// ---------------------------------------------------------------------------
// Batch objective

struct BatchStats {
  double loss = 0;  // including the L2 term
  double action_ce = 0;
  double aux1_ce = 0;
  double aux2_ce = 0;
  double reg = 0;
  std::size_t examples = 0;
  std::size_t action_exact = 0;
  std::size_t aux1_exact = 0;
  std::size_t aux2_exact = 0;
  std::size_t aux_supervised = 0;
};

/// Full objective over a batch. When `grads` is given it receives the exact
/// gradient of `loss`. `step_seed` drives dropout and embedding noise, with an
/// independent stream per example; pass nullopt for evaluation mode.
template <class S>
BatchStats batch_objective(const AuxTransformer<S>& model, std::span<const ExampleIds> batch,
                           std::optional<std::uint64_t> step_seed, Parameters<S>* grads, double l2 = kEmbeddingL2) {
  std::size_t n_act = 0, n_aux = 0;
  for (const auto& ex : batch) {
    n_act += ex.act_out.size();
    if (ex.aux_supervised) n_aux += ex.aux1_out.size();
  }
  const S act_scale = n_act ? S(1) / static_cast<S>(n_act) : S(0);
  const S aux_scale = n_aux ? S(1) / static_cast<S>(n_aux) : S(0);
  BatchStats st;
  st.examples = batch.size();
  double act = 0, a1 = 0, a2 = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::optional<SplitMix64> rng;
    ForwardContext ctx;
    if (step_seed) {
      rng.emplace(derive_seed(*step_seed, i));
      ctx.rng = &*rng;
      ctx.dropout = model.config().dropout;
      ctx.embed_noise_sigma = model.config().embed_noise_sigma;
    }
    const auto ls = model.forward_backward(batch[i], ctx, act_scale, aux_scale, grads);
    act += ls.action;
    a1 += ls.aux1;
    a2 += ls.aux2;
    st.action_exact += ls.action_exact;
    st.aux1_exact += ls.aux1_exact;
    st.aux2_exact += ls.aux2_exact;
    st.aux_supervised += batch[i].aux_supervised;
  }
  st.action_ce = n_act ? act / static_cast<double>(n_act) : 0.0;
  st.aux1_ce = n_aux ? a1 / static_cast<double>(n_aux) : 0.0;
  st.aux2_ce = n_aux ? a2 / static_cast<double>(n_aux) : 0.0;
  st.reg = model.regularization(l2);
  st.loss = st.action_ce + st.aux1_ce + st.aux2_ce + st.reg;
  if (grads) model.add_regularization_grad(*grads, l2);
  return st;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

using GradientFn = std::function<void(const AuxTransformer<double>&, std::span<const ExampleIds>, Parameters<double>&)>;

inline void analytic_gradient(const AuxTransformer<double>& m, std::span<const ExampleIds> batch, Parameters<double>& g) {
  batch_objective<double>(m, batch, std::nullopt, &g);
}

struct GradientCheckResult {
  double max_rel_error = 0;
  std::vector<std::pair<std::string, double>> per_tensor;  // max error per parameter tensor
  std::size_t probes = 0;
  std::size_t zero_probes = 0;  // both gradients below the round-off floor
};

/// Below this magnitude a central difference at eps=1e-5 is round-off noise
/// (|loss| * 2^-52 / eps). Attention key biases always land here: a shift
/// shared by a whole score row cancels in the softmax.
inline constexpr double kGradientZeroFloor = 1e-9;

/// Central differences against the analytic gradient of the full batch
/// objective (eval mode). In each tensor the `probes_per_tensor` entries with
/// the largest analytic magnitude are probed.
inline GradientCheckResult gradient_check(AuxTransformer<double> model, std::span<const ExampleIds> batch,
                                          double eps = 1e-5, int probes_per_tensor = 4,
                                          const GradientFn& grad_fn = analytic_gradient) {
  auto grads = Parameters<double>::shaped_like(model.params());
  grad_fn(model, batch, grads);
  auto gt = grads.tensors();
  auto pt = model.params().tensors();
  GradientCheckResult res;
  for (std::size_t ti = 0; ti < pt.size(); ++ti) {
    Mat<double>& w = *pt[ti].value;
    const Mat<double>& g = *gt[ti].value;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(w.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    const auto k = std::min<std::size_t>(order.size(), static_cast<std::size_t>(probes_per_tensor));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const double x = std::abs(g.data()[a]), y = std::abs(g.data()[b]);
                        return x != y ? x > y : a < b;
                      });
    double worst = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto idx = order[j];
      const double orig = w.data()[idx];
      w.data()[idx] = orig + eps;
      const double up = batch_objective<double>(model, batch, std::nullopt, nullptr).loss;
      w.data()[idx] = orig - eps;
      const double down = batch_objective<double>(model, batch, std::nullopt, nullptr).loss;
      w.data()[idx] = orig;
      const double fd = (up - down) / (2 * eps);
      const double an = g.data()[idx];
      ++res.probes;
      if (std::max(std::abs(fd), std::abs(an)) < kGradientZeroFloor) {
        ++res.zero_probes;
        continue;
      }
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
    }
    res.per_tensor.emplace_back(pt[ti].name, worst);
    res.max_rel_error = std::max(res.max_rel_error, worst);
  }
  return res;
}

/// Small double-precision configuration used by gradient checks.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 16;
  c.dropout = 0.0;
  c.embed_noise_sigma = 0.0;
  return c;
}

}  // namespace auxseq
