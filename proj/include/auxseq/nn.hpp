// Dense building blocks with explicit forward caches and backward passes:
// affine maps, layer norm, ReLU feed-forward, dropout and multi-head
// scaled dot-product attention. Rows index sequence positions.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "auxseq/rng.hpp"

namespace auxseq {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Linear {
  Mat<S> w;  // out x in
  Mat<S> b;  // 1 x out
};

template <class S>
struct LayerNorm {
  Mat<S> gamma;  // 1 x d
  Mat<S> beta;   // 1 x d
};

template <class S>
struct Attention {
  Linear<S> q, k, v, o;
};

template <class S>
struct FeedForward {
  Linear<S> in, out;
};

// ---------------------------------------------------------------------------
// Affine

template <class S>
Mat<S> linear_forward(const Linear<S>& p, const Mat<S>& x) {
  Mat<S> y = x * p.w.transpose();
  y.rowwise() += p.b.row(0);
  return y;
}

template <class S>
Mat<S> linear_backward(const Linear<S>& p, Linear<S>* g, const Mat<S>& x, const Mat<S>& dy) {
  if (g) {
    g->w.noalias() += dy.transpose() * x;
    g->b.row(0) += dy.colwise().sum();
  }
  return dy * p.w;
}

// ---------------------------------------------------------------------------
// Layer norm

template <class S>
struct LayerNormCache {
  Mat<S> xhat;
  std::vector<S> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
Mat<S> layer_norm_forward(const LayerNorm<S>& p, const Mat<S>& x, LayerNormCache<S>* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat<S> xhat(n, d);
  std::vector<S> rstd(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mu = x.row(i).mean();
    const auto centered = (x.row(i).array() - mu).matrix();
    const S var = centered.squaredNorm() / static_cast<S>(d);
    const S r = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    xhat.row(i) = centered * r;
    rstd[static_cast<std::size_t>(i)] = r;
  }
  Mat<S> y = xhat.array().rowwise() * p.gamma.row(0).array();
  y.rowwise() += p.beta.row(0);
  if (cache) {
    cache->xhat = xhat;
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const LayerNorm<S>& p, LayerNorm<S>* g, const LayerNormCache<S>& c, const Mat<S>& dy) {
  const auto n = dy.rows();
  const auto d = static_cast<S>(dy.cols());
  if (g) {
    g->gamma.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
    g->beta.row(0) += dy.colwise().sum();
  }
  Mat<S> dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = dy.row(i).cwiseProduct(p.gamma.row(0)).eval();
    const S mean_dxhat = dxhat.sum() / d;
    const S mean_dot = dxhat.dot(c.xhat.row(i)) / d;
    dx.row(i) = c.rstd[static_cast<std::size_t>(i)] *
                ((dxhat.array() - mean_dxhat) - c.xhat.row(i).array() * mean_dot).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Feed-forward

template <class S>
struct FeedForwardCache {
  Mat<S> x;
  Mat<S> pre;  // before ReLU
  Mat<S> hidden;
};

template <class S>
Mat<S> feed_forward_forward(const FeedForward<S>& p, const Mat<S>& x, FeedForwardCache<S>* cache) {
  Mat<S> pre = linear_forward(p.in, x);
  Mat<S> hidden = pre.cwiseMax(S(0));
  Mat<S> y = linear_forward(p.out, hidden);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

template <class S>
Mat<S> feed_forward_backward(const FeedForward<S>& p, FeedForward<S>* g, const FeedForwardCache<S>& c,
                             const Mat<S>& dy) {
  Mat<S> dh = linear_backward(p.out, g ? &g->out : nullptr, c.hidden, dy);
  dh = (c.pre.array() > S(0)).select(dh, S(0));
  return linear_backward(p.in, g ? &g->in : nullptr, c.x, dh);
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout; returns the scaling mask (empty when inactive).
template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, SplitMix64* rng) {
  if (!rng || rate <= 0.0) return {};
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng->uniform() < rate ? S(0) : keep_scale;
  return m;
}

template <class S>
Mat<S> apply_mask(const Mat<S>& x, const Mat<S>& mask) {
  if (mask.size() == 0) return x;
  return x.cwiseProduct(mask);
}

// ---------------------------------------------------------------------------
// Attention

/// Scaled dot-product attention on already-projected Q (n x d), K, V (m x d)
/// split into `heads` column blocks. With `causal`, row i sees keys j <= i.
/// Per-head probability matrices are appended to `probs` when given.
template <class S>
Mat<S> attend(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads, bool causal,
              std::vector<Mat<S>>* probs) {
  const auto n = q.rows();
  const auto m = k.rows();
  const auto d = q.cols();
  const auto dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> out(n, d);
  if (probs) probs->clear();
  for (int h = 0; h < heads; ++h) {
    Mat<S> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index allowed = causal ? std::min<Eigen::Index>(i + 1, m) : m;
      for (Eigen::Index j = allowed; j < m; ++j) s(i, j) = -std::numeric_limits<S>::infinity();
      const S mx = s.row(i).head(allowed).maxCoeff();
      S total = 0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const S e = j < allowed ? std::exp(s(i, j) - mx) : S(0);
        s(i, j) = e;
        total += e;
      }
      s.row(i) /= total;
    }
    out.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (probs) probs->push_back(std::move(s));
  }
  return out;
}

template <class S>
struct AttentionCache {
  Mat<S> q_in, k_in, v_in;
  Mat<S> q, k, v;
  Mat<S> context;  // concatenated heads, before the output projection
  std::vector<Mat<S>> probs;
};

template <class S>
Mat<S> attention_forward(const Attention<S>& p, int heads, const Mat<S>& q_in, const Mat<S>& k_in,
                         const Mat<S>& v_in, bool causal, AttentionCache<S>* cache) {
  Mat<S> q = linear_forward(p.q, q_in);
  Mat<S> k = linear_forward(p.k, k_in);
  Mat<S> v = linear_forward(p.v, v_in);
  std::vector<Mat<S>> probs;
  Mat<S> context = attend(q, k, v, heads, causal, cache ? &probs : nullptr);
  Mat<S> y = linear_forward(p.o, context);
  if (cache) {
    cache->q_in = q_in;
    cache->k_in = k_in;
    cache->v_in = v_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
    cache->probs = std::move(probs);
  }
  return y;
}

template <class S>
struct AttentionGrads {
  Mat<S> dq_in, dk_in, dv_in;
};

template <class S>
AttentionGrads<S> attention_backward(const Attention<S>& p, Attention<S>* g, int heads, const AttentionCache<S>& c,
                                     const Mat<S>& dy) {
  const Mat<S> dcontext = linear_backward(p.o, g ? &g->o : nullptr, c.context, dy);
  const auto d = c.q.cols();
  const auto dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& prob = c.probs[static_cast<std::size_t>(h)];
    const auto dout = dcontext.middleCols(h * dh, dh);
    Mat<S> dprob = dout * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = prob.transpose() * dout;
    const auto row_dot = dprob.cwiseProduct(prob).rowwise().sum().eval();
    Mat<S> ds = prob.cwiseProduct((dprob.colwise() - row_dot));
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  AttentionGrads<S> out;
  out.dq_in = linear_backward(p.q, g ? &g->q : nullptr, c.q_in, dq);
  out.dk_in = linear_backward(p.k, g ? &g->k : nullptr, c.k_in, dk);
  out.dv_in = linear_backward(p.v, g ? &g->v : nullptr, c.v_in, dv);
  return out;
}

// ---------------------------------------------------------------------------

/// Fixed sinusoidal position table, n x d.
template <class S>
Mat<S> sinusoidal_positions(Eigen::Index n, Eigen::Index d) {
  Mat<S> pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

/// Row-wise softmax cross-entropy. Returns the summed loss over rows and, if
/// `dlogits` is given, writes scale * (softmax - onehot) into it.
template <class S>
double softmax_cross_entropy(const Mat<S>& logits, const std::vector<int>& targets, S scale, Mat<S>* dlogits) {
  double total = 0;
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S mx = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - mx).exp().eval();
    const S z = e.sum();
    const int t = targets[static_cast<std::size_t>(i)];
    total += static_cast<double>(std::log(z) - (logits(i, t) - mx));
    if (dlogits) {
      dlogits->row(i) = (e / z * scale).matrix();
      (*dlogits)(i, t) -= scale;
    }
  }
  return total;
}

template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().eval();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

/// Index of the largest entry; the lowest index wins ties.
template <class Row>
int argmax(const Row& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = static_cast<int>(j);
  return best;
}

}  // namespace auxseq
