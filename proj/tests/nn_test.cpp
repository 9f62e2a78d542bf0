#include <gtest/gtest.h>

#include <cmath>

#include "auxseq/nn.hpp"

using namespace auxseq;

namespace {

using M = Mat<double>;

M random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Linear<double> random_linear(int out, int in, std::uint64_t seed) {
  return {random_mat(out, in, seed) * 0.5, random_mat(1, out, seed + 1) * 0.1};
}

// Scalar probe: sum of elementwise product with a fixed random matrix.
double probe(const M& y, const M& r) { return y.cwiseProduct(r).sum(); }

template <class F>
double numeric(M& x, Eigen::Index i, F&& f, double eps = 1e-6) {
  const double orig = x.data()[i];
  x.data()[i] = orig + eps;
  const double up = f();
  x.data()[i] = orig - eps;
  const double down = f();
  x.data()[i] = orig;
  return (up - down) / (2 * eps);
}

}  // namespace

TEST(Linear, BackwardMatchesFiniteDifferences) {
  auto p = random_linear(3, 5, 1);
  M x = random_mat(4, 5, 2);
  const M r = random_mat(4, 3, 3);
  Linear<double> g{M::Zero(3, 5), M::Zero(1, 3)};
  const M dx = linear_backward(p, &g, x, r);
  auto f = [&] { return probe(linear_forward(p, x), r); };
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_NEAR(dx.data()[i], numeric(x, i, f), 1e-7);
  for (Eigen::Index i = 0; i < p.w.size(); ++i) EXPECT_NEAR(g.w.data()[i], numeric(p.w, i, f), 1e-7);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) EXPECT_NEAR(g.b.data()[i], numeric(p.b, i, f), 1e-7);
}

TEST(LayerNorm, ForwardNormalizesRows) {
  LayerNorm<double> p{M::Ones(1, 6), M::Zero(1, 6)};
  const M y = layer_norm_forward<double>(p, random_mat(3, 6, 4) * 3.0 + M::Constant(3, 6, 2.0), nullptr);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 6.0, 1.0, 1e-4);
  }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  LayerNorm<double> p{random_mat(1, 6, 5), random_mat(1, 6, 6)};
  M x = random_mat(3, 6, 7);
  const M r = random_mat(3, 6, 8);
  LayerNorm<double> g{M::Zero(1, 6), M::Zero(1, 6)};
  LayerNormCache<double> cache;
  layer_norm_forward(p, x, &cache);
  const M dx = layer_norm_backward(p, &g, cache, r);
  auto f = [&] { return probe(layer_norm_forward<double>(p, x, nullptr), r); };
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_NEAR(dx.data()[i], numeric(x, i, f), 1e-6);
  for (Eigen::Index i = 0; i < 6; ++i) {
    EXPECT_NEAR(g.gamma.data()[i], numeric(p.gamma, i, f), 1e-6);
    EXPECT_NEAR(g.beta.data()[i], numeric(p.beta, i, f), 1e-6);
  }
}

TEST(FeedForward, BackwardMatchesFiniteDifferences) {
  FeedForward<double> p{random_linear(10, 4, 9), random_linear(4, 10, 11)};
  M x = random_mat(3, 4, 13);
  const M r = random_mat(3, 4, 14);
  FeedForward<double> g{{M::Zero(10, 4), M::Zero(1, 10)}, {M::Zero(4, 10), M::Zero(1, 4)}};
  FeedForwardCache<double> cache;
  feed_forward_forward(p, x, &cache);
  const M dx = feed_forward_backward(p, &g, cache, r);
  auto f = [&] { return probe(feed_forward_forward<double>(p, x, nullptr), r); };
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_NEAR(dx.data()[i], numeric(x, i, f), 1e-6);
  for (Eigen::Index i = 0; i < p.in.w.size(); ++i) EXPECT_NEAR(g.in.w.data()[i], numeric(p.in.w, i, f), 1e-6);
}

class AttentionGrad : public ::testing::TestWithParam<bool> {};

TEST_P(AttentionGrad, BackwardMatchesFiniteDifferences) {
  const bool causal = GetParam();
  Attention<double> p{random_linear(8, 8, 20), random_linear(8, 8, 22), random_linear(8, 8, 24),
                      random_linear(8, 8, 26)};
  M q = random_mat(4, 8, 30), k = random_mat(causal ? 4 : 5, 8, 31), v = random_mat(causal ? 4 : 5, 8, 32);
  const M r = random_mat(4, 8, 33);
  auto zero = [] { return Linear<double>{M::Zero(8, 8), M::Zero(1, 8)}; };
  Attention<double> g{zero(), zero(), zero(), zero()};
  AttentionCache<double> cache;
  attention_forward(p, 2, q, k, v, causal, &cache);
  const auto grads = attention_backward(p, &g, 2, cache, r);
  auto f = [&] { return probe(attention_forward<double>(p, 2, q, k, v, causal, nullptr), r); };
  for (Eigen::Index i = 0; i < q.size(); ++i) EXPECT_NEAR(grads.dq_in.data()[i], numeric(q, i, f), 1e-6);
  for (Eigen::Index i = 0; i < k.size(); ++i) EXPECT_NEAR(grads.dk_in.data()[i], numeric(k, i, f), 1e-6);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(grads.dv_in.data()[i], numeric(v, i, f), 1e-6);
  for (Eigen::Index i = 0; i < p.q.w.size(); ++i) EXPECT_NEAR(g.q.w.data()[i], numeric(p.q.w, i, f), 1e-6);
  for (Eigen::Index i = 0; i < p.o.b.size(); ++i) EXPECT_NEAR(g.o.b.data()[i], numeric(p.o.b, i, f), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Masking, AttentionGrad, ::testing::Values(false, true));

TEST(Attend, RowsSumToOneAndCausalMaskHolds) {
  std::vector<M> probs;
  attend<double>(random_mat(5, 8, 40), random_mat(5, 8, 41), random_mat(5, 8, 42), 2, true, &probs);
  ASSERT_EQ(probs.size(), 2u);
  for (const auto& pr : probs) {
    for (Eigen::Index i = 0; i < 5; ++i) {
      EXPECT_NEAR(pr.row(i).sum(), 1.0, 1e-12);
      for (Eigen::Index j = i + 1; j < 5; ++j) EXPECT_EQ(pr(i, j), 0.0);
    }
  }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  const M logits = M::Zero(3, 7);
  M d;
  const double ce = softmax_cross_entropy<double>(logits, {0, 3, 6}, 1.0, &d);
  EXPECT_NEAR(ce / 3.0, std::log(7.0), 1e-12);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(d.row(i).sum(), 0.0, 1e-12);
  EXPECT_NEAR(d(1, 3), 1.0 / 7.0 - 1.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  M logits = random_mat(2, 5, 50);
  M d;
  softmax_cross_entropy<double>(logits, {4, 1}, 0.5, &d);
  auto f = [&] { return 0.5 * softmax_cross_entropy<double>(logits, {4, 1}, 1.0, nullptr); };
  for (Eigen::Index i = 0; i < logits.size(); ++i) EXPECT_NEAR(d.data()[i], numeric(logits, i, f), 1e-7);
}

TEST(Softmax, RowsSumToOne) {
  const M s = softmax_rows<double>(random_mat(4, 9, 60) * 10.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-12);
}

TEST(Argmax, LowestIndexWinsTies) {
  Eigen::RowVectorXd r(5);
  r << 1, 3, 3, 0, 3;
  EXPECT_EQ(argmax(r), 1);
  r.setZero();
  EXPECT_EQ(argmax(r), 0);
}

TEST(Dropout, InactiveWithoutRngAndScaledWhenActive) {
  EXPECT_EQ(dropout_mask<double>(3, 3, 0.1, nullptr).size(), 0);
  SplitMix64 rng(1);
  EXPECT_EQ(dropout_mask<double>(3, 3, 0.0, &rng).size(), 0);
  const M m = dropout_mask<double>(200, 50, 0.1, &rng);
  std::size_t zeros = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m.data()[i] == 0.0)
      ++zeros;
    else
      EXPECT_DOUBLE_EQ(m.data()[i], 1.0 / 0.9);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.1, 0.02);
}

TEST(Positions, SinusoidalTable) {
  const M pe = sinusoidal_positions<double>(3, 4);
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe(2, 3), std::cos(2.0 / 100.0), 1e-15);
}
