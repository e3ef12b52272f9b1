#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "memesift/numkernel.hpp"
#include "test_util.hpp"

using namespace memesift;
using memesift::testing::max_abs_diff;
using memesift::testing::random_matrix;
using memesift::testing::weighted_sum;

namespace {

// Independent dense evaluation of softmax(q·kᵀ/√d)·v with plain vectors.
Matrix attention_oracle(const Matrix& q, const Matrix& k, const Matrix& v) {
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
  Matrix out(n, v.cols());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(m);
    double mx = -1e300;
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q(i, t) * k(j, t);
      s[j] = dot / std::sqrt(double(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < v.cols(); ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < m; ++j) acc += s[j] / z * v(j, c);
      out(i, c) = acc;
    }
  }
  return out;
}

}  // namespace

TEST(Softmax, UniformRow) {
  const Matrix s = softmax_rows(Matrix{{0, 0}});
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
}

TEST(Softmax, LargeValuesDoNotOverflow) {
  const Matrix s = softmax_rows(Matrix{{1000, 1000, 1000}});
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, HandEvaluated) {
  // e/(e+e^2) and e^2/(e+e^2)
  const Matrix s = softmax_rows(Matrix{{1, 2}});
  EXPECT_NEAR(s(0, 0), 0.26894, 1e-4);
  EXPECT_NEAR(s(0, 1), 0.73106, 1e-4);
}

TEST(Softmax, EmptyIsDimensionError) { EXPECT_THROW(softmax_rows(Matrix()), DimensionError); }

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = random_matrix(rng, 1 + rng.index(5), 1 + rng.index(7), -50, 50);
    const Matrix s = softmax_rows(m);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double total = 0;
      for (double v : s.row(i)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(12);
  const Matrix m = random_matrix(rng, 3, 4, -3, 3);
  Matrix shifted = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double& v : shifted.row(i)) v += 17.5 * double(i + 1);
  EXPECT_LT(max_abs_diff(softmax_rows(m), softmax_rows(shifted)), 1e-12);
}

TEST(Attention, SingleKey) {
  const auto r = attention(Matrix{{1, 2}}, Matrix{{1, 2}}, Matrix{{7}});
  EXPECT_DOUBLE_EQ(r.out(0, 0), 7.0);
  EXPECT_DOUBLE_EQ(r.weights(0, 0), 1.0);
}

TEST(Attention, IdenticalKeysAverageValues) {
  const auto r = attention(Matrix{{0.3, -1}}, Matrix{{1, 1}, {1, 1}}, Matrix{{1}, {3}});
  EXPECT_DOUBLE_EQ(r.out(0, 0), 2.0);
}

TEST(Attention, MatchesDenseOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = random_matrix(rng, 2, 2), k = random_matrix(rng, 2, 2), v = random_matrix(rng, 2, 2);
    EXPECT_LT(max_abs_diff(attention(q, k, v).out, attention_oracle(q, k, v)), 1e-14);
  }
}

TEST(Attention, DimensionMismatch) {
  EXPECT_THROW(attention(Matrix{{1, 2}}, Matrix{{1, 2, 3}}, Matrix{{1}}), DimensionError);
  EXPECT_THROW(attention(Matrix{{1, 2}}, Matrix{{1, 2}}, Matrix{{1}, {2}}), DimensionError);
}

TEST(Attention, ConvexHullOfValues) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix q = random_matrix(rng, 3, 4, -4, 4), k = random_matrix(rng, 5, 4, -4, 4);
    const Matrix v = random_matrix(rng, 5, 3, -10, 10);
    const auto r = attention(q, k, v);
    for (std::size_t c = 0; c < v.cols(); ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t j = 0; j < v.rows(); ++j) lo = std::min(lo, v(j, c)), hi = std::max(hi, v(j, c));
      for (std::size_t i = 0; i < r.out.rows(); ++i) {
        EXPECT_GE(r.out(i, c), lo - 1e-12);
        EXPECT_LE(r.out(i, c), hi + 1e-12);
      }
    }
  }
}

TEST(Linear, IdentityAndBias) {
  EXPECT_EQ(linear_forward(Matrix{{1, 2}}, Matrix::identity(2), Matrix(1, 2)), (Matrix{{1, 2}}));
  EXPECT_EQ(linear_forward(Matrix{{1, 1}}, Matrix{{1}, {1}}, Matrix{{1}}), (Matrix{{3}}));
}

TEST(Linear, MatchesNaiveTripleLoopBitForBit) {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 3, 4), w = random_matrix(rng, 4, 2), b = random_matrix(rng, 1, 2);
  Matrix naive(3, 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += x(i, k) * w(k, j);
      naive(i, j) = acc + b(0, j);
    }
  EXPECT_EQ(linear_forward(x, w, b), naive);
}

TEST(Linear, DimensionMismatch) {
  EXPECT_THROW(linear_forward(Matrix{{1, 2, 3}}, Matrix::identity(2), Matrix(1, 2)), DimensionError);
}

TEST(Conv1d, PointwiseIdentity) {
  Rng rng(4);
  const Matrix seq = random_matrix(rng, 5, 3);
  EXPECT_EQ(conv1d_forward(seq, Matrix::identity(3), 1, 1), seq);
}

TEST(Conv1d, FullWindowGivesOneRow) {
  Rng rng(4);
  const Matrix seq = random_matrix(rng, 3, 2);
  EXPECT_EQ(conv1d_forward(seq, random_matrix(rng, 6, 4), 3, 1).rows(), 1u);
}

TEST(Conv1d, MatchesSlidingWindowLoop) {
  Rng rng(8);
  const std::size_t L = 4, d = 3, width = 2, stride = 2, out = 2;
  const Matrix seq = random_matrix(rng, L, d);
  const Matrix kernel = random_matrix(rng, width * d, out);
  const Matrix got = conv1d_forward(seq, kernel, width, stride);
  ASSERT_EQ(got.rows(), (L - width) / stride + 1);
  for (std::size_t t = 0; t < got.rows(); ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0;
      for (std::size_t w = 0; w < width; ++w)
        for (std::size_t c = 0; c < d; ++c) acc += seq(t * stride + w, c) * kernel(w * d + c, o);
      EXPECT_EQ(got(t, o), acc);
    }
  }
}

TEST(Conv1d, WidthLongerThanSequence) {
  EXPECT_THROW(conv1d_forward(Matrix(2, 3), Matrix(9, 3), 3, 1), DimensionError);
}

TEST(CrossEntropy, UniformAndConfident) {
  EXPECT_NEAR(cross_entropy(Matrix{{0, 0}}, 0).loss, std::log(2.0), 1e-15);
  EXPECT_LT(cross_entropy(Matrix{{10, -10}}, 0).loss, 1e-8);
  EXPECT_THROW(cross_entropy(Matrix{{0, 0}}, 2), IndexError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifference) {
  const ScalarFunction f = [](const Matrix& x, Matrix* g) {
    auto r = cross_entropy(x, 1);
    if (g) *g = r.grad;
    return r.loss;
  };
  EXPECT_LT(finite_diff_check(f, Matrix{{1, 2}}, 1e-4), 1e-5);
}

TEST(FiniteDiff, SumOfSquares) {
  const ScalarFunction f = [](const Matrix& x, Matrix* g) {
    if (g) *g = x * 2.0;
    return weighted_sum(x, x);
  };
  EXPECT_LT(finite_diff_check(f, Matrix{{1, 2}}, 1e-4), 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
  const ScalarFunction f = [](const Matrix& x, Matrix* g) {
    if (g) *g = Matrix(x.rows(), x.cols());
    return 3.0;
  };
  EXPECT_EQ(finite_diff_check(f, Matrix{{1, 2}}, 1e-4), 0.0);
  EXPECT_THROW(finite_diff_check(f, Matrix{{1}}, 0.0), ArgumentError);
}

TEST(FiniteDiff, AttentionThenSum) {
  Rng rng(9);
  const Matrix k = random_matrix(rng, 2, 2), v = random_matrix(rng, 2, 2);
  const ScalarFunction f = [&](const Matrix& q, Matrix* g) {
    const auto r = attention(q, k, v);
    if (g) *g = attention_backward(q, k, v, r.weights, Matrix(2, 2, 1.0)).dq;
    double s = 0;
    for (double x : r.out.values()) s += x;
    return s;
  };
  EXPECT_LT(finite_diff_check(f, random_matrix(rng, 2, 2), 1e-4), 1e-4);
}

// Every backward pass against central differences on random 2×3 inputs.
class BackwardPasses : public ::testing::Test {
 protected:
  Rng rng{2024};
};

TEST_F(BackwardPasses, Softmax) {
  const Matrix r = random_matrix(rng, 2, 3);
  const ScalarFunction f = [&](const Matrix& x, Matrix* g) {
    const Matrix y = softmax_rows(x);
    if (g) *g = softmax_rows_backward(y, r);
    return weighted_sum(y, r);
  };
  EXPECT_LT(finite_diff_check(f, random_matrix(rng, 2, 3), 1e-4), 1e-4);
}

TEST_F(BackwardPasses, AttentionAllInputs) {
  const Matrix q0 = random_matrix(rng, 2, 3), k0 = random_matrix(rng, 3, 3), v0 = random_matrix(rng, 3, 3);
  const Matrix r = random_matrix(rng, 2, 3);
  auto run = [&](const Matrix& q, const Matrix& k, const Matrix& v) {
    const auto a = attention(q, k, v);
    return std::pair{weighted_sum(a.out, r), attention_backward(q, k, v, a.weights, r)};
  };
  const ScalarFunction fq = [&](const Matrix& x, Matrix* g) {
    auto [s, gr] = run(x, k0, v0);
    if (g) *g = gr.dq;
    return s;
  };
  const ScalarFunction fk = [&](const Matrix& x, Matrix* g) {
    auto [s, gr] = run(q0, x, v0);
    if (g) *g = gr.dk;
    return s;
  };
  const ScalarFunction fv = [&](const Matrix& x, Matrix* g) {
    auto [s, gr] = run(q0, k0, x);
    if (g) *g = gr.dv;
    return s;
  };
  EXPECT_LT(finite_diff_check(fq, q0, 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fk, k0, 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fv, v0, 1e-4), 1e-4);
}

TEST_F(BackwardPasses, Linear) {
  const Matrix x0 = random_matrix(rng, 2, 3), w0 = random_matrix(rng, 3, 3), b0 = random_matrix(rng, 1, 3);
  const Matrix r = random_matrix(rng, 2, 3);
  const ScalarFunction fx = [&](const Matrix& x, Matrix* g) {
    if (g) *g = linear_backward(x, w0, r).dx;
    return weighted_sum(linear_forward(x, w0, b0), r);
  };
  const ScalarFunction fw = [&](const Matrix& w, Matrix* g) {
    if (g) *g = linear_backward(x0, w, r).dw;
    return weighted_sum(linear_forward(x0, w, b0), r);
  };
  const ScalarFunction fb = [&](const Matrix& b, Matrix* g) {
    if (g) *g = linear_backward(x0, w0, r).db;
    return weighted_sum(linear_forward(x0, w0, b), r);
  };
  EXPECT_LT(finite_diff_check(fx, x0, 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fw, w0, 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fb, b0, 1e-4), 1e-4);
}

TEST_F(BackwardPasses, Conv1d) {
  const Matrix seq0 = random_matrix(rng, 3, 3), k0 = random_matrix(rng, 6, 3);
  const Matrix r = random_matrix(rng, 2, 3);
  const ScalarFunction fs = [&](const Matrix& s, Matrix* g) {
    if (g) *g = conv1d_backward(s, k0, 2, 1, r).dseq;
    return weighted_sum(conv1d_forward(s, k0, 2, 1), r);
  };
  const ScalarFunction fk = [&](const Matrix& k, Matrix* g) {
    if (g) *g = conv1d_backward(seq0, k, 2, 1, r).dkernel;
    return weighted_sum(conv1d_forward(seq0, k, 2, 1), r);
  };
  EXPECT_LT(finite_diff_check(fs, seq0, 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fk, k0, 1e-4), 1e-4);
}

TEST_F(BackwardPasses, TanhAndMean) {
  const Matrix r = random_matrix(rng, 2, 3), rm = random_matrix(rng, 1, 3);
  const ScalarFunction ft = [&](const Matrix& x, Matrix* g) {
    const Matrix y = tanh_forward(x);
    if (g) *g = tanh_backward(y, r);
    return weighted_sum(y, r);
  };
  const ScalarFunction fm = [&](const Matrix& x, Matrix* g) {
    if (g) *g = mean_rows_backward(x.rows(), rm);
    return weighted_sum(mean_rows(x), rm);
  };
  EXPECT_LT(finite_diff_check(ft, random_matrix(rng, 2, 3), 1e-4), 1e-4);
  EXPECT_LT(finite_diff_check(fm, random_matrix(rng, 2, 3), 1e-4), 1e-4);
}

TEST(Matmul, TransposedVariantsMatchNaiveLoopsBitForBit) {
  Rng rng(71);
  for (std::size_t n : {1u, 3u, 4u, 7u, 9u}) {
    const Matrix a = random_matrix(rng, 5, n);
    const Matrix b = random_matrix(rng, 6, n);
    Matrix abt(5, 6);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += a(i, k) * b(j, k);
        abt(i, j) = acc;
      }
    EXPECT_EQ(matmul_bt(a, b), abt) << n;

    const Matrix c = random_matrix(rng, n, 4);
    const Matrix d = random_matrix(rng, n, 3);
    Matrix ctd(4, 3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += c(k, i) * d(k, j);
        ctd(i, j) = acc;
      }
    EXPECT_EQ(matmul_at(c, d), ctd) << n;
    EXPECT_EQ(matmul(transpose(c), d), ctd) << n;
  }
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(4, 2)), DimensionError);
  EXPECT_THROW(matmul_bt(Matrix(2, 3), Matrix(4, 2)), DimensionError);
  EXPECT_THROW(matmul_at(Matrix(2, 3), Matrix(4, 2)), DimensionError);
}

TEST(Attention, AccumulatingBackwardAddsToExistingGradients) {
  Rng rng(72);
  const Matrix q = random_matrix(rng, 3, 4);
  const Matrix k = random_matrix(rng, 5, 4);
  const Matrix v = random_matrix(rng, 5, 2);
  const Matrix dout = random_matrix(rng, 3, 2);
  const AttentionResult fwd = attention(q, k, v);
  const AttentionGrads ref = attention_backward(q, k, v, fwd.weights, dout);
  Matrix dk = random_matrix(rng, 5, 4);
  Matrix dv = random_matrix(rng, 5, 2);
  const Matrix dk0 = dk, dv0 = dv;
  const Matrix dq = attention_backward_accumulate(q, k, v, fwd.weights, dout, dk, dv);
  EXPECT_EQ(dq, ref.dq);
  EXPECT_LT(max_abs_diff(dk, dk0 + ref.dk), 1e-14);
  EXPECT_LT(max_abs_diff(dv, dv0 + ref.dv), 1e-14);
}
