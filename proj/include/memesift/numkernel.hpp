#pragma once

// Dense kernels with hand-written backward passes. Every accumulation runs
// left to right over the contracted index so results are reproducible
// bit-for-bit against a naive loop with the same order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>

#include "memesift/errors.hpp"
#include "memesift/matrix.hpp"

namespace memesift {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail

/// a·b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.rows(),
                  "matmul: " + a.shape_string() + " x " + b.shape_string());
  // i-k-j order streams rows of b; each out(i, j) still sums over k ascending.
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

/// a·bᵀ. Four rows of b are reduced side by side for instruction-level
/// parallelism; each entry is still a single left-to-right sum.
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.cols(),
                  "matmul_bt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  Matrix out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    double* o = out.row(i).data();
    std::size_t j = 0;
    for (; j + 4 <= b.rows(); j += 4) {
      const double* b0 = b.row(j).data();
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        s0 += ar[k] * b0[k];
        s1 += ar[k] * b1[k];
        s2 += ar[k] * b2[k];
        s3 += ar[k] * b3[k];
      }
      o[j] = s0;
      o[j + 1] = s1;
      o[j + 2] = s2;
      o[j + 3] = s3;
    }
    for (; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += ar[k] * br[k];
      o[j] = acc;
    }
  }
  return out;
}

/// out += aᵀ·b, accumulating in place.
inline void matmul_at_accumulate(Matrix& out, const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows(),
                  "matmul_at: " + a.shape_string() + "^T x " + b.shape_string());
  detail::require(out.rows() == a.cols() && out.cols() == b.cols(),
                  "matmul_at: accumulator " + out.shape_string());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
}

/// aᵀ·b
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  matmul_at_accumulate(out, a, b);
  return out;
}

/// Row-wise softmax with per-row max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  detail::require(!m.empty(), "softmax_rows: empty matrix");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto in = m.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
inline Matrix softmax_rows_backward(const Matrix& y, const Matrix& dy) {
  detail::require(y.same_shape(dy), "softmax_rows_backward: shape mismatch");
  Matrix dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < y.cols(); ++j) dot += dy(i, j) * y(i, j);
    for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dx;
}

struct AttentionResult {
  Matrix out;
  Matrix weights;
};

/// Scaled dot-product attention: softmax(q·kᵀ/√d_k)·v.
inline AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  detail::require(q.cols() == k.cols(),
                  "attention: query dim " + std::to_string(q.cols()) + " != key dim " +
                      std::to_string(k.cols()));
  detail::require(v.rows() == k.rows(), "attention: value rows != key rows");
  detail::require(q.rows() > 0 && k.rows() > 0 && k.cols() > 0, "attention: empty operand");
  Matrix scores = matmul_bt(q, k);
  scores *= 1.0 / std::sqrt(static_cast<double>(k.cols()));
  AttentionResult r;
  r.weights = softmax_rows(scores);
  r.out = matmul(r.weights, v);
  return r;
}

struct AttentionGrads {
  Matrix dq;
  Matrix dk;
  Matrix dv;
};

/// Returns dq and adds dk, dv into the given accumulators. Used where many
/// queries share one large key/value memory.
inline Matrix attention_backward_accumulate(const Matrix& q, const Matrix& k, const Matrix& v,
                                            const Matrix& weights, const Matrix& dout, Matrix& dk,
                                            Matrix& dv) {
  detail::require(dout.rows() == q.rows() && dout.cols() == v.cols(),
                  "attention_backward: upstream gradient shape");
  matmul_at_accumulate(dv, weights, dout);
  Matrix dscores = softmax_rows_backward(weights, matmul_bt(dout, v));
  dscores *= 1.0 / std::sqrt(static_cast<double>(k.cols()));
  matmul_at_accumulate(dk, dscores, q);
  return matmul(dscores, k);
}

inline AttentionGrads attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                         const Matrix& weights, const Matrix& dout) {
  AttentionGrads g;
  g.dk = Matrix(k.rows(), k.cols());
  g.dv = Matrix(v.rows(), v.cols());
  g.dq = attention_backward_accumulate(q, k, v, weights, dout, g.dk, g.dv);
  return g;
}

/// x·w + b, with b a 1×out row broadcast over rows.
inline Matrix linear_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  detail::require(x.cols() == w.rows(),
                  "linear: input " + x.shape_string() + " vs weight " + w.shape_string());
  detail::require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias must be 1x" +
                                                             std::to_string(w.cols()));
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * w(k, j);
      out(i, j) = acc + b(0, j);
    }
  }
  return out;
}

struct LinearGrads {
  Matrix dx;
  Matrix dw;
  Matrix db;
};

inline LinearGrads linear_backward(const Matrix& x, const Matrix& w, const Matrix& dout) {
  detail::require(dout.rows() == x.rows() && dout.cols() == w.cols(),
                  "linear_backward: upstream gradient shape");
  LinearGrads g;
  g.dx = matmul_bt(dout, w);
  g.dw = matmul_at(x, dout);
  g.db = Matrix(1, w.cols());
  for (std::size_t i = 0; i < dout.rows(); ++i)
    for (std::size_t j = 0; j < dout.cols(); ++j) g.db(0, j) += dout(i, j);
  return g;
}

/// Valid-padding 1-D convolution over the row axis.
///
/// `kernel` stacks `width` blocks of d_in rows: entry (w·d_in + c, o) weights
/// input channel c at window offset w for output channel o.
inline Matrix conv1d_forward(const Matrix& seq, const Matrix& kernel, std::size_t width,
                             std::size_t stride) {
  detail::require(width >= 1 && stride >= 1, "conv1d: width and stride must be >= 1");
  detail::require(kernel.rows() == width * seq.cols(),
                  "conv1d: kernel rows " + std::to_string(kernel.rows()) + " != width*d_in " +
                      std::to_string(width * seq.cols()));
  detail::require(width <= seq.rows(), "conv1d: width " + std::to_string(width) +
                                           " exceeds sequence length " +
                                           std::to_string(seq.rows()));
  const std::size_t d_in = seq.cols();
  const std::size_t out_len = (seq.rows() - width) / stride + 1;
  Matrix out(out_len, kernel.cols());
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t o = 0; o < kernel.cols(); ++o) {
      double acc = 0.0;
      for (std::size_t w = 0; w < width; ++w)
        for (std::size_t c = 0; c < d_in; ++c) acc += seq(t * stride + w, c) * kernel(w * d_in + c, o);
      out(t, o) = acc;
    }
  }
  return out;
}

struct ConvGrads {
  Matrix dseq;
  Matrix dkernel;
};

inline ConvGrads conv1d_backward(const Matrix& seq, const Matrix& kernel, std::size_t width,
                                 std::size_t stride, const Matrix& dout) {
  const std::size_t d_in = seq.cols();
  detail::require(dout.cols() == kernel.cols() && dout.rows() == (seq.rows() - width) / stride + 1,
                  "conv1d_backward: upstream gradient shape");
  ConvGrads g{Matrix(seq.rows(), d_in), Matrix(kernel.rows(), kernel.cols())};
  for (std::size_t t = 0; t < dout.rows(); ++t) {
    for (std::size_t w = 0; w < width; ++w) {
      const std::size_t r = t * stride + w;
      for (std::size_t c = 0; c < d_in; ++c) {
        double acc = 0.0;
        for (std::size_t o = 0; o < kernel.cols(); ++o) {
          acc += dout(t, o) * kernel(w * d_in + c, o);
          g.dkernel(w * d_in + c, o) += seq(r, c) * dout(t, o);
        }
        g.dseq(r, c) += acc;
      }
    }
  }
  return g;
}

inline Matrix tanh_forward(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = std::tanh(v);
  return y;
}

/// Given y = tanh(x) and dL/dy, returns dL/dx.
inline Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) dx.values()[i] = dy.values()[i] * (1.0 - y.values()[i] * y.values()[i]);
  return dx;
}

/// Column means as a 1×cols row.
inline Matrix mean_rows(const Matrix& m) {
  detail::require(m.rows() > 0, "mean_rows: no rows");
  Matrix out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += m(i, j);
  out *= 1.0 / static_cast<double>(m.rows());
  return out;
}

inline Matrix mean_rows_backward(std::size_t rows, const Matrix& dmean) {
  Matrix dx(rows, dmean.cols());
  const double scale = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < dmean.cols(); ++j) dx(i, j) = dmean(0, j) * scale;
  return dx;
}

struct CrossEntropyResult {
  double loss;
  Matrix grad;  // same shape as logits
};

/// −log softmax(logits)[gold] and its gradient softmax − one_hot(gold).
inline CrossEntropyResult cross_entropy(const Matrix& logits, std::size_t gold) {
  detail::require(logits.rows() == 1 && logits.cols() > 0, "cross_entropy: logits must be a row");
  if (gold >= logits.cols()) {
    throw IndexError("cross_entropy: gold class " + std::to_string(gold) + " out of range " +
                     std::to_string(logits.cols()));
  }
  const auto row = logits.row(0);
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - mx);
  const double log_z = mx + std::log(total);
  CrossEntropyResult r{log_z - row[gold], softmax_rows(logits)};
  r.grad(0, gold) -= 1.0;
  // -log p can round to a tiny negative when p rounds to 1.
  r.loss = std::max(r.loss, 0.0);
  return r;
}

/// Scalar function of a matrix. When `grad` is non-null the function also
/// writes its analytic gradient there (same shape as the argument).
using ScalarFunction = std::function<double(const Matrix& x, Matrix* grad)>;

/// Max over entries of |analytic − central difference| / max(|analytic|, 1e-8).
inline double finite_diff_check(const ScalarFunction& f, const Matrix& point, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("finite_diff_check: eps must be positive");
  Matrix analytic(point.rows(), point.cols());
  f(point, &analytic);
  detail::require(analytic.same_shape(point), "finite_diff_check: gradient shape");
  Matrix probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + eps;
    const double up = f(probe, nullptr);
    probe.values()[i] = orig - eps;
    const double down = f(probe, nullptr);
    probe.values()[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.values()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a), 1e-8));
  }
  return worst;
}

}  // namespace memesift
