#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "memesift/category.hpp"
#include "memesift/errors.hpp"
#include "memesift/fusion.hpp"
#include "memesift/matrix.hpp"
#include "memesift/numkernel.hpp"
#include "memesift/random.hpp"

namespace memesift {

struct Prediction {
  double misogyny_prob = 0.0;
  std::array<double, kCategoryCount> category_dist{};
  bool label = false;
  Category category = Category::Kitchen;
};

/// Two linear heads over the fused d-vector: label (2 logits) and category (5).
struct HeadParams {
  Matrix label_weight;     // d × 2
  Matrix label_bias;       // 1 × 2
  Matrix category_weight;  // d × 5
  Matrix category_bias;    // 1 × 5
  double threshold = 0.5;

  std::size_t dim() const noexcept { return label_weight.rows(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("head.label_weight", self.label_weight);
    f("head.label_bias", self.label_bias);
    f("head.category_weight", self.category_weight);
    f("head.category_bias", self.category_bias);
  }

  static HeadParams zeros(std::size_t d) {
    HeadParams p;
    p.label_weight = Matrix(d, 2);
    p.label_bias = Matrix(1, 2);
    p.category_weight = Matrix(d, kCategoryCount);
    p.category_bias = Matrix(1, kCategoryCount);
    return p;
  }

  static HeadParams initialize(std::size_t d, std::uint64_t seed) {
    HeadParams p = zeros(d);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    visit(p, [&](std::string_view name, Matrix& m) {
      if (name.ends_with("_bias")) return;
      for (double& v : m.values()) v = rng.uniform(-bound, bound);
    });
    return p;
  }
};

/// Arithmetic mean over all rows of the context.
inline Matrix pool_context(const MultimodalContext& ctx) { return mean_rows(ctx.x); }

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

struct HeadLogits {
  Matrix label;     // 1 × 2
  Matrix category;  // 1 × 5
};

inline HeadLogits head_logits(const Matrix& features, const HeadParams& p) {
  if (features.rows() != 1 || features.cols() != p.dim()) {
    throw DimensionError("head: features " + features.shape_string() + " vs d_h " +
                         std::to_string(p.dim()));
  }
  return {linear_forward(features, p.label_weight, p.label_bias),
          linear_forward(features, p.category_weight, p.category_bias)};
}

inline Prediction prediction_from_logits(const HeadLogits& logits, double threshold) {
  Prediction out;
  out.misogyny_prob = softmax_rows(logits.label)(0, 1);
  const Matrix dist = softmax_rows(logits.category);
  for (std::size_t c = 0; c < kCategoryCount; ++c) out.category_dist[c] = dist(0, c);
  out.label = out.misogyny_prob >= threshold;
  out.category = static_cast<Category>(argmax(out.category_dist));
  return out;
}

inline Prediction predict_features(const Matrix& features, const HeadParams& p) {
  return prediction_from_logits(head_logits(features, p), p.threshold);
}

/// Classifies the blended vector z when the context carries one, otherwise
/// the mean-pooled context rows.
inline Prediction predict(const MultimodalContext& ctx, const HeadParams& p) {
  return predict_features(ctx.z_test.empty() ? pool_context(ctx) : ctx.z_test, p);
}

}  // namespace memesift
