#pragma once

// Image-to-language alignment, multimodal context assembly and the
// inference-time fidelity blend.
//
//   h'_i  = Linear(Conv1D(h_i))
//   hᵗ_i  = Attn(h'_i·W_q, E·W_k, E·W_v)
//   x     = [h_t ; hᵗ_i ; Embed(instruction)]
//   z     = W_α(W_ω(hᵗ_i, h_i), W_ω(h_t, hᵗ_t)),  W_l(c, d) = l·c + (1−l)·d
//
// Sequences entering the blend are mean-pooled first, so z is 1×d.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memesift/encoders.hpp"
#include "memesift/errors.hpp"
#include "memesift/matrix.hpp"
#include "memesift/numkernel.hpp"
#include "memesift/random.hpp"

namespace memesift {

struct AlignmentParams {
  std::size_t conv_width = 2;
  std::size_t conv_stride = 1;
  Matrix conv_kernel;    // (width·d) × d
  Matrix align_weight;   // d × d
  Matrix align_bias;     // 1 × d
  Matrix cross_query;    // d × d, applied to h'_i
  Matrix cross_key;      // d × d, applied to E
  Matrix cross_value;    // d × d, applied to E

  std::size_t dim() const noexcept { return align_weight.rows(); }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("alignment.conv_kernel", self.conv_kernel);
    f("alignment.align_weight", self.align_weight);
    f("alignment.align_bias", self.align_bias);
    f("alignment.cross_query", self.cross_query);
    f("alignment.cross_key", self.cross_key);
    f("alignment.cross_value", self.cross_value);
  }

  static AlignmentParams initialize(std::size_t d, std::size_t width, std::size_t stride,
                                    std::uint64_t seed) {
    if (d == 0 || width == 0 || stride == 0) {
      throw ArgumentError("alignment: d, conv width and stride must be positive");
    }
    AlignmentParams p;
    p.conv_width = width;
    p.conv_stride = stride;
    p.conv_kernel = Matrix(width * d, d);
    p.align_weight = p.cross_query = p.cross_key = p.cross_value = Matrix(d, d);
    p.align_bias = Matrix(1, d);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    visit(p, [&](std::string_view name, Matrix& m) {
      if (name.ends_with("_bias")) return;
      for (double& v : m.values()) v = rng.uniform(-bound, bound);
    });
    return p;
  }
};

/// Keys and values projected from the embedding matrix E. They depend only on
/// parameters, so a batch computes them once.
struct EmbeddingMemory {
  Matrix keys;
  Matrix values;
};

inline EmbeddingMemory prepare_memory(const Matrix& embedding, const AlignmentParams& p) {
  if (embedding.cols() != p.dim()) {
    throw DimensionError("alignment: embedding matrix width " + std::to_string(embedding.cols()) +
                         " != d_h " + std::to_string(p.dim()));
  }
  return {matmul(embedding, p.cross_key), matmul(embedding, p.cross_value)};
}

struct AlignTrace {
  Matrix conv_out;
  Matrix projected;  // h'_i
  Matrix query;
  AttentionResult attn;  // attn.out is hᵗ_i, attn.weights is L'×vocab
};

inline AlignTrace align_image_traced(const EmbeddingSequence& h_i, const AlignmentParams& p,
                                     const EmbeddingMemory& memory) {
  if (h_i.dim() != p.dim()) {
    throw DimensionError("align_image: feature dim " + std::to_string(h_i.dim()) + " != d_h " +
                         std::to_string(p.dim()));
  }
  if (h_i.length() < p.conv_width) {
    throw DimensionError("align_image: sequence of " + std::to_string(h_i.length()) +
                         " rows is shorter than conv width " + std::to_string(p.conv_width));
  }
  AlignTrace t;
  t.conv_out = conv1d_forward(h_i.values, p.conv_kernel, p.conv_width, p.conv_stride);
  t.projected = linear_forward(t.conv_out, p.align_weight, p.align_bias);
  t.query = matmul(t.projected, p.cross_query);
  t.attn = attention(t.query, memory.keys, memory.values);
  return t;
}

struct AlignedImage {
  EmbeddingSequence projected;  // h'_i
  EmbeddingSequence attended;   // hᵗ_i
};

inline AlignedImage align_image(const EmbeddingSequence& h_i, const AlignmentParams& p,
                                const Matrix& embedding) {
  const AlignTrace t = align_image_traced(h_i, p, prepare_memory(embedding, p));
  return {{t.projected}, {t.attn.out}};
}

/// Gradient with respect to the projected memory, summed over a batch and
/// pushed into E and the key/value projections once.
struct MemoryGrads {
  Matrix dkeys;
  Matrix dvalues;

  static MemoryGrads zeros(const EmbeddingMemory& m) {
    return {Matrix(m.keys.rows(), m.keys.cols()), Matrix(m.values.rows(), m.values.cols())};
  }
};

/// Returns dL/dh_i; accumulates parameter and memory gradients.
inline Matrix align_image_backward(const AlignTrace& t, const EmbeddingSequence& h_i,
                                   const AlignmentParams& p, const EmbeddingMemory& memory,
                                   const Matrix& dattended, AlignmentParams& grads,
                                   MemoryGrads& mem_grads) {
  const Matrix dquery = attention_backward_accumulate(t.query, memory.keys, memory.values, t.attn.weights,
                                                      dattended, mem_grads.dkeys, mem_grads.dvalues);
  matmul_at_accumulate(grads.cross_query, t.projected, dquery);
  const Matrix dprojected = matmul_bt(dquery, p.cross_query);
  const LinearGrads lin = linear_backward(t.conv_out, p.align_weight, dprojected);
  grads.align_weight += lin.dw;
  grads.align_bias += lin.db;
  const ConvGrads cg = conv1d_backward(h_i.values, p.conv_kernel, p.conv_width, p.conv_stride, lin.dx);
  grads.conv_kernel += cg.dkernel;
  return cg.dseq;
}

/// Pushes memory gradients into the key/value projections and into dE.
inline void memory_backward(const Matrix& embedding, const AlignmentParams& p,
                            const MemoryGrads& mem_grads, AlignmentParams& grads, Matrix& dembedding) {
  matmul_at_accumulate(grads.cross_key, embedding, mem_grads.dkeys);
  matmul_at_accumulate(grads.cross_value, embedding, mem_grads.dvalues);
  dembedding += matmul_bt(mem_grads.dkeys, p.cross_key);
  dembedding += matmul_bt(mem_grads.dvalues, p.cross_value);
}

/// x = [h_t ; hᵗ_i ; Embed(instruction)] with segment boundaries, plus the
/// blended vector z once it has been computed.
struct MultimodalContext {
  Matrix x;
  std::size_t text_end = 0;
  std::size_t image_end = 0;
  std::size_t instruction_end = 0;
  // Prior (text, image) pairs of the thread. Carried, not consumed.
  std::vector<std::pair<EmbeddingSequence, EmbeddingSequence>> history;
  Matrix z_test;  // 1×d once blended, empty before

  Matrix text_segment() const { return x.slice_rows(0, text_end); }
  Matrix image_segment() const { return x.slice_rows(text_end, image_end); }
  Matrix instruction_segment() const { return x.slice_rows(image_end, instruction_end); }
};

inline MultimodalContext build_context(const EmbeddingSequence& h_t, const EmbeddingSequence& h_t_i,
                                       const TokenSequence& instruction, const EncoderParams& p) {
  const std::size_t d = p.config.d_model;
  if (h_t.dim() != d || h_t_i.dim() != d) {
    throw DimensionError("build_context: segment dims (" + std::to_string(h_t.dim()) + ", " +
                         std::to_string(h_t_i.dim()) + ") != d_h " + std::to_string(d));
  }
  const TokenSequence instr = instruction.ids.empty() ? TokenSequence{{kNullToken}} : instruction;
  const Matrix instr_rows = embed_tokens(instr, p);

  MultimodalContext ctx;
  ctx.text_end = h_t.length();
  ctx.image_end = ctx.text_end + h_t_i.length();
  ctx.instruction_end = ctx.image_end + instr_rows.rows();
  ctx.x = Matrix(ctx.instruction_end, d);
  auto copy_rows = [&](const Matrix& src, std::size_t at) {
    for (std::size_t i = 0; i < src.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) ctx.x(at + i, j) = src(i, j);
  };
  copy_rows(h_t.values, 0);
  copy_rows(h_t_i.values, ctx.text_end);
  copy_rows(instr_rows, ctx.image_end);
  return ctx;
}

struct BlendConfig {
  double omega = 0.5;  // image share inside each pair
  double alpha = 0.7;  // weight of the image pair against the text pair

  void validate() const {
    if (!(omega >= 0.0 && omega <= 1.0)) throw ValidationError("omega must lie in [0,1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0,1]");
  }
};

/// W_l(c, d) = l·c + (1−l)·d, elementwise.
inline Matrix weighted_mix(double l, const Matrix& c, const Matrix& d) {
  if (!c.same_shape(d)) throw DimensionError("weighted_mix: shape mismatch");
  Matrix out(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.size(); ++i)
    out.values()[i] = l * c.values()[i] + (1.0 - l) * d.values()[i];
  return out;
}

/// Mean-pools each sequence, then z = W_α(W_ω(hᵗ_i, h_i), W_ω(h_t, hᵗ_t)).
inline EmbeddingSequence blend(const EmbeddingSequence& h_t_i, const EmbeddingSequence& h_i,
                               const EmbeddingSequence& h_t, const EmbeddingSequence& h_t_t,
                               const BlendConfig& cfg) {
  cfg.validate();
  const std::size_t d = h_t_i.dim();
  if (h_i.dim() != d || h_t.dim() != d || h_t_t.dim() != d) {
    throw DimensionError("blend: all inputs must share d_h");
  }
  const Matrix image_pair = weighted_mix(cfg.omega, mean_rows(h_t_i.values), mean_rows(h_i.values));
  const Matrix text_pair = weighted_mix(cfg.omega, mean_rows(h_t.values), mean_rows(h_t_t.values));
  return {weighted_mix(cfg.alpha, image_pair, text_pair)};
}

/// Effective coefficient of each pooled input in z, in argument order
/// (hᵗ_i, h_i, h_t, hᵗ_t).
inline std::array<double, 4> blend_coefficients(const BlendConfig& cfg) {
  const double a = cfg.alpha;
  const double w = cfg.omega;
  return {a * w, a * (1.0 - w), (1.0 - a) * w, (1.0 - a) * (1.0 - w)};
}

}  // namespace memesift
