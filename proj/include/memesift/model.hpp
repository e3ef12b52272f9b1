#pragma once

// End-to-end fused classifier: encoders → alignment → context → blend → heads,
// with a hand-written backward pass and a full-batch gradient-descent trainer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memesift/category.hpp"
#include "memesift/embedding_file.hpp"
#include "memesift/encoders.hpp"
#include "memesift/errors.hpp"
#include "memesift/fusion.hpp"
#include "memesift/heads.hpp"
#include "memesift/matrix.hpp"
#include "memesift/numkernel.hpp"

namespace memesift {

inline constexpr std::string_view kDefaultInstruction =
    "Classify whether this meme is misogynous and identify the social domain it targets.";

struct ModelParams {
  EncoderParams encoder;
  AlignmentParams alignment;
  HeadParams head;

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    EncoderParams::visit(self.encoder, f);
    AlignmentParams::visit(self.alignment, f);
    HeadParams::visit(self.head, f);
  }

  std::size_t dim() const noexcept { return encoder.config.d_model; }
};

/// Same shapes as `p`, every trainable entry zero.
inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams g = p;
  ModelParams::visit(g, [](std::string_view, Matrix& m) { m.fill(0.0); });
  return g;
}

struct ModelShape {
  EncoderConfig encoder;
  std::size_t conv_width = 2;
  std::size_t conv_stride = 1;
};

/// Seeds of the three parameter groups are derived from one run seed.
inline ModelParams initialize_model(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p;
  p.encoder = EncoderParams::initialize(shape.encoder, seed);
  p.alignment = AlignmentParams::initialize(shape.encoder.d_model, shape.conv_width,
                                            shape.conv_stride, stable_hash("alignment") ^ seed);
  p.head = HeadParams::initialize(shape.encoder.d_model, stable_hash("head") ^ seed);
  return p;
}

/// One meme in model-ready form. Precomputed features, when present, replace
/// the corresponding built-in encoder.
struct MemeExample {
  std::string id;
  TokenSequence text;
  Matrix patches;
  std::optional<Matrix> text_features;
  std::optional<Matrix> image_features;
  bool label = false;
  Category category = Category::Other;
};

struct InferenceOptions {
  BlendConfig blend;
  TokenSequence instruction;
};

inline InferenceOptions default_inference_options(const EncoderParams& enc, BlendConfig blend = {}) {
  return {blend, tokenize(kDefaultInstruction, enc.config.vocab_size, enc.config.max_len)};
}

struct ForwardTrace {
  std::optional<TextTrace> text;
  std::optional<TextTrace> conditioned;  // text with instruction appended
  std::optional<ImageTrace> image;
  EmbeddingSequence h_t, h_t_t, h_i;
  AlignTrace align;
  MultimodalContext context;
  HeadLogits logits;
  Prediction prediction;
};

inline TokenSequence with_instruction(const TokenSequence& text, const TokenSequence& instruction,
                                      std::size_t max_len) {
  TokenSequence out = text;
  for (std::size_t id : instruction.ids) {
    if (out.size() == max_len) break;
    out.ids.push_back(id);
  }
  return out;
}

inline ForwardTrace forward(const MemeExample& ex, const ModelParams& p, const EmbeddingMemory& memory,
                            const InferenceOptions& opt) {
  ForwardTrace t;
  if (ex.text_features) {
    t.h_t = {*ex.text_features};
    // Precomputed features cannot be re-encoded with the instruction.
    t.h_t_t = t.h_t;
  } else {
    t.text = encode_text_traced(ex.text, p.encoder);
    t.h_t = {t.text->output};
    t.conditioned = encode_text_traced(with_instruction(ex.text, opt.instruction, p.encoder.config.max_len),
                                       p.encoder);
    t.h_t_t = {t.conditioned->output.slice_rows(0, ex.text.size())};
  }
  if (ex.image_features) {
    t.h_i = {*ex.image_features};
  } else {
    t.image = encode_image_traced(ex.patches, p.encoder);
    t.h_i = {t.image->output()};
  }
  t.align = align_image_traced(t.h_i, p.alignment, memory);
  const EmbeddingSequence h_t_i{t.align.attn.out};
  t.context = build_context(t.h_t, h_t_i, opt.instruction, p.encoder);
  t.context.z_test = blend(h_t_i, t.h_i, t.h_t, t.h_t_t, opt.blend).values;
  t.logits = head_logits(t.context.z_test, p.head);
  t.prediction = prediction_from_logits(t.logits, p.head.threshold);
  return t;
}

inline Prediction predict_example(const MemeExample& ex, const ModelParams& p, const InferenceOptions& opt) {
  return forward(ex, p, prepare_memory(p.encoder.token_embedding, p.alignment), opt).prediction;
}

/// Forward traces for a batch, sharing one key/value memory.
inline std::vector<ForwardTrace> forward_batch(const std::vector<MemeExample>& batch, const ModelParams& p,
                                               const InferenceOptions& opt) {
  const EmbeddingMemory memory = prepare_memory(p.encoder.token_embedding, p.alignment);
  std::vector<ForwardTrace> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(forward(ex, p, memory, opt));
  return out;
}

/// Backpropagates dL/dlogits through the whole graph into `grads` and `mem_grads`.
inline void backward(const ForwardTrace& t, const ModelParams& p, const EmbeddingMemory& memory,
                     const InferenceOptions& opt, const Matrix& dlabel_logits,
                     const Matrix& dcategory_logits, ModelParams& grads, MemoryGrads& mem_grads) {
  const Matrix& z = t.context.z_test;
  const LinearGrads lg = linear_backward(z, p.head.label_weight, dlabel_logits);
  const LinearGrads cg = linear_backward(z, p.head.category_weight, dcategory_logits);
  grads.head.label_weight += lg.dw;
  grads.head.label_bias += lg.db;
  grads.head.category_weight += cg.dw;
  grads.head.category_bias += cg.db;
  const Matrix dz = lg.dx + cg.dx;

  const auto coef = blend_coefficients(opt.blend);
  auto dpooled = [&](std::size_t which, std::size_t rows) { return mean_rows_backward(rows, dz * coef[which]); };

  Matrix dh_t_i = dpooled(0, t.align.attn.out.rows());
  Matrix dh_i = dpooled(1, t.h_i.length());
  Matrix dh_t = dpooled(2, t.h_t.length());
  Matrix dh_t_t = dpooled(3, t.h_t_t.length());

  dh_i += align_image_backward(t.align, t.h_i, p.alignment, memory, dh_t_i, grads.alignment, mem_grads);
  if (t.image) encode_image_backward(*t.image, p.encoder, dh_i, grads.encoder);

  if (t.text) {
    encode_text_backward(*t.text, p.encoder, dh_t, grads.encoder);
    Matrix dcond(t.conditioned->output.rows(), t.conditioned->output.cols());
    for (std::size_t i = 0; i < dh_t_t.rows(); ++i)
      for (std::size_t j = 0; j < dh_t_t.cols(); ++j) dcond(i, j) = dh_t_t(i, j);
    encode_text_backward(*t.conditioned, p.encoder, dcond, grads.encoder);
  }
}

struct BatchResult {
  double loss = 0.0;
  ModelParams grads;
};

/// Mean of CE(label) + λ·CE(category) over the batch, with its gradient when
/// `with_grad` is set.
inline BatchResult batch_loss(const std::vector<MemeExample>& batch, const ModelParams& p,
                              const InferenceOptions& opt, double lambda, bool with_grad) {
  if (batch.empty()) throw ArgumentError("batch_loss: empty batch");
  const EmbeddingMemory memory = prepare_memory(p.encoder.token_embedding, p.alignment);
  BatchResult r;
  MemoryGrads mem_grads;
  if (with_grad) {
    r.grads = zeros_like(p);
    mem_grads = MemoryGrads::zeros(memory);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const ForwardTrace t = forward(ex, p, memory, opt);
    const CrossEntropyResult ly = cross_entropy(t.logits.label, ex.label ? 1 : 0);
    const CrossEntropyResult lc = cross_entropy(t.logits.category, category_index(ex.category));
    r.loss += scale * (ly.loss + lambda * lc.loss);
    if (with_grad) {
      backward(t, p, memory, opt, ly.grad * scale, lc.grad * (lambda * scale), r.grads, mem_grads);
    }
  }
  if (with_grad) {
    memory_backward(p.encoder.token_embedding, p.alignment, mem_grads, r.grads.alignment,
                    r.grads.encoder.token_embedding);
  }
  return r;
}

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 0.5;
  double lambda = 1.0;
  std::uint64_t seed = 7;
  BlendConfig blend;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;  // loss before each epoch's update
};

/// Full-batch gradient descent from `init`.
inline TrainResult train_from(ModelParams init, const std::vector<MemeExample>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ArgumentError("train: empty dataset");
  if (cfg.epochs < 1) throw ArgumentError("train: epochs must be >= 1");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ArgumentError("train: lr must be finite and >= 0");
  cfg.blend.validate();
  TrainResult r{std::move(init), {}};
  const InferenceOptions opt = default_inference_options(r.params.encoder, cfg.blend);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchResult b = batch_loss(data, r.params, opt, cfg.lambda, true);
    if (!std::isfinite(b.loss)) throw DivergenceError(epoch);
    r.loss_history.push_back(b.loss);
    if (cfg.lr == 0.0) continue;
    std::vector<Matrix*> grads;
    ModelParams::visit(b.grads, [&](std::string_view, Matrix& g) { grads.push_back(&g); });
    std::size_t i = 0;
    ModelParams::visit(r.params, [&](std::string_view, Matrix& w) {
      Matrix& g = *grads[i++];
      for (std::size_t k = 0; k < w.size(); ++k) w.values()[k] -= cfg.lr * g.values()[k];
    });
  }
  return r;
}

inline TrainResult train(const std::vector<MemeExample>& data, const TrainConfig& cfg, const ModelShape& shape) {
  if (data.empty()) throw ArgumentError("train: empty dataset");
  return train_from(initialize_model(shape, cfg.seed), data, cfg);
}

// Checkpoints: "MMH1", u32 block count, then per block a u32 name length, the
// name bytes, and one MME1 matrix block.

inline constexpr std::string_view kCheckpointMagic = "MMH1";

inline std::vector<char> encode_checkpoint(const ModelParams& p) {
  std::vector<std::pair<std::string, const Matrix*>> blocks;
  const Matrix meta(1, 8,
                    {static_cast<double>(p.encoder.config.vocab_size),
                     static_cast<double>(p.encoder.config.d_model),
                     static_cast<double>(p.encoder.config.max_len),
                     static_cast<double>(p.encoder.config.patch_dim),
                     static_cast<double>(p.alignment.conv_width),
                     static_cast<double>(p.alignment.conv_stride), p.head.threshold,
                     static_cast<double>(p.encoder.seed & ((1ULL << 52) - 1))});
  blocks.emplace_back("meta.config", &meta);
  ModelParams::visit(p, [&](std::string_view name, const Matrix& m) { blocks.emplace_back(std::string(name), &m); });

  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, m] : blocks) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    write_matrix_block(w, *m);
  }
  return w.buffer();
}

inline ModelParams decode_checkpoint(std::span<const char> bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "checkpoint magic") != kCheckpointMagic) throw FormatError("bad checkpoint magic", 0);
  const std::uint32_t count = r.u32("block count");
  std::vector<std::pair<std::string, Matrix>> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("block name length");
    std::string name(r.bytes(len, "block name"));
    blocks.emplace_back(std::move(name), read_matrix_block(r));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());

  auto find = [&](std::string_view name) -> const Matrix& {
    for (const auto& [n, m] : blocks) {
      if (n == name) return m;
    }
    throw FormatError("checkpoint lacks block " + std::string(name), bytes.size());
  };
  const Matrix& meta = find("meta.config");
  if (meta.rows() != 1 || meta.cols() != 8) throw FormatError("malformed meta.config block", 0);
  auto in_range = [&](std::size_t col, double lo, double hi) {
    const double v = meta(0, col);
    return v >= lo && v <= hi && v == std::floor(v);
  };
  if (!in_range(0, 2, 1 << 24) || !in_range(1, 1, 4096) || !in_range(2, 1, 1 << 16) || !in_range(3, 1, 1 << 16) ||
      !in_range(4, 1, meta(0, 2)) || !in_range(5, 1, 1 << 16) || !(meta(0, 6) >= 0.0 && meta(0, 6) <= 1.0)) {
    throw FormatError("meta.config values out of range", 0);
  }

  ModelShape shape;
  shape.encoder.vocab_size = static_cast<std::size_t>(meta(0, 0));
  shape.encoder.d_model = static_cast<std::size_t>(meta(0, 1));
  shape.encoder.max_len = static_cast<std::size_t>(meta(0, 2));
  shape.encoder.patch_dim = static_cast<std::size_t>(meta(0, 3));
  shape.conv_width = static_cast<std::size_t>(meta(0, 4));
  shape.conv_stride = static_cast<std::size_t>(meta(0, 5));
  ModelParams p = zeros_like(initialize_model(shape, 0));
  p.encoder.seed = static_cast<std::uint64_t>(meta(0, 7));
  p.head.threshold = meta(0, 6);
  ModelParams::visit(p, [&](std::string_view name, Matrix& m) {
    const Matrix& stored = find(name);
    if (!stored.same_shape(m)) {
      throw FormatError("block " + std::string(name) + " has shape " + stored.shape_string() +
                            ", expected " + m.shape_string(),
                        0);
    }
    m = stored;
  });
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  write_file_bytes(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace memesift
