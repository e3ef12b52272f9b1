#pragma once

// Desk-scale text and image encoders. Both are a single attention block; the
// text tower adds one tanh feed-forward layer. Real LLM / ViT features can be
// dropped in through MME1 embedding files instead.

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "memesift/embedding_file.hpp"
#include "memesift/errors.hpp"
#include "memesift/matrix.hpp"
#include "memesift/numkernel.hpp"
#include "memesift/random.hpp"

namespace memesift {

/// Vocabulary indices for one text. Index 0 is the null token.
struct TokenSequence {
  std::vector<std::size_t> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// L×d_h features, one row per token or patch.
struct EmbeddingSequence {
  Matrix values;

  std::size_t length() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }
  bool operator==(const EmbeddingSequence&) const = default;
};

inline constexpr std::size_t kNullToken = 0;

/// Lowercased alphanumeric runs; every other byte separates words.
/// Bytes >= 0x80 count as word characters so UTF-8 words stay intact.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::size_t token_id(std::string_view word, std::size_t vocab_size) {
  return 1 + static_cast<std::size_t>(stable_hash(word) % (vocab_size - 1));
}

/// Hash tokenizer. Empty text yields the single null token; longer inputs
/// are truncated to max_len.
inline TokenSequence tokenize(std::string_view text, std::size_t vocab_size,
                              std::size_t max_len = 64) {
  if (vocab_size < 2) throw ArgumentError("tokenize: vocab_size must be >= 2");
  TokenSequence seq;
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() == max_len) break;
    seq.ids.push_back(token_id(w, vocab_size));
  }
  if (seq.ids.empty()) seq.ids.push_back(kNullToken);
  return seq;
}

struct EncoderConfig {
  std::size_t vocab_size = 4096;
  std::size_t d_model = 32;
  std::size_t max_len = 64;
  std::size_t patch_dim = 16;
};

/// Trainable weights of both encoder towers. The token table doubles as the
/// language embedding matrix that image features are aligned against.
struct EncoderParams {
  EncoderConfig config;
  std::uint64_t seed = 0;

  Matrix token_embedding;  // vocab × d
  Matrix text_position;    // max_len × d
  Matrix text_query, text_key, text_value;  // d × d
  Matrix text_ffn_weight;  // d × d
  Matrix text_ffn_bias;    // 1 × d

  Matrix patch_weight;     // patch_dim × d
  Matrix patch_bias;       // 1 × d
  Matrix image_position;   // max_len × d
  Matrix image_query, image_key, image_value;  // d × d

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("encoder.token_embedding", self.token_embedding);
    f("encoder.text_position", self.text_position);
    f("encoder.text_query", self.text_query);
    f("encoder.text_key", self.text_key);
    f("encoder.text_value", self.text_value);
    f("encoder.text_ffn_weight", self.text_ffn_weight);
    f("encoder.text_ffn_bias", self.text_ffn_bias);
    f("encoder.patch_weight", self.patch_weight);
    f("encoder.patch_bias", self.patch_bias);
    f("encoder.image_position", self.image_position);
    f("encoder.image_query", self.image_query);
    f("encoder.image_key", self.image_key);
    f("encoder.image_value", self.image_value);
  }

  /// Weights uniform in ±1/√d, biases zero, drawn in visit order.
  static EncoderParams initialize(const EncoderConfig& cfg, std::uint64_t seed) {
    if (cfg.vocab_size < 2 || cfg.d_model == 0 || cfg.max_len == 0 || cfg.patch_dim == 0) {
      throw ArgumentError("encoder config: all sizes must be positive and vocab >= 2");
    }
    EncoderParams p;
    p.config = cfg;
    p.seed = seed;
    const std::size_t d = cfg.d_model;
    p.token_embedding = Matrix(cfg.vocab_size, d);
    p.text_position = Matrix(cfg.max_len, d);
    p.text_query = p.text_key = p.text_value = p.text_ffn_weight = Matrix(d, d);
    p.text_ffn_bias = Matrix(1, d);
    p.patch_weight = Matrix(cfg.patch_dim, d);
    p.patch_bias = Matrix(1, d);
    p.image_position = Matrix(cfg.max_len, d);
    p.image_query = p.image_key = p.image_value = Matrix(d, d);

    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    visit(p, [&](std::string_view name, Matrix& m) {
      if (name.ends_with("_bias")) return;
      for (double& v : m.values()) v = rng.uniform(-bound, bound);
    });
    return p;
  }
};

/// Forward intermediates of the text tower, kept for the backward pass.
struct TextTrace {
  TokenSequence tokens;
  Matrix input;  // token + position embeddings
  Matrix query, key, value;
  AttentionResult attn;
  Matrix output;  // tanh(attn·W + b)
};

inline TextTrace encode_text_traced(const TokenSequence& tokens, const EncoderParams& p) {
  if (tokens.ids.empty()) throw DimensionError("encode_text: empty token sequence");
  if (tokens.size() > p.config.max_len) {
    throw DimensionError("encode_text: " + std::to_string(tokens.size()) +
                         " tokens exceed max_len " + std::to_string(p.config.max_len));
  }
  const std::size_t d = p.config.d_model;
  TextTrace t;
  t.tokens = tokens;
  t.input = Matrix(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t id = tokens.ids[i];
    if (id >= p.config.vocab_size) {
      throw IndexError("encode_text: token " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(p.config.vocab_size));
    }
    for (std::size_t j = 0; j < d; ++j) t.input(i, j) = p.token_embedding(id, j) + p.text_position(i, j);
  }
  t.query = matmul(t.input, p.text_query);
  t.key = matmul(t.input, p.text_key);
  t.value = matmul(t.input, p.text_value);
  t.attn = attention(t.query, t.key, t.value);
  t.output = tanh_forward(linear_forward(t.attn.out, p.text_ffn_weight, p.text_ffn_bias));
  return t;
}

inline EmbeddingSequence encode_text(const TokenSequence& tokens, const EncoderParams& p) {
  return {encode_text_traced(tokens, p).output};
}

/// Accumulates dL/dparams into `grads` given dL/d(output).
inline void encode_text_backward(const TextTrace& t, const EncoderParams& p, const Matrix& doutput,
                                 EncoderParams& grads) {
  const Matrix dpre = tanh_backward(t.output, doutput);
  const LinearGrads ffn = linear_backward(t.attn.out, p.text_ffn_weight, dpre);
  grads.text_ffn_weight += ffn.dw;
  grads.text_ffn_bias += ffn.db;
  const AttentionGrads ag = attention_backward(t.query, t.key, t.value, t.attn.weights, ffn.dx);
  grads.text_query += matmul_at(t.input, ag.dq);
  grads.text_key += matmul_at(t.input, ag.dk);
  grads.text_value += matmul_at(t.input, ag.dv);
  Matrix dinput = matmul_bt(ag.dq, p.text_query);
  dinput += matmul_bt(ag.dk, p.text_key);
  dinput += matmul_bt(ag.dv, p.text_value);
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    const std::size_t id = t.tokens.ids[i];
    for (std::size_t j = 0; j < dinput.cols(); ++j) {
      grads.token_embedding(id, j) += dinput(i, j);
      grads.text_position(i, j) += dinput(i, j);
    }
  }
}

struct ImageTrace {
  Matrix patches;
  Matrix input;  // projected patches + positions
  Matrix query, key, value;
  AttentionResult attn;

  const Matrix& output() const noexcept { return attn.out; }
};

inline ImageTrace encode_image_traced(const Matrix& patch_grid, const EncoderParams& p) {
  if (patch_grid.rows() == 0) throw DimensionError("encode_image: no patches");
  if (patch_grid.cols() != p.config.patch_dim) {
    throw DimensionError("encode_image: patch width " + std::to_string(patch_grid.cols()) +
                         " != projection input " + std::to_string(p.config.patch_dim));
  }
  if (patch_grid.rows() > p.config.max_len) {
    throw DimensionError("encode_image: " + std::to_string(patch_grid.rows()) +
                         " patches exceed max_len " + std::to_string(p.config.max_len));
  }
  ImageTrace t;
  t.patches = patch_grid;
  t.input = linear_forward(patch_grid, p.patch_weight, p.patch_bias);
  for (std::size_t i = 0; i < t.input.rows(); ++i)
    for (std::size_t j = 0; j < t.input.cols(); ++j) t.input(i, j) += p.image_position(i, j);
  t.query = matmul(t.input, p.image_query);
  t.key = matmul(t.input, p.image_key);
  t.value = matmul(t.input, p.image_value);
  t.attn = attention(t.query, t.key, t.value);
  return t;
}

inline EmbeddingSequence encode_image(const Matrix& patch_grid, const EncoderParams& p) {
  return {encode_image_traced(patch_grid, p).attn.out};
}

inline void encode_image_backward(const ImageTrace& t, const EncoderParams& p, const Matrix& doutput,
                                  EncoderParams& grads) {
  const AttentionGrads ag = attention_backward(t.query, t.key, t.value, t.attn.weights, doutput);
  grads.image_query += matmul_at(t.input, ag.dq);
  grads.image_key += matmul_at(t.input, ag.dk);
  grads.image_value += matmul_at(t.input, ag.dv);
  Matrix dinput = matmul_bt(ag.dq, p.image_query);
  dinput += matmul_bt(ag.dk, p.image_key);
  dinput += matmul_bt(ag.dv, p.image_value);
  for (std::size_t i = 0; i < dinput.rows(); ++i)
    for (std::size_t j = 0; j < dinput.cols(); ++j) grads.image_position(i, j) += dinput(i, j);
  const LinearGrads proj = linear_backward(t.patches, p.patch_weight, dinput);
  grads.patch_weight += proj.dw;
  grads.patch_bias += proj.db;
}

/// Raw token-table rows for each id, no positions. Used for instruction text.
inline Matrix embed_tokens(const TokenSequence& tokens, const EncoderParams& p) {
  Matrix out(tokens.size(), p.config.d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t id = tokens.ids[i];
    if (id >= p.config.vocab_size) throw IndexError("embed_tokens: token outside vocabulary");
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = p.token_embedding(id, j);
  }
  return out;
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingSequence& seq) {
  write_file_bytes(path, encode_embedding(seq.values));
}

inline EmbeddingSequence load_embeddings(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {decode_embedding(bytes)};
}

}  // namespace memesift
