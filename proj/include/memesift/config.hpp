#pragma once

// Run configuration: a flat `key = value` text file with '#' comments.
// Command-line flags are applied afterwards through the same setter.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <type_traits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "memesift/errors.hpp"
#include "memesift/fusion.hpp"
#include "memesift/model.hpp"

namespace memesift {

struct RunConfig {
  // Model and training
  std::uint64_t seed = 7;
  std::size_t d_h = 32;
  std::size_t vocab = 4096;
  std::size_t max_len = 64;
  std::size_t patch_dim = 16;
  std::size_t conv_width = 2;
  std::size_t conv_stride = 1;
  double omega = 0.5;
  double alpha = 0.7;
  double lr = 0.5;
  std::size_t epochs = 200;
  double lambda = 1.0;
  double train_fraction = 0.5;

  // Rationales
  std::size_t shots = 0;
  std::string backend = "stub";
  std::size_t workers = 4;
  bool strict = false;
  std::string llm_base_url = "http://127.0.0.1:8000";
  std::string llm_model = "llama-3-8b-instruct";
  std::size_t llm_max_tokens = 256;
  std::size_t llm_timeout = 30;

  // Paths
  std::string manifest;
  std::string checkpoint;
  std::string predictions;
  std::string rationales;
  std::string references;
  std::string output;
  std::string report_dir;
  std::string text_emb;
  std::string image_emb;
  std::string templates;
  std::string fewshot;
  std::string out_dir;

  // Report labels and toy data
  std::string setup = "desk-scale";
  std::string model_name = "memesift";
  std::string toy_signal = "text_image";
  std::size_t toy_count = 64;

  /// Assigns one key from its textual value. Unknown keys and unparsable
  /// values raise ValidationError.
  void set(std::string_view key, std::string_view value);

  /// Range checks on every numeric field.
  void validate() const;

  ModelShape model_shape() const {
    ModelShape s;
    s.encoder.vocab_size = vocab;
    s.encoder.d_model = d_h;
    s.encoder.max_len = max_len;
    s.encoder.patch_dim = patch_dim;
    s.conv_width = conv_width;
    s.conv_stride = conv_stride;
    return s;
  }

  BlendConfig blend() const { return {omega, alpha}; }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.lr = lr;
    t.lambda = lambda;
    t.seed = seed;
    t.blend = blend();
    return t;
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(std::string_view key, std::string_view v) {
  std::istringstream in{std::string(v)};
  double out = 0.0;
  in >> out;
  if (!in || !in.eof() || !std::isfinite(out)) {
    throw ValidationError("config key '" + std::string(key) + "': expected a real number, got '" + std::string(v) + "'");
  }
  return out;
}

inline std::uint64_t parse_count(std::string_view key, std::string_view v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string_view::npos || v.size() > 19) {
    throw ValidationError("config key '" + std::string(key) + "': expected a non-negative integer, got '" +
                          std::string(v) + "'");
  }
  return std::stoull(std::string(v));
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

}  // namespace config_detail

inline void RunConfig::set(std::string_view key, std::string_view raw) {
  using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*, std::string RunConfig::*>;
  static const std::map<std::string, Field, std::less<>> fields = {
      {"d_h", &RunConfig::d_h},
      {"vocab", &RunConfig::vocab},
      {"max_len", &RunConfig::max_len},
      {"patch_dim", &RunConfig::patch_dim},
      {"conv_width", &RunConfig::conv_width},
      {"conv_stride", &RunConfig::conv_stride},
      {"epochs", &RunConfig::epochs},
      {"shots", &RunConfig::shots},
      {"workers", &RunConfig::workers},
      {"llm.max_tokens", &RunConfig::llm_max_tokens},
      {"llm.timeout", &RunConfig::llm_timeout},
      {"toy.count", &RunConfig::toy_count},
      {"omega", &RunConfig::omega},
      {"alpha", &RunConfig::alpha},
      {"lr", &RunConfig::lr},
      {"lambda", &RunConfig::lambda},
      {"train_fraction", &RunConfig::train_fraction},
      {"backend", &RunConfig::backend},
      {"llm.base_url", &RunConfig::llm_base_url},
      {"llm.model", &RunConfig::llm_model},
      {"manifest", &RunConfig::manifest},
      {"checkpoint", &RunConfig::checkpoint},
      {"predictions", &RunConfig::predictions},
      {"rationales", &RunConfig::rationales},
      {"references", &RunConfig::references},
      {"output", &RunConfig::output},
      {"report_dir", &RunConfig::report_dir},
      {"text_emb", &RunConfig::text_emb},
      {"image_emb", &RunConfig::image_emb},
      {"templates", &RunConfig::templates},
      {"fewshot", &RunConfig::fewshot},
      {"out_dir", &RunConfig::out_dir},
      {"setup", &RunConfig::setup},
      {"model_name", &RunConfig::model_name},
      {"toy.signal", &RunConfig::toy_signal},
  };
  using namespace config_detail;
  const std::string v = trim(raw);
  if (key == "seed") {
    seed = parse_count(key, v);
    return;
  }
  if (key == "strict") {
    strict = parse_bool(key, v);
    return;
  }
  const auto it = fields.find(key);
  if (it == fields.end()) throw ValidationError("unknown config key '" + std::string(key) + "'");
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<T, std::size_t>) {
          this->*member = static_cast<std::size_t>(parse_count(key, v));
        } else if constexpr (std::is_same_v<T, double>) {
          this->*member = parse_real(key, v);
        } else {
          this->*member = v;
        }
      },
      it->second);
}

inline void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  need(d_h >= 1 && d_h <= 4096, "d_h must be in [1, 4096]");
  need(vocab >= 2 && vocab <= (1u << 24), "vocab must be in [2, 2^24]");
  need(max_len >= 1, "max_len must be >= 1");
  need(patch_dim >= 1, "patch_dim must be >= 1");
  need(conv_width >= 1 && conv_width <= max_len, "conv_width must be in [1, max_len]");
  need(conv_stride >= 1, "conv_stride must be >= 1");
  need(omega >= 0.0 && omega <= 1.0, "omega must be in [0, 1]");
  need(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  need(lr >= 0.0, "lr must be >= 0");
  need(epochs >= 1, "epochs must be >= 1");
  need(lambda >= 0.0, "lambda must be >= 0");
  need(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must be in (0, 1)");
  need(shots == 0 || shots == 2 || shots == 5, "shots must be 0, 2 or 5");
  need(backend == "stub" || backend == "http", "backend must be stub or http");
  need(workers >= 1 && workers <= 256, "workers must be in [1, 256]");
  need(llm_timeout >= 1, "llm.timeout must be >= 1 second");
  need(llm_max_tokens >= 1, "llm.max_tokens must be >= 1");
  need(toy_signal == "text_image" || toy_signal == "image_only", "toy.signal must be text_image or image_only");
  need(toy_count >= 2, "toy.count must be >= 2");
}

/// Applies every `key = value` line of `in` to `cfg`.
inline void parse_config(std::istream& in, RunConfig& cfg) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError("missing key before '='", line_no);
    try {
      cfg.set(key, std::string_view(t).substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  RunConfig cfg;
  parse_config(in, cfg);
  return cfg;
}

}  // namespace memesift
