#pragma once

// Classification and rationale metrics, and Table-style report rendering.
//
// Rationale metrics are automatic operationalizations: Relevance, Coherence
// and SemSim are cosine similarities of mean-pooled text-encoder features
// mapped to [0,1]; Readability is Flesch Reading Ease clamped to [0,100]
// and scaled to [0,1].

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "memesift/category.hpp"
#include "memesift/encoders.hpp"
#include "memesift/errors.hpp"
#include "memesift/numkernel.hpp"

namespace memesift {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }

  /// 2PR/(P+R) on the positive class, 0 when there is nothing to score.
  double f1() const noexcept {
    const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  }
};

inline ConfusionCounts binary_confusion(const std::vector<bool>& preds, const std::vector<bool>& golds) {
  if (preds.size() != golds.size()) {
    throw ArgumentError("f1: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(golds.size()) +
                        " gold labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] && golds[i]) ++c.tp;
    else if (preds[i]) ++c.fp;
    else if (golds[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Positive-class F1. Returns 0 when there are no predicted and no gold positives.
inline double f1(const std::vector<bool>& preds, const std::vector<bool>& golds) {
  if (preds.empty()) throw ArgumentError("f1: empty input");
  return binary_confusion(preds, golds).f1();
}

inline std::array<ConfusionCounts, kCategoryCount> category_confusion(const std::vector<Category>& preds,
                                                                      const std::vector<Category>& golds) {
  if (preds.size() != golds.size()) {
    throw ArgumentError("macro_f1: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(golds.size()) + " gold labels");
  }
  std::array<ConfusionCounts, kCategoryCount> per{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      const bool p = category_index(preds[i]) == c;
      const bool g = category_index(golds[i]) == c;
      if (p && g) ++per[c].tp;
      else if (p) ++per[c].fp;
      else if (g) ++per[c].fn;
      else ++per[c].tn;
    }
  }
  return per;
}

/// Unweighted mean of per-class F1 over all five categories; absent classes
/// contribute 0.
inline double macro_f1(const std::vector<Category>& preds, const std::vector<Category>& golds) {
  const auto per = category_confusion(preds, golds);
  double total = 0.0;
  for (const auto& c : per) total += c.f1();
  return total / static_cast<double>(kCategoryCount);
}

// ---------------------------------------------------------------------------
// Readability

/// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
/// Segments without any word are dropped. No abbreviation handling.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!split_words(cur).empty()) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur.push_back(text[i]);
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      flush();
    }
  }
  flush();
  return out;
}

/// Whitespace-delimited tokens that contain at least one letter or digit.
inline std::vector<std::string> readability_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    if (std::any_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isalnum(c); })) out.push_back(tok);
  }
  return out;
}

/// Vowel groups (aeiouy), minus a silent trailing 'e' when another group
/// remains; at least 1 per word.
inline std::size_t count_syllables(std::string_view word) {
  std::string letters;
  for (unsigned char c : word) {
    if (std::isalpha(c)) letters.push_back(static_cast<char>(std::tolower(c)));
  }
  auto vowel = [](char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; };
  std::size_t groups = 0;
  bool in_group = false;
  for (char c : letters) {
    if (vowel(c)) {
      if (!in_group) ++groups;
      in_group = true;
    } else {
      in_group = false;
    }
  }
  if (!letters.empty() && letters.back() == 'e' && groups > 1) --groups;
  return std::max<std::size_t>(groups, 1);
}

struct TextCounts {
  std::size_t words = 0;
  std::size_t sentences = 0;
  std::size_t syllables = 0;
};

inline TextCounts count_text(std::string_view text) {
  TextCounts c;
  const auto words = readability_words(text);
  c.words = words.size();
  for (const auto& w : words) c.syllables += count_syllables(w);
  c.sentences = std::max<std::size_t>(split_sentences(text).size(), 1);
  return c;
}

inline double flesch_reading_ease(const TextCounts& c) {
  return 206.835 - 1.015 * (static_cast<double>(c.words) / static_cast<double>(c.sentences)) -
         84.6 * (static_cast<double>(c.syllables) / static_cast<double>(c.words));
}

/// Flesch Reading Ease clamped to [0,100], divided by 100.
inline double readability(std::string_view text) {
  const TextCounts c = count_text(text);
  if (c.words == 0) throw ArgumentError("readability: text has no words");
  return std::clamp(flesch_reading_ease(c), 0.0, 100.0) / 100.0;
}

// ---------------------------------------------------------------------------
// Embedding similarity

/// (cos(u, v) + 1) / 2 for two row vectors.
inline double semsim_vectors(const Matrix& u, const Matrix& v) {
  if (!u.same_shape(v)) throw DimensionError("semsim: vector shape mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u.values()[i] * v.values()[i];
    nu += u.values()[i] * u.values()[i];
    nv += v.values()[i] * v.values()[i];
  }
  if (nu == 0.0 || nv == 0.0) throw DegenerateEmbeddingError("semsim: zero-norm embedding");
  const double cos = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
  return (cos + 1.0) / 2.0;
}

inline Matrix pooled_text_embedding(std::string_view text, const EncoderParams& enc) {
  return mean_rows(encode_text(tokenize(text, enc.config.vocab_size, enc.config.max_len), enc).values);
}

inline double semsim(std::string_view a, std::string_view b, const EncoderParams& enc) {
  if (split_words(a).empty() || split_words(b).empty()) throw ArgumentError("semsim: empty text");
  return semsim_vectors(pooled_text_embedding(a, enc), pooled_text_embedding(b, enc));
}

inline double relevance(std::string_view rationale, std::string_view meme_text, const EncoderParams& enc) {
  if (split_words(rationale).empty()) throw ArgumentError("relevance: empty rationale");
  if (split_words(meme_text).empty()) throw ArgumentError("relevance: empty meme text");
  return semsim(rationale, meme_text, enc);
}

/// Mean semsim of adjacent sentences; 1 for a single sentence.
inline double coherence(std::string_view rationale, const EncoderParams& enc) {
  const auto sentences = split_sentences(rationale);
  if (sentences.empty()) throw ArgumentError("coherence: empty rationale");
  if (sentences.size() == 1) return 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < sentences.size(); ++i) total += semsim(sentences[i], sentences[i + 1], enc);
  return total / static_cast<double>(sentences.size() - 1);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string setup;
  std::string model;
  double mmc_f1 = 0.0;
  double macro_f1 = 0.0;
  double relevance = 0.0;
  double coherence = 0.0;
  double readability = 0.0;
  double semsim = 0.0;
};

/// Half-up rounding to 2 decimals, robust to binary representation
/// (0.895 → 0.90).
inline std::string fixed2(double v) {
  const double scaled = std::floor(v * 100.0 + 0.5 + 1e-9);
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << scaled / 100.0;
  return out.str();
}

inline constexpr std::string_view kReportFooter =
    "Relevance, Coherence and SemSim are cosine similarities of mean-pooled text-encoder features mapped to "
    "[0,1]; Readability is Flesch Reading Ease clamped to [0,100] / 100.";

/// Plain-text table grouped by setup, in first-appearance order of setups.
inline std::string format_report(const std::vector<MetricReport>& rows) {
  static constexpr std::array<std::string_view, 6> header{"Model", "MMC (F1)", "Relevance",
                                                          "Coherence", "Readability", "SemSim"};
  std::size_t model_w = header[0].size();
  for (const auto& r : rows) model_w = std::max(model_w, r.model.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(model_w)) << header[0];
  for (std::size_t i = 1; i < header.size(); ++i) out << " | " << std::setw(static_cast<int>(header[i].size())) << header[i];
  out << '\n';
  std::vector<std::string> setups;
  for (const auto& r : rows) {
    if (std::find(setups.begin(), setups.end(), r.setup) == setups.end()) setups.push_back(r.setup);
  }
  for (const auto& setup : setups) {
    if (!setup.empty()) out << "[" << setup << "]\n";
    for (const auto& r : rows) {
      if (r.setup != setup) continue;
      const std::array<double, 5> vals{r.mmc_f1, r.relevance, r.coherence, r.readability, r.semsim};
      out << std::left << std::setw(static_cast<int>(model_w)) << r.model;
      for (std::size_t i = 0; i < vals.size(); ++i)
        out << " | " << std::setw(static_cast<int>(header[i + 1].size())) << fixed2(vals[i]);
      out << '\n';
    }
  }
  return out.str();
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_report_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream out;
  out << "setup,model,mmc_f1,relevance,coherence,readability,semsim\n";
  for (const auto& r : rows) {
    out << csv_escape(r.setup) << ',' << csv_escape(r.model) << ',' << fixed2(r.mmc_f1) << ',' << fixed2(r.relevance)
        << ',' << fixed2(r.coherence) << ',' << fixed2(r.readability) << ',' << fixed2(r.semsim) << '\n';
  }
  return out.str();
}

}  // namespace memesift
