#pragma once

// Meme manifests (JSON Lines), corpus statistics, annotation-quality metrics
// and synthetic corpora for tests and demos.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "memesift/category.hpp"
#include "memesift/errors.hpp"
#include "memesift/matrix.hpp"
#include "memesift/random.hpp"

namespace memesift {

struct MemeRecord {
  std::string id;
  Category category = Category::Other;
  TextKind text_kind = TextKind::Image;
  std::string caption;
  std::string overlay;
  std::string image_ref;
  std::optional<bool> misogyny_label;

  bool operator==(const MemeRecord&) const = default;
};

/// The text a reader of the meme sees: caption and overlay, deduplicated.
inline std::string meme_text(const MemeRecord& r) {
  switch (r.text_kind) {
    case TextKind::Image: return "";
    case TextKind::Same: return r.caption.empty() ? r.overlay : r.caption;
    case TextKind::Different:
      if (r.caption.empty()) return r.overlay;
      if (r.overlay.empty()) return r.caption;
      return r.caption + " " + r.overlay;
  }
  return "";
}

inline void validate_record(const MemeRecord& r) {
  if (r.id.empty()) throw ValidationError("record with empty id");
  if (r.text_kind == TextKind::Image && (!r.caption.empty() || !r.overlay.empty())) {
    throw ValidationError("record " + r.id + ": text_kind Image must have empty caption and overlay");
  }
}

inline nlohmann::ordered_json record_to_json(const MemeRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["category"] = std::string(category_name(r.category));
  j["text_kind"] = std::string(text_kind_name(r.text_kind));
  j["caption"] = r.caption;
  j["overlay"] = r.overlay;
  j["image_ref"] = r.image_ref;
  j["misogyny_label"] = r.misogyny_label ? nlohmann::ordered_json(*r.misogyny_label) : nlohmann::ordered_json();
  return j;
}

namespace detail {

inline std::string string_field(const nlohmann::json& j, const char* key, bool required, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw ParseError(std::string("missing key '") + key + "'", line);
    return "";
  }
  if (!it->is_string()) throw ParseError(std::string("key '") + key + "' must be a string", line);
  return it->get<std::string>();
}

}  // namespace detail

inline MemeRecord record_from_json_line(std::string_view text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);
  static const std::set<std::string> known{"id",      "category",  "text_kind",     "caption",
                                           "overlay", "image_ref", "misogyny_label"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ParseError("unknown key '" + key + "'", line);
  }
  MemeRecord r;
  r.id = detail::string_field(j, "id", true, line);
  const std::string cat = detail::string_field(j, "category", true, line);
  const auto c = parse_category(cat);
  if (!c) throw ParseError("unknown category '" + cat + "'", line);
  r.category = *c;
  const std::string kind = detail::string_field(j, "text_kind", true, line);
  const auto k = parse_text_kind(kind);
  if (!k) throw ParseError("unknown text_kind '" + kind + "'", line);
  r.text_kind = *k;
  r.caption = detail::string_field(j, "caption", false, line);
  r.overlay = detail::string_field(j, "overlay", false, line);
  r.image_ref = detail::string_field(j, "image_ref", false, line);
  if (const auto it = j.find("misogyny_label"); it != j.end() && !it->is_null()) {
    if (!it->is_boolean()) throw ParseError("misogyny_label must be boolean or null", line);
    r.misogyny_label = it->get<bool>();
  }
  return r;
}

/// Parses a manifest; blank lines are skipped. Duplicate ids and record
/// invariant violations raise ValidationError.
inline std::vector<MemeRecord> parse_manifest(std::istream& in) {
  std::vector<MemeRecord> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    MemeRecord r = record_from_json_line(line, line_no);
    try {
      validate_record(r);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(r.id).second) {
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate id " + r.id);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MemeRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline void write_manifest(std::ostream& out, const std::vector<MemeRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<MemeRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  write_manifest(out, records);
}

// ---------------------------------------------------------------------------
// Corpus statistics

struct CategoryStats {
  std::size_t count = 0;
  std::size_t different = 0;
  std::size_t same = 0;
  std::size_t image = 0;
  double proportion = 0.0;
};

struct DatasetStats {
  std::array<CategoryStats, kCategoryCount> per_category{};
  std::size_t total = 0;
  std::size_t total_different = 0;
  std::size_t total_same = 0;
  std::size_t total_image = 0;

  const CategoryStats& operator[](Category c) const { return per_category[category_index(c)]; }
};

/// Splits 100 hundredths among categories by largest remainder, so the
/// 2-decimal proportions always sum to exactly 1. Ties go to the lower index.
inline std::array<std::size_t, kCategoryCount> hundredths(const std::array<std::size_t, kCategoryCount>& counts,
                                                          std::size_t total) {
  std::array<std::size_t, kCategoryCount> out{};
  std::array<std::size_t, kCategoryCount> rem{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kCategoryCount; ++c) {
    out[c] = counts[c] * 100 / total;
    rem[c] = counts[c] * 100 % total;
    assigned += out[c];
  }
  std::array<std::size_t, kCategoryCount> order{0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < 100; ++i, ++assigned) ++out[order[i]];
  return out;
}

inline DatasetStats compute_stats(const std::vector<MemeRecord>& records) {
  if (records.empty()) throw ValidationError("empty manifest");
  DatasetStats s;
  for (const auto& r : records) {
    CategoryStats& c = s.per_category[category_index(r.category)];
    ++c.count;
    switch (r.text_kind) {
      case TextKind::Different: ++c.different; ++s.total_different; break;
      case TextKind::Same: ++c.same; ++s.total_same; break;
      case TextKind::Image: ++c.image; ++s.total_image; break;
    }
  }
  s.total = records.size();
  std::array<std::size_t, kCategoryCount> counts{};
  for (std::size_t c = 0; c < kCategoryCount; ++c) counts[c] = s.per_category[c].count;
  const auto h = hundredths(counts, s.total);
  for (std::size_t c = 0; c < kCategoryCount; ++c) s.per_category[c].proportion = static_cast<double>(h[c]) / 100.0;
  return s;
}

/// Aligned text table. Categories with no records are omitted.
inline std::string format_stats_table(const DatasetStats& s) {
  std::ostringstream out;
  auto triple = [](std::size_t a, std::size_t b, std::size_t c) {
    return "(" + std::to_string(a) + ", " + std::to_string(b) + ", " + std::to_string(c) + ")";
  };
  out << std::left << std::setw(12) << "Category" << std::right << std::setw(7) << "Count" << "  "
      << std::left << std::setw(24) << "(Different, Same, Image)" << std::right << std::setw(11)
      << "Proportion" << '\n';
  for (Category c : kAllCategories) {
    const CategoryStats& row = s[c];
    if (row.count == 0) continue;
    out << std::left << std::setw(12) << category_name(c) << std::right << std::setw(7) << row.count
        << "  " << std::left << std::setw(24) << triple(row.different, row.same, row.image) << std::right
        << std::setw(11) << std::fixed << std::setprecision(2) << row.proportion << '\n';
  }
  out << std::left << std::setw(12) << "Total" << std::right << std::setw(7) << s.total << "  " << std::left
      << std::setw(24) << triple(s.total_different, s.total_same, s.total_image) << std::right << std::setw(11)
      << "1.00" << '\n';
  return out.str();
}

inline std::string format_stats_csv(const DatasetStats& s) {
  std::ostringstream out;
  out << "category,count,different,same,image,proportion\n";
  for (Category c : kAllCategories) {
    const CategoryStats& row = s[c];
    if (row.count == 0) continue;
    out << category_name(c) << ',' << row.count << ',' << row.different << ',' << row.same << ',' << row.image
        << ',' << std::fixed << std::setprecision(2) << row.proportion << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Inter-annotator agreement

/// counts[i][j] = number of raters who put item i in category j.
struct RatingsMatrix {
  std::vector<std::vector<std::size_t>> counts;

  std::size_t items() const noexcept { return counts.size(); }
  std::size_t categories() const noexcept { return counts.empty() ? 0 : counts.front().size(); }
};

/// Fleiss' kappa for a fixed number of raters per item.
inline double fleiss_kappa(const RatingsMatrix& m) {
  if (m.items() == 0 || m.categories() == 0) throw ValidationError("fleiss_kappa: empty ratings matrix");
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.items(); ++i) {
    if (m.counts[i].size() != m.categories()) throw ValidationError("fleiss_kappa: ragged ratings matrix");
    std::size_t row_sum = 0;
    for (std::size_t v : m.counts[i]) row_sum += v;
    if (i == 0) n = row_sum;
    if (row_sum != n) {
      throw ValidationError("fleiss_kappa: item " + std::to_string(i) + " has " + std::to_string(row_sum) +
                            " ratings, expected " + std::to_string(n));
    }
  }
  if (n < 2) throw ValidationError("fleiss_kappa: need at least 2 raters per item");

  const double N = static_cast<double>(m.items());
  const double nn = static_cast<double>(n);
  double p_bar = 0.0;
  std::vector<double> column(m.categories(), 0.0);
  for (const auto& row : m.counts) {
    double sq = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      sq += static_cast<double>(row[j] * row[j]);
      column[j] += static_cast<double>(row[j]);
    }
    p_bar += (sq - nn) / (nn * (nn - 1.0));
  }
  p_bar /= N;
  double p_e = 0.0;
  std::size_t used = 0;
  for (double c : column) {
    const double p = c / (N * nn);
    p_e += p * p;
    if (c > 0) ++used;
  }
  if (used <= 1) throw DegenerateAgreementError("fleiss_kappa: every rating falls in one category (chance agreement 1)");
  if (p_bar == 1.0) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

struct AnnotatorScore {
  std::string name;
  double accuracy = 0.0;     // 1–5
  double consistency = 0.0;  // 1–5
  double kappa = 0.0;        // −1–1
};

struct AnnotatorSummary {
  std::vector<AnnotatorScore> annotators;
  AnnotatorScore average;
};

inline AnnotatorSummary annotator_summary(const std::vector<AnnotatorScore>& scores) {
  if (scores.empty()) throw ValidationError("annotator_summary: no annotators");
  AnnotatorSummary s{scores, {"Average", 0.0, 0.0, 0.0}};
  for (const auto& a : scores) {
    if (!(a.accuracy >= 1.0 && a.accuracy <= 5.0)) {
      throw ValidationError("annotator " + a.name + ": accuracy outside [1,5]");
    }
    if (!(a.consistency >= 1.0 && a.consistency <= 5.0)) {
      throw ValidationError("annotator " + a.name + ": consistency outside [1,5]");
    }
    if (!(a.kappa >= -1.0 && a.kappa <= 1.0)) throw ValidationError("annotator " + a.name + ": kappa outside [-1,1]");
    s.average.accuracy += a.accuracy;
    s.average.consistency += a.consistency;
    s.average.kappa += a.kappa;
  }
  const double n = static_cast<double>(scores.size());
  s.average.accuracy /= n;
  s.average.consistency /= n;
  s.average.kappa /= n;
  return s;
}

inline std::string format_annotator_table(const AnnotatorSummary& s) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "Annotator" << std::right << std::setw(14) << "Accuracy (A)" << std::setw(17)
      << "Consistency (C)" << std::setw(12) << "Kappa" << '\n';
  auto row = [&](const AnnotatorScore& a) {
    out << std::left << std::setw(14) << a.name << std::right << std::fixed << std::setprecision(1) << std::setw(14)
        << a.accuracy << std::setw(17) << a.consistency << std::setprecision(2) << std::setw(12) << a.kappa << '\n';
  };
  for (const auto& a : s.annotators) row(a);
  row(s.average);
  return out.str();
}

// ---------------------------------------------------------------------------
// Train/test split

struct SplitResult {
  std::vector<MemeRecord> train;
  std::vector<MemeRecord> test;
  std::vector<std::string> warnings;
};

/// Stratified by category. Train counts per category are apportioned by
/// largest remainder so the total is round(fraction·n) and every category is
/// within one record of its exact share. Each category is shuffled with the
/// seed; input order is kept within each side.
inline SplitResult split(const std::vector<MemeRecord>& records, std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("split: train_fraction must be in (0,1)");
  Rng rng(seed);
  std::vector<bool> in_train(records.size(), false);
  SplitResult out;

  std::vector<std::vector<std::size_t>> groups;
  std::size_t pooled = 0;
  for (Category c : kAllCategories) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].category == c) idx.push_back(i);
    }
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      out.warnings.push_back("category " + std::string(category_name(c)) + " has " + std::to_string(idx.size()) +
                             " record; assigned to train without stratification");
      in_train[idx.front()] = true;
      continue;
    }
    rng.shuffle(idx);
    pooled += idx.size();
    groups.push_back(std::move(idx));
  }

  std::vector<std::size_t> take(groups.size());
  std::vector<double> remainder(groups.size());
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = train_fraction * static_cast<double>(groups[g].size());
    take[g] = static_cast<std::size_t>(std::floor(exact));
    remainder[g] = exact - static_cast<double>(take[g]);
    assigned += take[g];
  }
  const auto target = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(pooled) + 0.5));
  std::vector<std::size_t> order(groups.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k, ++assigned) ++take[order[k]];

  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t k = 0; k < take[g]; ++k) in_train[groups[g][k]] = true;
  for (std::size_t i = 0; i < records.size(); ++i) (in_train[i] ? out.train : out.test).push_back(records[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct WbmsRow {
  Category category;
  std::size_t different, same, image;
};

/// Per-category (Different, Same, Image) counts of the published WBMS corpus.
inline constexpr std::array<WbmsRow, 4> kWbmsCounts{{
    {Category::Kitchen, 780, 125, 171},
    {Category::Leadership, 262, 0, 272},
    {Category::Working, 151, 0, 170},
    {Category::Shopping, 118, 4, 77},
}};

/// Placeholder-text manifest with the WBMS marginal counts. No real meme
/// content is included.
inline std::vector<MemeRecord> make_wbms_mirror() {
  std::vector<MemeRecord> out;
  for (const auto& row : kWbmsCounts) {
    std::string lower(category_name(row.category));
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::size_t serial = 0;
    auto add = [&](TextKind kind) {
      ++serial;
      std::ostringstream id;
      id << "wbms-" << lower << '-' << std::setw(4) << std::setfill('0') << serial;
      MemeRecord r;
      r.id = id.str();
      r.category = row.category;
      r.text_kind = kind;
      if (kind == TextKind::Same) {
        r.caption = r.overlay = "placeholder " + lower + " text " + std::to_string(serial);
      } else if (kind == TextKind::Different) {
        r.caption = "placeholder " + lower + " caption " + std::to_string(serial);
        r.overlay = "placeholder " + lower + " overlay " + std::to_string(serial);
      }
      r.image_ref = "images/" + r.id + ".jpg";
      r.misogyny_label = true;
      out.push_back(std::move(r));
    };
    for (std::size_t i = 0; i < row.different; ++i) add(TextKind::Different);
    for (std::size_t i = 0; i < row.same; ++i) add(TextKind::Same);
    for (std::size_t i = 0; i < row.image; ++i) add(TextKind::Image);
  }
  return out;
}

enum class PlantedSignal { TextAndImage, ImageOnly };

struct PlantedConfig {
  std::size_t count = 64;
  std::size_t patches = 4;
  std::size_t patch_dim = 16;
  double noise = 0.3;
  std::uint64_t seed = 1;
  PlantedSignal signal = PlantedSignal::TextAndImage;
};

struct PlantedMeme {
  MemeRecord record;
  Matrix patches;
};

/// Toy corpus whose label and category are recoverable from planted patterns:
/// category and label marker words in the text (TextAndImage only) and
/// category/label prototype vectors added to every image patch.
inline std::vector<PlantedMeme> make_planted_dataset(const PlantedConfig& cfg) {
  static constexpr std::array<std::array<std::string_view, 2>, kCategoryCount> category_words{{
      {"stove", "recipe"}, {"boardroom", "election"}, {"office", "deadline"}, {"mall", "checkout"}, {"weather", "park"}}};
  static constexpr std::array<std::string_view, 2> label_words{"sneer", "cheer"};  // positive, negative
  static constexpr std::array<std::string_view, 16> filler{"the",  "a",    "picture", "when",  "someone", "says",
                                                           "this", "that", "every",   "day",   "look",    "again",
                                                           "here", "just", "funny",   "moment"};
  Rng rng(cfg.seed);
  auto gaussian_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
  };
  std::array<std::vector<double>, kCategoryCount> cat_proto;
  for (auto& p : cat_proto) p = gaussian_vec(cfg.patch_dim);
  const std::vector<double> label_proto = gaussian_vec(cfg.patch_dim);

  // Balanced labels within each category.
  std::vector<bool> labels(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) labels[i] = ((i / kCategoryCount) % 2) == 0;

  std::vector<PlantedMeme> out;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const auto c = static_cast<Category>(i % kCategoryCount);
    const bool y = labels[i];
    std::vector<std::string_view> words;
    if (cfg.signal == PlantedSignal::TextAndImage) {
      words.push_back(category_words[category_index(c)][rng.index(2)]);
      words.push_back(y ? label_words[0] : label_words[1]);
    }
    const std::size_t n_filler = cfg.signal == PlantedSignal::TextAndImage ? 2 : 4;
    for (std::size_t k = 0; k < n_filler; ++k) words.push_back(filler[rng.index(filler.size())]);
    rng.shuffle(words);
    std::string text;
    for (auto w : words) text += (text.empty() ? "" : " ") + std::string(w);

    PlantedMeme m;
    std::ostringstream id;
    id << "toy-" << std::setw(3) << std::setfill('0') << i;
    m.record.id = id.str();
    m.record.category = c;
    m.record.text_kind = TextKind::Same;
    m.record.caption = m.record.overlay = text;
    m.record.image_ref = "patches/" + m.record.id + ".mme";
    m.record.misogyny_label = y;
    m.patches = Matrix(cfg.patches, cfg.patch_dim);
    for (std::size_t p = 0; p < cfg.patches; ++p)
      for (std::size_t j = 0; j < cfg.patch_dim; ++j)
        m.patches(p, j) = cat_proto[category_index(c)][j] + (y ? 1.0 : -1.0) * label_proto[j] + cfg.noise * rng.normal();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace memesift
