#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "memesift/dataset.hpp"
#include "memesift/random.hpp"

using namespace memesift;

namespace {

const char* kFixture =
    R"({"id":"a1","category":"Kitchen","text_kind":"Different","caption":"make me a sandwich","overlay":"sure","image_ref":"img/a1.png","misogyny_label":true}
{"id":"a2","category":"Leadership","text_kind":"Image","caption":"","overlay":"","image_ref":"img/a2.png","misogyny_label":null}

{"id":"a3","category":"Working","text_kind":"Same","caption":"monday again","overlay":"monday again","image_ref":"img/a3.png","misogyny_label":false}
{"id":"a4","category":"Shopping","text_kind":"Different","caption":"","overlay":"sale!","image_ref":"img/a4.png"}
)";

std::vector<MemeRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in);
}

// Independent step-by-step Fleiss κ used as the oracle.
double kappa_oracle(const std::vector<std::vector<int>>& m) {
  const int N = static_cast<int>(m.size());
  int n = 0;
  for (int v : m[0]) n += v;
  std::vector<double> p_i;
  for (const auto& row : m) {
    int agree_pairs = 0;
    for (int v : row) agree_pairs += v * (v - 1);
    p_i.push_back(static_cast<double>(agree_pairs) / (n * (n - 1)));
  }
  double p_bar = 0;
  for (double p : p_i) p_bar += p;
  p_bar /= N;
  double p_e = 0;
  for (std::size_t j = 0; j < m[0].size(); ++j) {
    int col = 0;
    for (const auto& row : m) col += row[j];
    const double pj = static_cast<double>(col) / (N * n);
    p_e += pj * pj;
  }
  return (p_bar - p_e) / (1 - p_e);
}

RatingsMatrix to_ratings(const std::vector<std::vector<int>>& m) {
  RatingsMatrix r;
  for (const auto& row : m) r.counts.emplace_back(row.begin(), row.end());
  return r;
}

MemeRecord rec(std::string id, Category c) {
  MemeRecord r;
  r.id = std::move(id);
  r.category = c;
  r.text_kind = TextKind::Same;
  r.caption = "x";
  return r;
}

}  // namespace

TEST(Manifest, FixtureFieldsRoundTrip) {
  const auto records = parse(kFixture);
  ASSERT_EQ(records.size(), 4u);
  EXPECT_EQ(records[0].id, "a1");
  EXPECT_EQ(records[0].category, Category::Kitchen);
  EXPECT_EQ(records[0].text_kind, TextKind::Different);
  EXPECT_EQ(records[0].caption, "make me a sandwich");
  EXPECT_EQ(records[0].misogyny_label, std::optional<bool>(true));
  EXPECT_EQ(records[1].text_kind, TextKind::Image);
  EXPECT_FALSE(records[1].misogyny_label.has_value());
  EXPECT_EQ(records[2].misogyny_label, std::optional<bool>(false));
  EXPECT_FALSE(records[3].misogyny_label.has_value());
  EXPECT_EQ(records[3].image_ref, "img/a4.png");

  std::ostringstream out;
  write_manifest(out, records);
  EXPECT_EQ(parse(out.str()), records);
}

TEST(Manifest, MemeTextCombinesCaptionAndOverlay) {
  const auto records = parse(kFixture);
  EXPECT_EQ(meme_text(records[0]), "make me a sandwich sure");
  EXPECT_EQ(meme_text(records[1]), "");
  EXPECT_EQ(meme_text(records[2]), "monday again");
  EXPECT_EQ(meme_text(records[3]), "sale!");
}

TEST(Manifest, EmptyFileIsEmptyList) { EXPECT_TRUE(parse("").empty()); }

TEST(Manifest, MalformedLineReportsLineNumber) {
  const std::string text = std::string(kFixture) + "{\"id\": broken\n";
  try {
    parse(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 6u);
  }
}

TEST(Manifest, RejectsInvariantViolations) {
  EXPECT_THROW(parse(R"({"id":"x","category":"Kitchen","text_kind":"Image","caption":"hi"})"), ValidationError);
  EXPECT_THROW(parse(R"({"id":"x","category":"Kitchen","text_kind":"Same"}
{"id":"x","category":"Working","text_kind":"Same"})"),
               ValidationError);
  EXPECT_THROW(parse(R"({"id":"x","category":"Cooking","text_kind":"Same"})"), ParseError);
  EXPECT_THROW(parse(R"({"category":"Kitchen","text_kind":"Same"})"), ParseError);
  EXPECT_THROW(parse(R"({"id":"x","category":"Kitchen","text_kind":"Same","caption":5})"), ParseError);
  EXPECT_THROW(parse(R"(["not","an","object"])"), ParseError);
}

TEST(Manifest, MissingFileIsIoError) { EXPECT_THROW(load_manifest("/nonexistent/m.jsonl"), IoError); }

TEST(Manifest, SaveLoadIdentity) {
  const auto records = make_wbms_mirror();
  const auto path = std::filesystem::temp_directory_path() / "memesift_manifest_rt.jsonl";
  save_manifest(path, records);
  EXPECT_EQ(load_manifest(path), records);
  std::filesystem::remove(path);
}

// ---------------------------------------------------------------------------
// Table 1 statistics

TEST(Stats, WbmsMirrorReproducesTableOne) {
  const DatasetStats s = compute_stats(make_wbms_mirror());
  EXPECT_EQ(s.total, 2130u);
  const auto& k = s[Category::Kitchen];
  EXPECT_EQ(k.count, 1076u);
  EXPECT_EQ(k.different, 780u);
  EXPECT_EQ(k.same, 125u);
  EXPECT_EQ(k.image, 171u);
  EXPECT_DOUBLE_EQ(k.proportion, 0.51);
  const auto& l = s[Category::Leadership];
  EXPECT_EQ(l.count, 534u);
  EXPECT_EQ(l.different, 262u);
  EXPECT_EQ(l.same, 0u);
  EXPECT_EQ(l.image, 272u);
  EXPECT_DOUBLE_EQ(l.proportion, 0.25);
  const auto& w = s[Category::Working];
  EXPECT_EQ(w.count, 321u);
  EXPECT_EQ(w.different, 151u);
  EXPECT_EQ(w.image, 170u);
  EXPECT_DOUBLE_EQ(w.proportion, 0.15);
  const auto& sh = s[Category::Shopping];
  EXPECT_EQ(sh.count, 199u);
  EXPECT_EQ(sh.different, 118u);
  EXPECT_EQ(sh.same, 4u);
  EXPECT_EQ(sh.image, 77u);
  EXPECT_DOUBLE_EQ(sh.proportion, 0.09);
  EXPECT_EQ(s.total_different, 1311u);
  EXPECT_EQ(s.total_same, 129u);
  EXPECT_EQ(s.total_image, 690u);
}

TEST(Stats, ShippedManifestMatchesGenerator) {
  EXPECT_EQ(load_manifest(std::string(MEMESIFT_DATA_DIR) + "/wbms_synthetic.jsonl"), make_wbms_mirror());
}

TEST(Stats, SingleRecordHasProportionOne) {
  const DatasetStats s = compute_stats({rec("a", Category::Kitchen)});
  EXPECT_DOUBLE_EQ(s[Category::Kitchen].proportion, 1.0);
}

TEST(Stats, EmptyIsValidationError) { EXPECT_THROW(compute_stats({}), ValidationError); }

TEST(Stats, TotalsAndProportionSumProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<MemeRecord> records;
    const std::size_t n = 1 + rng.index(60);
    for (std::size_t i = 0; i < n; ++i) {
      MemeRecord r = rec("r" + std::to_string(i), static_cast<Category>(rng.index(kCategoryCount)));
      r.text_kind = static_cast<TextKind>(rng.index(3));
      if (r.text_kind == TextKind::Image) r.caption.clear();
      records.push_back(r);
    }
    const DatasetStats s = compute_stats(records);
    std::size_t total = 0;
    double prop = 0.0;
    for (Category c : kAllCategories) {
      const auto& row = s[c];
      EXPECT_EQ(row.different + row.same + row.image, row.count);
      total += row.count;
      prop += row.proportion;
    }
    EXPECT_EQ(total, n);
    EXPECT_NEAR(prop, 1.0, 0.01 + 1e-9);
  }
}

TEST(Stats, TableAndCsvAgree) {
  const DatasetStats s = compute_stats(make_wbms_mirror());
  const std::string csv = format_stats_csv(s);
  EXPECT_NE(csv.find("Kitchen,1076,780,125,171,0.51\n"), std::string::npos);
  EXPECT_NE(csv.find("Shopping,199,118,4,77,0.09\n"), std::string::npos);
  EXPECT_EQ(csv.find("Other"), std::string::npos);
  const std::string table = format_stats_table(s);
  EXPECT_NE(table.find("(780, 125, 171)"), std::string::npos);
  EXPECT_NE(table.find("(1311, 129, 690)"), std::string::npos);
  EXPECT_NE(table.find("2130"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Fleiss κ

TEST(FleissKappa, UnanimousItemsGiveOne) {
  EXPECT_EQ(fleiss_kappa(to_ratings({{3, 0}, {0, 3}})), 1.0);
}

TEST(FleissKappa, TwoByTwoMatchesManualOracle) {
  const std::vector<std::vector<int>> m{{2, 1}, {1, 2}};
  // P_i = (4 + 1 − 3) / 6 = 1/3, P̄_e = 0.5, so κ = (1/3 − 1/2) / (1/2) = −1/3.
  EXPECT_NEAR(kappa_oracle(m), -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(fleiss_kappa(to_ratings(m)), kappa_oracle(m), 1e-12);
}

TEST(FleissKappa, DegenerateSingleCategory) {
  EXPECT_THROW(fleiss_kappa(to_ratings({{3, 0}, {3, 0}})), DegenerateAgreementError);
}

TEST(FleissKappa, InputValidation) {
  EXPECT_THROW(fleiss_kappa(to_ratings({{2, 1}, {1, 1}})), ValidationError);
  EXPECT_THROW(fleiss_kappa(to_ratings({{1, 0}, {0, 1}})), ValidationError);
  EXPECT_THROW(fleiss_kappa(RatingsMatrix{}), ValidationError);
}

TEST(FleissKappa, RandomMatricesMatchOracleAndInvariants) {
  Rng rng(19);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t items = 2 + rng.index(8);
    const std::size_t cats = 2 + rng.index(4);
    const int raters = 2 + static_cast<int>(rng.index(5));
    std::vector<std::vector<int>> m(items, std::vector<int>(cats, 0));
    for (auto& row : m)
      for (int r = 0; r < raters; ++r) ++row[rng.index(cats)];
    std::set<std::size_t> used;
    bool unanimous = true;
    for (const auto& row : m) {
      for (std::size_t j = 0; j < cats; ++j) {
        if (row[j] > 0) used.insert(j);
        if (row[j] != 0 && row[j] != raters) unanimous = false;
      }
    }
    if (used.size() < 2) {
      EXPECT_THROW(fleiss_kappa(to_ratings(m)), DegenerateAgreementError);
      continue;
    }
    const double k = fleiss_kappa(to_ratings(m));
    EXPECT_LE(k, 1.0 + 1e-12);
    EXPECT_EQ(k == 1.0, unanimous);
    if (!unanimous) EXPECT_NEAR(k, kappa_oracle(m), 1e-12);

    auto items_permuted = m;
    rng.shuffle(items_permuted);
    EXPECT_NEAR(fleiss_kappa(to_ratings(items_permuted)), k, 1e-12);

    std::vector<std::size_t> perm(cats);
    for (std::size_t j = 0; j < cats; ++j) perm[j] = j;
    rng.shuffle(perm);
    auto cols_permuted = m;
    for (std::size_t i = 0; i < items; ++i)
      for (std::size_t j = 0; j < cats; ++j) cols_permuted[i][j] = m[i][perm[j]];
    EXPECT_NEAR(fleiss_kappa(to_ratings(cols_permuted)), k, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Annotator summary

TEST(AnnotatorSummary, PaperScoresAverage) {
  const AnnotatorSummary s = annotator_summary(
      {{"Annotator 1", 4.7, 4.5, 0.82}, {"Annotator 2", 4.6, 4.6, 0.79}, {"Annotator 3", 4.8, 4.7, 0.84}});
  EXPECT_NEAR(s.average.accuracy, 4.7, 0.005);
  EXPECT_NEAR(s.average.consistency, 4.6, 0.005);
  EXPECT_NEAR(s.average.kappa, 0.82, 0.005);
  const std::string table = format_annotator_table(s);
  EXPECT_NE(table.find("Average"), std::string::npos);
  EXPECT_NE(table.find("0.82"), std::string::npos);
}

TEST(AnnotatorSummary, SingleAnnotatorAndRangeChecks) {
  const AnnotatorSummary s = annotator_summary({{"solo", 3.0, 2.0, 0.5}});
  EXPECT_EQ(s.average.accuracy, 3.0);
  EXPECT_EQ(s.average.consistency, 2.0);
  EXPECT_EQ(s.average.kappa, 0.5);
  EXPECT_THROW(annotator_summary({{"a", 5.1, 4.0, 0.5}}), ValidationError);
  EXPECT_THROW(annotator_summary({{"a", 4.0, 0.5, 0.5}}), ValidationError);
  EXPECT_THROW(annotator_summary({{"a", 4.0, 4.0, 1.5}}), ValidationError);
  EXPECT_THROW(annotator_summary({}), ValidationError);
}

// ---------------------------------------------------------------------------
// Split

TEST(Split, TenRecordsTwoCategoriesSplitFiveFive) {
  std::vector<MemeRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(rec("k" + std::to_string(i), Category::Kitchen));
  for (int i = 0; i < 5; ++i) records.push_back(rec("w" + std::to_string(i), Category::Working));
  const SplitResult s = split(records, 3, 0.5);
  EXPECT_EQ(s.train.size(), 5u);
  EXPECT_EQ(s.test.size(), 5u);
  const auto kitchen_train = std::count_if(s.train.begin(), s.train.end(),
                                           [](const MemeRecord& r) { return r.category == Category::Kitchen; });
  EXPECT_TRUE(kitchen_train == 2 || kitchen_train == 3);
}

TEST(Split, PlantedSixtyFourSplitsEvenly) {
  const auto memes = make_planted_dataset({});
  std::vector<MemeRecord> records;
  for (const auto& m : memes) records.push_back(m.record);
  const SplitResult s = split(records, 7, 0.5);
  EXPECT_EQ(s.train.size(), 32u);
  EXPECT_EQ(s.test.size(), 32u);
}

TEST(Split, PartitionDeterminismAndStratificationProperty) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<MemeRecord> records;
    const std::size_t n = 2 + rng.index(50);
    for (std::size_t i = 0; i < n; ++i)
      records.push_back(rec("r" + std::to_string(i), static_cast<Category>(rng.index(kCategoryCount))));
    const double f = 0.1 + 0.8 * rng.uniform();
    const std::uint64_t seed = rng.index(1000);
    const SplitResult s = split(records, seed, f);
    const SplitResult again = split(records, seed, f);
    EXPECT_EQ(s.train, again.train);
    EXPECT_EQ(s.test, again.test);

    std::multiset<std::string> ids;
    for (const auto& r : s.train) ids.insert(r.id);
    for (const auto& r : s.test) ids.insert(r.id);
    EXPECT_EQ(ids.size(), n);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), n);

    for (Category c : kAllCategories) {
      auto in = [&](const std::vector<MemeRecord>& v) {
        return static_cast<double>(
            std::count_if(v.begin(), v.end(), [&](const MemeRecord& r) { return r.category == c; }));
      };
      const double total = in(s.train) + in(s.test);
      if (total < 2) continue;
      EXPECT_LT(std::abs(in(s.train) - f * total), 1.0 + 1e-9) << "fraction " << f << " total " << total;
    }
  }
}

TEST(Split, SingletonCategoryWarnsAndGoesToTrain) {
  std::vector<MemeRecord> records{rec("a", Category::Kitchen), rec("b", Category::Kitchen),
                                  rec("c", Category::Shopping)};
  const SplitResult s = split(records, 1, 0.5);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("Shopping"), std::string::npos);
  EXPECT_TRUE(std::any_of(s.train.begin(), s.train.end(), [](const MemeRecord& r) { return r.id == "c"; }));
}

TEST(Split, RejectsFractionOutsideOpenInterval) {
  EXPECT_THROW(split({}, 1, 0.0), ArgumentError);
  EXPECT_THROW(split({}, 1, 1.0), ArgumentError);
}
