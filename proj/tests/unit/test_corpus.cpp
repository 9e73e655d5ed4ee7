#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ctxhsd/corpus.hpp"
#include "ctxhsd/errors.hpp"
#include "test_support.hpp"

using namespace ctxhsd;
using ctxhsd::testing::TempDir;
using ctxhsd::testing::write;

namespace {

Corpus binary_corpus(std::size_t positives, std::size_t negatives) {
  Corpus c;
  for (std::size_t i = 0; i < positives + negatives; ++i) {
    Post p;
    p.id = "p" + std::to_string(i);
    p.text = "text " + std::to_string(i);
    p.binary_label = i < positives ? BinaryLabel::positive : BinaryLabel::negative;
    c.items.push_back(p);
  }
  return c;
}

std::size_t count_label(const Corpus& c, BinaryLabel l) {
  return static_cast<std::size_t>(
      std::count_if(c.items.begin(), c.items.end(), [&](const Post& p) { return p.binary_label == l; }));
}

std::set<std::string> ids(const Corpus& c) {
  std::set<std::string> out;
  for (const auto& p : c.items) out.insert(p.id);
  return out;
}

std::string mami_header() {
  return "file_name\tmisogynous\tshaming\tstereotype\tobjectification\tviolence\tText Transcription\n";
}

}  // namespace

TEST_CASE("latent hatred rows map to binary and fine labels") {
  TempDir dir;
  write(dir / "lh.tsv",
        "post\tclass\timplicit_class\n"
        "a calm post\tnot_hate\t\n"
        "a veiled post\timplicit_hate\tirony\n"
        "an open post\texplicit_hate\t\n");
  const Corpus c = load_latent_hatred(dir / "lh.tsv");
  REQUIRE(c.size() == 3);
  CHECK(c.items[0].binary_label == BinaryLabel::negative);
  CHECK(c.items[1].binary_label == BinaryLabel::positive);
  CHECK(c.items[2].binary_label == BinaryLabel::positive);
  CHECK(c.items[1].fine_label == FineLabel::irony);
  CHECK_FALSE(c.items[2].fine_label.has_value());
  CHECK(c.provenance.count("lh.tsv") == 1);
}

TEST_CASE("latent hatred header-only file is an empty corpus") {
  TempDir dir;
  write(dir / "lh.tsv", "post\tclass\timplicit_class\n");
  CHECK(load_latent_hatred(dir / "lh.tsv").size() == 0);
}

TEST_CASE("latent hatred schema and value errors") {
  TempDir dir;
  write(dir / "nocol.tsv", "post\tclass\nx\tnot_hate\n");
  try {
    load_latent_hatred(dir / "nocol.tsv");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.column() == "implicit_class");
  }
  write(dir / "bad.tsv", "post\tclass\timplicit_class\nx\tnot_hate\t\ny\tmaybe_hate\t\n");
  try {
    load_latent_hatred(dir / "bad.tsv");
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(e.row() == 2);
  }
}

TEST_CASE("mami dedup keeps the first of identical images") {
  TempDir dir;
  for (int i = 1; i <= 4; ++i) write(dir / ("images/m" + std::to_string(i) + ".jpg"), i == 4 ? "img-2" : "img-" + std::to_string(i));
  write(dir / "annotations.tsv", mami_header() +
                                     "m1.jpg\t0\t0\t0\t0\t0\tone\n"
                                     "m2.jpg\t1\t0\t0\t0\t1\ttwo\n"
                                     "m3.jpg\t1\t1\t1\t0\t0\tthree\n"
                                     "m4.jpg\t0\t0\t0\t0\t0\tfour\n");
  MamiLoadReport report;
  const Corpus c = load_mami(dir.path(), {}, &report);
  CHECK(c.size() == 3);
  CHECK(report.raw_rows == 4);
  CHECK(report.duplicate_ids == std::vector<std::string>{"m4"});
  // Violence-only meme.
  CHECK(c.items[1].multi_labels->labels() == std::vector<MisogynyLabel>{MisogynyLabel::violence});
  CHECK(c.items[0].multi_labels->empty());
  // Idempotent.
  CHECK(deduplicate_by_image(c).size() == c.size());
}

TEST_CASE("mami integrity and value errors") {
  TempDir dir;
  write(dir / "images/m1.jpg", "x");
  write(dir / "annotations.tsv", mami_header() + "m1.jpg\t1\t0\t0\t0\t1\tone\nm9.jpg\t0\t0\t0\t0\t0\tgone\n");
  try {
    load_mami(dir.path());
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(e.ids() == std::vector<std::string>{"m9"});
  }
  write(dir / "annotations.tsv", mami_header() + "m1.jpg\t2\t0\t0\t0\t1\tone\n");
  CHECK_THROWS_AS(load_mami(dir.path()), ValueError);
}

TEST_CASE("stratified split rounds half up within each stratum") {
  const Corpus c = binary_corpus(12, 8);
  const SplitPair s = stratified_split(c, 0.8, 7);
  // 12 * 0.8 = 9.6 -> 10, 8 * 0.8 = 6.4 -> 6.
  CHECK(count_label(s.train, BinaryLabel::positive) == 10);
  CHECK(count_label(s.train, BinaryLabel::negative) == 6);
  CHECK(count_label(s.test, BinaryLabel::positive) == 2);
  CHECK(count_label(s.test, BinaryLabel::negative) == 2);

  const SplitPair again = stratified_split(c, 0.8, 7);
  CHECK(ids(again.train) == ids(s.train));
  CHECK(ids(again.test) == ids(s.test));

  std::set<std::string> all = ids(s.train);
  for (const auto& id : ids(s.test)) CHECK(all.insert(id).second);
  CHECK(all.size() == c.size());
}

TEST_CASE("single stratum is a plain 80/20 cut") {
  const SplitPair s = stratified_split(binary_corpus(10, 0), 0.8, 1);
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
}

TEST_CASE("singleton stratum goes to train") {
  Corpus c = binary_corpus(5, 0);
  c.items[0].fine_label = FineLabel::other;
  const SplitPair s = stratified_split(c, 0.5, 3);
  CHECK(ids(s.train).count("p0") == 1);
  CHECK(s.singleton_strata.size() == 1);
}

TEST_CASE("split manifest round-trips") {
  const Corpus c = binary_corpus(6, 4);
  const SplitPair s = stratified_split(c, 0.8, 11);
  const SplitPair back = apply_split_manifest(c, split_manifest_jsonl(s, c), 0.8, 11);
  CHECK(ids(back.train) == ids(s.train));
  CHECK(ids(back.test) == ids(s.test));
}

TEST_CASE("implicit class distribution table") {
  // Counts from the published class distribution table.
  const std::vector<std::pair<FineLabel, std::size_t>> counts = {
      {FineLabel::white_grievance, 1538}, {FineLabel::incitement, 1269}, {FineLabel::stereotypical, 1133},
      {FineLabel::inferiority, 863},      {FineLabel::irony, 797},       {FineLabel::threatening, 666},
      {FineLabel::other, 80}};
  Corpus c;
  std::size_t n = 0;
  for (const auto& [label, k] : counts)
    for (std::size_t i = 0; i < k; ++i) {
      Post p;
      p.id = "lh-" + std::to_string(++n);
      p.text = "t";
      p.binary_label = BinaryLabel::positive;
      p.fine_label = label;
      c.items.push_back(p);
    }
  const CorpusStats s = corpus_stats(c);
  const LevelStats* fine = s.level("implicit_class");
  REQUIRE(fine != nullptr);
  CHECK(fine->denominator == 6346);
  CHECK(fine->count("white_grievance") == 1538);
  CHECK(fine->count("other") == 80);
  // Published percentages are rounded inconsistently in the last digit
  // (1,269 / 6,346 is 19.997%, printed 19.99%), so they are matched to 0.01 points.
  const std::vector<std::pair<const char*, double>> published = {
      {"white_grievance", 24.24}, {"incitement", 19.99}, {"stereotypical", 17.85}, {"inferiority", 13.60},
      {"irony", 12.56},           {"threatening", 10.49}, {"other", 1.26}};
  for (const auto& [name, pct] : published) CHECK(std::abs(100.0 * fine->proportion(name) - pct) <= 0.01);
  CHECK(s.to_table().find("24.24%") != std::string::npos);
}

TEST_CASE("misogyny sub-label distribution table") {
  // 5,500 misogynous memes; sub-label counts from the published table.
  Corpus c;
  c.name = CorpusName::mami;
  const std::array<std::size_t, 4> counts = {1417, 3160, 2549, 1106};  // shaming, stereotype, objectification, violence
  for (std::size_t i = 0; i < 5500; ++i) {
    Post p;
    p.id = "m" + std::to_string(i);
    p.binary_label = BinaryLabel::positive;
    LabelSet s;
    for (std::size_t k = 0; k < 4; ++k)
      if (i < counts[k]) s.add(static_cast<MisogynyLabel>(k));
    p.multi_labels = s;
    c.items.push_back(p);
  }
  const CorpusStats s = corpus_stats(c);
  const LevelStats* sub = s.level("misogyny_sublabel");
  REQUIRE(sub != nullptr);
  CHECK(sub->count("stereotype") == 3160);
  CHECK(sub->denominator == 5500);
  const std::vector<std::pair<const char*, double>> published = {
      {"stereotype", 57.46}, {"objectification", 46.35}, {"shaming", 25.76}, {"violence", 20.11}};
  for (const auto& [name, pct] : published) CHECK(std::abs(100.0 * sub->proportion(name) - pct) <= 0.01);
}

TEST_CASE("empty corpus statistics are zero") {
  const CorpusStats s = corpus_stats(Corpus{});
  CHECK(s.total == 0);
  for (const auto& l : s.levels)
    for (const auto& [name, n] : l.counts) CHECK(n == 0);
}
