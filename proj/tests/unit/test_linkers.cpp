#include <doctest.h>

#include <cmath>

#include "ctxhsd/linkers.hpp"
#include "ctxhsd/errors.hpp"
#include "ctxhsd/rng.hpp"

using namespace ctxhsd;

namespace {

const char* kToyTable =
    "3 3\n"
    "/c/en/dog 1 0 0\n"
    "/c/en/cat 0 2 0\n"
    "/c/en/new_york 0 0 3\n"
    "/c/en/york 5 5 5\n"
    "/c/fr/chien 9 9 9\n";

}  // namespace

TEST_CASE("sentence splitting and two-sentence summaries") {
  CHECK(split_sentences("One. Two? Three! Four").size() == 4);
  CHECK(split_sentences("No terminal") == std::vector<std::string>{"No terminal"});
  CHECK(split_sentences("Version 2.0 is out. Yes.").size() == 2);
  CHECK(first_two_sentences("A b. C d. E f.") == "A b. C d.");
}

TEST_CASE("fixture linker") {
  auto linker = FixtureLinker::from_json(R"({
    "berlin": {"title": "Berlin", "summary": "Berlin is the capital of Germany. It has 3.8 million people. It is on the Spree."}
  })");
  CHECK(linker.link("hello world").empty());
  const auto links = linker.link("Flights to Berlin are cheap");
  REQUIRE(links.size() == 1);
  CHECK(links[0].article_title == "Berlin");
  CHECK(links[0].surface == "Berlin");
  CHECK(split_sentences(links[0].summary).size() == 2);
  CHECK(links[0].summary == "Berlin is the capital of Germany. It has 3.8 million people.");
}

TEST_CASE("rel augmentation") {
  CHECK(rel_augment("text", {}) == "text");
  CHECK(rel_augment(rel_augment("text", {}), {}) == rel_augment("text", {}));
  const std::vector<LinkedEntity> links = {{"a", "A", "S1."}, {"b", "B", "S2."}};
  CHECK(rel_augment("t", links) == "t [SEP] S1. S2.");
}

TEST_CASE("rel response parsing") {
  const auto pairs = RelLinker::parse_rel_response(R"([[0, 5, "Trump", "Donald_Trump", 0.9, 0.8, "PER"]])");
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].first == "Trump");
  CHECK(pairs[0].second == "Donald_Trump");
  CHECK(RelLinker::parse_summary_response(R"({"title": "X", "extract": "One. Two. Three."})").find("One.") == 0);
}

TEST_CASE("concept table loading") {
  const auto t = ConceptTable::from_text(kToyTable, 3);
  CHECK(t.size() == 4);
  CHECK(t.find("new_york") != nullptr);
  CHECK(t.find("chien") == nullptr);
  CHECK_THROWS_AS(ConceptTable::from_text("/c/en/dog 1 2\n", 3), ValueError);
}

TEST_CASE("concept vectors on a 3-dim toy table") {
  const auto t = ConceptTable::from_text(kToyTable, 3);
  // Single match: unit-normalized vec(dog).
  CHECK(conceptnet_vector("a dog", t).isApprox(Eigen::Vector3d(1, 0, 0)));
  // dog + cat: mean (0.5, 1, 0), norm sqrt(1.25).
  const Eigen::VectorXd v = conceptnet_vector("dog and cat", t);
  const double n = std::sqrt(1.25);
  CHECK(v.isApprox(Eigen::Vector3d(0.5 / n, 1.0 / n, 0)));
  // No match: zeros, not normalized.
  CHECK(conceptnet_vector("nothing here", t).isZero());
  // Longest first: "new york" consumes "york".
  const auto m = match_concepts("new york dog", t);
  REQUIRE(m.size() == 2);
  CHECK(m[0].key == "new_york");
  CHECK(m[0].token_count == 2);
  CHECK(m[1].first_token == 2);
}

TEST_CASE("concept matching never reuses a token and the norm is 0 or 1") {
  const auto t = ConceptTable::from_text(kToyTable, 3);
  const std::vector<std::string> vocab = {"dog", "cat", "new", "york", "the", "a"};
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t n = 1 + rng.bounded(8);
    for (std::size_t i = 0; i < n; ++i) text += vocab[rng.bounded(vocab.size())] + " ";
    std::size_t next = 0;
    for (const auto& m : match_concepts(text, t)) {
      CHECK(m.first_token >= next);
      next = m.first_token + m.token_count;
    }
    const double norm = conceptnet_vector(text, t).norm();
    CHECK((norm == 0.0 || std::abs(norm - 1.0) < 1e-6));
  }
}
