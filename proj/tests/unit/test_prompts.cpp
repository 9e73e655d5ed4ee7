#include <doctest.h>

#include <set>

#include "ctxhsd/prompts.hpp"
#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"
#include "test_support.hpp"

using namespace ctxhsd;

TEST_CASE("registry matches the golden catalogue byte for byte") {
  const std::string golden = read_file(ctxhsd::testing::source_dir() / "tests/golden/prompt_catalogue.txt");
  CHECK(catalogue_text(PromptRegistry::builtin()) == golden);
}

TEST_CASE("registry holds one template per prompt id") {
  std::set<std::string> ids;
  for (const auto& t : PromptRegistry::builtin().templates()) CHECK(ids.insert(t.id).second);
  const std::set<std::string> expected = {"ocr",          "caption",          "tweet_context",
                                          "entity_context", "meme_context",   "enhance_tweet_ne",
                                          "enhance_tweet_ft", "enhance_meme", "predict_binary_tweet",
                                          "predict_multiclass_tweet", "predict_binary_meme",
                                          "predict_multilabel_meme"};
  CHECK(ids == expected);
  CHECK(PromptRegistry::builtin().at("ocr").expects_image());
  CHECK_FALSE(PromptRegistry::builtin().at("tweet_context").expects_image());
}

TEST_CASE("render binds every slot and nothing else") {
  const auto& reg = PromptRegistry::builtin();
  const ChatRequest r = reg.render("tweet_context", {{"post", "hello there"}});
  CHECK(r.user.find("hello there") != std::string::npos);
  CHECK(r.temperature == 0.0);
  CHECK_THROWS_AS(reg.render("tweet_context", {}), ContractError);
  CHECK_THROWS_AS(reg.render("tweet_context", {{"post", "x"}, {"extra", "y"}}), ContractError);
}

TEST_CASE("cache keys are stable and input-sensitive") {
  const auto& reg = PromptRegistry::builtin();
  const auto a = make_cache_key(reg.render("tweet_context", {{"post", "x"}}), "mock");
  CHECK(a == make_cache_key(reg.render("tweet_context", {{"post", "x"}}), "mock"));
  CHECK(a != make_cache_key(reg.render("tweet_context", {{"post", "y"}}), "mock"));
  CHECK(a != make_cache_key(reg.render("tweet_context", {{"post", "x"}}), "other"));
  CHECK(a.find(' ') == std::string::npos);
}
