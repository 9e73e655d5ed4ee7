#include <doctest.h>

#include <fstream>
#include <sstream>

#include "ctxhsd/pipeline.hpp"
#include "test_support.hpp"

using namespace ctxhsd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config(const fs::path& out) {
  return json{
      {"output_dir", out.string()},
      {"corpora", {{"latent_hatred", {{"path", "latent_hatred_50.tsv"}}}}},
      {"provider", {{"kind", "mock"}, {"parallelism", 2}, {"retry", {{"max_attempts", 1}}}}},
      {"encoder", {{"kind", "hashing"}, {"dim", 64}, {"seed", 3}}},
      {"ner", {{"gazetteer", "gazetteer.tsv"}}},
      {"classifier", {{"epochs", 3}, {"hidden_dims", {16, 16, 16}}}},
      {"runs", 2},
      {"matrix",
       {{{"corpus", "latent_hatred"},
         {"tasks", {"binary"}},
         {"methods", {"zero_context", "append_embed", "llm"}},
         {"contexts", {"full_text"}}}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("experiment keys and the combination rules") {
  ExperimentKey k{CorpusName::latent_hatred, Task::multiclass, "append_embed", ContextMode::named_entity};
  CHECK(k.name() == "latent_hatred.multiclass.append_embed.named_entity");
  CHECK_NOTHROW(validate_experiment(k));

  ExperimentKey ne_mami{CorpusName::mami, Task::binary, "append_embed", ContextMode::named_entity};
  CHECK_THROWS_AS(validate_experiment(ne_mami), ConfigError);
  ExperimentKey mc_mami{CorpusName::mami, Task::multiclass, "zero_context", std::nullopt};
  CHECK_THROWS_AS(validate_experiment(mc_mami), ConfigError);
  ExperimentKey ml_lh{CorpusName::latent_hatred, Task::multilabel, "zero_context", std::nullopt};
  CHECK_THROWS_AS(validate_experiment(ml_lh), ConfigError);
  ExperimentKey no_ctx{CorpusName::latent_hatred, Task::binary, "append_embed", std::nullopt};
  CHECK_THROWS_AS(validate_experiment(no_ctx), ConfigError);
}

TEST_CASE("config validation") {
  testing::TempDir tmp;
  auto j = small_config(tmp.path() / "out");
  CHECK_NOTHROW(RunConfig::from_json(j, testing::fixture_dir()).validate());

  auto missing = j;
  missing["corpora"]["latent_hatred"]["path"] = "nope.tsv";
  CHECK_THROWS_AS(RunConfig::from_json(missing, testing::fixture_dir()).validate(), ConfigError);

  auto bad = j;
  bad["matrix"][0]["corpus"] = "mami";
  CHECK_THROWS_AS(RunConfig::from_json(bad, testing::fixture_dir()).validate(), ConfigError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(UpstreamMissing("x", "ingest")) == 2);
  CHECK(exit_code_for(ProviderFailure(3, 10)) == 3);
  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("stages refuse to run before their inputs exist") {
  testing::TempDir tmp;
  std::ostringstream log;
  Pipeline p(RunConfig::from_json(small_config(tmp.path() / "out"), testing::fixture_dir()), log);
  try {
    p.represent();
    FAIL("expected UpstreamMissing");
  } catch (const UpstreamMissing& e) {
    CHECK(exit_code_for(e) == 2);
    CHECK(e.producer() == "ingest");
  }
  p.ingest();
  CHECK_THROWS_AS(p.represent(), UpstreamMissing);
  CHECK_THROWS_AS(p.train(), UpstreamMissing);
  CHECK_THROWS_AS(p.eval(), UpstreamMissing);
}

TEST_CASE("a small end-to-end run") {
  testing::TempDir tmp;
  const fs::path out = tmp.path() / "out";
  std::ostringstream log;
  Pipeline p(RunConfig::from_json(small_config(out), testing::fixture_dir()), log);
  p.ingest();
  p.gen_context();
  p.represent();
  p.train();
  p.eval();
  p.compare();
  p.plot();

  CHECK(fs::exists(out / "ingest/latent_hatred/corpus.jsonl"));
  CHECK(fs::exists(out / "contexts/latent_hatred/full_text.jsonl"));
  CHECK(fs::exists(out / "models/latent_hatred.binary.append_embed.full_text/seed-1.model"));
  const auto agg = json::parse(slurp(out / "reports/latent_hatred.binary.zero_context/aggregate.json"));
  CHECK(agg.dump().find("macro_f1") != std::string::npos);
  CHECK(fs::exists(out / "reports/summary.md"));
  CHECK(fs::exists(out / "compare/latent_hatred.binary.append_embed.full_text__vs__latent_hatred.binary.zero_context.json"));
  CHECK(fs::exists(out / "plots/latent_hatred.binary.zero_context.confusion.svg"));

  const auto contexts = read_context_index(out / "contexts/latent_hatred/full_text.jsonl");
  CHECK(contexts.size() == 50);

  // Unchanged inputs are skipped on a second pass.
  std::ostringstream again;
  Pipeline q(RunConfig::from_json(small_config(out), testing::fixture_dir()), again);
  q.ingest();
  q.gen_context();
  q.represent();
  q.train();
  CHECK(again.str().find("up-to-date") != std::string::npos);
  CHECK(again.str().find(" 0 generated") != std::string::npos);

  // Comparing an experiment with itself leaves nothing off the diagonal.
  q.eval();
  q.compare("latent_hatred.binary.zero_context", "latent_hatred.binary.zero_context");
  const auto self = json::parse(
      slurp(out / "compare/latent_hatred.binary.zero_context__vs__latent_hatred.binary.zero_context.json"));
  CHECK(self["a_correct_b_wrong"]["count"] == 0);
  CHECK(self["a_wrong_b_correct"]["count"] == 0);
}

TEST_CASE("gen-context stops with ProviderFailure past the threshold") {
  testing::TempDir tmp;
  std::ostringstream log;
  Pipeline p(RunConfig::from_json(small_config(tmp.path() / "out"), testing::fixture_dir()), log);
  p.ingest();
  p.set_provider(std::make_unique<ScriptedProvider>("broken"));
  try {
    p.gen_context("full_text");
    FAIL("expected ProviderFailure");
  } catch (const ProviderFailure& e) {
    CHECK(e.failed() == 50);
    CHECK(exit_code_for(e) == 3);
  }
}

TEST_CASE("named-entity generation on memes is rejected") {
  testing::TempDir tmp;
  auto j = small_config(tmp.path() / "out");
  j["corpora"]["mami"] = {{"dir", "mami"}, {"annotations", "mami/annotations.tsv"}};
  j["matrix"] = {{{"corpus", "mami"}, {"tasks", {"binary"}}, {"methods", {"zero_context"}}, {"contexts", json::array()}}};
  std::ostringstream log;
  Pipeline p(RunConfig::from_json(j, testing::fixture_dir()), log);
  p.ingest();
  CHECK_THROWS_AS(p.gen_context("named_entity"), ConfigError);
}
