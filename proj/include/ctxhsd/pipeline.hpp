#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ctxhsd/classify.hpp"
#include "ctxhsd/context.hpp"
#include "ctxhsd/corpus.hpp"
#include "ctxhsd/encoder.hpp"
#include "ctxhsd/errors.hpp"
#include "ctxhsd/evaluate.hpp"
#include "ctxhsd/linkers.hpp"
#include "ctxhsd/ner.hpp"
#include "ctxhsd/provider.hpp"

namespace ctxhsd {

// More generations failed than the configured threshold allows.
class ProviderFailure : public Error {
 public:
  ProviderFailure(std::size_t failed, std::size_t attempted)
      : Error(std::to_string(failed) + " of " + std::to_string(attempted) + " generations failed"),
        failed_(failed),
        attempted_(attempted) {}
  std::size_t failed() const { return failed_; }
  std::size_t attempted() const { return attempted_; }

 private:
  std::size_t failed_, attempted_;
};

// One cell of the experiment matrix. `method` is a Strategy name or "llm"
// for the direct-prediction baseline.
struct ExperimentKey {
  CorpusName corpus = CorpusName::latent_hatred;
  Task task = Task::binary;
  std::string method;
  std::optional<ContextMode> context;

  bool is_llm() const { return method == "llm"; }
  Strategy strategy() const { return parse_strategy(method); }
  // "<strategy>" or "<strategy>.<context>"
  std::string representation_name() const;
  // "<corpus>.<task>.<representation_name>"
  std::string name() const;
  LlmTask llm_task() const;

  friend bool operator==(const ExperimentKey&, const ExperimentKey&) = default;
};

// Throws ConfigError for combinations outside the experiment matrix, e.g.
// named-entity context on memes.
void validate_experiment(const ExperimentKey& key);

struct ProviderSettings {
  std::string kind = "mock";  // mock | echo | openai_compatible
  HttpProviderOptions http;
  RetryPolicy retry;
  std::size_t parallelism = 4;
  double rate_per_second = 0.0;
  double failure_threshold = 0.05;
};

struct EncoderSettings {
  std::string kind = "hashing";  // hashing | lookup
  HashingEncoder::Options hashing;
  std::filesystem::path lookup_path;
  std::string lookup_id = "lookup";
};

struct RunConfig {
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> latent_hatred_path;
  std::optional<std::filesystem::path> mami_dir;
  std::optional<std::filesystem::path> mami_annotations;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;
  ProviderSettings provider;
  std::filesystem::path cache_path;
  EncoderSettings encoder;
  std::optional<std::filesystem::path> gazetteer;
  std::string linker_kind;  // "", fixture, rel
  std::optional<std::filesystem::path> linker_fixture;
  RelLinkerOptions rel;
  std::optional<std::filesystem::path> concepts_path;
  std::size_t concept_dim = kConceptDim;
  std::vector<ExperimentKey> experiments;
  MLPConfig classifier;
  std::size_t runs = 5;
  std::uint64_t seed_base = 0;
  std::vector<std::pair<std::string, std::string>> comparisons;

  // Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
  // Every referenced input path exists and every experiment is valid.
  void validate() const;
};

nlohmann::json post_to_json(const Post& p);
Post post_from_json(const nlohmann::json& j);

std::string context_index_jsonl(const std::vector<ContextRecord>& records);
std::map<std::string, ContextRecord> read_context_index(const std::filesystem::path& path);

// Stage driver. Each command writes under config.output_dir, skips work whose
// inputs are unchanged (reporting "up-to-date"), and throws UpstreamMissing
// when an earlier command has not run.
class Pipeline {
 public:
  struct Selection {
    std::vector<std::string> strategies;  // method names; empty = all
    std::vector<Task> tasks;              // empty = all
  };

  Pipeline(RunConfig config, std::ostream& log);
  ~Pipeline();

  void set_selection(Selection s) { selection_ = std::move(s); }
  // Replaces the configured provider, e.g. with a test double.
  void set_provider(std::unique_ptr<LLMProvider> provider);

  void ingest();
  // mode: named_entity | full_text | multimodal | enhance | prediction; empty = all needed.
  void gen_context(const std::optional<std::string>& mode = std::nullopt);
  void represent();
  void train();
  void eval();
  void compare(const std::optional<std::string>& a = std::nullopt, const std::optional<std::string>& b = std::nullopt);
  void plot();

  std::vector<ExperimentKey> selected_experiments() const;
  const RunConfig& config() const { return config_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  RunConfig config_;
  std::ostream& log_;
  Selection selection_;
};

// Exit status for an exception escaping a command: 1 validation,
// 2 upstream missing, 3 provider failure threshold.
int exit_code_for(const std::exception& e);

}  // namespace ctxhsd
