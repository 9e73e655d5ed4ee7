#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxhsd/provider.hpp"

namespace ctxhsd {

struct LinkedEntity {
  std::string surface;
  std::string article_title;
  std::string summary;  // at most two sentences

  friend bool operator==(const LinkedEntity&, const LinkedEntity&) = default;
};

// Sentence boundary: '.', '?' or '!' followed by whitespace (or end of text).
std::vector<std::string> split_sentences(std::string_view text);
std::string first_two_sentences(std::string_view text);

class EntityLinker {
 public:
  virtual ~EntityLinker() = default;
  // Ordered by first occurrence. Throws BackendError when the backend is unavailable.
  virtual std::vector<LinkedEntity> link(std::string_view text) = 0;
};

// Offline table of surface -> (title, summary), matched longest phrase first
// over normalized tokens. Unknown surfaces are simply not linked.
class FixtureLinker : public EntityLinker {
 public:
  struct Entry {
    std::string title;
    std::string summary;
  };
  FixtureLinker() = default;
  // JSON object: { "<surface>": {"title": ..., "summary": ...}, ... }
  static FixtureLinker load(const std::filesystem::path& path);
  static FixtureLinker from_json(std::string_view json_text);
  void add(std::string_view surface, Entry entry);
  std::vector<LinkedEntity> link(std::string_view text) override;

 private:
  std::unordered_map<std::string, Entry> entries_;
  std::size_t max_len_ = 0;
};

struct RelLinkerOptions {
  std::string rel_url = "https://rel.cs.ru.nl/api";
  std::string summary_url = "https://en.wikipedia.org/api/rest_v1/page/summary/";
  RetryPolicy retry{};
  double rate_per_second = 2.0;
};

// Live client for a REL-style entity-linking endpoint plus Wikipedia page summaries.
class RelLinker : public EntityLinker {
 public:
  explicit RelLinker(RelLinkerOptions options);
  std::vector<LinkedEntity> link(std::string_view text) override;

  // (surface, title) pairs from a REL response body: [[start, len, mention, entity, ...], ...].
  static std::vector<std::pair<std::string, std::string>> parse_rel_response(std::string_view body);
  static std::string parse_summary_response(std::string_view body);

 private:
  std::string fetch_summary(const std::string& title);

  RelLinkerOptions options_;
  TokenBucket bucket_;
  Rng rng_{0};
  std::mutex mu_;
  std::unordered_map<std::string, std::string> summary_cache_;
};

// Empty link list returns post_text unchanged; otherwise
// post_text + " [SEP] " + summaries joined by single spaces.
std::string rel_augment(std::string_view post_text, std::span<const LinkedEntity> links);

inline constexpr std::size_t kConceptDim = 300;

class ConceptTable {
 public:
  // Text format: optional "count dim" header, then one concept per line:
  // key followed by dim space-separated reals. Keys such as /c/en/new_york
  // are reduced to new_york; other languages are skipped.
  static ConceptTable load(const std::filesystem::path& path, std::size_t expected_dim = kConceptDim);
  static ConceptTable from_text(std::string_view text, std::size_t expected_dim = kConceptDim);

  void add(std::string key, Eigen::VectorXd vec);
  const Eigen::VectorXd* find(std::string_view key) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::size_t dim_ = kConceptDim;
  std::unordered_map<std::string, Eigen::VectorXd> table_;
};

struct ConceptMatch {
  std::size_t first_token = 0;
  std::size_t token_count = 0;
  std::string key;
};

// Greedy left-to-right matching, trying 3-, 2-, then 1-grams at each position;
// matched tokens are consumed.
std::vector<ConceptMatch> match_concepts(std::string_view text, const ConceptTable& table);

// Mean of matched vectors, L2-normalized. Zero matches give the zero vector.
Eigen::VectorXd conceptnet_vector(std::string_view text, const ConceptTable& table);

}  // namespace ctxhsd
