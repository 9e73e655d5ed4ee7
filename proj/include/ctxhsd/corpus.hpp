#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctxhsd {

enum class CorpusName { latent_hatred, mami };

enum class BinaryLabel : int { negative = 0, positive = 1 };

// Order matches the label registry and the multi-class head's output units.
enum class FineLabel : int {
  white_grievance = 0,
  incitement,
  stereotypical,
  inferiority,
  irony,
  threatening,
  other,
};
inline constexpr std::size_t kFineLabelCount = 7;

enum class MisogynyLabel : int { shaming = 0, stereotype, objectification, violence };
inline constexpr std::size_t kMisogynyLabelCount = 4;

// Subset of the four misogyny sub-labels.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::uint8_t bits) : bits_(bits & 0xF) {}

  bool has(MisogynyLabel l) const { return bits_ & (1u << static_cast<int>(l)); }
  void add(MisogynyLabel l) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<int>(l)); }
  bool empty() const { return bits_ == 0; }
  std::uint8_t bits() const { return bits_; }
  std::vector<MisogynyLabel> labels() const;

  friend bool operator==(LabelSet, LabelSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

std::string_view to_string(CorpusName c);
std::string_view to_string(BinaryLabel l);
std::string_view to_string(FineLabel l);
std::string_view to_string(MisogynyLabel l);
CorpusName parse_corpus_name(std::string_view s);
std::optional<FineLabel> parse_fine_label(std::string_view token);
std::optional<MisogynyLabel> parse_misogyny_label(std::string_view token);

struct Post {
  std::string id;
  std::string text;
  std::optional<std::filesystem::path> image_ref;
  BinaryLabel binary_label = BinaryLabel::negative;
  std::optional<FineLabel> fine_label;
  std::optional<LabelSet> multi_labels;
};

struct Corpus {
  CorpusName name = CorpusName::latent_hatred;
  std::vector<Post> items;
  // file -> sha256 of its contents
  std::map<std::string, std::string> provenance;

  std::size_t size() const { return items.size(); }
  // Throws ValueError on the first invariant violation.
  void validate() const;
};

struct SplitPair {
  Corpus train;
  Corpus test;
  double ratio = 0.8;
  std::uint64_t seed = 0;
  // Strata of size one that were forced into train.
  std::vector<std::string> singleton_strata;
};

// TSV with header columns post, class, implicit_class.
Corpus load_latent_hatred(const std::filesystem::path& path);

struct MamiLoadReport {
  std::size_t raw_rows = 0;
  std::vector<std::string> duplicate_ids;  // dropped, later occurrence of an image digest
};

// `annotations` may be empty to search the directory for a known table name.
Corpus load_mami(const std::filesystem::path& dir, const std::filesystem::path& annotations = {},
                 MamiLoadReport* report = nullptr);

// Keeps the first post per image digest; idempotent.
Corpus deduplicate_by_image(const Corpus& corpus, std::vector<std::string>* dropped = nullptr);

std::string stratum_key(const Corpus& corpus, const Post& post);

SplitPair stratified_split(const Corpus& corpus, double ratio, std::uint64_t seed);

// Manifest lines {"id": ..., "partition": "train"|"test"} in corpus order.
std::string split_manifest_jsonl(const SplitPair& split, const Corpus& source);
SplitPair apply_split_manifest(const Corpus& corpus, std::string_view manifest, double ratio,
                               std::uint64_t seed);

struct LevelStats {
  std::string level;  // "binary", "implicit_class", "misogyny_sublabel"
  std::size_t denominator = 0;
  std::vector<std::pair<std::string, std::size_t>> counts;

  double proportion(std::string_view label) const;
  std::size_t count(std::string_view label) const;
};

struct CorpusStats {
  CorpusName corpus = CorpusName::latent_hatred;
  std::size_t total = 0;
  std::vector<LevelStats> levels;

  const LevelStats* level(std::string_view name) const;
  // Markdown table: one header row of class names, counts, percentages.
  std::string to_table() const;
};

CorpusStats corpus_stats(const Corpus& corpus);

// Multi-class task view: implicit posts carrying a fine label.
Corpus implicit_subset(const Corpus& corpus);

}  // namespace ctxhsd
