#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxhsd/context.hpp"

namespace ctxhsd {

// One token-level prediction as emitted by a token-classification model:
// entity is "O" or a BIO tag such as "B-PER"; wordpiece continuations
// start with "##".
struct TokenTag {
  std::string word;
  std::string entity;
  std::size_t begin = 0;
  std::size_t end = 0;
  double score = 1.0;
};

class NerBackend {
 public:
  virtual ~NerBackend() = default;
  // Throws BackendError on failure.
  virtual std::vector<TokenTag> tag(std::string_view text) = 0;
};

// Merges BIO token tags into mentions. A token joins the open mention when it
// is a "##" continuation, or an I- tag of the same type separated from the
// mention by whitespace only. Output is ordered by span start and never overlaps.
std::vector<EntityMention> merge_token_tags(std::string_view text, std::span<const TokenTag> tags);

// Requires non-empty text (ValueError otherwise).
std::vector<EntityMention> extract_entities(std::string_view text, NerBackend& backend);

// "surface (TAG)" per line.
std::string render_entities(std::span<const EntityMention> entities);

// Dictionary tagger over normalized tokens, longest phrase first. Loaded from
// a TSV of "phrase<TAB>TAG" lines.
class GazetteerNer : public NerBackend {
 public:
  GazetteerNer() = default;
  static GazetteerNer load(const std::filesystem::path& path);
  void add(std::string_view phrase, std::string tag);
  std::vector<TokenTag> tag(std::string_view text) override;

 private:
  std::unordered_map<std::string, std::string> phrases_;  // space-joined tokens -> tag
  std::size_t max_len_ = 0;
};

}  // namespace ctxhsd
