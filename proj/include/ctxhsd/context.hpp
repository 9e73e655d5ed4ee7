#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxhsd {

struct EntityMention {
  std::string surface;  // case-folded slice of the source text
  std::string tag;      // PER, ORG, LOC, MISC
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive byte offset
  double confidence = 1.0;

  friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

enum class ContextMode { named_entity, full_text, multimodal, enhance, ocr, caption, prediction };

std::string_view to_string(ContextMode m);
ContextMode parse_context_mode(std::string_view s);

struct ContextRecord {
  std::string post_id;
  ContextMode mode = ContextMode::full_text;
  std::string text;
  std::optional<std::vector<EntityMention>> entities;
  std::string provider_id;
  std::string prompt_id;
  std::string cache_key;
  std::string timestamp;

  // Named-entity posts with no entities carry empty text and no generation.
  bool is_empty_sentinel() const { return text.empty(); }

  friend bool operator==(const ContextRecord&, const ContextRecord&) = default;
};

std::string to_jsonl(const ContextRecord& r);
ContextRecord context_from_json(std::string_view line);

// Append-only, line-delimited record store. Later lines for a key win.
// Writers in one process serialize on a mutex; each record is one write(2)
// on an O_APPEND descriptor, so concurrent processes interleave whole lines.
class ContextCache {
 public:
  struct LoadWarning {
    std::size_t line = 0;
    std::string message;
  };

  // In-memory cache with no backing file.
  ContextCache();
  explicit ContextCache(const std::filesystem::path& path);
  ~ContextCache();
  ContextCache(const ContextCache&) = delete;
  ContextCache& operator=(const ContextCache&) = delete;

  std::optional<ContextRecord> get(std::string_view cache_key) const;
  void put(const ContextRecord& record);
  std::size_t size() const;
  const std::vector<LoadWarning>& load_warnings() const { return warnings_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::unordered_map<std::string, ContextRecord> records_;
  std::vector<LoadWarning> warnings_;
};

}  // namespace ctxhsd
