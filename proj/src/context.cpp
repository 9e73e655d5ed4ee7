#include "ctxhsd/context.hpp"

#include <fcntl.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <nlohmann/json.hpp>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {
constexpr std::array<std::string_view, 7> kModeNames = {"named_entity", "full_text", "multimodal", "enhance",
                                                         "ocr",          "caption",   "prediction"};
}

std::string_view to_string(ContextMode m) { return kModeNames[static_cast<std::size_t>(m)]; }

ContextMode parse_context_mode(std::string_view s) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i)
    if (kModeNames[i] == s) return static_cast<ContextMode>(i);
  throw ValueError("unknown context mode '" + std::string(s) + "'");
}

std::string to_jsonl(const ContextRecord& r) {
  nlohmann::json j = {{"cache_key", r.cache_key}, {"post_id", r.post_id},         {"mode", to_string(r.mode)},
                      {"prompt_id", r.prompt_id}, {"provider_id", r.provider_id}, {"text", r.text},
                      {"timestamp", r.timestamp}};
  if (r.entities) {
    auto arr = nlohmann::json::array();
    for (const auto& e : *r.entities)
      arr.push_back({{"surface", e.surface}, {"tag", e.tag}, {"begin", e.begin}, {"end", e.end}, {"confidence", e.confidence}});
    j["entities"] = std::move(arr);
  }
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

ContextRecord context_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  ContextRecord r;
  r.cache_key = j.at("cache_key").get<std::string>();
  r.post_id = j.at("post_id").get<std::string>();
  r.mode = parse_context_mode(j.at("mode").get<std::string>());
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.provider_id = j.at("provider_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.timestamp = j.value("timestamp", "");
  if (j.contains("entities")) {
    std::vector<EntityMention> ents;
    for (const auto& e : j["entities"])
      ents.push_back({e.at("surface").get<std::string>(), e.at("tag").get<std::string>(), e.at("begin").get<std::size_t>(),
                      e.at("end").get<std::size_t>(), e.value("confidence", 1.0)});
    r.entities = std::move(ents);
  }
  if (r.cache_key.empty()) throw ValueError("record without cache_key");
  return r;
}

ContextCache::ContextCache() = default;

ContextCache::ContextCache(const std::filesystem::path& path) : path_(path) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (std::filesystem::exists(path_)) {
    const std::string raw = read_file(path_);
    std::size_t pos = 0, line_no = 0;
    while (pos < raw.size()) {
      auto nl = raw.find('\n', pos);
      if (nl == std::string::npos) nl = raw.size();
      ++line_no;
      std::string_view line(raw.data() + pos, nl - pos);
      pos = nl + 1;
      if (trim(line).empty()) continue;
      try {
        auto rec = context_from_json(line);
        records_[rec.cache_key] = std::move(rec);
      } catch (const std::exception& e) {
        warnings_.push_back({line_no, e.what()});
        spdlog::warn("{}:{}: skipping corrupt cache record ({})", path_.string(), line_no, e.what());
      }
    }
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw InputError("cannot open cache " + path_.string() + ": " + std::strerror(errno));
  // A torn final line from a crashed writer would glue onto the next record.
  if (!std::filesystem::is_empty(path_)) {
    const std::string raw = read_file(path_);
    if (!raw.empty() && raw.back() != '\n' && ::write(fd_, "\n", 1) != 1)
      throw InputError("cannot repair cache " + path_.string());
  }
}

ContextCache::~ContextCache() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<ContextRecord> ContextCache::get(std::string_view cache_key) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(std::string(cache_key));
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ContextCache::put(const ContextRecord& record) {
  const std::string line = to_jsonl(record);
  std::lock_guard lock(mu_);
  if (fd_ >= 0) {
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const auto n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw InputError("cache write failed: " + std::string(std::strerror(errno)));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }
  records_[record.cache_key] = record;
}

std::size_t ContextCache::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

}  // namespace ctxhsd
