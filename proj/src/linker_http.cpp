// Eigen must precede httplib: resolv.h defines a _res macro.
#include "ctxhsd/linkers.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

std::pair<std::string, std::string> origin_and_path(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("url lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string http_call(const std::string& url, const std::string* post_body) {
  auto [origin, path] = origin_and_path(url);
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(20));
  client.set_read_timeout(std::chrono::seconds(60));
  auto res = post_body ? client.Post(path, *post_body, "application/json") : client.Get(path);
  if (!res) throw BackendError("linker request failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500)
    throw BackendError("linker returned HTTP " + std::to_string(res->status), true);
  if (res->status == 404) return {};
  if (res->status != 200) throw BackendError("linker returned HTTP " + std::to_string(res->status), false);
  return res->body;
}

}  // namespace

RelLinker::RelLinker(RelLinkerOptions options)
    : options_(std::move(options)), bucket_(options_.rate_per_second > 0 ? options_.rate_per_second : 1e9, 1.0) {}

std::vector<std::pair<std::string, std::string>> RelLinker::parse_rel_response(std::string_view body) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto j = nlohmann::json::parse(body);
  if (!j.is_array()) throw BackendError("unexpected linker response shape", false);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() < 4) continue;
    out.emplace_back(row[2].get<std::string>(), row[3].get<std::string>());
  }
  return out;
}

std::string RelLinker::parse_summary_response(std::string_view body) {
  if (body.empty()) return {};
  const auto j = nlohmann::json::parse(body);
  return first_two_sentences(j.value("extract", ""));
}

std::string RelLinker::fetch_summary(const std::string& title) {
  {
    std::lock_guard lock(mu_);
    if (auto it = summary_cache_.find(title); it != summary_cache_.end()) return it->second;
  }
  const std::string body = call_with_retry(
      [&] {
        bucket_.acquire();
        return http_call(options_.summary_url + title, nullptr);
      },
      options_.retry, rng_, real_sleeper());
  std::string summary = parse_summary_response(body);
  std::lock_guard lock(mu_);
  summary_cache_[title] = summary;
  return summary;
}

std::vector<LinkedEntity> RelLinker::link(std::string_view text) {
  const std::string req = nlohmann::json{{"text", std::string(text)}, {"spans", nlohmann::json::array()}}.dump();
  const std::string body = call_with_retry(
      [&] {
        bucket_.acquire();
        return http_call(options_.rel_url, &req);
      },
      options_.retry, rng_, real_sleeper());
  std::vector<LinkedEntity> out;
  if (body.empty()) return out;
  for (auto& [surface, title] : parse_rel_response(body)) {
    bool dup = false;
    for (const auto& e : out) dup |= e.article_title == title;
    if (dup) continue;
    std::string summary = fetch_summary(title);
    if (summary.empty()) continue;
    out.push_back({surface, title, std::move(summary)});
  }
  return out;
}

}  // namespace ctxhsd
