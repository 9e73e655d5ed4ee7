// Eigen must precede httplib: resolv.h defines a _res macro.
#include "ctxhsd/provider.hpp"

#include <httplib.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // no trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("provider base_url lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

std::string mime_for(const std::filesystem::path& p) {
  const auto ext = to_lower_ascii(p.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

}  // namespace

OpenAICompatibleProvider::OpenAICompatibleProvider(HttpProviderOptions options) : options_(std::move(options)) {
  const char* key = std::getenv(options_.api_key_env.c_str());
  if (!key || !*key) throw ConfigError("environment variable " + options_.api_key_env + " is not set");
  api_key_ = key;
}

std::string OpenAICompatibleProvider::id() const { return "openai-compatible:" + options_.model; }

std::string OpenAICompatibleProvider::build_body(const ChatRequest& request, const HttpProviderOptions& options) {
  nlohmann::json user_content;
  if (request.image) {
    std::string bytes;
    try {
      bytes = read_file(*request.image);
    } catch (const InputError&) {
      throw InputError("unreadable image " + request.image->string());
    }
    user_content = nlohmann::json::array(
        {{{"type", "text"}, {"text", request.user}},
         {{"type", "image_url"},
          {"image_url", {{"url", "data:" + mime_for(*request.image) + ";base64," + base64_encode(bytes)}}}}});
  } else {
    user_content = request.user;
  }
  const nlohmann::json body = {
      {"model", options.model},
      {"temperature", request.temperature},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", request.system}}, {{"role", "user"}, {"content", user_content}}})}};
  return body.dump();
}

std::string OpenAICompatibleProvider::parse_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed provider response: ") + e.what(), true);
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_null()) throw BackendError("provider returned empty content", true);
    return content.get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError("provider response has no choices[0].message.content", true);
  }
}

std::string OpenAICompatibleProvider::complete(const ChatRequest& request) {
  const SplitUrl url = split_url(options_.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::seconds(30));
  client.set_read_timeout(options_.timeout);
  client.set_bearer_token_auth(api_key_);
  const auto body = build_body(request, options_);
  auto res = client.Post(url.path + "/chat/completions", body, "application/json");
  if (!res) throw BackendError("provider request failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500)
    throw BackendError("provider returned HTTP " + std::to_string(res->status), true);
  if (res->status != 200)
    throw BackendError("provider returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500), false);
  return parse_response(res->body);
}

}  // namespace ctxhsd
