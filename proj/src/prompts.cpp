#include "ctxhsd/prompts.hpp"

#include <nlohmann/json.hpp>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"
#include "registry_json.inc"

namespace ctxhsd {

bool PromptTemplate::expects_image() const {
  for (const auto& s : input_slots)
    if (s.kind == SlotKind::image) return true;
  return false;
}

const PromptRegistry& PromptRegistry::builtin() {
  static const PromptRegistry registry = from_json(embedded::kRegistryJson);
  return registry;
}

PromptRegistry PromptRegistry::from_json(std::string_view json_text) {
  const auto j = nlohmann::json::parse(json_text);
  PromptRegistry r;
  r.version_ = j.at("version").get<int>();
  for (const auto& p : j.at("prompts")) {
    PromptTemplate t;
    t.id = p.at("id").get<std::string>();
    t.system = p.at("system").get<std::string>();
    t.request = p.at("request").get<std::string>();
    for (const auto& s : p.at("inputs")) {
      const auto kind = s.at("kind").get<std::string>();
      if (kind != "text" && kind != "image") throw ConfigError("prompt " + t.id + ": bad slot kind " + kind);
      t.input_slots.push_back({s.at("name").get<std::string>(), s.at("label").get<std::string>(),
                               kind == "image" ? SlotKind::image : SlotKind::text});
    }
    if (r.contains(t.id)) throw ConfigError("duplicate prompt id " + t.id);
    r.templates_.push_back(std::move(t));
  }
  return r;
}

PromptRegistry PromptRegistry::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

bool PromptRegistry::contains(std::string_view id) const {
  for (const auto& t : templates_)
    if (t.id == id) return true;
  return false;
}

const PromptTemplate& PromptRegistry::at(std::string_view id) const {
  for (const auto& t : templates_)
    if (t.id == id) return t;
  throw ConfigError("unknown prompt id '" + std::string(id) + "'");
}

ChatRequest PromptRegistry::render(std::string_view id, const SlotValues& values) const {
  const PromptTemplate& t = at(id);
  for (const auto& [name, value] : values) {
    bool declared = false;
    for (const auto& s : t.input_slots) declared |= s.name == name;
    if (!declared) throw ContractError("prompt " + t.id + " has no slot '" + name + "'");
  }
  ChatRequest req;
  req.prompt_id = t.id;
  req.system = t.system;
  req.user = t.request;
  for (const auto& s : t.input_slots) {
    auto it = values.find(s.name);
    if (it == values.end()) throw ContractError("prompt " + t.id + " missing slot '" + s.name + "'");
    if (s.kind == SlotKind::image) {
      req.image = std::filesystem::path(it->second);
      req.resolved_inputs.emplace_back(s.name, "sha256:" + sha256_file(it->second));
    } else {
      req.user += "\n\n" + s.label + ":\n" + it->second;
      req.resolved_inputs.emplace_back(s.name, it->second);
    }
  }
  return req;
}

std::string make_cache_key(const ChatRequest& request, std::string_view provider_id) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& [k, v] : request.resolved_inputs) inputs.push_back({k, v});
  const nlohmann::json canon = {request.prompt_id, std::string(provider_id), inputs};
  return sha256_hex(canon.dump());
}

std::string catalogue_text(const PromptRegistry& registry) {
  std::string out;
  for (const auto& t : registry.templates()) {
    out += "[" + t.id + "]\nsystem: " + t.system + "\nrequest: " + t.request + "\n\n";
  }
  return out;
}

}  // namespace ctxhsd
