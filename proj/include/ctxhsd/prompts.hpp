#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctxhsd {

enum class SlotKind { text, image };

struct PromptSlot {
  std::string name;
  std::string label;  // heading used when the slot is rendered into the request
  SlotKind kind = SlotKind::text;
};

struct PromptTemplate {
  std::string id;
  std::string system;
  std::string request;
  std::vector<PromptSlot> input_slots;

  bool expects_image() const;
};

// A prompt with every slot bound; what a provider receives.
struct ChatRequest {
  std::string prompt_id;
  std::string system;
  std::string user;
  std::optional<std::filesystem::path> image;
  double temperature = 0.0;
  // (slot name, value); image slots carry "sha256:<digest>" of the file bytes.
  std::vector<std::pair<std::string, std::string>> resolved_inputs;
};

using SlotValues = std::map<std::string, std::string, std::less<>>;

class PromptRegistry {
 public:
  static const PromptRegistry& builtin();
  static PromptRegistry from_json(std::string_view json_text);
  static PromptRegistry load(const std::filesystem::path& path);

  int version() const { return version_; }
  const PromptTemplate& at(std::string_view id) const;
  bool contains(std::string_view id) const;
  const std::vector<PromptTemplate>& templates() const { return templates_; }

  // Text slots get their value; image slots get a file path. Every declared
  // slot must be given and no others. Throws ContractError otherwise.
  ChatRequest render(std::string_view id, const SlotValues& values) const;

 private:
  int version_ = 0;
  std::vector<PromptTemplate> templates_;
};

// Canonical, whitespace-free digest of (prompt id, resolved inputs, provider id).
std::string make_cache_key(const ChatRequest& request, std::string_view provider_id);

// Text-format dump matching tests/golden/prompt_catalogue.txt.
std::string catalogue_text(const PromptRegistry& registry);

}  // namespace ctxhsd
