#pragma once

#include <atomic>
#include <filesystem>
#include <future>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "ctxhsd/context.hpp"
#include "ctxhsd/corpus.hpp"
#include "ctxhsd/prompts.hpp"
#include "ctxhsd/provider.hpp"

namespace ctxhsd {

struct MultimodalAssets {
  ContextRecord ocr;
  ContextRecord caption;
  ContextRecord context;
};

enum class EnhanceMode { textual, multimodal };

// Generates context through a provider with the cache in front: a cache_key
// is sent to the provider at most once per generator, even under concurrent
// requests for the same key. Thread-safe.
class ContextGenerator {
 public:
  ContextGenerator(LLMProvider& provider, ContextCache& cache,
                   const PromptRegistry& registry = PromptRegistry::builtin());

  ContextRecord entity_context(std::string_view post_id, std::span<const EntityMention> entities);
  ContextRecord fulltext_context(const Post& post);
  MultimodalAssets multimodal_assets(std::string_view post_id, const std::filesystem::path& image);

  // Textual rewrite; picks the entity or full-text rewrite prompt from context.mode.
  // An empty-sentinel context returns a record whose text is base_text, with no call.
  ContextRecord enhance(std::string_view post_id, std::string_view base_text, const ContextRecord& context);
  ContextRecord enhance_multimodal(std::string_view post_id, const MultimodalAssets& assets);

  // Direct classification prompt; cached like any generation.
  ContextRecord prediction(std::string_view post_id, std::string_view prompt_id, const SlotValues& inputs);

  // Key the generator would use, without generating.
  std::string cache_key_for(std::string_view prompt_id, const SlotValues& inputs) const;

  std::size_t provider_calls() const { return provider_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }
  const PromptRegistry& registry() const { return registry_; }
  LLMProvider& provider() { return provider_; }

 private:
  ContextRecord generate(std::string_view post_id, ContextMode mode, std::string_view prompt_id,
                         const SlotValues& inputs);

  LLMProvider& provider_;
  ContextCache& cache_;
  const PromptRegistry& registry_;
  std::mutex inflight_mu_;
  std::unordered_map<std::string, std::shared_future<ContextRecord>> inflight_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

// Convenience form returning only the rewritten text.
std::string llm_enhance(ContextGenerator& gen, std::string_view post_id, std::string_view base_text,
                        const ContextRecord& context);

// Mean whitespace-token count, used as a sanity metric on generated corpora.
double mean_token_length(std::span<const std::string> texts);

}  // namespace ctxhsd
