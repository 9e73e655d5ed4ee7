#include "ctxhsd/contextgen.hpp"

#include "ctxhsd/errors.hpp"
#include "ctxhsd/ner.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

ContextGenerator::ContextGenerator(LLMProvider& provider, ContextCache& cache, const PromptRegistry& registry)
    : provider_(provider), cache_(cache), registry_(registry) {}

std::string ContextGenerator::cache_key_for(std::string_view prompt_id, const SlotValues& inputs) const {
  return make_cache_key(registry_.render(prompt_id, inputs), provider_.id());
}

ContextRecord ContextGenerator::generate(std::string_view post_id, ContextMode mode, std::string_view prompt_id,
                                         const SlotValues& inputs) {
  const PromptTemplate& tmpl = registry_.at(prompt_id);
  if (tmpl.expects_image() && !provider_.capabilities().image)
    throw ConfigError("provider " + provider_.id() + " cannot take images (prompt " + tmpl.id + ")");

  const ChatRequest request = registry_.render(prompt_id, inputs);
  const std::string key = make_cache_key(request, provider_.id());
  // Identical prompts share one cache entry; the record is re-addressed to this post.
  auto for_post = [&](ContextRecord r) {
    r.post_id = std::string(post_id);
    return r;
  };
  if (auto hit = cache_.get(key)) {
    ++cache_hits_;
    return for_post(*hit);
  }

  std::promise<ContextRecord> promise;
  std::shared_future<ContextRecord> future;
  bool owner = false;
  {
    std::lock_guard lock(inflight_mu_);
    auto it = inflight_.find(key);
    if (it != inflight_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      inflight_.emplace(key, future);
      owner = true;
    }
  }
  if (!owner) {
    ++cache_hits_;
    return for_post(future.get());
  }

  auto finish = [&] {
    std::lock_guard lock(inflight_mu_);
    inflight_.erase(key);
  };
  try {
    // Another generator on the same cache may have filled it meanwhile.
    if (auto hit = cache_.get(key)) {
      ++cache_hits_;
      promise.set_value(*hit);
      finish();
      return for_post(*hit);
    }
    ++provider_calls_;
    ContextRecord rec;
    rec.post_id = std::string(post_id);
    rec.mode = mode;
    rec.prompt_id = std::string(prompt_id);
    rec.provider_id = provider_.id();
    rec.cache_key = key;
    try {
      rec.text = std::string(trim(provider_.complete(request)));
    } catch (const BackendError& e) {
      throw GenerationError(std::string("generation failed: ") + e.what(), key);
    }
    if (rec.text.empty()) throw GenerationError("provider returned empty text", key);
    rec.timestamp = utc_timestamp();
    cache_.put(rec);
    promise.set_value(rec);
    finish();
    return rec;
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

ContextRecord ContextGenerator::entity_context(std::string_view post_id, std::span<const EntityMention> entities) {
  if (entities.empty()) {
    ContextRecord sentinel;
    sentinel.post_id = std::string(post_id);
    sentinel.mode = ContextMode::named_entity;
    sentinel.prompt_id = "entity_context";
    sentinel.provider_id = provider_.id();
    sentinel.cache_key = cache_key_for("entity_context", {{"entities", ""}});
    sentinel.entities = std::vector<EntityMention>{};
    return sentinel;
  }
  ContextRecord rec = generate(post_id, ContextMode::named_entity, "entity_context",
                               {{"entities", render_entities(entities)}});
  rec.entities = std::vector<EntityMention>(entities.begin(), entities.end());
  return rec;
}

ContextRecord ContextGenerator::fulltext_context(const Post& post) {
  if (trim(post.text).empty()) throw ValueError("full-text context needs a non-empty post: " + post.id);
  return generate(post.id, ContextMode::full_text, "tweet_context", {{"post", post.text}});
}

MultimodalAssets ContextGenerator::multimodal_assets(std::string_view post_id, const std::filesystem::path& image) {
  if (!provider_.capabilities().image) throw ConfigError("provider " + provider_.id() + " cannot take images");
  if (!std::filesystem::is_regular_file(image)) throw InputError("unreadable image " + image.string());
  const SlotValues in = {{"meme", image.string()}};
  MultimodalAssets out;
  out.ocr = generate(post_id, ContextMode::ocr, "ocr", in);
  out.caption = generate(post_id, ContextMode::caption, "caption", in);
  out.context = generate(post_id, ContextMode::multimodal, "meme_context", in);
  return out;
}

ContextRecord ContextGenerator::enhance(std::string_view post_id, std::string_view base_text,
                                        const ContextRecord& context) {
  if (context.is_empty_sentinel()) {
    ContextRecord passthrough;
    passthrough.post_id = std::string(post_id);
    passthrough.mode = ContextMode::enhance;
    passthrough.text = std::string(base_text);
    passthrough.provider_id = provider_.id();
    return passthrough;
  }
  const char* prompt = context.mode == ContextMode::named_entity ? "enhance_tweet_ne" : "enhance_tweet_ft";
  return generate(post_id, ContextMode::enhance, prompt, {{"post", std::string(base_text)}, {"context", context.text}});
}

ContextRecord ContextGenerator::enhance_multimodal(std::string_view post_id, const MultimodalAssets& assets) {
  if (assets.context.is_empty_sentinel()) {
    ContextRecord passthrough;
    passthrough.post_id = std::string(post_id);
    passthrough.mode = ContextMode::enhance;
    passthrough.text = assets.ocr.text + " [SEP] " + assets.caption.text;
    passthrough.provider_id = provider_.id();
    return passthrough;
  }
  return generate(post_id, ContextMode::enhance, "enhance_meme",
                  {{"extracted_text", assets.ocr.text},
                   {"image_description", assets.caption.text},
                   {"context", assets.context.text}});
}

ContextRecord ContextGenerator::prediction(std::string_view post_id, std::string_view prompt_id,
                                           const SlotValues& inputs) {
  return generate(post_id, ContextMode::prediction, prompt_id, inputs);
}

std::string llm_enhance(ContextGenerator& gen, std::string_view post_id, std::string_view base_text,
                        const ContextRecord& context) {
  return gen.enhance(post_id, base_text, context).text;
}

double mean_token_length(std::span<const std::string> texts) {
  if (texts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : texts) total += static_cast<double>(whitespace_tokens(t).size());
  return total / static_cast<double>(texts.size());
}

}  // namespace ctxhsd
