#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxhsd/context.hpp"
#include "ctxhsd/encoder.hpp"
#include "ctxhsd/linkers.hpp"
#include "ctxhsd/rng.hpp"

namespace ctxhsd {

enum class Strategy { zero_context, append_embed, embed_concat, context_embed, llm_enhance, rel, conceptnet };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

inline constexpr std::string_view kSeparator = " [SEP] ";

// Width a strategy's representation must have for a given sentence-encoder width.
std::size_t strategy_dim(Strategy s, std::size_t encoder_dim = 768, std::size_t concept_dim = kConceptDim);

struct Representation {
  std::string post_id;
  Strategy strategy = Strategy::zero_context;
  Vector vector;
  std::size_t dim() const { return static_cast<std::size_t>(vector.size()); }
};

// Memes are represented as OCR text and image caption joined by the separator.
std::string multimodal_base_text(std::string_view ocr_text, std::string_view caption);

Vector zero_context(std::string_view post_text, const SentenceEncoder& encoder);
Vector append_embed(std::string_view post_text, const ContextRecord& context, const SentenceEncoder& encoder);
Vector embed_concat(std::string_view post_text, const ContextRecord& context, const SentenceEncoder& encoder);
Vector rel_representation(std::string_view post_text, std::span<const LinkedEntity> links,
                          const SentenceEncoder& encoder);
Vector conceptnet_representation(std::string_view post_text, const ConceptTable& table,
                                 const SentenceEncoder& encoder);

// Affine map from sentence-vector space into token-embedding space.
struct ContextProjection {
  Matrix weight;  // token_dim x sentence_dim
  Vector bias;    // token_dim

  // Identity (on the leading square block) plus N(0, noise^2) entries.
  static ContextProjection near_identity(std::size_t sentence_dim, std::size_t token_dim, double noise, Rng& rng);
  Vector apply(const Vector& v) const { return weight * v + bias; }
};

struct ContextEmbedTrace {
  TailTrace tail;
  std::optional<Vector> context_vector;  // absent for the empty sentinel
  std::size_t real_positions = 0;        // context slot + post tokens
};

// The fused sequence is [slot] + token embeddings of at most max_tokens - 1
// post tokens, where slot = projection(context_vector), or zeros when the
// context is absent. `pad_to` appends masked zero rows.
Matrix fused_sequence(std::span<const std::string> post_tokens, const std::optional<Vector>& context_vector,
                      const TokenAccess& access, const ContextProjection& projection, std::size_t max_tokens,
                      Mask* mask, std::size_t pad_to = 0);

// Masked mean of the tail output over the fused sequence.
Vector context_embed_forward(std::span<const std::string> post_tokens, const std::optional<Vector>& context_vector,
                             const TokenAccess& access, const ContextProjection& projection, std::size_t max_tokens,
                             ContextEmbedTrace* trace = nullptr, std::size_t pad_to = 0);

Vector context_embed_forward(std::string_view post_text, const ContextRecord& context,
                             const SentenceEncoder& encoder, const ContextProjection& projection);

// Accumulates d loss / d projection given d loss / d pooled output.
void context_embed_backward(const ContextEmbedTrace& trace, const Vector& grad_pooled, const TokenAccess& access,
                            Matrix& grad_weight, Vector& grad_bias);

// Row-aligned matrix of representations for one strategy.
struct RepresentationSet {
  Strategy strategy = Strategy::zero_context;
  std::string encoder_id;
  std::vector<std::string> post_ids;
  Matrix rows;

  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
  void save(const std::filesystem::path& matrix_path, const std::filesystem::path& manifest_path) const;
  static RepresentationSet load(const std::filesystem::path& matrix_path, const std::filesystem::path& manifest_path);
};

// What build_representations reads per post.
struct RepresentationInput {
  std::string post_id;
  std::string base_text;                 // post text, or OCR [SEP] caption for memes
  std::optional<ContextRecord> context;  // append/concat/context_embed
  std::optional<std::string> enhanced;   // llm_enhance
};

struct RepresentationResources {
  const SentenceEncoder* encoder = nullptr;
  EntityLinker* linker = nullptr;      // rel
  const ConceptTable* concepts = nullptr;  // conceptnet
};

// context_embed rows use the untrained identity projection; training learns
// its own projection from the raw texts.
// Throws IntegrityError listing every post lacking its required context
// before any encoding starts.
RepresentationSet build_representations(std::span<const RepresentationInput> inputs, Strategy strategy,
                                        const RepresentationResources& resources);

}  // namespace ctxhsd
