#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxhsd/contextgen.hpp"
#include "ctxhsd/encoder.hpp"
#include "ctxhsd/labels.hpp"
#include "ctxhsd/represent.hpp"

namespace ctxhsd {

enum class Head { softmax_2, softmax_7, sigmoid_4 };

std::string_view to_string(Head h);
Head parse_head(std::string_view s);
std::size_t head_arity(Head h);
Head head_for(Task t);
Task task_for(Head h);

struct MLPConfig {
  std::size_t input_dim = 768;
  std::vector<std::size_t> hidden_dims{512, 512, 512};
  Head head = Head::softmax_2;
  std::size_t epochs = 500;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  // Standard deviation of the noise added to the identity projection.
  double projection_noise = 1e-3;

  // Throws ConfigError.
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

struct TrainedModel {
  MLPConfig config;
  Strategy strategy = Strategy::zero_context;
  std::vector<DenseLayer> layers;
  std::optional<ContextProjection> projection;  // context_embed only
  std::string encoder_id;
  std::string tail_fingerprint;
  std::vector<double> loss_trace;  // mean training loss per epoch

  std::size_t input_dim() const { return config.input_dim; }
  // Head probabilities, one row per input row.
  Matrix scores(const Matrix& x) const;

  std::string serialize() const;
  static TrainedModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static TrainedModel load(const std::filesystem::path& path);
};

// Rows of x pair with targets. Training visits rows in a canonical order
// before the seeded shuffle, so reordering the inputs does not change the model.
TrainedModel train_mlp(const Matrix& x, std::span<const Target> y, const MLPConfig& config,
                       Strategy strategy = Strategy::zero_context);

// One post prepared for Context-Embed: its tokens and encoded context (absent
// for the empty sentinel).
struct ContextEmbedExample {
  std::vector<std::string> tokens;
  std::optional<Vector> context_vector;
};

std::vector<ContextEmbedExample> prepare_context_embed(std::span<const std::string> posts,
                                                       std::span<const ContextRecord> contexts,
                                                       const SentenceEncoder& encoder);

// Learns the projection and the MLP jointly; the encoder tail stays frozen.
TrainedModel train_context_embed(std::span<const std::string> posts, std::span<const ContextRecord> contexts,
                                 std::span<const Target> y, const SentenceEncoder& encoder,
                                 const MLPConfig& config);
TrainedModel train_context_embed(std::span<const ContextEmbedExample> examples, std::span<const Target> y,
                                 const SentenceEncoder& encoder, const MLPConfig& config);

// Pooled fused representations under the model's learned projection.
Matrix context_embed_features(const TrainedModel& model, std::span<const ContextEmbedExample> examples,
                              const SentenceEncoder& encoder);

struct Prediction {
  Target label = kAbstain;  // class index, LabelSet bits for multilabel
  std::vector<double> scores;
  bool abstained = false;
  std::string raw;  // unparsed LLM reply for abstentions
};

struct PredictionSet {
  Task task = Task::binary;
  std::string model_id;
  std::vector<std::string> post_ids;
  std::vector<Prediction> items;

  const Prediction* find(std::string_view post_id) const;
  std::string to_jsonl() const;
  static PredictionSet from_jsonl(std::string_view text);
};

// argmax with the lowest index winning ties; sigmoid labels at score >= 0.5.
Prediction decode_scores(Head head, std::span<const double> scores);

PredictionSet predict(const TrainedModel& model, const Matrix& x, std::span<const std::string> post_ids);

struct LlmItem {
  std::string post_id;
  std::string text;                           // tweets
  std::optional<std::filesystem::path> image;  // memes
};

// Unparseable replies become logged abstentions, never coerced labels.
PredictionSet llm_predict(std::span<const LlmItem> items, LlmTask task, ContextGenerator& generator,
                          const LabelRegistry& registry = LabelRegistry::builtin(), std::size_t parallelism = 1);

}  // namespace ctxhsd
