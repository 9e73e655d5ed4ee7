#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxhsd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// 1 marks a real position, 0 padding.
using Mask = std::vector<std::uint8_t>;

class TokenAccess;

// Text -> unit-norm vector of output_dim() components. Implementations
// truncate inputs to max_tokens() of their own tokenization.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t max_tokens() const = 0;
  virtual Vector encode(std::string_view text) const = 0;
  virtual Matrix encode_batch(std::span<const std::string> texts) const;
  // Encoders that expose token embeddings and their remaining layers.
  virtual const TokenAccess* token_access() const { return nullptr; }
};

// Per-layer intermediates kept by the forward pass for the backward pass.
struct TailTrace {
  struct Layer {
    Matrix input, q, k, v, attn, mixed, hidden, act;
  };
  std::vector<Layer> layers;
  Mask mask;
};

class TokenAccess {
 public:
  virtual ~TokenAccess() = default;
  virtual std::size_t token_dim() const = 0;
  virtual std::size_t tail_layers() const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  // One row per token.
  virtual Matrix token_embeddings(std::span<const std::string> tokens) const = 0;
  // Padding rows never influence real rows.
  virtual Matrix apply_tail(const Matrix& sequence, const Mask& mask, TailTrace* trace = nullptr) const = 0;
  // Gradient of a scalar loss with respect to the tail input, given its
  // gradient with respect to the tail output. Tail parameters are frozen.
  virtual Matrix tail_backward(const TailTrace& trace, const Matrix& grad_output) const = 0;
  // Digest of the frozen tail parameters.
  virtual std::string tail_fingerprint() const = 0;
};

// Stack of frozen single-head attention blocks:
//   H = X + softmax_masked(X Wq (X Wk)^T / sqrt(h)) X Wv Wo
//   Y = H + tanh(H W1) W2
// Zero layers is the identity map.
class TransformerTail {
 public:
  struct Options {
    std::size_t dim = 768;
    std::size_t layers = 1;
    std::size_t head_dim = 64;
    std::size_t ffn_dim = 64;
    std::uint64_t seed = 17;
  };
  explicit TransformerTail(Options options);

  std::size_t layers() const { return weights_.size(); }
  std::size_t dim() const { return options_.dim; }
  Matrix forward(const Matrix& x, const Mask& mask, TailTrace* trace) const;
  Matrix backward(const TailTrace& trace, const Matrix& grad_output) const;
  std::string fingerprint() const;

 private:
  struct Weights {
    Matrix wq, wk, wv, wo, w1, w2;
  };
  Options options_;
  std::vector<Weights> weights_;
};

Vector masked_mean(const Matrix& rows, const Mask& mask);

// Deterministic stand-in for a pretrained sentence encoder: each normalized
// token hashes to a fixed Gaussian embedding, the sequence passes through a
// frozen TransformerTail, and the masked mean is L2-normalized.
class HashingEncoder : public SentenceEncoder, public TokenAccess {
 public:
  struct Options {
    std::size_t dim = 768;
    std::size_t max_tokens = 384;
    std::size_t tail_layers = 1;
    std::size_t head_dim = 64;
    std::size_t ffn_dim = 64;
    std::uint64_t seed = 17;
  };
  HashingEncoder();
  explicit HashingEncoder(Options options);

  std::string id() const override;
  std::size_t output_dim() const override { return options_.dim; }
  std::size_t max_tokens() const override { return options_.max_tokens; }
  Vector encode(std::string_view text) const override;
  const TokenAccess* token_access() const override { return this; }

  std::size_t token_dim() const override { return options_.dim; }
  std::size_t tail_layers() const override { return tail_.layers(); }
  std::vector<std::string> tokenize(std::string_view text) const override;
  Matrix token_embeddings(std::span<const std::string> tokens) const override;
  Matrix apply_tail(const Matrix& sequence, const Mask& mask, TailTrace* trace = nullptr) const override;
  Matrix tail_backward(const TailTrace& trace, const Matrix& grad_output) const override;
  std::string tail_fingerprint() const override { return tail_.fingerprint(); }

  Vector token_embedding(std::string_view token) const;

 private:
  Options options_;
  TransformerTail tail_;
};

// Precomputed vectors keyed by exact text; unknown texts are a ConfigError.
// Lets externally produced embeddings drive the pipeline.
class LookupEncoder : public SentenceEncoder {
 public:
  LookupEncoder(std::string id, std::size_t dim, std::size_t max_tokens = 384)
      : id_(std::move(id)), dim_(dim), max_tokens_(max_tokens) {}
  void add(std::string text, Vector v);
  std::string id() const override { return id_; }
  std::size_t output_dim() const override { return dim_; }
  std::size_t max_tokens() const override { return max_tokens_; }
  Vector encode(std::string_view text) const override;

 private:
  std::string id_;
  std::size_t dim_;
  std::size_t max_tokens_;
  std::unordered_map<std::string, Vector> entries_;
};

}  // namespace ctxhsd
