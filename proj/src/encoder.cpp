#include "ctxhsd/encoder.hpp"

#include <cmath>
#include <limits>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/rng.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal() * scale;
  return m;
}

}  // namespace

Matrix SentenceEncoder::encode_batch(std::span<const std::string> texts) const {
  Matrix out(static_cast<Eigen::Index>(texts.size()), static_cast<Eigen::Index>(output_dim()));
  for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode(texts[i]).transpose();
  return out;
}

TransformerTail::TransformerTail(Options options) : options_(options) {
  const double d = static_cast<double>(options_.dim);
  const double h = static_cast<double>(options_.head_dim);
  const double f = static_cast<double>(options_.ffn_dim);
  for (std::size_t l = 0; l < options_.layers; ++l) {
    Rng rng(derive_seed(options_.seed, 1000 + l));
    Weights w;
    w.wq = gaussian(rng, options_.dim, options_.head_dim, 1.0 / std::sqrt(d));
    w.wk = gaussian(rng, options_.dim, options_.head_dim, 1.0 / std::sqrt(d));
    w.wv = gaussian(rng, options_.dim, options_.head_dim, 1.0 / std::sqrt(d));
    w.wo = gaussian(rng, options_.head_dim, options_.dim, 0.5 / std::sqrt(h));
    w.w1 = gaussian(rng, options_.dim, options_.ffn_dim, 1.0 / std::sqrt(d));
    w.w2 = gaussian(rng, options_.ffn_dim, options_.dim, 0.5 / std::sqrt(f));
    weights_.push_back(std::move(w));
  }
}

Matrix TransformerTail::forward(const Matrix& x, const Mask& mask, TailTrace* trace) const {
  if (static_cast<std::size_t>(x.cols()) != options_.dim) throw ContractError("tail input has wrong width");
  if (mask.size() != static_cast<std::size_t>(x.rows())) throw ContractError("mask length does not match sequence");
  const double scale = 1.0 / std::sqrt(static_cast<double>(options_.head_dim));
  const Eigen::Index n = x.rows();
  if (trace) {
    trace->layers.clear();
    trace->mask = mask;
  }
  Matrix cur = x;
  for (const Weights& w : weights_) {
    TailTrace::Layer L;
    L.input = cur;
    L.q = cur * w.wq;
    L.k = cur * w.wk;
    L.v = cur * w.wv;
    Matrix scores = (L.q * L.k.transpose()) * scale;
    L.attn = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (mask[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(i, j));
      double z = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!mask[static_cast<std::size_t>(j)]) continue;
        L.attn(i, j) = std::exp(scores(i, j) - mx);
        z += L.attn(i, j);
      }
      if (z > 0.0) L.attn.row(i) /= z;
    }
    L.mixed = L.attn * L.v;
    L.hidden = cur + L.mixed * w.wo;
    L.act = (L.hidden * w.w1).array().tanh().matrix();
    cur = L.hidden + L.act * w.w2;
    if (trace) trace->layers.push_back(std::move(L));
  }
  return cur;
}

Matrix TransformerTail::backward(const TailTrace& trace, const Matrix& grad_output) const {
  if (trace.layers.size() != weights_.size()) throw ContractError("tail trace does not match tail depth");
  const double scale = 1.0 / std::sqrt(static_cast<double>(options_.head_dim));
  Matrix g = grad_output;
  for (std::size_t li = weights_.size(); li-- > 0;) {
    const Weights& w = weights_[li];
    const auto& L = trace.layers[li];
    const Matrix d_act = g * w.w2.transpose();
    const Matrix d_pre = (d_act.array() * (1.0 - L.act.array().square())).matrix();
    const Matrix d_hidden = g + d_pre * w.w1.transpose();
    const Matrix d_mixed = d_hidden * w.wo.transpose();
    const Matrix d_attn = d_mixed * L.v.transpose();
    const Matrix d_v = L.attn.transpose() * d_mixed;
    const Eigen::VectorXd row_dot = (d_attn.array() * L.attn.array()).rowwise().sum();
    Matrix d_scores = (L.attn.array() * (d_attn.colwise() - row_dot).array()).matrix() * scale;
    const Matrix d_q = d_scores * L.k;
    const Matrix d_k = d_scores.transpose() * L.q;
    g = d_hidden + d_q * w.wq.transpose() + d_k * w.wk.transpose() + d_v * w.wv.transpose();
  }
  return g;
}

std::string TransformerTail::fingerprint() const {
  std::string bytes;
  auto append = [&](const Matrix& m) {
    bytes.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  };
  for (const auto& w : weights_) {
    append(w.wq);
    append(w.wk);
    append(w.wv);
    append(w.wo);
    append(w.w1);
    append(w.w2);
  }
  return sha256_hex(bytes);
}

Vector masked_mean(const Matrix& rows, const Mask& mask) {
  Vector acc = Vector::Zero(rows.cols());
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    acc += rows.row(i).transpose();
    ++n;
  }
  if (n) acc /= static_cast<double>(n);
  return acc;
}

HashingEncoder::HashingEncoder() : HashingEncoder(Options{}) {}

HashingEncoder::HashingEncoder(Options options)
    : options_(options),
      tail_(TransformerTail::Options{options.dim, options.tail_layers, options.head_dim, options.ffn_dim,
                                     derive_seed(options.seed, 7)}) {
  if (options_.max_tokens < 2) throw ConfigError("encoder max_tokens must be at least 2");
}

std::string HashingEncoder::id() const {
  return "hashing-" + std::to_string(options_.dim) + "-L" + std::to_string(options_.tail_layers) + "-s" +
         std::to_string(options_.seed);
}

std::vector<std::string> HashingEncoder::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  for (auto& t : normalized_tokens(text)) out.push_back(std::move(t.text));
  return out;
}

Vector HashingEncoder::token_embedding(std::string_view token) const {
  Rng rng(derive_seed(options_.seed, fnv1a(token)));
  Vector v(static_cast<Eigen::Index>(options_.dim));
  const double scale = 1.0 / std::sqrt(static_cast<double>(options_.dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal() * scale;
  return v;
}

Matrix HashingEncoder::token_embeddings(std::span<const std::string> tokens) const {
  Matrix out(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(options_.dim));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = token_embedding(tokens[i]).transpose();
  return out;
}

Matrix HashingEncoder::apply_tail(const Matrix& sequence, const Mask& mask, TailTrace* trace) const {
  return tail_.forward(sequence, mask, trace);
}

Matrix HashingEncoder::tail_backward(const TailTrace& trace, const Matrix& grad_output) const {
  return tail_.backward(trace, grad_output);
}

Vector HashingEncoder::encode(std::string_view text) const {
  auto tokens = tokenize(text);
  if (tokens.size() > options_.max_tokens) tokens.resize(options_.max_tokens);
  if (tokens.empty()) tokens.emplace_back("[empty]");
  const Matrix x = token_embeddings(tokens);
  const Mask mask(tokens.size(), 1);
  Vector pooled = masked_mean(tail_.forward(x, mask, nullptr), mask);
  const double norm = pooled.norm();
  if (norm > 0.0) pooled /= norm;
  return pooled;
}

void LookupEncoder::add(std::string text, Vector v) {
  if (static_cast<std::size_t>(v.size()) != dim_) throw ContractError("lookup vector has wrong length");
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  entries_[std::move(text)] = std::move(v);
}

Vector LookupEncoder::encode(std::string_view text) const {
  auto it = entries_.find(std::string(text));
  if (it == entries_.end()) throw ConfigError("lookup encoder " + id_ + " has no vector for text");
  return it->second;
}

}  // namespace ctxhsd
