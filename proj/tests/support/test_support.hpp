#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "ctxhsd/encoder.hpp"
#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd::testing {

inline std::filesystem::path fixture_dir() { return CTXHSD_FIXTURE_DIR; }
inline std::filesystem::path source_dir() { return CTXHSD_SOURCE_DIR; }

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ctxhsd-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline void write(const std::filesystem::path& p, const std::string& contents) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << contents;
}

// Maps known texts to fixed vectors; counts encode calls.
class TableEncoder : public SentenceEncoder {
 public:
  explicit TableEncoder(std::size_t dim) : dim_(dim) {}
  void set(std::string text, Vector v) { table_[std::move(text)] = std::move(v); }
  // Standard basis vector e_k.
  static Vector basis(std::size_t dim, std::size_t k) {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dim));
    v(static_cast<Eigen::Index>(k)) = 1.0;
    return v;
  }
  std::string id() const override { return "table"; }
  std::size_t output_dim() const override { return dim_; }
  std::size_t max_tokens() const override { return 384; }
  Vector encode(std::string_view text) const override {
    ++calls;
    auto it = table_.find(std::string(text));
    if (it == table_.end()) throw ConfigError("no vector for '" + std::string(text) + "'");
    return it->second;
  }
  mutable std::atomic<std::size_t> calls{0};

 private:
  std::size_t dim_;
  std::map<std::string, Vector> table_;
};

// Token access whose tail is the identity and whose token embeddings come from a table.
class IdentityTailAccess : public TokenAccess {
 public:
  explicit IdentityTailAccess(std::size_t dim) : dim_(dim) {}
  void set(std::string token, Vector v) { table_[std::move(token)] = std::move(v); }
  std::size_t token_dim() const override { return dim_; }
  std::size_t tail_layers() const override { return 1; }
  std::vector<std::string> tokenize(std::string_view text) const override { return whitespace_tokens(text); }
  Matrix token_embeddings(std::span<const std::string> tokens) const override {
    Matrix m(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim_));
    for (std::size_t i = 0; i < tokens.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = table_.at(tokens[i]).transpose();
    return m;
  }
  Matrix apply_tail(const Matrix& sequence, const Mask&, TailTrace* trace) const override {
    if (trace) trace->layers.clear();
    return sequence;
  }
  Matrix tail_backward(const TailTrace&, const Matrix& grad_output) const override { return grad_output; }
  std::string tail_fingerprint() const override { return "identity"; }

 private:
  std::size_t dim_;
  std::map<std::string, Vector> table_;
};

inline std::string words(std::size_t n, const std::string& stem = "w") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + stem + std::to_string(i);
  return out;
}

}  // namespace ctxhsd::testing
