#include "ctxhsd/represent.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

constexpr std::pair<Strategy, std::string_view> kStrategyNames[] = {
    {Strategy::zero_context, "zero_context"}, {Strategy::append_embed, "append_embed"},
    {Strategy::embed_concat, "embed_concat"}, {Strategy::context_embed, "context_embed"},
    {Strategy::llm_enhance, "llm_enhance"},   {Strategy::rel, "rel"},
    {Strategy::conceptnet, "conceptnet"},
};

static_assert(std::endian::native == std::endian::little, "representation store assumes little-endian doubles");

constexpr char kMagic[4] = {'C', 'T', 'X', 'R'};
constexpr std::uint32_t kStoreVersion = 1;

Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

std::string_view to_string(Strategy s) {
  for (auto& [k, v] : kStrategyNames)
    if (k == s) return v;
  return "unknown";
}

Strategy parse_strategy(std::string_view s) {
  for (auto& [k, v] : kStrategyNames)
    if (v == s) return k;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

std::size_t strategy_dim(Strategy s, std::size_t encoder_dim, std::size_t concept_dim) {
  switch (s) {
    case Strategy::embed_concat: return 2 * encoder_dim;
    case Strategy::conceptnet: return encoder_dim + concept_dim;
    default: return encoder_dim;
  }
}

std::string multimodal_base_text(std::string_view ocr_text, std::string_view caption) {
  return std::string(ocr_text) + std::string(kSeparator) + std::string(caption);
}

Vector zero_context(std::string_view post_text, const SentenceEncoder& encoder) { return encoder.encode(post_text); }

Vector append_embed(std::string_view post_text, const ContextRecord& context, const SentenceEncoder& encoder) {
  if (context.is_empty_sentinel()) return encoder.encode(post_text);
  return encoder.encode(std::string(post_text) + std::string(kSeparator) + context.text);
}

Vector embed_concat(std::string_view post_text, const ContextRecord& context, const SentenceEncoder& encoder) {
  const Vector post = encoder.encode(post_text);
  const Vector ctx = context.is_empty_sentinel() ? Vector::Zero(post.size()) : encoder.encode(context.text);
  return concat(post, ctx);
}

Vector rel_representation(std::string_view post_text, std::span<const LinkedEntity> links,
                          const SentenceEncoder& encoder) {
  return encoder.encode(rel_augment(post_text, links));
}

Vector conceptnet_representation(std::string_view post_text, const ConceptTable& table,
                                 const SentenceEncoder& encoder) {
  return concat(encoder.encode(post_text), conceptnet_vector(post_text, table));
}

ContextProjection ContextProjection::near_identity(std::size_t sentence_dim, std::size_t token_dim, double noise,
                                                   Rng& rng) {
  ContextProjection p;
  p.weight = Matrix::Identity(static_cast<Eigen::Index>(token_dim), static_cast<Eigen::Index>(sentence_dim));
  if (noise > 0.0)
    for (Eigen::Index j = 0; j < p.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < p.weight.rows(); ++i) p.weight(i, j) += rng.normal() * noise;
  p.bias = Vector::Zero(static_cast<Eigen::Index>(token_dim));
  return p;
}

Matrix fused_sequence(std::span<const std::string> post_tokens, const std::optional<Vector>& context_vector,
                      const TokenAccess& access, const ContextProjection& projection, std::size_t max_tokens,
                      Mask* mask, std::size_t pad_to) {
  if (max_tokens < 1) throw ContractError("max_tokens must leave room for the context slot");
  const std::size_t d = access.token_dim();
  if (static_cast<std::size_t>(projection.weight.rows()) != d)
    throw ContractError("projection output does not match token width");
  const std::size_t n_tokens = std::min(post_tokens.size(), max_tokens - 1);
  const std::size_t real = n_tokens + 1;
  const std::size_t total = std::max(real, pad_to);
  Matrix seq = Matrix::Zero(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  if (context_vector) {
    if (context_vector->size() != projection.weight.cols())
      throw ContractError("context vector does not match projection input");
    seq.row(0) = projection.apply(*context_vector).transpose();
  }
  if (n_tokens) seq.middleRows(1, static_cast<Eigen::Index>(n_tokens)) = access.token_embeddings(post_tokens.first(n_tokens));
  if (mask) {
    mask->assign(total, 0);
    std::fill(mask->begin(), mask->begin() + static_cast<std::ptrdiff_t>(real), 1);
  }
  return seq;
}

Vector context_embed_forward(std::span<const std::string> post_tokens, const std::optional<Vector>& context_vector,
                             const TokenAccess& access, const ContextProjection& projection, std::size_t max_tokens,
                             ContextEmbedTrace* trace, std::size_t pad_to) {
  Mask mask;
  const Matrix seq = fused_sequence(post_tokens, context_vector, access, projection, max_tokens, &mask, pad_to);
  TailTrace* tail_trace = trace ? &trace->tail : nullptr;
  const Matrix out = access.apply_tail(seq, mask, tail_trace);
  if (trace) {
    trace->context_vector = context_vector;
    trace->real_positions = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    trace->tail.mask = mask;
  }
  return masked_mean(out, mask);
}

Vector context_embed_forward(std::string_view post_text, const ContextRecord& context,
                             const SentenceEncoder& encoder, const ContextProjection& projection) {
  const TokenAccess* access = encoder.token_access();
  if (!access) throw ConfigError("encoder " + encoder.id() + " does not expose token access");
  std::optional<Vector> cv;
  if (!context.is_empty_sentinel()) cv = encoder.encode(context.text);
  const auto tokens = access->tokenize(post_text);
  return context_embed_forward(tokens, cv, *access, projection, encoder.max_tokens());
}

void context_embed_backward(const ContextEmbedTrace& trace, const Vector& grad_pooled, const TokenAccess& access,
                            Matrix& grad_weight, Vector& grad_bias) {
  if (!trace.context_vector) return;
  const auto& mask = trace.tail.mask;
  const double inv = 1.0 / static_cast<double>(trace.real_positions);
  Matrix grad_out = Matrix::Zero(static_cast<Eigen::Index>(mask.size()), grad_pooled.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) grad_out.row(static_cast<Eigen::Index>(i)) = grad_pooled.transpose() * inv;
  const Matrix grad_in = access.tail_backward(trace.tail, grad_out);
  const Vector g0 = grad_in.row(0).transpose();
  grad_weight.noalias() += g0 * trace.context_vector->transpose();
  grad_bias += g0;
}

void RepresentationSet::save(const std::filesystem::path& matrix_path,
                             const std::filesystem::path& manifest_path) const {
  if (static_cast<std::size_t>(rows.rows()) != post_ids.size())
    throw ContractError("representation rows do not match id count");
  std::string bin(kMagic, 4);
  auto put = [&](const void* p, std::size_t n) { bin.append(static_cast<const char*>(p), n); };
  const std::uint64_t r = static_cast<std::uint64_t>(rows.rows()), c = static_cast<std::uint64_t>(rows.cols());
  put(&kStoreVersion, sizeof kStoreVersion);
  put(&r, sizeof r);
  put(&c, sizeof c);
  // Row-major on disk.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = rows;
  put(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
  write_file_atomic(matrix_path, bin);

  std::string manifest;
  for (std::size_t i = 0; i < post_ids.size(); ++i) {
    nlohmann::json j{{"post_id", post_ids[i]},
                     {"row", i},
                     {"strategy", to_string(strategy)},
                     {"dim", dim()},
                     {"encoder_id", encoder_id}};
    manifest += j.dump() + "\n";
  }
  write_file_atomic(manifest_path, manifest);
}

RepresentationSet RepresentationSet::load(const std::filesystem::path& matrix_path,
                                          const std::filesystem::path& manifest_path) {
  const std::string bin = read_file(matrix_path);
  const std::size_t header = 4 + sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t);
  if (bin.size() < header || std::memcmp(bin.data(), kMagic, 4) != 0)
    throw InputError("not a representation matrix: " + matrix_path.string());
  std::uint32_t version;
  std::uint64_t r, c;
  std::memcpy(&version, bin.data() + 4, sizeof version);
  std::memcpy(&r, bin.data() + 8, sizeof r);
  std::memcpy(&c, bin.data() + 16, sizeof c);
  if (version != kStoreVersion) throw InputError("unsupported representation store version");
  if (bin.size() != header + r * c * sizeof(double)) throw InputError("truncated representation matrix");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Eigen::Index>(r),
                                                                            static_cast<Eigen::Index>(c));
  std::memcpy(rm.data(), bin.data() + header, r * c * sizeof(double));

  RepresentationSet set;
  set.rows = rm;
  set.post_ids.resize(r);
  std::istringstream in(read_file(manifest_path));
  std::string line;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::size_t row = j.at("row").get<std::size_t>();
    if (row >= r) throw InputError("manifest row out of range");
    if (j.at("dim").get<std::uint64_t>() != c) throw InputError("manifest dim disagrees with matrix");
    set.post_ids[row] = j.at("post_id").get<std::string>();
    set.strategy = parse_strategy(j.at("strategy").get<std::string>());
    set.encoder_id = j.at("encoder_id").get<std::string>();
    ++seen;
  }
  if (seen != r) throw InputError("manifest does not cover every matrix row");
  return set;
}

RepresentationSet build_representations(std::span<const RepresentationInput> inputs, Strategy strategy,
                                        const RepresentationResources& resources) {
  if (!resources.encoder) throw ConfigError("no sentence encoder configured");
  const SentenceEncoder& enc = *resources.encoder;
  if (strategy == Strategy::rel && !resources.linker) throw ConfigError("rel strategy needs an entity linker");
  if (strategy == Strategy::conceptnet && !resources.concepts) throw ConfigError("conceptnet strategy needs a concept table");
  if (strategy == Strategy::context_embed && !enc.token_access())
    throw ConfigError("encoder " + enc.id() + " does not expose token access");

  std::vector<const RepresentationInput*> order;
  for (const auto& in : inputs) order.push_back(&in);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->post_id < b->post_id; });

  std::vector<std::string> missing;
  for (const auto* in : order) {
    const bool needs_context = strategy == Strategy::append_embed || strategy == Strategy::embed_concat ||
                               strategy == Strategy::context_embed;
    if (needs_context && !in->context) missing.push_back(in->post_id);
    if (strategy == Strategy::llm_enhance && !in->enhanced) missing.push_back(in->post_id);
  }
  if (!missing.empty())
    throw IntegrityError("missing context for " + std::to_string(missing.size()) + " post(s): " +
                             join(std::vector<std::string>(missing.begin(), missing.begin() + std::min<std::ptrdiff_t>(
                                                                         static_cast<std::ptrdiff_t>(missing.size()), 10)),
                                  ", "),
                         missing);

  const std::size_t dim =
      strategy_dim(strategy, enc.output_dim(), resources.concepts ? resources.concepts->dim() : kConceptDim);
  RepresentationSet set;
  set.strategy = strategy;
  set.encoder_id = enc.id();
  set.rows.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(dim));

  std::optional<ContextProjection> identity;
  if (strategy == Strategy::context_embed) {
    Rng unused(0);
    identity = ContextProjection::near_identity(enc.output_dim(), enc.token_access()->token_dim(), 0.0, unused);
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& in = *order[i];
    Vector v;
    switch (strategy) {
      case Strategy::zero_context: v = zero_context(in.base_text, enc); break;
      case Strategy::append_embed: v = append_embed(in.base_text, *in.context, enc); break;
      case Strategy::embed_concat: v = embed_concat(in.base_text, *in.context, enc); break;
      case Strategy::context_embed: v = context_embed_forward(in.base_text, *in.context, enc, *identity); break;
      case Strategy::llm_enhance: v = zero_context(*in.enhanced, enc); break;
      case Strategy::rel: {
        const auto links = resources.linker->link(in.base_text);
        v = rel_representation(in.base_text, links, enc);
        break;
      }
      case Strategy::conceptnet: v = conceptnet_representation(in.base_text, *resources.concepts, enc); break;
    }
    if (static_cast<std::size_t>(v.size()) != dim) throw ContractError("representation has wrong dimension");
    set.rows.row(static_cast<Eigen::Index>(i)) = v.transpose();
    set.post_ids.push_back(in.post_id);
  }
  return set;
}

}  // namespace ctxhsd
