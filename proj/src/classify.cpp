#include "ctxhsd/classify.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::pair<Head, std::string_view> kHeadNames[] = {
    {Head::softmax_2, "softmax_2"}, {Head::softmax_7, "softmax_7"}, {Head::sigmoid_4, "sigmoid_4"}};

constexpr char kModelMagic[4] = {'C', 'T', 'X', 'M'};
constexpr std::uint32_t kModelVersion = 1;

bool is_sigmoid(Head h) { return h == Head::sigmoid_4; }

void check_targets(std::span<const Target> y, Head head) {
  const int arity = static_cast<int>(head_arity(head));
  const int limit = is_sigmoid(head) ? (1 << arity) : arity;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0 || y[i] >= limit)
      throw ContractError("target " + std::to_string(y[i]) + " of row " + std::to_string(i) + " is outside the " +
                          std::string(to_string(head)) + " head");
}

std::vector<DenseLayer> init_layers(const MLPConfig& c, Rng& rng) {
  std::vector<std::size_t> dims{c.input_dim};
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  dims.push_back(head_arity(c.head));
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]), out = static_cast<Eigen::Index>(dims[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer d;
    d.weight.resize(out, in);
    for (Eigen::Index i = 0; i < out; ++i)
      for (Eigen::Index j = 0; j < in; ++j) d.weight(i, j) = rng.uniform(-bound, bound);
    d.bias.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) d.bias[i] = rng.uniform(-bound, bound);
    layers.push_back(std::move(d));
  }
  return layers;
}

// activations[0] is the input; activations[l + 1] the output of layer l
// (ReLU for hidden layers, raw logits for the last).
Matrix forward(const std::vector<DenseLayer>& layers, const Matrix& x, std::vector<Matrix>* activations) {
  Matrix cur = x;
  if (activations) {
    activations->clear();
    activations->push_back(cur);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = cur * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    cur = std::move(z);
    if (activations) activations->push_back(cur);
  }
  return cur;
}

Matrix head_probabilities(Head head, const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  if (is_sigmoid(head)) {
    p = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    return p;
  }
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

// Mean loss over the batch and the gradient of that mean with respect to the logits.
double loss_and_grad(Head head, const Matrix& logits, std::span<const Target> y, Matrix& grad) {
  const auto n = logits.rows(), k = logits.cols();
  grad.resize(n, k);
  double loss = 0.0;
  if (is_sigmoid(head)) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < k; ++j) {
        const double z = logits(i, j);
        const double t = (y[static_cast<std::size_t>(i)] >> j) & 1 ? 1.0 : 0.0;
        loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        grad(i, j) = (1.0 / (1.0 + std::exp(-z)) - t) / static_cast<double>(n * k);
      }
    return loss / static_cast<double>(n * k);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    const auto target = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
    loss += std::log(z) + mx - logits(i, target);
    grad.row(i) = e / (z * static_cast<double>(n));
    grad(i, target) -= 1.0 / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

// Returns d loss / d input.
Matrix backward(const std::vector<DenseLayer>& layers, const std::vector<Matrix>& activations, Matrix grad,
                std::vector<LayerGrad>& grads) {
  grads.resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weight = grad.transpose() * activations[l];
    grads[l].bias = grad.colwise().sum().transpose();
    grad = grad * layers[l].weight;
    if (l > 0) grad = (grad.array() * (activations[l].array() > 0.0).cast<double>()).matrix();
  }
  return grad;
}

class Adam {
 public:
  Adam(const MLPConfig& c) : c_(c) {}

  template <typename T>
  void step(std::size_t slot, T& param, const T& grad) {
    if (slot >= m_.size()) {
      m_.resize(slot + 1);
      v_.resize(slot + 1);
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.size() != grad.size()) {
      m = Eigen::ArrayXd::Zero(grad.size());
      v = Eigen::ArrayXd::Zero(grad.size());
    }
    const Eigen::Map<const Eigen::ArrayXd> g(grad.data(), grad.size());
    Eigen::Map<Eigen::ArrayXd> p(param.data(), param.size());
    m = c_.beta1 * m + (1.0 - c_.beta1) * g;
    v = c_.beta2 * v + (1.0 - c_.beta2) * g.square();
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    p -= c_.learning_rate * (m / bc1) / ((v / bc2).sqrt() + c_.epsilon);
  }
  void tick() { ++t_; }

 private:
  const MLPConfig& c_;
  std::size_t t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

void update_mlp(Adam& adam, std::vector<DenseLayer>& layers, const std::vector<LayerGrad>& grads) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    adam.step(2 * l, layers[l].weight, grads[l].weight);
    adam.step(2 * l + 1, layers[l].bias, grads[l].bias);
  }
}

template <typename Less>
std::vector<std::size_t> canonical_order(std::size_t n, Less less) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), less);
  return order;
}

bool vector_less(const double* a, const double* b, std::size_t n) {
  return std::lexicographical_compare(a, a + n, b, b + n);
}

// Shared epoch loop: `step` consumes one batch of row indices and returns its mean loss.
template <typename Step>
std::vector<double> run_epochs(const MLPConfig& c, std::vector<std::size_t> canonical, Step step) {
  Rng shuffle_rng(derive_seed(c.seed, 2));
  std::vector<double> trace;
  trace.reserve(c.epochs);
  const std::size_t n = canonical.size();
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::vector<std::size_t> perm = canonical;
    shuffle_rng.shuffle(std::span<std::size_t>(perm));
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += c.batch_size) {
      const std::size_t end = std::min(n, start + c.batch_size);
      const std::span<const std::size_t> batch(perm.data() + start, end - start);
      const double loss = step(batch);
      if (!std::isfinite(loss)) throw DivergenceError(epoch);
      total += loss * static_cast<double>(batch.size());
    }
    trace.push_back(total / static_cast<double>(n));
  }
  return trace;
}

void put_matrix(std::string& out, const Matrix& m) {
  const RowMatrix rm = m;
  out.append(reinterpret_cast<const char*>(rm.data()), static_cast<std::size_t>(rm.size()) * sizeof(double));
}

void put_vector(std::string& out, const Vector& v) {
  out.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double));
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  void take(void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw InputError("truncated model file");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    RowMatrix rm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    take(rm.data(), rows * cols * sizeof(double));
    return rm;
  }
  Vector vector(std::size_t n) {
    Vector v(static_cast<Eigen::Index>(n));
    take(v.data(), n * sizeof(double));
    return v;
  }
};

nlohmann::json config_json(const MLPConfig& c) {
  return {{"input_dim", c.input_dim},   {"hidden_dims", c.hidden_dims},   {"head", to_string(c.head)},
          {"epochs", c.epochs},         {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},           {"epsilon", c.epsilon},           {"batch_size", c.batch_size},
          {"seed", c.seed},             {"projection_noise", c.projection_noise}};
}

MLPConfig config_from_json(const nlohmann::json& j) {
  MLPConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.head = parse_head(j.at("head").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.projection_noise = j.at("projection_noise").get<double>();
  return c;
}

}  // namespace

std::string_view to_string(Head h) {
  for (auto& [k, v] : kHeadNames)
    if (k == h) return v;
  return "unknown";
}

Head parse_head(std::string_view s) {
  for (auto& [k, v] : kHeadNames)
    if (v == s) return k;
  throw ConfigError("unknown output head '" + std::string(s) + "'");
}

std::size_t head_arity(Head h) {
  switch (h) {
    case Head::softmax_2: return 2;
    case Head::softmax_7: return 7;
    case Head::sigmoid_4: return 4;
  }
  return 0;
}

Head head_for(Task t) {
  switch (t) {
    case Task::binary: return Head::softmax_2;
    case Task::multiclass: return Head::softmax_7;
    case Task::multilabel: return Head::sigmoid_4;
  }
  return Head::softmax_2;
}

Task task_for(Head h) {
  switch (h) {
    case Head::softmax_2: return Task::binary;
    case Head::softmax_7: return Task::multiclass;
    case Head::sigmoid_4: return Task::multilabel;
  }
  return Task::binary;
}

void MLPConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (hidden_dims.size() != 3) throw ConfigError("the classifier has exactly three hidden layers");
  for (auto d : hidden_dims)
    if (d == 0) throw ConfigError("hidden layer width must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

Matrix TrainedModel::scores(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != config.input_dim)
    throw ContractError("model expects " + std::to_string(config.input_dim) + "-dim inputs, got " +
                        std::to_string(x.cols()));
  return head_probabilities(config.head, forward(layers, x, nullptr));
}

std::string TrainedModel::serialize() const {
  nlohmann::json header{{"format", "ctxhsd-model"},
                        {"config", config_json(config)},
                        {"strategy", to_string(strategy)},
                        {"encoder_id", encoder_id},
                        {"tail_fingerprint", tail_fingerprint},
                        {"has_projection", projection.has_value()},
                        {"epochs_trained", loss_trace.size()}};
  if (projection)
    header["projection_shape"] = {projection->weight.rows(), projection->weight.cols()};
  const std::string h = header.dump();
  std::string out(kModelMagic, 4);
  out.append(reinterpret_cast<const char*>(&kModelVersion), sizeof kModelVersion);
  const std::uint64_t hlen = h.size();
  out.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out += h;
  for (const auto& l : layers) {
    put_matrix(out, l.weight);
    put_vector(out, l.bias);
  }
  if (projection) {
    put_matrix(out, projection->weight);
    put_vector(out, projection->bias);
  }
  out.append(reinterpret_cast<const char*>(loss_trace.data()), loss_trace.size() * sizeof(double));
  return out;
}

TrainedModel TrainedModel::deserialize(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw InputError("not a model file");
  Reader r{bytes, 4};
  std::uint32_t version;
  std::uint64_t hlen;
  r.take(&version, sizeof version);
  if (version != kModelVersion) throw InputError("unsupported model version");
  r.take(&hlen, sizeof hlen);
  if (r.pos + hlen > bytes.size()) throw InputError("truncated model header");
  const auto header = nlohmann::json::parse(bytes.substr(r.pos, hlen));
  r.pos += hlen;
  TrainedModel m;
  m.config = config_from_json(header.at("config"));
  m.strategy = parse_strategy(header.at("strategy").get<std::string>());
  m.encoder_id = header.at("encoder_id").get<std::string>();
  m.tail_fingerprint = header.at("tail_fingerprint").get<std::string>();
  std::vector<std::size_t> dims{m.config.input_dim};
  dims.insert(dims.end(), m.config.hidden_dims.begin(), m.config.hidden_dims.end());
  dims.push_back(head_arity(m.config.head));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer d;
    d.weight = r.matrix(dims[l + 1], dims[l]);
    d.bias = r.vector(dims[l + 1]);
    m.layers.push_back(std::move(d));
  }
  if (header.at("has_projection").get<bool>()) {
    const auto shape = header.at("projection_shape").get<std::vector<std::size_t>>();
    ContextProjection p;
    p.weight = r.matrix(shape.at(0), shape.at(1));
    p.bias = r.vector(shape.at(0));
    m.projection = std::move(p);
  }
  m.loss_trace.resize(header.at("epochs_trained").get<std::size_t>());
  r.take(m.loss_trace.data(), m.loss_trace.size() * sizeof(double));
  if (r.pos != bytes.size()) throw InputError("trailing bytes in model file");
  return m;
}

void TrainedModel::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

TrainedModel TrainedModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

TrainedModel train_mlp(const Matrix& x, std::span<const Target> y, const MLPConfig& config, Strategy strategy) {
  config.validate();
  if (static_cast<std::size_t>(x.cols()) != config.input_dim)
    throw ContractError("config expects " + std::to_string(config.input_dim) + "-dim inputs, got " +
                        std::to_string(x.cols()));
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ContractError("row count does not match target count");
  if (y.empty()) throw ContractError("no training rows");
  check_targets(y, config.head);

  const RowMatrix rows = x;
  const std::size_t d = config.input_dim;
  auto order = canonical_order(y.size(), [&](std::size_t a, std::size_t b) {
    const double* ra = rows.data() + a * d;
    const double* rb = rows.data() + b * d;
    if (std::equal(ra, ra + d, rb)) return y[a] < y[b];
    return vector_less(ra, rb, d);
  });

  Rng init_rng(derive_seed(config.seed, 1));
  TrainedModel model;
  model.config = config;
  model.strategy = strategy;
  model.layers = init_layers(config, init_rng);
  Adam adam(config);
  std::vector<Matrix> acts;
  std::vector<LayerGrad> grads;
  std::vector<Target> yb;
  Matrix xb, grad;
  model.loss_trace = run_epochs(config, std::move(order), [&](std::span<const std::size_t> batch) {
    xb.resize(static_cast<Eigen::Index>(batch.size()), x.cols());
    yb.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(batch[i]));
      yb[i] = y[batch[i]];
    }
    const Matrix logits = forward(model.layers, xb, &acts);
    const double loss = loss_and_grad(config.head, logits, yb, grad);
    if (!std::isfinite(loss)) return loss;
    backward(model.layers, acts, grad, grads);
    adam.tick();
    update_mlp(adam, model.layers, grads);
    return loss;
  });
  return model;
}

std::vector<ContextEmbedExample> prepare_context_embed(std::span<const std::string> posts,
                                                       std::span<const ContextRecord> contexts,
                                                       const SentenceEncoder& encoder) {
  if (posts.size() != contexts.size()) throw ContractError("posts and contexts differ in length");
  const TokenAccess* access = encoder.token_access();
  if (!access) throw ConfigError("encoder " + encoder.id() + " does not expose token access");
  std::vector<ContextEmbedExample> out(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    out[i].tokens = access->tokenize(posts[i]);
    if (!contexts[i].is_empty_sentinel()) out[i].context_vector = encoder.encode(contexts[i].text);
  }
  return out;
}

TrainedModel train_context_embed(std::span<const std::string> posts, std::span<const ContextRecord> contexts,
                                 std::span<const Target> y, const SentenceEncoder& encoder,
                                 const MLPConfig& config) {
  const auto examples = prepare_context_embed(posts, contexts, encoder);
  return train_context_embed(examples, y, encoder, config);
}

TrainedModel train_context_embed(std::span<const ContextEmbedExample> examples, std::span<const Target> y,
                                 const SentenceEncoder& encoder, const MLPConfig& config) {
  config.validate();
  const TokenAccess* access = encoder.token_access();
  if (!access) throw ConfigError("encoder " + encoder.id() + " does not expose token access");
  if (config.input_dim != access->token_dim())
    throw ContractError("context-embed classifier input must match the token width");
  if (examples.size() != y.size()) throw ContractError("example count does not match target count");
  if (y.empty()) throw ContractError("no training rows");
  check_targets(y, config.head);

  auto order = canonical_order(y.size(), [&](std::size_t a, std::size_t b) {
    const auto& ea = examples[a];
    const auto& eb = examples[b];
    if (ea.tokens != eb.tokens) return ea.tokens < eb.tokens;
    if (ea.context_vector.has_value() != eb.context_vector.has_value()) return !ea.context_vector.has_value();
    if (ea.context_vector && *ea.context_vector != *eb.context_vector)
      return vector_less(ea.context_vector->data(), eb.context_vector->data(),
                         static_cast<std::size_t>(ea.context_vector->size()));
    return y[a] < y[b];
  });

  Rng init_rng(derive_seed(config.seed, 1));
  Rng proj_rng(derive_seed(config.seed, 3));
  TrainedModel model;
  model.config = config;
  model.strategy = Strategy::context_embed;
  model.encoder_id = encoder.id();
  model.tail_fingerprint = access->tail_fingerprint();
  model.layers = init_layers(config, init_rng);
  model.projection =
      ContextProjection::near_identity(encoder.output_dim(), access->token_dim(), config.projection_noise, proj_rng);

  Adam adam(config);
  std::vector<Matrix> acts;
  std::vector<LayerGrad> grads;
  std::vector<Target> yb;
  std::vector<ContextEmbedTrace> traces;
  Matrix xb, grad;
  Matrix grad_w;
  Vector grad_b;
  const std::size_t max_tokens = encoder.max_tokens();
  model.loss_trace = run_epochs(config, std::move(order), [&](std::span<const std::size_t> batch) {
    auto& proj = *model.projection;
    xb.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(config.input_dim));
    traces.resize(batch.size());
    yb.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& ex = examples[batch[i]];
      xb.row(static_cast<Eigen::Index>(i)) =
          context_embed_forward(ex.tokens, ex.context_vector, *access, proj, max_tokens, &traces[i]).transpose();
      yb[i] = y[batch[i]];
    }
    const Matrix logits = forward(model.layers, xb, &acts);
    const double loss = loss_and_grad(config.head, logits, yb, grad);
    if (!std::isfinite(loss)) return loss;
    const Matrix dx = backward(model.layers, acts, grad, grads);
    grad_w = Matrix::Zero(proj.weight.rows(), proj.weight.cols());
    grad_b = Vector::Zero(proj.bias.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      context_embed_backward(traces[i], dx.row(static_cast<Eigen::Index>(i)).transpose(), *access, grad_w, grad_b);
    adam.tick();
    update_mlp(adam, model.layers, grads);
    const std::size_t slot = 2 * model.layers.size();
    adam.step(slot, proj.weight, grad_w);
    adam.step(slot + 1, proj.bias, grad_b);
    return loss;
  });
  return model;
}

Matrix context_embed_features(const TrainedModel& model, std::span<const ContextEmbedExample> examples,
                              const SentenceEncoder& encoder) {
  if (!model.projection) throw ContractError("model has no context projection");
  const TokenAccess* access = encoder.token_access();
  if (!access) throw ConfigError("encoder " + encoder.id() + " does not expose token access");
  if (!model.tail_fingerprint.empty() && model.tail_fingerprint != access->tail_fingerprint())
    throw ContractError("encoder tail differs from the one the model was trained with");
  Matrix out(static_cast<Eigen::Index>(examples.size()), static_cast<Eigen::Index>(access->token_dim()));
  for (std::size_t i = 0; i < examples.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        context_embed_forward(examples[i].tokens, examples[i].context_vector, *access, *model.projection,
                              encoder.max_tokens())
            .transpose();
  return out;
}

const Prediction* PredictionSet::find(std::string_view post_id) const {
  for (std::size_t i = 0; i < post_ids.size(); ++i)
    if (post_ids[i] == post_id) return &items[i];
  return nullptr;
}

std::string PredictionSet::to_jsonl() const {
  std::string out;
  nlohmann::json head{{"task", to_string(task)}, {"model_id", model_id}, {"count", post_ids.size()}};
  out += head.dump() + "\n";
  for (std::size_t i = 0; i < post_ids.size(); ++i) {
    const auto& p = items[i];
    nlohmann::json j{{"post_id", post_ids[i]}, {"label", p.label}, {"scores", p.scores}, {"abstained", p.abstained}};
    if (!p.raw.empty()) j["raw"] = p.raw;
    out += j.dump() + "\n";
  }
  return out;
}

PredictionSet PredictionSet::from_jsonl(std::string_view text) {
  PredictionSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (first) {
      set.task = parse_task(j.at("task").get<std::string>());
      set.model_id = j.at("model_id").get<std::string>();
      first = false;
      continue;
    }
    Prediction p;
    p.label = j.at("label").get<Target>();
    p.scores = j.at("scores").get<std::vector<double>>();
    p.abstained = j.at("abstained").get<bool>();
    p.raw = j.value("raw", "");
    set.post_ids.push_back(j.at("post_id").get<std::string>());
    set.items.push_back(std::move(p));
  }
  if (first) throw InputError("empty prediction file");
  return set;
}

Prediction decode_scores(Head head, std::span<const double> scores) {
  if (scores.size() != head_arity(head)) throw ContractError("score vector does not match head arity");
  Prediction p;
  p.scores.assign(scores.begin(), scores.end());
  if (is_sigmoid(head)) {
    LabelSet set;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= 0.5) set.add(static_cast<MisogynyLabel>(i));
    p.label = set.bits();
    return p;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  p.label = static_cast<Target>(best);
  return p;
}

PredictionSet predict(const TrainedModel& model, const Matrix& x, std::span<const std::string> post_ids) {
  if (static_cast<std::size_t>(x.rows()) != post_ids.size()) throw ContractError("row count does not match id count");
  const Matrix s = model.scores(x);
  PredictionSet set;
  set.task = task_for(model.config.head);
  set.post_ids.assign(post_ids.begin(), post_ids.end());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(s.cols()));
    for (Eigen::Index j = 0; j < s.cols(); ++j) row[static_cast<std::size_t>(j)] = s(i, j);
    set.items.push_back(decode_scores(model.config.head, row));
  }
  return set;
}

PredictionSet llm_predict(std::span<const LlmItem> items, LlmTask task, ContextGenerator& generator,
                          const LabelRegistry& registry, std::size_t parallelism) {
  const std::string prompt_id(prompt_id_for(task));
  const bool meme = task == LlmTask::binary_meme || task == LlmTask::multilabel_meme;
  PredictionSet set;
  set.task = task_of(task);
  set.model_id = "llm:" + generator.provider().id() + ":" + prompt_id;
  set.post_ids.resize(items.size());
  set.items.resize(items.size());
  std::mutex log_mu;
  auto predict_one = [&](const LlmItem& it) {
    SlotValues in;
    if (meme) {
      if (!it.image) throw InputError("meme prediction needs an image: " + it.post_id);
      in["meme"] = it.image->string();
    } else {
      in["post"] = it.text;
    }
    const ContextRecord reply = generator.prediction(it.post_id, prompt_id, in);
    Prediction p;
    try {
      p.label = parse_llm_label(reply.text, set.task, registry).label;
    } catch (const ParseError& e) {
      p.abstained = true;
      p.label = kAbstain;
      p.raw = e.raw();
      std::lock_guard lock(log_mu);
      spdlog::warn("abstention for {}: {}", it.post_id, e.what());
    }
    return p;
  };
  std::exception_ptr first_error;
  run_bounded(items.size(), parallelism, [&](std::size_t i) {
    try {
      set.items[i] = predict_one(items[i]);
      set.post_ids[i] = items[i].post_id;
    } catch (...) {
      std::lock_guard lock(log_mu);
      if (!first_error) first_error = std::current_exception();
    }
  });
  if (first_error) std::rethrow_exception(first_error);
  return set;
}

}  // namespace ctxhsd
