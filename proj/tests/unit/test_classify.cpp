#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "ctxhsd/classify.hpp"
#include "ctxhsd/contextgen.hpp"
#include "ctxhsd/provider.hpp"
#include "test_support.hpp"

using namespace ctxhsd;
using ctxhsd::testing::TempDir;
using ctxhsd::testing::write;

namespace {

MLPConfig small(std::size_t input_dim, Head head = Head::softmax_2) {
  MLPConfig c;
  c.input_dim = input_dim;
  c.hidden_dims = {16, 16, 16};
  c.head = head;
  c.epochs = 60;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  return c;
}

// Two Gaussian blobs separated along the first axis.
void separable(std::size_t n, std::size_t d, std::uint64_t seed, Matrix& x, std::vector<Target>& y) {
  Rng rng(seed);
  x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<Target>(i % 2);
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.3 * rng.normal();
    x(static_cast<Eigen::Index>(i), 0) += y[i] ? 1.0 : -1.0;
  }
}

double accuracy(const PredictionSet& p, const std::vector<Target>& y) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += p.items[i].label == y[i];
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("heads") {
  CHECK(head_arity(Head::softmax_2) == 2);
  CHECK(head_arity(Head::softmax_7) == 7);
  CHECK(head_arity(Head::sigmoid_4) == 4);
  CHECK(head_for(Task::multilabel) == Head::sigmoid_4);
  CHECK(task_for(Head::softmax_7) == Task::multiclass);
}

TEST_CASE("config defaults and validation") {
  MLPConfig c;
  CHECK(c.hidden_dims == std::vector<std::size_t>{512, 512, 512});
  CHECK(c.epochs == 500);
  CHECK(c.learning_rate == 1e-3);
  c.hidden_dims = {512, 512};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("score decoding") {
  const std::vector<double> sig = {0.9, 0.4, 0.5, 0.1};
  CHECK(decode_scores(Head::sigmoid_4, sig).label == 0b0101);
  const std::vector<double> tie = {0.5, 0.5};
  CHECK(decode_scores(Head::softmax_2, tie).label == 0);
  const std::vector<double> seven = {0.1, 0.1, 0.3, 0.3, 0.1, 0.05, 0.05};
  CHECK(decode_scores(Head::softmax_7, seven).label == 2);
}

TEST_CASE("training is deterministic and learns a separable set") {
  Matrix x;
  std::vector<Target> y;
  separable(64, 8, 1, x, y);
  const auto cfg = small(8);
  const TrainedModel a = train_mlp(x, y, cfg);
  const TrainedModel b = train_mlp(x, y, cfg);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.loss_trace.size() == cfg.epochs);
  CHECK(accuracy(predict(a, x, ids(64)), y) >= 0.95);
  auto other = cfg;
  other.seed = 9;
  CHECK(train_mlp(x, y, other).serialize() != a.serialize());
}

TEST_CASE("row order does not change the model") {
  Matrix x;
  std::vector<Target> y;
  separable(20, 4, 2, x, y);
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(8);
  rng.shuffle(std::span<std::size_t>(perm));
  Matrix xp(20, 4);
  std::vector<Target> yp(20);
  for (std::size_t i = 0; i < 20; ++i) {
    xp.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(perm[i]));
    yp[i] = y[perm[i]];
  }
  auto cfg = small(4);
  cfg.epochs = 5;
  CHECK(train_mlp(x, y, cfg).serialize() == train_mlp(xp, yp, cfg).serialize());
}

TEST_CASE("dimension contracts") {
  Matrix x = Matrix::Zero(4, 1536);
  std::vector<Target> y = {0, 1, 0, 1};
  auto cfg = small(1068);
  CHECK_THROWS_AS(train_mlp(x, y, cfg), ContractError);
  cfg = small(4);
  cfg.epochs = 1;
  const TrainedModel m = train_mlp(Matrix::Zero(4, 4), y, cfg);
  CHECK_THROWS_AS(predict(m, Matrix::Zero(2, 5), ids(2)), ContractError);
  std::vector<Target> bad = {0, 1, 2, 1};
  CHECK_THROWS_AS(train_mlp(Matrix::Zero(4, 4), bad, cfg), ContractError);
}

TEST_CASE("non-finite loss is a divergence error") {
  Matrix x = Matrix::Zero(4, 4);
  x(0, 0) = std::numeric_limits<double>::infinity();
  std::vector<Target> y = {0, 1, 0, 1};
  CHECK_THROWS_AS(train_mlp(x, y, small(4)), DivergenceError);
}

TEST_CASE("softmax scores sum to one, sigmoid scores lie in [0, 1]") {
  Matrix x;
  std::vector<Target> y;
  separable(14, 4, 3, x, y);
  for (std::size_t i = 0; i < 14; ++i) y[i] = static_cast<Target>(i % 7);
  auto cfg = small(4, Head::softmax_7);
  cfg.epochs = 3;
  for (const auto& p : predict(train_mlp(x, y, cfg), x, ids(14)).items) {
    CHECK(std::accumulate(p.scores.begin(), p.scores.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(p.label >= 0);
    CHECK(p.label < 7);
  }
  for (std::size_t i = 0; i < 14; ++i) y[i] = static_cast<Target>(i % 16);
  cfg.head = Head::sigmoid_4;
  for (const auto& p : predict(train_mlp(x, y, cfg), x, ids(14)).items) {
    for (double s : p.scores) CHECK((s >= 0.0 && s <= 1.0));
    CHECK(p.label < 16);
  }
}

TEST_CASE("model files round-trip") {
  Matrix x;
  std::vector<Target> y;
  separable(8, 4, 4, x, y);
  auto cfg = small(4);
  cfg.epochs = 2;
  TrainedModel m = train_mlp(x, y, cfg, Strategy::embed_concat);
  m.encoder_id = "enc";
  TempDir dir;
  m.save(dir / "m.model");
  const TrainedModel back = TrainedModel::load(dir / "m.model");
  CHECK(back.serialize() == m.serialize());
  CHECK(back.strategy == Strategy::embed_concat);
  CHECK(back.scores(x) == m.scores(x));
  CHECK_THROWS(TrainedModel::deserialize("nonsense"));
}

TEST_CASE("context-embed overfits eight items and leaves the tail frozen") {
  HashingEncoder::Options o;
  o.dim = 16;
  o.head_dim = 4;
  o.ffn_dim = 8;
  const HashingEncoder enc(o);
  const std::string before = enc.tail_fingerprint();
  std::vector<std::string> posts;
  std::vector<ContextRecord> contexts;
  std::vector<Target> y;
  for (int i = 0; i < 8; ++i) {
    posts.push_back("post number " + std::to_string(i));
    ContextRecord c;
    c.post_id = std::to_string(i);
    c.text = i % 2 ? "hostile background " + std::to_string(i) : "benign background " + std::to_string(i);
    if (i == 6) {
      c.mode = ContextMode::named_entity;
      c.text.clear();
    }
    contexts.push_back(c);
    y.push_back(i % 2);
  }
  auto cfg = small(16);
  cfg.epochs = 200;
  cfg.projection_noise = 1e-3;
  const TrainedModel m = train_context_embed(posts, contexts, y, enc, cfg);
  CHECK(enc.tail_fingerprint() == before);
  CHECK(m.tail_fingerprint == before);
  REQUIRE(m.projection.has_value());
  const auto examples = prepare_context_embed(posts, contexts, enc);
  CHECK_FALSE(examples[6].context_vector.has_value());
  CHECK(accuracy(predict(m, context_embed_features(m, examples, enc), ids(8)), y) == 1.0);
  CHECK(train_context_embed(posts, contexts, y, enc, cfg).serialize() == m.serialize());

  cfg.input_dim = 8;
  CHECK_THROWS_AS(train_context_embed(posts, contexts, y, enc, cfg), ContractError);
}

TEST_CASE("prediction sets round-trip through jsonl") {
  PredictionSet s;
  s.task = Task::multilabel;
  s.model_id = "m";
  s.post_ids = {"a", "b"};
  Prediction p1;
  p1.label = 5;
  p1.scores = {0.9, 0.1, 0.7, 0.2};
  Prediction p2;
  p2.abstained = true;
  p2.raw = "who knows";
  s.items = {p1, p2};
  const PredictionSet back = PredictionSet::from_jsonl(s.to_jsonl());
  CHECK(back.post_ids == s.post_ids);
  CHECK(back.task == Task::multilabel);
  CHECK(back.items[0].label == 5);
  CHECK(back.items[0].scores == p1.scores);
  CHECK(back.items[1].abstained);
  CHECK(back.items[1].raw == "who knows");
  CHECK(back.find("b") != nullptr);
  CHECK(back.find("zzz") == nullptr);
}

TEST_CASE("direct llm predictions") {
  TempDir dir;
  write(dir / "m.jpg", "meme");
  ScriptedProvider scripted;
  scripted.on("predict_binary_tweet", [](const ChatRequest& r) {
    return r.user.find("kind") != std::string::npos ? "No." : " YES. ";
  });
  scripted.on("predict_multilabel_meme", "Stereotype, Violence");
  scripted.on("predict_multiclass_tweet", "definitely hateful");
  ContextCache cache;
  ContextGenerator gen(scripted, cache);

  const std::vector<LlmItem> tweets = {{"t1", "a kind post", {}}, {"t2", "a nasty post", {}}};
  const auto binary = llm_predict(tweets, LlmTask::binary_tweet, gen);
  CHECK(binary.items[0].label == 0);
  CHECK(binary.items[1].label == 1);
  CHECK(binary.model_id == "llm:mock-scripted:predict_binary_tweet");

  const std::vector<LlmItem> memes = {{"m", "", dir / "m.jpg"}};
  const auto ml = llm_predict(memes, LlmTask::multilabel_meme, gen);
  LabelSet expected;
  expected.add(MisogynyLabel::stereotype);
  expected.add(MisogynyLabel::violence);
  CHECK(ml.items[0].label == expected.bits());

  const auto mc = llm_predict(tweets, LlmTask::multiclass_tweet, gen, LabelRegistry::builtin(), 2);
  CHECK(mc.items[0].abstained);
  CHECK(mc.items[0].label == kAbstain);
  CHECK(mc.items[0].raw == "definitely hateful");
  // Cached like any generation.
  const std::size_t calls = scripted.calls();
  llm_predict(tweets, LlmTask::binary_tweet, gen);
  CHECK(scripted.calls() == calls);
}
