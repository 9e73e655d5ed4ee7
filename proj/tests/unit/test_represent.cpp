#include <doctest.h>

#include <cmath>

#include "ctxhsd/linkers.hpp"
#include "ctxhsd/represent.hpp"
#include "test_support.hpp"

using namespace ctxhsd;
using ctxhsd::testing::IdentityTailAccess;
using ctxhsd::testing::TableEncoder;
using ctxhsd::testing::TempDir;
using ctxhsd::testing::words;

namespace {

ContextRecord ctx(std::string text, ContextMode mode = ContextMode::full_text) {
  ContextRecord r;
  r.post_id = "p";
  r.mode = mode;
  r.text = std::move(text);
  return r;
}

ContextRecord sentinel() { return ctx("", ContextMode::named_entity); }

ContextProjection identity(std::size_t d) {
  return {Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)),
          Vector::Zero(static_cast<Eigen::Index>(d))};
}

HashingEncoder small_encoder(std::size_t dim = 16) {
  HashingEncoder::Options o;
  o.dim = dim;
  o.head_dim = 4;
  o.ffn_dim = 8;
  return HashingEncoder(o);
}

}  // namespace

TEST_CASE("strategy widths") {
  CHECK(strategy_dim(Strategy::zero_context) == 768);
  CHECK(strategy_dim(Strategy::append_embed) == 768);
  CHECK(strategy_dim(Strategy::llm_enhance) == 768);
  CHECK(strategy_dim(Strategy::rel) == 768);
  CHECK(strategy_dim(Strategy::context_embed) == 768);
  CHECK(strategy_dim(Strategy::embed_concat) == 1536);
  CHECK(strategy_dim(Strategy::conceptnet) == 1068);
  for (Strategy s : {Strategy::zero_context, Strategy::append_embed, Strategy::embed_concat, Strategy::context_embed,
                     Strategy::llm_enhance, Strategy::rel, Strategy::conceptnet})
    CHECK(parse_strategy(to_string(s)) == s);
  CHECK_THROWS_AS(parse_strategy("bogus"), ConfigError);
}

TEST_CASE("hashing encoder contract") {
  const HashingEncoder enc;
  CHECK(enc.output_dim() == 768);
  CHECK(enc.max_tokens() == 384);
  const Vector v = enc.encode("some text to encode");
  CHECK(v.size() == 768);
  CHECK(std::abs(v.norm() - 1.0) < 1e-6);
  CHECK(enc.encode("some text to encode") == v);
  CHECK(std::abs(enc.encode("").norm() - 1.0) < 1e-6);
  // 500 tokens encode like their first 384.
  CHECK(enc.encode(words(500)) == enc.encode(words(384)));
  CHECK(enc.encode(words(383)) != enc.encode(words(384)));
}

TEST_CASE("append & embed") {
  const HashingEncoder enc;
  CHECK(append_embed("a post", sentinel(), enc) == zero_context("a post", enc));
  CHECK(append_embed("a", ctx("b"), enc) == enc.encode("a [SEP] b"));
  CHECK(std::abs(append_embed("a", ctx("b"), enc).norm() - 1.0) < 1e-6);
  // Typical lengths (17 + 78 tokens) stay under the limit.
  CHECK(append_embed(words(17, "p"), ctx(words(78, "c")), enc) != append_embed(words(17, "p"), ctx(words(77, "c")), enc));
}

TEST_CASE("embed & concat") {
  const HashingEncoder enc;
  const Vector v = embed_concat("post", ctx("context"), enc);
  CHECK(v.size() == 1536);
  CHECK(v.head(768) == zero_context("post", enc));
  CHECK(v.tail(768) == enc.encode("context"));
  CHECK(v.norm() > 0.0);
  CHECK(v.norm() <= std::sqrt(2.0) + 1e-12);
  const Vector s = embed_concat("post", sentinel(), enc);
  CHECK(s.tail(768).isZero(0));

  TableEncoder basis(768);
  basis.set("a", TableEncoder::basis(768, 0));
  basis.set("b", TableEncoder::basis(768, 1));
  Vector expected = Vector::Zero(1536);
  expected(0) = 1;
  expected(769) = 1;
  CHECK(embed_concat("a", ctx("b"), basis) == expected);
}

TEST_CASE("rel and conceptnet representations") {
  const HashingEncoder enc;
  const std::vector<LinkedEntity> links = {{"x", "X", "X is a thing."}};
  CHECK(rel_representation("post x", links, enc) == enc.encode("post x [SEP] X is a thing."));
  CHECK(rel_representation("post x", {}, enc) == enc.encode("post x"));

  std::string table = "2 300\n/c/en/dog";
  for (int i = 0; i < 300; ++i) table += i == 0 ? " 1" : " 0";
  table += "\n";
  const auto concepts = ConceptTable::from_text(table);
  const Vector v = conceptnet_representation("a dog", concepts, enc);
  CHECK(v.size() == 1068);
  CHECK(v.head(768) == enc.encode("a dog"));
  CHECK(v(768) == doctest::Approx(1.0));
  CHECK(v.norm() <= std::sqrt(2.0) + 1e-12);
  CHECK(conceptnet_representation("a cat", concepts, enc).tail(300).isZero(0));
}

TEST_CASE("multimodal base text") { CHECK(multimodal_base_text("TOP TEXT", "a cat") == "TOP TEXT [SEP] a cat"); }

TEST_CASE("context-embed fused sequence") {
  const HashingEncoder enc = small_encoder();
  const auto tokens = enc.tokenize(words(10));
  const auto proj = identity(16);
  Mask mask;
  const Matrix seq = fused_sequence(tokens, enc.encode("ctx"), enc, proj, 384, &mask);
  CHECK(seq.rows() == 11);
  CHECK(mask == Mask(11, 1));
  CHECK(seq.row(0).transpose().isApprox(enc.encode("ctx")));
  CHECK(seq.row(1).transpose() == enc.token_embedding(tokens[0]));

  const Matrix empty = fused_sequence(tokens, std::nullopt, enc, proj, 384, &mask);
  CHECK(empty.row(0).isZero(0));

  // The slot takes one of max_tokens positions.
  const Matrix cut = fused_sequence(enc.tokenize(words(50)), std::nullopt, enc, proj, 8, &mask);
  CHECK(cut.rows() == 8);

  const Matrix padded = fused_sequence(tokens, std::nullopt, enc, proj, 384, &mask, 22);
  CHECK(padded.rows() == 22);
  CHECK(std::count(mask.begin(), mask.end(), 1) == 11);

  for (std::size_t n : {1u, 5u, 40u}) CHECK(context_embed_forward(enc.tokenize(words(n)), std::nullopt, enc, proj, 384).size() == 16);
}

TEST_CASE("context-embed on an identity tail is the mean of the slot and token embeddings") {
  IdentityTailAccess access(4);
  std::vector<std::string> tokens;
  Vector sum = Vector::Zero(4);
  for (int i = 0; i < 10; ++i) {
    Vector v(4);
    v << i, 1.0, -0.5 * i, 2.0;
    access.set("t" + std::to_string(i), v);
    tokens.push_back("t" + std::to_string(i));
    sum += v;
  }
  const Vector out = context_embed_forward(tokens, std::nullopt, access, identity(4), 384);
  CHECK(out.isApprox(sum / 11.0));
  Vector cv(4);
  cv << 3, 3, 3, 3;
  CHECK(context_embed_forward(tokens, cv, access, identity(4), 384).isApprox((sum + cv) / 11.0));
}

TEST_CASE("padding never changes the pooled output") {
  const HashingEncoder enc = small_encoder();
  const auto proj = identity(16);
  for (std::size_t n : {1u, 3u, 9u}) {
    const auto tokens = enc.tokenize(words(n));
    const Vector cv = enc.encode("background");
    const Vector plain = context_embed_forward(tokens, cv, enc, proj, 384);
    const Vector padded = context_embed_forward(tokens, cv, enc, proj, 384, nullptr, 2 * (n + 1));
    CHECK((plain - padded).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("context-embed needs token access") {
  TableEncoder table(4);
  table.set("ctx", TableEncoder::basis(4, 0));
  CHECK_THROWS_AS(context_embed_forward("post", ctx("ctx"), table, identity(4)), ConfigError);
}

TEST_CASE("projection gradients match central differences") {
  const HashingEncoder enc = small_encoder(8);
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const auto tokens = enc.tokenize(words(3, "tok" + std::to_string(trial)));
    const Vector cv = enc.encode("context " + std::to_string(trial));
    ContextProjection proj = ContextProjection::near_identity(8, 8, 0.1, rng);
    Vector w(8);
    for (int i = 0; i < 8; ++i) w(i) = rng.normal();
    auto loss = [&](const ContextProjection& p) { return w.dot(context_embed_forward(tokens, cv, enc, p, 384)); };

    ContextEmbedTrace trace;
    context_embed_forward(tokens, cv, enc, proj, 384, &trace);
    Matrix gw = Matrix::Zero(8, 8);
    Vector gb = Vector::Zero(8);
    context_embed_backward(trace, w, enc, gw, gb);

    const double h = 1e-5;
    double worst = 0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        ContextProjection plus = proj, minus = proj;
        plus.weight(r, c) += h;
        minus.weight(r, c) -= h;
        worst = std::max(worst, rel(gw(r, c), (loss(plus) - loss(minus)) / (2 * h)));
      }
      ContextProjection plus = proj, minus = proj;
      plus.bias(r) += h;
      minus.bias(r) -= h;
      worst = std::max(worst, rel(gb(r), (loss(plus) - loss(minus)) / (2 * h)));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("sentinel contexts contribute no projection gradient") {
  const HashingEncoder enc = small_encoder(8);
  ContextEmbedTrace trace;
  context_embed_forward(enc.tokenize("a b"), std::nullopt, enc, identity(8), 384, &trace);
  Matrix gw = Matrix::Zero(8, 8);
  Vector gb = Vector::Zero(8);
  context_embed_backward(trace, Vector::Ones(8), enc, gw, gb);
  CHECK(gw.isZero(0));
  CHECK(gb.isZero(0));
}

TEST_CASE("build representations") {
  const HashingEncoder enc;
  std::vector<RepresentationInput> in;
  for (const char* id : {"c", "a", "b"}) {
    RepresentationInput r;
    r.post_id = id;
    r.base_text = std::string("post ") + id;
    r.context = ctx(std::string("context ") + id);
    in.push_back(r);
  }
  RepresentationResources res;
  res.encoder = &enc;
  const auto zero = build_representations(in, Strategy::zero_context, res);
  CHECK(zero.rows.rows() == 3);
  CHECK(zero.rows.cols() == 768);
  CHECK(zero.post_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(zero.rows.row(0).transpose() == enc.encode("post a"));
  CHECK(build_representations(in, Strategy::embed_concat, res).rows.cols() == 1536);

  ConceptTable concepts = ConceptTable::from_text("");
  res.concepts = &concepts;
  CHECK(build_representations(in, Strategy::conceptnet, res).rows.cols() == 1068);

  TempDir dir;
  zero.save(dir / "z.bin", dir / "z.manifest.jsonl");
  const auto back = RepresentationSet::load(dir / "z.bin", dir / "z.manifest.jsonl");
  CHECK(back.post_ids == zero.post_ids);
  CHECK(back.rows == zero.rows);
  CHECK(back.encoder_id == enc.id());
  CHECK(back.strategy == Strategy::zero_context);
}

TEST_CASE("missing contexts are all reported before encoding") {
  TableEncoder table(4);
  std::vector<RepresentationInput> in(3);
  for (std::size_t i = 0; i < 3; ++i) {
    in[i].post_id = "p" + std::to_string(i);
    in[i].base_text = "post";
  }
  in[1].context = ctx("c");
  RepresentationResources res;
  res.encoder = &table;
  try {
    build_representations(in, Strategy::append_embed, res);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(e.ids() == std::vector<std::string>{"p0", "p2"});
  }
  CHECK_THROWS_AS(build_representations(in, Strategy::llm_enhance, res), IntegrityError);
  CHECK(table.calls == 0);
}

TEST_CASE("strategies are bit-reproducible") {
  const HashingEncoder a, b;
  for (Strategy s : {Strategy::append_embed, Strategy::embed_concat})
    CHECK((s == Strategy::append_embed ? append_embed("x y", ctx("z"), a) : embed_concat("x y", ctx("z"), a)) ==
          (s == Strategy::append_embed ? append_embed("x y", ctx("z"), b) : embed_concat("x y", ctx("z"), b)));
  CHECK(a.tail_fingerprint() == b.tail_fingerprint());
}
