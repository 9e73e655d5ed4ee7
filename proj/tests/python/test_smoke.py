import json
import os
from pathlib import Path

import numpy as np
import pytest

import ctxhsd

FIXTURES = Path(os.environ.get("CTXHSD_FIXTURE_DIR", Path(__file__).resolve().parents[1] / "fixtures"))


def test_load_and_split():
    corpus = ctxhsd.load_latent_hatred(FIXTURES / "latent_hatred_50.tsv")
    assert len(corpus) == 50
    split = ctxhsd.stratified_split(corpus, 0.8, 0)
    assert len(split.train) + len(split.test) == 50
    assert {p.id for p in split.train.items}.isdisjoint(p.id for p in split.test.items)
    stats = ctxhsd.corpus_stats(corpus)
    assert sum(stats.counts("implicit_class").values()) == 24


def test_bad_file_raises():
    with pytest.raises(ctxhsd.Error):
        ctxhsd.load_latent_hatred(FIXTURES / "does-not-exist.tsv")


def test_prompts():
    assert "tweet_context" in ctxhsd.prompt_ids()
    req = ctxhsd.render_prompt("tweet_context", {"post": "hello"})
    assert "hello" in req.user
    assert ctxhsd.cache_key(req, "mock") == ctxhsd.cache_key(req, "mock")
    with pytest.raises(ctxhsd.ContractError):
        ctxhsd.render_prompt("tweet_context", {})


def test_encoder_and_strategies():
    enc = ctxhsd.HashingEncoder(dim=32)
    v = enc.encode("some text")
    assert v.shape == (32,)
    assert np.isclose(np.linalg.norm(v), 1.0)
    ctx = ctxhsd.ContextRecord("p1", "full_text", "background")
    cat = ctxhsd.embed_concat("some text", ctx, enc)
    assert cat.shape == (64,)
    assert np.array_equal(cat[:32], v)
    assert ctxhsd.strategy_dim("embed_concat") == 1536


class ConstantEncoder(ctxhsd.SentenceEncoder):
    def id(self):
        return "const"

    def output_dim(self):
        return 3

    def max_tokens(self):
        return 16

    def encode(self, text):
        return np.array([1.0, 0.0, 0.0]) if text == "a" else np.array([0.0, 1.0, 0.0])


def test_python_encoder():
    out = ctxhsd.append_embed("a", ctxhsd.ContextRecord("p", "full_text", "b"), ConstantEncoder())
    assert out.shape == (3,)


class Shouter(ctxhsd.LLMProvider):
    def id(self):
        return "shouter"

    def complete(self, request):
        return request.user.upper()


def test_python_provider_and_cache():
    provider = Shouter()
    cache = ctxhsd.ContextCache()
    gen = ctxhsd.ContextGenerator(provider, cache)
    post = ctxhsd.Post()
    post.id = "x"
    post.text = "quiet words"
    rec = gen.fulltext_context(post)
    assert "QUIET WORDS" in rec.text
    assert rec.provider_id == "shouter"
    gen.fulltext_context(post)
    assert gen.provider_calls == 1 and gen.cache_hits == 1


class Tagger(ctxhsd.NerBackend):
    def tag(self, text):
        i = text.find("Paris")
        return [ctxhsd.TokenTag("Paris", "B-LOC", i, i + 5)] if i >= 0 else []


def test_python_ner():
    ents = ctxhsd.extract_entities("off to Paris", Tagger())
    assert [(e.surface, e.tag) for e in ents] == [("paris", "LOC")]


def test_train_and_score():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 4))
    y = [int(r[0] > 0) for r in x]
    cfg = ctxhsd.MLPConfig()
    cfg.input_dim = 4
    cfg.hidden_dims = [16, 16, 16]
    cfg.epochs = 60
    cfg.seed = 1
    model = ctxhsd.train_mlp(x, y, cfg)
    pred = ctxhsd.predict(model, x)
    assert np.mean(np.array(pred) == np.array(y)) > 0.9
    assert ctxhsd.train_mlp(x, y, cfg).serialize() == model.serialize()
    report = ctxhsd.classification_report("binary", y, pred, ["negative", "positive"])
    assert 0.0 <= report["macro_f1"] <= 1.0


def test_metrics():
    f = ctxhsd.f1_per_class([1, 1, 0, 0], [1, 0, 0, 0], 2)
    assert f == pytest.approx([0.8, 2 / 3])
    assert ctxhsd.confusion_matrix([0, 1], [1, 0], ["a", "b"]) == [[0, 1], [1, 0]]
    r = ctxhsd.multilabel_f1([8], [8], ["shaming", "stereotype", "objectification", "violence"])
    assert r["macro_f1"] == pytest.approx(0.25)


def test_pipeline(tmp_path):
    cfg = {
        "output_dir": str(tmp_path / "out"),
        "corpora": {"latent_hatred": {"path": "latent_hatred_50.tsv"}},
        "provider": {"kind": "mock", "parallelism": 1},
        "encoder": {"kind": "hashing", "dim": 32},
        "classifier": {"epochs": 2, "hidden_dims": [8, 8, 8]},
        "runs": 1,
        "matrix": [{"corpus": "latent_hatred", "tasks": ["binary"],
                    "methods": ["zero_context", "embed_concat"], "contexts": ["full_text"]}],
    }
    p = ctxhsd.Pipeline(ctxhsd.RunConfig.from_dict(cfg, FIXTURES))
    with pytest.raises(ctxhsd.UpstreamMissing):
        p.represent()
    p.ingest()
    p.set_provider(Shouter())
    log = p.gen_context()
    assert "50 items" in log
    p.represent()
    p.train()
    p.eval()
    p.compare()
    agg = json.loads((tmp_path / "out/reports/latent_hatred.binary.embed_concat.full_text/aggregate.json").read_text())
    assert "macro_f1" in json.dumps(agg)
    assert "up-to-date" in p.ingest()
