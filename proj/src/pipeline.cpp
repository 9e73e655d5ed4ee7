#include "ctxhsd/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include "ctxhsd/contextgen.hpp"
#include "ctxhsd/prompts.hpp"
#include "ctxhsd/represent.hpp"
#include "ctxhsd/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctxhsd {

// ---------------------------------------------------------------- experiments

std::string ExperimentKey::representation_name() const {
  return context ? method + "." + std::string(to_string(*context)) : method;
}

std::string ExperimentKey::name() const {
  return std::string(to_string(corpus)) + "." + std::string(to_string(task)) + "." + representation_name();
}

LlmTask ExperimentKey::llm_task() const {
  if (corpus == CorpusName::mami) return task == Task::multilabel ? LlmTask::multilabel_meme : LlmTask::binary_meme;
  return task == Task::multiclass ? LlmTask::multiclass_tweet : LlmTask::binary_tweet;
}

namespace {

bool method_takes_context(std::string_view method) {
  return method == "append_embed" || method == "embed_concat" || method == "context_embed" || method == "llm_enhance";
}

}  // namespace

void validate_experiment(const ExperimentKey& k) {
  const bool mami = k.corpus == CorpusName::mami;
  if (mami && k.task == Task::multiclass) throw ConfigError(k.name() + ": memes have no multi-class task");
  if (!mami && k.task == Task::multilabel) throw ConfigError(k.name() + ": tweets have no multi-label task");
  if (!k.is_llm()) (void)k.strategy();
  if (method_takes_context(k.method)) {
    if (!k.context) throw ConfigError(k.name() + ": strategy needs a context mode");
    if (mami && *k.context == ContextMode::named_entity)
      throw ConfigError(k.name() + ": named-entity context is not available for memes");
    if (mami && *k.context != ContextMode::multimodal)
      throw ConfigError(k.name() + ": memes use multimodal context");
    if (!mami && *k.context != ContextMode::named_entity && *k.context != ContextMode::full_text)
      throw ConfigError(k.name() + ": tweets use named_entity or full_text context");
  } else if (k.context) {
    throw ConfigError(k.name() + ": method takes no context mode");
  }
}

// ---------------------------------------------------------------- config

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<ExperimentKey> expand_matrix(const json& m) {
  const CorpusName corpus = parse_corpus_name(m.at("corpus").get<std::string>());
  std::vector<std::string> tasks = m.value("tasks", std::vector<std::string>{});
  if (tasks.empty()) tasks = corpus == CorpusName::mami ? std::vector<std::string>{"binary", "multilabel"}
                                                        : std::vector<std::string>{"binary", "multiclass"};
  std::vector<std::string> contexts = m.value("contexts", std::vector<std::string>{});
  if (contexts.empty()) contexts = corpus == CorpusName::mami ? std::vector<std::string>{"multimodal"}
                                                              : std::vector<std::string>{"named_entity", "full_text"};
  const auto methods = m.at("methods").get<std::vector<std::string>>();
  std::vector<ExperimentKey> out;
  for (const auto& t : tasks)
    for (const auto& meth : methods) {
      if (method_takes_context(meth)) {
        for (const auto& c : contexts) out.push_back({corpus, parse_task(t), meth, parse_context_mode(c)});
      } else {
        out.push_back({corpus, parse_task(t), meth, std::nullopt});
      }
    }
  return out;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    c.output_dir = resolve(base_dir, j.value("output_dir", "out"));
    if (j.contains("corpora")) {
      const auto& cj = j.at("corpora");
      if (cj.contains("latent_hatred"))
        c.latent_hatred_path = resolve(base_dir, cj.at("latent_hatred").at("path").get<std::string>());
      if (cj.contains("mami")) {
        c.mami_dir = resolve(base_dir, cj.at("mami").at("dir").get<std::string>());
        if (cj.at("mami").contains("annotations"))
          c.mami_annotations = resolve(base_dir, cj.at("mami").at("annotations").get<std::string>());
      }
    }
    if (j.contains("split")) {
      c.split_ratio = j.at("split").value("ratio", 0.8);
      c.split_seed = j.at("split").value("seed", std::uint64_t{0});
    }
    if (j.contains("provider")) {
      const auto& p = j.at("provider");
      c.provider.kind = p.value("kind", "mock");
      c.provider.http.base_url = p.value("base_url", c.provider.http.base_url);
      c.provider.http.model = p.value("model", c.provider.http.model);
      c.provider.http.api_key_env = p.value("api_key_env", c.provider.http.api_key_env);
      c.provider.http.timeout = std::chrono::seconds(p.value("timeout_seconds", 120));
      c.provider.parallelism = p.value("parallelism", std::size_t{4});
      c.provider.rate_per_second = p.value("rate_per_second", 0.0);
      c.provider.failure_threshold = p.value("failure_threshold", 0.05);
      if (p.contains("retry")) {
        const auto& r = p.at("retry");
        c.provider.retry.max_attempts = r.value("max_attempts", 5);
        c.provider.retry.base_delay = std::chrono::milliseconds(r.value("base_delay_ms", 1000));
        c.provider.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", 30000));
      }
    }
    c.cache_path = resolve(base_dir, j.value("cache", (c.output_dir / "cache" / "contexts.jsonl").string()));
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder.kind = e.value("kind", "hashing");
      c.encoder.hashing.dim = e.value("dim", std::size_t{768});
      c.encoder.hashing.max_tokens = e.value("max_tokens", std::size_t{384});
      c.encoder.hashing.tail_layers = e.value("tail_layers", std::size_t{1});
      c.encoder.hashing.head_dim = e.value("head_dim", std::size_t{64});
      c.encoder.hashing.ffn_dim = e.value("ffn_dim", std::size_t{64});
      c.encoder.hashing.seed = e.value("seed", std::uint64_t{17});
      if (e.contains("path")) c.encoder.lookup_path = resolve(base_dir, e.at("path").get<std::string>());
      c.encoder.lookup_id = e.value("id", "lookup");
    }
    if (j.contains("ner")) c.gazetteer = resolve(base_dir, j.at("ner").at("gazetteer").get<std::string>());
    if (j.contains("linker")) {
      const auto& l = j.at("linker");
      c.linker_kind = l.value("kind", "fixture");
      if (l.contains("path")) c.linker_fixture = resolve(base_dir, l.at("path").get<std::string>());
      c.rel.rel_url = l.value("rel_url", c.rel.rel_url);
      c.rel.summary_url = l.value("summary_url", c.rel.summary_url);
      c.rel.rate_per_second = l.value("rate_per_second", c.rel.rate_per_second);
    }
    if (j.contains("concepts")) {
      c.concepts_path = resolve(base_dir, j.at("concepts").at("path").get<std::string>());
      c.concept_dim = j.at("concepts").value("dim", kConceptDim);
    }
    for (const auto& e : j.value("experiments", json::array())) {
      ExperimentKey k{parse_corpus_name(e.at("corpus").get<std::string>()), parse_task(e.at("task").get<std::string>()),
                      e.at("method").get<std::string>(), std::nullopt};
      if (e.contains("context")) k.context = parse_context_mode(e.at("context").get<std::string>());
      c.experiments.push_back(k);
    }
    for (const auto& m : j.value("matrix", json::array()))
      for (auto& k : expand_matrix(m)) c.experiments.push_back(k);
    if (j.contains("classifier")) {
      const auto& m = j.at("classifier");
      c.classifier.epochs = m.value("epochs", c.classifier.epochs);
      c.classifier.batch_size = m.value("batch_size", c.classifier.batch_size);
      c.classifier.learning_rate = m.value("learning_rate", c.classifier.learning_rate);
      c.classifier.hidden_dims = m.value("hidden_dims", c.classifier.hidden_dims);
      c.classifier.projection_noise = m.value("projection_noise", c.classifier.projection_noise);
    }
    c.runs = j.value("runs", c.runs);
    c.seed_base = j.value("seed_base", c.seed_base);
    for (const auto& p : j.value("comparisons", json::array()))
      c.comparisons.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j, fs::absolute(path).parent_path());
}

void RunConfig::validate() const {
  auto need_file = [](const std::optional<fs::path>& p, const std::string& what) {
    if (p && !fs::exists(*p)) throw ConfigError(what + " not found: " + p->string());
  };
  need_file(latent_hatred_path, "Latent Hatred table");
  need_file(mami_dir, "MAMI directory");
  need_file(mami_annotations, "MAMI annotations");
  need_file(gazetteer, "gazetteer");
  need_file(linker_fixture, "linker fixture");
  need_file(concepts_path, "concept table");
  if (encoder.kind == "lookup" && !fs::exists(encoder.lookup_path))
    throw ConfigError("encoder vectors not found: " + encoder.lookup_path.string());
  if (encoder.kind != "hashing" && encoder.kind != "lookup") throw ConfigError("unknown encoder kind " + encoder.kind);
  if (provider.kind != "mock" && provider.kind != "echo" && provider.kind != "openai_compatible")
    throw ConfigError("unknown provider kind " + provider.kind);
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1)");
  if (runs == 0) throw ConfigError("runs must be positive");
  if (!(provider.failure_threshold >= 0.0 && provider.failure_threshold <= 1.0))
    throw ConfigError("failure_threshold must be in [0, 1]");
  std::set<std::string> names;
  for (const auto& k : experiments) {
    validate_experiment(k);
    if (!names.insert(k.name()).second) throw ConfigError("duplicate experiment " + k.name());
    if (k.corpus == CorpusName::latent_hatred && !latent_hatred_path)
      throw ConfigError(k.name() + ": no Latent Hatred corpus configured");
    if (k.corpus == CorpusName::mami && !mami_dir) throw ConfigError(k.name() + ": no MAMI corpus configured");
    if (k.context == ContextMode::named_entity && !gazetteer)
      throw ConfigError(k.name() + ": named-entity context needs an ner.gazetteer");
    if (k.method == "rel" && linker_kind.empty()) throw ConfigError(k.name() + ": rel needs a linker");
    if (k.method == "rel" && linker_kind == "fixture" && !linker_fixture)
      throw ConfigError(k.name() + ": fixture linker needs a path");
    if (k.method == "conceptnet" && !concepts_path) throw ConfigError(k.name() + ": conceptnet needs a concept table");
  }
}

// ---------------------------------------------------------------- artifacts

json post_to_json(const Post& p) {
  json j{{"id", p.id}, {"text", p.text}, {"binary", static_cast<int>(p.binary_label)}};
  if (p.image_ref) j["image"] = p.image_ref->string();
  if (p.fine_label) j["fine"] = to_string(*p.fine_label);
  if (p.multi_labels) j["multi"] = p.multi_labels->bits();
  return j;
}

Post post_from_json(const json& j) {
  Post p;
  p.id = j.at("id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.binary_label = static_cast<BinaryLabel>(j.at("binary").get<int>());
  if (j.contains("image")) p.image_ref = fs::path(j.at("image").get<std::string>());
  if (j.contains("fine")) p.fine_label = parse_fine_label(j.at("fine").get<std::string>());
  if (j.contains("multi")) p.multi_labels = LabelSet(j.at("multi").get<std::uint8_t>());
  return p;
}

std::string context_index_jsonl(const std::vector<ContextRecord>& records) {
  std::vector<ContextRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.post_id < b.post_id; });
  std::string out;
  for (auto r : sorted) {
    r.timestamp.clear();
    out += to_jsonl(r);
    if (out.back() != '\n') out += '\n';
  }
  return out;
}

std::map<std::string, ContextRecord> read_context_index(const fs::path& path) {
  std::map<std::string, ContextRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto r = context_from_json(line);
    out[r.post_id] = std::move(r);
  }
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UpstreamMissing*>(&e)) return 2;
  if (dynamic_cast<const ProviderFailure*>(&e)) return 3;
  return 1;
}

// ---------------------------------------------------------------- pipeline

namespace {

struct Ingested {
  Corpus corpus;
  std::vector<std::string> train_ids, test_ids;
  std::map<std::string, const Post*> by_id;
};

std::string file_digest(const fs::path& p) { return fs::exists(p) ? sha256_file(p) : std::string("missing"); }

std::string digest_of(const std::vector<std::string>& parts) {
  std::string joined;
  for (const auto& p : parts) joined += p + '\x1f';
  return sha256_hex(joined);
}

void write_text(const fs::path& p, std::string_view s) {
  fs::create_directories(p.parent_path());
  write_file_atomic(p, s);
}

Target target_of(const Post& p, Task task) {
  switch (task) {
    case Task::binary: return static_cast<Target>(p.binary_label);
    case Task::multiclass: return static_cast<Target>(*p.fine_label);
    case Task::multilabel: return p.multi_labels ? static_cast<Target>(p.multi_labels->bits()) : 0;
  }
  return 0;
}

bool in_task(const Post& p, Task task) {
  return task != Task::multiclass || (p.binary_label == BinaryLabel::positive && p.fine_label.has_value());
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string context_label(ContextMode m) {
  switch (m) {
    case ContextMode::named_entity: return "Named Entities";
    case ContextMode::full_text: return "Full Text";
    case ContextMode::multimodal: return "Full Text";
    default: return std::string(to_string(m));
  }
}

std::string strategy_label(std::string_view method) {
  if (method == "append_embed") return "Append & Embed";
  if (method == "embed_concat") return "Embed & Concat";
  if (method == "context_embed") return "Context-Embed";
  if (method == "llm_enhance") return "LLM Enhance";
  return std::string(method);
}

}  // namespace

struct Pipeline::Impl {
  const RunConfig& cfg;
  std::ostream& log;
  std::unique_ptr<LLMProvider> base_provider;
  std::unique_ptr<ResilientProvider> resilient;
  std::unique_ptr<ContextCache> cache;
  std::unique_ptr<SentenceEncoder> encoder;
  std::unique_ptr<EntityLinker> linker;
  std::unique_ptr<ConceptTable> concepts;
  std::unique_ptr<GazetteerNer> ner;
  std::map<CorpusName, Ingested> ingested;

  Impl(const RunConfig& c, std::ostream& l) : cfg(c), log(l) {}

  fs::path out(const fs::path& rel) const { return cfg.output_dir / rel; }
  fs::path ingest_dir(CorpusName c) const { return out(fs::path("ingest") / std::string(to_string(c))); }
  fs::path context_path(CorpusName c, const std::string& unit) const {
    return out(fs::path("contexts") / std::string(to_string(c)) / (unit + ".jsonl"));
  }
  fs::path rep_path(CorpusName c, const std::string& name, const char* ext) const {
    return out(fs::path("representations") / std::string(to_string(c)) / (name + ext));
  }
  fs::path model_path(const ExperimentKey& k, std::uint64_t seed) const {
    return out(fs::path("models") / k.name() / ("seed-" + std::to_string(seed) + ".model"));
  }
  fs::path failures_path(const ExperimentKey& k) const { return out(fs::path("models") / k.name() / "failures.json"); }
  fs::path report_dir(const ExperimentKey& k) const { return out(fs::path("reports") / k.name()); }
  fs::path prediction_path(const std::string& exp, std::uint64_t seed) const {
    return out(fs::path("predictions") / exp / ("seed-" + std::to_string(seed) + ".jsonl"));
  }
  fs::path stamp_path(const std::string& stage, const std::string& unit) const {
    return out(fs::path("stamps") / stage / (unit + ".json"));
  }

  bool up_to_date(const std::string& stage, const std::string& unit, const std::string& inputs,
                  const std::vector<fs::path>& outputs) const {
    const fs::path sp = stamp_path(stage, unit);
    if (!fs::exists(sp)) return false;
    try {
      const auto j = json::parse(read_file(sp));
      if (j.at("inputs").get<std::string>() != inputs) return false;
    } catch (const std::exception&) {
      return false;
    }
    for (const auto& o : outputs)
      if (!fs::exists(o)) return false;
    log << stage << " " << unit << ": up-to-date\n";
    return true;
  }

  void stamp(const std::string& stage, const std::string& unit, const std::string& inputs) const {
    write_text(stamp_path(stage, unit), json{{"inputs", inputs}}.dump(2) + "\n");
  }

  LLMProvider& provider() {
    if (!base_provider) {
      if (cfg.provider.kind == "mock") base_provider = std::make_unique<MockProvider>();
      else if (cfg.provider.kind == "echo") base_provider = std::make_unique<EchoProvider>();
      else base_provider = std::make_unique<OpenAICompatibleProvider>(cfg.provider.http);
    }
    if (cfg.provider.kind == "openai_compatible") {
      if (!resilient)
        resilient = std::make_unique<ResilientProvider>(*base_provider, cfg.provider.retry, cfg.provider.rate_per_second);
      return *resilient;
    }
    return *base_provider;
  }

  ContextCache& context_cache() {
    if (!cache) {
      fs::create_directories(cfg.cache_path.parent_path());
      cache = std::make_unique<ContextCache>(cfg.cache_path);
      for (const auto& w : cache->load_warnings()) spdlog::warn("cache line {}: {}", w.line, w.message);
    }
    return *cache;
  }

  const SentenceEncoder& sentence_encoder() {
    if (!encoder) {
      if (cfg.encoder.kind == "lookup") {
        auto enc = std::make_unique<LookupEncoder>(cfg.encoder.lookup_id, cfg.encoder.hashing.dim,
                                                   cfg.encoder.hashing.max_tokens);
        std::istringstream in(read_file(cfg.encoder.lookup_path));
        std::string line;
        while (std::getline(in, line)) {
          if (trim(line).empty()) continue;
          const auto j = json::parse(line);
          const auto v = j.at("vector").get<std::vector<double>>();
          enc->add(j.at("text").get<std::string>(), Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
        encoder = std::move(enc);
      } else {
        encoder = std::make_unique<HashingEncoder>(cfg.encoder.hashing);
      }
    }
    return *encoder;
  }

  EntityLinker& entity_linker() {
    if (!linker) {
      if (cfg.linker_kind == "rel") linker = std::make_unique<RelLinker>(cfg.rel);
      else if (cfg.linker_fixture) linker = std::make_unique<FixtureLinker>(FixtureLinker::load(*cfg.linker_fixture));
      else throw ConfigError("no entity linker configured");
    }
    return *linker;
  }

  const ConceptTable& concept_table() {
    if (!concepts) {
      if (!cfg.concepts_path) throw ConfigError("no concept table configured");
      concepts = std::make_unique<ConceptTable>(ConceptTable::load(*cfg.concepts_path, cfg.concept_dim));
    }
    return *concepts;
  }

  GazetteerNer& gazetteer() {
    if (!ner) {
      if (!cfg.gazetteer) throw ConfigError("no ner.gazetteer configured");
      ner = std::make_unique<GazetteerNer>(GazetteerNer::load(*cfg.gazetteer));
    }
    return *ner;
  }

  std::vector<CorpusName> configured_corpora() const {
    std::vector<CorpusName> out;
    if (cfg.latent_hatred_path) out.push_back(CorpusName::latent_hatred);
    if (cfg.mami_dir) out.push_back(CorpusName::mami);
    return out;
  }

  const Ingested& load_ingested(CorpusName c) {
    auto it = ingested.find(c);
    if (it != ingested.end()) return it->second;
    const fs::path dir = ingest_dir(c);
    if (!fs::exists(dir / "corpus.jsonl") || !fs::exists(dir / "split.jsonl"))
      throw UpstreamMissing("no ingested " + std::string(to_string(c)) + " corpus", "ingest");
    Ingested ing;
    ing.corpus.name = c;
    std::istringstream in(read_file(dir / "corpus.jsonl"));
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) ing.corpus.items.push_back(post_from_json(json::parse(line)));
    std::istringstream sin(read_file(dir / "split.jsonl"));
    while (std::getline(sin, line)) {
      if (trim(line).empty()) continue;
      const auto j = json::parse(line);
      (j.at("partition").get<std::string>() == "train" ? ing.train_ids : ing.test_ids)
          .push_back(j.at("id").get<std::string>());
    }
    std::sort(ing.train_ids.begin(), ing.train_ids.end());
    std::sort(ing.test_ids.begin(), ing.test_ids.end());
    auto [pos, _] = ingested.emplace(c, std::move(ing));
    for (const auto& p : pos->second.corpus.items) pos->second.by_id[p.id] = &p;
    return pos->second;
  }

  std::map<std::string, ContextRecord> context_index(CorpusName c, const std::string& unit) const {
    const fs::path p = context_path(c, unit);
    if (!fs::exists(p)) {
      std::string mode = unit.substr(0, unit.find('.'));
      if (mode == "ocr" || mode == "caption") mode = "multimodal";
      throw UpstreamMissing("no " + unit + " contexts for " + std::string(to_string(c)),
                            "gen-context --mode " + mode);
    }
    return read_context_index(p);
  }

  // Text each representation starts from: the post, or OCR [SEP] caption for memes.
  std::map<std::string, std::string> base_texts(CorpusName c) {
    const auto& ing = load_ingested(c);
    std::map<std::string, std::string> out;
    if (c == CorpusName::latent_hatred) {
      for (const auto& p : ing.corpus.items) out[p.id] = p.text;
      return out;
    }
    const auto ocr = context_index(c, "ocr");
    const auto cap = context_index(c, "caption");
    std::vector<std::string> missing;
    for (const auto& p : ing.corpus.items) {
      auto a = ocr.find(p.id);
      auto b = cap.find(p.id);
      if (a == ocr.end() || b == cap.end()) {
        missing.push_back(p.id);
        continue;
      }
      out[p.id] = multimodal_base_text(a->second.text, b->second.text);
    }
    if (!missing.empty())
      throw IntegrityError("memes without OCR text or caption: " + std::to_string(missing.size()), missing);
    return out;
  }

  std::vector<std::string> base_text_inputs(CorpusName c) const {
    if (c == CorpusName::latent_hatred) return {};
    return {file_digest(context_path(c, "ocr")), file_digest(context_path(c, "caption"))};
  }
};

Pipeline::Pipeline(RunConfig config, std::ostream& log)
    : impl_(nullptr), config_(std::move(config)), log_(log) {
  config_.validate();
  impl_ = std::make_unique<Impl>(config_, log_);
}

Pipeline::~Pipeline() = default;

void Pipeline::set_provider(std::unique_ptr<LLMProvider> provider) {
  impl_->base_provider = std::move(provider);
  impl_->resilient.reset();
}

std::vector<ExperimentKey> Pipeline::selected_experiments() const {
  std::vector<ExperimentKey> out;
  for (const auto& k : config_.experiments) {
    if (!selection_.strategies.empty() &&
        std::find(selection_.strategies.begin(), selection_.strategies.end(), k.method) == selection_.strategies.end())
      continue;
    if (!selection_.tasks.empty() &&
        std::find(selection_.tasks.begin(), selection_.tasks.end(), k.task) == selection_.tasks.end())
      continue;
    out.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------- ingest

void Pipeline::ingest() {
  struct Loaded {
    Corpus corpus;
    SplitPair split;
    MamiLoadReport report;
  };
  std::vector<Loaded> loaded;
  for (CorpusName c : impl_->configured_corpora()) {
    Loaded l;
    if (c == CorpusName::latent_hatred) {
      l.corpus = load_latent_hatred(*config_.latent_hatred_path);
    } else {
      l.corpus = load_mami(*config_.mami_dir, config_.mami_annotations.value_or(fs::path{}), &l.report);
    }
    l.corpus.validate();
    l.split = stratified_split(l.corpus, config_.split_ratio, config_.split_seed);
    loaded.push_back(std::move(l));
  }
  if (loaded.empty()) throw ConfigError("no corpora configured");

  for (auto& l : loaded) {
    const std::string name(to_string(l.corpus.name));
    std::vector<std::string> parts{"ingest-v1", std::to_string(config_.split_ratio), std::to_string(config_.split_seed)};
    for (const auto& [file, digest] : l.corpus.provenance) parts.push_back(file + "=" + digest);
    const std::string inputs = digest_of(parts);
    const fs::path dir = impl_->ingest_dir(l.corpus.name);
    const auto stats = corpus_stats(l.corpus);
    if (!impl_->up_to_date("ingest", name, inputs, {dir / "corpus.jsonl", dir / "split.jsonl", dir / "stats.md"})) {
      std::string corpus_jsonl;
      for (const auto& p : l.corpus.items) corpus_jsonl += post_to_json(p).dump() + "\n";
      write_text(dir / "corpus.jsonl", corpus_jsonl);
      write_text(dir / "split.jsonl", split_manifest_jsonl(l.split, l.corpus));
      json sj{{"corpus", name}, {"total", stats.total}, {"train", l.split.train.size()},
              {"test", l.split.test.size()}, {"singleton_strata", l.split.singleton_strata},
              {"duplicates_dropped", l.report.duplicate_ids}, {"levels", json::array()}};
      for (const auto& lv : stats.levels) {
        json counts = json::object();
        for (const auto& [label, n] : lv.counts) counts[label] = n;
        sj["levels"].push_back({{"level", lv.level}, {"denominator", lv.denominator}, {"counts", counts}});
      }
      write_text(dir / "stats.json", sj.dump(2) + "\n");
      write_text(dir / "stats.md", "# " + name + "\n\n" + stats.to_table());
      impl_->stamp("ingest", name, inputs);
      log_ << "ingest " << name << ": " << l.corpus.size() << " items (" << l.split.train.size() << " train, "
           << l.split.test.size() << " test)\n";
    }
    log_ << stats.to_table() << "\n";
  }
}

// ---------------------------------------------------------------- gen-context

void Pipeline::gen_context(const std::optional<std::string>& mode) {
  static const std::set<std::string> kModes{"named_entity", "full_text", "multimodal", "enhance", "prediction"};
  if (mode && !kModes.count(*mode)) throw ConfigError("unknown context mode '" + *mode + "'");
  const auto experiments = selected_experiments();

  // Work units per corpus: unit name -> needed.
  auto wants = [&](const std::string& m) { return !mode || *mode == m; };
  std::map<CorpusName, std::set<std::string>> units;
  for (const auto& k : experiments) {
    auto& u = units[k.corpus];
    if (k.corpus == CorpusName::mami && wants("multimodal")) u.insert("multimodal");
    if (k.context && wants(std::string(to_string(*k.context)))) u.insert(std::string(to_string(*k.context)));
    if (k.method == "llm_enhance" && wants("enhance")) u.insert("enhance." + std::string(to_string(*k.context)));
    if (k.is_llm() && wants("prediction")) u.insert("prediction." + std::string(to_string(k.llm_task())));
  }
  std::erase_if(units, [](const auto& kv) { return kv.second.empty(); });
  if (mode && *mode == "named_entity" && units.empty())
    throw ConfigError("named_entity context is only available for the Latent Hatred corpus");
  if (mode && *mode == "multimodal" && !config_.mami_dir)
    throw ConfigError("multimodal context needs a MAMI corpus");

  auto& provider = impl_->provider();
  ContextGenerator gen(provider, impl_->context_cache());
  std::size_t attempted = 0, failed = 0;

  // Runs fn over items in parallel; fn returns one record per output unit.
  auto run_unit = [&](CorpusName c, const std::string& label, const std::vector<std::string>& outputs,
                      const std::vector<const Post*>& items,
                      const std::function<std::vector<ContextRecord>(const Post&)>& fn) {
    const std::size_t calls_before = gen.provider_calls(), hits_before = gen.cache_hits();
    std::vector<std::vector<ContextRecord>> results(items.size());
    std::vector<std::string> errors(items.size());
    std::mutex mu;
    std::exception_ptr fatal;
    run_bounded(items.size(), std::max<std::size_t>(1, config_.provider.parallelism), [&](std::size_t i) {
      try {
        results[i] = fn(*items[i]);
      } catch (const GenerationError& e) {
        errors[i] = e.what();
      } catch (const BackendError& e) {
        errors[i] = e.what();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
      }
    });
    if (fatal) std::rethrow_exception(fatal);
    std::vector<std::vector<ContextRecord>> per_output(outputs.size());
    std::size_t unit_failed = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!errors[i].empty()) {
        ++unit_failed;
        spdlog::warn("{} {} {}: {}", to_string(c), label, items[i]->id, errors[i]);
        continue;
      }
      for (std::size_t o = 0; o < outputs.size(); ++o) per_output[o].push_back(results[i][o]);
    }
    for (std::size_t o = 0; o < outputs.size(); ++o)
      write_text(impl_->context_path(c, outputs[o]), context_index_jsonl(per_output[o]));
    attempted += items.size();
    failed += unit_failed;
    const std::size_t generated = gen.provider_calls() - calls_before, hits = gen.cache_hits() - hits_before;
    log_ << "gen-context " << to_string(c) << " " << label << ": " << items.size() << " items, " << generated
         << " generated, " << hits << " cached, " << unit_failed << " failed";
    if (generated == 0 && unit_failed == 0) log_ << " (up-to-date)";
    log_ << "\n";
  };

  for (const auto& [c, us] : units) {
    const auto& ing = impl_->load_ingested(c);
    std::vector<const Post*> all, test;
    for (const auto& p : ing.corpus.items) all.push_back(&p);
    for (const auto& id : ing.test_ids) test.push_back(ing.by_id.at(id));

    if (us.count("named_entity")) {
      auto& ner = impl_->gazetteer();
      std::mutex ner_mu;
      run_unit(c, "named_entity", {"named_entity"}, all, [&](const Post& p) {
        std::vector<EntityMention> ents;
        if (!trim(p.text).empty()) {
          std::lock_guard lock(ner_mu);
          ents = extract_entities(p.text, ner);
        }
        return std::vector<ContextRecord>{gen.entity_context(p.id, ents)};
      });
    }
    if (us.count("full_text"))
      run_unit(c, "full_text", {"full_text"}, all,
               [&](const Post& p) { return std::vector<ContextRecord>{gen.fulltext_context(p)}; });
    if (us.count("multimodal"))
      run_unit(c, "multimodal", {"ocr", "caption", "multimodal"}, all, [&](const Post& p) {
        if (!p.image_ref) throw InputError("meme without image: " + p.id);
        auto a = gen.multimodal_assets(p.id, *p.image_ref);
        return std::vector<ContextRecord>{a.ocr, a.caption, a.context};
      });
    for (const std::string src : {"named_entity", "full_text"}) {
      if (!us.count("enhance." + src)) continue;
      const auto ctx = impl_->context_index(c, src);
      run_unit(c, "enhance." + src, {"enhance." + src}, all, [&](const Post& p) {
        auto it = ctx.find(p.id);
        if (it == ctx.end()) throw GenerationError("no " + src + " context to enhance", p.id);
        return std::vector<ContextRecord>{gen.enhance(p.id, p.text, it->second)};
      });
    }
    if (us.count("enhance.multimodal")) {
      const auto ocr = impl_->context_index(c, "ocr");
      const auto cap = impl_->context_index(c, "caption");
      const auto ctx = impl_->context_index(c, "multimodal");
      run_unit(c, "enhance.multimodal", {"enhance.multimodal"}, all, [&](const Post& p) {
        auto a = ocr.find(p.id), b = cap.find(p.id), k = ctx.find(p.id);
        if (a == ocr.end() || b == cap.end() || k == ctx.end())
          throw GenerationError("incomplete multimodal assets", p.id);
        return std::vector<ContextRecord>{gen.enhance_multimodal(p.id, {a->second, b->second, k->second})};
      });
    }
    for (const auto& u : us) {
      if (u.rfind("prediction.", 0) != 0) continue;
      const LlmTask t = parse_llm_task(u.substr(std::string("prediction.").size()));
      const std::string prompt(prompt_id_for(t));
      run_unit(c, u, {u}, test, [&](const Post& p) {
        SlotValues in;
        if (c == CorpusName::mami) {
          if (!p.image_ref) throw InputError("meme without image: " + p.id);
          in["meme"] = p.image_ref->string();
        } else {
          in["post"] = p.text;
        }
        return std::vector<ContextRecord>{gen.prediction(p.id, prompt, in)};
      });
    }
  }

  if (failed) {
    log_ << "gen-context: " << failed << " of " << attempted << " generations failed\n";
    if (static_cast<double>(failed) > config_.provider.failure_threshold * static_cast<double>(attempted))
      throw ProviderFailure(failed, attempted);
  }
}

// ---------------------------------------------------------------- represent

void Pipeline::represent() {
  std::map<std::pair<CorpusName, std::string>, ExperimentKey> needed;
  for (const auto& k : selected_experiments())
    if (!k.is_llm()) needed.emplace(std::make_pair(k.corpus, k.representation_name()), k);

  const SentenceEncoder& enc = impl_->sentence_encoder();
  for (const auto& [key, k] : needed) {
    const auto& [c, name] = key;
    const Strategy s = k.strategy();
    const fs::path bin = impl_->rep_path(c, name, ".bin"), manifest = impl_->rep_path(c, name, ".manifest.jsonl");
    std::vector<std::string> parts{"represent-v1", enc.id(), name, file_digest(impl_->ingest_dir(c) / "corpus.jsonl")};
    for (auto& d : impl_->base_text_inputs(c)) parts.push_back(d);
    if (k.context) parts.push_back(file_digest(impl_->context_path(c, std::string(to_string(*k.context)))));
    if (s == Strategy::llm_enhance)
      parts.push_back(file_digest(impl_->context_path(c, "enhance." + std::string(to_string(*k.context)))));
    if (s == Strategy::rel)
      parts.push_back(config_.linker_kind == "rel" ? config_.rel.rel_url : file_digest(*config_.linker_fixture));
    if (s == Strategy::conceptnet) parts.push_back(file_digest(*config_.concepts_path));
    const std::string unit = std::string(to_string(c)) + "." + name;
    const std::string inputs = digest_of(parts);
    if (impl_->up_to_date("represent", unit, inputs, {bin, manifest})) continue;

    const auto texts = impl_->base_texts(c);
    std::map<std::string, ContextRecord> ctx, enhanced;
    if (k.context) ctx = impl_->context_index(c, std::string(to_string(*k.context)));
    if (s == Strategy::llm_enhance) enhanced = impl_->context_index(c, "enhance." + std::string(to_string(*k.context)));
    std::vector<RepresentationInput> inputs_v;
    for (const auto& [id, text] : texts) {
      RepresentationInput in;
      in.post_id = id;
      in.base_text = text;
      if (auto it = ctx.find(id); it != ctx.end()) in.context = it->second;
      if (auto it = enhanced.find(id); it != enhanced.end()) in.enhanced = it->second.text;
      inputs_v.push_back(std::move(in));
    }
    RepresentationResources res;
    res.encoder = &enc;
    if (s == Strategy::rel) res.linker = &impl_->entity_linker();
    if (s == Strategy::conceptnet) res.concepts = &impl_->concept_table();
    const auto set = build_representations(inputs_v, s, res);
    fs::create_directories(bin.parent_path());
    set.save(bin, manifest);
    impl_->stamp("represent", unit, inputs);
    log_ << "represent " << unit << ": " << set.post_ids.size() << " x " << set.dim() << "\n";
  }
}

// ---------------------------------------------------------------- train

namespace {

json classifier_json(const MLPConfig& c) {
  return {{"hidden_dims", c.hidden_dims}, {"epochs", c.epochs}, {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size}, {"projection_noise", c.projection_noise}};
}

Matrix select_rows(const RepresentationSet& set, const std::vector<std::string>& ids) {
  std::map<std::string_view, Eigen::Index> index;
  for (std::size_t i = 0; i < set.post_ids.size(); ++i) index[set.post_ids[i]] = static_cast<Eigen::Index>(i);
  Matrix x(static_cast<Eigen::Index>(ids.size()), set.rows.cols());
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index.find(ids[i]);
    if (it == index.end()) {
      missing.push_back(ids[i]);
      continue;
    }
    x.row(static_cast<Eigen::Index>(i)) = set.rows.row(it->second);
  }
  if (!missing.empty()) throw IntegrityError("representations missing for some posts", missing);
  return x;
}

}  // namespace

void Pipeline::train() {
  for (const auto& k : selected_experiments()) {
    if (k.is_llm()) continue;
    const auto& ing = impl_->load_ingested(k.corpus);
    std::vector<std::string> ids;
    std::vector<Target> y;
    for (const auto& id : ing.train_ids) {
      const Post& p = *ing.by_id.at(id);
      if (!in_task(p, k.task)) continue;
      ids.push_back(id);
      y.push_back(target_of(p, k.task));
    }
    const bool ce = k.strategy() == Strategy::context_embed;
    const fs::path bin = impl_->rep_path(k.corpus, k.representation_name(), ".bin");
    const fs::path manifest = impl_->rep_path(k.corpus, k.representation_name(), ".manifest.jsonl");
    if (!fs::exists(bin) || !fs::exists(manifest))
      throw UpstreamMissing("no " + k.representation_name() + " representations for " + std::string(to_string(k.corpus)),
                            "represent");

    std::vector<std::string> parts{"train-v1", k.name(), classifier_json(config_.classifier).dump(),
                                   std::to_string(config_.seed_base), std::to_string(config_.runs),
                                   file_digest(impl_->ingest_dir(k.corpus) / "split.jsonl")};
    if (ce) {
      parts.push_back(impl_->sentence_encoder().id());
      for (auto& d : impl_->base_text_inputs(k.corpus)) parts.push_back(d);
      parts.push_back(file_digest(impl_->ingest_dir(k.corpus) / "corpus.jsonl"));
      parts.push_back(file_digest(impl_->context_path(k.corpus, std::string(to_string(*k.context)))));
    } else {
      parts.push_back(file_digest(bin));
    }
    const std::string inputs = digest_of(parts);
    if (impl_->up_to_date("train", k.name(), inputs, {impl_->failures_path(k)})) continue;

    MLPConfig mc = config_.classifier;
    mc.head = head_for(k.task);
    std::function<TrainedModel(std::uint64_t)> fit;
    std::vector<ContextEmbedExample> examples;
    Matrix x;
    if (ce) {
      const auto texts = impl_->base_texts(k.corpus);
      const auto ctx = impl_->context_index(k.corpus, std::string(to_string(*k.context)));
      std::vector<std::string> posts;
      std::vector<ContextRecord> contexts;
      std::vector<std::string> missing;
      for (const auto& id : ids) {
        auto it = ctx.find(id);
        if (it == ctx.end()) {
          missing.push_back(id);
          continue;
        }
        posts.push_back(texts.at(id));
        contexts.push_back(it->second);
      }
      if (!missing.empty()) throw IntegrityError("context missing for some training posts", missing);
      const auto& enc = impl_->sentence_encoder();
      examples = prepare_context_embed(posts, contexts, enc);
      mc.input_dim = enc.token_access()->token_dim();
      fit = [&](std::uint64_t seed) {
        MLPConfig m = mc;
        m.seed = seed;
        return train_context_embed(examples, y, enc, m);
      };
    } else {
      const auto set = RepresentationSet::load(bin, manifest);
      x = select_rows(set, ids);
      mc.input_dim = set.dim();
      const std::string encoder_id = set.encoder_id;
      fit = [&, encoder_id](std::uint64_t seed) {
        MLPConfig m = mc;
        m.seed = seed;
        TrainedModel model = train_mlp(x, y, m, k.strategy());
        model.encoder_id = encoder_id;
        return model;
      };
    }
    json failures = json::array();
    for (std::size_t r = 0; r < config_.runs; ++r) {
      const std::uint64_t seed = config_.seed_base + r;
      try {
        const TrainedModel model = fit(seed);
        fs::create_directories(impl_->model_path(k, seed).parent_path());
        model.save(impl_->model_path(k, seed));
        log_ << "train " << k.name() << " seed " << seed << ": " << ids.size() << " rows, final loss "
             << model.loss_trace.back() << "\n";
      } catch (const DivergenceError& e) {
        failures.push_back({{"seed", seed}, {"epoch", e.epoch()}});
        log_ << "train " << k.name() << " seed " << seed << ": diverged at epoch " << e.epoch() << "\n";
      }
    }
    write_text(impl_->failures_path(k), failures.dump(2) + "\n");
    impl_->stamp("train", k.name(), inputs);
  }
}

// ---------------------------------------------------------------- eval

void Pipeline::eval() {
  const auto& registry = LabelRegistry::builtin();
  for (const auto& k : selected_experiments()) {
    const auto& ing = impl_->load_ingested(k.corpus);
    std::vector<std::string> test_ids;
    std::vector<Target> truth;
    for (const auto& id : ing.test_ids) {
      const Post& p = *ing.by_id.at(id);
      if (!in_task(p, k.task)) continue;
      test_ids.push_back(id);
      truth.push_back(target_of(p, k.task));
    }
    const fs::path rdir = impl_->report_dir(k);
    std::vector<std::string> parts{"eval-v1", k.name(), file_digest(impl_->ingest_dir(k.corpus) / "split.jsonl")};
    if (k.is_llm()) {
      parts.push_back(file_digest(impl_->context_path(k.corpus, "prediction." + std::string(to_string(k.llm_task())))));
    } else {
      if (!fs::exists(impl_->failures_path(k))) throw UpstreamMissing("no trained models for " + k.name(), "train");
      parts.push_back(file_digest(impl_->failures_path(k)));
      for (std::size_t r = 0; r < config_.runs; ++r) parts.push_back(file_digest(impl_->model_path(k, config_.seed_base + r)));
      parts.push_back(file_digest(impl_->rep_path(k.corpus, k.representation_name(), ".bin")));
    }
    const std::string inputs = digest_of(parts);
    if (impl_->up_to_date("eval", k.name(), inputs, {rdir / "aggregate.json"})) continue;

    ExperimentSpec spec;
    spec.name = k.name();
    spec.base_seed = config_.seed_base;
    spec.test_ids = test_ids;
    spec.test_truth = truth;
    PredictionSet llm_set;
    Matrix x_test;
    std::vector<ContextEmbedExample> test_examples;
    if (k.is_llm()) {
      const auto replies = impl_->context_index(k.corpus, "prediction." + std::string(to_string(k.llm_task())));
      llm_set.task = k.task;
      llm_set.model_id = k.name();
      std::vector<std::string> missing;
      for (const auto& id : test_ids) {
        auto it = replies.find(id);
        if (it == replies.end()) {
          missing.push_back(id);
          continue;
        }
        Prediction p;
        try {
          p.label = parse_llm_label(it->second.text, k.task, registry).label;
        } catch (const ParseError& e) {
          p.abstained = true;
          p.raw = e.raw();
          spdlog::warn("{} {}: abstention ({})", k.name(), id, e.what());
        }
        llm_set.post_ids.push_back(id);
        llm_set.items.push_back(std::move(p));
      }
      if (!missing.empty()) throw IntegrityError("LLM predictions missing for some test posts", missing);
      spec.runs = 1;
      spec.train = [](std::uint64_t) { return TrainedModel{}; };
      spec.predict = [&](const TrainedModel&) { return llm_set; };
    } else {
      spec.runs = config_.runs;
      const auto failures = json::parse(read_file(impl_->failures_path(k)));
      spec.train = [&, failures](std::uint64_t seed) {
        for (const auto& f : failures)
          if (f.at("seed").get<std::uint64_t>() == seed) throw DivergenceError(f.at("epoch").get<std::size_t>());
        const fs::path mp = impl_->model_path(k, seed);
        if (!fs::exists(mp)) throw UpstreamMissing("no model for " + k.name() + " seed " + std::to_string(seed), "train");
        return TrainedModel::load(mp);
      };
      if (k.strategy() == Strategy::context_embed) {
        const auto texts = impl_->base_texts(k.corpus);
        const auto ctx = impl_->context_index(k.corpus, std::string(to_string(*k.context)));
        std::vector<std::string> posts;
        std::vector<ContextRecord> contexts;
        for (const auto& id : test_ids) {
          auto it = ctx.find(id);
          if (it == ctx.end()) throw IntegrityError("context missing for test post", {id});
          posts.push_back(texts.at(id));
          contexts.push_back(it->second);
        }
        test_examples = prepare_context_embed(posts, contexts, impl_->sentence_encoder());
        spec.predict = [&](const TrainedModel& m) {
          PredictionSet s = predict(m, context_embed_features(m, test_examples, impl_->sentence_encoder()), test_ids);
          s.model_id = k.name() + "@seed-" + std::to_string(m.config.seed);
          return s;
        };
      } else {
        const auto set = RepresentationSet::load(impl_->rep_path(k.corpus, k.representation_name(), ".bin"),
                                                 impl_->rep_path(k.corpus, k.representation_name(), ".manifest.jsonl"));
        x_test = select_rows(set, test_ids);
        spec.predict = [&](const TrainedModel& m) {
          PredictionSet s = predict(m, x_test, test_ids);
          s.model_id = k.name() + "@seed-" + std::to_string(m.config.seed);
          return s;
        };
      }
    }
    ExperimentResult result = run_experiment(spec, registry);
    for (std::size_t i = 0; i < result.report.runs.size(); ++i) {
      const auto& rep = result.report.runs[i];
      write_text(rdir / ("seed-" + std::to_string(rep.seed) + ".json"), to_json(rep).dump(2) + "\n");
      write_text(impl_->prediction_path(k.name(), rep.seed), result.predictions[i].to_jsonl());
      for (const auto& cm : rep.confusion) {
        const std::string suffix = rep.confusion.size() > 1 ? "-" + cm.classes.back() : "";
        write_text(rdir / ("confusion-seed-" + std::to_string(rep.seed) + suffix + ".csv"), cm.to_csv());
      }
    }
    write_text(rdir / "aggregate.json", to_json(result.report).dump(2) + "\n");
    impl_->stamp("eval", k.name(), inputs);
    log_ << "eval " << k.name() << ": macro F1 ";
    if (result.report.runs.empty()) {
      log_ << "n/a (all seeds failed)\n";
    } else {
      const auto m = result.report.at("macro_f1");
      log_ << fixed2(m.mean) << " +/- " << fixed2(m.stdev) << " over " << result.report.runs.size() << " run(s)\n";
    }
  }
}

// ---------------------------------------------------------------- compare

void Pipeline::compare(const std::optional<std::string>& a, const std::optional<std::string>& b) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (a || b) {
    if (!a || !b) throw ConfigError("compare needs both --a and --b");
    pairs.emplace_back(*a, *b);
  } else if (!config_.comparisons.empty()) {
    pairs = config_.comparisons;
  } else {
    const auto exps = selected_experiments();
    for (const auto& k : exps) {
      if (k.method == "zero_context") continue;
      ExperimentKey base{k.corpus, k.task, "zero_context", std::nullopt};
      if (std::find(exps.begin(), exps.end(), base) != exps.end()) pairs.emplace_back(k.name(), base.name());
    }
  }
  std::map<std::string, ExperimentKey> by_name;
  for (const auto& k : config_.experiments) by_name.emplace(k.name(), k);
  for (const auto& [na, nb] : pairs) {
    auto ka = by_name.find(na), kb = by_name.find(nb);
    if (ka == by_name.end() || kb == by_name.end()) throw ConfigError("unknown experiment in comparison " + na + " / " + nb);
    if (ka->second.corpus != kb->second.corpus || ka->second.task != kb->second.task)
      throw ConfigError("can only compare experiments on the same corpus and task: " + na + " / " + nb);
    const fs::path pa = impl_->prediction_path(na, config_.seed_base), pb = impl_->prediction_path(nb, config_.seed_base);
    if (!fs::exists(pa)) throw UpstreamMissing("no predictions for " + na, "eval");
    if (!fs::exists(pb)) throw UpstreamMissing("no predictions for " + nb, "eval");
    const auto& ing = impl_->load_ingested(ka->second.corpus);
    std::map<std::string, Target, std::less<>> truth;
    for (const auto& id : ing.test_ids) {
      const Post& p = *ing.by_id.at(id);
      if (in_task(p, ka->second.task)) truth[id] = target_of(p, ka->second.task);
    }
    const auto diff = prediction_diff(PredictionSet::from_jsonl(read_file(pa)), PredictionSet::from_jsonl(read_file(pb)), truth);
    const fs::path base = impl_->out(fs::path("compare") / (na + "__vs__" + nb));
    write_text(base.string() + ".json", diff.to_json().dump(2) + "\n");
    write_text(base.string() + ".txt", diff.to_text());
    log_ << "compare " << na << " vs " << nb << ": " << diff.a_correct_b_wrong.size() << " A-only correct ("
         << format_percent(diff.fraction(diff.a_correct_b_wrong)) << "), " << diff.a_wrong_b_correct.size()
         << " B-only correct (" << format_percent(diff.fraction(diff.a_wrong_b_correct)) << ")\n";
  }
}

// ---------------------------------------------------------------- plot

void Pipeline::plot() {
  const auto exps = selected_experiments();
  std::map<std::string, AggregateReport> reports;
  for (const auto& k : exps) {
    const fs::path agg = impl_->report_dir(k) / "aggregate.json";
    if (!fs::exists(agg)) throw UpstreamMissing("no evaluation report for " + k.name(), "eval");
    auto rep = aggregate_from_json(json::parse(read_file(agg)));
    if (!rep.runs.empty()) {
      const auto& first = rep.runs.front();
      for (const auto& cm : first.confusion) {
        const std::string suffix = first.confusion.size() > 1 ? "." + cm.classes.back() : "";
        write_text(impl_->out(fs::path("plots") / (k.name() + suffix + ".confusion.svg")),
                   cm.to_svg(k.name() + suffix + " (seed " + std::to_string(first.seed) + ")"));
      }
    }
    reports.emplace(k.name(), std::move(rep));
  }

  auto cell = [&](const ExperimentKey& k, const std::string& metric) -> std::string {
    auto it = reports.find(k.name());
    if (it == reports.end() || it->second.runs.empty()) return "-";
    const auto& s = it->second.summary;
    auto m = s.find(metric);
    if (m == s.end()) return "-";
    std::string out = fixed2(m->second.mean);
    if (it->second.runs.size() > 1) out += " ± " + fixed2(m->second.stdev);
    return out;
  };
  std::string md = "# Results\n\nMean over seeds (± sample standard deviation).\n";
  json summary = json::object();
  for (CorpusName c : {CorpusName::latent_hatred, CorpusName::mami}) {
    const bool mami = c == CorpusName::mami;
    const Task second = mami ? Task::multilabel : Task::multiclass;
    bool any = false;
    for (const auto& k : exps) any = any || k.corpus == c;
    if (!any) continue;
    md += "\n## " + std::string(to_string(c)) + "\n\n";
    md += std::string("| Context | Incorporation Strategy | Binary Macro F1 | Binary Hate F1 | ") +
          (mami ? "Multi-Label Macro F1 |" : "Multi-Class Macro F1 | Multi-Class Macro F1 (6 named) |") + "\n";
    md += std::string("|---|---|---|---|---|") + (mami ? "" : "---|") + "\n";
    auto row = [&](const std::string& ctx_label, const std::string& strat_label, const std::string& method,
                   std::optional<ContextMode> ctx) {
      const ExperimentKey kb{c, Task::binary, method, ctx}, k2{c, second, method, ctx};
      const bool present = reports.count(kb.name()) || reports.count(k2.name());
      if (!present) return;
      md += "| " + ctx_label + " | " + strat_label + " | " + cell(kb, "macro_f1") + " | " + cell(kb, "hate_f1") + " | " +
            cell(k2, "macro_f1") + " |" + (mami ? "" : " " + cell(k2, "macro_f1_named") + " |") + "\n";
    };
    row("Zero-Context", "-", "zero_context", std::nullopt);
    row("REL", "Append & Embed", "rel", std::nullopt);
    row("ConceptNet", "Embed & Concat", "conceptnet", std::nullopt);
    row("LLM Prediction", "-", "llm", std::nullopt);
    const std::vector<ContextMode> modes = mami ? std::vector<ContextMode>{ContextMode::multimodal}
                                                : std::vector<ContextMode>{ContextMode::named_entity, ContextMode::full_text};
    for (ContextMode m : modes)
      for (const char* s : {"append_embed", "embed_concat", "context_embed", "llm_enhance"})
        row(context_label(m), strategy_label(s), s, m);
  }
  for (const auto& [name, rep] : reports) {
    json m = json::object();
    for (const auto& [metric, s] : rep.summary) m[metric] = {{"mean", s.mean}, {"stdev", s.stdev}};
    summary[name] = {{"runs", rep.runs.size()}, {"failures", rep.failures.size()}, {"metrics", m}};
  }
  write_text(impl_->out("reports/summary.md"), md);
  write_text(impl_->out("reports/summary.json"), summary.dump(2) + "\n");
  log_ << md;
}

}  // namespace ctxhsd
