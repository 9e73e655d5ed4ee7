#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>
#include <sstream>

#include "ctxhsd/pipeline.hpp"
#include "ctxhsd/prompts.hpp"
#include "ctxhsd/represent.hpp"

namespace py = pybind11;
using namespace ctxhsd;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

class PySentenceEncoder : public SentenceEncoder {
 public:
  std::string id() const override { PYBIND11_OVERRIDE_PURE(std::string, SentenceEncoder, id); }
  std::size_t output_dim() const override { PYBIND11_OVERRIDE_PURE(std::size_t, SentenceEncoder, output_dim); }
  std::size_t max_tokens() const override { PYBIND11_OVERRIDE_PURE(std::size_t, SentenceEncoder, max_tokens); }
  Vector encode(std::string_view text) const override { PYBIND11_OVERRIDE_PURE(Vector, SentenceEncoder, encode, text); }
};

class PyLLMProvider : public LLMProvider {
 public:
  std::string id() const override { PYBIND11_OVERRIDE_PURE(std::string, LLMProvider, id); }
  // Text only unless the subclass says otherwise.
  Capabilities capabilities() const override {
    py::gil_scoped_acquire gil;
    if (py::function f = py::get_override(static_cast<const LLMProvider*>(this), "capabilities"))
      return f().cast<Capabilities>();
    return {true, false};
  }
  std::string complete(const ChatRequest& request) override {
    PYBIND11_OVERRIDE_PURE(std::string, LLMProvider, complete, request);
  }
};

class PyNerBackend : public NerBackend {
 public:
  std::vector<TokenTag> tag(std::string_view text) override {
    PYBIND11_OVERRIDE_PURE(std::vector<TokenTag>, NerBackend, tag, text);
  }
};

// Lets a Python provider object be handed to the pipeline, which owns its
// provider. Keeps the Python object alive for the pipeline's lifetime.
class BorrowedProvider : public LLMProvider {
 public:
  explicit BorrowedProvider(py::object obj) : obj_(std::move(obj)), p_(obj_.cast<LLMProvider*>()) {}
  ~BorrowedProvider() override {
    py::gil_scoped_acquire gil;
    obj_ = py::object();
  }
  std::string id() const override { return p_->id(); }
  Capabilities capabilities() const override { return p_->capabilities(); }
  std::string complete(const ChatRequest& r) override { return p_->complete(r); }

 private:
  py::object obj_;
  LLMProvider* p_;
};

// Pipeline plus the stream its stage reports go to.
struct PyPipeline {
  explicit PyPipeline(RunConfig config) : pipeline(std::move(config), log) {}
  std::ostringstream log;
  Pipeline pipeline;

  std::string take_log() {
    std::string s = log.str();
    log.str({});
    return s;
  }
};

template <void (Pipeline::*Stage)()>
std::string run_stage(PyPipeline& p) {
  {
    py::gil_scoped_release release;
    (p.pipeline.*Stage)();
  }
  return p.take_log();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Context-augmented hate speech detection";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<SchemaError>(m, "SchemaError", base);
  py::register_exception<ValueError>(m, "ValueError", base);
  py::register_exception<IntegrityError>(m, "IntegrityError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<InputError>(m, "InputError", base);
  py::register_exception<BackendError>(m, "BackendError", base);
  py::register_exception<GenerationError>(m, "GenerationError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<DivergenceError>(m, "DivergenceError", base);
  py::register_exception<UpstreamMissing>(m, "UpstreamMissing", base);
  py::register_exception<ProviderFailure>(m, "ProviderFailure", base);

  m.attr("ABSTAIN") = kAbstain;

  // corpus
  py::class_<Post>(m, "Post")
      .def(py::init<>())
      .def_readwrite("id", &Post::id)
      .def_readwrite("text", &Post::text)
      .def_readwrite("image_ref", &Post::image_ref)
      .def_property(
          "binary_label", [](const Post& p) { return static_cast<int>(p.binary_label); },
          [](Post& p, int v) { p.binary_label = v ? BinaryLabel::positive : BinaryLabel::negative; })
      .def_property(
          "fine_label",
          [](const Post& p) -> std::optional<std::string> {
            if (!p.fine_label) return std::nullopt;
            return std::string(to_string(*p.fine_label));
          },
          [](Post& p, const std::optional<std::string>& v) {
            p.fine_label = v ? parse_fine_label(*v) : std::nullopt;
            if (v && !p.fine_label) throw ValueError("unknown implicit class '" + *v + "'");
          })
      .def_property(
          "multi_labels",
          [](const Post& p) -> std::optional<std::vector<std::string>> {
            if (!p.multi_labels) return std::nullopt;
            std::vector<std::string> out;
            for (auto l : p.multi_labels->labels()) out.emplace_back(to_string(l));
            return out;
          },
          [](Post& p, const std::optional<std::vector<std::string>>& v) {
            if (!v) return p.multi_labels.reset();
            LabelSet s;
            for (const auto& name : *v) {
              auto l = parse_misogyny_label(name);
              if (!l) throw ValueError("unknown misogyny label '" + name + "'");
              s.add(*l);
            }
            p.multi_labels = s;
          })
      .def("__repr__", [](const Post& p) { return "Post(" + p.id + ")"; });

  py::class_<Corpus>(m, "Corpus")
      .def(py::init<>())
      .def_property(
          "name", [](const Corpus& c) { return std::string(to_string(c.name)); },
          [](Corpus& c, const std::string& s) { c.name = parse_corpus_name(s); })
      .def_readwrite("items", &Corpus::items)
      .def_readonly("provenance", &Corpus::provenance)
      .def("__len__", &Corpus::size)
      .def("validate", &Corpus::validate);

  py::class_<SplitPair>(m, "SplitPair")
      .def_readonly("train", &SplitPair::train)
      .def_readonly("test", &SplitPair::test)
      .def_readonly("ratio", &SplitPair::ratio)
      .def_readonly("seed", &SplitPair::seed)
      .def_readonly("singleton_strata", &SplitPair::singleton_strata);

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("total", &CorpusStats::total)
      .def("counts",
           [](const CorpusStats& s, const std::string& level) {
             const LevelStats* l = s.level(level);
             if (!l) throw py::key_error(level);
             return std::map<std::string, std::size_t>(l->counts.begin(), l->counts.end());
           })
      .def("proportion",
           [](const CorpusStats& s, const std::string& level, const std::string& label) {
             const LevelStats* l = s.level(level);
             if (!l) throw py::key_error(level);
             return l->proportion(label);
           })
      .def("to_table", &CorpusStats::to_table);

  m.def("load_latent_hatred", &load_latent_hatred, py::arg("path"));
  m.def(
      "load_mami", [](const std::filesystem::path& dir, const std::filesystem::path& annotations) {
        return load_mami(dir, annotations);
      },
      py::arg("dir"), py::arg("annotations") = std::filesystem::path());
  m.def("stratified_split", &stratified_split, py::arg("corpus"), py::arg("ratio") = 0.8, py::arg("seed") = 0);
  m.def("corpus_stats", &corpus_stats);

  // prompts and providers
  py::class_<ChatRequest>(m, "ChatRequest")
      .def(py::init<>())
      .def_readwrite("prompt_id", &ChatRequest::prompt_id)
      .def_readwrite("system", &ChatRequest::system)
      .def_readwrite("user", &ChatRequest::user)
      .def_readwrite("image", &ChatRequest::image)
      .def_readwrite("temperature", &ChatRequest::temperature)
      .def_readwrite("resolved_inputs", &ChatRequest::resolved_inputs);

  m.def(
      "render_prompt",
      [](const std::string& id, const std::map<std::string, std::string>& slots) {
        return PromptRegistry::builtin().render(id, SlotValues(slots.begin(), slots.end()));
      },
      py::arg("prompt_id"), py::arg("slots"));
  m.def("prompt_ids", [] {
    std::vector<std::string> ids;
    for (const auto& t : PromptRegistry::builtin().templates()) ids.push_back(t.id);
    return ids;
  });
  m.def("prompt_catalogue", [] { return catalogue_text(PromptRegistry::builtin()); });
  m.def("cache_key", &make_cache_key, py::arg("request"), py::arg("provider_id"));

  py::class_<Capabilities>(m, "Capabilities")
      .def(py::init([](bool text, bool image) { return Capabilities{text, image}; }), py::arg("text") = true,
           py::arg("image") = false)
      .def_readwrite("text", &Capabilities::text)
      .def_readwrite("image", &Capabilities::image);

  py::class_<LLMProvider, PyLLMProvider>(m, "LLMProvider")
      .def(py::init<>())
      .def("id", &LLMProvider::id)
      .def("capabilities", &LLMProvider::capabilities)
      .def("complete", &LLMProvider::complete);
  py::class_<MockProvider, LLMProvider>(m, "MockProvider").def(py::init<std::string>(), py::arg("id") = "mock");
  py::class_<EchoProvider, LLMProvider>(m, "EchoProvider").def(py::init<std::string>(), py::arg("id") = "mock-echo");

  // contexts
  py::class_<EntityMention>(m, "EntityMention")
      .def_readonly("surface", &EntityMention::surface)
      .def_readonly("tag", &EntityMention::tag)
      .def_readonly("begin", &EntityMention::begin)
      .def_readonly("end", &EntityMention::end)
      .def_readonly("confidence", &EntityMention::confidence);

  py::class_<TokenTag>(m, "TokenTag")
      .def(py::init([](std::string word, std::string entity, std::size_t begin, std::size_t end, double score) {
             return TokenTag{std::move(word), std::move(entity), begin, end, score};
           }),
           py::arg("word"), py::arg("entity"), py::arg("begin"), py::arg("end"), py::arg("score") = 1.0)
      .def_readwrite("word", &TokenTag::word)
      .def_readwrite("entity", &TokenTag::entity)
      .def_readwrite("begin", &TokenTag::begin)
      .def_readwrite("end", &TokenTag::end)
      .def_readwrite("score", &TokenTag::score);

  py::class_<NerBackend, PyNerBackend>(m, "NerBackend").def(py::init<>()).def("tag", &NerBackend::tag);
  py::class_<GazetteerNer, NerBackend>(m, "GazetteerNer")
      .def(py::init<>())
      .def_static("load", &GazetteerNer::load)
      .def("add", &GazetteerNer::add);
  m.def("extract_entities", &extract_entities, py::arg("text"), py::arg("backend"));

  py::class_<ContextRecord>(m, "ContextRecord")
      .def(py::init([](std::string post_id, std::string mode, std::string text) {
             ContextRecord r;
             r.post_id = std::move(post_id);
             r.mode = parse_context_mode(mode);
             r.text = std::move(text);
             return r;
           }),
           py::arg("post_id"), py::arg("mode"), py::arg("text"))
      .def_readwrite("post_id", &ContextRecord::post_id)
      .def_property_readonly("mode", [](const ContextRecord& r) { return std::string(to_string(r.mode)); })
      .def_readwrite("text", &ContextRecord::text)
      .def_readonly("entities", &ContextRecord::entities)
      .def_readonly("provider_id", &ContextRecord::provider_id)
      .def_readonly("prompt_id", &ContextRecord::prompt_id)
      .def_readonly("cache_key", &ContextRecord::cache_key)
      .def("is_empty_sentinel", &ContextRecord::is_empty_sentinel);

  py::class_<ContextCache>(m, "ContextCache")
      .def(py::init<>())
      .def(py::init<const std::filesystem::path&>())
      .def("get", &ContextCache::get)
      .def("put", &ContextCache::put)
      .def("__len__", &ContextCache::size);

  py::class_<ContextGenerator>(m, "ContextGenerator")
      .def(py::init<LLMProvider&, ContextCache&>(), py::keep_alive<1, 2>(), py::keep_alive<1, 3>())
      .def("entity_context",
           [](ContextGenerator& g, const std::string& id, const std::vector<EntityMention>& ents) {
             return g.entity_context(id, ents);
           })
      .def("fulltext_context", &ContextGenerator::fulltext_context)
      .def("enhance", &ContextGenerator::enhance, py::arg("post_id"), py::arg("base_text"), py::arg("context"))
      .def_property_readonly("provider_calls", &ContextGenerator::provider_calls)
      .def_property_readonly("cache_hits", &ContextGenerator::cache_hits);

  // representations
  py::class_<SentenceEncoder, PySentenceEncoder>(m, "SentenceEncoder")
      .def(py::init<>())
      .def("id", &SentenceEncoder::id)
      .def("output_dim", &SentenceEncoder::output_dim)
      .def("max_tokens", &SentenceEncoder::max_tokens)
      .def("encode", &SentenceEncoder::encode);
  py::class_<HashingEncoder, SentenceEncoder>(m, "HashingEncoder")
      .def(py::init([](std::size_t dim, std::size_t max_tokens, std::uint64_t seed) {
             HashingEncoder::Options o;
             o.dim = dim;
             o.max_tokens = max_tokens;
             o.seed = seed;
             return HashingEncoder(o);
           }),
           py::arg("dim") = 768, py::arg("max_tokens") = 384, py::arg("seed") = 17);

  m.def("strategy_dim", [](const std::string& s, std::size_t encoder_dim) {
    return strategy_dim(parse_strategy(s), encoder_dim);
  }, py::arg("strategy"), py::arg("encoder_dim") = 768);
  m.def("zero_context", &zero_context, py::arg("text"), py::arg("encoder"));
  m.def("append_embed", &append_embed, py::arg("text"), py::arg("context"), py::arg("encoder"));
  m.def("embed_concat", &embed_concat, py::arg("text"), py::arg("context"), py::arg("encoder"));

  // classification
  py::class_<MLPConfig>(m, "MLPConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &MLPConfig::input_dim)
      .def_readwrite("hidden_dims", &MLPConfig::hidden_dims)
      .def_property(
          "task", [](const MLPConfig& c) { return std::string(to_string(task_for(c.head))); },
          [](MLPConfig& c, const std::string& t) { c.head = head_for(parse_task(t)); })
      .def_readwrite("epochs", &MLPConfig::epochs)
      .def_readwrite("learning_rate", &MLPConfig::learning_rate)
      .def_readwrite("batch_size", &MLPConfig::batch_size)
      .def_readwrite("seed", &MLPConfig::seed);

  py::class_<TrainedModel>(m, "TrainedModel")
      .def_readonly("config", &TrainedModel::config)
      .def_readonly("loss_trace", &TrainedModel::loss_trace)
      .def("scores", &TrainedModel::scores)
      .def("serialize", [](const TrainedModel& t) { return py::bytes(t.serialize()); })
      .def_static("deserialize", [](py::bytes b) { return TrainedModel::deserialize(std::string(b)); })
      .def("save", &TrainedModel::save)
      .def_static("load", &TrainedModel::load);

  m.def(
      "train_mlp",
      [](const Matrix& x, const std::vector<Target>& y, const MLPConfig& cfg) {
        py::gil_scoped_release release;
        return train_mlp(x, y, cfg);
      },
      py::arg("x"), py::arg("y"), py::arg("config"));
  m.def(
      "predict",
      [](const TrainedModel& model, const Matrix& x) {
        std::vector<std::string> ids;
        for (Eigen::Index i = 0; i < x.rows(); ++i) ids.push_back(std::to_string(i));
        std::vector<Target> out;
        for (const auto& p : predict(model, x, ids).items) out.push_back(p.label);
        return out;
      },
      py::arg("model"), py::arg("x"));

  // evaluation
  m.def(
      "f1_per_class",
      [](const std::vector<Target>& t, const std::vector<Target>& p, std::size_t n) { return f1_per_class(t, p, n); },
      py::arg("y_true"), py::arg("y_pred"), py::arg("n_classes"));
  m.def(
      "classification_report",
      [](const std::string& task, const std::vector<Target>& t, const std::vector<Target>& p,
         const std::vector<std::string>& classes) { return to_python(to_json(classification_report(parse_task(task), t, p, classes))); },
      py::arg("task"), py::arg("y_true"), py::arg("y_pred"), py::arg("classes"));
  m.def(
      "multilabel_f1",
      [](const std::vector<Target>& t, const std::vector<Target>& p, const std::vector<std::string>& labels) {
        return to_python(to_json(multilabel_f1(t, p, labels)));
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("labels"));
  m.def(
      "confusion_matrix",
      [](const std::vector<Target>& t, const std::vector<Target>& p, const std::vector<std::string>& classes) {
        return confusion_matrix(t, p, classes).counts;
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("classes"));

  // pipeline
  py::class_<RunConfig>(m, "RunConfig")
      .def_static("load", &RunConfig::load)
      .def_static(
          "from_dict",
          [](const py::object& d, const std::filesystem::path& base_dir) {
            const std::string text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
            return RunConfig::from_json(nlohmann::json::parse(text), base_dir);
          },
          py::arg("config"), py::arg("base_dir"))
      .def_readwrite("output_dir", &RunConfig::output_dir)
      .def_readwrite("runs", &RunConfig::runs)
      .def("validate", &RunConfig::validate)
      .def_property_readonly("experiments", [](const RunConfig& c) {
        std::vector<std::string> out;
        for (const auto& k : c.experiments) out.push_back(k.name());
        return out;
      });

  py::class_<PyPipeline>(m, "Pipeline")
      .def(py::init<RunConfig>())
      .def("set_provider",
           [](PyPipeline& p, py::object provider) {
             p.pipeline.set_provider(std::make_unique<BorrowedProvider>(std::move(provider)));
           })
      .def("ingest", &run_stage<&Pipeline::ingest>)
      .def(
          "gen_context",
          [](PyPipeline& p, std::optional<std::string> mode) {
            {
              py::gil_scoped_release release;
              p.pipeline.gen_context(mode);
            }
            return p.take_log();
          },
          py::arg("mode") = py::none())
      .def("represent", &run_stage<&Pipeline::represent>)
      .def("train", &run_stage<&Pipeline::train>)
      .def("eval", &run_stage<&Pipeline::eval>)
      .def(
          "compare",
          [](PyPipeline& p, std::optional<std::string> a, std::optional<std::string> b) {
            {
              py::gil_scoped_release release;
              p.pipeline.compare(a, b);
            }
            return p.take_log();
          },
          py::arg("a") = py::none(), py::arg("b") = py::none())
      .def("plot", &run_stage<&Pipeline::plot>)
      .def_property_readonly("experiments", [](const PyPipeline& p) {
        std::vector<std::string> out;
        for (const auto& k : p.pipeline.selected_experiments()) out.push_back(k.name());
        return out;
      });
}
