#include "ctxhsd/labels.hpp"

#include <algorithm>
#include <cctype>
#include <nlohmann/json.hpp>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"
#include "labels_json.inc"

namespace ctxhsd {

namespace {

constexpr std::pair<Task, std::string_view> kTaskNames[] = {
    {Task::binary, "binary"}, {Task::multiclass, "multiclass"}, {Task::multilabel, "multilabel"}};

constexpr std::pair<LlmTask, std::string_view> kLlmTaskNames[] = {
    {LlmTask::binary_tweet, "binary_tweet"},
    {LlmTask::multiclass_tweet, "multiclass_tweet"},
    {LlmTask::binary_meme, "binary_meme"},
    {LlmTask::multilabel_meme, "multilabel_meme"},
};

std::vector<LabelClass> parse_classes(const nlohmann::json& task) {
  std::vector<LabelClass> out;
  for (const auto& c : task.at("classes")) {
    LabelClass lc;
    lc.name = c.at("name").get<std::string>();
    lc.prompt = c.at("prompt").get<std::string>();
    for (const auto& a : c.value("aliases", nlohmann::json::array())) lc.aliases.push_back(a.get<std::string>());
    out.push_back(std::move(lc));
  }
  if (out.empty()) throw ConfigError("label registry task has no classes");
  return out;
}

std::vector<std::string> folded_forms(const LabelClass& c) {
  std::string name = c.name;
  for (char& ch : name)
    if (ch == '_') ch = ' ';
  std::vector<std::string> forms{fold_label_text(name), fold_label_text(c.prompt)};
  for (const auto& a : c.aliases) forms.push_back(fold_label_text(a));
  return forms;
}

bool contains_phrase(const std::string& haystack, const std::string& phrase) {
  const std::string h = " " + haystack + " ";
  return h.find(" " + phrase + " ") != std::string::npos;
}

}  // namespace

std::string_view to_string(Task t) {
  for (auto& [k, v] : kTaskNames)
    if (k == t) return v;
  return "unknown";
}

Task parse_task(std::string_view s) {
  for (auto& [k, v] : kTaskNames)
    if (v == s) return k;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

std::string_view to_string(LlmTask t) {
  for (auto& [k, v] : kLlmTaskNames)
    if (k == t) return v;
  return "unknown";
}

LlmTask parse_llm_task(std::string_view s) {
  for (auto& [k, v] : kLlmTaskNames)
    if (v == s) return k;
  throw ConfigError("unknown LLM task '" + std::string(s) + "'");
}

std::string_view prompt_id_for(LlmTask t) {
  switch (t) {
    case LlmTask::binary_tweet: return "predict_binary_tweet";
    case LlmTask::multiclass_tweet: return "predict_multiclass_tweet";
    case LlmTask::binary_meme: return "predict_binary_meme";
    case LlmTask::multilabel_meme: return "predict_multilabel_meme";
  }
  return "";
}

Task task_of(LlmTask t) {
  switch (t) {
    case LlmTask::multiclass_tweet: return Task::multiclass;
    case LlmTask::multilabel_meme: return Task::multilabel;
    default: return Task::binary;
  }
}

const LabelRegistry& LabelRegistry::builtin() {
  static const LabelRegistry registry = from_json(embedded::kLabelsJson);
  return registry;
}

LabelRegistry LabelRegistry::from_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("label registry is not valid JSON: ") + e.what());
  }
  LabelRegistry r;
  const auto& tasks = j.at("tasks");
  r.binary_ = parse_classes(tasks.at("binary"));
  r.multiclass_ = parse_classes(tasks.at("multiclass"));
  r.multilabel_ = parse_classes(tasks.at("multilabel"));
  for (const auto& e : tasks.at("multilabel").value("empty", nlohmann::json::array()))
    r.empty_.push_back(fold_label_text(e.get<std::string>()));
  if (r.binary_.size() != 2) throw ConfigError("binary task must have two classes");
  if (r.multiclass_.size() != kFineLabelCount) throw ConfigError("multiclass task must have seven classes");
  if (r.multilabel_.size() != kMisogynyLabelCount) throw ConfigError("multilabel task must have four classes");
  return r;
}

LabelRegistry LabelRegistry::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

const std::vector<LabelClass>& LabelRegistry::classes(Task t) const {
  switch (t) {
    case Task::binary: return binary_;
    case Task::multiclass: return multiclass_;
    case Task::multilabel: return multilabel_;
  }
  return binary_;
}

int LabelRegistry::find(Task t, std::string_view token) const {
  const std::string folded = fold_label_text(token);
  const auto& cs = classes(t);
  for (std::size_t i = 0; i < cs.size(); ++i)
    for (const auto& f : folded_forms(cs[i]))
      if (f == folded) return static_cast<int>(i);
  return -1;
}

std::string fold_label_text(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isalnum(c)) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(c));
    } else {
      pending_space = true;
    }
  }
  return out;
}

ParsedLabel parse_llm_label(std::string_view raw, Task task, const LabelRegistry& registry) {
  const std::string folded = fold_label_text(raw);
  const auto& cs = registry.classes(task);
  switch (task) {
    case Task::binary: {
      for (std::size_t i = 0; i < cs.size(); ++i)
        if (fold_label_text(cs[i].prompt) == folded) return {static_cast<Target>(i)};
      throw ParseError("expected yes or no", std::string(raw));
    }
    case Task::multiclass: {
      if (int idx = registry.find(task, folded); idx >= 0) return {idx};
      int hit = -1;
      for (std::size_t i = 0; i < cs.size(); ++i) {
        bool mentioned = false;
        for (const auto& f : folded_forms(cs[i])) mentioned = mentioned || contains_phrase(folded, f);
        if (!mentioned) continue;
        if (hit >= 0) throw ParseError("reply names more than one class", std::string(raw));
        hit = static_cast<int>(i);
      }
      if (hit < 0) throw ParseError("reply names no known class", std::string(raw));
      return {hit};
    }
    case Task::multilabel: {
      LabelSet set;
      bool saw_label = false, saw_empty = false;
      for (const auto& part : split(raw, ',')) {
        const std::string f = fold_label_text(part);
        if (f.empty()) continue;
        if (std::find(registry.empty_tokens().begin(), registry.empty_tokens().end(), f) !=
            registry.empty_tokens().end()) {
          saw_empty = true;
          continue;
        }
        const int idx = registry.find(task, f);
        if (idx < 0) throw ParseError("unknown label in reply", std::string(raw));
        set.add(static_cast<MisogynyLabel>(idx));
        saw_label = true;
      }
      if (saw_empty && saw_label) throw ParseError("reply mixes None with labels", std::string(raw));
      if (!saw_empty && !saw_label) throw ParseError("reply names no label", std::string(raw));
      return {static_cast<Target>(set.bits())};
    }
  }
  throw ParseError("unsupported task", std::string(raw));
}

}  // namespace ctxhsd
