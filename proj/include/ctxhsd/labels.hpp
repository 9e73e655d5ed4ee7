#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctxhsd/corpus.hpp"

namespace ctxhsd {

// Classifier task. Targets are class indices for binary and multiclass, and
// LabelSet bits for multilabel.
enum class Task { binary, multiclass, multilabel };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);

using Target = int;
inline constexpr Target kAbstain = -1;

struct LabelClass {
  std::string name;    // canonical, e.g. white_grievance
  std::string prompt;  // as written in the prediction prompt
  std::vector<std::string> aliases;
};

class LabelRegistry {
 public:
  static const LabelRegistry& builtin();
  static LabelRegistry from_json(std::string_view json_text);
  static LabelRegistry load(const std::filesystem::path& path);

  const std::vector<LabelClass>& classes(Task t) const;
  std::size_t arity(Task t) const { return classes(t).size(); }
  const std::string& name(Task t, std::size_t index) const { return classes(t).at(index).name; }
  // Index of the class whose name, prompt string or alias folds to `token`; -1 if none.
  int find(Task t, std::string_view token) const;
  // Folded tokens meaning "no label" for the multilabel task.
  const std::vector<std::string>& empty_tokens() const { return empty_; }

 private:
  std::vector<LabelClass> binary_, multiclass_, multilabel_;
  std::vector<std::string> empty_;
};

// Lowercase, punctuation mapped to spaces, whitespace collapsed and trimmed.
std::string fold_label_text(std::string_view raw);

struct ParsedLabel {
  Target label = kAbstain;  // class index, or LabelSet bits for multilabel
};

// Binary accepts exactly yes/no, multiclass exactly one class name and
// multilabel a comma-separated list (or "None"). Anything else is a ParseError
// carrying the raw text.
ParsedLabel parse_llm_label(std::string_view raw, Task task, const LabelRegistry& registry = LabelRegistry::builtin());

// Direct-prediction tasks of the LLM baseline.
enum class LlmTask { binary_tweet, multiclass_tweet, binary_meme, multilabel_meme };

std::string_view to_string(LlmTask t);
LlmTask parse_llm_task(std::string_view s);
std::string_view prompt_id_for(LlmTask t);
Task task_of(LlmTask t);

}  // namespace ctxhsd
