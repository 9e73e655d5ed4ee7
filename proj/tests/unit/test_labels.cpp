#include <doctest.h>

#include "ctxhsd/corpus.hpp"
#include "ctxhsd/errors.hpp"
#include "ctxhsd/labels.hpp"

using namespace ctxhsd;

namespace {

Target parse(std::string_view raw, Task t) { return parse_llm_label(raw, t, LabelRegistry::builtin()).label; }

}  // namespace

TEST_CASE("builtin registry") {
  const auto& r = LabelRegistry::builtin();
  CHECK(r.arity(Task::binary) == 2);
  CHECK(r.arity(Task::multiclass) == 7);
  CHECK(r.arity(Task::multilabel) == 4);
  for (std::size_t i = 0; i < kFineLabelCount; ++i)
    CHECK(r.name(Task::multiclass, static_cast<Target>(i)) == to_string(static_cast<FineLabel>(i)));
  for (std::size_t i = 0; i < kMisogynyLabelCount; ++i)
    CHECK(r.name(Task::multilabel, static_cast<Target>(i)) == to_string(static_cast<MisogynyLabel>(i)));
}

TEST_CASE("binary replies") {
  CHECK(parse(" YES. ", Task::binary) == 1);
  CHECK(parse("yes", Task::binary) == 1);
  CHECK(parse("No.", Task::binary) == 0);
  CHECK_THROWS_AS(parse("definitely hateful", Task::binary), ParseError);
  CHECK_THROWS_AS(parse("yes no", Task::binary), ParseError);
  try {
    parse("maybe?", Task::binary);
  } catch (const ParseError& e) {
    CHECK(e.raw() == "maybe?");
  }
}

TEST_CASE("multi-class replies") {
  CHECK(parse("White Grievance", Task::multiclass) == static_cast<Target>(FineLabel::white_grievance));
  CHECK(parse("'Stereotypical'.", Task::multiclass) == static_cast<Target>(FineLabel::stereotypical));
  CHECK(parse("threatening", Task::multiclass) == static_cast<Target>(FineLabel::threatening));
  CHECK(parse("Other", Task::multiclass) == static_cast<Target>(FineLabel::other));
  CHECK(parse("The answer is Irony", Task::multiclass) == static_cast<Target>(FineLabel::irony));
  CHECK_THROWS_AS(parse("Irony or Incitement", Task::multiclass), ParseError);
  CHECK_THROWS_AS(parse("definitely hateful", Task::multiclass), ParseError);
}

TEST_CASE("multi-label replies") {
  LabelSet sv;
  sv.add(MisogynyLabel::stereotype);
  sv.add(MisogynyLabel::violence);
  CHECK(parse("Stereotype, Violence", Task::multilabel) == sv.bits());
  CHECK(parse("violence,stereotype", Task::multilabel) == sv.bits());
  CHECK(parse("None", Task::multilabel) == 0);
  CHECK_THROWS_AS(parse("None, Shaming", Task::multilabel), ParseError);
  CHECK_THROWS_AS(parse("", Task::multilabel), ParseError);
  CHECK_THROWS_AS(parse("Shaming, Sarcasm", Task::multilabel), ParseError);
}

TEST_CASE("llm task mapping") {
  CHECK(prompt_id_for(LlmTask::binary_meme) == "predict_binary_meme");
  CHECK(task_of(LlmTask::multiclass_tweet) == Task::multiclass);
  CHECK(parse_llm_task("multilabel_meme") == LlmTask::multilabel_meme);
}
