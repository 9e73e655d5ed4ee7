#include <doctest.h>

#include <cmath>

#include "ctxhsd/evaluate.hpp"
#include "test_support.hpp"

using namespace ctxhsd;

namespace {

const std::vector<std::string> kBinary = {"negative", "positive"};
const std::vector<std::string> kLabels = {"shaming", "stereotype", "objectification", "violence"};

PredictionSet make_set(std::string id, std::vector<std::string> ids, std::vector<Target> labels) {
  PredictionSet s;
  s.model_id = std::move(id);
  s.post_ids = std::move(ids);
  for (Target t : labels) {
    Prediction p;
    p.label = t;
    s.items.push_back(p);
  }
  return s;
}

}  // namespace

TEST_CASE("per-class F1 on a hand-computed fixture") {
  const std::vector<Target> t = {1, 1, 0, 0}, p = {1, 0, 0, 0};
  const auto f1 = f1_per_class(t, p, 2);
  CHECK(f1[1] == doctest::Approx(2.0 / 3.0));
  CHECK(f1[0] == doctest::Approx(4.0 / 5.0));
  const auto r = classification_report(Task::binary, t, p, kBinary);
  CHECK(r.macro_f1 == doctest::Approx(0.7333).epsilon(1e-4));
  CHECK(*r.positive_f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.scalars().at("hate_f1") == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("perfect predictions and absent classes") {
  const std::vector<Target> t = {0, 1, 2, 2};
  for (double f : f1_per_class(t, t, 3)) CHECK(f == 1.0);
  const auto f = f1_per_class(t, t, 4);
  CHECK(f[3] == 0.0);
  const std::vector<std::string> classes = {"a", "b", "c", "d"};
  const auto r = classification_report(Task::multiclass, t, t, classes);
  CHECK(r.zero_support == std::vector<std::string>{"d"});
  CHECK(r.macro_f1 == doctest::Approx(0.75));
}

TEST_CASE("confusion matrices") {
  const std::vector<Target> t = {0, 1}, p = {1, 0};
  const auto anti = confusion_matrix(t, p, kBinary);
  CHECK(anti.counts == std::vector<std::vector<std::size_t>>{{0, 1}, {1, 0}});
  const auto diag = confusion_matrix(t, t, kBinary);
  CHECK(diag.counts == std::vector<std::vector<std::size_t>>{{1, 0}, {0, 1}});
  CHECK_FALSE(diag.has_abstain_column);

  const std::vector<Target> ab = {kAbstain, 1};
  const auto withab = confusion_matrix(t, ab, kBinary);
  CHECK(withab.has_abstain_column);
  CHECK(withab.counts[0] == std::vector<std::size_t>{0, 0, 1});
  CHECK(withab.total() == 2);
  CHECK(withab.to_csv().find("abstain") != std::string::npos);
  CHECK(withab.to_svg("x").find("<svg") == 0);
}

TEST_CASE("abstentions count against the true class only") {
  const std::vector<Target> t = {1, 0}, p = {kAbstain, 0};
  const auto r = classification_report(Task::binary, t, p, kBinary);
  CHECK(r.abstentions == 1);
  CHECK(r.per_class_f1[1] == 0.0);
  CHECK(r.per_class_f1[0] == 1.0);
}

TEST_CASE("multi-label F1") {
  const std::vector<Target> none = {0, 0};
  const auto empty = multilabel_f1(none, none, kLabels);
  for (double f : empty.per_class_f1) CHECK(f == 0.0);
  CHECK(empty.zero_support.size() == 4);

  const Target violence = 1 << 3;
  const std::vector<Target> single = {violence};
  const auto r = multilabel_f1(single, single, kLabels);
  CHECK(r.per_class("violence") == 1.0);
  CHECK(r.per_class("shaming") == 0.0);
  CHECK(r.macro_f1 == doctest::Approx(0.25));
  CHECK(r.confusion.size() == 4);
  for (const auto& cm : r.confusion) CHECK(cm.total() == 1);

  const std::vector<Target> all = {0b0001, 0b0010, 0b0100, 0b1000, 0b1111};
  CHECK(multilabel_f1(all, all, kLabels).macro_f1 == doctest::Approx(1.0));

  // An abstention scores as the complement of the truth.
  const std::vector<Target> t = {0b0011}, p = {kAbstain};
  const auto ab = multilabel_f1(t, p, kLabels, {true});
  CHECK(ab.macro_f1 == 0.0);
  CHECK(ab.abstentions == 1);
}

TEST_CASE("aggregation uses the sample standard deviation") {
  MetricReport a, b;
  a.macro_f1 = 0.5;
  b.macro_f1 = 0.7;
  const auto agg = aggregate("x", {a, b});
  CHECK(agg.at("macro_f1").mean == doctest::Approx(0.6));
  CHECK(agg.at("macro_f1").stdev == doctest::Approx(std::sqrt(0.02)));
  CHECK(aggregate("y", {a}).at("macro_f1").stdev == 0.0);
  const auto back = aggregate_from_json(to_json(agg));
  CHECK(back.runs.size() == 2);
  CHECK(back.at("macro_f1").mean == doctest::Approx(0.6));
}

TEST_CASE("metric reports round-trip through json") {
  const std::vector<Target> t = {0, 1, 1, 0, 1}, p = {0, 1, 0, 0, kAbstain};
  auto r = classification_report(Task::binary, t, p, kBinary);
  r.seed = 3;
  const auto back = metric_report_from_json(to_json(r));
  CHECK(back.per_class_f1 == r.per_class_f1);
  CHECK(back.confusion[0].counts == r.confusion[0].counts);
  CHECK(back.seed == 3);
  CHECK(back.positive_f1 == r.positive_f1);
}

TEST_CASE("prediction diff partitions a four-item fixture") {
  const std::map<std::string, Target, std::less<>> truth = {{"w", 1}, {"x", 0}, {"y", 1}, {"z", 0}};
  const auto a = make_set("A", {"w", "x", "y", "z"}, {1, 0, 0, 1});
  const auto b = make_set("B", {"z", "y", "x", "w"}, {0, 0, 1, 1});
  const DiffReport d = prediction_diff(a, b, truth);
  CHECK(d.both_correct == std::vector<std::string>{"w"});
  CHECK(d.a_correct_b_wrong == std::vector<std::string>{"x"});
  CHECK(d.both_wrong == std::vector<std::string>{"y"});
  CHECK(d.a_wrong_b_correct == std::vector<std::string>{"z"});
  CHECK(d.total == 4);
  CHECK(d.to_json()["a_correct_b_wrong"]["percent"] == "25.0%");

  const DiffReport same = prediction_diff(a, a, truth);
  CHECK(same.a_correct_b_wrong.empty());
  CHECK(same.a_wrong_b_correct.empty());

  const auto short_b = make_set("B", {"w", "x", "y"}, {1, 1, 1});
  CHECK_THROWS_AS(prediction_diff(a, short_b, truth), ContractError);
}

TEST_CASE("experiment runs, aggregation and divergence") {
  ExperimentSpec spec;
  spec.name = "toy";
  spec.runs = 3;
  spec.base_seed = 10;
  spec.test_ids = {"a", "b"};
  spec.test_truth = {0, 1};
  std::vector<std::uint64_t> seen;
  spec.train = [&](std::uint64_t seed) {
    seen.push_back(seed);
    if (seed == 11) throw DivergenceError(4);
    TrainedModel m;
    m.config.seed = seed;
    return m;
  };
  spec.predict = [&](const TrainedModel&) { return make_set("toy", {"a", "b"}, {0, 1}); };
  const auto r = run_experiment(spec);
  CHECK(seen == std::vector<std::uint64_t>{10, 11, 12});
  CHECK(r.report.runs.size() == 2);
  CHECK(r.report.failed());
  CHECK(r.report.failures[0].first == 11);
  CHECK(r.report.at("macro_f1").mean == 1.0);
  CHECK(r.report.at("macro_f1").stdev == 0.0);
  seen.clear();
  CHECK(to_json(run_experiment(spec).report) == to_json(r.report));
}

TEST_CASE("evaluate_predictions aligns by id") {
  const auto s = make_set("m", {"b", "a"}, {1, 0});
  const std::vector<std::string> ids = {"a", "b"};
  const std::vector<Target> truth = {0, 1};
  CHECK(evaluate_predictions(s, ids, truth).macro_f1 == 1.0);
  const std::vector<std::string> more = {"a", "c"};
  CHECK_THROWS_AS(evaluate_predictions(s, more, truth), IntegrityError);
}
