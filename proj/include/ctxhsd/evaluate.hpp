#pragma once

#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctxhsd/classify.hpp"
#include "ctxhsd/labels.hpp"

namespace ctxhsd {

// Rows are truth, columns prediction. An extra trailing column counts
// abstentions when any occurred.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  bool has_abstain_column = false;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t row_sum(std::size_t row) const;
  std::string to_csv() const;
  std::string to_svg(std::string_view title) const;
};

// Predictions equal to kAbstain land in the abstain column.
ConfusionMatrix confusion_matrix(std::span<const Target> y_true, std::span<const Target> y_pred,
                                 const std::vector<std::string>& classes);

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  // 2PR/(P+R), 0 when there are no true and no predicted instances.
  double f1() const;
};

// An abstention counts as a false negative for the true class only.
std::vector<double> f1_per_class(std::span<const Target> y_true, std::span<const Target> y_pred,
                                 std::size_t n_classes);

struct MetricReport {
  Task task = Task::binary;
  std::vector<std::string> classes;
  std::vector<double> per_class_f1, per_class_precision, per_class_recall;
  std::vector<std::size_t> support;
  double macro_f1 = 0, macro_precision = 0, macro_recall = 0;
  std::optional<double> positive_f1;         // binary: F1 of the hateful class
  std::optional<double> macro_f1_named;      // multiclass: mean over the six named classes
  std::vector<ConfusionMatrix> confusion;    // one, or one 2x2 per label for multilabel
  std::vector<std::string> zero_support;     // classes scored 0 by convention
  std::size_t abstentions = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;

  double per_class(std::string_view cls) const;
  // Scalar metrics by name, e.g. "macro_f1", "f1/irony".
  std::map<std::string, double> scalars() const;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

// Single-label tasks (binary, multiclass).
MetricReport classification_report(Task task, std::span<const Target> y_true, std::span<const Target> y_pred,
                                   const std::vector<std::string>& classes);

// Label sets as LabelSet bits. `abstained` marks predictions to score as the
// complement of the truth set.
MetricReport multilabel_f1(std::span<const Target> y_true, std::span<const Target> y_pred,
                           const std::vector<std::string>& labels, const std::vector<bool>& abstained = {});

// Aligns predictions to `ids` and scores them.
MetricReport evaluate_predictions(const PredictionSet& predictions, std::span<const std::string> ids,
                                  std::span<const Target> y_true, const LabelRegistry& registry = LabelRegistry::builtin());

struct MetricSummary {
  double mean = 0;
  double stdev = 0;  // sample standard deviation; 0 for a single run
};

struct AggregateReport {
  std::string experiment;
  std::vector<MetricReport> runs;
  std::map<std::string, MetricSummary> summary;
  std::vector<std::pair<std::uint64_t, std::string>> failures;  // seed, message

  bool failed() const { return !failures.empty(); }
  MetricSummary at(const std::string& metric) const;
};

AggregateReport aggregate(std::string experiment, std::vector<MetricReport> runs);
nlohmann::json to_json(const AggregateReport& r);
AggregateReport aggregate_from_json(const nlohmann::json& j);

struct ExperimentSpec {
  std::string name;
  std::size_t runs = 5;
  std::uint64_t base_seed = 0;
  std::vector<std::string> test_ids;
  std::vector<Target> test_truth;
  std::function<TrainedModel(std::uint64_t seed)> train;
  std::function<PredictionSet(const TrainedModel&)> predict;
};

struct ExperimentResult {
  AggregateReport report;
  std::vector<PredictionSet> predictions;  // per successful seed
  std::vector<TrainedModel> models;
};

// Seeds base_seed + 0 .. runs-1. A diverging seed is recorded as a failure
// and the remaining seeds still run.
ExperimentResult run_experiment(const ExperimentSpec& spec, const LabelRegistry& registry = LabelRegistry::builtin());

struct DiffReport {
  std::string model_a, model_b;
  std::vector<std::string> a_correct_b_wrong, a_wrong_b_correct, both_wrong, both_correct;
  std::size_t total = 0;

  double fraction(const std::vector<std::string>& cell) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Throws ContractError naming ids not shared by a, b and truth.
DiffReport prediction_diff(const PredictionSet& a, const PredictionSet& b,
                           const std::map<std::string, Target, std::less<>>& truth);

}  // namespace ctxhsd
