#include "ctxhsd/evaluate.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ctxhsd/errors.hpp"
#include "ctxhsd/util.hpp"

namespace ctxhsd {

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ContractError("truth and prediction lengths differ");
}

nlohmann::json confusion_json(const ConfusionMatrix& m) {
  return {{"classes", m.classes}, {"abstain_column", m.has_abstain_column}, {"counts", m.counts}};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  ConfusionMatrix m;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.has_abstain_column = j.at("abstain_column").get<bool>();
  m.counts = j.at("counts").get<std::vector<std::vector<std::size_t>>>();
  return m;
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += row_sum(i);
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t row) const {
  std::size_t s = 0;
  for (auto c : counts.at(row)) s += c;
  return s;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "truth\\pred";
  for (const auto& c : classes) out += "," + c;
  if (has_abstain_column) out += ",abstain";
  out += "\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out += classes[i];
    for (auto c : counts[i]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

std::string ConfusionMatrix::to_svg(std::string_view title) const {
  const std::size_t rows = classes.size();
  const std::size_t cols = rows + (has_abstain_column ? 1 : 0);
  const int cell = 56, left = 150, top = 70;
  const int width = left + static_cast<int>(cols) * cell + 20;
  const int height = top + static_cast<int>(rows) * cell + 130;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";
  s << "<text x=\"" << left + static_cast<int>(cols) * cell / 2 << "\" y=\"" << height - 10
    << "\" text-anchor=\"middle\">Predicted label</text>\n";
  s << "<text x=\"16\" y=\"" << top + static_cast<int>(rows) * cell / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + static_cast<int>(rows) * cell / 2
    << ")\">True label</text>\n";
  for (std::size_t i = 0; i < rows; ++i) {
    const double row_total = static_cast<double>(row_sum(i));
    const int y = top + static_cast<int>(i) * cell;
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << xml_escape(classes[i]) << "</text>\n";
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t c = counts[i][j];
      const double frac = row_total > 0 ? static_cast<double>(c) / row_total : 0.0;
      const int shade = 255 - static_cast<int>(std::lround(frac * 200.0));
      const int x = left + static_cast<int>(j) * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
        << shade << "," << shade << ",255)\" stroke=\"#888\"/>\n";
      s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\""
        << (frac > 0.6 ? " fill=\"white\"" : "") << ">" << c << "</text>\n";
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    const int x = left + static_cast<int>(j) * cell + cell / 2;
    const int y = top + static_cast<int>(rows) * cell + 10;
    const std::string name = j < rows ? classes[j] : "abstain";
    s << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-45 " << x << " " << y
      << ")\">" << xml_escape(name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

ConfusionMatrix confusion_matrix(std::span<const Target> y_true, std::span<const Target> y_pred,
                                 const std::vector<std::string>& classes) {
  check_lengths(y_true.size(), y_pred.size());
  const std::size_t k = classes.size();
  ConfusionMatrix m;
  m.classes = classes;
  m.has_abstain_column = std::find(y_pred.begin(), y_pred.end(), kAbstain) != y_pred.end();
  m.counts.assign(k, std::vector<std::size_t>(k + (m.has_abstain_column ? 1 : 0), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const Target t = y_true[i], p = y_pred[i];
    if (t < 0 || static_cast<std::size_t>(t) >= k) throw ContractError("truth label outside the class list");
    if (p != kAbstain && (p < 0 || static_cast<std::size_t>(p) >= k))
      throw ContractError("predicted label outside the class list");
    m.counts[static_cast<std::size_t>(t)][p == kAbstain ? k : static_cast<std::size_t>(p)] += 1;
  }
  return m;
}

double ClassCounts::precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
double ClassCounts::recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
double ClassCounts::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
}

namespace {

std::vector<ClassCounts> single_label_counts(std::span<const Target> y_true, std::span<const Target> y_pred,
                                             std::size_t n_classes) {
  check_lengths(y_true.size(), y_pred.size());
  std::vector<ClassCounts> c(n_classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const Target t = y_true[i], p = y_pred[i];
    if (t < 0 || static_cast<std::size_t>(t) >= n_classes) throw ContractError("truth label outside the class list");
    if (p != kAbstain && (p < 0 || static_cast<std::size_t>(p) >= n_classes))
      throw ContractError("predicted label outside the class list");
    if (p == t) {
      c[static_cast<std::size_t>(t)].tp++;
    } else {
      c[static_cast<std::size_t>(t)].fn++;
      if (p != kAbstain) c[static_cast<std::size_t>(p)].fp++;
    }
  }
  return c;
}

void fill_from_counts(MetricReport& r, const std::vector<ClassCounts>& counts) {
  r.per_class_f1.clear();
  r.per_class_precision.clear();
  r.per_class_recall.clear();
  r.support.clear();
  r.zero_support.clear();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto& c = counts[i];
    r.per_class_f1.push_back(c.f1());
    r.per_class_precision.push_back(c.precision());
    r.per_class_recall.push_back(c.recall());
    r.support.push_back(c.tp + c.fn);
    if (c.tp + c.fn == 0 && c.tp + c.fp == 0) r.zero_support.push_back(r.classes[i]);
  }
  r.macro_f1 = mean_of(r.per_class_f1);
  r.macro_precision = mean_of(r.per_class_precision);
  r.macro_recall = mean_of(r.per_class_recall);
}

}  // namespace

std::vector<double> f1_per_class(std::span<const Target> y_true, std::span<const Target> y_pred,
                                 std::size_t n_classes) {
  std::vector<double> out;
  for (const auto& c : single_label_counts(y_true, y_pred, n_classes)) out.push_back(c.f1());
  return out;
}

double MetricReport::per_class(std::string_view cls) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == cls) return per_class_f1[i];
  throw ContractError("no class '" + std::string(cls) + "' in report");
}

std::map<std::string, double> MetricReport::scalars() const {
  std::map<std::string, double> m{
      {"macro_f1", macro_f1}, {"macro_precision", macro_precision}, {"macro_recall", macro_recall}};
  if (positive_f1) m["hate_f1"] = *positive_f1;
  if (macro_f1_named) m["macro_f1_named"] = *macro_f1_named;
  for (std::size_t i = 0; i < classes.size(); ++i) m["f1/" + classes[i]] = per_class_f1[i];
  return m;
}

MetricReport classification_report(Task task, std::span<const Target> y_true, std::span<const Target> y_pred,
                                   const std::vector<std::string>& classes) {
  if (task == Task::multilabel) throw ContractError("use multilabel_f1 for the multilabel task");
  MetricReport r;
  r.task = task;
  r.classes = classes;
  r.test_size = y_true.size();
  fill_from_counts(r, single_label_counts(y_true, y_pred, classes.size()));
  r.confusion.push_back(confusion_matrix(y_true, y_pred, classes));
  r.abstentions = static_cast<std::size_t>(std::count(y_pred.begin(), y_pred.end(), kAbstain));
  if (task == Task::binary && classes.size() == 2) r.positive_f1 = r.per_class_f1[1];
  if (task == Task::multiclass) {
    std::vector<double> named;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] != "other") named.push_back(r.per_class_f1[i]);
    r.macro_f1_named = mean_of(named);
  }
  if (!r.zero_support.empty())
    spdlog::debug("zero-support classes scored 0: {}", join(r.zero_support, ", "));
  return r;
}

MetricReport multilabel_f1(std::span<const Target> y_true, std::span<const Target> y_pred,
                           const std::vector<std::string>& labels, const std::vector<bool>& abstained) {
  check_lengths(y_true.size(), y_pred.size());
  if (!abstained.empty()) check_lengths(y_true.size(), abstained.size());
  const std::size_t k = labels.size();
  const Target all = (1 << k) - 1;
  MetricReport r;
  r.task = Task::multilabel;
  r.classes = labels;
  r.test_size = y_true.size();
  std::vector<ClassCounts> counts(k);
  std::vector<ConfusionMatrix> per_label(k);
  for (std::size_t l = 0; l < k; ++l) {
    per_label[l].classes = {"not_" + labels[l], labels[l]};
    per_label[l].counts.assign(2, std::vector<std::size_t>(2, 0));
  }
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const Target t = y_true[i];
    const bool abst = !abstained.empty() && abstained[i];
    const Target p = abst ? (~t & all) : y_pred[i];
    if (t < 0 || t > all || p < 0 || p > all) throw ContractError("label set outside the label list");
    if (abst) r.abstentions++;
    for (std::size_t l = 0; l < k; ++l) {
      const bool ti = (t >> l) & 1, pi = (p >> l) & 1;
      per_label[l].counts[ti][pi]++;
      if (ti && pi) counts[l].tp++;
      else if (pi) counts[l].fp++;
      else if (ti) counts[l].fn++;
    }
  }
  fill_from_counts(r, counts);
  r.confusion = std::move(per_label);
  return r;
}

MetricReport evaluate_predictions(const PredictionSet& predictions, std::span<const std::string> ids,
                                  std::span<const Target> y_true, const LabelRegistry& registry) {
  check_lengths(ids.size(), y_true.size());
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < predictions.post_ids.size(); ++i) index[predictions.post_ids[i]] = i;
  std::vector<Target> y_pred;
  std::vector<bool> abst;
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) {
      missing.push_back(id);
      continue;
    }
    const auto& p = predictions.items[it->second];
    y_pred.push_back(p.abstained ? kAbstain : p.label);
    abst.push_back(p.abstained);
  }
  if (!missing.empty()) throw IntegrityError("predictions missing for " + std::to_string(missing.size()) + " id(s)", missing);
  std::vector<std::string> classes;
  for (const auto& c : registry.classes(predictions.task)) classes.push_back(c.name);
  if (predictions.task == Task::multilabel) {
    for (std::size_t i = 0; i < abst.size(); ++i)
      if (abst[i]) y_pred[i] = 0;
    return multilabel_f1(y_true, y_pred, classes, abst);
  }
  return classification_report(predictions.task, y_true, y_pred, classes);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j{{"task", to_string(r.task)},
                   {"classes", r.classes},
                   {"per_class_f1", r.per_class_f1},
                   {"per_class_precision", r.per_class_precision},
                   {"per_class_recall", r.per_class_recall},
                   {"support", r.support},
                   {"macro_f1", r.macro_f1},
                   {"macro_precision", r.macro_precision},
                   {"macro_recall", r.macro_recall},
                   {"zero_support", r.zero_support},
                   {"abstentions", r.abstentions},
                   {"test_size", r.test_size},
                   {"seed", r.seed}};
  if (r.positive_f1) j["hate_f1"] = *r.positive_f1;
  if (r.macro_f1_named) j["macro_f1_named"] = *r.macro_f1_named;
  j["confusion"] = nlohmann::json::array();
  for (const auto& m : r.confusion) j["confusion"].push_back(confusion_json(m));
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.classes = j.at("classes").get<std::vector<std::string>>();
  r.per_class_f1 = j.at("per_class_f1").get<std::vector<double>>();
  r.per_class_precision = j.at("per_class_precision").get<std::vector<double>>();
  r.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
  r.support = j.at("support").get<std::vector<std::size_t>>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_recall = j.at("macro_recall").get<double>();
  r.zero_support = j.at("zero_support").get<std::vector<std::string>>();
  r.abstentions = j.at("abstentions").get<std::size_t>();
  r.test_size = j.at("test_size").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("hate_f1")) r.positive_f1 = j.at("hate_f1").get<double>();
  if (j.contains("macro_f1_named")) r.macro_f1_named = j.at("macro_f1_named").get<double>();
  for (const auto& m : j.at("confusion")) r.confusion.push_back(confusion_from_json(m));
  return r;
}

MetricSummary AggregateReport::at(const std::string& metric) const {
  auto it = summary.find(metric);
  if (it == summary.end()) throw ContractError("no metric '" + metric + "' in aggregate");
  return it->second;
}

AggregateReport aggregate(std::string experiment, std::vector<MetricReport> runs) {
  AggregateReport a;
  a.experiment = std::move(experiment);
  a.runs = std::move(runs);
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : a.runs)
    for (const auto& [k, v] : r.scalars()) values[k].push_back(v);
  for (const auto& [k, v] : values) {
    MetricSummary s;
    s.mean = mean_of(v);
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    a.summary[k] = s;
  }
  return a;
}

nlohmann::json to_json(const AggregateReport& r) {
  nlohmann::json j{{"experiment", r.experiment}, {"runs", nlohmann::json::array()}, {"summary", nlohmann::json::object()}};
  for (const auto& m : r.runs) j["runs"].push_back(to_json(m));
  for (const auto& [k, s] : r.summary) j["summary"][k] = {{"mean", s.mean}, {"stdev", s.stdev}};
  j["failures"] = nlohmann::json::array();
  for (const auto& [seed, msg] : r.failures) j["failures"].push_back({{"seed", seed}, {"message", msg}});
  return j;
}

AggregateReport aggregate_from_json(const nlohmann::json& j) {
  std::vector<MetricReport> runs;
  for (const auto& m : j.at("runs")) runs.push_back(metric_report_from_json(m));
  AggregateReport a = aggregate(j.at("experiment").get<std::string>(), std::move(runs));
  for (const auto& f : j.value("failures", nlohmann::json::array()))
    a.failures.emplace_back(f.at("seed").get<std::uint64_t>(), f.at("message").get<std::string>());
  return a;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const LabelRegistry& registry) {
  if (!spec.train || !spec.predict) throw ConfigError("experiment needs train and predict functions");
  if (spec.runs == 0) throw ConfigError("experiment needs at least one run");
  ExperimentResult result;
  std::vector<MetricReport> reports;
  std::vector<std::pair<std::uint64_t, std::string>> failures;
  for (std::size_t i = 0; i < spec.runs; ++i) {
    const std::uint64_t seed = spec.base_seed + i;
    try {
      TrainedModel model = spec.train(seed);
      PredictionSet preds = spec.predict(model);
      MetricReport rep = evaluate_predictions(preds, spec.test_ids, spec.test_truth, registry);
      rep.seed = seed;
      reports.push_back(std::move(rep));
      result.predictions.push_back(std::move(preds));
      result.models.push_back(std::move(model));
    } catch (const DivergenceError& e) {
      spdlog::error("{} seed {}: {}", spec.name, seed, e.what());
      failures.emplace_back(seed, e.what());
    }
  }
  result.report = aggregate(spec.name, std::move(reports));
  result.report.failures = std::move(failures);
  return result;
}

double DiffReport::fraction(const std::vector<std::string>& cell) const {
  return total ? static_cast<double>(cell.size()) / static_cast<double>(total) : 0.0;
}

nlohmann::json DiffReport::to_json() const {
  auto cell = [&](const std::vector<std::string>& ids) {
    return nlohmann::json{{"count", ids.size()}, {"percent", format_percent(fraction(ids))}, {"ids", ids}};
  };
  return {{"model_a", model_a},
          {"model_b", model_b},
          {"total", total},
          {"a_correct_b_wrong", cell(a_correct_b_wrong)},
          {"a_wrong_b_correct", cell(a_wrong_b_correct)},
          {"both_wrong", cell(both_wrong)},
          {"both_correct", cell(both_correct)}};
}

std::string DiffReport::to_text() const {
  std::ostringstream s;
  s << "A: " << model_a << "\nB: " << model_b << "\ntest items: " << total << "\n\n";
  auto section = [&](std::string_view title, const std::vector<std::string>& ids) {
    s << title << ": " << ids.size() << " (" << format_percent(fraction(ids)) << " of the test set)\n";
    for (const auto& id : ids) s << "  " << id << "\n";
    s << "\n";
  };
  section("A correct, B wrong", a_correct_b_wrong);
  section("A wrong, B correct", a_wrong_b_correct);
  section("both wrong", both_wrong);
  s << "both correct: " << both_correct.size() << " (" << format_percent(fraction(both_correct))
    << " of the test set)\n";
  return s.str();
}

DiffReport prediction_diff(const PredictionSet& a, const PredictionSet& b,
                           const std::map<std::string, Target, std::less<>>& truth) {
  std::set<std::string> ia(a.post_ids.begin(), a.post_ids.end()), ib(b.post_ids.begin(), b.post_ids.end()), it;
  for (const auto& [k, _] : truth) it.insert(k);
  if (ia != ib || ia != it) {
    std::set<std::string> all;
    all.insert(ia.begin(), ia.end());
    all.insert(ib.begin(), ib.end());
    all.insert(it.begin(), it.end());
    std::vector<std::string> odd;
    for (const auto& id : all)
      if (!(ia.count(id) && ib.count(id) && it.count(id))) odd.push_back(id);
    throw ContractError("prediction sets cover different ids: " + join(odd, ", "));
  }
  DiffReport d;
  d.model_a = a.model_id;
  d.model_b = b.model_id;
  d.total = truth.size();
  for (const auto& [id, t] : truth) {
    const Prediction* pa = a.find(id);
    const Prediction* pb = b.find(id);
    const bool ca = !pa->abstained && pa->label == t;
    const bool cb = !pb->abstained && pb->label == t;
    if (ca && !cb) d.a_correct_b_wrong.push_back(id);
    else if (!ca && cb) d.a_wrong_b_correct.push_back(id);
    else if (!ca) d.both_wrong.push_back(id);
    else d.both_correct.push_back(id);
  }
  return d;
}

}  // namespace ctxhsd
