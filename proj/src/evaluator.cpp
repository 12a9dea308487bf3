#include "cmo/evaluator.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace cmo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double group_mean(const VectorXd& per_class, const std::vector<int>& members) {
  if (members.empty()) return kNaN;
  double s = 0.0;
  for (int k : members) s += per_class[k];
  return s / static_cast<double>(members.size());
}

Index argmax(const RowMatrixXd& m, Index row) {
  Index best = 0;
  m.row(row).maxCoeff(&best);
  return best;
}

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double number_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

Calibration calibration(const RowMatrixXd& probabilities, std::span<const int> labels, int bins) {
  const Index n = probabilities.rows();
  if (n == 0 || static_cast<Index>(labels.size()) != n)
    throw std::invalid_argument("calibration needs one label per probability row");
  if (bins < 1) throw std::invalid_argument("calibration needs at least one bin");
  std::vector<double> bin_conf(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> bin_correct(static_cast<std::size_t>(bins), 0.0);
  std::vector<long> bin_count(static_cast<std::size_t>(bins), 0);
  double conf_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (std::abs(probabilities.row(i).sum() - 1.0) > 1e-6 || probabilities.row(i).minCoeff() < 0.0)
      throw std::invalid_argument("probability row " + std::to_string(i) + " is not normalized");
    const Index pred = argmax(probabilities, i);
    const double conf = probabilities(i, pred);
    const auto b = static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(std::floor(conf * bins))));
    bin_conf[b] += conf;
    bin_correct[b] += pred == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    ++bin_count[b];
    conf_sum += conf;
  }
  Calibration c;
  c.mean_max_confidence = conf_sum / static_cast<double>(n);
  for (std::size_t b = 0; b < bin_count.size(); ++b) {
    if (bin_count[b] == 0) continue;
    const double m = static_cast<double>(bin_count[b]);
    c.ece += (m / static_cast<double>(n)) * std::abs(bin_correct[b] / m - bin_conf[b] / m);
  }
  return c;
}

MetricsReport evaluate_probabilities(const RowMatrixXd& probabilities, std::span<const int> labels,
                                     const ShotGroups& groups, int bins) {
  const Index n = probabilities.rows();
  const int classes = static_cast<int>(probabilities.cols());
  if (n == 0 || static_cast<Index>(labels.size()) != n) throw std::invalid_argument("need one label per sample");
  VectorXd correct = VectorXd::Zero(classes);
  VectorXd total = VectorXd::Zero(classes);
  double hits = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw std::invalid_argument("label out of range");
    const bool hit = argmax(probabilities, i) == y;
    correct[y] += hit ? 1.0 : 0.0;
    total[y] += 1.0;
    hits += hit ? 1.0 : 0.0;
  }
  for (int k = 0; k < classes; ++k)
    if (total[k] == 0.0) throw std::invalid_argument("class " + std::to_string(k) + " has no test samples");

  MetricsReport m;
  m.per_class_acc = correct.cwiseQuotient(total);
  m.overall_acc = hits / static_cast<double>(n);
  m.many_acc = group_mean(m.per_class_acc, groups.many);
  m.medium_acc = group_mean(m.per_class_acc, groups.medium);
  m.few_acc = group_mean(m.per_class_acc, groups.few);
  const Calibration c = calibration(probabilities, labels, bins);
  m.mean_max_confidence = c.mean_max_confidence;
  m.ece = c.ece;
  return m;
}

RowMatrixXd predict_proba(const Model& model, const Dataset& ds, std::size_t batch_size) {
  RowMatrixXd probs(static_cast<Index>(ds.size()), model.num_classes());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    probs.middleRows(static_cast<Index>(start), static_cast<Index>(idx.size())) =
        softmax<double>(model.forward(ds.batch(idx)));
  }
  return probs;
}

MetricsReport evaluate(const Model& model, const Dataset& test, const ShotGroups& groups, int bins) {
  if (test.empty()) throw std::invalid_argument("empty test set");
  if (test.num_classes() != model.num_classes()) throw std::invalid_argument("model and test set disagree on classes");
  std::vector<int> labels(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) labels[i] = test.label(i);
  return evaluate_probabilities(predict_proba(model, test), labels, groups, bins);
}

double accuracy(const Model& model, const Dataset& ds) {
  if (ds.empty()) throw std::invalid_argument("empty dataset");
  const RowMatrixXd probs = predict_proba(model, ds);
  double hits = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += argmax(probs, static_cast<Index>(i)) == ds.label(i) ? 1.0 : 0.0;
  return hits / static_cast<double>(ds.size());
}

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json per_class = nlohmann::json::array();
  for (Index k = 0; k < m.per_class_acc.size(); ++k) per_class.push_back(m.per_class_acc[k]);
  return {{"overall_acc", m.overall_acc},
          {"many_acc", number_or_null(m.many_acc)},
          {"medium_acc", number_or_null(m.medium_acc)},
          {"few_acc", number_or_null(m.few_acc)},
          {"mean_max_confidence", m.mean_max_confidence},
          {"ece", m.ece},
          {"per_class_acc", per_class}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.overall_acc = j.at("overall_acc").get<double>();
  m.many_acc = number_from(j.at("many_acc"));
  m.medium_acc = number_from(j.at("medium_acc"));
  m.few_acc = number_from(j.at("few_acc"));
  m.mean_max_confidence = j.at("mean_max_confidence").get<double>();
  m.ece = j.at("ece").get<double>();
  const auto per_class = j.at("per_class_acc").get<std::vector<double>>();
  m.per_class_acc = Eigen::Map<const VectorXd>(per_class.data(), static_cast<Index>(per_class.size()));
  return m;
}

std::string metrics_csv_header(int num_classes) {
  std::string h = "overall,many,medium,few,mean_max_conf,ece";
  for (int k = 0; k < num_classes; ++k) h += ",class_" + std::to_string(k);
  return h;
}

std::string to_csv_row(const MetricsReport& m) {
  std::string row = csv_number(m.overall_acc);
  for (double v : {m.many_acc, m.medium_acc, m.few_acc, m.mean_max_confidence, m.ece}) row += ',' + csv_number(v);
  for (Index k = 0; k < m.per_class_acc.size(); ++k) row += ',' + csv_number(m.per_class_acc[k]);
  return row;
}

}  // namespace cmo
