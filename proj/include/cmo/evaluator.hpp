#pragma once

#include "cmo/data_corpus.hpp"
#include "cmo/nnet.hpp"

#include "json.hpp"

#include <span>
#include <string>

namespace cmo {

/// Accuracy and calibration summary on a test split. Group accuracies are
/// unweighted means over member classes; an empty group reports NaN.
struct MetricsReport {
  double overall_acc = 0.0;
  double many_acc = 0.0;
  double medium_acc = 0.0;
  double few_acc = 0.0;
  VectorXd per_class_acc;
  double mean_max_confidence = 0.0;
  double ece = 0.0;
};

struct Calibration {
  double mean_max_confidence = 0.0;
  double ece = 0.0;
};

/// Mean of row maxima and expected calibration error over `bins` equal-width
/// confidence bins. Rows must sum to one.
Calibration calibration(const RowMatrixXd& probabilities, std::span<const int> labels, int bins = 15);

/// Metrics from class probabilities (one row per sample).
MetricsReport evaluate_probabilities(const RowMatrixXd& probabilities, std::span<const int> labels,
                                     const ShotGroups& groups, int bins = 15);

/// Softmax probabilities of `model` over every image in `ds`.
RowMatrixXd predict_proba(const Model& model, const Dataset& ds, std::size_t batch_size = 256);

MetricsReport evaluate(const Model& model, const Dataset& test, const ShotGroups& groups, int bins = 15);

/// Fraction of samples whose arg-max prediction equals the label.
double accuracy(const Model& model, const Dataset& ds);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Fixed column order: overall, many, medium, few, mean_max_conf, ece,
/// class_0 ... class_{C-1}.
std::string metrics_csv_header(int num_classes);
std::string to_csv_row(const MetricsReport& m);

}  // namespace cmo
