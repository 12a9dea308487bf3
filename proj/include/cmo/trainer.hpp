#pragma once

#include "cmo/data_corpus.hpp"
#include "cmo/mixer.hpp"
#include "cmo/nnet.hpp"
#include "cmo/samplers.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace cmo {

struct TrainConfig {
  Architecture architecture = Architecture::tinyconv;
  std::vector<int> hidden{8, 16};

  int epochs = 40;
  int batch_size = 64;
  double base_lr = 0.05;
  int warmup_epochs = 5;
  std::vector<int> decay_epochs{32, 36};
  double decay_factor = 0.01;
  double momentum = 0.9;
  double weight_decay = 2e-4;

  double alpha = 1.0;
  MixVariant variant = MixVariant::cmo;
  WeightStrategy q_strategy = WeightStrategy::power(1.0);
  /// Train on a ROS-expanded copy of the dataset.
  bool ros = false;
  /// First epoch with class-weighted loss; disabled when empty.
  std::optional<int> drw_epoch;
  /// Replaces drw_class_weights() when set (used to probe the DRW switch).
  std::optional<std::vector<double>> drw_weights_override;
  /// Trailing epochs trained on unmixed batches with plain CE.
  int cmo_off_last = 3;
  /// One region per image instead of one per batch.
  bool per_image_region = false;
  BlurParams blur;
  JitterParams jitter;

  std::uint64_t seed = 0;
  ShotThresholds thresholds{20, 4};

  /// Batch preparation threads; does not affect results.
  int workers = 1;
};

/// Throws ConfigError on inconsistent settings.
void validate(const TrainConfig& config);

/// Learning rate for a zero-based epoch: linear warmup to base_lr over the
/// first warmup_epochs, then a multiplicative decay at each decay epoch.
double lr_at(int epoch, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool mixing = false;
  bool drw = false;
  /// Accuracy on the monitoring split, when one was supplied.
  std::optional<double> eval_accuracy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// One prepared mini-batch.
struct Batch {
  RowMatrixXd x;
  std::vector<int> y_b;
  std::vector<int> y_f;
  std::vector<double> lambda;
};

/// Runs the full training loop. Deterministic in (config minus workers,
/// dataset). `monitor`, when given, is scored after every epoch.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const Dataset* monitor = nullptr);

/// Classes treated as minority by the blur/jitter variants (not many-shot).
std::vector<bool> minority_mask(const Dataset& dataset, ShotThresholds thresholds);

}  // namespace cmo
