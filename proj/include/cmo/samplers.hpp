#pragma once

#include "cmo/rng.hpp"
#include "cmo/types.hpp"

#include <cstddef>
#include <vector>

namespace cmo {

/// How class sampling weights are derived from class counts.
struct WeightStrategy {
  enum class Kind { power, effective_number };
  Kind kind = Kind::power;
  /// Exponent r for Kind::power; ignored otherwise.
  double r = 1.0;

  static WeightStrategy power(double r) { return {Kind::power, r}; }
  static WeightStrategy effective() { return {Kind::effective_number, 0.0}; }
};

/// Class-level and instance-level draw probabilities over one dataset.
///
/// The instance weight of sample i is class_probs[y_i] / n_{y_i}.
struct SamplingDistribution {
  VectorXd class_probs;
  VectorXd instance_weights;
};

/// Positive per-class loss weights with mean one.
struct ClassWeights {
  VectorXd weights;
};

/// (1 - beta^n_k) / (1 - beta) with beta = (N - 1) / N.
double effective_number(long n_k, long total);

/// Class probabilities proportional to 1 / n_k^r, or to 1 / E(k).
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> class_weights_q(const ClassHistogram& hist, const WeightStrategy& strategy) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec w(hist.num_classes());
  for (int k = 0; k < hist.num_classes(); ++k) {
    const auto n = static_cast<Scalar>(hist.count(k));
    w[k] = strategy.kind == WeightStrategy::Kind::power
               ? Scalar(1) / std::pow(n, static_cast<Scalar>(strategy.r))
               : Scalar(1) / static_cast<Scalar>(effective_number(hist.count(k), hist.total()));
  }
  return w / w.sum();
}

/// Minor-class-weighted distribution Q.
SamplingDistribution weighted_q(const ClassHistogram& hist, const WeightStrategy& strategy);
/// Builds Q over the samples of `ds`; class counts come from the dataset.
SamplingDistribution weighted_q(const Dataset& ds, const WeightStrategy& strategy);

/// Original data distribution P: class_probs n_k / N, uniform instance weights.
SamplingDistribution original_p(const ClassHistogram& hist);
SamplingDistribution original_p(const Dataset& ds);

/// Draws dataset indices with replacement according to instance weights.
class InstanceSampler {
 public:
  explicit InstanceSampler(const SamplingDistribution& dist);

  std::size_t draw(Rng& rng) const;
  std::vector<std::size_t> draw(std::size_t count, Rng& rng) const;
  std::size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
};

/// One draw from `dist` over `ds`.
std::size_t draw_instance(const SamplingDistribution& dist, const Dataset& ds, Rng& rng);

/// Random oversampling: every class is topped up with within-class draws with
/// replacement until it has max_k n_k samples. Original samples are kept.
Dataset ros_expand(const Dataset& ds, Rng& rng);

/// Deferred re-weighting coefficients: 1 / E(k), normalized to mean one.
ClassWeights drw_class_weights(const ClassHistogram& hist);

}  // namespace cmo
