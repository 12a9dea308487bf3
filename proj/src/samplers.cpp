#include "cmo/samplers.hpp"

#include <algorithm>
#include <cmath>

namespace cmo {

double effective_number(long n_k, long total) {
  if (total < 2 || n_k < 1 || n_k > total) throw std::invalid_argument("effective number needs 1 <= n_k <= N, N >= 2");
  const double beta = static_cast<double>(total - 1) / static_cast<double>(total);
  // (1 - beta^n) / (1 - beta) with 1 - beta = 1/N; expm1/log1p keep precision
  // when beta is close to one.
  return -std::expm1(static_cast<double>(n_k) * std::log1p(-1.0 / static_cast<double>(total))) *
         static_cast<double>(total);
}

namespace {

SamplingDistribution expand(VectorXd class_probs, std::span<const long> counts, const std::vector<int>& labels) {
  SamplingDistribution d;
  d.instance_weights.resize(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    d.instance_weights[static_cast<Index>(i)] = class_probs[labels[i]] / static_cast<double>(counts[k]);
  }
  d.class_probs = std::move(class_probs);
  return d;
}

std::vector<int> sorted_labels(std::span<const long> counts) {
  std::vector<int> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), static_cast<std::size_t>(counts[k]), static_cast<int>(k));
  return labels;
}

std::vector<int> dataset_labels(const Dataset& ds) {
  std::vector<int> labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = ds.label(i);
  return labels;
}

VectorXd empirical(const ClassHistogram& hist) {
  VectorXd p(hist.num_classes());
  for (int k = 0; k < hist.num_classes(); ++k) p[k] = static_cast<double>(hist.count(k));
  return p / static_cast<double>(hist.total());
}

}  // namespace

SamplingDistribution weighted_q(const ClassHistogram& hist, const WeightStrategy& strategy) {
  if (strategy.kind == WeightStrategy::Kind::power && !(std::isfinite(strategy.r) && strategy.r >= 0.0))
    throw std::invalid_argument("power strategy needs a finite r >= 0");
  return expand(class_weights_q(hist, strategy), hist.counts(), sorted_labels(hist.counts()));
}

SamplingDistribution weighted_q(const Dataset& ds, const WeightStrategy& strategy) {
  const ClassHistogram hist = ds.histogram();
  if (strategy.kind == WeightStrategy::Kind::power && !(std::isfinite(strategy.r) && strategy.r >= 0.0))
    throw std::invalid_argument("power strategy needs a finite r >= 0");
  return expand(class_weights_q(hist, strategy), hist.counts(), dataset_labels(ds));
}

SamplingDistribution original_p(const ClassHistogram& hist) {
  return expand(empirical(hist), hist.counts(), sorted_labels(hist.counts()));
}

SamplingDistribution original_p(const Dataset& ds) {
  const ClassHistogram hist = ds.histogram();
  return expand(empirical(hist), hist.counts(), dataset_labels(ds));
}

InstanceSampler::InstanceSampler(const SamplingDistribution& dist) {
  if (dist.instance_weights.size() == 0) throw std::invalid_argument("cannot sample from an empty distribution");
  cumulative_.resize(static_cast<std::size_t>(dist.instance_weights.size()));
  double acc = 0.0;
  for (Index i = 0; i < dist.instance_weights.size(); ++i) {
    if (!(dist.instance_weights[i] >= 0.0)) throw std::invalid_argument("instance weights must be non-negative");
    acc += dist.instance_weights[i];
    cumulative_[static_cast<std::size_t>(i)] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("instance weights sum to zero");
  for (double& c : cumulative_) c /= acc;
  cumulative_.back() = 1.0;
}

std::size_t InstanceSampler::draw(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

std::vector<std::size_t> InstanceSampler::draw(std::size_t count, Rng& rng) const {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = draw(rng);
  return out;
}

std::size_t draw_instance(const SamplingDistribution& dist, const Dataset& ds, Rng& rng) {
  if (static_cast<std::size_t>(dist.instance_weights.size()) != ds.size())
    throw std::invalid_argument("distribution was not built over this dataset");
  return InstanceSampler(dist).draw(rng);
}

Dataset ros_expand(const Dataset& ds, Rng& rng) {
  const auto& counts = ds.class_counts();
  const long target = *std::max_element(counts.begin(), counts.end());
  std::vector<LabeledImage> images = ds.images();
  for (int k = 0; k < ds.num_classes(); ++k) {
    const auto& members = ds.class_members(k);
    if (members.empty()) continue;
    for (long extra = static_cast<long>(members.size()); extra < target; ++extra)
      images.push_back(ds[members[static_cast<std::size_t>(rng.below(members.size()))]]);
  }
  return Dataset(std::move(images), ds.num_classes());
}

ClassWeights drw_class_weights(const ClassHistogram& hist) {
  VectorXd w(hist.num_classes());
  for (int k = 0; k < hist.num_classes(); ++k) w[k] = 1.0 / effective_number(hist.count(k), hist.total());
  return {w * (static_cast<double>(w.size()) / w.sum())};
}

}  // namespace cmo
