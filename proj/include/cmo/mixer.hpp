#pragma once

#include "cmo/rng.hpp"
#include "cmo/samplers.hpp"
#include "cmo/types.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cmo {

/// Rectangle [x1, x2) x [y1, y2) pasted from the foreground image, with the
/// mixing ratio before and after area correction.
struct MixRegion {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;
  double lambda_raw = 1.0;
  double lambda_adj = 1.0;

  long area() const { return static_cast<long>(x2 - x1) * (y2 - y1); }
  bool contains(int x, int y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
  friend bool operator==(const MixRegion&, const MixRegion&) = default;
};

struct SoftLabel {
  VectorXd probs;
};

/// Training-time augmentation scheme. `none` trains on unmixed batches drawn
/// from the original distribution.
enum class MixVariant {
  none,
  cmo,
  cmo_back,
  cmo_minor,
  cutmix_plain,
  mixup_q,
  blur_oversample,
  jitter_oversample,
};

std::string_view to_string(MixVariant v);
MixVariant parse_mix_variant(std::string_view name);

/// lambda ~ Beta(alpha, alpha).
double draw_lambda(double alpha, Rng& rng);

/// Box of side floor(W sqrt(1 - lambda)) x floor(H sqrt(1 - lambda)) centred
/// at (cx, cy), with integer half-widths, clipped to the image.
MixRegion region_at(int width, int height, double lambda_raw, int cx, int cy);

/// region_at with the centre drawn uniformly over the pixel grid.
MixRegion sample_region(int width, int height, double lambda_raw, Rng& rng);

/// 1 - area / (W H).
double adjusted_lambda(const MixRegion& region, int width, int height);

/// Pixels inside the region come from x_f, the rest from x_b.
Image cutmix(const Image& x_b, const Image& x_f, const MixRegion& region);

/// lambda x_b + (1 - lambda) x_f.
Image mixup(const Image& x_b, const Image& x_f, double lambda);

/// lambda one_hot(y_b) + (1 - lambda) one_hot(y_f).
SoftLabel mix_labels(int y_b, int y_f, double lambda, int num_classes);

enum class Compositor { cutmix, mixup };
enum class Source { original, weighted };

/// Which distribution feeds each side of a pair.
struct PairPlan {
  Source background;
  Source foreground;
  Compositor compositor;
};

/// Dispatch table for the paired variants; std::nullopt for variants that do
/// not combine two images.
std::optional<PairPlan> pair_plan(MixVariant variant);

struct PairSources {
  const SamplingDistribution* background;
  const SamplingDistribution* foreground;
  Compositor compositor;
};

std::optional<PairSources> make_pair_sources(MixVariant variant, const SamplingDistribution& p,
                                             const SamplingDistribution& q);

struct BlurParams {
  std::vector<int> kernel_sizes{5, 7};
  double sigma_min = 0.1;
  double sigma_max = 5.0;
};

struct JitterParams {
  double brightness = 0.5;
  /// Maximum hue rotation as a fraction of the full hue circle.
  double hue = 0.3;
};

/// Separable Gaussian filter with clamp-to-edge borders.
Image gaussian_blur(const Image& x, int kernel_size, double sigma);
/// Kernel size drawn from the configured set, sigma uniform in range.
Image gaussian_blur(const Image& x, const BlurParams& params, Rng& rng);

/// Scales every channel by `brightness_factor`, then rotates hue by
/// `hue_shift` turns (3-channel images only); result clamped to [0, 1].
Image color_jitter(const Image& x, double brightness_factor, double hue_shift);
/// Factor uniform in [1 - b, 1 + b], shift uniform in [-hue, hue].
Image color_jitter(const Image& x, const JitterParams& params, Rng& rng);

}  // namespace cmo
