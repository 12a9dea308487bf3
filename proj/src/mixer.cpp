#include "cmo/mixer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

namespace cmo {

namespace {
constexpr std::array<std::pair<MixVariant, std::string_view>, 8> kVariantNames{{
    {MixVariant::none, "none"},
    {MixVariant::cmo, "cmo"},
    {MixVariant::cmo_back, "cmo_back"},
    {MixVariant::cmo_minor, "cmo_minor"},
    {MixVariant::cutmix_plain, "cutmix_plain"},
    {MixVariant::mixup_q, "mixup_q"},
    {MixVariant::blur_oversample, "blur_oversample"},
    {MixVariant::jitter_oversample, "jitter_oversample"},
}};

void require_same_shape(const Image& a, const Image& b) {
  if (!(a.shape == b.shape)) throw std::invalid_argument("images must share one shape");
}
}  // namespace

std::string_view to_string(MixVariant v) {
  for (const auto& [variant, name] : kVariantNames)
    if (variant == v) return name;
  return "unknown";
}

MixVariant parse_mix_variant(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames)
    if (n == name) return variant;
  throw std::invalid_argument("unknown mix variant '" + std::string(name) + "'");
}

double draw_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be positive");
  const double a = rng.gamma(alpha);
  const double b = rng.gamma(alpha);
  if (a + b == 0.0) return rng.uniform() < 0.5 ? 0.0 : 1.0;  // both underflowed at tiny alpha
  return std::clamp(a / (a + b), 0.0, 1.0);
}

MixRegion region_at(int width, int height, double lambda_raw, int cx, int cy) {
  if (width < 1 || height < 1) throw std::invalid_argument("image dimensions must be positive");
  if (!(lambda_raw >= 0.0 && lambda_raw <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  const double cut_ratio = std::sqrt(1.0 - lambda_raw);
  const int half_w = static_cast<int>(width * cut_ratio) / 2;
  const int half_h = static_cast<int>(height * cut_ratio) / 2;
  MixRegion r;
  r.x1 = std::clamp(cx - half_w, 0, width);
  r.x2 = std::clamp(cx + half_w, 0, width);
  r.y1 = std::clamp(cy - half_h, 0, height);
  r.y2 = std::clamp(cy + half_h, 0, height);
  r.lambda_raw = lambda_raw;
  r.lambda_adj = adjusted_lambda(r, width, height);
  return r;
}

MixRegion sample_region(int width, int height, double lambda_raw, Rng& rng) {
  if (width < 1 || height < 1) throw std::invalid_argument("image dimensions must be positive");
  const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(width)));
  const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(height)));
  return region_at(width, height, lambda_raw, cx, cy);
}

double adjusted_lambda(const MixRegion& region, int width, int height) {
  if (region.x1 < 0 || region.y1 < 0 || region.x2 > width || region.y2 > height || region.x1 > region.x2 ||
      region.y1 > region.y2)
    throw std::invalid_argument("region lies outside the image");
  return 1.0 - static_cast<double>(region.area()) / (static_cast<double>(width) * height);
}

Image cutmix(const Image& x_b, const Image& x_f, const MixRegion& region) {
  require_same_shape(x_b, x_f);
  adjusted_lambda(region, x_b.shape.width, x_b.shape.height);
  Image out = x_b;
  const int ch = x_b.shape.channels;
  for (int y = region.y1; y < region.y2; ++y) {
    const Index begin = out.offset(region.x1, y, 0);
    const Index len = Index{region.x2 - region.x1} * ch;
    out.pixels.segment(begin, len) = x_f.pixels.segment(begin, len);
  }
  return out;
}

Image mixup(const Image& x_b, const Image& x_f, double lambda) {
  require_same_shape(x_b, x_f);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  return Image(x_b.shape, lambda * x_b.pixels + (1.0 - lambda) * x_f.pixels);
}

SoftLabel mix_labels(int y_b, int y_f, double lambda, int num_classes) {
  if (y_b < 0 || y_b >= num_classes || y_f < 0 || y_f >= num_classes)
    throw std::invalid_argument("class index out of range");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  SoftLabel s{VectorXd::Zero(num_classes)};
  s.probs[y_b] += lambda;
  s.probs[y_f] += 1.0 - lambda;
  return s;
}

std::optional<PairPlan> pair_plan(MixVariant variant) {
  using enum Source;
  switch (variant) {
    case MixVariant::cmo:
      return PairPlan{original, weighted, Compositor::cutmix};
    case MixVariant::cmo_back:
      return PairPlan{weighted, original, Compositor::cutmix};
    case MixVariant::cmo_minor:
      return PairPlan{weighted, weighted, Compositor::cutmix};
    case MixVariant::cutmix_plain:
      return PairPlan{original, original, Compositor::cutmix};
    case MixVariant::mixup_q:
      return PairPlan{original, weighted, Compositor::mixup};
    default:
      return std::nullopt;
  }
}

std::optional<PairSources> make_pair_sources(MixVariant variant, const SamplingDistribution& p,
                                             const SamplingDistribution& q) {
  const auto plan = pair_plan(variant);
  if (!plan) return std::nullopt;
  auto pick = [&](Source s) { return s == Source::original ? &p : &q; };
  return PairSources{pick(plan->background), pick(plan->foreground), plan->compositor};
}

// ---------------------------------------------------------------------------
// Pixel-level augmentations

Image gaussian_blur(const Image& x, int kernel_size, double sigma) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("blur kernel size must be odd");
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be positive");
  const int radius = kernel_size / 2;
  ArrayXd kernel(kernel_size);
  for (int i = 0; i < kernel_size; ++i) {
    const double d = i - radius;
    kernel[i] = std::exp(-0.5 * d * d / (sigma * sigma));
  }
  kernel /= kernel.sum();

  const auto [w, h, ch] = x.shape;
  Image horizontal(x.shape);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = 0; i < kernel_size; ++i) acc += kernel[i] * x.at(std::clamp(xx + i - radius, 0, w - 1), y, c);
        horizontal.at(xx, y, c) = acc;
      }
  Image out(x.shape);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = 0; i < kernel_size; ++i)
          acc += kernel[i] * horizontal.at(xx, std::clamp(y + i - radius, 0, h - 1), c);
        out.at(xx, y, c) = std::clamp(acc, 0.0, 1.0);
      }
  return out;
}

Image gaussian_blur(const Image& x, const BlurParams& params, Rng& rng) {
  if (params.kernel_sizes.empty()) throw std::invalid_argument("no blur kernel sizes configured");
  if (!(params.sigma_min > 0.0 && params.sigma_min <= params.sigma_max))
    throw std::invalid_argument("invalid blur sigma range");
  const int k = params.kernel_sizes[static_cast<std::size_t>(rng.below(params.kernel_sizes.size()))];
  return gaussian_blur(x, k, rng.uniform(params.sigma_min, params.sigma_max));
}

namespace {

// HSV with hue in turns [0, 1).
std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double hue = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      hue = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      hue = (b - r) / delta + 2.0;
    } else {
      hue = (r - g) / delta + 4.0;
    }
    hue /= 6.0;
    if (hue < 0.0) hue += 1.0;
  }
  const double sat = mx > 0.0 ? delta / mx : 0.0;
  return {hue, sat, mx};
}

std::array<double, 3> hsv_to_rgb(double hue, double sat, double val) {
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = val * (1.0 - sat);
  const double q = val * (1.0 - sat * f);
  const double t = val * (1.0 - sat * (1.0 - f));
  switch (sector) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

}  // namespace

Image color_jitter(const Image& x, double brightness_factor, double hue_shift) {
  if (!(brightness_factor >= 0.0)) throw std::invalid_argument("brightness factor must be non-negative");
  Image out(x.shape, (x.pixels * brightness_factor).min(1.0).max(0.0));
  if (hue_shift == 0.0 || x.shape.channels != 3) return out;
  for (Index i = 0; i + 2 < out.pixels.size(); i += 3) {
    auto [h, s, v] = rgb_to_hsv(out.pixels[i], out.pixels[i + 1], out.pixels[i + 2]);
    h = h + hue_shift;
    h -= std::floor(h);
    const auto rgb = hsv_to_rgb(h, s, v);
    for (int c = 0; c < 3; ++c) out.pixels[i + c] = std::clamp(rgb[static_cast<std::size_t>(c)], 0.0, 1.0);
  }
  return out;
}

Image color_jitter(const Image& x, const JitterParams& params, Rng& rng) {
  if (!(params.brightness >= 0.0 && params.brightness <= 1.0) || !(params.hue >= 0.0 && params.hue <= 0.5))
    throw std::invalid_argument("jitter brightness must lie in [0, 1] and hue in [0, 0.5]");
  const double factor = rng.uniform(1.0 - params.brightness, 1.0 + params.brightness);
  const double shift = rng.uniform(-params.hue, params.hue);
  return color_jitter(x, factor, shift);
}

}  // namespace cmo
