#pragma once

#include "cmo/rng.hpp"
#include "cmo/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cmo {

enum class ImbalanceProfile { exponential };

/// Target long-tailed class profile.
struct LongTailSpec {
  int num_classes = 10;
  long n_max = 100;
  double rho = 100.0;
  ImbalanceProfile profile = ImbalanceProfile::exponential;
};

/// n_k = round(n_max * rho^(-k/(C-1))), clamped to at least one.
ClassHistogram build_longtail_profile(const LongTailSpec& spec);

/// max_k n_k / min_k n_k.
double imbalance_ratio(const ClassHistogram& hist);

/// Draws hist[k] samples of every class uniformly without replacement.
/// Selected samples keep their relative order from `source`.
Dataset subsample_longtail(const Dataset& source, const ClassHistogram& hist, Rng& rng);

struct ShotThresholds {
  long many = 100;
  long few = 20;
};

/// Thresholds 100/20 scaled by n_max/500 (500 is the head count of the
/// CIFAR-100-LT profile the absolute thresholds were chosen for).
ShotThresholds scaled_shot_thresholds(long n_max);

struct ShotGroups {
  std::vector<int> many;
  std::vector<int> medium;
  std::vector<int> few;
};

/// many: n_k > many threshold; few: n_k < few threshold; medium: the rest.
ShotGroups shot_groups(const ClassHistogram& hist, ShotThresholds thresholds);
ShotGroups shot_groups(std::span<const long> counts, ShotThresholds thresholds);

/// Synthetic benchmark in which minority classes see only a few background
/// textures at training time while the test split shows every class on every
/// background.
struct ContextShiftSpec {
  int num_classes = 20;
  int side = 16;
  int channels = 3;
  int background_pool = 8;
  /// Distinct backgrounds each tail class sees in the training split.
  int tail_exposure = 1;
  /// Classes whose training count is at most this are tail classes.
  long tail_max_count = 20;
  /// Glyphs are glyph_cells x glyph_cells bitmaps upscaled by glyph_scale.
  int glyph_cells = 5;
  int glyph_scale = 2;
  int position_jitter = 2;
  double noise = 0.05;
  long test_per_class = 50;
};

struct ContextShiftData {
  Dataset train;
  Dataset test;
  std::vector<int> train_background;
  std::vector<int> test_background;
  /// Background ids each class may use in the training split.
  std::vector<std::vector<int>> train_background_sets;
};

void validate(const ContextShiftSpec& spec);

/// Bitmap for the glyph of class k (row-major, glyph_cells^2 entries).
std::vector<std::uint8_t> class_glyph(int k, int glyph_cells);

/// Background ids available to class k at training time.
std::vector<int> training_backgrounds(const ContextShiftSpec& spec, const ClassHistogram& hist, int k);

ContextShiftData synth_context_shift(const ContextShiftSpec& spec, const ClassHistogram& hist, Rng& rng);

/// Sidecar manifest listing background id, class and split per image.
void save_context_shift_manifest(const ContextShiftData& data, const std::filesystem::path& path);

/// Rounds pixels to the 8-bit grid used on disk.
Image quantize(Image img);

/// Binary dataset file: "CMO1", then C, N, W, H, Ch as little-endian u32,
/// then N records of (label u32, W*H*Ch bytes in pixel storage order).
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
/// Same bytes as save_dataset, in memory.
std::string serialize_dataset(const Dataset& ds);

}  // namespace cmo
