#include "cmo/data_corpus.hpp"

#include "binary_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cmo {

ClassHistogram build_longtail_profile(const LongTailSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("long-tail profile needs at least two classes");
  if (!(spec.rho >= 1.0) || !std::isfinite(spec.rho)) throw std::invalid_argument("imbalance ratio must be >= 1");
  if (spec.n_max < 1 || static_cast<double>(spec.n_max) < spec.rho)
    throw std::invalid_argument("n_max must be at least the imbalance ratio");
  std::vector<long> counts(static_cast<std::size_t>(spec.num_classes));
  const double last = spec.num_classes - 1;
  for (int k = 0; k < spec.num_classes; ++k) {
    const double n = static_cast<double>(spec.n_max) * std::pow(spec.rho, -k / last);
    counts[static_cast<std::size_t>(k)] = std::max(1L, std::lround(n));
  }
  counts.front() = spec.n_max;
  return ClassHistogram(std::move(counts));
}

double imbalance_ratio(const ClassHistogram& hist) {
  return static_cast<double>(hist.max_count()) / static_cast<double>(hist.min_count());
}

Dataset subsample_longtail(const Dataset& source, const ClassHistogram& hist, Rng& rng) {
  if (hist.num_classes() != source.num_classes())
    throw std::invalid_argument("histogram and source dataset disagree on the class count");
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(hist.total()));
  for (int k = 0; k < hist.num_classes(); ++k) {
    std::vector<std::size_t> pool = source.class_members(k);
    const auto want = static_cast<std::size_t>(hist.count(k));
    if (pool.size() < want)
      throw std::invalid_argument("source has " + std::to_string(pool.size()) + " samples of class " +
                                  std::to_string(k) + ", need " + std::to_string(want));
    // Partial Fisher-Yates: the first `want` slots become a uniform subset.
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<LabeledImage> images;
  images.reserve(chosen.size());
  for (std::size_t i : chosen) images.push_back(source[i]);
  return Dataset(std::move(images), source.num_classes());
}

ShotThresholds scaled_shot_thresholds(long n_max) {
  const double scale = static_cast<double>(n_max) / 500.0;
  ShotThresholds t;
  t.many = std::max(2L, std::lround(100.0 * scale));
  t.few = std::clamp(std::lround(20.0 * scale), 1L, t.many - 1);
  return t;
}

ShotGroups shot_groups(std::span<const long> counts, ShotThresholds thresholds) {
  if (thresholds.few >= thresholds.many)
    throw std::invalid_argument("few-shot threshold must be below the many-shot threshold");
  ShotGroups g;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const int cls = static_cast<int>(k);
    if (counts[k] > thresholds.many) {
      g.many.push_back(cls);
    } else if (counts[k] < thresholds.few) {
      g.few.push_back(cls);
    } else {
      g.medium.push_back(cls);
    }
  }
  return g;
}

ShotGroups shot_groups(const ClassHistogram& hist, ShotThresholds thresholds) {
  return shot_groups(hist.counts(), thresholds);
}

// ---------------------------------------------------------------------------
// Context-shift generator

void validate(const ContextShiftSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("context-shift benchmark needs at least two classes");
  if (spec.background_pool < 2) throw std::invalid_argument("background pool must hold at least two textures");
  if (spec.tail_exposure < 1 || spec.tail_exposure > spec.background_pool)
    throw std::invalid_argument("tail exposure must lie in [1, background pool]");
  if (spec.channels < 1 || spec.side < 1) throw std::invalid_argument("image side and channels must be positive");
  if (spec.glyph_cells < 2 || spec.glyph_scale < 1 ||
      spec.glyph_cells * spec.glyph_scale + 2 * spec.position_jitter > spec.side)
    throw std::invalid_argument("glyph with jitter does not fit in the image");
  if (spec.position_jitter < 0 || spec.noise < 0.0 || spec.test_per_class < 1)
    throw std::invalid_argument("invalid jitter, noise or test size");
}

namespace {

using Bitmap = std::vector<std::uint8_t>;

int hamming(const Bitmap& a, const Bitmap& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

std::vector<Bitmap> glyph_table(int count, int cells) {
  const int area = cells * cells;
  const int min_distance = std::max(2, area / 6);
  std::vector<Bitmap> table;
  std::uint64_t state = 0x243f6a8885a308d3ULL ^ static_cast<std::uint64_t>(cells);
  while (static_cast<int>(table.size()) < count) {
    Bitmap candidate(static_cast<std::size_t>(area));
    for (int i = 0; i < area; ++i) {
      state = mix64(state);
      candidate[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(state >> 63);
    }
    const int on = static_cast<int>(std::count(candidate.begin(), candidate.end(), 1));
    if (on < area / 3 || on > (2 * area) / 3) continue;
    bool distinct = true;
    for (const auto& g : table) distinct = distinct && hamming(g, candidate) >= min_distance;
    if (distinct) table.push_back(std::move(candidate));
  }
  return table;
}

struct Texture {
  int kind;  // 0 grating, 1 checkerboard, 2 rings
  double angle;
  double frequency;
  std::array<double, 3> low;
  std::array<double, 3> high;
};

Texture background_texture(int id, int pool) {
  std::uint64_t h = mix64(0x13198a2e03707344ULL + static_cast<std::uint64_t>(id));
  auto next = [&h] {
    h = mix64(h);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
  Texture t;
  t.kind = id % 3;
  t.angle = std::numbers::pi * (static_cast<double>(id) / pool + 0.1 * next());
  t.frequency = 0.5 + 0.9 * next();
  for (int c = 0; c < 3; ++c) {
    t.low[static_cast<std::size_t>(c)] = 0.05 + 0.25 * next();
    t.high[static_cast<std::size_t>(c)] = 0.35 + 0.3 * next();
  }
  return t;
}

double texture_level(const Texture& t, double x, double y, double phase) {
  const double u = std::cos(t.angle) * x + std::sin(t.angle) * y;
  const double v = -std::sin(t.angle) * x + std::cos(t.angle) * y;
  switch (t.kind) {
    case 0:
      return 0.5 + 0.5 * std::sin(t.frequency * u + phase);
    case 1: {
      const double period = 6.0 / t.frequency;
      const auto a = static_cast<long>(std::floor(u / period + phase));
      const auto b = static_cast<long>(std::floor(v / period));
      return ((a + b) & 1) ? 1.0 : 0.0;
    }
    default:
      return 0.5 + 0.5 * std::cos(t.frequency * std::hypot(u, v) + phase);
  }
}

Image render(const ContextShiftSpec& spec, const Bitmap& glyph, int background, Rng& rng) {
  const ImageShape shape{spec.side, spec.side, spec.channels};
  Image img(shape);
  const Texture tex = background_texture(background, spec.background_pool);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = rng.uniform(0.0, spec.side);
  const double cy = rng.uniform(0.0, spec.side);
  const int glyph_px = spec.glyph_cells * spec.glyph_scale;
  const int base = (spec.side - glyph_px) / 2;
  const int ox = base + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * spec.position_jitter + 1))) -
                 spec.position_jitter;
  const int oy = base + static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * spec.position_jitter + 1))) -
                 spec.position_jitter;
  const double ink = rng.uniform(0.8, 1.0);
  for (int y = 0; y < spec.side; ++y) {
    for (int x = 0; x < spec.side; ++x) {
      const int gx = (x - ox) / spec.glyph_scale;
      const int gy = (y - oy) / spec.glyph_scale;
      const bool on_glyph = x >= ox && y >= oy && gx < spec.glyph_cells && gy < spec.glyph_cells &&
                            glyph[static_cast<std::size_t>(gy * spec.glyph_cells + gx)] != 0;
      const double level = texture_level(tex, x - cx, y - cy, phase);
      for (int c = 0; c < spec.channels; ++c) {
        const auto cc = static_cast<std::size_t>(c % 3);
        double v = on_glyph ? ink : tex.low[cc] + (tex.high[cc] - tex.low[cc]) * level;
        v += spec.noise * rng.normal();
        img.at(x, y, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return quantize(std::move(img));
}

}  // namespace

std::vector<std::uint8_t> class_glyph(int k, int glyph_cells) {
  if (k < 0) throw std::invalid_argument("class index must be non-negative");
  return glyph_table(k + 1, glyph_cells).back();
}

std::vector<int> training_backgrounds(const ContextShiftSpec& spec, const ClassHistogram& hist, int k) {
  std::vector<int> ids;
  if (hist.count(k) > spec.tail_max_count) {
    for (int b = 0; b < spec.background_pool; ++b) ids.push_back(b);
    return ids;
  }
  for (int j = 0; j < spec.tail_exposure; ++j) ids.push_back((k + j) % spec.background_pool);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ContextShiftData synth_context_shift(const ContextShiftSpec& spec, const ClassHistogram& hist, Rng& rng) {
  validate(spec);
  if (hist.num_classes() != spec.num_classes)
    throw std::invalid_argument("histogram class count does not match the generator settings");
  const auto glyphs = glyph_table(spec.num_classes, spec.glyph_cells);

  ContextShiftData out;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  for (int k = 0; k < spec.num_classes; ++k) {
    out.train_background_sets.push_back(training_backgrounds(spec, hist, k));
    const auto& allowed = out.train_background_sets.back();
    for (long i = 0; i < hist.count(k); ++i) {
      const int b = allowed[static_cast<std::size_t>(rng.below(allowed.size()))];
      train.push_back({render(spec, glyphs[static_cast<std::size_t>(k)], b, rng), k});
      out.train_background.push_back(b);
    }
  }
  for (int k = 0; k < spec.num_classes; ++k) {
    for (long i = 0; i < spec.test_per_class; ++i) {
      const int b = static_cast<int>((i + k) % spec.background_pool);
      test.push_back({render(spec, glyphs[static_cast<std::size_t>(k)], b, rng), k});
      out.test_background.push_back(b);
    }
  }
  out.train = Dataset(std::move(train), spec.num_classes);
  out.test = Dataset(std::move(test), spec.num_classes);
  return out;
}

void save_context_shift_manifest(const ContextShiftData& data, const std::filesystem::path& path) {
  nlohmann::json images = nlohmann::json::array();
  auto add = [&images](const Dataset& ds, const std::vector<int>& backgrounds, const char* split) {
    for (std::size_t i = 0; i < ds.size(); ++i)
      images.push_back({{"index", i}, {"split", split}, {"class", ds.label(i)}, {"background", backgrounds[i]}});
  };
  add(data.train, data.train_background, "train");
  add(data.test, data.test_background, "test");
  nlohmann::json doc = {{"num_classes", data.train.num_classes()},
                        {"train_background_sets", data.train_background_sets},
                        {"images", std::move(images)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << doc.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Binary dataset files

namespace {
constexpr std::array<char, 4> kDatasetMagic{'C', 'M', 'O', '1'};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }
}  // namespace

Image quantize(Image img) {
  for (Index i = 0; i < img.pixels.size(); ++i) img.pixels[i] = to_byte(img.pixels[i]) / 255.0;
  return img;
}

namespace {
void write_dataset(std::ostream& out, const Dataset& ds) {
  out.write(kDatasetMagic.data(), kDatasetMagic.size());
  const ImageShape s = ds.shape();
  for (std::uint32_t v : {static_cast<std::uint32_t>(ds.num_classes()), static_cast<std::uint32_t>(ds.size()),
                          static_cast<std::uint32_t>(s.width), static_cast<std::uint32_t>(s.height),
                          static_cast<std::uint32_t>(s.channels)})
    detail::write_le(out, v);
  std::vector<char> record(static_cast<std::size_t>(s.size()));
  for (const auto& item : ds.images()) {
    detail::write_le(out, static_cast<std::uint32_t>(item.label));
    for (Index i = 0; i < item.image.pixels.size(); ++i)
      record[static_cast<std::size_t>(i)] = static_cast<char>(to_byte(item.image.pixels[i]));
    out.write(record.data(), static_cast<std::streamsize>(record.size()));
  }
}
}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(out, ds);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string serialize_dataset(const Dataset& ds) {
  std::ostringstream out(std::ios::binary);
  write_dataset(out, ds);
  return std::move(out).str();
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  detail::read_bytes(in, magic.data(), magic.size(), "magic");
  if (magic[0] != 'C' || magic[1] != 'M' || magic[2] != 'O') throw FormatError("not a dataset file (bad magic)");
  if (magic[3] != kDatasetMagic[3])
    throw FormatError(std::string("unsupported dataset format version '") + magic[3] + "'");
  const auto classes = detail::read_le<std::uint32_t>(in, "header");
  const auto count = detail::read_le<std::uint32_t>(in, "header");
  const ImageShape shape{static_cast<int>(detail::read_le<std::uint32_t>(in, "header")),
                         static_cast<int>(detail::read_le<std::uint32_t>(in, "header")),
                         static_cast<int>(detail::read_le<std::uint32_t>(in, "header"))};
  if (shape.width < 1 || shape.height < 1 || shape.channels < 1) throw FormatError("invalid image shape in header");
  std::vector<unsigned char> record(static_cast<std::size_t>(shape.size()));
  std::vector<LabeledImage> images;
  images.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto label = detail::read_le<std::uint32_t>(in, "record label");
    if (label >= classes) throw FormatError("record label out of range");
    detail::read_bytes(in, reinterpret_cast<char*>(record.data()), record.size(), "record pixels");
    ArrayXd px(shape.size());
    for (Index i = 0; i < px.size(); ++i) px[i] = record[static_cast<std::size_t>(i)] / 255.0;
    images.push_back({Image(shape, std::move(px)), static_cast<int>(label)});
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after last record");
  return Dataset(std::move(images), static_cast<int>(classes));
}

}  // namespace cmo
