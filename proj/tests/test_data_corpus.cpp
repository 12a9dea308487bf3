#include "cmo/data_corpus.hpp"

#include "doctest.h"
#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace cmo;

namespace {

Dataset toy_dataset(const std::vector<long>& counts, Rng& rng, ImageShape shape = {4, 3, 2}) {
  std::vector<LabeledImage> imgs;
  for (std::size_t k = 0; k < counts.size(); ++k)
    for (long i = 0; i < counts[k]; ++i) {
      Image img(shape);
      for (Index p = 0; p < img.pixels.size(); ++p) img.pixels[p] = std::round(rng.uniform() * 255.0) / 255.0;
      imgs.push_back({img, static_cast<int>(k)});
    }
  return Dataset(std::move(imgs), static_cast<int>(counts.size()));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cmo_test_" + name);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST_CASE("balanced profile") {
  const auto h = build_longtail_profile({10, 100, 1.0});
  for (int k = 0; k < 10; ++k) CHECK(h.count(k) == 100);
  CHECK(imbalance_ratio(h) == 1.0);
}

TEST_CASE("profile values") {
  // round(100 * 100^(-k/9)), evaluated independently.
  const std::vector<long> expect{100, 60, 36, 22, 13, 8, 5, 3, 2, 1};
  const auto h = build_longtail_profile({10, 100, 100.0});
  CHECK(std::vector<long>(h.counts().begin(), h.counts().end()) == expect);

  const auto big = build_longtail_profile({100, 500, 100.0});
  CHECK(big.count(0) == 500);
  CHECK(big.count(1) == 477);
  CHECK(big.count(99) == 5);
  CHECK(big.total() == 10899);
  CHECK(imbalance_ratio(big) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("profile rejects bad specs") {
  CHECK_THROWS_AS(build_longtail_profile({10, 100, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(build_longtail_profile({1, 100, 10.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_longtail_profile({10, 5, 10.0}), std::invalid_argument);
}

TEST_CASE("profile properties over a grid") {
  for (int c : {2, 3, 10, 37, 100})
    for (long n_max : {50L, 100L, 500L, 5000L})
      for (double rho : {1.0, 2.5, 10.0, 50.0, 100.0}) {
        if (static_cast<double>(n_max) < rho) continue;
        const auto h = build_longtail_profile({c, n_max, rho});
        CHECK(h.count(0) == n_max);
        for (int k = 1; k < c; ++k) CHECK(h.count(k) <= h.count(k - 1));
        const double n_min = static_cast<double>(h.min_count());
        CHECK(std::abs(imbalance_ratio(h) - rho) <= rho / n_min + 1e-12);
      }
}

TEST_CASE("imbalance ratio") {
  CHECK(imbalance_ratio(ClassHistogram({7, 7, 7})) == 1.0);
  CHECK(imbalance_ratio(ClassHistogram({500, 40, 1})) == 500.0);
}

TEST_CASE("histogram and dataset invariants") {
  CHECK_THROWS_AS(ClassHistogram({5}), std::invalid_argument);
  CHECK_THROWS_AS(ClassHistogram({5, 0}), std::invalid_argument);
  Image bad({2, 2, 1});
  bad.pixels[0] = 1.5;
  CHECK_THROWS_AS(Dataset({{bad, 0}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(Dataset({{Image({2, 2, 1}), 2}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(Dataset({{Image({2, 2, 1}), 0}, {Image({2, 3, 1}), 1}}, 2), std::invalid_argument);
}

TEST_CASE("subsample_longtail") {
  Rng rng(3);
  const Dataset src = toy_dataset({3, 3}, rng);

  SUBCASE("count check") {
    Rng r(1);
    const Dataset out = subsample_longtail(src, ClassHistogram({2, 1}), r);
    CHECK(out.class_counts() == std::vector<long>{2, 1});
  }
  SUBCASE("full histogram keeps every sample") {
    Rng r(1);
    const Dataset out = subsample_longtail(src, ClassHistogram({3, 3}), r);
    CHECK(out == src);
  }
  SUBCASE("determinism and seed sensitivity") {
    const Dataset big = toy_dataset({40, 40, 40}, rng);
    Rng a(5), b(5);
    CHECK(subsample_longtail(big, ClassHistogram({10, 5, 2}), a) ==
          subsample_longtail(big, ClassHistogram({10, 5, 2}), b));
    int distinct = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      Rng x(s), y(s + 100);
      distinct += !(subsample_longtail(big, ClassHistogram({10, 5, 2}), x) ==
                    subsample_longtail(big, ClassHistogram({10, 5, 2}), y));
    }
    CHECK(distinct == 10);
  }
  SUBCASE("selection is uniform within class") {
    std::vector<int> hits(3, 0);
    for (std::uint64_t s = 0; s < 3000; ++s) {
      Rng r(s);
      const Dataset out = subsample_longtail(src, ClassHistogram({1, 3}), r);
      for (std::size_t i = 0; i < 3; ++i)
        if (out[0].image == src[i].image) ++hits[i];
    }
    for (int h : hits) CHECK(std::abs(h - 1000) < 120);
  }
  SUBCASE("insufficient samples") {
    Rng r(1);
    CHECK_THROWS_AS(subsample_longtail(src, ClassHistogram({4, 1}), r), std::invalid_argument);
  }
}

TEST_CASE("shot groups") {
  SUBCASE("absolute thresholds") {
    const auto g = shot_groups(ClassHistogram({500, 50, 5}), {100, 20});
    CHECK(g.many == std::vector<int>{0});
    CHECK(g.medium == std::vector<int>{1});
    CHECK(g.few == std::vector<int>{2});
  }
  SUBCASE("all many") {
    const auto g = shot_groups(ClassHistogram({500, 200, 101}), {100, 20});
    CHECK(g.many.size() == 3);
    CHECK(g.medium.empty());
    CHECK(g.few.empty());
  }
  SUBCASE("scaled thresholds on the desk profile") {
    const auto h = build_longtail_profile({10, 100, 100.0});
    // Brute-force comparison over all classes.
    std::vector<int> many, medium, few;
    for (int k = 0; k < 10; ++k) {
      if (h.count(k) > 10) many.push_back(k);
      else if (h.count(k) < 3) few.push_back(k);
      else medium.push_back(k);
    }
    const auto g = shot_groups(h, {10, 3});
    CHECK(g.many == many);
    CHECK(g.medium == medium);
    CHECK(g.few == few);
    CHECK(g.many.size() == 5);
    CHECK(g.medium.size() == 3);
    CHECK(g.few.size() == 2);
  }
  SUBCASE("boundaries are exclusive") {
    const auto g = shot_groups(ClassHistogram({100, 20}), {100, 20});
    CHECK(g.medium == std::vector<int>{0, 1});
  }
  SUBCASE("inverted thresholds") {
    CHECK_THROWS_AS(shot_groups(ClassHistogram({5, 5}), {3, 10}), std::invalid_argument);
  }
  SUBCASE("scaled defaults") {
    CHECK(scaled_shot_thresholds(500).many == 100);
    CHECK(scaled_shot_thresholds(500).few == 20);
    CHECK(scaled_shot_thresholds(100).many == 20);
    CHECK(scaled_shot_thresholds(100).few == 4);
  }
}

TEST_CASE("shot groups partition random histograms") {
  Rng rng(8);
  for (int t = 0; t < 300; ++t) {
    std::vector<long> counts(2 + rng.below(30));
    for (auto& c : counts) c = 1 + static_cast<long>(rng.below(300));
    const long few = 1 + static_cast<long>(rng.below(50));
    const long many = few + 1 + static_cast<long>(rng.below(100));
    const auto g = shot_groups(counts, {many, few});
    std::multiset<int> all;
    all.insert(g.many.begin(), g.many.end());
    all.insert(g.medium.begin(), g.medium.end());
    all.insert(g.few.begin(), g.few.end());
    REQUIRE(all.size() == counts.size());
    for (int k = 0; k < static_cast<int>(counts.size()); ++k) CHECK(all.count(k) == 1);
  }
}

TEST_CASE("context-shift generator") {
  ContextShiftSpec spec;
  spec.num_classes = 20;
  const auto hist = build_longtail_profile({20, 100, 50.0});

  SUBCASE("tail classes see exactly their exposure set") {
    Rng rng(4);
    const auto data = synth_context_shift(spec, hist, rng);
    CHECK(data.train.class_counts() == std::vector<long>(hist.counts().begin(), hist.counts().end()));
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      const int k = data.train.label(i);
      const auto& allowed = data.train_background_sets[static_cast<std::size_t>(k)];
      CHECK(std::find(allowed.begin(), allowed.end(), data.train_background[i]) != allowed.end());
    }
    for (int k = 0; k < 20; ++k) {
      const auto& allowed = data.train_background_sets[static_cast<std::size_t>(k)];
      if (hist.count(k) <= spec.tail_max_count) {
        CHECK(allowed.size() == 1);
        std::set<int> seen;
        for (std::size_t i : data.train.class_members(k)) seen.insert(data.train_background[i]);
        CHECK(seen.size() == 1);
      } else {
        CHECK(allowed.size() == 8);
      }
    }
  }
  SUBCASE("test split is balanced over every background") {
    Rng rng(4);
    const auto data = synth_context_shift(spec, hist, rng);
    for (long c : data.test.class_counts()) CHECK(c == spec.test_per_class);
    for (int k = 0; k < 20; ++k) {
      std::vector<int> per_bg(8, 0);
      for (std::size_t i : data.test.class_members(k)) ++per_bg[static_cast<std::size_t>(data.test_background[i])];
      CHECK(*std::min_element(per_bg.begin(), per_bg.end()) >= 6);
    }
  }
  SUBCASE("full exposure removes the shift") {
    ContextShiftSpec s = spec;
    s.tail_exposure = s.background_pool;
    Rng rng(4);
    const auto data = synth_context_shift(s, hist, rng);
    for (int k = 0; k < 20; ++k) CHECK(data.train_background_sets[static_cast<std::size_t>(k)].size() == 8);
  }
  SUBCASE("deterministic") {
    Rng a(11), b(11), c(12);
    const auto d1 = synth_context_shift(spec, hist, a);
    const auto d2 = synth_context_shift(spec, hist, b);
    const auto d3 = synth_context_shift(spec, hist, c);
    CHECK(d1.train == d2.train);
    CHECK(d1.test == d2.test);
    CHECK(!(d1.train == d3.train));
  }
  SUBCASE("glyphs are distinct") {
    std::set<std::vector<std::uint8_t>> glyphs;
    for (int k = 0; k < 20; ++k) glyphs.insert(class_glyph(k, spec.glyph_cells));
    CHECK(glyphs.size() == 20);
  }
  SUBCASE("invalid specs") {
    ContextShiftSpec s = spec;
    s.background_pool = 1;
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
    s = spec;
    s.tail_exposure = s.background_pool + 1;
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
    s = spec;
    s.tail_exposure = 0;
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
    Rng rng(1);
    CHECK_THROWS_AS(synth_context_shift(spec, ClassHistogram({5, 5}), rng), std::invalid_argument);
  }
  SUBCASE("sidecar manifest") {
    Rng rng(4);
    ContextShiftSpec s = spec;
    s.test_per_class = 3;
    const auto data = synth_context_shift(s, hist, rng);
    const auto path = temp_file("sidecar.json");
    save_context_shift_manifest(data, path);
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    std::filesystem::remove(path);
    std::size_t n = 0;
    for (const auto& rec : j.at("images")) {
      CHECK(rec.contains("background"));
      CHECK(rec.contains("class"));
      CHECK(rec.contains("split"));
      ++n;
    }
    CHECK(n == data.train.size() + data.test.size());
  }
}

TEST_CASE("dataset files") {
  Rng rng(6);
  const Dataset ds = toy_dataset({3, 2, 1}, rng);
  const auto path = temp_file("ds.cmo");

  SUBCASE("round trip is exact") {
    save_dataset(ds, path);
    CHECK(load_dataset(path) == ds);
    CHECK(read_bytes(path) == serialize_dataset(ds));
  }
  SUBCASE("layout") {
    const std::string b = serialize_dataset(ds);
    CHECK(b.substr(0, 4) == "CMO1");
    CHECK(b.size() == 4 + 5 * 4 + ds.size() * (4 + 24));
    CHECK(static_cast<unsigned char>(b[4]) == 3);   // C
    CHECK(static_cast<unsigned char>(b[8]) == 6);   // N
    CHECK(static_cast<unsigned char>(b[12]) == 4);  // W
    CHECK(static_cast<unsigned char>(b[16]) == 3);  // H
    CHECK(static_cast<unsigned char>(b[20]) == 2);  // Ch
  }
  SUBCASE("truncated") {
    const std::string b = serialize_dataset(ds);
    write_bytes(path, b.substr(0, b.size() - 5));
    CHECK_THROWS_AS(load_dataset(path), FormatError);
    write_bytes(path, b.substr(0, 10));
    CHECK_THROWS_AS(load_dataset(path), FormatError);
  }
  SUBCASE("wrong magic") {
    std::string b = serialize_dataset(ds);
    b[0] = 'X';
    write_bytes(path, b);
    CHECK_THROWS_AS(load_dataset(path), FormatError);
  }
  SUBCASE("other format version") {
    std::string b = serialize_dataset(ds);
    b[3] = '2';
    write_bytes(path, b);
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("version"), FormatError);
  }
  SUBCASE("label out of range") {
    std::string b = serialize_dataset(ds);
    b[24] = 9;
    write_bytes(path, b);
    CHECK_THROWS_AS(load_dataset(path), FormatError);
  }
  SUBCASE("trailing bytes") {
    write_bytes(path, serialize_dataset(ds) + "x");
    CHECK_THROWS_AS(load_dataset(path), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS(load_dataset(temp_file("does_not_exist.cmo"))); }
  SUBCASE("generated data survives quantization") {
    ContextShiftSpec s;
    s.num_classes = 4;
    s.test_per_class = 2;
    Rng r(1);
    const auto data = synth_context_shift(s, ClassHistogram({10, 6, 3, 1}), r);
    save_dataset(data.train, path);
    CHECK(load_dataset(path) == data.train);
  }
  std::filesystem::remove(path);
}
