#include "cmo/evaluator.hpp"
#include "cmo/trainer.hpp"

#include "doctest.h"

#include <cmath>

using namespace cmo;

namespace {

ContextShiftData small_data(std::uint64_t seed = 3) {
  ContextShiftSpec s;
  s.num_classes = 4;
  s.side = 10;
  s.glyph_scale = 1;
  s.position_jitter = 1;
  s.background_pool = 3;
  s.tail_max_count = 5;
  s.test_per_class = 6;
  Rng rng(seed);
  return synth_context_shift(s, ClassHistogram({24, 12, 5, 3}), rng);
}

TrainConfig small_config(MixVariant v) {
  TrainConfig c;
  c.architecture = Architecture::tinyconv;
  c.hidden = {3, 4};
  c.epochs = 6;
  c.batch_size = 8;
  c.base_lr = 0.05;
  c.warmup_epochs = 1;
  c.decay_epochs = {4};
  c.decay_factor = 0.1;
  c.variant = v;
  c.cmo_off_last = 1;
  c.thresholds = {10, 4};
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.epochs = 200;
  c.base_lr = 0.1;
  c.warmup_epochs = 5;
  c.decay_epochs = {160, 180};
  c.decay_factor = 0.01;
  CHECK(lr_at(0, c) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(lr_at(4, c) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at(5, c) == 0.1);
  CHECK(lr_at(159, c) == 0.1);
  CHECK(std::abs(lr_at(170, c) - 1e-3) <= 1e-15);
  CHECK(std::abs(lr_at(190, c) - 1e-5) <= 1e-17);
  c.warmup_epochs = 0;
  CHECK(lr_at(0, c) == 0.1);
  c.decay_epochs.clear();
  CHECK(lr_at(199, c) == 0.1);
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(validate(c), ConfigError);
  };
  CHECK_NOTHROW(validate(TrainConfig{}));
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.warmup_epochs = 32; });
  bad([](TrainConfig& c) { c.decay_epochs = {36, 32}; });
  bad([](TrainConfig& c) { c.decay_epochs = {32, 40}; });
  bad([](TrainConfig& c) { c.momentum = 1.0; });
  bad([](TrainConfig& c) { c.alpha = 0.0; });
  bad([](TrainConfig& c) { c.cmo_off_last = 41; });
  bad([](TrainConfig& c) { c.drw_epoch = 40; });
  bad([](TrainConfig& c) { c.thresholds = {4, 20}; });
  bad([](TrainConfig& c) { c.q_strategy = WeightStrategy::power(-0.5); });
  bad([](TrainConfig& c) { c.hidden.clear(); });
  TrainConfig ok;
  ok.cmo_off_last = ok.epochs;
  CHECK_NOTHROW(validate(ok));
}

TEST_CASE("training is deterministic across runs and worker counts") {
  const auto data = small_data();
  for (auto v : {MixVariant::cmo, MixVariant::mixup_q, MixVariant::blur_oversample, MixVariant::jitter_oversample}) {
    TrainConfig c = small_config(v);
    const TrainResult a = train(c, data.train);
    const TrainResult b = train(c, data.train);
    c.workers = 3;
    const TrainResult d = train(c, data.train);
    CHECK(serialize_model(a.model) == serialize_model(b.model));
    CHECK(serialize_model(a.model) == serialize_model(d.model));
    for (std::size_t e = 0; e < a.history.epochs.size(); ++e) CHECK(a.history.epochs[e].loss == d.history.epochs[e].loss);
  }
  TrainConfig c = small_config(MixVariant::cmo);
  const TrainResult a = train(c, data.train);
  c.seed = 18;
  CHECK(serialize_model(a.model) != serialize_model(train(c, data.train).model));
}

TEST_CASE("history and mixing window") {
  const auto data = small_data();
  TrainConfig c = small_config(MixVariant::cmo);
  c.cmo_off_last = 2;
  const TrainResult r = train(c, data.train, &data.test);
  REQUIRE(r.history.epochs.size() == 6);
  for (int e = 0; e < 6; ++e) {
    const auto& rec = r.history.epochs[static_cast<std::size_t>(e)];
    CHECK(rec.epoch == e);
    CHECK(rec.mixing == (e < 4));
    CHECK(rec.lr == lr_at(e, c));
    CHECK(std::isfinite(rec.loss));
    REQUIRE(rec.eval_accuracy.has_value());
    CHECK(*rec.eval_accuracy >= 0.0);
  }
}

TEST_CASE("cmo_off_last = epochs is plain CE") {
  const auto data = small_data();
  TrainConfig cmo = small_config(MixVariant::cmo);
  cmo.cmo_off_last = cmo.epochs;
  TrainConfig ce = small_config(MixVariant::none);
  CHECK(serialize_model(train(cmo, data.train).model) == serialize_model(train(ce, data.train).model));
}

TEST_CASE("DRW switch") {
  const auto data = small_data();
  TrainConfig base = small_config(MixVariant::none);
  base.drw_epoch = 3;
  TrainConfig skewed = base;
  skewed.drw_weights_override = std::vector<double>{5.0, 0.1, 2.0, 0.3};
  TrainConfig ones = base;
  ones.drw_weights_override = std::vector<double>(4, 1.0);
  TrainConfig none = small_config(MixVariant::none);

  const auto hs = train(skewed, data.train).history.epochs;
  const auto ho = train(ones, data.train).history.epochs;
  const auto hn = train(none, data.train).history.epochs;
  for (int e = 0; e < 3; ++e) {
    CHECK(hs[static_cast<std::size_t>(e)].loss == ho[static_cast<std::size_t>(e)].loss);
    CHECK_FALSE(hs[static_cast<std::size_t>(e)].drw);
  }
  CHECK(hs[3].drw);
  CHECK(hs[3].loss != ho[3].loss);
  // Unit weights after the switch are the same as no re-weighting.
  for (std::size_t e = 0; e < hn.size(); ++e) CHECK(ho[e].loss == hn[e].loss);

  SUBCASE("default weights come from the effective number") {
    const auto hd = train(base, data.train).history.epochs;
    TrainConfig explicit_w = base;
    const auto w = drw_class_weights(data.train.histogram()).weights;
    explicit_w.drw_weights_override = std::vector<double>(w.data(), w.data() + w.size());
    const auto he = train(explicit_w, data.train).history.epochs;
    for (std::size_t e = 0; e < hd.size(); ++e) CHECK(hd[e].loss == he[e].loss);
  }
  SUBCASE("override must match the class count") {
    TrainConfig c = base;
    c.drw_weights_override = std::vector<double>{1.0, 2.0};
    CHECK_THROWS_AS(train(c, data.train), ConfigError);
  }
}

TEST_CASE("plain CE fits a separable balanced toy set") {
  // Four classes, each a bright pixel at its own position.
  std::vector<LabeledImage> imgs;
  Rng rng(5);
  const ImageShape s{4, 1, 1};
  for (int i = 0; i < 80; ++i) {
    const int k = i % 4;
    Image img(s);
    for (int x = 0; x < 4; ++x) img.at(x, 0, 0) = 0.1 * rng.uniform();
    img.at(k, 0, 0) = 0.9 + 0.1 * rng.uniform();
    imgs.push_back({img, k});
  }
  const Dataset ds(std::move(imgs), 4);
  TrainConfig c;
  c.architecture = Architecture::linear;
  c.hidden.clear();
  c.variant = MixVariant::none;
  c.epochs = 60;
  c.batch_size = 8;
  c.base_lr = 0.5;
  c.warmup_epochs = 0;
  c.decay_epochs.clear();
  c.weight_decay = 0.0;
  const TrainResult r = train(c, ds);
  CHECK(r.history.epochs.back().loss < 0.1 * std::log(4.0));
  CHECK(accuracy(r.model, ds) == 1.0);
}

TEST_CASE("ROS trains on a balanced copy") {
  const auto data = small_data();
  TrainConfig c = small_config(MixVariant::none);
  c.ros = true;
  c.epochs = 2;
  c.warmup_epochs = 0;
  c.decay_epochs.clear();
  const TrainResult a = train(c, data.train);
  const TrainResult b = train(c, data.train);
  CHECK(serialize_model(a.model) == serialize_model(b.model));
  c.ros = false;
  CHECK(serialize_model(a.model) != serialize_model(train(c, data.train).model));
}

TEST_CASE("every variant trains to finite parameters") {
  const auto data = small_data();
  for (auto v : {MixVariant::none, MixVariant::cmo, MixVariant::cmo_back, MixVariant::cmo_minor, MixVariant::cutmix_plain,
                 MixVariant::mixup_q, MixVariant::blur_oversample, MixVariant::jitter_oversample}) {
    TrainConfig c = small_config(v);
    c.per_image_region = v == MixVariant::cmo_minor;
    const TrainResult r = train(c, data.train);
    INFO(to_string(v));
    CHECK(r.model.params().allFinite());
  }
}

TEST_CASE("divergence is reported with context") {
  const auto data = small_data();
  TrainConfig c = small_config(MixVariant::none);
  c.base_lr = 1e200;
  c.warmup_epochs = 0;
  CHECK_THROWS_WITH_AS(train(c, data.train), doctest::Contains("epoch"), NumericError);
}

TEST_CASE("minority mask") {
  const auto data = small_data();
  const auto m = minority_mask(data.train, {10, 4});
  CHECK(m == std::vector<bool>{false, false, true, true});
}
