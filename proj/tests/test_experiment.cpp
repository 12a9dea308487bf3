#include "cmo/experiment.hpp"

#include "doctest.h"

#include <chrono>
#include <cmath>
#include <fstream>

using namespace cmo;
using nlohmann::json;

namespace {

const char* kTinyConfig = R"(output_dir = "unused"
seeds = [1, 2]

[dataset]
kind = "context_shift"
seed = 3
num_classes = 3
n_max = 12
rho = 4.0
side = 10
glyph_scale = 1
position_jitter = 1
background_pool = 3
test_per_class = 4

[defaults]
hidden = [2, 2]
epochs = 2
batch_size = 8
warmup_epochs = 0
decay_epochs = []
cmo_off_last = 1

[[methods]]
name = "CE"
variant = "none"

[[methods]]
name = "CMO"
variant = "cmo"
)";

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("cmo_test_" + name + "_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  std::filesystem::create_directories(dir);
  return dir;
}

std::string config_error(const std::string& text) {
  try {
    parse_experiment_config(text, "exp.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

CellRecord record(const std::string& method, std::uint64_t seed, double overall, double few) {
  CellRecord r;
  r.method = method;
  r.seed = seed;
  r.ok = true;
  r.metrics = {{"overall_acc", overall}, {"many_acc", 1.0},         {"medium_acc", nullptr},
               {"few_acc", few},         {"mean_max_confidence", 0.5}, {"ece", 0.1}};
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_experiment_config(kTinyConfig, "exp.toml");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
  REQUIRE(cfg.methods.size() == 2);
  CHECK(cfg.methods[0].name == "CE");
  CHECK(cfg.methods[0].config.variant == MixVariant::none);
  CHECK(cfg.methods[1].config.variant == MixVariant::cmo);
  CHECK(cfg.methods[1].config.epochs == 2);
  CHECK(cfg.methods[1].config.decay_epochs.empty());
  CHECK(cfg.methods[1].config.momentum == 0.9);
  CHECK(cfg.dataset.profile.num_classes == 3);
  CHECK(cfg.dataset.generator.side == 10);
  // Shot thresholds scale with n_max when not given.
  CHECK(cfg.methods[0].config.thresholds.many == scaled_shot_thresholds(12).many);
  CHECK_FALSE(cfg.methods[0].thresholds_explicit);
}

TEST_CASE("config errors name the field and line") {
  std::string text = kTinyConfig;
  SUBCASE("unknown method setting") {
    text += "bogus_setting = 3\n";
    const auto msg = config_error(text);
    CHECK(msg.find("exp.toml:31") != std::string::npos);
    CHECK(msg.find("bogus_setting") != std::string::npos);
  }
  SUBCASE("wrong type") {
    text += "epochs = \"ten\"\n";
    const auto msg = config_error(text);
    CHECK(msg.find("exp.toml:31") != std::string::npos);
    CHECK(msg.find("methods.CMO.epochs") != std::string::npos);
  }
  SUBCASE("unknown variant") {
    const auto pos = text.find("variant = \"cmo\"");
    text.replace(pos, 15, "variant = \"cmx\"");
    const auto msg = config_error(text);
    CHECK(msg.find("exp.toml:30") != std::string::npos);
    CHECK(msg.find("cmx") != std::string::npos);
  }
  SUBCASE("dataset key") {
    const auto pos = text.find("rho = 4.0");
    text.replace(pos, 9, "rho = 0.5");
    const auto msg = config_error(text);
    CHECK(msg.find("dataset") != std::string::npos);
    CHECK(msg.find("ratio") != std::string::npos);
  }
  SUBCASE("inconsistent schedule") {
    text += "decay_epochs = [5]\n";
    CHECK(config_error(text).find("decay") != std::string::npos);
  }
  SUBCASE("duplicate names") {
    text += "\n[[methods]]\nname = \"CE\"\n";
    CHECK(config_error(text).find("duplicate") != std::string::npos);
  }
  SUBCASE("missing seeds") {
    text.replace(text.find("seeds = [1, 2]"), 14, "");
    CHECK(config_error(text).find("seeds") != std::string::npos);
  }
  SUBCASE("syntax error") {
    text += "this is not toml\n";
    CHECK(config_error(text).find("exp.toml:31") != std::string::npos);
  }
  SUBCASE("exposure larger than the pool") {
    text.replace(text.find("background_pool = 3"), 19, "background_pool = 3\ntail_exposure = 4");
    CHECK(config_error(text).find("exposure") != std::string::npos);
  }
}

TEST_CASE("drw flag resolves to 80 percent of the epochs") {
  const auto c = train_config_from_json({{"epochs", 50}, {"drw", true}});
  REQUIRE(c.drw_epoch.has_value());
  CHECK(*c.drw_epoch == 40);
  CHECK_FALSE(train_config_from_json({{"epochs", 50}}).drw_epoch.has_value());
  CHECK(*train_config_from_json({{"epochs", 50}, {"drw", true}, {"drw_epoch", 7}}).drw_epoch == 7);
}

TEST_CASE("resolved config round-trips and lists every setting") {
  TrainConfig c;
  c.variant = MixVariant::mixup_q;
  c.q_strategy = WeightStrategy::effective();
  c.drw_epoch = 30;
  c.blur.kernel_sizes = {3};
  c.seed = 99;
  const json j = to_json(c);
  CHECK(j.size() == 27);
  for (const auto& [key, value] : j.items()) CHECK_FALSE(key.empty());
  const TrainConfig back = train_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(to_json(TrainConfig{}).contains("cmo_off_last"));
  CHECK(to_json(TrainConfig{})["drw_epoch"].is_null());
}

TEST_CASE("git blob hash") {
  // `printf 'hello\n' | git hash-object --stdin`
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("report arithmetic") {
  ResultsManifest m;
  m.experiment = {{"methods", {"A", "B"}}};
  m.records = {record("A", 1, 0.4, 0.2), record("A", 2, 0.5, 0.3), record("B", 1, 0.7, 0.6), record("B", 2, 0.7, 0.6)};
  const ReportTable t = report(m);
  CHECK(t.baseline == "A");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].runs == 2);
  CHECK(std::abs(t.rows[0].mean[0] - 0.45) <= 1e-12);
  // sqrt(((0.4 - 0.45)^2 + (0.5 - 0.45)^2) / (2 - 1)) = sqrt(0.005)
  CHECK(std::abs(t.rows[0].stddev[0] - 0.070710678118654752) <= 1e-12);
  CHECK(t.rows[0].delta[0] == 0.0);
  CHECK(std::abs(t.rows[1].delta[0] - 0.25) <= 1e-12);
  CHECK(t.rows[1].stddev[0] == 0.0);
  CHECK(std::isnan(t.rows[0].mean[2]));

  SUBCASE("single seed has zero spread") {
    ResultsManifest one;
    one.records = {record("A", 1, 0.4, 0.2)};
    const auto r = report(one);
    CHECK(r.rows[0].stddev[0] == 0.0);
    CHECK(r.rows[0].delta[0] == 0.0);
  }
  SUBCASE("failed cells are excluded") {
    ResultsManifest f = m;
    CellRecord bad;
    bad.method = "A";
    bad.seed = 3;
    bad.error = "boom";
    f.records.push_back(bad);
    CHECK(report(f).rows[0].runs == 2);
    CHECK(report(f).rows[0].mean[0] == t.rows[0].mean[0]);
  }
  SUBCASE("rendering") {
    const std::string csv = render_csv(t);
    CHECK(csv.find("overall_acc_delta_vs_A") != std::string::npos);
    CHECK(csv.find("A,2,0.450000,0.070711,0.000000") != std::string::npos);
    const std::string txt = render_text(t);
    CHECK(txt.find("baseline 'A'") != std::string::npos);
    CHECK(txt.find("45.00 +- 7.07") != std::string::npos);
    CHECK(txt.find("(+25.00)") != std::string::npos);
  }
  SUBCASE("manifest round trip") {
    const auto dir = fresh_dir("manifest");
    save_manifest(m, dir / "manifest.json");
    const ResultsManifest back = load_manifest(dir / "manifest.json");
    CHECK(render_csv(report(back)) == render_csv(t));
    CHECK(render_text(report(back)) == render_text(t));
    CHECK(to_json(back) == to_json(m));
    CHECK_FALSE(std::filesystem::exists(dir / "manifest.json.tmp"));
    std::filesystem::remove_all(dir);
  }
  SUBCASE("not a manifest") {
    CHECK_THROWS_AS(manifest_from_json(json{{"format", "other"}}), FormatError);
  }
}

TEST_CASE("running a grid") {
  const auto cfg = parse_experiment_config(kTinyConfig, "exp.toml");
  const auto dir = fresh_dir("run");
  RunOptions opts;
  opts.output_dir = dir / "a";
  const RunOutcome first = run_experiment(cfg, opts);
  CHECK(first.trained == 4);
  CHECK(first.failed == 0);
  CHECK(first.manifest.records.size() == 4);
  CHECK(std::filesystem::exists(dir / "a" / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "a" / "checkpoints" / "CMO_seed2.cmom"));
  for (const auto& r : first.manifest.records) {
    CHECK(r.ok);
    // Every default is written out.
    CHECK(r.config.size() == to_json(TrainConfig{}).size());
    CHECK(r.config["momentum"] == 0.9);
    CHECK(r.metrics.contains("few_acc"));
    CHECK(r.history["epochs"] == 2);
  }
  CHECK(first.manifest.experiment.contains("dataset_hash"));

  SUBCASE("resume skips finished cells") {
    opts.resume = true;
    const RunOutcome again = run_experiment(cfg, opts);
    CHECK(again.trained == 0);
    CHECK(again.skipped == 4);
    CHECK(to_json(again.manifest) == to_json(first.manifest));
    std::ifstream in(dir / "a" / "manifest.json");
    CHECK(manifest_from_json(json::parse(in)).records.size() == 4);
  }
  SUBCASE("resume retrains changed cells only") {
    auto changed = cfg;
    changed.methods[1].config.epochs = 3;
    opts.resume = true;
    const RunOutcome r = run_experiment(changed, opts);
    CHECK(r.trained == 2);
    CHECK(r.skipped == 2);
  }
  SUBCASE("a second run gives identical metrics, also with parallel cells") {
    RunOptions other;
    other.output_dir = dir / "b";
    other.jobs = 3;
    other.workers = 2;
    const RunOutcome second = run_experiment(cfg, other);
    REQUIRE(second.manifest.records.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(second.manifest.records[i].metrics.dump() == first.manifest.records[i].metrics.dump());
      CHECK(second.manifest.records[i].cell_hash == first.manifest.records[i].cell_hash);
    }
  }
  SUBCASE("failing cells are recorded without stopping the grid") {
    auto broken = cfg;
    broken.methods[1].config.base_lr = 1e200;
    RunOptions o;
    o.output_dir = dir / "c";
    const RunOutcome r = run_experiment(broken, o);
    CHECK(r.failed == 2);
    CHECK(r.trained == 2);
    for (const auto& rec : r.manifest.records)
      if (rec.method == "CMO") CHECK(rec.error.find("epoch") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment data on disk") {
  const auto cfg = parse_experiment_config(kTinyConfig, "exp.toml");
  const auto data = build_experiment_data(cfg.dataset);
  const auto dir = fresh_dir("data");
  write_experiment_data(data, dir);
  CHECK(load_dataset(dir / "train.cmo") == data.train);
  CHECK(load_dataset(dir / "test.cmo") == data.test);
  CHECK(std::filesystem::exists(dir / "backgrounds.json"));

  SUBCASE("files dataset reads them back") {
    std::ofstream(dir / "files.toml") << "seeds = [0]\n[dataset]\nkind = \"files\"\ntrain_path = \"train.cmo\"\n"
                                         "test_path = \"test.cmo\"\n[[methods]]\nname = \"CE\"\nvariant = \"none\"\n";
    const auto fcfg = load_experiment_config(dir / "files.toml");
    const auto fdata = build_experiment_data(fcfg.dataset);
    CHECK(fdata.train == data.train);
    CHECK(fdata.test == data.test);
  }
  SUBCASE("longtail kind follows the profile") {
    std::string text = kTinyConfig;
    text.replace(text.find("kind = \"context_shift\""), 22, "kind = \"longtail\"");
    const auto lt = build_experiment_data(parse_experiment_config(text, "exp.toml").dataset);
    const auto h = build_longtail_profile({3, 12, 4.0});
    CHECK(lt.train.class_counts() == std::vector<long>(h.counts().begin(), h.counts().end()));
    for (long c : lt.test.class_counts()) CHECK(c == 4);
  }
  std::filesystem::remove_all(dir);
}
