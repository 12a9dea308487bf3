#include "cmo/experiment.hpp"

#include "toml.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace cmo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Train config <-> JSON

namespace {

/// Config error attributed to one field; the TOML layer adds the line.
class FieldError : public ConfigError {
 public:
  FieldError(std::string field, const std::string& msg)
      : ConfigError("field '" + field + "': " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

template <typename T>
T field_as(const json& j, const std::string& key, const char* expected) {
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!j.is_number()) throw FieldError(key, std::string("expected ") + expected);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw FieldError(key, std::string("expected ") + expected);
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw FieldError(key, std::string("expected ") + expected);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw FieldError(key, std::string("expected ") + expected);
    }
    return j.get<T>();
  } catch (const json::exception&) {
    throw FieldError(key, std::string("expected ") + expected);
  }
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys{
      "architecture", "hidden",        "epochs",          "batch_size",        "base_lr",
      "warmup_epochs", "decay_epochs", "decay_factor",    "momentum",          "weight_decay",
      "alpha",        "variant",       "q_strategy",      "q_r",               "ros",
      "drw",          "drw_epoch",     "drw_weights_override", "cmo_off_last", "per_image_region",
      "blur_kernel_sizes", "blur_sigma_min", "blur_sigma_max", "jitter_brightness", "jitter_hue",
      "many_threshold", "few_threshold", "seed"};
  return keys;
}

TrainConfig apply_overrides(TrainConfig c, const json& delta) {
  if (!delta.is_object()) throw ConfigError("train settings must be a table");
  for (const auto& [key, value] : delta.items()) {
    if (!train_keys().contains(key)) throw FieldError(key, "unknown training setting");
    try {
      if (key == "architecture") c.architecture = parse_architecture(field_as<std::string>(value, key, "a string"));
      else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
      else if (key == "epochs") c.epochs = field_as<int>(value, key, "an integer");
      else if (key == "batch_size") c.batch_size = field_as<int>(value, key, "an integer");
      else if (key == "base_lr") c.base_lr = field_as<double>(value, key, "a number");
      else if (key == "warmup_epochs") c.warmup_epochs = field_as<int>(value, key, "an integer");
      else if (key == "decay_epochs") c.decay_epochs = value.get<std::vector<int>>();
      else if (key == "decay_factor") c.decay_factor = field_as<double>(value, key, "a number");
      else if (key == "momentum") c.momentum = field_as<double>(value, key, "a number");
      else if (key == "weight_decay") c.weight_decay = field_as<double>(value, key, "a number");
      else if (key == "alpha") c.alpha = field_as<double>(value, key, "a number");
      else if (key == "variant") c.variant = parse_mix_variant(field_as<std::string>(value, key, "a string"));
      else if (key == "q_strategy") {
        const auto s = field_as<std::string>(value, key, "a string");
        if (s == "power") c.q_strategy.kind = WeightStrategy::Kind::power;
        else if (s == "effective_number") c.q_strategy.kind = WeightStrategy::Kind::effective_number;
        else throw FieldError(key, "expected \"power\" or \"effective_number\"");
      } else if (key == "q_r") c.q_strategy.r = field_as<double>(value, key, "a number");
      else if (key == "ros") c.ros = field_as<bool>(value, key, "true or false");
      else if (key == "drw") {
        // Resolved after all overrides, once the epoch count is final.
      } else if (key == "drw_epoch") {
        if (value.is_null()) c.drw_epoch.reset();
        else c.drw_epoch = field_as<int>(value, key, "an integer");
      } else if (key == "drw_weights_override") {
        if (value.is_null()) c.drw_weights_override.reset();
        else c.drw_weights_override = value.get<std::vector<double>>();
      } else if (key == "cmo_off_last") c.cmo_off_last = field_as<int>(value, key, "an integer");
      else if (key == "per_image_region") c.per_image_region = field_as<bool>(value, key, "true or false");
      else if (key == "blur_kernel_sizes") c.blur.kernel_sizes = value.get<std::vector<int>>();
      else if (key == "blur_sigma_min") c.blur.sigma_min = field_as<double>(value, key, "a number");
      else if (key == "blur_sigma_max") c.blur.sigma_max = field_as<double>(value, key, "a number");
      else if (key == "jitter_brightness") c.jitter.brightness = field_as<double>(value, key, "a number");
      else if (key == "jitter_hue") c.jitter.hue = field_as<double>(value, key, "a number");
      else if (key == "many_threshold") c.thresholds.many = field_as<long>(value, key, "an integer");
      else if (key == "few_threshold") c.thresholds.few = field_as<long>(value, key, "an integer");
      else if (key == "seed") c.seed = field_as<std::uint64_t>(value, key, "a non-negative integer");
    } catch (const FieldError&) {
      throw;
    } catch (const json::exception&) {
      throw FieldError(key, "value has the wrong type");
    } catch (const std::invalid_argument& e) {
      throw FieldError(key, e.what());
    }
  }
  if (delta.contains("drw") && field_as<bool>(delta["drw"], "drw", "true or false") && !delta.contains("drw_epoch"))
    c.drw_epoch = static_cast<int>(std::floor(0.8 * c.epochs));
  if (delta.contains("drw") && !delta["drw"].get<bool>()) c.drw_epoch.reset();
  return c;
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"architecture", std::string(to_string(c.architecture))},
          {"hidden", c.hidden},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"warmup_epochs", c.warmup_epochs},
          {"decay_epochs", c.decay_epochs},
          {"decay_factor", c.decay_factor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"alpha", c.alpha},
          {"variant", std::string(to_string(c.variant))},
          {"q_strategy", c.q_strategy.kind == WeightStrategy::Kind::power ? "power" : "effective_number"},
          {"q_r", c.q_strategy.r},
          {"ros", c.ros},
          {"drw_epoch", c.drw_epoch ? json(*c.drw_epoch) : json(nullptr)},
          {"drw_weights_override", c.drw_weights_override ? json(*c.drw_weights_override) : json(nullptr)},
          {"cmo_off_last", c.cmo_off_last},
          {"per_image_region", c.per_image_region},
          {"blur_kernel_sizes", c.blur.kernel_sizes},
          {"blur_sigma_min", c.blur.sigma_min},
          {"blur_sigma_max", c.blur.sigma_max},
          {"jitter_brightness", c.jitter.brightness},
          {"jitter_hue", c.jitter.hue},
          {"many_threshold", c.thresholds.many},
          {"few_threshold", c.thresholds.few},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) { return apply_overrides(TrainConfig{}, j); }

json to_json(const DatasetBlock& d) {
  const char* kind = d.kind == DatasetBlock::Kind::context_shift ? "context_shift"
                     : d.kind == DatasetBlock::Kind::longtail    ? "longtail"
                                                                 : "files";
  json j = {{"kind", kind}, {"seed", d.seed}};
  if (d.kind == DatasetBlock::Kind::files) {
    j["train_path"] = d.train_path.string();
    j["test_path"] = d.test_path.string();
    return j;
  }
  const ContextShiftSpec& g = d.generator;
  j.update({{"num_classes", d.profile.num_classes},
            {"n_max", d.profile.n_max},
            {"rho", d.profile.rho},
            {"profile", "exponential"},
            {"side", g.side},
            {"channels", g.channels},
            {"background_pool", g.background_pool},
            {"tail_exposure", g.tail_exposure},
            {"tail_max_count", g.tail_max_count},
            {"glyph_cells", g.glyph_cells},
            {"glyph_scale", g.glyph_scale},
            {"position_jitter", g.position_jitter},
            {"noise", g.noise},
            {"test_per_class", g.test_per_class}});
  return j;
}

json to_json(const TrainHistory& h) {
  json loss = json::array(), lr = json::array(), mixing = json::array(), eval = json::array();
  for (const auto& e : h.epochs) {
    loss.push_back(e.loss);
    lr.push_back(e.lr);
    mixing.push_back(e.mixing);
    eval.push_back(e.eval_accuracy ? json(*e.eval_accuracy) : json(nullptr));
  }
  json j = {{"epochs", h.epochs.size()}, {"loss", loss}, {"lr", lr}, {"mixing", mixing}};
  if (!h.epochs.empty()) {
    j["final_loss"] = h.epochs.back().loss;
    if (h.epochs.back().eval_accuracy) j["eval_accuracy"] = eval;
  }
  return j;
}

// ---------------------------------------------------------------------------
// TOML parsing

namespace {

json toml_to_json(const toml::node& node) {
  if (auto v = node.as_integer()) return v->get();
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_boolean()) return v->get();
  if (auto v = node.as_string()) return v->get();
  if (auto a = node.as_array()) {
    json out = json::array();
    for (const auto& el : *a) out.push_back(toml_to_json(el));
    return out;
  }
  if (auto t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  throw ConfigError("unsupported TOML value type");
}

struct TomlContext {
  std::string source;

  [[noreturn]] void fail(const toml::node* node, const std::string& field, const std::string& msg) const {
    std::ostringstream s;
    s << source;
    if (node) s << ':' << node->source().begin.line;
    s << ": " << field << ": " << msg;
    throw ConfigError(s.str());
  }

  // Runs `fn`; FieldErrors are rethrown with the line of the field in `table`.
  template <typename Fn>
  auto attributed(const toml::table& table, const std::string& prefix, Fn&& fn) const {
    try {
      return fn();
    } catch (const FieldError& e) {
      const toml::node* node = table.get(e.field());
      fail(node ? node : &table, prefix + e.field(), std::string(e.what()).substr(e.field().size() + 10));
    }
  }
};

template <typename T>
T toml_get(const toml::table& t, const std::string& key, T fallback, const TomlContext& ctx, const std::string& prefix) {
  const toml::node* node = t.get(key);
  if (!node) return fallback;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) return *v;
    ctx.fail(node, prefix + key, "expected a number");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->as_boolean()) return v->get();
    ctx.fail(node, prefix + key, "expected true or false");
  } else if constexpr (std::is_integral_v<T>) {
    if (auto v = node->as_integer()) {
      if constexpr (std::is_unsigned_v<T>) {
        if (v->get() < 0) ctx.fail(node, prefix + key, "expected a non-negative integer");
      }
      return static_cast<T>(v->get());
    }
    ctx.fail(node, prefix + key, "expected an integer");
  } else {
    if (auto v = node->value<std::string>()) return *v;
    ctx.fail(node, prefix + key, "expected a string");
  }
}

void check_keys(const toml::table& t, const std::set<std::string>& allowed, const TomlContext& ctx,
                const std::string& prefix) {
  for (const auto& [k, v] : t) {
    const std::string key(k.str());
    if (!allowed.contains(key)) ctx.fail(&v, prefix + key, "unknown setting");
  }
}

DatasetBlock parse_dataset(const toml::table& t, const TomlContext& ctx, const std::filesystem::path& base_dir) {
  static const std::set<std::string> keys{"kind",          "seed",        "num_classes",    "n_max",
                                          "rho",           "profile",     "side",           "channels",
                                          "background_pool", "tail_exposure", "tail_max_count", "glyph_cells",
                                          "glyph_scale",   "position_jitter", "noise",      "test_per_class",
                                          "train_path",    "test_path"};
  check_keys(t, keys, ctx, "dataset.");
  const std::string p = "dataset.";
  DatasetBlock d;
  const auto kind = toml_get<std::string>(t, "kind", "context_shift", ctx, p);
  if (kind == "context_shift") d.kind = DatasetBlock::Kind::context_shift;
  else if (kind == "longtail") d.kind = DatasetBlock::Kind::longtail;
  else if (kind == "files") d.kind = DatasetBlock::Kind::files;
  else ctx.fail(t.get("kind"), p + "kind", "expected context_shift, longtail or files");
  d.seed = toml_get<std::uint64_t>(t, "seed", 0, ctx, p);
  if (d.kind == DatasetBlock::Kind::files) {
    const auto train = toml_get<std::string>(t, "train_path", "", ctx, p);
    const auto test = toml_get<std::string>(t, "test_path", "", ctx, p);
    if (train.empty() || test.empty()) ctx.fail(&t, p + "train_path", "files datasets need train_path and test_path");
    d.train_path = std::filesystem::path(train).is_absolute() ? std::filesystem::path(train) : base_dir / train;
    d.test_path = std::filesystem::path(test).is_absolute() ? std::filesystem::path(test) : base_dir / test;
    return d;
  }
  d.profile.num_classes = toml_get<int>(t, "num_classes", d.profile.num_classes, ctx, p);
  d.profile.n_max = toml_get<long>(t, "n_max", d.profile.n_max, ctx, p);
  d.profile.rho = toml_get<double>(t, "rho", d.profile.rho, ctx, p);
  if (toml_get<std::string>(t, "profile", "exponential", ctx, p) != "exponential")
    ctx.fail(t.get("profile"), p + "profile", "only the exponential profile is supported");
  ContextShiftSpec& g = d.generator;
  g.num_classes = d.profile.num_classes;
  g.side = toml_get<int>(t, "side", g.side, ctx, p);
  g.channels = toml_get<int>(t, "channels", g.channels, ctx, p);
  g.background_pool = toml_get<int>(t, "background_pool", g.background_pool, ctx, p);
  g.tail_exposure = toml_get<int>(t, "tail_exposure", g.tail_exposure, ctx, p);
  g.tail_max_count = toml_get<long>(t, "tail_max_count", scaled_shot_thresholds(d.profile.n_max).many, ctx, p);
  g.glyph_cells = toml_get<int>(t, "glyph_cells", g.glyph_cells, ctx, p);
  g.glyph_scale = toml_get<int>(t, "glyph_scale", g.glyph_scale, ctx, p);
  g.position_jitter = toml_get<int>(t, "position_jitter", g.position_jitter, ctx, p);
  g.noise = toml_get<double>(t, "noise", g.noise, ctx, p);
  g.test_per_class = toml_get<long>(t, "test_per_class", g.test_per_class, ctx, p);
  try {
    build_longtail_profile(d.profile);
    validate(g);
  } catch (const std::invalid_argument& e) {
    ctx.fail(&t, "dataset", e.what());
  }
  return d;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view text, const std::string& source_name) {
  const TomlContext ctx{source_name};
  toml::table root;
  try {
    root = toml::parse(text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream s;
    s << source_name << ':' << e.source().begin.line << ": TOML syntax error: " << e.description();
    throw ConfigError(s.str());
  }
  check_keys(root, {"output_dir", "seeds", "ece_bins", "save_checkpoints", "dataset", "defaults", "methods"}, ctx, "");

  ExperimentConfig cfg;
  const std::filesystem::path base_dir = std::filesystem::path(source_name).parent_path();
  cfg.output_dir = toml_get<std::string>(root, "output_dir", cfg.output_dir.string(), ctx, "");
  cfg.ece_bins = toml_get<int>(root, "ece_bins", cfg.ece_bins, ctx, "");
  if (cfg.ece_bins < 1) ctx.fail(root.get("ece_bins"), "ece_bins", "must be positive");
  cfg.save_checkpoints = toml_get<bool>(root, "save_checkpoints", cfg.save_checkpoints, ctx, "");

  const toml::node* seeds = root.get("seeds");
  if (!seeds || !seeds->is_array()) ctx.fail(seeds ? seeds : &root, "seeds", "expected a non-empty integer array");
  for (const auto& s : *seeds->as_array()) {
    auto v = s.as_integer();
    if (!v || v->get() < 0) ctx.fail(&s, "seeds", "seeds must be non-negative integers");
    cfg.seeds.push_back(static_cast<std::uint64_t>(v->get()));
  }
  if (cfg.seeds.empty()) ctx.fail(seeds, "seeds", "expected a non-empty integer array");
  if (std::set(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
    ctx.fail(seeds, "seeds", "seeds must be unique");

  const toml::node* dataset = root.get("dataset");
  if (!dataset || !dataset->is_table()) ctx.fail(&root, "dataset", "missing [dataset] table");
  cfg.dataset = parse_dataset(*dataset->as_table(), ctx, base_dir);

  json defaults = json::object();
  const toml::table* defaults_table = nullptr;
  if (const toml::node* d = root.get("defaults")) {
    if (!d->is_table()) ctx.fail(d, "defaults", "expected a table");
    defaults_table = d->as_table();
    defaults = toml_to_json(*d);
    ctx.attributed(*defaults_table, "defaults.", [&] { return apply_overrides(TrainConfig{}, defaults); });
  }

  const toml::node* methods = root.get("methods");
  if (!methods || !methods->is_array_of_tables() || methods->as_array()->empty())
    ctx.fail(methods ? methods : &root, "methods", "expected at least one [[methods]] table");
  std::set<std::string> names;
  for (const auto& m : *methods->as_array()) {
    const toml::table& t = *m.as_table();
    const auto name = toml_get<std::string>(t, "name", "", ctx, "methods.");
    if (name.empty()) ctx.fail(&t, "methods.name", "every method needs a name");
    if (!names.insert(name).second) ctx.fail(t.get("name"), "methods.name", "duplicate method name '" + name + "'");
    json delta = toml_to_json(t);
    delta.erase("name");
    json merged = defaults;
    merged.update(delta);
    const std::string prefix = "methods." + name + ".";
    MethodSpec spec{name, ctx.attributed(t, prefix, [&] { return apply_overrides(TrainConfig{}, merged); })};
    spec.thresholds_explicit = merged.contains("many_threshold") && merged.contains("few_threshold");
    if (merged.contains("many_threshold") != merged.contains("few_threshold"))
      ctx.fail(&t, "methods." + name, "set both many_threshold and few_threshold or neither");
    if (!spec.thresholds_explicit) spec.config.thresholds = scaled_shot_thresholds(cfg.dataset.profile.n_max);
    try {
      validate(spec.config);
    } catch (const ConfigError& e) {
      ctx.fail(&t, "methods." + name, e.what());
    }
    cfg.methods.push_back(std::move(spec));
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.string());
}

// ---------------------------------------------------------------------------
// Datasets

ExperimentData build_experiment_data(const DatasetBlock& block) {
  ExperimentData out;
  Rng rng(block.seed);
  switch (block.kind) {
    case DatasetBlock::Kind::files:
      out.train = load_dataset(block.train_path);
      out.test = load_dataset(block.test_path);
      if (out.train.num_classes() != out.test.num_classes() || !(out.train.shape() == out.test.shape()))
        throw ConfigError("train and test files disagree on classes or image shape");
      break;
    case DatasetBlock::Kind::context_shift: {
      const ClassHistogram hist = build_longtail_profile(block.profile);
      ContextShiftData data = synth_context_shift(block.generator, hist, rng);
      out.train = data.train;
      out.test = data.test;
      out.context_shift = std::move(data);
      break;
    }
    case DatasetBlock::Kind::longtail: {
      ContextShiftSpec balanced = block.generator;
      balanced.tail_exposure = balanced.background_pool;
      balanced.tail_max_count = 0;
      const ClassHistogram full(std::vector<long>(static_cast<std::size_t>(block.profile.num_classes), block.profile.n_max));
      ContextShiftData corpus = synth_context_shift(balanced, full, rng);
      Rng pick = rng.substream({1});
      out.train = subsample_longtail(corpus.train, build_longtail_profile(block.profile), pick);
      out.test = std::move(corpus.test);
      break;
    }
  }
  return out;
}

void write_experiment_data(const ExperimentData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(data.train, dir / "train.cmo");
  save_dataset(data.test, dir / "test.cmo");
  if (data.context_shift) save_context_shift_manifest(*data.context_shift, dir / "backgrounds.json");
}

std::string git_blob_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

// ---------------------------------------------------------------------------
// Manifest

json to_json(const ResultsManifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    json j = {{"method", r.method}, {"seed", r.seed}, {"cell_hash", r.cell_hash},
              {"status", r.ok ? "ok" : "failed"}, {"config", r.config}};
    if (r.ok) {
      j["metrics"] = r.metrics;
      j["history"] = r.history;
    } else {
      j["error"] = r.error;
    }
    records.push_back(std::move(j));
  }
  return {{"format", "cmo-results"}, {"version", 1}, {"experiment", m.experiment}, {"records", records}};
}

ResultsManifest manifest_from_json(const json& j) {
  if (j.value("format", "") != "cmo-results") throw FormatError("not a results manifest");
  if (j.value("version", 0) != 1) throw FormatError("unsupported manifest version");
  ResultsManifest m;
  m.experiment = j.value("experiment", json::object());
  for (const auto& r : j.at("records")) {
    CellRecord c;
    c.method = r.at("method").get<std::string>();
    c.seed = r.at("seed").get<std::uint64_t>();
    c.cell_hash = r.value("cell_hash", "");
    c.ok = r.at("status").get<std::string>() == "ok";
    c.config = r.value("config", json::object());
    if (c.ok) {
      c.metrics = r.at("metrics");
      c.history = r.value("history", json::object());
    } else {
      c.error = r.value("error", "");
    }
    m.records.push_back(std::move(c));
  }
  return m;
}

void save_manifest(const ResultsManifest& m, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << to_json(m).dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ResultsManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Running

RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const std::filesystem::path out_dir = options.output_dir.value_or(config.output_dir);
  std::filesystem::create_directories(out_dir);
  if (config.save_checkpoints) std::filesystem::create_directories(out_dir / "checkpoints");

  const ExperimentData data = build_experiment_data(config.dataset);
  const std::string dataset_hash = git_blob_hash(serialize_dataset(data.train) + serialize_dataset(data.test));
  const long train_max =
      *std::max_element(data.train.class_counts().begin(), data.train.class_counts().end());

  RunOutcome outcome;
  outcome.manifest_path = out_dir / "manifest.json";
  json methods = json::array();
  for (const auto& m : config.methods) methods.push_back(m.name);
  outcome.manifest.experiment = {{"dataset", to_json(config.dataset)},
                                 {"dataset_hash", dataset_hash},
                                 {"train_counts", data.train.class_counts()},
                                 {"methods", methods},
                                 {"seeds", config.seeds},
                                 {"ece_bins", config.ece_bins},
                                 {"baseline", config.methods.front().name}};

  std::map<std::string, CellRecord> previous;
  if (options.resume && std::filesystem::exists(outcome.manifest_path)) {
    for (auto& r : load_manifest(outcome.manifest_path).records)
      if (r.ok) previous.emplace(r.cell_hash, std::move(r));
  }

  struct Cell {
    const MethodSpec* method;
    TrainConfig config;
    std::optional<CellRecord> record;
  };
  std::vector<Cell> cells;
  for (const auto& m : config.methods) {
    for (std::uint64_t seed : config.seeds) {
      Cell c{&m, m.config, std::nullopt};
      c.config.seed = seed;
      if (!m.thresholds_explicit) c.config.thresholds = scaled_shot_thresholds(train_max);
      cells.push_back(std::move(c));
    }
  }

  std::mutex mutex;
  auto write_manifest = [&] {
    ResultsManifest m{outcome.manifest.experiment, {}};
    for (const auto& c : cells)
      if (c.record) m.records.push_back(*c.record);
    save_manifest(m, outcome.manifest_path);
  };

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const json resolved = to_json(cells[i].config);
    const std::string hash =
        git_blob_hash(dataset_hash + '\n' + resolved.dump() + '\n' + std::to_string(config.ece_bins));
    if (auto it = previous.find(hash); it != previous.end()) {
      cells[i].record = it->second;
      ++outcome.skipped;
    } else {
      pending.push_back(i);
    }
  }
  write_manifest();

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t p = next++; p < pending.size(); p = next++) {
      Cell& cell = cells[pending[p]];
      TrainConfig tc = cell.config;
      tc.workers = options.workers;
      const json resolved = to_json(cell.config);
      CellRecord rec;
      rec.method = cell.method->name;
      rec.seed = cell.config.seed;
      rec.cell_hash = git_blob_hash(dataset_hash + '\n' + resolved.dump() + '\n' + std::to_string(config.ece_bins));
      rec.config = resolved;
      try {
        const TrainResult result = train(tc, data.train);
        const ShotGroups groups = shot_groups(data.train.class_counts(), tc.thresholds);
        const MetricsReport metrics = evaluate(result.model, data.test, groups, config.ece_bins);
        rec.metrics = to_json(metrics);
        rec.history = to_json(result.history);
        if (config.save_checkpoints)
          save_model(result.model, out_dir / "checkpoints" / (rec.method + "_seed" + std::to_string(rec.seed) + ".cmom"));
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
      std::lock_guard lock(mutex);
      if (options.verbose) {
        std::cerr << "[" << rec.method << " seed " << rec.seed << "] "
                  << (rec.ok ? "overall " + std::to_string(rec.metrics["overall_acc"].get<double>()) : "FAILED: " + rec.error)
                  << '\n';
      }
      rec.ok ? ++outcome.trained : ++outcome.failed;
      cell.record = std::move(rec);
      write_manifest();
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(pending.size())));
  {
    std::vector<std::jthread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }

  for (auto& c : cells)
    if (c.record) outcome.manifest.records.push_back(*c.record);
  return outcome;
}

// ---------------------------------------------------------------------------
// Reporting

ReportTable report(const ResultsManifest& manifest) {
  std::vector<std::string> order;
  if (manifest.experiment.contains("methods"))
    for (const auto& m : manifest.experiment["methods"]) order.push_back(m.get<std::string>());
  for (const auto& r : manifest.records)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  if (order.empty()) throw std::invalid_argument("manifest has no records");

  ReportTable table;
  table.baseline = order.front();
  for (const auto& name : order) {
    ReportRow row;
    row.method = name;
    for (std::size_t k = 0; k < kReportMetrics.size(); ++k) {
      std::vector<double> values;
      for (const auto& r : manifest.records) {
        if (r.method != name || !r.ok) continue;
        const json& v = r.metrics.at(kReportMetrics[k]);
        if (!v.is_null()) values.push_back(v.get<double>());
      }
      if (k == 0)
        row.runs = static_cast<int>(std::count_if(manifest.records.begin(), manifest.records.end(),
                                                  [&](const CellRecord& r) { return r.method == name && r.ok; }));
      if (values.empty()) {
        row.mean[k] = row.stddev[k] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      row.mean[k] = mean;
      row.stddev[k] = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    }
    table.rows.push_back(row);
  }
  for (auto& row : table.rows)
    for (std::size_t k = 0; k < kReportMetrics.size(); ++k) row.delta[k] = row.mean[k] - table.rows.front().mean[k];
  return table;
}

namespace {
std::string fmt(double v, int precision) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}
}  // namespace

std::string render_csv(const ReportTable& table) {
  std::ostringstream out;
  out << "method,runs";
  for (const char* m : kReportMetrics) out << ',' << m << "_mean," << m << "_std," << m << "_delta_vs_" << table.baseline;
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.method << ',' << row.runs;
    for (std::size_t k = 0; k < kReportMetrics.size(); ++k)
      out << ',' << fmt(row.mean[k], 6) << ',' << fmt(row.stddev[k], 6) << ',' << fmt(row.delta[k], 6);
    out << '\n';
  }
  return out.str();
}

std::string render_text(const ReportTable& table) {
  const std::array<const char*, 6> headers{"All", "Many", "Med", "Few", "Conf", "ECE"};
  std::vector<std::array<std::string, 6>> cells;
  std::array<std::size_t, 6> width{};
  for (std::size_t k = 0; k < headers.size(); ++k) width[k] = std::string(headers[k]).size();
  std::size_t name_width = 6;
  for (const auto& row : table.rows) {
    name_width = std::max(name_width, row.method.size());
    auto& line = cells.emplace_back();
    for (std::size_t k = 0; k < headers.size(); ++k) {
      const double scale = k < 4 ? 100.0 : 1.0;
      const int prec = k < 4 ? 2 : 4;
      line[k] = fmt(row.mean[k] * scale, prec) + " +- " + fmt(row.stddev[k] * scale, prec);
      if (row.method != table.baseline)
        line[k] += " (" + std::string(row.delta[k] >= 0 ? "+" : "") + fmt(row.delta[k] * scale, prec) + ")";
      width[k] = std::max(width[k], line[k].size());
    }
  }
  std::ostringstream out;
  out << "Accuracy in %, mean +- std over seeds; delta vs baseline '" << table.baseline << "' (first method)\n";
  out << std::left << std::setw(static_cast<int>(name_width)) << "Method" << "  runs";
  for (std::size_t k = 0; k < headers.size(); ++k) out << "  " << std::setw(static_cast<int>(width[k])) << headers[k];
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << std::setw(static_cast<int>(name_width)) << table.rows[r].method << "  " << std::setw(4) << table.rows[r].runs;
    for (std::size_t k = 0; k < headers.size(); ++k) out << "  " << std::setw(static_cast<int>(width[k])) << cells[r][k];
    out << '\n';
  }
  return out.str();
}

}  // namespace cmo
