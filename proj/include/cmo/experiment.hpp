#pragma once

#include "cmo/data_corpus.hpp"
#include "cmo/evaluator.hpp"
#include "cmo/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cmo {

/// Where the train/test splits of an experiment come from.
struct DatasetBlock {
  enum class Kind { context_shift, longtail, files };
  Kind kind = Kind::context_shift;
  std::uint64_t seed = 0;
  /// Class profile of the training split (context_shift and longtail).
  LongTailSpec profile{20, 100, 50.0};
  /// Image generator settings; for longtail the generator renders a balanced
  /// corpus without context shift that is then subsampled.
  ContextShiftSpec generator;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
};

struct MethodSpec {
  std::string name;
  TrainConfig config;
  /// When false the shot thresholds are derived from the training split's
  /// largest class at run time.
  bool thresholds_explicit = false;
};

struct ExperimentConfig {
  DatasetBlock dataset;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "results";
  int ece_bins = 15;
  bool save_checkpoints = true;
};

struct ExperimentData {
  Dataset train;
  Dataset test;
  std::optional<ContextShiftData> context_shift;
};

/// Parses a TOML experiment file. Errors carry the offending field and line.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(std::string_view toml_text, const std::string& source_name = "<string>");

ExperimentData build_experiment_data(const DatasetBlock& block);
/// Writes train.cmo, test.cmo and (for context_shift) backgrounds.json.
void write_experiment_data(const ExperimentData& data, const std::filesystem::path& dir);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetBlock& d);
nlohmann::json to_json(const TrainHistory& h);

/// Git-style blob id: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_hash(const std::string& bytes);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;
  int jobs = 1;
  bool resume = false;
  /// Batch preparation threads inside each training run.
  int workers = 1;
  bool verbose = false;
};

/// Per-(method, seed) outcome.
struct CellRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string cell_hash;
  bool ok = false;
  std::string error;
  nlohmann::json config;
  nlohmann::json metrics;
  nlohmann::json history;
};

struct ResultsManifest {
  nlohmann::json experiment;
  std::vector<CellRecord> records;
};

nlohmann::json to_json(const ResultsManifest& m);
ResultsManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const ResultsManifest& m, const std::filesystem::path& path);
ResultsManifest load_manifest(const std::filesystem::path& path);

struct RunOutcome {
  ResultsManifest manifest;
  std::filesystem::path manifest_path;
  int trained = 0;
  int skipped = 0;
  int failed = 0;
};

/// Trains every (method, seed) cell. The manifest is rewritten atomically
/// after each finished cell. With `resume`, cells whose hash already has a
/// successful record are skipped.
RunOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Metric columns of the comparison tables.
inline constexpr std::array<const char*, 6> kReportMetrics{"overall_acc", "many_acc",          "medium_acc",
                                                            "few_acc",     "mean_max_confidence", "ece"};

struct ReportRow {
  std::string method;
  int runs = 0;
  std::array<double, 6> mean{};
  std::array<double, 6> stddev{};
  std::array<double, 6> delta{};
};

/// Per-method mean and sample standard deviation (n - 1) over successful
/// seeds, plus mean minus the first method's mean.
struct ReportTable {
  std::string baseline;
  std::vector<ReportRow> rows;
};

ReportTable report(const ResultsManifest& manifest);
std::string render_csv(const ReportTable& table);
std::string render_text(const ReportTable& table);

}  // namespace cmo
