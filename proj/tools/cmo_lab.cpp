// cmo_lab: build datasets, run method x seed grids, summarize results.
//
// Exit codes: 0 success, 1 bad config or input, 2 at least one cell failed.

#include "cmo/experiment.hpp"
#include "cmo/selfcheck.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

namespace {

int run_cmd(const std::string& config_path, const cmo::RunOptions& opts) {
  const auto config = cmo::load_experiment_config(config_path);
  const auto outcome = cmo::run_experiment(config, opts);
  std::cout << "trained " << outcome.trained << ", skipped " << outcome.skipped << ", failed " << outcome.failed
            << "\nmanifest: " << outcome.manifest_path.string() << '\n';
  if (outcome.failed > 0) {
    for (const auto& r : outcome.manifest.records)
      if (!r.ok) std::cerr << r.method << " seed " << r.seed << ": " << r.error << '\n';
    return 2;
  }
  const auto table = cmo::report(outcome.manifest);
  std::cout << cmo::render_text(table);
  return 0;
}

int report_cmd(const std::string& manifest_path, const std::string& format, const std::string& out_path) {
  const auto table = cmo::report(cmo::load_manifest(manifest_path));
  const std::string text = format == "csv" ? cmo::render_csv(table) : cmo::render_text(table);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + out_path);
  }
  return 0;
}

int make_data_cmd(const std::string& config_path, const std::string& out_dir) {
  const auto config = cmo::load_experiment_config(config_path);
  const auto data = cmo::build_experiment_data(config.dataset);
  const std::filesystem::path dir = out_dir.empty() ? config.output_dir / "data" : std::filesystem::path(out_dir);
  cmo::write_experiment_data(data, dir);
  std::cout << "train " << data.train.size() << " images, test " << data.test.size() << " images -> " << dir.string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-rich minority oversampling experiments"};
  app.require_subcommand(1);

  std::string config_path;
  cmo::RunOptions opts;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "train every method/seed cell of an experiment");
  run->add_option("config", config_path, "experiment TOML file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_option("--jobs", opts.jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  run->add_option("--workers", opts.workers, "batch preparation threads per cell")->check(CLI::PositiveNumber);
  run->add_flag("--resume", opts.resume, "skip cells already recorded with a matching hash");
  run->add_flag("-v,--verbose", opts.verbose, "log each finished cell");

  std::string manifest_path, format = "txt", report_out;
  auto* rep = app.add_subcommand("report", "aggregate a results manifest");
  rep->add_option("manifest", manifest_path, "manifest.json")->required()->check(CLI::ExistingFile);
  rep->add_option("--format", format, "csv or txt")->check(CLI::IsMember({"csv", "txt"}));
  rep->add_option("-o,--output", report_out, "write to a file instead of stdout");

  std::string data_out;
  auto* make = app.add_subcommand("make-data", "write the dataset of an experiment to disk");
  make->add_option("config", config_path, "experiment TOML file")->required()->check(CLI::ExistingFile);
  make->add_option("--out", data_out, "directory for train.cmo / test.cmo");

  auto* check = app.add_subcommand("selfcheck", "run built-in invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      if (!out_dir.empty()) opts.output_dir = out_dir;
      return run_cmd(config_path, opts);
    }
    if (*rep) return report_cmd(manifest_path, format, report_out);
    if (*make) return make_data_cmd(config_path, data_out);
    if (*check) return cmo::run_selfcheck(std::cout) ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
