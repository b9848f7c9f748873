#pragma once

// Experiment orchestration shared by the CLI, the acceptance suite and the
// Python bindings. All artifacts live under one output directory:
//   <out>/data/<domain>_<filter>/   manifest.json, segments.f32, spectrogram cache
//   <out>/runs/<cell id>/           cell.json, checkpoint.bin, pretrain_log.csv,
//                                   finetune_log.csv, report.json
//   <out>/report/                   emit_report tables

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xtalk/config.hpp"
#include "xtalk/io.hpp"
#include "xtalk/metrics.hpp"

namespace xtalk {

using Logger = std::function<void(const std::string&)>;
/// Thread-safe stderr logger.
Logger stderr_logger();
Logger null_logger();

std::filesystem::path domain_dir(const std::filesystem::path& out, const std::string& domain, ClassFilter filter);

/// Plans domain `name` under the config (class filter, counts, seeds).
DomainFiles plan_config_domain(const ExperimentConfig& cfg, const std::string& name, ClassFilter filter);

/// Writes every configured domain. Returns the directories written.
std::vector<std::filesystem::path> generate_domains(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                                    const Logger& log);

/// Domain tensors ready for training; generates the files first when the
/// on-disk manifest is missing or differs from the plan.
struct LoadedDomain {
  std::string name;
  PreparedDomain prepared;
  TargetSplits mask;
};
LoadedDomain load_domain(const ExperimentConfig& cfg, const std::string& name, ClassFilter filter,
                         const std::filesystem::path& out, const Logger& log);

std::filesystem::path run_dir(const std::filesystem::path& out, const BenchCell& cell);
/// JSON identity of a cell: everything that influences its result.
std::string cell_config_text(const ExperimentConfig& cfg, const BenchCell& cell);

/// True when the run directory holds a report and checkpoint produced by an
/// identical cell config.
bool cell_complete(const std::filesystem::path& dir, const std::string& cell_config);

/// Trains one cell and writes its run directory.
RunReport run_cell(const ExperimentConfig& cfg, const BenchCell& cell, const LoadedDomain& source,
                   const LoadedDomain& target, const std::filesystem::path& out, const Logger& log);

struct BenchOptions {
  std::size_t jobs = 1;
  bool resume = true;
};

/// Runs (or reuses) every cell of the matrix, then emits the report tables
/// into <out>/report. Returns reports in matrix order.
std::vector<RunReport> run_bench(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                 const BenchOptions& opts, const Logger& log);

}  // namespace xtalk
