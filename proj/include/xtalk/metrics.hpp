#pragma once

// Macro-F1 scoring and benchmark report assembly.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xtalk/siggen.hpp"

namespace xtalk {

/// Mixed-radix joint index of per-task digits. DomainError if a digit is
/// outside its task's range.
int joint_class(const std::array<int, kNumTasks>& digits);
std::array<int, kNumTasks> decode_joint(int joint);

/// Unweighted mean over all k classes of per-class F1; a class with no
/// TP, FP, or FN scores 0. DomainError on empty input or an index outside
/// [0, k); ShapeError on length mismatch.
double macro_f1(std::span<const int> preds, std::span<const int> labels, int k);

/// Macro-F1 averaged over `classes` only, for label sets that use a subset
/// of [0, k). A prediction outside the subset still counts as a miss for its
/// true class. Labels must lie in `classes`.
double macro_f1_over(std::span<const int> preds, std::span<const int> labels, std::span<const int> classes, int k);

/// Macro-F1 of each task over its own severity classes.
std::array<double, kNumTasks> per_fault_f1(std::span<const std::array<int, kNumTasks>> preds,
                                           std::span<const std::array<int, kNumTasks>> labels);

/// Per-epoch per-head validation losses of one training stage.
struct StageTrajectory {
  std::vector<std::string> heads;
  std::vector<std::vector<double>> losses;  // [epoch][head], epoch 0 = before training
  std::size_t selected_epoch = 0;
};

struct RunReport {
  std::string source, target;
  std::string variant, norm;
  std::string dataset = "all36";  // class filter
  std::uint64_t seed = 0;
  double joint_f1 = 0.0;
  std::array<double, kNumTasks> fault_f1{};
  std::size_t param_count = 0;
  StageTrajectory pretrain, finetune;
  double wall_clock_s = 0.0;

  std::string scenario() const;
  // (scenario, dataset, variant, norm, seed) identity of the cell.
  std::string cell_id() const;
};

std::string to_json_string(const RunReport& r);
RunReport run_report_from_json(const std::string& text);

/// Mean of every (scenario, dataset, variant, norm) cell over its seeds.
struct CellMean {
  std::string scenario, dataset, variant, norm;
  std::size_t seeds = 0;
  double joint_f1 = 0.0;
  std::array<double, kNumTasks> fault_f1{};
};
std::vector<CellMean> seed_means(std::span<const RunReport> runs);

/// Writes table_architecture.csv, table_normalization.csv, per_fault.csv,
/// trajectories.csv, params.csv and runs.json under `out_dir`. Throws
/// DomainError for no runs and IoError if a file cannot be written.
void emit_report(std::span<const RunReport> runs, const std::filesystem::path& out_dir);

}  // namespace xtalk
