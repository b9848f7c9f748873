#pragma once

// Splitting, partial-label masking, and the pretrain -> finetune protocol.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xtalk/losses.hpp"
#include "xtalk/models.hpp"
#include "xtalk/siggen.hpp"

namespace xtalk {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction; skips buffers.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}
  void step(ParamStore<float>& store);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs_pretrain = 100;
  std::size_t epochs_finetune = 100;
  std::size_t batch_size = 16;
  AdamConfig adam;
  double labeled_fraction = 0.10;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  LossWeights weights;
  KernelBank bank;
  // Keep supervised source CCE in the finetune objective.
  bool source_cce_in_finetune = false;
  std::size_t eval_batch = 64;

  void validate() const;
};

struct SourceSplits {
  std::vector<std::size_t> train, val, test;
};

/// `labeled` is the labeled training pool; `val` is the labeled pool held
/// out for checkpoint selection; `test` labels are for metrics only.
struct TargetSplits {
  std::vector<std::size_t> labeled, val, unlabeled, test;

  std::vector<std::size_t> train_pool() const;
};

/// Stratified per joint class 8:1:1 (val = test = round(n/10)). Throws
/// ConfigError for a class with fewer than 10 members.
SourceSplits split_source(std::span<const CompoundLabel> labels, std::uint64_t seed);

/// Per class of n members: test = round(n/10); labeled pool =
/// round(fraction * n) clamped to [1, n - test]; one third of the pool
/// (at least one when the pool has two or more) becomes validation.
TargetSplits label_mask_target(std::span<const CompoundLabel> labels, double fraction, std::uint64_t seed);

/// Source domain: network inputs plus visible labels.
struct PreparedDomain {
  std::string name;
  Tensor<float> inputs;  // (N, 1, 80, 48)
  std::vector<CompoundLabel> labels;

  std::size_t size() const { return labels.size(); }
};

PreparedDomain prepare_domain(const DomainDataset& ds, const std::string& name);

/// Gatekeeper over target labels. Training code may read labels of the
/// labeled and validation pools only; test labels are handed out through
/// test_label(), which counts every read.
class TargetLabels {
 public:
  TargetLabels(std::vector<CompoundLabel> labels, const TargetSplits& splits);

  const CompoundLabel& train_label(std::size_t i) const;
  const CompoundLabel& test_label(std::size_t i) const;
  std::size_t test_reads() const { return test_reads_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::vector<CompoundLabel> labels_;
  std::vector<char> trainable_;
  std::vector<char> test_;
  mutable std::size_t test_reads_ = 0;
};

struct TargetDomain {
  std::string name;
  Tensor<float> inputs;
  TargetLabels labels;
};

/// Per-head class indices of a label: {joint} for MCC, task digits otherwise.
std::vector<int> head_targets(const ModelSpec& spec, const CompoundLabel& label);

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" | "val"
  std::string task;   // head name or "total"/"cce"/"mmd"/"em"
  double loss = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> rows;
  // Selection criterion per logged epoch; index 0 is the initial state.
  std::vector<double> val_losses;
  // val_task_losses[epoch][head]
  std::vector<std::vector<double>> val_task_losses;
  std::size_t selected_epoch = 0;
};

std::vector<std::string> head_names(const ModelSpec& spec);

/// Summed-over-heads CCE on `rows`, each head's mean reported separately.
std::vector<double> eval_task_losses(Model<float>& model, const Tensor<float>& inputs,
                                     std::span<const std::size_t> rows,
                                     const std::vector<std::vector<int>>& targets, std::size_t chunk);

/// Minimizes summed per-head CCE on the source training split. Leaves the
/// model at the epoch (0 = initial) with the lowest validation loss.
TrainLog pretrain(Model<float>& model, const PreparedDomain& source, const SourceSplits& splits,
                  const TrainConfig& cfg, std::uint64_t seed);

/// Each step draws a source batch and a target batch (half labeled, half
/// unlabeled when both exist) and minimizes finetune_loss. Validation is
/// summed CCE on the labeled target validation pool.
TrainLog finetune(Model<float>& model, const PreparedDomain& source, const SourceSplits& source_splits,
                  const TargetDomain& target, const TargetSplits& target_splits, const TrainConfig& cfg,
                  std::uint64_t seed);

struct Predictions {
  std::vector<std::array<int, kNumTasks>> tasks;
  std::vector<int> joint;
};

/// Eval-mode argmax predictions for `rows`.
Predictions predict(Model<float>& model, const Tensor<float>& inputs, std::span<const std::size_t> rows,
                    std::size_t chunk = 64);

/// Independent stream for (seed, purpose).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose);

}  // namespace xtalk
