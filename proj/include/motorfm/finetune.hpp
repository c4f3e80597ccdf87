#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "motorfm/evaluate.hpp"
#include "motorfm/model.hpp"
#include "motorfm/signal.hpp"
#include "motorfm/train.hpp"

namespace motorfm {

struct FineTuneConfig {
  double labeled_fraction = 1.0;
  std::size_t target_num_classes = 2;
  /// Leading conv layers left trainable; 0 trains the head only.
  std::size_t trainable_prefix = 3;
  /// Width of an optional hidden layer in the fresh head.
  std::size_t head_hidden = 0;
  /// Full-batch Adam steps fitting the fresh head on pooled features of the
  /// frozen network before the joint phase; 0 skips the warm-up.
  std::size_t head_warmup_steps = 0;
  double head_warmup_lr = 1e-2;
  TrainConfig train = default_train();

  void validate() const;

  static TrainConfig default_train() {
    TrainConfig t;
    t.epochs = 100;
    t.patience = 10;
    return t;
  }
};

/// One output class of a target task and the fault classes folded into it.
struct TaskClass {
  std::string name;
  std::vector<FaultClass> faults;
};

/// A downstream problem: which records feed it (by machine and generation
/// cohort) and how their fault classes map onto task labels.
struct TargetTask {
  std::string id;
  std::string description;
  std::string machine_id;
  std::vector<std::string> cohorts;
  std::vector<TaskClass> classes;
  double noise_percent = 0.0;

  std::vector<std::string> class_names() const;
  /// Task label of a fault class, or -1 when the task does not use it.
  int label_for(FaultClass fault) const;
  void validate() const;
};

/// Copies the conv body, marks conv_1..conv_prefix trainable and the rest
/// frozen, and attaches a fresh trainable head of target_num_classes outputs.
ModelState prepare_finetune(const ModelState& pretrained, const FineTuneConfig& cfg);

/// Fits only the head layers of `model` on pooled features of `samples`.
void warm_up_head(ModelState& model, std::span<const WindowedSample> samples, std::size_t steps, double learning_rate);

/// Trains the unmasked layers on the stratified labeled fraction of `data`,
/// after the optional head warm-up.
std::pair<ModelState, TrainHistory> finetune(ModelState model, const TargetTask& task, const DatasetSplit& data,
                                             const FineTuneConfig& cfg);

/// True when every frozen conv layer of `tuned` is bitwise equal to `reference`.
bool frozen_layers_intact(const ModelState& reference, const ModelState& tuned, std::size_t trainable_prefix);

struct CellResult {
  std::string task_id;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::size_t train_samples = 0;
  std::size_t epochs_run = 0;
  bool frozen_intact = false;
};

struct FractionSummary {
  double fraction = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t ok_cells = 0;
  std::size_t failed_cells = 0;
};

struct TaskRow {
  std::string task_id;
  std::vector<FractionSummary> columns;
  std::vector<CellResult> cells;
};

/// Seed used for the fine-tuning cell at (task, fraction index, seed).
std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& task_id, std::size_t fraction_index);

/// One prepare -> subsample -> finetune -> evaluate cell. Errors are caught
/// and recorded in the result.
CellResult run_cell(const ModelState& backbone, const TargetTask& task, const DatasetSplit& data, double fraction,
                    std::size_t fraction_index, std::uint64_t seed, const FineTuneConfig& base);

/// Every (fraction, seed) cell of one task, on up to `jobs` threads. Cell
/// seeds do not depend on scheduling, so any `jobs` gives the same row.
TaskRow run_target_task(const ModelState& backbone, const TargetTask& task, const DatasetSplit& data,
                        const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                        const FineTuneConfig& base, std::size_t jobs = 1);

/// Population mean / std of accuracies of the ok cells.
FractionSummary summarize(double fraction, const std::vector<const CellResult*>& cells);

}  // namespace motorfm
