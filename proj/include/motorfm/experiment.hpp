#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "motorfm/finetune.hpp"
#include "motorfm/model.hpp"
#include "motorfm/signal.hpp"
#include "motorfm/synth.hpp"
#include "motorfm/train.hpp"

namespace motorfm {

/// A batch of generated records: one machine at one speed profile, a list of
/// fault classes with severity ranges, and a record count per class.
struct CohortSpec {
  std::string name;
  std::string machine;
  SpeedProfile speed;
  std::vector<double> loads;
  std::size_t records_per_class = 3;
  std::vector<ClassPlan> classes;
};

enum class BackboneLabels { by_regime, merged };

struct BackboneSpec {
  std::vector<std::string> cohorts;
  BackboneLabels labels = BackboneLabels::by_regime;
  TrainConfig train;
};

struct SuiteTask {
  std::string group;
  TargetTask task;
};

/// Everything needed to reproduce a run. Loaded from JSON (see README for the
/// key schema); `default_experiment_config()` is the desk-scale setup.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t window_len = 2048;
  std::size_t hop = 1024;
  SplitRatios split;
  std::map<std::string, MachineSpec> machines;
  std::vector<CohortSpec> cohorts;
  BackboneSpec backbone;
  FineTuneConfig finetune;
  std::vector<double> fractions{0.05, 0.10, 0.15, 0.20, 0.25};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double noise_percent = 10.0;
  std::vector<SuiteTask> expressivity;
  std::vector<SuiteTask> scalability;

  void validate() const;
  /// Stable hash of the canonical JSON form.
  std::string hash() const;
};

ExperimentConfig default_experiment_config();
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path_or_default);
std::string experiment_config_json(const ExperimentConfig& config);

inline const std::vector<std::string> kSuiteNames{"expressivity", "scalability", "generalizability"};

/// Tasks of a suite; generalizability is expressivity with noise injected.
std::vector<SuiteTask> suite_tasks(const ExperimentConfig& config, const std::string& suite);

/// Generated (or loaded) records with their fixed split assignment.
class ExperimentData {
 public:
  ExperimentData(const ExperimentConfig& config, std::vector<DatasetEntry> entries);

  static ExperimentData generate(const ExperimentConfig& config);
  static ExperimentData load(const ExperimentConfig& config, const std::filesystem::path& dir);

  const std::vector<DatasetEntry>& entries() const { return entries_; }
  SplitTag tag(std::size_t index) const { return tags_[index]; }

  /// Windows of a task, labelled by task class; noise is injected into the raw
  /// records first when the task asks for it. Throws naming the missing
  /// cohort/class when a task class has no records.
  DatasetSplit task_split(const TargetTask& task) const;
  DatasetSplit backbone_split() const;

 private:
  std::vector<WindowedSample> windows_of(std::size_t index, int label, double noise_percent) const;

  const ExperimentConfig* config_;
  std::vector<DatasetEntry> entries_;
  std::vector<SplitTag> tags_;
};

std::vector<DatasetEntry> generate_entries(const ExperimentConfig& config);

using ProgressFn = std::function<void(const std::string&)>;

struct PretrainOutcome {
  ModelState model;
  TrainHistory history;
  double test_accuracy = 0.0;
};

PretrainOutcome pretrain_backbone(const ExperimentConfig& config, const ExperimentData& data,
                                  const ProgressFn& progress = {});

struct ReportRow {
  std::string group;
  std::string task_id;
  std::string label;
  std::vector<FractionSummary> columns;
  std::vector<CellResult> cells;
};

struct EvalReport {
  std::string suite;
  std::vector<double> fractions;
  std::vector<ReportRow> rows;
  std::vector<std::uint64_t> seeds;
  double noise_percent = 0.0;
  std::string config_hash;
  std::string backbone_fingerprint;
};

EvalReport run_suite(const ExperimentConfig& config, const ExperimentData& data, const ModelState& backbone,
                     const std::string& suite, std::size_t jobs = 1, const ProgressFn& progress = {});

}  // namespace motorfm
