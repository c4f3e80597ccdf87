#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "motorfm/adam.hpp"
#include "motorfm/model.hpp"
#include "motorfm/signal.hpp"

namespace motorfm {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  /// Global L2 clip over all trainable gradients; disabled when empty.
  std::optional<double> clip_norm;
  /// Stop after this many epochs without a better validation score; 0 disables.
  std::size_t patience = 0;
  /// Validation windows scored per epoch; larger sets are thinned per class
  /// with even spacing (see thin_per_class). 0 keeps them all.
  std::size_t max_validation = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
  std::vector<double> val_loss;
  /// Zero-based epoch whose parameters were kept; empty when no epoch beat
  /// the starting parameters on the validation set.
  std::optional<std::size_t> best_epoch;

  std::size_t epochs_run() const { return train_loss.size(); }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};
using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch Adam on the trainable layers of `model`. Batches are drawn from
/// a per-epoch shuffle seeded by (cfg.seed, epoch). With a validation set the
/// best parameters (accuracy, then loss) among the starting point and every
/// epoch are restored at the end.
TrainHistory train_model(ModelState& model, std::span<const WindowedSample> train,
                         std::span<const WindowedSample> validation, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {});

/// Full-network training on the combined multi-fault data.
std::pair<ModelState, TrainHistory> pretrain(ModelState model, const DatasetSplit& data, const TrainConfig& cfg,
                                             const EpochCallback& on_epoch = {});

/// Throws naming the first sample whose label is not below `num_classes`.
void check_labels(std::span<const WindowedSample> samples, std::size_t num_classes, const char* what);

}  // namespace motorfm
