#include "motorfm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "motorfm/rng.hpp"

namespace motorfm {

namespace {

struct Score {
  double accuracy = 0.0;
  double loss = 0.0;
};

Score score(const ModelState& model, std::span<const WindowedSample> samples) {
  constexpr std::size_t kChunk = 64;
  const std::size_t m = model.num_classes();
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto part = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const Tensor logits = forward_logits(model, make_batch(part));
    for (std::size_t s = 0; s < part.size(); ++s) {
      const auto row = logits.data().subspan(s * m, m);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == part[s].label) ++correct;
      loss += kernels::softmax_sparse_ce(row, part[s].label);
    }
  }
  const double n = static_cast<double>(samples.size());
  return {100.0 * static_cast<double>(correct) / n, loss / n};
}

void clip_gradients(std::vector<LayerGrad>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    if (!g.present) continue;
    for (double v : g.weight.data()) sq += v * v;
    for (double v : g.bias.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (auto& g : grads) {
    if (!g.present) continue;
    for (auto& v : g.weight.data()) v *= scale;
    for (auto& v : g.bias.data()) v *= scale;
  }
}

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be positive");
}

void check_labels(std::span<const WindowedSample> samples, std::size_t num_classes, const char* what) {
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(s.label) + " of " +
                                  s.origin.record_id + "@" + std::to_string(s.origin.offset) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

TrainHistory train_model(ModelState& model, std::span<const WindowedSample> train,
                         std::span<const WindowedSample> validation, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  check_labels(train, model.num_classes(), "train");
  check_labels(validation, model.num_classes(), "validation");
  const std::vector<WindowedSample> thinned = thin_per_class(validation, model.num_classes(), cfg.max_validation);

  AdamState adam(cfg.adam);
  TrainHistory history;
  ModelState best = model;
  Score best_score{-1.0, INFINITY};
  if (!validation.empty()) best_score = score(model, thinned);
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::vector<const WindowedSample*> batch_ptrs;
  std::vector<int> labels;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, {0x45504f4348ULL, epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto n = std::min(cfg.batch_size, order.size() - start);
      batch_ptrs.clear();
      labels.clear();
      for (std::size_t k = 0; k < n; ++k) {
        batch_ptrs.push_back(&train[order[start + k]]);
        labels.push_back(train[order[start + k]].label);
      }
      auto result = loss_and_gradients(model, make_batch(std::span<const WindowedSample* const>(batch_ptrs)), labels);
      loss_sum += result.loss * static_cast<double>(n);
      const std::size_t m = model.num_classes();
      for (std::size_t s = 0; s < n; ++s) {
        const auto row = result.logits.data().subspan(s * m, m);
        if (std::max_element(row.begin(), row.end()) - row.begin() == labels[s]) ++correct;
      }
      if (cfg.clip_norm) clip_gradients(result.grads, *cfg.clip_norm);

      std::vector<ParamRef> refs;
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto& l = model.layers[i];
        if (!l.has_params()) continue;
        const auto& g = result.grads[i];
        refs.push_back({&l.weight, g.present ? &g.weight : nullptr, l.trainable});
        refs.push_back({&l.bias, g.present ? &g.bias : nullptr, l.trainable});
      }
      adam_step(adam, refs);
    }

    const double count = static_cast<double>(train.size());
    history.train_loss.push_back(loss_sum / count);
    history.train_accuracy.push_back(100.0 * static_cast<double>(correct) / count);

    Score current{};
    if (!validation.empty()) {
      current = score(model, thinned);
      history.val_accuracy.push_back(current.accuracy);
      history.val_loss.push_back(current.loss);
      const bool better = current.accuracy > best_score.accuracy ||
                          (current.accuracy == best_score.accuracy && current.loss < best_score.loss);
      if (better) {
        best_score = current;
        best = model;
        history.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      history.best_epoch = epoch;
    }
    if (on_epoch) {
      on_epoch({epoch, history.train_loss.back(), history.train_accuracy.back(), current.accuracy});
    }
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  if (!validation.empty()) model = std::move(best);
  return history;
}

std::pair<ModelState, TrainHistory> pretrain(ModelState model, const DatasetSplit& data, const TrainConfig& cfg,
                                             const EpochCallback& on_epoch) {
  cfg.validate();
  for (const auto& l : model.layers) {
    if (l.has_params() && !l.trainable) throw std::invalid_argument("pretrain: layer " + l.name + " is frozen");
  }
  check_labels(data.train, model.num_classes(), "pretrain");
  check_labels(data.validation, model.num_classes(), "pretrain");
  if (!data.label_map.empty() && data.label_map.size() != model.num_classes()) {
    throw std::invalid_argument("pretrain: data has " + std::to_string(data.label_map.size()) +
                                " classes, model head has " + std::to_string(model.num_classes()));
  }
  auto history = train_model(model, data.train, data.validation, cfg, on_epoch);
  model.label_map = data.label_map;
  return {std::move(model), std::move(history)};
}

}  // namespace motorfm
