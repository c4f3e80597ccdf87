#include "motorfm/finetune.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <thread>

#include "motorfm/rng.hpp"

namespace motorfm {

void FineTuneConfig::validate() const {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw std::invalid_argument("finetune: labeled_fraction must lie in (0, 1], got " + format_real(labeled_fraction));
  }
  if (trainable_prefix > kBackboneConvLayers) {
    throw std::invalid_argument("finetune: trainable_prefix must be <= " + std::to_string(kBackboneConvLayers));
  }
  if (target_num_classes < 2) throw std::invalid_argument("finetune: target_num_classes must be >= 2");
  if (head_warmup_steps > 0 && !(head_warmup_lr > 0.0)) {
    throw std::invalid_argument("finetune: head_warmup_lr must be positive");
  }
  train.validate();
}

std::vector<std::string> TargetTask::class_names() const {
  std::vector<std::string> names;
  for (const auto& c : classes) names.push_back(c.name);
  return names;
}

int TargetTask::label_for(FaultClass fault) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (auto f : classes[i].faults) {
      if (f == fault) return static_cast<int>(i);
    }
  }
  return -1;
}

void TargetTask::validate() const {
  if (id.empty()) throw std::invalid_argument("task without id");
  if (classes.size() < 2) throw std::invalid_argument("task " + id + ": needs at least two classes");
  if (cohorts.empty()) throw std::invalid_argument("task " + id + ": no source cohorts");
  if (!(noise_percent >= 0.0)) throw std::invalid_argument("task " + id + ": noise_percent must be >= 0");
  std::vector<FaultClass> seen;
  for (const auto& c : classes) {
    if (c.faults.empty()) throw std::invalid_argument("task " + id + ": class " + c.name + " has no fault classes");
    for (auto f : c.faults) {
      if (std::find(seen.begin(), seen.end(), f) != seen.end()) {
        throw std::invalid_argument("task " + id + ": fault class " + std::string(to_string(f)) +
                                    " mapped to two task classes");
      }
      seen.push_back(f);
    }
  }
}

ModelState prepare_finetune(const ModelState& pretrained, const FineTuneConfig& cfg) {
  cfg.validate();
  if (pretrained.arch.conv_layers != kBackboneConvLayers ||
      pretrained.fingerprint().body != backbone_body_fingerprint()) {
    throw std::invalid_argument("prepare_finetune: architecture fingerprint " + pretrained.fingerprint().str() +
                                " is not a backbone");
  }
  ModelState model = pretrained;
  for (std::size_t i = 0; i < model.arch.conv_layers; ++i) model.layers[i].trainable = i < cfg.trainable_prefix;
  model.layers[model.arch.conv_layers].trainable = false;
  replace_head(model, cfg.target_num_classes, cfg.head_hidden, cfg.train.seed);
  return model;
}

void warm_up_head(ModelState& model, std::span<const WindowedSample> samples, std::size_t steps, double learning_rate) {
  if (steps == 0 || samples.empty()) return;
  constexpr std::size_t kChunk = 64;
  const std::size_t width = model.layers[model.head_begin()].weight.dim(1);
  Tensor features({samples.size(), width});
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto part = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const Tensor f = body_features(model, make_batch(part));
    std::copy(f.data().begin(), f.data().end(), features.data().begin() + start * width);
  }
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = learning_rate;
  AdamState adam(adam_cfg);
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    std::vector<std::pair<Var, Var>> params;
    Var x = tape.leaf(features, false);
    for (std::size_t i = model.head_begin(); i < model.layers.size(); ++i) {
      const auto& l = model.layers[i];
      params.emplace_back(tape.leaf(l.weight, true), tape.leaf(l.bias, true));
      x = tape.dense(x, params.back().first, params.back().second);
      if (i + 1 < model.layers.size()) x = tape.leaky_relu(x, model.arch.leaky_alpha);
    }
    tape.backward(tape.softmax_sparse_ce(x, labels));
    std::vector<Tensor> grads;
    for (const auto& [w, b] : params) {
      grads.push_back(tape.grad(w));
      grads.push_back(tape.grad(b));
    }
    std::vector<ParamRef> refs;
    for (std::size_t i = model.head_begin(), k = 0; i < model.layers.size(); ++i, k += 2) {
      refs.push_back({&model.layers[i].weight, &grads[k], true});
      refs.push_back({&model.layers[i].bias, &grads[k + 1], true});
    }
    adam_step(adam, refs);
  }
}

std::pair<ModelState, TrainHistory> finetune(ModelState model, const TargetTask& task, const DatasetSplit& data,
                                             const FineTuneConfig& cfg) {
  cfg.validate();
  task.validate();
  const auto names = task.class_names();
  if (data.label_map != names) {
    throw std::invalid_argument("finetune: task " + task.id + " inventory does not match the data label map");
  }
  if (model.num_classes() != names.size()) {
    throw std::invalid_argument("finetune: head has " + std::to_string(model.num_classes()) + " outputs, task " +
                                task.id + " has " + std::to_string(names.size()) + " classes");
  }
  check_labels(data.train, names.size(), "finetune");
  check_labels(data.validation, names.size(), "finetune");
  const auto subset = stratified_fraction(data, cfg.labeled_fraction, mix_seed(cfg.train.seed, 0x53554253ULL));
  warm_up_head(model, subset, cfg.head_warmup_steps, cfg.head_warmup_lr);
  auto history = train_model(model, subset, data.validation, cfg.train);
  model.label_map = names;
  return {std::move(model), std::move(history)};
}

bool frozen_layers_intact(const ModelState& reference, const ModelState& tuned, std::size_t trainable_prefix) {
  if (reference.arch.conv_layers != tuned.arch.conv_layers) return false;
  for (std::size_t i = trainable_prefix; i < reference.arch.conv_layers; ++i) {
    const auto& a = reference.layers[i];
    const auto& b = tuned.layers[i];
    if (a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape()) return false;
    if (std::memcmp(a.weight.data().data(), b.weight.data().data(), a.weight.size() * sizeof(double)) != 0) return false;
    if (std::memcmp(a.bias.data().data(), b.bias.data().data(), a.bias.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& task_id, std::size_t fraction_index) {
  return mix_seed(base_seed, {hash_string(task_id), fraction_index});
}

FractionSummary summarize(double fraction, const std::vector<const CellResult*>& cells) {
  FractionSummary s;
  s.fraction = fraction;
  double sum = 0.0;
  for (const auto* c : cells) {
    if (c->ok) {
      ++s.ok_cells;
      sum += c->accuracy;
    } else {
      ++s.failed_cells;
    }
  }
  if (s.ok_cells == 0) return s;
  s.mean = sum / static_cast<double>(s.ok_cells);
  double ss = 0.0;
  for (const auto* c : cells) {
    if (c->ok) ss += (c->accuracy - s.mean) * (c->accuracy - s.mean);
  }
  s.stddev = std::sqrt(ss / static_cast<double>(s.ok_cells));
  return s;
}

CellResult run_cell(const ModelState& backbone, const TargetTask& task, const DatasetSplit& data, double fraction,
                    std::size_t fraction_index, std::uint64_t seed, const FineTuneConfig& base) {
  CellResult cell;
  cell.task_id = task.id;
  cell.fraction = fraction;
  cell.seed = seed;
  try {
    FineTuneConfig cfg = base;
    cfg.labeled_fraction = fraction;
    cfg.target_num_classes = task.classes.size();
    cfg.train.seed = cell_seed(seed, task.id, fraction_index);
    const ModelState prepared = prepare_finetune(backbone, cfg);
    auto [tuned, history] = finetune(prepared, task, data, cfg);
    const auto eval = evaluate(tuned, data.test);
    cell.accuracy = eval.accuracy;
    cell.confusion = eval.confusion;
    cell.train_samples = stratified_fraction(data, fraction, mix_seed(cfg.train.seed, 0x53554253ULL)).size();
    cell.epochs_run = history.epochs_run();
    cell.frozen_intact = frozen_layers_intact(backbone, tuned, cfg.trainable_prefix);
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

TaskRow run_target_task(const ModelState& backbone, const TargetTask& task, const DatasetSplit& data,
                        const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                        const FineTuneConfig& base, std::size_t jobs) {
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("run_target_task: fraction " + format_real(f) + " outside (0, 1]");
  }
  TaskRow row;
  row.task_id = task.id;
  const std::size_t total = fractions.size() * seeds.size();
  row.cells.resize(total);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const std::size_t fi = k / seeds.size();
      row.cells[k] = run_cell(backbone, task, data, fractions[fi], fi, seeds[k % seeds.size()], base);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(total, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    std::vector<const CellResult*> group;
    for (std::size_t si = 0; si < seeds.size(); ++si) group.push_back(&row.cells[fi * seeds.size() + si]);
    row.columns.push_back(summarize(fractions[fi], group));
  }
  return row;
}

}  // namespace motorfm
