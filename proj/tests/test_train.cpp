#include <stdexcept>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "motorfm/evaluate.hpp"
#include "motorfm/finetune.hpp"
#include "motorfm/train.hpp"

using namespace motorfm;

namespace {

// Class c is a tone at (c + 1) cycles per 8 samples plus noise.
WindowedSample tone_window(std::size_t len, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p = phase(rng);
  WindowedSample w;
  w.label = c;
  w.origin.record_id = "tone" + std::to_string(seed);
  for (std::size_t i = 0; i < len; ++i) {
    w.values.push_back(std::sin(2.0 * std::numbers::pi * (c + 1) * static_cast<double>(i) / 8.0 + p) + n(rng));
  }
  normalize_in_place(w.values);
  return w;
}

DatasetSplit tone_split(std::size_t classes, std::size_t per_class, std::size_t len, std::uint64_t seed) {
  DatasetSplit s;
  for (std::size_t c = 0; c < classes; ++c) s.label_map.push_back("c" + std::to_string(c));
  std::uint64_t k = seed * 1000;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) s.train.push_back(tone_window(len, static_cast<int>(c), ++k));
    for (std::size_t i = 0; i < 3; ++i) s.validation.push_back(tone_window(len, static_cast<int>(c), ++k));
    for (std::size_t i = 0; i < 3; ++i) s.test.push_back(tone_window(len, static_cast<int>(c), ++k));
  }
  return s;
}

TargetTask tone_task(std::size_t classes) {
  const FaultClass faults[] = {FaultClass::healthy, FaultClass::inner_race, FaultClass::outer_race};
  TargetTask t;
  t.id = "tones";
  t.machine_id = "X";
  t.cohorts = {"X"};
  for (std::size_t c = 0; c < classes; ++c) t.classes.push_back({"c" + std::to_string(c), {faults[c]}});
  return t;
}

FineTuneConfig quick_finetune(std::size_t classes) {
  FineTuneConfig cfg;
  cfg.target_num_classes = classes;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 4;
  cfg.train.patience = 0;
  return cfg;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("epochs"), std::invalid_argument);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.clip_norm = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("initial loss is close to ln M") {
  const auto split = tone_split(3, 8, 64, 1);
  const auto model = build_backbone(3, 5);
  const auto batch = make_batch(split.train);
  std::vector<int> y;
  for (const auto& s : split.train) y.push_back(s.label);
  CHECK(std::abs(batch_loss(model, batch, y) - std::log(3.0)) < 0.3);
}

TEST_CASE("training is deterministic and restores the best epoch") {
  const auto split = tone_split(2, 6, 32, 2);
  Architecture a;
  a.conv_layers = 3;
  a.channels = 8;
  a.num_classes = 2;
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.seed = 11;
  auto m1 = build_model(a, 1);
  auto m2 = build_model(a, 1);
  const auto h1 = train_model(m1, split.train, split.validation, cfg);
  const auto h2 = train_model(m2, split.train, split.validation, cfg);
  CHECK(h1.train_loss == h2.train_loss);
  for (std::size_t i = 0; i < m1.layers.size(); ++i) CHECK(m1.layers[i].weight == m2.layers[i].weight);
  CHECK(h1.epochs_run() == 6);
  const double restored = evaluate(m1, split.validation).accuracy;
  REQUIRE(h1.best_epoch.has_value());
  CHECK(restored == h1.val_accuracy[*h1.best_epoch]);

  // Training on flipped labels only makes the model worse on the true
  // validation labels, so the starting parameters are kept.
  std::vector<WindowedSample> flipped = split.train;
  for (auto& w : flipped) w.label = 1 - w.label;
  TrainConfig longer = cfg;
  longer.epochs = 60;
  longer.adam.learning_rate = 1e-2;
  longer.patience = 10;
  train_model(m1, split.train, split.validation, longer);
  REQUIRE(evaluate(m1, split.validation).accuracy == 100.0);
  const auto start = m1;
  const auto h3 = train_model(m1, flipped, split.validation, cfg);
  CHECK_FALSE(h3.best_epoch.has_value());
  for (std::size_t i = 0; i < m1.layers.size(); ++i) CHECK(m1.layers[i].weight == start.layers[i].weight);

  std::vector<WindowedSample> bad = split.train;
  bad[0].label = 5;
  CHECK_THROWS_WITH_AS(train_model(m1, bad, {}, cfg), doctest::Contains("label 5"), std::invalid_argument);
  CHECK_THROWS_AS(train_model(m1, {}, {}, cfg), std::invalid_argument);
}

TEST_CASE("a small network overfits a small set") {
  const auto split = tone_split(2, 8, 32, 3);
  Architecture a;
  a.conv_layers = 2;
  a.channels = 8;
  a.num_classes = 2;
  auto model = build_model(a, 3);
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.batch_size = 16;
  cfg.adam.learning_rate = 0.01;
  train_model(model, split.train, {}, cfg);
  CHECK(evaluate(model, split.train).accuracy == 100.0);
}

TEST_CASE("prepare_finetune freezes all but the leading conv layers") {
  const auto backbone = build_backbone(8, 1);
  FineTuneConfig cfg;
  cfg.target_num_classes = 2;
  const auto m = prepare_finetune(backbone, cfg);
  const auto mask = m.trainable_mask();
  REQUIRE(mask.size() == 17);
  for (std::size_t i = 0; i < 3; ++i) CHECK(mask[i]);
  for (std::size_t i = 3; i < 16; ++i) CHECK_FALSE(mask[i]);
  CHECK(mask[16]);
  CHECK(m.trainable_parameter_count() == 256 + 2 * 12352 + 65 * 2);
  CHECK(m.num_classes() == 2);

  cfg.trainable_prefix = 16;
  CHECK_THROWS_AS(prepare_finetune(backbone, cfg), std::invalid_argument);
  cfg.trainable_prefix = 3;
  Architecture small;
  small.conv_layers = 2;
  CHECK_THROWS_WITH_AS(prepare_finetune(build_model(small, 0), cfg), doctest::Contains("fingerprint"),
                       std::invalid_argument);
}

TEST_CASE("new heads depend only on seed and class count") {
  FineTuneConfig cfg;
  cfg.target_num_classes = 4;
  cfg.train.seed = 21;
  const auto a = prepare_finetune(build_backbone(8, 1), cfg);
  const auto b = prepare_finetune(build_backbone(5, 2), cfg);
  CHECK(a.layers.back().weight == b.layers.back().weight);
  cfg.train.seed = 22;
  CHECK(prepare_finetune(build_backbone(8, 1), cfg).layers.back().weight != a.layers.back().weight);
}

TEST_CASE("fine-tuning leaves frozen layers bitwise intact") {
  const auto backbone = build_backbone(8, 4);
  const auto split = tone_split(2, 6, 48, 4);
  const auto task = tone_task(2);
  auto cfg = quick_finetune(2);
  const auto prepared = prepare_finetune(backbone, cfg);
  const auto [tuned, hist] = finetune(prepared, task, split, cfg);
  CHECK(frozen_layers_intact(backbone, tuned, 3));
  CHECK(tuned.layers[0].weight != backbone.layers[0].weight);
  CHECK(tuned.label_map == task.class_names());
  CHECK(hist.epochs_run() == 3);

  cfg.trainable_prefix = 0;
  const auto probe = prepare_finetune(backbone, cfg);
  CHECK(probe.trainable_parameter_count() == 65 * 2);
  const auto [linear, h2] = finetune(probe, task, split, cfg);
  CHECK(frozen_layers_intact(backbone, linear, 0));

  auto tampered = tuned;
  tampered.layers[7].bias[0] += 1e-300;
  CHECK_FALSE(frozen_layers_intact(backbone, tampered, 3));
}

TEST_CASE("head warm-up moves only the head and lowers the loss") {
  const auto backbone = build_backbone(8, 5);
  const auto split = tone_split(2, 8, 48, 5);
  FineTuneConfig cfg = quick_finetune(2);
  const auto prepared = prepare_finetune(backbone, cfg);
  const Tensor batch = make_batch(split.train);
  std::vector<int> labels;
  for (const auto& s : split.train) labels.push_back(s.label);

  auto warmed = prepared;
  warm_up_head(warmed, split.train, 200, 1e-2);
  CHECK(batch_loss(warmed, batch, labels) < batch_loss(prepared, batch, labels));
  for (std::size_t i = 0; i < warmed.head_begin(); ++i) {
    CHECK(warmed.layers[i].weight == prepared.layers[i].weight);
    CHECK(warmed.layers[i].bias == prepared.layers[i].bias);
  }
  CHECK(warmed.layers.back().weight != prepared.layers.back().weight);

  auto untouched = prepared;
  warm_up_head(untouched, split.train, 0, 1e-2);
  CHECK(untouched.layers.back().weight == prepared.layers.back().weight);

  cfg.head_warmup_steps = 10;
  cfg.head_warmup_lr = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("head_warmup_lr"), std::invalid_argument);
}

TEST_CASE("finetune rejects mismatched tasks") {
  const auto backbone = build_backbone(8, 4);
  const auto split = tone_split(2, 4, 32, 5);
  auto cfg = quick_finetune(3);
  const auto prepared = prepare_finetune(backbone, cfg);
  CHECK_THROWS_AS(finetune(prepared, tone_task(2), split, cfg), std::invalid_argument);
  TargetTask t = tone_task(2);
  t.classes[1].faults = {FaultClass::healthy};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("target task rows are independent of the thread count") {
  const auto backbone = build_backbone(8, 6);
  const auto split = tone_split(2, 10, 32, 6);
  const auto task = tone_task(2);
  auto cfg = quick_finetune(2);
  cfg.train.epochs = 2;
  const std::vector<double> fractions{0.2, 1.0};
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto serial = run_target_task(backbone, task, split, fractions, seeds, cfg, 1);
  const auto parallel = run_target_task(backbone, task, split, fractions, seeds, cfg, 3);
  REQUIRE(serial.cells.size() == 4);
  REQUIRE(parallel.cells.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(serial.cells[i].ok);
    CHECK(serial.cells[i].accuracy == parallel.cells[i].accuracy);
    CHECK(serial.cells[i].confusion == parallel.cells[i].confusion);
    CHECK(serial.cells[i].frozen_intact);
  }
  CHECK(serial.cells[0].train_samples == 4);
  CHECK(serial.cells[2].train_samples == 20);

  const auto single = run_target_task(backbone, task, split, fractions, {1}, cfg, 1);
  CHECK(single.columns[0].stddev == 0.0);
}

TEST_CASE("cells record errors instead of throwing") {
  const auto backbone = build_backbone(8, 6);
  auto split = tone_split(2, 4, 32, 7);
  split.train.erase(split.train.begin(), split.train.begin() + 4);  // class 0 now has no training data
  const auto cell = run_cell(backbone, tone_task(2), split, 0.5, 0, 1, quick_finetune(2));
  CHECK_FALSE(cell.ok);
  CHECK(cell.error.find("c0") != std::string::npos);
}

TEST_CASE("evaluation on hand-built predictions") {
  const std::vector<int> truth{0, 0, 1, 1, 2};
  const std::vector<int> pred{0, 1, 1, 1, 0};
  const auto r = evaluate_predictions(pred, truth, 3);
  CHECK(r.correct == 3);
  CHECK(r.accuracy == doctest::Approx(60.0));
  CHECK(r.confusion[0][1] == 1);
  CHECK(r.confusion[2][0] == 1);
  CHECK(r.confusion[1][1] == 2);
  CHECK_THROWS_AS(evaluate_predictions({}, {}, 3), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_predictions(pred, std::vector<int>{0}, 3), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_predictions(pred, std::vector<int>{0, 0, 1, 1, 3}, 3), std::invalid_argument);

  std::vector<const CellResult*> none;
  const auto s = summarize(0.05, none);
  CHECK(s.ok_cells == 0);
  CellResult a, b, c;
  a.ok = b.ok = true;
  a.accuracy = 90.0;
  b.accuracy = 100.0;
  c.ok = false;
  const auto t = summarize(0.05, {&a, &b, &c});
  CHECK(t.mean == 95.0);
  CHECK(t.stddev == 5.0);
  CHECK(t.failed_cells == 1);
}
