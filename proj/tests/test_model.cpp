#include <stdexcept>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "motorfm/model.hpp"

using namespace motorfm;

namespace {

WindowedSample random_window(std::size_t len, int label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  WindowedSample w;
  w.label = label;
  for (std::size_t i = 0; i < len; ++i) w.values.push_back(n(rng));
  return w;
}

ModelState small_model(std::uint64_t seed) {
  Architecture a;
  a.conv_layers = 2;
  a.channels = 8;
  a.num_classes = 3;
  return build_model(a, seed);
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("backbone parameter count matches a per-layer sum") {
  for (std::size_t m : {2, 3, 5, 8}) {
    const auto model = build_backbone(m, 1);
    std::size_t by_hand = (1 * 3 + 1) * 64;
    for (int i = 1; i < 15; ++i) by_hand += (64 * 3 + 1) * 64;
    by_hand += (64 + 1) * m;
    CHECK(model.parameter_count() == by_hand);
    CHECK(backbone_parameter_count(m) == by_hand);
  }
  CHECK(build_backbone(8, 0).parameter_count() == 173704);
  CHECK(build_backbone(8, 0).layers.size() == 17);
  CHECK_THROWS_AS(build_backbone(1, 0), std::invalid_argument);
}

TEST_CASE("logits length does not depend on window length") {
  const auto model = build_backbone(5, 2);
  for (std::size_t len : {3, 64, 512, 2048}) {
    const std::vector<WindowedSample> batch{random_window(len, 0, len), random_window(len, 1, len + 1)};
    const auto logits = forward_logits(model, make_batch(batch));
    CHECK(logits.shape() == Shape{2, 5});
    CHECK(logits.all_finite());
  }
}

TEST_CASE("batched forward equals per-sample forward") {
  const auto model = small_model(4);
  std::vector<WindowedSample> s{random_window(40, 0, 1), random_window(40, 1, 2), random_window(40, 2, 3)};
  const auto all = forward_logits(model, make_batch(s));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto one = forward_logits(model, make_batch(std::span(&s[i], 1)));
    for (std::size_t k = 0; k < 3; ++k) CHECK(all.at(i, k) == doctest::Approx(one.at(0, k)).epsilon(1e-12));
  }
  std::vector<WindowedSample> ragged{random_window(40, 0, 1), random_window(41, 0, 1)};
  CHECK_THROWS_AS(make_batch(ragged), std::invalid_argument);
}

TEST_CASE("fingerprints separate body and head") {
  auto a = build_backbone(8, 1);
  const auto b = build_backbone(8, 2);
  CHECK(a.fingerprint().body == b.fingerprint().body);
  CHECK(a.fingerprint().body == backbone_body_fingerprint());
  const auto body = a.fingerprint().body;
  const auto head = a.fingerprint().head;
  replace_head(a, 3, 0, 9);
  CHECK(a.fingerprint().body == body);
  CHECK(a.fingerprint().head != head);
  CHECK(small_model(1).fingerprint().body != body);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  auto model = build_backbone(8, 3);
  model.label_map = {"a", "b", "c", "d", "e", "f", "g", "h"};
  model.layers[4].trainable = false;
  const auto path = temp_file("motorfm_ckpt_test.bin");
  save_checkpoint(model, path);
  const auto back = load_checkpoint(path);
  REQUIRE(back.layers.size() == model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    CHECK(back.layers[i].weight == model.layers[i].weight);
    CHECK(back.layers[i].bias == model.layers[i].bias);
    CHECK(back.layers[i].trainable == model.layers[i].trainable);
  }
  CHECK(back.label_map == model.label_map);
  CHECK(back.arch == model.arch);
  CHECK(back.fingerprint() == model.fingerprint());

  const auto window = random_window(128, 0, 5);
  const auto l1 = forward_logits(model, make_batch(std::span(&window, 1)));
  const auto l2 = forward_logits(back, make_batch(std::span(&window, 1)));
  CHECK(l1 == l2);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto model = small_model(1);
  model.label_map = {"x", "y", "z"};
  const auto path = temp_file("motorfm_ckpt_bad.bin");
  save_checkpoint(model, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto write = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
  };

  write(bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"), std::invalid_argument);
  write(bytes + "x");
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"), std::invalid_argument);
  write("GARBAGE\n" + bytes);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), std::invalid_argument);
  std::string v2 = bytes;
  v2.replace(v2.find("CHECKPOINT 1"), 12, "CHECKPOINT 9");
  write(v2);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), std::invalid_argument);
  std::string fp = bytes;
  const auto at = fp.find("\"fingerprint\":\"") + 15;
  fp[at] = fp[at] == '0' ? '1' : '0';
  write(fp);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("fingerprint"), std::invalid_argument);
  CHECK_THROWS(load_checkpoint(temp_file("motorfm_no_such_checkpoint.bin")));
  std::filesystem::remove(path);
}

TEST_CASE("gradients agree with finite differences and a broken rule is caught") {
  const auto model = small_model(6);
  const auto sample = random_window(32, 2, 7);
  const auto report = finite_difference_check(model, sample, 1e-6, 1e-4);
  CHECK(report.passed);
  CHECK(report.layers.size() == 3);
  for (const auto& l : report.layers) CHECK(l.max_rel_error < 1e-4);

  // same gradients, but the first conv bias gradient is doubled
  const GradientFn broken = [](const ModelState& m, const Tensor& b, std::span<const int> y) {
    auto g = loss_and_gradients(m, b, y);
    for (auto& v : g.grads[0].bias.data()) v *= 2.0;
    return g;
  };
  const auto bad = finite_difference_check(model, sample, 1e-6, 1e-4, broken);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.layers[0].passed);
  CHECK(bad.layers[1].passed);
}

TEST_CASE("frozen layers get no gradient and loss matches batch_loss") {
  auto model = small_model(8);
  model.layers[0].trainable = false;
  std::vector<WindowedSample> s{random_window(24, 0, 1), random_window(24, 2, 2)};
  const auto batch = make_batch(s);
  const std::vector<int> y{0, 2};
  const auto g = loss_and_gradients(model, batch, y);
  CHECK_FALSE(g.grads[0].present);
  CHECK(g.grads[1].present);
  CHECK_FALSE(g.grads[2].present);
  CHECK(g.loss == doctest::Approx(batch_loss(model, batch, y)).epsilon(1e-13));
  CHECK(model.trainable_parameter_count() == model.parameter_count() - model.layers[0].parameter_count());
}
