#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "motorfm/adam.hpp"

using namespace motorfm;

TEST_CASE("adam matches a hand-rolled three step trace") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  AdamState state(cfg);
  Tensor w = Tensor::from({1.0, -2.0});
  const double grads[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.75, 0.0}};

  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    Tensor g = Tensor::from({grads[t - 1][0], grads[t - 1][1]});
    const ParamRef p{&w, &g, true};
    adam_step(state, std::span(&p, 1));
    for (int j = 0; j < 2; ++j) {
      m[j] = 0.9 * m[j] + 0.1 * grads[t - 1][j];
      v[j] = 0.999 * v[j] + 0.001 * grads[t - 1][j] * grads[t - 1][j];
      const double mh = m[j] / (1 - std::pow(0.9, t));
      const double vh = v[j] / (1 - std::pow(0.999, t));
      ref[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w[0] == doctest::Approx(ref[0]).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  }
  // first step moves each weight by about the learning rate
  CHECK(state.step == 3);
}

TEST_CASE("adam leaves frozen blocks untouched") {
  AdamState state(AdamConfig{});
  Tensor a = Tensor::from({1.0, 2.0, 3.0});
  Tensor b = Tensor::from({4.0, 5.0});
  const Tensor b_before = b;
  Tensor ga = Tensor::from({1.0, 1.0, 1.0});
  Tensor gb = Tensor::from({1.0, 1.0});
  const ParamRef params[] = {{&a, &ga, true}, {&b, &gb, false}};
  for (int i = 0; i < 5; ++i) adam_step(state, params);
  CHECK(b == b_before);
  CHECK(a[0] < 1.0);
}

TEST_CASE("adam config and shape validation") {
  AdamConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(AdamState{bad}, std::invalid_argument);
  bad = {};
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  AdamState state(AdamConfig{});
  Tensor a = Tensor::from({1.0, 2.0});
  Tensor g = Tensor::from({1.0});
  const ParamRef p{&a, &g, true};
  CHECK_THROWS_AS(adam_step(state, std::span(&p, 1)), std::invalid_argument);
}
