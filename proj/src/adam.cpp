#include "motorfm/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace motorfm {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adam: learning_rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");
}

void adam_step(AdamState& state, std::span<const ParamRef> params) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->shape());
      state.second_moment.emplace_back(p.value->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam: state tracks " + std::to_string(state.first_moment.size()) +
                                " parameter blocks, step received " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.value->shape() != state.first_moment[i].shape()) {
      throw std::invalid_argument("adam: block " + std::to_string(i) + " has shape " +
                                  shape_str(p.value->shape()) + " but moments are " +
                                  shape_str(state.first_moment[i].shape()));
    }
    if (p.grad && p.grad->shape() != p.value->shape()) {
      throw std::invalid_argument("adam: block " + std::to_string(i) + " gradient shape " +
                                  shape_str(p.grad->shape()) + " differs from parameter shape " +
                                  shape_str(p.value->shape()));
    }
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (!p.trainable) continue;
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    auto w = p.value->data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = p.grad ? (*p.grad)[j] : 0.0;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace motorfm
