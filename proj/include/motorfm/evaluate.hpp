#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "motorfm/model.hpp"
#include "motorfm/signal.hpp"

namespace motorfm {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::size_t correct = 0;
  std::size_t total = 0;
  /// confusion[true][predicted]
  ConfusionMatrix confusion;
};

EvalResult evaluate_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes);

EvalResult evaluate(const ModelState& model, std::span<const WindowedSample> test);

}  // namespace motorfm
