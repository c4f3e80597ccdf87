#include "motorfm/evaluate.hpp"

#include <stdexcept>
#include <string>

#include "motorfm/train.hpp"

namespace motorfm {

EvalResult evaluate_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes) {
  if (truth.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (predicted.size() != truth.size()) throw std::invalid_argument("evaluate: prediction/label count mismatch");
  EvalResult r;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = truth[i];
    const auto p = predicted[i];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0 || static_cast<std::size_t>(p) >= num_classes) {
      throw std::invalid_argument("evaluate: label outside [0, " + std::to_string(num_classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    if (t == p) ++r.correct;
  }
  r.total = truth.size();
  r.accuracy = 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

EvalResult evaluate(const ModelState& model, std::span<const WindowedSample> test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  check_labels(test, model.num_classes(), "evaluate");
  const auto predicted = predict(model, test);
  std::vector<int> truth;
  truth.reserve(test.size());
  for (const auto& s : test) truth.push_back(s.label);
  return evaluate_predictions(predicted, truth, model.num_classes());
}

}  // namespace motorfm
