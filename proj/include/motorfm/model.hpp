#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "motorfm/autodiff.hpp"
#include "motorfm/signal.hpp"
#include "motorfm/tensor.hpp"

namespace motorfm {

inline constexpr std::size_t kBackboneConvLayers = 15;
inline constexpr std::size_t kBackboneChannels = 64;
inline constexpr std::size_t kBackboneKernel = 3;

/// Shape of a conv stack -> global average pooling -> dense head network.
struct Architecture {
  std::size_t conv_layers = kBackboneConvLayers;
  std::size_t channels = kBackboneChannels;
  std::size_t kernel = kBackboneKernel;
  std::size_t input_channels = 1;
  std::size_t num_classes = 8;
  /// Width of an optional hidden dense layer in the head; 0 means none.
  std::size_t head_hidden = 0;
  double leaky_alpha = 0.01;
  Padding padding = Padding::same;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

enum class LayerKind { conv, pool, dense };

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::conv;
  Tensor weight;
  Tensor bias;
  bool trainable = true;

  bool has_params() const { return kind != LayerKind::pool; }
  std::size_t parameter_count() const { return has_params() ? weight.size() + bias.size() : 0; }
};

/// Hash of the feature extractor ("body") and of the head, kept separately so
/// a head swap leaves the body hash unchanged.
struct Fingerprint {
  std::uint64_t body = 0;
  std::uint64_t head = 0;

  std::string str() const;
  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

/// Layers are ordered conv_1..conv_N, gap, [dense_hidden,] dense.
struct ModelState {
  Architecture arch;
  std::vector<Layer> layers;
  std::vector<std::string> label_map;

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;
  std::vector<bool> trainable_mask() const;
  std::size_t num_classes() const { return arch.num_classes; }
  std::size_t head_begin() const { return arch.conv_layers + 1; }
  Fingerprint fingerprint() const;
  /// Throws if layer shapes disagree with `arch`.
  void validate() const;
};

ModelState build_model(const Architecture& arch, std::uint64_t seed);

/// The 15 x (64 filters, kernel 3) LeakyReLU backbone with GAP and a dense head.
ModelState build_backbone(std::size_t num_classes, std::uint64_t seed);

/// Closed form for build_backbone: (1*64*3 + 64) + 14*(64*64*3 + 64) + 65*num_classes.
constexpr std::size_t backbone_parameter_count(std::size_t num_classes) {
  return 256 + 14 * 12352 + 65 * num_classes;
}

/// Body fingerprint of any 15-layer backbone.
std::uint64_t backbone_body_fingerprint();

/// Replaces the head with a fresh one of `num_classes` outputs. The new
/// weights depend only on (seed, num_classes, hidden).
void replace_head(ModelState& model, std::size_t num_classes, std::size_t hidden, std::uint64_t seed);

/// Stacks equal-length windows into a [B, 1, L] batch.
Tensor make_batch(std::span<const WindowedSample> samples);
Tensor make_batch(std::span<const WindowedSample* const> samples);

/// Output of the conv stack and pooling, [B, features].
Tensor body_features(const ModelState& model, const Tensor& batch);

/// Applies the head layers to pooled features; returns [B, num_classes].
Tensor head_logits(const ModelState& model, const Tensor& features);

/// Inference-only forward pass; returns [B, num_classes] logits.
Tensor forward_logits(const ModelState& model, const Tensor& batch);
std::vector<int> predict(const ModelState& model, std::span<const WindowedSample> samples,
                         std::size_t batch_size = 64);

struct LayerGrad {
  bool present = false;
  Tensor weight;
  Tensor bias;
};

struct LossAndGrads {
  double loss = 0.0;
  Tensor logits;
  /// One entry per layer; `present` only for trainable layers with parameters.
  std::vector<LayerGrad> grads;
};

/// Mean cross-entropy of the batch and the gradients of every trainable layer.
LossAndGrads loss_and_gradients(const ModelState& model, const Tensor& batch, std::span<const int> labels);

/// Mean cross-entropy only (used by the finite-difference oracle).
double batch_loss(const ModelState& model, const Tensor& batch, std::span<const int> labels);

// Checkpoint file: the line "MOTORFM-CHECKPOINT <version>", one line of JSON
// describing architecture, fingerprint, layer shapes, trainable mask and label
// map, then every layer's weight and bias as little-endian float64 in layer order.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle

struct LayerCheck {
  std::string layer;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<LayerCheck> layers;
  bool passed = true;
};

using GradientFn = std::function<LossAndGrads(const ModelState&, const Tensor&, std::span<const int>)>;

/// Compares analytic gradients of every trainable parameter with central
/// differences of step `step`. Relative error is |a - n| / max(|a|, |n|, 1e-7).
/// Failures are reported, never thrown. `analytic` defaults to
/// loss_and_gradients and exists so broken rules can be fed in as a control.
GradCheckReport finite_difference_check(const ModelState& model, const WindowedSample& sample, double step,
                                        double tolerance, const GradientFn& analytic = {});

}  // namespace motorfm
