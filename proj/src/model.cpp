#include "motorfm/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "motorfm/rng.hpp"

namespace motorfm {

namespace {

using nlohmann::json;

std::size_t feature_width(const Architecture& arch) {
  return arch.conv_layers > 0 ? arch.channels : arch.input_channels;
}

Tensor uniform_tensor(Shape shape, double bound, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Layer conv_layer(std::size_t index, std::size_t in, const Architecture& arch, std::uint64_t seed) {
  const double fan_in = static_cast<double>(in * arch.kernel);
  Layer l;
  l.name = "conv_" + std::to_string(index + 1);
  l.kind = LayerKind::conv;
  l.weight = uniform_tensor({arch.channels, in, arch.kernel}, std::sqrt(6.0 / fan_in), mix_seed(seed, index));
  l.bias = Tensor({arch.channels});
  return l;
}

Layer pool_layer() {
  Layer l;
  l.name = "gap";
  l.kind = LayerKind::pool;
  l.trainable = false;
  return l;
}

std::string layer_signature(const Layer& l) {
  switch (l.kind) {
    case LayerKind::conv:
      return "conv" + shape_str(l.weight.shape());
    case LayerKind::pool:
      return "gap";
    case LayerKind::dense:
      return "dense" + shape_str(l.weight.shape());
  }
  return "?";
}

std::string padding_name(Padding p) { return p == Padding::same ? "same" : "valid"; }

Padding parse_padding(const std::string& s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw std::invalid_argument("unknown padding '" + s + "'");
}

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::pool:
      return "pool";
    case LayerKind::dense:
      return "dense";
  }
  return "?";
}

void check_batch(const ModelState& model, const Tensor& batch) {
  if (batch.rank() != 3 || batch.dim(1) != model.arch.input_channels) {
    throw std::invalid_argument("model input must be [B x " + std::to_string(model.arch.input_channels) +
                                " x L], got " + shape_str(batch.shape()));
  }
}

}  // namespace

std::string Fingerprint::str() const {
  std::ostringstream os;
  os << std::hex;
  os.fill('0');
  os.width(16);
  os << body << '-';
  os.width(16);
  os << head;
  return os.str();
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

std::size_t ModelState::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    if (l.trainable) n += l.parameter_count();
  }
  return n;
}

std::vector<bool> ModelState::trainable_mask() const {
  std::vector<bool> mask;
  mask.reserve(layers.size());
  for (const auto& l : layers) mask.push_back(l.trainable);
  return mask;
}

Fingerprint ModelState::fingerprint() const {
  std::string body = "in" + std::to_string(arch.input_channels) + ";" + padding_name(arch.padding) + ";";
  std::string head;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    (i < head_begin() ? body : head) += layer_signature(layers[i]) + ";";
  }
  return {hash_string(body), hash_string(head)};
}

void ModelState::validate() const {
  const std::size_t expected = arch.conv_layers + 2 + (arch.head_hidden > 0 ? 1 : 0);
  if (layers.size() != expected) {
    throw std::invalid_argument("model has " + std::to_string(layers.size()) + " layers, architecture expects " +
                                std::to_string(expected));
  }
  for (std::size_t i = 0; i < arch.conv_layers; ++i) {
    const auto in = i == 0 ? arch.input_channels : arch.channels;
    const Shape want{arch.channels, in, arch.kernel};
    if (layers[i].kind != LayerKind::conv || layers[i].weight.shape() != want ||
        layers[i].bias.shape() != Shape{arch.channels}) {
      throw std::invalid_argument("layer " + layers[i].name + " does not match architecture " + shape_str(want));
    }
  }
  if (layers[arch.conv_layers].kind != LayerKind::pool) throw std::invalid_argument("expected pooling layer");
  std::size_t width = feature_width(arch);
  for (std::size_t i = head_begin(); i < layers.size(); ++i) {
    const bool last = i + 1 == layers.size();
    const auto out = last ? arch.num_classes : arch.head_hidden;
    if (layers[i].kind != LayerKind::dense || layers[i].weight.shape() != Shape{out, width} ||
        layers[i].bias.shape() != Shape{out}) {
      throw std::invalid_argument("head layer " + layers[i].name + " does not match architecture");
    }
    width = out;
  }
  if (!label_map.empty() && label_map.size() != arch.num_classes) {
    throw std::invalid_argument("label map has " + std::to_string(label_map.size()) + " names for " +
                                std::to_string(arch.num_classes) + " classes");
  }
}

void replace_head(ModelState& model, std::size_t num_classes, std::size_t hidden, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("head needs at least 2 classes, got " + std::to_string(num_classes));
  model.layers.resize(model.head_begin());
  model.arch.num_classes = num_classes;
  model.arch.head_hidden = hidden;
  const std::uint64_t head_seed = mix_seed(seed, {0x4845414455ULL, num_classes, hidden});
  std::size_t width = feature_width(model.arch);
  if (hidden > 0) {
    Layer h;
    h.name = "dense_hidden";
    h.kind = LayerKind::dense;
    h.weight = uniform_tensor({hidden, width}, std::sqrt(6.0 / static_cast<double>(width)), mix_seed(head_seed, 1));
    h.bias = Tensor({hidden});
    model.layers.push_back(std::move(h));
    width = hidden;
  }
  Layer out;
  out.name = "dense";
  out.kind = LayerKind::dense;
  out.weight = uniform_tensor({num_classes, width}, std::sqrt(6.0 / static_cast<double>(width + num_classes)),
                              mix_seed(head_seed, 2));
  out.bias = Tensor({num_classes});
  model.layers.push_back(std::move(out));
  model.label_map.clear();
}

ModelState build_model(const Architecture& arch, std::uint64_t seed) {
  if (arch.channels == 0 || arch.kernel == 0 || arch.input_channels == 0) {
    throw std::invalid_argument("architecture dimensions must be positive");
  }
  if (!(arch.leaky_alpha >= 0.0)) throw std::invalid_argument("leaky_alpha must be >= 0");
  ModelState m;
  m.arch = arch;
  for (std::size_t i = 0; i < arch.conv_layers; ++i) {
    m.layers.push_back(conv_layer(i, i == 0 ? arch.input_channels : arch.channels, arch, seed));
  }
  m.layers.push_back(pool_layer());
  replace_head(m, arch.num_classes, arch.head_hidden, seed);
  return m;
}

ModelState build_backbone(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) {
    throw std::invalid_argument("build_backbone: num_classes must be >= 2, got " + std::to_string(num_classes));
  }
  Architecture arch;
  arch.num_classes = num_classes;
  return build_model(arch, seed);
}

std::uint64_t backbone_body_fingerprint() {
  static const std::uint64_t fp = build_backbone(2, 0).fingerprint().body;
  return fp;
}

Tensor make_batch(std::span<const WindowedSample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const auto len = samples.front()->values.size();
  Tensor batch({samples.size(), 1, len});
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s]->values.size() != len) {
      throw std::invalid_argument("make_batch: window lengths differ (" + std::to_string(len) + " vs " +
                                  std::to_string(samples[s]->values.size()) + ")");
    }
    std::copy(samples[s]->values.begin(), samples[s]->values.end(), batch.data().begin() + s * len);
  }
  return batch;
}

Tensor make_batch(std::span<const WindowedSample> samples) {
  std::vector<const WindowedSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(std::span<const WindowedSample* const>(ptrs));
}

Tensor body_features(const ModelState& model, const Tensor& batch) {
  check_batch(model, batch);
  Tensor x = batch;
  for (std::size_t i = 0; i < model.arch.conv_layers; ++i) {
    const auto& l = model.layers[i];
    x = kernels::leaky_relu(kernels::conv1d(x, l.weight, l.bias, model.arch.padding), model.arch.leaky_alpha);
  }
  return kernels::global_avg_pool(x);
}

Tensor head_logits(const ModelState& model, const Tensor& features) {
  Tensor x = features;
  for (std::size_t i = model.head_begin(); i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    x = kernels::dense(x, l.weight, l.bias);
    if (i + 1 < model.layers.size()) x = kernels::leaky_relu(x, model.arch.leaky_alpha);
  }
  return x;
}

Tensor forward_logits(const ModelState& model, const Tensor& batch) {
  return head_logits(model, body_features(model, batch));
}

std::vector<int> predict(const ModelState& model, std::span<const WindowedSample> samples, std::size_t batch_size) {
  std::vector<int> out;
  out.reserve(samples.size());
  const std::size_t m = model.num_classes();
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto n = std::min(batch_size, samples.size() - start);
    const Tensor logits = forward_logits(model, make_batch(samples.subspan(start, n)));
    for (std::size_t s = 0; s < n; ++s) {
      const auto row = logits.data().subspan(s * m, m);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

LossAndGrads loss_and_gradients(const ModelState& model, const Tensor& batch, std::span<const int> labels) {
  check_batch(model, batch);
  Tape tape;
  std::vector<std::pair<Var, Var>> params(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.has_params()) continue;
    params[i] = {tape.leaf(l.weight, l.trainable), tape.leaf(l.bias, l.trainable)};
  }
  Var x = tape.leaf(batch, false);
  for (std::size_t i = 0; i < model.arch.conv_layers; ++i) {
    x = tape.leaky_relu(tape.conv1d(x, params[i].first, params[i].second, model.arch.padding),
                        model.arch.leaky_alpha);
  }
  x = tape.global_avg_pool(x);
  for (std::size_t i = model.head_begin(); i < model.layers.size(); ++i) {
    x = tape.dense(x, params[i].first, params[i].second);
    if (i + 1 < model.layers.size()) x = tape.leaky_relu(x, model.arch.leaky_alpha);
  }
  const Var loss = tape.softmax_sparse_ce(x, labels);
  tape.backward(loss);

  LossAndGrads out;
  out.loss = tape.value(loss).item();
  out.logits = tape.value(x);
  out.grads.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.has_params() || !l.trainable) continue;
    out.grads[i] = {true, tape.grad(params[i].first), tape.grad(params[i].second)};
  }
  return out;
}

double batch_loss(const ModelState& model, const Tensor& batch, std::span<const int> labels) {
  const Tensor logits = forward_logits(model, batch);
  const std::size_t m = model.num_classes();
  if (labels.size() != logits.dim(0)) throw std::invalid_argument("batch_loss: label count mismatch");
  double total = 0.0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    total += kernels::softmax_sparse_ce(logits.data().subspan(s * m, m), labels[s]);
  }
  return total / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  model.validate();
  json header;
  header["fingerprint"] = model.fingerprint().str();
  header["architecture"] = {
      {"conv_layers", model.arch.conv_layers},     {"channels", model.arch.channels},
      {"kernel", model.arch.kernel},               {"input_channels", model.arch.input_channels},
      {"num_classes", model.arch.num_classes},     {"head_hidden", model.arch.head_hidden},
      {"leaky_alpha", model.arch.leaky_alpha},     {"padding", padding_name(model.arch.padding)},
  };
  json layers = json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"name", l.name},
                      {"kind", kind_name(l.kind)},
                      {"weight_shape", l.has_params() ? l.weight.shape() : Shape{}},
                      {"bias_shape", l.has_params() ? l.bias.shape() : Shape{}},
                      {"trainable", l.trainable}});
  }
  header["layers"] = layers;
  header["label_map"] = model.label_map;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << "MOTORFM-CHECKPOINT " << kCheckpointVersion << '\n' << header.dump() << '\n';
  for (const auto& l : model.layers) {
    if (!l.has_params()) continue;
    out.write(reinterpret_cast<const char*>(l.weight.data().data()),
              static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(l.bias.data().data()),
              static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  constexpr std::string_view kMagic = "MOTORFM-CHECKPOINT ";
  if (magic.rfind(kMagic, 0) != 0) {
    throw std::invalid_argument(path.string() + " is not a motorfm checkpoint (bad magic line)");
  }
  const auto version = magic.substr(kMagic.size());
  if (version != std::to_string(kCheckpointVersion)) {
    throw std::invalid_argument(path.string() + ": unsupported checkpoint version '" + version + "' (expected " +
                                std::to_string(kCheckpointVersion) + ")");
  }
  std::string header_line;
  std::getline(in, header_line);
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  const auto& a = header.at("architecture");
  Architecture arch;
  arch.conv_layers = a.at("conv_layers").get<std::size_t>();
  arch.channels = a.at("channels").get<std::size_t>();
  arch.kernel = a.at("kernel").get<std::size_t>();
  arch.input_channels = a.at("input_channels").get<std::size_t>();
  arch.num_classes = a.at("num_classes").get<std::size_t>();
  arch.head_hidden = a.at("head_hidden").get<std::size_t>();
  arch.leaky_alpha = a.at("leaky_alpha").get<double>();
  arch.padding = parse_padding(a.at("padding").get<std::string>());

  ModelState m = build_model(arch, 0);
  const auto& layers = header.at("layers");
  if (layers.size() != m.layers.size()) throw std::invalid_argument(path.string() + ": layer count mismatch");
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    l.name = layers[i].at("name").get<std::string>();
    l.trainable = layers[i].at("trainable").get<bool>();
    if (!l.has_params()) continue;
    if (layers[i].at("weight_shape").get<Shape>() != l.weight.shape()) {
      throw std::invalid_argument(path.string() + ": layer " + l.name + " shape disagrees with architecture");
    }
    in.read(reinterpret_cast<char*>(l.weight.data().data()),
            static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(l.bias.data().data()), static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
    if (!in) throw std::invalid_argument(path.string() + ": truncated parameter data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::invalid_argument(path.string() + ": trailing bytes");
  m.label_map = header.at("label_map").get<std::vector<std::string>>();
  m.validate();
  const auto stored = header.at("fingerprint").get<std::string>();
  if (stored != m.fingerprint().str()) {
    throw std::invalid_argument(path.string() + ": fingerprint " + stored + " does not match layer shapes (" +
                                m.fingerprint().str() + ")");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Finite differences

GradCheckReport finite_difference_check(const ModelState& model, const WindowedSample& sample, double step,
                                        double tolerance, const GradientFn& analytic) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  const std::vector<const WindowedSample*> one{&sample};
  const Tensor batch = make_batch(std::span<const WindowedSample* const>(one));
  const std::vector<int> labels{sample.label};
  const auto grads = analytic ? analytic(model, batch, labels) : loss_and_gradients(model, batch, labels);

  GradCheckReport report;
  ModelState probe = model;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    if (!layer.has_params() || !layer.trainable) continue;
    LayerCheck check;
    check.layer = layer.name;
    if (i >= grads.grads.size() || !grads.grads[i].present) {
      check.passed = false;
      check.max_rel_error = INFINITY;
      report.layers.push_back(check);
      report.passed = false;
      continue;
    }
    const auto probe_block = [&](Tensor& param, const Tensor& grad) {
      for (std::size_t j = 0; j < param.size(); ++j) {
        const double saved = param[j];
        param[j] = saved + step;
        const double up = batch_loss(probe, batch, labels);
        param[j] = saved - step;
        const double down = batch_loss(probe, batch, labels);
        param[j] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double abs_err = std::abs(grad[j] - numeric);
        const double rel_err = abs_err / std::max({std::abs(grad[j]), std::abs(numeric), 1e-7});
        check.max_abs_error = std::max(check.max_abs_error, abs_err);
        check.max_rel_error = std::max(check.max_rel_error, rel_err);
        ++check.parameters;
      }
    };
    probe_block(probe.layers[i].weight, grads.grads[i].weight);
    probe_block(probe.layers[i].bias, grads.grads[i].bias);
    check.passed = check.max_rel_error <= tolerance;
    report.passed = report.passed && check.passed;
    report.layers.push_back(check);
  }
  return report;
}

}  // namespace motorfm
