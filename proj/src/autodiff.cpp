#include "motorfm/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace motorfm {

namespace {

#if defined(__GLIBC__)
// Activations are a few hundred KB each. With glibc defaults they are mmapped
// or trimmed on free, and every training step pays the page faults again.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

AlignedBuffer& scratch(std::size_t n, int slot) {
  thread_local AlignedBuffer buffers[2];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

struct ConvGeometry {
  bool batched = false;
  std::size_t batch = 1;
  std::size_t in_channels = 0;
  std::size_t length = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t out_length = 0;
  std::size_t offset = 0;

  std::size_t col_rows() const { return in_channels * kernel; }
  Shape output_shape() const {
    if (batched) return {batch, out_channels, out_length};
    return {out_channels, out_length};
  }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding) {
  ConvGeometry g;
  if (input.rank() == 3) {
    g.batched = true;
    g.batch = input.dim(0);
    g.in_channels = input.dim(1);
    g.length = input.dim(2);
  } else if (input.rank() == 2) {
    g.in_channels = input.dim(0);
    g.length = input.dim(1);
  } else {
    throw std::invalid_argument("conv1d: input must be [C_in x L] or [B x C_in x L], got " +
                                shape_str(input.shape()));
  }
  if (weights.rank() != 3) {
    throw std::invalid_argument("conv1d: weights must be [C_out x C_in x K], got " + shape_str(weights.shape()));
  }
  if (weights.dim(1) != g.in_channels) {
    throw std::invalid_argument("conv1d: input " + shape_str(input.shape()) + " has " +
                                std::to_string(g.in_channels) + " channels but weights " +
                                shape_str(weights.shape()) + " expect " + std::to_string(weights.dim(1)));
  }
  g.out_channels = weights.dim(0);
  g.kernel = weights.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != g.out_channels) {
    throw std::invalid_argument("conv1d: bias " + shape_str(bias.shape()) + " does not match weights " +
                                shape_str(weights.shape()));
  }
  g.out_length = kernels::conv_output_length(g.length, g.kernel, padding);
  g.offset = padding == Padding::same ? (g.kernel - 1) / 2 : 0;
  return g;
}

// col is (C_in*K) x L_out, row-major; row c*K+k holds x[c, i + k - offset].
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const auto length = static_cast<std::ptrdiff_t>(g.length);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xc = x + c * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      double* row = col + (c * g.kernel + k) * g.out_length;
      const auto shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.offset);
      for (std::size_t i = 0; i < g.out_length; ++i) {
        const auto src = static_cast<std::ptrdiff_t>(i) + shift;
        row[i] = (src >= 0 && src < length) ? xc[src] : 0.0;
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
  const auto length = static_cast<std::ptrdiff_t>(g.length);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* dxc = dx + c * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const double* row = col + (c * g.kernel + k) * g.out_length;
      const auto shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.offset);
      for (std::size_t i = 0; i < g.out_length; ++i) {
        const auto src = static_cast<std::ptrdiff_t>(i) + shift;
        if (src >= 0 && src < length) dxc[src] += row[i];
      }
    }
  }
}

double leaky_slope(double x, double alpha) {
  // derivative of max(x, alpha * x)
  if (x > 0.0) return std::max(1.0, alpha);
  return std::min(1.0, alpha);
}

struct DenseGeometry {
  bool batched = false;
  std::size_t batch = 1;
  std::size_t in = 0;
  std::size_t out = 0;
};

DenseGeometry dense_geometry(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  DenseGeometry g;
  if (x.rank() == 2) {
    g.batched = true;
    g.batch = x.dim(0);
    g.in = x.dim(1);
  } else if (x.rank() == 1) {
    g.in = x.dim(0);
  } else {
    throw std::invalid_argument("dense: input must be [D] or [B x D], got " + shape_str(x.shape()));
  }
  if (weights.rank() != 2 || weights.dim(1) != g.in) {
    throw std::invalid_argument("dense: input " + shape_str(x.shape()) + " incompatible with weights " +
                                shape_str(weights.shape()));
  }
  g.out = weights.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != g.out) {
    throw std::invalid_argument("dense: bias " + shape_str(bias.shape()) + " does not match weights " +
                                shape_str(weights.shape()));
  }
  return g;
}

struct PoolGeometry {
  bool batched = false;
  std::size_t rows = 0;  // batch * channels
  std::size_t channels = 0;
  std::size_t length = 0;
};

PoolGeometry pool_geometry(const Tensor& x) {
  PoolGeometry g;
  if (x.rank() == 3) {
    g.batched = true;
    g.rows = x.dim(0) * x.dim(1);
    g.channels = x.dim(1);
    g.length = x.dim(2);
  } else if (x.rank() == 2) {
    g.rows = x.dim(0);
    g.channels = x.dim(0);
    g.length = x.dim(1);
  } else {
    throw std::invalid_argument("global_avg_pool: input must be [C x L] or [B x C x L], got " +
                                shape_str(x.shape()));
  }
  return g;
}

}  // namespace

namespace kernels {

std::size_t conv_output_length(std::size_t length, std::size_t kernel, Padding padding) {
  if (kernel == 0) throw std::invalid_argument("conv1d: kernel size must be positive");
  if (padding == Padding::same) return length;
  if (kernel > length) {
    throw std::invalid_argument("conv1d: kernel " + std::to_string(kernel) + " longer than input length " +
                                std::to_string(length) + " with valid padding");
  }
  return length - kernel + 1;
}

Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding) {
  const auto g = conv_geometry(input, weights, bias, padding);
  Tensor out(g.output_shape());
  auto& col = scratch(g.col_rows() * g.out_length, 0);
  ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(g.out_channels),
                static_cast<Eigen::Index>(g.col_rows()));
  ConstVecMap b(bias.data().data(), static_cast<Eigen::Index>(g.out_channels));
  for (std::size_t s = 0; s < g.batch; ++s) {
    im2col(input.data().data() + s * g.in_channels * g.length, g, col.data());
    ConstMatMap cm(col.data(), static_cast<Eigen::Index>(g.col_rows()), static_cast<Eigen::Index>(g.out_length));
    MatMap y(out.data().data() + s * g.out_channels * g.out_length, static_cast<Eigen::Index>(g.out_channels),
             static_cast<Eigen::Index>(g.out_length));
    y.noalias() = w * cm;
    y.colwise() += b;
  }
  return out;
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("leaky_relu: alpha must be >= 0");
  Tensor out = x;
  for (auto& v : out.data()) v = std::max(v, alpha * v);
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const auto g = pool_geometry(x);
  Tensor out(g.batched ? Shape{x.dim(0), g.channels} : Shape{g.channels});
  const double* src = x.data().data();
  for (std::size_t r = 0; r < g.rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.length; ++i) acc += src[r * g.length + i];
    out[r] = acc / static_cast<double>(g.length);
  }
  return out;
}

Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  const auto g = dense_geometry(x, weights, bias);
  Tensor out(g.batched ? Shape{g.batch, g.out} : Shape{g.out});
  ConstMatMap xm(x.data().data(), static_cast<Eigen::Index>(g.batch), static_cast<Eigen::Index>(g.in));
  ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(g.out), static_cast<Eigen::Index>(g.in));
  ConstVecMap b(bias.data().data(), static_cast<Eigen::Index>(g.out));
  MatMap y(out.data().data(), static_cast<Eigen::Index>(g.batch), static_cast<Eigen::Index>(g.out));
  y.noalias() = xm * w.transpose();
  y.rowwise() += b.transpose();
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

double softmax_sparse_ce(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("softmax_sparse_ce: label " + std::to_string(label) + " out of range for " +
                                std::to_string(logits.size()) + " classes");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  return std::log(total) - (logits[static_cast<std::size_t>(label)] - peak);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable " + std::to_string(v.id));
  return nodes_[v.id];
}

Var Tape::push(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false});
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad); }

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor Tape::grad(Var v) const {
  const auto& n = node(v);
  if (!n.requires_grad) throw std::logic_error("tape: gradient requested for a node that does not require one");
  if (!n.has_grad) return Tensor(n.value.shape());
  return n.grad;
}

Tensor* Tape::grad_target(Var v) {
  auto& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

Var Tape::record(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  for (auto v : inputs) needs = needs || node(v).requires_grad;
  const Var out = push(std::move(value), needs);
  if (needs) ops_.push_back(Op{out.id, std::move(backward)});
  else ops_.push_back(Op{out.id, nullptr});
  return out;
}

void Tape::backward(Var loss) {
  const auto& l = node(loss);
  if (l.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(l.value.shape()));
  }
  for (auto& n : nodes_) {
    n.grad = Tensor{};
    n.has_grad = false;
  }
  if (!l.requires_grad) {
    visits_ = 0;
    return;
  }
  grad_target(loss)->fill(1.0);
  visits_ = 0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    ++visits_;
    auto& out = nodes_[it->output];
    if (!it->backward || !out.has_grad) continue;
    it->backward(*this, out.grad);
  }
}

Var Tape::conv1d(Var input, Var weights, Var bias, Padding padding) {
  const auto g = conv_geometry(value(input), value(weights), value(bias), padding);
  Tensor out = kernels::conv1d(value(input), value(weights), value(bias), padding);
  return record({input, weights, bias}, std::move(out), [=](Tape& tape, const Tensor& dy) {
    Tensor* dx = tape.grad_target(input);
    Tensor* dw = tape.grad_target(weights);
    Tensor* db = tape.grad_target(bias);
    const Tensor& x = tape.value(input);
    const Tensor& w = tape.value(weights);
    const auto rows = static_cast<Eigen::Index>(g.col_rows());
    const auto cols = static_cast<Eigen::Index>(g.out_length);
    const auto cout = static_cast<Eigen::Index>(g.out_channels);
    ConstMatMap wm(w.data().data(), cout, rows);
    auto& col = scratch(g.col_rows() * g.out_length, 0);
    auto& dcol = scratch(dx ? g.col_rows() * g.out_length : 0, 1);
    for (std::size_t s = 0; s < g.batch; ++s) {
      ConstMatMap dym(dy.data().data() + s * g.out_channels * g.out_length, cout, cols);
      if (dw) {
        im2col(x.data().data() + s * g.in_channels * g.length, g, col.data());
        ConstMatMap cm(col.data(), rows, cols);
        MatMap dwm(dw->data().data(), cout, rows);
        dwm.noalias() += dym * cm.transpose();
      }
      if (db) {
        VecMap dbm(db->data().data(), cout);
        dbm += dym.rowwise().sum();
      }
      if (dx) {
        MatMap dcm(dcol.data(), rows, cols);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol.data(), g, dx->data().data() + s * g.in_channels * g.length);
      }
    }
  });
}

Var Tape::leaky_relu(Var x, double alpha) {
  Tensor out = kernels::leaky_relu(value(x), alpha);
  return record({x}, std::move(out), [=](Tape& tape, const Tensor& dy) {
    Tensor* dx = tape.grad_target(x);
    const auto xs = tape.value(x).data();
    auto d = dx->data();
    const double hi = leaky_slope(1.0, alpha);
    const double lo = leaky_slope(-1.0, alpha);
    const double* g = dy.data().data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (xs[i] > 0.0 ? hi : lo);
  });
}

Var Tape::global_avg_pool(Var x) {
  const auto g = pool_geometry(value(x));
  Tensor out = kernels::global_avg_pool(value(x));
  return record({x}, std::move(out), [=](Tape& tape, const Tensor& dy) {
    Tensor* dx = tape.grad_target(x);
    const double scale = 1.0 / static_cast<double>(g.length);
    double* d = dx->data().data();
    for (std::size_t r = 0; r < g.rows; ++r) {
      const double v = dy[r] * scale;
      for (std::size_t i = 0; i < g.length; ++i) d[r * g.length + i] += v;
    }
  });
}

Var Tape::dense(Var x, Var weights, Var bias) {
  const auto g = dense_geometry(value(x), value(weights), value(bias));
  Tensor out = kernels::dense(value(x), value(weights), value(bias));
  return record({x, weights, bias}, std::move(out), [=](Tape& tape, const Tensor& dy) {
    const auto b = static_cast<Eigen::Index>(g.batch);
    const auto in = static_cast<Eigen::Index>(g.in);
    const auto o = static_cast<Eigen::Index>(g.out);
    ConstMatMap dym(dy.data().data(), b, o);
    if (Tensor* dx = tape.grad_target(x)) {
      ConstMatMap wm(tape.value(weights).data().data(), o, in);
      MatMap dxm(dx->data().data(), b, in);
      dxm.noalias() += dym * wm;
    }
    if (Tensor* dw = tape.grad_target(weights)) {
      ConstMatMap xm(tape.value(x).data().data(), b, in);
      MatMap dwm(dw->data().data(), o, in);
      dwm.noalias() += dym.transpose() * xm;
    }
    if (Tensor* db = tape.grad_target(bias)) {
      VecMap dbm(db->data().data(), o);
      dbm += dym.colwise().sum().transpose();
    }
  });
}

Var Tape::softmax_sparse_ce(Var logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  std::size_t batch = 1;
  std::size_t classes = 0;
  if (z.rank() == 1) {
    classes = z.dim(0);
  } else if (z.rank() == 2) {
    batch = z.dim(0);
    classes = z.dim(1);
  } else {
    throw std::invalid_argument("softmax_sparse_ce: logits must be [M] or [B x M], got " + shape_str(z.shape()));
  }
  if (labels.size() != batch) {
    throw std::invalid_argument("softmax_sparse_ce: " + std::to_string(labels.size()) + " labels for batch of " +
                                std::to_string(batch));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    total += kernels::softmax_sparse_ce(z.data().subspan(s * classes, classes), ys[s]);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  return record({logits}, std::move(out), [=, ys = std::move(ys)](Tape& tape, const Tensor& dy) {
    Tensor* dz = tape.grad_target(logits);
    const Tensor& zv = tape.value(logits);
    const double scale = dy[0] / static_cast<double>(batch);
    for (std::size_t s = 0; s < batch; ++s) {
      auto p = kernels::softmax(zv.data().subspan(s * classes, classes));
      p[static_cast<std::size_t>(ys[s])] -= 1.0;
      for (std::size_t m = 0; m < classes; ++m) (*dz)[s * classes + m] += scale * p[m];
    }
  });
}

Var Tape::sum(Var x) {
  double total = 0.0;
  for (double v : value(x).data()) total += v;
  return record({x}, Tensor::scalar(total), [=](Tape& tape, const Tensor& dy) {
    for (auto& d : tape.grad_target(x)->data()) d += dy[0];
  });
}

Var Tape::add(Var a, Var b) {
  if (value(a).shape() != value(b).shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(value(a).shape()) + " vs " +
                                shape_str(value(b).shape()));
  }
  Tensor out = value(a);
  const auto bv = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return record({a, b}, std::move(out), [=](Tape& tape, const Tensor& dy) {
    for (Var v : {a, b}) {
      if (Tensor* d = tape.grad_target(v)) {
        for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += dy[i];
      }
    }
  });
}

}  // namespace motorfm
