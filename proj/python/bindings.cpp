#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "motorfm/autodiff.hpp"
#include "motorfm/experiment.hpp"
#include "motorfm/finetune.hpp"
#include "motorfm/model.hpp"
#include "motorfm/report.hpp"
#include "motorfm/signal.hpp"
#include "motorfm/synth.hpp"

namespace py = pybind11;
using namespace motorfm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<WindowedSample> windows_from(const Array& x) {
  if (x.ndim() != 2) throw std::invalid_argument("expected a [N, L] array of windows");
  const auto n = static_cast<std::size_t>(x.shape(0));
  const auto len = static_cast<std::size_t>(x.shape(1));
  std::vector<WindowedSample> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].values.assign(x.data() + i * len, x.data() + (i + 1) * len);
  return out;
}

MachineSpec machine_from_kwargs(const py::kwargs& kw) {
  MachineSpec m;
  for (const auto& [k, v] : kw) {
    const auto key = k.cast<std::string>();
    if (key == "machine_id") m.machine_id = v.cast<std::string>();
    else if (key == "sample_rate_hz") m.sample_rate_hz = v.cast<double>();
    else if (key == "rpm") m.shaft_speed = SpeedProfile::constant(v.cast<double>());
    else if (key == "ramp") {
      const auto r = v.cast<std::pair<double, double>>();
      m.shaft_speed = SpeedProfile::ramp(r.first, r.second);
    } else if (key == "n_rolling_elements") m.n_rolling_elements = v.cast<std::size_t>();
    else if (key == "resonance_hz") m.resonance_hz = v.cast<double>();
    else if (key == "resonance_decay") m.resonance_decay = v.cast<double>();
    else if (key == "base_noise_std") m.base_noise_std = v.cast<double>();
    else if (key == "duration_s") m.duration_s = v.cast<double>();
    else if (key == "load") m.load = v.cast<double>();
    else throw std::invalid_argument("unknown machine parameter '" + key + "'");
  }
  m.validate();
  return m;
}

}  // namespace

PYBIND11_MODULE(_motorfm, m) {
  m.doc() = "1D-CNN fault-diagnosis backbone: synthetic data, pretraining and fine-tuning";

  m.def("conv1d", [](const Array& x, const Array& w, const Array& b, bool same) {
    return to_array(kernels::conv1d(to_tensor(x), to_tensor(w), to_tensor(b), same ? Padding::same : Padding::valid));
  }, py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("same") = true);

  m.def("gen_record", [](const std::string& fault, double severity, std::uint64_t seed, const py::kwargs& kw) {
    const auto spec = machine_from_kwargs(kw);
    return to_array(gen_record(spec, {parse_fault_class(fault), severity}, seed).samples);
  }, py::arg("fault"), py::arg("severity"), py::arg("seed"),
     "Generate one record; machine parameters are keyword arguments (rpm, ramp, sample_rate_hz, ...)");

  m.def("windows", [](const Array& signal, std::size_t window_len, std::size_t hop, bool normalize) {
    SignalRecord r;
    r.samples.assign(signal.data(), signal.data() + signal.size());
    r.sample_rate_hz = 1.0;
    const auto ws = segment(r, window_len, hop, 0);
    Array out({static_cast<py::ssize_t>(ws.size()), static_cast<py::ssize_t>(window_len)});
    auto* dst = out.mutable_data();
    for (const auto& w : ws) {
      auto v = w.values;
      if (normalize) normalize_in_place(v);
      dst = std::copy(v.begin(), v.end(), dst);
    }
    return out;
  }, py::arg("signal"), py::arg("window_len"), py::arg("hop"), py::arg("normalize") = true);

  m.def("add_noise", [](const Array& signal, double percent, std::uint64_t seed) {
    SignalRecord r;
    r.samples.assign(signal.data(), signal.data() + signal.size());
    r.sample_rate_hz = 1.0;
    return to_array(add_noise(r, percent, seed).samples);
  }, py::arg("signal"), py::arg("percent"), py::arg("seed"));

  py::class_<ModelState>(m, "Model")
      .def_property_readonly("parameter_count", &ModelState::parameter_count)
      .def_property_readonly("trainable_parameter_count", &ModelState::trainable_parameter_count)
      .def_property_readonly("trainable_mask", &ModelState::trainable_mask)
      .def_property_readonly("num_classes", &ModelState::num_classes)
      .def_property_readonly("label_map", [](const ModelState& s) { return s.label_map; })
      .def_property_readonly("fingerprint", [](const ModelState& s) { return s.fingerprint().str(); })
      .def_property_readonly("layer_names", [](const ModelState& s) {
        std::vector<std::string> names;
        for (const auto& l : s.layers) names.push_back(l.name);
        return names;
      })
      .def("weights", [](const ModelState& s, std::size_t i) {
        const auto& l = s.layers.at(i);
        if (!l.has_params()) throw std::invalid_argument("layer " + l.name + " has no parameters");
        return py::make_tuple(to_array(l.weight), to_array(l.bias));
      })
      .def("logits", [](const ModelState& s, const Array& x) {
        return to_array(forward_logits(s, make_batch(windows_from(x))));
      }, "Logits for a [N, L] array of windows")
      .def("predict", [](const ModelState& s, const Array& x) { return predict(s, windows_from(x)); })
      .def("save", [](const ModelState& s, const std::filesystem::path& p) { save_checkpoint(s, p); });

  m.def("build_backbone", &build_backbone, py::arg("num_classes"), py::arg("seed"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("backbone_parameter_count", &backbone_parameter_count, py::arg("num_classes"));
  m.def("prepare_finetune", [](const ModelState& pretrained, std::size_t num_classes, std::size_t trainable_prefix,
                               std::uint64_t seed) {
    FineTuneConfig cfg;
    cfg.target_num_classes = num_classes;
    cfg.trainable_prefix = trainable_prefix;
    cfg.train.seed = seed;
    return prepare_finetune(pretrained, cfg);
  }, py::arg("pretrained"), py::arg("num_classes"), py::arg("trainable_prefix") = 3, py::arg("seed") = 0);

  m.def("gradcheck", [](std::uint64_t seed, double step, double tolerance) {
    Architecture arch;
    arch.conv_layers = 2;
    arch.channels = 8;
    arch.num_classes = 3;
    const auto model = build_model(arch, seed);
    WindowedSample s;
    s.values.resize(32);
    for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
    s.label = 1;
    const auto report = finite_difference_check(model, s, step, tolerance);
    py::dict out;
    for (const auto& l : report.layers) out[py::str(l.layer)] = l.max_rel_error;
    return py::make_tuple(report.passed, out);
  }, py::arg("seed") = 7, py::arg("step") = 1e-4, py::arg("tolerance") = 1e-3);

  m.def("default_config", [] { return experiment_config_json(default_experiment_config()); },
        "Default experiment configuration as JSON text");
  m.def("render_results", [](const std::string& jsonl) { return render_table(read_results_jsonl(jsonl)); },
        py::arg("jsonl"));
}
