// Python bindings over the core library. Arrays cross the boundary as
// contiguous numpy copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "xtalk/cli.hpp"
#include "xtalk/config.hpp"
#include "xtalk/errors.hpp"
#include "xtalk/gradsuite.hpp"
#include "xtalk/io.hpp"
#include "xtalk/losses.hpp"
#include "xtalk/metrics.hpp"
#include "xtalk/preprocess.hpp"

namespace py = pybind11;
using namespace xtalk;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a, std::size_t min_dims, std::size_t max_dims) {
  const auto nd = static_cast<std::size_t>(a.ndim());
  if (nd < min_dims || nd > max_dims)
    throw ShapeError("expected an array with " + std::to_string(min_dims) + " to " + std::to_string(max_dims) +
                     " dimensions");
  std::size_t ext[4] = {1, 1, 1, 1};
  for (std::size_t i = 0; i < nd; ++i) ext[i] = static_cast<std::size_t>(a.shape(i));
  Tensor<T> t(Shape{ext[0], ext[1], ext[2], ext[3]});
  std::copy_n(a.data(), t.size(), t.data());
  return t;
}

template <typename T>
Array<T> to_array(const Tensor<T>& t, std::vector<py::ssize_t> shape) {
  Array<T> out(shape);
  std::copy_n(t.data(), t.size(), out.mutable_data());
  return out;
}

ModelSpec make_spec(const std::string& variant, const std::string& norm) {
  ModelSpec s;
  s.variant = variant_from_string(variant);
  s.norm.kind = norm_kind_from_string(norm);
  return s;
}

class PyModel {
 public:
  PyModel(const std::string& variant, const std::string& norm, std::uint64_t seed)
      : model_(make_spec(variant, norm), seed) {}

  py::list forward(const Array<float>& x, bool training) {
    const auto out = model_.forward(to_tensor(x, 4, 4), training ? kTrainNoDropout : kEval);
    py::list heads;
    for (const auto& p : out.probs) {
      const auto s = p.shape();
      heads.append(to_array(p, {static_cast<py::ssize_t>(s.n), static_cast<py::ssize_t>(s.c)}));
    }
    return heads;
  }

  std::size_t param_count() const { return model_.params().trainable_count(); }
  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (const auto& [n, p] : model_.params().entries()) names.push_back(n);
    return names;
  }
  void load(const std::string& path) { load_checkpoint(path, model_); }
  void save(const std::string& path) const { save_checkpoint(path, model_); }
  std::vector<int> heads() const { return model_.spec().heads(); }

 private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-talk compound-fault classifier workbench";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "characteristic_frequencies",
      [](double shaft_hz) {
        const auto f = characteristic_frequencies(BearingGeometry{}, shaft_hz);
        return py::make_tuple(f.bpfo_hz, f.bpfi_hz);
      },
      py::arg("shaft_hz"), "(BPFO, BPFI) in Hz for the default bearing geometry.");

  m.def(
      "synthesize_segment",
      [](int joint, const std::string& domain, std::uint64_t seed, std::size_t level_index) {
        const auto seg =
            synthesize_segment(CompoundLabel::from_joint(joint), subset_by_name(domain), BearingGeometry{}, seed, level_index);
        Array<float> out(static_cast<py::ssize_t>(seg.samples.size()));
        std::copy(seg.samples.begin(), seg.samples.end(), out.mutable_data());
        return out;
      },
      py::arg("joint"), py::arg("domain") = "A", py::arg("seed") = 0, py::arg("level_index") = 0);

  m.def(
      "stft_db",
      [](const Array<float>& samples) {
        const auto sp = stft_db(std::span<const float>(samples.data(), static_cast<std::size_t>(samples.size())));
        return to_array(sp.values, {static_cast<py::ssize_t>(kFreqBins), static_cast<py::ssize_t>(kFrames)});
      },
      py::arg("samples"), "80 x 48 dB spectrogram of one 4 s segment.");

  m.def("joint_class", [](const std::array<int, kNumTasks>& d) { return joint_class(d); });
  m.def("decode_joint", &decode_joint);
  m.def(
      "macro_f1", [](const std::vector<int>& p, const std::vector<int>& l, int k) { return macro_f1(p, l, k); },
      py::arg("preds"), py::arg("labels"), py::arg("k"));

  m.def(
      "cce",
      [](const Array<double>& probs, const std::vector<int>& targets) {
        return cce(to_tensor(probs, 2, 2), std::span<const int>(targets));
      },
      py::arg("probs"), py::arg("targets"));
  m.def(
      "entropy_mean", [](const Array<double>& probs) { return entropy_mean(to_tensor(probs, 2, 2)); },
      py::arg("probs"));
  m.def(
      "mkmmd2",
      [](const Array<double>& s, const Array<double>& t) {
        return mkmmd2(to_tensor(s, 2, 2), to_tensor(t, 2, 2), KernelBank{});
      },
      py::arg("source"), py::arg("target"), "Multi-kernel MMD^2 with the default bandwidth bank.");

  m.def(
      "param_count", [](const std::string& v, const std::string& n) { return param_count(make_spec(v, n)); },
      py::arg("variant"), py::arg("norm") = "FLN");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::string&, std::uint64_t>(), py::arg("variant") = "CROSSTALK",
           py::arg("norm") = "FLN", py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("x"), py::arg("training") = false,
           "Per-head class probabilities for a (N, 1, 80, 48) batch.")
      .def("param_count", &PyModel::param_count)
      .def("param_names", &PyModel::param_names)
      .def("heads", &PyModel::heads)
      .def("load_checkpoint", &PyModel::load, py::arg("path"))
      .def("save_checkpoint", &PyModel::save, py::arg("path"));

  m.def("default_config", &default_config_text);

  m.def(
      "gradcheck",
      [](bool include_full_model) {
        GradSuiteOptions o;
        o.include_full_model = include_full_model;
        py::list out;
        for (const auto& r : run_gradcheck_suite(o)) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["max_rel_error"] = r.max_rel_error;
          d["checked"] = r.checked;
          out.append(d);
        }
        return out;
      },
      py::arg("include_full_model") = false);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "moc-xtalk");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the moc-xtalk command line in process; returns (exit code, stdout, stderr).");
}
