#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "drw/detect.hpp"
#include "drw/error.hpp"
#include "drw/keys.hpp"
#include "drw/sim.hpp"
#include "drw/spectral.hpp"
#include "drw/watermark.hpp"

namespace py = pybind11;
using namespace drw;

namespace {

WatermarkConfig make_config(double epsilon, double tau, const std::string& mode) {
  WatermarkConfig c{epsilon, tau, parse_output_mode(mode)};
  c.validate();
  return c;
}

std::vector<ProbeRecord> to_records(const py::iterable& items) {
  std::vector<ProbeRecord> out;
  for (const auto& item : items) {
    const auto pair = item.cast<py::tuple>();
    ProbeRecord r;
    r.x = pair[0].cast<TokenId>();
    if (py::isinstance<py::int_>(pair[1])) {
      r.output = pair[1].cast<ClassIndex>();
    } else {
      r.output = ProbabilityVector::checked(pair[1].cast<std::vector<double>>());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Keyed sinusoidal output watermarking and spectral detection";

  py::register_exception<Error>(m, "DrwError", PyExc_ValueError);

  py::class_<WatermarkKey>(m, "Key")
      .def_readonly("classes", &WatermarkKey::classes)
      .def_readonly("vocab_size", &WatermarkKey::vocab_size)
      .def_readonly("dim", &WatermarkKey::dim)
      .def_readonly("frequency", &WatermarkKey::frequency)
      .def_readonly("target_class", &WatermarkKey::target_class)
      .def("phase_hash", [](const WatermarkKey& k, TokenId x) { return phase_hash(k, x); })
      .def("selection_hash", [](const WatermarkKey& k, TokenId x) { return selection_hash(k, x); })
      .def("is_selected",
           [](const WatermarkKey& k, TokenId x, double tau) {
             return is_selected(k, make_config(0.0, tau, "soft"), x);
           },
           py::arg("x"), py::arg("tau") = 0.5)
      .def("to_json", [](const WatermarkKey& k) { return serialize_key(k); })
      .def("__repr__", [](const WatermarkKey& k) {
        std::ostringstream s;
        s << "Key(classes=" << k.classes << ", vocab_size=" << k.vocab_size
          << ", dim=" << k.dim << ", frequency=" << k.frequency
          << ", target_class=" << k.target_class << ")";
        return s.str();
      });

  m.def("generate_key",
        [](std::size_t classes, std::size_t vocab_size, std::uint64_t seed, std::size_t dim,
           double frequency, ClassIndex target_class) {
          return generate_key({classes, vocab_size, dim, frequency, target_class, seed});
        },
        py::arg("classes"), py::arg("vocab_size"), py::arg("seed"),
        py::arg("dim") = kDefaultKeyDim, py::arg("frequency") = 16.0,
        py::arg("target_class") = 0);
  m.def("load_key", &load_key, py::arg("path"));
  m.def("save_key",
        [](const std::filesystem::path& path, const WatermarkKey& key, double epsilon,
           double tau) { save_key(path, key, make_config(epsilon, tau, "soft")); },
        py::arg("path"), py::arg("key"), py::arg("epsilon") = 0.2, py::arg("tau") = 0.5);

  m.def("apply_watermark",
        [](const WatermarkKey& key, TokenId x, std::vector<double> probs, double epsilon,
           double tau) {
          const auto out = apply_watermark(key, make_config(epsilon, tau, "soft"), x,
                                           ProbabilityVector::checked(std::move(probs)));
          return py::make_tuple(out.probs.vector(), out.selected);
        },
        py::arg("key"), py::arg("x"), py::arg("probs"), py::arg("epsilon") = 0.2,
        py::arg("tau") = 0.5,
        "Returns (watermarked probabilities, selected).");

  m.def("lomb_scargle",
        [](std::vector<double> t, std::vector<double> y, std::vector<double> freqs) {
          return lomb_scargle({std::move(t), std::move(y)}, freqs).power;
        },
        py::arg("t"), py::arg("y"), py::arg("freqs"));
  m.def("frequency_grid",
        [](double f_min, double f_max, double step) {
          return FrequencyGrid{f_min, f_max, step}.values();
        },
        py::arg("f_min") = 0.5, py::arg("f_max") = 50.0, py::arg("step") = 0.05);
  m.def("snr_score",
        [](std::vector<double> freqs, std::vector<double> power, double f_w, double delta,
           double f_max) {
          return snr_score({std::move(freqs), std::move(power), false}, f_w, delta, f_max).p_snr;
        },
        py::arg("freqs"), py::arg("power"), py::arg("f_w") = 16.0, py::arg("delta") = 2.0,
        py::arg("f_max") = 50.0);

  // Records are (x, probs) or (x, label) pairs.
  m.def("detect",
        [](const WatermarkKey& key, const py::iterable& records, double epsilon, double tau,
           double delta, double f_max, double threshold) {
          DetectionParams params;
          params.delta = delta;
          params.f_max = f_max;
          params.grid.f_max = f_max;
          params.threshold = threshold;
          const auto r = detect_watermark(key, make_config(epsilon, tau, "soft"),
                                          to_records(records), params);
          py::dict d;
          d["p_snr"] = r.snr.p_snr;
          d["p_signal"] = r.snr.p_signal;
          d["p_noise"] = r.snr.p_noise;
          d["n_probes_used"] = r.n_probes_used;
          d["positive"] = r.positive;
          d["warning"] = to_string(r.warning);
          return d;
        },
        py::arg("key"), py::arg("records"), py::arg("epsilon") = 0.2, py::arg("tau") = 0.5,
        py::arg("delta") = 2.0, py::arg("f_max") = 50.0, py::arg("threshold") = 10.0);

  m.def("average_precision",
        [](std::vector<double> pos, std::vector<double> neg, bool higher_is_positive) {
          return average_precision({std::move(pos), std::move(neg), higher_is_positive});
        },
        py::arg("positive_scores"), py::arg("negative_scores"),
        py::arg("higher_is_positive") = true);
  m.def("jsd",
        [](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
          std::vector<ProbabilityVector> pa, pb;
          for (const auto& v : a) pa.push_back(ProbabilityVector::checked(v));
          for (const auto& v : b) pb.push_back(ProbabilityVector::checked(v));
          return jsd_score(pa, pb);
        },
        py::arg("a"), py::arg("b"));

  // Config and result travel as JSON text, same documents as the CLI.
  m.def("run_experiment",
        [](const std::string& config_json) {
          const auto config = sim::parse_experiment_config(config_json);
          py::gil_scoped_release release;
          return sim::experiment_result_to_json(sim::run_detection_experiment(config));
        },
        py::arg("config_json") = "{}");
}
