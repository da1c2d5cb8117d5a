#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "meet/config.hpp"
#include "meet/data.hpp"
#include "meet/errors.hpp"
#include "meet/eval.hpp"
#include "meet/gbdt.hpp"
#include "meet/gradcheck.hpp"
#include "meet/pipeline.hpp"
#include "meet/rng.hpp"

namespace py = pybind11;
using namespace meet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

py::dict metrics_dict(const RunMetrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["macro_f1"] = m.macro_f1;
  d["per_class_f1"] = m.per_class_f1;
  d["n_test"] = m.n_test;
  return d;
}

std::vector<int> to_ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

IntArray from_ints(const std::vector<int>& v) {
  IntArray out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// Windows for N×D×S values (NaN for missing) and optional labels.
std::vector<RawWindow> windows_from(const Array& values, int slot) {
  if (values.ndim() != 3) throw DimensionError("expected an N×D×S array");
  if (values.shape(2) != slot) throw DimensionError("third axis must equal the slot length");
  std::vector<RawWindow> out(values.shape(0));
  const std::size_t per = values.shape(1) * values.shape(2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].patient_id = "row" + std::to_string(i);
    out[i].slot = slot;
    out[i].d_in = values.shape(1);
    out[i].values.assign(values.data() + i * per, values.data() + (i + 1) * per);
  }
  return out;
}

py::tuple prediction_tuple(const GbdtPrediction& p, std::size_t k) {
  Array probs({p.classes.size(), k});
  std::copy(p.probabilities.begin(), p.probabilities.end(), probs.mutable_data());
  return py::make_tuple(from_ints(p.classes), probs);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-view time-series encoder with a tree-ensemble head";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

  m.def("derive_seed", [](std::uint64_t base, const std::string& stream) { return derive_seed(base, stream); });

  m.def(
      "gradcheck",
      [](double tolerance, const std::string& inject_fault) {
        py::list out;
        for (const auto& c : run_gradcheck_suite(gradcheck_toy_config(), tolerance, inject_fault)) {
          py::dict d;
          d["op"] = c.op;
          d["max_rel_error"] = c.max_rel_error;
          d["coordinates"] = c.coordinates;
          d["passed"] = c.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("tolerance") = 1e-4, py::arg("inject_fault") = "");

  m.def(
      "compute_metrics",
      [](const IntArray& preds, const IntArray& labels, std::size_t n_classes) {
        const auto p = to_ints(preds), l = to_ints(labels);
        return metrics_dict(compute_metrics(p, l, n_classes));
      },
      py::arg("predictions"), py::arg("labels"), py::arg("n_classes"));

  m.def(
      "parse_config",
      [](const std::string& text) {
        auto cfg = parse_config(text);
        cfg.validate();
        return serialize_config(cfg);
      },
        "Validates a config and returns it in canonical form.");

  py::class_<WindowArchive>(m, "Archive")
      .def_static("load", &load_archive)
      .def("save", [](const WindowArchive& a, const std::string& path) { save_archive(path, a); })
      .def_readonly("columns", &WindowArchive::columns)
      .def_readonly("n_classes", &WindowArchive::n_classes)
      .def_readonly("scheme", &WindowArchive::scheme)
      .def("slots", &WindowArchive::slots)
      .def("__len__", [](const WindowArchive& a) { return a.windows.size(); })
      .def(
          "windows",
          [](const WindowArchive& a, int slot) {
            const auto ws = a.for_slot(slot);
            const std::size_t d = a.columns.size();
            Array values({ws.size(), d, static_cast<std::size_t>(slot)});
            std::vector<int> labels;
            std::vector<std::string> ids;
            for (std::size_t i = 0; i < ws.size(); ++i) {
              std::copy(ws[i].values.begin(), ws[i].values.end(), values.mutable_data() + i * d * slot);
              labels.push_back(ws[i].label);
              ids.push_back(ws[i].patient_id);
            }
            return py::make_tuple(values, from_ints(labels), ids);
          },
          py::arg("slot"), "(values N×D×S with NaN for missing, labels, patient ids) for one slot.");

  m.def(
      "synth_archive",
      [](std::size_t n_per_class, std::size_t n_classes, std::size_t d_in, std::size_t hours, double motif_strength,
         double noise_sd, std::uint64_t seed) {
        SynthSpec spec{n_per_class, n_classes, d_in, hours, motif_strength, noise_sd};
        const auto ds = synth_generate(spec, derive_seed(seed, "data"));
        std::vector<int> slots;
        for (int s = 2; s <= std::min<int>(23, static_cast<int>(hours)); ++s) slots.push_back(s);
        return build_archive(ds.records, ds.labels, ds.records.front().columns, n_classes, "synthetic", slots);
      },
      py::arg("n_per_class") = 50, py::arg("n_classes") = 2, py::arg("d_in") = 4, py::arg("hours") = 16,
      py::arg("motif_strength") = 1.0, py::arg("noise_sd") = 1.0, py::arg("seed") = 0);

  m.def(
      "run_once",
      [](const WindowArchive& a, int slot, const std::string& variant, const std::string& config, std::uint64_t seed) {
        const auto cfg = parse_config(config);
        const auto ws = a.for_slot(slot);
        RunMetrics metrics;
        {
          py::gil_scoped_release release;
          metrics = run_once(ws, a.columns, a.n_classes, parse_variant(variant), cfg, seed);
        }
        return metrics_dict(metrics);
      },
      py::arg("archive"), py::arg("slot"), py::arg("variant") = "full", py::arg("config") = "",
      py::arg("seed") = 0);

  m.def(
      "sweep",
      [](const WindowArchive& a, const std::string& config, std::vector<int> slots,
         const std::vector<std::string>& variants, std::size_t runs, std::uint64_t seed, std::size_t workers) {
        const auto cfg = parse_config(config);
        SweepOptions opts;
        opts.slots = std::move(slots);
        for (const auto& v : variants) opts.variants.push_back(parse_variant(v));
        opts.runs = runs;
        opts.base_seed = seed;
        opts.workers = workers;
        std::vector<SweepCell> cells;
        {
          py::gil_scoped_release release;
          cells = sweep(a, cfg, opts);
        }
        return py::make_tuple(sweep_csv(cells), sweep_svg(cells, false), sweep_svg(cells, true));
      },
      py::arg("archive"), py::arg("config"), py::arg("slots"), py::arg("variants") = std::vector<std::string>{"full"},
      py::arg("runs") = 5, py::arg("seed") = 0, py::arg("workers") = 1,
      "Returns (csv, accuracy svg, macro-F1 svg).");

  py::class_<TrainedPipeline>(m, "Pipeline")
      .def_static(
          "fit",
          [](const WindowArchive& a, int slot, const std::string& variant, const std::string& config,
             std::uint64_t seed) {
            const auto cfg = parse_config(config);
            const auto ws = a.for_slot(slot);
            return fit_pipeline(ws, a.columns, a.n_classes, cfg, parse_variant(variant), seed);
          },
          py::arg("archive"), py::arg("slot"), py::arg("variant") = "full", py::arg("config") = "",
          py::arg("seed") = 0)
      .def_static("load", &load_checkpoint)
      .def_static("from_bytes", [](const py::bytes& b) { return decode_checkpoint(std::string(b)); })
      .def("save", [](TrainedPipeline& p, const std::string& path) { save_checkpoint(path, p); })
      .def("to_bytes", [](TrainedPipeline& p) { return py::bytes(encode_checkpoint(p)); })
      .def_readonly("slot", &TrainedPipeline::slot)
      .def_readonly("columns", &TrainedPipeline::columns)
      .def_property_readonly("variant",
                             [](const TrainedPipeline& p) { return std::string(to_string(p.config.model.ablation)); })
      .def_property_readonly("n_classes", [](const TrainedPipeline& p) { return p.gbdt.n_classes; })
      .def(
          "predict",
          [](TrainedPipeline& p, const Array& values) {
            const auto ws = windows_from(values, p.slot);
            return prediction_tuple(predict_pipeline(p, ws), p.gbdt.n_classes);
          },
          py::arg("values"), "(classes, probabilities) for N×D×S raw windows.");

  py::class_<GbdtModel>(m, "Gbdt")
      .def_static(
          "fit",
          [](const Array& x, const IntArray& y, std::size_t n_classes, std::size_t rounds, std::size_t depth,
             double shrinkage, std::size_t min_samples_leaf) {
            if (x.ndim() != 2) throw DimensionError("expected an N×F feature matrix");
            GbdtParams params{rounds, depth, shrinkage, min_samples_leaf};
            const auto labels = to_ints(y);
            return gbdt_fit({x.data(), static_cast<std::size_t>(x.size())}, x.shape(0), x.shape(1), labels, n_classes,
                            params);
          },
          py::arg("x"), py::arg("y"), py::arg("n_classes"), py::arg("rounds") = 100, py::arg("depth") = 3,
          py::arg("shrinkage") = 0.1, py::arg("min_samples_leaf") = 5)
      .def("predict", [](const GbdtModel& g, const Array& x) {
        if (x.ndim() != 2) throw DimensionError("expected an N×F feature matrix");
        return prediction_tuple(gbdt_predict(g, {x.data(), static_cast<std::size_t>(x.size())}, x.shape(0)),
                                g.n_classes);
      });
}
