#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "retgate/assembly.hpp"
#include "retgate/classifier.hpp"
#include "retgate/cli.hpp"
#include "retgate/error.hpp"
#include "retgate/evaluation.hpp"
#include "retgate/gating.hpp"
#include "retgate/records.hpp"
#include "retgate/synth.hpp"

namespace py = pybind11;
using namespace retgate;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& obj) {
  if (obj.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::array_t<float> tensor_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Tensor array_tensor(const FloatArray& a) {
  Tensor t;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape.push_back(static_cast<std::size_t>(a.shape(i)));
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

py::array_t<double> doubles(const std::vector<double>& v) { return py::array_t<double>(py::ssize_t(v.size()), v.data()); }

std::vector<OutcomeLabel> parse_labels(const std::vector<std::string>& labels) {
  std::vector<OutcomeLabel> out;
  for (const auto& l : labels) out.push_back(parse_label(l));
  return out;
}

FeatureConfig feature_config(const py::object& obj) {
  return obj.is_none() ? FeatureConfig{} : FeatureConfig::from_json(from_py(obj));
}

TrainConfig train_config(const py::object& obj) {
  return obj.is_none() ? TrainConfig{} : TrainConfig::from_json(from_py(obj));
}

py::dict prediction_dict(const Prediction& p) {
  py::dict d;
  d["label"] = std::string(to_string(p.label));
  d["probs"] = std::vector<double>(p.probs.begin(), p.probs.end());
  return d;
}

}  // namespace

PYBIND11_MODULE(_retgate, m) {
  m.doc() = "Retrieval gating from hidden-state features";

  // Translators run newest first, so the base class goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("derive_label", [](bool with, bool without) { return std::string(to_string(derive_label(with, without))); },
        py::arg("correct_with"), py::arg("correct_without"));

  py::class_<FeatureRecord>(m, "FeatureRecord")
      .def_readwrite("id", &FeatureRecord::id)
      .def_readwrite("dataset", &FeatureRecord::dataset)
      .def_readwrite("backbone", &FeatureRecord::backbone)
      .def_readwrite("layer", &FeatureRecord::layer)
      .def_readwrite("correct_with", &FeatureRecord::correct_with)
      .def_readwrite("correct_without", &FeatureRecord::correct_without)
      .def_property_readonly("label", [](const FeatureRecord& r) { return std::string(to_string(r.label())); })
      .def_property_readonly("t1", [](const FeatureRecord& r) { return tensor_array(r.t1); })
      .def_property_readonly("t2", [](const FeatureRecord& r) { return tensor_array(r.t2); })
      .def_property_readonly("v1", [](const FeatureRecord& r) { return tensor_array(r.v1.tensor); })
      .def_property_readonly("v2", [](const FeatureRecord& r) { return tensor_array(r.v2.tensor); })
      .def("to_dict", [](const FeatureRecord& r) { return to_py(record_to_json(r)); })
      .def_static("from_dict", [](const py::object& d) { return record_from_json(from_py(d)); })
      .def("__repr__", [](const FeatureRecord& r) {
        return "<FeatureRecord id=" + r.id + " layer=" + std::to_string(r.layer) + " label=" +
               std::string(to_string(r.label())) + ">";
      });

  m.def("load_records", &load_records, py::arg("path"), py::arg("strict") = true);
  m.def(
      "save_records",
      [](const std::vector<FeatureRecord>& records, const std::filesystem::path& path, std::size_t blob_threshold) {
        save_records(records, path, blob_threshold);
      },
      py::arg("records"), py::arg("path"), py::arg("blob_threshold") = 4096);
  m.def("validate", [](const std::vector<FeatureRecord>& records) { return to_py(validate(records).to_json()); });

  m.def("mean_pool", [](const FloatArray& patches) { return doubles(mean_pool(array_tensor(patches))); });
  m.def("max_pool", [](const FloatArray& patches) { return doubles(max_pool(array_tensor(patches))); });
  m.def(
      "assemble",
      [](const FeatureRecord& record, const py::object& config) {
        return doubles(assemble(record, feature_config(config)).values);
      },
      py::arg("record"), py::arg("config") = py::none());

  py::class_<ClassifierModel>(m, "ClassifierModel")
      .def_readonly("input_dim", &ClassifierModel::input_dim)
      .def_readonly("hidden_dims", &ClassifierModel::hidden_dims)
      .def_property_readonly("train_meta", [](const ClassifierModel& c) { return to_py(c.train_meta.to_json()); })
      .def_property_readonly("feature_config",
                             [](const ClassifierModel& c) { return to_py(c.feature_config.to_json()); })
      .def("to_dict", [](const ClassifierModel& c) { return to_py(c.to_json()); })
      .def_static("from_dict", [](const py::object& d) { return ClassifierModel::from_json(from_py(d)); })
      .def("save", [](const ClassifierModel& c, const std::filesystem::path& p) { save_model(c, p); })
      .def_static("load", &load_model)
      .def("predict", [](const ClassifierModel& c, const FeatureRecord& r) { return prediction_dict(predict(c, r)); })
      .def("predict_all", [](const ClassifierModel& c, const std::vector<FeatureRecord>& records) {
        py::list out;
        for (const auto& p : predict_all(c, records)) out.append(prediction_dict(p));
        return out;
      });

  m.def(
      "train",
      [](const std::vector<FeatureRecord>& records, const py::object& fc, const py::object& tc) {
        const auto f = feature_config(fc);
        const auto t = train_config(tc);
        py::gil_scoped_release release;
        return train(records, f, t);
      },
      py::arg("records"), py::arg("feature_config") = py::none(), py::arg("train_config") = py::none());

  m.def(
      "gate",
      [](const std::string& predicted, const std::string& policy, std::optional<std::pair<bool, bool>> truth) {
        std::optional<Correctness> t;
        if (truth) t = Correctness{truth->first, truth->second};
        return gate(parse_label(predicted), parse_policy(policy), t);
      },
      py::arg("predicted"), py::arg("policy"), py::arg("truth") = py::none());

  m.def(
      "decide",
      [](const std::vector<FeatureRecord>& records, const std::vector<std::string>& predicted,
         const std::string& policy) {
        py::list out;
        for (const auto& d : decide(records, parse_labels(predicted), parse_policy(policy))) out.append(to_py(d.to_json()));
        return out;
      },
      py::arg("records"), py::arg("predicted"), py::arg("policy"));

  m.def("evaluate", [](const std::vector<FeatureRecord>& records, const py::list& decisions) {
    std::vector<GateDecision> ds;
    for (const auto& d : decisions) ds.push_back(GateDecision::from_json(from_py(py::reinterpret_borrow<py::object>(d))));
    return to_py(evaluate(records, ds).to_json());
  });
  m.def("compare_policies", [](const std::vector<FeatureRecord>& records, const ClassifierModel& model) {
    return to_py(compare_policies(records, model).to_json());
  });
  m.def("compare_policies", [](const std::vector<FeatureRecord>& records, const std::vector<std::string>& predicted) {
    return to_py(compare_policies(records, parse_labels(predicted)).to_json());
  });

  m.def("generate", [](const py::object& spec) { return generate(SynthSpec::from_json(from_py(spec))); },
        py::arg("spec") = py::none());
  m.def("generate_layers", [](const py::object& spec) { return generate_layers(SynthSpec::from_json(from_py(spec))); });
  m.def("oracle_policy_accuracies", [](const std::vector<FeatureRecord>& records) {
    const auto acc = oracle_policy_accuracies(records);
    py::dict d;
    d["always_rir"] = acc.always.value();
    d["never_rir"] = acc.never.value();
    d["oracle"] = acc.oracle.value();
    return d;
  });

  py::class_<SweepGrid>(m, "SweepGrid")
      .def("to_dict", [](const SweepGrid& g) { return to_py(g.to_json()); })
      .def("csv", &grid_csv)
      .def("svg", &grid_svg)
      .def("__len__", [](const SweepGrid& g) { return g.cells.size(); });

  m.def(
      "sweep",
      [](const std::map<int, std::vector<FeatureRecord>>& by_layer, const py::list& configs, const py::object& tc,
         std::uint64_t master_seed, std::size_t jobs) {
        std::vector<FeatureConfig> fcs;
        for (const auto& c : configs) fcs.push_back(feature_config(py::reinterpret_borrow<py::object>(c)));
        const auto t = train_config(tc);
        py::gil_scoped_release release;
        return sweep(by_layer, fcs, t, master_seed, jobs);
      },
      py::arg("records_by_layer"), py::arg("configs"), py::arg("train_config") = py::none(),
      py::arg("master_seed") = 0, py::arg("jobs") = 1);

  m.def(
      "gradient_check",
      [](std::size_t input_dim, std::vector<std::size_t> hidden_dims, std::size_t n_trials, double step,
         double tolerance, std::uint64_t seed) {
        const auto r = gradient_check(MlpShape{input_dim, std::move(hidden_dims)}, n_trials, step, tolerance, seed);
        py::dict d;
        d["trials"] = r.trials;
        d["parameters_checked"] = r.parameters_checked;
        d["resampled"] = r.resampled;
        d["max_relative_error"] = r.max_relative_error;
        d["passed"] = r.passed;
        return d;
      },
      py::arg("input_dim"), py::arg("hidden_dims"), py::arg("n_trials") = 1, py::arg("step") = 1e-5,
      py::arg("tolerance") = 1e-4, py::arg("seed") = 0);

  m.def("run_cli", [](const std::vector<std::string>& args) { return run_cli(args); });
}
