#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "promptdoor/config.hpp"
#include "promptdoor/error.hpp"
#include "promptdoor/harness.hpp"
#include "promptdoor/numkit/tensor.hpp"
#include "promptdoor/trigger_opt.hpp"

namespace py = pybind11;
using namespace promptdoor;

namespace {

py::dict metrics_dict(const harness::MetricsReport& r) {
  py::dict d;
  d["ca"] = r.ca;
  d["asr"] = r.asr;
  d["sum"] = r.sum;
  d["n_eval_clean"] = r.n_eval_clean;
  d["n_asr_numerator"] = r.n_asr_numerator;
  d["n_asr_denominator"] = r.n_asr_denominator;
  d["notes"] = r.notes;
  return d;
}

// Pretrain, clean-train and attack for one seed of `config`.
py::dict run_pipeline(const RunConfig& config) {
  py::gil_scoped_release release;
  const harness::Corpora corpora = harness::load_corpora(config);
  const victim::PromptModel pre = harness::pretrain_model(config, corpora);
  const Split split = harness::make_split(config, corpora, config.seed);
  const victim::TrainResult clean = harness::clean_model(config, pre, split, config.seed);
  harness::AttackRun run = harness::run_attack(config, clean.model, split, corpora.task.vocab, config.seed);
  py::gil_scoped_acquire acquire;
  py::dict d = metrics_dict(run.metrics);
  d["clean_ca"] = harness::compute_ca(clean.model, split.test);
  py::list triggers;
  for (const auto& c : run.candidates.ranked) {
    py::list words;
    for (auto t : c.trigger.tokens) words.append(corpora.task.vocab.token(t));
    triggers.append(words);
  }
  d["candidates"] = triggers;
  return d;
}

std::string sweep_csv(const RunConfig& config, const std::string& axis) {
  py::gil_scoped_release release;
  const auto spec = harness::make_sweep_spec(config, harness::parse_axis(axis));
  return harness::format_report(harness::run_sweep(spec).table);
}

}  // namespace

PYBIND11_MODULE(_promptdoor, m) {
  m.doc() = "Backdoor attack lab for prompt-tuned classifiers";
  m.attr("__version__") = PROMPTDOOR_VERSION;

  static PyObject* error = py::exception<Error>(m, "PromptdoorError").release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(kind_name(e.kind())) + ": " + e.what();
      PyErr_SetString(error, msg.c_str());
    }
  });

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def("set", [](RunConfig& c, const std::string& key, const std::string& value) {
        set_config_value(c, key, value);
      })
      .def("validate", [](const RunConfig& c) { validate(c); })
      .def("seeds", &RunConfig::seeds)
      .def("__str__", [](const RunConfig& c) { return format_config(c); })
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("method", &RunConfig::method)
      .def_readwrite("poison_count", &RunConfig::poison_count)
      .def_readwrite("seed_count", &RunConfig::seed_count)
      .def_readwrite("sweep_values", &RunConfig::sweep_values);

  m.def("parse_config", [](const std::string& text) { return parse_config(text); }, py::arg("text"));
  m.def("config_keys", &config_keys);
  m.def("softmax", [](const std::vector<double>& z) { return numkit::softmax(z); }, py::arg("logits"));
  m.def("gumbel_relax",
        [](const std::vector<double>& alpha, double temperature, const std::vector<double>& noise) {
          return trigger_opt::gumbel_relax(alpha, temperature, noise);
        },
        py::arg("alpha"), py::arg("temperature"), py::arg("noise"));
  m.def("run_pipeline", &run_pipeline, py::arg("config"),
        "Runs pretraining, clean training and the configured attack for config.seed; returns metrics.");
  m.def("sweep_csv", &sweep_csv, py::arg("config"), py::arg("axis"),
        "Runs a multi-seed sweep over one axis and returns the CSV report.");
}
