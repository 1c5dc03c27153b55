#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "affinity/checkpoint.hpp"
#include "affinity/data.hpp"
#include "affinity/errors.hpp"
#include "affinity/metrics.hpp"
#include "affinity/report.hpp"
#include "affinity/trainer.hpp"
#include "affinity/version.hpp"

namespace py = pybind11;
using namespace affinity;

namespace {

py::array_t<double> probs_to_array(const std::vector<std::array<double, 2>>& probs) {
  py::array_t<double> out({static_cast<py::ssize_t>(probs.size()), static_cast<py::ssize_t>(2)});
  auto view = out.mutable_unchecked<2>();
  for (size_t i = 0; i < probs.size(); ++i) {
    view(static_cast<py::ssize_t>(i), 0) = probs[i][0];
    view(static_cast<py::ssize_t>(i), 1) = probs[i][1];
  }
  return out;
}

std::vector<std::array<double, 2>> array_to_probs(const py::array_t<double>& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 2)
    throw ShapeError("probabilities must be an (n, 2) array");
  auto view = arr.unchecked<2>();
  std::vector<std::array<double, 2>> out(static_cast<size_t>(arr.shape(0)));
  for (py::ssize_t i = 0; i < arr.shape(0); ++i) out[static_cast<size_t>(i)] = {view(i, 0), view(i, 1)};
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "antibody binding-affinity classifier core";
  m.attr("__version__") = kVersion;

  py::register_exception<Error>(m, "AffinityError", PyExc_RuntimeError);

  // vocabulary / tokenizer
  py::class_<Vocabulary>(m, "Vocabulary")
      .def_property_readonly("size", &Vocabulary::size)
      .def("token", &Vocabulary::token, py::arg("id"))
      .def("id_of", [](const Vocabulary& v, const std::string& c) {
        if (c.size() != 1) throw ValueError("id_of expects a single character");
        return v.id_of(c[0]);
      })
      .def_property_readonly("tokens", &Vocabulary::tokens)
      .def_readonly_static("PAD", &Vocabulary::kPad)
      .def_readonly_static("UNK", &Vocabulary::kUnk)
      .def_readonly_static("CLS", &Vocabulary::kCls)
      .def_readonly_static("SEP", &Vocabulary::kSep)
      .def_readonly_static("MASK", &Vocabulary::kMask);
  m.def("build_vocabulary", &build_vocabulary, py::return_value_policy::reference);

  py::class_<TokenizedSample>(m, "TokenizedSample")
      .def(py::init<>())
      .def_readwrite("input_ids", &TokenizedSample::input_ids)
      .def_readwrite("attention_mask", &TokenizedSample::attention_mask)
      .def_readwrite("label", &TokenizedSample::label);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("samples", &Dataset::samples)
      .def_readwrite("provenance", &Dataset::provenance)
      .def("__len__", &Dataset::size)
      .def("labels", &Dataset::labels);

  m.def(
      "tokenize",
      [](const std::string& seq, int max_len) { return tokenize(seq, build_vocabulary(), max_len); },
      py::arg("sequence"), py::arg("max_len") = 256);
  m.def(
      "detokenize",
      [](const TokenizedSample& s) { return detokenize(s, build_vocabulary()); },
      py::arg("sample"));

  m.def("load_jsonl", &load_jsonl, py::arg("path"));
  m.def("save_jsonl", &save_jsonl, py::arg("dataset"), py::arg("path"));
  m.def(
      "synth_generate",
      [](int n, const std::string& motif, int seq_len, double noise, uint64_t seed) {
        Rng rng(seed);
        return synth_generate(n, motif, seq_len, noise, rng);
      },
      py::arg("n"), py::arg("motif"), py::arg("seq_len") = 120, py::arg("noise") = 0.0,
      py::arg("seed") = 7);

  py::class_<FoldAssignment>(m, "FoldAssignment")
      .def_readonly("k", &FoldAssignment::k)
      .def_readonly("seed", &FoldAssignment::seed)
      .def_readonly("assignment", &FoldAssignment::assignment)
      .def("fold_indices", &FoldAssignment::fold_indices)
      .def("complement_indices", &FoldAssignment::complement_indices)
      .def("to_json", &fold_assignment_to_json);
  m.def("stratified_kfold", &stratified_kfold, py::arg("labels"), py::arg("k"), py::arg("seed"));

  // configs
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("num_query_heads", &ModelConfig::num_query_heads)
      .def_readwrite("num_key_value_heads", &ModelConfig::num_key_value_heads)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("intermediate_dim", &ModelConfig::intermediate_dim)
      .def_readwrite("vocabulary_size", &ModelConfig::vocabulary_size)
      .def_readwrite("rope_max_wavelength", &ModelConfig::rope_max_wavelength)
      .def_readwrite("rope_scaling_factor", &ModelConfig::rope_scaling_factor)
      .def_readwrite("norm_epsilon", &ModelConfig::norm_epsilon)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("causal_attention", &ModelConfig::causal_attention)
      .def("validate", &ModelConfig::validate)
      .def("parameter_count", &ModelConfig::parameter_count)
      .def("to_json", &ModelConfig::to_json)
      .def_static("from_json", &ModelConfig::from_json);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
      .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("k_folds", &TrainConfig::k_folds)
      .def("to_json", &TrainConfig::to_json)
      .def_static("from_json", &TrainConfig::from_json);

  // metrics
  py::class_<ConfusionMatrix>(m, "ConfusionMatrix")
      .def(py::init<>())
      .def_readwrite("tp", &ConfusionMatrix::tp)
      .def_readwrite("fp", &ConfusionMatrix::fp)
      .def_readwrite("fn", &ConfusionMatrix::fn)
      .def_readwrite("tn", &ConfusionMatrix::tn)
      .def("total", &ConfusionMatrix::total);
  m.def("confusion", &confusion, py::arg("pred_labels"), py::arg("true_labels"));
  m.def("accuracy", [](const ConfusionMatrix& cm) { return accuracy(cm); });
  m.def("precision", [](const ConfusionMatrix& cm) { return precision(cm); });
  m.def("recall", [](const ConfusionMatrix& cm) { return recall(cm); });
  m.def("f1_score", [](const ConfusionMatrix& cm) { return f1_score(cm); });

  py::class_<RocPoint>(m, "RocPoint")
      .def_readonly("fpr", &RocPoint::fpr)
      .def_readonly("tpr", &RocPoint::tpr)
      .def_readonly("threshold", &RocPoint::threshold);
  py::class_<RocCurve>(m, "RocCurve")
      .def_readonly("points", &RocCurve::points)
      .def("to_csv", &RocCurve::to_csv);
  m.def("roc_curve", &roc_curve, py::arg("scores"), py::arg("true_labels"));
  m.def("roc_auc", py::overload_cast<const std::vector<double>&, const std::vector<int>&>(&roc_auc),
        py::arg("scores"), py::arg("true_labels"));

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("accuracy", &MetricsReport::accuracy)
      .def_readonly("precision", &MetricsReport::precision)
      .def_readonly("recall", &MetricsReport::recall)
      .def_readonly("f1", &MetricsReport::f1)
      .def_readonly("roc_auc", &MetricsReport::roc_auc)
      .def_readonly("confusion", &MetricsReport::confusion)
      .def_readonly("degenerate", &MetricsReport::degenerate)
      .def_property_readonly("normalized_confusion",
                             [](const MetricsReport& r) {
                               return std::vector<std::vector<double>>{
                                   {r.normalized_confusion[0][0], r.normalized_confusion[0][1]},
                                   {r.normalized_confusion[1][0], r.normalized_confusion[1][1]}};
                             })
      .def("to_json", &MetricsReport::to_json);
  m.def(
      "evaluate",
      [](const py::array_t<double>& probs, const std::vector<int>& labels) {
        return evaluate(array_to_probs(probs), labels);
      },
      py::arg("probabilities"), py::arg("true_labels"));

  // training
  py::class_<FoldReport>(m, "FoldReport")
      .def_readonly("fold", &FoldReport::fold)
      .def_readonly("accuracy", &FoldReport::accuracy)
      .def_readonly("f1", &FoldReport::f1)
      .def_readonly("precision", &FoldReport::precision)
      .def_readonly("recall", &FoldReport::recall)
      .def_readonly("roc_auc", &FoldReport::roc_auc)
      .def_readonly("training_minutes", &FoldReport::training_minutes);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("model", &Checkpoint::model)
      .def_readonly("train", &Checkpoint::train)
      .def_readonly("fold", &Checkpoint::fold)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("seed", &Checkpoint::seed)
      .def("save", [](Checkpoint& cp, const std::string& path) { save_checkpoint(cp, path); });
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("checkpoint", &TrainResult::checkpoint)
      .def_readonly("report", &TrainResult::report)
      .def_readonly("metrics", &TrainResult::metrics)
      .def_readonly("epoch_mean_losses", &TrainResult::epoch_mean_losses)
      .def_property_readonly("test_probabilities", [](const TrainResult& r) {
        return probs_to_array(r.test_probabilities);
      });

  m.def("train_fold", &train_fold, py::arg("train_set"), py::arg("test_set"), py::arg("model_config"),
        py::arg("train_config"), py::call_guard<py::gil_scoped_release>());

  py::class_<CvResult>(m, "CvResult")
      .def_readonly("assignment", &CvResult::assignment)
      .def_readonly("folds", &CvResult::folds)
      .def_readonly("average", &CvResult::average);
  m.def("cross_validate", &cross_validate, py::arg("dataset"), py::arg("model_config"),
        py::arg("train_config"), py::arg("parallel") = false,
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "predict_proba",
      [](Checkpoint& cp, const Dataset& ds) {
        return probs_to_array(predict_dataset(cp.params, cp.model, ds, cp.train.batch_size));
      },
      py::arg("checkpoint"), py::arg("dataset"));

  m.def("fold_reports_to_table", &fold_reports_to_table, py::arg("folds"), py::arg("average"));
  m.def("fold_reports_to_json", &fold_reports_to_json, py::arg("folds"), py::arg("average"));
  m.def("average_report", &average_report, py::arg("folds"));
}
