#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fiberseg/config.hpp"
#include "fiberseg/errors.hpp"
#include "fiberseg/harness.hpp"
#include "fiberseg/metrics.hpp"
#include "fiberseg/nn.hpp"
#include "fiberseg/prune.hpp"
#include "fiberseg/report_io.hpp"
#include "fiberseg/synth.hpp"
#include "fiberseg/trk.hpp"
#include "fiberseg/version.hpp"

namespace py = pybind11;
using namespace fiberseg;

namespace {

std::vector<std::size_t> counts_to_vector(const SynthConfig& c) {
    return std::vector<std::size_t>(c.class_counts.begin(), c.class_counts.end());
}

void counts_from_vector(SynthConfig& c, const std::vector<std::size_t>& v) {
    if (v.size() != c.class_counts.size())
        throw BadConfig("class_counts needs 9 entries");
    for (std::size_t i = 0; i < v.size(); ++i) c.class_counts[i] = v[i];
}

}  // namespace

PYBIND11_MODULE(_fiberseg, m) {
    m.doc() = "Tractography fiber classification: .trk IO, curvature pruning, "
              "stacked BiLSTM training and the evaluation protocols.";
    m.attr("__version__") = kVersion;

    py::register_exception<ConfigError>(m, "FibersegConfigError");
    py::register_exception<DataError>(m, "FibersegDataError");
    py::register_exception<NumericalError>(m, "FibersegNumericalError");

    // ---- trk io ----------------------------------------------------------
    py::class_<TrkHeader>(m, "TrkHeader")
        .def(py::init<>())
        .def_readwrite("dim", &TrkHeader::dim)
        .def_readwrite("voxel_size", &TrkHeader::voxel_size)
        .def_readwrite("origin", &TrkHeader::origin)
        .def_readwrite("n_scalars", &TrkHeader::n_scalars)
        .def_readwrite("n_properties", &TrkHeader::n_properties)
        .def_readwrite("n_count", &TrkHeader::n_count)
        .def_readwrite("version", &TrkHeader::version)
        .def_readwrite("hdr_size", &TrkHeader::hdr_size);

    py::class_<Fiber>(m, "Fiber")
        .def(py::init<>())
        .def_readwrite("points", &Fiber::points)
        .def_readwrite("label", &Fiber::label)
        .def("__len__", [](const Fiber& f) { return f.points.size(); });

    py::class_<Tractogram>(m, "Tractogram")
        .def(py::init<>())
        .def_readwrite("header", &Tractogram::header)
        .def_readwrite("fibers", &Tractogram::fibers)
        .def("__len__", [](const Tractogram& t) { return t.fibers.size(); });

    m.def("read_trk", [](const std::string& path) { return read_trk_file(path); },
          py::arg("path"));
    m.def("parse_trk",
          [](const py::bytes& data) {
              const std::string s = data;
              return read_trk(std::vector<unsigned char>(s.begin(), s.end()));
          },
          py::arg("data"));
    m.def("write_trk",
          [](const Tractogram& t, const std::string& path) { write_trk_file(t, path); },
          py::arg("tractogram"), py::arg("path"));
    m.def("trk_bytes",
          [](const Tractogram& t) {
              const auto bytes = write_trk(t);
              return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
          },
          py::arg("tractogram"));
    m.def("read_labels", [](const std::string& path) { return read_labels_file(path); },
          py::arg("path"));
    m.def("parse_labels", [](const std::string& text) { return read_labels(text); },
          py::arg("text"));
    m.def("write_labels",
          [](const std::vector<int>& labels, const std::string& path) {
              write_labels_file(labels, path);
          },
          py::arg("labels"), py::arg("path"));

    // ---- pruning ---------------------------------------------------------
    py::enum_<Plane>(m, "Plane")
        .value("XY", Plane::XY)
        .value("YZ", Plane::YZ)
        .value("ZX", Plane::ZX);

    py::class_<MaskedSequence>(m, "MaskedSequence")
        .def(py::init<>())
        .def_readwrite("coords", &MaskedSequence::coords)
        .def_readwrite("valid", &MaskedSequence::valid)
        .def("n_valid", &MaskedSequence::n_valid)
        .def("__len__", [](const MaskedSequence& s) { return s.length(); });

    m.def("project",
          [](const std::vector<std::array<double, 3>>& pts, Plane plane) {
              return project(pts, plane);
          },
          py::arg("points"), py::arg("plane"));
    m.def("curvature_scores",
          [](const Fiber& f) { return curvature_scores(f).scores; }, py::arg("fiber"));
    m.def("prune_fiber", &prune_fiber, py::arg("fiber"),
          py::arg("keep_fraction") = kDefaultKeepFraction);
    m.def("to_fixed_length", &to_fixed_length, py::arg("fiber"),
          py::arg("max_len") = kDefaultSeqLen, py::arg("mask_value") = kDefaultMaskValue);
    m.def("shift_off_mask_value", &shift_off_mask_value, py::arg("fiber"),
          py::arg("mask_value") = kDefaultMaskValue, py::arg("eps") = 1e-6);

    // ---- synthetic data ----------------------------------------------------
    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_property("class_counts", &counts_to_vector, &counts_from_vector)
        .def_readwrite("seed", &SynthConfig::seed)
        .def_readwrite("global_jitter", &SynthConfig::global_jitter)
        .def_readwrite("brain_rotation_max", &SynthConfig::brain_rotation_max)
        .def_readwrite("brain_scale_max", &SynthConfig::brain_scale_max);

    py::class_<LabeledBrain>(m, "LabeledBrain")
        .def_readonly("tractogram", &LabeledBrain::tractogram)
        .def_readonly("labels", &LabeledBrain::labels)
        .def_readonly("id", &LabeledBrain::id);

    m.def("generate_brain", &generate_brain, py::arg("config"));
    m.def("generate_cohort", &generate_cohort, py::arg("config"), py::arg("n_brains"),
          py::arg("seed"));

    // ---- model / training ---------------------------------------------------
    py::enum_<Level>(m, "Level").value("MACRO", Level::Macro).value("MICRO", Level::Micro);
    py::enum_<Protocol>(m, "Protocol")
        .value("INTRA", Protocol::Intra)
        .value("INTER", Protocol::Inter)
        .value("MERGED", Protocol::Merged);

    py::class_<ModelParams>(m, "ModelParams")
        .def_property_readonly("input_dim", &ModelParams::input_dim)
        .def_property_readonly("output_dim", &ModelParams::output_dim);

    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("train_fraction", &TrainConfig::train_fraction)
        .def_readwrite("val_fraction", &TrainConfig::val_fraction)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("level", &TrainConfig::level)
        .def_readwrite("bilstm_hidden", &TrainConfig::bilstm_hidden)
        .def_readwrite("stack_hidden", &TrainConfig::stack_hidden)
        .def_readwrite("dense_hidden", &TrainConfig::dense_hidden)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("beta1", &TrainConfig::beta1)
        .def_readwrite("beta2", &TrainConfig::beta2)
        .def_readwrite("epsilon", &TrainConfig::epsilon)
        .def_readwrite("clip_norm", &TrainConfig::clip_norm)
        .def_readwrite("input_scale", &TrainConfig::input_scale)
        .def_readwrite("threads", &TrainConfig::threads)
        .def_readwrite("seq_len", &TrainConfig::seq_len)
        .def_readwrite("mask_value", &TrainConfig::mask_value)
        .def_readwrite("inter_test_fraction", &TrainConfig::inter_test_fraction);

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<>())
        .def_readwrite("sequences", &Dataset::sequences)
        .def_readwrite("labels", &Dataset::labels)
        .def_readwrite("brain_id", &Dataset::brain_id)
        .def("__len__", &Dataset::size);

    m.def("make_dataset",
          [](const Tractogram& t, const std::vector<int>& labels,
             const std::string& brain_id, std::size_t max_len, double mask_value) {
              return make_dataset(t, labels, brain_id, max_len, mask_value);
          },
          py::arg("tractogram"), py::arg("labels"), py::arg("brain_id") = "brain",
          py::arg("max_len") = kDefaultSeqLen, py::arg("mask_value") = kDefaultMaskValue);
    m.def("make_brain_dataset",
          [](const LabeledBrain& b, std::size_t max_len, double mask_value) {
              return make_dataset(b, max_len, mask_value);
          },
          py::arg("brain"), py::arg("max_len") = kDefaultSeqLen,
          py::arg("mask_value") = kDefaultMaskValue);

    py::class_<SplitIndices>(m, "SplitIndices")
        .def_readonly("train", &SplitIndices::train)
        .def_readonly("val", &SplitIndices::val)
        .def_readonly("test", &SplitIndices::test);
    m.def("split_train_val", &split_train_val, py::arg("dataset"), py::arg("config"));
    m.def("subset", &subset, py::arg("dataset"), py::arg("indices"));
    m.def("to_macro", &to_macro, py::arg("dataset"));
    m.def("to_micro", &to_micro, py::arg("dataset"));

    py::class_<EpochStats>(m, "EpochStats")
        .def_readonly("epoch", &EpochStats::epoch)
        .def_readonly("train_loss", &EpochStats::train_loss)
        .def_readonly("train_acc", &EpochStats::train_acc)
        .def_readonly("val_loss", &EpochStats::val_loss)
        .def_readonly("val_acc", &EpochStats::val_acc);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("params", &TrainResult::params)
        .def_readonly("history", &TrainResult::history)
        .def_readonly("best_epoch", &TrainResult::best_epoch);

    m.def("train", &train, py::arg("config"), py::arg("train_set"), py::arg("val_set"),
          py::call_guard<py::gil_scoped_release>());

    m.def("predict_probs", &predict_probs, py::arg("model"), py::arg("sequence"),
          py::arg("input_scale") = 0.01);
    m.def("predict_macro", &predict_macro, py::arg("model"), py::arg("sequence"),
          py::arg("input_scale") = 0.01);
    m.def("predict_micro", &predict_micro, py::arg("model"), py::arg("sequence"),
          py::arg("input_scale") = 0.01);
    m.def("hierarchical_predict", &hierarchical_predict, py::arg("macro_model"),
          py::arg("micro_model"), py::arg("sequence"), py::arg("input_scale") = 0.01);

    // ---- metrics / protocols -------------------------------------------------
    py::class_<Confusion>(m, "Confusion")
        .def_readonly("k", &Confusion::k)
        .def_readonly("counts", &Confusion::counts)
        .def("total", &Confusion::total)
        .def("trace", &Confusion::trace);

    m.def("accuracy", &accuracy, py::arg("pred"), py::arg("truth"));
    m.def("recall_white", &recall_white, py::arg("pred_macro"), py::arg("true_macro"));
    m.def("confusion_matrix", &confusion_matrix, py::arg("pred"), py::arg("truth"),
          py::arg("classes"));

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("protocol", &EvalReport::protocol)
        .def_readonly("level", &EvalReport::level)
        .def_readonly("unit", &EvalReport::unit)
        .def_readonly("trained_on", &EvalReport::trained_on)
        .def_readonly("accuracy", &EvalReport::accuracy)
        .def_readonly("recall_white", &EvalReport::recall_white)
        .def_readonly("hierarchical_accuracy", &EvalReport::hierarchical_accuracy)
        .def_readonly("confusion", &EvalReport::confusion)
        .def_readonly("history", &EvalReport::history);

    m.def("evaluate_macro", &evaluate_macro, py::arg("macro_model"), py::arg("test"),
          py::arg("config"), py::arg("protocol"), py::arg("unit"), py::arg("trained_on"));
    m.def("run_protocol", &run_protocol, py::arg("protocol"), py::arg("brains"),
          py::arg("config"), py::arg("inter_train_index") = 1,
          py::call_guard<py::gil_scoped_release>());
    m.def("report_to_text", &report_to_text, py::arg("report"));
    m.def("summary_table", &summary_table, py::arg("reports"));
}
