#include "catuda/errors.hpp"
#include "catuda/eval.hpp"
#include "catuda/experiment.hpp"
#include "catuda/losses.hpp"
#include "catuda/teacher.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace catuda;

namespace {

py::dict metrics_dict(const RunMetrics& m) {
    py::dict d;
    d["iteration"] = m.iteration;
    d["target_acc"] = m.target_accuracy;
    d["source_acc"] = m.source_accuracy;
    d["cluster_acc"] = m.clustering_accuracy;
    d["jsd_proxy"] = m.jsd_proxy;
    d["selection_rate"] = m.selection_rate;
    d["l_y"] = m.l_y;
    d["l_c"] = m.l_c;
    d["l_a"] = m.l_a;
    d["l_d"] = m.l_d;
    return d;
}

ExperimentConfig with_overrides(const std::string& yaml, std::optional<std::vector<std::uint64_t>> seeds,
                                std::optional<std::string> output_dir) {
    auto cfg = parse_config(yaml);
    if (seeds) cfg.seeds = *seeds;
    if (output_dir) cfg.output_dir = *output_dir;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cluster alignment with a teacher for unsupervised domain adaptation";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    m.def("resolve_config", [](const std::string& yaml) { return resolved_yaml(parse_config(yaml)); },
          py::arg("yaml"), "Fully resolved configuration, defaults included, as YAML text.");
    m.def("config_hash", [](const std::string& yaml) { return config_hash(parse_config(yaml)); }, py::arg("yaml"));

    m.def(
        "run",
        [](const std::string& yaml, std::optional<std::vector<std::uint64_t>> seeds,
           std::optional<std::string> output_dir) {
            const auto cfg = with_overrides(yaml, seeds, output_dir);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg, output_dir.has_value());
            }
            py::dict out;
            out["mean"] = r.mean_target_accuracy;
            out["std"] = r.std_target_accuracy;
            out["cell"] = r.cell;
            out["config_hash"] = r.config_hash;
            out["error"] = r.error;
            py::list per_seed;
            for (const auto& s : r.seeds) {
                py::dict d;
                d["seed"] = s.seed;
                d["final"] = metrics_dict(s.final_metrics);
                py::list log;
                for (const auto& row : s.metrics) log.append(metrics_dict(row));
                d["metrics"] = log;
                per_seed.append(d);
            }
            out["seeds"] = per_seed;
            return out;
        },
        py::arg("yaml"), py::arg("seeds") = py::none(), py::arg("output_dir") = py::none(),
        "Train every seed. Files are written only when output_dir is given.");

    m.def(
        "make_dataset",
        [](const std::string& yaml, std::uint64_t seed) {
            const auto ds = make_dataset(parse_config(yaml), seed);
            return py::make_tuple(ds.source_x(), ds.source_y(), ds.target_x(), hidden_target_labels(ds));
        },
        py::arg("yaml"), py::arg("seed"), "(source_x, source_y, target_x, target_y) for one seed.");

    m.def(
        "clustering_loss",
        [](const Matrix& features, const std::vector<int>& labels, double margin) {
            const auto r = clustering_loss(features, labels, margin);
            return py::make_tuple(r.loss, r.d_features);
        },
        py::arg("features"), py::arg("labels"), py::arg("margin") = 3.0);

    m.def(
        "alignment_loss",
        [](const Matrix& fs, const std::vector<int>& ys, const Matrix& ft, const std::vector<int>& yt, int k) {
            const auto r = alignment_loss(PseudoLabeledBatch{fs, ys, std::vector<double>(ys.size(), 1.0), k},
                                          PseudoLabeledBatch{ft, yt, std::vector<double>(yt.size(), 1.0), k});
            return py::make_tuple(r.loss, r.d_features_source, r.d_features_target);
        },
        py::arg("source_features"), py::arg("source_labels"), py::arg("target_features"),
        py::arg("target_labels"), py::arg("num_classes"));

    m.def(
        "adversarial_loss",
        [](const std::vector<double>& source_out, const std::vector<double>& target_out,
           const std::vector<double>& confidences, double p) {
            return domain_adversarial_loss(source_out, target_out, confidences, p).loss;
        },
        py::arg("source_out"), py::arg("target_out"), py::arg("confidences"), py::arg("p") = 0.9);

    py::class_<TemporalEnsemble>(m, "TemporalEnsemble")
        .def(py::init<std::size_t, std::size_t, double>(), py::arg("num_samples"), py::arg("num_classes"),
             py::arg("decay") = 0.6)
        .def("update", [](TemporalEnsemble& t, const std::vector<std::size_t>& idx,
                          const Matrix& p) { t.update(idx, p); })
        .def("corrected", [](const TemporalEnsemble& t, const std::vector<std::size_t>& idx) { return t.corrected(idx); })
        .def("raw", [](const TemporalEnsemble& t) { return Matrix(t.raw()); })
        .def("to_csv", [](const TemporalEnsemble& t) {
            std::ostringstream os;
            write_teacher_csv(os, t);
            return os.str();
        });

    m.def("kmeans_cluster_accuracy",
          [](const Matrix& points, const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
              return cluster_accuracy(kmeans_restarts(points, k, seed).assignments, labels);
          },
          py::arg("points"), py::arg("labels"), py::arg("k"), py::arg("seed") = 0);
}
