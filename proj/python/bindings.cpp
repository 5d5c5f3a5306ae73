#include "fewshot/cli.hpp"
#include "fewshot/protonet.hpp"
#include "fewshot/qda.hpp"
#include "fewshot/trainer.hpp"
#include "fewshot/wordrep.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace fewshot;
using trainer::json;

namespace {

protonet::PrototypeSet as_prototypes(const Matrix& prototypes) {
    protonet::PrototypeSet ps;
    ps.prototypes = prototypes;
    for (Eigen::Index c = 0; c < prototypes.rows(); ++c) ps.class_ids.push_back(std::to_string(c));
    return ps;
}

trainer::TrainConfig config_from(const std::string& text) {
    return trainer::config_from_json(json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Few-shot text classification core: OT query augmentation, prototypes, episodic training.";

    py::register_exception<Error>(m, "FewshotError", PyExc_RuntimeError);

    py::class_<qda::TransportPlan>(m, "TransportPlan")
        .def_readonly("plan", &qda::TransportPlan::plan)
        .def_readonly("epsilon", &qda::TransportPlan::epsilon)
        .def_readonly("iterations_used", &qda::TransportPlan::iterations_used)
        .def_readonly("marginal_violation", &qda::TransportPlan::marginal_violation)
        .def_readonly("converged", &qda::TransportPlan::converged)
        .def_readonly("cost", &qda::TransportPlan::cost);

    m.def("cost_matrix", &qda::cost_matrix, py::arg("a"), py::arg("b"));
    m.def("sinkhorn", &qda::sinkhorn, py::arg("cost"), py::arg("epsilon"), py::arg("tol") = 1e-6,
          py::arg("max_iter") = 1000, py::arg("epsilon_scaling") = true);
    m.def(
        "exact_ot",
        [](const Matrix& cost) {
            const auto e = qda::exact_ot_oracle(cost);
            return py::make_tuple(e.plan, e.cost);
        },
        py::arg("cost"), "Exact coupling by permutation enumeration (square, n <= 8): (plan, cost).");
    m.def("retrieve_top_r", &qda::retrieve_top_r, py::arg("plan"), py::arg("cost"), py::arg("r"));
    m.def(
        "barycentric_map",
        [](const qda::TransportPlan& plan, const std::vector<int>& retrieved, const Matrix& support) {
            return qda::barycentric_map(plan, retrieved, support).points;
        },
        py::arg("plan"), py::arg("retrieved"), py::arg("support"));
    m.def("barycentric_map_matrix", &qda::barycentric_map_matrix, py::arg("plan"), py::arg("retrieved"),
          py::arg("support"));
    m.def(
        "estimate_prototypes",
        [](const std::vector<Matrix>& support, const Matrix& queries, int r, const std::string& projection,
           double epsilon_scale) {
            qda::OtSettings s;
            s.projection = qda::parse_projection(projection);
            s.epsilon_scale = epsilon_scale;
            const auto est = qda::estimate_prototypes(support, queries, r, s);
            std::vector<std::vector<int>> retrieved;
            for (const auto& c : est.classes) retrieved.push_back(c.retrieved);
            return py::make_tuple(est.prototypes.prototypes, retrieved);
        },
        py::arg("support"), py::arg("queries"), py::arg("r"), py::arg("projection") = "retrieved_queries",
        py::arg("epsilon_scale") = 0.05, "Returns (prototypes, retrieved query indices per class).");

    m.def(
        "class_posteriors",
        [](const Matrix& queries, const Matrix& prototypes) {
            return protonet::class_posteriors(queries, as_prototypes(prototypes)).prob;
        },
        py::arg("queries"), py::arg("prototypes"));
    m.def(
        "cross_entropy",
        [](const Matrix& queries, const Matrix& prototypes, const std::vector<int>& labels) {
            return protonet::cross_entropy(protonet::class_posteriors(queries, as_prototypes(prototypes)), labels);
        },
        py::arg("queries"), py::arg("prototypes"), py::arg("labels"));
    m.def(
        "predict",
        [](const Matrix& queries, const Matrix& prototypes) {
            return protonet::predict(queries, as_prototypes(prototypes));
        },
        py::arg("queries"), py::arg("prototypes"));

    m.def("tokenize", &wordrep::tokenize, py::arg("text"));
    m.def(
        "load_precomputed",
        [](const std::filesystem::path& path) {
            py::list rows;
            for (const auto& s : wordrep::load_precomputed(path)) {
                py::dict d;
                d["id"] = s.source_id;
                d["label"] = s.label;
                d["tokens"] = s.tokens;
                d["vectors"] = s.vectors;
                rows.append(std::move(d));
            }
            return rows;
        },
        py::arg("path"));

    // Config, checkpoint and report cross the boundary as JSON text.
    m.def("default_config", [] { return trainer::config_to_json(trainer::TrainConfig{}).dump(); });
    m.def(
        "train",
        [](const std::string& config_text, int threads) {
            const auto config = config_from(config_text);
            trainer::TrainResult res;
            {
                py::gil_scoped_release release;
                res = trainer::train(config, trainer::make_sources(config), {}, threads);
            }
            return py::make_tuple(trainer::checkpoint_to_json(res.checkpoint).dump(),
                                  trainer::report_to_json(res.report).dump());
        },
        py::arg("config"), py::arg("threads") = 1);
    m.def(
        "evaluate",
        [](const std::string& checkpoint_text, const std::string& config_text, int threads) {
            const auto ck = trainer::checkpoint_from_json(json::parse(checkpoint_text));
            const auto config = config_text.empty() ? ck.config : config_from(config_text);
            trainer::RunReport report;
            {
                py::gil_scoped_release release;
                report = trainer::evaluate(ck, *trainer::make_sources(config).test, config, {threads});
            }
            return trainer::report_to_json(report).dump();
        },
        py::arg("checkpoint"), py::arg("config") = "", py::arg("threads") = 1);

    m.def(
        "cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "fewshot");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            return cli::run(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"));
}
