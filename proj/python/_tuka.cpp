// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Arrays cross the boundary as float64 NumPy arrays; images
// are (height, width, 3) in [0, 1].
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"
#include "tuka/degrade.hpp"
#include "tuka/dkil.hpp"
#include "tuka/error.hpp"
#include "tuka/experiment.hpp"
#include "tuka/retrieval.hpp"
#include "tuka/tensor.hpp"

namespace py = pybind11;
using namespace tuka;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<std::size_t> shape_of(const Array& a) {
    return {a.shape(), a.shape() + a.ndim()};
}

DenseTensor to_tensor(const Array& a) {
    return DenseTensor(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()));
}

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
    return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array from_span(std::span<const double> values, std::vector<py::ssize_t> shape) {
    Array out(shape);
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

Array from_matrix(const Matrix& m) {
    return from_span(m.data(), {static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
}

ImageF to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an image of shape (height, width, 3)");
    ImageF img(a.shape(1), a.shape(0));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

Array from_image(const ImageF& img) {
    return from_span(img.data, {static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width), 3});
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::string setting_text(const py::handle& v) {
    if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
    if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ",") + py::str(x).cast<std::string>();
        return s;
    }
    return py::str(v).cast<std::string>();
}

// Settings use the configuration-file keys; values may be numbers, strings,
// booleans or sequences.
ExperimentConfig make_config(const py::dict& settings) {
    ExperimentConfig c;
    for (const auto& [k, v] : settings) apply_setting(c, py::str(k).cast<std::string>(), setting_text(v));
    validate(c);
    return c;
}

// Keyword overrides for a degradation mode, through the same key names the
// command line accepts.
DegradeJob degrade_job(DegradeMode mode, std::uint64_t seed, const py::kwargs& kwargs) {
    DegradeJob job;
    job.mode = mode;
    for (const auto& [k, v] : kwargs) apply_degrade_setting(job, k.cast<std::string>(), setting_text(v));
    job.low_light.seed = job.overexpose.seed = seed;
    return job;
}

py::dict score_dict(const TaskScore& s) {
    py::dict d;
    d["task"] = s.task;
    d["episodes"] = s.episodes;
    d["sr"] = s.sr;
    d["spl"] = s.spl;
    d["osr"] = s.osr;
    d["m_sr"] = s.m_sr;
    d["m_spl"] = s.m_spl;
    d["m_osr"] = s.m_osr;
    return d;
}

}  // namespace

PYBIND11_MODULE(_tuka, m) {
    m.doc() = "Tucker adapters with decoupled knowledge incremental learning";

    auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<IndexError>(m, "IndexError", PyExc_IndexError);
    (void)config_error;

    // tensors ---------------------------------------------------------------
    m.def(
        "tucker_reconstruct",
        [](const Array& core, const std::vector<Array>& factors) {
            std::vector<Matrix> fs;
            for (const auto& f : factors) fs.push_back(to_matrix(f));
            const DenseTensor t = tucker_reconstruct(to_tensor(core), fs);
            return from_span(t.data(), {t.shape().begin(), t.shape().end()});
        },
        py::arg("core"), py::arg("factors"), "core x_0 U_0 x_1 U_1 ... over every mode");
    m.def(
        "contract_adapter",
        [](const Array& core, const Array& u1, const Array& u2, const Array& u3_row, const Array& u4_row) {
            return from_matrix(
                contract_adapter(to_tensor(core), to_matrix(u1), to_matrix(u2), to_vector(u3_row), to_vector(u4_row)));
        },
        py::arg("core"), py::arg("u1"), py::arg("u2"), py::arg("u3_row"), py::arg("u4_row"),
        "Weight update U1 (G x_3 u3 x_4 u4) U2^T of one expert pair");

    // adapters --------------------------------------------------------------
    m.def(
        "param_count",
        [](const std::string& kind, std::size_t out_dim, std::size_t in_dim, std::vector<std::size_t> ranks,
           std::size_t scenes, std::size_t envs, std::size_t instrs, std::size_t experts) {
            AdapterSpec spec{parse_adapter_kind(kind), out_dim, in_dim, std::move(ranks), scenes, envs, instrs, experts};
            validate(spec);
            return param_count(spec);
        },
        py::arg("kind"), py::arg("out_dim"), py::arg("in_dim"), py::arg("ranks"), py::arg("scenes") = 1,
        py::arg("envs") = 1, py::arg("instrs") = 1, py::arg("experts") = 1);
    m.def("param_count_task_lora", &param_count_task_lora, py::arg("tasks"), py::arg("out_dim"), py::arg("in_dim"),
          py::arg("rank"));

    // losses ----------------------------------------------------------------
    m.def(
        "loss_ewc",
        [](const Array& theta, const Array& prev, const Array& fisher, double lambda1) {
            return loss_ewc(to_vector(theta), to_vector(prev), to_vector(fisher), lambda1);
        },
        py::arg("theta"), py::arg("theta_prev"), py::arg("fisher"), py::arg("lambda1"));
    m.def(
        "loss_consistency",
        [](const Array& u3, const Array& u3p, const Array& u4, const Array& u4p, bool alpha, bool beta, double l2) {
            return loss_consistency(to_vector(u3), to_vector(u3p), to_vector(u4), to_vector(u4p), alpha, beta, l2);
        },
        py::arg("u3"), py::arg("u3_prev"), py::arg("u4"), py::arg("u4_prev"), py::arg("alpha"), py::arg("beta"),
        py::arg("lambda2"));
    m.def(
        "loss_orthogonal",
        [](const Array& u3, const Array& u4, bool alpha, bool beta, double l3) {
            return loss_orthogonal(to_matrix(u3), to_matrix(u4), alpha, beta, l3);
        },
        py::arg("u3"), py::arg("u4"), py::arg("alpha"), py::arg("beta"), py::arg("lambda3"));
    m.def(
        "orthogonality_penalty", [](const Array& u) { return orthogonality_penalty(to_matrix(u)); }, py::arg("u"));

    // retrieval and metrics ---------------------------------------------------
    m.def(
        "cosine_sim", [](const Array& u, const Array& v) { return cosine_sim(to_vector(u), to_vector(v)); },
        py::arg("u"), py::arg("v"));
    m.def(
        "episode_scores",
        [](std::vector<std::vector<double>> trajectory, std::vector<double> goal, double tl_ref, double epsilon,
           const std::string& convention) {
            EpisodeRecord r{std::move(trajectory), std::move(goal), tl_ref, 0.0, epsilon};
            r.tl = path_length(r.trajectory);
            validate(r);
            if (convention != "standard" && convention != "literal")
                throw ConfigError("convention: expected standard or literal, got " + convention);
            const auto conv = convention == "literal" ? SplConvention::literal : SplConvention::standard;
            py::dict d;
            d["sr"] = success_rate(r);
            d["osr"] = oracle_success(r);
            d["spl"] = spl(r, conv);
            d["tl"] = r.tl;
            return d;
        },
        py::arg("trajectory"), py::arg("goal"), py::arg("tl_ref"), py::arg("epsilon") = 3.0,
        py::arg("convention") = "standard", "SR, OS and SPL of one episode");
    m.def("forgetting_rate", &forgetting_rate, py::arg("reference"), py::arg("value"),
          "(M - X) / M, or None when the reference is missing or not positive");

    // degradation -----------------------------------------------------------
    m.def(
        "scatter",
        [](const Array& img, std::optional<Array> depth, const py::kwargs& kw) {
            const DegradeJob job = degrade_job(DegradeMode::scattering, 0, kw);
            const ImageF in = to_image(img);
            if (!depth) return from_image(scatter(in, job.scatter));
            if (depth->ndim() != 2) throw DimensionError("depth must be (height, width)");
            DepthMap d(depth->shape(1), depth->shape(0));
            d.data = to_vector(*depth);
            return from_image(scatter(in, d, job.scatter));
        },
        py::arg("image"), py::arg("depth") = py::none(),
        "Atmospheric scattering; keyword overrides such as beta=0.02 or airlight=[1,1,1]");
    m.def(
        "low_light",
        [](const Array& img, std::uint64_t seed, const py::kwargs& kw) {
            return from_image(low_light(to_image(img), degrade_job(DegradeMode::lowlight, seed, kw).low_light));
        },
        py::arg("image"), py::arg("seed") = 0);
    m.def(
        "overexpose",
        [](const Array& img, std::uint64_t seed, const py::kwargs& kw) {
            return from_image(overexpose(to_image(img), degrade_job(DegradeMode::overexposure, seed, kw).overexpose));
        },
        py::arg("image"), py::arg("seed") = 0);

    // experiments -----------------------------------------------------------
    m.def(
        "config_text",
        [](const py::dict& settings) { return to_text(make_config(settings)); },
        py::arg("settings") = py::dict(), "Resolved configuration as key = value text");
    m.def(
        "config_hash",
        [](const py::dict& settings) { return config_hash(make_config(settings)); },
        py::arg("settings") = py::dict());
    m.def(
        "run_stream",
        [](const py::dict& settings) {
            const ExperimentConfig c = make_config(settings);
            StreamRun run;
            {
                py::gil_scoped_release release;
                run = run_stream(Experiment(c));
            }
            py::list scores;
            for (const auto& s : run.final.scores) scores.append(score_dict(s));
            py::dict out;
            out["scores"] = scores;
            out["retrieval_accuracy"] = run.final.retrieval_accuracy();
            out["report"] = to_python(nlohmann::json::parse(report_json(aggregate(run.final.scores))));
            return out;
        },
        py::arg("settings") = py::dict(),
        "Trains the whole stream in memory and returns final scores and the report");
    m.def(
        "train",
        [](const py::dict& settings, const std::filesystem::path& output,
           std::optional<std::size_t> stop_after) {
            ExperimentConfig c = make_config(settings);
            c.output_dir = output;
            py::gil_scoped_release release;
            return cmd_train(c, {stop_after, true});
        },
        py::arg("settings"), py::arg("output"), py::arg("stop_after") = py::none(),
        "Trains into a run directory, resuming when possible; returns completed tasks");
    m.def(
        "gradcheck",
        [](const py::dict& settings, double h, double tolerance) {
            const ExperimentConfig c = make_config(settings);
            std::vector<GradcheckEntry> entries;
            {
                py::gil_scoped_release release;
                entries = gradcheck(c, h, tolerance);
            }
            py::list out;
            for (const auto& e : entries) {
                py::dict d;
                d["block"] = e.block;
                d["setting"] = e.setting;
                d["entries"] = e.entries;
                d["max_rel_error"] = e.max_rel_error;
                d["pass"] = e.pass;
                out.append(d);
            }
            return out;
        },
        py::arg("settings") = py::dict(), py::arg("h") = 1e-3, py::arg("tolerance") = 1e-4);
}
