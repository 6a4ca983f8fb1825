#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "d3hr/cli.hpp"
#include "d3hr/ddim.hpp"
#include "d3hr/distill.hpp"
#include "d3hr/error.hpp"
#include "d3hr/eval.hpp"
#include "d3hr/gmm_world.hpp"
#include "d3hr/rng.hpp"
#include "d3hr/serialize.hpp"

namespace py = pybind11;
using namespace d3hr;

namespace {

using Points = std::vector<Vector>;

LossWeights weights_from(const std::tuple<double, double, double>& w) {
    return {std::get<0>(w), std::get<1>(w), std::get<2>(w)};
}

std::tuple<double, double, double> weights_tuple(const LossWeights& w) { return {w.mu, w.sigma, w.skew}; }

LatentBatch batch_at(Points points, std::size_t cls, std::size_t timestep) {
    LatentBatch b;
    b.dimension = points.empty() ? 0 : points.front().size();
    b.latents = std::move(points);
    b.class_index = cls;
    b.timestep = timestep;
    return b;
}

Dataset dataset_from(const Points& xs, const std::vector<std::size_t>& labels) {
    D3HR_REQUIRE(xs.size() == labels.size(), "points and labels differ in length");
    Dataset d;
    d.dimension = xs.empty() ? 0 : xs.front().size();
    for (std::size_t i = 0; i < xs.size(); ++i) d.points.push_back({xs[i], labels[i]});
    d.validate();
    return d;
}

}  // namespace

PYBIND11_MODULE(_d3hr, m) {
    m.doc() = "Dataset distillation over Gaussian-mixture worlds";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<GmmSpec>(m, "GmmSpec")
        .def_readonly("dimension", &GmmSpec::dimension)
        .def_property_readonly("num_classes", &GmmSpec::num_classes)
        .def("to_json", [](const GmmSpec& s) { return to_json(s).dump(); })
        .def_static("from_json", [](const std::string& text) { return gmm_spec_from_json(Json::parse(text)); })
        .def("digest", [](const GmmSpec& s) { return spec_digest(s); })
        .def("components", [](const GmmSpec& s, std::size_t cls) {
            D3HR_REQUIRE(cls < s.num_classes(), "class index out of range");
            std::vector<std::tuple<double, Vector, Vector>> out;
            for (const auto& c : s.classes[cls]) out.emplace_back(c.weight, c.mean, c.std);
            return out;
        });

    py::class_<Dataset>(m, "Dataset")
        .def(py::init(&dataset_from), py::arg("points"), py::arg("labels"))
        .def_readonly("dimension", &Dataset::dimension)
        .def_readonly("seed", &Dataset::seed)
        .def_readonly("spec_digest", &Dataset::spec_digest)
        .def_property_readonly("num_classes", &Dataset::num_classes)
        .def_property_readonly("points",
                               [](const Dataset& d) {
                                   Points xs;
                                   for (const auto& p : d.points) xs.push_back(p.x);
                                   return xs;
                               })
        .def_property_readonly("labels",
                               [](const Dataset& d) {
                                   std::vector<std::size_t> ys;
                                   for (const auto& p : d.points) ys.push_back(p.label);
                                   return ys;
                               })
        .def("class_points", &Dataset::class_points, py::arg("label"))
        .def("__len__", [](const Dataset& d) { return d.points.size(); })
        .def("to_json", [](const Dataset& d) { return to_json(d).dump(); })
        .def_static("from_json", [](const std::string& text) { return dataset_from_json(Json::parse(text)); });

    m.def("default_world", &default_world, py::arg("world_seed") = 2024);
    m.def("sample_dataset", &sample_dataset, py::arg("spec"), py::arg("n_per_class"), py::arg("seed"));
    m.def(
        "marginal_at",
        [](const GmmSpec& s, std::size_t cls, double abar) {
            std::vector<std::tuple<double, Vector, Vector>> out;
            for (const auto& c : marginal_at(s, cls, abar)) out.emplace_back(c.weight, c.mean, c.std);
            return out;
        },
        py::arg("spec"), py::arg("cls"), py::arg("alpha_bar"));
    m.def(
        "gmm_log_density",
        [](const GmmSpec& s, std::size_t cls, const Vector& x, double abar) {
            return gmm_log_density(marginal_at(s, cls, abar), x);
        },
        py::arg("spec"), py::arg("cls"), py::arg("point"), py::arg("alpha_bar") = 1.0,
        "Log density of the class mixture diffused to alpha_bar.");
    m.def(
        "analytic_epsilon",
        [](const GmmSpec& s, std::size_t cls, const Vector& z, double abar) { return analytic_epsilon(s, cls, z, abar); },
        py::arg("spec"), py::arg("cls"), py::arg("z"), py::arg("alpha_bar"));

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("train_steps", &NoiseSchedule::train_steps)
        .def_readonly("beta_start", &NoiseSchedule::beta_start)
        .def_readonly("beta_end", &NoiseSchedule::beta_end)
        .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
        .def_readonly("inference_steps", &NoiseSchedule::inference_steps)
        .def_property_readonly("num_steps", &NoiseSchedule::num_steps);

    m.def("build_schedule", &build_schedule, py::arg("train_steps"), py::arg("beta_start"), py::arg("beta_end"),
          py::arg("num_inference"), py::arg("terminal_step") = std::nullopt);
    m.def("default_schedule", &default_schedule, py::arg("num_inference") = kDefaultInferenceSteps);

    m.def(
        "ddim_sample_step",
        [](const Vector& z, double from, double to, const Vector& eps) { return ddim_sample_step(z, from, to, eps); },
        py::arg("z"), py::arg("abar_from"), py::arg("abar_to"), py::arg("eps"));
    m.def(
        "ddim_invert_step",
        [](const Vector& z, double from, double to, const Vector& eps) { return ddim_invert_step(z, from, to, eps); },
        py::arg("z"), py::arg("abar_from"), py::arg("abar_to"), py::arg("eps"));
    m.def(
        "ddpm_forward", [](const Vector& z0, double abar, const Vector& noise) { return ddpm_forward(z0, abar, noise); },
        py::arg("z0"), py::arg("alpha_bar"), py::arg("noise"));
    m.def(
        "invert",
        [](Points pts, std::size_t cls, const NoiseSchedule& s, const GmmSpec& spec) {
            const LatentBatch b = batch_at(std::move(pts), cls, 0);
            py::gil_scoped_release release;
            return invert(b, s, analytic_epsilon_fn(spec)).latents;
        },
        py::arg("points"), py::arg("cls"), py::arg("schedule"), py::arg("spec"),
        "DDIM inversion of data points to the last grid step under the analytic predictor.");
    m.def(
        "sample",
        [](Points pts, std::size_t cls, const NoiseSchedule& s, const GmmSpec& spec) {
            const LatentBatch b = batch_at(std::move(pts), cls, s.num_steps());
            py::gil_scoped_release release;
            return sample(b, s, analytic_epsilon_fn(spec)).latents;
        },
        py::arg("latents"), py::arg("cls"), py::arg("schedule"), py::arg("spec"));

    py::class_<ClassGaussianStats>(m, "ClassGaussianStats")
        .def(py::init([](std::size_t cls, Vector mean, Vector std) {
                 ClassGaussianStats s;
                 s.class_index = cls;
                 s.mean = std::move(mean);
                 s.std = std::move(std);
                 return s;
             }),
             py::arg("cls"), py::arg("mean"), py::arg("std"))
        .def_readonly("class_index", &ClassGaussianStats::class_index)
        .def_readonly("mean", &ClassGaussianStats::mean)
        .def_readonly("std", &ClassGaussianStats::std)
        .def_readonly("source_count", &ClassGaussianStats::source_count);

    py::class_<LossBreakdown>(m, "LossBreakdown")
        .def_readonly("l_mu", &LossBreakdown::l_mu)
        .def_readonly("l_sigma", &LossBreakdown::l_sigma)
        .def_readonly("l_skew", &LossBreakdown::l_skew)
        .def_readonly("total", &LossBreakdown::total)
        .def_property_readonly("weights", [](const LossBreakdown& l) { return weights_tuple(l.weights); });

    py::class_<CandidateSubset>(m, "CandidateSubset")
        .def_readonly("latents", &CandidateSubset::latents)
        .def_readonly("candidate_index", &CandidateSubset::candidate_index)
        .def_readonly("loss", &CandidateSubset::loss);

    m.def(
        "fit_class_stats", [](Points latents, std::size_t cls) { return fit_class_stats(batch_at(std::move(latents), cls, 0)); },
        py::arg("latents"), py::arg("cls") = 0);
    m.def("derived_seed", &derived_seed, py::arg("seed"), py::arg("i"), py::arg("j"));
    m.def("gaussian_subset_sample", &gaussian_subset_sample, py::arg("stats"), py::arg("n"), py::arg("seed"));
    m.def(
        "subset_loss",
        [](const Points& subset, const ClassGaussianStats& s, std::tuple<double, double, double> w) {
            return subset_loss(subset, s, weights_from(w));
        },
        py::arg("subset"), py::arg("stats"), py::arg("weights") = std::make_tuple(1.0, 1.0, 0.5));
    m.def(
        "group_sample",
        [](const ClassGaussianStats& s, std::size_t n, std::size_t mm, std::tuple<double, double, double> w,
           std::uint64_t seed) {
            py::gil_scoped_release release;
            return group_sample(s, n, mm, weights_from(w), seed);
        },
        py::arg("stats"), py::arg("n"), py::arg("m"), py::arg("weights") = std::make_tuple(1.0, 1.0, 0.5),
        py::arg("seed") = 0);

    py::class_<DistilledSet>(m, "DistilledSet")
        .def_readonly("data", &DistilledSet::data)
        .def_property_readonly("mode", [](const DistilledSet& s) { return std::string(mode_name(s.mode)); })
        .def_readonly("ipc", &DistilledSet::ipc)
        .def_readonly("m", &DistilledSet::m)
        .def_readonly("stats", &DistilledSet::stats)
        .def("to_json", [](const DistilledSet& s) { return to_json(s).dump(); })
        .def("stats_bundle_json", [](const DistilledSet& s) { return to_json(make_stats_bundle(s)).dump(); });

    m.def(
        "distill_dataset",
        [](const Dataset& data, const GmmSpec& spec, const std::string& mode, std::size_t ipc, std::size_t mm,
           int steps, std::tuple<double, double, double> w, std::uint64_t seed, double var_scale) {
            DistillConfig cfg;
            cfg.schedule = default_schedule(steps);
            cfg.ipc = ipc;
            cfg.m = mm;
            cfg.weights = weights_from(w);
            cfg.mode = parse_mode(mode);
            cfg.seed = seed;
            cfg.var_scale = var_scale;
            py::gil_scoped_release release;
            return distill_dataset(data, analytic_epsilon_fn(spec), cfg);
        },
        py::arg("data"), py::arg("spec"), py::arg("mode") = "group", py::arg("ipc") = 10, py::arg("m") = 10000,
        py::arg("steps") = kDefaultInferenceSteps, py::arg("weights") = std::make_tuple(1.0, 1.0, 0.5),
        py::arg("seed") = 0, py::arg("var_scale") = 1.0);
    m.def(
        "regenerate_from_stats",
        [](const std::string& bundle_json, std::size_t ipc, const GmmSpec& spec, std::uint64_t seed) {
            const StatsBundle b = stats_bundle_from_json(Json::parse(bundle_json));
            py::gil_scoped_release release;
            return regenerate_from_stats(b, ipc, spec, seed);
        },
        py::arg("stats_bundle_json"), py::arg("ipc"), py::arg("spec"), py::arg("seed") = 0);

    py::class_<ClassifierModel>(m, "ClassifierModel")
        .def_readonly("num_classes", &ClassifierModel::num_classes)
        .def_readonly("dimension", &ClassifierModel::dimension)
        .def_readonly("weights", &ClassifierModel::weights)
        .def("predict", [](const ClassifierModel& c, const Vector& x) { return c.predict(x); }, py::arg("x"));

    m.def(
        "train_classifier",
        [](const Dataset& train, double lr, int epochs, double l2) {
            py::gil_scoped_release release;
            return train_classifier(train, {lr, epochs, l2});
        },
        py::arg("train"), py::arg("learning_rate") = 0.1, py::arg("epochs") = 500, py::arg("l2") = 1e-4);
    m.def("evaluate_classifier", &evaluate_classifier, py::arg("model"), py::arg("test"));

    py::class_<NormalityReport>(m, "NormalityReport")
        .def_readonly("skewness", &NormalityReport::skewness)
        .def_readonly("excess_kurtosis", &NormalityReport::excess_kurtosis)
        .def_readonly("aggregate", &NormalityReport::aggregate);

    m.def(
        "normality_report", [](const Points& latents) { return normality_report(latents); }, py::arg("latents"));
    m.def(
        "energy_distance", [](const Points& a, const Points& b) { return energy_distance(a, b); }, py::arg("a"),
        py::arg("b"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return std::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs one d3hr subcommand in-process; returns (exit code, stdout, stderr).");
}
