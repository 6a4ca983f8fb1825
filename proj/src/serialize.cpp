#include "d3hr/serialize.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <system_error>

#include "d3hr/error.hpp"

namespace d3hr {

namespace {

// Wraps a parse step so nlohmann type/key errors surface as validation errors.
template <class Fn>
auto guarded(const char* what, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed ") + what + ": " + e.what());
    }
}

Vector vec_from(const Json& j) {
    D3HR_REQUIRE(j.is_array(), "expected an array of numbers");
    Vector v;
    v.reserve(j.size());
    for (const auto& x : j) {
        D3HR_REQUIRE(x.is_number(), "expected an array of numbers");
        v.push_back(x.get<double>());
    }
    return v;
}

Json weights_json(const LossWeights& w) { return Json::array({w.mu, w.sigma, w.skew}); }

LossWeights weights_from(const Json& j) {
    const Vector v = vec_from(j);
    D3HR_REQUIRE(v.size() == 3, "weights must hold three entries");
    D3HR_REQUIRE(v[0] >= 0 && v[1] >= 0 && v[2] >= 0, "weights must be nonnegative");
    return {v[0], v[1], v[2]};
}

Json optional_number(const std::optional<double>& v) { return v ? Json(round_sig9(*v)) : Json(nullptr); }

std::string csv_number(const std::optional<double>& v) { return v ? format_sig9(*v) : std::string(); }

}  // namespace

std::string format_sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

double round_sig9(double v) { return std::strtod(format_sig9(v).c_str(), nullptr); }

Json to_json(const GmmSpec& spec) {
    Json classes = Json::array();
    for (const auto& mix : spec.classes) {
        Json comps = Json::array();
        for (const auto& c : mix) comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.std}});
        classes.push_back(std::move(comps));
    }
    return {{"dimension", spec.dimension}, {"classes", std::move(classes)}};
}

GmmSpec gmm_spec_from_json(const Json& j) {
    GmmSpec spec = guarded("world spec", [&] {
        GmmSpec s;
        D3HR_REQUIRE(j.is_object(), "world spec must be a JSON object");
        s.dimension = j.at("dimension").get<std::size_t>();
        for (const auto& cls : j.at("classes")) {
            D3HR_REQUIRE(cls.is_array(), "each class must be an array of components");
            Mixture mix;
            for (const auto& c : cls)
                mix.push_back({c.at("weight").get<double>(), vec_from(c.at("mean")), vec_from(c.at("std"))});
            s.classes.push_back(std::move(mix));
        }
        return s;
    });
    spec.validate();
    return spec;
}

Json to_json(const Dataset& data) {
    Json points = Json::array();
    for (const auto& p : data.points) points.push_back({{"x", p.x}, {"y", p.label}});
    Json j = {{"dimension", data.dimension}, {"points", std::move(points)}, {"seed", data.seed},
              {"spec_digest", data.spec_digest}};
    if (data.world) j["world"] = to_json(*data.world);
    return j;
}

Dataset dataset_from_json(const Json& j) {
    Dataset data = guarded("dataset", [&] {
        Dataset d;
        D3HR_REQUIRE(j.is_object(), "dataset must be a JSON object");
        d.dimension = j.at("dimension").get<std::size_t>();
        for (const auto& p : j.at("points")) d.points.push_back({vec_from(p.at("x")), p.at("y").get<std::size_t>()});
        d.seed = j.value("seed", std::uint64_t{0});
        d.spec_digest = j.value("spec_digest", std::string());
        if (j.contains("world") && !j.at("world").is_null()) d.world = gmm_spec_from_json(j.at("world"));
        return d;
    });
    data.validate();
    return data;
}

Json to_json(const NoiseSchedule& schedule) {
    return {{"train_steps", schedule.train_steps},
            {"beta_start", schedule.beta_start},
            {"beta_end", schedule.beta_end},
            {"inference_steps", schedule.inference_steps}};
}

NoiseSchedule schedule_from_json(const Json& j) {
    return guarded("schedule", [&] {
        return schedule_from_grid(j.at("train_steps").get<int>(), j.at("beta_start").get<double>(),
                                  j.at("beta_end").get<double>(), j.at("inference_steps").get<std::vector<int>>());
    });
}

Json to_json(const DistilledSet& set) {
    Json j = to_json(set.data);
    j["mode"] = mode_name(set.mode);
    j["ipc"] = set.ipc;
    j["m"] = set.m;
    j["provenance"] = {{"seed", set.provenance.seed},
                       {"m", set.provenance.m},
                       {"steps", set.provenance.steps},
                       {"weights", weights_json(set.provenance.weights)},
                       {"var_scale", set.provenance.var_scale}};
    return j;
}

Json to_json(const StatsBundle& bundle) {
    Json classes = Json::array();
    for (const auto& s : bundle.classes)
        classes.push_back({{"class", s.class_index}, {"mean", s.mean}, {"std", s.std}, {"n", s.source_count}});
    return {{"schedule", to_json(bundle.schedule)},
            {"classes", std::move(classes)},
            {"weights", weights_json(bundle.weights)},
            {"m", bundle.m},
            {"mode", mode_name(bundle.mode)},
            {"var_scale", bundle.var_scale}};
}

StatsBundle stats_bundle_from_json(const Json& j) {
    return guarded("stats bundle", [&] {
        D3HR_REQUIRE(j.is_object(), "stats bundle must be a JSON object");
        StatsBundle b;
        b.schedule = schedule_from_json(j.at("schedule"));
        for (const auto& c : j.at("classes")) {
            ClassGaussianStats s;
            s.class_index = c.at("class").get<std::size_t>();
            s.mean = vec_from(c.at("mean"));
            s.std = vec_from(c.at("std"));
            s.source_count = c.at("n").get<std::size_t>();
            D3HR_REQUIRE(s.mean.size() == s.std.size() && !s.mean.empty(), "class stats mean/std length mismatch");
            for (double v : s.std) D3HR_REQUIRE(v > kMinFittedStd, "class stats std must be positive");
            b.classes.push_back(std::move(s));
        }
        D3HR_REQUIRE(!b.classes.empty(), "stats bundle holds no classes");
        b.weights = weights_from(j.at("weights"));
        b.m = j.value("m", std::size_t{1});
        D3HR_REQUIRE(b.m >= 1, "stats bundle m must be at least 1");
        b.mode = parse_mode(j.value("mode", std::string("group")));
        b.var_scale = j.value("var_scale", 1.0);
        D3HR_REQUIRE(b.var_scale > 0.0, "stats bundle var_scale must be positive");
        return b;
    });
}

Json to_json(const EvalReport& r) {
    return {{"mode", r.mode},
            {"seed", r.seed},
            {"weights", weights_json(r.weights)},
            {"accuracy", round_sig9(r.accuracy)},
            {"energy_distance", round_sig9(r.energy_distance)},
            {"normality", optional_number(r.normality)}};
}

Json to_json(std::span<const SweepRow> rows) {
    Json out = Json::array();
    for (const auto& r : rows)
        out.push_back({{"steps", r.steps},
                       {"normality", round_sig9(r.normality)},
                       {"median_roundtrip_error", round_sig9(r.median_roundtrip_error)},
                       {"accuracy", round_sig9(r.accuracy)}});
    return out;
}

Json to_json(std::span<const AblationRow> rows) {
    Json out = Json::array();
    for (const auto& r : rows) {
        Json seeds = Json::array();
        for (const auto& s : r.per_seed) seeds.push_back(to_json(s));
        out.push_back({{"label", r.label},
                       {"mode", r.mode},
                       {"weights", weights_json(r.weights)},
                       {"accuracy_mean", round_sig9(r.accuracy_mean)},
                       {"accuracy_std", round_sig9(r.accuracy_std)},
                       {"energy_mean", round_sig9(r.energy_mean)},
                       {"energy_std", round_sig9(r.energy_std)},
                       {"per_seed", std::move(seeds)}});
    }
    return out;
}

std::string eval_report_csv(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os << "mode,seed,lambda_mu,lambda_sigma,lambda_skew,accuracy,energy_distance,normality\n";
    for (const auto& r : reports)
        os << r.mode << ',' << r.seed << ',' << format_sig9(r.weights.mu) << ',' << format_sig9(r.weights.sigma) << ','
           << format_sig9(r.weights.skew) << ',' << format_sig9(r.accuracy) << ',' << format_sig9(r.energy_distance)
           << ',' << csv_number(r.normality) << '\n';
    return os.str();
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os << "steps,normality,median_roundtrip_error,accuracy\n";
    for (const auto& r : rows)
        os << r.steps << ',' << format_sig9(r.normality) << ',' << format_sig9(r.median_roundtrip_error) << ','
           << format_sig9(r.accuracy) << '\n';
    return os.str();
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    std::ostringstream os;
    os << "label,mode,lambda_mu,lambda_sigma,lambda_skew,seeds,accuracy_mean,accuracy_std,energy_mean,energy_std\n";
    for (const auto& r : rows)
        os << r.label << ',' << r.mode << ',' << format_sig9(r.weights.mu) << ',' << format_sig9(r.weights.sigma) << ','
           << format_sig9(r.weights.skew) << ',' << r.per_seed.size() << ',' << format_sig9(r.accuracy_mean) << ','
           << format_sig9(r.accuracy_std) << ',' << format_sig9(r.energy_mean) << ',' << format_sig9(r.energy_std)
           << '\n';
    return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    if (in.bad()) throw IoError("failed reading " + path.string());
    return os.str();
}

Json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) {
            fs::remove(tmp, ec);
            throw IoError("failed writing " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

}  // namespace d3hr
