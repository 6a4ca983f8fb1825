#include "d3hr/distill.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "d3hr/error.hpp"
#include "d3hr/parallel.hpp"
#include "d3hr/rng.hpp"

namespace d3hr {

namespace {

ClassGaussianStats with_var_scale(ClassGaussianStats stats, double var_scale) {
    if (var_scale == 1.0) return stats;
    const double f = std::sqrt(var_scale);
    for (auto& s : stats.std) s *= f;
    return stats;
}

std::size_t effective_m(Mode mode, std::size_t m) { return mode == Mode::Group ? m : 1; }

std::vector<Vector> decode(std::vector<Vector> latents, std::size_t class_index, const NoiseSchedule& schedule,
                           const EpsilonFn& eps_fn) {
    LatentBatch batch;
    batch.dimension = latents.empty() ? 0 : latents.front().size();
    batch.latents = std::move(latents);
    batch.class_index = class_index;
    batch.timestep = schedule.num_steps();
    return sample(batch, schedule, eps_fn).latents;
}

}  // namespace

std::string_view mode_name(Mode mode) {
    switch (mode) {
        case Mode::Group: return "group";
        case Mode::Random: return "random";
        case Mode::Ddpm: return "ddpm";
    }
    return "group";
}

Mode parse_mode(std::string_view name) {
    if (name == "group") return Mode::Group;
    if (name == "random") return Mode::Random;
    if (name == "ddpm") return Mode::Ddpm;
    throw ValidationError("unknown mode '" + std::string(name) + "' (expected group, random or ddpm)");
}

ClassGaussianStats fit_class_stats(const LatentBatch& batch) {
    const auto& z = batch.latents;
    D3HR_REQUIRE(z.size() >= 2, "fitting class statistics needs at least 2 latents");
    const std::size_t d = batch.dimension;
    const double n = static_cast<double>(z.size());

    ClassGaussianStats stats;
    stats.class_index = batch.class_index;
    stats.source_count = z.size();
    stats.mean.assign(d, 0.0);
    stats.std.assign(d, 0.0);
    for (const auto& v : z) {
        D3HR_REQUIRE(v.size() == d, "latent dimension does not match batch");
        for (std::size_t i = 0; i < d; ++i) stats.mean[i] += v[i];
    }
    for (auto& m : stats.mean) m /= n;
    for (const auto& v : z)
        for (std::size_t i = 0; i < d; ++i) {
            const double u = v[i] - stats.mean[i];
            stats.std[i] += u * u;
        }
    for (std::size_t i = 0; i < d; ++i) {
        stats.std[i] = std::sqrt(stats.std[i] / n);
        D3HR_REQUIRE(stats.std[i] > kMinFittedStd, "zero variance in dimension " + std::to_string(i));
    }
    return stats;
}

CandidateSubset gaussian_subset_sample(const ClassGaussianStats& stats, std::size_t n, std::uint64_t seed) {
    D3HR_REQUIRE(n >= 1, "subset size must be at least 1");
    StandardNormal normal(seed);
    CandidateSubset out;
    out.latents.assign(n, Vector(stats.mean.size()));
    for (auto& v : out.latents)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = stats.mean[i] + stats.std[i] * normal();
    return out;
}

LossBreakdown subset_loss(std::span<const Vector> subset, const ClassGaussianStats& stats, const LossWeights& weights,
                          SigmaCenter center) {
    D3HR_REQUIRE(!subset.empty(), "subset must be nonempty");
    D3HR_REQUIRE(weights.mu >= 0.0 && weights.sigma >= 0.0 && weights.skew >= 0.0, "loss weights must be nonnegative");
    const std::size_t n = subset.size();
    const std::size_t d = stats.mean.size();
    D3HR_REQUIRE(stats.std.size() == d, "stats mean/std length mismatch");
    for (const auto& z : subset) D3HR_REQUIRE(z.size() == d, "subset dimension differs from stats dimension");
    const double nd = static_cast<double>(n);
    // n / ((n-1)(n-2)); the skew term is zero below three points.
    const double skew_coef = n >= 3 ? nd / ((nd - 1.0) * (nd - 2.0)) : 0.0;

    LossBreakdown loss;
    loss.weights = weights;
    for (std::size_t i = 0; i < d; ++i) {
        double sum = 0.0;
        for (const auto& v : subset) sum += v[i];
        const double subset_mean = sum / nd;
        const double mu = stats.mean[i], sigma = stats.std[i];
        const double c = center == SigmaCenter::StatsMean ? mu : subset_mean;

        double sq = 0.0, cube = 0.0;
        for (const auto& v : subset) {
            const double u = v[i] - c;
            sq += u * u;
            const double w = (v[i] - mu) / sigma;
            cube += w * w * w;
        }
        const double dm = subset_mean - mu;
        const double ds = std::sqrt(sq / nd) - sigma;
        const double sk = skew_coef * cube - stats.skew_target;
        loss.l_mu += dm * dm;
        loss.l_sigma += ds * ds;
        loss.l_skew += n >= 3 ? sk * sk : 0.0;
    }
    loss.l_mu /= static_cast<double>(d);
    loss.l_sigma /= static_cast<double>(d);
    loss.l_skew /= static_cast<double>(d);
    loss.total = weights.mu * loss.l_mu + weights.sigma * loss.l_sigma + weights.skew * loss.l_skew;
    return loss;
}

CandidateSubset group_sample(const ClassGaussianStats& stats, std::size_t n, std::size_t m, const LossWeights& weights,
                             std::uint64_t seed, SigmaCenter center) {
    D3HR_REQUIRE(m >= 1, "candidate count m must be at least 1");
    D3HR_REQUIRE(n >= 1, "subset size must be at least 1");

    struct Best {
        double total = std::numeric_limits<double>::infinity();
        std::size_t index = std::numeric_limits<std::size_t>::max();
    };
    const std::size_t workers = worker_count();
    std::vector<Best> best(std::max<std::size_t>(1, std::min(workers, m)));

    parallel_chunks(m, workers, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        Best local;
        for (std::size_t k = begin; k < end; ++k) {
            const auto cand = gaussian_subset_sample(stats, n, derived_seed(seed, stats.class_index, k));
            const double total = subset_loss(cand.latents, stats, weights, center).total;
            if (total < local.total) local = {total, k};
        }
        best[chunk] = local;
    });

    // Chunks are index-ordered, so strict < keeps the smallest index on ties.
    Best winner{std::numeric_limits<double>::infinity(), 0};
    for (const auto& b : best)
        if (b.total < winner.total) winner = b;

    CandidateSubset out = gaussian_subset_sample(stats, n, derived_seed(seed, stats.class_index, winner.index));
    out.candidate_index = winner.index;
    out.loss = subset_loss(out.latents, stats, weights, center);
    return out;
}

LatentBatch map_class(std::span<const Vector> class_points, std::size_t class_index, const EpsilonFn& eps_fn,
                      const DistillConfig& config) {
    D3HR_REQUIRE(!class_points.empty(), "class " + std::to_string(class_index) + " has no points");
    const auto& schedule = config.schedule;
    LatentBatch data;
    data.dimension = class_points.front().size();
    data.class_index = class_index;
    if (config.mode != Mode::Ddpm) {
        data.latents.assign(class_points.begin(), class_points.end());
        return invert(data, schedule, eps_fn);
    }
    const double abar = schedule.terminal_alpha_bar();
    StandardNormal normal(derived_seed(config.seed ^ kForwardNoiseSalt, class_index, 0));
    Vector noise(data.dimension);
    for (const auto& z0 : class_points) {
        D3HR_REQUIRE(z0.size() == data.dimension, "point dimension mismatch within class");
        for (auto& e : noise) e = normal();
        data.latents.push_back(ddpm_forward(z0, abar, noise));
    }
    data.timestep = schedule.num_steps();
    return data;
}

ClassDistillation distill_class(std::span<const Vector> class_points, std::size_t class_index, const EpsilonFn& eps_fn,
                                const DistillConfig& config) {
    D3HR_REQUIRE(class_points.size() >= 2, "class " + std::to_string(class_index) + " needs at least 2 points");
    D3HR_REQUIRE(config.ipc >= 1, "ipc must be at least 1");
    D3HR_REQUIRE(config.var_scale > 0.0 && std::isfinite(config.var_scale), "var_scale must be positive");

    const LatentBatch mapped = map_class(class_points, class_index, eps_fn, config);
    ClassDistillation out;
    out.stats = fit_class_stats(mapped);
    const ClassGaussianStats target = with_var_scale(out.stats, config.var_scale);
    out.selected = group_sample(target, config.ipc, effective_m(config.mode, config.m), config.weights, config.seed,
                                config.sigma_center);
    out.points = decode(out.selected.latents, class_index, config.schedule, eps_fn);
    return out;
}

DistilledSet distill_dataset(const Dataset& data, const EpsilonFn& eps_fn, const DistillConfig& config) {
    const std::size_t classes = data.world ? data.world->num_classes() : data.num_classes();
    D3HR_REQUIRE(classes >= 1, "dataset has no classes");

    std::vector<std::vector<Vector>> per_class(classes);
    for (const auto& p : data.points) {
        D3HR_REQUIRE(p.label < classes, "point label out of range");
        per_class[p.label].push_back(p.x);
    }
    for (std::size_t c = 0; c < classes; ++c)
        D3HR_REQUIRE(per_class[c].size() >= 2, "class " + std::to_string(c) + " has fewer than 2 points");

    std::vector<ClassDistillation> results(classes);
    for (std::size_t c = 0; c < classes; ++c) results[c] = distill_class(per_class[c], c, eps_fn, config);

    DistilledSet set;
    set.mode = config.mode;
    set.ipc = config.ipc;
    set.m = config.m;
    set.provenance = {config.seed, config.m, config.schedule.num_steps(), config.weights, config.var_scale};
    set.schedule = config.schedule;
    set.data.dimension = data.dimension;
    set.data.seed = config.seed;
    set.data.spec_digest = data.spec_digest;
    for (std::size_t c = 0; c < classes; ++c) {
        for (auto& x : results[c].points) set.data.points.push_back({std::move(x), c});
        set.stats.push_back(std::move(results[c].stats));
    }
    return set;
}

StatsBundle make_stats_bundle(const DistilledSet& set) {
    StatsBundle b;
    b.schedule = set.schedule;
    b.classes = set.stats;
    b.weights = set.provenance.weights;
    b.m = set.m;
    b.mode = set.mode;
    b.var_scale = set.provenance.var_scale;
    return b;
}

DistilledSet regenerate_from_stats(const StatsBundle& bundle, std::size_t ipc, const GmmSpec& spec, std::uint64_t seed) {
    spec.validate();
    D3HR_REQUIRE(ipc >= 1, "ipc must be at least 1");
    D3HR_REQUIRE(bundle.classes.size() == spec.num_classes(), "stats bundle does not cover every class of the world");
    std::vector<const ClassGaussianStats*> by_class(spec.num_classes(), nullptr);
    for (const auto& s : bundle.classes) {
        D3HR_REQUIRE(s.class_index < spec.num_classes(), "stats bundle class index out of range");
        D3HR_REQUIRE(!by_class[s.class_index], "stats bundle repeats a class");
        D3HR_REQUIRE(s.mean.size() == spec.dimension && s.std.size() == spec.dimension,
                     "stats bundle dimension differs from world");
        by_class[s.class_index] = &s;
    }
    for (std::size_t c = 0; c < by_class.size(); ++c)
        D3HR_REQUIRE(by_class[c], "stats bundle is missing class " + std::to_string(c));

    const EpsilonFn eps_fn = analytic_epsilon_fn(spec);
    DistilledSet set;
    set.mode = bundle.mode;
    set.ipc = ipc;
    set.m = bundle.m;
    set.provenance = {seed, bundle.m, bundle.schedule.num_steps(), bundle.weights, bundle.var_scale};
    set.schedule = bundle.schedule;
    set.data.dimension = spec.dimension;
    set.data.seed = seed;
    set.data.spec_digest = spec_digest(spec);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto target = with_var_scale(*by_class[c], bundle.var_scale);
        auto chosen = group_sample(target, ipc, effective_m(bundle.mode, bundle.m), bundle.weights, seed);
        for (auto& x : decode(std::move(chosen.latents), c, bundle.schedule, eps_fn))
            set.data.points.push_back({std::move(x), c});
        set.stats.push_back(*by_class[c]);
    }
    return set;
}

}  // namespace d3hr
