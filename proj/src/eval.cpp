#include "d3hr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "d3hr/error.hpp"
#include "d3hr/parallel.hpp"

namespace d3hr {

namespace {

double l2_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double mean_pairwise(std::span<const Vector> a, std::span<const Vector> b) {
    double s = 0.0;
    for (const auto& x : a)
        for (const auto& y : b) s += l2_distance(x, y);
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

// Writes the class logits for x into out.
void logits(const ClassifierModel& model, std::span<const double> x, std::span<double> out) {
    const std::size_t stride = model.stride();
    for (std::size_t c = 0; c < model.num_classes; ++c) {
        const double* w = model.weights.data() + c * stride;
        double z = w[model.dimension];
        for (std::size_t i = 0; i < model.dimension; ++i) z += w[i] * x[i];
        out[c] = z;
    }
}

// Softmax in place; returns log-sum-exp of the input.
double softmax(std::span<double> z) {
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(v - top));
    for (auto& v : z) v /= sum;
    return top + std::log(sum);
}

void check_classifier_input(const ClassifierModel& model, const Dataset& data) {
    D3HR_REQUIRE(data.dimension == model.dimension, "dataset dimension does not match classifier");
    for (const auto& p : data.points) {
        D3HR_REQUIRE(p.x.size() == model.dimension, "point dimension does not match classifier");
        D3HR_REQUIRE(p.label < model.num_classes, "label outside classifier range");
    }
}

Dataset distilled_as_dataset(const DistilledSet& set) { return set.data; }

double sample_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double mean_of(std::span<const double> v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::size_t ClassifierModel::predict(std::span<const double> x) const {
    std::vector<double> z(num_classes);
    logits(*this, x, z);
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c)
        if (z[c] > z[best]) best = c;
    return best;
}

double classifier_loss(const ClassifierModel& model, const Dataset& data) {
    check_classifier_input(model, data);
    D3HR_REQUIRE(!data.points.empty(), "loss over an empty dataset");
    std::vector<double> z(model.num_classes);
    double loss = 0.0;
    for (const auto& p : data.points) {
        logits(model, p.x, z);
        const double top = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        loss += top + std::log(sum) - z[p.label];
    }
    loss /= static_cast<double>(data.points.size());
    double reg = 0.0;
    for (std::size_t c = 0; c < model.num_classes; ++c)
        for (std::size_t i = 0; i < model.dimension; ++i) {
            const double w = model.weights[c * model.stride() + i];
            reg += w * w;
        }
    return loss + 0.5 * model.config.l2 * reg;
}

std::vector<double> classifier_gradient(const ClassifierModel& model, const Dataset& data) {
    check_classifier_input(model, data);
    D3HR_REQUIRE(!data.points.empty(), "gradient over an empty dataset");
    const std::size_t stride = model.stride();
    std::vector<double> grad(model.weights.size(), 0.0);
    std::vector<double> p(model.num_classes);
    const double inv_n = 1.0 / static_cast<double>(data.points.size());
    for (const auto& pt : data.points) {
        logits(model, pt.x, p);
        softmax(p);
        p[pt.label] -= 1.0;
        for (std::size_t c = 0; c < model.num_classes; ++c) {
            double* g = grad.data() + c * stride;
            const double r = p[c] * inv_n;
            for (std::size_t i = 0; i < model.dimension; ++i) g[i] += r * pt.x[i];
            g[model.dimension] += r;
        }
    }
    for (std::size_t c = 0; c < model.num_classes; ++c)
        for (std::size_t i = 0; i < model.dimension; ++i)
            grad[c * stride + i] += model.config.l2 * model.weights[c * stride + i];
    return grad;
}

ClassifierModel train_classifier(const Dataset& train, const TrainConfig& config) {
    D3HR_REQUIRE(config.learning_rate > 0.0 && config.epochs >= 0 && config.l2 >= 0.0, "invalid training config");
    const std::size_t classes = train.num_classes();
    D3HR_REQUIRE(classes >= 2, "classifier needs at least 2 classes");
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& p : train.points) ++counts[p.label];
    for (std::size_t c = 0; c < classes; ++c)
        D3HR_REQUIRE(counts[c] > 0, "class " + std::to_string(c) + " has no training points");

    ClassifierModel model;
    model.num_classes = classes;
    model.dimension = train.dimension;
    model.config = config;
    model.weights.assign(classes * model.stride(), 0.0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto grad = classifier_gradient(model, train);
        for (std::size_t i = 0; i < grad.size(); ++i) model.weights[i] -= config.learning_rate * grad[i];
    }
    D3HR_REQUIRE(std::all_of(model.weights.begin(), model.weights.end(), [](double w) { return std::isfinite(w); }) &&
                     std::isfinite(classifier_loss(model, train)),
                 "classifier training diverged (non-finite loss)");
    return model;
}

double evaluate_classifier(const ClassifierModel& model, const Dataset& test) {
    D3HR_REQUIRE(!test.points.empty(), "test set is empty");
    D3HR_REQUIRE(test.dimension == model.dimension, "test dimension does not match classifier");
    std::size_t correct = 0;
    for (const auto& p : test.points) {
        D3HR_REQUIRE(p.x.size() == model.dimension, "test point dimension does not match classifier");
        if (model.predict(p.x) == p.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.points.size());
}

NormalityReport normality_report(std::span<const Vector> latents) {
    D3HR_REQUIRE(latents.size() >= 4, "normality report needs at least 4 latents");
    const std::size_t d = latents.front().size();
    const double n = static_cast<double>(latents.size());

    NormalityReport r;
    r.skewness.resize(d);
    r.excess_kurtosis.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        double mean = 0.0;
        for (const auto& v : latents) {
            D3HR_REQUIRE(v.size() == d, "latent dimension mismatch");
            mean += v[i];
        }
        mean /= n;
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (const auto& v : latents) {
            const double u = v[i] - mean, u2 = u * u;
            m2 += u2;
            m3 += u2 * u;
            m4 += u2 * u2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        D3HR_REQUIRE(m2 > 1e-18, "zero variance in dimension " + std::to_string(i));
        const double g1 = m3 / std::pow(m2, 1.5);
        const double g2 = m4 / (m2 * m2) - 3.0;
        r.skewness[i] = std::sqrt(n * (n - 1.0)) / (n - 2.0) * g1;
        r.excess_kurtosis[i] = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0);
        r.aggregate += std::abs(r.skewness[i]) + std::abs(r.excess_kurtosis[i]);
    }
    r.aggregate /= static_cast<double>(d);
    return r;
}

double energy_distance(std::span<const Vector> a, std::span<const Vector> b) {
    D3HR_REQUIRE(!a.empty() && !b.empty(), "energy distance needs nonempty point sets");
    const std::size_t d = a.front().size();
    for (const auto& x : a) D3HR_REQUIRE(x.size() == d, "dimension mismatch in energy distance");
    for (const auto& x : b) D3HR_REQUIRE(x.size() == d, "dimension mismatch in energy distance");
    const double e = 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
    return std::max(e, 0.0);
}

double wasserstein1_marginal(std::span<const Vector> a, std::span<const Vector> b) {
    D3HR_REQUIRE(!a.empty() && !b.empty(), "Wasserstein distance needs nonempty point sets");
    const std::size_t d = a.front().size();
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> xa, xb;
        for (const auto& v : a) xa.push_back(v.at(i));
        for (const auto& v : b) xb.push_back(v.at(i));
        std::sort(xa.begin(), xa.end());
        std::sort(xb.begin(), xb.end());
        // Integrate |F_a - F_b| across the merged support.
        std::vector<double> all(xa);
        all.insert(all.end(), xb.begin(), xb.end());
        std::sort(all.begin(), all.end());
        double w = 0.0;
        for (std::size_t k = 0; k + 1 < all.size(); ++k) {
            const double fa = static_cast<double>(std::upper_bound(xa.begin(), xa.end(), all[k]) - xa.begin()) / xa.size();
            const double fb = static_cast<double>(std::upper_bound(xb.begin(), xb.end(), all[k]) - xb.begin()) / xb.size();
            w += std::abs(fa - fb) * (all[k + 1] - all[k]);
        }
        total += w;
    }
    return total / static_cast<double>(d);
}

double class_energy_distance(const Dataset& a, const Dataset& b) {
    D3HR_REQUIRE(a.dimension == b.dimension, "datasets differ in dimension");
    const std::size_t classes = std::max(a.num_classes(), b.num_classes());
    D3HR_REQUIRE(classes > 0, "energy distance over empty datasets");
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += energy_distance(a.class_points(c), b.class_points(c));
    return total / static_cast<double>(classes);
}

std::vector<double> roundtrip_errors(std::span<const Vector> points, std::size_t class_index,
                                     const NoiseSchedule& schedule, const EpsilonFn& eps_fn) {
    D3HR_REQUIRE(!points.empty(), "round trip over no points");
    LatentBatch batch;
    batch.dimension = points.front().size();
    batch.class_index = class_index;
    batch.latents.assign(points.begin(), points.end());
    const auto back = sample(invert(batch, schedule, eps_fn), schedule, eps_fn);
    std::vector<double> err(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double norm = std::sqrt(std::inner_product(points[i].begin(), points[i].end(), points[i].begin(), 0.0));
        err[i] = l2_distance(back.latents[i], points[i]) / std::max(norm, std::numeric_limits<double>::min());
    }
    return err;
}

double median(std::vector<double> values) {
    D3HR_REQUIRE(!values.empty(), "median of an empty list");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + mid);
    return 0.5 * (lower + upper);
}

SignTest sign_test(std::span<const double> differences) {
    SignTest t;
    for (double d : differences) {
        if (d > 0) ++t.wins;
        else if (d < 0) ++t.losses;
        else ++t.ties;
    }
    const std::size_t n = t.wins + t.losses;
    if (n == 0) return t;
    double p = 0.0;
    for (std::size_t k = t.wins; k <= n; ++k)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    t.p_value = std::min(1.0, p);
    return t;
}

NoiseSchedule ExperimentConfig::schedule(int num_inference) const {
    return build_schedule(train_steps, beta_start, beta_end, num_inference, terminal_step);
}

DistillConfig ExperimentConfig::distill_config(Mode mode, std::uint64_t seed) const {
    DistillConfig cfg;
    cfg.schedule = schedule(steps);
    cfg.ipc = ipc;
    cfg.m = m;
    cfg.weights = weights;
    cfg.mode = mode;
    cfg.seed = seed;
    cfg.var_scale = var_scale;
    return cfg;
}

EvalReport evaluate_run(const ExperimentConfig& config, Mode mode, std::uint64_t seed) {
    const EpsilonFn eps_fn = analytic_epsilon_fn(config.world);
    const DistillConfig dcfg = config.distill_config(mode, seed);
    const DistilledSet set = distill_dataset(config.train, eps_fn, dcfg);
    const Dataset distilled = distilled_as_dataset(set);

    EvalReport report;
    report.mode = std::string(mode_name(mode));
    report.weights = config.weights;
    report.seed = seed;
    report.accuracy = evaluate_classifier(train_classifier(distilled, config.train_config), config.test);
    report.energy_distance = class_energy_distance(distilled, config.train);
    double norm = 0.0;
    const std::size_t classes = config.world.num_classes();
    for (std::size_t c = 0; c < classes; ++c)
        norm += normality_report(map_class(config.train.class_points(c), c, eps_fn, dcfg)).aggregate;
    report.normality = norm / static_cast<double>(classes);
    return report;
}

std::vector<SweepRow> timestep_sweep(const ExperimentConfig& config, std::span<const int> steps_list,
                                     std::span<const std::uint64_t> seeds) {
    D3HR_REQUIRE(!steps_list.empty(), "sweep needs at least one step count");
    const EpsilonFn eps_fn = analytic_epsilon_fn(config.world);
    const std::size_t classes = config.world.num_classes();
    std::vector<SweepRow> rows;
    for (int k : steps_list) {
        D3HR_REQUIRE(k >= 1, "step counts must be at least 1");
        ExperimentConfig cfg = config;
        cfg.steps = k;
        const NoiseSchedule schedule = cfg.schedule(k);

        SweepRow row;
        row.steps = k;
        std::vector<double> errors;
        for (std::size_t c = 0; c < classes; ++c) {
            LatentBatch batch;
            batch.dimension = config.train.dimension;
            batch.class_index = c;
            batch.latents = config.train.class_points(c);
            const LatentBatch mapped = invert(batch, schedule, eps_fn);
            row.normality += normality_report(mapped).aggregate;
            const LatentBatch back = sample(mapped, schedule, eps_fn);
            for (std::size_t i = 0; i < batch.latents.size(); ++i) {
                const auto& z = batch.latents[i];
                const double norm = std::sqrt(std::inner_product(z.begin(), z.end(), z.begin(), 0.0));
                errors.push_back(l2_distance(back.latents[i], z) / std::max(norm, std::numeric_limits<double>::min()));
            }
        }
        row.normality /= static_cast<double>(classes);
        row.median_roundtrip_error = median(std::move(errors));
        if (!seeds.empty()) {
            for (auto seed : seeds) {
                const DistilledSet set = distill_dataset(cfg.train, eps_fn, cfg.distill_config(Mode::Group, seed));
                row.accuracy += evaluate_classifier(train_classifier(set.data, cfg.train_config), cfg.test);
            }
            row.accuracy /= static_cast<double>(seeds.size());
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<WeightCombo> weight_grid(const LossWeights& base) {
    return {
        {"L_mu", {base.mu, 0.0, 0.0}},
        {"L_sigma", {0.0, base.sigma, 0.0}},
        {"L_skew", {0.0, 0.0, base.skew}},
        {"L_mu+L_sigma", {base.mu, base.sigma, 0.0}},
        {"L_mu+L_skew", {base.mu, 0.0, base.skew}},
        {"L_sigma+L_skew", {0.0, base.sigma, base.skew}},
        {"L_mu+L_sigma+L_skew", base},
    };
}

std::vector<AblationRow> ablation_run(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                                      bool with_weight_grid) {
    D3HR_REQUIRE(seeds.size() >= 2, "ablation needs at least 2 seeds");

    struct Cell {
        std::string label;
        Mode mode;
        LossWeights weights;
    };
    std::vector<Cell> cells = {{"Base-DDPM", Mode::Ddpm, config.weights},
                               {"Base-RS", Mode::Random, config.weights},
                               {"Group", Mode::Group, config.weights}};
    if (with_weight_grid)
        for (const auto& combo : weight_grid(config.weights)) cells.push_back({combo.label, Mode::Group, combo.weights});

    // Every (cell, seed) pair is independent; results land in fixed slots.
    std::vector<EvalReport> reports(cells.size() * seeds.size());
    parallel_for(reports.size(), [&](std::size_t slot) {
        const auto& cell = cells[slot / seeds.size()];
        ExperimentConfig cfg = config;
        cfg.weights = cell.weights;
        reports[slot] = evaluate_run(cfg, cell.mode, seeds[slot % seeds.size()]);
    });

    std::vector<AblationRow> rows;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        AblationRow row;
        row.label = cells[c].label;
        row.mode = std::string(mode_name(cells[c].mode));
        row.weights = cells[c].weights;
        std::vector<double> acc, ed;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const auto& r = reports[c * seeds.size() + s];
            acc.push_back(r.accuracy);
            ed.push_back(r.energy_distance);
            row.per_seed.push_back(r);
        }
        row.accuracy_mean = mean_of(acc);
        row.accuracy_std = sample_std(acc);
        row.energy_mean = mean_of(ed);
        row.energy_std = sample_std(ed);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace d3hr
