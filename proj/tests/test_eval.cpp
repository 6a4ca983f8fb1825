#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "d3hr/error.hpp"
#include "d3hr/eval.hpp"
#include "d3hr/rng.hpp"
#include "oracles.hpp"

using namespace d3hr;

namespace {

Dataset labeled(std::size_t d, std::vector<std::pair<Vector, std::size_t>> pts) {
    Dataset out;
    out.dimension = d;
    for (auto& [x, y] : pts) out.points.push_back({x, y});
    return out;
}

Dataset random_dataset(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1.5);
    Dataset out;
    out.dimension = d;
    for (std::size_t i = 0; i < n; ++i) {
        Vector x(d);
        for (auto& v : x) v = g(rng);
        out.points.push_back({x, i % classes});
    }
    return out;
}

// Accuracy computed straight from the weight matrix, no model methods.
double oracle_accuracy(const ClassifierModel& m, const Dataset& test) {
    std::size_t hits = 0;
    for (const auto& p : test.points) {
        std::size_t best = 0;
        double best_logit = -INFINITY;
        for (std::size_t c = 0; c < m.num_classes; ++c) {
            double logit = m.weights[c * (m.dimension + 1) + m.dimension];
            for (std::size_t i = 0; i < m.dimension; ++i) logit += m.weights[c * (m.dimension + 1) + i] * p.x[i];
            if (logit > best_logit) {
                best_logit = logit;
                best = c;
            }
        }
        hits += best == p.label;
    }
    return static_cast<double>(hits) / test.points.size();
}

std::vector<Vector> draws(std::size_t n, std::size_t d, std::uint64_t seed) {
    StandardNormal g(seed);
    std::vector<Vector> out(n, Vector(d));
    for (auto& v : out)
        for (auto& x : v) x = g();
    return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("separable classes are learned") {
    const Dataset d = labeled(1, {{{-2.0}, 0}, {{-1.0}, 0}, {{1.0}, 1}, {{2.0}, 1}});
    const ClassifierModel m = train_classifier(d);
    CHECK(evaluate_classifier(m, d) == 1.0);
    for (double w : m.weights) CHECK(std::isfinite(w));
}

TEST_CASE("train_classifier rejects degenerate input") {
    CHECK_THROWS_AS(train_classifier(labeled(1, {{{1.0}, 0}, {{2.0}, 0}})), ValidationError);
    CHECK_THROWS_AS(train_classifier(labeled(1, {{{1.0}, 0}, {{2.0}, 2}})), ValidationError);
    CHECK_THROWS_AS(train_classifier(labeled(1, {})), ValidationError);
    const Dataset d = labeled(1, {{{1e200}, 0}, {{-1e200}, 1}});
    CHECK_THROWS_AS(train_classifier(d), ValidationError);
}

TEST_CASE("zero model predicts class 0") {
    ClassifierModel m{4, 3, std::vector<double>(16, 0.0), {}};
    const Dataset test = random_dataset(40, 3, 4, 1);
    CHECK(evaluate_classifier(m, test) == 0.25);
    CHECK(m.predict(test.points[5].x) == 0);
}

TEST_CASE("evaluate_classifier errors") {
    ClassifierModel m{2, 3, std::vector<double>(8, 0.0), {}};
    CHECK_THROWS_AS(evaluate_classifier(m, labeled(3, {})), ValidationError);
    CHECK_THROWS_AS(evaluate_classifier(m, labeled(2, {{{1.0, 2.0}, 0}})), ValidationError);
}

TEST_CASE("full-data model agrees with an independent accuracy count") {
    const GmmSpec w = default_world();
    const Dataset train = sample_dataset(w, 200, 11), test = sample_dataset(w, 200, 12);
    const ClassifierModel m = train_classifier(train);
    const double acc = evaluate_classifier(m, test);
    CHECK(std::abs(acc - oracle_accuracy(m, test)) <= 1e-12);
    CHECK(acc > 0.9);
    CHECK(evaluate_classifier(m, train) >= acc - 0.05);
}

TEST_CASE("accuracy ignores test order") {
    const GmmSpec w = default_world();
    const ClassifierModel m = train_classifier(sample_dataset(w, 50, 1));
    Dataset test = sample_dataset(w, 50, 2);
    const double acc = evaluate_classifier(m, test);
    std::mt19937_64 rng(5);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(test.points.begin(), test.points.end(), rng);
        CHECK(evaluate_classifier(m, test) == acc);
    }
}

TEST_CASE("classifier gradient matches finite differences") {
    std::mt19937_64 rng(321);
    std::normal_distribution<double> g(0, 0.5);
    for (int trial = 0; trial < 20; ++trial) {
        const Dataset d = random_dataset(30, 4, 3, 50 + trial);
        ClassifierModel m{3, 4, std::vector<double>(15), {0.1, 1, 0.05}};
        for (auto& v : m.weights) v = g(rng);
        const auto grad = classifier_gradient(m, d);
        const auto fd = oracle::fd_gradient(
            [&](const Vector& w) {
                ClassifierModel probe = m;
                probe.weights = w;
                return classifier_loss(probe, d);
            },
            m.weights, 1e-5);
        CHECK(oracle::rel_error(grad, fd) < 1e-4);
    }
}

TEST_CASE("training is deterministic") {
    const Dataset d = random_dataset(60, 3, 3, 4);
    CHECK(train_classifier(d).weights == train_classifier(d).weights);
}

TEST_CASE("normality_report") {
    const std::vector<Vector> sym = {{-3, 1}, {-1, -3}, {1, 3}, {3, -1}};
    const NormalityReport r = normality_report(sym);
    CHECK(std::abs(r.skewness[0]) < 1e-15);
    CHECK(std::abs(r.skewness[1]) < 1e-15);
    CHECK(r.aggregate >= 0.0);

    // Adjusted excess kurtosis of {-3,-1,1,3}: n=4, m2=5, m4=41.
    const double n = 4, g2 = 41.0 / 25.0 - 3.0;
    const double adj = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6);
    CHECK(r.excess_kurtosis[0] == doctest::Approx(adj).epsilon(1e-12));

    CHECK_THROWS_AS(normality_report(std::vector<Vector>{{1}, {2}, {3}}), ValidationError);
    CHECK_THROWS_AS(normality_report(std::vector<Vector>{{1, 0}, {2, 0}, {3, 0}, {5, 0}}), ValidationError);
}

TEST_CASE("normality of Gaussian and skewed draws") {
    const auto gauss = draws(5000, 3, 17);
    const double base = normality_report(gauss).aggregate;
    CHECK(base < 0.2);

    std::mt19937_64 rng(18);
    std::bernoulli_distribution pick(0.1);
    std::normal_distribution<double> g(0, 1);
    std::vector<Vector> mix(5000, Vector(3));
    for (auto& v : mix)
        for (auto& x : v) x = g(rng) + (pick(rng) ? 4.0 : 0.0);
    CHECK(normality_report(mix).aggregate > base);
}

TEST_CASE("mirrored sets have zero skewness") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        auto half = oracle::random_points(2 + trial % 7, 3, 100 + trial);
        std::vector<Vector> set = half;
        for (const auto& z : half) set.push_back({2.0 - z[0], -4.0 - z[1], -z[2]});
        std::shuffle(set.begin(), set.end(), rng);
        for (double s : normality_report(set).skewness) CHECK(std::abs(s) < 1e-12);
    }
}

TEST_CASE("energy_distance") {
    const std::vector<Vector> a = {{0.0}}, b = {{1.0}};
    CHECK(energy_distance(a, b) == doctest::Approx(2.0));

    const auto x = oracle::random_points(40, 3, 1), y = oracle::random_points(30, 3, 2);
    CHECK(std::abs(energy_distance(x, x)) <= 1e-12);
    auto shuffled = x;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(3));
    CHECK(std::abs(energy_distance(x, shuffled)) <= 1e-12);
    CHECK(std::abs(energy_distance(x, y) - energy_distance(y, x)) <= 1e-12);
    CHECK(energy_distance(x, y) >= 0.0);

    CHECK_THROWS_AS(energy_distance(std::vector<Vector>{}, b), ValidationError);
    CHECK_THROWS_AS(energy_distance(a, std::vector<Vector>{{1.0, 2.0}}), ValidationError);
}

TEST_CASE("energy_distance is nonnegative on random sets") {
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = oracle::random_points(1 + trial % 9, 2, trial), y = oracle::random_points(1 + trial % 5, 2, 99 + trial);
        CHECK(energy_distance(x, y) >= 0.0);
    }
}

TEST_CASE("energy_distance separates classes") {
    const GmmSpec w = default_world();
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Dataset a = sample_dataset(w, 500, 2 * s + 100), b = sample_dataset(w, 500, 2 * s + 101);
        const double same = energy_distance(a.class_points(0), b.class_points(0));
        const double cross = energy_distance(a.class_points(0), b.class_points(1));
        CHECK(same < cross);
    }
}

TEST_CASE("wasserstein1_marginal") {
    const std::vector<Vector> a = {{0.0, 0.0}, {1.0, 2.0}}, b = {{3.0, 0.0}, {4.0, 2.0}};
    CHECK(wasserstein1_marginal(a, b) == doctest::Approx(1.5));
    CHECK(wasserstein1_marginal(a, a) == 0.0);
    const std::vector<Vector> c = {{0.0}, {2.0}}, e = {{1.0}};
    CHECK(wasserstein1_marginal(c, e) == doctest::Approx(1.0));
}

TEST_CASE("median and sign test") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS_AS(median({}), ValidationError);

    const std::vector<double> diffs = {1, 1, 1, 1, 1, 0, -1};
    const SignTest t = sign_test(diffs);
    CHECK(t.wins == 5);
    CHECK(t.losses == 1);
    CHECK(t.ties == 1);
    CHECK(t.p_value == doctest::Approx(7.0 / 64.0));
    CHECK(sign_test(std::vector<double>{0.0, 0.0}).p_value == 1.0);
    CHECK(sign_test(std::vector<double>(10, 1.0)).p_value == doctest::Approx(1.0 / 1024));
}

TEST_CASE("weight grid enumeration") {
    const auto grid = weight_grid({1, 1, 0.5});
    REQUIRE(grid.size() == 7);
    CHECK(grid[0].label == "L_mu");
    CHECK(grid[0].weights == LossWeights{1, 0, 0});
    CHECK(grid[2].weights == LossWeights{0, 0, 0.5});
    CHECK(grid[6].label == "L_mu+L_sigma+L_skew");
    CHECK(grid[6].weights == LossWeights{1, 1, 0.5});
}

TEST_CASE("sweep and ablation recipes") {
    const GmmSpec w = default_world();
    ExperimentConfig cfg;
    cfg.world = w;
    cfg.train = sample_dataset(w, 60, 11);
    cfg.test = sample_dataset(w, 60, 12);
    cfg.ipc = 5;
    cfg.m = 50;
    cfg.steps = 8;
    cfg.train_config.epochs = 100;
    const std::vector<std::uint64_t> seeds = {0, 1};

    const std::vector<int> ks = {4, 8};
    const auto rows = timestep_sweep(cfg, ks, seeds);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].steps == 4);
    const auto again = timestep_sweep(cfg, ks, seeds);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(rows[i].normality == again[i].normality);
        CHECK(rows[i].median_roundtrip_error == again[i].median_roundtrip_error);
        CHECK(rows[i].accuracy == again[i].accuracy);
    }

    // Single-K row equals the measurements composed by hand.
    const std::vector<int> k8 = {8};
    const auto single = timestep_sweep(cfg, k8, seeds);
    ExperimentConfig c8 = cfg;
    c8.steps = 8;
    const double acc = (evaluate_run(c8, Mode::Group, 0).accuracy + evaluate_run(c8, Mode::Group, 1).accuracy) / 2;
    CHECK(single[0].accuracy == doctest::Approx(acc).epsilon(1e-15));
    CHECK(single[0].normality == evaluate_run(c8, Mode::Group, 0).normality.value());

    const auto ab = ablation_run(cfg, seeds);
    REQUIRE(ab.size() == 3);
    CHECK(ab[0].mode == "ddpm");
    CHECK(ab[1].mode == "random");
    CHECK(ab[2].mode == "group");
    CHECK(ab[2].per_seed.size() == 2);
    for (const auto& r : ab) {
        CHECK(r.accuracy_mean >= 0.0);
        CHECK(r.accuracy_mean <= 1.0);
        CHECK(r.energy_mean >= 0.0);
    }
    CHECK(ablation_run(cfg, seeds, true).size() == 10);
    const std::vector<std::uint64_t> one = {0};
    CHECK_THROWS_AS(ablation_run(cfg, one), ValidationError);

    ExperimentConfig m1 = cfg;
    m1.m = 1;
    const auto deg = ablation_run(m1, seeds);
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(deg[1].per_seed[s].accuracy == deg[2].per_seed[s].accuracy);
        CHECK(deg[1].per_seed[s].energy_distance == deg[2].per_seed[s].energy_distance);
    }
}

}  // TEST_SUITE

TEST_SUITE("eval") {

TEST_CASE("normality falls as the step count grows") {
    const GmmSpec w = default_world();
    const Dataset train = sample_dataset(w, 500, 11);
    const auto eps_fn = analytic_epsilon_fn(w);
    double prev = INFINITY;
    for (int k : {4, 8, 16, 31, 64}) {
        double agg = 0;
        for (std::size_t c = 0; c < 4; ++c) {
            const LatentBatch in{8, train.class_points(c), c, 0};
            agg += normality_report(invert(in, default_schedule(k), eps_fn)).aggregate / 4;
        }
        CHECK(agg <= 1.1 * prev);
        prev = agg;
    }
}

TEST_CASE("shallower grids reconstruct better at fixed K") {
    const GmmSpec w = default_world();
    const Dataset train = sample_dataset(w, 100, 11);
    const auto eps_fn = analytic_epsilon_fn(w);
    double prev = 0;
    for (int terminal : {100, 250, 500, 1000}) {
        std::vector<double> errs;
        for (std::size_t c = 0; c < 4; ++c) {
            const auto e = roundtrip_errors(train.class_points(c), c, build_schedule(1000, 1e-4, 0.02, 16, terminal), eps_fn);
            errs.insert(errs.end(), e.begin(), e.end());
        }
        const double med = median(errs);
        CHECK(med >= prev);
        prev = med;
    }
}

}  // TEST_SUITE
