#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "d3hr/distill.hpp"
#include "d3hr/error.hpp"
#include "d3hr/eval.hpp"
#include "d3hr/rng.hpp"
#include "oracles.hpp"

using namespace d3hr;

namespace {

ClassGaussianStats stats_of(Vector mean, Vector std) {
    ClassGaussianStats s;
    s.mean = std::move(mean);
    s.std = std::move(std);
    s.source_count = 100;
    return s;
}

ClassGaussianStats random_stats(std::mt19937_64& rng, std::size_t d) {
    std::uniform_real_distribution<double> m(-1, 1), s(0.5, 1.5);
    Vector mean(d), sd(d);
    for (auto& v : mean) v = m(rng);
    for (auto& v : sd) v = s(rng);
    return stats_of(mean, sd);
}

DistillConfig small_config(Mode mode, std::size_t m = 200) {
    DistillConfig c;
    c.schedule = default_schedule(8);
    c.ipc = 5;
    c.m = m;
    c.mode = mode;
    c.seed = 13;
    return c;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("derived seeds") {
    CHECK(derived_seed(0, 0, 0) == mix64(0));
    CHECK(derived_seed(5, 1, 2) == mix64(5 ^ 0x9E3779B97F4A7C15ULL ^ (2 * 0xBF58476D1CE4E5B9ULL)));
    CHECK(derived_seed(5, 1, 0) != derived_seed(5, 0, 1));
    CHECK(mix64(0x123456789ULL) != 0x123456789ULL);
}

TEST_CASE("mode names") {
    for (Mode m : {Mode::Group, Mode::Random, Mode::Ddpm}) CHECK(parse_mode(mode_name(m)) == m);
    CHECK(mode_name(Mode::Ddpm) == "ddpm");
    CHECK_THROWS_AS(parse_mode("gibbs"), ValidationError);
}

TEST_CASE("fit_class_stats") {
    LatentBatch b{1, {{1.0}, {3.0}}, 2, 31};
    const ClassGaussianStats s = fit_class_stats(b);
    CHECK(s.mean[0] == 2.0);
    CHECK(s.std[0] == 1.0);
    CHECK(s.skew_target == 0.0);
    CHECK(s.source_count == 2);
    CHECK(s.class_index == 2);

    CHECK_THROWS_AS(fit_class_stats(LatentBatch{1, {{1.0}}, 0, 0}), ValidationError);
    CHECK_THROWS_AS(fit_class_stats(LatentBatch{2, {{1.0, 2.0}, {1.0, 3.0}, {1.0, 4.0}}, 0, 0}), ValidationError);
}

TEST_CASE("fit_class_stats moments") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.5, 2.0);
    LatentBatch b{1, {}, 0, 0};
    for (int i = 0; i < 2000; ++i) b.latents.push_back({n(rng)});
    const ClassGaussianStats s = fit_class_stats(b);
    CHECK(std::abs(s.mean[0] - 0.5) < 0.15);
    CHECK(std::abs(s.std[0] - 2.0) < 0.15);
}

TEST_CASE("gaussian_subset_sample") {
    const ClassGaussianStats s = stats_of({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
    const CandidateSubset big = gaussian_subset_sample(s, 10000, 3);
    REQUIRE(big.latents.size() == 10000);
    for (std::size_t i = 0; i < 3; ++i) {
        double m = 0, v = 0;
        for (const auto& z : big.latents) m += z[i] / 10000;
        for (const auto& z : big.latents) v += (z[i] - m) * (z[i] - m) / 10000;
        CHECK(std::abs(m) < 0.05);
        CHECK(std::abs(std::sqrt(v) - 1.0) < 0.05);
    }

    const ClassGaussianStats base = stats_of({1.0, -2.0}, {0.5, 1.5});
    const ClassGaussianStats wide = stats_of({1.0, -2.0}, {1.0, 3.0});
    const auto a = gaussian_subset_sample(base, 20, 77), b = gaussian_subset_sample(wide, 20, 77);
    for (std::size_t p = 0; p < 20; ++p)
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(b.latents[p][i] - wide.mean[i] == doctest::Approx(2.0 * (a.latents[p][i] - base.mean[i])).epsilon(1e-14));

    CHECK(gaussian_subset_sample(base, 20, 77).latents == a.latents);
    CHECK(gaussian_subset_sample(base, 20, 78).latents != a.latents);
    CHECK_THROWS_AS(gaussian_subset_sample(base, 0, 1), ValidationError);
}

TEST_CASE("subset_loss hand examples") {
    const ClassGaussianStats unit = stats_of({0.0}, {1.0});
    const std::vector<Vector> balanced = {{-std::sqrt(1.5)}, {0.0}, {std::sqrt(1.5)}};
    const LossBreakdown b = subset_loss(balanced, unit, {});
    CHECK(std::abs(b.l_mu) < 1e-15);
    CHECK(std::abs(b.l_sigma) < 1e-15);
    CHECK(std::abs(b.l_skew) < 1e-15);
    CHECK(std::abs(b.total) < 1e-15);

    const std::vector<Vector> collapsed = {{0.0}, {0.0}, {0.0}};
    const LossBreakdown c = subset_loss(collapsed, unit, {1, 1, 0.5});
    CHECK(c.l_mu == 0.0);
    CHECK(c.l_sigma == 1.0);
    CHECK(c.l_skew == 0.0);
    CHECK(c.total == 1.0);

    const std::vector<Vector> pair = {{1.0}, {3.0}};
    const LossBreakdown p = subset_loss(pair, unit, {});
    CHECK(p.l_skew == 0.0);
    CHECK(p.l_mu == 4.0);

    CHECK_THROWS_AS(subset_loss(std::vector<Vector>{}, unit, {}), ValidationError);
    CHECK_THROWS_AS(subset_loss(balanced, unit, {-1, 1, 1}), ValidationError);
    CHECK_THROWS_AS(subset_loss(std::vector<Vector>{{1.0, 2.0}}, unit, {}), ValidationError);
}

TEST_CASE("subset_loss centre toggle") {
    const ClassGaussianStats unit = stats_of({0.0}, {1.0});
    const std::vector<Vector> shifted = {{1.0}, {3.0}};
    CHECK(subset_loss(shifted, unit, {}, SigmaCenter::StatsMean).l_sigma ==
          doctest::Approx(std::pow(std::sqrt(5.0) - 1.0, 2)));
    CHECK(subset_loss(shifted, unit, {}, SigmaCenter::SubsetMean).l_sigma == doctest::Approx(0.0));
}

TEST_CASE("subset_loss matches a second implementation") {
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> w(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 8, n = 1 + trial % 13;
        const ClassGaussianStats s = random_stats(rng, d);
        const auto subset = oracle::random_points(n, d, 1000 + trial);
        const LossWeights lw{w(rng), w(rng), w(rng)};
        const LossBreakdown b = subset_loss(subset, s, lw);
        const double expect = oracle::subset_loss_total(subset, s.mean, s.std, lw.mu, lw.sigma, lw.skew);
        CHECK(std::abs(b.total - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
        CHECK(std::abs(b.total - (lw.mu * b.l_mu + lw.sigma * b.l_sigma + lw.skew * b.l_skew)) <= 1e-12);
        CHECK(b.l_mu >= 0.0);
        CHECK(b.l_sigma >= 0.0);
        CHECK(b.l_skew >= 0.0);
        CHECK(b.weights == lw);
    }
}

TEST_CASE("mirrored subsets have zero skew loss") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + trial % 5;
        const ClassGaussianStats s = random_stats(rng, d);
        auto half = oracle::random_points(3 + trial % 6, d, 500 + trial);
        std::vector<Vector> subset = half;
        for (const auto& z : half) {
            Vector m(d);
            for (std::size_t i = 0; i < d; ++i) m[i] = 2.0 * s.mean[i] - z[i];
            subset.push_back(m);
        }
        std::shuffle(subset.begin(), subset.end(), rng);
        const LossBreakdown b = subset_loss(subset, s, {});
        CHECK(b.l_skew <= 1e-20);
        CHECK(b.l_mu <= 1e-20);
    }
}

TEST_CASE("group_sample with one candidate") {
    std::mt19937_64 rng(3);
    const ClassGaussianStats s = random_stats(rng, 4);
    const CandidateSubset g = group_sample(s, 7, 1, {}, 99);
    const CandidateSubset r = gaussian_subset_sample(s, 7, derived_seed(99, s.class_index, 0));
    CHECK(g.latents == r.latents);
    CHECK(g.candidate_index == 0);
    CHECK(g.loss.total == subset_loss(r.latents, s, {}).total);
    CHECK_THROWS_AS(group_sample(s, 7, 0, {}, 99), ValidationError);
}

TEST_CASE("group_sample is the exhaustive argmin") {
    std::mt19937_64 rng(64);
    for (int trial = 0; trial < 20; ++trial) {
        ClassGaussianStats s = random_stats(rng, 3);
        s.class_index = trial % 4;
        const std::size_t m = 1 + (trial * 7) % 64;
        const CandidateSubset g = group_sample(s, 6, m, {}, 1000 + trial);
        double best = INFINITY;
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < m; ++k) {
            const auto c = gaussian_subset_sample(s, 6, derived_seed(1000 + trial, s.class_index, k));
            const double l = subset_loss(c.latents, s, {}).total;
            CHECK(g.loss.total <= l);
            if (l < best) {
                best = l;
                best_k = k;
            }
        }
        CHECK(g.candidate_index == best_k);
        CHECK(g.loss.total == best);
    }
}

TEST_CASE("group_sample ties go to the lower index") {
    // Zero weights make every candidate tie.
    const ClassGaussianStats s = stats_of({0.0}, {1.0});
    CHECK(group_sample(s, 4, 50, {0, 0, 0}, 5).candidate_index == 0);
}

TEST_CASE("group_sample loss is non-increasing over nested pools") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        const ClassGaussianStats s = random_stats(rng, 8);
        double prev = INFINITY;
        for (std::size_t m : {1, 10, 100, 1000}) {
            const double l = group_sample(s, 10, m, {}, 300 + trial).loss.total;
            CHECK(l <= prev);
            prev = l;
        }
    }
}

TEST_CASE("scaling the weights keeps the selection") {
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> w(0.1, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        const ClassGaussianStats s = random_stats(rng, 5);
        const LossWeights lw{w(rng), w(rng), w(rng)};
        const auto a = group_sample(s, 8, 200, lw, trial), b = group_sample(s, 8, 200, lw.scaled(3.7), trial);
        CHECK(a.candidate_index == b.candidate_index);
    }
}

TEST_CASE("group_sample beats an independent random subset") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const ClassGaussianStats s = random_stats(rng, 8);
        const double g = group_sample(s, 10, 500, {}, trial).loss.total;
        const auto r = gaussian_subset_sample(s, 10, derived_seed(trial, s.class_index, 0));
        CHECK(g <= subset_loss(r.latents, s, {}).total);
    }
}

TEST_CASE("group_sample does not depend on the worker count") {
    std::mt19937_64 rng(2);
    const ClassGaussianStats s = random_stats(rng, 8);
    setenv("D3HR_THREADS", "1", 1);
    const auto one = group_sample(s, 10, 300, {}, 4);
    setenv("D3HR_THREADS", "5", 1);
    const auto five = group_sample(s, 10, 300, {}, 4);
    unsetenv("D3HR_THREADS");
    CHECK(one.candidate_index == five.candidate_index);
    CHECK(one.latents == five.latents);
}

TEST_CASE("distill_class group with m = 1 equals random") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 40, 3);
    const auto eps_fn = analytic_epsilon_fn(w);
    const auto pts = data.class_points(1);
    const auto g = distill_class(pts, 1, eps_fn, small_config(Mode::Group, 1));
    const auto r = distill_class(pts, 1, eps_fn, small_config(Mode::Random, 500));
    CHECK(g.points == r.points);
    CHECK(g.points.size() == 5);
}

TEST_CASE("distill_class selection beats the median random subset") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 200, 6);
    DistillConfig c = small_config(Mode::Group, 10000);
    c.schedule = default_schedule();
    c.ipc = 10;
    const auto out = distill_class(data.class_points(0), 0, analytic_epsilon_fn(w), c);
    std::vector<double> losses;
    for (int k = 0; k < 100; ++k)
        losses.push_back(subset_loss(gaussian_subset_sample(out.stats, 10, 90000 + k).latents, out.stats, {}).total);
    CHECK(out.selected.loss.total <= median(losses));
    CHECK(out.selected.loss.total == subset_loss(out.selected.latents, out.stats, {}).total);
}

TEST_CASE("distill_class on the unit Gaussian stays centred") {
    const GmmSpec unit{4, {{{1.0, Vector(4, 0.0), Vector(4, 1.0)}}}};
    const Dataset data = sample_dataset(unit, 400, 8);
    DistillConfig c = small_config(Mode::Group, 2000);
    c.ipc = 10;
    const auto out = distill_class(data.class_points(0), 0, analytic_epsilon_fn(unit), c);
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0;
        for (const auto& p : out.points) m += p[i] / 10;
        CHECK(std::abs(m) < 0.5);
    }
}

TEST_CASE("distill_class ddpm mode maps with forward noise") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 60, 1);
    const auto pts = data.class_points(2);
    const DistillConfig c = small_config(Mode::Ddpm);
    const LatentBatch mapped = map_class(pts, 2, analytic_epsilon_fn(w), c);
    CHECK(mapped.timestep == c.schedule.num_steps());
    StandardNormal g(derived_seed(c.seed ^ kForwardNoiseSalt, 2, 0));
    const double abar = c.schedule.terminal_alpha_bar();
    for (std::size_t p = 0; p < pts.size(); ++p) {
        Vector noise(pts[p].size());
        for (auto& v : noise) v = g();
        CHECK(mapped.latents[p] == ddpm_forward(pts[p], abar, noise));
    }
    const auto out = distill_class(pts, 2, analytic_epsilon_fn(w), c);
    CHECK(out.selected.candidate_index == 0);
    CHECK(out.points.size() == c.ipc);
}

TEST_CASE("var_scale widens the sampling target") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 60, 1);
    DistillConfig c = small_config(Mode::Random);
    const auto base = distill_class(data.class_points(0), 0, analytic_epsilon_fn(w), c);
    c.var_scale = 4.0;
    const auto wide = distill_class(data.class_points(0), 0, analytic_epsilon_fn(w), c);
    CHECK(base.stats.std == wide.stats.std);
    for (std::size_t p = 0; p < c.ipc; ++p)
        for (std::size_t i = 0; i < 8; ++i)
            CHECK(wide.selected.latents[p][i] - base.stats.mean[i] ==
                  doctest::Approx(2.0 * (base.selected.latents[p][i] - base.stats.mean[i])).epsilon(1e-12));
    c.var_scale = 0.0;
    CHECK_THROWS_AS(distill_class(data.class_points(0), 0, analytic_epsilon_fn(w), c), ValidationError);
}

TEST_CASE("distill_dataset") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 50, 2);
    const auto eps_fn = analytic_epsilon_fn(w);
    const DistillConfig c = small_config(Mode::Group);
    const DistilledSet a = distill_dataset(data, eps_fn, c);
    CHECK(a.data.points.size() == 4 * c.ipc);
    CHECK(a.ipc == c.ipc);
    CHECK(a.m == c.m);
    CHECK(a.provenance.steps == 8);
    CHECK(a.stats.size() == 4);
    std::vector<std::size_t> counts(4, 0);
    for (const auto& p : a.data.points) ++counts[p.label];
    CHECK(counts == std::vector<std::size_t>(4, c.ipc));

    const DistilledSet b = distill_dataset(data, eps_fn, c);
    for (std::size_t i = 0; i < a.data.points.size(); ++i) CHECK(a.data.points[i].x == b.data.points[i].x);

    for (std::size_t cls = 0; cls < 4; ++cls) {
        const auto alone = distill_class(data.class_points(cls), cls, eps_fn, c);
        CHECK(a.data.class_points(cls) == alone.points);
    }
}

TEST_CASE("distill_dataset rejects thin classes") {
    const GmmSpec w = default_world();
    const Dataset full = sample_dataset(w, 3, 2);
    Dataset data = full;
    data.points.clear();
    bool kept = false;
    for (const auto& p : full.points) {
        if (p.label == 3 && kept) continue;
        kept = kept || p.label == 3;
        data.points.push_back(p);
    }
    CHECK_THROWS_AS(distill_dataset(data, analytic_epsilon_fn(w), small_config(Mode::Group)), ValidationError);
}

TEST_CASE("regenerate_from_stats") {
    const GmmSpec w = default_world();
    const Dataset data = sample_dataset(w, 50, 2);
    const DistillConfig c = small_config(Mode::Group);
    const DistilledSet a = distill_dataset(data, analytic_epsilon_fn(w), c);
    const StatsBundle bundle = make_stats_bundle(a);
    CHECK(bundle.classes.size() == 4);
    CHECK(bundle.m == c.m);

    const DistilledSet again = regenerate_from_stats(bundle, c.ipc, w, c.seed);
    REQUIRE(again.data.points.size() == a.data.points.size());
    for (std::size_t i = 0; i < a.data.points.size(); ++i) {
        CHECK(again.data.points[i].x == a.data.points[i].x);
        CHECK(again.data.points[i].label == a.data.points[i].label);
    }

    const DistilledSet big = regenerate_from_stats(bundle, 50, w, c.seed);
    CHECK(big.data.points.size() == 200);
    for (const auto& p : big.data.points)
        for (double v : p.x) CHECK(std::isfinite(v));

    StatsBundle missing = bundle;
    missing.classes.pop_back();
    CHECK_THROWS_AS(regenerate_from_stats(missing, 10, w, 0), ValidationError);
    StatsBundle dup = bundle;
    dup.classes[1].class_index = 0;
    CHECK_THROWS_AS(regenerate_from_stats(dup, 10, w, 0), ValidationError);
    CHECK_THROWS_AS(regenerate_from_stats(bundle, 0, w, 0), ValidationError);
}

}  // TEST_SUITE
