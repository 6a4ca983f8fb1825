#include "d3hr/ddim.hpp"

#include <cmath>
#include <memory>

#include "d3hr/error.hpp"
#include "d3hr/parallel.hpp"

namespace d3hr {

namespace {

void check_alpha(double a, const char* what) {
    D3HR_REQUIRE(std::isfinite(a) && a > 0.0 && a <= 1.0, std::string(what) + " must lie in (0, 1]");
}

// Shared form of both DDIM steps: moves z from abar_from to abar_to along the
// deterministic DDIM map with noise estimate eps.
Vector ddim_move(std::span<const double> z, double abar_from, double abar_to, std::span<const double> eps) {
    D3HR_REQUIRE(z.size() == eps.size(), "eps dimension does not match latent");
    const double scale = std::sqrt(abar_to / abar_from);
    const double eps_coef =
        std::sqrt(abar_to) * (std::sqrt(1.0 / abar_to - 1.0) - std::sqrt(1.0 / abar_from - 1.0));
    Vector out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = scale * z[i] + eps_coef * eps[i];
    return out;
}

NoiseSchedule make_schedule(int train_steps, double beta_start, double beta_end) {
    D3HR_REQUIRE(train_steps >= 1, "train_steps must be positive");
    D3HR_REQUIRE(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                 "betas must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.train_steps = train_steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.alpha_bar.resize(static_cast<std::size_t>(train_steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= train_steps; ++t) {
        const double beta =
            train_steps == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / (train_steps - 1);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
    }
    return s;
}

LatentBatch run(const LatentBatch& batch, const NoiseSchedule& schedule, const EpsilonFn& eps_fn, bool forward) {
    const std::size_t K = schedule.num_steps();
    D3HR_REQUIRE(batch.timestep == (forward ? 0 : K),
                 forward ? "inversion expects a batch at grid index 0" : "sampling expects a batch at the terminal grid index");
    LatentBatch out;
    out.dimension = batch.dimension;
    out.class_index = batch.class_index;
    out.timestep = forward ? K : 0;
    out.latents.resize(batch.latents.size());

    parallel_for(batch.latents.size(), [&](std::size_t p) {
        const auto& src = batch.latents[p];
        D3HR_REQUIRE(src.size() == batch.dimension, "latent dimension does not match batch");
        Vector z = src;
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t from = forward ? k : K - k;
            const std::size_t to = forward ? k + 1 : K - k - 1;
            const double a_from = schedule.alpha_bar_at(from);
            const double a_to = schedule.alpha_bar_at(to);
            const Vector eps = eps_fn(z, a_from, batch.class_index);
            z = forward ? ddim_invert_step(z, a_from, a_to, eps) : ddim_sample_step(z, a_from, a_to, eps);
        }
        out.latents[p] = std::move(z);
    });
    return out;
}

}  // namespace

NoiseSchedule build_schedule(int train_steps, double beta_start, double beta_end, int num_inference,
                             std::optional<int> terminal_step) {
    NoiseSchedule s = make_schedule(train_steps, beta_start, beta_end);
    const int terminal = terminal_step.value_or(train_steps);
    D3HR_REQUIRE(terminal >= 1 && terminal <= train_steps, "terminal step must lie in [1, train_steps]");
    D3HR_REQUIRE(num_inference >= 1 && num_inference <= terminal, "num_inference must lie in [1, terminal step]");
    s.inference_steps.push_back(0);
    for (int j = 1; j <= num_inference; ++j) {
        const int t = static_cast<int>(std::lround(static_cast<double>(j) * terminal / num_inference));
        if (t > s.inference_steps.back()) s.inference_steps.push_back(t);
    }
    D3HR_REQUIRE(s.inference_steps.size() >= 2, "inference grid degenerated after deduplication");
    return s;
}

NoiseSchedule schedule_from_grid(int train_steps, double beta_start, double beta_end, std::vector<int> inference_steps) {
    NoiseSchedule s = make_schedule(train_steps, beta_start, beta_end);
    D3HR_REQUIRE(inference_steps.size() >= 2 && inference_steps.front() == 0,
                 "inference grid must start at 0 and hold at least two entries");
    for (std::size_t i = 1; i < inference_steps.size(); ++i)
        D3HR_REQUIRE(inference_steps[i] > inference_steps[i - 1], "inference grid must be strictly increasing");
    D3HR_REQUIRE(inference_steps.back() <= train_steps, "inference grid exceeds train_steps");
    s.inference_steps = std::move(inference_steps);
    return s;
}

EpsilonFn analytic_epsilon_fn(GmmSpec spec) {
    spec.validate();
    auto shared = std::make_shared<const GmmSpec>(std::move(spec));
    return [shared](std::span<const double> z, double alpha_bar, std::size_t label) {
        return analytic_epsilon(*shared, label, z, alpha_bar);
    };
}

EpsilonFn zero_epsilon_fn() {
    return [](std::span<const double> z, double, std::size_t) { return Vector(z.size(), 0.0); };
}

Vector ddim_sample_step(std::span<const double> z, double abar_from, double abar_to, std::span<const double> eps) {
    check_alpha(abar_from, "abar_from");
    check_alpha(abar_to, "abar_to");
    D3HR_REQUIRE(abar_to >= abar_from, "sampling step must move toward the data end (abar_to >= abar_from)");
    return ddim_move(z, abar_from, abar_to, eps);
}

Vector ddim_invert_step(std::span<const double> z, double abar_from, double abar_to, std::span<const double> eps) {
    check_alpha(abar_from, "abar_from");
    check_alpha(abar_to, "abar_to");
    D3HR_REQUIRE(abar_to <= abar_from, "inversion step must move toward noise (abar_to <= abar_from)");
    return ddim_move(z, abar_from, abar_to, eps);
}

LatentBatch invert(const LatentBatch& batch, const NoiseSchedule& schedule, const EpsilonFn& eps_fn) {
    return run(batch, schedule, eps_fn, true);
}

LatentBatch sample(const LatentBatch& batch, const NoiseSchedule& schedule, const EpsilonFn& eps_fn) {
    return run(batch, schedule, eps_fn, false);
}

Vector ddpm_forward(std::span<const double> z0, double alpha_bar, std::span<const double> noise) {
    check_alpha(alpha_bar, "alpha_bar");
    D3HR_REQUIRE(z0.size() == noise.size(), "noise dimension does not match latent");
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    Vector out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * noise[i];
    return out;
}

}  // namespace d3hr
