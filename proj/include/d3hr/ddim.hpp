#pragma once

// Noise schedules, the deterministic DDIM sampling/inversion steps, their
// multi-step drivers, and the stochastic DDPM forward map.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "d3hr/gmm_world.hpp"

namespace d3hr {

struct NoiseSchedule {
    int train_steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    // alpha_bar[t] for t = 0..train_steps; alpha_bar[0] = 1.
    Vector alpha_bar;
    // 0 = tau_0 < tau_1 < ... < tau_K <= train_steps.
    std::vector<int> inference_steps;

    std::size_t num_steps() const { return inference_steps.size() - 1; }
    double alpha_bar_at(std::size_t grid_index) const { return alpha_bar.at(inference_steps.at(grid_index)); }
    double terminal_alpha_bar() const { return alpha_bar_at(num_steps()); }
};

inline constexpr int kDefaultTrainSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;
inline constexpr int kDefaultInferenceSteps = 31;

/// Linear-beta schedule. The K-step grid is {0} U {round(j * terminal / K)},
/// where terminal defaults to train_steps; a smaller terminal step gives a
/// truncated (shallower) inversion.
NoiseSchedule build_schedule(int train_steps, double beta_start, double beta_end, int num_inference,
                             std::optional<int> terminal_step = std::nullopt);

/// Rebuilds alpha_bar for an explicit grid (used when loading schedules).
NoiseSchedule schedule_from_grid(int train_steps, double beta_start, double beta_end, std::vector<int> inference_steps);

inline NoiseSchedule default_schedule(int num_inference = kDefaultInferenceSteps) {
    return build_schedule(kDefaultTrainSteps, kDefaultBetaStart, kDefaultBetaEnd, num_inference);
}

struct LatentBatch {
    std::size_t dimension = 0;
    std::vector<Vector> latents;
    std::size_t class_index = 0;
    std::size_t timestep = 0;  // index into NoiseSchedule::inference_steps
};

/// eps(z, alpha_bar, class)
using EpsilonFn = std::function<Vector(std::span<const double>, double, std::size_t)>;

EpsilonFn analytic_epsilon_fn(GmmSpec spec);
EpsilonFn zero_epsilon_fn();

/// One DDIM step toward the data end (abar_to >= abar_from).
Vector ddim_sample_step(std::span<const double> z, double abar_from, double abar_to, std::span<const double> eps);
/// One DDIM inversion step toward noise (abar_to <= abar_from). Exact inverse
/// of ddim_sample_step for a frozen eps.
Vector ddim_invert_step(std::span<const double> z, double abar_from, double abar_to, std::span<const double> eps);

/// Runs inversion from grid index 0 to K. eps is evaluated at the source
/// timestep of every step.
LatentBatch invert(const LatentBatch& batch, const NoiseSchedule& schedule, const EpsilonFn& eps_fn);
/// Mirror of invert: grid index K down to 0.
LatentBatch sample(const LatentBatch& batch, const NoiseSchedule& schedule, const EpsilonFn& eps_fn);

Vector ddpm_forward(std::span<const double> z0, double alpha_bar, std::span<const double> noise);

}  // namespace d3hr
