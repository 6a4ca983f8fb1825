#pragma once

// Synthetic class-conditional Gaussian-mixture worlds and their exact
// diffused marginals. The analytic noise predictor defined here stands in
// for a trained epsilon network.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace d3hr {

using Vector = std::vector<double>;

inline constexpr double kMinComponentStd = 1e-6;
inline constexpr double kWeightSumTolerance = 1e-9;

/// Axis-aligned Gaussian component.
struct GmmComponent {
    double weight = 1.0;
    Vector mean;
    Vector std;
};

using Mixture = std::vector<GmmComponent>;

struct GmmSpec {
    std::size_t dimension = 0;
    std::vector<Mixture> classes;

    std::size_t num_classes() const { return classes.size(); }
    /// Throws ValidationError when any invariant is broken.
    void validate() const;
};

struct LabeledPoint {
    Vector x;
    std::size_t label = 0;
};

struct Dataset {
    std::size_t dimension = 0;
    std::vector<LabeledPoint> points;
    std::uint64_t seed = 0;
    std::string spec_digest;
    // The generating world travels with the data so downstream commands can
    // rebuild the analytic predictor.
    std::optional<GmmSpec> world;

    std::size_t num_classes() const;
    std::vector<Vector> class_points(std::size_t label) const;
    void validate(std::optional<std::size_t> class_count = std::nullopt) const;
};

/// Hex SHA-256 of the canonical JSON form of the spec.
std::string spec_digest(const GmmSpec& spec);

/// The desk-scale world: 8 dimensions, 4 classes, 3 components per class.
/// Means uniform in [-4, 4]^d, stds uniform in [0.3, 1.2], weights a
/// normalized Dirichlet(1, 1, 1) draw; all from mt19937_64(world_seed).
GmmSpec default_world(std::uint64_t world_seed = 2024);

Dataset sample_dataset(const GmmSpec& spec, std::size_t n_per_class, std::uint64_t seed);

/// Class mixture pushed through the forward process at cumulative signal
/// level alpha_bar: means scale by sqrt(alpha_bar), variances become
/// alpha_bar * s^2 + (1 - alpha_bar).
Mixture marginal_at(const GmmSpec& spec, std::size_t label, double alpha_bar);

double gmm_log_density(const Mixture& mixture, std::span<const double> point);

/// Exact epsilon for the diffused class marginal:
/// -sqrt(1 - alpha_bar) * grad log p_t(z).
Vector analytic_epsilon(const GmmSpec& spec, std::size_t label, std::span<const double> z, double alpha_bar);

}  // namespace d3hr
