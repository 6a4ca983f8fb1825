#pragma once

// Distribution matching in the inverted domain and statistic-guided group
// sampling, plus the full per-class pipeline and its two ablation baselines.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "d3hr/ddim.hpp"
#include "d3hr/gmm_world.hpp"

namespace d3hr {

inline constexpr double kMinFittedStd = 1e-9;

/// Per-dimension Gaussian fitted to one class's inverted latents.
struct ClassGaussianStats {
    std::size_t class_index = 0;
    Vector mean;
    Vector std;
    double skew_target = 0.0;
    std::size_t source_count = 0;
};

struct LossWeights {
    double mu = 1.0;
    double sigma = 1.0;
    double skew = 0.5;

    LossWeights scaled(double c) const { return {mu * c, sigma * c, skew * c}; }
    bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
    double l_mu = 0.0;
    double l_sigma = 0.0;
    double l_skew = 0.0;
    double total = 0.0;
    LossWeights weights;
};

/// Which center the spread term measures deviations from. The stats mean
/// is the literal form; the subset mean gives the textbook std.
enum class SigmaCenter { StatsMean, SubsetMean };

struct CandidateSubset {
    std::vector<Vector> latents;
    std::size_t candidate_index = 0;
    LossBreakdown loss;
};

enum class Mode { Group, Random, Ddpm };

std::string_view mode_name(Mode mode);
Mode parse_mode(std::string_view name);

struct DistillConfig {
    NoiseSchedule schedule = default_schedule();
    std::size_t ipc = 10;
    std::size_t m = 10000;
    LossWeights weights;
    Mode mode = Mode::Group;
    std::uint64_t seed = 0;
    // Multiplies the fitted variance before sampling (ablation only).
    double var_scale = 1.0;
    SigmaCenter sigma_center = SigmaCenter::StatsMean;
};

struct ClassDistillation {
    std::vector<Vector> points;  // data space
    ClassGaussianStats stats;    // as fitted, before any var_scale
    CandidateSubset selected;    // noise-space subset that was decoded
};

struct Provenance {
    std::uint64_t seed = 0;
    std::size_t m = 0;
    std::size_t steps = 0;
    LossWeights weights;
    double var_scale = 1.0;
};

struct DistilledSet {
    Dataset data;
    Mode mode = Mode::Group;
    std::size_t ipc = 0;
    std::size_t m = 0;
    Provenance provenance;
    NoiseSchedule schedule;
    std::vector<ClassGaussianStats> stats;
};

/// Everything needed to regenerate distilled sets without the source data.
struct StatsBundle {
    NoiseSchedule schedule;
    std::vector<ClassGaussianStats> classes;
    LossWeights weights;
    std::size_t m = 1;
    Mode mode = Mode::Group;
    double var_scale = 1.0;
};

ClassGaussianStats fit_class_stats(const LatentBatch& batch);

/// n i.i.d. draws, coordinate i from N(mean_i, std_i^2).
CandidateSubset gaussian_subset_sample(const ClassGaussianStats& stats, std::size_t n, std::uint64_t seed);

LossBreakdown subset_loss(std::span<const Vector> subset, const ClassGaussianStats& stats, const LossWeights& weights,
                          SigmaCenter center = SigmaCenter::StatsMean);

/// Draws m candidates (candidate k from derived_seed(seed, class, k)) and
/// keeps the one with the smallest total loss; ties go to the lower index.
CandidateSubset group_sample(const ClassGaussianStats& stats, std::size_t n, std::size_t m, const LossWeights& weights,
                             std::uint64_t seed, SigmaCenter center = SigmaCenter::StatsMean);

/// Maps a class's data points to the terminal grid index: DDIM inversion for
/// group/random, the DDPM forward map for ddpm.
LatentBatch map_class(std::span<const Vector> class_points, std::size_t class_index, const EpsilonFn& eps_fn,
                      const DistillConfig& config);

ClassDistillation distill_class(std::span<const Vector> class_points, std::size_t class_index,
                                const EpsilonFn& eps_fn, const DistillConfig& config);

DistilledSet distill_dataset(const Dataset& data, const EpsilonFn& eps_fn, const DistillConfig& config);

StatsBundle make_stats_bundle(const DistilledSet& set);

DistilledSet regenerate_from_stats(const StatsBundle& bundle, std::size_t ipc, const GmmSpec& spec, std::uint64_t seed);

}  // namespace d3hr
