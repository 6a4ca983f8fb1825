#pragma once

// Desk-scale measurement: a deterministic softmax classifier, normality
// diagnostics, two-sample distances, and the sweep/ablation recipes.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d3hr/ddim.hpp"
#include "d3hr/distill.hpp"
#include "d3hr/gmm_world.hpp"

namespace d3hr {

struct TrainConfig {
    double learning_rate = 0.1;
    int epochs = 500;
    double l2 = 1e-4;
};

/// Multinomial logistic regression. Row c of `weights` holds the d feature
/// weights of class c followed by its bias.
struct ClassifierModel {
    std::size_t num_classes = 0;
    std::size_t dimension = 0;
    std::vector<double> weights;
    TrainConfig config;

    std::size_t stride() const { return dimension + 1; }
    /// Argmax of the logits; ties go to the smallest class index.
    std::size_t predict(std::span<const double> x) const;
};

/// Mean cross-entropy plus 0.5 * l2 * ||W||^2 (biases excluded).
double classifier_loss(const ClassifierModel& model, const Dataset& data);
std::vector<double> classifier_gradient(const ClassifierModel& model, const Dataset& data);

ClassifierModel train_classifier(const Dataset& train, const TrainConfig& config = {});
double evaluate_classifier(const ClassifierModel& model, const Dataset& test);

struct NormalityReport {
    Vector skewness;         // adjusted Fisher-Pearson G1
    Vector excess_kurtosis;  // adjusted G2
    double aggregate = 0.0;  // mean over dims of |G1| + |G2|
};

NormalityReport normality_report(std::span<const Vector> latents);
inline NormalityReport normality_report(const LatentBatch& batch) { return normality_report(batch.latents); }

/// V-statistic energy distance: 2 E|a-b| - E|a-a'| - E|b-b'| with every
/// expectation over all ordered pairs. Zero for identical multisets.
double energy_distance(std::span<const Vector> a, std::span<const Vector> b);

/// Mean over dimensions of the 1-D Wasserstein-1 distance between the
/// empirical marginals.
double wasserstein1_marginal(std::span<const Vector> a, std::span<const Vector> b);

/// Mean over classes of the per-class energy distance.
double class_energy_distance(const Dataset& a, const Dataset& b);

/// ||sample(invert(z)) - z|| / ||z|| per point.
std::vector<double> roundtrip_errors(std::span<const Vector> points, std::size_t class_index,
                                     const NoiseSchedule& schedule, const EpsilonFn& eps_fn);

double median(std::vector<double> values);

struct SignTest {
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0;  // one-sided, P(X >= wins) under Binomial(wins + losses, 1/2)
};

SignTest sign_test(std::span<const double> differences);

struct EvalReport {
    std::string mode;
    LossWeights weights;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double energy_distance = 0.0;
    std::optional<double> normality;
};

/// Shared inputs for the sweep and ablation recipes.
struct ExperimentConfig {
    Dataset train;
    Dataset test;
    GmmSpec world;
    int train_steps = kDefaultTrainSteps;
    double beta_start = kDefaultBetaStart;
    double beta_end = kDefaultBetaEnd;
    int steps = kDefaultInferenceSteps;
    std::optional<int> terminal_step;
    std::size_t ipc = 10;
    std::size_t m = 10000;
    LossWeights weights;
    double var_scale = 1.0;
    TrainConfig train_config;

    NoiseSchedule schedule(int num_inference) const;
    DistillConfig distill_config(Mode mode, std::uint64_t seed) const;
};

/// Distills with the given mode and seed, trains on the result and scores it.
EvalReport evaluate_run(const ExperimentConfig& config, Mode mode, std::uint64_t seed);

struct SweepRow {
    int steps = 0;
    double normality = 0.0;
    double median_roundtrip_error = 0.0;
    double accuracy = 0.0;
};

/// One row per K; accuracy is averaged over seeds.
std::vector<SweepRow> timestep_sweep(const ExperimentConfig& config, std::span<const int> steps_list,
                                     std::span<const std::uint64_t> seeds);

struct AblationRow {
    std::string label;
    std::string mode;
    LossWeights weights;
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;  // sample std over seeds
    double energy_mean = 0.0;
    double energy_std = 0.0;
    std::vector<EvalReport> per_seed;
};

struct WeightCombo {
    std::string label;
    LossWeights weights;
};

/// Single-term, pairwise and full combinations of the three loss terms.
std::vector<WeightCombo> weight_grid(const LossWeights& base);

/// ddpm, random and group rows (in that order), then one group row per
/// weight_grid entry when requested.
std::vector<AblationRow> ablation_run(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                                      bool with_weight_grid = false);

}  // namespace d3hr
