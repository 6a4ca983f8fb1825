#include "d3hr/gmm_world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <openssl/evp.h>

#include "d3hr/error.hpp"
#include "d3hr/rng.hpp"
#include "d3hr/serialize.hpp"

namespace d3hr {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

void check_alpha_bar(double alpha_bar) {
    D3HR_REQUIRE(alpha_bar > 0.0 && alpha_bar <= 1.0, "alpha_bar must lie in (0, 1]");
}

// log N(x; mean, var) per component, summed over dimensions, plus log weight.
double component_log_term(const GmmComponent& c, std::span<const double> x) {
    double acc = std::log(c.weight);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = c.std[i];
        const double u = (x[i] - c.mean[i]) / s;
        acc -= 0.5 * u * u + std::log(s) + kLogSqrtTwoPi;
    }
    return acc;
}

}  // namespace

void GmmSpec::validate() const {
    D3HR_REQUIRE(dimension > 0, "world dimension must be positive");
    D3HR_REQUIRE(!classes.empty(), "world needs at least one class");
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto& mix = classes[c];
        D3HR_REQUIRE(!mix.empty(), "class " + std::to_string(c) + " has no components");
        double total = 0.0;
        for (const auto& comp : mix) {
            D3HR_REQUIRE(std::isfinite(comp.weight) && comp.weight > 0.0 && comp.weight <= 1.0,
                         "component weight must lie in (0, 1] (class " + std::to_string(c) + ")");
            D3HR_REQUIRE(comp.mean.size() == dimension && comp.std.size() == dimension,
                         "component mean/std length must equal the world dimension (class " + std::to_string(c) + ")");
            for (double m : comp.mean) D3HR_REQUIRE(std::isfinite(m), "component mean must be finite");
            for (double s : comp.std)
                D3HR_REQUIRE(std::isfinite(s) && s >= kMinComponentStd,
                             "component std below positivity floor 1e-6 (class " + std::to_string(c) + ")");
            total += comp.weight;
        }
        D3HR_REQUIRE(std::abs(total - 1.0) <= kWeightSumTolerance,
                     "component weights of class " + std::to_string(c) + " do not sum to 1");
    }
}

std::size_t Dataset::num_classes() const {
    std::size_t n = 0;
    for (const auto& p : points) n = std::max(n, p.label + 1);
    return n;
}

std::vector<Vector> Dataset::class_points(std::size_t label) const {
    std::vector<Vector> out;
    for (const auto& p : points)
        if (p.label == label) out.push_back(p.x);
    return out;
}

void Dataset::validate(std::optional<std::size_t> class_count) const {
    D3HR_REQUIRE(dimension > 0, "dataset dimension must be positive");
    if (world) {
        world->validate();
        D3HR_REQUIRE(world->dimension == dimension, "dataset dimension differs from its world");
        if (!class_count) class_count = world->num_classes();
    }
    for (const auto& p : points) {
        D3HR_REQUIRE(p.x.size() == dimension, "point dimension differs from dataset dimension");
        for (double v : p.x) D3HR_REQUIRE(std::isfinite(v), "dataset contains a non-finite coordinate");
        if (class_count) D3HR_REQUIRE(p.label < *class_count, "point label out of range");
    }
}

std::string spec_digest(const GmmSpec& spec) {
    const std::string canonical = to_json(spec).dump();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(canonical.data(), canonical.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[md[i] >> 4]);
        hex.push_back(kHex[md[i] & 0xF]);
    }
    return hex;
}

GmmSpec default_world(std::uint64_t world_seed) {
    constexpr std::size_t kDim = 8, kClasses = 4, kComponents = 3;
    Engine engine(world_seed);
    std::uniform_real_distribution<double> mean_dist(-4.0, 4.0);
    std::uniform_real_distribution<double> std_dist(0.3, 1.2);
    std::exponential_distribution<double> gamma1(1.0);  // Gamma(1) marginals give Dirichlet(1,...,1)

    GmmSpec spec;
    spec.dimension = kDim;
    for (std::size_t c = 0; c < kClasses; ++c) {
        Mixture mix(kComponents);
        double total = 0.0;
        for (auto& comp : mix) {
            comp.mean.resize(kDim);
            comp.std.resize(kDim);
            for (auto& m : comp.mean) m = mean_dist(engine);
            for (auto& s : comp.std) s = std_dist(engine);
            comp.weight = gamma1(engine);
            total += comp.weight;
        }
        for (auto& comp : mix) comp.weight /= total;
        spec.classes.push_back(std::move(mix));
    }
    return spec;
}

Dataset sample_dataset(const GmmSpec& spec, std::size_t n_per_class, std::uint64_t seed) {
    spec.validate();
    D3HR_REQUIRE(n_per_class > 0, "n_per_class must be positive");

    Dataset data;
    data.dimension = spec.dimension;
    data.seed = seed;
    data.spec_digest = spec_digest(spec);
    data.world = spec;
    data.points.reserve(n_per_class * spec.num_classes());

    for (std::size_t c = 0; c < spec.num_classes(); ++c) {
        const auto& mix = spec.classes[c];
        std::vector<double> weights;
        for (const auto& comp : mix) weights.push_back(comp.weight);
        Engine engine(derived_seed(seed, c, 0));
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const auto& comp = mix[pick(engine)];
            LabeledPoint p{Vector(spec.dimension), c};
            for (std::size_t d = 0; d < spec.dimension; ++d) p.x[d] = comp.mean[d] + comp.std[d] * normal(engine);
            data.points.push_back(std::move(p));
        }
    }
    return data;
}

Mixture marginal_at(const GmmSpec& spec, std::size_t label, double alpha_bar) {
    check_alpha_bar(alpha_bar);
    D3HR_REQUIRE(label < spec.num_classes(), "class index out of range");
    if (alpha_bar == 1.0) return spec.classes[label];

    const double scale = std::sqrt(alpha_bar);
    const double noise_var = 1.0 - alpha_bar;
    Mixture out = spec.classes[label];
    for (auto& comp : out) {
        for (auto& m : comp.mean) m *= scale;
        for (auto& s : comp.std) s = std::sqrt(alpha_bar * s * s + noise_var);
    }
    return out;
}

double gmm_log_density(const Mixture& mixture, std::span<const double> point) {
    D3HR_REQUIRE(!mixture.empty(), "mixture has no components");
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(mixture.size());
    for (const auto& comp : mixture) {
        D3HR_REQUIRE(comp.mean.size() == point.size() && comp.std.size() == point.size(),
                     "point dimension does not match mixture");
        terms.push_back(component_log_term(comp, point));
        top = std::max(top, terms.back());
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - top);
    return top + std::log(sum);
}

Vector analytic_epsilon(const GmmSpec& spec, std::size_t label, std::span<const double> z, double alpha_bar) {
    D3HR_REQUIRE(z.size() == spec.dimension, "latent dimension does not match world");
    const Mixture mix = marginal_at(spec, label, alpha_bar);
    Vector eps(z.size(), 0.0);
    if (alpha_bar == 1.0) return eps;

    std::vector<double> log_r;
    log_r.reserve(mix.size());
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& comp : mix) {
        log_r.push_back(component_log_term(comp, z));
        top = std::max(top, log_r.back());
    }
    double norm = 0.0;
    for (auto& l : log_r) norm += (l = std::exp(l - top));

    for (std::size_t k = 0; k < mix.size(); ++k) {
        const double r = log_r[k] / norm;
        if (r == 0.0) continue;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double s = mix[k].std[i];
            eps[i] += r * (mix[k].mean[i] - z[i]) / (s * s);
        }
    }
    const double factor = -std::sqrt(1.0 - alpha_bar);
    for (auto& e : eps) e *= factor;
    return eps;
}

}  // namespace d3hr
