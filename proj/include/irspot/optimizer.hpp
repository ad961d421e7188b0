#pragma once

#include "irspot/embedding.hpp"
#include "irspot/image.hpp"
#include "irspot/spot_model.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace irspot {

struct ParameterBounds {
    double sigma_min = 1.0;
    double sigma_max = 30.0;
    double s_min = 0.0;
    double s_max = 10.0;
    double amp_min = 0.0;
    double amp_max = 5.0;
    /// Spot centres may sit this many sigmas outside the canvas.
    double margin_sigmas = 3.0;
};

struct AdamSettings {
    double lr_position = 0.5;
    double lr_sigma = 0.05;
    double lr_s = 0.05;
    double lr_amp = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Per-group probe sizes for finite-difference gradients.
struct FdSteps {
    double position = 0.5;
    double sigma = 0.1;
    double s = 0.01;
    double amp = 0.01;
};

enum class GradMode { WhiteBox, BlackBox };
enum class FdScheme { Forward, Central };

struct AttackConfig {
    std::size_t n_spots = 5;
    std::size_t max_iters = 200;
    std::size_t refine_iters = 200;
    AdamSettings adam;
    GradMode grad_mode = GradMode::WhiteBox;
    FdScheme fd_scheme = FdScheme::Forward;
    FdSteps fd_step;
    double threshold = kDefaultThreshold;
    std::uint64_t seed = 0;
    ParameterBounds bounds;
    /// Consecutive iterations at s == s_min before a spot is dropped.
    std::size_t drop_patience = 20;
    /// Smallest amp the iterates may take (capped by bounds.amp_max). Every
    /// spot gradient scales with amp, so amp == 0 would stall the search.
    double amp_floor = 1e-3;
    ColorRatio color_ratio = kDefaultColorRatio;
};

/// Throws ValidationError when bounds are degenerate or a step/rate is not positive.
void validate(const AttackConfig& cfg);

struct AttackResult {
    PerturbationConfig best_config;
    double best_distance = 0.0;
    double initial_distance = 0.0;
    bool success = false;
    /// Objective at each evaluated iterate, in order.
    std::vector<double> trajectory;
    /// Embedding and image-gradient queries issued, including the target embed.
    std::size_t oracle_calls = 0;
    std::vector<std::size_t> dropped_spots;
};

nlohmann::json to_json(const AttackResult& result);

/// J(config) = distance(f(clamp(synthesize(base, config))), target). Counts
/// every oracle query it makes.
class Objective {
public:
    Objective(const Image& base, EmbeddingVector target, EmbeddingOracle& oracle);

    double value(const PerturbationConfig& config);

    /// Value plus dJ/dtheta chained through the oracle's image gradient.
    double value_and_gradient(const PerturbationConfig& config, std::vector<double>& grad);

    const Image& base() const noexcept { return base_; }
    const EmbeddingVector& target() const noexcept { return target_; }
    EmbeddingOracle& oracle() noexcept { return oracle_; }
    std::size_t calls() const noexcept { return calls_; }

private:
    const Image& base_;
    EmbeddingVector target_;
    EmbeddingOracle& oracle_;
    std::size_t calls_ = 0;
};

double objective(const Image& base, const EmbeddingVector& victim_emb,
                 const PerturbationConfig& config, EmbeddingOracle& oracle);

struct GradientEstimate {
    double value = 0.0;
    std::vector<double> gradient;
};

/// Per-entry probe size for the flat parameter layout.
std::vector<double> fd_step_vector(const FdSteps& steps, std::size_t n_spots);

/// Finite differences of an arbitrary scalar function. Forward uses
/// 1 + dim evaluations, central uses 1 + 2 * dim.
GradientEstimate finite_difference(const std::function<double(std::span<const double>)>& fn,
                                   std::span<const double> theta, std::span<const double> steps,
                                   FdScheme scheme = FdScheme::Forward);

GradientEstimate fd_gradient(Objective& objective, const PerturbationConfig& config,
                             const FdSteps& steps, FdScheme scheme = FdScheme::Forward);

GradientEstimate whitebox_gradient(Objective& objective, const PerturbationConfig& config);

/// Canonical face-central starting layout, jittered by seed, projected to bounds.
PerturbationConfig initial_config(const AttackConfig& cfg, std::size_t height, std::size_t width);

/// Clamps theta into bounds in place. Returns, per spot, whether its centre
/// had to be pulled back inside the canvas margin.
std::vector<bool> project(PerturbationConfig& config, const ParameterBounds& bounds,
                          std::size_t height, std::size_t width);

enum class Goal { Minimize, Maximize };

/// Adam with per-group learning rates, projection after each step and spot
/// dropping. Holds the optimizer state so a run can be continued in chunks.
class AttackStepper {
public:
    AttackStepper(PerturbationConfig start, const AttackConfig& cfg, Goal goal, std::size_t height,
                  std::size_t width);

    /// Evaluates the objective at the current config, takes one Adam step,
    /// and returns the evaluated value.
    double step(Objective& objective);

    const PerturbationConfig& config() const noexcept { return config_; }

    /// Replaces the config and clears moment estimates and drop state.
    void reset(PerturbationConfig config);

    std::vector<std::size_t> dropped_spots() const;
    std::size_t iterations() const noexcept { return t_; }

private:
    void freeze_check(const std::vector<bool>& left_canvas);
    void apply_amp_floor();

    PerturbationConfig config_;
    AttackConfig cfg_;
    Goal goal_;
    std::size_t height_;
    std::size_t width_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::vector<double> lr_;
    std::vector<std::size_t> zero_streak_;
    std::vector<bool> frozen_;
    std::size_t t_ = 0;
};

AttackResult run_attack(const Image& base, const Image& victim, const AttackConfig& cfg,
                        EmbeddingOracle& oracle);
AttackResult run_attack(const Image& base, const EmbeddingVector& victim_emb,
                        const AttackConfig& cfg, EmbeddingOracle& oracle);

/// Maximises the self-distance; success when it exceeds cfg.threshold.
AttackResult run_dodge(const Image& base, const AttackConfig& cfg, EmbeddingOracle& oracle);

}  // namespace irspot
