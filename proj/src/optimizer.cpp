#include "irspot/optimizer.hpp"

#include "irspot/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace irspot {

namespace {

void require_positive(double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(field, std::string(field) + " must be > 0");
}

void require_range(double lo, double hi, const char* field) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw ValidationError(field, std::string(field) + " bounds are degenerate");
    }
}

// Uniform in [0,1) from the top 53 bits; the standard distributions are not
// specified bit-exactly across library implementations.
double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

constexpr std::array<std::array<double, 2>, 5> kCanonicalLoci{{
    {0.5, 0.25},  // forehead centre
    {0.3, 0.55},  // left cheek
    {0.7, 0.55},  // right cheek
    {0.5, 0.45},  // nose bridge
    {0.5, 0.8},   // chin
}};

}  // namespace

void validate(const AttackConfig& cfg) {
    if (cfg.n_spots == 0) throw ValidationError("n_spots", "n_spots must be >= 1");
    const ParameterBounds& b = cfg.bounds;
    require_range(b.sigma_min, b.sigma_max, "bounds.sigma");
    require_positive(b.sigma_min, "bounds.sigma_min");
    require_range(b.s_min, b.s_max, "bounds.s");
    if (b.s_min < 0.0) throw ValidationError("bounds.s_min", "bounds.s_min must be >= 0");
    if (!(b.amp_min <= b.amp_max) || b.amp_min < 0.0) {
        throw ValidationError("bounds.amp", "bounds.amp must satisfy 0 <= min <= max");
    }
    if (cfg.amp_floor < 0.0) throw ValidationError("amp_floor", "amp_floor must be >= 0");
    if (b.margin_sigmas < 0.0) throw ValidationError("bounds.margin_sigmas", "must be >= 0");
    require_positive(cfg.fd_step.position, "fd_step.position");
    require_positive(cfg.fd_step.sigma, "fd_step.sigma");
    require_positive(cfg.fd_step.s, "fd_step.s");
    require_positive(cfg.fd_step.amp, "fd_step.amp");
    require_positive(cfg.adam.lr_position, "adam.lr_position");
    require_positive(cfg.adam.lr_sigma, "adam.lr_sigma");
    require_positive(cfg.adam.lr_s, "adam.lr_s");
    require_positive(cfg.adam.lr_amp, "adam.lr_amp");
}

nlohmann::json to_json(const AttackResult& result) {
    return {{"best_config", to_json(result.best_config)},
            {"best_distance", result.best_distance},
            {"initial_distance", result.initial_distance},
            {"success", result.success},
            {"trajectory", result.trajectory},
            {"oracle_calls", result.oracle_calls},
            {"dropped_spots", result.dropped_spots}};
}

Objective::Objective(const Image& base, EmbeddingVector target, EmbeddingOracle& oracle)
    : base_(base), target_(std::move(target)), oracle_(oracle) {}

double Objective::value(const PerturbationConfig& config) {
    ++calls_;
    return distance(oracle_.embed(synthesize(base_, config)), target_);
}

double Objective::value_and_gradient(const PerturbationConfig& config, std::vector<double>& grad) {
    const Image synth = synthesize(base_, config);
    calls_ += 2;
    const EmbeddingVector e = oracle_.embed(synth);
    const double j = distance(e, target_);
    std::vector<double> cot(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) cot[i] = 2.0 * (e.values[i] - target_.values[i]);
    grad = pullback(config, oracle_.embed_vjp(synth, cot));
    return j;
}

double objective(const Image& base, const EmbeddingVector& victim_emb,
                 const PerturbationConfig& config, EmbeddingOracle& oracle) {
    Objective obj(base, victim_emb, oracle);
    return obj.value(config);
}

std::vector<double> fd_step_vector(const FdSteps& steps, std::size_t n_spots) {
    std::vector<double> out;
    out.reserve(1 + 4 * n_spots);
    out.push_back(steps.amp);
    for (std::size_t i = 0; i < n_spots; ++i) {
        out.push_back(steps.sigma);
        out.push_back(steps.position);
        out.push_back(steps.position);
        out.push_back(steps.s);
    }
    return out;
}

GradientEstimate finite_difference(const std::function<double(std::span<const double>)>& fn,
                                   std::span<const double> theta, std::span<const double> steps,
                                   FdScheme scheme) {
    if (steps.size() != theta.size()) throw Error("finite_difference: step/theta size mismatch");
    GradientEstimate est;
    est.value = fn(theta);
    est.gradient.resize(theta.size());
    std::vector<double> probe(theta.begin(), theta.end());
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double h = steps[k];
        probe[k] = theta[k] + h;
        const double up = fn(probe);
        if (scheme == FdScheme::Forward) {
            est.gradient[k] = (up - est.value) / h;
        } else {
            probe[k] = theta[k] - h;
            est.gradient[k] = (up - fn(probe)) / (2.0 * h);
        }
        probe[k] = theta[k];
    }
    return est;
}

GradientEstimate fd_gradient(Objective& objective, const PerturbationConfig& config,
                             const FdSteps& steps, FdScheme scheme) {
    PerturbationConfig probe = config;
    auto fn = [&](std::span<const double> theta) {
        probe.assign_vector(theta);
        return objective.value(probe);
    };
    const std::vector<double> theta = config.to_vector();
    return finite_difference(fn, theta, fd_step_vector(steps, config.spots.size()), scheme);
}

GradientEstimate whitebox_gradient(Objective& objective, const PerturbationConfig& config) {
    GradientEstimate est;
    est.value = objective.value_and_gradient(config, est.gradient);
    return est;
}

std::vector<bool> project(PerturbationConfig& config, const ParameterBounds& bounds,
                          std::size_t height, std::size_t width) {
    config.amp = std::clamp(config.amp, bounds.amp_min, bounds.amp_max);
    std::vector<bool> left(config.spots.size(), false);
    for (std::size_t i = 0; i < config.spots.size(); ++i) {
        SpotParams& sp = config.spots[i];
        sp.sigma = std::clamp(sp.sigma, bounds.sigma_min, bounds.sigma_max);
        sp.s = std::clamp(sp.s, bounds.s_min, bounds.s_max);
        const double margin = bounds.margin_sigmas * sp.sigma;
        const double px = std::clamp(sp.px, -margin, static_cast<double>(width) - 1.0 + margin);
        const double py = std::clamp(sp.py, -margin, static_cast<double>(height) - 1.0 + margin);
        left[i] = px != sp.px || py != sp.py;
        sp.px = px;
        sp.py = py;
    }
    return left;
}

PerturbationConfig initial_config(const AttackConfig& cfg, std::size_t height, std::size_t width) {
    std::mt19937_64 rng(cfg.seed);
    PerturbationConfig config;
    config.amp = 0.1;
    config.color_ratio = cfg.color_ratio;
    for (std::size_t i = 0; i < cfg.n_spots; ++i) {
        const auto& locus = kCanonicalLoci[i % kCanonicalLoci.size()];
        const double jx = (unit_uniform(rng) * 2.0 - 1.0) * 0.05;
        const double jy = (unit_uniform(rng) * 2.0 - 1.0) * 0.05;
        SpotParams sp;
        sp.px = (locus[0] + jx) * static_cast<double>(width - 1);
        sp.py = (locus[1] + jy) * static_cast<double>(height - 1);
        sp.sigma = 8.0;
        sp.s = 1.0;
        config.spots.push_back(sp);
    }
    project(config, cfg.bounds, height, width);
    return config;
}

AttackStepper::AttackStepper(PerturbationConfig start, const AttackConfig& cfg, Goal goal,
                             std::size_t height, std::size_t width)
    : config_(std::move(start)), cfg_(cfg), goal_(goal), height_(height), width_(width) {
    validate(cfg_);
    lr_.push_back(cfg_.adam.lr_amp);
    for (std::size_t i = 0; i < config_.spots.size(); ++i) {
        lr_.push_back(cfg_.adam.lr_sigma);
        lr_.push_back(cfg_.adam.lr_position);
        lr_.push_back(cfg_.adam.lr_position);
        lr_.push_back(cfg_.adam.lr_s);
    }
    reset(config_);
}

void AttackStepper::reset(PerturbationConfig config) {
    if (config.spots.size() != config_.spots.size()) {
        throw ValidationError("spots", "spot count cannot change during a run");
    }
    config_ = std::move(config);
    m_.assign(config_.parameter_count(), 0.0);
    v_.assign(config_.parameter_count(), 0.0);
    zero_streak_.assign(config_.spots.size(), 0);
    frozen_.assign(config_.spots.size(), false);
    t_ = 0;
    project(config_, cfg_.bounds, height_, width_);
    apply_amp_floor();
}

void AttackStepper::apply_amp_floor() {
    config_.amp = std::max(config_.amp, std::min(cfg_.amp_floor, cfg_.bounds.amp_max));
}

std::vector<std::size_t> AttackStepper::dropped_spots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frozen_.size(); ++i) {
        if (frozen_[i]) out.push_back(i);
    }
    return out;
}

double AttackStepper::step(Objective& objective) {
    GradientEstimate est = cfg_.grad_mode == GradMode::WhiteBox
                               ? whitebox_gradient(objective, config_)
                               : fd_gradient(objective, config_, cfg_.fd_step, cfg_.fd_scheme);
    if (!std::isfinite(est.value)) {
        throw Error("objective is not finite at iteration " + std::to_string(t_));
    }
    for (std::size_t k = 0; k < est.gradient.size(); ++k) {
        if (!std::isfinite(est.gradient[k])) {
            throw Error("gradient entry " + std::to_string(k) + " is not finite at iteration " +
                        std::to_string(t_));
        }
    }

    ++t_;
    const double sign = goal_ == Goal::Minimize ? 1.0 : -1.0;
    const double b1 = cfg_.adam.beta1;
    const double b2 = cfg_.adam.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::vector<double> theta = config_.to_vector();
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (k > 0 && frozen_[(k - 1) / 4]) continue;
        const double g = sign * est.gradient[k];
        m_[k] = b1 * m_[k] + (1.0 - b1) * g;
        v_[k] = b2 * v_[k] + (1.0 - b2) * g * g;
        const double mhat = m_[k] / corr1;
        const double vhat = v_[k] / corr2;
        theta[k] -= lr_[k] * mhat / (std::sqrt(vhat) + cfg_.adam.epsilon);
    }
    config_.assign_vector(theta);
    freeze_check(project(config_, cfg_.bounds, height_, width_));
    apply_amp_floor();
    return est.value;
}

void AttackStepper::freeze_check(const std::vector<bool>& left_canvas) {
    for (std::size_t i = 0; i < config_.spots.size(); ++i) {
        if (frozen_[i]) continue;
        if (left_canvas[i]) {
            frozen_[i] = true;
            continue;
        }
        zero_streak_[i] = config_.spots[i].s <= cfg_.bounds.s_min ? zero_streak_[i] + 1 : 0;
        if (zero_streak_[i] >= cfg_.drop_patience) frozen_[i] = true;
    }
}

namespace {

AttackResult run(const Image& base, const EmbeddingVector& target, const AttackConfig& cfg,
                 EmbeddingOracle& oracle, Goal goal, std::size_t prior_calls) {
    validate(cfg);
    Objective objective(base, target, oracle);
    const bool minimize = goal == Goal::Minimize;
    auto better = [&](double a, double b) { return minimize ? a < b : a > b; };
    auto succeeded = [&](double d) { return minimize ? d < cfg.threshold : d > cfg.threshold; };

    AttackStepper stepper(initial_config(cfg, base.height(), base.width()), cfg, goal,
                          base.height(), base.width());

    AttackResult result;
    PerturbationConfig unperturbed = stepper.config();
    unperturbed.amp = 0.0;
    result.initial_distance = objective.value(unperturbed);
    if (!std::isfinite(result.initial_distance)) throw Error("initial objective is not finite");
    result.best_config = unperturbed;
    result.best_distance = result.initial_distance;

    auto iterate = [&](std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            const PerturbationConfig evaluated = stepper.config();
            const double value = stepper.step(objective);
            result.trajectory.push_back(value);
            if (better(value, result.best_distance)) {
                result.best_distance = value;
                result.best_config = evaluated;
            }
        }
    };
    iterate(cfg.max_iters);
    if (succeeded(result.best_distance)) iterate(cfg.refine_iters);

    result.success = succeeded(result.best_distance);
    result.oracle_calls = prior_calls + objective.calls();
    result.dropped_spots = stepper.dropped_spots();
    return result;
}

}  // namespace

AttackResult run_attack(const Image& base, const EmbeddingVector& victim_emb,
                        const AttackConfig& cfg, EmbeddingOracle& oracle) {
    return run(base, victim_emb, cfg, oracle, Goal::Minimize, 0);
}

AttackResult run_attack(const Image& base, const Image& victim, const AttackConfig& cfg,
                        EmbeddingOracle& oracle) {
    if (!base.same_shape(victim)) throw ImageError("attacker and victim canvas sizes differ");
    return run(base, oracle.embed(victim), cfg, oracle, Goal::Minimize, 1);
}

AttackResult run_dodge(const Image& base, const AttackConfig& cfg, EmbeddingOracle& oracle) {
    return run(base, oracle.embed(base), cfg, oracle, Goal::Maximize, 1);
}

}  // namespace irspot
