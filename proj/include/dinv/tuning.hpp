#pragma once

#include "dinv/core.hpp"
#include "dinv/estimators.hpp"
#include "dinv/setmem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dinv {

/**
 * @brief All scalars that parameterize the controller.
 *
 * The *_hat fields are the estimates seeded from the training data; the
 * effective values used by the controller are estimate + inflation.
 */
struct Tuning {
    double delta_hat = 0.0;
    double gamma_star_hat = 0.0;
    double gamma_g_hat = 0.0;
    double epsilon_hat = 0.0;
    double zeta_hat = 0.0;

    double c_delta = 0.0;
    double c_gamma_star = 0.0;
    double c_gamma_g = 0.0;
    double c_epsilon = 0.0;

    // Guessed closed-loop gains of the optimal inverse.
    double lambda1_star = 1.1;
    double lambda2_star = 1.1;
    double beta_star = 0.0;

    double r_bar = 1.0;
    double gamma_delta_bar = 0.0;
    double gamma_delta = 0.0;  // value at t = 0 (static mode keeps it)
    double fraction = 0.5;     // placement of gamma_delta inside its interval
    double sigma = 0.0;
    double x_bar = 0.0;

    double mu_bar = 0.9;
    std::size_t q = 10;
    std::size_t N_bar = 500;

    double delta() const { return delta_hat + c_delta; }
    double gamma_star() const { return gamma_star_hat + c_gamma_star; }
    double gamma_g() const { return gamma_g_hat + c_gamma_g; }
    double epsilon() const { return epsilon_hat + c_epsilon; }

    /// Upper end of the admissible gamma_delta interval for the seeded gamma_g.
    double gamma_delta_cap() const {
        const double g = gamma_g() * lambda2_star;
        return g > 0.0 ? 1.0 / g : std::numeric_limits<double>::infinity();
    }
};

/// Denominator of the state ceiling: 1 - (gamma_g_hat + c) lambda2 gamma_delta_bar.
inline double x_bar_denominator(const Tuning& t) {
    return 1.0 - t.gamma_g() * t.lambda2_star * t.gamma_delta_bar;
}

/// State ceiling for a given sigma (other fields taken from t).
inline double compute_x_bar(const Tuning& t, double sigma) {
    const double den = x_bar_denominator(t);
    if (!(den > 0.0))
        throw Error("x_bar denominator " + std::to_string(den) +
                    " <= 0: gamma_delta_bar too large for the guessed lambda2* and estimated gamma_g");
    const double num =
        t.lambda1_star * t.r_bar + t.gamma_g() * t.lambda2_star * sigma + t.lambda2_star * t.epsilon() + t.beta_star;
    return num / den;
}

inline double compute_x_bar(const Tuning& t) { return compute_x_bar(t, t.sigma); }

/// fraction * min{1 / ((gamma_g_hat + c) lambda2), gamma_delta_bar}.
inline double select_gamma_delta(double gamma_g_hat, double c_gamma_g, double lambda2_star, double gamma_delta_bar,
                                 double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error("select_gamma_delta: fraction must lie in (0,1)");
    const double g = (gamma_g_hat + c_gamma_g) * lambda2_star;
    const double cap = g > 0.0 ? 1.0 / g : std::numeric_limits<double>::infinity();
    return fraction * std::min(cap, gamma_delta_bar);
}

struct SigmaSelection {
    double sigma = 0.0;
    double x_bar = 0.0;
    double d0 = 0.0;  // sampled sup of the gap at the returned x_bar
    int iterations = 0;
};

struct SigmaOptions {
    double margin = 1.05;
    std::size_t samples = 4000;
    std::uint64_t seed = 1;
    int max_iterations = 100;
    double rel_tol = 1e-6;
};

/**
 * Resolves the sigma <-> x_bar circularity by a monotone fixed-point
 * iteration: sigma_{i+1} = max(sigma_i, margin * D0(x_bar(sigma_i)) / 2).
 * Returns once sigma and x_bar both settle and sigma >= D0(x_bar) / 2.
 */
inline SigmaSelection select_sigma(const BoundsOracle& inflated, const Tuning& t, double x_bar_init,
                                   const SigmaOptions& opt = {}) {
    if (!(opt.margin > 1.0)) throw Error("select_sigma: margin must be > 1");
    const auto settled = [&](double a, double b) {
        return std::abs(a - b) <= opt.rel_tol * std::max({std::abs(a), std::abs(b), 1e-300});
    };
    double sigma = opt.margin * 0.5 * estimate_D0(inflated, x_bar_init, t.r_bar, opt.samples, opt.seed);
    double x_bar = x_bar_init;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        if (!std::isfinite(sigma)) break;
        const double xb = compute_x_bar(t, sigma);
        const double d0 = estimate_D0(inflated, xb, t.r_bar, opt.samples, opt.seed);
        const double next = std::max(sigma, opt.margin * 0.5 * d0);
        if (settled(next, sigma) && settled(xb, x_bar)) {
            const double xb_final = compute_x_bar(t, next);
            const double d0_final = estimate_D0(inflated, xb_final, t.r_bar, opt.samples, opt.seed);
            if (next >= 0.5 * d0_final) return {next, xb_final, d0_final, it};
        }
        sigma = next;
        x_bar = xb;
    }
    throw Error("sigma/x_bar fixed point diverged - training data too sparse or gamma* too large");
}

// ---------------------------------------------------------------------------
// Hypothesis checks
// ---------------------------------------------------------------------------

struct Check {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double limit = 0.0;
    std::string detail;
};

struct ValidationReport {
    std::vector<Check> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
    const Check* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

/// Context the checks need beyond the tuning itself.
struct ValidationContext {
    std::vector<Interval> state_box;  // X, one interval per state coordinate
    Vector x0;                        // initial closed-loop state
    Vector r1;                        // first reference sample
    std::size_t samples = 4000;
    std::uint64_t seed = 7;           // fresh sample set, distinct from the tuning seed
};

/// Whether the norm ball of radius r around 0 lies inside the box.
inline bool ball_in_box(double r, const std::vector<Interval>& box) {
    return std::all_of(box.begin(), box.end(), [r](const Interval& iv) { return iv.lo <= -r && r <= iv.hi; });
}

inline ValidationReport validate_stability_hypotheses(const Tuning& t, const BoundsOracle& inflated,
                                                     const ValidationContext& ctx) {
    ValidationReport rep;
    const double cap = t.gamma_delta_cap();

    rep.checks.push_back({"estimates_nondegenerate", t.gamma_star_hat > 0.0 && t.gamma_g_hat > 0.0,
                          std::min(t.gamma_star_hat, t.gamma_g_hat), 0.0,
                          "seeded gamma* and gamma_g estimates must be positive (too few informative pairs otherwise)"});

    rep.checks.push_back({"gamma_delta_bar_interval", t.gamma_delta_bar > 0.0 && t.gamma_delta_bar < cap,
                          t.gamma_delta_bar, cap, "0 < gamma_delta_bar < 1/((gamma_g_hat + c_gamma_g) lambda2*)"});

    const double den = x_bar_denominator(t);
    rep.checks.push_back({"x_bar_denominator", den > 0.0, den, 0.0, "1 - (gamma_g_hat + c_gamma_g) lambda2* gamma_delta_bar > 0"});

    const double gd_cap = std::min(cap, t.gamma_delta_bar);
    rep.checks.push_back({"gamma_delta_interval", t.gamma_delta > 0.0 && t.gamma_delta < gd_cap, t.gamma_delta, gd_cap,
                          "0 < gamma_delta < min{1/((gamma_g_hat + c_gamma_g) lambda2*), gamma_delta_bar}"});

    double x_bar = t.x_bar;
    if (den > 0.0) x_bar = compute_x_bar(t);
    const bool xbar_ok = std::isfinite(x_bar) && x_bar > 0.0;
    rep.checks.push_back({"x_bar_positive", xbar_ok, x_bar, 0.0, "state ceiling finite and positive"});

    if (xbar_ok) {
        const double d0 = estimate_D0(inflated, x_bar, t.r_bar, ctx.samples, ctx.seed);
        rep.checks.push_back({"sigma_covers_gap", t.sigma >= 0.5 * d0, t.sigma, 0.5 * d0,
                              "sigma >= sup over B_xr of (hi - lo) / 2 on a fresh sample set"});
        rep.checks.push_back({"ball_in_state_box", ball_in_box(x_bar, ctx.state_box), x_bar,
                              ctx.state_box.empty() ? 0.0 : ctx.state_box.front().hi, "B_xbar contained in X"});
    }

    const Norm nrm = inflated.norm();
    if (ctx.x0.size() > 0) {
        const double nx0 = norm(ctx.x0, nrm);
        rep.checks.push_back({"initial_state_in_ball", xbar_ok && nx0 <= x_bar, nx0, x_bar, "|x_0| <= x_bar"});
        if (ctx.r1.size() == ctx.x0.size()) {
            const Interval b = inflated.bounds(make_regressor(ctx.x0, ctx.r1));
            const double margin = t.gamma_delta * nx0 + t.sigma;
            const double lo = b.hi - margin;
            const double hi = b.lo + margin;
            rep.checks.push_back({"initial_slab_nonempty", lo <= hi, hi - lo, 0.0, "stability slab at t = 0 nonempty"});
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// End-to-end tuning from training data
// ---------------------------------------------------------------------------

/// User-side inputs; unset optionals fall back to data-driven defaults.
struct TuningInputs {
    double c_delta = 0.0;
    double c_gamma_star = 0.0;
    double c_gamma_g = 0.0;
    double c_epsilon = 0.0;
    double lambda1_star = 1.1;
    double lambda2_star = 1.1;
    double beta_star = 0.0;
    double r_bar = 1.0;
    std::optional<double> gamma_delta_bar;  // default: half the admissible cap
    double fraction = 0.5;
    double mu_bar = 0.9;
    std::size_t q = 10;
    std::size_t N_bar = 500;
    double rho_fraction = 0.01;
    SigmaOptions sigma{};
    std::optional<double> x_bar_init;  // default: lambda1* r_bar
};

struct TuneResult {
    Tuning tuning;
    SeededEstimators estimators;
    SigmaSelection sigma;
    ValidationReport report;
};

/// Half of 1/((gamma_g_hat + c) lambda2), or 1 when gamma_g is zero.
inline double default_gamma_delta_bar(const Tuning& t) {
    const double cap = t.gamma_delta_cap();
    return std::isfinite(cap) ? 0.5 * cap : 1.0;
}

inline TuneResult tune_from_data(std::shared_ptr<const Dataset> data, const TuningInputs& in, Norm nrm,
                                 const ValidationContext& ctx) {
    if (!data || data->empty()) throw Error("tune: empty training data");
    TuneResult out;
    out.estimators = seed_from_training(*data, EstimatorConfig{in.N_bar, in.rho_fraction, nrm});
    const EstimateSnapshot& s = out.estimators.seed;

    Tuning& t = out.tuning;
    t.delta_hat = s.delta_hat;
    t.gamma_star_hat = s.gamma_star_hat;
    t.gamma_g_hat = s.gamma_g_hat;
    t.epsilon_hat = s.epsilon_hat;
    t.zeta_hat = s.zeta_hat;
    t.c_delta = in.c_delta;
    t.c_gamma_star = in.c_gamma_star;
    t.c_gamma_g = in.c_gamma_g;
    t.c_epsilon = in.c_epsilon;
    t.lambda1_star = in.lambda1_star;
    t.lambda2_star = in.lambda2_star;
    t.beta_star = in.beta_star;
    t.r_bar = in.r_bar;
    t.fraction = in.fraction;
    t.mu_bar = in.mu_bar;
    t.q = in.q;
    t.N_bar = in.N_bar;
    t.gamma_delta_bar = in.gamma_delta_bar.value_or(default_gamma_delta_bar(t));
    t.gamma_delta = select_gamma_delta(t.gamma_g_hat, t.c_gamma_g, t.lambda2_star, t.gamma_delta_bar, t.fraction);

    const BoundsOracle inflated =
        inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, t.c_gamma_star, nrm);
    out.sigma = select_sigma(inflated, t, in.x_bar_init.value_or(t.lambda1_star * t.r_bar), in.sigma);
    t.sigma = out.sigma.sigma;
    t.x_bar = out.sigma.x_bar;
    out.report = validate_stability_hypotheses(t, inflated, ctx);
    return out;
}

}  // namespace dinv
