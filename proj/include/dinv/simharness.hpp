#pragma once

#include "dinv/controller.hpp"
#include "dinv/core.hpp"
#include "dinv/expr.hpp"
#include "dinv/setmem.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dinv {

// ---------------------------------------------------------------------------
// Plants
// ---------------------------------------------------------------------------

enum class PlantKind { ScalarTanh, TwoStatePolynomial, Custom };
enum class NoiseLaw { UniformBall, Zero };

/**
 * @brief Discrete-time plant x+ = g(x, u) + e with bounded noise.
 *
 * Built-ins:
 *   ScalarTanh          x+ = a x + b tanh(u)                          (a, b)
 *   TwoStatePolynomial  x1+ = a1 x1 + c12 x2 + k12 x1 x2 + b1 u
 *                       x2+ = a2 x2 + c21 x1 + b2 u + k3 u^3          (a1 ... k3)
 * Custom plants carry one expression per state, or an opaque callback
 * (no closed form; the grid oracle refuses those).
 */
struct PlantModel {
    PlantKind kind = PlantKind::ScalarTanh;
    std::map<std::string, double> params;
    int n_x = 1;
    double noise_bound = 0.0;
    NoiseLaw noise_law = NoiseLaw::Zero;
    std::uint64_t seed = 1;
    Norm norm = Norm::Linf;
    std::vector<Expression> expressions;
    std::function<Vector(const Vector&, double)> callback;

    static PlantModel scalar_tanh(double a, double b, double eps = 0.0, std::uint64_t seed = 1) {
        PlantModel p;
        p.kind = PlantKind::ScalarTanh;
        p.params = {{"a", a}, {"b", b}};
        p.n_x = 1;
        p.noise_bound = eps;
        p.noise_law = eps > 0.0 ? NoiseLaw::UniformBall : NoiseLaw::Zero;
        p.seed = seed;
        return p;
    }

    static std::map<std::string, double> polynomial_defaults() {
        return {{"a1", 0.5}, {"c12", 0.1}, {"k12", 0.05}, {"b1", 1.0},
                {"a2", 0.4}, {"c21", 0.1}, {"b2", 0.5},   {"k3", 0.05}};
    }

    static PlantModel two_state_polynomial(std::map<std::string, double> overrides = {}, double eps = 0.0,
                                           std::uint64_t seed = 1) {
        PlantModel p;
        p.kind = PlantKind::TwoStatePolynomial;
        p.params = polynomial_defaults();
        for (const auto& [k, v] : overrides) {
            if (!p.params.count(k)) throw Error("two_state_polynomial: unknown parameter '" + k + "'");
            p.params[k] = v;
        }
        p.n_x = 2;
        p.noise_bound = eps;
        p.noise_law = eps > 0.0 ? NoiseLaw::UniformBall : NoiseLaw::Zero;
        p.seed = seed;
        return p;
    }

    static PlantModel custom(const std::vector<std::string>& exprs, double eps = 0.0, std::uint64_t seed = 1) {
        if (exprs.empty()) throw Error("custom plant: need one expression per state");
        PlantModel p;
        p.kind = PlantKind::Custom;
        p.n_x = static_cast<int>(exprs.size());
        for (const auto& e : exprs) p.expressions.push_back(Expression::compile(e, p.n_x));
        p.noise_bound = eps;
        p.noise_law = eps > 0.0 ? NoiseLaw::UniformBall : NoiseLaw::Zero;
        p.seed = seed;
        return p;
    }

    bool has_closed_form() const { return kind != PlantKind::Custom || !expressions.empty(); }

    double param(const std::string& k) const {
        auto it = params.find(k);
        if (it == params.end()) throw Error("plant: missing parameter '" + k + "'");
        return it->second;
    }

    /// Noise-free map g(x, u).
    Vector g(const Eigen::Ref<const Vector>& x, double u) const {
        if (x.size() != n_x) throw Error("plant: state dimension mismatch");
        Vector out(n_x);
        switch (kind) {
            case PlantKind::ScalarTanh:
                out[0] = param("a") * x[0] + param("b") * std::tanh(u);
                break;
            case PlantKind::TwoStatePolynomial:
                out[0] = param("a1") * x[0] + param("c12") * x[1] + param("k12") * x[0] * x[1] + param("b1") * u;
                out[1] = param("a2") * x[1] + param("c21") * x[0] + param("b2") * u + param("k3") * u * u * u;
                break;
            case PlantKind::Custom:
                if (!expressions.empty()) {
                    for (int i = 0; i < n_x; ++i) out[i] = expressions[static_cast<std::size_t>(i)].eval(x, u);
                } else if (callback) {
                    out = callback(Vector(x), u);
                    if (out.size() != n_x) throw Error("plant callback returned wrong dimension");
                } else {
                    throw Error("custom plant has neither expressions nor callback");
                }
                break;
        }
        return out;
    }
};

/// Uniform draw from the noise ball, or zero.
template <class Rng>
Vector sample_noise(const PlantModel& p, Rng& rng) {
    if (p.noise_law == NoiseLaw::Zero || p.noise_bound <= 0.0) return Vector::Zero(p.n_x);
    return detail::sample_ball(rng, p.n_x, p.noise_bound, p.norm);
}

template <class Rng>
Vector plant_step(const PlantModel& p, const Eigen::Ref<const Vector>& x, double u, Rng& rng) {
    return p.g(x, u) + sample_noise(p, rng);
}

// ---------------------------------------------------------------------------
// Excitation and training data
// ---------------------------------------------------------------------------

enum class ExcitationKind { UniformRandomInput, GridSweep, MultilevelPRBS };

struct ExcitationPolicy {
    ExcitationKind kind = ExcitationKind::UniformRandomInput;
    Interval u_box{-1.0, 1.0};
    std::vector<Interval> x_box{{-1.0, 1.0}};
    std::size_t length = 1000;
    std::uint64_t seed = 1;
    std::size_t grid_points = 8;  // cells per axis for GridSweep
    std::size_t levels = 5;       // input levels for MultilevelPRBS
    std::size_t max_hold = 10;    // longest hold for MultilevelPRBS
};

inline bool in_box(const Eigen::Ref<const Vector>& x, const std::vector<Interval>& box) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!box[static_cast<std::size_t>(i)].contains(x[i])) return false;
    return true;
}

struct GeneratedData {
    Dataset data;
    std::vector<long> resets;               // t of rows preceded by a state re-draw
    std::vector<std::size_t> cell_visits;   // GridSweep coverage, one counter per cell
    std::size_t skipped = 0;                // GridSweep cells skipped after repeated exits
};

/**
 * Open-loop rollout under the excitation policy, rows t = -N .. -1. When a
 * transition leaves X it is dropped and the state is re-drawn uniformly in
 * X, so every emitted row stays inside X x X and no row spans a reset.
 */
inline GeneratedData generate_training_data(const PlantModel& p, const ExcitationPolicy& pol) {
    if (pol.length < 1) throw Error("excitation: length must be >= 1");
    if (static_cast<int>(pol.x_box.size()) != p.n_x) throw Error("excitation: state box dimension mismatch");
    if (pol.u_box.empty()) throw Error("excitation: empty input box");

    std::mt19937_64 rng(pol.seed);
    std::mt19937_64 noise_rng(p.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto draw = [&](const Interval& iv) { return iv.lo + (iv.hi - iv.lo) * unit(rng); };
    const auto draw_state = [&] {
        Vector x(p.n_x);
        for (int i = 0; i < p.n_x; ++i) x[i] = draw(pol.x_box[static_cast<std::size_t>(i)]);
        return x;
    };

    GeneratedData out;
    out.data.reserve(pol.length);
    const long n = static_cast<long>(pol.length);
    constexpr int kMaxRetries = 1000;

    if (pol.kind == ExcitationKind::GridSweep) {
        const std::size_t g = std::max<std::size_t>(pol.grid_points, 1);
        const std::size_t axes = static_cast<std::size_t>(p.n_x) + 1;
        std::size_t cells = 1;
        for (std::size_t a = 0; a < axes; ++a) cells *= g;
        out.cell_visits.assign(cells, 0);
        const auto cell_range = [&](const Interval& iv, std::size_t k) {
            const double w = (iv.hi - iv.lo) / static_cast<double>(g);
            return Interval{iv.lo + w * static_cast<double>(k), iv.lo + w * static_cast<double>(k + 1)};
        };
        std::size_t cell = 0;
        std::size_t misses = 0;
        while (out.data.size() < pol.length) {
            std::size_t rest = cell % cells;
            const double u = draw(cell_range(pol.u_box, rest % g));
            rest /= g;
            Vector x(p.n_x);
            for (int i = 0; i < p.n_x; ++i, rest /= g) x[i] = draw(cell_range(pol.x_box[static_cast<std::size_t>(i)], rest % g));
            const Vector xn = plant_step(p, x, u, noise_rng);
            bool accepted = in_box(xn, pol.x_box);
            if (!accepted && ++misses < 100) continue;
            if (accepted) {
                const long t = -n + static_cast<long>(out.data.size());
                out.data.push_back({u, make_regressor(x, xn), t});
                ++out.cell_visits[cell % cells];
            } else {
                ++out.skipped;
            }
            misses = 0;
            ++cell;
            if (out.skipped > 10 * cells) throw Error("excitation: grid sweep cannot stay inside X");
        }
        return out;
    }

    Vector x = draw_state();
    std::size_t hold = 0;
    double level_u = 0.0;
    while (out.data.size() < pol.length) {
        double u = 0.0;
        if (pol.kind == ExcitationKind::UniformRandomInput) {
            u = draw(pol.u_box);
        } else {
            if (hold == 0) {
                const std::size_t levels = std::max<std::size_t>(pol.levels, 2);
                const auto idx = static_cast<std::size_t>(unit(rng) * static_cast<double>(levels));
                level_u = pol.u_box.lo + (pol.u_box.hi - pol.u_box.lo) * static_cast<double>(std::min(idx, levels - 1)) /
                                             static_cast<double>(levels - 1);
                hold = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(std::max<std::size_t>(pol.max_hold, 1)));
                hold = std::min(hold, std::max<std::size_t>(pol.max_hold, 1));
            }
            u = level_u;
            --hold;
        }
        Vector xn = plant_step(p, x, u, noise_rng);
        int retries = 0;
        while (!in_box(xn, pol.x_box)) {
            if (++retries > kMaxRetries) throw Error("excitation: rollout keeps leaving X");
            x = draw_state();
            out.resets.push_back(-n + static_cast<long>(out.data.size()));
            xn = plant_step(p, x, u, noise_rng);
        }
        const long t = -n + static_cast<long>(out.data.size());
        out.data.push_back({u, make_regressor(x, xn), t});
        x = xn;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference signals
// ---------------------------------------------------------------------------

enum class ReferenceKind { Constant, PiecewiseConstant, Sinusoid };

struct ReferenceSpec {
    ReferenceKind kind = ReferenceKind::Constant;
    std::vector<Vector> values;  // Constant: one value; Piecewise: cycled every `period` steps
    Vector amplitude;            // Sinusoid
    Vector offset;               // Sinusoid
    std::size_t period = 100;

    Vector at(long t) const {
        switch (kind) {
            case ReferenceKind::Constant:
                if (values.empty()) throw Error("reference: constant needs a value");
                return values.front();
            case ReferenceKind::PiecewiseConstant: {
                if (values.empty() || period == 0) throw Error("reference: piecewise needs values and a period");
                const auto idx = static_cast<std::size_t>(std::max<long>(t, 0)) / period % values.size();
                return values[idx];
            }
            case ReferenceKind::Sinusoid: {
                if (period == 0) throw Error("reference: sinusoid needs a period");
                const double ph = 2.0 * 3.14159265358979323846 * static_cast<double>(t) / static_cast<double>(period);
                return offset + amplitude * std::sin(ph);
            }
        }
        return {};
    }

    Eigen::Index dim() const {
        if (kind == ReferenceKind::Sinusoid) return amplitude.size();
        return values.empty() ? 0 : values.front().size();
    }
};

/// Projects r radially onto the ball of radius r_bar.
inline Vector clamp_to_ball(const Eigen::Ref<const Vector>& r, double r_bar, Norm nrm) {
    const double n = norm(r, nrm);
    if (n <= r_bar || n == 0.0) return r;
    return r * (r_bar / n);
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

struct TraceRow {
    long t = 0;
    Vector x;
    Vector r;
    double u = 0.0;
    std::size_t dict_size = 0;
    double slab_lo = 0.0;
    double slab_hi = 0.0;
    EstimateSnapshot estimates{};
    double gamma_delta = 0.0;
    double wallclock_us = 0.0;
    double noise_norm = 0.0;       // |e_t|, harness-side only
    bool robust_inequality_ok = true;
};

struct GainCheckReport {
    double sup_x = 0.0;
    double x_bar = 0.0;
    double in_ball_fraction = 0.0;
    std::array<double, 3> lambda_fit{0.0, 0.0, 0.0};  // lambda1, lambda2, beta
    double mean_abs_tracking_error = 0.0;
    double sup_tracking_error = 0.0;
};

struct ClosedLoopResult {
    std::vector<TraceRow> trace;
    GainCheckReport report;
    std::size_t empty_slab_count = 0;
    std::size_t robust_violations = 0;
    std::size_t reference_clamps = 0;
    std::optional<long> first_empty_slab_t;
    std::optional<long> first_ball_exit_t;
    bool aborted = false;
    std::string abort_message;
    std::size_t dict_size_final = 0;

    bool stability_violated() const { return empty_slab_count > 0 || first_ball_exit_t.has_value() || aborted; }
};

/**
 * Nonnegative least squares for y ~ A c with three columns, by enumerating
 * the 8 active sets and keeping the best feasible solution.
 */
inline std::array<double, 3> nnls3(const Eigen::MatrixXd& A, const Vector& y) {
    std::array<double, 3> best{0.0, 0.0, 0.0};
    double best_res = y.squaredNorm();
    for (unsigned mask = 1; mask < 8; ++mask) {
        std::vector<int> cols;
        for (int c = 0; c < 3; ++c)
            if (mask & (1U << c)) cols.push_back(c);
        Eigen::MatrixXd sub(A.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(cols[k]);
        const Vector c = sub.completeOrthogonalDecomposition().solve(y);
        if ((c.array() < 0.0).any() || !c.allFinite()) continue;
        const double res = (sub * c - y).squaredNorm();
        if (res < best_res - 1e-15) {
            best_res = res;
            best = {0.0, 0.0, 0.0};
            for (std::size_t k = 0; k < cols.size(); ++k) best[static_cast<std::size_t>(cols[k])] = c[static_cast<Eigen::Index>(k)];
        }
    }
    return best;
}

/// Fits sup|x| ~ l1 sup|r| + l2 sup|e| + beta over ten growing prefixes of the run.
inline std::array<double, 3> fit_finite_gain(const std::vector<TraceRow>& rows, Norm nrm) {
    if (rows.size() < 2) return {0.0, 0.0, 0.0};
    constexpr int kWindows = 10;
    Eigen::MatrixXd A(kWindows, 3);
    Vector y(kWindows);
    for (int w = 0; w < kWindows; ++w) {
        const std::size_t len = std::max<std::size_t>(1, rows.size() * static_cast<std::size_t>(w + 1) / kWindows);
        double sx = 0.0, sr = 0.0, se = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            sx = std::max(sx, norm(rows[i].x, nrm));
            sr = std::max(sr, norm(rows[i].r, nrm));
            se = std::max(se, rows[i].noise_norm);
        }
        A(w, 0) = sr;
        A(w, 1) = se;
        A(w, 2) = 1.0;
        y[w] = sx;
    }
    return nnls3(A, y);
}

struct ClosedLoopOptions {
    std::size_t horizon = 1000;
    Vector x0;
    double x_bar = std::numeric_limits<double>::infinity();
    bool record_wallclock = false;
};

/**
 * Runs the trained controller against the plant for `horizon` steps.
 * Ball exits are recorded and the run continues; an empty stability slab in
 * strict mode (or a non-finite state) aborts the run.
 */
inline ClosedLoopResult run_closed_loop(const PlantModel& plant, Controller& ctrl, const ReferenceSpec& ref,
                                        const ClosedLoopOptions& opt) {
    if (ctrl.state_dim() != plant.n_x) throw Error("closed loop: plant/controller dimension mismatch");
    if (ref.dim() != plant.n_x) throw Error("closed loop: reference dimension mismatch");
    Vector x = opt.x0.size() == plant.n_x ? opt.x0 : Vector::Zero(plant.n_x);
    std::mt19937_64 noise_rng(plant.seed);
    const Norm nrm = ctrl.config().norm;
    const double r_bar = ctrl.tuning().r_bar;

    ClosedLoopResult res;
    res.trace.reserve(opt.horizon);
    std::size_t in_ball = 0;
    const double ball_tol = 1e-12 * std::max(1.0, opt.x_bar);
    for (std::size_t k = 0; k < opt.horizon; ++k) {
        const long t = static_cast<long>(k);
        const Vector r_next = clamp_to_ball(ref.at(t + 1), r_bar, nrm);
        const auto start = std::chrono::steady_clock::now();
        StepDiagnostics d;
        try {
            d = ctrl.control_step(x, r_next);
        } catch (const EmptySlabError& e) {
            ++res.empty_slab_count;
            if (!res.first_empty_slab_t) res.first_empty_slab_t = t;
            res.aborted = true;
            res.abort_message = e.what();
            break;
        }
        const auto stop = std::chrono::steady_clock::now();

        TraceRow row;
        row.t = t;
        row.x = x;
        row.r = d.reference;
        row.u = d.u;
        row.dict_size = d.dict_size;
        row.slab_lo = d.slab_lo;
        row.slab_hi = d.slab_hi;
        row.estimates = d.estimates;
        row.gamma_delta = d.gamma_delta;
        row.robust_inequality_ok = d.robust_inequality_ok;
        if (opt.record_wallclock)
            row.wallclock_us = std::chrono::duration<double, std::micro>(stop - start).count();
        if (d.reference_clamped) ++res.reference_clamps;
        if (d.slab_empty) {
            ++res.empty_slab_count;
            if (!res.first_empty_slab_t) res.first_empty_slab_t = t;
        }
        if (!d.robust_inequality_ok) ++res.robust_violations;

        const double nx = norm(x, nrm);
        if (nx <= opt.x_bar + ball_tol) ++in_ball;
        else if (!res.first_ball_exit_t) res.first_ball_exit_t = t;

        const Vector e = sample_noise(plant, noise_rng);
        row.noise_norm = norm(e, nrm);
        res.trace.push_back(std::move(row));
        x = plant.g(x, d.u) + e;
        if (!x.allFinite()) {
            res.aborted = true;
            res.abort_message = "state diverged at t = " + std::to_string(t + 1);
            if (!res.first_ball_exit_t) res.first_ball_exit_t = t + 1;
            break;
        }
    }

    GainCheckReport& rep = res.report;
    rep.x_bar = opt.x_bar;
    const std::size_t n = res.trace.size();
    rep.in_ball_fraction = n ? static_cast<double>(in_ball) / static_cast<double>(n) : 0.0;
    for (const auto& row : res.trace) rep.sup_x = std::max(rep.sup_x, norm(row.x, nrm));
    rep.lambda_fit = fit_finite_gain(res.trace, nrm);
    // Tracking error |x_{t+1} - r_{t+1}| over the last quarter of the run.
    if (n >= 2) {
        const std::size_t from = std::min(n - 1, n - std::max<std::size_t>(1, n / 4));
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = from; i + 1 < n; ++i) {
            const double err = norm(res.trace[i + 1].x - res.trace[i].r, nrm);
            sum += err;
            ++cnt;
        }
        rep.mean_abs_tracking_error = cnt ? sum / static_cast<double>(cnt) : 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i)
            rep.sup_tracking_error = std::max(rep.sup_tracking_error, norm(res.trace[i + 1].x - res.trace[i].r, nrm));
    }
    res.dict_size_final = ctrl.dictionary().size();
    return res;
}

// ---------------------------------------------------------------------------
// Ground-truth oracles for built-in plants
// ---------------------------------------------------------------------------

/// Evenly spaced grid with n points over [lo, hi] (n = 1 gives the midpoint).
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = 0.5 * (lo + hi);
        return v;
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

struct GammaOracle {
    double gamma_g = 0.0;
    Vector x_star;  // state attaining the largest input slope
};

/**
 * Brute-force max over a state grid and input pairs of |g(x,u1) - g(x,u2)| / |u1 - u2|.
 * Grids with n and 2n-1 points are nested, so refining that way never lowers the value.
 */
inline GammaOracle gamma_oracle(const PlantModel& p, const Interval& u_box, const std::vector<Interval>& x_box,
                                std::size_t resolution) {
    if (!p.has_closed_form()) throw Error("gamma_oracle: plant has no closed form (unsupported)");
    if (static_cast<int>(x_box.size()) != p.n_x) throw Error("gamma_oracle: state box dimension mismatch");
    if (resolution < 2) throw Error("gamma_oracle: resolution must be >= 2");
    const auto us = linspace(u_box.lo, u_box.hi, resolution);
    std::vector<std::vector<double>> axes;
    for (const auto& iv : x_box) axes.push_back(linspace(iv.lo, iv.hi, resolution));

    GammaOracle best;
    best.x_star = Vector::Zero(p.n_x);
    std::vector<std::size_t> idx(static_cast<std::size_t>(p.n_x), 0);
    std::vector<Vector> gs(us.size());
    for (;;) {
        Vector x(p.n_x);
        for (int i = 0; i < p.n_x; ++i) x[i] = axes[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
        for (std::size_t a = 0; a < us.size(); ++a) gs[a] = p.g(x, us[a]);
        for (std::size_t a = 0; a < us.size(); ++a) {
            for (std::size_t b = a + 1; b < us.size(); ++b) {
                const double q = distance(gs[a], gs[b], p.norm) / std::abs(us[a] - us[b]);
                if (q > best.gamma_g) {
                    best.gamma_g = q;
                    best.x_star = x;
                }
            }
        }
        int i = 0;
        for (; i < p.n_x; ++i) {
            if (++idx[static_cast<std::size_t>(i)] < resolution) break;
            idx[static_cast<std::size_t>(i)] = 0;
        }
        if (i == p.n_x) break;
    }
    return best;
}

/// Exact inverse of the ScalarTanh plant: u with a x + b tanh(u) = x_next (NaN outside the range).
inline double scalar_tanh_inverse(const PlantModel& p, double x, double x_next) {
    if (p.kind != PlantKind::ScalarTanh) throw Error("scalar_tanh_inverse: wrong plant kind");
    const double y = (x_next - p.param("a") * x) / p.param("b");
    return std::abs(y) < 1.0 ? std::atanh(y) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace dinv
