#pragma once

#include "dinv/core.hpp"
#include "dinv/setmem.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace dinv {

/// 0.01 * max pairwise |xi_i - xi_j| by default; a tiny positive floor keeps rho > 0.
inline double default_rho(std::span<const Vector> xis, Norm nrm, double fraction = 0.01) {
    double spread = 0.0;
    for (std::size_t i = 0; i < xis.size(); ++i)
        for (std::size_t j = i + 1; j < xis.size(); ++j) spread = std::max(spread, distance(xis[i], xis[j], nrm));
    return std::max(fraction * spread, 1e-12);
}

/**
 * @brief Sliding-window estimate of the bound on o in z = f(xi) + o.
 *
 * For each incoming point the neighbours within rho among the last N_bar
 * points (and the point itself) are collected; half the largest output
 * spread among them is a noise-bound witness. The estimate is the running
 * maximum of the witnesses, so it never decreases.
 */
class NoiseBoundEstimator {
public:
    NoiseBoundEstimator() = default;
    NoiseBoundEstimator(double rho, std::size_t capacity, Norm nrm) : rho_(rho), capacity_(capacity), norm_(nrm) {
        if (!(rho > 0.0)) throw Error("noise estimator: rho must be > 0");
        if (capacity < 1) throw Error("noise estimator: memory horizon must be >= 1");
    }

    double update(const Eigen::Ref<const Vector>& xi, const Eigen::Ref<const Vector>& z) {
        if (!window_.empty() && (window_.front().xi.size() != xi.size() || window_.front().z.size() != z.size()))
            throw Error("noise estimator: dimension mismatch with stored points");
        double eps_z = 0.0;
        for (const auto& p : window_) {
            if (distance(xi, p.xi, norm_) <= rho_) eps_z = std::max(eps_z, 0.5 * distance(z, p.z, norm_));
        }
        last_witness_ = eps_z;
        eps_hat_ = std::max(eps_hat_, eps_z);
        window_.push_back({xi, z});
        if (window_.size() > capacity_) window_.pop_front();
        return eps_hat_;
    }

    double eps_hat() const noexcept { return eps_hat_; }
    double last_witness() const noexcept { return last_witness_; }
    double rho() const noexcept { return rho_; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t window_size() const noexcept { return window_.size(); }

private:
    struct Point {
        Vector xi;
        Vector z;
    };
    double rho_ = 1.0;
    std::size_t capacity_ = 1;
    Norm norm_ = Norm::Linf;
    double eps_hat_ = 0.0;
    double last_witness_ = 0.0;
    std::deque<Point> window_;
};

/**
 * @brief Sliding-window Lipschitz-constant estimate with noise correction.
 *
 * Every pair (i, j) in the window carries a slope
 *   (|z_i - z_j| - 2 eps_hat) / |xi_i - xi_j|   (0 if non-positive or coincident xi),
 * corrected downward whenever the paired noise estimate grows. The running
 * value gamma_current remembers the best slope seen so far together with its
 * pair distance, so the estimate survives eviction of that pair.
 *
 * Pair slopes live in an (N_bar+1)^2 circular table indexed by slot. The
 * maximum over the table is cached and only rescanned after a noise
 * correction or when the maximizing pair leaves the window.
 */
class LipschitzEstimator {
public:
    LipschitzEstimator() = default;
    LipschitzEstimator(std::size_t capacity, Norm nrm)
        : capacity_(capacity), slots_(capacity + 1), norm_(nrm), table_(slots_ * slots_, 0.0) {
        if (capacity < 1) throw Error("lipschitz estimator: memory horizon must be >= 1");
    }

    /// One step. eps_t and eps_prev are the paired noise estimate now and one step earlier.
    double update(const Eigen::Ref<const Vector>& xi, const Eigen::Ref<const Vector>& z, double eps_t,
                  double eps_prev) {
        if (!(eps_t >= eps_prev) || eps_prev < 0.0)
            throw Error("lipschitz estimator: noise estimates must satisfy eps_t >= eps_prev >= 0");
        if (!window_.empty() && (window_.front().xi.size() != xi.size() || window_.front().z.size() != z.size()))
            throw Error("lipschitz estimator: dimension mismatch with stored points");

        // Downward correction of stored slopes and of gamma_current.
        const double grow = eps_t - eps_prev;
        if (grow > 0.0) {
            for (std::size_t b = 1; b < window_.size(); ++b) {
                for (std::size_t a = 0; a < b; ++a) {
                    const double d = distance(window_[a].xi, window_[b].xi, norm_);
                    if (d != 0.0) at(window_[a].slot, window_[b].slot) -= 2.0 * grow / d;
                }
            }
            if (delta_current_ != 0.0) gamma_current_ -= 2.0 * grow / delta_current_;
            best_.reset();
        }

        // Slopes of the new pairs (k, t).
        const std::uint64_t seq = next_seq_++;
        const std::size_t slot = static_cast<std::size_t>(seq % slots_);
        std::optional<PairMax> fresh;
        for (const auto& p : window_) {
            const double d = distance(p.xi, xi, norm_);
            double slope = 0.0;
            if (d != 0.0) {
                const double dz = distance(z, p.z, norm_);
                if (dz > 2.0 * eps_t) slope = (dz - 2.0 * eps_t) / d;
            }
            at(p.slot, slot) = slope;
            PairMax cand{slope, p.seq, seq, d};
            if (!fresh || better(cand, *fresh)) fresh = cand;
        }

        if (!best_ && !window_.empty()) best_ = scan();
        std::optional<PairMax> top = best_;
        if (fresh && (!top || better(*fresh, *top))) top = fresh;

        if (top) {
            if (top->value >= gamma_current_) {
                gamma_hat_ = top->value;
                delta_current_ = top->dist;
            } else {
                gamma_hat_ = gamma_current_;
            }
        } else {
            gamma_hat_ = gamma_current_;
        }
        gamma_current_ = gamma_hat_;
        best_ = top;

        window_.push_back({Vector(xi), Vector(z), seq, slot});
        if (window_.size() > capacity_) {
            const std::uint64_t gone = window_.front().seq;
            window_.pop_front();
            if (best_ && best_->i == gone) best_.reset();
        }
        return estimate();
    }

    /// Estimate clamped at zero; the raw value can go negative after large noise corrections.
    double estimate() const noexcept { return std::max(0.0, gamma_hat_); }
    double gamma_hat_raw() const noexcept { return gamma_hat_; }
    double gamma_current() const noexcept { return gamma_current_; }
    double delta_current() const noexcept { return delta_current_; }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t window_size() const noexcept { return window_.size(); }

    /// Stored slope for the window pair with sequence numbers (i, j), i < j; nullopt if not in window.
    std::optional<double> pair_slope(std::uint64_t i, std::uint64_t j) const {
        const auto find = [&](std::uint64_t s) -> const Entry* {
            for (const auto& e : window_)
                if (e.seq == s) return &e;
            return nullptr;
        };
        const Entry* a = find(i);
        const Entry* b = find(j);
        if (!a || !b || i >= j) return std::nullopt;
        return table_[a->slot * slots_ + b->slot];
    }

private:
    struct Entry {
        Vector xi;
        Vector z;
        std::uint64_t seq;
        std::size_t slot;
    };
    struct PairMax {
        double value;
        std::uint64_t i;
        std::uint64_t j;
        double dist;
    };

    double& at(std::size_t older, std::size_t newer) { return table_[older * slots_ + newer]; }

    // Larger value wins; ties go to the lexicographically lowest (i, j).
    static bool better(const PairMax& a, const PairMax& b) {
        if (a.value != b.value) return a.value > b.value;
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    }

    std::optional<PairMax> scan() const {
        std::optional<PairMax> out;
        for (std::size_t a = 0; a < window_.size(); ++a) {
            for (std::size_t b = a + 1; b < window_.size(); ++b) {
                const double v = table_[window_[a].slot * slots_ + window_[b].slot];
                if (!out || v > out->value)
                    out = PairMax{v, window_[a].seq, window_[b].seq, distance(window_[a].xi, window_[b].xi, norm_)};
            }
        }
        return out;
    }

    std::size_t capacity_ = 1;
    std::size_t slots_ = 2;
    Norm norm_ = Norm::Linf;
    std::vector<double> table_ = std::vector<double>(4, 0.0);
    std::deque<Entry> window_;
    std::optional<PairMax> best_;
    std::uint64_t next_seq_ = 0;
    double gamma_hat_ = 0.0;
    double gamma_current_ = 0.0;
    double delta_current_ = 0.0;
};

/// Point estimates after a given step.
struct EstimateSnapshot {
    double delta_hat = 0.0;       // bound on d in u = f*(omega) + d
    double zeta_hat = 0.0;        // bound on the lumped disturbance in x+ = g'(u) + theta
    double epsilon_hat = 0.0;     // bound on e in x+ = g(x, u) + e
    double gamma_star_hat = 0.0;  // Lipschitz constant of the inverse
    double gamma_g_hat = 0.0;     // Lipschitz constant of g in u
};

struct EstimatorConfig {
    std::size_t memory = 500;  // N_bar
    double rho_fraction = 0.01;
    Norm norm = Norm::Linf;
};

/**
 * @brief The four coupled estimators driven by the measured stream.
 *
 * (omega, u) feeds the inverse-noise and gamma* estimators; (u, x+) feeds
 * the lumped-disturbance and gamma_g estimators. A fifth noise estimator on
 * ((x, u), x+) yields the state-noise bound; it only runs while seeding.
 */
class EstimatorBundle {
public:
    EstimatorBundle() = default;
    EstimatorBundle(double rho_delta, double rho_zeta, double rho_epsilon, const EstimatorConfig& cfg)
        : delta_est_(rho_delta, cfg.memory, cfg.norm),
          zeta_est_(rho_zeta, cfg.memory, cfg.norm),
          epsilon_est_(rho_epsilon, cfg.memory, cfg.norm),
          gamma_star_est_(cfg.memory, cfg.norm),
          gamma_g_est_(cfg.memory, cfg.norm) {}

    /// Consumes a completed measurement (u_j, omega_j = (x_j, x_{j+1})).
    void ingest(const DataPoint& dp) {
        const double prev = delta_est_.eps_hat();
        const double now = delta_est_.update(dp.omega, Vector::Constant(1, dp.u));
        gamma_star_est_.update(dp.omega, Vector::Constant(1, dp.u), now, prev);
        gamma_g_pipeline(dp.u, dp.successor());
    }

    /// Lumped-disturbance bound, then gamma_g, from (u_t, x_{t+1}).
    void gamma_g_pipeline(double u, const Eigen::Ref<const Vector>& x_next) {
        const Vector xi = Vector::Constant(1, u);
        const double prev = zeta_est_.eps_hat();
        const double now = zeta_est_.update(xi, x_next);
        gamma_g_est_.update(xi, x_next, now, prev);
    }

    void ingest_state_noise(const DataPoint& dp) {
        Vector xi(dp.state_dim() + 1);
        xi << dp.state(), dp.u;
        epsilon_est_.update(xi, dp.successor());
    }

    EstimateSnapshot snapshot() const {
        return {delta_est_.eps_hat(), zeta_est_.eps_hat(), epsilon_est_.eps_hat(), gamma_star_est_.estimate(),
                gamma_g_est_.estimate()};
    }

    const NoiseBoundEstimator& delta_estimator() const noexcept { return delta_est_; }
    const NoiseBoundEstimator& zeta_estimator() const noexcept { return zeta_est_; }
    const NoiseBoundEstimator& epsilon_estimator() const noexcept { return epsilon_est_; }
    const LipschitzEstimator& gamma_star_estimator() const noexcept { return gamma_star_est_; }
    const LipschitzEstimator& gamma_g_estimator() const noexcept { return gamma_g_est_; }

private:
    NoiseBoundEstimator delta_est_;
    NoiseBoundEstimator zeta_est_;
    NoiseBoundEstimator epsilon_est_;
    LipschitzEstimator gamma_star_est_;
    LipschitzEstimator gamma_g_est_;
};

struct SeededEstimators {
    EstimatorBundle bundle;
    EstimateSnapshot seed;  // estimates at t = -1
    double rho_delta = 0.0;
    double rho_zeta = 0.0;
    double rho_epsilon = 0.0;
};

/// Runs all pipelines over the training data in time order; rho is frozen from the data spread.
inline SeededEstimators seed_from_training(const Dataset& data, const EstimatorConfig& cfg) {
    if (data.empty()) throw Error("seed_from_training: empty training data");
    std::vector<Vector> omegas, inputs, state_inputs;
    omegas.reserve(data.size());
    inputs.reserve(data.size());
    state_inputs.reserve(data.size());
    for (const auto& dp : data) {
        omegas.push_back(dp.omega);
        inputs.push_back(Vector::Constant(1, dp.u));
        Vector xu(dp.state_dim() + 1);
        xu << dp.state(), dp.u;
        state_inputs.push_back(std::move(xu));
    }
    SeededEstimators out;
    out.rho_delta = default_rho(omegas, cfg.norm, cfg.rho_fraction);
    out.rho_zeta = default_rho(inputs, cfg.norm, cfg.rho_fraction);
    out.rho_epsilon = default_rho(state_inputs, cfg.norm, cfg.rho_fraction);
    out.bundle = EstimatorBundle(out.rho_delta, out.rho_zeta, out.rho_epsilon, cfg);
    for (const auto& dp : data) {
        out.bundle.ingest(dp);
        out.bundle.ingest_state_noise(dp);
    }
    out.seed = out.bundle.snapshot();
    return out;
}

}  // namespace dinv
