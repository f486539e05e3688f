#pragma once

#include "dinv/core.hpp"
#include "dinv/estimators.hpp"
#include "dinv/kernel_dict.hpp"
#include "dinv/projlearn.hpp"
#include "dinv/setmem.hpp"
#include "dinv/tuning.hpp"

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dinv {

enum class Mode { Static, Adaptive };

/// What to do when the stability slab comes out empty.
enum class EmptySlabPolicy {
    Error,     // throw EmptySlabError (default)
    Midpoint,  // project onto the hyperplane a^T k = (lo + hi) / 2
};

inline std::string_view to_string(Mode m) { return m == Mode::Static ? "static" : "adaptive"; }

inline Mode parse_mode(std::string_view s) {
    if (s == "static") return Mode::Static;
    if (s == "adaptive") return Mode::Adaptive;
    throw Error("unknown mode '" + std::string(s) + "' (expected static or adaptive)");
}

struct ControllerConfig {
    KernelSpec kernel{};
    Mode mode = Mode::Static;
    EmptySlabPolicy on_empty = EmptySlabPolicy::Error;
    Norm norm = Norm::Linf;
};

/// Per-step record of what the controller did.
struct StepDiagnostics {
    long t = 0;
    double u = 0.0;
    Vector reference;             // after clamping to B_rbar
    bool reference_clamped = false;
    double slab_lo = 0.0;
    double slab_hi = 0.0;
    bool slab_empty = false;
    bool fallback_used = false;
    bool robust_inequality_ok = true;  // u inside [slab_lo, slab_hi]
    double norm_x = 0.0;
    std::size_t dict_size = 0;
    std::size_t centers_added = 0;
    double delta_eff = 0.0;
    double gamma_delta = 0.0;
    EstimateSnapshot estimates{};
};

/**
 * @brief Online direct inverse controller.
 *
 * Training rows (t < 0) only shape the weights; control steps (t >= 0) also
 * return the input u_t = a_t^T K(omega+_t, W_t). Each step runs in a fixed
 * order: ingest the completed measurement, update estimators (adaptive
 * mode), grow the dictionary, zero-pad the weights, build slabs, project,
 * and emit the output.
 */
class Controller {
public:
    Controller(ControllerConfig cfg, Tuning tuning, std::shared_ptr<const Dataset> training,
               std::optional<SeededEstimators> estimators = std::nullopt)
        : cfg_(cfg),
          tuning_(tuning),
          data_(std::move(training)),
          dict_(cfg.kernel, tuning.mu_bar),
          oracle_(inflated_oracle(data_, tuning.delta_hat, tuning.c_delta, tuning.gamma_star_hat,
                                  tuning.c_gamma_star, cfg.norm)),
          gamma_delta_(tuning.gamma_delta) {
        if (tuning.q < 1) throw Error("controller: q must be >= 1");
        if (cfg_.mode == Mode::Adaptive) {
            if (!estimators) throw Error("controller: adaptive mode needs seeded estimators");
            est_ = std::move(estimators->bundle);
            seed_ = estimators->seed;
        } else {
            seed_ = EstimateSnapshot{tuning.delta_hat, tuning.zeta_hat, tuning.epsilon_hat, tuning.gamma_star_hat,
                                     tuning.gamma_g_hat};
        }
        t_ = data_->front().t;
    }

    /// Replays the whole training set in time order.
    void train() {
        for (const auto& dp : *data_) training_step(dp);
    }

    void training_step(const DataPoint& dp) {
        if (dp.t >= 0) throw Error("training_step: t must be negative");
        if (last_training_t_ && dp.t <= *last_training_t_)
            throw Error("training_step: out-of-order timestamp " + std::to_string(dp.t));
        if (dp.omega.size() != data_->front().omega.size()) throw Error("training_step: regressor dimension mismatch");
        t_ = dp.t;
        const double delta_eff = cfg_.mode == Mode::Adaptive ? seed_.delta_hat : tuning_.delta();
        step(dp.omega, dp.state(), delta_eff, gamma_delta_, oracle_);
        history_.push_back(dp);
        if (history_.size() > tuning_.q) history_.pop_front();
        prev_omega_ = dp.omega;
        last_training_t_ = dp.t;
        t_ = dp.t + 1;
    }

    /// One closed-loop step at time t >= 0 with measured x_t and desired r_{t+1}.
    StepDiagnostics control_step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& r_next) {
        const Eigen::Index nx = state_dim();
        if (x.size() != nx || r_next.size() != nx) throw Error("control_step: state/reference dimension mismatch");
        if (t_ < 0) t_ = 0;

        StepDiagnostics d;
        d.t = t_;
        d.reference = r_next;
        const double nr = norm(r_next, cfg_.norm);
        if (nr > tuning_.r_bar) {
            d.reference *= tuning_.r_bar / nr;
            d.reference_clamped = true;
        }

        if (pending_) {
            DataPoint done{pending_->u, make_regressor(pending_->x, x), t_ - 1};
            if (cfg_.mode == Mode::Adaptive) est_.ingest(done);
            prev_omega_ = done.omega;
            history_.push_back(std::move(done));
            if (history_.size() > tuning_.q) history_.pop_front();
        }

        double delta_eff = tuning_.delta();
        d.estimates = seed_;
        if (cfg_.mode == Mode::Adaptive) {
            const EstimateSnapshot now = est_.snapshot();
            d.estimates = now;
            delta_eff = now.delta_hat;
            gamma_delta_ = select_gamma_delta(now.gamma_g_hat, tuning_.c_gamma_g, tuning_.lambda2_star,
                                              tuning_.gamma_delta_bar, tuning_.fraction);
            const double g = std::max(0.0, timevarying_gamma(now.gamma_star_hat, seed_.gamma_star_hat,
                                                             tuning_.c_gamma_star));
            active_oracle_ = oracle_.with(oracle_.delta(), g);
        }
        const BoundsOracle& oracle = active_oracle_ ? *active_oracle_ : oracle_;

        const Regressor omega_plus = make_regressor(x, d.reference);
        const StepOutcome out = step(omega_plus, x, delta_eff, gamma_delta_, oracle);

        d.u = weights_.dot(dict_.kernel_vector(omega_plus));
        d.slab_lo = out.stability.lo;
        d.slab_hi = out.stability.hi;
        d.slab_empty = out.stability.empty();
        d.fallback_used = out.fallback;
        const double tol = 1e-9 * std::max({1.0, std::abs(d.slab_lo), std::abs(d.slab_hi)});
        d.robust_inequality_ok = !d.slab_empty && d.u >= d.slab_lo - tol && d.u <= d.slab_hi + tol;
        d.norm_x = norm(x, cfg_.norm);
        d.dict_size = dict_.size();
        d.centers_added = out.added;
        d.delta_eff = delta_eff;
        d.gamma_delta = gamma_delta_;

        pending_ = Pending{Vector(x), d.u};
        ++t_;
        return d;
    }

    const Dictionary& dictionary() const noexcept { return dict_; }
    const WeightVector& weights() const noexcept { return weights_; }
    const Tuning& tuning() const noexcept { return tuning_; }
    const ControllerConfig& config() const noexcept { return cfg_; }
    const BoundsOracle& seed_oracle() const noexcept { return oracle_; }
    const EstimatorBundle& estimators() const noexcept { return est_; }
    const std::deque<DataPoint>& history() const noexcept { return history_; }
    long clock() const noexcept { return t_; }
    double gamma_delta() const noexcept { return gamma_delta_; }
    Eigen::Index state_dim() const { return data_->front().state_dim(); }

    /// Current approximate inverse f_t(omega).
    double evaluate(const Eigen::Ref<const Vector>& omega) const { return weights_.dot(dict_.kernel_vector(omega)); }

private:
    struct Pending {
        Vector x;
        double u;
    };
    struct StepOutcome {
        Slab stability;
        bool fallback = false;
        std::size_t added = 0;
    };

    // Steps 2-3 of the loop. Dictionary, weights are committed only on success.
    StepOutcome step(const Regressor& omega_plus, const Eigen::Ref<const Vector>& x, double delta_eff,
                     double gamma_delta, const BoundsOracle& oracle) {
        Dictionary dict = dict_;
        StepOutcome out;
        out.added += dict.maybe_add(omega_plus) ? 1 : 0;
        if (prev_omega_) out.added += dict.maybe_add(*prev_omega_) ? 1 : 0;
        const WeightVector a_plus = extend_weights(weights_, static_cast<Eigen::Index>(dict.size()));

        std::vector<Slab> recent;
        recent.reserve(history_.size());
        for (const auto& dp : history_) recent.push_back(build_measurement_slab(dp, dict, delta_eff));

        out.stability =
            build_stability_slab(omega_plus, x, gamma_delta, tuning_.sigma, oracle.bounds(omega_plus), dict, cfg_.norm);
        Slab target = out.stability;
        if (target.empty()) {
            if (cfg_.on_empty == EmptySlabPolicy::Error)
                throw EmptySlabError("empty stability slab at t = " + std::to_string(t_) + " (lo " +
                                         format_double(target.lo) + " > hi " + format_double(target.hi) + ")",
                                     target.lo, target.hi);
            const double mid = 0.5 * (target.lo + target.hi);
            target.lo = target.hi = mid;
            out.fallback = true;
        }
        weights_ = apsm_update(a_plus, recent, target);
        dict_ = std::move(dict);
        return out;
    }

    ControllerConfig cfg_;
    Tuning tuning_;
    std::shared_ptr<const Dataset> data_;
    Dictionary dict_;
    WeightVector weights_ = WeightVector::Zero(0);
    BoundsOracle oracle_;
    std::optional<BoundsOracle> active_oracle_;
    EstimatorBundle est_;
    EstimateSnapshot seed_{};
    std::deque<DataPoint> history_;
    std::optional<Regressor> prev_omega_;
    std::optional<Pending> pending_;
    std::optional<long> last_training_t_;
    long t_ = 0;
    double gamma_delta_ = 0.0;
};

}  // namespace dinv
