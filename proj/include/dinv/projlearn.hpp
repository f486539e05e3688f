#pragma once

#include "dinv/core.hpp"
#include "dinv/kernel_dict.hpp"
#include "dinv/setmem.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace dinv {

/// Membership tolerance on the scalar a^T k.
inline constexpr double kSlabTolerance = 1e-9;

/// Hyperslab {a : lo <= a^T k <= hi}.
struct Slab {
    Vector k;
    double lo = 0.0;
    double hi = 0.0;

    bool empty() const { return lo > hi; }
    bool contains(const Eigen::Ref<const Vector>& a, double tol = kSlabTolerance) const {
        const double v = a.dot(k);
        return v >= lo - tol && v <= hi + tol;
    }
};

/// Zero-pads a to length n. The dictionary never shrinks, so n < size is an error.
inline WeightVector extend_weights(const Eigen::Ref<const WeightVector>& a, Eigen::Index n) {
    if (n < a.size()) throw Error("extend_weights: target length smaller than current weights");
    WeightVector out = WeightVector::Zero(n);
    out.head(a.size()) = a;
    return out;
}

/// Strip |a^T k(omega_j) - u_j| <= delta_eff.
inline Slab build_measurement_slab(const DataPoint& dp, const Dictionary& dict, double delta_eff) {
    if (!(delta_eff >= 0.0)) throw Error("measurement slab: delta must be >= 0");
    return Slab{dict.kernel_vector(dp.omega), dp.u - delta_eff, dp.u + delta_eff};
}

/**
 * Stability strip at omega+ = (x_t, r_{t+1}):
 *   hi_f - gd |x_t| - sigma <= a^T k <= lo_f + gd |x_t| + sigma,
 * with (lo_f, hi_f) the set-membership bounds at omega+. The slab may come
 * out empty; callers inspect Slab::empty().
 */
inline Slab build_stability_slab(const Eigen::Ref<const Vector>& omega_plus, const Eigen::Ref<const Vector>& x,
                                 double gamma_delta, double sigma, Interval bounds, const Dictionary& dict,
                                 Norm nrm) {
    if (!(gamma_delta >= 0.0) || !(sigma >= 0.0)) throw Error("stability slab: gamma_delta and sigma must be >= 0");
    const double margin = gamma_delta * norm(x, nrm) + sigma;
    return Slab{dict.kernel_vector(omega_plus), bounds.hi - margin, bounds.lo + margin};
}

/// Euclidean projection onto a slab (closed form).
inline WeightVector project_onto_slab(const Eigen::Ref<const WeightVector>& a, const Slab& s) {
    if (a.size() != s.k.size()) throw Error("project_onto_slab: dimension mismatch");
    if (s.empty()) throw EmptySlabError("project_onto_slab: empty slab", s.lo, s.hi);
    const double v = a.dot(s.k);
    if (v >= s.lo && v <= s.hi) return a;
    const double kk = s.k.squaredNorm();
    if (kk == 0.0) throw Error("project_onto_slab: zero direction with infeasible point");
    const double target = v > s.hi ? s.hi : s.lo;
    return a - ((v - target) / kk) * s.k;
}

/**
 * Two-stage update: average the projections onto the violated recent
 * measurement slabs (uniform weights 1/card(I)), then project onto the
 * stability slab.
 */
inline WeightVector apsm_update(const Eigen::Ref<const WeightVector>& a_plus, std::span<const Slab> recent,
                                const Slab& stability) {
    if (stability.empty()) throw EmptySlabError("apsm_update: empty stability slab", stability.lo, stability.hi);
    WeightVector step = WeightVector::Zero(a_plus.size());
    std::size_t violated = 0;
    for (const auto& s : recent) {
        if (s.contains(a_plus)) continue;
        step += project_onto_slab(a_plus, s) - a_plus;
        ++violated;
    }
    WeightVector mid = a_plus;
    if (violated > 0) mid += step / static_cast<double>(violated);
    return project_onto_slab(mid, stability);
}

}  // namespace dinv
