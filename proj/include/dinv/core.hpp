#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dinv {

using Vector = Eigen::VectorXd;

/// Regressor omega = (state, successor-or-reference), length 2*n_x.
using Regressor = Eigen::VectorXd;

/// Kernel-expansion weights, positional with the dictionary centers.
using WeightVector = Eigen::VectorXd;

/// Raised for violated preconditions and malformed inputs.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a stability slab has lo > hi in strict mode.
class EmptySlabError : public Error {
public:
    EmptySlabError(const std::string& what, double lo, double hi) : Error(what), lo_(lo), hi_(hi) {}
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }

private:
    double lo_;
    double hi_;
};

/// User-selectable vector norm shared by bounds, estimators, tuning and stability checks.
enum class Norm { L2, Linf };

inline double norm(const Eigen::Ref<const Vector>& v, Norm n) {
    if (v.size() == 0) return 0.0;
    return n == Norm::L2 ? v.norm() : v.lpNorm<Eigen::Infinity>();
}

/// Allocation-free distance for hot loops; sizes must already agree.
inline double distance_unchecked(const double* a, const double* b, Eigen::Index n, Norm nrm) {
    double acc = 0.0;
    if (nrm == Norm::L2) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = a[i] - b[i];
            acc += d * d;
        }
        return std::sqrt(acc);
    }
    for (Eigen::Index i = 0; i < n; ++i) acc = std::max(acc, std::abs(a[i] - b[i]));
    return acc;
}

inline double distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b, Norm n) {
    if (a.size() != b.size()) throw Error("distance: dimension mismatch");
    return distance_unchecked(a.data(), b.data(), a.size(), n);
}

inline std::string_view to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

inline Norm parse_norm(std::string_view s) {
    if (s == "l2" || s == "L2") return Norm::L2;
    if (s == "linf" || s == "Linf" || s == "inf") return Norm::Linf;
    throw Error("unknown norm '" + std::string(s) + "' (expected l2 or linf)");
}

inline bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

/// Concatenates state and successor (or reference) into a regressor.
inline Regressor make_regressor(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& next) {
    if (x.size() != next.size()) throw Error("make_regressor: state and successor dimensions differ");
    Regressor w(x.size() + next.size());
    w << x, next;
    return w;
}

/// Closed interval [lo, hi]; may be inverted (lo > hi) when used to report emptiness.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    bool empty() const { return lo > hi; }
    bool contains(double v, double tol = 0.0) const { return v >= lo - tol && v <= hi + tol; }
};

}  // namespace dinv
