#pragma once

#include "dinv/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dinv {

/// One measured pair (u_j, omega_j) with its time index.
struct DataPoint {
    double u = 0.0;
    Regressor omega;
    long t = 0;

    Eigen::Index state_dim() const { return omega.size() / 2; }
    Vector state() const { return omega.head(state_dim()); }
    Vector successor() const { return omega.tail(state_dim()); }
};

using Dataset = std::vector<DataPoint>;

/**
 * Set-membership bounds on any inverse consistent with the data:
 *   hi(w) = min_k (u_k + delta + gamma |w - w_k|)
 *   lo(w) = max_k (u_k - delta - gamma |w - w_k|)
 * The data are shared, so oracles with different (delta, gamma) are cheap.
 */
class BoundsOracle {
public:
    BoundsOracle(std::shared_ptr<const Dataset> data, double delta, double gamma, Norm norm)
        : data_(std::move(data)), delta_(delta), gamma_(gamma), norm_(norm) {
        if (!data_ || data_->empty()) throw Error("bounds oracle: empty training data");
        if (!(delta >= 0.0) || !(gamma >= 0.0)) throw Error("bounds oracle: delta and gamma must be >= 0");
    }

    const Dataset& data() const noexcept { return *data_; }
    std::shared_ptr<const Dataset> shared_data() const noexcept { return data_; }
    double delta() const noexcept { return delta_; }
    double gamma() const noexcept { return gamma_; }
    Norm norm() const noexcept { return norm_; }
    Eigen::Index regressor_dim() const { return data_->front().omega.size(); }

    BoundsOracle with(double delta, double gamma) const { return BoundsOracle(data_, delta, gamma, norm_); }

    double upper(const Eigen::Ref<const Vector>& w) const { return bounds(w).hi; }
    double lower(const Eigen::Ref<const Vector>& w) const { return bounds(w).lo; }

    /// Both bounds in one scan over the data.
    Interval bounds(const Eigen::Ref<const Vector>& w) const {
        if (w.size() != regressor_dim()) throw Error("bounds oracle: regressor dimension mismatch");
        double hi = std::numeric_limits<double>::infinity();
        double lo = -std::numeric_limits<double>::infinity();
        const Eigen::Index n = w.size();
        for (const auto& dp : *data_) {
            const double spread = delta_ + gamma_ * distance_unchecked(w.data(), dp.omega.data(), n, norm_);
            hi = std::min(hi, dp.u + spread);
            lo = std::max(lo, dp.u - spread);
        }
        return {lo, hi};
    }

    double gap(const Eigen::Ref<const Vector>& w) const { return bounds(w).width(); }

private:
    std::shared_ptr<const Dataset> data_;
    double delta_;
    double gamma_;
    Norm norm_;
};

inline double upper_bound(const BoundsOracle& o, const Eigen::Ref<const Vector>& w) { return o.upper(w); }
inline double lower_bound(const BoundsOracle& o, const Eigen::Ref<const Vector>& w) { return o.lower(w); }

/// Bounds with inflated estimates: delta = delta_hat + c_delta, gamma = gamma_hat + c_gamma.
inline BoundsOracle inflated_oracle(std::shared_ptr<const Dataset> data, double delta_hat, double c_delta,
                                    double gamma_hat, double c_gamma, Norm norm) {
    if (c_delta < 0.0 || c_gamma < 0.0) throw Error("inflation constants must be >= 0");
    return BoundsOracle(std::move(data), delta_hat + c_delta, gamma_hat + c_gamma, norm);
}

inline Interval inflated_bounds(std::shared_ptr<const Dataset> data, double delta_hat, double c_delta,
                                double gamma_hat, double c_gamma, Norm norm, const Eigen::Ref<const Vector>& w) {
    return inflated_oracle(std::move(data), delta_hat, c_delta, gamma_hat, c_gamma, norm).bounds(w);
}

/// Lipschitz surrogate of the time-varying bounds: min of current and seeded inflated estimates.
inline double timevarying_gamma(double gamma_hat_t, double gamma_hat_seed, double c_gamma) {
    return std::min(gamma_hat_t + c_gamma, gamma_hat_seed + c_gamma);
}

inline Interval timevarying_bounds(std::shared_ptr<const Dataset> data, double delta_hat_seed, double c_delta,
                                   double gamma_hat_t, double gamma_hat_seed, double c_gamma, Norm norm,
                                   const Eigen::Ref<const Vector>& w) {
    if (c_delta < 0.0 || c_gamma < 0.0) throw Error("inflation constants must be >= 0");
    const double g = std::max(0.0, timevarying_gamma(gamma_hat_t, gamma_hat_seed, c_gamma));
    return BoundsOracle(std::move(data), delta_hat_seed + c_delta, g, norm).bounds(w);
}

namespace detail {

// Uniform sample from the norm ball of given radius in R^n.
template <class Rng>
Vector sample_ball(Rng& rng, Eigen::Index n, double radius, Norm norm) {
    Vector v(n);
    if (norm == Norm::Linf) {
        std::uniform_real_distribution<double> uni(-1.0, 1.0);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = radius * uni(rng);
        return v;
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
    const double len = v.norm();
    const double scale = radius * std::pow(uni(rng), 1.0 / static_cast<double>(n));
    if (len > 0.0) v *= scale / len;
    return v;
}

}  // namespace detail

/// Result of the sampled supremum of hi - lo over B_xbar x B_rbar.
struct D0Estimate {
    double value = 0.0;
    Regressor argmax;
    std::size_t points = 0;
};

/**
 * Seeded Monte-Carlo estimate of sup (hi - lo) over omega = (x, r) with
 * |x| <= x_bar and |r| <= r_bar. Deterministic anchors are added: every
 * training regressor inside the set, the origin, and (for the infinity
 * norm) the box vertices. Sample i depends only on (seed, i), so a larger
 * sample count never lowers the estimate.
 */
inline D0Estimate estimate_D0_detailed(const BoundsOracle& o, double x_bar, double r_bar, std::size_t samples,
                                       std::uint64_t seed) {
    if (x_bar < 0.0 || r_bar < 0.0 || !std::isfinite(x_bar) || !std::isfinite(r_bar))
        throw Error("estimate_D0: radii must be finite and >= 0");
    if (samples < 1) throw Error("estimate_D0: need at least one sample");
    const Eigen::Index nx = o.regressor_dim() / 2;
    const Norm nrm = o.norm();

    D0Estimate best;
    best.value = -std::numeric_limits<double>::infinity();
    auto consider = [&](const Regressor& w) {
        const double g = o.gap(w);
        ++best.points;
        if (g > best.value) {
            best.value = g;
            best.argmax = w;
        }
    };

    consider(Regressor::Zero(2 * nx));
    const double slack = 1e-12;
    for (const auto& dp : o.data()) {
        if (norm(dp.omega.head(nx), nrm) <= x_bar + slack && norm(dp.omega.tail(nx), nrm) <= r_bar + slack)
            consider(dp.omega);
    }
    if (nrm == Norm::Linf && 2 * nx <= 16) {
        const std::uint64_t corners = std::uint64_t{1} << (2 * nx);
        for (std::uint64_t m = 0; m < corners; ++m) {
            Regressor w(2 * nx);
            for (Eigen::Index i = 0; i < 2 * nx; ++i) {
                const double rad = i < nx ? x_bar : r_bar;
                w[i] = (m >> i) & 1U ? rad : -rad;
            }
            consider(w);
        }
    }

    std::mt19937_64 rng(seed);
    for (std::size_t s = 0; s < samples; ++s) {
        Regressor w(2 * nx);
        w.head(nx) = detail::sample_ball(rng, nx, x_bar, nrm);
        w.tail(nx) = detail::sample_ball(rng, nx, r_bar, nrm);
        consider(w);
    }
    return best;
}

inline double estimate_D0(const BoundsOracle& o, double x_bar, double r_bar, std::size_t samples,
                          std::uint64_t seed) {
    return estimate_D0_detailed(o, x_bar, r_bar, samples, seed).value;
}

// ---------------------------------------------------------------------------
// Training data CSV: t,u,x_1..x_n,x_next_1..x_next_n
// ---------------------------------------------------------------------------

inline std::string training_csv_header(Eigen::Index nx) {
    std::string h = "t,u";
    for (Eigen::Index i = 1; i <= nx; ++i) h += ",x_" + std::to_string(i);
    for (Eigen::Index i = 1; i <= nx; ++i) h += ",x_next_" + std::to_string(i);
    return h;
}

/// Shortest text that round-trips the double exactly.
inline std::string format_double(double v) {
    char buf[40];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline void write_training_csv(std::ostream& os, const Dataset& data) {
    if (data.empty()) throw Error("write_training_csv: empty dataset");
    const Eigen::Index nx = data.front().state_dim();
    os << training_csv_header(nx) << '\n';
    for (const auto& dp : data) {
        os << dp.t << ',' << format_double(dp.u);
        for (Eigen::Index i = 0; i < 2 * nx; ++i) os << ',' << format_double(dp.omega[i]);
        os << '\n';
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/**
 * Parses a training CSV. The header must name t, u, x_1..x_n, x_next_1..x_next_n;
 * t must be strictly increasing and end at -1. Errors name the offending row.
 */
inline Dataset read_training_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error("training CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    if (header.size() < 4 || (header.size() - 2) % 2 != 0) throw Error("training CSV: malformed header");
    const Eigen::Index nx = static_cast<Eigen::Index>((header.size() - 2) / 2);
    if (line != training_csv_header(nx))
        throw Error("training CSV: header must be '" + training_csv_header(nx) + "'");

    Dataset data;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw Error("training CSV row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                        " columns, got " + std::to_string(cells.size()));
        auto parse = [&](const std::string& s) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != s.size() || !std::isfinite(v))
                throw Error("training CSV row " + std::to_string(row) + ": bad number '" + s + "'");
            return v;
        };
        DataPoint dp;
        const double tv = parse(cells[0]);
        if (tv != std::floor(tv)) throw Error("training CSV row " + std::to_string(row) + ": t must be an integer");
        dp.t = static_cast<long>(tv);
        dp.u = parse(cells[1]);
        dp.omega.resize(2 * nx);
        for (Eigen::Index i = 0; i < 2 * nx; ++i) dp.omega[i] = parse(cells[static_cast<std::size_t>(2 + i)]);
        if (!data.empty() && dp.t <= data.back().t)
            throw Error("training CSV row " + std::to_string(row) + ": t not strictly increasing");
        data.push_back(std::move(dp));
    }
    if (data.empty()) throw Error("training CSV: no data rows");
    if (data.back().t != -1) throw Error("training CSV: last row must have t = -1");
    return data;
}

inline Dataset read_training_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open training data '" + path + "'");
    return read_training_csv(f);
}

}  // namespace dinv
