#pragma once

#include "dinv/core.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace dinv {

enum class KernelKind { GaussianRBF };

/// Kernel family and its length scale. Only the Gaussian RBF is supported.
struct KernelSpec {
    KernelKind kind = KernelKind::GaussianRBF;
    double width = 1.0;

    void validate() const {
        if (!(width > 0.0) || !std::isfinite(width)) throw Error("kernel width must be positive and finite");
    }
};

/// exp(-|a-b|_2^2 / (2 width^2)). The kernel always uses the 2-norm.
inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (a.size() != b.size()) throw Error("kernel_eval: dimension mismatch");
    const double d2 = (a - b).squaredNorm();
    return std::exp(-d2 / (2.0 * spec.width * spec.width));
}

/**
 * @brief Kernel dictionary W_t with coherence-based admission.
 *
 * Centers are kept in insertion order so weight indices stay positional
 * across growth. A candidate is admitted only if its coherence with the
 * stored centers does not exceed the threshold; centers are never removed.
 */
class Dictionary {
public:
    Dictionary() = default;
    Dictionary(KernelSpec spec, double threshold) : spec_(spec), threshold_(threshold) {
        spec_.validate();
        if (!(threshold > 0.0 && threshold < 1.0)) throw Error("coherence threshold must lie in (0,1)");
    }

    const KernelSpec& spec() const noexcept { return spec_; }
    double threshold() const noexcept { return threshold_; }
    std::size_t size() const noexcept { return centers_.size(); }
    bool empty() const noexcept { return centers_.empty(); }
    const std::vector<Regressor>& centers() const noexcept { return centers_; }
    const Regressor& center(std::size_t i) const { return centers_.at(i); }

    Vector kernel_vector(const Eigen::Ref<const Vector>& w) const {
        Vector k(static_cast<Eigen::Index>(centers_.size()));
        for (std::size_t i = 0; i < centers_.size(); ++i)
            k[static_cast<Eigen::Index>(i)] = kernel_eval(spec_, w, centers_[i]);
        return k;
    }

    /// Max |kappa(w, c_i)| over the centers; 0 for an empty dictionary.
    double coherence(const Eigen::Ref<const Vector>& w) const {
        double mu = 0.0;
        for (const auto& c : centers_) mu = std::max(mu, std::abs(kernel_eval(spec_, w, c)));
        return mu;
    }

    /// Appends w iff coherence(w) <= threshold. Returns whether it was added.
    bool maybe_add(const Eigen::Ref<const Vector>& w) {
        if (!w.allFinite()) throw Error("dictionary: non-finite regressor");
        if (!centers_.empty() && centers_.front().size() != w.size())
            throw Error("dictionary: regressor dimension mismatch");
        if (coherence(w) > threshold_) return false;
        centers_.emplace_back(w);
        return true;
    }

private:
    KernelSpec spec_{};
    double threshold_ = 0.5;
    std::vector<Regressor> centers_;
};

inline Vector kernel_vector(const Dictionary& dict, const Eigen::Ref<const Vector>& w) { return dict.kernel_vector(w); }

inline double coherence(const Dictionary& dict, const Eigen::Ref<const Vector>& w) { return dict.coherence(w); }

/// Value-returning form of Dictionary::maybe_add.
inline std::pair<Dictionary, bool> maybe_add_center(Dictionary dict, const Eigen::Ref<const Vector>& w) {
    const bool added = dict.maybe_add(w);
    return {std::move(dict), added};
}

}  // namespace dinv
