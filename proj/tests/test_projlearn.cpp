#include "dinv/projlearn.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dinv;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out[i++] = d;
    return out;
}

Slab random_slab(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> g(0.0, 1.0);
    Slab s;
    s.k = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) s.k[i] = g(rng);
    const double c = g(rng), w = std::abs(g(rng));
    s.lo = c - w;
    s.hi = c + w;
    return s;
}

}  // namespace

TEST(ExtendWeights, ZeroPads) {
    const Vector a = vec({1.5, -2.0});
    EXPECT_EQ(extend_weights(a, 2), a);
    EXPECT_EQ(extend_weights(a, 4), vec({1.5, -2.0, 0.0, 0.0}));
    EXPECT_THROW(extend_weights(a, 1), Error);
}

TEST(ExtendWeights, PreservesFunctionValues) {
    Dictionary d({KernelKind::GaussianRBF, 0.8}, 0.9);
    d.maybe_add(vec({0, 0}));
    d.maybe_add(vec({1, 1}));
    const Vector a = vec({0.7, -0.3});
    const Vector w = vec({0.2, 0.4});
    const double before = a.dot(d.kernel_vector(w));
    d.maybe_add(vec({-2, 1}));
    EXPECT_DOUBLE_EQ(extend_weights(a, 3).dot(d.kernel_vector(w)), before);
}

TEST(MeasurementSlab, Faces) {
    Dictionary d({}, 0.9);
    d.maybe_add(vec({0, 0}));
    const DataPoint dp{1.0, vec({0, 0}), -1};
    const Slab s = build_measurement_slab(dp, d, 0.2);
    EXPECT_DOUBLE_EQ(s.lo, 0.8);
    EXPECT_DOUBLE_EQ(s.hi, 1.2);
    EXPECT_EQ(s.k, vec({1.0}));
    const Slab z = build_measurement_slab(dp, d, 0.0);
    EXPECT_EQ(z.lo, z.hi);
    EXPECT_TRUE(z.contains(vec({1.0})));
    EXPECT_THROW(build_measurement_slab(dp, d, -0.1), Error);
}

TEST(StabilitySlab, ArithmeticExample) {
    Dictionary d({}, 0.9);
    d.maybe_add(vec({0, 0}));
    Vector x = vec({5.0});
    const Slab s = build_stability_slab(vec({0, 0}), x, 0.1, 0.6, Interval{-1.0, 1.0}, d, Norm::Linf);
    EXPECT_NEAR(s.lo, -0.1, 1e-15);
    EXPECT_NEAR(s.hi, 0.1, 1e-15);
}

TEST(StabilitySlab, WidthAndEmptiness) {
    Dictionary d({}, 0.9);
    d.maybe_add(vec({0, 0}));
    // Gap exactly 2 sigma at x = 0: zero-width slab.
    const Slab s0 = build_stability_slab(vec({0, 0}), vec({0.0}), 0.3, 0.5, Interval{-0.5, 0.5}, d, Norm::Linf);
    EXPECT_EQ(s0.lo, s0.hi);
    EXPECT_FALSE(s0.empty());
    const Slab s1 = build_stability_slab(vec({0, 0}), vec({1.0}), 0.3, 0.5, Interval{-0.7, 0.9}, d, Norm::Linf);
    EXPECT_FALSE(s1.empty());
    const Slab s2 = build_stability_slab(vec({0, 0}), vec({0.0}), 0.3, 0.5, Interval{-1.0, 1.0}, d, Norm::Linf);
    EXPECT_TRUE(s2.empty());
    EXPECT_THROW(build_stability_slab(vec({0, 0}), vec({0.0}), -1.0, 0.5, Interval{}, d, Norm::Linf), Error);
}

TEST(Project, InsideIsUnchanged) {
    const Slab s{vec({1, 0}), -1.0, 1.0};
    EXPECT_EQ(project_onto_slab(vec({0.5, 7.0}), s), vec({0.5, 7.0}));
}

TEST(Project, ClosedFormExample) {
    const Slab s{vec({1, 0}), -1.0, 1.0};
    const Vector p = project_onto_slab(vec({3, 2}), s);
    EXPECT_EQ(p, vec({1, 2}));
    EXPECT_LT((p - oracle::qp_project(vec({3, 2}), s.k, s.lo, s.hi)).norm(), 1e-12);
}

TEST(Project, Errors) {
    EXPECT_THROW(project_onto_slab(vec({0}), Slab{vec({1}), 1.0, 0.0}), EmptySlabError);
    EXPECT_THROW(project_onto_slab(vec({0}), Slab{vec({0}), 1.0, 2.0}), Error);
    EXPECT_EQ(project_onto_slab(vec({0}), Slab{vec({0}), -1.0, 2.0}), vec({0}));
    EXPECT_THROW(project_onto_slab(vec({0, 0}), Slab{vec({1}), 0.0, 1.0}), Error);
}

TEST(Project, MatchesQpOracleIdempotentAndFeasible) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 3.0);
    for (int trial = 0; trial < 300; ++trial) {
        const Eigen::Index n = 1 + trial % 20;
        const Slab s = random_slab(rng, n);
        Vector a(n);
        for (Eigen::Index i = 0; i < n; ++i) a[i] = g(rng);
        const Vector p = project_onto_slab(a, s);
        EXPECT_LE((p - oracle::qp_project(a, s.k, s.lo, s.hi)).norm(), 1e-8);
        EXPECT_TRUE(s.contains(p));
        EXPECT_LE((project_onto_slab(p, s) - p).norm(), 1e-12);
    }
}

TEST(Apsm, FeasiblePointUnchanged) {
    const Vector a = vec({0.5, 0.5});
    const std::vector<Slab> recent{{vec({1, 0}), 0.0, 1.0}, {vec({0, 1}), 0.0, 1.0}};
    EXPECT_EQ(apsm_update(a, recent, Slab{vec({1, 1}), 0.0, 2.0}), a);
}

TEST(Apsm, SingleViolatedSlabEqualsProjection) {
    const Vector a = vec({3.0, -1.0});
    const Slab s{vec({1.0, 2.0}), -0.5, 0.5};
    const Slab everything{vec({0.0, 0.0}), -1.0, 1.0};
    const std::vector<Slab> recent{s};
    EXPECT_LE((apsm_update(a, recent, everything) - project_onto_slab(a, s)).norm(), 1e-15);
}

TEST(Apsm, TwoParallelSlabsAverage) {
    const std::vector<Slab> recent{{vec({1.0}), 0.0, 0.0}, {vec({1.0}), 2.0, 2.0}};
    // Stability slab that leaves the average alone, then one that clips it.
    EXPECT_DOUBLE_EQ(apsm_update(vec({10.0}), recent, Slab{vec({1.0}), -5.0, 5.0})[0], 1.0);
    EXPECT_DOUBLE_EQ(apsm_update(vec({10.0}), recent, Slab{vec({2.0}), 3.0, 4.0})[0], 1.5);
    EXPECT_THROW(apsm_update(vec({10.0}), recent, Slab{vec({1.0}), 1.0, 0.0}), EmptySlabError);
}

TEST(Apsm, OutputInStabilitySlabAndFejer) {
    // All slabs are built around a common generator a_star, so it lies in every slab.
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index n = 1 + trial % 8;
        Vector a_star(n), a(n);
        for (Eigen::Index i = 0; i < n; ++i) a_star[i] = g(rng), a[i] = 4.0 * g(rng);
        auto around = [&](double width) {
            Slab s;
            s.k = Vector(n);
            for (Eigen::Index i = 0; i < n; ++i) s.k[i] = g(rng);
            const double v = a_star.dot(s.k);
            s.lo = v - width * std::abs(g(rng));
            s.hi = v + width * std::abs(g(rng));
            return s;
        };
        std::vector<Slab> recent;
        for (int j = 0; j < 1 + trial % 10; ++j) recent.push_back(around(0.3));
        const Slab stab = around(0.5);
        const Vector next = apsm_update(a, recent, stab);
        EXPECT_TRUE(stab.contains(next));
        EXPECT_LE((next - a_star).norm(), (a - a_star).norm() + 1e-12);
    }
}
