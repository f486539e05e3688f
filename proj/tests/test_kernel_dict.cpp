#include "dinv/kernel_dict.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace dinv;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out[i++] = d;
    return out;
}

// Independent oracle: Gaussian kernel written out coordinate by coordinate.
double rbf(const Vector& a, const Vector& b, double w) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-s / (2.0 * w * w));
}

}  // namespace

TEST(KernelEval, SelfIsOne) {
    const Vector w = vec({0.3, -1.2, 4.0});
    EXPECT_DOUBLE_EQ(kernel_eval({KernelKind::GaussianRBF, 0.7}, w, w), 1.0);
}

TEST(KernelEval, UnitDistance) {
    EXPECT_NEAR(kernel_eval({KernelKind::GaussianRBF, 1.0}, vec({0, 0}), vec({1, 0})), 0.6065306597126334, 1e-15);
}

TEST(KernelEval, SymmetricAndInUnitInterval) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    const KernelSpec spec{KernelKind::GaussianRBF, 1.3};
    for (int k = 0; k < 100; ++k) {
        Vector a(4), b(4);
        for (int i = 0; i < 4; ++i) a[i] = n(rng), b[i] = n(rng);
        const double ab = kernel_eval(spec, a, b);
        EXPECT_EQ(ab, kernel_eval(spec, b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_NEAR(ab, rbf(a, b, 1.3), 1e-15);
    }
}

TEST(KernelEval, DimensionMismatch) {
    EXPECT_THROW(kernel_eval({}, vec({1}), vec({1, 2})), Error);
}

TEST(KernelSpec, RejectsBadWidth) {
    EXPECT_THROW(Dictionary({KernelKind::GaussianRBF, 0.0}, 0.5), Error);
    EXPECT_THROW(Dictionary({KernelKind::GaussianRBF, -1.0}, 0.5), Error);
    EXPECT_THROW(Dictionary({}, 1.0), Error);
    EXPECT_THROW(Dictionary({}, 0.0), Error);
}

TEST(Dictionary, KernelVector) {
    Dictionary d({KernelKind::GaussianRBF, 1.0}, 0.9);
    EXPECT_EQ(d.kernel_vector(vec({0, 0})).size(), 0);
    const Vector c1 = vec({0, 0}), c2 = vec({3, 1});
    ASSERT_TRUE(d.maybe_add(c1));
    const Vector k1 = kernel_vector(d, c1);
    ASSERT_EQ(k1.size(), 1);
    EXPECT_DOUBLE_EQ(k1[0], 1.0);
    ASSERT_TRUE(d.maybe_add(c2));
    const Vector q = vec({1, -0.5});
    const Vector k = kernel_vector(d, q);
    ASSERT_EQ(k.size(), 2);
    EXPECT_NEAR(k[0], rbf(q, c1, 1.0), 1e-15);
    EXPECT_NEAR(k[1], rbf(q, c2, 1.0), 1e-15);
}

TEST(Coherence, Values) {
    Dictionary d({KernelKind::GaussianRBF, 1.0}, 0.9);
    EXPECT_EQ(coherence(d, vec({1, 1})), 0.0);
    d.maybe_add(vec({0, 0}));
    EXPECT_EQ(coherence(d, vec({0, 0})), 1.0);
    EXPECT_NEAR(coherence(d, vec({10, 0})), std::exp(-50.0), 1e-30);
    EXPECT_LT(coherence(d, vec({1e-3, 0})), 1.0);
}

TEST(MaybeAdd, ThresholdRule) {
    auto [d1, added1] = maybe_add_center(Dictionary({}, 0.9), vec({0.0}));
    EXPECT_TRUE(added1);
    auto [d2, added2] = maybe_add_center(d1, vec({0.0}));
    EXPECT_FALSE(added2);
    EXPECT_EQ(d2.size(), 1u);
    // exp(-0.5) = 0.607 <= 0.9: admitted.
    auto [d3, added3] = maybe_add_center(d2, vec({1.0}));
    EXPECT_TRUE(added3);
    EXPECT_EQ(d3.size(), 2u);
    EXPECT_EQ(d1.size(), 1u);  // value semantics
}

TEST(MaybeAdd, Errors) {
    Dictionary d({}, 0.5);
    EXPECT_THROW(d.maybe_add(vec({std::nan("")})), Error);
    d.maybe_add(vec({0, 0}));
    EXPECT_THROW(d.maybe_add(vec({0})), Error);
}

TEST(MaybeAdd, IdempotentAndPairwiseBounded) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (double mu : {0.3, 0.6, 0.9}) {
        Dictionary d({KernelKind::GaussianRBF, 0.5}, mu);
        std::size_t last = 0;
        for (int k = 0; k < 2000; ++k) {
            const Vector w = vec({u(rng), u(rng)});
            d.maybe_add(w);
            const std::size_t after_first = d.size();
            EXPECT_FALSE(d.maybe_add(w));
            EXPECT_EQ(d.size(), after_first);
            EXPECT_GE(d.size(), last);
            last = d.size();
        }
        for (std::size_t i = 0; i < d.size(); ++i)
            for (std::size_t j = i + 1; j < d.size(); ++j)
                EXPECT_LE(rbf(d.center(i), d.center(j), 0.5), mu);
    }
}

TEST(MaybeAdd, SaturatesOnCompactBox) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Dictionary d({KernelKind::GaussianRBF, 0.5}, 0.9);
    std::size_t at_9000 = 0;
    for (int k = 0; k < 10000; ++k) {
        d.maybe_add(vec({u(rng), u(rng)}));
        if (k == 8999) at_9000 = d.size();
    }
    EXPECT_LT(d.size(), 10000u);
    EXPECT_EQ(d.size(), at_9000);
}
