#include "dinv/tuning.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dinv;

namespace {

Tuning example_tuning() {
    Tuning t;
    t.lambda1_star = 1.1;
    t.lambda2_star = 1.1;
    t.r_bar = 1.0;
    t.gamma_g_hat = 0.75;
    t.c_gamma_g = 0.25;
    t.sigma = 0.5;
    t.epsilon_hat = 0.1;
    t.beta_star = 0.0;
    t.gamma_delta_bar = 0.4;
    return t;
}

// x+ = 0.5 x + u on a grid over [-1, 1]^2 of (x, x+), so u = x+ - 0.5 x.
std::shared_ptr<const Dataset> grid_data(int side, double noise, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-noise, noise);
    auto data = std::make_shared<Dataset>();
    long t = -static_cast<long>(side) * side;
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            const double x = -1.0 + 2.0 * i / (side - 1);
            const double xn = -1.0 + 2.0 * j / (side - 1);
            Vector w(2);
            w << x, xn;
            data->push_back({xn - 0.5 * x + (noise > 0.0 ? d(rng) : 0.0), w, t++});
        }
    return data;
}

Tuning sigma_tuning(double c_delta) {
    Tuning t;
    t.delta_hat = 0.01;
    t.c_delta = c_delta;
    t.gamma_star_hat = 1.5;
    t.gamma_g_hat = 0.1;
    t.epsilon_hat = 0.01;
    t.lambda1_star = 1.1;
    t.lambda2_star = 1.1;
    t.r_bar = 0.3;
    t.gamma_delta_bar = 0.5;
    return t;
}

}  // namespace

TEST(XBar, TabulatedExample) {
    const Tuning t = example_tuning();
    const double want = (1.1 * 1.0 + 1.0 * 1.1 * 0.5 + 1.1 * 0.1 + 0.0) / (1.0 - 1.0 * 1.1 * 0.4);
    EXPECT_DOUBLE_EQ(compute_x_bar(t), want);
    EXPECT_NEAR(compute_x_bar(t), 1.76 / 0.56, 1e-12);
    EXPECT_NEAR(compute_x_bar(t), 3.142857, 1e-6);
}

TEST(XBar, PerturbationsVanish) {
    Tuning t = example_tuning();
    t.sigma = t.epsilon_hat = t.beta_star = t.gamma_delta_bar = 0.0;
    t.r_bar = 0.7;
    EXPECT_DOUBLE_EQ(compute_x_bar(t), t.lambda1_star * t.r_bar);
}

TEST(XBar, StrictlyIncreasingInSigma) {
    const Tuning t = example_tuning();
    double prev = -1.0;
    for (double s = 0.0; s <= 3.0; s += 0.05) {
        const double v = compute_x_bar(t, s);
        EXPECT_GT(v, prev);
        prev = v;
    }
}

TEST(XBar, NonPositiveDenominator) {
    Tuning t = example_tuning();
    t.gamma_delta_bar = 1.0 / 1.1;
    EXPECT_THROW(compute_x_bar(t), Error);
    t.gamma_delta_bar = 2.0;
    try {
        compute_x_bar(t);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("too large"), std::string::npos);
    }
}

TEST(GammaDelta, Examples) {
    EXPECT_DOUBLE_EQ(select_gamma_delta(1.5, 0.5, 1.0, 10.0, 0.5), 0.25);
    EXPECT_DOUBLE_EQ(select_gamma_delta(0.5, 0.5, 1.1, 0.2, 0.9), 0.9 * 0.2);
    EXPECT_THROW(select_gamma_delta(1.0, 0.0, 1.0, 1.0, 1.0), Error);
    EXPECT_THROW(select_gamma_delta(1.0, 0.0, 1.0, 1.0, 0.0), Error);
}

TEST(GammaDelta, StrictlyInsideIntervalSweep) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> g(0.0, 5.0), c(1e-3, 1.0), l(0.5, 3.0), bar(1e-3, 10.0), f(1e-3, 0.999);
    for (int k = 0; k < 20000; ++k) {
        const double gh = g(rng), cg = c(rng), l2 = l(rng), gb = bar(rng), fr = f(rng);
        const double v = select_gamma_delta(gh, cg, l2, gb, fr);
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0 / ((gh + cg) * l2));
        EXPECT_LT(v, gb);
    }
}

TEST(Sigma, SingleDatumCollapsedBall) {
    auto data = std::make_shared<Dataset>(Dataset{{0.4, Vector::Zero(2), -1}});
    Tuning t;
    t.delta_hat = 0.05;
    t.c_delta = 0.02;
    t.r_bar = 0.0;
    t.gamma_star_hat = 2.0;
    t.gamma_delta_bar = 0.3;
    const BoundsOracle o = inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, 0.0, Norm::Linf);
    SigmaOptions opt;
    opt.margin = 1.1;
    opt.samples = 200;
    const SigmaSelection s = select_sigma(o, t, 0.0, opt);
    EXPECT_NEAR(s.sigma, 1.1 * (0.05 + 0.02), 1e-15);
    EXPECT_EQ(s.x_bar, 0.0);
}

TEST(Sigma, FixedPointConsistent) {
    auto data = grid_data(15, 0.01, 3);
    for (Norm nrm : {Norm::Linf, Norm::L2}) {
        const Tuning t = sigma_tuning(0.02);
        const BoundsOracle o = inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, 0.0, nrm);
        SigmaOptions opt;
        opt.samples = 1500;
        const SigmaSelection s = select_sigma(o, t, 0.33, opt);
        EXPECT_NEAR(s.x_bar, compute_x_bar(t, s.sigma), 1e-12 * s.x_bar);
        const double d0 = estimate_D0(o, s.x_bar, t.r_bar, opt.samples, opt.seed);
        EXPECT_GE(s.sigma, 0.5 * d0);
        EXPECT_GE(s.sigma, t.delta());  // the gap is at least 2 delta everywhere
    }
}

TEST(Sigma, IncreasingInCDelta) {
    auto data = grid_data(12, 0.0, 4);
    double prev = 0.0;
    for (double cd : {0.0, 0.01, 0.02, 0.05, 0.1, 0.2}) {
        const Tuning t = sigma_tuning(cd);
        const BoundsOracle o = inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, 0.0, Norm::Linf);
        SigmaOptions opt;
        opt.samples = 800;
        const double s = select_sigma(o, t, 0.33, opt).sigma;
        EXPECT_GT(s, prev) << "c_delta = " << cd;
        prev = s;
    }
}

TEST(Sigma, DivergenceReported) {
    auto data = grid_data(4, 0.0, 5);
    Tuning t = sigma_tuning(0.0);
    t.gamma_star_hat = 200.0;  // gap grows faster than x_bar can absorb
    t.gamma_g_hat = 1.5;
    t.gamma_delta_bar = 0.5;
    const BoundsOracle o = inflated_oracle(data, t.delta_hat, 0.0, t.gamma_star_hat, 0.0, Norm::Linf);
    SigmaOptions opt;
    opt.samples = 200;
    try {
        select_sigma(o, t, 0.33, opt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
    }
    opt.margin = 1.0;
    EXPECT_THROW(select_sigma(o, sigma_tuning(0.0), 0.33, opt), Error);
}

class TuneFromData : public ::testing::Test {
protected:
    std::shared_ptr<const Dataset> data = grid_data(20, 0.02, 11);
    TuningInputs in() const {
        TuningInputs i;
        i.c_delta = 0.01;
        i.c_gamma_star = 0.1;
        i.c_gamma_g = 0.1;
        i.r_bar = 0.2;
        i.N_bar = 400;
        i.sigma.samples = 1500;
        return i;
    }
    ValidationContext ctx(double box) const {
        ValidationContext c;
        c.state_box = {Interval{-box, box}};
        c.x0 = Vector::Constant(1, 0.05);
        c.r1 = Vector::Constant(1, 0.1);
        c.samples = 1500;
        return c;
    }
};

TEST_F(TuneFromData, PassesOnDenseData) {
    const TuneResult r = tune_from_data(data, in(), Norm::Linf, ctx(1.0));
    for (const auto& c : r.report.checks) EXPECT_TRUE(c.passed) << c.name << " " << c.value << " vs " << c.limit;
    const Tuning& t = r.tuning;
    EXPECT_GT(t.gamma_delta, 0.0);
    EXPECT_LT(t.gamma_delta, std::min(t.gamma_delta_cap(), t.gamma_delta_bar));
    EXPECT_DOUBLE_EQ(t.gamma_delta_bar, 0.5 * t.gamma_delta_cap());
    EXPECT_EQ(t.sigma, r.sigma.sigma);
    EXPECT_EQ(t.x_bar, r.sigma.x_bar);
    EXPECT_EQ(t.delta_hat, r.estimators.seed.delta_hat);
    EXPECT_LE(t.delta_hat, 0.02);
}

TEST_F(TuneFromData, GammaDeltaBarAboveCapFails) {
    const Tuning base = tune_from_data(data, in(), Norm::Linf, ctx(1.0)).tuning;
    TuningInputs i = in();
    i.gamma_delta_bar = 1.2 * base.gamma_delta_cap();
    // x_bar would have a negative denominator: tuning cannot finish.
    EXPECT_THROW(tune_from_data(data, i, Norm::Linf, ctx(1.0)), Error);

    Tuning t = base;
    t.gamma_delta_bar = 1.2 * base.gamma_delta_cap();
    const BoundsOracle o = inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, t.c_gamma_star, Norm::Linf);
    const ValidationReport rep = validate_stability_hypotheses(t, o, ctx(1.0));
    EXPECT_FALSE(rep.passed());
    EXPECT_FALSE(rep.find("gamma_delta_bar_interval")->passed);
    EXPECT_FALSE(rep.find("x_bar_denominator")->passed);
}

TEST_F(TuneFromData, SmallStateBoxFails) {
    const TuneResult r = tune_from_data(data, in(), Norm::Linf, ctx(0.1));
    EXPECT_FALSE(r.report.passed());
    const Check* c = r.report.find("ball_in_state_box");
    ASSERT_NE(c, nullptr);
    EXPECT_FALSE(c->passed);
    EXPECT_TRUE(r.report.find("sigma_covers_gap")->passed);
}

TEST_F(TuneFromData, GammaDeltaOutsideIntervalFails) {
    TuneResult r = tune_from_data(data, in(), Norm::Linf, ctx(1.0));
    Tuning t = r.tuning;
    t.gamma_delta = t.gamma_delta_bar;
    const BoundsOracle o = inflated_oracle(data, t.delta_hat, t.c_delta, t.gamma_star_hat, t.c_gamma_star, Norm::Linf);
    EXPECT_FALSE(validate_stability_hypotheses(t, o, ctx(1.0)).find("gamma_delta_interval")->passed);
    t = r.tuning;
    t.sigma = 0.0;
    EXPECT_FALSE(validate_stability_hypotheses(t, o, ctx(1.0)).find("sigma_covers_gap")->passed);
}

TEST_F(TuneFromData, InitialStateOutsideBallFails) {
    ValidationContext c = ctx(1.0);
    c.x0 = Vector::Constant(1, 0.99);
    const TuneResult r = tune_from_data(data, in(), Norm::Linf, c);
    EXPECT_FALSE(r.report.find("initial_state_in_ball")->passed);
}

TEST(TuneFromDataErrors, EmptyData) {
    EXPECT_THROW(tune_from_data(std::make_shared<Dataset>(), TuningInputs{}, Norm::Linf, ValidationContext{}), Error);
    EXPECT_THROW(tune_from_data(nullptr, TuningInputs{}, Norm::Linf, ValidationContext{}), Error);
}
