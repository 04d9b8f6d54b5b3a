#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "striprw/env.hpp"
#include "striprw/errors.hpp"
#include "striprw/green.hpp"
#include "striprw/harmonic.hpp"
#include "striprw/hierarchy.hpp"

using striprw::build_environment;
using striprw::compute_harmonic;
using striprw::compute_hierarchy;
using striprw::Environment;
using striprw::exit_probability;
using striprw::expected_absorption_time;
using striprw::green_asymptotic;
using striprw::green_compare;
using striprw::green_exact;
using striprw::green_exact_dense;
using striprw::GreenTable;
using striprw::parabola_green;

namespace {

const char* kSrw = R"({"kind":"constant","m":1,"P":[[0.5]],"Q":[[0.5]],"R":[[0.0]]})";

std::string qp_spec(int m, int seed) {
    return std::string(R"({"kind":"quasiperiodic","m":)") + std::to_string(m) +
           R"(,"seed":)" + std::to_string(seed) + R"(,"dim":1,"harmonics":3})";
}

}  // namespace

// ----------------------- SRW: classical closed forms --------------------------
TEST(GreenSrw, VisitsAtOriginEqualHalfwidth) {
    const Environment env = build_environment(kSrw, -120, 120, 5);
    for (std::int64_t L : {std::int64_t(10), std::int64_t(100)}) {
        const GreenTable g = green_exact(env, -L, L, 0, 1);
        EXPECT_NEAR(g.value_at(0, 1), static_cast<double>(L), 1e-10) << "L=" << L;
    }
}

TEST(GreenSrw, DiscreteParabolaKernelIsExact) {
    // For the unperturbed walk G(x, y) = 2 (x^y - a)(b - x_v_y) / (b - a)
    // exactly, including off-diagonal entries.
    const Environment env = build_environment(kSrw, -10, 10, 5);
    const GreenTable g = green_exact(env, -4, 4, 0, 1);
    for (std::int64_t y = -3; y <= 3; ++y) {
        const double lo = std::min<double>(0.0, static_cast<double>(y));
        const double hi = std::max<double>(0.0, static_cast<double>(y));
        const double want = 2.0 * (lo + 4.0) * (4.0 - hi) / 8.0;
        EXPECT_NEAR(g.value_at(y, 1), want, 1e-12) << "y=" << y;
    }
    EXPECT_NEAR(g.value_at(2, 1), 2.0, 1e-12);
}

TEST(GreenSrw, RowSumEqualsAbsorptionTime) {
    const Environment env = build_environment(kSrw, -15, 15, 5);
    const GreenTable g = green_exact(env, -10, 10, 3, 1);
    const double t = expected_absorption_time(env, -10, 10, 3, 1);
    // Gambler's-ruin absorption time from x on [-L, L] is (L-x)(x+L).
    EXPECT_NEAR(t, 7.0 * 13.0, 1e-9);
    EXPECT_NEAR(g.total(), t, 1e-9);
}

TEST(GreenSrw, ExitProbabilityGamblersRuin) {
    const Environment env = build_environment(kSrw, -10, 10, 5);
    const striprw::HierarchyData h = compute_hierarchy(env);
    const auto harm = compute_harmonic(env, h);
    const auto ep = exit_probability(env, harm.mart, -3, 5, 0, 1, /*right=*/true);
    EXPECT_NEAR(ep.exact, 3.0 / 8.0, 1e-12);
    EXPECT_NEAR(ep.predicted, 3.0 / 8.0, 1e-12);
    const auto left = exit_probability(env, harm.mart, -3, 5, 0, 1, /*right=*/false);
    EXPECT_NEAR(left.exact + ep.exact, 1.0, 1e-12);
}

TEST(GreenSrw, MonotoneInIntervalAndSymmetric) {
    const Environment env = build_environment(kSrw, -25, 25, 5);
    const GreenTable small = green_exact(env, -10, 10, 0, 1);
    const GreenTable big = green_exact(env, -20, 20, 0, 1);
    for (std::int64_t y = -9; y <= 9; ++y) {
        EXPECT_GE(big.value_at(y, 1) + 1e-12, small.value_at(y, 1));
        EXPECT_NEAR(small.value_at(y, 1), small.value_at(-y, 1), 1e-12);
    }
}

// ----------------------------- solver agreement -------------------------------
TEST(GreenSolvers, BlockEqualsDenseOracle) {
    const Environment env = build_environment(qp_spec(2, 5), -30, 30, 60);
    const GreenTable a = green_exact(env, -25, 25, 2, 2);
    const GreenTable b = green_exact_dense(env, -25, 25, 2, 2);
    double worst = 0.0;
    for (std::int64_t n = -24; n <= 24; ++n) {
        for (int lane = 1; lane <= 2; ++lane) {
            worst = std::max(worst, std::abs(a.value_at(n, lane) - b.value_at(n, lane)));
        }
    }
    EXPECT_LT(worst, 1e-10);
}

// --------------------------- parabola asymptotics ------------------------------
TEST(GreenKernel, HandValuesAndClamping) {
    EXPECT_DOUBLE_EQ(parabola_green(0.0, 0.0, -10.0, 10.0), 10.0);
    EXPECT_DOUBLE_EQ(parabola_green(0.0, 2.0, -4.0, 4.0), 2.0);
    EXPECT_DOUBLE_EQ(parabola_green(-5.0, 0.0, -4.0, 4.0), 0.0);  // outside
    EXPECT_DOUBLE_EQ(parabola_green(1.0, -2.0, -4.0, 4.0), parabola_green(-2.0, 1.0, -4.0, 4.0));
}

TEST(GreenAsymptotic, ExactForSrw) {
    // The martingale coordinate of the unperturbed walk is n itself and rho = 1,
    // so the parabola prediction is exact at every interior site.
    const Environment env = build_environment(kSrw, -60, 60, 10);
    const striprw::HierarchyData h = compute_hierarchy(env);
    const auto harm = compute_harmonic(env, h);
    const auto cmp = green_compare(env, harm.mart, harm.inv, -50, 50, 0, 1);
    EXPECT_LT(cmp.sup_abs_error, 1e-9);
    EXPECT_LT(cmp.mid_max_rel, 1e-9);

    const auto pred = green_asymptotic(harm.mart, harm.inv, -50, 50, 0, 7, 1);
    EXPECT_NEAR(pred.value, 2.0 * 50.0 * 43.0 / 100.0, 1e-8);
}

TEST(GreenAsymptotic, BoundedErrorOnStrip) {
    // Additive O(1) claim, small-scale version: the sup error is a few units
    // and does not explode when the interval doubles.
    const Environment env = build_environment(qp_spec(2, 5), -130, 130, 80);
    const striprw::HierarchyData h = compute_hierarchy(env);
    const auto harm = compute_harmonic(env, h);
    const auto c1 = green_compare(env, harm.mart, harm.inv, -60, 60, 0, 1);
    const auto c2 = green_compare(env, harm.mart, harm.inv, -120, 120, 0, 1);
    EXPECT_LT(c2.sup_abs_error, 3.0 * std::max(c1.sup_abs_error, 1.0));
    EXPECT_LT(c2.mid_max_rel, 0.25);
}

// ------------------------------ error handling --------------------------------
TEST(GreenErrors, IntervalOutsideRealizedRangeThrows) {
    const Environment env = build_environment(kSrw, -10, 10, 2);
    EXPECT_THROW(green_exact(env, -30, 30, 0, 1), striprw::ConfigError);
}

TEST(GreenErrors, StartMustBeInterior) {
    const Environment env = build_environment(kSrw, -10, 10, 2);
    EXPECT_THROW(green_exact(env, -5, 5, 5, 1), striprw::ConfigError);
}
