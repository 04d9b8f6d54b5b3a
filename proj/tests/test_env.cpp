#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <string>

#include "striprw/env.hpp"
#include "striprw/errors.hpp"
#include "striprw/matrix.hpp"

using striprw::build_environment;
using striprw::env_distance;
using striprw::env_from_json;
using striprw::env_to_json;
using striprw::Environment;
using striprw::lazify;
using striprw::max_row_sum;
using striprw::perturb;
using striprw::validate_ellipticity;

namespace {

const char* kSrw = R"({"kind":"constant","m":1,"P":[[0.5]],"Q":[[0.5]],"R":[[0.0]]})";

std::string qp_spec(int m, int seed) {
    return std::string(R"({"kind":"quasiperiodic","m":)") + std::to_string(m) +
           R"(,"seed":)" + std::to_string(seed) + R"(,"dim":1,"harmonics":3})";
}

double row_sum_defect(const Environment& env) {
    double worst = 0.0;
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const auto& t = env.layer(n);
        const striprw::Mat s = t.P + t.Q + t.R;
        for (int i = 0; i < env.m(); ++i) {
            worst = std::max(worst, std::abs(s.row(i).sum() - 1.0));
        }
    }
    return worst;
}

}  // namespace

// --------------------------- constant generator -----------------------------
TEST(EnvConstant, SrwLayersAndRange) {
    const Environment env = build_environment(kSrw, -10, 10, 5);
    EXPECT_EQ(env.m(), 1);
    EXPECT_EQ(env.window_lo(), -10);
    EXPECT_EQ(env.window_hi(), 10);
    EXPECT_EQ(env.n_min(), -15);
    EXPECT_EQ(env.n_max(), 15);
    EXPECT_EQ(env.num_layers(), 31);
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        EXPECT_DOUBLE_EQ(env.layer(n).P(0, 0), 0.5);
        EXPECT_DOUBLE_EQ(env.layer(n).Q(0, 0), 0.5);
        EXPECT_DOUBLE_EQ(env.layer(n).R(0, 0), 0.0);
    }
}

TEST(EnvConstant, RejectsNonStochasticRows) {
    const char* bad = R"({"kind":"constant","m":1,"P":[[0.6]],"Q":[[0.5]],"R":[[0.0]]})";
    EXPECT_THROW(build_environment(bad, -5, 5, 2), striprw::NonStochasticSpec);
}

TEST(EnvConstant, RejectsUnknownTag) {
    EXPECT_THROW(build_environment(R"({"kind":"nope"})", -5, 5, 2),
                 striprw::UnknownGeneratorTag);
}

TEST(EnvConstant, RejectsUnknownKey) {
    const char* bad =
        R"({"kind":"constant","m":1,"P":[[0.5]],"Q":[[0.5]],"R":[[0.0]],"extra":1})";
    EXPECT_THROW(build_environment(bad, -5, 5, 2), striprw::ConfigInvalid);
}

// ------------------------- perturbed-srw generator ---------------------------
TEST(EnvPerturbedSrw, DecayProfileOneSigned) {
    const char* spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.1,"sign":"positive","unbias":false})";
    const Environment env = build_environment(spec, -20, 20, 5);
    // a_n = 0.1 / (n^2 + 1), p_n = 1/2 - a_n, q_n = 1/2 + a_n.
    for (std::int64_t n : {std::int64_t(0), std::int64_t(5), std::int64_t(-7)}) {
        const double a = 0.1 / (static_cast<double>(n) * n + 1.0);
        EXPECT_NEAR(env.layer(n).P(0, 0), 0.5 - a, 1e-15);
        EXPECT_NEAR(env.layer(n).Q(0, 0), 0.5 + a, 1e-15);
    }
}

TEST(EnvPerturbedSrw, AlternatingSignFlipsWithParity) {
    const char* spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.1,"sign":"alternating","unbias":false})";
    const Environment env = build_environment(spec, -10, 10, 2);
    const double a1 = 0.1 / 2.0;   // |n| = 1
    const double a2 = 0.1 / 5.0;   // |n| = 2
    EXPECT_NEAR(env.layer(1).Q(0, 0) - 0.5, -a1, 1e-15);
    EXPECT_NEAR(env.layer(2).Q(0, 0) - 0.5, a2, 1e-15);
    EXPECT_NEAR(env.layer(-1).Q(0, 0) - 0.5, -a1, 1e-15);
}

TEST(EnvPerturbedSrw, ExactUnbiasing) {
    const char* spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.1,"sign":"positive","unbias":true})";
    const Environment env = build_environment(spec, -50, 50, 20);
    // Unbiasing picks a_0 so the product of p_n/q_n over the realized range
    // is exactly one (log-sum cancels to rounding).
    double log_prod = 0.0;
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        log_prod += std::log(env.layer(n).P(0, 0) / env.layer(n).Q(0, 0));
    }
    EXPECT_NEAR(log_prod, 0.0, 1e-12);
}

TEST(EnvPerturbedSrw, OverridePinsSite) {
    const char* spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.0,"unbias":false,"overrides":[[0,-0.1]]})";
    const Environment env = build_environment(spec, -10, 10, 2);
    EXPECT_NEAR(env.layer(0).P(0, 0), 0.6, 1e-15);  // a_0 = -0.1
    EXPECT_NEAR(env.layer(0).Q(0, 0), 0.4, 1e-15);
    EXPECT_DOUBLE_EQ(env.layer(1).P(0, 0), 0.5);
}

TEST(EnvPerturbedSrw, Laziness) {
    const char* spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.0,"unbias":false,"laziness":0.5})";
    const Environment env = build_environment(spec, -5, 5, 2);
    EXPECT_NEAR(env.layer(3).P(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(env.layer(3).Q(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(env.layer(3).R(0, 0), 0.5, 1e-15);
}

// ------------------------- iid-balanced generator ----------------------------
TEST(EnvIidBalanced, StochasticAndDeterministic) {
    const std::string spec = R"({"kind":"iid-balanced","m":3,"seed":11})";
    const Environment a = build_environment(spec, -30, 30, 10);
    EXPECT_LT(row_sum_defect(a), 1e-12);

    // Same spec, smaller window: the common layers must be bit-identical.
    const Environment b = build_environment(spec, -10, 10, 5);
    for (std::int64_t n = b.n_min(); n <= b.n_max(); ++n) {
        EXPECT_EQ((a.layer(n).P - b.layer(n).P).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ((a.layer(n).Q - b.layer(n).Q).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ((a.layer(n).R - b.layer(n).R).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(EnvIidBalanced, SeedChangesLayers) {
    const Environment a = build_environment(R"({"kind":"iid-balanced","m":2,"seed":1})", -5, 5, 2);
    const Environment b = build_environment(R"({"kind":"iid-balanced","m":2,"seed":2})", -5, 5, 2);
    EXPECT_GT(env_distance(a, b), 1e-3);
}

// ------------------------- quasiperiodic generator ---------------------------
TEST(EnvQuasiperiodic, ZeroLocalDriftRows) {
    const Environment env = build_environment(qp_spec(2, 5), -40, 40, 10);
    EXPECT_LT(row_sum_defect(env), 1e-12);
    // Construction guarantees per-lane crossing masses match: P 1 = Q 1.
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const auto& t = env.layer(n);
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(t.P.row(i).sum(), t.Q.row(i).sum(), 1e-14);
        }
    }
}

TEST(EnvQuasiperiodic, SubWindowEmbedding) {
    const Environment a = build_environment(qp_spec(2, 5), -100, 100, 20);
    const Environment b = build_environment(qp_spec(2, 5), -30, 60, 5);
    for (std::int64_t n = b.n_min(); n <= b.n_max(); ++n) {
        EXPECT_EQ((a.layer(n).P - b.layer(n).P).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ((a.layer(n).R - b.layer(n).R).cwiseAbs().maxCoeff(), 0.0);
    }
}

// ----------------------------- explicit tables -------------------------------
TEST(EnvExplicit, JsonRoundTripIsExact) {
    const Environment env = build_environment(qp_spec(2, 7), -15, 15, 4);
    const Environment back = env_from_json(env_to_json(env));
    EXPECT_EQ(back.m(), env.m());
    EXPECT_EQ(env_distance(env, back), 0.0);
}

TEST(EnvExplicit, InsufficientCoverageThrows) {
    const Environment env = build_environment(kSrw, -3, 3, 1);
    const std::string table = env_to_json(env);  // covers [-4, 4]
    EXPECT_THROW(build_environment(
                     std::string(R"({"kind":"explicit","data":)") + table + "}", -10, 10, 0),
                 striprw::ConfigError);
}

// ------------------------------- distance -----------------------------------
TEST(EnvDistance, HandValueGeometricWeights) {
    const Environment a = build_environment(kSrw, -10, 10, 5);
    const Environment b = build_environment(
        R"({"kind":"constant","m":1,"P":[[0.6]],"Q":[[0.4]],"R":[[0.0]]})", -10, 10, 5);
    // Per layer: (|0.1| + |-0.1| + 0)/2 = 0.1; realized range is [-15, 15],
    // so the weights sum to 3 - 2^-14.
    const double expected = 0.1 * (3.0 - std::pow(2.0, -14.0));
    EXPECT_NEAR(env_distance(a, b), expected, 1e-12);
}

TEST(EnvDistance, WidthMismatchThrows) {
    const Environment a = build_environment(kSrw, -5, 5, 2);
    const Environment b = build_environment(qp_spec(2, 5), -5, 5, 2);
    EXPECT_THROW(env_distance(a, b), striprw::WidthMismatch);
}

// ------------------------------ modifiers ------------------------------------
TEST(EnvModifiers, LazifyMixesIdentity) {
    const Environment env = build_environment(qp_spec(2, 5), -10, 10, 3);
    const Environment lazy = lazify(env, 0.5);
    EXPECT_LT(row_sum_defect(lazy), 1e-12);
    for (std::int64_t n = lazy.n_min(); n <= lazy.n_max(); ++n) {
        EXPECT_NEAR(max_row_sum(lazy.layer(n).P - 0.5 * env.layer(n).P), 0.0, 1e-15);
        const striprw::Mat want =
            0.5 * env.layer(n).R + 0.5 * striprw::Mat::Identity(2, 2);
        EXPECT_NEAR(max_row_sum(lazy.layer(n).R - want), 0.0, 1e-15);
    }
    EXPECT_EQ(env_distance(lazify(env, 0.0), env), 0.0);
    EXPECT_THROW(lazify(env, 1.0), striprw::ConfigInvalid);
}

TEST(EnvModifiers, PerturbMovesMassBetweenQandP) {
    const Environment env = build_environment(kSrw, -10, 10, 3);
    const Environment pert = perturb(env, 2.0, 0.1);
    EXPECT_LT(row_sum_defect(pert), 1e-12);
    // At layer n the fraction f = 0.1/(n^2+1) of Q moves into P.
    const double f0 = 0.1;
    EXPECT_NEAR(pert.layer(0).P(0, 0), 0.5 + 0.5 * f0, 1e-15);
    EXPECT_NEAR(pert.layer(0).Q(0, 0), 0.5 * (1.0 - f0), 1e-15);
    const double f3 = 0.1 / 10.0;
    EXPECT_NEAR(pert.layer(3).Q(0, 0), 0.5 * (1.0 - f3), 1e-15);
    // Deviation bound |amplitude| / (|n|^kappa + 1), layer by layer.
    for (std::int64_t n = pert.n_min(); n <= pert.n_max(); ++n) {
        const double bound = 0.1 / (static_cast<double>(n) * n + 1.0) + 1e-15;
        EXPECT_LE(max_row_sum(pert.layer(n).P - env.layer(n).P), bound);
    }
}

// ------------------------------ ellipticity ----------------------------------
TEST(Ellipticity, SrwConstants) {
    const Environment env = build_environment(kSrw, -20, 20, 5);
    const auto rep = validate_ellipticity(env);
    EXPECT_TRUE(rep.elliptic);
    EXPECT_EQ(rep.k0, 1);
    EXPECT_DOUBLE_EQ(rep.max_R_pow_norm, 0.0);
    EXPECT_DOUBLE_EQ(rep.min_cross_P, 0.5);
    EXPECT_DOUBLE_EQ(rep.min_cross_Q, 0.5);
    EXPECT_DOUBLE_EQ(rep.eps_bar, 0.5);
}

TEST(Ellipticity, VeryLazyWalkStaysElliptic) {
    const char* lazy = R"({"kind":"constant","m":1,"P":[[0.05]],"Q":[[0.05]],"R":[[0.9]]})";
    const Environment env = build_environment(lazy, -10, 10, 2);
    const auto rep = validate_ellipticity(env);
    EXPECT_TRUE(rep.elliptic);
    // (I-R)^-1 P = 0.05/0.1 = 1/2 even though R is large.
    EXPECT_NEAR(rep.min_cross_P, 0.5, 1e-12);
    EXPECT_NEAR(rep.eps_bar, 1.0 - 0.9, 1e-12);
}

TEST(Ellipticity, QuasiperiodicWindowIsElliptic) {
    const Environment env = build_environment(qp_spec(2, 5), -200, 200, 50);
    const auto rep = validate_ellipticity(env);
    EXPECT_TRUE(rep.elliptic);
    EXPECT_GT(rep.eps_bar, 0.0);
    EXPECT_GT(rep.min_cross_P, 0.0);
    EXPECT_GT(rep.min_cross_Q, 0.0);
}
