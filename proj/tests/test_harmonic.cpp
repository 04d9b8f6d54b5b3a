#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "striprw/env.hpp"
#include "striprw/errors.hpp"
#include "striprw/harmonic.hpp"
#include "striprw/hierarchy.hpp"

namespace {

using namespace striprw;

const char* kSrwSpec = R"({"kind":"constant","m":1,"P":[[0.5]],"Q":[[0.5]],"R":[[0.0]]})";
const char* kQpSpec = R"({"kind":"quasiperiodic","m":2,"seed":5,"dim":1,"harmonics":3})";

HarmonicData harmonic_of(const char* spec, std::int64_t wlo, std::int64_t whi,
                         std::int64_t buffer, const MartingaleOptions& opts = {}) {
    const Environment env = build_environment(spec, wlo, whi, buffer);
    const HierarchyData hier = compute_hierarchy(env);
    return compute_harmonic(env, hier, opts);
}

// ===== martingale coordinate: closed forms on homogeneous environments =====

TEST(HarmonicSrw, MartingaleIsTheIdentity) {
    // For the simple random walk the harmonic coordinate in slope
    // normalization is m_n = n, the invariant measure is 1, the quadratic
    // variation is 1, and a = b = D = 1.
    const HarmonicData h = harmonic_of(kSrwSpec, -50, 50, 100);
    for (std::int64_t n = -50; n <= 50; ++n) {
        EXPECT_NEAR(h.mart.m_at(n)(0), static_cast<double>(n), 1e-12);
    }
    EXPECT_LE(h.mart.residual, 1e-12);
    EXPECT_NEAR(h.mart.increment_bound, 1.0, 1e-12);
    for (std::int64_t n = -50; n <= 50; ++n) {
        EXPECT_NEAR(h.inv.rho_at(n)(0), 1.0, 1e-12);
    }
    EXPECT_LE(h.inv.residual, 1e-14);
    for (std::int64_t n = h.qvar_lo; n <= h.qvar_hi; ++n) {
        EXPECT_NEAR(h.qvar_at(n)(0), 1.0, 1e-12);
    }
    EXPECT_NEAR(h.av.a, 1.0, 1e-12);
    EXPECT_NEAR(h.av.b, 1.0, 1e-12);
    EXPECT_NEAR(h.av.diffusivity, 1.0, 1e-12);
    EXPECT_NEAR(h.av.mu_plus, 1.0, 1e-10);
    EXPECT_NEAR(h.av.mu_minus, 1.0, 1e-10);
}

TEST(HarmonicSrw, CurrentIsMinusHalf) {
    // c = rho_{n+1} Q_{n+1} (m_n - zeta_n m_{n+1}) = 1 * (1/2) * (-1) and the
    // opposite-orientation current is +1/2; both exactly constant.
    const HarmonicData h = harmonic_of(kSrwSpec, -50, 50, 100);
    EXPECT_NEAR(h.cur.c_mean, -0.5, 1e-12);
    EXPECT_LE(h.cur.c_spread, 1e-13);
    EXPECT_NEAR(h.cur.c_minus_mean, 0.5, 1e-12);
    EXPECT_LE(h.cur.c_minus_spread, 1e-13);
}

TEST(HarmonicSrw, LazyWalkDoublesRhoAndHalvesDiffusivity) {
    // Lazified SRW with holding 1/2: the same harmonic coordinate, rho = 2
    // (the flux normalization divides by the halved crossing rate), q = 1/2,
    // hence a = 2, b = 1, D = 1/2.
    const Environment env = lazify(build_environment(kSrwSpec, -50, 50, 100), 0.5);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    for (std::int64_t n = -50; n <= 50; ++n) {
        EXPECT_NEAR(h.mart.m_at(n)(0), static_cast<double>(n), 1e-12);
        EXPECT_NEAR(h.inv.rho_at(n)(0), 2.0, 1e-12);
    }
    EXPECT_NEAR(h.qvar_at(0)(0), 0.5, 1e-12);
    EXPECT_NEAR(h.av.a, 2.0, 1e-12);
    EXPECT_NEAR(h.av.b, 1.0, 1e-12);
    EXPECT_NEAR(h.av.diffusivity, 0.5, 1e-12);
    EXPECT_NEAR(h.cur.c_mean, -0.5, 1e-12);
}

TEST(HarmonicSrw, CoboundaryNormalizationAgreesWithSlope) {
    // On a homogeneous environment the canonical-increment anchoring must
    // reproduce the same coordinate (up to the shared shift convention).
    MartingaleOptions opts;
    opts.normalization = "coboundary";
    const HarmonicData h = harmonic_of(kSrwSpec, -50, 50, 100, opts);
    for (std::int64_t n = -50; n <= 50; ++n) {
        EXPECT_NEAR(h.mart.m_at(n)(0), static_cast<double>(n), 1e-12);
    }
    EXPECT_EQ(h.mart.normalization, "coboundary");
}

TEST(HarmonicUniformStrip, HandComputedValues) {
    // Width-2 uniform strip: P = Q = [[1/4,1/4],[1/4,1/4]], R = 0. The layer
    // coordinate is itself harmonic, rho = (1/4, 1/4) under the 1/(2m) flux
    // normalization, q = 1, and the current is -1/4.
    const char* spec = R"({"kind":"constant","m":2,
        "P":[[0.25,0.25],[0.25,0.25]],
        "Q":[[0.25,0.25],[0.25,0.25]],
        "R":[[0.0,0.0],[0.0,0.0]]})";
    const HarmonicData h = harmonic_of(spec, -40, 40, 80);
    for (std::int64_t n = -40; n <= 40; ++n) {
        EXPECT_NEAR(h.mart.m_at(n)(0), static_cast<double>(n), 1e-11);
        EXPECT_NEAR(h.mart.m_at(n)(1), static_cast<double>(n), 1e-11);
        EXPECT_NEAR(h.inv.rho_at(n)(0), 0.25, 1e-11);
        EXPECT_NEAR(h.inv.rho_at(n)(1), 0.25, 1e-11);
    }
    EXPECT_NEAR(h.cur.c_mean, -0.25, 1e-11);
    EXPECT_LE(h.cur.c_spread, 1e-11);
    EXPECT_NEAR(h.av.a, 0.5, 1e-11);
    EXPECT_NEAR(h.av.b, 0.5, 1e-11);
    EXPECT_NEAR(h.av.diffusivity, 1.0, 1e-11);
}

// ===== structural residuals on a genuinely inhomogeneous strip =====

TEST(HarmonicQuasiperiodic, StructuralResiduals) {
    const HarmonicData h = harmonic_of(kQpSpec, -200, 200, 150);
    EXPECT_LE(h.mart.residual, 1e-11);
    EXPECT_LE(h.inv.residual, 1e-13);
    // Conserved current at the normalized value -1/(2m), constant in n.
    EXPECT_NEAR(h.cur.c_mean, -0.25, 1e-11);
    EXPECT_LE(h.cur.c_spread, 1e-10);
    EXPECT_NEAR(h.cur.c_minus_mean, 0.25, 1e-11);
    EXPECT_LE(h.cur.c_minus_spread, 1e-10);
    // Positivity and a strictly increasing coordinate.
    for (std::int64_t n = -200; n <= 200; ++n) {
        EXPECT_GT(h.inv.rho_at(n).minCoeff(), 0.0);
        if (n < 200) {
            EXPECT_GT(h.mart.m_at(n + 1).minCoeff(), h.mart.m_at(n).maxCoeff() - 1e-9);
        }
    }
    EXPECT_GT(h.av.diffusivity, 0.0);
    // The half-window averages agree with the full-window ones (ergodicity).
    EXPECT_NEAR(h.av.a_half, h.av.a, 0.01 * h.av.a);
    EXPECT_NEAR(h.av.b_half, h.av.b, 0.01 * h.av.b);
}

TEST(HarmonicQuasiperiodic, CanonicalIncrementFormulaMatches) {
    // The convergent-series increment formula reproduces m_{n} - m_{n-1}
    // with unit scale, and rho is proportional to l / beta~ across the window.
    const Environment env = build_environment(kQpSpec, -200, 200, 150);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    const DeltaReport d = delta_formula(hier, h.mart);
    EXPECT_NEAR(d.match_scale, 1.0, 1e-9);
    EXPECT_LE(d.match_rel_err, 1e-10);
    EXPECT_LE(d.tail_bound, 1e-10);
    EXPECT_GE(d.terms_used, 1);
    EXPECT_LE(rho_coboundary_spread(hier, h.inv), 1e-12);
}

TEST(HarmonicLazify, PreservesMartingaleAndScalesDiffusivity) {
    // Lazification by r leaves the harmonic coordinate unchanged and scales
    // the diffusivity by exactly (1 - r): q shrinks by (1-r) while rho grows
    // by 1/(1-r) under the flux normalization, so b is unchanged and
    // a -> a / (1-r).
    const double r = 0.4;
    const Environment env = build_environment(kQpSpec, -150, 150, 150);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData base = compute_harmonic(env, hier);
    const Environment lz = lazify(env, r);
    const HierarchyData lz_hier = compute_hierarchy(lz);
    const HarmonicData lazy = compute_harmonic(lz, lz_hier);
    for (std::int64_t n = -150; n <= 150; ++n) {
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(lazy.mart.m_at(n)(i), base.mart.m_at(n)(i), 1e-8);
            EXPECT_NEAR(lazy.inv.rho_at(n)(i), base.inv.rho_at(n)(i) / (1.0 - r), 1e-9);
        }
    }
    EXPECT_NEAR(lazy.av.b, base.av.b, 1e-10);
    EXPECT_NEAR(lazy.av.a, base.av.a / (1.0 - r), 1e-10);
    EXPECT_NEAR(lazy.av.diffusivity, (1.0 - r) * base.av.diffusivity, 1e-10);
}

// ===== product coboundaries and skew parameters =====

TEST(HarmonicSkew, SingleSitePerturbationClosedForm) {
    // A single defect p~_0 = 0.6 (probability of stepping left) against the
    // SRW base. The coboundary ratios converge after one layer, so the tail
    // means are exact: beta+ = p_0/p~_0 * (q~_0/q_0) ... = 2/3, beta- = 1,
    // and the width-1 product parameter gives the exit probability 0.6.
    const char* pert_spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.0,"unbias":false,"overrides":[[0,-0.1]]})";
    const Environment base = build_environment(kSrwSpec, -400, 400, 200);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = build_environment(pert_spec, -400, 400, 200);
    const HierarchyData pert_h = compute_hierarchy(pert);
    const SkewReport sk = beta_and_skew(base, base_h, pert, pert_h);
    EXPECT_NEAR(sk.beta_plus, 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(sk.beta_minus, 1.0, 1e-9);
    EXPECT_NEAR(sk.beta_tilde_plus, 5.0 / 6.0, 1e-9);
    EXPECT_NEAR(sk.beta_tilde_minus, 1.25, 1e-9);
    EXPECT_NEAR(sk.theta, 1.5, 1e-9);
    EXPECT_NEAR(sk.p_beta_minus, 0.6, 1e-9);
    EXPECT_NEAR(sk.p_beta_plus, 0.4, 1e-9);
    EXPECT_NEAR(sk.upsilon, 2.0 / 3.0, 1e-9);
    EXPECT_NEAR(sk.p_upsilon, 0.4, 1e-9);
    EXPECT_LE(sk.tail_gap, 1e-12);

    // JSON report round-trips the headline numbers.
    const std::string js = skew_to_json(sk);
    EXPECT_NE(js.find("beta_plus"), std::string::npos);
    EXPECT_NE(js.find("p_beta_minus"), std::string::npos);
}

TEST(HarmonicSkew, SidedIdentitiesSingleSite) {
    // One-sided averages of the perturbed environment against the base ones:
    // mu+- = beta+-, a+- = a / beta+-, b+- = b beta+-. A single-site defect
    // makes all of these exact to rounding.
    const char* pert_spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.0,"unbias":false,"overrides":[[0,-0.1]]})";
    const Environment base = build_environment(kSrwSpec, -400, 400, 200);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = build_environment(pert_spec, -400, 400, 200);
    const HierarchyData pert_h = compute_hierarchy(pert);
    const SidedIdentityReport rep = sided_identities(base, base_h, pert, pert_h);
    EXPECT_LE(rep.rel_err_a_plus, 1e-10);
    EXPECT_LE(rep.rel_err_a_minus, 1e-10);
    EXPECT_LE(rep.rel_err_b_plus, 1e-10);
    EXPECT_LE(rep.rel_err_b_minus, 1e-10);
    EXPECT_LE(rep.rel_err_mu_plus, 1e-10);
    EXPECT_LE(rep.rel_err_mu_minus, 1e-10);
}

TEST(HarmonicSkew, SidedIdentitiesDecayingPerturbation) {
    // Square-summable one-signed perturbation of the SRW: the identities hold
    // in the limit; with a window of 400 layers the relative errors sit well
    // under one percent.
    const char* pert_spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.1,"sign":"positive","unbias":false})";
    const Environment base = build_environment(kSrwSpec, -400, 400, 200);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = build_environment(pert_spec, -400, 400, 200);
    const HierarchyData pert_h = compute_hierarchy(pert);
    const SidedIdentityReport rep = sided_identities(base, base_h, pert, pert_h);
    EXPECT_LE(rep.rel_err_a_plus, 0.02);
    EXPECT_LE(rep.rel_err_a_minus, 0.02);
    EXPECT_LE(rep.rel_err_b_plus, 0.02);
    EXPECT_LE(rep.rel_err_b_minus, 0.02);
    EXPECT_LE(rep.rel_err_mu_plus, 0.02);
    EXPECT_LE(rep.rel_err_mu_minus, 0.02);
    // The two sides genuinely differ here (no accidental symmetry).
    EXPECT_GT(std::abs(rep.beta_plus - rep.beta_minus), 0.1);
}

TEST(HarmonicSkew, StripPerturbationIdentities) {
    // The same identities on a width-2 strip with a layer-decaying
    // perturbation applied to the quasiperiodic base.
    const Environment base = build_environment(kQpSpec, -300, 300, 200);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = perturb(base, 2.0, 0.1, "positive");
    const HierarchyData pert_h = compute_hierarchy(pert);
    const SidedIdentityReport rep = sided_identities(base, base_h, pert, pert_h);
    EXPECT_LE(rep.rel_err_a_plus, 0.02);
    EXPECT_LE(rep.rel_err_a_minus, 0.02);
    EXPECT_LE(rep.rel_err_b_plus, 0.02);
    EXPECT_LE(rep.rel_err_b_minus, 0.02);
    EXPECT_LE(rep.rel_err_mu_plus, 0.01);
    EXPECT_LE(rep.rel_err_mu_minus, 0.01);
}

// ===== perturbation decay slopes =====

TEST(HarmonicDecay, QuadraticPerturbationDecaysQuadratically) {
    // A 1/n^2-decaying perturbation of the strip moves every hierarchy object
    // by O(1/n^2); the fitted log-log slopes sit near -2.
    const Environment base = build_environment(kQpSpec, -300, 300, 200);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = perturb(base, 2.0, 0.1, "positive");
    const HierarchyData pert_h = compute_hierarchy(pert);
    const DecayReport rep = perturbation_decay(base_h, pert_h, 4, 120);
    EXPECT_GE(rep.slope_zeta, -2.3);
    EXPECT_LE(rep.slope_zeta, -1.7);
    EXPECT_GE(rep.slope_A, -2.2);
    EXPECT_LE(rep.slope_A, -1.8);
    EXPECT_GE(rep.slope_lambda, -2.2);
    EXPECT_LE(rep.slope_lambda, -1.8);
    EXPECT_GE(rep.slope_l, -2.3);
    EXPECT_LE(rep.slope_l, -1.7);
    EXPECT_EQ(rep.fit_lo, 4);
    EXPECT_EQ(rep.fit_hi, 120);
}

TEST(HarmonicDecay, ArgumentValidation) {
    const Environment base = build_environment(kQpSpec, -60, 60, 100);
    const HierarchyData base_h = compute_hierarchy(base);
    const Environment pert = perturb(base, 2.0, 0.1, "positive");
    const HierarchyData pert_h = compute_hierarchy(pert);
    EXPECT_THROW(perturbation_decay(base_h, pert_h, 0, 30), ConfigInvalid);
    EXPECT_THROW(perturbation_decay(base_h, pert_h, 10, 10), ConfigInvalid);
    EXPECT_THROW(perturbation_decay(base_h, pert_h, 4, 500), InsufficientWindow);
}

// ===== rate exponents of the averaging conditions =====

TEST(HarmonicRates, ExactOnHomogeneousEnvironment) {
    // All three window deviations vanish identically for the SRW; the fits
    // report the degenerate-exact flag instead of fitting noise.
    const Environment env = build_environment(kSrwSpec, -400, 400, 100);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    RateOptions opts;
    opts.window_sizes = {8, 16, 32, 64};
    const RateReport rep = rate_exponents(env, h.mart, h.inv, h.qvar, opts);
    EXPECT_TRUE(rep.martingale.exact);
    EXPECT_TRUE(rep.occupation.exact);
    EXPECT_TRUE(rep.quad_var.exact);
    EXPECT_DOUBLE_EQ(rep.martingale.beta1, 1.0);
    EXPECT_DOUBLE_EQ(rep.occupation.beta1, 1.0);
    EXPECT_DOUBLE_EQ(rep.quad_var.beta1, 1.0);
    ASSERT_EQ(rep.martingale.max_dev.size(), 4u);
    for (double d : rep.martingale.max_dev) EXPECT_LE(d, 1e-8);

    const std::string js = rate_to_json(rep);
    EXPECT_NE(js.find("martingale"), std::string::npos);
    EXPECT_NE(js.find("beta1"), std::string::npos);
}

TEST(HarmonicRates, NeedsFourWindowSizes) {
    const Environment env = build_environment(kSrwSpec, -100, 100, 50);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    RateOptions opts;
    opts.window_sizes = {8, 16, 32};
    EXPECT_THROW(rate_exponents(env, h.mart, h.inv, h.qvar, opts), ConfigError);
}

TEST(HarmonicRates, BoundedDeviationsOnQuasiperiodic) {
    // Quasiperiodic coboundaries are smooth, so the window deviations stay
    // bounded in L and every fitted exponent lands at or above 0.9.
    const Environment env = build_environment(kQpSpec, -1000, 1000, 300);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    RateOptions opts;
    opts.window_sizes = {16, 32, 64, 128, 256};
    const RateReport rep = rate_exponents(env, h.mart, h.inv, h.qvar, opts);
    EXPECT_GE(rep.martingale.beta1, 0.9);
    EXPECT_GE(rep.occupation.beta1, 0.9);
    EXPECT_GE(rep.quad_var.beta1, 0.9);
}

TEST(HarmonicRates, SquareRootFluctuationsOnIndependent) {
    // Independent balanced environments fluctuate like sqrt(L): the
    // occupation exponent fits near 1/2 while the embedded-walk martingale
    // is exactly linear (degenerate-exact).
    const char* spec = R"({"kind":"iid-balanced","m":2,"seed":7})";
    const Environment env = build_environment(spec, -1000, 1000, 300);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    RateOptions opts;
    opts.window_sizes = {16, 32, 64, 128, 256};
    const RateReport rep = rate_exponents(env, h.mart, h.inv, h.qvar, opts);
    EXPECT_TRUE(rep.martingale.exact);
    EXPECT_GE(rep.occupation.beta1, 0.3);
    EXPECT_LE(rep.occupation.beta1, 0.7);
    EXPECT_FALSE(rep.occupation.exact);
}

// ===== guard rails =====

TEST(HarmonicErrors, DegenerateMartingaleOnDriftedEnvironment) {
    // A uniformly drifted walk has exponentially growing increments u_n; the
    // log-scale guard rejects it instead of overflowing.
    const char* biased = R"({"kind":"constant","m":1,"P":[[0.4]],"Q":[[0.6]],"R":[[0.0]]})";
    const Environment env = build_environment(biased, -200, 200, 100);
    const HierarchyData hier = compute_hierarchy(env);
    MartingaleOptions opts;
    opts.u_log_guard = 50.0;
    EXPECT_THROW(compute_harmonic(env, hier, opts), DegenerateMartingale);
}

TEST(HarmonicErrors, UnboundedIncrementGuard) {
    const Environment env = build_environment(kSrwSpec, -50, 50, 100);
    const HierarchyData hier = compute_hierarchy(env);
    MartingaleOptions opts;
    opts.max_increment = 0.5;  // the SRW increment is exactly 1
    EXPECT_THROW(compute_harmonic(env, hier, opts), UnboundedIncrements);
}

TEST(HarmonicErrors, UnknownNormalization) {
    const Environment env = build_environment(kSrwSpec, -50, 50, 100);
    const HierarchyData hier = compute_hierarchy(env);
    MartingaleOptions opts;
    opts.normalization = "affine";
    EXPECT_THROW(compute_harmonic(env, hier, opts), ConfigInvalid);
}

// ===== CSV dump =====

TEST(HarmonicCsv, OneRowPerSitePlusHeader) {
    const Environment env = build_environment(kQpSpec, -30, 30, 100);
    const HierarchyData hier = compute_hierarchy(env);
    const HarmonicData h = compute_harmonic(env, hier);
    const std::string csv = harmonic_to_csv(env, hier, h);
    EXPECT_EQ(csv.rfind("layer,lane,", 0), 0u);
    const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    EXPECT_EQ(rows, 1u + 61u * 2u);  // header + (layers) * (width)
}

}  // namespace
