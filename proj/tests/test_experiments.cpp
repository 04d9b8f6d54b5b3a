#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "striprw/env.hpp"
#include "striprw/errors.hpp"
#include "striprw/experiments.hpp"
#include "striprw/harmonic.hpp"
#include "striprw/hierarchy.hpp"
#include "striprw/walker.hpp"

namespace {

using namespace striprw;
using nlohmann::json;

const char* kSrwSpec = R"({"kind":"constant","m":1,"P":[[0.5]],"Q":[[0.5]],"R":[[0.0]]})";
const char* kQpSpec = R"({"kind":"quasiperiodic","m":2,"seed":5,"dim":1,"harmonics":3})";

struct Bundle {
    Environment env;
    HierarchyData hier;
    HarmonicData harm;
};

Bundle bundle_of(const Environment& env) {
    HierarchyData hier = compute_hierarchy(env);
    HarmonicData harm = compute_harmonic(env, hier);
    return {env, std::move(hier), std::move(harm)};
}

Bundle bundle_of(const char* spec, std::int64_t wlo, std::int64_t whi, std::int64_t buffer) {
    return bundle_of(build_environment(spec, wlo, whi, buffer));
}

double uniform_cdf(double x) { return std::clamp(x, 0.0, 1.0); }

const CheckLine& check_named(const ExperimentReport& rep, const std::string& prefix) {
    for (const auto& c : rep.checks) {
        if (c.name.rfind(prefix, 0) == 0) return c;
    }
    ADD_FAILURE() << "no check named " << prefix;
    static CheckLine dummy;
    return dummy;
}

// ===== statistics helpers =====

TEST(ExperimentStats, KsAgainstKnownDistances) {
    // A single sample at the uniform median: distance exactly 1/2.
    EXPECT_NEAR(ks_statistic({0.5}, uniform_cdf), 0.5, 1e-15);
    // The quantile grid (i - 1/2)/n has distance exactly 1/(2n).
    const int n = 1000;
    std::vector<double> grid(n);
    for (int i = 0; i < n; ++i) grid[static_cast<std::size_t>(i)] = (i + 0.5) / n;
    EXPECT_NEAR(ks_statistic(grid, uniform_cdf), 0.5 / n, 1e-12);
    // A rigid shift moves the distance by the shift size.
    std::vector<double> shifted = grid;
    for (double& x : shifted) x += 0.1;
    EXPECT_NEAR(ks_statistic(shifted, uniform_cdf), 0.1 + 0.5 / n, 1e-9);
    // The x_shift argument evaluates the reference at x + shift, undoing it.
    EXPECT_NEAR(ks_statistic(shifted, uniform_cdf, -0.1), 0.5 / n, 1e-9);
    EXPECT_THROW(ks_statistic({}, uniform_cdf), EmptySample);
}

TEST(ExperimentStats, TwoSampleKs) {
    EXPECT_NEAR(ks_two_sample({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), 0.0, 1e-15);
    EXPECT_NEAR(ks_two_sample({0.0, 1.0}, {10.0, 11.0}), 1.0, 1e-15);
    EXPECT_NEAR(ks_two_sample({1.0, 2.0}, {1.5, 2.5}), 0.5, 1e-15);
    // Ties across the samples are handled symmetrically.
    EXPECT_NEAR(ks_two_sample({1.0, 1.0, 2.0}, {1.0, 2.0, 2.0}), 1.0 / 3.0, 1e-12);
}

TEST(ExperimentStats, NormalAndHalfNormalCdf) {
    EXPECT_NEAR(normal_cdf(0.0), 0.5, 1e-12);
    EXPECT_NEAR(normal_cdf(1.959963985), 0.975, 1e-7);
    EXPECT_NEAR(normal_cdf(-1.0) + normal_cdf(1.0), 1.0, 1e-12);
    EXPECT_NEAR(half_normal_cdf(1.0, 1.0), 0.682689492137, 1e-9);
    EXPECT_NEAR(half_normal_cdf(0.0, 2.0), 0.0, 1e-15);
    EXPECT_NEAR(half_normal_cdf(-0.5, 1.0), 0.0, 1e-15);
    // Scale covariance: P(|N(0,s^2)| <= x) = P(|N(0,1)| <= x/s).
    EXPECT_NEAR(half_normal_cdf(0.7, 0.5), half_normal_cdf(1.4, 1.0), 1e-12);
}

TEST(ExperimentStats, SelfAveragingDeviation) {
    // Constant observable against the homogeneous measure: every window mean
    // equals the global mean.
    const Bundle srw = bundle_of(kSrwSpec, -100, 100, 50);
    const Observable c = make_constant_observable(srw.env, 0.7);
    EXPECT_NEAR(self_averaging_deviation(c, srw.harm.inv, -100, 100, 10), 0.0, 1e-12);
    // A lane indicator on the strip fluctuates, but only mildly.
    const Bundle qp = bundle_of(kQpSpec, -200, 200, 150);
    const Observable lane = make_lane_indicator(qp.env, 2);
    const double dev = self_averaging_deviation(lane, qp.harm.inv, -200, 200, 20);
    EXPECT_GT(dev, 0.0);
    EXPECT_LT(dev, 0.2);
}

// ===== endpoint CLT =====

TEST(ExperimentClt, GaussianEndpointsOnSrw) {
    const Bundle srw = bundle_of(kSrwSpec, -250, 250, 50);
    CltOptions opt;
    opt.horizons = {400};
    opt.n_traj = 20000;
    opt.seed = 3;
    const ExperimentReport rep = clt_experiment(srw.env, srw.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    EXPECT_NEAR(rep.value("diffusivity_used"), 1.0, 1e-12);
    EXPECT_EQ(rep.value("lattice_correction"), 1.0);
    // Even lattice-corrected, the endpoint atoms keep KS near half the cell
    // mass 2 phi(0)/sqrt(N) ~ 0.04 at this horizon.
    EXPECT_LE(rep.value("ks_n400"), 0.045);
    // Two-point covariance of the unscaled path: Cov(W(1/2), W(1)) = D/2.
    const CheckLine& cov = check_named(rep, "covariance_w0.5_w1");
    EXPECT_NEAR(cov.predicted, 0.5, 1e-12);
    EXPECT_TRUE(cov.pass);
}

TEST(ExperimentClt, DetectsWrongDiffusivity) {
    const Bundle srw = bundle_of(kSrwSpec, -250, 250, 50);
    CltOptions opt;
    opt.horizons = {400};
    opt.n_traj = 20000;
    opt.seed = 3;
    opt.d_override = 4.0;  // scaled endpoints then have variance 1/4
    const ExperimentReport rep = clt_experiment(srw.env, srw.harm, opt);
    EXPECT_FALSE(rep.passed());
    EXPECT_FALSE(check_named(rep, "ks_endpoint_n400").pass);
    EXPECT_GT(rep.value("ks_n400"), 0.08);
}

TEST(ExperimentClt, KsShrinksWithTheHorizon) {
    // On the strip the small-horizon law is visibly non-Gaussian, so the KS
    // distance decreases from N = 100 to N = 2500.
    const Bundle qp = bundle_of(kQpSpec, -400, 400, 150);
    CltOptions opt;
    opt.horizons = {100, 2500};
    opt.n_traj = 10000;
    opt.seed = 11;
    const ExperimentReport rep = clt_experiment(qp.env, qp.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    EXPECT_LT(rep.value("ks_n2500"), rep.value("ks_n100"));
    EXPECT_EQ(rep.value("lattice_correction"), 0.0);  // R > 0: no parity lattice
}

// ===== law of large numbers =====

TEST(ExperimentLln, ConstantObservableIsExact) {
    const Bundle srw = bundle_of(kSrwSpec, -150, 150, 50);
    const Observable c = make_constant_observable(srw.env, 0.7);
    LlnOptions opt;
    opt.horizon = 500;
    opt.n_traj = 200;
    const ExperimentReport rep = lln_experiment(srw.env, srw.harm, c, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    EXPECT_NEAR(rep.value("target"), 0.7, 1e-12);
    EXPECT_NEAR(rep.value("mean"), 0.7, 1e-12);
    EXPECT_EQ(rep.value("mass_outside_band"), 0.0);
}

TEST(ExperimentLln, LaneOccupationOnTheStrip) {
    const Bundle qp = bundle_of(kQpSpec, -400, 400, 150);
    const Observable lane = make_lane_indicator(qp.env, 2);
    LlnOptions opt;
    opt.horizon = 2000;
    opt.n_traj = 5000;
    opt.seed = 4;
    const ExperimentReport rep = lln_experiment(qp.env, qp.harm, lane, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    const double target = rep.value("target");
    EXPECT_GT(target, 0.0);
    EXPECT_LT(target, 1.0);

    // Negative control: a displaced target is rejected.
    LlnOptions bad = opt;
    bad.target_override = target + 0.2;
    const ExperimentReport rep_bad = lln_experiment(qp.env, qp.harm, lane, bad);
    EXPECT_FALSE(rep_bad.passed());
    EXPECT_FALSE(check_named(rep_bad, "time_average").pass);
}

// ===== local time =====

TEST(ExperimentLocalTime, HalfNormalLawAtTheOrigin) {
    // Lazified SRW: a = 2, so V/(rho sqrt(N)) converges to |N(0, 1/2)| with
    // mean sqrt(1/pi).
    const Environment env = lazify(build_environment(kSrwSpec, -300, 300, 50), 0.5);
    const Bundle lz = bundle_of(env);
    LocalTimeOptions opt;
    opt.horizon = 2500;
    opt.n_traj = 20000;
    opt.seed = 6;
    const ExperimentReport rep = local_time_experiment(lz.env, lz.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    EXPECT_NEAR(rep.value("mean_predicted"), std::sqrt(1.0 / M_PI), 1e-12);
    EXPECT_NEAR(rep.value("rho_site"), 2.0, 1e-10);
    EXPECT_LE(rep.value("ks"), 0.03);
}

TEST(ExperimentLocalTime, ScaledWalkOracleOffTheOrigin) {
    const Environment env = lazify(build_environment(kSrwSpec, -300, 300, 50), 0.5);
    const Bundle lz = bundle_of(env);
    LocalTimeOptions opt;
    opt.horizon = 2500;
    opt.n_traj = 10000;
    opt.seed = 6;
    opt.site_layer = 10;  // x = 0.2 in diffusive units
    opt.oracle_horizon = 2500;
    opt.oracle_traj = 5000;
    opt.ks_tol = 0.05;
    const ExperimentReport rep = local_time_experiment(lz.env, lz.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);

    // Negative control: a doubled mean prediction is rejected.
    LocalTimeOptions bad = opt;
    bad.mean_override = 2.0 * rep.value("mean_predicted");
    const ExperimentReport rep_bad = local_time_experiment(lz.env, lz.harm, bad);
    EXPECT_FALSE(rep_bad.passed());
    EXPECT_FALSE(check_named(rep_bad, "mean_scaled_visits").pass);
}

// ===== local limit theorem =====

TEST(ExperimentLlt, ParityFormOnSrw) {
    // Holding-free SRW supports only one parity: point masses carry the
    // factor-2 parity form, and the ratio against the Gaussian cell is 1/a = 1.
    const Bundle srw = bundle_of(kSrwSpec, -250, 250, 50);
    LltOptions opt;
    opt.horizons = {400};
    opt.n_traj = 50000;
    opt.seed = 9;
    const ExperimentReport rep = llt_experiment(srw.env, srw.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    EXPECT_EQ(rep.value("parity_form"), 1.0);
    EXPECT_NEAR(rep.value("ratio_predicted"), 1.0, 1e-12);
    const CheckLine& at_zero = check_named(rep, "ratio_n400_k0");
    EXPECT_NEAR(at_zero.predicted, 2.0, 1e-12);  // parity factor
    EXPECT_GE(rep.value("count_n400_k40"), 100.0);

    // Negative control: an inflated density prediction is rejected.
    LltOptions bad = opt;
    bad.ratio_override = 2.0;
    const ExperimentReport rep_bad = llt_experiment(srw.env, srw.harm, bad);
    EXPECT_FALSE(rep_bad.passed());
}

TEST(ExperimentLlt, InsufficientCountsIsAnError) {
    const Bundle srw = bundle_of(kSrwSpec, -250, 250, 50);
    LltOptions opt;
    opt.horizons = {400};
    opt.n_traj = 300;  // far too small for counts at k = 2 sqrt(N)
    EXPECT_THROW(llt_experiment(srw.env, srw.harm, opt), InsufficientCounts);
}

// ===== environment mixing =====

TEST(ExperimentMixing, LazifiedWalkForgetsItsStart) {
    // The even-layer indicator against its rho-average 1/2: holding kills the
    // parity memory after a handful of steps, for both starting points.
    const Environment env = lazify(build_environment(kSrwSpec, -250, 250, 50), 0.5);
    const Bundle lz = bundle_of(env);
    const Observable even = make_even_layer_indicator(lz.env);
    MixingOptions opt;
    opt.horizons = {200, 1000};
    opt.starts = {{0, 1}, {15, 1}};
    opt.n_traj = 5000;
    opt.seed = 14;
    const ExperimentReport rep = mixing_experiment(lz.env, lz.harm, even, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    // 251 of the 501 window layers are even, hence the tiny offset from 1/2.
    EXPECT_NEAR(rep.value("target"), 0.5, 2e-3);

    // Negative control: a displaced target fails every mean check.
    MixingOptions bad = opt;
    bad.target_override = 0.8;
    const ExperimentReport rep_bad = mixing_experiment(lz.env, lz.harm, even, bad);
    EXPECT_FALSE(rep_bad.passed());
    EXPECT_FALSE(check_named(rep_bad, "mean_n1000_start(0,1)").pass);
    // Start agreement is target-free and still passes.
    EXPECT_TRUE(check_named(rep_bad, "start_agreement_n1000").pass);
}

// ===== semilocal interval probabilities =====

TEST(ExperimentSemilocal, IntervalMassesMatchTheGaussian) {
    const Bundle srw = bundle_of(kSrwSpec, -400, 400, 50);
    SemilocalOptions opt;
    opt.horizon = 2500;
    opt.n_traj = 20000;
    opt.seed = 21;
    const ExperimentReport rep = semilocal_experiment(srw.env, srw.harm, opt);
    EXPECT_TRUE(rep.passed()) << report_to_text(rep);
    const double len = rep.value("interval_length");
    EXPECT_EQ(std::fmod(len, 2.0), 0.0);  // even snap on the parity lattice
    EXPECT_GE(rep.value("min_expected_count"), 100.0);
    EXPECT_GE(rep.value("num_intervals"), 10.0);
}

// ===== skew limit =====

TEST(ExperimentSkew, SingleSiteDefectSelectsBetaMinus) {
    const char* pert_spec =
        R"({"kind":"perturbed-srw","kappa":2.0,"amplitude":0.0,"unbias":false,"overrides":[[0,-0.1]]})";
    const Environment base = build_environment(kSrwSpec, -400, 400, 100);
    const HierarchyData base_h = compute_hierarchy(base);
    const HarmonicData base_harm = compute_harmonic(base, base_h);
    const Environment pert = build_environment(pert_spec, -400, 400, 100);
    const HierarchyData pert_h = compute_hierarchy(pert);
    const HarmonicData pert_harm = compute_harmonic(pert, pert_h);
    const SkewReport skew = beta_and_skew(base, base_h, pert, pert_h);

    SkewExperimentOptions opt;
    opt.horizon = 1600;
    opt.n_traj = 20000;
    opt.seed = 5;
    opt.ks_tol = 0.04;
    const SkewExperimentResult res =
        skew_experiment(base, base_harm, pert, pert_harm, skew, opt);
    EXPECT_TRUE(res.report.passed()) << report_to_text(res.report);
    // The defect pushes right with probability 0.6, so the positive-side mass
    // matches beta_minus / (beta_plus + beta_minus) = 0.6.
    EXPECT_EQ(res.selected_orientation, "p_beta_minus");
    EXPECT_NEAR(res.p_selected, 0.6, 1e-9);
    EXPECT_NEAR(res.p_empirical, 0.6, 0.02);
    EXPECT_NEAR(res.report.value("exit_exact"), 0.6, 1e-9);
}

TEST(ExperimentSkew, OracleReducesToSrwAtHalf) {
    // The skew-walk reference with p = 1/2 is the plain symmetric walk.
    const std::vector<double> oracle = skew_rw_oracle(0.5, 900, 10000, 31);
    const Bundle srw = bundle_of(kSrwSpec, -200, 200, 8);
    TrajectorySimulator sim(srw.env);
    TrajectorySpec spec;
    spec.horizon = 900;
    std::vector<double> plain(10000);
    run_ensemble_apply(sim, spec, 10000, 77, 0, [&](std::int64_t i, const TrajectoryStats& st) {
        plain[static_cast<std::size_t>(i)] = static_cast<double>(st.end_layer) / 30.0;
    });
    EXPECT_LE(ks_two_sample(oracle, plain), 0.03);
}

TEST(ExperimentSkew, OracleMirrorSymmetry) {
    // Negating the p-skew walk gives the (1-p)-skew walk in law, and the
    // positive-side mass converges to p.
    std::vector<double> up = skew_rw_oracle(0.7, 900, 10000, 41);
    const std::vector<double> down = skew_rw_oracle(0.3, 900, 10000, 43);
    double pos = 0.0;
    for (double v : up) pos += (v > 0.0) ? 1.0 : (v == 0.0 ? 0.5 : 0.0);
    EXPECT_NEAR(pos / static_cast<double>(up.size()), 0.7, 0.02);
    for (double& v : up) v = -v;
    EXPECT_LE(ks_two_sample(up, down), 0.03);
    EXPECT_THROW(skew_rw_oracle(1.2, 100, 10, 1), ConfigInvalid);
}

// ===== report plumbing and reproducibility =====

TEST(ExperimentReports, JsonRoundTripAndDeterminism) {
    const Bundle srw = bundle_of(kSrwSpec, -150, 150, 50);
    const Observable c = make_constant_observable(srw.env, 0.7);
    LlnOptions opt;
    opt.horizon = 300;
    opt.n_traj = 500;
    opt.seed = 8;
    const ExperimentReport rep = lln_experiment(srw.env, srw.harm, c, opt);

    const std::string js = report_to_json(rep);
    const json j = json::parse(js);
    EXPECT_EQ(j.at("name").get<std::string>(), "lln");
    EXPECT_TRUE(j.at("passed").get<bool>());
    EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 8u);
    EXPECT_GE(j.at("checks").size(), 2u);
    EXPECT_TRUE(j.at("checks").at(0).contains("mc_error"));
    EXPECT_TRUE(j.at("values").contains("target"));

    const std::string text = report_to_text(rep);
    EXPECT_NE(text.find("[PASS]"), std::string::npos);
    EXPECT_EQ(text.find("[FAIL]"), std::string::npos);

    EXPECT_NO_THROW(rep.value("target"));
    EXPECT_THROW(rep.value("no_such_value"), ConfigInvalid);

    // Bitwise reproducibility: identical options produce identical reports.
    const ExperimentReport rep2 = lln_experiment(srw.env, srw.harm, c, opt);
    EXPECT_EQ(report_to_json(rep2), js);

    // A different seed moves the Monte Carlo numbers.
    LlnOptions other = opt;
    other.seed = 9;
    const ExperimentReport rep3 = lln_experiment(srw.env, srw.harm, c, other);
    EXPECT_NE(report_to_json(rep3), js);
}

TEST(ExperimentErrors, OptionValidation) {
    const Bundle srw = bundle_of(kSrwSpec, -100, 100, 50);
    CltOptions clt;
    clt.horizons = {};
    EXPECT_THROW(clt_experiment(srw.env, srw.harm, clt), ConfigInvalid);
    CltOptions marks;
    marks.horizons = {100};
    marks.n_traj = 10;
    marks.t_marks = {1.5};
    EXPECT_THROW(clt_experiment(srw.env, srw.harm, marks), ConfigInvalid);
    SemilocalOptions semi;
    semi.gamma = 0.6;
    EXPECT_THROW(semilocal_experiment(srw.env, srw.harm, semi), ConfigInvalid);
    LlnOptions lln;
    lln.horizon = 0;
    const Observable c = make_constant_observable(srw.env, 1.0);
    EXPECT_THROW(lln_experiment(srw.env, srw.harm, c, lln), ConfigInvalid);
}

}  // namespace
