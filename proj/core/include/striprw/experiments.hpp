#pragma once

/// @file experiments.hpp
/// @brief Statistical verification of the limit theorems against predictions
/// from the harmonic/green modules, with explicit tolerances and Monte Carlo
/// error bars.
///
/// Pass rule: every comparison carries a tolerance and an MC standard error;
/// an absolute check passes when |observed - predicted| <= tol + 3 mc, an
/// upper check when observed <= predicted + tol + 3 mc. Predictions come only
/// from the analytic modules, never fitted to the same Monte Carlo data; the
/// *_override knobs exist solely to wire negative controls.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/harmonic.hpp"
#include "striprw/walker.hpp"

namespace striprw {

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

enum class CheckKind { kAbs, kUpper };

struct CheckLine {
    std::string name;
    double observed = 0.0;
    double predicted = 0.0;
    double tolerance = 0.0;
    double mc_error = 0.0;
    CheckKind kind = CheckKind::kAbs;
    bool pass = false;
};

struct ExperimentReport {
    std::string name;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::int64_t sample_size = 0;
    std::vector<CheckLine> checks;
    std::vector<std::pair<std::string, double>> values;  ///< auxiliary numbers

    bool passed() const;
    double value(const std::string& key) const;  ///< lookup, throws if missing
};

std::string report_to_json(const ExperimentReport& rep);
std::string report_to_text(const ExperimentReport& rep);

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

/// One-sample Kolmogorov-Smirnov distance; `x_shift` implements the lattice
/// continuity correction (the reference CDF is evaluated at x + x_shift).
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf,
                    double x_shift = 0.0);

/// Two-sample Kolmogorov-Smirnov distance (tie-aware).
double ks_two_sample(std::vector<double> a, std::vector<double> b);

double normal_cdf(double x);
/// CDF of |N(0, sigma^2)|.
double half_normal_cdf(double x, double sigma);

// ---------------------------------------------------------------------------
// Observable diagnostics
// ---------------------------------------------------------------------------

/// Max deviation of rolling window averages of rho_n . h_n (window length
/// `scale`) from the full-window average; the self-averaging certificate.
double self_averaging_deviation(const Observable& obs, const InvariantMeasure& inv,
                                std::int64_t window_lo, std::int64_t window_hi,
                                std::int64_t scale);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

inline constexpr double kNoOverride = std::numeric_limits<double>::quiet_NaN();

struct CltOptions {
    std::vector<std::int64_t> horizons = {100, 10000};
    std::int64_t n_traj = 100000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    std::vector<double> t_marks = {0.5, 1.0};  ///< times of the covariance checks
    double ks_tol = 0.05;
    double d_override = kNoOverride;  ///< replaces D (negative control)
};

/// Endpoint CLT at several horizons (KS vs the normal law, lattice-corrected
/// when the walk has period 2), KS monotonicity across horizons, Brownian
/// two-point covariance at the largest horizon, and the martingale-coordinate
/// cross-check.
ExperimentReport clt_experiment(const Environment& env, const HarmonicData& harm,
                                const CltOptions& options);

struct LlnOptions {
    std::int64_t horizon = 10000;
    std::int64_t n_traj = 10000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    double rel_tol = 0.02;
    double band_eps = 0.05;  ///< reported mass outside +-band_eps*|target|
    double sa_rel_tol = 0.25;  ///< self-averaging precondition tolerance
    double target_override = kNoOverride;
};

/// Time-average law of large numbers for an additive observable: mean of
/// H_N/N against the ratio of window averages (rho h)/(rho 1).
ExperimentReport lln_experiment(const Environment& env, const HarmonicData& harm,
                                const Observable& obs, const LlnOptions& options);

struct LocalTimeOptions {
    std::int64_t horizon = 10000;
    std::int64_t n_traj = 100000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    std::int64_t site_layer = 0;
    int site_lane = 1;
    double mean_rel_tol = 0.05;
    double ks_tol = 0.03;
    std::int64_t oracle_horizon = 10000;  ///< scaled-walk reference, off-origin site
    std::int64_t oracle_traj = 1000;
    double mean_override = kNoOverride;
};

/// Law of the scaled visit count V/(rho sqrt(N)) at a fixed site against the
/// Brownian local-time law: half-normal reference at the origin, a seeded
/// scaled-walk reference ensemble off the origin.
ExperimentReport local_time_experiment(const Environment& env, const HarmonicData& harm,
                                       const LocalTimeOptions& options);

struct LltOptions {
    std::vector<std::int64_t> horizons = {10000};
    std::int64_t n_traj = 2000000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    std::vector<std::int64_t> k_values;  ///< empty = {0, sqrt(N), 2 sqrt(N)} per N
    double rel_tol = 0.10;
    std::int64_t min_count = 100;
    double ratio_override = kNoOverride;
};

/// Local limit theorem: point probabilities at several displacements divided
/// by (Gaussian cell mass x rho) against 1/a; period-2 environments use the
/// parity form with factor 2.
ExperimentReport llt_experiment(const Environment& env, const HarmonicData& harm,
                                const LltOptions& options);

struct MixingOptions {
    std::vector<std::int64_t> horizons = {1000, 10000};
    std::int64_t n_traj = 20000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    std::vector<std::pair<std::int64_t, int>> starts = {{0, 1}, {10, 1}};
    double rel_tol = 0.05;
    double target_override = kNoOverride;
};

/// Environment mixing: E h(xi(N)) against h-average / a at several horizons
/// and starting points, plus cross-start agreement.
ExperimentReport mixing_experiment(const Environment& env, const HarmonicData& harm,
                                   const Observable& obs, const MixingOptions& options);

struct SemilocalOptions {
    double gamma = 0.3;  ///< interval length N^gamma, gamma in (0, 1/2)
    std::int64_t horizon = 10000;
    std::int64_t n_traj = 200000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    double rel_tol = 0.15;
    std::int64_t min_count = 100;
};

/// Interval probabilities at the intermediate scale N^gamma against the
/// Gaussian integral, over a grid covering +-2 sqrt(DN).
ExperimentReport semilocal_experiment(const Environment& env, const HarmonicData& harm,
                                      const SemilocalOptions& options);

/// Reference ensemble for skew-limit marginals: the walk that is symmetric
/// off the origin and steps right with probability p at the origin; returns
/// X_N / sqrt(N) samples.
std::vector<double> skew_rw_oracle(double p, std::int64_t horizon, std::int64_t n_traj,
                                   std::uint64_t seed, int num_threads = 0);

struct SkewExperimentOptions {
    std::int64_t horizon = 100000;
    std::int64_t n_traj = 100000;
    std::uint64_t seed = 1;
    int num_threads = 0;
    double prob_tol = 0.02;
    double ks_tol = 0.03;
    std::int64_t exit_halfwidth = 100;
    double exit_tol = 1e-9;
};

struct SkewExperimentResult {
    ExperimentReport report;
    std::string selected_orientation;  ///< "p_beta_plus" or "p_beta_minus"
    double p_selected = 0.0;
    double p_empirical = 0.0;
};

/// Skew limit in a perturbed environment: empirical P(X_N > 0) against both
/// candidate orientations of the skewness formula (the closer one is
/// selected and reported), KS of |X_N|/sqrt(DN) against the skew-walk oracle
/// with the selected parameter, and the exact exit probability against
/// beta_minus / (beta_plus + beta_minus).
SkewExperimentResult skew_experiment(const Environment& base_env, const HarmonicData& base_harm,
                                     const Environment& pert_env, const HarmonicData& pert_harm,
                                     const SkewReport& skew,
                                     const SkewExperimentOptions& options);

}  // namespace striprw
