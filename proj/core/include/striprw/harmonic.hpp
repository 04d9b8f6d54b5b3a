#pragma once

/// @file harmonic.hpp
/// @brief Harmonic objects of an environment: the martingale coordinate m_n,
/// the invariant measure rho_n, the conserved current, quadratic variation,
/// window averages, product coboundaries and skew parameters, and the rate
/// exponents of the averaging conditions.
///
/// Conventions:
///  * u_n = m_n - zeta_n m_{n+1} solves u_n = A_n u_{n-1}; it is built from
///    the hierarchy as u_0 = v_0, u_n = (lambda_n ... lambda_1) v_n for n >= 1
///    and u_n = (lambda_0 ... lambda_{n+1})^{-1} v_n for n <= -1.
///  * m_n is recovered backward from m = 0 at the upper buffer edge via
///    m_n = u_n + zeta_n m_{n+1}, then normalized. "slope" normalization
///    scales so the layer sums M_n = sum_i m_n(i) grow with slope m and
///    shifts so m_0(1) = 0. "coboundary" normalization instead matches the
///    increments to the canonical coboundary formula (see delta_formula),
///    which is the right anchoring when the two slopes differ by side.
///  * rho solves rho_n = rho_{n+1} alpha_n and is scaled once so that
///    rho_n P_n (m_{n+1} - zeta-_{n+1} m_n) = 1/(2m) at the window center.

#include <cstdint>
#include <string>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/hierarchy.hpp"

namespace striprw {

// ---------------------------------------------------------------------------
// Martingale coordinate
// ---------------------------------------------------------------------------

struct MartingaleOptions {
    std::string normalization = "slope";  ///< "slope" or "coboundary"
    double max_increment = 1e4;  ///< empirical increment bound before erroring
    double u_log_guard = 600.0;  ///< |log scale| beyond which u is degenerate
};

struct MartingaleSolution {
    std::int64_t lo = 0, hi = -1;  ///< stored layer range
    std::int64_t window_lo = 0, window_hi = -1;
    std::vector<Vec> u;    ///< normalized increments, u_n = A_n u_{n-1}
    std::vector<Vec> m;    ///< martingale coordinate per layer
    double scale = 1.0;    ///< factor applied to the raw pipeline solution
    double shift = 0.0;
    double increment_bound = 0.0;  ///< max |m(x') - m(x)| over one-step pairs
    double residual = 0.0;         ///< max harmonic-equation defect on window
    std::string normalization;

    const Vec& m_at(std::int64_t n) const;
    const Vec& u_at(std::int64_t n) const;
    /// Layer sum M_n = sum_i m_n(i).
    double layer_sum(std::int64_t n) const;
};

/// Raw increment vectors u_n over the full stored range of `hier`,
/// unnormalized (u_0 = v_0). Throws DegenerateMartingale if the log scale
/// leaves the representable guard band (unbounded potential).
std::vector<Vec> build_u(const HierarchyData& hier, double u_log_guard = 600.0);

MartingaleSolution solve_martingale(const Environment& env, const HierarchyData& hier,
                                    const MartingaleOptions& options = {});

// ---------------------------------------------------------------------------
// Invariant measure
// ---------------------------------------------------------------------------

struct InvariantMeasure {
    std::int64_t lo = 0, hi = -1;
    std::int64_t anchor = 0;  ///< layer where the flux normalization was applied
    std::vector<RowVec> rho;
    double residual = 0.0;  ///< max balance-equation defect on the window

    const RowVec& rho_at(std::int64_t n) const;
    /// Total layer mass rho_n 1.
    double layer_mass(std::int64_t n) const;
};

InvariantMeasure solve_invariant(const Environment& env, const HierarchyData& hier,
                                 const MartingaleSolution& mart);

// ---------------------------------------------------------------------------
// Conserved current
// ---------------------------------------------------------------------------

struct CurrentReport {
    std::int64_t lo = 0, hi = -1;  ///< layers n where both currents exist
    std::vector<double> c;         ///< rho_{n+1} Q_{n+1} (m_n - zeta_n m_{n+1})
    std::vector<double> c_minus;   ///< rho_n P_n (m_{n+1} - zeta-_{n+1} m_n)
    double c_mean = 0.0, c_spread = 0.0;
    double c_minus_mean = 0.0, c_minus_spread = 0.0;
};

CurrentReport current(const Environment& env, const HierarchyData& hier,
                      const MartingaleSolution& mart, const InvariantMeasure& inv);

// ---------------------------------------------------------------------------
// Quadratic variation and window averages
// ---------------------------------------------------------------------------

/// q_n(i) = sum over one-step moves of probability x (m(target) - m_n(i))^2,
/// valid on [lo+1, hi-1]; returned indexed from hier.lo()+1.
std::vector<Vec> quadratic_variation(const Environment& env, const MartingaleSolution& mart);

struct Averages {
    double a = 0.0;  ///< window mean of rho_n 1
    double b = 0.0;  ///< window mean of rho_n q_n
    double diffusivity = 0.0;  ///< D = b / a
    // One-sided versions (n >= 1 resp. n <= -1) and the slopes mu of
    // M_n / m on each side; NaN when the window does not straddle 0.
    double a_plus = 0.0, a_minus = 0.0;
    double b_plus = 0.0, b_minus = 0.0;
    double D_plus = 0.0, D_minus = 0.0;
    double mu_plus = 0.0, mu_minus = 0.0;
    // Convergence diagnostics: the same averages over the central half.
    double a_half = 0.0, b_half = 0.0;
};

Averages window_averages(const Environment& env, const MartingaleSolution& mart,
                         const InvariantMeasure& inv, const std::vector<Vec>& qvar);

// ---------------------------------------------------------------------------
// One-stop harmonic bundle
// ---------------------------------------------------------------------------

struct HarmonicData {
    MartingaleSolution mart;
    InvariantMeasure inv;
    std::vector<Vec> qvar;  ///< indexed from hier.lo()+1
    CurrentReport cur;
    Averages av;

    const Vec& qvar_at(std::int64_t n) const;
    std::int64_t qvar_lo = 0, qvar_hi = -1;
};

HarmonicData compute_harmonic(const Environment& env, const HierarchyData& hier,
                              const MartingaleOptions& options = {});

/// CSV dump over the analysis window: one row per (layer, lane) with the
/// martingale coordinate, invariant measure, quadratic variation, the
/// product coboundaries beta / beta~, and the potential.
std::string harmonic_to_csv(const Environment& env, const HierarchyData& hier,
                            const HarmonicData& harm);

// ---------------------------------------------------------------------------
// Product coboundaries and skew parameters
// ---------------------------------------------------------------------------

struct SkewOptions {
    double tail_fraction = 0.25;  ///< fraction of each side used for tails
    double cauchy_tol = 1e-3;     ///< max gap between half-tail means
};

struct SkewReport {
    double beta_plus = 0.0, beta_minus = 0.0;  ///< limits of beta-bar / beta
    double beta_tilde_plus = 0.0, beta_tilde_minus = 0.0;  ///< same from beta~
    double theta = 0.0;  ///< beta_minus / beta_plus (ratio of one-sided slopes)
    /// The two candidate skew parameters; which orientation describes
    /// P(limit > 0) is decided empirically by the experiments layer.
    double p_beta_plus = 0.0;   ///< beta_plus / (beta_plus + beta_minus)
    double p_beta_minus = 0.0;  ///< beta_minus / (beta_plus + beta_minus)
    double upsilon = 0.0;   ///< width-1 product formula, 0 when m > 1
    double p_upsilon = 0.0; ///< upsilon / (1 + upsilon), 0 when m > 1
    double tail_gap = 0.0;  ///< worst half-tail Cauchy gap observed
};

/// Tail ratios of the perturbed coboundaries against the base ones.
/// Both hierarchies must share the width and overlap in their windows.
SkewReport beta_and_skew(const Environment& base_env, const HierarchyData& base,
                         const Environment& pert_env, const HierarchyData& pert,
                         const SkewOptions& options = {});

std::string skew_to_json(const SkewReport& rep);

// ---------------------------------------------------------------------------
// Canonical increment formula (coboundary route)
// ---------------------------------------------------------------------------

struct DeltaOptions {
    double trunc_tol = 1e-12;  ///< target truncation error of the tail series
    std::int64_t max_terms = 4000;
};

struct DeltaReport {
    std::int64_t lo = 0, hi = -1;  ///< layers with a canonical increment
    std::vector<Vec> delta;        ///< Delta_n = beta_n (sigma_n v_n) 1 + B_{n+1} - B_n
    double tail_bound = 0.0;       ///< certified truncation error of the series
    std::int64_t terms_used = 0;
    /// Least-squares match of s * (m_n - m_{n-1}) against Delta_n over the
    /// window, and the residual of the best match.
    double match_scale = 1.0;
    double match_rel_err = 0.0;

    const Vec& delta_at(std::int64_t n) const;
};

DeltaReport delta_formula(const HierarchyData& hier, const MartingaleSolution& mart,
                          const DeltaOptions& options = {});

/// Consistency scan of rho_n against l_n / beta~_n: coefficient of variation
/// of rho_n(j) * beta~_n / l_n(j) across the window (should be ~0).
double rho_coboundary_spread(const HierarchyData& hier, const InvariantMeasure& inv);

// ---------------------------------------------------------------------------
// Rate exponents of the averaging conditions
// ---------------------------------------------------------------------------

struct RateOptions {
    std::vector<std::int64_t> window_sizes;  ///< L values (>= 4 required)
    int num_centers = 41;
    std::int64_t center_span = 0;  ///< centers range over [-span, span]; 0 = auto
    double degenerate_floor = 1e-8;
};

struct RateFit {
    double beta1 = 0.0;        ///< 1 - slope of log(max deviation) vs log L
    double se = 0.0;           ///< standard error of the fitted slope
    bool exact = false;        ///< all deviations below the degeneracy floor
    std::vector<double> max_dev;  ///< per window size
};

struct RateReport {
    std::vector<std::int64_t> window_sizes;
    RateFit martingale;  ///< |m_{k+L}(1) - m_{k-L}(1) - 2L|
    RateFit occupation;  ///< |sum rho_j 1 - (2L+1) a|
    RateFit quad_var;    ///< |sum rho_j q_j - (2L+1) b|
};

RateReport rate_exponents(const Environment& env, const MartingaleSolution& mart,
                          const InvariantMeasure& inv, const std::vector<Vec>& qvar,
                          const RateOptions& options);

std::string rate_to_json(const RateReport& rep);

// ---------------------------------------------------------------------------
// Perturbation decay and the one-sided identities
// ---------------------------------------------------------------------------

struct DecayReport {
    double slope_zeta = 0.0, slope_v = 0.0, slope_l = 0.0, slope_A = 0.0,
           slope_lambda = 0.0;
    double intercept_zeta = 0.0;
    std::int64_t fit_lo = 0, fit_hi = 0;  ///< |n| range used in the fits
};

/// Log-log decay slopes of hierarchy deviations between a base environment
/// and a layer-decaying perturbation of it.
DecayReport perturbation_decay(const HierarchyData& base, const HierarchyData& pert,
                               std::int64_t fit_abs_lo, std::int64_t fit_abs_hi);

struct SidedIdentityReport {
    double a = 0.0, b = 0.0;  ///< base window averages
    double beta_plus = 0.0, beta_minus = 0.0;
    double a_plus = 0.0, a_minus = 0.0, b_plus = 0.0, b_minus = 0.0;
    double mu_plus = 0.0, mu_minus = 0.0;
    double rel_err_a_plus = 0.0, rel_err_a_minus = 0.0;
    double rel_err_b_plus = 0.0, rel_err_b_minus = 0.0;
    double rel_err_mu_plus = 0.0, rel_err_mu_minus = 0.0;
};

/// Checks the one-sided limits of the perturbed environment against the base
/// averages: mu± vs beta±, a± vs a/beta±, b± vs b beta±. The perturbed
/// martingale uses the coboundary normalization.
SidedIdentityReport sided_identities(const Environment& base_env, const HierarchyData& base,
                                     const Environment& pert_env, const HierarchyData& pert,
                                     const SkewOptions& options = {});

}  // namespace striprw
