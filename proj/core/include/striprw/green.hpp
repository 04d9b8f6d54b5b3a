#pragma once

/// @file green.hpp
/// @brief Exact Green functions of the walk absorbed at two boundary layers,
/// the parabola asymptotic evaluated in the martingale coordinate, and exit
/// probabilities.
///
/// Conventions: the interval (a, b) means absorption upon reaching layer a or
/// layer b; interior layers are a+1 .. b-1. Visit counts include the initial
/// occupancy of the start site.

#include <cstdint>
#include <string>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/harmonic.hpp"

namespace striprw {

struct GreenTable {
    std::int64_t a = 0, b = 0;  ///< absorbing boundary layers
    std::int64_t start_layer = 0;
    int start_lane = 1;  ///< 1-based
    std::vector<Vec> values;  ///< values[n-(a+1)](j): expected visits to (n,j)
    std::int64_t dimension = 0;  ///< unknowns in the linear system
    double solve_seconds = 0.0;

    double value_at(std::int64_t n, int lane) const;
    double layer_visits(std::int64_t n) const;
    /// Sum over all interior sites = expected absorption time from the start.
    double total() const;
};

/// Expected visit counts before absorption, via a block-tridiagonal
/// factorization over layers (blocks m x m, O((b-a) m^3) time).
GreenTable green_exact(const Environment& env, std::int64_t a, std::int64_t b,
                       std::int64_t start_layer, int start_lane);

/// Same quantity through a dense LU of the full interior matrix; test oracle
/// for intervals of at most 64 layers.
GreenTable green_exact_dense(const Environment& env, std::int64_t a, std::int64_t b,
                             std::int64_t start_layer, int start_lane);

/// The continuum interval Green kernel 2(min-a)(b-max)/(b-a), clamped to 0
/// outside [a, b].
double parabola_green(double x, double y, double a, double b);

struct GreenPrediction {
    double g_scalar = 0.0;  ///< parabola kernel in the martingale coordinate
    double value = 0.0;     ///< g_scalar * rho_n(j)
};

/// Asymptotic prediction for the visits to (target_layer, target_lane):
/// the parabola kernel evaluated at layer means of the martingale coordinate,
/// weighted by m * rho at the target site (the width factor undoes the
/// 1/(2m) flux normalization of the invariant measure).
GreenPrediction green_asymptotic(const MartingaleSolution& mart, const InvariantMeasure& inv,
                                 std::int64_t a, std::int64_t b, std::int64_t start_layer,
                                 std::int64_t target_layer, int target_lane);

struct GreenComparison {
    std::int64_t a = 0, b = 0, start_layer = 0;
    int start_lane = 1;
    double sup_abs_error = 0.0;  ///< over all interior sites
    std::int64_t arg_layer = 0;
    int arg_lane = 1;
    double mid_max_rel = 0.0;  ///< relative error over the middle half, layer level
};

/// Site-wise comparison of the exact table against the asymptotic formula;
/// rerun at doubled interval lengths to confirm the additive error stays O(1).
GreenComparison green_compare(const Environment& env, const MartingaleSolution& mart,
                              const InvariantMeasure& inv, std::int64_t a, std::int64_t b,
                              std::int64_t start_layer, int start_lane);

struct ExitProbability {
    double exact = 0.0;      ///< from the absorbed-chain linear system
    double predicted = 0.0;  ///< martingale-coordinate ratio (m_k - M_a)/(M_b - M_a)
};

/// Probability of exiting through the top layer b (right=true) or the bottom
/// layer a (right=false), starting from (start_layer, start_lane).
ExitProbability exit_probability(const Environment& env, const MartingaleSolution& mart,
                                 std::int64_t a, std::int64_t b, std::int64_t start_layer,
                                 int start_lane, bool right = true);

/// Expected number of steps until absorption, from an independent linear
/// solve; equals the row sum of the Green table (identity used in tests).
double expected_absorption_time(const Environment& env, std::int64_t a, std::int64_t b,
                                std::int64_t start_layer, int start_lane);

/// CSV rows: layer, lane, exact, predicted, abs_error.
std::string green_to_csv(const Environment& env, const GreenTable& table,
                         const MartingaleSolution& mart, const InvariantMeasure& inv);

}  // namespace striprw
