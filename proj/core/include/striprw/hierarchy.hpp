#pragma once

/// @file hierarchy.hpp
/// @brief The stochastic-matrix hierarchy attached to an environment.
///
/// Forward objects (computed left to right):
///   zeta_n  = (I - R_n - Q_n zeta_{n-1})^-1 P_n          (stochastic limit)
///   A_n     = (I - R_n - Q_n zeta_{n-1})^-1 Q_n
///   alpha_n = Q_{n+1} (I - R_n - Q_n zeta_{n-1})^-1
///   sigma_n = sigma_{n-1} zeta_{n-1}                      (probability rows)
///   v_n     = lim of normalized products A_n ... A_{a+1} x, any positive x
///   lambda_n = ||A_n v_{n-1}||,  so A_n v_{n-1} = lambda_n v_n
///
/// Backward (mirror) objects:
///   zeta-_n  = (I - R_n - P_n zeta-_{n+1})^-1 Q_n
///   A-_n     = (I - R_n - P_n zeta-_{n+1})^-1 P_n
///   alpha-_n = P_{n-1} (I - R_n - P_n zeta-_{n+1})^-1
///   l_n      = lim of normalized row products l alpha_{a-1} ... alpha_n
///   lambda~_n = ||l_{n+1} alpha_n||, so l_{n+1} alpha_n = lambda~_n l_n
///
/// All recursions run across the environment's buffer so that values on the
/// analysis window are seed-independent; the attained seed influence is
/// recorded in the diagnostics and checked against the tolerance.

#include <cstdint>
#include <string>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/matrix.hpp"

namespace striprw {

struct HierarchyOptions {
    double tol = 1e-10;  ///< max allowed boundary-seed influence on the window
};

/// Convergence and positivity diagnostics gathered during the sweeps.
struct HierarchyDiag {
    double zeta_seed_influence = 0.0;   ///< seed sensitivity at window entry
    double zeta_minus_seed_influence = 0.0;
    double v_seed_influence = 0.0;      ///< sup-norm gap of two v seeds
    double l_seed_influence = 0.0;
    double sigma_seed_influence = 0.0;
    double max_zeta_row_defect = 0.0;   ///< max |zeta row sum - 1| on window
    double alpha_identity_residual = 0.0;  ///< max ||alpha_n P_n - Q_{n+1} zeta_n||
    double A_min_entry = 0.0;           ///< min entry of A_n over the window
    double A_max_norm = 0.0;            ///< max ||A_n|| over the window
    /// Hilbert distance between two differently-seeded v sweeps along the
    /// lower buffer: a direct read-out of the cone contraction rate.
    std::vector<double> v_contraction_profile;
};

class HierarchyData {
public:
    HierarchyData() = default;

    int m() const { return m_; }
    std::int64_t lo() const { return lo_; }          ///< first stored layer
    std::int64_t hi() const { return hi_; }          ///< last stored layer
    std::int64_t window_lo() const { return wlo_; }  ///< analysis window
    std::int64_t window_hi() const { return whi_; }

    const Mat& zeta(std::int64_t n) const { return at(zeta_, n, lo_, hi_, "zeta"); }
    const Mat& zeta_minus(std::int64_t n) const {
        return at(zeta_minus_, n, lo_, hi_, "zeta_minus");
    }
    const Mat& A(std::int64_t n) const { return at(A_, n, lo_, hi_, "A"); }
    const Mat& A_minus(std::int64_t n) const { return at(A_minus_, n, lo_, hi_, "A_minus"); }
    /// alpha_n is defined for n in [lo, hi-1] (it uses Q_{n+1}).
    const Mat& alpha(std::int64_t n) const { return at(alpha_, n, lo_, hi_ - 1, "alpha"); }
    /// alpha-_n is defined for n in [lo+1, hi] (it uses P_{n-1}).
    const Mat& alpha_minus(std::int64_t n) const {
        return at(alpha_minus_, n, lo_ + 1, hi_, "alpha_minus");
    }
    const Vec& v(std::int64_t n) const { return at(v_, n, lo_, hi_, "v"); }
    const RowVec& l(std::int64_t n) const { return at(l_, n, lo_, hi_, "l"); }
    const RowVec& sigma(std::int64_t n) const { return at(sigma_, n, lo_, hi_, "sigma"); }
    double lambda(std::int64_t n) const {
        return at(lambda_, n, lo_, hi_, "lambda");
    }
    /// lambda~_n is defined for n in [lo, hi-1].
    double lambda_tilde(std::int64_t n) const {
        return at(lambda_tilde_, n, lo_, hi_ - 1, "lambda_tilde");
    }

    const HierarchyDiag& diag() const { return diag_; }

    /// JSON snapshot of all hierarchy objects on [from, to] plus diagnostics.
    std::string to_json(std::int64_t from, std::int64_t to) const;

    friend HierarchyData compute_hierarchy(const Environment&, const HierarchyOptions&);

private:
    // All per-layer stores are indexed by n - lo_; entries outside the
    // validity range passed to at() are never exposed.
    template <typename V>
    const typename V::value_type& at(const V& store, std::int64_t n, std::int64_t lo,
                                     std::int64_t hi, const char* what) const {
        if (n < lo || n > hi) {
            throw InsufficientWindow(std::string(what) + " not stored for layer " +
                                     std::to_string(n));
        }
        return store[static_cast<std::size_t>(n - lo_)];
    }
    double at(const std::vector<double>& store, std::int64_t n, std::int64_t lo,
              std::int64_t hi, const char* what) const {
        if (n < lo || n > hi) {
            throw InsufficientWindow(std::string(what) + " not stored for layer " +
                                     std::to_string(n));
        }
        return store[static_cast<std::size_t>(n - lo_)];
    }

    int m_ = 0;
    std::int64_t lo_ = 0, hi_ = -1, wlo_ = 0, whi_ = -1;
    std::vector<Mat> zeta_, zeta_minus_, A_, A_minus_, alpha_, alpha_minus_;
    std::vector<Vec> v_;
    std::vector<RowVec> l_, sigma_;
    std::vector<double> lambda_, lambda_tilde_;
    HierarchyDiag diag_;
};

/// Run both sweeps across the full realized range of `env`.
/// Throws BufferTooSmall if the boundary-seed influence on the analysis
/// window exceeds options.tol, and SingularResolvent on failed inversions.
HierarchyData compute_hierarchy(const Environment& env, const HierarchyOptions& options = {});

/// The potential U_n: log ||A_n ... A_1|| for n >= 1, 0 at n = 0, and
/// -log ||A_0 ... A_{n+1}|| for n <= -1. Computed in log-scaled incremental
/// form, indexed over the full stored range of `hier` (requires lo <= 0 <= hi).
std::vector<double> potential(const HierarchyData& hier);

/// Hilbert projective distance between strictly positive vectors:
///   max_{i,j} log( x_i y_j / (x_j y_i) ).
/// Throws NonPositiveInput unless both vectors are entrywise positive.
double hilbert_distance(const Vec& x, const Vec& y);

}  // namespace striprw
