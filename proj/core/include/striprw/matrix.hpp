#pragma once

/// @file matrix.hpp
/// @brief Matrix/vector aliases and the norms used throughout.
///
/// Conventions: vectors are columns, measures are row vectors. The vector
/// norm is the sup norm; the induced matrix norm is the maximum absolute
/// row sum. For a non-negative matrix this equals the largest row sum, so a
/// stochastic matrix has norm exactly 1.

#include <Eigen/Dense>

#include "striprw/errors.hpp"

namespace striprw {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Sup norm of a (column or row) vector.
inline double sup_norm(const Eigen::Ref<const Vec>& x) {
    return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

inline double sup_norm_row(const Eigen::Ref<const RowVec>& x) {
    return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

/// Operator norm induced by the sup norm: max absolute row sum.
inline double max_row_sum(const Eigen::Ref<const Mat>& a) {
    return a.size() == 0 ? 0.0 : a.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Solve A * X = B by partial-pivot LU, throwing if A is (near) singular.
/// Near-singularity test: smallest |pivot| relative to the largest.
inline Mat solve_checked(const Mat& a, const Mat& b, const char* what) {
    Eigen::PartialPivLU<Mat> lu(a);
    const Vec diag = lu.matrixLU().diagonal().cwiseAbs();
    const double dmax = diag.maxCoeff();
    if (dmax <= 0.0 || diag.minCoeff() < 1e-14 * dmax) {
        throw SingularResolvent(std::string("singular linear system in ") + what);
    }
    return lu.solve(b);
}

/// Entrywise minimum of a matrix.
inline double min_entry(const Eigen::Ref<const Mat>& a) {
    return a.minCoeff();
}

/// True if every entry is >= -tol (treated as non-negative up to roundoff).
inline bool is_nonneg(const Eigen::Ref<const Mat>& a, double tol = 0.0) {
    return a.minCoeff() >= -tol;
}

}  // namespace striprw
