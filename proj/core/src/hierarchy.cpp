/// @file hierarchy.cpp
/// @brief Forward/backward sweeps computing the matrix hierarchy.

#include "striprw/hierarchy.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace striprw {

using nlohmann::json;

namespace {

json mat_to_json(const Mat& a) {
    json rows = json::array();
    for (int i = 0; i < a.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < a.cols(); ++k) row.push_back(a(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vec_to_json(const Vec& x) {
    json v = json::array();
    for (int i = 0; i < x.size(); ++i) v.push_back(x(i));
    return v;
}

json rowvec_to_json(const RowVec& x) {
    json v = json::array();
    for (int i = 0; i < x.size(); ++i) v.push_back(x(i));
    return v;
}

}  // namespace

double hilbert_distance(const Vec& x, const Vec& y) {
    if (x.size() != y.size() || x.size() == 0) {
        throw NonPositiveInput("hilbert_distance: size mismatch");
    }
    if (x.minCoeff() <= 0.0 || y.minCoeff() <= 0.0) {
        throw NonPositiveInput("hilbert_distance: inputs must be entrywise positive");
    }
    // max_i log(x_i / y_i) + max_j log(y_j / x_j)
    double max_ratio = -std::numeric_limits<double>::infinity();
    double max_inv = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double r = std::log(x(i)) - std::log(y(i));
        max_ratio = std::max(max_ratio, r);
        max_inv = std::max(max_inv, -r);
    }
    return max_ratio + max_inv;
}

HierarchyData compute_hierarchy(const Environment& env, const HierarchyOptions& options) {
    const int m = env.m();
    const std::int64_t lo = env.n_min();
    const std::int64_t hi = env.n_max();
    const std::int64_t count = hi - lo + 1;
    const Mat I = Mat::Identity(m, m);

    HierarchyData h;
    h.m_ = m;
    h.lo_ = lo;
    h.hi_ = hi;
    h.wlo_ = env.window_lo();
    h.whi_ = env.window_hi();
    h.zeta_.resize(static_cast<std::size_t>(count));
    h.zeta_minus_.resize(static_cast<std::size_t>(count));
    h.A_.resize(static_cast<std::size_t>(count));
    h.A_minus_.resize(static_cast<std::size_t>(count));
    h.alpha_.resize(static_cast<std::size_t>(count));
    h.alpha_minus_.resize(static_cast<std::size_t>(count));
    h.v_.resize(static_cast<std::size_t>(count));
    h.l_.resize(static_cast<std::size_t>(count));
    h.sigma_.resize(static_cast<std::size_t>(count));
    h.lambda_.resize(static_cast<std::size_t>(count), 0.0);
    h.lambda_tilde_.resize(static_cast<std::size_t>(count), 0.0);
    auto slot = [lo](std::int64_t n) { return static_cast<std::size_t>(n - lo); };

    HierarchyDiag& diag = h.diag_;
    diag.A_min_entry = std::numeric_limits<double>::infinity();
    diag.A_max_norm = 0.0;

    // -----------------------------------------------------------------------
    // Forward sweep: zeta, A, alpha, sigma, v, lambda.
    //
    // Two seeds are propagated through the lower buffer; their gap at the
    // window edge certifies that boundary conditions have washed out.
    // -----------------------------------------------------------------------
    Mat zeta_prev = Mat::Constant(m, m, 1.0 / m);  // uniform stochastic seed
    Mat zeta_alt = Mat::Zero(m, m);                // extreme corner seed
    zeta_alt.col(0).setOnes();
    Vec v_prev = Vec::Ones(m);
    Vec v_alt = Vec::Zero(m);
    v_alt(0) = 1.0;
    RowVec sigma_prev = RowVec::Constant(m, 1.0 / m);
    RowVec sigma_alt = RowVec::Zero(m);
    sigma_alt(0) = 1.0;
    bool alt_live = true;

    for (std::int64_t n = lo; n <= hi; ++n) {
        const LayerTriple& t = env.layer(n);
        const Mat Binv = solve_checked(I - t.R - t.Q * zeta_prev, I, "forward resolvent");
        const Mat zeta = Binv * t.P;
        const Mat A = Binv * t.Q;

        h.zeta_[slot(n)] = zeta;
        h.A_[slot(n)] = A;
        if (n + 1 <= hi) h.alpha_[slot(n)] = env.layer(n + 1).Q * Binv;

        // sigma_n is defined from zeta_{n-1}; store before advancing.
        h.sigma_[slot(n)] = sigma_prev;

        Vec w = A * v_prev;
        const double lam = sup_norm(w);
        if (!(lam > 0.0) || !std::isfinite(lam)) {
            throw NonConvergent("v sweep produced a non-positive norm");
        }
        h.lambda_[slot(n)] = lam;
        h.v_[slot(n)] = w / lam;

        // Advance the alternative seed through the buffer only; record the
        // contraction profile and the residual gap at the window edge.
        if (alt_live) {
            const Mat Binv2 = solve_checked(I - t.R - t.Q * zeta_alt, I, "forward resolvent");
            zeta_alt = Binv2 * t.P;
            Vec w2 = (Binv2 * t.Q) * v_alt;
            v_alt = w2 / sup_norm(w2);
            if (v_alt.minCoeff() > 0.0 && h.v_[slot(n)].minCoeff() > 0.0) {
                diag.v_contraction_profile.push_back(hilbert_distance(h.v_[slot(n)], v_alt));
            }
            if (n >= env.window_lo()) {
                diag.zeta_seed_influence = max_row_sum(h.zeta_[slot(n)] - zeta_alt);
                diag.v_seed_influence = sup_norm(h.v_[slot(n)] - v_alt);
                // sigma_n has not been advanced through zeta_n yet; compare
                // the alternative seed at the same number of factors.
                diag.sigma_seed_influence = sup_norm_row(h.sigma_[slot(n)] - sigma_alt);
                alt_live = false;
            }
            sigma_alt = sigma_alt * h.zeta_[slot(n)];  // same zeta chain, different seed row
            sigma_alt /= sigma_alt.sum();
        }

        zeta_prev = zeta;
        v_prev = h.v_[slot(n)];
        sigma_prev = sigma_prev * zeta;
        const double srow = sigma_prev.sum();
        sigma_prev /= srow;  // remove roundoff drift; zeta rows sum to 1

        diag.A_min_entry = std::min(diag.A_min_entry, min_entry(A));
        diag.A_max_norm = std::max(diag.A_max_norm, max_row_sum(A));
        if (n >= env.window_lo() && n <= env.window_hi()) {
            diag.max_zeta_row_defect =
                std::max(diag.max_zeta_row_defect,
                         (zeta.rowwise().sum() - Vec::Ones(m)).cwiseAbs().maxCoeff());
        }
    }

    // -----------------------------------------------------------------------
    // Backward sweep: zeta-, A-, alpha-, l, lambda~.
    // -----------------------------------------------------------------------
    Mat zeta_m_next = Mat::Constant(m, m, 1.0 / m);
    Mat zeta_m_alt = Mat::Zero(m, m);
    zeta_m_alt.col(0).setOnes();
    RowVec l_next = RowVec::Constant(m, 1.0);  // sup-norm-1 seed at layer hi
    RowVec l_alt = RowVec::Zero(m);
    l_alt(0) = 1.0;
    h.l_[slot(hi)] = l_next;
    bool m_alt_live = true;

    for (std::int64_t n = hi; n >= lo; --n) {
        const LayerTriple& t = env.layer(n);
        const Mat Bminv = solve_checked(I - t.R - t.P * zeta_m_next, I, "backward resolvent");
        h.zeta_minus_[slot(n)] = Bminv * t.Q;
        h.A_minus_[slot(n)] = Bminv * t.P;
        if (n - 1 >= lo) h.alpha_minus_[slot(n)] = env.layer(n - 1).P * Bminv;

        if (n + 1 <= hi) {
            // l_n = l_{n+1} alpha_n / ||.||, available once alpha_n is known
            // (it was stored during the forward sweep).
            RowVec ln = h.l_[slot(n + 1)] * h.alpha_[slot(n)];
            const double lt = sup_norm_row(ln);
            if (!(lt > 0.0) || !std::isfinite(lt)) {
                throw NonConvergent("l sweep produced a non-positive norm");
            }
            h.lambda_tilde_[slot(n)] = lt;
            h.l_[slot(n)] = ln / lt;
            if (m_alt_live) {
                RowVec la = l_alt * h.alpha_[slot(n)];
                l_alt = la / sup_norm_row(la);
            }
        }

        if (m_alt_live) {
            const Mat Bm2 = solve_checked(I - t.R - t.P * zeta_m_alt, I, "backward resolvent");
            zeta_m_alt = Bm2 * t.Q;
            if (n <= env.window_hi() && n + 1 <= hi) {
                diag.zeta_minus_seed_influence =
                    max_row_sum(h.zeta_minus_[slot(n)] - zeta_m_alt);
                diag.l_seed_influence = sup_norm_row(h.l_[slot(n)] - l_alt);
                m_alt_live = false;
            }
        }

        zeta_m_next = h.zeta_minus_[slot(n)];
    }

    // alpha identity: alpha_n P_n = Q_{n+1} zeta_n (checked on the window).
    for (std::int64_t n = env.window_lo(); n <= std::min(env.window_hi(), hi - 1); ++n) {
        const Mat lhs = h.alpha_[slot(n)] * env.layer(n).P;
        const Mat rhs = env.layer(n + 1).Q * h.zeta_[slot(n)];
        diag.alpha_identity_residual =
            std::max(diag.alpha_identity_residual, max_row_sum(lhs - rhs));
    }

    const double influence =
        std::max({diag.zeta_seed_influence, diag.zeta_minus_seed_influence,
                  diag.v_seed_influence, diag.l_seed_influence, diag.sigma_seed_influence});
    if (influence > options.tol) {
        throw BufferTooSmall("boundary-seed influence " + std::to_string(influence) +
                             " exceeds tolerance " + std::to_string(options.tol) +
                             " (buffer " + std::to_string(env.buffer()) + " layers)");
    }
    return h;
}

std::vector<double> potential(const HierarchyData& hier) {
    const std::int64_t lo = hier.lo();
    const std::int64_t hi = hier.hi();
    if (lo > 0 || hi < 0) {
        throw InsufficientWindow("potential needs layer 0 inside the stored range");
    }
    const int m = hier.m();
    std::vector<double> U(static_cast<std::size_t>(hi - lo + 1), 0.0);
    auto slot = [lo](std::int64_t n) { return static_cast<std::size_t>(n - lo); };

    // n >= 1: U_n = log || A_n ... A_1 ||, accumulated on a running product
    // that is re-normalized every step so only the log scale grows.
    Mat prod = Mat::Identity(m, m);
    double log_scale = 0.0;
    for (std::int64_t n = 1; n <= hi; ++n) {
        prod = hier.A(n) * prod;
        const double s = max_row_sum(prod);
        log_scale += std::log(s);
        prod /= s;
        U[slot(n)] = log_scale;  // ||prod|| == 1 after renormalization
    }

    // n <= -1: U_n = -log || A_0 A_{-1} ... A_{n+1} ||.
    prod = Mat::Identity(m, m);
    log_scale = 0.0;
    for (std::int64_t n = -1; n >= lo; --n) {
        prod = prod * hier.A(n + 1);
        const double s = max_row_sum(prod);
        log_scale += std::log(s);
        prod /= s;
        U[slot(n)] = -log_scale;
    }
    return U;
}

std::string HierarchyData::to_json(std::int64_t from, std::int64_t to) const {
    if (from < lo_ || to > hi_ || from > to) {
        throw InsufficientWindow("hierarchy snapshot range outside stored layers");
    }
    json out;
    out["m"] = m_;
    out["range"] = {from, to};
    out["window"] = {wlo_, whi_};
    json layers = json::array();
    for (std::int64_t n = from; n <= to; ++n) {
        json lj;
        lj["n"] = n;
        lj["zeta"] = mat_to_json(zeta(n));
        lj["zeta_minus"] = mat_to_json(zeta_minus(n));
        lj["A"] = mat_to_json(A(n));
        lj["A_minus"] = mat_to_json(A_minus(n));
        if (n <= hi_ - 1) lj["alpha"] = mat_to_json(alpha(n));
        if (n >= lo_ + 1) lj["alpha_minus"] = mat_to_json(alpha_minus(n));
        lj["v"] = vec_to_json(v(n));
        lj["l"] = rowvec_to_json(l(n));
        lj["sigma"] = rowvec_to_json(sigma(n));
        lj["lambda"] = lambda(n);
        if (n <= hi_ - 1) lj["lambda_tilde"] = lambda_tilde(n);
        layers.push_back(std::move(lj));
    }
    out["layers"] = std::move(layers);
    json dj;
    dj["zeta_seed_influence"] = diag_.zeta_seed_influence;
    dj["zeta_minus_seed_influence"] = diag_.zeta_minus_seed_influence;
    dj["v_seed_influence"] = diag_.v_seed_influence;
    dj["l_seed_influence"] = diag_.l_seed_influence;
    dj["sigma_seed_influence"] = diag_.sigma_seed_influence;
    dj["max_zeta_row_defect"] = diag_.max_zeta_row_defect;
    dj["alpha_identity_residual"] = diag_.alpha_identity_residual;
    dj["A_min_entry"] = diag_.A_min_entry;
    dj["A_max_norm"] = diag_.A_max_norm;
    out["diag"] = std::move(dj);
    return out.dump();
}

}  // namespace striprw
