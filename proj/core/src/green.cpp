#include "striprw/green.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "striprw/errors.hpp"
#include "striprw/matrix.hpp"

namespace striprw {
namespace {

void check_interval(const Environment& env, std::int64_t a, std::int64_t b,
                    std::int64_t start_layer) {
    if (!(a < start_layer && start_layer < b)) {
        throw ConfigInvalid("start layer must lie strictly inside the absorbing interval");
    }
    if (a < env.n_min() || b > env.n_max()) {
        throw InsufficientWindow("absorbing interval leaves the materialized environment");
    }
}

// Block-tridiagonal Thomas solve over interior layers a+1..b-1. The three
// band callbacks return the m x m blocks of row n; rhs(n) the right side.
// Couplings outside the interior are never requested.
std::vector<Vec> block_solve(std::int64_t a, std::int64_t b, Eigen::Index m,
                             const std::function<Mat(std::int64_t)>& diag,
                             const std::function<Mat(std::int64_t)>& sub,
                             const std::function<Mat(std::int64_t)>& super,
                             const std::function<Vec(std::int64_t)>& rhs) {
    const std::int64_t n_blocks = b - a - 1;
    if (n_blocks < 1) throw ConfigInvalid("absorbing interval has no interior layers");
    std::vector<Mat> U(static_cast<std::size_t>(n_blocks));
    std::vector<Vec> y(static_cast<std::size_t>(n_blocks));
    for (std::int64_t n = a + 1; n <= b - 1; ++n) {
        const std::size_t s = static_cast<std::size_t>(n - (a + 1));
        Mat M = diag(n);
        Vec r = rhs(n);
        if (n > a + 1) {
            const Mat A = sub(n);
            M -= A * U[s - 1];
            r -= A * y[s - 1];
        }
        Mat rhs_blocks(m, m + 1);
        if (n < b - 1) {
            rhs_blocks.leftCols(m) = super(n);
        } else {
            rhs_blocks.leftCols(m).setZero();
        }
        rhs_blocks.col(m) = r;
        Mat sol;
        try {
            sol = solve_checked(M, rhs_blocks, "absorbed-chain interior block");
        } catch (const SingularResolvent&) {
            throw SingularInterior(
                "interior block of the absorbed chain is singular; environment is invalid");
        }
        U[s] = sol.leftCols(m);
        y[s] = sol.col(m);
    }
    std::vector<Vec> x(static_cast<std::size_t>(n_blocks));
    x.back() = y.back();
    for (std::int64_t n = b - 2; n >= a + 1; --n) {
        const std::size_t s = static_cast<std::size_t>(n - (a + 1));
        x[s] = y[s] - U[s] * x[s + 1];
    }
    return x;
}

}  // namespace

// ===== Green table =====

double GreenTable::value_at(std::int64_t n, int lane) const {
    if (n <= a || n >= b) return 0.0;
    return values[static_cast<std::size_t>(n - (a + 1))](lane - 1);
}

double GreenTable::layer_visits(std::int64_t n) const {
    if (n <= a || n >= b) return 0.0;
    return values[static_cast<std::size_t>(n - (a + 1))].sum();
}

double GreenTable::total() const {
    double s = 0.0;
    for (const auto& v : values) s += v.sum();
    return s;
}

GreenTable green_exact(const Environment& env, std::int64_t a, std::int64_t b,
                       std::int64_t start_layer, int start_lane) {
    check_interval(env, a, b, start_layer);
    const Eigen::Index m = env.m();
    if (start_lane < 1 || start_lane > m) throw ConfigInvalid("start lane out of range");
    const auto t0 = std::chrono::steady_clock::now();
    GreenTable g;
    g.a = a;
    g.b = b;
    g.start_layer = start_layer;
    g.start_lane = start_lane;
    g.dimension = (b - a - 1) * m;
    // Transposed system: row block n reads
    //   (I - R_n)^T x_n - P_{n-1}^T x_{n-1} - Q_{n+1}^T x_{n+1} = e_start,
    // whose solution is the row of the fundamental matrix at the start site.
    g.values = block_solve(
        a, b, m,
        [&](std::int64_t n) {
            return Mat(Mat::Identity(m, m) - env.layer(n).R.transpose());
        },
        [&](std::int64_t n) { return Mat(-env.layer(n - 1).P.transpose()); },
        [&](std::int64_t n) { return Mat(-env.layer(n + 1).Q.transpose()); },
        [&](std::int64_t n) {
            Vec r = Vec::Zero(m);
            if (n == start_layer) r(start_lane - 1) = 1.0;
            return r;
        });
    g.solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return g;
}

GreenTable green_exact_dense(const Environment& env, std::int64_t a, std::int64_t b,
                             std::int64_t start_layer, int start_lane) {
    check_interval(env, a, b, start_layer);
    const Eigen::Index m = env.m();
    const std::int64_t n_blocks = b - a - 1;
    if (n_blocks > 64) throw ConfigInvalid("dense oracle limited to 64 interior layers");
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::Index dim = static_cast<Eigen::Index>(n_blocks) * m;
    Mat K = Mat::Zero(dim, dim);
    const auto at = [&](std::int64_t n) { return static_cast<Eigen::Index>(n - (a + 1)) * m; };
    for (std::int64_t n = a + 1; n <= b - 1; ++n) {
        K.block(at(n), at(n), m, m) = Mat::Identity(m, m) - env.layer(n).R.transpose();
        if (n > a + 1) K.block(at(n), at(n - 1), m, m) = -env.layer(n - 1).P.transpose();
        if (n < b - 1) K.block(at(n), at(n + 1), m, m) = -env.layer(n + 1).Q.transpose();
    }
    Vec e = Vec::Zero(dim);
    e(at(start_layer) + start_lane - 1) = 1.0;
    Vec x;
    try {
        x = solve_checked(K, e, "dense absorbed chain");
    } catch (const SingularResolvent&) {
        throw SingularInterior("dense absorbed chain is singular; environment is invalid");
    }
    GreenTable g;
    g.a = a;
    g.b = b;
    g.start_layer = start_layer;
    g.start_lane = start_lane;
    g.dimension = dim;
    g.values.resize(static_cast<std::size_t>(n_blocks));
    for (std::int64_t n = a + 1; n <= b - 1; ++n) {
        g.values[static_cast<std::size_t>(n - (a + 1))] = x.segment(at(n), m);
    }
    g.solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return g;
}

// ===== asymptotic formula =====

double parabola_green(double x, double y, double a, double b) {
    if (!(a < b)) throw ConfigInvalid("parabola kernel needs a < b");
    const double lo = std::min(x, y), hi = std::max(x, y);
    if (lo <= a || hi >= b) return 0.0;
    return 2.0 * (lo - a) * (b - hi) / (b - a);
}

namespace {
double layer_mean_mart(const MartingaleSolution& mart, std::int64_t n) {
    const Vec& v = mart.m_at(n);
    return v.mean();
}
}  // namespace

GreenPrediction green_asymptotic(const MartingaleSolution& mart, const InvariantMeasure& inv,
                                 std::int64_t a, std::int64_t b, std::int64_t start_layer,
                                 std::int64_t target_layer, int target_lane) {
    GreenPrediction p;
    p.g_scalar = parabola_green(layer_mean_mart(mart, start_layer),
                                layer_mean_mart(mart, target_layer), layer_mean_mart(mart, a),
                                layer_mean_mart(mart, b));
    if (target_layer <= a || target_layer >= b) {
        p.value = 0.0;
        return p;
    }
    // The flux normalization pins the current at 1/(2m), which spreads one
    // unit of invariant mass over m lanes; visit counts carry the width back.
    const double width = static_cast<double>(inv.rho_at(target_layer).size());
    p.value = p.g_scalar * width * inv.rho_at(target_layer)(target_lane - 1);
    return p;
}

GreenComparison green_compare(const Environment& env, const MartingaleSolution& mart,
                              const InvariantMeasure& inv, std::int64_t a, std::int64_t b,
                              std::int64_t start_layer, int start_lane) {
    const GreenTable g = green_exact(env, a, b, start_layer, start_lane);
    GreenComparison cmp;
    cmp.a = a;
    cmp.b = b;
    cmp.start_layer = start_layer;
    cmp.start_lane = start_lane;
    const std::int64_t mid_lo = a + (b - a) / 4, mid_hi = b - (b - a) / 4;
    for (std::int64_t n = a + 1; n <= b - 1; ++n) {
        double layer_pred = 0.0;
        for (int j = 1; j <= env.m(); ++j) {
            const GreenPrediction p = green_asymptotic(mart, inv, a, b, start_layer, n, j);
            const double err = std::abs(g.value_at(n, j) - p.value);
            layer_pred += p.value;
            if (err > cmp.sup_abs_error) {
                cmp.sup_abs_error = err;
                cmp.arg_layer = n;
                cmp.arg_lane = j;
            }
        }
        if (n >= mid_lo && n <= mid_hi && layer_pred > 0.0) {
            cmp.mid_max_rel = std::max(
                cmp.mid_max_rel, std::abs(g.layer_visits(n) - layer_pred) / layer_pred);
        }
    }
    return cmp;
}

// ===== exit probabilities and absorption time =====

ExitProbability exit_probability(const Environment& env, const MartingaleSolution& mart,
                                 std::int64_t a, std::int64_t b, std::int64_t start_layer,
                                 int start_lane, bool right) {
    check_interval(env, a, b, start_layer);
    const Eigen::Index m = env.m();
    if (start_lane < 1 || start_lane > m) throw ConfigInvalid("start lane out of range");
    // Plain (untransposed) system: h = P h_up + R h + Q h_down with boundary
    // value 1 on layer b, 0 on layer a.
    const auto x = block_solve(
        a, b, m,
        [&](std::int64_t n) { return Mat(Mat::Identity(m, m) - env.layer(n).R); },
        [&](std::int64_t n) { return Mat(-env.layer(n).Q); },
        [&](std::int64_t n) { return Mat(-env.layer(n).P); },
        [&](std::int64_t n) {
            if (n == b - 1) return Vec(env.layer(n).P * Vec::Ones(m));
            return Vec(Vec::Zero(m));
        });
    const double up = x[static_cast<std::size_t>(start_layer - (a + 1))](start_lane - 1);
    ExitProbability ep;
    ep.exact = right ? up : 1.0 - up;
    const double Ma = layer_mean_mart(mart, a), Mb = layer_mean_mart(mart, b);
    const double mk = mart.m_at(start_layer)(start_lane - 1);
    const double pr = (mk - Ma) / (Mb - Ma);
    ep.predicted = right ? pr : 1.0 - pr;
    return ep;
}

double expected_absorption_time(const Environment& env, std::int64_t a, std::int64_t b,
                                std::int64_t start_layer, int start_lane) {
    check_interval(env, a, b, start_layer);
    const Eigen::Index m = env.m();
    const auto x = block_solve(
        a, b, m,
        [&](std::int64_t n) { return Mat(Mat::Identity(m, m) - env.layer(n).R); },
        [&](std::int64_t n) { return Mat(-env.layer(n).Q); },
        [&](std::int64_t n) { return Mat(-env.layer(n).P); },
        [&](std::int64_t) { return Vec(Vec::Ones(m)); });
    return x[static_cast<std::size_t>(start_layer - (a + 1))](start_lane - 1);
}

std::string green_to_csv(const Environment& env, const GreenTable& table,
                         const MartingaleSolution& mart, const InvariantMeasure& inv) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,lane,exact,predicted,abs_error\n";
    for (std::int64_t n = table.a + 1; n <= table.b - 1; ++n) {
        for (int j = 1; j <= env.m(); ++j) {
            const GreenPrediction p =
                green_asymptotic(mart, inv, table.a, table.b, table.start_layer, n, j);
            const double e = table.value_at(n, j);
            os << n << ',' << j << ',' << e << ',' << p.value << ','
               << std::abs(e - p.value) << '\n';
        }
    }
    return os.str();
}

}  // namespace striprw
