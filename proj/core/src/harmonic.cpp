#include "striprw/harmonic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "striprw/errors.hpp"
#include "striprw/matrix.hpp"

#include <json.hpp>

namespace striprw {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ===== small least-squares helper =====

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double se = 0.0;  // standard error of the slope
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) {
        throw NormalizationDegenerate("line fit needs at least two points");
    }
    double xm = 0.0, ym = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        xm += x[i];
        ym += y[i];
    }
    xm /= static_cast<double>(n);
    ym /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - xm) * (x[i] - xm);
        sxy += (x[i] - xm) * (y[i] - ym);
    }
    if (!(sxx > 0.0)) {
        throw NormalizationDegenerate("line fit abscissae are degenerate");
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = ym - f.slope * xm;
    if (n > 2) {
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - (f.intercept + f.slope * x[i]);
            ss += r * r;
        }
        f.se = std::sqrt(ss / (static_cast<double>(n - 2) * sxx));
    }
    return f;
}

// Anchored log-products: g_0 = 0, g_{n+1} = g_n + log factor(n), so that
// exp(g_n) is the product of factor over [0, n) (inverted below 0).
std::vector<double> anchored_log_products(std::int64_t lo, std::int64_t hi,
                                          const std::function<double(std::int64_t)>& factor) {
    if (lo > 0 || hi < 0) {
        throw InsufficientWindow("anchored products need layer 0 in range");
    }
    std::vector<double> g(static_cast<std::size_t>(hi - lo + 1), 0.0);
    for (std::int64_t n = 1; n <= hi; ++n) {
        const double f = factor(n - 1);
        if (!(f > 0.0)) throw NonPositiveInput("growth factor must be positive");
        g[static_cast<std::size_t>(n - lo)] =
            g[static_cast<std::size_t>(n - 1 - lo)] + std::log(f);
    }
    for (std::int64_t n = -1; n >= lo; --n) {
        const double f = factor(n);
        if (!(f > 0.0)) throw NonPositiveInput("growth factor must be positive");
        g[static_cast<std::size_t>(n - lo)] =
            g[static_cast<std::size_t>(n + 1 - lo)] - std::log(f);
    }
    return g;
}

// Canonical increments Delta_n = beta_n (sigma_n v_n) 1 + B_{n+1} - B_n over
// [from, to], where B_n is the tail series sum_{k>=n} beta_{k+1}
// [zeta_n ... zeta_{k-1} v_k - (sigma_k v_k) 1]. B is evaluated once at the
// top by direct (truncated) summation and then recursed downward via
// B_n = beta_{n+1} (v_n - (sigma_n v_n) 1) + zeta_n B_{n+1}.
struct CanonicalDeltas {
    std::vector<Vec> delta;  // indexed from `from`
    double tail_bound = 0.0;
    std::int64_t terms_used = 0;
};

CanonicalDeltas canonical_deltas(const HierarchyData& hier, std::int64_t from, std::int64_t to,
                                 const DeltaOptions& options) {
    const std::int64_t lo = hier.lo(), hi = hier.hi();
    const Eigen::Index m = hier.m();
    if (from > to || from < lo || to + 1 > hi) {
        throw InsufficientWindow("canonical increment range must leave one buffer layer above");
    }
    const auto logb =
        anchored_log_products(lo, hi, [&](std::int64_t n) { return hier.lambda(n); });
    const auto beta = [&](std::int64_t n) {
        return std::exp(logb[static_cast<std::size_t>(n - lo)]);
    };

    // Direct series for B at the first layer above the requested range.
    const std::int64_t top = to + 1;
    Mat Z = Mat::Identity(m, m);
    Vec B_top = Vec::Zero(m);
    const Vec ones = Vec::Ones(m);
    double prev_norm = -1.0, ratio = 0.0;
    int quiet = 0;
    std::int64_t k = top, terms = 0;
    bool certified = (top == hi);  // nothing to sum at the very edge
    for (; k <= hi - 1 && terms < options.max_terms; ++k, ++terms) {
        const double svk = hier.sigma(k).dot(hier.v(k));
        const Vec term = beta(k + 1) * (Z * hier.v(k) - svk * ones);
        B_top += term;
        const double tn = sup_norm(term);
        if (prev_norm > 0.0 && tn > 0.0) ratio = std::max(ratio * 0.5, tn / prev_norm);
        prev_norm = tn;
        if (tn <= options.trunc_tol * std::max(1.0, sup_norm(B_top))) {
            if (++quiet >= 3) {
                certified = true;
                ++k;
                ++terms;
                break;
            }
        } else {
            quiet = 0;
        }
        Z = Z * hier.zeta(k);
    }
    CanonicalDeltas out;
    out.terms_used = terms;
    if (!certified) {
        throw TruncationInsufficient(
            "canonical increment series not certified within the buffer; enlarge the buffer");
    }
    const double r = std::min(std::max(ratio, 0.0), 0.98);
    out.tail_bound = (prev_norm > 0.0) ? prev_norm * r / (1.0 - r) : 0.0;

    // Downward recursion and the increments themselves.
    std::vector<Vec> B(static_cast<std::size_t>(top - from + 1));
    B[static_cast<std::size_t>(top - from)] = B_top;
    for (std::int64_t n = top - 1; n >= from; --n) {
        const double svn = hier.sigma(n).dot(hier.v(n));
        B[static_cast<std::size_t>(n - from)] =
            beta(n + 1) * (hier.v(n) - svn * ones) +
            hier.zeta(n) * B[static_cast<std::size_t>(n + 1 - from)];
    }
    out.delta.resize(static_cast<std::size_t>(to - from + 1));
    for (std::int64_t n = from; n <= to; ++n) {
        const double svn = hier.sigma(n).dot(hier.v(n));
        out.delta[static_cast<std::size_t>(n - from)] =
            beta(n) * svn * ones + B[static_cast<std::size_t>(n + 1 - from)] -
            B[static_cast<std::size_t>(n - from)];
    }
    return out;
}

// Mean of `vals[n-lo]` over layers [a, b].
double range_mean(const std::vector<double>& vals, std::int64_t lo, std::int64_t a,
                  std::int64_t b) {
    if (a > b) throw InsufficientWindow("empty averaging range");
    double s = 0.0;
    for (std::int64_t n = a; n <= b; ++n) s += vals[static_cast<std::size_t>(n - lo)];
    return s / static_cast<double>(b - a + 1);
}

// Slope of layer sums over the central 80% of [a, b]; NaN if too short.
double central_slope(const MartingaleSolution& mart, std::int64_t a, std::int64_t b) {
    const std::int64_t len = b - a + 1;
    if (len < 10) return kNaN;
    const std::int64_t margin = len / 10;
    std::vector<double> xs, ys;
    for (std::int64_t n = a + margin; n <= b - margin; ++n) {
        xs.push_back(static_cast<double>(n));
        ys.push_back(mart.layer_sum(n));
    }
    return fit_line(xs, ys).slope;
}

}  // namespace

// ===== martingale coordinate =====

const Vec& MartingaleSolution::m_at(std::int64_t n) const {
    if (n < lo || n > hi) throw InsufficientWindow("martingale layer outside stored range");
    return m[static_cast<std::size_t>(n - lo)];
}

const Vec& MartingaleSolution::u_at(std::int64_t n) const {
    if (n < lo || n > hi) throw InsufficientWindow("increment layer outside stored range");
    return u[static_cast<std::size_t>(n - lo)];
}

double MartingaleSolution::layer_sum(std::int64_t n) const { return m_at(n).sum(); }

std::vector<Vec> build_u(const HierarchyData& hier, double u_log_guard) {
    const std::int64_t lo = hier.lo(), hi = hier.hi();
    if (lo > 0 || hi < 0) {
        throw InsufficientWindow("increment construction needs layer 0 in range");
    }
    std::vector<Vec> u(static_cast<std::size_t>(hi - lo + 1));
    u[static_cast<std::size_t>(0 - lo)] = hier.v(0);
    double g = 0.0;
    for (std::int64_t n = 1; n <= hi; ++n) {
        g += std::log(hier.lambda(n));
        if (!(std::abs(g) < u_log_guard)) {
            throw DegenerateMartingale(
                "increment scale exceeds the representable guard band (unbounded potential?)");
        }
        u[static_cast<std::size_t>(n - lo)] = std::exp(g) * hier.v(n);
    }
    g = 0.0;
    for (std::int64_t n = -1; n >= lo; --n) {
        g -= std::log(hier.lambda(n + 1));
        if (!(std::abs(g) < u_log_guard)) {
            throw DegenerateMartingale(
                "increment scale exceeds the representable guard band (unbounded potential?)");
        }
        u[static_cast<std::size_t>(n - lo)] = std::exp(g) * hier.v(n);
    }
    return u;
}

MartingaleSolution solve_martingale(const Environment& env, const HierarchyData& hier,
                                    const MartingaleOptions& options) {
    if (options.normalization != "slope" && options.normalization != "coboundary") {
        throw ConfigInvalid("normalization must be \"slope\" or \"coboundary\"");
    }
    const std::int64_t lo = hier.lo(), hi = hier.hi();
    const std::int64_t wlo = hier.window_lo(), whi = hier.window_hi();
    const Eigen::Index m = hier.m();

    MartingaleSolution sol;
    sol.lo = lo;
    sol.hi = hi;
    sol.window_lo = wlo;
    sol.window_hi = whi;
    sol.normalization = options.normalization;
    sol.u = build_u(hier, options.u_log_guard);
    sol.m.resize(static_cast<std::size_t>(hi - lo + 1));
    sol.m[static_cast<std::size_t>(hi - lo)] = Vec::Zero(m);
    for (std::int64_t n = hi - 1; n >= lo; --n) {
        sol.m[static_cast<std::size_t>(n - lo)] =
            sol.u[static_cast<std::size_t>(n - lo)] +
            hier.zeta(n) * sol.m[static_cast<std::size_t>(n + 1 - lo)];
    }

    if (options.normalization == "slope") {
        const double s = central_slope(sol, wlo, whi);
        if (!std::isfinite(s) || std::abs(s) < 1e-12) {
            throw NormalizationDegenerate("layer sums carry no usable drift for normalization");
        }
        sol.scale = static_cast<double>(m) / s;
    } else {
        const auto cd = canonical_deltas(hier, wlo + 1, whi, DeltaOptions{});
        double num = 0.0, den = 0.0;
        for (std::int64_t n = wlo + 1; n <= whi; ++n) {
            const Vec d = sol.m[static_cast<std::size_t>(n - lo)] -
                          sol.m[static_cast<std::size_t>(n - 1 - lo)];
            num += d.dot(cd.delta[static_cast<std::size_t>(n - (wlo + 1))]);
            den += d.dot(d);
        }
        if (!(den > 0.0) || !std::isfinite(num)) {
            throw NormalizationDegenerate("pipeline increments vanish; cannot anchor to formula");
        }
        sol.scale = num / den;
    }
    for (auto& x : sol.m) x *= sol.scale;
    for (auto& x : sol.u) x *= sol.scale;
    sol.shift = -sol.m[static_cast<std::size_t>(0 - lo)](0);
    for (auto& x : sol.m) x.array() += sol.shift;

    // Empirical one-step increment bound over the window.
    double inc = 0.0;
    for (std::int64_t n = wlo; n <= whi; ++n) {
        const Vec& cur = sol.m[static_cast<std::size_t>(n - lo)];
        inc = std::max(inc, cur.maxCoeff() - cur.minCoeff());
        if (n < whi) {
            const Vec& nxt = sol.m[static_cast<std::size_t>(n + 1 - lo)];
            inc = std::max(inc, std::max(nxt.maxCoeff() - cur.minCoeff(),
                                         cur.maxCoeff() - nxt.minCoeff()));
        }
    }
    sol.increment_bound = inc;
    if (!(inc < options.max_increment)) {
        throw UnboundedIncrements("martingale increments exceed the configured bound");
    }

    // Harmonicity defect on the window.
    double res = 0.0;
    for (std::int64_t n = std::max(wlo, lo + 1); n <= std::min(whi, hi - 1); ++n) {
        const auto& L = env.layer(n);
        const Vec d = sol.m[static_cast<std::size_t>(n - lo)] -
                      (L.P * sol.m[static_cast<std::size_t>(n + 1 - lo)] +
                       L.R * sol.m[static_cast<std::size_t>(n - lo)] +
                       L.Q * sol.m[static_cast<std::size_t>(n - 1 - lo)]);
        res = std::max(res, sup_norm(d));
    }
    sol.residual = res;
    return sol;
}

// ===== invariant measure =====

const RowVec& InvariantMeasure::rho_at(std::int64_t n) const {
    if (n < lo || n > hi) throw InsufficientWindow("measure layer outside stored range");
    return rho[static_cast<std::size_t>(n - lo)];
}

double InvariantMeasure::layer_mass(std::int64_t n) const { return rho_at(n).sum(); }

InvariantMeasure solve_invariant(const Environment& env, const HierarchyData& hier,
                                 const MartingaleSolution& mart) {
    const std::int64_t lo = hier.lo(), hi = hier.hi();
    const std::int64_t wlo = hier.window_lo(), whi = hier.window_hi();
    const Eigen::Index m = hier.m();

    // Backward sweep keeping directions and log-scales separately.
    std::vector<RowVec> dir(static_cast<std::size_t>(hi - lo + 1));
    std::vector<double> logs(static_cast<std::size_t>(hi - lo + 1), 0.0);
    dir[static_cast<std::size_t>(hi - lo)] = RowVec::Constant(m, 1.0 / static_cast<double>(m));
    for (std::int64_t n = hi - 1; n >= lo; --n) {
        RowVec y = dir[static_cast<std::size_t>(n + 1 - lo)] * hier.alpha(n);
        const double s = y.sum();
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw NonConvergent("invariant-measure sweep lost positivity");
        }
        dir[static_cast<std::size_t>(n - lo)] = y / s;
        logs[static_cast<std::size_t>(n - lo)] =
            logs[static_cast<std::size_t>(n + 1 - lo)] + std::log(s);
    }

    // Unit-flux normalization at the window center.
    InvariantMeasure inv;
    inv.lo = lo;
    inv.hi = hi;
    inv.anchor = (wlo + whi) / 2;
    const std::int64_t c = inv.anchor;
    const Vec w = mart.m_at(c + 1) - hier.zeta_minus(c + 1) * mart.m_at(c);
    const double flux_dir = dir[static_cast<std::size_t>(c - lo)].dot(env.layer(c).P * w);
    const double target = 1.0 / (2.0 * static_cast<double>(m));
    if (!std::isfinite(flux_dir) || !(target / flux_dir > 0.0)) {
        throw NormalizationDegenerate("flux at the anchor layer is zero or negative");
    }
    const double logC = std::log(target / flux_dir) - logs[static_cast<std::size_t>(c - lo)];
    inv.rho.resize(static_cast<std::size_t>(hi - lo + 1));
    for (std::int64_t n = lo; n <= hi; ++n) {
        const double lg = logC + logs[static_cast<std::size_t>(n - lo)];
        if (!(std::abs(lg) < 600.0)) {
            throw NormalizationDegenerate(
                "invariant measure scale leaves the representable range across the strip");
        }
        inv.rho[static_cast<std::size_t>(n - lo)] =
            std::exp(lg) * dir[static_cast<std::size_t>(n - lo)];
    }

    // Stationarity defect on the window.
    double res = 0.0;
    for (std::int64_t n = std::max(wlo, lo + 1); n <= std::min(whi, hi - 1); ++n) {
        const RowVec d = inv.rho[static_cast<std::size_t>(n - lo)] -
                         (inv.rho[static_cast<std::size_t>(n - 1 - lo)] * env.layer(n - 1).P +
                          inv.rho[static_cast<std::size_t>(n - lo)] * env.layer(n).R +
                          inv.rho[static_cast<std::size_t>(n + 1 - lo)] * env.layer(n + 1).Q);
        res = std::max(res, sup_norm_row(d));
    }
    inv.residual = res;
    return inv;
}

// ===== conserved current =====

CurrentReport current(const Environment& env, const HierarchyData& hier,
                      const MartingaleSolution& mart, const InvariantMeasure& inv) {
    CurrentReport rep;
    rep.lo = std::max(hier.window_lo(), hier.lo());
    rep.hi = std::min(hier.window_hi(), hier.hi() - 1);
    if (rep.lo > rep.hi) throw InsufficientWindow("no layers available for current evaluation");
    double cmin = 0.0, cmax = 0.0, mmin = 0.0, mmax = 0.0;
    for (std::int64_t n = rep.lo; n <= rep.hi; ++n) {
        const Vec down = mart.m_at(n) - hier.zeta(n) * mart.m_at(n + 1);
        const Vec up = mart.m_at(n + 1) - hier.zeta_minus(n + 1) * mart.m_at(n);
        const double cn = inv.rho_at(n + 1).dot(env.layer(n + 1).Q * down);
        const double cmn = inv.rho_at(n).dot(env.layer(n).P * up);
        rep.c.push_back(cn);
        rep.c_minus.push_back(cmn);
        if (n == rep.lo) {
            cmin = cmax = cn;
            mmin = mmax = cmn;
        } else {
            cmin = std::min(cmin, cn);
            cmax = std::max(cmax, cn);
            mmin = std::min(mmin, cmn);
            mmax = std::max(mmax, cmn);
        }
        rep.c_mean += cn;
        rep.c_minus_mean += cmn;
    }
    const double count = static_cast<double>(rep.hi - rep.lo + 1);
    rep.c_mean /= count;
    rep.c_minus_mean /= count;
    rep.c_spread = cmax - cmin;
    rep.c_minus_spread = mmax - mmin;
    return rep;
}

// ===== quadratic variation and averages =====

std::vector<Vec> quadratic_variation(const Environment& env, const MartingaleSolution& mart) {
    const std::int64_t lo = mart.lo, hi = mart.hi;
    const Eigen::Index m = mart.m.front().size();
    std::vector<Vec> out(static_cast<std::size_t>(hi - 1 - (lo + 1) + 1));
    for (std::int64_t n = lo + 1; n <= hi - 1; ++n) {
        const auto& L = env.layer(n);
        const Vec& mm = mart.m_at(n);
        const Vec& mp = mart.m_at(n + 1);
        const Vec& md = mart.m_at(n - 1);
        Vec q(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double mi = mm(i);
            q(i) = L.P.row(i).dot((mp.array() - mi).square().matrix()) +
                   L.R.row(i).dot((mm.array() - mi).square().matrix()) +
                   L.Q.row(i).dot((md.array() - mi).square().matrix());
        }
        out[static_cast<std::size_t>(n - (lo + 1))] = q;
    }
    return out;
}

Averages window_averages(const Environment& env, const MartingaleSolution& mart,
                         const InvariantMeasure& inv, const std::vector<Vec>& qvar) {
    (void)env;
    const std::int64_t wlo = mart.window_lo, whi = mart.window_hi;
    const std::int64_t qlo = mart.lo + 1;
    std::vector<double> mass(static_cast<std::size_t>(whi - wlo + 1));
    std::vector<double> qv(static_cast<std::size_t>(whi - wlo + 1));
    for (std::int64_t n = wlo; n <= whi; ++n) {
        mass[static_cast<std::size_t>(n - wlo)] = inv.layer_mass(n);
        qv[static_cast<std::size_t>(n - wlo)] =
            inv.rho_at(n).dot(qvar[static_cast<std::size_t>(n - qlo)]);
    }
    Averages av;
    av.a = range_mean(mass, wlo, wlo, whi);
    av.b = range_mean(qv, wlo, wlo, whi);
    av.diffusivity = av.b / av.a;

    const std::int64_t quarter = (whi - wlo + 1) / 4;
    av.a_half = range_mean(mass, wlo, wlo + quarter, whi - quarter);
    av.b_half = range_mean(qv, wlo, wlo + quarter, whi - quarter);

    if (wlo <= -2 && whi >= 2) {
        av.a_plus = range_mean(mass, wlo, 1, whi);
        av.b_plus = range_mean(qv, wlo, 1, whi);
        av.D_plus = av.b_plus / av.a_plus;
        av.a_minus = range_mean(mass, wlo, wlo, -1);
        av.b_minus = range_mean(qv, wlo, wlo, -1);
        av.D_minus = av.b_minus / av.a_minus;
        const double md = static_cast<double>(mart.m.front().size());
        av.mu_plus = central_slope(mart, 1, whi) / md;
        av.mu_minus = central_slope(mart, wlo, -1) / md;
    } else {
        av.a_plus = av.a_minus = av.b_plus = av.b_minus = kNaN;
        av.D_plus = av.D_minus = av.mu_plus = av.mu_minus = kNaN;
    }
    return av;
}

// ===== bundle and export =====

const Vec& HarmonicData::qvar_at(std::int64_t n) const {
    if (n < qvar_lo || n > qvar_hi) {
        throw InsufficientWindow("quadratic variation layer outside stored range");
    }
    return qvar[static_cast<std::size_t>(n - qvar_lo)];
}

HarmonicData compute_harmonic(const Environment& env, const HierarchyData& hier,
                              const MartingaleOptions& options) {
    HarmonicData h;
    h.mart = solve_martingale(env, hier, options);
    h.inv = solve_invariant(env, hier, h.mart);
    h.qvar = quadratic_variation(env, h.mart);
    h.qvar_lo = hier.lo() + 1;
    h.qvar_hi = hier.hi() - 1;
    h.cur = current(env, hier, h.mart, h.inv);
    h.av = window_averages(env, h.mart, h.inv, h.qvar);
    return h;
}

std::string harmonic_to_csv(const Environment& env, const HierarchyData& hier,
                            const HarmonicData& harm) {
    const std::int64_t wlo = hier.window_lo(), whi = hier.window_hi();
    const auto logb =
        anchored_log_products(hier.lo(), hier.hi(),
                              [&](std::int64_t n) { return hier.lambda(n); });
    const auto logbt =
        anchored_log_products(hier.lo(), hier.hi() - 1,
                              [&](std::int64_t n) { return hier.lambda_tilde(n); });
    const std::vector<double> pot = potential(hier);
    std::ostringstream os;
    os.precision(17);
    os << "layer,lane,mart,rho,qvar,beta,beta_tilde,potential\n";
    for (std::int64_t n = wlo; n <= whi; ++n) {
        const std::size_t s = static_cast<std::size_t>(n - hier.lo());
        const double beta = std::exp(logb[s]);
        const double bt = std::exp(logbt[s]);
        for (Eigen::Index i = 0; i < env.m(); ++i) {
            os << n << ',' << (i + 1) << ',' << harm.mart.m_at(n)(i) << ','
               << harm.inv.rho_at(n)(i) << ',' << harm.qvar_at(n)(i) << ',' << beta << ','
               << bt << ',' << pot[s] << '\n';
        }
    }
    return os.str();
}

// ===== product coboundaries and skew parameters =====

SkewReport beta_and_skew(const Environment& base_env, const HierarchyData& base,
                         const Environment& pert_env, const HierarchyData& pert,
                         const SkewOptions& options) {
    if (base_env.m() != pert_env.m()) {
        throw WidthMismatch("coboundary comparison requires equal widths");
    }
    const std::int64_t cw_lo = std::max(base.window_lo(), pert.window_lo());
    const std::int64_t cw_hi = std::min(base.window_hi(), pert.window_hi());
    if (cw_lo > -8 || cw_hi < 8) {
        throw InsufficientWindow("coboundary tails need the window to straddle 0 widely");
    }
    const auto lb_base = anchored_log_products(
        cw_lo, cw_hi, [&](std::int64_t n) { return base.lambda(n); });
    const auto lb_pert = anchored_log_products(
        cw_lo, cw_hi, [&](std::int64_t n) { return pert.lambda(n); });
    const auto lt_base = anchored_log_products(
        cw_lo, cw_hi, [&](std::int64_t n) { return base.lambda_tilde(n); });
    const auto lt_pert = anchored_log_products(
        cw_lo, cw_hi, [&](std::int64_t n) { return pert.lambda_tilde(n); });

    const auto ratio = [&](const std::vector<double>& a, const std::vector<double>& b,
                           std::int64_t n) {
        return std::exp(a[static_cast<std::size_t>(n - cw_lo)] -
                        b[static_cast<std::size_t>(n - cw_lo)]);
    };

    SkewReport rep;
    double worst_gap = 0.0;
    const auto tail_mean = [&](const std::vector<double>& lp, const std::vector<double>& lb,
                               std::int64_t t_lo, std::int64_t t_hi) {
        double m1 = 0.0, m2 = 0.0;
        const std::int64_t mid = (t_lo + t_hi) / 2;
        std::int64_t c1 = 0, c2 = 0;
        for (std::int64_t n = t_lo; n <= t_hi; ++n) {
            const double r = ratio(lp, lb, n);
            if (n <= mid) {
                m1 += r;
                ++c1;
            } else {
                m2 += r;
                ++c2;
            }
        }
        m1 /= static_cast<double>(std::max<std::int64_t>(c1, 1));
        m2 /= static_cast<double>(std::max<std::int64_t>(c2, 1));
        const double mean = 0.5 * (m1 + m2);
        worst_gap = std::max(worst_gap, std::abs(m1 - m2) / std::max(1.0, std::abs(mean)));
        return mean;
    };

    const std::int64_t t_plus = std::max<std::int64_t>(
        4, static_cast<std::int64_t>(std::llround(options.tail_fraction * static_cast<double>(cw_hi))));
    const std::int64_t t_minus = std::max<std::int64_t>(
        4, static_cast<std::int64_t>(std::llround(options.tail_fraction * static_cast<double>(-cw_lo))));
    rep.beta_plus = tail_mean(lb_pert, lb_base, cw_hi - t_plus + 1, cw_hi);
    rep.beta_minus = tail_mean(lb_pert, lb_base, cw_lo, cw_lo + t_minus - 1);
    rep.beta_tilde_plus = tail_mean(lt_pert, lt_base, cw_hi - t_plus + 1, cw_hi);
    rep.beta_tilde_minus = tail_mean(lt_pert, lt_base, cw_lo, cw_lo + t_minus - 1);
    rep.tail_gap = worst_gap;
    if (worst_gap > options.cauchy_tol) {
        throw TailNotCauchy("coboundary tail ratios have not stabilized; enlarge the window");
    }
    rep.theta = rep.beta_minus / rep.beta_plus;
    rep.p_beta_plus = rep.beta_plus / (rep.beta_plus + rep.beta_minus);
    rep.p_beta_minus = rep.beta_minus / (rep.beta_plus + rep.beta_minus);

    if (base_env.m() == 1) {
        double lg = 0.0;
        for (std::int64_t n = cw_lo; n <= cw_hi; ++n) {
            const double p0 = base_env.layer(n).P(0, 0), q0 = base_env.layer(n).Q(0, 0);
            const double p1 = pert_env.layer(n).P(0, 0), q1 = pert_env.layer(n).Q(0, 0);
            if (!(p0 > 0.0 && q0 > 0.0 && p1 > 0.0 && q1 > 0.0)) {
                throw NonPositiveInput("width-1 product formula needs positive drift entries");
            }
            lg += std::log(q1) + std::log(p0) - std::log(p1) - std::log(q0);
        }
        rep.upsilon = std::exp(lg);
        rep.p_upsilon = rep.upsilon / (1.0 + rep.upsilon);
    }
    return rep;
}

// ===== canonical increment formula =====

const Vec& DeltaReport::delta_at(std::int64_t n) const {
    if (n < lo || n > hi) throw InsufficientWindow("increment layer outside computed range");
    return delta[static_cast<std::size_t>(n - lo)];
}

DeltaReport delta_formula(const HierarchyData& hier, const MartingaleSolution& mart,
                          const DeltaOptions& options) {
    const std::int64_t from = hier.window_lo() + 1, to = hier.window_hi();
    auto cd = canonical_deltas(hier, from, to, options);
    DeltaReport rep;
    rep.lo = from;
    rep.hi = to;
    rep.delta = std::move(cd.delta);
    rep.tail_bound = cd.tail_bound;
    rep.terms_used = cd.terms_used;

    double num = 0.0, den = 0.0, dmax = 0.0;
    for (std::int64_t n = from; n <= to; ++n) {
        const Vec d = mart.m_at(n) - mart.m_at(n - 1);
        const Vec& dl = rep.delta[static_cast<std::size_t>(n - from)];
        num += d.dot(dl);
        den += d.dot(d);
        dmax = std::max(dmax, sup_norm(dl));
    }
    if (!(den > 0.0)) throw NormalizationDegenerate("pipeline increments vanish");
    rep.match_scale = num / den;
    double err = 0.0;
    for (std::int64_t n = from; n <= to; ++n) {
        const Vec d = mart.m_at(n) - mart.m_at(n - 1);
        err = std::max(err, sup_norm(rep.match_scale * d -
                                     rep.delta[static_cast<std::size_t>(n - from)]));
    }
    rep.match_rel_err = err / std::max(dmax, 1e-300);
    return rep;
}

double rho_coboundary_spread(const HierarchyData& hier, const InvariantMeasure& inv) {
    const std::int64_t wlo = hier.window_lo(), whi = hier.window_hi();
    const auto logbt = anchored_log_products(
        hier.lo(), hier.hi() - 1, [&](std::int64_t n) { return hier.lambda_tilde(n); });
    double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
    for (std::int64_t n = wlo; n <= whi; ++n) {
        const RowVec& r = inv.rho_at(n);
        const RowVec& l = hier.l(n);
        for (Eigen::Index j = 0; j < r.size(); ++j) {
            if (!(r(j) > 0.0 && l(j) > 0.0)) {
                throw NonPositiveInput("measure/eigenvector entries must be positive");
            }
            const double t = std::log(r(j)) +
                             logbt[static_cast<std::size_t>(n - hier.lo())] - std::log(l(j));
            tmin = std::min(tmin, t);
            tmax = std::max(tmax, t);
        }
    }
    return tmax - tmin;
}

// ===== rate exponents =====

RateReport rate_exponents(const Environment& env, const MartingaleSolution& mart,
                          const InvariantMeasure& inv, const std::vector<Vec>& qvar,
                          const RateOptions& options) {
    (void)env;
    if (options.window_sizes.size() < 4) {
        throw ConfigInvalid("rate fits need at least four window sizes");
    }
    const std::int64_t wlo = mart.window_lo, whi = mart.window_hi;
    const std::int64_t qlo = mart.lo + 1;
    std::int64_t Lmax = 0;
    for (auto L : options.window_sizes) {
        if (L < 1) throw ConfigInvalid("window sizes must be positive");
        Lmax = std::max(Lmax, L);
    }
    std::int64_t span = options.center_span;
    if (span <= 0) span = std::min(-wlo, whi) - Lmax - 1;
    if (span <= 0 || wlo > -span - Lmax || whi < span + Lmax) {
        throw InsufficientWindow("analysis window too small for the requested rate fits");
    }

    // Prefix sums of layer mass and quadratic-variation mass over the window.
    const std::size_t W = static_cast<std::size_t>(whi - wlo + 1);
    std::vector<double> pmass(W + 1, 0.0), pqv(W + 1, 0.0);
    for (std::int64_t n = wlo; n <= whi; ++n) {
        const std::size_t i = static_cast<std::size_t>(n - wlo);
        pmass[i + 1] = pmass[i] + inv.layer_mass(n);
        pqv[i + 1] = pqv[i] + inv.rho_at(n).dot(qvar[static_cast<std::size_t>(n - qlo)]);
    }
    const double a = pmass[W] / static_cast<double>(W);
    const double b = pqv[W] / static_cast<double>(W);
    const auto range_sum = [&](const std::vector<double>& p, std::int64_t lo_n,
                               std::int64_t hi_n) {
        return p[static_cast<std::size_t>(hi_n - wlo + 1)] -
               p[static_cast<std::size_t>(lo_n - wlo)];
    };

    std::vector<std::int64_t> centers;
    const int nc = std::max(options.num_centers, 2);
    for (int j = 0; j < nc; ++j) {
        centers.push_back(-span + (2 * span * static_cast<std::int64_t>(j)) /
                                      static_cast<std::int64_t>(nc - 1));
    }

    RateReport rep;
    rep.window_sizes = options.window_sizes;
    RateFit* fits[3] = {&rep.martingale, &rep.occupation, &rep.quad_var};
    for (auto L : options.window_sizes) {
        double dm = 0.0, doc = 0.0, dq = 0.0;
        for (auto k : centers) {
            dm = std::max(dm, std::abs(mart.m_at(k + L)(0) - mart.m_at(k - L)(0) -
                                       2.0 * static_cast<double>(L)));
            const double width = static_cast<double>(2 * L + 1);
            doc = std::max(doc, std::abs(range_sum(pmass, k - L, k + L) - width * a));
            dq = std::max(dq, std::abs(range_sum(pqv, k - L, k + L) - width * b));
        }
        rep.martingale.max_dev.push_back(dm);
        rep.occupation.max_dev.push_back(doc);
        rep.quad_var.max_dev.push_back(dq);
    }
    for (auto* f : fits) {
        bool all_small = true;
        for (double d : f->max_dev) all_small = all_small && d < options.degenerate_floor;
        if (all_small) {
            f->exact = true;
            f->beta1 = 1.0;
            f->se = 0.0;
            continue;
        }
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i < options.window_sizes.size(); ++i) {
            xs.push_back(std::log(static_cast<double>(options.window_sizes[i])));
            ys.push_back(std::log(std::max(f->max_dev[i], 1e-300)));
        }
        const LineFit lf = fit_line(xs, ys);
        f->beta1 = 1.0 - lf.slope;
        f->se = lf.se;
    }
    return rep;
}

// ===== perturbation decay and one-sided identities =====

DecayReport perturbation_decay(const HierarchyData& base, const HierarchyData& pert,
                               std::int64_t fit_abs_lo, std::int64_t fit_abs_hi) {
    if (fit_abs_lo < 1 || fit_abs_hi <= fit_abs_lo) {
        throw ConfigInvalid("decay fit needs 1 <= lower < upper |layer| bounds");
    }
    const std::int64_t wlo = std::max(base.window_lo(), pert.window_lo());
    const std::int64_t whi = std::min(base.window_hi(), pert.window_hi());
    if (wlo > -fit_abs_hi || whi < fit_abs_hi) {
        throw InsufficientWindow("windows do not cover the requested decay-fit range");
    }
    std::vector<double> xs;
    std::vector<double> yz, yv, yl, ya, ylam;
    const auto push = [&](std::int64_t n) {
        xs.push_back(std::log(static_cast<double>(std::abs(n))));
        yz.push_back(std::log(std::max(max_row_sum(base.zeta(n) - pert.zeta(n)), 1e-300)));
        yv.push_back(std::log(std::max(sup_norm(base.v(n) - pert.v(n)), 1e-300)));
        yl.push_back(std::log(std::max(sup_norm_row(base.l(n) - pert.l(n)), 1e-300)));
        ya.push_back(std::log(std::max(max_row_sum(base.A(n) - pert.A(n)), 1e-300)));
        ylam.push_back(std::log(std::max(std::abs(base.lambda(n) - pert.lambda(n)), 1e-300)));
    };
    for (std::int64_t n = fit_abs_lo; n <= fit_abs_hi; ++n) {
        push(n);
        push(-n);
    }
    DecayReport rep;
    rep.fit_lo = fit_abs_lo;
    rep.fit_hi = fit_abs_hi;
    const LineFit fz = fit_line(xs, yz);
    rep.slope_zeta = fz.slope;
    rep.intercept_zeta = fz.intercept;
    rep.slope_v = fit_line(xs, yv).slope;
    rep.slope_l = fit_line(xs, yl).slope;
    rep.slope_A = fit_line(xs, ya).slope;
    rep.slope_lambda = fit_line(xs, ylam).slope;
    return rep;
}

SidedIdentityReport sided_identities(const Environment& base_env, const HierarchyData& base,
                                     const Environment& pert_env, const HierarchyData& pert,
                                     const SkewOptions& options) {
    MartingaleOptions slope_opts;
    slope_opts.normalization = "slope";
    const HarmonicData base_h = compute_harmonic(base_env, base, slope_opts);
    const SkewReport skew = beta_and_skew(base_env, base, pert_env, pert, options);
    MartingaleOptions cob_opts;
    cob_opts.normalization = "coboundary";
    const HarmonicData pert_h = compute_harmonic(pert_env, pert, cob_opts);

    SidedIdentityReport rep;
    rep.a = base_h.av.a;
    rep.b = base_h.av.b;
    rep.beta_plus = skew.beta_plus;
    rep.beta_minus = skew.beta_minus;
    rep.a_plus = pert_h.av.a_plus;
    rep.a_minus = pert_h.av.a_minus;
    rep.b_plus = pert_h.av.b_plus;
    rep.b_minus = pert_h.av.b_minus;
    rep.mu_plus = pert_h.av.mu_plus;
    rep.mu_minus = pert_h.av.mu_minus;
    const auto rel = [](double got, double want) {
        return std::abs(got - want) / std::max(std::abs(want), 1e-300);
    };
    rep.rel_err_mu_plus = rel(rep.mu_plus, rep.beta_plus);
    rep.rel_err_mu_minus = rel(rep.mu_minus, rep.beta_minus);
    rep.rel_err_a_plus = rel(rep.a_plus, rep.a / rep.beta_plus);
    rep.rel_err_a_minus = rel(rep.a_minus, rep.a / rep.beta_minus);
    rep.rel_err_b_plus = rel(rep.b_plus, rep.b * rep.beta_plus);
    rep.rel_err_b_minus = rel(rep.b_minus, rep.b * rep.beta_minus);
    return rep;
}

// ===== JSON exports =====

std::string skew_to_json(const SkewReport& rep) {
    nlohmann::json j;
    j["beta_plus"] = rep.beta_plus;
    j["beta_minus"] = rep.beta_minus;
    j["beta_tilde_plus"] = rep.beta_tilde_plus;
    j["beta_tilde_minus"] = rep.beta_tilde_minus;
    j["theta"] = rep.theta;
    j["p_beta_plus"] = rep.p_beta_plus;
    j["p_beta_minus"] = rep.p_beta_minus;
    j["upsilon"] = rep.upsilon;
    j["p_upsilon"] = rep.p_upsilon;
    j["tail_gap"] = rep.tail_gap;
    return j.dump(2);
}

std::string rate_to_json(const RateReport& rep) {
    nlohmann::json j;
    j["window_sizes"] = rep.window_sizes;
    const auto fit = [](const RateFit& f) {
        nlohmann::json o;
        o["beta1"] = f.beta1;
        o["se"] = f.se;
        o["exact"] = f.exact;
        o["max_dev"] = f.max_dev;
        return o;
    };
    j["martingale"] = fit(rep.martingale);
    j["occupation"] = fit(rep.occupation);
    j["quad_var"] = fit(rep.quad_var);
    return j.dump(2);
}

}  // namespace striprw
