#include "striprw/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "striprw/errors.hpp"
#include "striprw/green.hpp"
#include "striprw/rng.hpp"

namespace striprw {

namespace {

using json = nlohmann::json;

// ===== small helpers =====

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

CheckLine make_check(std::string name, double observed, double predicted, double tolerance,
                     double mc_error, CheckKind kind) {
    CheckLine c;
    c.name = std::move(name);
    c.observed = observed;
    c.predicted = predicted;
    c.tolerance = tolerance;
    c.mc_error = mc_error;
    c.kind = kind;
    const double band = tolerance + 3.0 * mc_error;
    if (!std::isfinite(observed) || !std::isfinite(predicted)) {
        c.pass = false;
    } else if (kind == CheckKind::kAbs) {
        c.pass = std::abs(observed - predicted) <= band;
    } else {
        c.pass = observed <= predicted + band;
    }
    return c;
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& x) {
    if (x.empty()) throw EmptySample("mean_se: empty sample set");
    MeanSe out;
    double s = 0.0;
    for (double v : x) s += v;
    out.mean = s / static_cast<double>(x.size());
    if (x.size() < 2) return out;
    double ss = 0.0;
    for (double v : x) {
        const double d = v - out.mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(x.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(x.size()));
    return out;
}

/// True when every realized layer has R = 0, i.e. the walk has period 2.
bool period_two(const Environment& env) {
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        if (max_row_sum(env.layer(n).R) > 0.0) return false;
    }
    return true;
}

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

/// E (|Z| - c)^+ for Z ~ N(0, sigma^2), c >= 0.
double folded_excess_mean(double sigma, double c) {
    const double u = c / sigma;
    return 2.0 * (sigma * normal_pdf(u) - c * (1.0 - normal_cdf(u)));
}

bool has_override(double x) { return !std::isnan(x); }

std::string site_label(std::int64_t layer, int lane) {
    std::ostringstream os;
    os << "(" << layer << "," << lane << ")";
    return os.str();
}

/// Endpoint arrays of an ensemble, filled via disjoint slot writes so the
/// result is independent of the thread count.
struct EndpointSet {
    std::vector<std::int64_t> layer;
    std::vector<int> lane;
};

EndpointSet collect_endpoints(const TrajectorySimulator& sim, const TrajectorySpec& spec,
                              std::int64_t n_traj, std::uint64_t seed, int num_threads) {
    EndpointSet out;
    out.layer.resize(static_cast<std::size_t>(n_traj));
    out.lane.resize(static_cast<std::size_t>(n_traj));
    run_ensemble_apply(sim, spec, n_traj, seed, num_threads,
                       [&](std::int64_t i, const TrajectoryStats& st) {
                           out.layer[static_cast<std::size_t>(i)] = st.end_layer;
                           out.lane[static_cast<std::size_t>(i)] = st.end_lane;
                       });
    return out;
}

/// Per-site endpoint histogram over the realized environment range.
std::vector<std::int64_t> endpoint_histogram(const Environment& env, const EndpointSet& eps) {
    const int m = env.m();
    std::vector<std::int64_t> hist(
        static_cast<std::size_t>(env.num_layers()) * static_cast<std::size_t>(m), 0);
    for (std::size_t i = 0; i < eps.layer.size(); ++i) {
        const std::size_t idx =
            static_cast<std::size_t>(eps.layer[i] - env.n_min()) * static_cast<std::size_t>(m) +
            static_cast<std::size_t>(eps.lane[i] - 1);
        ++hist[idx];
    }
    return hist;
}

std::int64_t hist_at(const Environment& env, const std::vector<std::int64_t>& hist,
                     std::int64_t layer, int lane) {
    return hist[static_cast<std::size_t>(layer - env.n_min()) * static_cast<std::size_t>(env.m()) +
                static_cast<std::size_t>(lane - 1)];
}

double sup_abs_observable(const Observable& obs, std::int64_t lo, std::int64_t hi) {
    double sup = 0.0;
    for (std::int64_t n = std::max(lo, obs.lo); n <= std::min(hi, obs.hi); ++n) {
        sup = std::max(sup, obs.h[static_cast<std::size_t>(n - obs.lo)].cwiseAbs().maxCoeff());
    }
    return sup;
}

json check_to_json(const CheckLine& c) {
    json j;
    j["name"] = c.name;
    j["observed"] = c.observed;
    j["predicted"] = c.predicted;
    j["tolerance"] = c.tolerance;
    j["mc_error"] = c.mc_error;
    j["kind"] = (c.kind == CheckKind::kAbs) ? "abs" : "upper";
    j["pass"] = c.pass;
    return j;
}

}  // namespace

// ===== report plumbing =====

bool ExperimentReport::passed() const {
    for (const auto& c : checks) {
        if (!c.pass) return false;
    }
    return true;
}

double ExperimentReport::value(const std::string& key) const {
    for (const auto& kv : values) {
        if (kv.first == key) return kv.second;
    }
    throw ConfigInvalid("ExperimentReport: no value named \"" + key + "\"");
}

std::string report_to_json(const ExperimentReport& rep) {
    json j;
    j["name"] = rep.name;
    j["config_hash"] = rep.config_hash;
    j["seed"] = rep.seed;
    j["sample_size"] = rep.sample_size;
    j["passed"] = rep.passed();
    j["checks"] = json::array();
    for (const auto& c : rep.checks) j["checks"].push_back(check_to_json(c));
    json vals = json::object();
    for (const auto& kv : rep.values) vals[kv.first] = kv.second;
    j["values"] = vals;
    return j.dump(2);
}

std::string report_to_text(const ExperimentReport& rep) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "experiment %-12s %s  hash=%s seed=%llu samples=%lld\n",
                  rep.name.c_str(), rep.passed() ? "[PASS]" : "[FAIL]", rep.config_hash.c_str(),
                  static_cast<unsigned long long>(rep.seed),
                  static_cast<long long>(rep.sample_size));
    os << line;
    for (const auto& c : rep.checks) {
        std::snprintf(line, sizeof(line),
                      "  %s %-44s observed=%-13.6g predicted=%-13.6g tol=%-10.4g mc=%-10.4g\n",
                      c.pass ? "[PASS]" : "[FAIL]", c.name.c_str(), c.observed, c.predicted,
                      c.tolerance, c.mc_error);
        os << line;
    }
    for (const auto& kv : rep.values) {
        std::snprintf(line, sizeof(line), "    value %-42s %.10g\n", kv.first.c_str(), kv.second);
        os << line;
    }
    return os.str();
}

// ===== statistics helpers =====

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf,
                    double x_shift) {
    if (samples.empty()) throw EmptySample("ks_statistic: empty sample set");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i] + x_shift);
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(std::abs(f - lo), std::abs(hi - f)));
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw EmptySample("ks_two_sample: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double half_normal_cdf(double x, double sigma) {
    if (!(sigma > 0.0)) throw NonPositiveInput("half_normal_cdf: sigma must be positive");
    if (x <= 0.0) return 0.0;
    return std::erf(x / (sigma * std::sqrt(2.0)));
}

// ===== observable diagnostics =====

double self_averaging_deviation(const Observable& obs, const InvariantMeasure& inv,
                                std::int64_t window_lo, std::int64_t window_hi,
                                std::int64_t scale) {
    if (scale < 1) throw ConfigInvalid("self_averaging_deviation: scale must be >= 1");
    if (window_lo > window_hi) throw ConfigInvalid("self_averaging_deviation: empty window");
    const std::int64_t width = window_hi - window_lo + 1;
    // Per-layer weighted values rho_n . h_n and their prefix sums.
    std::vector<double> pre(static_cast<std::size_t>(width) + 1, 0.0);
    for (std::int64_t n = window_lo; n <= window_hi; ++n) {
        const RowVec& r = inv.rho_at(n);
        double s = 0.0;
        for (int lane = 1; lane <= r.size(); ++lane) s += r(lane - 1) * obs.at(n, lane);
        pre[static_cast<std::size_t>(n - window_lo) + 1] =
            pre[static_cast<std::size_t>(n - window_lo)] + s;
    }
    const double global = pre.back() / static_cast<double>(width);
    if (scale > width) return 0.0;
    const std::int64_t stride = std::max<std::int64_t>(1, scale / 2);
    double dev = 0.0;
    for (std::int64_t c = 0; c + scale <= width; c += stride) {
        const double wmean = (pre[static_cast<std::size_t>(c + scale)] -
                              pre[static_cast<std::size_t>(c)]) /
                             static_cast<double>(scale);
        dev = std::max(dev, std::abs(wmean - global));
    }
    return dev;
}

// ===== CLT / functional CLT =====

ExperimentReport clt_experiment(const Environment& env, const HarmonicData& harm,
                                const CltOptions& options) {
    if (options.horizons.empty()) throw ConfigInvalid("clt: need at least one horizon");
    if (options.n_traj < 2) throw ConfigInvalid("clt: need n_traj >= 2");
    std::vector<std::int64_t> horizons = options.horizons;
    std::sort(horizons.begin(), horizons.end());
    for (std::int64_t n : horizons) {
        if (n < 1) throw ConfigInvalid("clt: horizons must be >= 1");
    }
    std::vector<double> t_marks = options.t_marks;
    std::sort(t_marks.begin(), t_marks.end());
    for (double t : t_marks) {
        if (!(t > 0.0 && t <= 1.0)) throw ConfigInvalid("clt: t_marks must lie in (0, 1]");
    }
    const double d_used =
        has_override(options.d_override) ? options.d_override : harm.av.diffusivity;
    if (!(d_used > 0.0)) throw NonPositiveInput("clt: diffusivity must be positive");

    TrajectorySimulator sim(env);
    const bool lattice = period_two(env);
    const std::size_t n = static_cast<std::size_t>(options.n_traj);

    ExperimentReport rep;
    rep.name = "clt";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj * static_cast<std::int64_t>(horizons.size());
    {
        std::ostringstream hs;
        hs << "clt|" << env.spec_json() << "|traj=" << options.n_traj << "|D=" << d_used;
        for (std::int64_t N : horizons) hs << "|N=" << N;
        for (double t : t_marks) hs << "|t=" << t;
        rep.config_hash = fnv1a_hex(hs.str());
    }

    double ks_smallest = 0.0, ks_largest = 0.0;
    for (std::size_t hidx = 0; hidx < horizons.size(); ++hidx) {
        const std::int64_t N = horizons[hidx];
        const bool is_largest = (hidx + 1 == horizons.size());
        const double root_dn = std::sqrt(d_used * static_cast<double>(N));
        const double root_n = std::sqrt(static_cast<double>(N));

        TrajectorySpec spec;
        spec.horizon = N;
        std::vector<std::int64_t> mark_times;
        if (is_largest) {
            for (double t : t_marks) {
                mark_times.push_back(std::min<std::int64_t>(
                    N, std::max<std::int64_t>(0, std::llround(t * static_cast<double>(N)))));
            }
            spec.marks = mark_times;
        }

        std::vector<double> scaled(n);
        std::vector<std::vector<double>> w(is_largest ? t_marks.size() : 0,
                                           std::vector<double>(is_largest ? n : 0));
        std::vector<double> mart_samples(is_largest ? n : 0);
        run_ensemble_apply(
            sim, spec, options.n_traj, split_seed(options.seed, hidx), options.num_threads,
            [&](std::int64_t i, const TrajectoryStats& st) {
                const std::size_t ii = static_cast<std::size_t>(i);
                scaled[ii] = static_cast<double>(st.end_layer) / root_dn;
                if (is_largest) {
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        w[k][ii] = static_cast<double>(st.mark_sites[k].first) / root_n;
                    }
                    mart_samples[ii] = harm.mart.m_at(st.end_layer)(st.end_lane - 1) / root_dn;
                }
            });

        // Half of the lattice spacing 2/sqrt(DN); the continuity correction
        // for period-2 walks whose endpoint parity is deterministic.
        const double shift = lattice ? 1.0 / root_dn : 0.0;
        const double ks = ks_statistic(scaled, normal_cdf, shift);
        rep.checks.push_back(make_check("ks_endpoint_n" + std::to_string(N), ks, 0.0,
                                        options.ks_tol, 0.0, CheckKind::kUpper));
        const MeanSe ms = mean_se(scaled);
        rep.values.emplace_back("ks_n" + std::to_string(N), ks);
        rep.values.emplace_back("mean_scaled_n" + std::to_string(N), ms.mean);
        rep.values.emplace_back("se_scaled_n" + std::to_string(N), ms.se);
        if (hidx == 0) ks_smallest = ks;
        if (is_largest) ks_largest = ks;

        if (is_largest) {
            // Brownian covariance of the un-normalized scaling W_N(t) = X_{tN}/sqrt(N):
            // Cov(W(s), W(t)) = D min(s,t).
            for (std::size_t p = 0; p < w.size(); ++p) {
                for (std::size_t q = p + 1; q < w.size(); ++q) {
                    std::vector<double> prod(n);
                    for (std::size_t i = 0; i < n; ++i) prod[i] = w[p][i] * w[q][i];
                    const MeanSe mprod = mean_se(prod);
                    const MeanSe mp = mean_se(w[p]);
                    const MeanSe mq = mean_se(w[q]);
                    const double cov = mprod.mean - mp.mean * mq.mean;
                    std::ostringstream cn;
                    cn << "covariance_w" << t_marks[p] << "_w" << t_marks[q];
                    rep.checks.push_back(make_check(cn.str(), cov, d_used * t_marks[p], 0.0,
                                                    mprod.se, CheckKind::kAbs));
                }
            }
            // Martingale-coordinate version of the same CLT.
            const double ks_mart = ks_statistic(mart_samples, normal_cdf, shift);
            rep.checks.push_back(make_check("ks_martingale_coordinate", ks_mart, 0.0,
                                            options.ks_tol, 0.0, CheckKind::kUpper));
        }
    }

    if (horizons.size() >= 2) {
        rep.checks.push_back(make_check("ks_monotone_decrease", ks_largest - ks_smallest, 0.0, 0.0,
                                        0.0, CheckKind::kUpper));
    }
    rep.values.emplace_back("diffusivity_used", d_used);
    rep.values.emplace_back("lattice_correction", lattice ? 1.0 : 0.0);
    return rep;
}

// ===== law of large numbers =====

ExperimentReport lln_experiment(const Environment& env, const HarmonicData& harm,
                                const Observable& obs, const LlnOptions& options) {
    if (options.horizon < 1) throw ConfigInvalid("lln: horizon must be >= 1");
    if (options.n_traj < 2) throw ConfigInvalid("lln: need n_traj >= 2");

    const std::int64_t wlo = harm.mart.window_lo;
    const std::int64_t whi = harm.mart.window_hi;
    const double h_avg = observable_average(obs, harm.inv.rho, harm.inv.lo, wlo, whi);
    const double target =
        has_override(options.target_override) ? options.target_override : h_avg / harm.av.a;
    const double h_sup = sup_abs_observable(obs, wlo, whi);

    ExperimentReport rep;
    rep.name = "lln";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj;
    {
        std::ostringstream hs;
        hs << "lln|" << env.spec_json() << "|N=" << options.horizon << "|traj=" << options.n_traj
           << "|target=" << target;
        rep.config_hash = fnv1a_hex(hs.str());
    }

    // Self-averaging precondition at scale delta_N N^{1/4} with delta_N = N^{-1/16}.
    const std::int64_t sa_scale = std::max<std::int64_t>(
        2, std::llround(std::pow(static_cast<double>(options.horizon), 3.0 / 16.0)));
    const double sa_dev = self_averaging_deviation(obs, harm.inv, wlo, whi, sa_scale);
    const double sa_denom = std::max(harm.av.a * h_sup, 1e-300);
    rep.checks.push_back(make_check("self_averaging", sa_dev / sa_denom, 0.0, options.sa_rel_tol,
                                    0.0, CheckKind::kUpper));

    TrajectorySimulator sim(env);
    TrajectorySpec spec;
    spec.horizon = options.horizon;
    spec.observable = &obs;
    std::vector<double> samples(static_cast<std::size_t>(options.n_traj));
    run_ensemble_apply(sim, spec, options.n_traj, options.seed, options.num_threads,
                       [&](std::int64_t i, const TrajectoryStats& st) {
                           samples[static_cast<std::size_t>(i)] =
                               st.observable_sum / static_cast<double>(options.horizon);
                       });

    const MeanSe ms = mean_se(samples);
    const double tol = options.rel_tol * (target != 0.0 ? std::abs(target) : h_sup);
    rep.checks.push_back(make_check("time_average", ms.mean, target, tol, ms.se, CheckKind::kAbs));

    const double eps = options.band_eps * (target != 0.0 ? std::abs(target) : h_sup);
    std::int64_t outside = 0;
    for (double v : samples) {
        if (std::abs(v - target) > eps) ++outside;
    }
    rep.values.emplace_back("target", target);
    rep.values.emplace_back("h_average", h_avg);
    rep.values.emplace_back("occupation_average", harm.av.a);
    rep.values.emplace_back("mean", ms.mean);
    rep.values.emplace_back("se", ms.se);
    rep.values.emplace_back("mass_outside_band",
                            static_cast<double>(outside) / static_cast<double>(options.n_traj));
    rep.values.emplace_back("band_halfwidth", eps);
    rep.values.emplace_back("self_averaging_dev", sa_dev);
    rep.values.emplace_back("self_averaging_scale", static_cast<double>(sa_scale));
    return rep;
}

// ===== local time =====

ExperimentReport local_time_experiment(const Environment& env, const HarmonicData& harm,
                                       const LocalTimeOptions& options) {
    if (options.horizon < 1) throw ConfigInvalid("local_time: horizon must be >= 1");
    if (options.n_traj < 2) throw ConfigInvalid("local_time: need n_traj >= 2");
    const double a = harm.av.a;
    if (!(a > 0.0)) throw NonPositiveInput("local_time: occupation average a must be positive");

    const std::int64_t k = options.site_layer;
    const int y = options.site_lane;
    const double rho_site = harm.inv.rho_at(k)(y - 1);
    if (!(rho_site > 0.0)) throw NonPositiveInput("local_time: rho at target site must be positive");

    const double root_n = std::sqrt(static_cast<double>(options.horizon));
    const double x = static_cast<double>(k) / root_n;
    const double sigma = 1.0 / std::sqrt(a);
    const double mean_pred = has_override(options.mean_override)
                                 ? options.mean_override
                                 : folded_excess_mean(sigma, std::abs(x));

    ExperimentReport rep;
    rep.name = "local_time";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj;
    {
        std::ostringstream hs;
        hs << "local_time|" << env.spec_json() << "|N=" << options.horizon
           << "|traj=" << options.n_traj << "|site=" << site_label(k, y);
        rep.config_hash = fnv1a_hex(hs.str());
    }

    TrajectorySimulator sim(env);
    TrajectorySpec spec;
    spec.horizon = options.horizon;
    spec.local_time_sites = {{k, y}};
    std::vector<double> scaled(static_cast<std::size_t>(options.n_traj));
    std::vector<double> raw_scaled(static_cast<std::size_t>(options.n_traj));
    run_ensemble_apply(sim, spec, options.n_traj, options.seed, options.num_threads,
                       [&](std::int64_t i, const TrajectoryStats& st) {
                           const double v = static_cast<double>(st.local_times[0]);
                           scaled[static_cast<std::size_t>(i)] = v / (rho_site * root_n);
                           raw_scaled[static_cast<std::size_t>(i)] = v / root_n;
                       });

    const MeanSe ms = mean_se(scaled);
    rep.checks.push_back(make_check("mean_scaled_visits", ms.mean, mean_pred,
                                    options.mean_rel_tol * std::abs(mean_pred), ms.se,
                                    CheckKind::kAbs));

    if (k == 0) {
        // Analytic reference |N(0, 1/a)|; half the visit-count lattice spacing
        // as continuity correction.
        const double shift = 0.5 / (rho_site * root_n);
        const double ks = ks_statistic(
            scaled, [&](double v) { return half_normal_cdf(v, sigma); }, shift);
        rep.checks.push_back(
            make_check("ks_local_time", ks, 0.0, options.ks_tol, 0.0, CheckKind::kUpper));
        rep.values.emplace_back("ks", ks);
    } else {
        // Scaled-walk reference: V'/sqrt(N') at site round(x sqrt(a) sqrt(N'))
        // of the plain symmetric walk, rescaled by 1/sqrt(a).
        if (options.oracle_horizon < 1 || options.oracle_traj < 2) {
            throw ConfigInvalid("local_time: oracle ensemble needs horizon >= 1, traj >= 2");
        }
        const double root_no = std::sqrt(static_cast<double>(options.oracle_horizon));
        const std::int64_t k_oracle = std::llround(x * std::sqrt(a) * root_no);
        json espec;
        espec["kind"] = "constant";
        espec["P"] = {{0.5}};
        espec["Q"] = {{0.5}};
        espec["R"] = {{0.0}};
        const std::int64_t hw = std::max<std::int64_t>(
            std::abs(k_oracle) + 8, std::llround(8.0 * root_no));
        Environment oracle_env = build_environment(espec.dump(), -hw, hw, 8);
        TrajectorySimulator oracle_sim(oracle_env);
        TrajectorySpec ospec;
        ospec.horizon = options.oracle_horizon;
        ospec.local_time_sites = {{k_oracle, 1}};
        std::vector<double> oracle_scaled(static_cast<std::size_t>(options.oracle_traj));
        run_ensemble_apply(oracle_sim, ospec, options.oracle_traj, split_seed(options.seed, std::uint64_t{1}),
                           options.num_threads, [&](std::int64_t i, const TrajectoryStats& st) {
                               oracle_scaled[static_cast<std::size_t>(i)] =
                                   static_cast<double>(st.local_times[0]) /
                                   (root_no * std::sqrt(a));
                           });
        const double ks = ks_two_sample(scaled, oracle_scaled);
        const double n1 = static_cast<double>(options.n_traj);
        const double n2 = static_cast<double>(options.oracle_traj);
        const double mc_ks = 0.5 * std::sqrt((n1 + n2) / (n1 * n2));
        rep.checks.push_back(
            make_check("ks_local_time_oracle", ks, 0.0, options.ks_tol, mc_ks, CheckKind::kUpper));
        rep.values.emplace_back("ks", ks);
        rep.values.emplace_back("oracle_site", static_cast<double>(k_oracle));
    }

    // Uniform-integrability proxy: truncated tail means of V/sqrt(N).
    for (double t : {0.5, 1.0, 1.5}) {
        double tail = 0.0;
        for (double v : raw_scaled) {
            if (v > t) tail += v;
        }
        std::ostringstream vn;
        vn << "ui_tail_" << t;
        rep.values.emplace_back(vn.str(), tail / static_cast<double>(options.n_traj));
    }
    std::int64_t zeros = 0;
    for (double v : scaled) {
        if (v == 0.0) ++zeros;
    }
    rep.values.emplace_back("atom_at_zero",
                            static_cast<double>(zeros) / static_cast<double>(options.n_traj));
    rep.values.emplace_back("mean", ms.mean);
    rep.values.emplace_back("se", ms.se);
    rep.values.emplace_back("mean_predicted", mean_pred);
    rep.values.emplace_back("rho_site", rho_site);
    rep.values.emplace_back("x", x);
    return rep;
}

// ===== local limit theorem =====

ExperimentReport llt_experiment(const Environment& env, const HarmonicData& harm,
                                const LltOptions& options) {
    if (options.horizons.empty()) throw ConfigInvalid("llt: need at least one horizon");
    if (options.n_traj < 2) throw ConfigInvalid("llt: need n_traj >= 2");
    const double a = harm.av.a;
    const double b = harm.av.b;
    if (!(a > 0.0 && b > 0.0)) throw NonPositiveInput("llt: window averages must be positive");
    const double ratio_pred =
        has_override(options.ratio_override) ? options.ratio_override : 1.0 / a;
    const bool lattice = period_two(env);
    const int m = env.m();

    ExperimentReport rep;
    rep.name = "llt";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj * static_cast<std::int64_t>(options.horizons.size());
    {
        std::ostringstream hs;
        hs << "llt|" << env.spec_json() << "|traj=" << options.n_traj << "|pred=" << ratio_pred;
        for (std::int64_t N : options.horizons) hs << "|N=" << N;
        rep.config_hash = fnv1a_hex(hs.str());
    }

    TrajectorySimulator sim(env);
    for (std::size_t hidx = 0; hidx < options.horizons.size(); ++hidx) {
        const std::int64_t N = options.horizons[hidx];
        if (N < 1) throw ConfigInvalid("llt: horizons must be >= 1");
        const double sigma = std::sqrt(b * static_cast<double>(N) / a);
        std::vector<std::int64_t> ks = options.k_values;
        if (ks.empty()) {
            const std::int64_t r = static_cast<std::int64_t>(
                std::floor(std::sqrt(static_cast<double>(N))));
            ks = {0, r, 2 * r};
        }

        TrajectorySpec spec;
        spec.horizon = N;
        const EndpointSet eps =
            collect_endpoints(sim, spec, options.n_traj, split_seed(options.seed, hidx),
                              options.num_threads);
        const std::vector<std::int64_t> hist = endpoint_histogram(env, eps);

        for (std::int64_t k_req : ks) {
            std::int64_t k = k_req;
            // Period-2 walks put no mass on mismatched parity; snap to the
            // occupied sublattice and compare against the parity form (factor 2).
            if (lattice && (((k + N) % 2) + 2) % 2 != 0) k -= 1;
            const double factor = lattice ? 2.0 : 1.0;
            const double cell = normal_cdf((static_cast<double>(k) + 0.5) / sigma) -
                                normal_cdf((static_cast<double>(k) - 0.5) / sigma);
            const RowVec& rho_k = harm.inv.rho_at(k);

            std::int64_t layer_count = 0;
            for (int lane = 1; lane <= m; ++lane) layer_count += hist_at(env, hist, k, lane);
            if (layer_count < options.min_count) {
                std::ostringstream msg;
                msg << "llt: only " << layer_count << " endpoint counts at layer " << k
                    << " (N=" << N << "); widen n_traj";
                throw InsufficientCounts(msg.str());
            }
            const double emp = static_cast<double>(layer_count) / static_cast<double>(options.n_traj);
            const double ratio = emp / (cell * rho_k.sum());
            const double mc = ratio / std::sqrt(static_cast<double>(layer_count));
            std::ostringstream cn;
            cn << "ratio_n" << N << "_k" << k;
            rep.checks.push_back(make_check(cn.str(), ratio, factor * ratio_pred,
                                            options.rel_tol * factor * ratio_pred, mc,
                                            CheckKind::kAbs));
            rep.values.emplace_back("count_n" + std::to_string(N) + "_k" + std::to_string(k),
                                    static_cast<double>(layer_count));

            if (m >= 2) {
                for (int lane = 1; lane <= m; ++lane) {
                    const std::int64_t cnt = hist_at(env, hist, k, lane);
                    if (cnt < options.min_count) {
                        std::ostringstream msg;
                        msg << "llt: only " << cnt << " endpoint counts at site "
                            << site_label(k, lane) << " (N=" << N << "); widen n_traj";
                        throw InsufficientCounts(msg.str());
                    }
                    const double emp_site =
                        static_cast<double>(cnt) / static_cast<double>(options.n_traj);
                    const double ratio_site = emp_site / (cell * rho_k(lane - 1));
                    const double mc_site = ratio_site / std::sqrt(static_cast<double>(cnt));
                    std::ostringstream sn;
                    sn << "ratio_n" << N << "_k" << k << "_lane" << lane;
                    rep.checks.push_back(make_check(sn.str(), ratio_site, factor * ratio_pred,
                                                    options.rel_tol * factor * ratio_pred, mc_site,
                                                    CheckKind::kAbs));
                }
            }
        }
        rep.values.emplace_back("sigma_n" + std::to_string(N), sigma);
    }
    rep.values.emplace_back("ratio_predicted", ratio_pred);
    rep.values.emplace_back("parity_form", lattice ? 1.0 : 0.0);
    return rep;
}

// ===== environment mixing =====

ExperimentReport mixing_experiment(const Environment& env, const HarmonicData& harm,
                                   const Observable& obs, const MixingOptions& options) {
    if (options.horizons.empty()) throw ConfigInvalid("mixing: need at least one horizon");
    if (options.starts.empty()) throw ConfigInvalid("mixing: need at least one start");
    if (options.n_traj < 2) throw ConfigInvalid("mixing: need n_traj >= 2");

    const std::int64_t wlo = harm.mart.window_lo;
    const std::int64_t whi = harm.mart.window_hi;
    const double h_avg = observable_average(obs, harm.inv.rho, harm.inv.lo, wlo, whi);
    const double target =
        has_override(options.target_override) ? options.target_override : h_avg / harm.av.a;
    const double h_sup = sup_abs_observable(obs, wlo, whi);

    ExperimentReport rep;
    rep.name = "mixing";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj * static_cast<std::int64_t>(options.horizons.size()) *
                      static_cast<std::int64_t>(options.starts.size());
    {
        std::ostringstream hs;
        hs << "mixing|" << env.spec_json() << "|traj=" << options.n_traj << "|target=" << target;
        for (std::int64_t N : options.horizons) hs << "|N=" << N;
        for (const auto& s : options.starts) hs << "|s=" << site_label(s.first, s.second);
        rep.config_hash = fnv1a_hex(hs.str());
    }

    TrajectorySimulator sim(env);
    const double tol = options.rel_tol * (target != 0.0 ? std::abs(target) : h_sup);
    std::uint64_t stream = 0;
    for (std::int64_t N : options.horizons) {
        if (N < 1) throw ConfigInvalid("mixing: horizons must be >= 1");
        std::vector<MeanSe> per_start;
        for (const auto& start : options.starts) {
            TrajectorySpec spec;
            spec.start_layer = start.first;
            spec.start_lane = start.second;
            spec.horizon = N;
            std::vector<double> hvals(static_cast<std::size_t>(options.n_traj));
            run_ensemble_apply(sim, spec, options.n_traj, split_seed(options.seed, stream++),
                               options.num_threads,
                               [&](std::int64_t i, const TrajectoryStats& st) {
                                   hvals[static_cast<std::size_t>(i)] =
                                       obs.at(st.end_layer, st.end_lane);
                               });
            const MeanSe ms = mean_se(hvals);
            per_start.push_back(ms);
            std::ostringstream cn;
            cn << "mean_n" << N << "_start" << site_label(start.first, start.second);
            rep.checks.push_back(make_check(cn.str(), ms.mean, target, tol, ms.se, CheckKind::kAbs));
        }
        for (std::size_t i = 0; i < per_start.size(); ++i) {
            for (std::size_t j = i + 1; j < per_start.size(); ++j) {
                const double mc =
                    std::sqrt(per_start[i].se * per_start[i].se + per_start[j].se * per_start[j].se);
                std::ostringstream cn;
                cn << "start_agreement_n" << N << "_"
                   << site_label(options.starts[i].first, options.starts[i].second) << "_vs_"
                   << site_label(options.starts[j].first, options.starts[j].second);
                rep.checks.push_back(make_check(cn.str(), per_start[i].mean - per_start[j].mean,
                                                0.0, 0.0, mc, CheckKind::kAbs));
            }
        }
    }
    rep.values.emplace_back("target", target);
    rep.values.emplace_back("h_average", h_avg);
    rep.values.emplace_back("occupation_average", harm.av.a);
    return rep;
}

// ===== semilocal interval probabilities =====

ExperimentReport semilocal_experiment(const Environment& env, const HarmonicData& harm,
                                      const SemilocalOptions& options) {
    if (!(options.gamma > 0.0 && options.gamma < 0.5)) {
        throw ConfigInvalid("semilocal: gamma must lie in (0, 1/2)");
    }
    if (options.horizon < 1) throw ConfigInvalid("semilocal: horizon must be >= 1");
    if (options.n_traj < 2) throw ConfigInvalid("semilocal: need n_traj >= 2");
    const double d_used = harm.av.diffusivity;
    if (!(d_used > 0.0)) throw NonPositiveInput("semilocal: diffusivity must be positive");

    const double sigma = std::sqrt(d_used * static_cast<double>(options.horizon));
    std::int64_t len = std::max<std::int64_t>(
        1, std::llround(std::pow(static_cast<double>(options.horizon), options.gamma)));
    const bool lattice = period_two(env);
    if (lattice && len % 2 != 0) len += 1;  // period-2 parity cancels over even lengths
    const std::int64_t half_range = std::llround(2.0 * sigma);

    ExperimentReport rep;
    rep.name = "semilocal";
    rep.seed = options.seed;
    rep.sample_size = options.n_traj;
    {
        std::ostringstream hs;
        hs << "semilocal|" << env.spec_json() << "|N=" << options.horizon
           << "|traj=" << options.n_traj << "|gamma=" << options.gamma;
        rep.config_hash = fnv1a_hex(hs.str());
    }

    TrajectorySimulator sim(env);
    TrajectorySpec spec;
    spec.horizon = options.horizon;
    const EndpointSet eps =
        collect_endpoints(sim, spec, options.n_traj, options.seed, options.num_threads);
    const std::vector<std::int64_t> hist = endpoint_histogram(env, eps);
    const int m = env.m();

    double max_rel = 0.0;
    double max_mc = 0.0;
    std::int64_t num_intervals = 0;
    double min_expected = std::numeric_limits<double>::infinity();
    for (std::int64_t s = -half_range; s + len <= half_range + 1; s += len) {
        std::int64_t count = 0;
        for (std::int64_t layer = s; layer < s + len; ++layer) {
            for (int lane = 1; lane <= m; ++lane) count += hist_at(env, hist, layer, lane);
        }
        const double mass = normal_cdf((static_cast<double>(s + len) - 0.5) / sigma) -
                            normal_cdf((static_cast<double>(s) - 0.5) / sigma);
        const double expected = mass * static_cast<double>(options.n_traj);
        if (count < options.min_count) {
            std::ostringstream msg;
            msg << "semilocal: only " << count << " counts in [" << s << ", " << (s + len)
                << "); widen n_traj";
            throw InsufficientCounts(msg.str());
        }
        max_rel = std::max(max_rel, std::abs(static_cast<double>(count) - expected) / expected);
        max_mc = std::max(max_mc, 1.0 / std::sqrt(expected));
        min_expected = std::min(min_expected, expected);
        ++num_intervals;
    }
    rep.checks.push_back(
        make_check("max_interval_rel_dev", max_rel, 0.0, options.rel_tol, max_mc, CheckKind::kUpper));
    rep.values.emplace_back("interval_length", static_cast<double>(len));
    rep.values.emplace_back("num_intervals", static_cast<double>(num_intervals));
    rep.values.emplace_back("min_expected_count", min_expected);
    rep.values.emplace_back("sigma", sigma);
    return rep;
}

// ===== skew limit =====

std::vector<double> skew_rw_oracle(double p, std::int64_t horizon, std::int64_t n_traj,
                                   std::uint64_t seed, int num_threads) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigInvalid("skew_rw_oracle: p must lie in (0, 1)");
    if (horizon < 1 || n_traj < 1) {
        throw ConfigInvalid("skew_rw_oracle: horizon and n_traj must be >= 1");
    }
    // Symmetric walk with one biased origin: a perturbed-srw with the single
    // override a_0 = 1/2 - p (so the right probability at 0 is p).
    json espec;
    espec["kind"] = "perturbed-srw";
    espec["kappa"] = 2.0;
    espec["amplitude"] = 0.0;
    espec["unbias"] = false;
    espec["overrides"] = {{0, 0.5 - p}};
    const std::int64_t hw = std::max<std::int64_t>(
        64, std::llround(8.0 * std::sqrt(static_cast<double>(horizon))));
    Environment env = build_environment(espec.dump(), -hw, hw, 8);
    TrajectorySimulator sim(env);
    TrajectorySpec spec;
    spec.horizon = horizon;
    const double root_n = std::sqrt(static_cast<double>(horizon));
    std::vector<double> samples(static_cast<std::size_t>(n_traj));
    run_ensemble_apply(sim, spec, n_traj, seed, num_threads,
                       [&](std::int64_t i, const TrajectoryStats& st) {
                           samples[static_cast<std::size_t>(i)] =
                               static_cast<double>(st.end_layer) / root_n;
                       });
    return samples;
}

SkewExperimentResult skew_experiment(const Environment& base_env, const HarmonicData& base_harm,
                                     const Environment& pert_env, const HarmonicData& pert_harm,
                                     const SkewReport& skew, const SkewExperimentOptions& options) {
    if (options.horizon < 1) throw ConfigInvalid("skew: horizon must be >= 1");
    if (options.n_traj < 2) throw ConfigInvalid("skew: need n_traj >= 2");
    const double d_base = base_harm.av.diffusivity;
    if (!(d_base > 0.0)) throw NonPositiveInput("skew: base diffusivity must be positive");

    SkewExperimentResult result;
    ExperimentReport& rep = result.report;
    rep.name = "skew";
    rep.seed = options.seed;
    rep.sample_size = 2 * options.n_traj;
    {
        std::ostringstream hs;
        hs << "skew|" << base_env.spec_json() << "|" << pert_env.spec_json()
           << "|N=" << options.horizon << "|traj=" << options.n_traj;
        rep.config_hash = fnv1a_hex(hs.str());
    }

    // Empirical ensemble in the perturbed environment.
    TrajectorySimulator sim(pert_env);
    TrajectorySpec spec;
    spec.horizon = options.horizon;
    const EndpointSet eps =
        collect_endpoints(sim, spec, options.n_traj, options.seed, options.num_threads);

    std::int64_t pos = 0, zero = 0;
    const double root_dn = std::sqrt(d_base * static_cast<double>(options.horizon));
    std::vector<double> abs_scaled(eps.layer.size());
    for (std::size_t i = 0; i < eps.layer.size(); ++i) {
        if (eps.layer[i] > 0) ++pos;
        if (eps.layer[i] == 0) ++zero;
        abs_scaled[i] = std::abs(static_cast<double>(eps.layer[i])) / root_dn;
    }
    const double n = static_cast<double>(options.n_traj);
    // Positivity probability with the lattice atom at 0 split symmetrically.
    const double p_emp = (static_cast<double>(pos) + 0.5 * static_cast<double>(zero)) / n;
    const double se_p = std::sqrt(std::max(p_emp * (1.0 - p_emp), 1e-300) / n);

    const double cand_plus = skew.p_beta_plus;
    const double cand_minus = skew.p_beta_minus;
    const bool pick_minus = std::abs(p_emp - cand_minus) <= std::abs(p_emp - cand_plus);
    result.selected_orientation = pick_minus ? "p_beta_minus" : "p_beta_plus";
    result.p_selected = pick_minus ? cand_minus : cand_plus;
    result.p_empirical = p_emp;
    rep.checks.push_back(make_check("prob_positive", p_emp, result.p_selected, options.prob_tol,
                                    se_p, CheckKind::kAbs));

    // Marginal-law check: |X_N| / sqrt(D N) against the skew-walk reference
    // (unit variance) with the selected parameter.
    std::vector<double> oracle =
        skew_rw_oracle(result.p_selected, options.horizon, options.n_traj,
                       split_seed(options.seed, std::uint64_t{1}), options.num_threads);
    for (double& v : oracle) v = std::abs(v);
    const double ks = ks_two_sample(abs_scaled, oracle);
    const double mc_ks = 0.5 * std::sqrt(2.0 / n);
    rep.checks.push_back(
        make_check("ks_abs_marginal", ks, 0.0, options.ks_tol, mc_ks, CheckKind::kUpper));

    // Exit-probability identity on the perturbed environment.
    const std::int64_t L = options.exit_halfwidth;
    const ExitProbability ep =
        exit_probability(pert_env, pert_harm.mart, -L, L, 0, 1, /*right=*/true);
    rep.checks.push_back(make_check("exit_probability", ep.exact, skew.p_beta_minus,
                                    options.exit_tol, 0.0, CheckKind::kAbs));

    rep.values.emplace_back("p_empirical", p_emp);
    rep.values.emplace_back("p_beta_plus", cand_plus);
    rep.values.emplace_back("p_beta_minus", cand_minus);
    rep.values.emplace_back("p_upsilon", skew.p_upsilon);
    rep.values.emplace_back("selected_is_beta_minus", pick_minus ? 1.0 : 0.0);
    rep.values.emplace_back("ks_abs", ks);
    rep.values.emplace_back("exit_exact", ep.exact);
    rep.values.emplace_back("exit_mart_predicted", ep.predicted);
    rep.values.emplace_back("d_base", d_base);
    rep.values.emplace_back("d_pert", pert_harm.av.diffusivity);
    return result;
}

}  // namespace striprw
