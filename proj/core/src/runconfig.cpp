#include "striprw/runconfig.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "striprw/errors.hpp"
#include "striprw/experiments.hpp"
#include "striprw/green.hpp"
#include "striprw/harmonic.hpp"
#include "striprw/rng.hpp"
#include "striprw/walker.hpp"

namespace striprw {

namespace {

using json = nlohmann::json;

// ===== validation helpers =====

void expect(bool cond, const std::string& msg) {
    if (!cond) throw ConfigInvalid(msg);
}

void require_keys(const json& obj, std::initializer_list<const char*> allowed,
                  const std::string& what) {
    expect(obj.is_object(), what + " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigInvalid(what + ": unknown key \"" + it.key() + "\"");
    }
}

bool is_int(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

std::int64_t as_int(const json& obj, const char* key, std::int64_t dflt, std::int64_t lo,
                    std::int64_t hi, const std::string& what) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    expect(is_int(*it), what + "." + key + " must be an integer");
    const std::int64_t v = it->get<std::int64_t>();
    expect(v >= lo && v <= hi, what + "." + key + " out of range");
    return v;
}

double as_num(const json& obj, const char* key, double dflt, const std::string& what) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    expect(it->is_number(), what + "." + key + " must be a number");
    return it->get<double>();
}

bool as_bool(const json& obj, const char* key, bool dflt, const std::string& what) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    expect(it->is_boolean(), what + "." + key + " must be a boolean");
    return it->get<bool>();
}

std::vector<std::int64_t> as_int_array(const json& obj, const char* key,
                                       std::vector<std::int64_t> dflt, const std::string& what) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    expect(it->is_array(), what + "." + key + " must be an array");
    std::vector<std::int64_t> out;
    for (const auto& v : *it) {
        expect(is_int(v), what + "." + key + " entries must be integers");
        out.push_back(v.get<std::int64_t>());
    }
    return out;
}

std::pair<std::int64_t, int> as_site(const json& obj, const char* key,
                                     std::pair<std::int64_t, int> dflt, const std::string& what) {
    auto it = obj.find(key);
    if (it == obj.end()) return dflt;
    expect(it->is_array() && it->size() == 2 && is_int(it->at(0)) && is_int(it->at(1)),
           what + "." + key + " must be [layer, lane]");
    return {it->at(0).get<std::int64_t>(), it->at(1).get<int>()};
}

void validate_observable(const json& obs, const std::string& what) {
    expect(obs.is_object(), what + " must be an object");
    expect(obs.contains("kind") && obs.at("kind").is_string(), what + " needs a \"kind\" string");
    const std::string kind = obs.at("kind").get<std::string>();
    if (kind == "constant") {
        require_keys(obs, {"kind", "value"}, what);
        as_num(obs, "value", 1.0, what);
    } else if (kind == "even_layer") {
        require_keys(obs, {"kind"}, what);
    } else if (kind == "lane_indicator") {
        require_keys(obs, {"kind", "lane"}, what);
        as_int(obs, "lane", 1, 1, 1 << 20, what);
    } else {
        throw ConfigInvalid(what + ": unknown observable kind \"" + kind + "\"");
    }
}

const char* const kExperimentKinds[] = {"clt",    "lln",       "local_time", "llt",
                                        "mixing", "semilocal", "skew"};

void validate_experiment(const json& e, const std::string& what) {
    expect(e.is_object(), what + " must be an object");
    expect(e.contains("kind") && e.at("kind").is_string(), what + " needs a \"kind\" string");
    const std::string kind = e.at("kind").get<std::string>();
    bool known = false;
    for (const char* k : kExperimentKinds) {
        if (kind == k) known = true;
    }
    expect(known, what + ": unknown experiment kind \"" + kind + "\"");

    const std::int64_t big = std::int64_t(1) << 40;
    if (kind == "clt") {
        require_keys(e, {"kind", "horizons", "n_traj", "seed", "t_marks", "ks_tol", "d_override"},
                     what);
        as_int_array(e, "horizons", {}, what);
        if (e.contains("t_marks")) {
            expect(e.at("t_marks").is_array(), what + ".t_marks must be an array");
            for (const auto& t : e.at("t_marks")) expect(t.is_number(), what + ".t_marks entries");
        }
        as_num(e, "ks_tol", 0.0, what);
        as_num(e, "d_override", 0.0, what);
    } else if (kind == "lln") {
        require_keys(e,
                     {"kind", "observable", "horizon", "n_traj", "seed", "rel_tol", "band_eps",
                      "sa_rel_tol", "target_override"},
                     what);
        expect(e.contains("observable"), what + " needs an observable");
        validate_observable(e.at("observable"), what + ".observable");
        as_num(e, "rel_tol", 0.0, what);
        as_num(e, "band_eps", 0.0, what);
        as_num(e, "sa_rel_tol", 0.0, what);
        as_num(e, "target_override", 0.0, what);
    } else if (kind == "local_time") {
        require_keys(e,
                     {"kind", "site", "horizon", "n_traj", "seed", "mean_rel_tol", "ks_tol",
                      "oracle_horizon", "oracle_traj", "mean_override"},
                     what);
        as_site(e, "site", {0, 1}, what);
        as_num(e, "mean_rel_tol", 0.0, what);
        as_num(e, "ks_tol", 0.0, what);
        as_int(e, "oracle_horizon", 1, 1, big, what);
        as_int(e, "oracle_traj", 2, 2, big, what);
        as_num(e, "mean_override", 0.0, what);
    } else if (kind == "llt") {
        require_keys(
            e, {"kind", "horizons", "n_traj", "seed", "k_values", "rel_tol", "min_count",
                "ratio_override"},
            what);
        as_int_array(e, "horizons", {}, what);
        as_int_array(e, "k_values", {}, what);
        as_num(e, "rel_tol", 0.0, what);
        as_int(e, "min_count", 1, 1, big, what);
        as_num(e, "ratio_override", 0.0, what);
    } else if (kind == "mixing") {
        require_keys(e,
                     {"kind", "observable", "horizons", "starts", "n_traj", "seed", "rel_tol",
                      "target_override"},
                     what);
        expect(e.contains("observable"), what + " needs an observable");
        validate_observable(e.at("observable"), what + ".observable");
        as_int_array(e, "horizons", {}, what);
        as_num(e, "rel_tol", 0.0, what);
        as_num(e, "target_override", 0.0, what);
        if (e.contains("starts")) {
            expect(e.at("starts").is_array(), what + ".starts must be an array");
            for (const auto& s : e.at("starts")) {
                expect(s.is_array() && s.size() == 2 && is_int(s.at(0)) && is_int(s.at(1)),
                       what + ".starts entries must be [layer, lane]");
            }
        }
    } else if (kind == "semilocal") {
        require_keys(e, {"kind", "gamma", "horizon", "n_traj", "seed", "rel_tol", "min_count"},
                     what);
        const double g = as_num(e, "gamma", 0.3, what);
        expect(g > 0.0 && g < 0.5, what + ".gamma must lie in (0, 1/2)");
        as_num(e, "rel_tol", 0.0, what);
        as_int(e, "min_count", 1, 1, big, what);
    } else {  // skew
        require_keys(e,
                     {"kind", "perturbed_environment", "horizon", "n_traj", "seed", "prob_tol",
                      "ks_tol", "exit_halfwidth", "exit_tol"},
                     what);
        expect(e.contains("perturbed_environment") && e.at("perturbed_environment").is_object(),
               what + " needs a perturbed_environment object");
        as_num(e, "prob_tol", 0.0, what);
        as_num(e, "ks_tol", 0.0, what);
        as_int(e, "exit_halfwidth", 2, 2, big, what);
        as_num(e, "exit_tol", 0.0, what);
    }
    as_int(e, "n_traj", 2, 2, big, what);
    as_int(e, "seed", 0, 0, big * 1000, what);
    as_int(e, "horizon", 1, 1, big, what);
}

json normalize_config(const json& c) {
    require_keys(c,
                 {"environment", "window", "buffer", "seed", "threads", "output_dir", "tolerances",
                  "normalization", "stages"},
                 "config");
    expect(c.contains("environment") && c.at("environment").is_object(),
           "config needs an \"environment\" object");
    validate_generator_spec(c.at("environment").dump());
    expect(c.contains("window") && c.at("window").is_array() && c.at("window").size() == 2 &&
               is_int(c.at("window").at(0)) && is_int(c.at("window").at(1)),
           "config needs \"window\": [lo, hi]");
    const std::int64_t wlo = c.at("window").at(0).get<std::int64_t>();
    const std::int64_t whi = c.at("window").at(1).get<std::int64_t>();
    expect(wlo <= whi, "config window is empty");

    json out = c;
    out["buffer"] = as_int(c, "buffer", 200, 0, 1 << 24, "config");
    out["seed"] = as_int(c, "seed", 1, 0, std::int64_t(1) << 62, "config");
    out["threads"] = as_int(c, "threads", 0, 0, 4096, "config");
    if (c.contains("output_dir")) {
        expect(c.at("output_dir").is_string(), "config.output_dir must be a string");
    } else {
        out["output_dir"] = "out";
    }
    {
        json tol = c.value("tolerances", json::object());
        require_keys(tol, {"hierarchy", "max_buffer_doublings"}, "config.tolerances");
        const double ht = as_num(tol, "hierarchy", 1e-10, "config.tolerances");
        expect(ht > 0.0, "config.tolerances.hierarchy must be positive");
        tol["hierarchy"] = ht;
        tol["max_buffer_doublings"] =
            as_int(tol, "max_buffer_doublings", 4, 0, 16, "config.tolerances");
        out["tolerances"] = tol;
    }
    {
        std::string norm = "slope";
        if (c.contains("normalization")) {
            expect(c.at("normalization").is_string(), "config.normalization must be a string");
            norm = c.at("normalization").get<std::string>();
        }
        expect(norm == "slope" || norm == "coboundary",
               "config.normalization must be \"slope\" or \"coboundary\"");
        out["normalization"] = norm;
    }

    expect(c.contains("stages") && c.at("stages").is_object() && !c.at("stages").empty(),
           "config needs a non-empty \"stages\" object");
    const json& st = c.at("stages");
    require_keys(st, {"validate", "hierarchy", "potential", "harmonic", "rates", "green",
                      "experiments"},
                 "config.stages");
    if (st.contains("validate")) require_keys(st.at("validate"), {}, "stages.validate");
    if (st.contains("hierarchy")) {
        require_keys(st.at("hierarchy"), {"dump_range"}, "stages.hierarchy");
        if (st.at("hierarchy").contains("dump_range")) {
            const json& r = st.at("hierarchy").at("dump_range");
            expect(r.is_array() && r.size() == 2 && is_int(r.at(0)) && is_int(r.at(1)),
                   "stages.hierarchy.dump_range must be [lo, hi]");
        }
    }
    if (st.contains("potential")) require_keys(st.at("potential"), {}, "stages.potential");
    if (st.contains("harmonic")) require_keys(st.at("harmonic"), {"csv"}, "stages.harmonic");
    if (st.contains("rates")) {
        require_keys(st.at("rates"), {"window_sizes", "num_centers", "center_span"},
                     "stages.rates");
        as_int_array(st.at("rates"), "window_sizes", {}, "stages.rates");
    }
    if (st.contains("green")) {
        require_keys(st.at("green"),
                     {"halfwidth", "start_layer", "start_lane", "check_doubling", "csv",
                      "growth_factor_max"},
                     "stages.green");
        as_int(st.at("green"), "halfwidth", 200, 2, 1 << 24, "stages.green");
    }
    if (st.contains("experiments")) {
        expect(st.at("experiments").is_array(), "stages.experiments must be an array");
        int i = 0;
        for (const auto& e : st.at("experiments")) {
            validate_experiment(e, "stages.experiments[" + std::to_string(i) + "]");
            ++i;
        }
    }
    return out;
}

// ===== execution helpers =====

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

Observable build_observable(const Environment& env, const json& spec) {
    const std::string kind = spec.at("kind").get<std::string>();
    if (kind == "constant") return make_constant_observable(env, spec.value("value", 1.0));
    if (kind == "even_layer") return make_even_layer_indicator(env);
    const int lane = static_cast<int>(spec.value("lane", 1));
    expect(lane >= 1 && lane <= env.m(), "observable lane out of range");
    return make_lane_indicator(env, lane);
}

double opt_override(const json& e, const char* key) {
    auto it = e.find(key);
    return it == e.end() ? kNoOverride : it->get<double>();
}

struct Runner {
    json cfg;
    std::filesystem::path dir;
    std::uint64_t seed = 1;
    int threads = 0;
    double hier_tol = 1e-10;
    int max_doublings = 4;
    std::string normalization;
    std::ostream* log = nullptr;

    std::optional<Environment> env;
    std::optional<HierarchyData> hier;
    std::optional<HarmonicData> harm;

    RunOutcome* outcome = nullptr;
    std::vector<std::string> failed_criteria;

    void note(const std::string& s) {
        if (log) (*log) << s << "\n";
    }

    void write_artifact(const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw ConfigInvalid("cannot write artifact " + name);
        f << text;
        outcome->artifacts.push_back(name);
        note("wrote " + name);
    }

    std::int64_t window_lo() const { return cfg.at("window").at(0).get<std::int64_t>(); }
    std::int64_t window_hi() const { return cfg.at("window").at(1).get<std::int64_t>(); }

    const Environment& environment(bool need_hierarchy) {
        if (need_hierarchy && !hier) {
            auto pr = hierarchy_with_buffer_policy(cfg.at("environment").dump(), window_lo(),
                                                   window_hi(), cfg.at("buffer").get<int>(),
                                                   hier_tol, max_doublings);
            env.emplace(std::move(pr.first));
            hier.emplace(std::move(pr.second));
        }
        if (!env) {
            env.emplace(build_environment(cfg.at("environment").dump(), window_lo(), window_hi(),
                                          cfg.at("buffer").get<int>()));
        }
        return *env;
    }

    const HierarchyData& hierarchy() {
        environment(true);
        return *hier;
    }

    const HarmonicData& harmonic() {
        if (!harm) {
            MartingaleOptions mo;
            mo.normalization = normalization;
            harm.emplace(compute_harmonic(environment(true), hierarchy(), mo));
        }
        return *harm;
    }

    void criteria(bool pass, const std::string& name) {
        if (!pass) failed_criteria.push_back(name);
    }

    // ----- stages -----

    void stage_validate() {
        const EllipticityReport er = validate_ellipticity(environment(false));
        json j;
        j["elliptic"] = er.elliptic;
        j["k0"] = er.k0;
        j["eps_bar"] = er.eps_bar;
        j["max_R_pow_norm"] = er.max_R_pow_norm;
        j["min_cross_P"] = er.min_cross_P;
        j["min_cross_Q"] = er.min_cross_Q;
        write_artifact("ellipticity.json", j.dump(2) + "\n");
        criteria(er.elliptic, "validate: environment not uniformly elliptic");
    }

    void stage_hierarchy(const json& s) {
        const HierarchyData& h = hierarchy();
        const HierarchyDiag& d = h.diag();
        json j;
        j["window"] = {h.window_lo(), h.window_hi()};
        j["stored"] = {h.lo(), h.hi()};
        j["diag"] = {{"zeta_seed_influence", d.zeta_seed_influence},
                     {"zeta_minus_seed_influence", d.zeta_minus_seed_influence},
                     {"v_seed_influence", d.v_seed_influence},
                     {"l_seed_influence", d.l_seed_influence},
                     {"sigma_seed_influence", d.sigma_seed_influence},
                     {"max_zeta_row_defect", d.max_zeta_row_defect},
                     {"alpha_identity_residual", d.alpha_identity_residual},
                     {"A_min_entry", d.A_min_entry},
                     {"A_max_norm", d.A_max_norm},
                     {"v_contraction_profile", d.v_contraction_profile}};
        std::int64_t dlo = std::max<std::int64_t>(h.window_lo(), -10);
        std::int64_t dhi = std::min<std::int64_t>(h.window_hi(), 10);
        if (s.contains("dump_range")) {
            dlo = s.at("dump_range").at(0).get<std::int64_t>();
            dhi = s.at("dump_range").at(1).get<std::int64_t>();
        }
        j["tables"] = json::parse(h.to_json(dlo, dhi));
        write_artifact("hierarchy.json", j.dump(2) + "\n");
    }

    void stage_potential() {
        const HierarchyData& h = hierarchy();
        const std::vector<double> u = potential(h);
        std::ostringstream os;
        os << "layer,potential\n";
        char line[64];
        for (std::int64_t n = h.window_lo(); n <= h.window_hi(); ++n) {
            std::snprintf(line, sizeof(line), "%lld,%.17g\n", static_cast<long long>(n),
                          u[static_cast<std::size_t>(n - h.lo())]);
            os << line;
        }
        write_artifact("potential.csv", os.str());
    }

    void stage_harmonic(const json& s) {
        const HarmonicData& ha = harmonic();
        json j;
        j["martingale"] = {{"normalization", ha.mart.normalization},
                           {"scale", ha.mart.scale},
                           {"shift", ha.mart.shift},
                           {"residual", ha.mart.residual},
                           {"increment_bound", ha.mart.increment_bound}};
        j["invariant"] = {{"anchor", ha.inv.anchor}, {"residual", ha.inv.residual}};
        j["current"] = {{"c_mean", ha.cur.c_mean},
                        {"c_spread", ha.cur.c_spread},
                        {"c_minus_mean", ha.cur.c_minus_mean},
                        {"c_minus_spread", ha.cur.c_minus_spread}};
        j["averages"] = {{"a", ha.av.a},
                         {"b", ha.av.b},
                         {"diffusivity", ha.av.diffusivity},
                         {"a_plus", ha.av.a_plus},
                         {"a_minus", ha.av.a_minus},
                         {"b_plus", ha.av.b_plus},
                         {"b_minus", ha.av.b_minus},
                         {"D_plus", ha.av.D_plus},
                         {"D_minus", ha.av.D_minus},
                         {"mu_plus", ha.av.mu_plus},
                         {"mu_minus", ha.av.mu_minus},
                         {"a_half", ha.av.a_half},
                         {"b_half", ha.av.b_half}};
        write_artifact("harmonic.json", j.dump(2) + "\n");
        if (as_bool(s, "csv", true, "stages.harmonic")) {
            write_artifact("harmonic.csv", harmonic_to_csv(environment(true), hierarchy(), ha));
        }
    }

    void stage_rates(const json& s) {
        RateOptions ro;
        ro.window_sizes = as_int_array(s, "window_sizes", {16, 32, 64, 128, 256}, "stages.rates");
        ro.num_centers = static_cast<int>(as_int(s, "num_centers", 41, 2, 100000, "stages.rates"));
        ro.center_span = as_int(s, "center_span", 0, 0, std::int64_t(1) << 40, "stages.rates");
        const HarmonicData& ha = harmonic();
        const RateReport rr =
            rate_exponents(environment(true), ha.mart, ha.inv, ha.qvar, ro);
        write_artifact("rates.json", rate_to_json(rr) + "\n");
    }

    void stage_green(const json& s) {
        const std::int64_t L = as_int(s, "halfwidth", 200, 2, 1 << 24, "stages.green");
        const std::int64_t start_layer = as_int(s, "start_layer", 0, -(std::int64_t(1) << 40),
                                                std::int64_t(1) << 40, "stages.green");
        const int start_lane =
            static_cast<int>(as_int(s, "start_lane", 1, 1, 1 << 20, "stages.green"));
        const bool doubling = as_bool(s, "check_doubling", true, "stages.green");
        const double growth_max = as_num(s, "growth_factor_max", 0.0, "stages.green");

        const HarmonicData& ha = harmonic();
        const Environment& e = environment(true);
        auto cmp_json = [](const GreenComparison& c) {
            json j;
            j["interval"] = {c.a, c.b};
            j["start"] = {c.start_layer, c.start_lane};
            j["sup_abs_error"] = c.sup_abs_error;
            j["arg_layer"] = c.arg_layer;
            j["arg_lane"] = c.arg_lane;
            j["mid_max_rel"] = c.mid_max_rel;
            return j;
        };
        const GreenComparison c1 =
            green_compare(e, ha.mart, ha.inv, -L, L, start_layer, start_lane);
        json j;
        j["base"] = cmp_json(c1);
        if (doubling) {
            const GreenComparison c2 =
                green_compare(e, ha.mart, ha.inv, -2 * L, 2 * L, start_layer, start_lane);
            j["doubled"] = cmp_json(c2);
            const double growth = c2.sup_abs_error / std::max(c1.sup_abs_error, 1e-300);
            j["growth_factor"] = growth;
            if (growth_max > 0.0) {
                criteria(growth <= growth_max, "green: additive error grew under doubling");
            }
        }
        write_artifact("green.json", j.dump(2) + "\n");
        if (as_bool(s, "csv", false, "stages.green")) {
            const GreenTable table = green_exact(e, -L, L, start_layer, start_lane);
            write_artifact("green.csv", green_to_csv(e, table, ha.mart, ha.inv));
        }
    }

    void run_experiment(std::size_t idx, const json& e) {
        const std::string kind = e.at("kind").get<std::string>();
        const std::uint64_t xseed = e.contains("seed") ? e.at("seed").get<std::uint64_t>()
                                                       : split_seed(seed, 1000 + idx);
        const Environment& en = environment(true);
        const HarmonicData& ha = harmonic();
        ExperimentReport rep;

        if (kind == "clt") {
            CltOptions o;
            o.horizons = as_int_array(e, "horizons", o.horizons, "clt");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "clt");
            o.seed = xseed;
            o.num_threads = threads;
            if (e.contains("t_marks")) o.t_marks = e.at("t_marks").get<std::vector<double>>();
            o.ks_tol = as_num(e, "ks_tol", o.ks_tol, "clt");
            o.d_override = opt_override(e, "d_override");
            rep = clt_experiment(en, ha, o);
        } else if (kind == "lln") {
            LlnOptions o;
            o.horizon = as_int(e, "horizon", o.horizon, 1, std::int64_t(1) << 40, "lln");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "lln");
            o.seed = xseed;
            o.num_threads = threads;
            o.rel_tol = as_num(e, "rel_tol", o.rel_tol, "lln");
            o.band_eps = as_num(e, "band_eps", o.band_eps, "lln");
            o.sa_rel_tol = as_num(e, "sa_rel_tol", o.sa_rel_tol, "lln");
            o.target_override = opt_override(e, "target_override");
            const Observable obs = build_observable(en, e.at("observable"));
            rep = lln_experiment(en, ha, obs, o);
        } else if (kind == "local_time") {
            LocalTimeOptions o;
            o.horizon = as_int(e, "horizon", o.horizon, 1, std::int64_t(1) << 40, "local_time");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "local_time");
            o.seed = xseed;
            o.num_threads = threads;
            const auto site = as_site(e, "site", {o.site_layer, o.site_lane}, "local_time");
            o.site_layer = site.first;
            o.site_lane = site.second;
            o.mean_rel_tol = as_num(e, "mean_rel_tol", o.mean_rel_tol, "local_time");
            o.ks_tol = as_num(e, "ks_tol", o.ks_tol, "local_time");
            o.oracle_horizon =
                as_int(e, "oracle_horizon", o.oracle_horizon, 1, std::int64_t(1) << 40, "local_time");
            o.oracle_traj =
                as_int(e, "oracle_traj", o.oracle_traj, 2, std::int64_t(1) << 40, "local_time");
            o.mean_override = opt_override(e, "mean_override");
            rep = local_time_experiment(en, ha, o);
        } else if (kind == "llt") {
            LltOptions o;
            o.horizons = as_int_array(e, "horizons", o.horizons, "llt");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "llt");
            o.seed = xseed;
            o.num_threads = threads;
            o.k_values = as_int_array(e, "k_values", o.k_values, "llt");
            o.rel_tol = as_num(e, "rel_tol", o.rel_tol, "llt");
            o.min_count = as_int(e, "min_count", o.min_count, 1, std::int64_t(1) << 40, "llt");
            o.ratio_override = opt_override(e, "ratio_override");
            rep = llt_experiment(en, ha, o);
        } else if (kind == "mixing") {
            MixingOptions o;
            o.horizons = as_int_array(e, "horizons", o.horizons, "mixing");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "mixing");
            o.seed = xseed;
            o.num_threads = threads;
            o.rel_tol = as_num(e, "rel_tol", o.rel_tol, "mixing");
            o.target_override = opt_override(e, "target_override");
            if (e.contains("starts")) {
                o.starts.clear();
                for (const auto& s : e.at("starts")) {
                    o.starts.emplace_back(s.at(0).get<std::int64_t>(), s.at(1).get<int>());
                }
            }
            const Observable obs = build_observable(en, e.at("observable"));
            rep = mixing_experiment(en, ha, obs, o);
        } else if (kind == "semilocal") {
            SemilocalOptions o;
            o.gamma = as_num(e, "gamma", o.gamma, "semilocal");
            o.horizon = as_int(e, "horizon", o.horizon, 1, std::int64_t(1) << 40, "semilocal");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "semilocal");
            o.seed = xseed;
            o.num_threads = threads;
            o.rel_tol = as_num(e, "rel_tol", o.rel_tol, "semilocal");
            o.min_count =
                as_int(e, "min_count", o.min_count, 1, std::int64_t(1) << 40, "semilocal");
            rep = semilocal_experiment(en, ha, o);
        } else {  // skew
            SkewExperimentOptions o;
            o.horizon = as_int(e, "horizon", o.horizon, 1, std::int64_t(1) << 40, "skew");
            o.n_traj = as_int(e, "n_traj", o.n_traj, 2, std::int64_t(1) << 40, "skew");
            o.seed = xseed;
            o.num_threads = threads;
            o.prob_tol = as_num(e, "prob_tol", o.prob_tol, "skew");
            o.ks_tol = as_num(e, "ks_tol", o.ks_tol, "skew");
            o.exit_halfwidth = as_int(e, "exit_halfwidth", o.exit_halfwidth, 2,
                                      std::int64_t(1) << 40, "skew");
            o.exit_tol = as_num(e, "exit_tol", o.exit_tol, "skew");

            // The perturbed environment shares the analysis window; its
            // hierarchy gets the same tolerance and buffer policy.
            auto pr = hierarchy_with_buffer_policy(e.at("perturbed_environment").dump(),
                                                   window_lo(), window_hi(),
                                                   cfg.at("buffer").get<int>(), hier_tol,
                                                   max_doublings);
            MartingaleOptions mo;
            mo.normalization = normalization;
            const HarmonicData pert_harm = compute_harmonic(pr.first, pr.second, mo);
            const SkewReport skew = beta_and_skew(en, hierarchy(), pr.first, pr.second);
            const SkewExperimentResult res =
                skew_experiment(en, ha, pr.first, pert_harm, skew, o);
            rep = res.report;
        }

        const std::string stem = "experiment_" + std::to_string(idx) + "_" + kind;
        write_artifact(stem + ".json", report_to_json(rep) + "\n");
        write_artifact(stem + ".txt", report_to_text(rep));
        criteria(rep.passed(), "experiment " + std::to_string(idx) + " (" + kind + ")");
    }
};

std::string iso_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return std::string(buf);
}

}  // namespace

// ===== public API =====

std::string validate_run_config(const std::string& config_json) {
    json c = json::parse(config_json, nullptr, /*allow_exceptions=*/false);
    if (c.is_discarded()) throw ConfigInvalid("run config is not valid JSON");
    return normalize_config(c).dump(2);
}

std::pair<Environment, HierarchyData> hierarchy_with_buffer_policy(
    const std::string& env_spec_json, std::int64_t window_lo, std::int64_t window_hi, int buffer,
    double tol, int max_doublings) {
    int buf = std::max(buffer, 1);
    for (int attempt = 0;; ++attempt) {
        Environment env = build_environment(env_spec_json, window_lo, window_hi, buf);
        try {
            HierarchyOptions ho;
            ho.tol = tol;
            HierarchyData hier = compute_hierarchy(env, ho);
            return {std::move(env), std::move(hier)};
        } catch (const BufferTooSmall&) {
            if (attempt >= max_doublings) throw;
            buf *= 2;
        }
    }
}

std::string library_version() { return "striprw 0.1.0"; }

RunOutcome run_config(const std::string& config_json, const RunOverrides& overrides) {
    RunOutcome out;
    json cfg;
    try {
        cfg = json::parse(validate_run_config(config_json));
    } catch (const ConfigError& e) {
        out.exit_code = 2;
        out.criteria_pass = false;
        out.message = e.what();
        return out;
    }

    Runner r;
    r.cfg = cfg;
    r.outcome = &out;
    r.log = overrides.log;
    r.seed = overrides.seed >= 0 ? static_cast<std::uint64_t>(overrides.seed)
                                 : cfg.at("seed").get<std::uint64_t>();
    r.threads = cfg.at("threads").get<int>();
    r.hier_tol = cfg.at("tolerances").at("hierarchy").get<double>();
    r.max_doublings = cfg.at("tolerances").at("max_buffer_doublings").get<int>();
    r.normalization = cfg.at("normalization").get<std::string>();
    r.dir = overrides.output_dir.empty() ? cfg.at("output_dir").get<std::string>()
                                         : overrides.output_dir;

    const json& stages = cfg.at("stages");
    std::vector<std::string> order = {"validate", "hierarchy", "potential", "harmonic",
                                      "rates",    "green",     "experiments"};
    std::vector<std::string> to_run;
    try {
        if (overrides.stages.empty()) {
            for (const auto& s : order) {
                if (stages.contains(s)) to_run.push_back(s);
            }
        } else {
            for (const auto& s : overrides.stages) {
                if (std::find(order.begin(), order.end(), s) == order.end()) {
                    throw ConfigInvalid("unknown stage \"" + s + "\"");
                }
                if (!stages.contains(s)) {
                    throw ConfigInvalid("stage \"" + s + "\" is not configured");
                }
                to_run.push_back(s);
            }
        }
        std::filesystem::create_directories(r.dir);
    } catch (const ConfigError& e) {
        out.exit_code = 2;
        out.criteria_pass = false;
        out.message = e.what();
        return out;
    } catch (const std::exception& e) {
        out.exit_code = 2;
        out.criteria_pass = false;
        out.message = e.what();
        return out;
    }

    std::string error_stage;
    try {
        for (const auto& s : to_run) {
            error_stage = s;
            if (s == "validate") {
                r.stage_validate();
            } else if (s == "hierarchy") {
                r.stage_hierarchy(stages.at("hierarchy"));
            } else if (s == "potential") {
                r.stage_potential();
            } else if (s == "harmonic") {
                r.stage_harmonic(stages.at("harmonic"));
            } else if (s == "rates") {
                r.stage_rates(stages.at("rates"));
            } else if (s == "green") {
                r.stage_green(stages.at("green"));
            } else if (s == "experiments") {
                const json& arr = stages.at("experiments");
                for (std::size_t i = 0; i < arr.size(); ++i) r.run_experiment(i, arr.at(i));
            }
        }
        out.criteria_pass = r.failed_criteria.empty();
        out.exit_code = out.criteria_pass ? 0 : 1;
        if (out.criteria_pass) {
            out.message = "all criteria met";
        } else {
            std::ostringstream os;
            os << "criteria failed:";
            for (const auto& f : r.failed_criteria) os << " [" << f << "]";
            out.message = os.str();
        }
    } catch (const ConfigError& e) {
        out.exit_code = 2;
        out.criteria_pass = false;
        out.message = "stage " + error_stage + ": " + e.what();
    } catch (const NumericError& e) {
        out.exit_code = 3;
        out.criteria_pass = false;
        out.message = "stage " + error_stage + ": " + e.what();
    } catch (const std::exception& e) {
        out.exit_code = 3;
        out.criteria_pass = false;
        out.message = "stage " + error_stage + ": " + e.what();
    }

    // Manifest last: the only artifact carrying a timestamp.
    try {
        json man;
        man["config_hash"] = fnv1a_hex(cfg.dump());
        man["seed"] = r.seed;
        man["version"] = library_version();
        man["timestamp"] = iso_timestamp();
        std::vector<std::string> listed = out.artifacts;
        listed.push_back("manifest.json");  // the manifest lists itself
        man["artifacts"] = listed;
        man["criteria_pass"] = out.criteria_pass;
        man["exit_code"] = out.exit_code;
        man["message"] = out.message;
        std::ofstream f(r.dir / "manifest.json", std::ios::binary);
        if (f) {
            f << man.dump(2) << "\n";
            out.artifacts = std::move(listed);
        }
    } catch (...) {
        // Manifest failures never mask the run result.
    }
    return out;
}

RunOutcome run_config_file(const std::string& path, const RunOverrides& overrides) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        RunOutcome out;
        out.exit_code = 2;
        out.criteria_pass = false;
        out.message = "cannot read config file " + path;
        return out;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return run_config(ss.str(), overrides);
}

}  // namespace striprw
