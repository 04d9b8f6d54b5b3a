/// @file env.cpp
/// @brief Environment generators, validation, and serialization.

#include "striprw/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "striprw/rng.hpp"

namespace striprw {

using nlohmann::json;

namespace {

constexpr double kStochasticTol = 1e-12;
constexpr int kMaxWidth = 16;

// Purpose tags for splitting generator seeds, so that distinct uses of the
// same master seed never share a stream.
enum SeedPurpose : std::uint64_t {
    kSeedIidLayer = 1,
    kSeedQpCoeffs = 2,
};

[[noreturn]] void fail_config(const std::string& msg) { throw ConfigInvalid("env spec: " + msg); }

// ---------------------------------------------------------------------------
// Spec parsing helpers
// ---------------------------------------------------------------------------

json parse_spec(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
        fail_config("not a JSON object");
    }
    return j;
}

void require_keys_subset(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            fail_config("unknown key \"" + item.key() + "\" in " + where);
        }
    }
}

double get_num(const json& j, const std::string& key, double dflt) {
    if (!j.contains(key)) return dflt;
    if (!j.at(key).is_number()) fail_config("\"" + key + "\" must be a number");
    return j.at(key).get<double>();
}

std::int64_t get_int(const json& j, const std::string& key, std::int64_t dflt) {
    if (!j.contains(key)) return dflt;
    if (!j.at(key).is_number_integer()) fail_config("\"" + key + "\" must be an integer");
    return j.at(key).get<std::int64_t>();
}

Mat mat_from_json(const json& j, int m, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != m) {
        fail_config(what + " must be an " + std::to_string(m) + "x" + std::to_string(m) +
                    " array");
    }
    Mat a(m, m);
    for (int i = 0; i < m; ++i) {
        const json& row = j.at(i);
        if (!row.is_array() || static_cast<int>(row.size()) != m) {
            fail_config(what + " row " + std::to_string(i) + " has wrong length");
        }
        for (int k = 0; k < m; ++k) {
            if (!row.at(k).is_number()) fail_config(what + " has a non-numeric entry");
            a(i, k) = row.at(k).get<double>();
        }
    }
    return a;
}

json mat_to_json(const Mat& a) {
    json rows = json::array();
    for (int i = 0; i < a.rows(); ++i) {
        json row = json::array();
        for (int k = 0; k < a.cols(); ++k) row.push_back(a(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Layer validation
// ---------------------------------------------------------------------------

void validate_layer(const LayerTriple& t, std::int64_t n) {
    const int m = static_cast<int>(t.P.rows());
    auto bad = [&](const std::string& msg) {
        throw NonStochasticSpec("layer " + std::to_string(n) + ": " + msg);
    };
    if (t.Q.rows() != m || t.R.rows() != m || t.P.cols() != m || t.Q.cols() != m ||
        t.R.cols() != m) {
        throw WidthMismatch("layer " + std::to_string(n) + ": inconsistent matrix shapes");
    }
    if (!is_nonneg(t.P) || !is_nonneg(t.Q) || !is_nonneg(t.R)) {
        bad("negative transition probability");
    }
    const Vec row_sums = (t.P + t.Q + t.R).rowwise().sum();
    for (int i = 0; i < m; ++i) {
        if (std::abs(row_sums(i) - 1.0) > kStochasticTol) {
            bad("row " + std::to_string(i) + " sums to " + std::to_string(row_sums(i)));
        }
    }
    // (I - R) must be invertible for the within-layer geometric series.
    Eigen::PartialPivLU<Mat> lu(Mat::Identity(m, m) - t.R);
    const Vec diag = lu.matrixLU().diagonal().cwiseAbs();
    if (diag.minCoeff() < 1e-14 * std::max(1.0, diag.maxCoeff())) {
        throw SingularLayer("layer " + std::to_string(n) + ": (I - R) is singular");
    }
}

// ---------------------------------------------------------------------------
// Generator: constant
// ---------------------------------------------------------------------------

std::vector<LayerTriple> gen_constant(const json& spec, std::int64_t count) {
    require_keys_subset(spec, {"kind", "m", "P", "Q", "R"}, "constant spec");
    const int m = static_cast<int>(get_int(spec, "m", 1));
    if (m < 1 || m > kMaxWidth) fail_config("m out of range [1, 16]");
    if (!spec.contains("P") || !spec.contains("Q") || !spec.contains("R")) {
        fail_config("constant spec needs P, Q, R");
    }
    LayerTriple t{mat_from_json(spec.at("P"), m, "P"), mat_from_json(spec.at("Q"), m, "Q"),
                  mat_from_json(spec.at("R"), m, "R")};
    return std::vector<LayerTriple>(static_cast<std::size_t>(count), t);
}

// ---------------------------------------------------------------------------
// Generator: perturbed-srw (m = 1)
// ---------------------------------------------------------------------------

std::vector<LayerTriple> gen_perturbed_srw(const json& spec, std::int64_t n_min,
                                           std::int64_t n_max) {
    require_keys_subset(
        spec, {"kind", "kappa", "amplitude", "sign", "unbias", "laziness", "overrides"},
        "perturbed-srw spec");
    const double kappa = get_num(spec, "kappa", 2.0);
    const double amplitude = get_num(spec, "amplitude", 0.0);
    const double laziness = get_num(spec, "laziness", 0.0);
    const std::string sign = spec.value("sign", std::string("positive"));
    const bool unbias = spec.value("unbias", true);
    if (kappa <= 1.0) fail_config("perturbed-srw needs kappa > 1");
    if (std::abs(amplitude) >= 0.5) fail_config("perturbed-srw needs |amplitude| < 1/2");
    if (laziness < 0.0 || laziness >= 1.0) fail_config("laziness must be in [0, 1)");
    if (sign != "positive" && sign != "alternating") {
        fail_config("sign must be \"positive\" or \"alternating\"");
    }

    std::map<std::int64_t, double> overrides;
    if (spec.contains("overrides")) {
        if (!spec.at("overrides").is_array()) fail_config("overrides must be an array");
        for (const auto& pr : spec.at("overrides")) {
            if (!pr.is_array() || pr.size() != 2) fail_config("override entries are [n, a]");
            overrides[pr.at(0).get<std::int64_t>()] = pr.at(1).get<double>();
        }
    }

    const std::int64_t count = n_max - n_min + 1;
    std::vector<double> a(static_cast<std::size_t>(count));
    for (std::int64_t n = n_min; n <= n_max; ++n) {
        const double mag = amplitude / (std::pow(std::abs(static_cast<double>(n)), kappa) + 1.0);
        double an = (sign == "alternating" && (n % 2 != 0)) ? -mag : mag;
        auto it = overrides.find(n);
        if (it != overrides.end()) an = it->second;
        a[static_cast<std::size_t>(n - n_min)] = an;
    }

    // Exact unbiasing over the realized window: pick a_0 so that the product
    // of p_n / q_n over every realized site equals one.
    if (unbias && n_min <= 0 && 0 <= n_max && !overrides.count(0)) {
        double log_prod = 0.0;
        for (std::int64_t n = n_min; n <= n_max; ++n) {
            if (n == 0) continue;
            const double an = a[static_cast<std::size_t>(n - n_min)];
            log_prod += std::log((0.5 - an) / (0.5 + an));
        }
        const double g = std::exp(-log_prod);  // target p_0/q_0
        a[static_cast<std::size_t>(-n_min)] = (1.0 - g) / (2.0 * (1.0 + g));
    }

    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(count));
    for (std::int64_t n = n_min; n <= n_max; ++n) {
        const double an = a[static_cast<std::size_t>(n - n_min)];
        if (std::abs(an) >= 0.5) fail_config("perturbed-srw site bias |a_n| >= 1/2");
        LayerTriple t;
        t.P = Mat::Constant(1, 1, (1.0 - laziness) * (0.5 - an));
        t.Q = Mat::Constant(1, 1, (1.0 - laziness) * (0.5 + an));
        t.R = Mat::Constant(1, 1, laziness);
        layers.push_back(std::move(t));
    }
    return layers;
}

// ---------------------------------------------------------------------------
// Generator: iid-balanced (width-m embedding of a zero-drift Z-walk)
// ---------------------------------------------------------------------------

/// Exponentially tilt positive weights w_s (s = -J..J) to exact zero mean:
/// find t with sum_s s * w_s * e^{t s} = 0, return the normalized law.
std::vector<double> tilt_to_zero_drift(const std::vector<double>& w, int J) {
    double t = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        double f = 0.0, fp = 0.0, z = 0.0;
        for (int s = -J; s <= J; ++s) {
            const double e = w[static_cast<std::size_t>(s + J)] * std::exp(t * s);
            f += s * e;
            fp += static_cast<double>(s) * s * e;
            z += e;
        }
        const double step = f / fp;
        t -= step;
        if (std::abs(f) <= 1e-16 * z * J) break;
    }
    std::vector<double> mu(w.size());
    double z = 0.0;
    for (int s = -J; s <= J; ++s) {
        mu[static_cast<std::size_t>(s + J)] = w[static_cast<std::size_t>(s + J)] * std::exp(t * s);
        z += mu[static_cast<std::size_t>(s + J)];
    }
    for (double& x : mu) x /= z;
    return mu;
}

std::vector<LayerTriple> gen_iid_balanced(const json& spec, std::int64_t n_min,
                                          std::int64_t n_max) {
    require_keys_subset(spec, {"kind", "m", "seed", "weight_range"}, "iid-balanced spec");
    const int m = static_cast<int>(get_int(spec, "m", 2));
    if (m < 1 || m > kMaxWidth) fail_config("m out of range [1, 16]");
    const auto seed = static_cast<std::uint64_t>(get_int(spec, "seed", 1));
    double wlo = 0.4, whi = 1.6;
    if (spec.contains("weight_range")) {
        const json& r = spec.at("weight_range");
        if (!r.is_array() || r.size() != 2) fail_config("weight_range is [lo, hi]");
        wlo = r.at(0).get<double>();
        whi = r.at(1).get<double>();
        if (!(0.0 < wlo && wlo < whi)) fail_config("weight_range needs 0 < lo < hi");
    }
    const int J = m;  // maximal jump of the embedded walk

    // Per-Z-site jump law, keyed by (seed, site) so any sub-window regenerates
    // identical layers.
    auto site_law = [&](std::int64_t z) {
        RngStream rng(split_seed(split_seed(seed, std::uint64_t{kSeedIidLayer}), z));
        std::vector<double> w(static_cast<std::size_t>(2 * J + 1));
        for (double& x : w) x = rng.next_range(wlo, whi);
        return tilt_to_zero_drift(w, J);
    };

    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(n_max - n_min + 1));
    for (std::int64_t n = n_min; n <= n_max; ++n) {
        LayerTriple t{Mat::Zero(m, m), Mat::Zero(m, m), Mat::Zero(m, m)};
        for (int i = 1; i <= m; ++i) {
            const std::vector<double> mu = site_law(n * m + (i - 1));
            for (int j = 1; j <= m; ++j) {
                const int sP = m + j - i;  // jump landing in layer n+1
                const int sR = j - i;      // jump staying in layer n
                const int sQ = j - i - m;  // jump landing in layer n-1
                if (sP <= J) t.P(i - 1, j - 1) = mu[static_cast<std::size_t>(sP + J)];
                t.R(i - 1, j - 1) = mu[static_cast<std::size_t>(sR + J)];
                if (sQ >= -J) t.Q(i - 1, j - 1) = mu[static_cast<std::size_t>(sQ + J)];
            }
        }
        layers.push_back(std::move(t));
    }
    return layers;
}

// ---------------------------------------------------------------------------
// Generator: quasiperiodic
// ---------------------------------------------------------------------------

/// A finite trig polynomial on the d-torus with seeded coefficients whose
/// amplitude decays like 1/h^2 in the harmonic index.
class TrigPoly {
public:
    TrigPoly() = default;
    TrigPoly(RngStream& rng, int dim, int harmonics, double roughness) {
        coef_.resize(static_cast<std::size_t>(dim * harmonics) * 2);
        for (int k = 0; k < dim; ++k) {
            for (int h = 1; h <= harmonics; ++h) {
                const double decay = roughness / (static_cast<double>(h) * h);
                coef_[idx(k, h, 0, harmonics)] = rng.next_range(-decay, decay);
                coef_[idx(k, h, 1, harmonics)] = rng.next_range(-decay, decay);
            }
        }
        dim_ = dim;
        harmonics_ = harmonics;
    }

    double operator()(const std::vector<double>& theta) const {
        double s = 0.0;
        for (int k = 0; k < dim_; ++k) {
            for (int h = 1; h <= harmonics_; ++h) {
                const double ang = 2.0 * std::numbers::pi * h * theta[static_cast<std::size_t>(k)];
                s += coef_[idx(k, h, 0, harmonics_)] * std::cos(ang);
                s += coef_[idx(k, h, 1, harmonics_)] * std::sin(ang);
            }
        }
        return s;
    }

private:
    static std::size_t idx(int k, int h, int part, int harmonics) {
        return static_cast<std::size_t>((k * harmonics + (h - 1)) * 2 + part);
    }
    std::vector<double> coef_;
    int dim_ = 0;
    int harmonics_ = 0;
};

std::vector<LayerTriple> gen_quasiperiodic(const json& spec, std::int64_t n_min,
                                           std::int64_t n_max) {
    require_keys_subset(spec,
                        {"kind", "m", "seed", "dim", "harmonics", "rotation", "phase",
                         "roughness", "drift_range"},
                        "quasiperiodic spec");
    const int m = static_cast<int>(get_int(spec, "m", 2));
    if (m < 1 || m > kMaxWidth) fail_config("m out of range [1, 16]");
    const auto seed = static_cast<std::uint64_t>(get_int(spec, "seed", 1));
    const int dim = static_cast<int>(get_int(spec, "dim", 1));
    const int harmonics = static_cast<int>(get_int(spec, "harmonics", 2));
    const double roughness = get_num(spec, "roughness", 0.8);
    if (dim < 1 || dim > 4) fail_config("dim out of range [1, 4]");
    if (harmonics < 1 || harmonics > 16) fail_config("harmonics out of range [1, 16]");

    // Default rotation: the golden-mean frequency, a quadratic irrational
    // with the best possible Diophantine constant.
    std::vector<double> rotation(static_cast<std::size_t>(dim),
                                 (std::sqrt(5.0) - 1.0) / 2.0);
    if (spec.contains("rotation")) {
        const json& r = spec.at("rotation");
        if (!r.is_array() || static_cast<int>(r.size()) != dim) {
            fail_config("rotation must have `dim` components");
        }
        for (int k = 0; k < dim; ++k) rotation[static_cast<std::size_t>(k)] = r.at(k).get<double>();
    }
    std::vector<double> phase(static_cast<std::size_t>(dim), 0.0);
    if (spec.contains("phase")) {
        const json& r = spec.at("phase");
        if (!r.is_array() || static_cast<int>(r.size()) != dim) {
            fail_config("phase must have `dim` components");
        }
        for (int k = 0; k < dim; ++k) phase[static_cast<std::size_t>(k)] = r.at(k).get<double>();
    }
    double clo = 0.2, chi = 0.45;
    if (spec.contains("drift_range")) {
        const json& r = spec.at("drift_range");
        if (!r.is_array() || r.size() != 2) fail_config("drift_range is [lo, hi]");
        clo = r.at(0).get<double>();
        chi = r.at(1).get<double>();
        if (!(0.0 < clo && clo <= chi && chi < 0.5)) {
            fail_config("drift_range needs 0 < lo <= hi < 1/2");
        }
    }

    // Seeded coefficient tables: weight polynomials for each entry of P, Q, R
    // plus the per-lane crossing-mass polynomial c_i.
    RngStream coeff_rng(split_seed(seed, std::uint64_t{kSeedQpCoeffs}));
    std::vector<TrigPoly> tP, tQ, tR, tC;
    tP.reserve(static_cast<std::size_t>(m) * m);
    tQ.reserve(static_cast<std::size_t>(m) * m);
    tR.reserve(static_cast<std::size_t>(m) * m);
    tC.reserve(static_cast<std::size_t>(m));
    for (int e = 0; e < m * m; ++e) tP.emplace_back(coeff_rng, dim, harmonics, roughness);
    for (int e = 0; e < m * m; ++e) tQ.emplace_back(coeff_rng, dim, harmonics, roughness);
    for (int e = 0; e < m * m; ++e) tR.emplace_back(coeff_rng, dim, harmonics, roughness);
    for (int i = 0; i < m; ++i) tC.emplace_back(coeff_rng, dim, harmonics, roughness);

    auto frac = [](double x) {
        double f = x - std::floor(x);
        return (f >= 1.0) ? f - 1.0 : f;
    };

    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(n_max - n_min + 1));
    std::vector<double> theta(static_cast<std::size_t>(dim));
    for (std::int64_t n = n_min; n <= n_max; ++n) {
        for (int k = 0; k < dim; ++k) {
            theta[static_cast<std::size_t>(k)] =
                frac(phase[static_cast<std::size_t>(k)] +
                     static_cast<double>(n) * rotation[static_cast<std::size_t>(k)]);
        }
        LayerTriple t{Mat(m, m), Mat(m, m), Mat(m, m)};
        for (int i = 0; i < m; ++i) {
            // Zero local drift by construction: row i of P and of Q both sum
            // to c_i(theta), and row i of R to 1 - 2 c_i(theta).
            const double c = clo + (chi - clo) * 0.5 * (1.0 + std::tanh(tC[i](theta)));
            double sP = 0.0, sQ = 0.0, sR = 0.0;
            for (int j = 0; j < m; ++j) {
                t.P(i, j) = std::exp(tP[static_cast<std::size_t>(i * m + j)](theta));
                t.Q(i, j) = std::exp(tQ[static_cast<std::size_t>(i * m + j)](theta));
                t.R(i, j) = std::exp(tR[static_cast<std::size_t>(i * m + j)](theta));
                sP += t.P(i, j);
                sQ += t.Q(i, j);
                sR += t.R(i, j);
            }
            for (int j = 0; j < m; ++j) {
                t.P(i, j) *= c / sP;
                t.Q(i, j) *= c / sQ;
                t.R(i, j) *= (1.0 - 2.0 * c) / sR;
            }
        }
        layers.push_back(std::move(t));
    }
    return layers;
}

// ---------------------------------------------------------------------------
// Generator: explicit tables
// ---------------------------------------------------------------------------

std::vector<LayerTriple> layers_from_table(const json& data, std::int64_t n_min,
                                           std::int64_t n_max, int* m_out) {
    require_keys_subset(data, {"m", "window", "buffer", "layers"}, "explicit table");
    if (!data.contains("m") || !data.contains("layers")) {
        fail_config("explicit table needs \"m\" and \"layers\"");
    }
    const int m = static_cast<int>(get_int(data, "m", 0));
    if (m < 1 || m > kMaxWidth) fail_config("m out of range [1, 16]");
    std::map<std::int64_t, LayerTriple> by_n;
    for (const auto& lj : data.at("layers")) {
        require_keys_subset(lj, {"n", "P", "Q", "R"}, "explicit layer");
        const std::int64_t n = lj.at("n").get<std::int64_t>();
        by_n[n] = LayerTriple{mat_from_json(lj.at("P"), m, "P"), mat_from_json(lj.at("Q"), m, "Q"),
                              mat_from_json(lj.at("R"), m, "R")};
    }
    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(n_max - n_min + 1));
    for (std::int64_t n = n_min; n <= n_max; ++n) {
        auto it = by_n.find(n);
        if (it == by_n.end()) {
            throw InsufficientWindow("explicit table does not provide layer " +
                                     std::to_string(n));
        }
        layers.push_back(it->second);
    }
    *m_out = m;
    return layers;
}

std::vector<LayerTriple> gen_explicit(const json& spec, std::int64_t n_min, std::int64_t n_max,
                                      int* m_out) {
    require_keys_subset(spec, {"kind", "data", "path"}, "explicit spec");
    if (spec.contains("data")) {
        return layers_from_table(spec.at("data"), n_min, n_max, m_out);
    }
    if (spec.contains("path")) {
        std::ifstream in(spec.at("path").get<std::string>());
        if (!in) fail_config("cannot open explicit table file");
        json data = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (data.is_discarded()) fail_config("explicit table file is not valid JSON");
        return layers_from_table(data, n_min, n_max, m_out);
    }
    fail_config("explicit spec needs \"data\" or \"path\"");
}

int spec_width(const json& spec) {
    const std::string kind = spec.value("kind", std::string());
    if (kind == "perturbed-srw") return 1;
    if (kind == "constant" || kind == "iid-balanced" || kind == "quasiperiodic") {
        return static_cast<int>(get_int(spec, "m", kind == "constant" ? 1 : 2));
    }
    return 0;  // explicit: width read from the table
}

}  // namespace

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

Environment::Environment(int m, std::int64_t window_lo, std::int64_t window_hi, int buffer,
                         std::vector<LayerTriple> layers, std::string spec_json)
    : m_(m),
      window_lo_(window_lo),
      window_hi_(window_hi),
      buffer_(buffer),
      layers_(std::move(layers)),
      spec_json_(std::move(spec_json)) {
    if (window_hi_ < window_lo_) throw ConfigInvalid("window_hi < window_lo");
    if (buffer_ < 0) throw ConfigInvalid("negative buffer");
    if (static_cast<std::int64_t>(layers_.size()) != num_layers()) {
        throw ConfigInvalid("layer count does not match window + buffer");
    }
    for (std::int64_t n = n_min(); n <= n_max(); ++n) {
        const LayerTriple& t = layers_[static_cast<std::size_t>(n - n_min())];
        if (t.P.rows() != m_) throw WidthMismatch("layer width differs from env width");
        validate_layer(t, n);
    }
}

const LayerTriple& Environment::layer(std::int64_t n) const {
    if (n < n_min() || n > n_max()) {
        throw InsufficientWindow("layer " + std::to_string(n) + " outside realized range [" +
                                 std::to_string(n_min()) + ", " + std::to_string(n_max()) + "]");
    }
    return layers_[static_cast<std::size_t>(n - n_min())];
}

Environment build_environment(const std::string& spec_json, std::int64_t window_lo,
                              std::int64_t window_hi, int buffer) {
    json spec = parse_spec(spec_json);
    if (window_hi < window_lo) throw ConfigInvalid("window_hi < window_lo");
    if (buffer < 0) throw ConfigInvalid("negative buffer");
    const std::int64_t n_min = window_lo - buffer;
    const std::int64_t n_max = window_hi + buffer;
    if (n_max - n_min + 1 > 20'000'000) throw ConfigInvalid("window too large");

    const std::string kind = spec.value("kind", std::string());
    std::vector<LayerTriple> layers;
    int m = spec_width(spec);
    if (kind == "constant") {
        layers = gen_constant(spec, n_max - n_min + 1);
    } else if (kind == "perturbed-srw") {
        layers = gen_perturbed_srw(spec, n_min, n_max);
    } else if (kind == "iid-balanced") {
        layers = gen_iid_balanced(spec, n_min, n_max);
    } else if (kind == "quasiperiodic") {
        layers = gen_quasiperiodic(spec, n_min, n_max);
    } else if (kind == "explicit") {
        layers = gen_explicit(spec, n_min, n_max, &m);
    } else {
        throw UnknownGeneratorTag("unknown env generator tag \"" + kind + "\"");
    }
    return Environment(m, window_lo, window_hi, buffer, std::move(layers), spec.dump());
}

void validate_generator_spec(const std::string& spec_json) {
    json spec = parse_spec(spec_json);
    const std::string kind = spec.value("kind", std::string());
    if (kind == "constant") {
        require_keys_subset(spec, {"kind", "m", "P", "Q", "R"}, "constant spec");
    } else if (kind == "perturbed-srw") {
        require_keys_subset(
            spec, {"kind", "kappa", "amplitude", "sign", "unbias", "laziness", "overrides"},
            "perturbed-srw spec");
    } else if (kind == "iid-balanced") {
        require_keys_subset(spec, {"kind", "m", "seed", "weight_range"}, "iid-balanced spec");
    } else if (kind == "quasiperiodic") {
        require_keys_subset(spec,
                            {"kind", "m", "seed", "dim", "harmonics", "rotation", "phase",
                             "roughness", "drift_range"},
                            "quasiperiodic spec");
    } else if (kind == "explicit") {
        require_keys_subset(spec, {"kind", "data", "path"}, "explicit spec");
        if (spec.contains("data") && spec.at("data").is_object()) {
            const json& data = spec.at("data");
            require_keys_subset(data, {"m", "window", "buffer", "layers"}, "explicit table");
            if (data.contains("layers") && data.at("layers").is_array()) {
                for (const json& lj : data.at("layers")) {
                    if (lj.is_object()) {
                        require_keys_subset(lj, {"n", "P", "Q", "R"}, "explicit layer");
                    }
                }
            }
        }
    } else {
        throw UnknownGeneratorTag("unknown env generator tag \"" + kind + "\"");
    }
}

// ---------------------------------------------------------------------------
// Ellipticity
// ---------------------------------------------------------------------------

EllipticityReport validate_ellipticity(const Environment& env, int k0_max) {
    const int m = env.m();
    EllipticityReport rep;

    // Smallest k0 with sup_n ||R_n^k0|| < 1, then the certified eps_bar.
    double min_cross_P = std::numeric_limits<double>::infinity();
    double min_cross_Q = std::numeric_limits<double>::infinity();
    std::vector<double> max_pow_norm(static_cast<std::size_t>(k0_max), 0.0);
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const LayerTriple& t = env.layer(n);
        Mat rk = Mat::Identity(m, m);
        for (int k = 1; k <= k0_max; ++k) {
            rk = rk * t.R;
            max_pow_norm[static_cast<std::size_t>(k - 1)] =
                std::max(max_pow_norm[static_cast<std::size_t>(k - 1)], max_row_sum(rk));
        }
        const Mat inv = solve_checked(Mat::Identity(m, m) - t.R, Mat::Identity(m, m),
                                      "ellipticity scan");
        min_cross_P = std::min(min_cross_P, min_entry(inv * t.P));
        min_cross_Q = std::min(min_cross_Q, min_entry(inv * t.Q));
    }

    int k0 = 0;
    for (int k = 1; k <= k0_max; ++k) {
        if (max_pow_norm[static_cast<std::size_t>(k - 1)] < 1.0) {
            k0 = k;
            break;
        }
    }
    rep.k0 = k0;
    rep.min_cross_P = min_cross_P;
    rep.min_cross_Q = min_cross_Q;
    if (k0 == 0) {
        rep.elliptic = false;
        rep.max_R_pow_norm = max_pow_norm.empty() ? 1.0 : max_pow_norm.back();
        rep.eps_bar = 0.0;
        return rep;
    }
    rep.max_R_pow_norm = max_pow_norm[static_cast<std::size_t>(k0 - 1)];
    rep.eps_bar = std::min({min_cross_P, min_cross_Q, 1.0 - rep.max_R_pow_norm});
    rep.elliptic = rep.eps_bar > 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Metric, lazify, perturb
// ---------------------------------------------------------------------------

double env_distance(const Environment& a, const Environment& b) {
    if (a.m() != b.m()) throw WidthMismatch("env_distance: widths differ");
    const std::int64_t lo = std::max(a.n_min(), b.n_min());
    const std::int64_t hi = std::min(a.n_max(), b.n_max());
    double d = 0.0;
    for (std::int64_t n = lo; n <= hi; ++n) {
        const LayerTriple& ta = a.layer(n);
        const LayerTriple& tb = b.layer(n);
        const double term = 0.5 * (max_row_sum(ta.P - tb.P) + max_row_sum(ta.Q - tb.Q) +
                                   max_row_sum(ta.R - tb.R));
        d += term * std::pow(2.0, -static_cast<double>(std::abs(n)));
    }
    return d;
}

Environment lazify(const Environment& env, double r) {
    if (r < 0.0 || r >= 1.0) throw ConfigInvalid("laziness must be in [0, 1)");
    const int m = env.m();
    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(env.num_layers()));
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const LayerTriple& t = env.layer(n);
        layers.push_back(LayerTriple{(1.0 - r) * t.P, (1.0 - r) * t.Q,
                                     (1.0 - r) * t.R + r * Mat::Identity(m, m)});
    }
    json meta = json::object();
    if (!env.spec_json().empty()) meta["base"] = json::parse(env.spec_json());
    meta["lazify"] = r;
    return Environment(m, env.window_lo(), env.window_hi(), env.buffer(), std::move(layers),
                       meta.dump());
}

Environment perturb(const Environment& env, double kappa, double amplitude,
                    const std::string& sign) {
    if (kappa <= 1.0) throw ConfigInvalid("perturb needs kappa > 1");
    if (std::abs(amplitude) > 1.0) throw ConfigInvalid("perturb needs |amplitude| <= 1");
    if (sign != "positive" && sign != "alternating") {
        throw ConfigInvalid("perturb sign must be \"positive\" or \"alternating\"");
    }
    std::vector<LayerTriple> layers;
    layers.reserve(static_cast<std::size_t>(env.num_layers()));
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const LayerTriple& t = env.layer(n);
        double f = amplitude / (std::pow(std::abs(static_cast<double>(n)), kappa) + 1.0);
        if (sign == "alternating" && (n % 2 != 0)) f = -f;
        LayerTriple u;
        if (f >= 0.0) {
            // Move the fraction f of each Q row into the mirrored P entry.
            u.P = t.P + f * t.Q;
            u.Q = (1.0 - f) * t.Q;
        } else {
            u.P = (1.0 + f) * t.P;
            u.Q = t.Q - f * t.P;
        }
        u.R = t.R;
        layers.push_back(std::move(u));
    }
    json meta = json::object();
    if (!env.spec_json().empty()) meta["base"] = json::parse(env.spec_json());
    meta["perturb"] = {{"kappa", kappa}, {"amplitude", amplitude}, {"sign", sign}};
    return Environment(env.m(), env.window_lo(), env.window_hi(), env.buffer(),
                       std::move(layers), meta.dump());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string env_to_json(const Environment& env) {
    json out;
    out["m"] = env.m();
    out["window"] = {env.window_lo(), env.window_hi()};
    out["buffer"] = env.buffer();
    json layers = json::array();
    for (std::int64_t n = env.n_min(); n <= env.n_max(); ++n) {
        const LayerTriple& t = env.layer(n);
        layers.push_back({{"n", n},
                          {"P", mat_to_json(t.P)},
                          {"Q", mat_to_json(t.Q)},
                          {"R", mat_to_json(t.R)}});
    }
    out["layers"] = std::move(layers);
    return out.dump();
}

Environment env_from_json(const std::string& json_text) {
    json data = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
    if (data.is_discarded() || !data.is_object()) {
        throw ConfigInvalid("environment JSON is malformed");
    }
    if (!data.contains("window") || !data.at("window").is_array() ||
        data.at("window").size() != 2) {
        throw ConfigInvalid("environment JSON needs \"window\": [lo, hi]");
    }
    const std::int64_t lo = data.at("window").at(0).get<std::int64_t>();
    const std::int64_t hi = data.at("window").at(1).get<std::int64_t>();
    const int buffer = static_cast<int>(get_int(data, "buffer", 0));
    int m = 0;
    std::vector<LayerTriple> layers = layers_from_table(data, lo - buffer, hi + buffer, &m);
    json spec = {{"kind", "explicit"}, {"data", data}};
    return Environment(m, lo, hi, buffer, std::move(layers), spec.dump());
}

}  // namespace striprw
