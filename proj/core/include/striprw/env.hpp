#pragma once

/// @file env.hpp
/// @brief Strip environments: layered transition triples (P_n, Q_n, R_n).
///
/// The state space is Z x {1..m}. At a site in layer n, row i of P_n holds
/// the probabilities of moving to layer n+1, R_n of staying in layer n, and
/// Q_n of moving to layer n-1; rows of P_n + Q_n + R_n sum to one.
///
/// Environments are realized on a finite window [window_lo, window_hi]
/// extended by `buffer` layers on each side. Generators are pure functions
/// of (spec, window, buffer): re-building any sub-window reproduces the same
/// layers bit for bit.

#include <cstdint>
#include <string>
#include <vector>

#include "striprw/matrix.hpp"

namespace striprw {

/// One layer of the environment.
struct LayerTriple {
    Mat P;  ///< to layer n+1
    Mat Q;  ///< to layer n-1
    Mat R;  ///< within layer n
};

/// A realized environment on a finite window plus buffer.
class Environment {
public:
    Environment(int m, std::int64_t window_lo, std::int64_t window_hi, int buffer,
                std::vector<LayerTriple> layers, std::string spec_json);

    int m() const { return m_; }
    std::int64_t window_lo() const { return window_lo_; }
    std::int64_t window_hi() const { return window_hi_; }
    int buffer() const { return buffer_; }

    /// First / last realized layer index (window extended by the buffer).
    std::int64_t n_min() const { return window_lo_ - buffer_; }
    std::int64_t n_max() const { return window_hi_ + buffer_; }
    std::int64_t num_layers() const { return n_max() - n_min() + 1; }

    const LayerTriple& layer(std::int64_t n) const;

    /// Canonical JSON of the generating spec (empty for ad-hoc environments).
    const std::string& spec_json() const { return spec_json_; }

private:
    int m_;
    std::int64_t window_lo_, window_hi_;
    int buffer_;
    std::vector<LayerTriple> layers_;
    std::string spec_json_;
};

/// Certified ellipticity constants of an environment.
///
/// k0 is the smallest power with max_n ||R_n^k0|| < 1; eps_bar is the
/// largest constant that simultaneously satisfies
///   ||R_n^k0|| <= 1 - eps_bar,
///   ((I-R_n)^-1 P_n)(i,j) >= eps_bar,  ((I-R_n)^-1 Q_n)(i,j) >= eps_bar.
struct EllipticityReport {
    bool elliptic = false;
    int k0 = 0;
    double eps_bar = 0.0;
    double max_R_pow_norm = 1.0;  ///< max_n ||R_n^k0||
    double min_cross_P = 0.0;     ///< min entry of (I-R)^-1 P over the window
    double min_cross_Q = 0.0;     ///< min entry of (I-R)^-1 Q over the window
};

/// Build an environment from a generator spec (JSON text).
///
/// Supported tags:
///   "constant"       : one (P,Q,R) triple repeated on every layer (any m)
///   "perturbed-srw"  : m=1 walk p_n = (1-r)(1/2 - a_n), q_n = (1-r)(1/2 + a_n)
///                      with |a_n| <= amplitude / (|n|^kappa + 1), optional
///                      alternating signs, per-site overrides, and an exact
///                      window unbiasing of the product of p/q ratios
///   "iid-balanced"   : width-m embedding of a Z-walk with jumps in [-m, m]
///                      whose per-site law is drawn iid (keyed by (seed, site))
///                      and exponentially tilted to exact zero drift
///   "quasiperiodic"  : analytic layers sampled along an irrational rotation,
///                      rows built as P 1 = Q 1 = c(i, theta) (zero local
///                      drift), trig-polynomial weight tables keyed by seed
///   "explicit"       : literal layer tables, inline under "data" or in a
///                      side file under "path"
///
/// Throws UnknownGeneratorTag / NonStochasticSpec / ConfigInvalid on bad
/// specs and SingularLayer if some (I - R_n) is not invertible.
Environment build_environment(const std::string& spec_json, std::int64_t window_lo,
                              std::int64_t window_hi, int buffer = 200);

/// Key-level check of a generator spec without materializing any layers:
/// the tag must be known and every key (including nested explicit-table
/// keys) must belong to that generator's schema. Value errors (shapes,
/// stochasticity, ranges) are still reported by `build_environment`.
void validate_generator_spec(const std::string& spec_json);

/// Scan the realized window and certify ellipticity constants.
EllipticityReport validate_ellipticity(const Environment& env, int k0_max = 8);

/// Distance between two environments on the same width:
///   sum_n 2^{-|n|} (||P'_n - P''_n|| + ||Q'_n - Q''_n|| + ||R'_n - R''_n||) / 2
/// over the common realized range. Throws WidthMismatch if widths differ.
double env_distance(const Environment& a, const Environment& b);

/// Lazy version: ((1-r) P, (1-r) Q, (1-r) R + r I), r in [0, 1).
Environment lazify(const Environment& env, double r);

/// Layer-decaying perturbation: moves the fraction f_n = amplitude/(|n|^kappa + 1)
/// of each Q_n row into the corresponding P_n row (amplitude < 0 moves mass the
/// other way; sign="alternating" flips the direction with the parity of n).
/// Entrywise deviation at layer n is bounded by |amplitude| / (|n|^kappa + 1).
Environment perturb(const Environment& env, double kappa, double amplitude,
                    const std::string& sign = "positive");

/// Serialize the realized layers (17-significant-digit round trip) in the
/// explicit-table schema; `env_from_json` restores them exactly.
std::string env_to_json(const Environment& env);
Environment env_from_json(const std::string& json_text);

}  // namespace striprw
