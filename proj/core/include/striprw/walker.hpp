#pragma once

/// @file walker.hpp
/// @brief Seeded simulation of the walk with streaming statistics: endpoints,
/// intermediate marks, local times, ladder times, and additive functionals.
///
/// Determinism contract: trajectory `i` of an ensemble is fully determined by
/// (master_seed, i, spec); ensembles reduce identically for every thread
/// count because each trajectory owns a stream keyed by its index and writes
/// its own slot.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "striprw/env.hpp"
#include "striprw/rng.hpp"

namespace striprw {

/// Site function given as a per-layer table; lanes are 1-based.
struct Observable {
    std::int64_t lo = 0, hi = -1;
    std::vector<Vec> h;

    double at(std::int64_t n, int lane) const;
};

Observable make_constant_observable(const Environment& env, double c);
Observable make_even_layer_indicator(const Environment& env);
Observable make_lane_indicator(const Environment& env, int lane);

/// Window average of rho_n . h_n over [window_lo, window_hi]; the predicted
/// numerator of ergodic limits (the denominator is the occupation average a).
double observable_average(const Observable& obs, const std::vector<RowVec>& rho,
                          std::int64_t rho_lo, std::int64_t window_lo, std::int64_t window_hi);

struct TrajectorySpec {
    std::int64_t start_layer = 0;
    int start_lane = 1;
    std::int64_t horizon = 0;  ///< number of steps N
    std::vector<std::int64_t> marks;  ///< sorted times at which to record the site
    std::vector<std::pair<std::int64_t, int>> local_time_sites;  ///< (layer, lane)
    std::int64_t ladder_scale = 0;  ///< record times the layer moves this far; 0 = off
    const Observable* observable = nullptr;  ///< accumulate sum of h over steps 1..N
    bool track_max_abs = false;
};

struct TrajectoryStats {
    std::int64_t end_layer = 0;
    int end_lane = 1;
    std::vector<std::pair<std::int64_t, int>> mark_sites;
    std::vector<std::int64_t> local_times;  ///< aligned with spec.local_time_sites
    std::vector<std::int64_t> ladder_times;
    std::vector<std::int64_t> ladder_layers;
    double observable_sum = 0.0;
    std::int64_t max_abs_layer = 0;
};

/// Per-site inverse-CDF sampling tables over the 3m successors of each site,
/// materialized once per environment.
class TrajectorySimulator {
 public:
    explicit TrajectorySimulator(const Environment& env);

    /// One transition from (layer, lane); lane is 1-based.
    std::pair<std::int64_t, int> step(std::int64_t layer, int lane, RngStream& rng) const;

    /// Full trajectory with all requested collectors filled in one pass.
    /// Throws WindowEscape (with the step index) if the walk leaves the
    /// materialized environment; escapes are never clamped.
    TrajectoryStats run(const TrajectorySpec& spec, RngStream& rng) const;

    const Environment& env() const { return *env_; }

 private:
    const Environment* env_;
    std::int64_t lo_ = 0, hi_ = -1;
    int m_ = 0;
    // Flat table: for each layer, m rows of 3m cumulative probabilities;
    // successors ordered up-moves (lane 1..m), stays, down-moves.
    std::vector<double> cum_;
    std::size_t layer_stride_ = 0;
};

/// Runs trajectory `index` of the ensemble: stream = split_seed(master, index).
TrajectoryStats run_trajectory(const TrajectorySimulator& sim, const TrajectorySpec& spec,
                               std::uint64_t master_seed, std::int64_t index);

/// Deterministic parallel sweep: `sink(i, stats)` is invoked exactly once per
/// trajectory, from worker threads, with disjoint indices; any exception is
/// rethrown on the calling thread. Results are independent of thread count.
void run_ensemble_apply(const TrajectorySimulator& sim, const TrajectorySpec& spec,
                        std::int64_t n_traj, std::uint64_t master_seed, int num_threads,
                        const std::function<void(std::int64_t, const TrajectoryStats&)>& sink);

/// Convenience wrapper storing all per-trajectory statistics.
std::vector<TrajectoryStats> run_ensemble(const TrajectorySimulator& sim,
                                          const TrajectorySpec& spec, std::int64_t n_traj,
                                          std::uint64_t master_seed, int num_threads = 0);

/// Debug dump: simulates one trajectory and writes the visited sites as a
/// zigzag-varint byte stream (layer delta, lane) per step; returns the bytes.
std::vector<std::uint8_t> dump_trajectory(const TrajectorySimulator& sim,
                                          const TrajectorySpec& spec, std::uint64_t seed);

}  // namespace striprw
