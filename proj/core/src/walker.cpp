#include "striprw/walker.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "striprw/errors.hpp"

namespace striprw {

// ===== observables =====

double Observable::at(std::int64_t n, int lane) const {
    if (n < lo || n > hi) {
        throw InsufficientWindow("observable table does not cover visited layer " +
                                 std::to_string(n));
    }
    return h[static_cast<std::size_t>(n - lo)](lane - 1);
}

Observable make_constant_observable(const Environment& env, double c) {
    Observable o;
    o.lo = env.n_min();
    o.hi = env.n_max();
    o.h.assign(static_cast<std::size_t>(o.hi - o.lo + 1), Vec::Constant(env.m(), c));
    return o;
}

Observable make_even_layer_indicator(const Environment& env) {
    Observable o;
    o.lo = env.n_min();
    o.hi = env.n_max();
    o.h.resize(static_cast<std::size_t>(o.hi - o.lo + 1));
    for (std::int64_t n = o.lo; n <= o.hi; ++n) {
        const bool even = ((n % 2) + 2) % 2 == 0;
        o.h[static_cast<std::size_t>(n - o.lo)] = Vec::Constant(env.m(), even ? 1.0 : 0.0);
    }
    return o;
}

Observable make_lane_indicator(const Environment& env, int lane) {
    if (lane < 1 || lane > env.m()) throw ConfigInvalid("lane indicator out of range");
    Observable o;
    o.lo = env.n_min();
    o.hi = env.n_max();
    Vec v = Vec::Zero(env.m());
    v(lane - 1) = 1.0;
    o.h.assign(static_cast<std::size_t>(o.hi - o.lo + 1), v);
    return o;
}

double observable_average(const Observable& obs, const std::vector<RowVec>& rho,
                          std::int64_t rho_lo, std::int64_t window_lo,
                          std::int64_t window_hi) {
    if (window_lo > window_hi) throw InsufficientWindow("empty observable window");
    double s = 0.0;
    for (std::int64_t n = window_lo; n <= window_hi; ++n) {
        const RowVec& r = rho[static_cast<std::size_t>(n - rho_lo)];
        const Vec& hv = obs.h[static_cast<std::size_t>(n - obs.lo)];
        s += r.dot(hv);
    }
    return s / static_cast<double>(window_hi - window_lo + 1);
}

// ===== simulator =====

TrajectorySimulator::TrajectorySimulator(const Environment& env)
    : env_(&env), lo_(env.n_min()), hi_(env.n_max()), m_(static_cast<int>(env.m())) {
    const std::size_t row = static_cast<std::size_t>(3 * m_);
    layer_stride_ = static_cast<std::size_t>(m_) * row;
    cum_.resize(static_cast<std::size_t>(hi_ - lo_ + 1) * layer_stride_);
    for (std::int64_t n = lo_; n <= hi_; ++n) {
        const auto& L = env.layer(n);
        double* base = cum_.data() + static_cast<std::size_t>(n - lo_) * layer_stride_;
        for (int i = 0; i < m_; ++i) {
            double* r = base + static_cast<std::size_t>(i) * row;
            double acc = 0.0;
            for (int j = 0; j < m_; ++j) r[j] = (acc += L.P(i, j));
            for (int j = 0; j < m_; ++j) r[m_ + j] = (acc += L.R(i, j));
            for (int j = 0; j < m_; ++j) r[2 * m_ + j] = (acc += L.Q(i, j));
        }
    }
}

std::pair<std::int64_t, int> TrajectorySimulator::step(std::int64_t layer, int lane,
                                                       RngStream& rng) const {
    if (layer < lo_ || layer > hi_) {
        throw WindowEscape("walk left the materialized environment");
    }
    const int row = 3 * m_;
    const double* r = cum_.data() + static_cast<std::size_t>(layer - lo_) * layer_stride_ +
                      static_cast<std::size_t>(lane - 1) * static_cast<std::size_t>(row);
    const double u = rng.next_unit() * r[row - 1];
    int k = 0;
    while (k < row - 1 && u >= r[k]) ++k;
    if (k < m_) return {layer + 1, k + 1};
    if (k < 2 * m_) return {layer, k - m_ + 1};
    return {layer - 1, k - 2 * m_ + 1};
}

TrajectoryStats TrajectorySimulator::run(const TrajectorySpec& spec, RngStream& rng) const {
    if (spec.horizon < 0) throw ConfigInvalid("trajectory horizon must be non-negative");
    if (spec.start_layer < lo_ || spec.start_layer > hi_ || spec.start_lane < 1 ||
        spec.start_lane > m_) {
        throw ConfigInvalid("trajectory start outside the materialized environment");
    }
    for (std::size_t i = 1; i < spec.marks.size(); ++i) {
        if (spec.marks[i] < spec.marks[i - 1]) throw ConfigInvalid("marks must be sorted");
    }
    TrajectoryStats st;
    st.local_times.assign(spec.local_time_sites.size(), 0);

    std::int64_t layer = spec.start_layer;
    int lane = spec.start_lane;
    const auto visit = [&](std::int64_t n, int y) {
        for (std::size_t s = 0; s < spec.local_time_sites.size(); ++s) {
            if (spec.local_time_sites[s].first == n && spec.local_time_sites[s].second == y) {
                ++st.local_times[s];
            }
        }
    };
    visit(layer, lane);  // initial occupancy counts
    std::size_t mark_idx = 0;
    while (mark_idx < spec.marks.size() && spec.marks[mark_idx] == 0) {
        st.mark_sites.emplace_back(layer, lane);
        ++mark_idx;
    }
    std::int64_t anchor = layer;
    st.max_abs_layer = std::abs(layer);
    const bool has_sites = !spec.local_time_sites.empty();

    for (std::int64_t t = 1; t <= spec.horizon; ++t) {
        const int row = 3 * m_;
        const double* r = cum_.data() + static_cast<std::size_t>(layer - lo_) * layer_stride_ +
                          static_cast<std::size_t>(lane - 1) * static_cast<std::size_t>(row);
        const double u = rng.next_unit() * r[row - 1];
        int k = 0;
        while (k < row - 1 && u >= r[k]) ++k;
        if (k < m_) {
            ++layer;
            lane = k + 1;
        } else if (k < 2 * m_) {
            lane = k - m_ + 1;
        } else {
            --layer;
            lane = k - 2 * m_ + 1;
        }
        if (layer < lo_ || layer > hi_) {
            throw WindowEscape("walk left the materialized environment at step " +
                               std::to_string(t));
        }
        if (has_sites) visit(layer, lane);
        if (spec.observable != nullptr) st.observable_sum += spec.observable->at(layer, lane);
        if (spec.ladder_scale > 0 && std::abs(layer - anchor) == spec.ladder_scale) {
            st.ladder_times.push_back(t);
            st.ladder_layers.push_back(layer);
            anchor = layer;
        }
        if (spec.track_max_abs) st.max_abs_layer = std::max(st.max_abs_layer, std::abs(layer));
        while (mark_idx < spec.marks.size() && spec.marks[mark_idx] == t) {
            st.mark_sites.emplace_back(layer, lane);
            ++mark_idx;
        }
    }
    if (mark_idx < spec.marks.size()) {
        throw ConfigInvalid("mark time beyond the trajectory horizon");
    }
    st.end_layer = layer;
    st.end_lane = lane;
    return st;
}

// ===== ensembles =====

TrajectoryStats run_trajectory(const TrajectorySimulator& sim, const TrajectorySpec& spec,
                               std::uint64_t master_seed, std::int64_t index) {
    RngStream rng(split_seed(master_seed, static_cast<std::uint64_t>(index)));
    return sim.run(spec, rng);
}

void run_ensemble_apply(const TrajectorySimulator& sim, const TrajectorySpec& spec,
                        std::int64_t n_traj, std::uint64_t master_seed, int num_threads,
                        const std::function<void(std::int64_t, const TrajectoryStats&)>& sink) {
    if (n_traj < 1) throw ConfigInvalid("ensemble needs at least one trajectory");
    int threads = num_threads;
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads <= 0) threads = 4;
    }
    threads = std::min<int>(threads, 64);
    const std::int64_t block = 1024;
    const std::int64_t n_blocks = (n_traj + block - 1) / block;
    std::atomic<std::int64_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    std::exception_ptr first_error;

    const auto worker = [&]() {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::int64_t blk = next.fetch_add(1, std::memory_order_relaxed);
            if (blk >= n_blocks) return;
            const std::int64_t lo = blk * block;
            const std::int64_t hi = std::min(lo + block, n_traj);
            for (std::int64_t i = lo; i < hi; ++i) {
                try {
                    RngStream rng(split_seed(master_seed, static_cast<std::uint64_t>(i)));
                    const TrajectoryStats st = sim.run(spec, rng);
                    sink(i, st);
                } catch (const WindowEscape& e) {
                    std::lock_guard<std::mutex> g(err_mutex);
                    if (!first_error) {
                        first_error = std::make_exception_ptr(WindowEscape(
                            std::string(e.what()) + " (trajectory " + std::to_string(i) + ")"));
                    }
                    failed.store(true, std::memory_order_relaxed);
                    return;
                } catch (...) {
                    std::lock_guard<std::mutex> g(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true, std::memory_order_relaxed);
                    return;
                }
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<TrajectoryStats> run_ensemble(const TrajectorySimulator& sim,
                                          const TrajectorySpec& spec, std::int64_t n_traj,
                                          std::uint64_t master_seed, int num_threads) {
    std::vector<TrajectoryStats> out(static_cast<std::size_t>(n_traj));
    run_ensemble_apply(sim, spec, n_traj, master_seed, num_threads,
                       [&](std::int64_t i, const TrajectoryStats& st) {
                           out[static_cast<std::size_t>(i)] = st;
                       });
    return out;
}

// ===== debug dump =====

namespace {
void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v) | 0x80);
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}
std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
}  // namespace

std::vector<std::uint8_t> dump_trajectory(const TrajectorySimulator& sim,
                                          const TrajectorySpec& spec, std::uint64_t seed) {
    std::vector<std::uint8_t> bytes;
    RngStream rng(seed);
    std::int64_t layer = spec.start_layer;
    int lane = spec.start_lane;
    put_varint(bytes, zigzag(layer));
    put_varint(bytes, static_cast<std::uint64_t>(lane));
    for (std::int64_t t = 1; t <= spec.horizon; ++t) {
        const auto nxt = sim.step(layer, lane, rng);
        put_varint(bytes, zigzag(nxt.first - layer));
        put_varint(bytes, static_cast<std::uint64_t>(nxt.second));
        layer = nxt.first;
        lane = nxt.second;
    }
    return bytes;
}

}  // namespace striprw
