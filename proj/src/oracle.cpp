#include "etmc/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace etmc {

namespace {

constexpr std::uint32_t kPhiloxMul0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxBump0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxBump1 = 0xBB67AE85u;

inline void philox_round(std::array<std::uint32_t, 4>& ctr,
                         std::array<std::uint32_t, 2>& key) {
  const std::uint64_t prod0 = std::uint64_t{kPhiloxMul0} * ctr[0];
  const std::uint64_t prod1 = std::uint64_t{kPhiloxMul1} * ctr[2];
  const auto hi0 = static_cast<std::uint32_t>(prod0 >> 32);
  const auto lo0 = static_cast<std::uint32_t>(prod0);
  const auto hi1 = static_cast<std::uint32_t>(prod1 >> 32);
  const auto lo1 = static_cast<std::uint32_t>(prod1);
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  key[0] += kPhiloxBump0;
  key[1] += kPhiloxBump1;
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_{static_cast<std::uint32_t>(seed),
           static_cast<std::uint32_t>(seed >> 32)},
      stream_(stream) {}

void CounterRng::refill() {
  std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block_index_),
      static_cast<std::uint32_t>(block_index_ >> 32),
      static_cast<std::uint32_t>(stream_),
      static_cast<std::uint32_t>(stream_ >> 32)};
  std::array<std::uint32_t, 2> key = key_;
  for (int round = 0; round < 10; ++round) philox_round(ctr, key);
  block_ = ctr;
  ++block_index_;
  cursor_ = 0;
}

std::uint64_t CounterRng::next_u64() {
  if (cursor_ >= 4) refill();
  const std::uint64_t lo = block_[cursor_];
  const std::uint64_t hi = block_[cursor_ + 1];
  cursor_ += 2;
  return lo | (hi << 32);
}

double CounterRng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

namespace {

// Cumulative sampler over one row's nonzero entries; inverse-CDF lookup.
struct RowSampler {
  std::vector<double> cumulative;
  std::vector<int> successor;

  int sample(double u) const {
    auto it =
        std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;  // u landed in row-sum rounding dust
    return successor[it - cumulative.begin()];
  }
};

struct SamplingLayout {
  std::vector<RowSampler> rows;     // indexed by original state
  std::vector<char> absorbing;      // p_ii within kAbsorbingTolerance of 1
};

SamplingLayout build_layout(const TransitionMatrix& tm) {
  const int n = tm.size();
  SamplingLayout layout;
  layout.rows.resize(n);
  layout.absorbing.resize(n);
  for (int i = 0; i < n; ++i) {
    layout.absorbing[i] = tm.p(i, i) >= 1.0 - kAbsorbingTolerance;
    if (layout.absorbing[i]) continue;
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      if (tm.p(i, j) <= 0.0) continue;
      acc += tm.p(i, j);
      layout.rows[i].cumulative.push_back(acc);
      layout.rows[i].successor.push_back(j);
    }
  }
  return layout;
}

// Streaming mean/M2 (Welford); merged pairwise in a fixed order so the
// final numbers are independent of which thread ran which chunk.
struct ChunkStats {
  long long count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  long long rejected = 0;

  void add(double x) {
    ++count;
    const double d1 = x - mean;
    mean += d1 / static_cast<double>(count);
    m2 += d1 * (x - mean);
  }
};

ChunkStats merge(const ChunkStats& a, const ChunkStats& b) {
  if (a.count == 0) {
    ChunkStats out = b;
    out.rejected += a.rejected;
    return out;
  }
  if (b.count == 0) {
    ChunkStats out = a;
    out.rejected += b.rejected;
    return out;
  }
  ChunkStats out;
  out.count = a.count + b.count;
  const double delta = b.mean - a.mean;
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  const double n = na + nb;
  out.mean = a.mean + delta * nb / n;
  out.m2 = a.m2 + b.m2 + delta * delta * na * nb / n;
  out.rejected = a.rejected + b.rejected;
  return out;
}

ChunkStats merge_range(const std::vector<ChunkStats>& chunks, std::size_t lo,
                       std::size_t hi) {
  if (hi - lo == 1) return chunks[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return merge(merge_range(chunks, lo, mid), merge_range(chunks, mid, hi));
}

void check_sim_config(const SimConfig& cfg) {
  if (cfg.trajectories < 1)
    throw ValidationError("trajectory target must be at least 1");
  if (cfg.max_steps < 1)
    throw ValidationError("max_steps must be at least 1");
  if (cfg.chunk < 1) throw ValidationError("chunk size must be at least 1");
  if (cfg.rejection_factor < 1)
    throw ValidationError("rejection_factor must be at least 1");
  if (cfg.threads < 0)
    throw ValidationError("thread count cannot be negative");
}

[[noreturn]] void throw_step_cap(long long max_steps) {
  std::ostringstream os;
  os << "trajectory exceeded max_steps = " << max_steps
     << " without absorbing; the chain may not be absorbing";
  throw SimulationError(os.str());
}

// Chunked, substreamed driver shared by both simulators. `Trajectory` maps
// (rng) -> optional accepted value.
template <typename Trajectory>
SimEstimate run_simulation(const SimConfig& cfg, Trajectory trajectory) {
  check_sim_config(cfg);
  const long long chunk_count =
      (cfg.trajectories + cfg.chunk - 1) / cfg.chunk;
  std::vector<ChunkStats> chunks(static_cast<std::size_t>(chunk_count));

  std::atomic<long long> next_chunk{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    try {
      for (;;) {
        const long long c = next_chunk.fetch_add(1);
        if (c >= chunk_count) return;
        {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (failure) return;
        }
        const long long quota =
            std::min(cfg.chunk, cfg.trajectories - c * cfg.chunk);
        const long long budget = cfg.rejection_factor * quota;
        CounterRng rng(cfg.seed, static_cast<std::uint64_t>(c));
        ChunkStats stats;
        while (stats.count < quota) {
          if (auto value = trajectory(rng)) {
            stats.add(*value);
          } else {
            ++stats.rejected;
            if (stats.rejected > budget) {
              std::ostringstream os;
              os << "rejected " << stats.rejected
                 << " trajectories against a quota of " << quota
                 << "; the target is unreachable or acceptance is too low";
              throw SimulationError(os.str());
            }
          }
        }
        chunks[static_cast<std::size_t>(c)] = stats;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  int thread_count = cfg.threads;
  if (thread_count == 0) {
    thread_count = static_cast<int>(std::thread::hardware_concurrency());
    if (thread_count == 0) thread_count = 1;
  }
  thread_count = static_cast<int>(
      std::min<long long>(thread_count, chunk_count));

  if (thread_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(thread_count));
    for (int i = 0; i < thread_count; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  const ChunkStats total = merge_range(chunks, 0, chunks.size());
  SimEstimate est;
  est.accepted = total.count;
  est.rejected = total.rejected;
  est.mean = total.mean;
  est.variance =
      total.count > 1 ? total.m2 / static_cast<double>(total.count - 1) : 0.0;
  est.variance = std::max(0.0, est.variance);
  est.se_mean = std::sqrt(est.variance / static_cast<double>(total.count));
  est.se_variance =
      total.count > 1
          ? std::sqrt(2.0 / static_cast<double>(total.count - 1)) *
                est.variance
          : 0.0;
  est.acceptance_rate =
      static_cast<double>(total.count) /
      static_cast<double>(total.count + total.rejected);
  return est;
}

void check_transient(const TransitionMatrix& tm, int state,
                     const char* role) {
  if (state < 0 || state >= tm.size())
    throw ValidationError(std::string(role) + " state " +
                          std::to_string(state) + " out of range");
  if (tm.p(state, state) >= 1.0 - kAbsorbingTolerance)
    throw ValidationError(std::string(role) + " state " + tm.label(state) +
                          " is absorbing; observed states must be transient");
}

}  // namespace

SimEstimate simulate_elapsed(const TransitionMatrix& tm, int start, int end,
                             const SimConfig& cfg) {
  check_transient(tm, start, "start");
  check_transient(tm, end, "end");
  const SamplingLayout layout = build_layout(tm);
  return run_simulation(cfg, [&](CounterRng& rng) -> std::optional<double> {
    // Walk to absorption; keep the last time `end` was visited (t >= 1).
    long long last_visit = 0;
    int state = start;
    for (long long t = 1; t <= cfg.max_steps; ++t) {
      state = layout.rows[state].sample(rng.next_double());
      if (state == end) last_visit = t;
      if (layout.absorbing[state]) {
        if (last_visit >= 1) return static_cast<double>(last_visit);
        return std::nullopt;
      }
    }
    throw_step_cap(cfg.max_steps);
  });
}

SimEstimate simulate_recurrence(const TransitionMatrix& tm, int target,
                                const SimConfig& cfg) {
  check_transient(tm, target, "target");
  const SamplingLayout layout = build_layout(tm);
  return run_simulation(cfg, [&](CounterRng& rng) -> std::optional<double> {
    // First return to the target; trajectories that absorb first are
    // rejected (the moments are conditional on returning).
    int state = target;
    for (long long t = 1; t <= cfg.max_steps; ++t) {
      state = layout.rows[state].sample(rng.next_double());
      if (state == target) return static_cast<double>(t);
      if (layout.absorbing[state]) return std::nullopt;
    }
    throw_step_cap(cfg.max_steps);
  });
}

EnumeratedElapsed enumerate_elapsed(const TransitionMatrix& tm, int start,
                                    int end, double tail) {
  const int n = tm.size();
  if (n > 32)
    throw ValidationError(
        "enumeration oracle only handles chains with at most 32 states");
  if (!(tail > 0.0) || tail > 1e-6)
    throw ValidationError("enumeration tail must lie in (0, 1e-6]");
  check_transient(tm, start, "start");
  check_transient(tm, end, "end");

  std::vector<char> absorbing(n);
  for (int i = 0; i < n; ++i)
    absorbing[i] = tm.p(i, i) >= 1.0 - kAbsorbingTolerance;

  // One full-matrix propagation step: mass[k] -> sum over successors.
  // Deliberately plain vectors and loops; this file must stay independent
  // of the linear-algebra route used by the analytic solver.
  auto step = [&](const std::vector<double>& mass) {
    std::vector<double> next(n, 0.0);
    for (int i = 0; i < n; ++i) {
      if (mass[i] == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        if (tm.p(i, j) != 0.0) next[j] += mass[i] * tm.p(i, j);
      }
    }
    return next;
  };

  constexpr long long kIterationCap = 5'000'000;
  constexpr double kDrainThreshold = 1e-18;

  // Total probability of ever arriving at `end` (at t >= 1) from `from`:
  // propagate with `end` turned into a trap and drain its inflow.
  auto trapped_arrival_mass = [&](int from) {
    std::vector<double> mass(n, 0.0);
    mass[from] = 1.0;
    // A self-loop at `end` would re-collect drained mass; zero the trap
    // state's outflow by treating arrivals before stepping.
    double total = 0.0;
    for (long long t = 1; t <= kIterationCap; ++t) {
      mass = step(mass);
      total += mass[end];
      mass[end] = 0.0;
      double live = 0.0;
      for (int i = 0; i < n; ++i)
        if (!absorbing[i]) live += mass[i];
      if (live < kDrainThreshold) return total;
    }
    throw Error("enumeration did not drain the transient mass within the "
                "iteration cap");
  };

  const double accept = trapped_arrival_mass(start);
  const double h_return = start == end ? accept : trapped_arrival_mass(end);
  if (accept <= 0.0)
    throw ImpossiblePairError("state " + tm.label(end) +
                              " is never visited from state " +
                              tm.label(start) +
                              " at t >= 1; nothing to enumerate");
  const double never_return = 1.0 - h_return;

  // P(T = t) = P(at end at time t from start) * P(no later visit) / accept.
  EnumeratedElapsed out;
  std::vector<double> mass(n, 0.0);
  mass[start] = 1.0;
  double cumulative = 0.0;
  double mean_acc = 0.0;
  double second_acc = 0.0;
  std::vector<double> recent_residuals;  // for the tail-decay estimate
  long long horizon = 0;
  for (long long t = 1; t <= kIterationCap; ++t) {
    mass = step(mass);
    const double p_t = mass[end] * never_return / accept;
    out.pmf.push_back(p_t);
    cumulative += p_t;
    mean_acc += static_cast<double>(t) * p_t;
    second_acc += static_cast<double>(t) * static_cast<double>(t) * p_t;
    horizon = t;
    const double residual = std::max(0.0, 1.0 - cumulative);
    recent_residuals.push_back(residual);
    if (residual <= tail) break;
    if (t == kIterationCap)
      throw Error("enumeration horizon cap reached with residual mass " +
                  std::to_string(residual) + " above the requested tail");
  }
  out.residual = std::max(0.0, 1.0 - cumulative);

  // Geometric tail model: estimate the per-step decay from the last few
  // residuals (a multi-step ratio, robust to periodic chains), then bound
  // the mass beyond the horizon by residual * geometric moments.
  double rho = 0.0;
  const std::size_t lag = 8;
  if (recent_residuals.size() > lag) {
    const double late = recent_residuals.back();
    const double early =
        recent_residuals[recent_residuals.size() - 1 - lag];
    if (early > 0.0 && late > 0.0)
      rho = std::pow(late / early, 1.0 / static_cast<double>(lag));
  }
  rho = std::min(rho, 1.0 - 1e-9);
  const double horizon_d = static_cast<double>(horizon);
  const double geom_mean = 1.0 / (1.0 - rho);
  const double geom_second = (1.0 + rho) / ((1.0 - rho) * (1.0 - rho));
  const double tail_mean_bound = out.residual * (horizon_d + geom_mean);
  const double tail_second_bound =
      out.residual *
      (horizon_d * horizon_d + 2.0 * horizon_d * geom_mean + geom_second);

  // Moments of the (slightly sub-stochastic) truncated law, then bounds on
  // how far the true moments can sit.
  out.mean = mean_acc;
  out.variance = std::max(0.0, second_acc - mean_acc * mean_acc);
  out.mean_error = tail_mean_bound;
  out.variance_error = tail_second_bound +
                       tail_mean_bound * (2.0 * out.mean + tail_mean_bound);
  return out;
}

}  // namespace etmc
