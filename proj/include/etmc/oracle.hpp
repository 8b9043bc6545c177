#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "etmc/chain.hpp"

namespace etmc {

// Counter-based generator (Philox-style 4x32, 10 rounds). Each
// (seed, stream) pair is an independent substream whose output depends only
// on those two values, never on interleaving — the basis for
// thread-count-independent simulation. Layout is frozen: key = seed split
// into two 32-bit words, counter block = (block index lo/hi, stream lo/hi).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  double next_double();  // uniform on [0, 1), 53 random bits

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_index_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int cursor_ = 4;  // consumed 32-bit words in block_
};

struct SimConfig {
  std::uint64_t seed = 0;
  long long trajectories = 100'000;  // accepted-sample target
  long long max_steps = 10'000'000;  // per-trajectory cap
  // Accepted samples per work unit; one substream per chunk. Part of the
  // reproducibility contract: results depend on (seed, chunk, trajectories)
  // and nothing else.
  long long chunk = 4096;
  int threads = 0;  // 0 = hardware concurrency
  // A chunk may reject at most rejection_factor * its quota before the run
  // is declared infeasible.
  long long rejection_factor = 10'000;
};

struct SimEstimate {
  double mean = 0.0;
  double variance = 0.0;      // unbiased (n-1 denominator)
  double se_mean = 0.0;       // 0 exactly for degenerate samples
  double se_variance = 0.0;   // sqrt(2/(n-1)) * variance; normal-theory
                              // approximation, documented as such
  long long accepted = 0;
  long long rejected = 0;
  double acceptance_rate = 0.0;
};

// Monte Carlo estimate of the elapsed time between observing `start` and
// the *last* visit to `end` before absorption. Trajectories that never
// visit `end` at t >= 1 are rejected. SimulationError when the rejection
// budget or step cap is exhausted.
SimEstimate simulate_elapsed(const TransitionMatrix& p, int start, int end,
                             const SimConfig& cfg);

// Monte Carlo estimate of the return time to `target`, conditioned on
// returning before absorption.
SimEstimate simulate_recurrence(const TransitionMatrix& p, int target,
                                const SimConfig& cfg);

struct EnumeratedElapsed {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> pmf;  // P(T = t), t = 1..pmf.size()
  double residual = 0.0;    // mass beyond the horizon
  // Truncation bounds from a geometric tail model fitted to the late decay;
  // the true mean lies within mean_error of `mean` (same for variance).
  double mean_error = 0.0;
  double variance_error = 0.0;
};

// Brute-force enumeration of the elapsed-time law by full-matrix dynamic
// programming over uncompressed states — an independent implementation kept
// free of the solver used by the analytic route. Guard rails: at most 32
// states, tail in (0, 1e-6].
EnumeratedElapsed enumerate_elapsed(const TransitionMatrix& p, int start,
                                    int end, double tail);

}  // namespace etmc
