#pragma once

#include <optional>
#include <vector>

#include "etmc/chain.hpp"
#include "etmc/elapsed.hpp"

namespace etmc {

// Largest supported diploid population (the dense solver works on
// (2N+1)-state matrices; 2N = 4000 keeps that comfortably in memory).
inline constexpr int kMaxPopulation = 2000;

// Diploid Wright–Fisher model with selection and two-way mutation. States
// are allele counts 0..2N of the focal allele. Genotype fitnesses are
// (1+s, 1+h*s, 1); mu_away mutates focal -> other, mu_toward the reverse.
struct WrightFisherParams {
  int population = 0;     // diploid N
  double selection = 0.0; // s
  double dominance = 0.5; // h
  double mu_away = 0.0;   // u
  double mu_toward = 0.0; // v
};

// Binomial-sampling transition matrix on 0..2N. Rows whose post-selection,
// post-mutation allele frequency is exactly 0 or 1 become exact unit rows
// (so with u = v = 0 both boundaries are exactly absorbing). Other rows are
// renormalized if their sum drifts from 1 by less than 1e-9 and rejected
// beyond that. Which states are absorbing is decided structurally by
// classify(), never by parameter rules.
TransitionMatrix build_wf_matrix(const WrightFisherParams& params);

struct AlleleAgeOptions {
  VarianceMode variance_mode = VarianceMode::corrected_closed;
  bool with_distribution = false;
  double tail = 1e-10;
  std::optional<long long> tmax;
};

struct AlleleAgeResult {
  int observed_count = 0;
  double expected_age = 0.0;  // generations since the allele arose
  std::optional<double> age_variance;
  std::optional<std::vector<double>> distribution;  // P(age = t), t >= 1
  double distribution_residual = 0.0;
};

// Age of an allele observed at `observed_count` copies, modelled as the
// elapsed time from a single copy (count 1) to the last visit of
// `observed_count` before absorption. Requires 1 <= observed_count <= 2N-1
// and the count transient. A chain with no absorbing state (both mutation
// rates positive) fails classification with a parameter hint.
AlleleAgeResult allele_age(const WrightFisherParams& params,
                           int observed_count,
                           const AlleleAgeOptions& opts = {});

}  // namespace etmc
