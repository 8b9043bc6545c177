#pragma once

#include <optional>
#include <string>
#include <vector>

#include "etmc/passage.hpp"

namespace etmc {

// How the variance of the elapsed time is evaluated.
//   paper_closed     — the original closed forms, reproduced verbatim
//                      (including their return-moment inputs); kept for
//                      reproducibility and may disagree with the other two.
//   series           — direct truncated series over the number of visits.
//   corrected_closed — closed form derived from the law of total variance;
//                      agrees with `series` to truncation error and with the
//                      brute-force oracles. The default.
enum class VarianceMode { paper_closed, series, corrected_closed };

struct ElapsedQuery {
  int start = 0;  // first observed state (original index)
  int end = 0;    // second observed state; may equal start
  VarianceMode variance_mode = VarianceMode::corrected_closed;
  // Series mode truncates at the smallest n with H_jj^n < series_epsilon.
  double series_epsilon = 1e-14;
  // Distribution horizon: explicit, or automatic until the captured mass
  // reaches 1 - tail.
  std::optional<long long> tmax;
  double tail = 1e-10;
};

struct ElapsedMoments {
  // False when the pair can never be observed (H = 0); `expectation` and
  // `variance` are then meaningless and `undefined_reason` says why.
  bool defined = false;
  std::string undefined_reason;

  VarianceMode mode = VarianceMode::corrected_closed;
  double expectation = 0.0;          // E(T) in steps, >= 1 when defined
  std::optional<double> variance;    // per `mode`
  long long series_terms = 0;        // series mode: number of terms summed
  // Series mode also evaluates the variant with the squared weight on the
  // return variance, mirroring the paper-mode convention; reported for
  // comparison, never used as the headline number.
  std::optional<double> series_as_printed;
};

// E(T) between observing `start` and later observing `end`. Uses the
// corrected return moments. ValidationError if the query states are not
// transient or `end` != ps.target.
ElapsedMoments expected_elapsed(const PassageSummary& ps,
                                const ElapsedQuery& q);

// E(T) and V(T) per q.variance_mode. paper_closed consumes the
// paper-fidelity return moments end to end; the other modes consume the
// corrected ones.
ElapsedMoments variance_elapsed(const PassageSummary& ps,
                                const ElapsedQuery& q);

struct ElapsedDistribution {
  std::vector<double> pmf;  // P(T = t) for t = 1..pmf.size(); P(T=0) == 0
  double residual = 0.0;    // probability mass beyond the horizon
};

// Exact law of T via powers of the original transient block, conditioned on
// the pair being observed (the end state is counted at its *last* visit).
// Throws ImpossiblePairError when the pair can never be observed.
ElapsedDistribution distribution_of_elapsed(const TransitionMatrix& p,
                                            const ChainStructure& cs,
                                            const PassageSummary& ps,
                                            const ElapsedQuery& q);

// --- scalar formula kernels (pure; exposed for grid tests) ---------------

// E(T) from the first-segment mean, the return mean and return probability.
double expected_elapsed_value(double mean_start, double mean_return,
                              double h_return);
// Paper-mode closed-form variance (three summed components), verbatim.
double variance_paper_closed(double mean_start, double mean_return,
                             double var_start, double var_return,
                             double h_return);
// Law-of-total-variance closed form.
double variance_corrected_closed(double mean_start, double mean_return,
                                 double var_start, double var_return,
                                 double h_return);

struct SeriesVariance {
  double corrected = 0.0;   // linear weight on the return variance
  double as_printed = 0.0;  // squared-weight variant of the same series
  long long terms = 0;
};
// Truncated series over the visit count N (geometric in h_return). Throws
// Error if the term cap binds before h_return^n < epsilon.
SeriesVariance variance_series(double mean_start, double mean_return,
                               double var_start, double var_return,
                               double h_return, double epsilon,
                               long long term_cap = 10'000'000);

}  // namespace etmc
