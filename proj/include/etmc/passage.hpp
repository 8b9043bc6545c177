#pragma once

#include <optional>
#include <vector>

#include "etmc/chain.hpp"

namespace etmc {

// Two routes to the return-time moments of the observed state.
// `paper` evaluates its closed forms verbatim (kept for
// reproducibility; see README); `corrected` renormalizes the one-step
// weights by the return probability so they form a distribution. The modes
// coincide when every first-passage moment feeding the sum is equal, and
// diverge on heterogeneous chains.
enum class RecurrenceMode { paper, corrected };

struct RecurrenceMoments {
  std::optional<double> mean;      // expected return time, >= 1 when defined
  std::optional<double> variance;  // paper mode may go negative by design
  bool defined() const { return mean.has_value(); }
};

// Everything the elapsed-time formulas need about one target state j:
// hitting probabilities, conditional first-passage moments, and return-time
// moments, for the chain in which j was kept transient.
struct PassageSummary {
  int target = -1;             // original index of j
  std::vector<int> transient;  // transient states of P, ascending, incl. j

  // H_xj = P(exists t >= 1 with X_t = j | X_0 = x), one entry per
  // `transient` state; exact 0 when j is structurally unreachable from x.
  // The entry at the target's own position is the return probability.
  std::vector<double> hitting;
  double recurrence_probability = 0.0;  // H_jj, duplicated for clarity

  // Conditional first-passage moments tau_xj / v_xj given the visit happens.
  // nullopt where H_xj = 0 (and always at the target's own position; return
  // moments live below).
  std::vector<std::optional<double>> passage_mean;
  std::vector<std::optional<double>> passage_variance;

  RecurrenceMoments recurrence_paper;
  RecurrenceMoments recurrence_corrected;

  const RecurrenceMoments& recurrence(RecurrenceMode m) const {
    return m == RecurrenceMode::paper ? recurrence_paper
                                      : recurrence_corrected;
  }
  // Index into the vectors above, or nullopt if `state` is not transient.
  std::optional<int> index_of(int state) const;
  double hit(int state) const;  // H_{state,j}; throws if not transient
};

// The same chain with the target's row replaced by the unit row, so the
// target becomes a fresh absorbing state. Throws ValidationError when the
// target is out of range or already absorbing. Assumes `p` is otherwise a
// valid absorbing chain (classify() the original first if unsure).
ChainStructure modify_chain(const TransitionMatrix& p, int target);

// One-pass computation of the full summary. When `original` (the
// classification of `p` itself) is given, the hitting probabilities are
// cross-checked against the equivalent fundamental-matrix identities
// H_xj = N_xj / N_jj and H_jj = 1 - 1/N_jj at kFundamentalTolerance; a
// violation is an internal-consistency Error, not bad input.
PassageSummary analyze_passage(const TransitionMatrix& p, int target,
                               const ChainStructure* original = nullptr);

// Thin projections of analyze_passage for callers that need one piece.
struct HittingProbabilities {
  std::vector<int> states;  // transient states, ascending, incl. target
  std::vector<double> h;
  double recurrence = 0.0;  // H_jj
};
HittingProbabilities hitting_probabilities(const TransitionMatrix& p,
                                           int target);

struct PassageMoments {
  std::vector<int> states;
  std::vector<std::optional<double>> mean;
  std::vector<std::optional<double>> variance;
};
PassageMoments conditional_passage_moments(const TransitionMatrix& p,
                                           int target);

RecurrenceMoments recurrence_moments(const TransitionMatrix& p, int target,
                                     RecurrenceMode mode);

}  // namespace etmc
