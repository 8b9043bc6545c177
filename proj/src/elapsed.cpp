#include "etmc/elapsed.hpp"

#include <cmath>
#include <sstream>

namespace etmc {

namespace {

// Per-query inputs to the scalar kernels: the first-segment moments (from
// start to the first arrival at end) and the return-segment moments.
struct SegmentMoments {
  double mean_start = 0.0;
  double var_start = 0.0;
  double mean_return = 0.0;  // meaningful only when h_return > 0
  double var_return = 0.0;
  double h_return = 0.0;
};

void check_query(const PassageSummary& ps, const ElapsedQuery& q) {
  if (q.end != ps.target)
    throw ValidationError(
        "query end state " + std::to_string(q.end) +
        " does not match the analyzed target " + std::to_string(ps.target));
  if (!ps.index_of(q.start))
    throw ValidationError("start state " + std::to_string(q.start) +
                          " is not transient");
  if (!(q.series_epsilon > 0.0) || q.series_epsilon >= 1.0)
    throw ValidationError("series_epsilon must lie in (0, 1)");
  if (!(q.tail > 0.0) || q.tail >= 1.0)
    throw ValidationError("tail must lie in (0, 1)");
  if (q.tmax && *q.tmax < 1)
    throw ValidationError("tmax must be at least 1");
}

// Pulls the per-mode segment moments, or reports why the pair is
// impossible. The start == end query observes the same state twice, which
// requires a return; its "first segment" is itself a return segment.
bool resolve_segments(const PassageSummary& ps, const ElapsedQuery& q,
                      RecurrenceMode rmode, SegmentMoments* out,
                      std::string* why_not) {
  const RecurrenceMoments& rec = ps.recurrence(rmode);
  out->h_return = ps.recurrence_probability;
  if (q.start == q.end) {
    if (!rec.defined()) {
      *why_not = "the chain can never revisit this state (return "
                 "probability 0), so observing it twice is impossible";
      return false;
    }
    out->mean_start = *rec.mean;
    out->var_start = *rec.variance;
    out->mean_return = *rec.mean;
    out->var_return = *rec.variance;
    return true;
  }
  const int at = *ps.index_of(q.start);
  if (ps.hitting[at] == 0.0) {
    *why_not = "the end state is unreachable from the start state, so the "
               "pair can never be observed";
    return false;
  }
  out->mean_start = *ps.passage_mean[at];
  out->var_start = *ps.passage_variance[at];
  if (rec.defined()) {
    out->mean_return = *rec.mean;
    out->var_return = *rec.variance;
  }
  return true;
}

}  // namespace

double expected_elapsed_value(double mean_start, double mean_return,
                              double h_return) {
  if (h_return <= 0.0) return mean_start;
  return mean_start + mean_return * h_return / (1.0 - h_return);
}

double variance_paper_closed(double mean_start, double mean_return,
                             double var_start, double var_return,
                             double h_return) {
  if (h_return <= 0.0) return var_start;
  const double ts = mean_start, tr = mean_return;
  const double vs = var_start, vr = var_return;
  const double h = h_return;
  const double h2 = h * h, h3 = h2 * h, h4 = h3 * h;
  const double hm1 = h - 1.0, hp1 = h + 1.0;

  // The three paper-mode closed-form sums, transcribed unchanged. This
  // mode exists to reproduce that formulation exactly; it is NOT guaranteed
  // to agree with the series/corrected modes (see README), and is exempt
  // from the nonnegativity guarantee.
  const double sum1 = vs + vr * ((3.0 * h - 1.0) / (hm1 * hm1) + 1.0);

  const double sum2 =
      (ts * ts - 2.0 * ts * tr + tr * tr) * (2.0 * h / hp1) +
      (2.0 * ts * tr - 2.0 * ts * ts) *
          ((-h2 - 3.0 * h) / (hm1 * hp1 * hp1)) +
      tr * tr *
          ((h4 + 5.0 * h3 + 5.0 * h2 + 5.0 * h) /
           (hm1 * hm1 * hp1 * hp1 * hp1));

  const double inner =
      ts * ts * h4 - 2.0 * ts * ts * h2 + ts * ts - 2.0 * ts * tr * h4 -
      ts * tr * h3 + 3.0 * ts * tr * h2 + ts * tr * h - ts * tr +
      tr * tr * h4 + tr * tr * h3 - 2.0 * tr * tr * h2 - 2.0 * tr * tr * h -
      2.0 * tr * tr;
  const double sum3 = -2.0 * h * inner / (hm1 * hm1 * hp1 * hp1 * hp1);

  return sum1 + sum2 + sum3;
}

double variance_corrected_closed(double mean_start, double mean_return,
                                 double var_start, double var_return,
                                 double h_return) {
  if (h_return <= 0.0) return var_start;
  const double h = h_return;
  const double one_minus = 1.0 - h;
  return var_start + var_return * h / one_minus +
         mean_return * mean_return * h / (one_minus * one_minus);
}

SeriesVariance variance_series(double mean_start, double mean_return,
                               double var_start, double var_return,
                               double h_return, double epsilon,
                               long long term_cap) {
  SeriesVariance out;
  const double h = h_return;
  double h_prev = 1.0;  // h^{n-1}
  double sum1_corrected = 0.0;
  double sum1_printed = 0.0;
  double sum2 = 0.0;
  double sum3 = 0.0;
  double prefix = 0.0;  // sum over m < n of E(T|N=m) P(N=m)
  bool truncated = true;
  for (long long n = 1; n <= term_cap; ++n) {
    const double h_n = h_prev * h;
    const double p_n = h_prev - h_n;  // P(N = n)
    const double mean_n = mean_start + static_cast<double>(n - 1) * mean_return;
    sum1_corrected += (var_start + static_cast<double>(n - 1) * var_return) * p_n;
    sum1_printed += (var_start +
                     static_cast<double>(n - 1) * static_cast<double>(n - 1) *
                         var_return) *
                    p_n;
    sum2 += mean_n * mean_n * (1.0 - p_n) * p_n;
    sum3 += -2.0 * mean_n * p_n * prefix;
    prefix += mean_n * p_n;
    h_prev = h_n;
    if (h_n < epsilon) {
      out.terms = n;
      truncated = false;
      break;
    }
  }
  if (truncated) {
    std::ostringstream os;
    os.precision(17);
    os << "variance series did not truncate within " << term_cap
       << " terms (return probability " << h << " too close to 1)";
    throw Error(os.str());
  }
  out.corrected = sum1_corrected + sum2 + sum3;
  out.as_printed = sum1_printed + sum2 + sum3;
  return out;
}

ElapsedMoments expected_elapsed(const PassageSummary& ps,
                                const ElapsedQuery& q) {
  check_query(ps, q);
  ElapsedMoments out;
  out.mode = q.variance_mode;
  SegmentMoments seg;
  if (!resolve_segments(ps, q, RecurrenceMode::corrected, &seg,
                        &out.undefined_reason))
    return out;
  out.defined = true;
  out.expectation =
      expected_elapsed_value(seg.mean_start, seg.mean_return, seg.h_return);
  return out;
}

ElapsedMoments variance_elapsed(const PassageSummary& ps,
                                const ElapsedQuery& q) {
  ElapsedMoments out = expected_elapsed(ps, q);
  if (!out.defined) return out;

  const RecurrenceMode rmode = q.variance_mode == VarianceMode::paper_closed
                                   ? RecurrenceMode::paper
                                   : RecurrenceMode::corrected;
  SegmentMoments seg;
  std::string unused;
  resolve_segments(ps, q, rmode, &seg, &unused);  // defined above, so fine

  switch (q.variance_mode) {
    case VarianceMode::paper_closed:
      out.variance = variance_paper_closed(seg.mean_start, seg.mean_return,
                                           seg.var_start, seg.var_return,
                                           seg.h_return);
      break;
    case VarianceMode::corrected_closed:
      out.variance = variance_corrected_closed(
          seg.mean_start, seg.mean_return, seg.var_start, seg.var_return,
          seg.h_return);
      break;
    case VarianceMode::series: {
      if (seg.h_return <= 0.0) {
        out.variance = seg.var_start;
        out.series_as_printed = seg.var_start;
        out.series_terms = 1;
        break;
      }
      SeriesVariance sv = variance_series(seg.mean_start, seg.mean_return,
                                          seg.var_start, seg.var_return,
                                          seg.h_return, q.series_epsilon);
      out.variance = sv.corrected;
      out.series_as_printed = sv.as_printed;
      out.series_terms = sv.terms;
      break;
    }
  }
  return out;
}

ElapsedDistribution distribution_of_elapsed(const TransitionMatrix& tm,
                                            const ChainStructure& cs,
                                            const PassageSummary& ps,
                                            const ElapsedQuery& q) {
  check_query(ps, q);
  const auto start_pos = cs.transient_position(q.start);
  const auto end_pos = cs.transient_position(q.end);
  if (!start_pos || !end_pos)
    throw ValidationError(
        "both observed states must be transient in the original chain");

  const double h_return = ps.recurrence_probability;
  double conditioning = 0.0;  // P(the pair is observed at all)
  if (q.start == q.end) {
    conditioning = h_return;
    if (conditioning == 0.0)
      throw ImpossiblePairError(
          "the chain can never revisit state " + tm.label(q.end) +
          "; observing it twice is impossible");
  } else {
    conditioning = ps.hit(q.start);
    if (conditioning == 0.0)
      throw ImpossiblePairError("state " + tm.label(q.end) +
                                " is unreachable from state " +
                                tm.label(q.start) +
                                "; the pair can never be observed");
  }

  // P(T = t) = (Q^t)_{start,end} * P(no further visit) / P(pair observed):
  // the last-visit law over the original transient block.
  constexpr long long kAutoCap = 10'000'000;
  const double never_return = 1.0 - h_return;
  const long long horizon = q.tmax.value_or(kAutoCap);

  // P(T > t) evaluated forward: mass still in play is the transient
  // occupation vector weighted by each state's probability of visiting the
  // end state again. Summing the pmf and subtracting from 1 would stall
  // near 1e-14 from cancellation; this form decays cleanly to zero.
  Eigen::VectorXd future(cs.transient_count());
  for (int k = 0; k < cs.transient_count(); ++k) {
    const int state = cs.transient[k];
    future[k] = state == q.end ? h_return : ps.hit(state);
  }

  ElapsedDistribution out;
  Eigen::RowVectorXd u =
      Eigen::RowVectorXd::Zero(cs.transient_count());
  u[*start_pos] = 1.0;
  out.residual = 1.0;
  for (long long t = 1; t <= horizon; ++t) {
    u = u * cs.q;  // u_t[k] = (Q^t)_{start,k}
    const double p_t = u[*end_pos] * never_return / conditioning;
    out.pmf.push_back(p_t);
    out.residual = std::max(0.0, u.dot(future) / conditioning);
    if (!q.tmax && out.residual <= q.tail) break;
  }
  if (!q.tmax && out.residual > q.tail) {
    std::ostringstream os;
    os.precision(17);
    os << "distribution horizon cap (" << kAutoCap
       << " steps) hit with residual mass " << out.residual
       << " still above the requested tail " << q.tail;
    throw Error(os.str());
  }
  return out;
}

}  // namespace etmc
