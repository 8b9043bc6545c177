#include "etmc/passage.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace etmc {

namespace {

// H_jj this close to 1 starves the elapsed-time formulas (1/(1-H_jj) blows
// up); treat it as numerically out of scope rather than return garbage.
constexpr double kRecurrenceCeiling = 1.0 - 1e-12;

double clamp_unit(double v, const char* what) {
  if (v < -1e-9 || v > 1.0 + 1e-9) {
    std::ostringstream os;
    os.precision(17);
    os << what << " = " << v << " escaped [0,1]; numerical breakdown";
    throw Error(os.str());
  }
  return std::min(1.0, std::max(0.0, v));
}

// Variance estimates can pick up negative dust of size ~eps * scale; wipe
// that, but treat anything grossly negative as a real failure.
double clamp_variance(double v, double scale, const char* what) {
  const double slack = 1e-9 * std::max(1.0, scale);
  if (v < -slack) {
    std::ostringstream os;
    os.precision(17);
    os << what << " = " << v << " is negative beyond numerical slack";
    throw Error(os.str());
  }
  return std::max(0.0, v);
}

}  // namespace

std::optional<int> PassageSummary::index_of(int state) const {
  auto it = std::lower_bound(transient.begin(), transient.end(), state);
  if (it == transient.end() || *it != state) return std::nullopt;
  return static_cast<int>(it - transient.begin());
}

double PassageSummary::hit(int state) const {
  auto idx = index_of(state);
  if (!idx)
    throw ValidationError("state " + std::to_string(state) +
                          " is not transient");
  return hitting[*idx];
}

ChainStructure modify_chain(const TransitionMatrix& tm, int target) {
  if (target < 0 || target >= tm.size())
    throw ValidationError("target state " + std::to_string(target) +
                          " out of range for a " + std::to_string(tm.size()) +
                          "-state chain");
  if (tm.p(target, target) >= 1.0 - kAbsorbingTolerance)
    throw ValidationError("target state " + tm.label(target) +
                          " is absorbing; both observed states must be "
                          "transient");
  TransitionMatrix modified = tm;
  modified.p.row(target).setZero();
  modified.p(target, target) = 1.0;
  return classify(modified);
}

PassageSummary analyze_passage(const TransitionMatrix& tm, int target,
                               const ChainStructure* original) {
  const int n = tm.size();
  ChainStructure mod = modify_chain(tm, target);

  PassageSummary ps;
  ps.target = target;
  ps.transient = mod.transient;  // ascending; target joins below
  ps.transient.insert(
      std::lower_bound(ps.transient.begin(), ps.transient.end(), target),
      target);
  const int nt = static_cast<int>(ps.transient.size());
  const int target_idx = *ps.index_of(target);

  ps.hitting.assign(nt, 0.0);
  ps.passage_mean.assign(nt, std::nullopt);
  ps.passage_variance.assign(nt, std::nullopt);

  // Which states can still reach the target at all (support-graph walk on
  // the modified chain, predecessors of the target). Decides definedness
  // exactly; the numeric absorption numbers below are zeroed outside it.
  std::vector<char> reaches(n, 0);
  {
    std::deque<int> frontier{target};
    reaches[target] = 1;  // marks "can arrive"; target row is the unit row
    while (!frontier.empty()) {
      const int k = frontier.front();
      frontier.pop_front();
      for (int i : mod.transient) {
        if (!reaches[i] && tm.p(i, k) > 0.0) {
          reaches[i] = 1;
          frontier.push_back(i);
        }
      }
    }
  }

  const int mt = mod.transient_count();
  if (mt > 0) {
    const Eigen::MatrixXd b = absorption_probabilities(mod);
    int target_col = -1;
    for (int c = 0; c < mod.absorbing_count(); ++c)
      if (mod.absorbing[c] == target) target_col = c;

    // Absorption probability into the target = hitting probability, with
    // structural zeros forced to exact zero.
    Eigen::VectorXd bcol(mt);
    for (int k = 0; k < mt; ++k) {
      const int state = mod.transient[k];
      bcol[k] = reaches[state]
                    ? clamp_unit(b(k, target_col), "hitting probability")
                    : 0.0;
    }

    // Conditional first-passage moments given the target is hit, without
    // forming the conditioned chain explicitly:
    //   mean_k = (N b)_k / b_k
    //   var_k  = 2 (N y)_k / b_k - mean_k - mean_k^2,  y = b-masked N b
    Eigen::VectorXd y = mod.fundamental * bcol;
    Eigen::VectorXd y_masked = y;
    for (int k = 0; k < mt; ++k)
      if (bcol[k] == 0.0) y_masked[k] = 0.0;
    Eigen::VectorXd z = mod.fundamental * y_masked;

    for (int k = 0; k < mt; ++k) {
      const int state = mod.transient[k];
      const int at = *ps.index_of(state);
      ps.hitting[at] = bcol[k];
      if (bcol[k] == 0.0) continue;
      const double mean = y[k] / bcol[k];
      if (mean < 1.0 - 1e-9) {
        std::ostringstream os;
        os.precision(17);
        os << "conditional passage mean " << mean << " fell below 1; "
           << "numerical breakdown";
        throw Error(os.str());
      }
      const double var = clamp_variance(2.0 * z[k] / bcol[k] - mean - mean * mean,
                                        mean * mean,
                                        "conditional passage variance");
      ps.passage_mean[at] = mean;
      ps.passage_variance[at] = var;
    }
  }

  // Return probability: one step out of the target, then hit it again.
  double h_return = tm.p(target, target);
  for (int k = 0; k < mt; ++k) {
    const int state = mod.transient[k];
    if (tm.p(target, state) > 0.0)
      h_return += tm.p(target, state) * ps.hitting[*ps.index_of(state)];
  }
  h_return = clamp_unit(h_return, "return probability");
  if (h_return > kRecurrenceCeiling) {
    std::ostringstream os;
    os.precision(17);
    os << "return probability of state " << tm.label(target) << " is "
       << h_return << ", within 1e-12 of 1; the elapsed-time formulas are "
       << "numerically out of scope this close to a recurrent state";
    throw Error(os.str());
  }
  ps.hitting[target_idx] = h_return;
  ps.recurrence_probability = h_return;

  if (h_return > 0.0) {
    // Corrected route: one-step weights conditioned on returning at all.
    // q_self = p_jj / H_jj, q_k = p_jk H_kj / H_jj; they sum to 1 exactly
    // by the definition of H_jj (checked, since it is cheap).
    double weight_sum = tm.p(target, target) / h_return;
    double mean_c = weight_sum;  // self-loop contributes return time 1
    double second_c = weight_sum;
    for (int k = 0; k < mt; ++k) {
      const int state = mod.transient[k];
      const int at = *ps.index_of(state);
      const double w = tm.p(target, state) * ps.hitting[at] / h_return;
      if (w == 0.0) continue;
      weight_sum += w;
      const double m = *ps.passage_mean[at];
      const double v = *ps.passage_variance[at];
      mean_c += w * (1.0 + m);
      second_c += w * (1.0 + 2.0 * m + v + m * m);
    }
    if (std::abs(weight_sum - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "return-weight normalization failed: weights sum to "
         << weight_sum;
      throw Error(os.str());
    }
    ps.recurrence_corrected.mean = mean_c;
    ps.recurrence_corrected.variance = clamp_variance(
        second_c - mean_c * mean_c, mean_c * mean_c, "return variance");

    // Paper mode: its closed forms taken verbatim, with raw one-step
    // probabilities and the one-step escape mass in the denominator.
    // Terms whose first-passage moment is undefined carry zero conditional
    // weight and are skipped (the 0 * undefined = 0 convention).
    double escape = 0.0;  // one-step mass leaving the transient set for good
    for (int a : mod.absorbing)
      if (a != target) escape += tm.p(target, a);
    const double denom = 1.0 - escape;
    double mean_p = tm.p(target, target);
    double var_p = 0.0;
    for (int k = 0; k < mt; ++k) {
      const int state = mod.transient[k];
      const int at = *ps.index_of(state);
      const double pjk = tm.p(target, state);
      if (pjk == 0.0 || !ps.passage_mean[at]) continue;
      mean_p += pjk * (*ps.passage_mean[at] + 1.0);
      var_p += pjk * pjk * (*ps.passage_variance[at]);
    }
    ps.recurrence_paper.mean = mean_p / denom;
    ps.recurrence_paper.variance = var_p / (denom * denom);
  }

  // Optional cross-check against the original chain's fundamental matrix:
  // H_xj = N_xj / N_jj and H_jj = 1 - 1/N_jj. Redundant with the modified
  // chain route by construction, so a mismatch means a numerical fault.
  if (original) {
    const auto tj = original->transient_position(target);
    if (!tj)
      throw ValidationError("target state " + tm.label(target) +
                            " is absorbing in the original classification");
    const double njj = original->fundamental(*tj, *tj);
    const double h_jj_alt = 1.0 - 1.0 / njj;
    if (std::abs(h_return - h_jj_alt) > kFundamentalTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "return-probability cross-check failed: direct " << h_return
         << " vs fundamental-matrix identity " << h_jj_alt;
      throw Error(os.str());
    }
    for (int at = 0; at < nt; ++at) {
      const int state = ps.transient[at];
      if (state == target) continue;
      const auto ti = original->transient_position(state);
      if (!ti)
        throw Error("transient sets of the original and modified chains "
                    "disagree on state " + tm.label(state));
      const double h_alt = original->fundamental(*ti, *tj) / njj;
      if (std::abs(ps.hitting[at] - h_alt) > kFundamentalTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << "hitting-probability cross-check failed for state "
           << tm.label(state) << ": direct " << ps.hitting[at]
           << " vs fundamental-matrix identity " << h_alt;
        throw Error(os.str());
      }
    }
  }

  return ps;
}

HittingProbabilities hitting_probabilities(const TransitionMatrix& p,
                                           int target) {
  PassageSummary ps = analyze_passage(p, target);
  return HittingProbabilities{ps.transient, ps.hitting,
                              ps.recurrence_probability};
}

PassageMoments conditional_passage_moments(const TransitionMatrix& p,
                                           int target) {
  PassageSummary ps = analyze_passage(p, target);
  return PassageMoments{ps.transient, ps.passage_mean, ps.passage_variance};
}

RecurrenceMoments recurrence_moments(const TransitionMatrix& p, int target,
                                     RecurrenceMode mode) {
  return analyze_passage(p, target).recurrence(mode);
}

}  // namespace etmc
