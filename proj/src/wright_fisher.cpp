#include "etmc/wright_fisher.hpp"

#include <cmath>
#include <sstream>

#include "etmc/passage.hpp"

namespace etmc {

namespace {

void check_params(const WrightFisherParams& wf) {
  if (wf.population < 1)
    throw ValidationError("population must be at least 1 diploid individual");
  if (wf.population > kMaxPopulation)
    throw ValidationError(
        "population " + std::to_string(wf.population) + " exceeds the " +
        std::to_string(kMaxPopulation) +
        "-individual cap of the dense solver");
  const double w_hom = 1.0 + wf.selection;
  const double w_het = 1.0 + wf.dominance * wf.selection;
  if (!(w_hom > 0.0) || !(w_het > 0.0)) {
    std::ostringstream os;
    os.precision(17);
    os << "genotype fitnesses must be positive: 1+s = " << w_hom
       << ", 1+h*s = " << w_het;
    throw ValidationError(os.str());
  }
  if (!(wf.mu_away >= 0.0) || wf.mu_away >= 1.0 || !(wf.mu_toward >= 0.0) ||
      wf.mu_toward >= 1.0)
    throw ValidationError("mutation rates must lie in [0, 1)");
}

}  // namespace

TransitionMatrix build_wf_matrix(const WrightFisherParams& wf) {
  check_params(wf);
  const int two_n = 2 * wf.population;
  const int n = two_n + 1;
  const double w_hom = 1.0 + wf.selection;
  const double w_het = 1.0 + wf.dominance * wf.selection;

  // log C(2N, b) via a factorial table keeps the row construction O(2N)
  // per state and stable out to 2N = 4000.
  std::vector<double> log_factorial(static_cast<std::size_t>(two_n) + 1, 0.0);
  for (int k = 1; k <= two_n; ++k)
    log_factorial[k] = log_factorial[k - 1] + std::log(static_cast<double>(k));

  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a <= two_n; ++a) {
    const double x = static_cast<double>(a) / static_cast<double>(two_n);
    // Viability selection on genotypes (1+s, 1+hs, 1), then symmetric
    // two-way mutation, gives the expected allele frequency in the gamete
    // pool; the next generation is a binomial draw from it.
    const double numer = x * x * w_hom + x * (1.0 - x) * w_het;
    const double denom =
        x * x * w_hom + 2.0 * x * (1.0 - x) * w_het + (1.0 - x) * (1.0 - x);
    const double x_sel = numer / denom;
    const double psi = x_sel * (1.0 - wf.mu_away) + (1.0 - x_sel) * wf.mu_toward;

    if (psi <= 0.0) {  // boundary rows stay exactly absorbing
      p(a, 0) = 1.0;
      continue;
    }
    if (psi >= 1.0) {
      p(a, two_n) = 1.0;
      continue;
    }
    const double log_psi = std::log(psi);
    const double log_rest = std::log1p(-psi);
    double sum = 0.0;
    for (int b = 0; b <= two_n; ++b) {
      const double log_prob = log_factorial[two_n] - log_factorial[b] -
                              log_factorial[two_n - b] +
                              static_cast<double>(b) * log_psi +
                              static_cast<double>(two_n - b) * log_rest;
      p(a, b) = std::exp(log_prob);
      sum += p(a, b);
    }
    if (std::abs(sum - 1.0) >= 1e-9) {
      std::ostringstream os;
      os.precision(17);
      os << "binomial row for allele count " << a << " sums to " << sum
         << "; construction is numerically unsound";
      throw Error(os.str());
    }
    p.row(a) /= sum;
  }
  return TransitionMatrix::make(std::move(p));
}

AlleleAgeResult allele_age(const WrightFisherParams& wf, int observed_count,
                           const AlleleAgeOptions& opts) {
  TransitionMatrix tm = build_wf_matrix(wf);
  ChainStructure cs;
  try {
    cs = classify(tm);
  } catch (const ValidationError& e) {
    if (wf.mu_away > 0.0 && wf.mu_toward > 0.0)
      throw ValidationError(
          std::string(e.what()) +
          " (with both mutation rates positive every boundary keeps "
          "mutating back inward; set one rate to 0 to obtain an absorbing "
          "model)");
    throw;
  }

  const int two_n = 2 * wf.population;
  if (observed_count < 1 || observed_count > two_n - 1)
    throw ValidationError(
        "observed count must lie strictly between the boundary counts 0 and " +
        std::to_string(two_n));
  if (!cs.is_transient(observed_count))
    throw ValidationError("observed count " + std::to_string(observed_count) +
                          " is an absorbing state of this model");
  if (!cs.is_transient(1))
    throw ValidationError(
        "a single copy is not transient in this model; the allele-age "
        "construction does not apply");

  PassageSummary ps = analyze_passage(tm, observed_count, &cs);

  ElapsedQuery q;
  q.start = 1;
  q.end = observed_count;
  q.variance_mode = opts.variance_mode;
  q.tail = opts.tail;
  q.tmax = opts.tmax;

  ElapsedMoments em = variance_elapsed(ps, q);
  if (!em.defined)
    throw ImpossiblePairError(
        "an allele observed at " + std::to_string(observed_count) +
        " copies can never descend from a single copy in this model: " +
        em.undefined_reason);

  AlleleAgeResult out;
  out.observed_count = observed_count;
  out.expected_age = em.expectation;
  out.age_variance = em.variance;
  if (opts.with_distribution) {
    ElapsedDistribution dist = distribution_of_elapsed(tm, cs, ps, q);
    out.distribution = std::move(dist.pmf);
    out.distribution_residual = dist.residual;
  }
  return out;
}

}  // namespace etmc
