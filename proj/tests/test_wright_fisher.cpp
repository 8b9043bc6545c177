#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etmc/oracle.hpp"
#include "etmc/passage.hpp"
#include "etmc/wright_fisher.hpp"
#include "test_util.hpp"

using namespace etmc;
using testutil::close_rel;

namespace {

WrightFisherParams neutral(int population) {
  WrightFisherParams wf;
  wf.population = population;
  return wf;
}

}  // namespace

TEST_CASE("neutral sampling row is the plain binomial") {
  TransitionMatrix tm = build_wf_matrix(neutral(2));
  // From 2 of 4 copies, the next generation is Binomial(4, 1/2).
  const double expect[5] = {0.0625, 0.25, 0.375, 0.25, 0.0625};
  for (int k = 0; k <= 4; ++k) CHECK(close_rel(tm.p(2, k), expect[k], 1e-14));
  // Lost and fixed alleles stay lost and fixed, exactly.
  CHECK(tm.p(0, 0) == 1.0);
  CHECK(tm.p(4, 4) == 1.0);
  for (int k = 1; k <= 4; ++k) CHECK(tm.p(0, k) == 0.0);
}

TEST_CASE("rows are stochastic across population sizes") {
  for (int population : {2, 20, 200, 1000}) {
    TransitionMatrix tm = build_wf_matrix(neutral(population));
    double worst = 0.0;
    for (int a = 0; a < tm.size(); ++a)
      worst = std::max(worst, std::abs(tm.p.row(a).sum() - 1.0));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("selection shifts the sampling frequency the right way") {
  WrightFisherParams wf = neutral(10);
  wf.selection = 0.1;
  TransitionMatrix tm = build_wf_matrix(wf);
  TransitionMatrix nt = build_wf_matrix(neutral(10));
  // With a beneficial allele the expected next-generation count from any
  // interior state exceeds the neutral one.
  for (int a : {1, 5, 10, 15, 19}) {
    double mean_sel = 0.0, mean_neu = 0.0;
    for (int k = 0; k <= 20; ++k) {
      mean_sel += k * tm.p(a, k);
      mean_neu += k * nt.p(a, k);
    }
    CHECK(mean_sel > mean_neu);
  }
  ChainStructure cs = classify(tm);
  CHECK(cs.absorbing == std::vector<int>{0, 20});
  CHECK(cs.transient_count() == 19);
}

TEST_CASE("neutral fixation probability is the martingale value a/2N") {
  TransitionMatrix tm = build_wf_matrix(neutral(3));
  ChainStructure cs = classify(tm);
  Eigen::MatrixXd b = absorption_probabilities(cs);
  const int fixed_col = cs.absorbing[1] == 6 ? 1 : 0;
  REQUIRE(cs.absorbing == std::vector<int>{0, 6});
  for (int i = 0; i < cs.transient_count(); ++i) {
    const int a = cs.transient[i];
    CHECK(std::abs(b(i, fixed_col) - static_cast<double>(a) / 6.0) <= 1e-10);
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(build_wf_matrix(neutral(0)), ValidationError);
  CHECK_THROWS_WITH_AS(build_wf_matrix(neutral(2001)),
                       doctest::Contains("cap"), ValidationError);
  WrightFisherParams wf = neutral(5);
  wf.selection = -2.0;  // 1+s = -1
  CHECK_THROWS_WITH_AS(build_wf_matrix(wf), doctest::Contains("fitness"),
                       ValidationError);
  wf = neutral(5);
  wf.selection = 2.0;
  wf.dominance = -1.0;  // 1+hs = -1
  CHECK_THROWS_AS(build_wf_matrix(wf), ValidationError);
  wf = neutral(5);
  wf.mu_away = 1.0;
  CHECK_THROWS_AS(build_wf_matrix(wf), ValidationError);
  wf = neutral(5);
  wf.mu_toward = -0.1;
  CHECK_THROWS_AS(build_wf_matrix(wf), ValidationError);
}

TEST_CASE("mutation decides which boundaries absorb") {
  WrightFisherParams wf = neutral(4);
  wf.mu_away = 0.01;
  ChainStructure away = classify(build_wf_matrix(wf));
  CHECK(away.absorbing == std::vector<int>{0});

  wf = neutral(4);
  wf.mu_toward = 0.01;
  ChainStructure toward = classify(build_wf_matrix(wf));
  CHECK(toward.absorbing == std::vector<int>{8});

  wf = neutral(4);
  wf.mu_away = 0.01;
  wf.mu_toward = 0.01;
  CHECK_THROWS_WITH_AS(allele_age(wf, 3),
                       doctest::Contains("mutating back inward"),
                       ValidationError);
}

TEST_CASE("allele age agrees with the enumeration oracle on a tiny model") {
  for (int j : {1, 2, 3}) {
    AlleleAgeOptions opts;
    opts.tail = 1e-12;
    AlleleAgeResult age = allele_age(neutral(2), j, opts);
    EnumeratedElapsed e = enumerate_elapsed(build_wf_matrix(neutral(2)), 1,
                                            j, 1e-12);
    CHECK(std::abs(age.expected_age - e.mean) <= e.mean_error + 1e-9);
    REQUIRE(age.age_variance.has_value());
    CHECK(std::abs(*age.age_variance - e.variance) <=
          e.variance_error + 1e-7);
  }
}

TEST_CASE("the neutral model is symmetric under allele relabeling") {
  // Swapping the two alleles maps count a to 2N-a and leaves the neutral
  // dynamics unchanged, so the age of the observation j from one copy
  // equals the elapsed time from 2N-1 copies to 2N-j.
  const int population = 3;
  TransitionMatrix tm = build_wf_matrix(neutral(population));
  ChainStructure cs = classify(tm);
  const int two_n = 2 * population;
  for (int j = 1; j <= two_n - 1; ++j) {
    AlleleAgeResult age = allele_age(neutral(population), j);
    PassageSummary ps = analyze_passage(tm, two_n - j, &cs);
    ElapsedMoments em =
        variance_elapsed(ps, {.start = two_n - 1, .end = two_n - j});
    REQUIRE(em.defined);
    CHECK(std::abs(age.expected_age - em.expectation) <= 1e-8);
    CHECK(std::abs(*age.age_variance - *em.variance) <= 1e-8);
  }
}

TEST_CASE("allele age covered by the trajectory simulator") {
  const int population = 10;
  const int observed = 3;
  AlleleAgeResult age = allele_age(neutral(population), observed);
  TransitionMatrix tm = build_wf_matrix(neutral(population));
  SimConfig cfg;
  cfg.seed = 7;
  cfg.trajectories = 30000;
  SimEstimate est = simulate_elapsed(tm, 1, observed, cfg);
  CHECK(std::abs(est.mean - age.expected_age) <= 4.0 * est.se_mean);
  CHECK(std::abs(est.variance - *age.age_variance) <=
        4.0 * est.se_variance);
}

TEST_CASE("observed-count validation") {
  CHECK_THROWS_WITH_AS(allele_age(neutral(2), 0),
                       doctest::Contains("strictly between"),
                       ValidationError);
  CHECK_THROWS_AS(allele_age(neutral(2), 4), ValidationError);
  CHECK_THROWS_AS(allele_age(neutral(2), -1), ValidationError);
  CHECK_THROWS_AS(allele_age(neutral(2), 5), ValidationError);
}

TEST_CASE("an age distribution is returned on request") {
  AlleleAgeOptions opts;
  opts.with_distribution = true;
  opts.tail = 1e-10;
  AlleleAgeResult age = allele_age(neutral(2), 1, opts);
  REQUIRE(age.distribution.has_value());
  CHECK(age.distribution_residual <= 1e-10);
  double mass = 0.0, mean = 0.0;
  for (std::size_t k = 0; k < age.distribution->size(); ++k) {
    mass += (*age.distribution)[k];
    mean += static_cast<double>(k + 1) * (*age.distribution)[k];
  }
  CHECK(std::abs(mass + age.distribution_residual - 1.0) <= 1e-12);
  CHECK(std::abs(mean - age.expected_age) <= 1e-7);
}

TEST_CASE("one-way mutation still yields a well-posed age problem") {
  WrightFisherParams wf = neutral(4);
  wf.mu_toward = 0.02;  // everything eventually fixes
  AlleleAgeResult age = allele_age(wf, 5);
  CHECK(age.expected_age >= 1.0);
  CHECK(*age.age_variance >= 0.0);
}
