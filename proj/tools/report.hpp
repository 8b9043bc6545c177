#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "etmc/oracle.hpp"

namespace etmc::cli {

// Everything below renders deterministically: doubles always as %.17g, keys
// in construction order, no timestamps or machine details — byte-identical
// output for identical inputs is part of the contract.

using InputValue =
    std::variant<std::string, long long, std::uint64_t, double, bool>;

struct ChainBlock {
  int states = 0;
  int transient_count = 0;
  std::vector<int> absorbing;
  std::vector<std::string> absorbing_labels;
};

struct PassageRow {
  int state = 0;
  std::string label;
  double hitting = 0.0;
  std::optional<double> mean;
  std::optional<double> variance;
};

struct RecurrenceBlock {
  double probability = 0.0;
  std::optional<double> paper_mean, paper_variance;
  std::optional<double> corrected_mean, corrected_variance;
  bool discrepancy = false;  // paper vs corrected beyond tolerance
};

struct ElapsedBlock {
  bool defined = false;
  std::string reason;
  double expectation = 0.0;
  std::optional<double> v_paper, v_series, v_series_printed, v_corrected;
  long long series_terms = 0;
  std::string headline_mode;
  std::optional<double> headline;
  bool discrepancy = false;  // paper vs corrected beyond tolerance
};

struct SimulationBlock {
  std::uint64_t seed = 0;
  long long trajectories = 0;
  SimEstimate est;
  // z of the simulated moments against the analytic ones; missing when the
  // standard error is 0 but the difference is not.
  std::optional<double> z_mean, z_variance;
  bool mean_flagged = false;      // |z| > 4 (or undefined z)
  bool variance_flagged = false;
};

struct DistributionBlock {
  std::vector<double> pmf;  // support starts at t = 1
  double residual = 0.0;
  double truncated_mean = 0.0;
  double truncated_variance = 0.0;
};

struct AlleleAgeBlock {
  int observed_count = 0;
  double expected_age = 0.0;
  std::optional<double> age_variance;
};

struct Report {
  std::string command;
  std::vector<std::pair<std::string, InputValue>> inputs;
  std::optional<ChainBlock> chain;
  int target = -1;
  std::string target_label;
  std::optional<std::vector<PassageRow>> passage;
  std::optional<RecurrenceBlock> recurrence;
  std::optional<ElapsedBlock> elapsed;
  std::optional<SimulationBlock> simulation;
  std::optional<DistributionBlock> distribution;
  std::optional<AlleleAgeBlock> allele_age;
};

// %.17g — enough digits to round-trip any double, stable across runs.
std::string fmt17(double v);

std::string render_json(const Report& report);
std::string render_table(const Report& report);

}  // namespace etmc::cli
