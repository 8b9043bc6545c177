#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "etmc/errors.hpp"

namespace etmc {

// Row sums of a constructed matrix must hit 1 to this tolerance.
inline constexpr double kRowSumTolerance = 1e-12;
// File loaders accept (and rescale away) round-trip noise up to this much.
inline constexpr double kLoaderRowSumTolerance = 1e-9;
// A state with p_ii >= 1 - kAbsorbingTolerance counts as absorbing.
inline constexpr double kAbsorbingTolerance = 1e-12;
// Residual tolerance for fundamental-matrix identities (N = I + QN, B rows).
inline constexpr double kFundamentalTolerance = 1e-10;

// Row-stochastic transition matrix over labelled states.
struct TransitionMatrix {
  Eigen::MatrixXd p;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(p.rows()); }
  const std::string& label(int state) const { return labels[state]; }

  // Validates squareness, entry range [0,1] and row sums (kRowSumTolerance).
  // Empty `labels` defaults to s0..s{n-1}; otherwise must have one label per
  // state, all distinct.
  static TransitionMatrix make(Eigen::MatrixXd p,
                               std::vector<std::string> labels = {});

  // Index of the state with this label, or of the 0-based index if `name`
  // is all digits and no label matches it first.
  int state_named(const std::string& name) const;
};

// Parses a matrix document. Content whose first non-space character is '{'
// is treated as JSON ({"rows": [[...], ...], "labels": [...]?}); anything
// else as CSV (n lines of n comma-separated probabilities). Rows whose sums
// deviate from 1 by less than kLoaderRowSumTolerance are rescaled to sum to
// 1; larger deviations are errors naming the row and the deficit.
TransitionMatrix load_matrix(const std::string& content);
TransitionMatrix load_matrix_file(const std::string& path);

// Transient/absorbing decomposition in canonical order: transient states
// first, each group in ascending original-index order. Every chain accepted
// here has at least one absorbing state and every transient state can reach
// one; otherwise classify() throws naming the offending states.
struct ChainStructure {
  std::vector<int> transient;   // original indices, ascending
  std::vector<int> absorbing;   // original indices, ascending
  std::vector<int> position;    // original index -> canonical position
  Eigen::MatrixXd q;            // transient -> transient block
  Eigen::MatrixXd r;            // transient -> absorbing block
  Eigen::MatrixXd fundamental;  // (I - Q)^{-1}, empty when no transients

  int transient_count() const { return static_cast<int>(transient.size()); }
  int absorbing_count() const { return static_cast<int>(absorbing.size()); }

  bool is_transient(int state) const {
    return position[state] < transient_count();
  }
  // Position of `state` within the transient block, or nullopt if absorbing.
  std::optional<int> transient_position(int state) const {
    int k = position[state];
    if (k < transient_count()) return k;
    return std::nullopt;
  }
};

// Splits the chain and computes the fundamental matrix via a pivoted LU
// solve. Postconditions checked: N = I + QN entrywise within
// kFundamentalTolerance and min entry >= -1e-12. A chain with zero transient
// states is valid here (downstream operations reject it as needed).
ChainStructure classify(const TransitionMatrix& p);

// B = N R. Row i is the absorption distribution starting from the i-th
// transient state; rows sum to 1 within kFundamentalTolerance (checked).
// Requires at least one transient state.
Eigen::MatrixXd absorption_probabilities(const ChainStructure& cs);

}  // namespace etmc
