#include "etmc/chain.hpp"

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <deque>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace etmc {

namespace {

std::string default_label(int i) { return "s" + std::to_string(i); }

// Parses one CSV probability field; from_chars rejects trailing junk.
double parse_field(const std::string& field, int row, int col) {
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin)))
    ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(end[-1])))
    --end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("matrix parse failure at row " +
                          std::to_string(row) + ", column " +
                          std::to_string(col) + ": '" + field + "'");
  }
  return value;
}

Eigen::MatrixXd rows_to_matrix(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ValidationError("matrix document is empty");
  Eigen::MatrixXd p(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != n) {
      throw ValidationError(
          "matrix is not square: row " + std::to_string(i) + " has " +
          std::to_string(rows[i].size()) + " entries, expected " +
          std::to_string(n));
    }
    for (int j = 0; j < n; ++j) p(i, j) = rows[i][j];
  }
  return p;
}

// Loader-side row handling: reject sums off by >= kLoaderRowSumTolerance
// (naming the row and the deficit), rescale smaller drift away so the
// constructed matrix meets the strict kRowSumTolerance invariant.
void check_and_rescale_rows(Eigen::MatrixXd& p) {
  for (int i = 0; i < p.rows(); ++i) {
    for (int j = 0; j < p.cols(); ++j) {
      if (p(i, j) < 0.0) {
        throw ValidationError("negative probability at row " +
                              std::to_string(i) + ", column " +
                              std::to_string(j));
      }
      if (p(i, j) > 1.0 + kLoaderRowSumTolerance) {
        throw ValidationError("probability above 1 at row " +
                              std::to_string(i) + ", column " +
                              std::to_string(j));
      }
    }
    const double sum = p.row(i).sum();
    if (std::abs(sum - 1.0) >= kLoaderRowSumTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "row " << i << " sums to " << sum << " (deficit " << (1.0 - sum)
         << "); rows must sum to 1 within " << kLoaderRowSumTolerance;
      throw ValidationError(os.str());
    }
    if (sum != 1.0) p.row(i) /= sum;
  }
}

TransitionMatrix load_csv(const std::string& content) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(content);
  std::string line;
  int row_index = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // Skip blank lines (common at end of file).
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    std::vector<double> row;
    std::istringstream fields(line);
    std::string field;
    int col = 0;
    while (std::getline(fields, field, ',')) {
      row.push_back(parse_field(field, row_index, col));
      ++col;
    }
    if (!line.empty() && line.back() == ',')  // trailing comma = empty field
      throw ValidationError("matrix parse failure at row " +
                            std::to_string(row_index) + ": trailing comma");
    rows.push_back(std::move(row));
    ++row_index;
  }
  Eigen::MatrixXd p = rows_to_matrix(rows);
  check_and_rescale_rows(p);
  return TransitionMatrix::make(std::move(p));
}

TransitionMatrix load_json(const std::string& content) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("matrix JSON parse failure: ") +
                          e.what());
  }
  if (!doc.is_object() || !doc.contains("rows"))
    throw ValidationError("matrix JSON must be an object with a 'rows' key");
  const auto& jrows = doc["rows"];
  if (!jrows.is_array())
    throw ValidationError("matrix JSON 'rows' must be an array of arrays");
  std::vector<std::vector<double>> rows;
  for (const auto& jrow : jrows) {
    if (!jrow.is_array())
      throw ValidationError("matrix JSON 'rows' must be an array of arrays");
    std::vector<double> row;
    for (const auto& v : jrow) {
      if (!v.is_number())
        throw ValidationError("matrix JSON entries must be numbers");
      row.push_back(v.get<double>());
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> labels;
  if (doc.contains("labels")) {
    const auto& jl = doc["labels"];
    if (!jl.is_array())
      throw ValidationError("matrix JSON 'labels' must be an array");
    for (const auto& v : jl) {
      if (!v.is_string())
        throw ValidationError("matrix JSON labels must be strings");
      labels.push_back(v.get<std::string>());
    }
  }
  Eigen::MatrixXd p = rows_to_matrix(rows);
  check_and_rescale_rows(p);
  return TransitionMatrix::make(std::move(p), std::move(labels));
}

}  // namespace

TransitionMatrix TransitionMatrix::make(Eigen::MatrixXd p,
                                        std::vector<std::string> labels) {
  if (p.rows() == 0 || p.rows() != p.cols()) {
    throw ValidationError("transition matrix must be square and non-empty (" +
                          std::to_string(p.rows()) + "x" +
                          std::to_string(p.cols()) + ")");
  }
  const int n = static_cast<int>(p.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!(p(i, j) >= 0.0) || !(p(i, j) <= 1.0)) {
        std::ostringstream os;
        os.precision(17);
        os << "entry (" << i << "," << j << ") = " << p(i, j)
           << " outside [0,1]";
        throw ValidationError(os.str());
      }
    }
    const double sum = p.row(i).sum();
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "row " << i << " sums to " << sum << ", not 1 within "
         << kRowSumTolerance;
      throw ValidationError(os.str());
    }
  }
  if (labels.empty()) {
    labels.reserve(n);
    for (int i = 0; i < n; ++i) labels.push_back(default_label(i));
  }
  if (static_cast<int>(labels.size()) != n) {
    throw ValidationError("expected " + std::to_string(n) + " labels, got " +
                          std::to_string(labels.size()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (!seen.insert(l).second)
      throw ValidationError("duplicate state label '" + l + "'");
  }
  return TransitionMatrix{std::move(p), std::move(labels)};
}

int TransitionMatrix::state_named(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (labels[i] == name) return i;
  bool digits = !name.empty();
  for (char c : name)
    if (!std::isdigit(static_cast<unsigned char>(c))) digits = false;
  if (digits) {
    int idx = -1;
    auto [ptr, ec] =
        std::from_chars(name.data(), name.data() + name.size(), idx);
    if (ec == std::errc{} && ptr == name.data() + name.size() && idx >= 0 &&
        idx < size())
      return idx;
  }
  throw ValidationError("no state named '" + name + "' (and not a valid " +
                        "0-based index below " + std::to_string(size()) +
                        ")");
}

TransitionMatrix load_matrix(const std::string& content) {
  for (char c : content) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    return c == '{' ? load_json(content) : load_csv(content);
  }
  throw ValidationError("matrix document is empty");
}

TransitionMatrix load_matrix_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open matrix file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_matrix(buffer.str());
}

ChainStructure classify(const TransitionMatrix& tm) {
  const int n = tm.size();
  std::vector<bool> absorbing_flag(n);
  for (int i = 0; i < n; ++i)
    absorbing_flag[i] = tm.p(i, i) >= 1.0 - kAbsorbingTolerance;

  ChainStructure cs;
  for (int i = 0; i < n; ++i)
    (absorbing_flag[i] ? cs.absorbing : cs.transient).push_back(i);

  if (cs.absorbing.empty())
    throw ValidationError(
        "chain has no absorbing state: every diagonal entry is below 1");

  // Every transient state must reach some absorbing state through the
  // support graph; walk predecessors outward from the absorbing set.
  std::vector<char> reaches(n, 0);
  std::deque<int> frontier;
  for (int a : cs.absorbing) {
    reaches[a] = 1;
    frontier.push_back(a);
  }
  while (!frontier.empty()) {
    const int k = frontier.front();
    frontier.pop_front();
    for (int i : cs.transient) {
      if (!reaches[i] && tm.p(i, k) > 0.0) {
        reaches[i] = 1;
        frontier.push_back(i);
      }
    }
  }
  std::string stuck;
  for (int i : cs.transient) {
    if (!reaches[i]) stuck += (stuck.empty() ? "" : ", ") + tm.label(i);
  }
  if (!stuck.empty())
    throw ValidationError(
        "chain is not absorbing: no path to an absorbing state from " +
        stuck);

  const int t = cs.transient_count();
  const int r = cs.absorbing_count();
  cs.position.assign(n, -1);
  for (int k = 0; k < t; ++k) cs.position[cs.transient[k]] = k;
  for (int k = 0; k < r; ++k) cs.position[cs.absorbing[k]] = t + k;

  cs.q.resize(t, t);
  cs.r.resize(t, r);
  for (int a = 0; a < t; ++a) {
    for (int b = 0; b < t; ++b) cs.q(a, b) = tm.p(cs.transient[a], cs.transient[b]);
    for (int b = 0; b < r; ++b) cs.r(a, b) = tm.p(cs.transient[a], cs.absorbing[b]);
  }

  if (t > 0) {
    Eigen::MatrixXd im_q = Eigen::MatrixXd::Identity(t, t) - cs.q;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(im_q);
    cs.fundamental = lu.solve(Eigen::MatrixXd::Identity(t, t));

    const double residual =
        (Eigen::MatrixXd::Identity(t, t) + cs.q * cs.fundamental -
         cs.fundamental)
            .cwiseAbs()
            .maxCoeff();
    if (residual > kFundamentalTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "fundamental matrix residual " << residual << " exceeds "
         << kFundamentalTolerance << "; the transient block is too close to "
         << "singular";
      throw Error(os.str());
    }
    if (cs.fundamental.minCoeff() < -1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "fundamental matrix has a negative entry ("
         << cs.fundamental.minCoeff() << "); numerical breakdown";
      throw Error(os.str());
    }
  } else {
    cs.fundamental.resize(0, 0);
  }
  return cs;
}

Eigen::MatrixXd absorption_probabilities(const ChainStructure& cs) {
  if (cs.transient_count() == 0)
    throw ValidationError(
        "chain has no transient states; absorption is immediate");
  Eigen::MatrixXd b = cs.fundamental * cs.r;
  for (int i = 0; i < b.rows(); ++i) {
    const double sum = b.row(i).sum();
    if (std::abs(sum - 1.0) > kFundamentalTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "absorption probabilities for transient state "
         << cs.transient[i] << " sum to " << sum << ", not 1 within "
         << kFundamentalTolerance;
      throw Error(os.str());
    }
  }
  return b;
}

}  // namespace etmc
