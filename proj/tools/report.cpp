#include "report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace etmc::cli {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// Minimal JSON emitter. Exists because the report contract pins the number
// format (17 significant digits) and byte-stable key order, which generic
// serializers don't guarantee. Writing only — inputs are parsed elsewhere.
class JsonWriter {
 public:
  void begin_object() {
    element();
    out_ += '{';
    fresh_ = true;
  }
  void end_object() {
    out_ += '}';
    fresh_ = false;
  }
  void begin_array() {
    element();
    out_ += '[';
    fresh_ = true;
  }
  void end_array() {
    out_ += ']';
    fresh_ = false;
  }
  void key(const std::string& k) {
    if (!fresh_) out_ += ',';
    fresh_ = false;
    quote(k);
    out_ += ':';
    after_key_ = true;
  }
  void text(const std::string& v) {
    element();
    quote(v);
  }
  void number(double v) {
    element();
    if (std::isfinite(v))
      out_ += fmt17(v);
    else
      out_ += "null";
  }
  void integer(long long v) {
    element();
    out_ += std::to_string(v);
  }
  void uinteger(std::uint64_t v) {
    element();
    out_ += std::to_string(v);
  }
  void boolean(bool v) {
    element();
    out_ += v ? "true" : "false";
  }
  void null_value() {
    element();
    out_ += "null";
  }

  std::string take() { return std::move(out_); }

 private:
  void element() {
    if (after_key_) {
      after_key_ = false;
      return;
    }
    if (!fresh_) out_ += ',';
    fresh_ = false;
  }
  void quote(const std::string& s) {
    out_ += '"';
    for (char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\t': out_ += "\\t"; break;
        case '\r': out_ += "\\r"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            out_ += buf;
          } else {
            out_ += c;
          }
      }
    }
    out_ += '"';
  }

  std::string out_;
  bool fresh_ = true;
  bool after_key_ = false;
};

void emit_input(JsonWriter& w, const InputValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) {
    w.text(*s);
  } else if (const auto* i = std::get_if<long long>(&v)) {
    w.integer(*i);
  } else if (const auto* u = std::get_if<std::uint64_t>(&v)) {
    w.uinteger(*u);
  } else if (const auto* d = std::get_if<double>(&v)) {
    w.number(*d);
  } else {
    w.boolean(std::get<bool>(v));
  }
}

void emit_optional(JsonWriter& w, const std::optional<double>& v) {
  if (v)
    w.number(*v);
  else
    w.null_value();
}

std::string input_to_text(const InputValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* i = std::get_if<long long>(&v)) return std::to_string(*i);
  if (const auto* u = std::get_if<std::uint64_t>(&v)) return std::to_string(*u);
  if (const auto* d = std::get_if<double>(&v)) return fmt17(*d);
  return std::get<bool>(v) ? "true" : "false";
}

std::string opt17(const std::optional<double>& v) {
  return v ? fmt17(*v) : "undefined";
}

}  // namespace

std::string render_json(const Report& r) {
  JsonWriter w;
  w.begin_object();
  w.key("schema");
  w.text("etmc-report-v1");
  w.key("command");
  w.text(r.command);

  w.key("inputs");
  w.begin_object();
  for (const auto& [k, v] : r.inputs) {
    w.key(k);
    emit_input(w, v);
  }
  w.end_object();

  if (r.chain) {
    w.key("chain");
    w.begin_object();
    w.key("states");
    w.integer(r.chain->states);
    w.key("transient_count");
    w.integer(r.chain->transient_count);
    w.key("absorbing");
    w.begin_array();
    for (int a : r.chain->absorbing) w.integer(a);
    w.end_array();
    w.key("absorbing_labels");
    w.begin_array();
    for (const auto& l : r.chain->absorbing_labels) w.text(l);
    w.end_array();
    w.end_object();
  }

  if (r.passage || r.recurrence) {
    w.key("passage");
    w.begin_object();
    w.key("target");
    w.integer(r.target);
    w.key("target_label");
    w.text(r.target_label);
    if (r.recurrence) {
      w.key("recurrence_probability");
      w.number(r.recurrence->probability);
    }
    if (r.passage) {
      w.key("toward_target");
      w.begin_array();
      for (const auto& row : *r.passage) {
        w.begin_object();
        w.key("state");
        w.integer(row.state);
        w.key("label");
        w.text(row.label);
        w.key("hitting");
        w.number(row.hitting);
        w.key("mean");
        emit_optional(w, row.mean);
        w.key("variance");
        emit_optional(w, row.variance);
        w.end_object();
      }
      w.end_array();
    }
    if (r.recurrence) {
      w.key("recurrence");
      w.begin_object();
      w.key("paper");
      w.begin_object();
      w.key("mean");
      emit_optional(w, r.recurrence->paper_mean);
      w.key("variance");
      emit_optional(w, r.recurrence->paper_variance);
      w.end_object();
      w.key("corrected");
      w.begin_object();
      w.key("mean");
      emit_optional(w, r.recurrence->corrected_mean);
      w.key("variance");
      emit_optional(w, r.recurrence->corrected_variance);
      w.end_object();
      w.key("discrepancy");
      w.boolean(r.recurrence->discrepancy);
      w.end_object();
    }
    w.end_object();
  }

  if (r.elapsed) {
    w.key("elapsed");
    w.begin_object();
    w.key("defined");
    w.boolean(r.elapsed->defined);
    if (!r.elapsed->defined) {
      w.key("reason");
      w.text(r.elapsed->reason);
    } else {
      w.key("expectation");
      w.number(r.elapsed->expectation);
      w.key("variance");
      w.begin_object();
      w.key("paper");
      emit_optional(w, r.elapsed->v_paper);
      w.key("series");
      emit_optional(w, r.elapsed->v_series);
      w.key("series_as_printed");
      emit_optional(w, r.elapsed->v_series_printed);
      w.key("series_terms");
      w.integer(r.elapsed->series_terms);
      w.key("corrected");
      emit_optional(w, r.elapsed->v_corrected);
      w.key("headline_mode");
      w.text(r.elapsed->headline_mode);
      w.key("headline");
      emit_optional(w, r.elapsed->headline);
      w.end_object();
      w.key("discrepancy");
      w.boolean(r.elapsed->discrepancy);
    }
    w.end_object();
  }

  if (r.simulation) {
    const auto& s = *r.simulation;
    w.key("simulation");
    w.begin_object();
    w.key("seed");
    w.uinteger(s.seed);
    w.key("trajectories");
    w.integer(s.trajectories);
    w.key("accepted");
    w.integer(s.est.accepted);
    w.key("rejected");
    w.integer(s.est.rejected);
    w.key("acceptance_rate");
    w.number(s.est.acceptance_rate);
    w.key("mean");
    w.number(s.est.mean);
    w.key("variance");
    w.number(s.est.variance);
    w.key("se_mean");
    w.number(s.est.se_mean);
    w.key("se_variance");
    w.number(s.est.se_variance);
    w.key("z_mean");
    emit_optional(w, s.z_mean);
    w.key("z_variance");
    emit_optional(w, s.z_variance);
    w.key("mean_flagged");
    w.boolean(s.mean_flagged);
    w.key("variance_flagged");
    w.boolean(s.variance_flagged);
    w.end_object();
  }

  if (r.distribution) {
    const auto& d = *r.distribution;
    w.key("distribution");
    w.begin_object();
    w.key("support_starts_at");
    w.integer(1);
    w.key("pmf");
    w.begin_array();
    for (double p : d.pmf) w.number(p);
    w.end_array();
    w.key("residual");
    w.number(d.residual);
    w.key("truncated_mean");
    w.number(d.truncated_mean);
    w.key("truncated_variance");
    w.number(d.truncated_variance);
    w.end_object();
  }

  if (r.allele_age) {
    w.key("allele_age");
    w.begin_object();
    w.key("observed_count");
    w.integer(r.allele_age->observed_count);
    w.key("expected_age");
    w.number(r.allele_age->expected_age);
    w.key("age_variance");
    emit_optional(w, r.allele_age->age_variance);
    w.end_object();
  }

  w.end_object();
  std::string out = w.take();
  out += '\n';
  return out;
}

std::string render_table(const Report& r) {
  std::ostringstream os;
  os << r.command;
  for (const auto& [k, v] : r.inputs)
    os << "  " << k << "=" << input_to_text(v);
  os << "\n";

  if (r.chain) {
    os << "chain: " << r.chain->states << " states, "
       << r.chain->transient_count << " transient, absorbing:";
    for (const auto& l : r.chain->absorbing_labels) os << " " << l;
    os << "\n";
  }

  if (r.recurrence) {
    os << "target " << r.target_label
       << ": recurrence probability = " << fmt17(r.recurrence->probability)
       << "\n";
  }
  if (r.passage && !r.passage->empty()) {
    os << "passage toward " << r.target_label
       << " (conditional on arrival):\n";
    os << "  state  hitting  mean  variance\n";
    for (const auto& row : *r.passage) {
      os << "  " << row.label << "  " << fmt17(row.hitting) << "  "
         << opt17(row.mean) << "  " << opt17(row.variance) << "\n";
    }
  }
  if (r.recurrence) {
    os << "return moments at " << r.target_label << ":\n";
    os << "  paper:      mean = " << opt17(r.recurrence->paper_mean)
       << "  variance = " << opt17(r.recurrence->paper_variance) << "\n";
    os << "  corrected:  mean = " << opt17(r.recurrence->corrected_mean)
       << "  variance = " << opt17(r.recurrence->corrected_variance) << "\n";
    if (r.recurrence->discrepancy)
      os << "  note: the two return-moment routes disagree beyond "
            "tolerance\n";
  }

  if (r.elapsed) {
    os << "elapsed time:\n";
    if (!r.elapsed->defined) {
      os << "  undefined: " << r.elapsed->reason << "\n";
    } else {
      os << "  expectation = " << fmt17(r.elapsed->expectation) << "\n";
      os << "  variance[paper]     = " << opt17(r.elapsed->v_paper) << "\n";
      os << "  variance[series]    = " << opt17(r.elapsed->v_series) << " ("
         << r.elapsed->series_terms
         << " terms; as printed " << opt17(r.elapsed->v_series_printed)
         << ")\n";
      os << "  variance[corrected] = " << opt17(r.elapsed->v_corrected)
         << "\n";
      os << "  headline (" << r.elapsed->headline_mode
         << ") = " << opt17(r.elapsed->headline) << "\n";
      if (r.elapsed->discrepancy)
        os << "  note: paper-mode variance disagrees with corrected beyond "
              "tolerance\n";
    }
  }

  if (r.simulation) {
    const auto& s = *r.simulation;
    os << "simulation (seed " << s.seed << ", target " << s.trajectories
       << " accepted):\n";
    os << "  accepted = " << s.est.accepted
       << "  rejected = " << s.est.rejected
       << "  acceptance_rate = " << fmt17(s.est.acceptance_rate) << "\n";
    os << "  mean = " << fmt17(s.est.mean)
       << "  se_mean = " << fmt17(s.est.se_mean) << "\n";
    os << "  variance = " << fmt17(s.est.variance)
       << "  se_variance = " << fmt17(s.est.se_variance) << "\n";
    os << "  z_mean = " << opt17(s.z_mean)
       << "  z_variance = " << opt17(s.z_variance) << "\n";
    if (s.mean_flagged)
      os << "  note: simulated mean is more than 4 standard errors from "
            "the analytic value\n";
    if (s.variance_flagged)
      os << "  note: simulated variance is more than 4 standard errors "
            "from the analytic value\n";
  }

  if (r.distribution) {
    const auto& d = *r.distribution;
    os << "distribution of the elapsed time (t, probability, cumulative):\n";
    double cumulative = 0.0;
    for (std::size_t idx = 0; idx < d.pmf.size(); ++idx) {
      cumulative += d.pmf[idx];
      os << "  " << (idx + 1) << "  " << fmt17(d.pmf[idx]) << "  "
         << fmt17(cumulative) << "\n";
    }
    os << "  residual beyond horizon = " << fmt17(d.residual) << "\n";
    os << "  truncated mean = " << fmt17(d.truncated_mean)
       << "  truncated variance = " << fmt17(d.truncated_variance) << "\n";
  }

  if (r.allele_age) {
    os << "allele age at " << r.allele_age->observed_count << " copies:\n";
    os << "  expected age = " << fmt17(r.allele_age->expected_age)
       << " generations\n";
    os << "  age variance = " << opt17(r.allele_age->age_variance) << "\n";
  }

  return os.str();
}

}  // namespace etmc::cli
