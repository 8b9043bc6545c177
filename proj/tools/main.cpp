#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>

#include "etmc/chain.hpp"
#include "etmc/elapsed.hpp"
#include "etmc/oracle.hpp"
#include "etmc/passage.hpp"
#include "etmc/wright_fisher.hpp"
#include "report.hpp"

namespace {

using namespace etmc;

// Two values "disagree" when they differ beyond combined rounding noise.
bool disagree(double a, double b) {
  const double tol = 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) > tol;
}

bool disagree_opt(const std::optional<double>& a,
                  const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return true;
  if (!a) return false;
  return disagree(*a, *b);
}

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "paper") return VarianceMode::paper_closed;
  if (name == "series") return VarianceMode::series;
  if (name == "corrected") return VarianceMode::corrected_closed;
  throw ValidationError("unknown variance mode '" + name +
                        "' (expected paper, series or corrected)");
}

struct Analysis {
  TransitionMatrix tm;
  ChainStructure cs;
  PassageSummary ps;
  int start = 0;
  int end = 0;
};

Analysis load_analysis(const std::string& path, const std::string& start_name,
                       const std::string& end_name) {
  Analysis a{load_matrix_file(path), {}, {}, 0, 0};
  a.cs = classify(a.tm);
  a.start = a.tm.state_named(start_name);
  a.end = a.tm.state_named(end_name);
  if (!a.cs.is_transient(a.start))
    throw ValidationError("start state " + a.tm.label(a.start) +
                          " is absorbing; observed states must be transient");
  if (!a.cs.is_transient(a.end))
    throw ValidationError("end state " + a.tm.label(a.end) +
                          " is absorbing; observed states must be transient");
  a.ps = analyze_passage(a.tm, a.end, &a.cs);
  return a;
}

cli::ChainBlock chain_block(const TransitionMatrix& tm,
                            const ChainStructure& cs) {
  cli::ChainBlock block;
  block.states = tm.size();
  block.transient_count = cs.transient_count();
  block.absorbing = cs.absorbing;
  for (int a : cs.absorbing) block.absorbing_labels.push_back(tm.label(a));
  return block;
}

std::vector<cli::PassageRow> passage_rows(const TransitionMatrix& tm,
                                          const PassageSummary& ps) {
  std::vector<cli::PassageRow> rows;
  for (std::size_t k = 0; k < ps.transient.size(); ++k) {
    const int state = ps.transient[k];
    if (state == ps.target) continue;
    rows.push_back(cli::PassageRow{state, tm.label(state), ps.hitting[k],
                                   ps.passage_mean[k],
                                   ps.passage_variance[k]});
  }
  return rows;
}

cli::RecurrenceBlock recurrence_block(const PassageSummary& ps) {
  cli::RecurrenceBlock block;
  block.probability = ps.recurrence_probability;
  block.paper_mean = ps.recurrence_paper.mean;
  block.paper_variance = ps.recurrence_paper.variance;
  block.corrected_mean = ps.recurrence_corrected.mean;
  block.corrected_variance = ps.recurrence_corrected.variance;
  block.discrepancy =
      disagree_opt(block.paper_mean, block.corrected_mean) ||
      disagree_opt(block.paper_variance, block.corrected_variance);
  return block;
}

// Evaluates all three variance modes so the report can show them side by
// side; `headline` names the one the caller asked for.
cli::ElapsedBlock elapsed_block(const PassageSummary& ps, int start, int end,
                                const std::string& headline,
                                double series_epsilon) {
  ElapsedQuery q;
  q.start = start;
  q.end = end;
  q.series_epsilon = series_epsilon;

  cli::ElapsedBlock block;
  block.headline_mode = headline;

  q.variance_mode = VarianceMode::paper_closed;
  ElapsedMoments paper = variance_elapsed(ps, q);
  if (!paper.defined) {
    block.defined = false;
    block.reason = paper.undefined_reason;
    return block;
  }
  q.variance_mode = VarianceMode::series;
  ElapsedMoments series = variance_elapsed(ps, q);
  q.variance_mode = VarianceMode::corrected_closed;
  ElapsedMoments corrected = variance_elapsed(ps, q);

  block.defined = true;
  block.expectation = corrected.expectation;
  block.v_paper = paper.variance;
  block.v_series = series.variance;
  block.v_series_printed = series.series_as_printed;
  block.series_terms = series.series_terms;
  block.v_corrected = corrected.variance;
  if (headline == "paper")
    block.headline = paper.variance;
  else if (headline == "series")
    block.headline = series.variance;
  else
    block.headline = corrected.variance;
  block.discrepancy = disagree_opt(block.v_paper, block.v_corrected);
  return block;
}

void echo_pair_inputs(cli::Report& report, const Analysis& a,
                      const std::string& path) {
  report.inputs.emplace_back("matrix", path);
  report.inputs.emplace_back("start_index",
                             static_cast<long long>(a.start));
  report.inputs.emplace_back("start_label", a.tm.label(a.start));
  report.inputs.emplace_back("end_index", static_cast<long long>(a.end));
  report.inputs.emplace_back("end_label", a.tm.label(a.end));
}

int emit(const cli::Report& report, bool as_json, int exit_code) {
  std::cout << (as_json ? cli::render_json(report)
                        : cli::render_table(report));
  return exit_code;
}

struct AnalyzeArgs {
  std::string matrix, start, end;
  std::string variance_mode = "corrected";
  double epsilon = 1e-14;
  bool json = false;
};

int cmd_analyze(const AnalyzeArgs& args) {
  parse_variance_mode(args.variance_mode);  // validate early
  Analysis a = load_analysis(args.matrix, args.start, args.end);

  cli::Report report;
  report.command = "analyze";
  echo_pair_inputs(report, a, args.matrix);
  report.inputs.emplace_back("variance_mode", args.variance_mode);
  report.inputs.emplace_back("series_epsilon", args.epsilon);
  report.chain = chain_block(a.tm, a.cs);
  report.target = a.end;
  report.target_label = a.tm.label(a.end);
  report.passage = passage_rows(a.tm, a.ps);
  report.recurrence = recurrence_block(a.ps);
  report.elapsed =
      elapsed_block(a.ps, a.start, a.end, args.variance_mode, args.epsilon);
  return emit(report, args.json, report.elapsed->defined ? 0 : 3);
}

struct SimulateArgs {
  std::string matrix, start, end;
  std::uint64_t seed = 0;
  long long trajectories = 100'000;
  long long chunk = 4096;
  long long max_steps = 10'000'000;
  int threads = 0;
  bool json = false;
};

int cmd_simulate(const SimulateArgs& args) {
  Analysis a = load_analysis(args.matrix, args.start, args.end);

  cli::Report report;
  report.command = "simulate";
  echo_pair_inputs(report, a, args.matrix);
  report.inputs.emplace_back("seed", args.seed);
  report.inputs.emplace_back("trajectories", args.trajectories);
  // Execution-resource knobs (threads, chunk) are deliberately not echoed:
  // the report must be byte-identical however the work was scheduled.
  report.chain = chain_block(a.tm, a.cs);
  report.target = a.end;
  report.target_label = a.tm.label(a.end);
  report.recurrence = recurrence_block(a.ps);
  report.elapsed = elapsed_block(a.ps, a.start, a.end, "corrected", 1e-14);
  // An unobservable pair is still handed to the simulator: this command's
  // failure surface is the simulation itself, and the rejection budget
  // turns the impossibility into its usual exit-4 diagnosis.

  SimConfig cfg;
  cfg.seed = args.seed;
  cfg.trajectories = args.trajectories;
  cfg.chunk = args.chunk;
  cfg.max_steps = args.max_steps;
  cfg.threads = args.threads;
  SimEstimate est = simulate_elapsed(a.tm, a.start, a.end, cfg);

  cli::SimulationBlock sim;
  sim.seed = args.seed;
  sim.trajectories = args.trajectories;
  sim.est = est;
  if (report.elapsed->defined && report.elapsed->v_corrected) {
    const double expectation = report.elapsed->expectation;
    const double variance = *report.elapsed->v_corrected;
    auto zscore = [](double observed, double reference,
                     double se) -> std::optional<double> {
      const double diff = observed - reference;
      if (se > 0.0) return diff / se;
      if (diff == 0.0) return 0.0;
      return std::nullopt;  // zero spread but a nonzero gap: no finite z
    };
    sim.z_mean = zscore(est.mean, expectation, est.se_mean);
    sim.z_variance = zscore(est.variance, variance, est.se_variance);
    sim.mean_flagged = !sim.z_mean || std::abs(*sim.z_mean) > 4.0;
    sim.variance_flagged = !sim.z_variance || std::abs(*sim.z_variance) > 4.0;
  }
  report.simulation = sim;
  return emit(report, args.json, 0);
}

struct DistributionArgs {
  std::string matrix, start, end;
  double tail = 1e-10;
  long long tmax = 0;  // 0 = automatic horizon
  bool json = false;
};

int cmd_distribution(const DistributionArgs& args) {
  Analysis a = load_analysis(args.matrix, args.start, args.end);

  ElapsedQuery q;
  q.start = a.start;
  q.end = a.end;
  q.tail = args.tail;
  if (args.tmax > 0) q.tmax = args.tmax;
  ElapsedDistribution dist = distribution_of_elapsed(a.tm, a.cs, a.ps, q);

  cli::Report report;
  report.command = "distribution";
  echo_pair_inputs(report, a, args.matrix);
  report.inputs.emplace_back("tail", args.tail);
  if (args.tmax > 0)
    report.inputs.emplace_back("tmax", args.tmax);
  report.chain = chain_block(a.tm, a.cs);
  report.target = a.end;
  report.target_label = a.tm.label(a.end);
  report.recurrence = recurrence_block(a.ps);
  report.elapsed = elapsed_block(a.ps, a.start, a.end, "corrected", 1e-14);

  cli::DistributionBlock block;
  block.pmf = dist.pmf;
  block.residual = dist.residual;
  double mean = 0.0, second = 0.0;
  for (std::size_t idx = 0; idx < dist.pmf.size(); ++idx) {
    const double t = static_cast<double>(idx + 1);
    mean += t * dist.pmf[idx];
    second += t * t * dist.pmf[idx];
  }
  block.truncated_mean = mean;
  block.truncated_variance = std::max(0.0, second - mean * mean);
  report.distribution = std::move(block);
  return emit(report, args.json, 0);
}

struct WfArgs {
  int population = 0;
  double selection = 0.0;
  double dominance = 0.5;
  double mu_away = 0.0;
  double mu_toward = 0.0;
  int observed_count = 0;
  std::string params_file;
  std::string variance_mode = "corrected";
  bool with_distribution = false;
  double tail = 1e-10;
  long long tmax = 0;
  bool json = false;
  // Which model fields were given as flags; flags win over the params file.
  bool given_population = false, given_selection = false;
  bool given_dominance = false, given_mu_away = false;
  bool given_mu_toward = false, given_observed = false;
};

// Model parameters from a JSON file {"N":…, "s":…, "h":…, "u":…, "v":…,
// "observed_count":…}; every key optional, unknown keys rejected.
void apply_params_file(WfArgs* args) {
  std::ifstream in(args->params_file);
  if (!in)
    throw ValidationError("cannot open parameter file " + args->params_file);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("parameter file " + args->params_file +
                          " is not valid JSON: " + e.what());
  }
  if (!doc.is_object())
    throw ValidationError("parameter file must hold a JSON object");
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "N") {
        if (!args->given_population) {
          args->population = value.get<int>();
          args->given_population = true;
        }
      } else if (key == "s") {
        if (!args->given_selection) args->selection = value.get<double>();
      } else if (key == "h") {
        if (!args->given_dominance) args->dominance = value.get<double>();
      } else if (key == "u") {
        if (!args->given_mu_away) args->mu_away = value.get<double>();
      } else if (key == "v") {
        if (!args->given_mu_toward) args->mu_toward = value.get<double>();
      } else if (key == "observed_count") {
        if (!args->given_observed) {
          args->observed_count = value.get<int>();
          args->given_observed = true;
        }
      } else {
        throw ValidationError("unknown parameter-file key '" + key +
                              "' (expected N, s, h, u, v, observed_count)");
      }
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("parameter-file key '" + key +
                            "' has the wrong type");
    }
  }
}

int cmd_wf(WfArgs args) {
  if (!args.params_file.empty()) apply_params_file(&args);
  if (!args.given_population)
    throw ValidationError(
        "population is required (--population or \"N\" in --params)");
  if (!args.given_observed)
    throw ValidationError(
        "observed count is required (--observed-count or \"observed_count\" "
        "in --params)");

  WrightFisherParams params;
  params.population = args.population;
  params.selection = args.selection;
  params.dominance = args.dominance;
  params.mu_away = args.mu_away;
  params.mu_toward = args.mu_toward;

  AlleleAgeOptions opts;
  opts.variance_mode = parse_variance_mode(args.variance_mode);
  opts.with_distribution = args.with_distribution;
  opts.tail = args.tail;
  if (args.tmax > 0) opts.tmax = args.tmax;

  AlleleAgeResult result = allele_age(params, args.observed_count, opts);

  cli::Report report;
  report.command = "wf";
  report.inputs.emplace_back("population",
                             static_cast<long long>(args.population));
  report.inputs.emplace_back("selection", args.selection);
  report.inputs.emplace_back("dominance", args.dominance);
  report.inputs.emplace_back("mu_away", args.mu_away);
  report.inputs.emplace_back("mu_toward", args.mu_toward);
  report.inputs.emplace_back("observed_count",
                             static_cast<long long>(args.observed_count));
  report.inputs.emplace_back("variance_mode", args.variance_mode);

  report.allele_age = cli::AlleleAgeBlock{
      result.observed_count, result.expected_age, result.age_variance};
  if (result.distribution) {
    cli::DistributionBlock block;
    block.pmf = *result.distribution;
    block.residual = result.distribution_residual;
    double mean = 0.0, second = 0.0;
    for (std::size_t idx = 0; idx < block.pmf.size(); ++idx) {
      const double t = static_cast<double>(idx + 1);
      mean += t * block.pmf[idx];
      second += t * t * block.pmf[idx];
    }
    block.truncated_mean = mean;
    block.truncated_variance = std::max(0.0, second - mean * mean);
    report.distribution = std::move(block);
  }
  return emit(report, args.json, 0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Moments and distribution of the elapsed time between two transient "
      "observations of an absorbing Markov chain"};
  app.require_subcommand(1);

  AnalyzeArgs analyze_args;
  CLI::App* analyze = app.add_subcommand(
      "analyze", "hitting/passage/return moments and the elapsed time");
  analyze->add_option("matrix", analyze_args.matrix, "transition matrix file")
      ->required();
  analyze->add_option("start", analyze_args.start, "first observed state")
      ->required();
  analyze->add_option("end", analyze_args.end, "second observed state")
      ->required();
  analyze->add_option("--variance-mode", analyze_args.variance_mode,
                      "paper | series | corrected");
  analyze->add_option("--epsilon", analyze_args.epsilon,
                      "series truncation threshold");
  analyze->add_flag("--json", analyze_args.json, "emit a JSON report");

  SimulateArgs simulate_args;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Monte Carlo check of the elapsed-time moments");
  simulate->add_option("matrix", simulate_args.matrix, "transition matrix file")
      ->required();
  simulate->add_option("start", simulate_args.start, "first observed state")
      ->required();
  simulate->add_option("end", simulate_args.end, "second observed state")
      ->required();
  simulate->add_option("--seed", simulate_args.seed, "RNG seed");
  simulate->add_option("--trajectories", simulate_args.trajectories,
                       "accepted trajectories to collect");
  simulate->add_option("--chunk", simulate_args.chunk,
                       "accepted trajectories per work unit");
  simulate->add_option("--max-steps", simulate_args.max_steps,
                       "per-trajectory step cap");
  simulate->add_option("--threads", simulate_args.threads,
                       "worker threads (0 = auto); never changes results");
  simulate->add_flag("--json", simulate_args.json, "emit a JSON report");

  DistributionArgs distribution_args;
  CLI::App* distribution = app.add_subcommand(
      "distribution", "exact distribution of the elapsed time");
  distribution
      ->add_option("matrix", distribution_args.matrix,
                   "transition matrix file")
      ->required();
  distribution
      ->add_option("start", distribution_args.start, "first observed state")
      ->required();
  distribution
      ->add_option("end", distribution_args.end, "second observed state")
      ->required();
  distribution->add_option("--tail", distribution_args.tail,
                           "stop once this little mass remains");
  distribution->add_option("--tmax", distribution_args.tmax,
                           "fixed horizon (overrides --tail)");
  distribution->add_flag("--json", distribution_args.json,
                         "emit a JSON report");

  WfArgs wf_args;
  CLI::App* wf = app.add_subcommand(
      "wf", "allele age under a Wright-Fisher reproduction model");
  CLI::Option* wf_population = wf->add_option(
      "--population", wf_args.population, "diploid population size N");
  CLI::Option* wf_selection = wf->add_option(
      "--selection", wf_args.selection, "selection coefficient s");
  CLI::Option* wf_dominance = wf->add_option(
      "--dominance", wf_args.dominance, "dominance coefficient h");
  CLI::Option* wf_mu_away = wf->add_option(
      "--mu-away", wf_args.mu_away,
      "mutation rate away from the focal allele");
  CLI::Option* wf_mu_toward = wf->add_option(
      "--mu-toward", wf_args.mu_toward,
      "mutation rate toward the focal allele");
  CLI::Option* wf_observed = wf->add_option(
      "--observed-count", wf_args.observed_count,
      "observed copy number of the allele");
  wf->add_option("--params", wf_args.params_file,
                 "JSON parameter file {\"N\", \"s\", \"h\", \"u\", \"v\", "
                 "\"observed_count\"}; flags win on conflict");
  wf->add_option("--variance-mode", wf_args.variance_mode,
                 "paper | series | corrected");
  wf->add_flag("--distribution", wf_args.with_distribution,
               "also compute the age distribution");
  wf->add_option("--tail", wf_args.tail,
                 "distribution horizon: stop at this residual mass");
  wf->add_option("--tmax", wf_args.tmax, "fixed distribution horizon");
  wf->add_flag("--json", wf_args.json, "emit a JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  wf_args.given_population = wf_population->count() > 0;
  wf_args.given_selection = wf_selection->count() > 0;
  wf_args.given_dominance = wf_dominance->count() > 0;
  wf_args.given_mu_away = wf_mu_away->count() > 0;
  wf_args.given_mu_toward = wf_mu_toward->count() > 0;
  wf_args.given_observed = wf_observed->count() > 0;

  try {
    if (analyze->parsed()) return cmd_analyze(analyze_args);
    if (simulate->parsed()) return cmd_simulate(simulate_args);
    if (distribution->parsed()) return cmd_distribution(distribution_args);
    if (wf->parsed()) return cmd_wf(wf_args);
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const ImpossiblePairError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const SimulationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
