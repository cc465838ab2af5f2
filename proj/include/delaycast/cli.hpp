#pragma once

// Command-line front end. `run_cli` is the whole program; tools/ only wraps
// it in main().
//
// Settings come from, in increasing precedence: built-in defaults, the JSON
// document given by --config, command-line flags. Every run writes the
// resolved document to <out>/resolved_config.json; passing that file back via
// --config reproduces the run.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 convergence gate
// failed under --strict, 1 anything else.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "delaycast/delaycast.hpp"

namespace delaycast::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitGate = 3;

inline constexpr double kMpsrfGate = 1.05;
inline constexpr const char* kOutputRootEnv = "DELAYCAST_OUTPUT_ROOT";

struct DataSettings {
  std::string path;
  std::string format = "auto";  // auto | long | wide
  int present_day = 0;          // 0: last time index in the file
  int maturity = 0;             // 0: largest delay in the file
  std::string series;
};

struct RunSettings {
  std::string out;
  std::string fit;
  std::vector<double> levels{0.5, 0.95};
  int horizon = 4;
  bool strict = false;
  double threshold = 0.8;
  double quantile = 0.2;
  bool include_remainder = true;
  long replicate_draws = 1000;
  bool exclude_delay_splines = false;
};

struct RunConfig {
  std::string command;
  DataSettings data;
  ModelSpec model;
  SamplerConfig sampler;
  ScenarioConfig scenario;
  RunSettings run;
};

inline Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = c.command;
  j["data"] = {{"path", c.data.path},
               {"format", c.data.format},
               {"present_day", c.data.present_day},
               {"maturity", c.data.maturity},
               {"series", c.data.series}};
  j["model"] = delaycast::to_json(c.model);
  j["sampler"] = delaycast::to_json(c.sampler);
  j["scenario"] = delaycast::to_json(c.scenario);
  j["run"] = {{"out", c.run.out},
              {"fit", c.run.fit},
              {"levels", c.run.levels},
              {"horizon", c.run.horizon},
              {"strict", c.run.strict},
              {"threshold", c.run.threshold},
              {"quantile", c.run.quantile},
              {"include_remainder", c.run.include_remainder},
              {"replicate_draws", c.run.replicate_draws},
              {"exclude_delay_splines", c.run.exclude_delay_splines}};
  return j;
}

inline RunConfig run_config_from_json(const Json& j, RunConfig c = {}) {
  detail::reject_unknown(j, {"command", "data", "model", "sampler", "scenario", "run"}, "config");
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown(d, {"path", "format", "present_day", "maturity", "series"}, "data");
    detail::read_key(d, "path", c.data.path, "data");
    detail::read_key(d, "format", c.data.format, "data");
    detail::read_key(d, "present_day", c.data.present_day, "data");
    detail::read_key(d, "maturity", c.data.maturity, "data");
    detail::read_key(d, "series", c.data.series, "data");
  }
  if (j.contains("model")) c.model = model_spec_from_json(j.at("model"), c.model);
  if (j.contains("sampler")) c.sampler = sampler_config_from_json(j.at("sampler"), c.sampler);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"), c.scenario);
  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::reject_unknown(r,
                           {"out", "fit", "levels", "horizon", "strict", "threshold", "quantile", "include_remainder",
                            "replicate_draws", "exclude_delay_splines"},
                           "run");
    detail::read_key(r, "out", c.run.out, "run");
    detail::read_key(r, "fit", c.run.fit, "run");
    detail::read_key(r, "levels", c.run.levels, "run");
    detail::read_key(r, "horizon", c.run.horizon, "run");
    detail::read_key(r, "strict", c.run.strict, "run");
    detail::read_key(r, "threshold", c.run.threshold, "run");
    detail::read_key(r, "quantile", c.run.quantile, "run");
    detail::read_key(r, "include_remainder", c.run.include_remainder, "run");
    detail::read_key(r, "replicate_draws", c.run.replicate_draws, "run");
    detail::read_key(r, "exclude_delay_splines", c.run.exclude_delay_splines, "run");
  }
  return c;
}

/// Flag values; unset optionals leave the config file's values alone.
struct Overrides {
  std::string config;
  std::optional<std::string> data, format, series, out, fit, variant;
  std::optional<int> present_day, maturity, delay_horizon, chains, threads, horizon;
  std::optional<long> iterations, burn_in, thin, replicate_draws;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> levels;
  std::optional<double> threshold, quantile;
  std::optional<bool> time_varying_delay, multinomial_limit;
  bool strict = false;
  bool exclude_delay_splines = false;
  bool no_remainder = false;
};

inline std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(".");
}

inline RunConfig resolve(const std::string& command, const Overrides& o) {
  RunConfig c;
  if (!o.config.empty()) c = run_config_from_json(read_json_file(o.config));
  c.command = command;
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.data.path, o.data);
  set(c.data.format, o.format);
  set(c.data.series, o.series);
  set(c.data.present_day, o.present_day);
  set(c.data.maturity, o.maturity);
  set(c.run.out, o.out);
  set(c.run.fit, o.fit);
  set(c.run.levels, o.levels);
  set(c.run.horizon, o.horizon);
  set(c.run.threshold, o.threshold);
  set(c.run.quantile, o.quantile);
  set(c.run.replicate_draws, o.replicate_draws);
  if (o.strict) c.run.strict = true;
  if (o.exclude_delay_splines) c.run.exclude_delay_splines = true;
  if (o.no_remainder) c.run.include_remainder = false;
  if (o.variant) c.model.variant = variant_from_string(*o.variant);
  set(c.model.delay_horizon, o.delay_horizon);
  set(c.model.time_varying_delay, o.time_varying_delay);
  set(c.model.multinomial_limit, o.multinomial_limit);
  set(c.sampler.n_chains, o.chains);
  set(c.sampler.threads, o.threads);
  set(c.sampler.n_iterations, o.iterations);
  set(c.sampler.thin, o.thin);
  if (o.iterations && !o.burn_in) c.sampler.burn_in = *o.iterations / 2;
  set(c.sampler.burn_in, o.burn_in);
  if (o.seed) {
    if (command == "simulate") c.scenario.seed = *o.seed;
    else c.sampler.seed = *o.seed;
  }
  if (c.run.out.empty()) c.run.out = command;
  const std::filesystem::path out(c.run.out);
  if (out.is_relative()) c.run.out = (output_root() / out).lexically_normal().string();

  if (command == "fit") {
    c.model.validate();
    c.sampler.validate();
    if (c.data.path.empty()) throw ConfigError("fit needs --data");
  }
  if (command == "simulate") c.scenario.validate();
  if (command == "select-delay" && c.data.path.empty()) throw ConfigError("select-delay needs --data");
  if ((command == "nowcast" || command == "forecast" || command == "check" || command == "diagnose") &&
      c.run.fit.empty())
    throw ConfigError(command + " needs --fit <directory written by fit>");
  validate_levels(c.run.levels);
  if (c.data.format != "auto" && c.data.format != "long" && c.data.format != "wide")
    throw ConfigError("data format must be auto, long or wide");
  if (c.run.replicate_draws < 1) throw ConfigError("replicate_draws must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Data loading

inline std::string sniff_format(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kIo, 0, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  for (const auto& f : delaycast::detail::split_csv(line))
    if (f == "delay") return "long";
  return "wide";
}

/// Raw triangle (one column per observed delay) from a long CSV.
inline ReportingTriangle load_raw_long(const DataSettings& d, CensoringSpec& cs) {
  std::ifstream in(d.path);
  if (!in) throw ParseError(ParseErrorKind::kIo, 0, "cannot open " + d.path);
  // A first pass with a provisional present day finds the extent of the file.
  CensoringSpec probe{d.present_day, 1, std::max(1, d.maturity)};
  auto all = parse_long_csv_series(in, probe);
  ReportingTriangle* pick = nullptr;
  for (auto& t : all)
    if (d.series.empty() ? all.size() == 1 : t.series_id() == d.series) pick = &t;
  if (!pick)
    throw ConfigError(d.series.empty() ? "file holds several series; choose one with --series"
                                       : "series '" + d.series + "' not found");
  cs.present_day = d.present_day > 0 ? d.present_day : static_cast<int>(pick->n_times());
  cs.maturity = d.maturity > 0 ? d.maturity : static_cast<int>(pick->n_columns());
  if (cs.present_day == probe.present_day && cs.maturity == static_cast<int>(pick->n_columns())) return *pick;
  in.clear();
  in.seekg(0);
  CensoringSpec full{cs.present_day, 1, cs.maturity};
  for (auto& t : parse_long_csv_series(in, full))
    if (t.series_id() == pick->series_id()) return t;
  throw ConfigError("series vanished on re-read");
}

/// The collapsed triangle the models are fitted to.
inline ReportingTriangle load_triangle(const DataSettings& d, int delay_horizon) {
  const std::string fmt = d.format == "auto" ? sniff_format(d.path) : d.format;
  if (fmt == "wide") {
    std::ifstream in(d.path);
    if (!in) throw ParseError(ParseErrorKind::kIo, 0, "cannot open " + d.path);
    auto tri = read_wide_csv(in, d.series);
    if (tri.n_columns() != static_cast<std::size_t>(delay_horizon) + 1)
      throw ConfigError("wide triangle has " + std::to_string(tri.n_columns()) + " columns; delay_horizon " +
                        std::to_string(delay_horizon) + " needs " + std::to_string(delay_horizon + 1));
    return tri;
  }
  CensoringSpec cs;
  auto raw = load_raw_long(d, cs);
  cs.delay_horizon = delay_horizon;
  cs.validate();
  return collapse_remainder(raw, cs);
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline std::filesystem::path prepare_out(const RunConfig& c, std::ostream& log) {
  const std::filesystem::path dir(c.run.out);
  std::filesystem::create_directories(dir);
  write_json_file(dir / "resolved_config.json", to_json(c));
  log << "output: " << dir.string() << "\n";
  return dir;
}

template <class F>
void write_file(const std::filesystem::path& path, F&& body) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  body(out);
}

inline double finite_or_null_mean(const std::vector<double>& v) {
  double s = 0;
  long n = 0;
  for (double x : v)
    if (std::isfinite(x)) s += x, ++n;
  return n > 0 ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace detail

inline int cmd_simulate(const RunConfig& c, std::ostream& log) {
  const auto data = simulate_dataset(c.scenario);
  const auto dir = detail::prepare_out(c, log);
  detail::write_file(dir / "data_long.csv", [&](std::ostream& os) { write_long_csv(os, data.raw); });
  detail::write_file(dir / "triangle.csv", [&](std::ostream& os) { write_wide_csv(os, data.collapsed); });
  write_json_file(dir / "truth.json", truth_to_json(data.truth));
  log << "simulated " << data.collapsed.n_times() << " rows, present day " << c.scenario.present_day << "\n";
  return kExitOk;
}

inline MpsrfResult gate_mpsrf(const Model& model, const PosteriorSamples& s, bool exclude_delay_splines,
                              std::vector<std::string>* names = nullptr) {
  auto q = convergence_quantities(model, s);
  if (exclude_delay_splines) {
    std::vector<Eigen::Index> keep;
    for (std::size_t j = 0; j < q.names.size(); ++j)
      if (q.names[j].rfind("beta[", 0) != 0) keep.push_back(static_cast<Eigen::Index>(j));
    for (auto& ch : q.chains) ch = ch(Eigen::all, keep).eval();
    std::vector<std::string> kept;
    for (auto j : keep) kept.push_back(q.names[static_cast<std::size_t>(j)]);
    q.names = std::move(kept);
  }
  if (names) *names = q.names;
  return mpsrf(q.chains);
}

inline int cmd_fit(const RunConfig& c, std::ostream& log) {
  const auto tri = load_triangle(c.data, c.model.delay_horizon);
  const Model model(c.model, tri);
  const auto samples = run_chains(model, c.sampler);
  const auto dir = detail::prepare_out(c, log);
  write_samples_directory(dir, samples, c.model, tri);
  log << "kept " << samples.n_kept() << " draws x " << samples.n_chains() << " chains\n";
  if (c.run.strict) {
    const auto m = gate_mpsrf(model, samples, c.run.exclude_delay_splines);
    log << "MPSRF " << m.value << "\n";
    if (!(m.value < kMpsrfGate)) return kExitGate;
  }
  return kExitOk;
}

inline int cmd_nowcast(const RunConfig& c, std::ostream& log) {
  const auto fit = read_samples_directory(c.run.fit);
  const Model model(fit.spec, fit.triangle);
  const auto s = nowcast(model, fit.samples, c.run.levels);
  const auto dir = detail::prepare_out(c, log);
  detail::write_file(dir / "nowcast.csv", [&](std::ostream& os) { s.write_csv(os); });
  return kExitOk;
}

inline int cmd_forecast(const RunConfig& c, std::ostream& log) {
  const auto fit = read_samples_directory(c.run.fit);
  const Model model(fit.spec, fit.triangle);
  const auto s = forecast(model, fit.samples, c.run.horizon, c.run.levels);
  const auto dir = detail::prepare_out(c, log);
  detail::write_file(dir / "forecast.csv", [&](std::ostream& os) { s.write_csv(os); });
  return kExitOk;
}

inline int cmd_check(const RunConfig& c, std::ostream& log) {
  const auto fit = read_samples_directory(c.run.fit);
  const Model model(fit.spec, fit.triangle);
  const auto max_draws = static_cast<std::size_t>(c.run.replicate_draws);
  const auto reps = replicate_insample(model, fit.samples, DelayReplication::kFitted, max_draws);
  const auto cov = ppc_covariance(reps, fit.triangle, c.run.include_remainder);
  const auto mv = ppc_mean_var_sorted(reps, fit.triangle);
  const auto coverage = interval_coverage(model, fit.samples, DelayReplication::kFitted, 0.95, max_draws);
  const auto dir = detail::prepare_out(c, log);
  detail::write_file(dir / "ppc_covariance.csv", [&](std::ostream& os) { cov.write_csv(os); });
  detail::write_file(dir / "ppc_sorted_totals.csv", [&](std::ostream& os) { mv.write_csv(os); });
  detail::write_file(dir / "coverage.csv", [&](std::ostream& os) { coverage.write_csv(os); });
  Json index;
  index["replicates"] = reps.size();
  index["covariance"] = {{"mean_bias_z", detail::finite_or_null_mean(cov.bias_z)},
                         {"mean_log_mse_z", detail::number_or_null(detail::finite_or_null_mean(cov.log_mse_z))},
                         {"mean_bias_p", detail::finite_or_null_mean(cov.bias_p)},
                         {"mean_log_mse_p", detail::number_or_null(detail::finite_or_null_mean(cov.log_mse_p))},
                         {"max_identity_gap", *std::max_element(cov.identity_gap.begin(), cov.identity_gap.end())},
                         {"include_remainder", cov.include_remainder}};
  index["mean_variance"] = {{"observed_mean", mv.observed_mean},
                            {"observed_var", mv.observed_var},
                            {"p_mean", mv.p_mean},
                            {"p_var", mv.p_var},
                            {"upper_tail_ratio", mv.upper_tail_ratio},
                            {"heavy_upper_tail", mv.heavy_upper_tail}};
  index["coverage"] = {{"overall", coverage.overall}, {"per_delay", coverage.per_delay}, {"cells", coverage.n_cells}};
  if (fit.spec.is_gdm_family()) {
    const auto multi = interval_coverage(model, fit.samples, DelayReplication::kMultinomial, 0.95, max_draws);
    detail::write_file(dir / "coverage_multinomial.csv", [&](std::ostream& os) { multi.write_csv(os); });
    index["coverage_multinomial"] = {{"overall", multi.overall}, {"per_delay", multi.per_delay}};
  }
  write_json_file(dir / "check.json", index);
  log << "z/y interval coverage " << coverage.overall << "\n";
  return kExitOk;
}

inline int cmd_diagnose(const RunConfig& c, std::ostream& log) {
  const auto fit = read_samples_directory(c.run.fit);
  const Model model(fit.spec, fit.triangle);
  std::vector<std::string> names;
  const auto m = gate_mpsrf(model, fit.samples, c.run.exclude_delay_splines, &names);
  const auto q = convergence_quantities(model, fit.samples);
  const auto dir = detail::prepare_out(c, log);
  Json ess = Json::object();
  detail::write_file(dir / "ess.csv", [&](std::ostream& os) {
    os << "quantity,ess,degenerate\n";
    for (std::size_t j = 0; j < q.names.size(); ++j) {
      std::vector<Eigen::VectorXd> chains;
      for (const auto& ch : q.chains) chains.emplace_back(ch.col(static_cast<Eigen::Index>(j)));
      const auto e = effective_sample_size(chains);
      os << q.names[j] << ',' << e.value << ',' << (e.degenerate ? 1 : 0) << '\n';
    }
  });
  Json out = {{"mpsrf", m.value},
              {"gate", kMpsrfGate},
              {"passed", m.value < kMpsrfGate},
              {"ridge_applied", m.ridge_applied},
              {"quantities", names},
              {"chains", m.m},
              {"draws_per_chain", m.n}};
  write_json_file(dir / "diagnostics.json", out);
  log << "MPSRF " << m.value << (m.value < kMpsrfGate ? " (< " : " (>= ") << kMpsrfGate << ")\n";
  return c.run.strict && !(m.value < kMpsrfGate) ? kExitGate : kExitOk;
}

inline int cmd_select_delay(const RunConfig& c, std::ostream& log) {
  DataSettings d = c.data;
  if ((d.format == "auto" ? sniff_format(d.path) : d.format) != "long")
    throw ConfigError("select-delay reads the long format (one column per raw delay)");
  CensoringSpec cs;
  const auto raw = load_raw_long(d, cs);
  const auto sel = select_delay_horizon(raw, c.run.threshold, c.run.quantile);
  const double probs[] = {0.2, 0.4, 0.6, 0.8};
  const auto q = cumulative_proportion_quantiles(raw, probs);
  const auto dir = detail::prepare_out(c, log);
  detail::write_file(dir / "cumulative_proportions.csv", [&](std::ostream& os) {
    os << "delay,q0.2,q0.4,q0.6,q0.8\n";
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
      os << r + 1;
      for (Eigen::Index k = 0; k < q.cols(); ++k) os << ',' << q(r, k);
      os << '\n';
    }
  });
  write_json_file(dir / "selection.json", {{"delay_horizon", sel.delay_horizon},
                                           {"reached", sel.reached},
                                           {"threshold", c.run.threshold},
                                           {"quantile", c.run.quantile}});
  log << "D = " << sel.delay_horizon << (sel.reached ? "" : " (threshold never reached; using maturity)") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian nowcasting of delayed-reporting counts"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration (comments allowed)");
    sub->add_option("--out", o.out, std::string("output directory; relative paths resolve under $") + kOutputRootEnv);
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "reporting data: long CSV (time_index,delay,count) or wide triangle CSV");
    sub->add_option("--format", o.format, "auto | long | wide");
    sub->add_option("--series", o.series, "series to use from a multi-series long CSV");
    sub->add_option("--present-day", o.present_day, "last time index with reports (long CSV)");
    sub->add_option("--maturity", o.maturity, "delay after which totals are final (long CSV)");
  };
  auto fit_dir = [&](CLI::App* sub) { sub->add_option("--fit", o.fit, "directory written by `fit`"); };
  auto levels = [&](CLI::App* sub) {
    sub->add_option("--levels", o.levels, "central interval levels")->delimiter(',');
  };

  auto* sim = app.add_subcommand("simulate", "simulate a synthetic reporting triangle with known truth");
  common(sim);
  sim->add_option("--seed", o.seed, "simulation seed");

  auto* fit = app.add_subcommand("fit", "run the MCMC sampler");
  common(fit);
  data_opts(fit);
  fit->add_option("--variant", o.variant, "GDM | GLM | GLM+ | GDM-UR");
  fit->add_option("--delay-horizon", o.delay_horizon, "modelled delays D");
  fit->add_option("--time-varying-delay", o.time_varying_delay, "delay splines beta_d(t) (true/false)");
  fit->add_option("--multinomial-limit", o.multinomial_limit, "GDM with phi -> infinity (true/false)");
  fit->add_option("--chains", o.chains);
  fit->add_option("--iterations", o.iterations);
  fit->add_option("--burn-in", o.burn_in, "defaults to half of --iterations when that flag is given");
  fit->add_option("--thin", o.thin);
  fit->add_option("--seed", o.seed, "sampler seed; every later draw derives from it");
  fit->add_option("--threads", o.threads, "chain-level threads (0: one per chain)");
  fit->add_flag("--strict", o.strict, "exit 3 when the MPSRF gate fails");
  fit->add_flag("--exclude-delay-splines", o.exclude_delay_splines, "leave beta_d(t) out of the MPSRF gate");

  auto* now = app.add_subcommand("nowcast", "predictive totals for partially observed rows");
  common(now);
  fit_dir(now);
  levels(now);

  auto* fc = app.add_subcommand("forecast", "predictive totals beyond the last row");
  common(fc);
  fit_dir(fc);
  levels(fc);
  fc->add_option("--horizon", o.horizon, "steps ahead");

  auto* chk = app.add_subcommand("check", "posterior predictive checks");
  common(chk);
  fit_dir(chk);
  chk->add_option("--replicate-draws", o.replicate_draws, "posterior draws used for replicates");
  chk->add_flag("--no-remainder", o.no_remainder, "drop the remainder cell from the covariance check");

  auto* diag = app.add_subcommand("diagnose", "MPSRF and effective sample sizes");
  common(diag);
  fit_dir(diag);
  diag->add_flag("--strict", o.strict, "exit 3 when MPSRF >= 1.05");
  diag->add_flag("--exclude-delay-splines", o.exclude_delay_splines, "leave beta_d(t) out of the MPSRF");

  auto* sel = app.add_subcommand("select-delay", "choose D from cumulative reporting proportions");
  common(sel);
  data_opts(sel);
  sel->add_option("--threshold", o.threshold, "required cumulative proportion");
  sel->add_option("--quantile", o.quantile, "quantile over rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    const RunConfig cfg = resolve(command, o);
    if (command == "simulate") return cmd_simulate(cfg, log);
    if (command == "fit") return cmd_fit(cfg, log);
    if (command == "nowcast") return cmd_nowcast(cfg, log);
    if (command == "forecast") return cmd_forecast(cfg, log);
    if (command == "check") return cmd_check(cfg, log);
    if (command == "diagnose") return cmd_diagnose(cfg, log);
    if (command == "select-delay") return cmd_select_delay(cfg, log);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace delaycast::cli
