#pragma once

// Synthetic delayed-reporting data with known truth.
//
// log lambda_t = iota + a * sin(2 pi t / period) + slope * t, with the
// seasonal and trend parts centred over t = 1..T so that iota is the mean of
// log lambda. Totals follow y_t ~ NB(lambda_t, theta) (or x_t ~ NB and
// y_t ~ Binomial(x_t, pi) with under-reporting), delay cells follow the GDM
// with constant stick-breaking fractions, and the remainder is spread over
// raw delays D+1..maturity with geometric weights.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <atomic>
#include <vector>

#include <json.hpp>

#include "delaycast/distributions.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/mcmc.hpp"
#include "delaycast/model.hpp"
#include "delaycast/stats.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

/// Default cell proportions for the desk scenario (D = 8 plus remainder).
inline std::vector<double> default_delay_proportions(int delay_horizon) {
  if (delay_horizon == 8) return {0.30, 0.22, 0.14, 0.09, 0.07, 0.05, 0.04, 0.03, 0.06};
  std::vector<double> p(static_cast<std::size_t>(delay_horizon) + 1);
  double left = 1.0;
  for (auto& v : p) {
    v = 0.35 * left;
    left -= v;
  }
  p.back() += left;
  return p;
}

/// Stick-breaking fractions nu_d = p_d / (1 - sum_{i<d} p_i).
inline std::vector<double> stick_breaking_fractions(const std::vector<double>& proportions) {
  std::vector<double> nu;
  double left = 1.0;
  for (std::size_t d = 0; d + 1 < proportions.size(); ++d) {
    nu.push_back(proportions[d] / left);
    left -= proportions[d];
  }
  return nu;
}

struct ScenarioConfig {
  std::size_t n_times = 120;
  int delay_horizon = 8;
  int maturity = 26;
  int present_day = 114;
  double iota = std::log(100.0);
  double seasonal_amplitude = 0.5;
  double season_period = 52.0;
  double trend_slope = 0.004;
  std::vector<double> psi;  // logit nu_d; empty selects the default proportions
  std::vector<double> phi;  // per delay; empty selects 20 for every delay
  double theta = 15.0;
  bool multinomial = false;  // phi -> infinity
  std::optional<double> reporting_rate;
  double tail_decay = 0.6;
  std::uint64_t seed = 1;
  std::string series_id;

  std::vector<double> resolved_psi() const {
    if (!psi.empty()) return psi;
    std::vector<double> out;
    for (double v : stick_breaking_fractions(default_delay_proportions(delay_horizon))) out.push_back(logit(v));
    return out;
  }
  std::vector<double> resolved_phi() const {
    if (!phi.empty()) return phi;
    return std::vector<double>(static_cast<std::size_t>(delay_horizon), 20.0);
  }

  void validate() const {
    if (n_times < 1) throw ConfigError("scenario needs at least one time point");
    if (delay_horizon < 1 || maturity < delay_horizon) throw ConfigError("need 1 <= delay_horizon <= maturity");
    if (present_day < 1) throw ConfigError("present_day must be >= 1");
    if (!(theta > 0) || !(season_period > 0) || !(tail_decay > 0 && tail_decay < 1))
      throw ConfigError("theta, season_period must be positive and tail_decay in (0, 1)");
    if (resolved_psi().size() != static_cast<std::size_t>(delay_horizon) ||
        resolved_phi().size() != static_cast<std::size_t>(delay_horizon))
      throw ConfigError("psi and phi need one entry per modelled delay");
    for (double v : resolved_phi())
      if (!(v > 0)) throw ConfigError("phi must be positive");
    if (reporting_rate && !(*reporting_rate > 0.0 && *reporting_rate <= 1.0))
      throw ConfigError("reporting_rate must lie in (0, 1]");
  }
};

struct Truth {
  std::vector<double> log_lambda;
  std::vector<Count> x;  // equals y without under-reporting
  std::vector<Count> y;
  std::vector<std::vector<Count>> z;  // collapsed cells, uncensored
  std::vector<double> nu;
  std::vector<double> phi;
  double iota = 0.0;
  double theta = 0.0;
  std::optional<double> reporting_rate;
};

struct SimulatedDataset {
  ReportingTriangle raw;        // censored, maturity columns
  ReportingTriangle collapsed;  // censored, D + 1 columns
  Truth truth;
  CensoringSpec censoring;
};

inline double scenario_log_lambda_offset(const ScenarioConfig& sc, std::size_t t1) {
  const double t = static_cast<double>(t1);
  return sc.seasonal_amplitude * std::sin(2.0 * std::numbers::pi * t / sc.season_period) + sc.trend_slope * t;
}

inline SimulatedDataset simulate_dataset(const ScenarioConfig& sc) {
  sc.validate();
  Rng rng = chain_rng(sc.seed, 0);
  const std::size_t T = sc.n_times, D = static_cast<std::size_t>(sc.delay_horizon),
                    M = static_cast<std::size_t>(sc.maturity);
  SimulatedDataset out;
  Truth& tr = out.truth;
  tr.iota = sc.iota;
  tr.theta = sc.theta;
  tr.phi = sc.resolved_phi();
  tr.reporting_rate = sc.reporting_rate;
  const auto psi = sc.resolved_psi();
  for (double v : psi) tr.nu.push_back(inv_logit(v));

  double mean_offset = 0.0;
  for (std::size_t t = 1; t <= T; ++t) mean_offset += scenario_log_lambda_offset(sc, t);
  mean_offset /= static_cast<double>(T);
  for (std::size_t t = 1; t <= T; ++t) tr.log_lambda.push_back(sc.iota + scenario_log_lambda_offset(sc, t) - mean_offset);

  GDParams gd;
  gd.alpha.resize(static_cast<Eigen::Index>(D));
  gd.beta.resize(static_cast<Eigen::Index>(D));
  Eigen::VectorXd nu(static_cast<Eigen::Index>(D));
  for (std::size_t d = 0; d < D; ++d) {
    const auto di = static_cast<Eigen::Index>(d);
    nu[di] = tr.nu[d];
    gd.alpha[di] = tr.nu[d] * tr.phi[d];
    gd.beta[di] = (1.0 - tr.nu[d]) * tr.phi[d];
  }
  // Spread of the remainder over raw delays D+1..M.
  Eigen::VectorXd tail_nu(static_cast<Eigen::Index>(M - D > 0 ? M - D - 1 : 0));
  {
    std::vector<double> w(M - D);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::pow(sc.tail_decay, static_cast<double>(i)));
    for (auto& v : w) v /= s;
    const auto f = stick_breaking_fractions(w);
    for (std::size_t i = 0; i < f.size(); ++i) tail_nu[static_cast<Eigen::Index>(i)] = std::clamp(f[i], 0.0, 1.0);
  }

  std::vector<Count> raw_cells(T * M, 0);
  for (std::size_t t = 0; t < T; ++t) {
    const Count total = sample_neg_binomial(rng, {std::exp(tr.log_lambda[t]), sc.theta});
    const Count y = sc.reporting_rate ? sample_binomial(rng, total, *sc.reporting_rate) : total;
    tr.x.push_back(total);
    tr.y.push_back(y);
    auto z = sc.multinomial ? sample_multinomial(rng, nu, y) : sample_gdm(rng, gd, y);
    tr.z.push_back(z);
    for (std::size_t d = 0; d < D; ++d) raw_cells[t * M + d] = z[d];
    const auto tail = M > D + 1 ? sample_multinomial(rng, tail_nu, z[D]) : std::vector<Count>{z[D]};
    for (std::size_t i = 0; i < tail.size(); ++i) raw_cells[t * M + D + i] = tail[i];
  }
  out.censoring = {sc.present_day, sc.delay_horizon, sc.maturity};
  const auto raw_last = raw_last_delays(M);
  out.raw = apply_staircase(T, std::move(raw_cells), raw_last, sc.present_day, sc.series_id);
  out.collapsed = collapse_remainder(out.raw, out.censoring);
  return out;
}

inline nlohmann::json truth_to_json(const Truth& tr) {
  nlohmann::json j;
  j["iota"] = tr.iota;
  j["theta"] = tr.theta;
  j["phi"] = tr.phi;
  j["nu"] = tr.nu;
  j["log_lambda"] = tr.log_lambda;
  j["x"] = tr.x;
  j["y"] = tr.y;
  j["z"] = tr.z;
  if (tr.reporting_rate) j["reporting_rate"] = *tr.reporting_rate;
  return j;
}

// ---------------------------------------------------------------------------
// Recovery study

struct RecoveryConfig {
  ModelSpec spec;
  SamplerConfig sampler;
  double level = 0.95;
  int threads = 1;  // replicate-level workers
};

struct RecoveryRow {
  int rep = 0;
  std::string parameter;
  double truth = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool covered = false;
};

struct RecoveryTable {
  std::vector<RecoveryRow> rows;
  long nowcast_rows = 0;
  long nowcast_covered = 0;

  double parameter_coverage() const {
    if (rows.empty()) return 0.0;
    long c = 0;
    for (const auto& r : rows) c += r.covered ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(rows.size());
  }
  double nowcast_coverage() const {
    return nowcast_rows > 0 ? static_cast<double>(nowcast_covered) / static_cast<double>(nowcast_rows) : 0.0;
  }
  void write_csv(std::ostream& os) const {
    os << "rep,parameter,truth,lower,upper,covered\n";
    for (const auto& r : rows)
      os << r.rep << ',' << r.parameter << ',' << r.truth << ',' << r.lower << ',' << r.upper << ','
         << (r.covered ? 1 : 0) << '\n';
  }
};

/// Central interval of a pooled sample using type-1 quantiles.
inline std::pair<double, double> central_interval(std::vector<double> draws, double level) {
  std::sort(draws.begin(), draws.end());
  const double a = 0.5 * (1.0 - level);
  return {stats::quantile_sorted(draws, a), stats::quantile_sorted(draws, 1.0 - a)};
}

struct RecoveryRep {
  std::vector<RecoveryRow> rows;
  long nowcast_rows = 0, nowcast_covered = 0;
};

inline RecoveryRep recovery_replicate(const ScenarioConfig& base, const RecoveryConfig& fit, int rep) {
  ScenarioConfig sc = base;
  sc.seed = base.seed * 1000003ULL + static_cast<std::uint64_t>(rep) + 1;
  const auto data = simulate_dataset(sc);
  ModelSpec spec = fit.spec;
  spec.delay_horizon = sc.delay_horizon;
  SamplerConfig cfg = fit.sampler;
  cfg.seed = sc.seed ^ 0x5bd1e995ULL;
  const Model model(spec, data.collapsed);
  const auto samples = run_chains(model, cfg);

  RecoveryRep out;
  auto check = [&](const std::string& label, double truth) {
    const auto [lo, hi] = central_interval(samples.pooled(label), fit.level);
    out.rows.push_back({rep, label, truth, lo, hi, lo <= truth && truth <= hi});
  };
  check("iota", data.truth.iota);
  if (spec.is_gdm_family()) check("theta[1]", data.truth.theta);
  if (model.has_phi())
    for (std::size_t d = 0; d < data.truth.phi.size(); ++d) check("phi[" + std::to_string(d + 1) + "]", data.truth.phi[d]);
  if (spec.is_gdm_family()) {
    for (auto t : model.latent_rows()) {
      if (data.collapsed.observed_prefix(t) == 0) continue;
      const auto [lo, hi] = central_interval(samples.pooled_latent("y[" + std::to_string(t + 1) + "]"), fit.level);
      const auto truth = static_cast<double>(data.truth.y[t]);
      ++out.nowcast_rows;
      if (lo <= truth && truth <= hi) ++out.nowcast_covered;
    }
  }
  return out;
}

/// simulate -> fit -> check, n_reps times. Replicates run on `fit.threads`
/// workers; results are merged in replicate order.
inline RecoveryTable recovery_study(const ScenarioConfig& sc, const RecoveryConfig& fit, int n_reps) {
  RecoveryTable table;
  if (n_reps <= 0) return table;
  std::vector<RecoveryRep> reps(static_cast<std::size_t>(n_reps));
  std::vector<std::exception_ptr> errors(reps.size());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < n_reps; r = next++) {
      try {
        reps[static_cast<std::size_t>(r)] = recovery_replicate(sc, fit, r);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min(fit.threads, n_reps));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& r : reps) {
    table.rows.insert(table.rows.end(), r.rows.begin(), r.rows.end());
    table.nowcast_rows += r.nowcast_rows;
    table.nowcast_covered += r.nowcast_covered;
  }
  return table;
}

}  // namespace delaycast
