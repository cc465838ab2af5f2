#pragma once

// Posterior predictive quantities: nowcasts, forecasts, in-sample replicates
// and the model checks built on them. Every function is a deterministic
// function of the samples and a seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "delaycast/distributions.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/mcmc.hpp"
#include "delaycast/model.hpp"
#include "delaycast/stats.hpp"

namespace delaycast {

enum class PredictionKind { kNowcast, kForecast, kReplicate };

inline std::string to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::kNowcast: return "nowcast";
    case PredictionKind::kForecast: return "forecast";
    case PredictionKind::kReplicate: return "replicate";
  }
  return "?";
}

struct PredictionSummary {
  PredictionKind kind = PredictionKind::kNowcast;
  std::vector<double> levels;
  std::vector<int> times;  // 1-based
  std::vector<double> mean, median;
  std::vector<std::vector<double>> lower, upper;  // [time][level]
  std::vector<bool> degenerate;
  LatentMatrix draws;  // draw x time

  std::size_t size() const { return times.size(); }

  void write_csv(std::ostream& os) const {
    os << "kind,time,mean,median";
    for (double l : levels) os << ",lower_" << l << ",upper_" << l;
    os << ",degenerate\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
      os << to_string(kind) << ',' << times[i] << ',' << mean[i] << ',' << median[i];
      for (std::size_t l = 0; l < levels.size(); ++l) os << ',' << lower[i][l] << ',' << upper[i][l];
      os << ',' << (degenerate[i] ? 1 : 0) << '\n';
    }
  }
};

inline void validate_levels(const std::vector<double>& levels) {
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw ConfigError("interval levels must lie in (0, 1)");
}

/// Equal-tailed type-1 quantile summaries of a draw matrix (draw x time).
inline PredictionSummary summarize_draws(PredictionKind kind, std::vector<int> times, LatentMatrix draws,
                                         const std::vector<double>& levels, std::vector<bool> degenerate = {}) {
  validate_levels(levels);
  PredictionSummary s;
  s.kind = kind;
  s.levels = levels;
  s.times = std::move(times);
  s.degenerate = degenerate.empty() ? std::vector<bool>(s.times.size(), false) : std::move(degenerate);
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    for (Eigen::Index i = 0; i < draws.rows(); ++i) col[static_cast<std::size_t>(i)] = static_cast<double>(draws(i, j));
    std::sort(col.begin(), col.end());
    s.mean.push_back(stats::mean(col));
    s.median.push_back(stats::quantile_sorted(col, 0.5));
    std::vector<double> lo, hi;
    for (double l : levels) {
      lo.push_back(stats::quantile_sorted(col, 0.5 * (1.0 - l)));
      hi.push_back(stats::quantile_sorted(col, 1.0 - 0.5 * (1.0 - l)));
    }
    s.lower.push_back(std::move(lo));
    s.upper.push_back(std::move(hi));
  }
  s.draws = std::move(draws);
  return s;
}

/// Calls fn(state, draw_index) for every kept draw, chains in order.
template <class Fn>
void for_each_draw(const Model& model, const PosteriorSamples& samples, Fn&& fn, std::size_t max_draws = 0) {
  const std::size_t total = samples.n_chains() * static_cast<std::size_t>(samples.n_kept());
  const std::size_t stride = max_draws > 0 && total > max_draws ? (total + max_draws - 1) / max_draws : 1;
  std::size_t global = 0, used = 0;
  for (std::size_t c = 0; c < samples.n_chains(); ++c) {
    const auto& d = samples.draws[c];
    const auto& lat = samples.latent_draws[c];
    for (Eigen::Index i = 0; i < d.rows(); ++i, ++global) {
      if (global % stride != 0) continue;
      const Eigen::VectorXd row = d.row(i).transpose();
      const std::vector<Count> latent(lat.row(i).data(), lat.row(i).data() + lat.cols());
      const ParameterState s =
          model.unpack(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), latent);
      fn(s, used++);
    }
  }
}

inline std::size_t n_draws_used(const PosteriorSamples& samples, std::size_t max_draws) {
  const std::size_t total = samples.n_chains() * static_cast<std::size_t>(samples.n_kept());
  const std::size_t stride = max_draws > 0 && total > max_draws ? (total + max_draws - 1) / max_draws : 1;
  return (total + stride - 1) / stride;
}

/// Stream for predictive draws, separate from the sampler's chain streams.
inline Rng predictive_rng(const PosteriorSamples& samples, std::uint64_t purpose) {
  return chain_rng(samples.config.seed ^ (0xa5a5a5a5ULL << 8), 1000 + purpose);
}

namespace detail {

template <class Urbg>
Count draw_cell(Urbg& rng, const Model& m, double log_mu, double theta) {
  const double mu = std::exp(log_mu);
  if (m.spec().poisson_limit) return sample_poisson(rng, mu);
  return sample_neg_binomial(rng, {mu, theta});
}

/// GLM+ latent log-means for a new row drawn from the MVN.
template <class Urbg>
Eigen::VectorXd draw_logmu(Urbg& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> chol(sigma);
  if (chol.info() != Eigen::Success) throw DomainError("GLM+ Sigma draw is not positive definite");
  return sample_mvn(rng, mean, chol);
}

}  // namespace detail

/// Predictive totals for every row of the triangle. GDM variants reuse the
/// latent y draws; GLM variants add NB draws of the unobserved cells to the
/// observed prefix.
inline PredictionSummary nowcast(const Model& model, const PosteriorSamples& samples,
                                 const std::vector<double>& levels = {0.5, 0.95}) {
  const auto& tri = model.triangle();
  const std::size_t T = tri.n_times();
  const std::size_t n = n_draws_used(samples, 0);
  LatentMatrix draws(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(T));
  std::vector<bool> degenerate(T);
  for (std::size_t t = 0; t < T; ++t) degenerate[t] = tri.fully_observed(t);
  Rng rng = predictive_rng(samples, 1);
  const bool gdm = model.spec().is_gdm_family();
  for_each_draw(model, samples, [&](const ParameterState& s, std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t t = 0; t < T; ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      if (tri.fully_observed(t)) {
        draws(ii, ti) = tri.observed_sum(t);
      } else if (gdm) {
        draws(ii, ti) = s.latent_y[t];
      } else {
        Count y = tri.observed_sum(t);
        for (std::size_t c = tri.observed_prefix(t); c < model.n_cells(); ++c) {
          const double lm = model.spec().variant == Variant::kGLMPlus
                                ? s.latent_logmu(ti, static_cast<Eigen::Index>(c))
                                : model.log_mu(s, t, c);
          y += detail::draw_cell(rng, model, lm, model.theta(s, c));
        }
        draws(ii, ti) = y;
      }
    }
  });
  std::vector<int> times(T);
  for (std::size_t t = 0; t < T; ++t) times[t] = static_cast<int>(t + 1);
  return summarize_draws(PredictionKind::kNowcast, std::move(times), std::move(draws), levels, std::move(degenerate));
}

/// Totals for times T+1..T+horizon with no observed cells: the trend spline
/// extends linearly, the seasonal spline cyclically.
inline PredictionSummary forecast(const Model& model, const PosteriorSamples& samples, int horizon,
                                  const std::vector<double>& levels = {0.5, 0.95}) {
  validate_levels(levels);
  if (horizon < 0) throw ConfigError("forecast horizon must be >= 0");
  const std::size_t T = model.n_times();
  if (static_cast<double>(T) + horizon > model.max_time())
    throw DomainError("forecast horizon " + std::to_string(horizon) + " exceeds the spline extrapolation range (" +
                      std::to_string(static_cast<long>(model.max_time() - static_cast<double>(T))) + ")");
  if (horizon == 0) {
    PredictionSummary s;
    s.kind = PredictionKind::kForecast;
    s.levels = levels;
    return s;
  }
  const std::size_t n = n_draws_used(samples, 0);
  LatentMatrix draws(static_cast<Eigen::Index>(n), horizon);
  Rng rng = predictive_rng(samples, 2);
  const auto& spec = model.spec();
  for_each_draw(model, samples, [&](const ParameterState& s, std::size_t i) {
    for (int h = 0; h < horizon; ++h) {
      const double time = static_cast<double>(T) + h + 1;
      const double ll = model.log_lambda_at(s, time);
      Count y = 0;
      if (spec.is_gdm_family()) {
        y = sample_neg_binomial(rng, {std::exp(ll), s.theta[0]});
        if (spec.variant == Variant::kGDMUR) y = sample_binomial(rng, y, model.reporting_rate_at(s, time));
      } else if (spec.variant == Variant::kGLM) {
        for (std::size_t c = 0; c < model.n_cells(); ++c)
          y += detail::draw_cell(rng, model, ll + model.delay_predictor_at(s, time, c), model.theta(s, c));
      } else {
        Eigen::VectorXd mean(static_cast<Eigen::Index>(model.n_cells()));
        for (std::size_t c = 0; c < model.n_cells(); ++c)
          mean[static_cast<Eigen::Index>(c)] = ll + model.delay_predictor_at(s, time, c);
        const Eigen::VectorXd lm = detail::draw_logmu(rng, mean, s.sigma);
        for (std::size_t c = 0; c < model.n_cells(); ++c)
          y += detail::draw_cell(rng, model, lm[static_cast<Eigen::Index>(c)], model.theta(s, c));
      }
      draws(static_cast<Eigen::Index>(i), h) = y;
    }
  });
  std::vector<int> times;
  for (int h = 0; h < horizon; ++h) times.push_back(static_cast<int>(T) + h + 1);
  return summarize_draws(PredictionKind::kForecast, std::move(times), std::move(draws), levels);
}

// ---------------------------------------------------------------------------
// In-sample replicates

enum class DelayReplication {
  kFitted,       // the fitted delay model
  kMultinomial,  // stick-breaking Binomial draws at nu (phi -> infinity)
};

struct ReplicateSet {
  std::vector<std::size_t> rows;  // fully observed rows (0-based)
  std::size_t n_cells = 0;
  std::vector<LatentMatrix> z;  // per replicate: rows x cells
  LatentMatrix y;               // replicate x rows

  std::size_t size() const { return z.size(); }
};

namespace detail {

template <class Urbg>
std::vector<Count> draw_delay_cells(Urbg& rng, const Model& m, const ParameterState& s, std::size_t t, Count y,
                                    DelayReplication mode) {
  const std::size_t k = m.n_delay_effects();
  Eigen::VectorXd nu(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) nu[static_cast<Eigen::Index>(c)] = m.nu(s, t, c);
  if (mode == DelayReplication::kMultinomial || !m.has_phi()) return sample_multinomial(rng, nu, y);
  GDParams gd;
  gd.alpha.resize(static_cast<Eigen::Index>(k));
  gd.beta.resize(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    const double phi = std::exp(m.log_phi(s, t, c));
    gd.alpha[ci] = nu[ci] * phi;
    gd.beta[ci] = (1.0 - nu[ci]) * phi;
  }
  return sample_gdm(rng, gd, y);
}

}  // namespace detail

/// One replicate triangle per kept draw over the fully observed rows:
/// GDM y ~ NB then z ~ GDM (x ~ NB, y ~ Binomial first for GDM-UR); GLM cells
/// from NB; GLM+ log-means redrawn from the MVN, then cells from NB.
inline ReplicateSet replicate_insample(const Model& model, const PosteriorSamples& samples,
                                       DelayReplication mode = DelayReplication::kFitted, std::size_t max_draws = 0) {
  const auto& tri = model.triangle();
  const auto& spec = model.spec();
  ReplicateSet rep;
  rep.rows = model.full_rows();
  rep.n_cells = model.n_cells();
  const std::size_t n = n_draws_used(samples, max_draws);
  const auto R = static_cast<Eigen::Index>(rep.rows.size()), K = static_cast<Eigen::Index>(rep.n_cells);
  rep.y.resize(static_cast<Eigen::Index>(n), R);
  rep.z.reserve(n);
  Rng rng = predictive_rng(samples, 3 + static_cast<std::uint64_t>(mode));
  (void)tri;
  for_each_draw(
      model, samples,
      [&](const ParameterState& s, std::size_t i) {
        LatentMatrix z(R, K);
        Eigen::MatrixXd means;
        if (spec.variant == Variant::kGLMPlus) means = model.glmplus_means(s);
        for (Eigen::Index r = 0; r < R; ++r) {
          const std::size_t t = rep.rows[static_cast<std::size_t>(r)];
          Count y = 0;
          if (spec.is_gdm_family()) {
            y = sample_neg_binomial(rng, {std::exp(model.log_lambda(s, t)), s.theta[0]});
            if (spec.variant == Variant::kGDMUR) y = sample_binomial(rng, y, model.reporting_rate(s, t));
            const auto cells = detail::draw_delay_cells(rng, model, s, t, y, mode);
            for (Eigen::Index c = 0; c < K; ++c) z(r, c) = cells[static_cast<std::size_t>(c)];
          } else {
            Eigen::VectorXd lm(K);
            if (spec.variant == Variant::kGLMPlus)
              lm = detail::draw_logmu(rng, means.row(static_cast<Eigen::Index>(t)).transpose(), s.sigma);
            else
              for (Eigen::Index c = 0; c < K; ++c) lm[c] = model.log_mu(s, t, static_cast<std::size_t>(c));
            for (Eigen::Index c = 0; c < K; ++c) {
              z(r, c) = detail::draw_cell(rng, model, lm[c], model.theta(s, static_cast<std::size_t>(c)));
              y += z(r, c);
            }
          }
          rep.y(static_cast<Eigen::Index>(i), r) = y;
        }
        rep.z.push_back(std::move(z));
      },
      max_draws);
  return rep;
}

// ---------------------------------------------------------------------------
// Checks

/// Sample covariance (n - 1) of the columns of x.
inline Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) return Eigen::MatrixXd::Zero(x.cols(), x.cols());
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

/// Relative gap between Var[sum_d z_d] and sum_{i,j} Cov[z_i, z_j] over rows.
inline double variance_identity_gap(const LatentMatrix& z) {
  const Eigen::MatrixXd zd = z.cast<double>();
  const Eigen::VectorXd y = zd.rowwise().sum();
  const double var_y = stats::variance(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  const double sum_cov = sample_covariance(zd).sum();
  const double scale = std::max({std::abs(var_y), std::abs(sum_cov), std::numeric_limits<double>::min()});
  return std::abs(var_y - sum_cov) / scale;
}

struct CovarianceCheck {
  std::vector<double> bias_z, log_mse_z, bias_p, log_mse_p;
  std::vector<double> identity_gap;
  Eigen::MatrixXd observed_cov_z, observed_cov_p;
  bool include_remainder = true;

  void write_csv(std::ostream& os) const {
    os << "replicate,bias_z,log_mse_z,bias_p,log_mse_p,identity_gap\n";
    for (std::size_t r = 0; r < bias_z.size(); ++r)
      os << r + 1 << ',' << bias_z[r] << ',' << log_mse_z[r] << ',' << bias_p[r] << ',' << log_mse_p[r] << ','
         << identity_gap[r] << '\n';
  }
};

namespace detail {

inline double log_or_sentinel(double mse) { return mse > 0.0 ? std::log(mse) : kNegInf; }

/// Counts (rows x cols) and proportions of rows with positive total.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> counts_and_props(const LatentMatrix& z, Eigen::Index cols) {
  const Eigen::MatrixXd zd = z.cast<double>();
  const Eigen::VectorXd y = zd.rowwise().sum();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] > 0) keep.push_back(i);
  Eigen::MatrixXd p(static_cast<Eigen::Index>(keep.size()), cols);
  for (std::size_t k = 0; k < keep.size(); ++k)
    p.row(static_cast<Eigen::Index>(k)) = zd.row(keep[k]).head(cols) / y[keep[k]];
  return {zd.leftCols(cols), p};
}

}  // namespace detail

/// Mean bias and log mean squared difference between replicate and observed
/// covariance matrices of z and of z / y over the fully observed rows.
inline CovarianceCheck ppc_covariance(const ReplicateSet& reps, const ReportingTriangle& tri,
                                      bool include_remainder = true) {
  if (reps.rows.size() < 2) throw DomainError("covariance check needs at least two fully observed rows");
  const auto K = static_cast<Eigen::Index>(reps.n_cells);
  const Eigen::Index cols = include_remainder ? K : K - 1;
  LatentMatrix obs(static_cast<Eigen::Index>(reps.rows.size()), K);
  for (std::size_t r = 0; r < reps.rows.size(); ++r)
    for (Eigen::Index c = 0; c < K; ++c)
      obs(static_cast<Eigen::Index>(r), c) = tri.cell(reps.rows[r], static_cast<std::size_t>(c));
  CovarianceCheck out;
  out.include_remainder = include_remainder;
  const auto [oz, op] = detail::counts_and_props(obs, cols);
  out.observed_cov_z = sample_covariance(oz);
  out.observed_cov_p = sample_covariance(op);
  for (const auto& z : reps.z) {
    const auto [rz, rp] = detail::counts_and_props(z, cols);
    const Eigen::MatrixXd dz = sample_covariance(rz) - out.observed_cov_z;
    const Eigen::MatrixXd dp = sample_covariance(rp) - out.observed_cov_p;
    out.bias_z.push_back(dz.mean());
    out.log_mse_z.push_back(detail::log_or_sentinel(dz.array().square().mean()));
    out.bias_p.push_back(dp.mean());
    out.log_mse_p.push_back(detail::log_or_sentinel(dp.array().square().mean()));
    out.identity_gap.push_back(variance_identity_gap(z));
  }
  return out;
}

struct MeanVarCheck {
  std::vector<double> mean_draws, var_draws;
  double observed_mean = 0.0, observed_var = 0.0;
  double p_mean = 0.0, p_var = 0.0;  // share of replicates at or above the observed statistic
  std::vector<double> observed_sorted, envelope_mean, envelope_lower, envelope_upper;
  double upper_tail_ratio = 1.0;  // replicate / observed over the top decile of ranks
  bool heavy_upper_tail = false;  // observed top decile mostly below the envelope

  void write_csv(std::ostream& os) const {
    os << "rank,observed,envelope_mean,envelope_lower,envelope_upper\n";
    for (std::size_t i = 0; i < observed_sorted.size(); ++i)
      os << i + 1 << ',' << observed_sorted[i] << ',' << envelope_mean[i] << ',' << envelope_lower[i] << ','
         << envelope_upper[i] << '\n';
  }
};

/// Sample mean and variance of replicate totals and the sorted-replicate
/// envelope against the sorted observed totals.
inline MeanVarCheck mean_var_sorted(const LatentMatrix& replicate_totals, const std::vector<double>& observed,
                                    double envelope_level = 0.95) {
  if (observed.empty() || replicate_totals.cols() != static_cast<Eigen::Index>(observed.size()))
    throw DomainError("replicate totals must match the observed rows");
  if (replicate_totals.rows() < 1) throw DomainError("no replicates");
  MeanVarCheck out;
  out.observed_mean = stats::mean(observed);
  out.observed_var = stats::variance(observed);
  out.observed_sorted = observed;
  std::sort(out.observed_sorted.begin(), out.observed_sorted.end());
  const std::size_t n = observed.size();
  const auto R = static_cast<std::size_t>(replicate_totals.rows());
  std::vector<std::vector<double>> by_rank(n, std::vector<double>(R));
  long ge_mean = 0, ge_var = 0;
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<double> v(n);
    for (std::size_t j = 0; j < n; ++j)
      v[j] = static_cast<double>(replicate_totals(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)));
    const double m = stats::mean(v), var = stats::variance(v);
    out.mean_draws.push_back(m);
    out.var_draws.push_back(var);
    ge_mean += m >= out.observed_mean ? 1 : 0;
    ge_var += var >= out.observed_var ? 1 : 0;
    std::sort(v.begin(), v.end());
    for (std::size_t j = 0; j < n; ++j) by_rank[j][r] = v[j];
  }
  out.p_mean = static_cast<double>(ge_mean) / static_cast<double>(R);
  out.p_var = static_cast<double>(ge_var) / static_cast<double>(R);
  const double a = 0.5 * (1.0 - envelope_level);
  for (auto& col : by_rank) {
    std::sort(col.begin(), col.end());
    out.envelope_mean.push_back(stats::mean(col));
    out.envelope_lower.push_back(stats::quantile_sorted(col, a));
    out.envelope_upper.push_back(stats::quantile_sorted(col, 1.0 - a));
  }
  // Envelopes are monotone by construction; enforce it against ties in quantiles.
  for (std::size_t j = 1; j < n; ++j) {
    out.envelope_lower[j] = std::max(out.envelope_lower[j], out.envelope_lower[j - 1]);
    out.envelope_upper[j] = std::max(out.envelope_upper[j], out.envelope_upper[j - 1]);
  }
  const std::size_t top = std::max<std::size_t>(1, n / 10);
  double rep_sum = 0.0, obs_sum = 0.0;
  std::size_t below = 0;
  for (std::size_t j = n - top; j < n; ++j) {
    rep_sum += out.envelope_mean[j];
    obs_sum += out.observed_sorted[j];
    below += out.observed_sorted[j] < out.envelope_lower[j] ? 1 : 0;
  }
  out.upper_tail_ratio = obs_sum > 0 ? rep_sum / obs_sum : kPosInf;
  out.heavy_upper_tail = 2 * below >= top;
  return out;
}

inline MeanVarCheck ppc_mean_var_sorted(const ReplicateSet& reps, const ReportingTriangle& tri) {
  std::vector<double> observed;
  for (auto t : reps.rows) observed.push_back(static_cast<double>(tri.observed_sum(t)));
  return mean_var_sorted(reps.y, observed);
}

struct CoverageReport {
  std::vector<double> per_delay;
  std::vector<long> cells_per_delay;
  double overall = 0.0;
  long n_cells = 0;
  double level = 0.95;

  void write_csv(std::ostream& os) const {
    os << "delay,coverage,cells\n";
    for (std::size_t d = 0; d < per_delay.size(); ++d)
      os << d + 1 << ',' << per_delay[d] << ',' << cells_per_delay[d] << '\n';
    os << "all," << overall << ',' << n_cells << '\n';
  }
};

/// Share of observations inside closed intervals.
inline double coverage_fraction(std::span<const double> observed, std::span<const double> lower,
                                std::span<const double> upper) {
  if (observed.empty()) throw DomainError("coverage over zero cells");
  if (lower.size() != observed.size() || upper.size() != observed.size())
    throw DomainError("coverage: length mismatch");
  std::size_t in = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) in += lower[i] <= observed[i] && observed[i] <= upper[i] ? 1 : 0;
  return static_cast<double>(in) / static_cast<double>(observed.size());
}

/// Coverage of central predictive intervals for z_td / y_t over the fully
/// observed rows with y_t > 0. GDM variants replicate the delay cells given the
/// observed y_t; with DelayReplication::kMultinomial the cells come from the
/// stick-breaking Multinomial at the fitted nu. GLM variants replicate all
/// cells and use the replicate total.
inline CoverageReport interval_coverage(const Model& model, const PosteriorSamples& samples,
                                        DelayReplication mode = DelayReplication::kFitted, double level = 0.95,
                                        std::size_t max_draws = 0) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("coverage level must lie in (0, 1)");
  const auto& tri = model.triangle();
  const auto& spec = model.spec();
  std::vector<std::size_t> rows;
  for (auto t : model.full_rows())
    if (tri.observed_sum(t) > 0) rows.push_back(t);
  if (rows.empty()) throw DomainError("coverage needs a fully observed row with a positive total");
  const std::size_t K = model.n_cells(), n = n_draws_used(samples, max_draws);
  std::vector<std::vector<float>> props(rows.size() * K, std::vector<float>());
  for (auto& v : props) v.reserve(n);
  Rng rng = predictive_rng(samples, 10 + static_cast<std::uint64_t>(mode));
  for_each_draw(
      model, samples,
      [&](const ParameterState& s, std::size_t) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const std::size_t t = rows[r];
          std::vector<Count> cells;
          double denom = 0.0;
          if (spec.is_gdm_family()) {
            cells = detail::draw_delay_cells(rng, model, s, t, tri.observed_sum(t), mode);
            denom = static_cast<double>(tri.observed_sum(t));
          } else {
            Eigen::VectorXd lm(static_cast<Eigen::Index>(K));
            if (spec.variant == Variant::kGLMPlus)
              lm = s.latent_logmu.row(static_cast<Eigen::Index>(t)).transpose();
            else
              for (std::size_t c = 0; c < K; ++c) lm[static_cast<Eigen::Index>(c)] = model.log_mu(s, t, c);
            for (std::size_t c = 0; c < K; ++c) {
              cells.push_back(detail::draw_cell(rng, model, lm[static_cast<Eigen::Index>(c)], model.theta(s, c)));
              denom += static_cast<double>(cells.back());
            }
          }
          for (std::size_t c = 0; c < K; ++c)
            props[r * K + c].push_back(denom > 0 ? static_cast<float>(static_cast<double>(cells[c]) / denom) : 0.0f);
        }
      },
      max_draws);

  CoverageReport out;
  out.level = level;
  out.per_delay.assign(K, 0.0);
  out.cells_per_delay.assign(K, 0);
  long inside = 0;
  const double a = 0.5 * (1.0 - level);
  std::vector<double> col;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t t = rows[r];
    const double y = static_cast<double>(tri.observed_sum(t));
    for (std::size_t c = 0; c < K; ++c) {
      auto& v = props[r * K + c];
      col.assign(v.begin(), v.end());
      std::sort(col.begin(), col.end());
      const auto obs = static_cast<float>(static_cast<double>(tri.cell(t, c)) / y);
      const bool in = static_cast<float>(stats::quantile_sorted(col, a)) <= obs &&
                      obs <= static_cast<float>(stats::quantile_sorted(col, 1.0 - a));
      out.per_delay[c] += in ? 1.0 : 0.0;
      out.cells_per_delay[c] += 1;
      inside += in ? 1 : 0;
    }
  }
  for (std::size_t c = 0; c < K; ++c) out.per_delay[c] /= static_cast<double>(out.cells_per_delay[c]);
  out.n_cells = static_cast<long>(rows.size() * K);
  out.overall = static_cast<double>(inside) / static_cast<double>(out.n_cells);
  return out;
}

}  // namespace delaycast
