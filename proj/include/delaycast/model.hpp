#pragma once

// Model variants for delayed counts:
//   GDM     y_t ~ NB(lambda_t, theta), z_t | y_t ~ GDM(nu_t, phi)
//   GLM     z_td ~ NB(mu_td, theta_d), log mu_td = log lambda_t + psi_d + beta_d(t)
//   GLMPlus log mu_t ~ MVN(log lambda_t + psi + beta(t), Sigma), z_td ~ NB(mu_td, theta_d)
//   GDM_UR  x_t ~ NB(lambda_t, theta), y_t | x_t ~ Binomial(x_t, pi_t), z_t | y_t ~ GDM
// with log lambda_t = iota + alpha(t) + eta(t) (trend spline plus cyclic
// seasonal spline) and logit nu_td = psi_d + beta_d(t).
//
// Unobserved delay cells of a GDM row are integrated out: only the observed
// prefix of the conditional Beta-Binomial chain enters the likelihood.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "delaycast/distributions.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/splines.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

enum class Variant { kGDM, kGLM, kGLMPlus, kGDMUR };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kGDM: return "GDM";
    case Variant::kGLM: return "GLM";
    case Variant::kGLMPlus: return "GLM+";
    case Variant::kGDMUR: return "GDM-UR";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "GDM") return Variant::kGDM;
  if (s == "GLM") return Variant::kGLM;
  if (s == "GLM+" || s == "GLMPlus") return Variant::kGLMPlus;
  if (s == "GDM-UR" || s == "GDM_UR") return Variant::kGDMUR;
  throw ConfigError("unknown model variant '" + s + "'");
}

struct ModelSpec {
  Variant variant = Variant::kGDM;
  int delay_horizon = 8;

  // Basis dimensions before centering.
  int alpha_basis = 10;
  int eta_basis = 8;
  int beta_basis = 6;
  int dispersion_basis = 6;
  int reporting_basis = 6;
  double season_period = 52.0;
  int max_forecast_horizon = 52;

  bool time_varying_delay = true;   // delay splines beta_d(t)
  bool dispersion_spline = false;   // log phi_td = log phi_d + spline_d(t)
  bool multinomial_limit = false;   // phi -> infinity (GDM, GDM-UR)
  bool poisson_limit = false;       // theta_d -> infinity (GLM, GLM+)
  bool reporting_spline = false;    // logit pi_t = intercept + spline(t) (GDM-UR)
  std::optional<double> fixed_reporting_rate;

  PriorSpec iota_prior = PriorSpec::normal(0.0, 10.0);
  double psi_prior_sd = 10.0;
  PriorSpec theta_prior = PriorSpec::exponential(0.01);
  PriorSpec phi_prior = PriorSpec::log_normal(2.0, 2.0);
  PriorSpec sigma_alpha_prior = PriorSpec::half_normal(1.0);
  PriorSpec sigma_eta_prior = PriorSpec::half_normal(1.0);
  PriorSpec sigma_beta_prior = PriorSpec::half_normal(std::sqrt(2.0));
  PriorSpec sigma_dispersion_prior = PriorSpec::half_normal(1.0);
  PriorSpec sigma_reporting_prior = PriorSpec::half_normal(1.0);
  std::optional<PriorSpec> reporting_intercept_prior;
  double null_space_sd = 10.0;
  double iw_df = 0.0;  // 0 selects D + 2

  /// Largest prior sd (logit scale) that counts as informative for the reporting rate.
  static constexpr double kInformativeReportingSd = 1.0;

  std::size_t n_cells() const { return static_cast<std::size_t>(delay_horizon) + 1; }
  bool is_gdm_family() const { return variant == Variant::kGDM || variant == Variant::kGDMUR; }
  /// Delay effects: D stick-breaking fractions (GDM) or D + 1 cell means (GLM).
  std::size_t n_delay_effects() const { return is_gdm_family() ? n_cells() - 1 : n_cells(); }
  double effective_iw_df() const { return iw_df > 0 ? iw_df : delay_horizon + 2.0; }

  /// Prior mean of psi_d: equal expected proportions per delay for the GDM
  /// stick-breaking fractions, zero for GLM log-means.
  double psi_prior_mean(std::size_t c) const {
    if (!is_gdm_family()) return 0.0;
    return logit(1.0 / static_cast<double>(delay_horizon + 1 - static_cast<int>(c)));
  }

  void validate() const {
    if (delay_horizon < 1) throw ConfigError("delay_horizon must be >= 1");
    if (alpha_basis < 3 || eta_basis < 3 || beta_basis < 3 || dispersion_basis < 3 || reporting_basis < 3)
      throw ConfigError("spline bases need at least 3 functions");
    if (!(season_period > 0)) throw ConfigError("season_period must be positive");
    if (max_forecast_horizon < 0) throw ConfigError("max_forecast_horizon must be >= 0");
    if (psi_prior_sd <= 0 || null_space_sd <= 0) throw ConfigError("prior scales must be positive");
    if (variant == Variant::kGDMUR) {
      if (fixed_reporting_rate) {
        if (!(*fixed_reporting_rate > 0.0 && *fixed_reporting_rate <= 1.0))
          throw ConfigError("fixed_reporting_rate must lie in (0, 1]");
      } else if (!reporting_intercept_prior || reporting_intercept_prior->kind != PriorKind::kNormal ||
                 !(reporting_intercept_prior->b <= kInformativeReportingSd)) {
        throw ConfigError(
            "GDM-UR is not identifiable without an informative reporting-rate prior: set "
            "reporting_intercept_prior to a Normal with sd <= 1 or fix the reporting rate");
      }
    } else if (fixed_reporting_rate || reporting_spline) {
      throw ConfigError("reporting-rate settings apply to GDM-UR only");
    }
    if (multinomial_limit && !is_gdm_family()) throw ConfigError("multinomial_limit applies to GDM variants only");
    if (poisson_limit && is_gdm_family()) throw ConfigError("poisson_limit applies to GLM variants only");
    if (dispersion_spline && (!is_gdm_family() || multinomial_limit))
      throw ConfigError("dispersion_spline needs a GDM variant with finite dispersion");
  }
};

struct ParameterState {
  double iota = 0.0;
  Eigen::VectorXd psi;
  Eigen::VectorXd alpha;
  double sigma_alpha = 1.0;
  Eigen::VectorXd eta;
  double sigma_eta = 1.0;
  std::vector<Eigen::VectorXd> beta;
  Eigen::VectorXd sigma_beta;
  Eigen::VectorXd theta;  // one entry (GDM family) or one per cell (GLM family)
  Eigen::VectorXd phi;    // GDM dispersion per delay
  std::vector<Eigen::VectorXd> disp;
  Eigen::VectorXd sigma_disp;
  /// Totals for every row; fully observed rows hold the observed y.
  std::vector<Count> latent_y;
  std::vector<Count> latent_x;
  Eigen::MatrixXd latent_logmu;  // rows x cells (GLM+)
  Eigen::MatrixXd sigma;         // cells x cells (GLM+)
  double pi_intercept = 0.0;
  Eigen::VectorXd pi_coefs;
  double sigma_pi = 1.0;
};

/// Flat naming of the continuous parameters. Labels look like "psi[3]" and
/// group into blocks by the text before '['.
struct ParameterLayout {
  std::vector<std::string> labels;
  std::vector<std::string> latent_labels;
  std::vector<std::size_t> latent_y_rows;  // rows whose total is latent
  bool has_latent_x = false;
};

class Model {
 public:
  Model(ModelSpec spec, ReportingTriangle tri) : spec_(std::move(spec)), tri_(std::move(tri)) {
    spec_.validate();
    if (tri_.n_columns() != spec_.n_cells())
      throw ConfigError("triangle has " + std::to_string(tri_.n_columns()) + " delay columns; model expects D + 1 = " +
                        std::to_string(spec_.n_cells()));
    if (tri_.n_times() < static_cast<std::size_t>(spec_.alpha_basis))
      throw ConfigError("too few time points for the trend basis");
    build_bases();
    index_cells();
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ReportingTriangle& triangle() const noexcept { return tri_; }
  std::size_t n_times() const noexcept { return tri_.n_times(); }
  std::size_t n_cells() const noexcept { return spec_.n_cells(); }
  std::size_t n_delay_effects() const noexcept { return spec_.n_delay_effects(); }
  const SplineBasis& alpha_basis() const noexcept { return alpha_basis_; }
  const SplineBasis& eta_basis() const noexcept { return eta_basis_; }
  const SplineBasis& beta_basis() const noexcept { return beta_basis_; }
  const SplineBasis& dispersion_basis() const noexcept { return disp_basis_; }
  const SplineBasis& reporting_basis() const noexcept { return report_basis_; }
  const SplinePrior& alpha_prior() const noexcept { return alpha_prior_; }
  const SplinePrior& eta_prior() const noexcept { return eta_prior_; }
  const SplinePrior& beta_prior() const noexcept { return beta_prior_; }
  const SplinePrior& dispersion_prior() const noexcept { return disp_prior_; }
  const SplinePrior& reporting_prior() const noexcept { return report_prior_; }
  bool has_delay_splines() const noexcept { return spec_.time_varying_delay; }
  bool has_phi() const noexcept { return spec_.is_gdm_family() && !spec_.multinomial_limit; }
  std::size_t n_theta() const noexcept { return spec_.is_gdm_family() ? 1 : n_cells(); }
  double season_period() const noexcept { return spec_.season_period; }
  /// Last time index that splines can be evaluated at.
  double max_time() const noexcept { return alpha_basis_.extrapolation_range().second; }

  /// Rows whose total y is a latent variable (not fully observed).
  const std::vector<std::size_t>& latent_rows() const noexcept { return latent_rows_; }
  /// Rows with every delay cell observed.
  const std::vector<std::size_t>& full_rows() const noexcept { return full_rows_; }

  // -------------------------------------------------------------------------
  // Linear predictors (t is a 0-based row, time index t + 1)

  double log_lambda(const ParameterState& s, std::size_t t) const {
    return s.iota + alpha_basis_.design().row(static_cast<Eigen::Index>(t)).dot(s.alpha) +
           eta_basis_.design().row(static_cast<Eigen::Index>(t)).dot(s.eta);
  }

  /// log lambda at an arbitrary time index (1-based), extending the trend
  /// linearly and the season cyclically.
  double log_lambda_at(const ParameterState& s, double time) const {
    if (!alpha_basis_.in_range(time)) throw DomainError("time outside the trend spline's extrapolation range");
    return s.iota + alpha_basis_.evaluate(time).dot(s.alpha) + eta_basis_.evaluate(time).dot(s.eta);
  }

  Eigen::VectorXd log_lambda_vector(const ParameterState& s) const {
    Eigen::VectorXd v = alpha_basis_.design() * s.alpha + eta_basis_.design() * s.eta;
    v.array() += s.iota;
    return v;
  }

  /// Delay level psi_d + beta_d(t): logit of nu (GDM) or the log-mean offset (GLM).
  double delay_predictor(const ParameterState& s, std::size_t t, std::size_t c) const {
    double v = s.psi[static_cast<Eigen::Index>(c)];
    if (has_delay_splines()) v += beta_basis_.design().row(static_cast<Eigen::Index>(t)).dot(s.beta[c]);
    return v;
  }

  double delay_predictor_at(const ParameterState& s, double time, std::size_t c) const {
    double v = s.psi[static_cast<Eigen::Index>(c)];
    if (has_delay_splines()) v += beta_basis_.evaluate(time).dot(s.beta[c]);
    return v;
  }

  Eigen::VectorXd delay_predictor_vector(const ParameterState& s, std::size_t c) const {
    if (!has_delay_splines())
      return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_times()), s.psi[static_cast<Eigen::Index>(c)]);
    Eigen::VectorXd v = beta_basis_.design() * s.beta[c];
    v.array() += s.psi[static_cast<Eigen::Index>(c)];
    return v;
  }

  double nu(const ParameterState& s, std::size_t t, std::size_t c) const {
    return inv_logit(delay_predictor(s, t, c));
  }

  double log_phi(const ParameterState& s, std::size_t t, std::size_t c) const {
    double v = std::log(s.phi[static_cast<Eigen::Index>(c)]);
    if (spec_.dispersion_spline) v += disp_basis_.design().row(static_cast<Eigen::Index>(t)).dot(s.disp[c]);
    return v;
  }

  Eigen::VectorXd log_phi_vector(const ParameterState& s, std::size_t c) const {
    const double base = std::log(s.phi[static_cast<Eigen::Index>(c)]);
    if (!spec_.dispersion_spline) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_times()), base);
    Eigen::VectorXd v = disp_basis_.design() * s.disp[c];
    v.array() += base;
    return v;
  }

  /// GLM cell log-mean log lambda_t + psi_d + beta_d(t).
  double log_mu(const ParameterState& s, std::size_t t, std::size_t c) const {
    return log_lambda(s, t) + delay_predictor(s, t, c);
  }

  double reporting_logit(const ParameterState& s, std::size_t t) const {
    if (spec_.fixed_reporting_rate) return logit(*spec_.fixed_reporting_rate);
    double v = s.pi_intercept;
    if (spec_.reporting_spline) v += report_basis_.design().row(static_cast<Eigen::Index>(t)).dot(s.pi_coefs);
    return v;
  }

  double reporting_rate(const ParameterState& s, std::size_t t) const {
    if (spec_.fixed_reporting_rate) return *spec_.fixed_reporting_rate;
    return inv_logit(reporting_logit(s, t));
  }

  double reporting_rate_at(const ParameterState& s, double time) const {
    if (spec_.fixed_reporting_rate) return *spec_.fixed_reporting_rate;
    double v = s.pi_intercept;
    if (spec_.reporting_spline) v += report_basis_.evaluate(time).dot(s.pi_coefs);
    return inv_logit(v);
  }

  /// theta for the total count (GDM family) or for cell c (GLM family).
  double theta(const ParameterState& s, std::size_t c = 0) const {
    return s.theta[static_cast<Eigen::Index>(spec_.is_gdm_family() ? 0 : c)];
  }

  // -------------------------------------------------------------------------
  // Likelihood pieces

  /// Log-pmf of one conditional delay cell given its remaining count n.
  double delay_cell_term(Count z, Count n, double eta, double log_phi_v, double log_choose_nz) const {
    const auto zd = static_cast<double>(z), nd = static_cast<double>(n);
    if (spec_.multinomial_limit) {
      // log nu = -log1p(exp(-eta)), log(1 - nu) = -log1p(exp(eta))
      return log_choose_nz - zd * log1pexp(-eta) - (nd - zd) * log1pexp(eta);
    }
    const double phi = std::exp(log_phi_v);
    const double nu_v = inv_logit(eta);
    return log_choose_nz + log_rising(nu_v * phi, zd) + log_rising((1.0 - nu_v) * phi, nd - zd) -
           log_rising(phi, nd);
  }

  /// NB (or Poisson limit) log-pmf of a GLM cell with log-mean log_mu.
  double glm_cell_term(Count z, double log_mu_v, double th, double lgamma_z1) const {
    const auto zd = static_cast<double>(z);
    const double mu = std::exp(log_mu_v);
    if (spec_.poisson_limit) return zd * log_mu_v - mu - lgamma_z1;
    return log_rising(th, zd) - lgamma_z1 - th * std::log1p(mu / th) + zd * (log_mu_v - std::log(th + mu));
  }

  /// Total-count terms: sum_t NB(y_t | lambda_t, theta) for GDM, NB(x_t) for GDM-UR.
  double total_terms(const ParameterState& s) const {
    const Eigen::VectorXd ll = log_lambda_vector(s);
    const NegBinParams base{0.0, s.theta[0]};
    const auto& counts = spec_.variant == Variant::kGDMUR ? s.latent_x : s.latent_y;
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t)
      out += log_pmf_neg_binomial(counts[t], {std::exp(ll[static_cast<Eigen::Index>(t)]), base.dispersion});
    return out;
  }

  double total_row_term(const ParameterState& s, std::size_t t, Count count, double log_lambda_t) const {
    (void)t;
    return log_pmf_neg_binomial(count, {std::exp(log_lambda_t), s.theta[0]});
  }

  /// GDM: sum over rows of the Beta-Binomial term of delay column c (for rows
  /// where that cell is observed). GLM: sum of NB cell terms in column c.
  /// GLM+: NB cell terms in column c given the latent log-means.
  double delay_terms(const ParameterState& s, std::size_t c) const {
    double out = 0.0;
    const auto& cells = by_column_[c];
    if (spec_.is_gdm_family()) {
      const Eigen::VectorXd eta = delay_predictor_vector(s, c);
      const Eigen::VectorXd lphi = has_phi() ? log_phi_vector(s, c) : Eigen::VectorXd();
      for (const auto& cell : cells) {
        const Count y = s.latent_y[cell.t];
        const Count n = y - cell.before;
        if (n < cell.z) return kNegInf;
        const double lc = cell.fixed ? cell.log_choose : log_choose(n, cell.z);
        out += delay_cell_term(cell.z, n, eta[static_cast<Eigen::Index>(cell.t)],
                               has_phi() ? lphi[static_cast<Eigen::Index>(cell.t)] : 0.0, lc);
      }
      return out;
    }
    const double th = theta(s, c);
    if (spec_.variant == Variant::kGLM) {
      const Eigen::VectorXd ll = log_lambda_vector(s);
      const Eigen::VectorXd dp = delay_predictor_vector(s, c);
      for (const auto& cell : cells) {
        const auto ti = static_cast<Eigen::Index>(cell.t);
        out += glm_cell_term(cell.z, ll[ti] + dp[ti], th, cell.lgamma_z1);
      }
      return out;
    }
    for (const auto& cell : cells)
      out += glm_cell_term(cell.z, s.latent_logmu(static_cast<Eigen::Index>(cell.t), static_cast<Eigen::Index>(c)),
                           th, cell.lgamma_z1);
    return out;
  }

  /// GDM: Beta-Binomial terms of row t's observed prefix given total y.
  double row_delay_terms(const ParameterState& s, std::size_t t, Count y) const {
    const std::size_t len = std::min(tri_.observed_prefix(t), n_cells() - 1);
    double out = 0.0;
    Count before = 0;
    for (std::size_t c = 0; c < len; ++c) {
      const Count z = tri_.cell(t, c);
      const Count n = y - before;
      if (n < z) return kNegInf;
      out += delay_cell_term(z, n, delay_predictor(s, t, c), has_phi() ? log_phi(s, t, c) : 0.0, log_choose(n, z));
      before += z;
    }
    return out;
  }

  /// Same as row_delay_terms with precomputed predictors for the row.
  double row_delay_terms(std::size_t t, Count y, std::span<const double> eta_row,
                         std::span<const double> lphi_row) const {
    const std::size_t len = std::min(tri_.observed_prefix(t), n_cells() - 1);
    double out = 0.0;
    Count before = 0;
    for (std::size_t c = 0; c < len; ++c) {
      const Count z = tri_.cell(t, c);
      const Count n = y - before;
      if (n < z) return kNegInf;
      out += delay_cell_term(z, n, eta_row[c], has_phi() ? lphi_row[c] : 0.0, log_choose(n, z));
      before += z;
    }
    return out;
  }

  /// GDM-UR: sum_t Binomial(y_t | x_t, pi_t).
  double reporting_terms(const ParameterState& s) const {
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t) {
      if (s.latent_x[t] < s.latent_y[t]) return kNegInf;
      out += log_pmf_binomial(s.latent_y[t], s.latent_x[t], reporting_rate(s, t));
    }
    return out;
  }

  /// GLM+: sum_t MVN(log mu_t | mean_t, Sigma).
  double mvn_terms(const ParameterState& s) const {
    Eigen::LLT<Eigen::MatrixXd> chol(s.sigma);
    if (chol.info() != Eigen::Success) return kNegInf;
    const Eigen::MatrixXd means = glmplus_means(s);
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      out += log_pdf_mvn(s.latent_logmu.row(ti).transpose(), means.row(ti).transpose(), chol);
    }
    return out;
  }

  /// Rows x cells matrix of MVN means log lambda_t + psi_d + beta_d(t).
  Eigen::MatrixXd glmplus_means(const ParameterState& s) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n_times()), static_cast<Eigen::Index>(n_cells()));
    const Eigen::VectorXd ll = log_lambda_vector(s);
    for (std::size_t c = 0; c < n_cells(); ++c) m.col(static_cast<Eigen::Index>(c)) = ll + delay_predictor_vector(s, c);
    return m;
  }

  // -------------------------------------------------------------------------
  // Full likelihoods

  double gdm_log_likelihood(const ParameterState& s) const {
    require(Variant::kGDM);
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t) {
      const Count y = s.latent_y[t];
      if (y < tri_.observed_sum(t)) return kNegInf;
      double row = log_pmf_neg_binomial(y, {std::exp(log_lambda(s, t)), s.theta[0]});
      row += row_delay_terms(s, t, y);
      out += row;
    }
    return out;
  }

  double gdm_ur_log_likelihood(const ParameterState& s) const {
    require(Variant::kGDMUR);
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t) {
      const Count y = s.latent_y[t], x = s.latent_x[t];
      if (y < tri_.observed_sum(t) || x < y) return kNegInf;
      double row = log_pmf_neg_binomial(x, {std::exp(log_lambda(s, t)), s.theta[0]});
      row += log_pmf_binomial(y, x, reporting_rate(s, t));
      row += row_delay_terms(s, t, y);
      out += row;
    }
    return out;
  }

  double glm_log_likelihood(const ParameterState& s) const {
    require(Variant::kGLM);
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t)
      for (std::size_t c = 0; c < tri_.observed_prefix(t); ++c) {
        const Count z = tri_.cell(t, c);
        out += glm_cell_term(z, log_mu(s, t, c), theta(s, c), std::lgamma(static_cast<double>(z) + 1.0));
      }
    return out;
  }

  double glmplus_log_likelihood(const ParameterState& s) const {
    require(Variant::kGLMPlus);
    Eigen::LLT<Eigen::MatrixXd> chol(s.sigma);
    if (chol.info() != Eigen::Success) return kNegInf;
    double out = 0.0;
    for (std::size_t t = 0; t < n_times(); ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      Eigen::VectorXd mean(static_cast<Eigen::Index>(n_cells()));
      for (std::size_t c = 0; c < n_cells(); ++c) mean[static_cast<Eigen::Index>(c)] = log_mu(s, t, c);
      double row = log_pdf_mvn(s.latent_logmu.row(ti).transpose(), mean, chol);
      for (std::size_t c = 0; c < tri_.observed_prefix(t); ++c) {
        const Count z = tri_.cell(t, c);
        row += glm_cell_term(z, s.latent_logmu(ti, static_cast<Eigen::Index>(c)), theta(s, c),
                             std::lgamma(static_cast<double>(z) + 1.0));
      }
      out += row;
    }
    return out;
  }

  double log_likelihood(const ParameterState& s) const {
    switch (spec_.variant) {
      case Variant::kGDM: return gdm_log_likelihood(s);
      case Variant::kGLM: return glm_log_likelihood(s);
      case Variant::kGLMPlus: return glmplus_log_likelihood(s);
      case Variant::kGDMUR: return gdm_ur_log_likelihood(s);
    }
    return kNegInf;
  }

  // -------------------------------------------------------------------------
  // Priors

  double log_prior_iota(const ParameterState& s) const { return log_prior_density(spec_.iota_prior, s.iota); }
  double log_prior_psi(const ParameterState& s, std::size_t c) const {
    return log_pdf_normal(s.psi[static_cast<Eigen::Index>(c)], spec_.psi_prior_mean(c), spec_.psi_prior_sd);
  }
  double log_prior_alpha(const ParameterState& s) const {
    return alpha_prior_.log_density(s.alpha, {s.sigma_alpha});
  }
  double log_prior_eta(const ParameterState& s) const { return eta_prior_.log_density(s.eta, {s.sigma_eta}); }
  double log_prior_beta(const ParameterState& s, std::size_t c) const {
    return beta_prior_.log_density(s.beta[c], {s.sigma_beta[static_cast<Eigen::Index>(c)]});
  }
  double log_prior_disp(const ParameterState& s, std::size_t c) const {
    return disp_prior_.log_density(s.disp[c], {s.sigma_disp[static_cast<Eigen::Index>(c)]});
  }
  double log_prior_pi_coefs(const ParameterState& s) const {
    return report_prior_.log_density(s.pi_coefs, {s.sigma_pi});
  }

  double log_prior(const ParameterState& s) const {
    double out = log_prior_iota(s);
    for (std::size_t c = 0; c < n_delay_effects(); ++c) out += log_prior_psi(s, c);
    out += log_prior_alpha(s) + log_prior_density(spec_.sigma_alpha_prior, s.sigma_alpha);
    out += log_prior_eta(s) + log_prior_density(spec_.sigma_eta_prior, s.sigma_eta);
    if (has_delay_splines())
      for (std::size_t c = 0; c < n_delay_effects(); ++c)
        out += log_prior_beta(s, c) +
               log_prior_density(spec_.sigma_beta_prior, s.sigma_beta[static_cast<Eigen::Index>(c)]);
    if (!spec_.poisson_limit)
      for (Eigen::Index i = 0; i < s.theta.size(); ++i) out += log_prior_density(spec_.theta_prior, s.theta[i]);
    if (has_phi())
      for (Eigen::Index i = 0; i < s.phi.size(); ++i) out += log_prior_density(spec_.phi_prior, s.phi[i]);
    if (spec_.dispersion_spline)
      for (std::size_t c = 0; c < n_delay_effects(); ++c)
        out += log_prior_disp(s, c) +
               log_prior_density(spec_.sigma_dispersion_prior, s.sigma_disp[static_cast<Eigen::Index>(c)]);
    if (spec_.variant == Variant::kGLMPlus) out += log_prior_density(iw_prior(), s.sigma);
    if (spec_.variant == Variant::kGDMUR && !spec_.fixed_reporting_rate) {
      out += log_prior_density(*spec_.reporting_intercept_prior, s.pi_intercept);
      if (spec_.reporting_spline)
        out += log_prior_pi_coefs(s) + log_prior_density(spec_.sigma_reporting_prior, s.sigma_pi);
    }
    return out;
  }

  InverseWishartSpec iw_prior() const {
    return {Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_cells()), static_cast<Eigen::Index>(n_cells())),
            spec_.effective_iw_df()};
  }

  double log_posterior(const ParameterState& s) const {
    const double lp = log_prior(s);
    if (lp == kNegInf) return kNegInf;
    return log_likelihood(s) + lp;
  }

  // -------------------------------------------------------------------------
  // State construction and flattening

  /// Neutral state at the prior centre with latent totals at their observed
  /// prefix sums.
  ParameterState zero_state() const {
    ParameterState s;
    const auto nde = static_cast<Eigen::Index>(n_delay_effects());
    s.iota = 0.0;
    s.psi.resize(nde);
    for (Eigen::Index c = 0; c < nde; ++c) s.psi[c] = spec_.psi_prior_mean(static_cast<std::size_t>(c));
    s.alpha = Eigen::VectorXd::Zero(alpha_basis_.dim());
    s.eta = Eigen::VectorXd::Zero(eta_basis_.dim());
    if (has_delay_splines()) {
      s.beta.assign(n_delay_effects(), Eigen::VectorXd::Zero(beta_basis_.dim()));
      s.sigma_beta = Eigen::VectorXd::Ones(nde);
    }
    s.theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_theta()), 10.0);
    if (has_phi()) s.phi = Eigen::VectorXd::Constant(nde, prior_median(spec_.phi_prior));
    if (spec_.dispersion_spline) {
      s.disp.assign(n_delay_effects(), Eigen::VectorXd::Zero(disp_basis_.dim()));
      s.sigma_disp = Eigen::VectorXd::Ones(nde);
    }
    s.latent_y.resize(n_times());
    for (std::size_t t = 0; t < n_times(); ++t) s.latent_y[t] = tri_.observed_sum(t);
    if (spec_.variant == Variant::kGDMUR) {
      s.latent_x = s.latent_y;
      if (!spec_.fixed_reporting_rate) s.pi_intercept = spec_.reporting_intercept_prior->a;
      if (spec_.reporting_spline) s.pi_coefs = Eigen::VectorXd::Zero(report_basis_.dim());
    }
    if (spec_.variant == Variant::kGLMPlus) {
      const auto k = static_cast<Eigen::Index>(n_cells());
      s.sigma = 0.1 * Eigen::MatrixXd::Identity(k, k);
      s.latent_logmu = glmplus_means(s);
    }
    return s;
  }

  /// Data-driven starting values, jittered by `jitter` on the natural scales.
  ParameterState initial_state(Rng& rng, double jitter) const {
    ParameterState s = zero_state();
    auto noise = [&](double sd) { return jitter > 0 ? sample_normal(rng, 0.0, jitter * sd) : 0.0; };

    // Completion ratios from fully observed rows: y / (sum of first L cells).
    std::vector<double> completion(n_cells() + 1, 1.0);
    double mean_total = 1.0, var_total = 0.0;
    if (!full_rows_.empty()) {
      std::vector<double> num(n_cells() + 1, 0.0), den(n_cells() + 1, 0.0);
      double sum = 0.0, sum2 = 0.0;
      for (auto t : full_rows_) {
        const auto y = static_cast<double>(tri_.observed_sum(t));
        sum += y;
        sum2 += y * y;
        for (std::size_t len = 1; len <= n_cells(); ++len) {
          num[len] += y;
          den[len] += static_cast<double>(tri_.prefix_sum(t, len));
        }
      }
      for (std::size_t len = 1; len <= n_cells(); ++len) completion[len] = den[len] > 0 ? num[len] / den[len] : 1.0;
      const auto nf = static_cast<double>(full_rows_.size());
      mean_total = std::max(sum / nf, 0.5);
      var_total = nf > 1 ? (sum2 - sum * sum / nf) / (nf - 1) : 0.0;
    }
    const double pi0 = spec_.variant == Variant::kGDMUR ? (spec_.fixed_reporting_rate ? *spec_.fixed_reporting_rate
                                                                                       : inv_logit(s.pi_intercept))
                                                        : 1.0;
    s.iota = std::log(mean_total / pi0) + noise(0.2);
    const double theta0 = var_total > mean_total ? mean_total * mean_total / (var_total - mean_total) : 50.0;
    if (spec_.is_gdm_family()) {
      s.theta[0] = std::clamp(theta0, 0.5, 1e4) * std::exp(noise(0.3));
    } else {
      s.iota = std::log(mean_total / static_cast<double>(n_cells())) + noise(0.2);
      for (Eigen::Index c = 0; c < s.theta.size(); ++c) s.theta[c] = 10.0 * std::exp(noise(0.3));
    }

    // Delay intercepts from empirical conditional fractions / cell means.
    for (std::size_t c = 0; c < n_delay_effects(); ++c) {
      double zs = 0.0, ns = 0.0;
      for (auto t : full_rows_) {
        const auto z = static_cast<double>(tri_.cell(t, c));
        zs += z;
        ns += spec_.is_gdm_family() ? static_cast<double>(tri_.observed_sum(t) - tri_.prefix_sum(t, c))
                                    : static_cast<double>(tri_.observed_sum(t));
      }
      double frac = ns > 0 ? (zs + 0.5) / (ns + 1.0) : 1.0 / static_cast<double>(n_cells() - c);
      if (spec_.is_gdm_family()) {
        frac = std::clamp(frac, 1e-4, 1.0 - 1e-4);
        s.psi[static_cast<Eigen::Index>(c)] = logit(frac) + noise(0.2);
      } else {
        s.psi[static_cast<Eigen::Index>(c)] = std::log(std::max(frac, 1e-4) * n_cells()) + noise(0.2);
      }
    }
    if (has_phi())
      for (Eigen::Index c = 0; c < s.phi.size(); ++c) s.phi[c] = prior_median(spec_.phi_prior) * std::exp(noise(0.3));
    s.sigma_alpha = 0.5 * std::exp(noise(0.2));
    s.sigma_eta = 0.5 * std::exp(noise(0.2));
    for (Eigen::Index c = 0; c < s.sigma_beta.size(); ++c) s.sigma_beta[c] = 0.5 * std::exp(noise(0.2));
    for (Eigen::Index c = 0; c < s.sigma_disp.size(); ++c) s.sigma_disp[c] = 0.5 * std::exp(noise(0.2));

    for (auto t : latent_rows_) {
      const std::size_t len = tri_.observed_prefix(t);
      const auto prefix = static_cast<double>(tri_.observed_sum(t));
      double guess = len == 0 ? std::exp(s.iota) * pi0 : prefix * completion[len];
      guess *= std::exp(noise(0.1));
      s.latent_y[t] = std::max(tri_.observed_sum(t), static_cast<Count>(std::llround(guess)));
    }
    if (spec_.variant == Variant::kGDMUR)
      for (std::size_t t = 0; t < n_times(); ++t)
        s.latent_x[t] = std::max(s.latent_y[t], static_cast<Count>(std::llround(static_cast<double>(s.latent_y[t]) / pi0)));
    if (spec_.variant == Variant::kGLMPlus) {
      s.latent_logmu = glmplus_means(s);
      for (std::size_t t = 0; t < n_times(); ++t)
        for (std::size_t c = 0; c < tri_.observed_prefix(t); ++c)
          s.latent_logmu(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) =
              std::log(static_cast<double>(tri_.cell(t, c)) + 0.5);
    }
    return s;
  }

  ParameterLayout layout() const {
    ParameterLayout l;
    auto add = [&](const std::string& name, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) l.labels.push_back(name + "[" + std::to_string(i + 1) + "]");
    };
    l.labels.push_back("iota");
    add("psi", static_cast<Eigen::Index>(n_delay_effects()));
    add("alpha", alpha_basis_.dim());
    l.labels.push_back("sigma_alpha");
    add("eta", eta_basis_.dim());
    l.labels.push_back("sigma_eta");
    if (has_delay_splines()) {
      for (std::size_t c = 0; c < n_delay_effects(); ++c)
        for (Eigen::Index j = 0; j < beta_basis_.dim(); ++j)
          l.labels.push_back("beta[" + std::to_string(c + 1) + "," + std::to_string(j + 1) + "]");
      add("sigma_beta", static_cast<Eigen::Index>(n_delay_effects()));
    }
    add("theta", static_cast<Eigen::Index>(n_theta()));
    if (has_phi()) add("phi", static_cast<Eigen::Index>(n_delay_effects()));
    if (spec_.dispersion_spline) {
      for (std::size_t c = 0; c < n_delay_effects(); ++c)
        for (Eigen::Index j = 0; j < disp_basis_.dim(); ++j)
          l.labels.push_back("disp[" + std::to_string(c + 1) + "," + std::to_string(j + 1) + "]");
      add("sigma_disp", static_cast<Eigen::Index>(n_delay_effects()));
    }
    if (spec_.variant == Variant::kGDMUR && !spec_.fixed_reporting_rate) {
      l.labels.push_back("pi_intercept");
      if (spec_.reporting_spline) {
        add("pi_coefs", report_basis_.dim());
        l.labels.push_back("sigma_pi");
      }
    }
    if (spec_.variant == Variant::kGLMPlus) {
      for (std::size_t t = 0; t < n_times(); ++t)
        for (std::size_t c = 0; c < n_cells(); ++c)
          l.labels.push_back("logmu[" + std::to_string(t + 1) + "," + std::to_string(c + 1) + "]");
      for (std::size_t i = 0; i < n_cells(); ++i)
        for (std::size_t j = i; j < n_cells(); ++j)
          l.labels.push_back("Sigma[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
    }
    l.latent_y_rows = latent_rows_;
    for (auto t : latent_rows_) l.latent_labels.push_back("y[" + std::to_string(t + 1) + "]");
    if (spec_.variant == Variant::kGDMUR) {
      l.has_latent_x = true;
      for (std::size_t t = 0; t < n_times(); ++t) l.latent_labels.push_back("x[" + std::to_string(t + 1) + "]");
    }
    return l;
  }

  Eigen::VectorXd pack(const ParameterState& s) const {
    std::vector<double> v;
    v.push_back(s.iota);
    append(v, s.psi);
    append(v, s.alpha);
    v.push_back(s.sigma_alpha);
    append(v, s.eta);
    v.push_back(s.sigma_eta);
    if (has_delay_splines()) {
      for (const auto& b : s.beta) append(v, b);
      append(v, s.sigma_beta);
    }
    append(v, s.theta);
    if (has_phi()) append(v, s.phi);
    if (spec_.dispersion_spline) {
      for (const auto& d : s.disp) append(v, d);
      append(v, s.sigma_disp);
    }
    if (spec_.variant == Variant::kGDMUR && !spec_.fixed_reporting_rate) {
      v.push_back(s.pi_intercept);
      if (spec_.reporting_spline) {
        append(v, s.pi_coefs);
        v.push_back(s.sigma_pi);
      }
    }
    if (spec_.variant == Variant::kGLMPlus) {
      for (Eigen::Index t = 0; t < s.latent_logmu.rows(); ++t)
        for (Eigen::Index c = 0; c < s.latent_logmu.cols(); ++c) v.push_back(s.latent_logmu(t, c));
      for (Eigen::Index i = 0; i < s.sigma.rows(); ++i)
        for (Eigen::Index j = i; j < s.sigma.cols(); ++j) v.push_back(s.sigma(i, j));
    }
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  std::vector<Count> pack_latent(const ParameterState& s) const {
    std::vector<Count> out;
    for (auto t : latent_rows_) out.push_back(s.latent_y[t]);
    if (spec_.variant == Variant::kGDMUR) out.insert(out.end(), s.latent_x.begin(), s.latent_x.end());
    return out;
  }

  ParameterState unpack(std::span<const double> v, std::span<const Count> latent) const {
    ParameterState s = zero_state();
    std::size_t i = 0;
    auto take = [&](Eigen::VectorXd& x) {
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = v[i++];
    };
    s.iota = v[i++];
    take(s.psi);
    take(s.alpha);
    s.sigma_alpha = v[i++];
    take(s.eta);
    s.sigma_eta = v[i++];
    if (has_delay_splines()) {
      for (auto& b : s.beta) take(b);
      take(s.sigma_beta);
    }
    take(s.theta);
    if (has_phi()) take(s.phi);
    if (spec_.dispersion_spline) {
      for (auto& d : s.disp) take(d);
      take(s.sigma_disp);
    }
    if (spec_.variant == Variant::kGDMUR && !spec_.fixed_reporting_rate) {
      s.pi_intercept = v[i++];
      if (spec_.reporting_spline) {
        take(s.pi_coefs);
        s.sigma_pi = v[i++];
      }
    }
    if (spec_.variant == Variant::kGLMPlus) {
      for (Eigen::Index t = 0; t < s.latent_logmu.rows(); ++t)
        for (Eigen::Index c = 0; c < s.latent_logmu.cols(); ++c) s.latent_logmu(t, c) = v[i++];
      for (Eigen::Index a = 0; a < s.sigma.rows(); ++a)
        for (Eigen::Index b = a; b < s.sigma.cols(); ++b) s.sigma(a, b) = s.sigma(b, a) = v[i++];
    }
    if (i != v.size()) throw ConfigError("parameter vector length does not match the model layout");
    std::size_t j = 0;
    for (auto t : latent_rows_) s.latent_y[t] = latent[j++];
    if (spec_.variant == Variant::kGDMUR)
      for (std::size_t t = 0; t < n_times(); ++t) s.latent_x[t] = latent[j++];
    if (j != latent.size()) throw ConfigError("latent vector length does not match the model layout");
    return s;
  }

  // Per-column cell index used by the likelihood pieces.
  struct CellRef {
    std::size_t t;
    Count z;
    Count before;       // sum of earlier cells in the row
    bool fixed;         // row total observed
    double log_choose;  // log C(y - before, z) when fixed
    double lgamma_z1;   // lgamma(z + 1)
  };
  const std::vector<CellRef>& column_cells(std::size_t c) const { return by_column_[c]; }

 private:
  static double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

  static void append(std::vector<double>& v, const Eigen::VectorXd& x) { v.insert(v.end(), x.data(), x.data() + x.size()); }

  void require(Variant v) const {
    if (spec_.variant != v) throw ConfigError("likelihood requested for " + to_string(v) + " on a " +
                                              to_string(spec_.variant) + " model");
  }

  void build_bases() {
    std::vector<double> pts(n_times());
    for (std::size_t t = 0; t < n_times(); ++t) pts[t] = static_cast<double>(t + 1);
    const std::pair<double, double> range{1.0, static_cast<double>(n_times() + spec_.max_forecast_horizon)};
    alpha_basis_ = center_basis(build_cubic_basis(pts, spec_.alpha_basis, range));
    eta_basis_ = center_basis(build_cyclic_basis(pts, spec_.eta_basis, spec_.season_period));
    alpha_prior_ = SplinePrior(alpha_basis_.penalty(), spec_.null_space_sd);
    eta_prior_ = SplinePrior(eta_basis_.penalty(), spec_.null_space_sd);
    if (has_delay_splines()) {
      beta_basis_ = center_basis(build_cubic_basis(pts, spec_.beta_basis, range));
      beta_prior_ = SplinePrior(beta_basis_.penalty(), spec_.null_space_sd);
    }
    if (spec_.dispersion_spline) {
      disp_basis_ = center_basis(build_cubic_basis(pts, spec_.dispersion_basis, range));
      disp_prior_ = SplinePrior(disp_basis_.penalty(), spec_.null_space_sd);
    }
    if (spec_.reporting_spline) {
      report_basis_ = center_basis(build_cubic_basis(pts, spec_.reporting_basis, range));
      report_prior_ = SplinePrior(report_basis_.penalty(), spec_.null_space_sd);
    }
  }

  void index_cells() {
    by_column_.assign(n_delay_effects(), {});
    for (std::size_t t = 0; t < n_times(); ++t) {
      if (tri_.fully_observed(t))
        full_rows_.push_back(t);
      else
        latent_rows_.push_back(t);
      const bool fixed = tri_.fully_observed(t);
      const Count y = tri_.observed_sum(t);
      Count before = 0;
      const std::size_t len = std::min(tri_.observed_prefix(t), n_delay_effects());
      for (std::size_t c = 0; c < len; ++c) {
        const Count z = tri_.cell(t, c);
        by_column_[c].push_back(
            {t, z, before, fixed, fixed ? log_choose(y - before, z) : 0.0, std::lgamma(static_cast<double>(z) + 1.0)});
        before += z;
      }
    }
  }

  ModelSpec spec_;
  ReportingTriangle tri_;
  SplineBasis alpha_basis_, eta_basis_, beta_basis_, disp_basis_, report_basis_;
  SplinePrior alpha_prior_, eta_prior_, beta_prior_, disp_prior_, report_prior_;
  std::vector<std::vector<CellRef>> by_column_;
  std::vector<std::size_t> latent_rows_, full_rows_;
};

/// Marginal log-pmf of a reported total y when the true count x ~ NB(lambda,
/// theta) is thinned by Binomial(x, pi): again NB with mean pi * lambda.
inline double log_pmf_thinned_neg_binomial(Count y, double lambda, double theta, double pi) {
  return log_pmf_neg_binomial(y, {pi * lambda, theta});
}

}  // namespace delaycast
