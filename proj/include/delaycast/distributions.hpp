#pragma once

// Log-densities and samplers used by the delayed-reporting models. All
// densities work in log space through log-gamma; counts can be large.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "delaycast/errors.hpp"

namespace delaycast {

using Count = std::int64_t;
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Parameter records

struct GDParams {
  Eigen::VectorXd alpha;  ///< length k - 1, all > 0
  Eigen::VectorXd beta;   ///< length k - 1, all > 0

  void validate() const {
    if (alpha.size() != beta.size()) throw ConfigError("GDParams: alpha/beta length mismatch");
    for (Eigen::Index i = 0; i < alpha.size(); ++i)
      if (!(alpha[i] > 0.0) || !(beta[i] > 0.0)) throw ConfigError("GDParams: parameters must be positive");
  }
};

/// Stick-breaking mean and dispersion of each conditional Beta-Binomial.
struct DelayMeanDispersion {
  Eigen::VectorXd nu;   ///< in (0, 1)
  Eigen::VectorXd phi;  ///< > 0
};

/// Mean-dispersion negative binomial: variance = mean + mean^2 / dispersion.
struct NegBinParams {
  double mean = 1.0;
  double dispersion = 1.0;
};

struct MVNParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

inline GDParams reparam_mean_dispersion(const DelayMeanDispersion& md) {
  if (md.nu.size() != md.phi.size()) throw ConfigError("DelayMeanDispersion: length mismatch");
  GDParams p{md.nu.cwiseProduct(md.phi), (1.0 - md.nu.array()).matrix().cwiseProduct(md.phi)};
  return p;
}

inline DelayMeanDispersion mean_dispersion_from(const GDParams& p) {
  DelayMeanDispersion md;
  md.phi = p.alpha + p.beta;
  md.nu = p.alpha.cwiseQuotient(md.phi);
  return md;
}

// ---------------------------------------------------------------------------
// Special functions

/// log Gamma(x + k) - log Gamma(x). For large x the difference is taken from
/// the Stirling series directly so that both terms never need to be formed.
inline double log_rising(double x, double k) {
  if (k == 0.0) return 0.0;
  if (x < 1e5) return std::lgamma(x + k) - std::lgamma(x);
  auto corr = [](double v) {
    const double v2 = v * v;
    return 1.0 / (12.0 * v) - 1.0 / (360.0 * v * v2) + 1.0 / (1260.0 * v * v2 * v2);
  };
  return (x - 0.5) * std::log1p(k / x) + k * std::log(x + k) - k + corr(x + k) - corr(x);
}

inline double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

inline double log_choose(Count n, Count k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double inv_logit(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

namespace detail {
/// a * log(p) with the conventions 0 * log(0) = 0, a > 0 at p = 0 -> -inf.
inline double xlogy(double a, double p) {
  if (a == 0.0) return 0.0;
  if (p == 0.0) return a > 0 ? kNegInf : kPosInf;
  return a * std::log(p);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Discrete log-pmfs

inline double log_pmf_beta_binomial(Count z, double alpha, double beta, Count n) {
  if (z < 0 || z > n) throw DomainError("beta-binomial: z outside [0, n]");
  const auto zd = static_cast<double>(z), nd = static_cast<double>(n);
  return log_choose(n, z) + log_rising(alpha, zd) + log_rising(beta, nd - zd) - log_rising(alpha + beta, nd);
}

/// Beta-Binomial with the binomial coefficient supplied by the caller.
inline double log_pmf_beta_binomial_kernel(Count z, double alpha, double beta, Count n, double log_choose_nz) {
  const auto zd = static_cast<double>(z), nd = static_cast<double>(n);
  return log_choose_nz + log_rising(alpha, zd) + log_rising(beta, nd - zd) - log_rising(alpha + beta, nd);
}

inline double log_pmf_binomial(Count y, Count n, double pi) {
  if (y < 0 || y > n) throw DomainError("binomial: y outside [0, n]");
  if (!(pi >= 0.0 && pi <= 1.0)) throw DomainError("binomial: probability outside [0, 1]");
  const double lc = log_choose(n, y);
  const auto yd = static_cast<double>(y), fd = static_cast<double>(n - y);
  if (pi == 1.0) return y == n ? lc : kNegInf;
  if (pi == 0.0) return y == 0 ? lc : kNegInf;
  return lc + yd * std::log(pi) + fd * std::log1p(-pi);
}

inline double log_pmf_neg_binomial(Count y, const NegBinParams& p) {
  if (y < 0) throw DomainError("negative binomial: y < 0");
  const double lam = p.mean, th = p.dispersion;
  const auto yd = static_cast<double>(y);
  if (lam == 0.0) return y == 0 ? 0.0 : kNegInf;
  return log_rising(th, yd) - std::lgamma(yd + 1.0) - th * std::log1p(lam / th) +
         yd * (std::log(lam) - std::log(th + lam));
}

inline double log_pmf_poisson(Count y, double mean) {
  if (y < 0) throw DomainError("poisson: y < 0");
  const auto yd = static_cast<double>(y);
  if (mean == 0.0) return y == 0 ? 0.0 : kNegInf;
  return yd * std::log(mean) - mean - std::lgamma(yd + 1.0);
}

/// Generalized-Dirichlet-Multinomial, closed form: a product over stick
/// breaks of Gamma ratios with Gamma(y + 1) / Gamma(z_k + 1) in front.
inline double log_pmf_gdm(std::span<const Count> z, const GDParams& params, Count y) {
  const auto k = z.size();
  if (k < 2 || static_cast<Eigen::Index>(k - 1) != params.alpha.size())
    throw DomainError("gdm: need k >= 2 and k - 1 parameters");
  Count sum = 0;
  for (auto v : z) {
    if (v < 0) throw DomainError("gdm: negative count");
    sum += v;
  }
  if (sum != y) throw DomainError("gdm: counts do not sum to y");
  double out = std::lgamma(static_cast<double>(y) + 1.0) - std::lgamma(static_cast<double>(z[k - 1]) + 1.0);
  double tail = static_cast<double>(y);  // sum_{j >= i} z_j
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double a = params.alpha[static_cast<Eigen::Index>(i)], b = params.beta[static_cast<Eigen::Index>(i)];
    const auto zi = static_cast<double>(z[i]);
    const double rest = tail - zi;
    out += std::lgamma(zi + a) + std::lgamma(rest + b) - log_beta_fn(a, b) - std::lgamma(zi + 1.0) -
           std::lgamma(a + b + tail);
    tail = rest;
  }
  return out;
}

/// Same distribution through its conditional Beta-Binomial chain
/// z_i | z_{<i} ~ BB(alpha_i, beta_i, y - sum_{j<i} z_j).
inline double log_pmf_gdm_conditional(std::span<const Count> z, const GDParams& params, Count y) {
  const auto k = z.size();
  if (k < 2 || static_cast<Eigen::Index>(k - 1) != params.alpha.size())
    throw DomainError("gdm: need k >= 2 and k - 1 parameters");
  Count sum = 0;
  for (auto v : z) {
    if (v < 0) throw DomainError("gdm: negative count");
    sum += v;
  }
  if (sum != y) throw DomainError("gdm: counts do not sum to y");
  double out = 0.0;
  Count remaining = y;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    out += log_pmf_beta_binomial(z[i], params.alpha[ii], params.beta[ii], remaining);
    remaining -= z[i];
  }
  return out;
}

/// Multinomial whose cell probabilities come from stick-breaking fractions
/// p_d = nu_d * prod_{i<d}(1 - nu_i); the last cell takes the remainder.
inline double log_pmf_stick_breaking_multinomial(std::span<const Count> z, const Eigen::VectorXd& nu, Count y) {
  const auto k = z.size();
  if (static_cast<Eigen::Index>(k - 1) != nu.size()) throw DomainError("multinomial: need k - 1 fractions");
  Count remaining = y;
  double out = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    if (z[i] < 0 || z[i] > remaining) throw DomainError("multinomial: counts inconsistent with y");
    out += log_pmf_binomial(z[i], remaining, nu[static_cast<Eigen::Index>(i)]);
    remaining -= z[i];
  }
  if (remaining != z[k - 1]) throw DomainError("multinomial: counts do not sum to y");
  return out;
}

// ---------------------------------------------------------------------------
// Continuous log-densities

/// Generalized-Dirichlet density on the simplex (length k, k - 1 parameter
/// pairs). The first tail sum is identically 1, so beta_0 never enters.
inline double log_pdf_generalized_dirichlet(std::span<const double> p, const GDParams& params) {
  const auto k = p.size();
  if (k < 2 || static_cast<Eigen::Index>(k - 1) != params.alpha.size())
    throw DomainError("generalized dirichlet: need k >= 2 and k - 1 parameters");
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) throw DomainError("generalized dirichlet: negative coordinate");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-10) throw DomainError("generalized dirichlet: point is not on the simplex");
  double out = 0.0;
  double tail = 1.0;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double a = params.alpha[ii], b = params.beta[ii];
    out += detail::xlogy(a - 1.0, p[i]) - log_beta_fn(a, b);
    if (i > 0) out += detail::xlogy(params.beta[ii - 1] - (a + b), tail);
    tail -= p[i];
  }
  out += detail::xlogy(params.beta[static_cast<Eigen::Index>(k - 2)] - 1.0, p[k - 1]);
  return out;
}

inline double log_pdf_normal(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// MVN log-density given the Cholesky factor of the covariance.
inline double log_pdf_mvn(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                          const Eigen::LLT<Eigen::MatrixXd>& chol) {
  const Eigen::VectorXd r = chol.matrixL().solve(x - mean);
  const Eigen::MatrixXd& l = chol.matrixLLT();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return -0.5 * r.squaredNorm() - 0.5 * logdet - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

inline double log_pdf_mvn(const Eigen::VectorXd& x, const MVNParams& p) {
  Eigen::LLT<Eigen::MatrixXd> chol(p.covariance);
  if (chol.info() != Eigen::Success) throw DomainError("mvn: covariance is not positive definite");
  return log_pdf_mvn(x, p.mean, chol);
}

inline double log_multivariate_gamma(double a, int p) {
  double out = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) out += std::lgamma(a + 0.5 * (1 - j));
  return out;
}

/// Inverse-Wishart(scale, df) log-density at the SPD matrix x.
inline double log_pdf_inverse_wishart(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scale, double df) {
  const auto p = static_cast<int>(x.rows());
  if (scale.rows() != p || !(df > p - 1)) throw ConfigError("inverse-wishart: invalid scale or degrees of freedom");
  Eigen::LLT<Eigen::MatrixXd> cx(x);
  if (cx.info() != Eigen::Success) return kNegInf;
  Eigen::LLT<Eigen::MatrixXd> cs(scale);
  if (cs.info() != Eigen::Success) throw ConfigError("inverse-wishart: scale is not positive definite");
  auto logdet = [](const Eigen::LLT<Eigen::MatrixXd>& c) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < c.matrixLLT().rows(); ++i) s += 2.0 * std::log(c.matrixLLT()(i, i));
    return s;
  };
  const double trace = (cx.solve(scale)).trace();
  return 0.5 * df * logdet(cs) - 0.5 * df * p * std::log(2.0) - log_multivariate_gamma(0.5 * df, p) -
         0.5 * (df + p + 1) * logdet(cx) - 0.5 * trace;
}

// ---------------------------------------------------------------------------
// Priors

enum class PriorKind { kNormal, kHalfNormal, kExponential, kLogNormal, kInverseWishart };

/// Scalar prior record. normal(a = mean, b = sd); half_normal(b = sd);
/// exponential(a = rate); log_normal(a = meanlog, b = sdlog).
struct PriorSpec {
  PriorKind kind = PriorKind::kNormal;
  double a = 0.0;
  double b = 1.0;

  static PriorSpec normal(double mean, double sd) { return {PriorKind::kNormal, mean, sd}; }
  static PriorSpec half_normal(double sd) { return {PriorKind::kHalfNormal, 0.0, sd}; }
  static PriorSpec exponential(double rate) { return {PriorKind::kExponential, rate, 0.0}; }
  static PriorSpec log_normal(double meanlog, double sdlog) { return {PriorKind::kLogNormal, meanlog, sdlog}; }
};

inline double log_prior_density(const PriorSpec& prior, double x) {
  switch (prior.kind) {
    case PriorKind::kNormal:
      if (!(prior.b > 0)) throw ConfigError("normal prior: sd must be positive");
      return log_pdf_normal(x, prior.a, prior.b);
    case PriorKind::kHalfNormal:
      if (!(prior.b > 0)) throw ConfigError("half-normal prior: sd must be positive");
      if (x < 0) return kNegInf;
      return std::log(2.0) + log_pdf_normal(x, 0.0, prior.b);
    case PriorKind::kExponential:
      if (!(prior.a > 0)) throw ConfigError("exponential prior: rate must be positive");
      if (x < 0) return kNegInf;
      return std::log(prior.a) - prior.a * x;
    case PriorKind::kLogNormal:
      if (!(prior.b > 0)) throw ConfigError("log-normal prior: sdlog must be positive");
      if (x <= 0) return kNegInf;
      return log_pdf_normal(std::log(x), prior.a, prior.b) - std::log(x);
    case PriorKind::kInverseWishart:
      throw ConfigError("inverse-wishart prior takes a matrix argument");
  }
  return kNegInf;
}

struct InverseWishartSpec {
  Eigen::MatrixXd scale;
  double df = 0.0;
};

inline double log_prior_density(const InverseWishartSpec& prior, const Eigen::MatrixXd& x) {
  return log_pdf_inverse_wishart(x, prior.scale, prior.df);
}

/// Median of a positive prior; used for initial values.
inline double prior_median(const PriorSpec& prior) {
  switch (prior.kind) {
    case PriorKind::kNormal: return prior.a;
    case PriorKind::kHalfNormal: return prior.b * 0.6744897501960817;
    case PriorKind::kExponential: return std::log(2.0) / prior.a;
    case PriorKind::kLogNormal: return std::exp(prior.a);
    case PriorKind::kInverseWishart: break;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Samplers. Every sampler draws only from the stream it is handed.

template <class Urbg>
double sample_normal(Urbg& rng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

template <class Urbg>
double sample_gamma(Urbg& rng, double shape, double scale) {
  return std::gamma_distribution<double>(shape, scale)(rng);
}

template <class Urbg>
double sample_beta(Urbg& rng, double a, double b) {
  const double x = sample_gamma(rng, a, 1.0), y = sample_gamma(rng, b, 1.0);
  if (x + y == 0.0) return std::bernoulli_distribution(a / (a + b))(rng) ? 1.0 : 0.0;
  return x / (x + y);
}

template <class Urbg>
Count sample_binomial(Urbg& rng, Count n, double p) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  return std::binomial_distribution<Count>(n, p)(rng);
}

template <class Urbg>
Count sample_poisson(Urbg& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<Count>(mean)(rng);
}

template <class Urbg>
Count sample_neg_binomial(Urbg& rng, const NegBinParams& p) {
  if (!(p.mean > 0.0)) return 0;
  return sample_poisson(rng, sample_gamma(rng, p.dispersion, p.mean / p.dispersion));
}

template <class Urbg>
Count sample_beta_binomial(Urbg& rng, double alpha, double beta, Count n) {
  if (n <= 0) return 0;
  return sample_binomial(rng, n, sample_beta(rng, alpha, beta));
}

/// Sequential Beta-Binomial draws; the last cell takes what remains.
template <class Urbg>
std::vector<Count> sample_gdm(Urbg& rng, const GDParams& params, Count y) {
  const auto k = static_cast<std::size_t>(params.alpha.size()) + 1;
  std::vector<Count> z(k, 0);
  Count remaining = y;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    z[i] = sample_beta_binomial(rng, params.alpha[ii], params.beta[ii], remaining);
    remaining -= z[i];
  }
  z[k - 1] = remaining;
  return z;
}

/// Multinomial via binomial stick-breaking with fractions nu.
template <class Urbg>
std::vector<Count> sample_multinomial(Urbg& rng, const Eigen::VectorXd& nu, Count y) {
  const auto k = static_cast<std::size_t>(nu.size()) + 1;
  std::vector<Count> z(k, 0);
  Count remaining = y;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    z[i] = sample_binomial(rng, remaining, nu[static_cast<Eigen::Index>(i)]);
    remaining -= z[i];
  }
  z[k - 1] = remaining;
  return z;
}

template <class Urbg>
Eigen::VectorXd sample_mvn(Urbg& rng, const Eigen::VectorXd& mean, const Eigen::LLT<Eigen::MatrixXd>& chol) {
  Eigen::VectorXd e(mean.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = sample_normal(rng);
  return mean + chol.matrixL() * e;
}

template <class Urbg>
Eigen::VectorXd sample_mvn(Urbg& rng, const MVNParams& p) {
  Eigen::LLT<Eigen::MatrixXd> chol(p.covariance);
  if (chol.info() != Eigen::Success) throw DomainError("mvn: covariance is not positive definite");
  return sample_mvn(rng, p.mean, chol);
}

/// Inverse-Wishart draw through a Bartlett-decomposed Wishart on the inverse scale.
template <class Urbg>
Eigen::MatrixXd sample_inverse_wishart(Urbg& rng, const Eigen::MatrixXd& scale, double df) {
  const auto p = scale.rows();
  const Eigen::MatrixXd inv_scale = scale.inverse();
  Eigen::LLT<Eigen::MatrixXd> chol(0.5 * (inv_scale + inv_scale.transpose()));
  if (chol.info() != Eigen::Success) throw DomainError("inverse-wishart: scale is not positive definite");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(std::chi_squared_distribution<double>(df - static_cast<double>(i))(rng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = sample_normal(rng);
  }
  const Eigen::MatrixXd la = chol.matrixL() * a;
  const Eigen::MatrixXd w = la * la.transpose();
  Eigen::MatrixXd out = w.inverse();
  return 0.5 * (out + out.transpose());
}

}  // namespace delaycast
