#pragma once

// Penalized cubic regression splines parametrized by their values at the
// knots. The non-cyclic basis has natural boundary conditions and is extended
// linearly beyond the boundary knots; the cyclic basis wraps with matching
// value, slope and curvature. Penalties are integrated squared second
// derivatives.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "delaycast/errors.hpp"
#include "delaycast/stats.hpp"

namespace delaycast {

enum class SplineKind { kCubicLinearTail, kCyclic };

struct SmoothnessParam {
  double sigma = 1.0;

  static SmoothnessParam from_tau(double tau) { return {1.0 / std::sqrt(tau)}; }
  double tau() const { return 1.0 / (sigma * sigma); }
};

class SplineBasis {
 public:
  SplineKind kind() const noexcept { return kind_; }
  const Eigen::MatrixXd& design() const noexcept { return design_; }
  const Eigen::MatrixXd& penalty() const noexcept { return penalty_; }
  const Eigen::VectorXd& knots() const noexcept { return knots_; }
  const std::vector<double>& points() const noexcept { return points_; }
  bool centered() const noexcept { return centered_; }
  int null_dim() const noexcept { return null_dim_; }
  int rank() const noexcept { return static_cast<int>(dim()) - null_dim_; }
  Eigen::Index dim() const noexcept { return penalty_.rows(); }
  double period() const noexcept { return period_; }
  std::pair<double, double> extrapolation_range() const noexcept { return range_; }
  bool in_range(double x) const noexcept {
    return kind_ == SplineKind::kCyclic || (x >= range_.first - 1e-9 && x <= range_.second + 1e-9);
  }

  /// Basis row at an arbitrary point (after any centering transform).
  Eigen::RowVectorXd evaluate(double x) const {
    if (!in_range(x)) throw DomainError("spline evaluated outside its extrapolation range");
    Eigen::RowVectorXd raw = kind_ == SplineKind::kCyclic ? cyclic_row(x) : cubic_row(x);
    return centered_ ? Eigen::RowVectorXd(raw * constraint_) : raw;
  }

  /// Derivative of the basis row (raw knot parametrization, then centered).
  Eigen::RowVectorXd evaluate_derivative(double x) const {
    Eigen::RowVectorXd raw = kind_ == SplineKind::kCyclic ? cyclic_row(x, 1) : cubic_row(x, 1);
    return centered_ ? Eigen::RowVectorXd(raw * constraint_) : raw;
  }

  void write_csv(std::ostream& os) const {
    os << "point";
    for (Eigen::Index j = 0; j < design_.cols(); ++j) os << ",b" << j + 1;
    os << "\n";
    os.precision(17);
    for (Eigen::Index i = 0; i < design_.rows(); ++i) {
      os << points_[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < design_.cols(); ++j) os << ',' << design_(i, j);
      os << "\n";
    }
  }

  friend SplineBasis build_cubic_basis(std::span<const double>, int, std::pair<double, double>);
  friend SplineBasis build_cyclic_basis(std::span<const double>, int, double);
  friend SplineBasis center_basis(const SplineBasis&);

 private:
  // Row of [a-, a+, c-, c+] weights mapped onto knot values through F.
  Eigen::RowVectorXd cubic_row(double x, int deriv = 0) const {
    const auto k = knots_.size();
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(k);
    const double lo = knots_[0], hi = knots_[k - 1];
    if (x < lo || x > hi) {
      const bool below = x < lo;
      const Eigen::Index j = below ? 0 : k - 2;
      const double h = knots_[j + 1] - knots_[j];
      // Slope at the boundary knot from the last interval's polynomial.
      Eigen::RowVectorXd slope = Eigen::RowVectorXd::Zero(k);
      slope[j] -= 1.0 / h;
      slope[j + 1] += 1.0 / h;
      const double cm = below ? -h / 3.0 : h / 6.0;
      const double cp = below ? -h / 6.0 : h / 3.0;
      slope += cm * fmap_.row(j) + cp * fmap_.row(j + 1);
      if (deriv == 1) return slope;
      Eigen::RowVectorXd value = Eigen::RowVectorXd::Zero(k);
      value[below ? 0 : k - 1] = 1.0;
      return value + (x - (below ? lo : hi)) * slope;
    }
    Eigen::Index j = static_cast<Eigen::Index>(std::upper_bound(knots_.data(), knots_.data() + k, x) - knots_.data()) - 1;
    j = std::clamp<Eigen::Index>(j, 0, k - 2);
    piece(row, j, j + 1, knots_[j], knots_[j + 1], x, deriv);
    return row;
  }

  Eigen::RowVectorXd cyclic_row(double x, int deriv = 0) const {
    const auto m = knots_.size();
    const double x0 = knots_[0];
    double u = std::fmod(x - x0, period_);
    if (u < 0) u += period_;
    u += x0;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(m);
    Eigen::Index j = static_cast<Eigen::Index>(std::upper_bound(knots_.data(), knots_.data() + m, u) - knots_.data()) - 1;
    j = std::clamp<Eigen::Index>(j, 0, m - 1);
    const Eigen::Index jn = (j + 1) % m;
    const double right = j + 1 < m ? knots_[j + 1] : x0 + period_;
    piece(row, j, jn, knots_[j], right, u, deriv);
    return row;
  }

  void piece(Eigen::RowVectorXd& row, Eigen::Index j, Eigen::Index jn, double xl, double xr, double x,
             int deriv) const {
    const double h = xr - xl, dm = xr - x, dp = x - xl;
    double am, ap, cm, cp;
    if (deriv == 0) {
      am = dm / h;
      ap = dp / h;
      cm = (dm * dm * dm / h - h * dm) / 6.0;
      cp = (dp * dp * dp / h - h * dp) / 6.0;
    } else {
      am = -1.0 / h;
      ap = 1.0 / h;
      cm = (-3.0 * dm * dm / h + h) / 6.0;
      cp = (3.0 * dp * dp / h - h) / 6.0;
    }
    row[j] += am;
    row[jn] += ap;
    row += cm * fmap_.row(j) + cp * fmap_.row(jn);
  }

  void finalize_from_points(std::span<const double> points) {
    points_.assign(points.begin(), points.end());
    design_.resize(static_cast<Eigen::Index>(points_.size()), knots_.size());
    for (std::size_t i = 0; i < points_.size(); ++i)
      design_.row(static_cast<Eigen::Index>(i)) =
          kind_ == SplineKind::kCyclic ? cyclic_row(points_[i]) : cubic_row(points_[i]);
    null_dim_ = count_null(penalty_);
  }

  static int count_null(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    const double top = std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
    int n = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
      if (std::abs(es.eigenvalues()[i]) < 1e-9 * top) ++n;
    return n;
  }

  SplineKind kind_ = SplineKind::kCubicLinearTail;
  Eigen::VectorXd knots_;
  Eigen::MatrixXd fmap_;  // knot values -> knot second derivatives
  Eigen::MatrixXd design_;
  Eigen::MatrixXd penalty_;
  Eigen::MatrixXd constraint_;  // raw -> centered coefficients (k x k-1)
  std::vector<double> points_;
  std::pair<double, double> range_{0.0, 0.0};
  double period_ = 0.0;
  bool centered_ = false;
  int null_dim_ = 0;
};

namespace detail {
inline std::vector<double> unique_sorted(std::span<const double> points) {
  std::vector<double> u(points.begin(), points.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}
}  // namespace detail

/// Natural cubic regression spline with knots at quantiles of the unique
/// points. Evaluation is linear outside the boundary knots and valid on
/// `extrapolation_range`.
inline SplineBasis build_cubic_basis(std::span<const double> points, int n_basis,
                                     std::pair<double, double> extrapolation_range) {
  if (n_basis < 3) throw ConfigError("cubic spline needs at least 3 basis functions");
  if (points.empty()) throw ConfigError("cubic spline needs construction points");
  auto u = detail::unique_sorted(points);
  if (static_cast<int>(u.size()) < n_basis) throw ConfigError("more basis functions than distinct points");
  const auto k = static_cast<Eigen::Index>(n_basis);
  SplineBasis b;
  b.kind_ = SplineKind::kCubicLinearTail;
  b.knots_.resize(k);
  const auto nu = static_cast<double>(u.size() - 1);
  for (Eigen::Index j = 0; j < k; ++j) {
    // Linear interpolation between order statistics.
    const double pos = nu * static_cast<double>(j) / static_cast<double>(k - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, u.size() - 1);
    b.knots_[j] = u[lo] + (pos - static_cast<double>(lo)) * (u[hi] - u[lo]);
  }
  Eigen::VectorXd h = b.knots_.tail(k - 1) - b.knots_.head(k - 1);
  Eigen::MatrixXd dmat = Eigen::MatrixXd::Zero(k - 2, k);
  Eigen::MatrixXd bmat = Eigen::MatrixXd::Zero(k - 2, k - 2);
  for (Eigen::Index i = 0; i < k - 2; ++i) {
    dmat(i, i) = 1.0 / h[i];
    dmat(i, i + 1) = -1.0 / h[i] - 1.0 / h[i + 1];
    dmat(i, i + 2) = 1.0 / h[i + 1];
    bmat(i, i) = (h[i] + h[i + 1]) / 3.0;
    if (i + 1 < k - 2) {
      bmat(i, i + 1) = h[i + 1] / 6.0;
      bmat(i + 1, i) = h[i + 1] / 6.0;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> bsolve(bmat);
  const Eigen::MatrixXd f = bsolve.solve(dmat);
  b.fmap_ = Eigen::MatrixXd::Zero(k, k);
  b.fmap_.middleRows(1, k - 2) = f;
  b.penalty_ = dmat.transpose() * f;
  b.penalty_ = 0.5 * (b.penalty_ + b.penalty_.transpose());
  b.range_ = {std::min(extrapolation_range.first, u.front()), std::max(extrapolation_range.second, u.back())};
  b.finalize_from_points(points);
  return b;
}

/// Cyclic cubic regression spline with n_basis knots equispaced over
/// [min point, min point + period); f(x) = f(x + period).
inline SplineBasis build_cyclic_basis(std::span<const double> points, int n_basis, double period) {
  if (!(period > 0)) throw ConfigError("cyclic spline period must be positive");
  if (n_basis < 3) throw ConfigError("cyclic spline needs at least 3 basis functions");
  if (points.empty()) throw ConfigError("cyclic spline needs construction points");
  auto u = detail::unique_sorted(points);
  const auto m = static_cast<Eigen::Index>(n_basis);
  SplineBasis b;
  b.kind_ = SplineKind::kCyclic;
  b.period_ = period;
  b.knots_.resize(m);
  const double x0 = std::floor(u.front());
  for (Eigen::Index j = 0; j < m; ++j) b.knots_[j] = x0 + period * static_cast<double>(j) / static_cast<double>(m);
  Eigen::VectorXd h(m);
  for (Eigen::Index j = 0; j < m; ++j) h[j] = (j + 1 < m ? b.knots_[j + 1] : x0 + period) - b.knots_[j];
  Eigen::MatrixXd dmat = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd bmat = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index ip = (i + m - 1) % m, in = (i + 1) % m;
    // Slope continuity at knot i between intervals ip and i.
    bmat(i, ip) += h[ip] / 6.0;
    bmat(i, i) += (h[ip] + h[i]) / 3.0;
    bmat(i, in) += h[i] / 6.0;
    dmat(i, ip) += 1.0 / h[ip];
    dmat(i, i) += -1.0 / h[ip] - 1.0 / h[i];
    dmat(i, in) += 1.0 / h[i];
  }
  Eigen::LDLT<Eigen::MatrixXd> bsolve(bmat);
  b.fmap_ = bsolve.solve(dmat);
  b.penalty_ = dmat.transpose() * b.fmap_;
  b.penalty_ = 0.5 * (b.penalty_ + b.penalty_.transpose());
  b.range_ = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  b.finalize_from_points(points);
  return b;
}

/// Imposes a sum-to-zero constraint over the construction points by
/// reparametrization; the dimension drops by one.
inline SplineBasis center_basis(const SplineBasis& in) {
  if (in.centered_) throw ConfigError("basis is already centered");
  SplineBasis b = in;
  const Eigen::Index k = in.design_.cols();
  const Eigen::VectorXd c = in.design_.colwise().sum().transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
  b.constraint_ = q.rightCols(k - 1);
  b.design_ = in.design_ * b.constraint_;
  b.penalty_ = b.constraint_.transpose() * in.penalty_ * b.constraint_;
  b.penalty_ = 0.5 * (b.penalty_ + b.penalty_.transpose());
  b.centered_ = true;
  b.null_dim_ = SplineBasis::count_null(b.penalty_);
  return b;
}

/// Precomputed penalty structure for the partially improper Gaussian prior
/// of a spline block. The penalty null space gets a proper Normal(0, sd^2)
/// ridge per dimension.
class SplinePrior {
 public:
  SplinePrior() = default;
  explicit SplinePrior(const Eigen::MatrixXd& penalty, double null_space_sd = 10.0)
      : penalty_(penalty), null_sd_(null_space_sd) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(penalty);
    const double top = std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
    std::vector<Eigen::Index> nulls;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      if (es.eigenvalues()[i] < -1e-9 * top) throw ConfigError("penalty is not positive semi-definite");
      if (es.eigenvalues()[i] < 1e-9 * top) nulls.push_back(i);
    }
    rank_ = static_cast<int>(penalty.rows()) - static_cast<int>(nulls.size());
    null_basis_.resize(penalty.rows(), static_cast<Eigen::Index>(nulls.size()));
    for (std::size_t j = 0; j < nulls.size(); ++j)
      null_basis_.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(nulls[j]);
  }

  int rank() const noexcept { return rank_; }
  const Eigen::MatrixXd& null_basis() const noexcept { return null_basis_; }

  double log_density(const Eigen::VectorXd& coefs, const SmoothnessParam& smooth) const {
    if (coefs.size() != penalty_.rows()) throw ConfigError("spline prior: dimension mismatch");
    const double tau = smooth.tau();
    if (!(tau > 0) || !std::isfinite(tau)) return -std::numeric_limits<double>::infinity();
    double out = 0.5 * rank_ * std::log(tau) - 0.5 * tau * coefs.dot(penalty_ * coefs);
    if (null_basis_.cols() > 0) {
      const Eigen::VectorXd proj = null_basis_.transpose() * coefs;
      out += -0.5 * proj.squaredNorm() / (null_sd_ * null_sd_) -
             static_cast<double>(proj.size()) * (std::log(null_sd_) + 0.5 * std::log(2.0 * std::numbers::pi));
    }
    return out;
  }

 private:
  Eigen::MatrixXd penalty_;
  Eigen::MatrixXd null_basis_;
  double null_sd_ = 10.0;
  int rank_ = 0;
};

inline double spline_log_prior(const Eigen::VectorXd& coefs, const Eigen::MatrixXd& penalty,
                               const SmoothnessParam& smooth, double null_space_sd = 10.0) {
  if (!(smooth.sigma > 0)) throw ConfigError("spline prior: tau must be positive");
  return SplinePrior(penalty, null_space_sd).log_density(coefs, smooth);
}

}  // namespace delaycast
