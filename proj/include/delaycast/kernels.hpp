#pragma once

// Adaptive random-walk Metropolis kernels.
//
// All kernels adapt their scale in batches of `window` proposals while the
// caller passes adapting = true, using a diminishing step
// min(1, 4 / sqrt(batch)) on the log scale. Once adapting is false the scale
// is never touched again.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "delaycast/distributions.hpp"

namespace delaycast {

struct AdaptationConfig {
  double target_accept_scalar = 0.44;
  double target_accept_block = 0.234;
  int adaptation_window = 50;
};

/// Uniform(0,1) draw compared against a log acceptance ratio.
template <class Urbg>
bool metropolis_accept(Urbg& rng, double log_ratio) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(std::uniform_real_distribution<double>(0.0, 1.0)(rng)) < log_ratio;
}

class ScaleAdapter {
 public:
  ScaleAdapter() = default;
  ScaleAdapter(double initial_scale, double target, int window)
      : log_scale_(std::log(initial_scale)), target_(target), window_(std::max(1, window)) {}

  double scale() const noexcept { return std::exp(log_scale_); }
  double log_scale() const noexcept { return log_scale_; }
  void set_log_scale(double v) noexcept { log_scale_ = v; }
  double target() const noexcept { return target_; }

  /// Returns true when a batch closed (and the scale moved).
  bool record(bool accepted, bool adapting) {
    ++proposed_;
    if (accepted) ++accepted_;
    if (!adapting) {
      ++post_proposed_;
      if (accepted) ++post_accepted_;
      return false;
    }
    ++batch_n_;
    if (accepted) ++batch_acc_;
    if (batch_n_ < window_) return false;
    ++batches_;
    const double rate = static_cast<double>(batch_acc_) / static_cast<double>(batch_n_);
    const double step = std::min(1.0, 4.0 / std::sqrt(static_cast<double>(batches_)));
    log_scale_ = std::clamp(log_scale_ + step * (rate - target_), -30.0, 30.0);
    batch_n_ = batch_acc_ = 0;
    return true;
  }

  long batches() const noexcept { return batches_; }
  /// Acceptance rate after adaptation stopped (all proposals if it never stopped).
  double acceptance_rate() const noexcept {
    if (post_proposed_ > 0) return static_cast<double>(post_accepted_) / static_cast<double>(post_proposed_);
    return proposed_ > 0 ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
  }

 private:
  double log_scale_ = 0.0;
  double target_ = 0.44;
  int window_ = 50;
  long batch_n_ = 0, batch_acc_ = 0, batches_ = 0;
  long proposed_ = 0, accepted_ = 0, post_proposed_ = 0, post_accepted_ = 0;
};

/// Gaussian random walk on one real coordinate.
class ScalarRwKernel {
 public:
  ScalarRwKernel() = default;
  ScalarRwKernel(double initial_step, double target = 0.44, int window = 50) : adapt_(initial_step, target, window) {}

  template <class Urbg>
  double propose(double u, Urbg& rng) const {
    return u + adapt_.scale() * sample_normal(rng);
  }
  void record(bool accepted, bool adapting) { adapt_.record(accepted, adapting); }

  /// One Metropolis step on x for an unnormalized log-density.
  template <class F, class Urbg>
  bool step(double& x, F&& log_density, Urbg& rng, bool adapting) {
    const double cur = log_density(x);
    const double prop = propose(x, rng);
    const double next = log_density(prop);
    const bool acc = next != kNegInf && metropolis_accept(rng, next - cur);
    if (acc) x = prop;
    record(acc, adapting);
    return acc;
  }

  double scale() const noexcept { return adapt_.scale(); }
  double acceptance_rate() const noexcept { return adapt_.acceptance_rate(); }

 private:
  ScaleAdapter adapt_;
};

/// Blocked Gaussian random walk with an adapted proposal covariance
/// (Haario-style) and a Robbins-Monro global scale.
class BlockRwKernel {
 public:
  BlockRwKernel() = default;
  BlockRwKernel(Eigen::VectorXd initial_sd, double target = 0.234, int window = 50)
      : dim_(initial_sd.size()),
        adapt_(1.0, target, window),
        chol_(initial_sd.asDiagonal()),
        mean_(Eigen::VectorXd::Zero(initial_sd.size())),
        m2_(Eigen::MatrixXd::Zero(initial_sd.size(), initial_sd.size())) {}

  Eigen::Index dim() const noexcept { return dim_; }

  template <class Urbg>
  Eigen::VectorXd propose(const Eigen::VectorXd& u, Urbg& rng) const {
    Eigen::VectorXd e(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) e[i] = sample_normal(rng);
    return u + adapt_.scale() * (chol_ * e);
  }

  /// `current` is the chain's state after the accept/reject decision.
  void record(bool accepted, const Eigen::VectorXd& current, bool adapting) {
    if (adapting) {
      ++n_;
      const Eigen::VectorXd delta = current - mean_;
      mean_ += delta / static_cast<double>(n_);
      m2_ += delta * (current - mean_).transpose();
    }
    if (adapt_.record(accepted, adapting)) maybe_update_covariance();
  }

  template <class F, class Urbg>
  bool step(Eigen::VectorXd& x, F&& log_density, Urbg& rng, bool adapting) {
    const double cur = log_density(x);
    Eigen::VectorXd prop = propose(x, rng);
    const double next = log_density(prop);
    const bool acc = next != kNegInf && metropolis_accept(rng, next - cur);
    if (acc) x = std::move(prop);
    record(acc, x, adapting);
    return acc;
  }

  double scale() const noexcept { return adapt_.scale(); }
  double acceptance_rate() const noexcept { return adapt_.acceptance_rate(); }
  const Eigen::MatrixXd& proposal_cholesky() const noexcept { return chol_; }
  bool using_empirical_covariance() const noexcept { return empirical_; }
  bool fell_back_to_diagonal() const noexcept { return fallback_; }

 private:
  // The covariance estimate is refreshed when the batch count reaches a power
  // of two, from the draws since the previous refresh, so early transients are
  // forgotten.
  void maybe_update_covariance() {
    const long b = adapt_.batches();
    if (b < 8 || (b & (b - 1)) != 0) return;
    const long need = std::max<long>(100, 10 * static_cast<long>(dim_));
    if (n_ < need) return;
    Eigen::MatrixXd cov = m2_ / static_cast<double>(n_ - 1);
    cov = 0.5 * (cov + cov.transpose());
    const double ridge = 1e-10 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
    cov.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    Eigen::MatrixXd l;
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
      l = llt.matrixL();
      fallback_ = false;
    } else {
      const Eigen::VectorXd sd = cov.diagonal().cwiseMax(ridge).cwiseSqrt();
      l = sd.asDiagonal();
      fallback_ = true;
    }
    if (!empirical_) adapt_.set_log_scale(std::log(2.38 / std::sqrt(static_cast<double>(dim_))));
    empirical_ = true;
    chol_ = std::move(l);
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

  Eigen::Index dim_ = 0;
  ScaleAdapter adapt_;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  long n_ = 0;
  bool empirical_ = false;
  bool fallback_ = false;
};

/// Symmetric integer random walk: step = round(Normal(0, w)), a zero step is
/// replaced by +1 or -1 with equal probability.
class DiscreteRwKernel {
 public:
  DiscreteRwKernel() = default;
  DiscreteRwKernel(double initial_width, double target = 0.44, int window = 50)
      : adapt_(std::max(0.5, initial_width), target, window) {}

  template <class Urbg>
  Count propose_step(Urbg& rng) const {
    auto k = static_cast<Count>(std::llround(adapt_.scale() * sample_normal(rng)));
    if (k == 0) k = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
    return k;
  }
  void record(bool accepted, bool adapting) {
    adapt_.record(accepted, adapting);
    if (adapt_.log_scale() < std::log(0.5)) adapt_.set_log_scale(std::log(0.5));
  }

  double scale() const noexcept { return adapt_.scale(); }
  double acceptance_rate() const noexcept { return adapt_.acceptance_rate(); }

 private:
  ScaleAdapter adapt_;
};

}  // namespace delaycast
