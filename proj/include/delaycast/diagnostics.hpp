#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "delaycast/errors.hpp"
#include "delaycast/mcmc.hpp"
#include "delaycast/model.hpp"

namespace delaycast {

struct MpsrfResult {
  double value = 0.0;
  bool ridge_applied = false;
  Eigen::Index dim = 0;
  Eigen::Index n = 0;  // draws per chain
  std::size_t m = 0;   // chains
};

/// Brooks-Gelman multivariate PSRF. Each matrix holds one chain (draws x dims).
inline MpsrfResult mpsrf(const std::vector<Eigen::MatrixXd>& chains) {
  if (chains.size() < 2) throw ConfigError("mpsrf needs at least 2 chains");
  const Eigen::Index n = chains.front().rows(), p = chains.front().cols();
  for (const auto& c : chains)
    if (c.rows() != n || c.cols() != p) throw ConfigError("mpsrf: chains differ in shape");
  if (n < 10) throw ConfigError("mpsrf needs at least 10 draws per chain");
  if (p < 1 || p > n) throw ConfigError("mpsrf: subset dimension must be between 1 and the draws per chain");
  const auto m = static_cast<double>(chains.size());
  const auto nd = static_cast<double>(n);

  Eigen::MatrixXd means(p, static_cast<Eigen::Index>(chains.size()));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t j = 0; j < chains.size(); ++j) {
    const Eigen::VectorXd mu = chains[j].colwise().mean().transpose();
    means.col(static_cast<Eigen::Index>(j)) = mu;
    const Eigen::MatrixXd centered = chains[j].rowwise() - mu.transpose();
    w += centered.transpose() * centered / (nd - 1.0);
  }
  w /= m;
  const Eigen::VectorXd grand = means.rowwise().mean();
  const Eigen::MatrixXd dev = means.colwise() - grand;
  const Eigen::MatrixXd b_over_n = dev * dev.transpose() / (m - 1.0);

  MpsrfResult r;
  r.dim = p;
  r.n = n;
  r.m = chains.size();
  Eigen::LLT<Eigen::MatrixXd> llt(w);
  Eigen::MatrixXd w_use = w;
  if (llt.info() != Eigen::Success || w.diagonal().minCoeff() <= 0.0) {
    const double scale = std::max(1e-12, w.diagonal().cwiseAbs().maxCoeff());
    w_use.diagonal().array() += 1e-8 * scale;
    r.ridge_applied = true;
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(b_over_n, w_use);
  double lmax = 0.0;
  if (ges.info() == Eigen::Success) lmax = std::max(0.0, ges.eigenvalues().maxCoeff());
  r.value = (nd - 1.0) / nd + ((m + 1.0) / m) * lmax;
  return r;
}

/// MPSRF of a subset of stored parameters.
inline MpsrfResult mpsrf(const PosteriorSamples& samples, const std::vector<std::string>& subset) {
  std::vector<Eigen::Index> idx;
  for (const auto& s : subset) idx.push_back(samples.index_of(s));
  std::vector<Eigen::MatrixXd> chains;
  for (const auto& d : samples.draws) {
    Eigen::MatrixXd c(d.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) c.col(static_cast<Eigen::Index>(k)) = d.col(idx[k]);
    chains.push_back(std::move(c));
  }
  return mpsrf(chains);
}

struct EssResult {
  double value = 0.0;
  bool degenerate = false;
};

/// Geyer's initial monotone positive sequence estimate for one chain.
inline EssResult effective_sample_size_chain(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  if (n < 4) return {static_cast<double>(n), true};
  const Eigen::VectorXd c = x.array() - x.mean();
  const double g0 = c.squaredNorm() / static_cast<double>(n);
  if (!(g0 > 0.0) || !std::isfinite(g0)) return {0.0, true};
  auto rho = [&](Eigen::Index k) {
    return c.head(n - k).dot(c.tail(n - k)) / static_cast<double>(n) / g0;
  };
  double sum = 0.0;
  double prev = kPosInf;
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / static_cast<double>(n));
  return {static_cast<double>(n) / tau, false};
}

/// ESS summed across chains; degenerate when every chain is constant.
inline EssResult effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  EssResult out{0.0, true};
  for (const auto& c : chains) {
    const auto r = effective_sample_size_chain(c);
    out.value += r.value;
    out.degenerate = out.degenerate && r.degenerate;
  }
  if (out.degenerate) out.value = 0.0;
  return out;
}

inline EssResult effective_sample_size(const PosteriorSamples& samples, const std::string& label) {
  const auto j = samples.index_of(label);
  std::vector<Eigen::VectorXd> chains;
  for (const auto& d : samples.draws) chains.emplace_back(d.col(j));
  return effective_sample_size(chains);
}

/// Monitored quantities for convergence checks, per chain (draws x quantities):
///   GDM family: log lambda_t and beta_d(t) at every 10th t, log theta, log phi_d;
///   GLM family: log mu_td at every 10th t, log theta_d.
struct ConvergenceQuantities {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;
};

inline ConvergenceQuantities convergence_quantities(const Model& model, const PosteriorSamples& samples,
                                                    std::size_t time_stride = 10) {
  ConvergenceQuantities q;
  const auto& spec = model.spec();
  std::vector<std::size_t> times;
  for (std::size_t t = time_stride; t <= model.n_times(); t += time_stride) times.push_back(t - 1);
  const bool gdm = spec.is_gdm_family();
  for (auto t : times) {
    if (gdm) {
      q.names.push_back("log_lambda[" + std::to_string(t + 1) + "]");
      if (model.has_delay_splines())
        for (std::size_t c = 0; c < model.n_delay_effects(); ++c)
          q.names.push_back("beta[" + std::to_string(t + 1) + "," + std::to_string(c + 1) + "]");
    } else {
      for (std::size_t c = 0; c < model.n_cells(); ++c)
        q.names.push_back("log_mu[" + std::to_string(t + 1) + "," + std::to_string(c + 1) + "]");
    }
  }
  if (!spec.poisson_limit)
    for (std::size_t i = 0; i < model.n_theta(); ++i)
      q.names.push_back(model.n_theta() == 1 ? "log_theta" : "log_theta[" + std::to_string(i + 1) + "]");
  if (model.has_phi())
    for (std::size_t c = 0; c < model.n_delay_effects(); ++c) q.names.push_back("log_phi[" + std::to_string(c + 1) + "]");

  for (std::size_t ch = 0; ch < samples.n_chains(); ++ch) {
    const auto& d = samples.draws[ch];
    const auto& lat = samples.latent_draws[ch];
    Eigen::MatrixXd out(d.rows(), static_cast<Eigen::Index>(q.names.size()));
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const Eigen::VectorXd row = d.row(i).transpose();
      const std::vector<Count> latent(lat.row(i).data(), lat.row(i).data() + lat.cols());
      const ParameterState s = model.unpack(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                            latent);
      Eigen::Index k = 0;
      for (auto t : times) {
        if (gdm) {
          out(i, k++) = model.log_lambda(s, t);
          if (model.has_delay_splines())
            for (std::size_t c = 0; c < model.n_delay_effects(); ++c)
              out(i, k++) = model.beta_basis().design().row(static_cast<Eigen::Index>(t)).dot(s.beta[c]);
        } else {
          for (std::size_t c = 0; c < model.n_cells(); ++c)
            out(i, k++) = spec.variant == Variant::kGLMPlus
                              ? s.latent_logmu(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c))
                              : model.log_mu(s, t, c);
        }
      }
      if (!spec.poisson_limit)
        for (Eigen::Index j = 0; j < s.theta.size(); ++j) out(i, k++) = std::log(s.theta[j]);
      if (model.has_phi())
        for (Eigen::Index j = 0; j < s.phi.size(); ++j) out(i, k++) = std::log(s.phi[j]);
    }
    q.chains.push_back(std::move(out));
  }
  return q;
}

inline MpsrfResult model_mpsrf(const Model& model, const PosteriorSamples& samples, std::size_t time_stride = 10) {
  return mpsrf(convergence_quantities(model, samples, time_stride).chains);
}

}  // namespace delaycast
