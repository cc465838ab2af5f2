#pragma once

// Metropolis-within-Gibbs sampler for the nowcasting models.
//
// One sweep, in order:
//   1. latent integers: y_t for rows not fully observed (GDM, GDM-UR),
//      x_t for every row and a joint (x_t, y_t) shift (GDM-UR);
//      latent log-mean rows followed by a conjugate Inverse-Wishart draw of
//      Sigma (GLM+);
//   2. continuous blocks: iota, alpha, sigma_alpha, eta, sigma_eta, theta,
//      then per delay psi_d, beta_d, sigma_beta_d, phi_d, dispersion spline;
//      reporting-rate blocks last (GDM-UR). GLM variants update iota and psi
//      jointly as one intercept block.
// Positive parameters move on the log scale with the Jacobian included.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "delaycast/distributions.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/kernels.hpp"
#include "delaycast/model.hpp"

namespace delaycast {

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  int n_chains = 4;
  long n_iterations = 20000;
  long burn_in = 10000;
  long thin = 5;
  std::uint64_t seed = 20240601;
  AdaptationConfig adaptation;
  int threads = 0;  // 0 runs one thread per chain
  double init_jitter = 1.0;

  /// 400k iterations, 200k burn-in, thin 20.
  static SamplerConfig long_run() {
    SamplerConfig c;
    c.n_iterations = 400000;
    c.burn_in = 200000;
    c.thin = 20;
    return c;
  }

  long n_kept() const { return (n_iterations - burn_in) / thin; }

  void validate() const {
    if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
    if (burn_in < 0 || burn_in >= n_iterations) throw ConfigError("burn_in must satisfy 0 <= burn_in < n_iterations");
    if (thin < 1) throw ConfigError("thin must be >= 1");
    if (n_kept() < 1) throw ConfigError("no draws would be kept: n_iterations - burn_in < thin");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (adaptation.adaptation_window < 1) throw ConfigError("adaptation_window must be >= 1");
    auto in01 = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in01(adaptation.target_accept_scalar) || !in01(adaptation.target_accept_block))
      throw ConfigError("acceptance targets must lie in (0, 1)");
  }
};

using LatentMatrix = Eigen::Matrix<Count, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BlockReport {
  std::string name;
  double acceptance = 0.0;
  double scale = 0.0;
};

struct ChainReport {
  std::vector<BlockReport> blocks;
  std::vector<double> scales_after_burn_in;  // snapshot at the first post-burn-in sweep
  std::vector<double> scales_at_end;
  int init_attempts = 1;
};

struct PosteriorSamples {
  std::vector<std::string> labels;
  std::vector<std::string> latent_labels;
  std::vector<Eigen::MatrixXd> draws;       // chain: kept x parameter
  std::vector<LatentMatrix> latent_draws;   // chain: kept x latent
  SamplerConfig config;
  std::vector<ChainReport> reports;

  std::size_t n_chains() const { return draws.size(); }
  Eigen::Index n_kept() const { return draws.empty() ? 0 : draws.front().rows(); }

  Eigen::Index index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return static_cast<Eigen::Index>(i);
    throw ConfigError("no parameter named '" + label + "'");
  }
  Eigen::Index latent_index_of(const std::string& label) const {
    for (std::size_t i = 0; i < latent_labels.size(); ++i)
      if (latent_labels[i] == label) return static_cast<Eigen::Index>(i);
    throw ConfigError("no latent variable named '" + label + "'");
  }

  /// All chains' draws of one parameter, chain-major.
  std::vector<double> pooled(const std::string& label) const {
    const auto j = index_of(label);
    std::vector<double> out;
    for (const auto& d : draws)
      for (Eigen::Index i = 0; i < d.rows(); ++i) out.push_back(d(i, j));
    return out;
  }
  std::vector<double> pooled_latent(const std::string& label) const {
    const auto j = latent_index_of(label);
    std::vector<double> out;
    for (const auto& d : latent_draws)
      for (Eigen::Index i = 0; i < d.rows(); ++i) out.push_back(static_cast<double>(d(i, j)));
    return out;
  }
  bool operator==(const PosteriorSamples& o) const {
    if (labels != o.labels || latent_labels != o.latent_labels || draws.size() != o.draws.size() ||
        latent_draws.size() != o.latent_draws.size())
      return false;
    for (std::size_t c = 0; c < draws.size(); ++c)
      if (draws[c].rows() != o.draws[c].rows() || draws[c].cols() != o.draws[c].cols() || draws[c] != o.draws[c])
        return false;
    for (std::size_t c = 0; c < latent_draws.size(); ++c)
      if (latent_draws[c].rows() != o.latent_draws[c].rows() || latent_draws[c] != o.latent_draws[c]) return false;
    return true;
  }
};

/// Per-chain generator derived from the run seed and the chain index.
inline Rng chain_rng(std::uint64_t seed, std::size_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x9e3779b9u};
  return Rng(seq);
}

/// Conjugate draw of Sigma given row residuals r_t (rows of `residuals`)
/// under Sigma ~ Inverse-Wishart(prior.scale, prior.df).
template <class Urbg>
Eigen::MatrixXd sample_sigma_conjugate(Urbg& rng, const Eigen::MatrixXd& residuals, const InverseWishartSpec& prior) {
  const Eigen::MatrixXd scale = prior.scale + residuals.transpose() * residuals;
  return sample_inverse_wishart(rng, scale, prior.df + static_cast<double>(residuals.rows()));
}

enum class Transform { kIdentity, kLog };

class GibbsSampler {
 public:
  GibbsSampler(const Model& model, AdaptationConfig adapt) : m_(model), adapt_(adapt) {
    n_de_ = m_.n_delay_effects();
    n_parts_ = n_de_ + 3;
    cache_.assign(n_parts_, 0.0);
    build_blocks();
    build_latent_kernels();
    auto is_level = [](const std::string& n) {
      return n == "iota" || n == "alpha" || n == "sigma_alpha" || n == "eta" || n == "sigma_eta" || n == "level" ||
             n == "rescale_alpha" || n == "rescale_eta" || n == "intercepts";
    };
    for (std::size_t i = 0; i < blocks_.size(); ++i) (is_level(blocks_[i].name) ? level_blocks_ : other_blocks_).push_back(i);
    for (std::size_t i = 0; i < rescales_.size(); ++i)
      (is_level(rescales_[i].name) ? level_rescales_ : other_rescales_).push_back(i);
  }

  /// Scalar and block acceptance rates and scales.
  std::vector<BlockReport> report() const {
    std::vector<BlockReport> out;
    for (const auto& b : blocks_)
      std::visit([&](const auto& k) { out.push_back({b.name, k.acceptance_rate(), k.scale()}); }, b.kernel);
    auto add_latent = [&](const std::string& name, const std::vector<DiscreteRwKernel>& ks) {
      if (ks.empty()) return;
      double acc = 0.0, sc = 0.0;
      for (const auto& k : ks) {
        acc += k.acceptance_rate();
        sc += k.scale();
      }
      out.push_back({name, acc / static_cast<double>(ks.size()), sc / static_cast<double>(ks.size())});
    };
    add_latent("latent_y", y_kernels_);
    add_latent("latent_x", x_kernels_);
    add_latent("latent_shift", shift_kernels_);
    if (!logmu_kernels_.empty()) {
      double acc = 0.0, sc = 0.0;
      for (const auto& k : logmu_kernels_) {
        acc += k.acceptance_rate();
        sc += k.scale();
      }
      const auto n = static_cast<double>(logmu_kernels_.size());
      out.push_back({"logmu", acc / n, sc / n});
    }
    return out;
  }

  /// Every adapted quantity, flattened, for freeze checks.
  std::vector<double> scales() const {
    std::vector<double> out;
    for (const auto& b : blocks_) {
      std::visit(
          [&](const auto& k) {
            out.push_back(k.scale());
            if constexpr (std::is_same_v<std::decay_t<decltype(k)>, BlockRwKernel>) {
              const auto& l = k.proposal_cholesky();
              out.insert(out.end(), l.data(), l.data() + l.size());
            }
          },
          b.kernel);
    }
    for (const auto& k : y_kernels_) out.push_back(k.scale());
    for (const auto& k : x_kernels_) out.push_back(k.scale());
    for (const auto& k : shift_kernels_) out.push_back(k.scale());
    for (const auto& k : logmu_kernels_) {
      out.push_back(k.scale());
      const auto& l = k.proposal_cholesky();
      out.insert(out.end(), l.data(), l.data() + l.size());
    }
    return out;
  }

  void sweep(ParameterState& s, Rng& rng, bool adapting) {
    const bool gdm = m_.spec().is_gdm_family();
    if (!gdm) {
      latent_phase(s, rng, adapting, true);
      refresh_parts(s, false);
    }
    for (int rep = 0; rep < kLevelRepeats; ++rep) {
      if (gdm) {
        // Latent totals and the level they share are alternated several times.
        latent_phase(s, rng, adapting, rep == 0);
        refresh_parts(s, true);
      }
      for (auto i : level_blocks_) update_block(blocks_[i], s, rng, adapting);
      for (auto i : level_rescales_) update_rescale(rescales_[i], s, rng, adapting);
    }
    if (gdm) refresh_parts(s, false);
    for (auto i : other_blocks_) update_block(blocks_[i], s, rng, adapting);
    for (auto i : other_rescales_) update_rescale(rescales_[i], s, rng, adapting);
  }

  /// Sweeps over the level blocks (iota, alpha, eta and their scales) per
  /// iteration; they only touch the cheap total-count term.
  static constexpr int kLevelRepeats = 4;
  /// Totals with a larger prior mean are left to the random walk alone.
  static constexpr double kMaxProposalMean = 1e12;

 private:
  using Getter = std::function<Eigen::VectorXd(const ParameterState&)>;
  using Setter = std::function<void(ParameterState&, const Eigen::VectorXd&)>;
  using PriorFn = std::function<double(const ParameterState&)>;

  struct Block {
    std::string name;
    Transform transform;
    Getter get;
    Setter set;
    std::vector<std::size_t> parts;
    PriorFn prior;
    std::variant<ScalarRwKernel, BlockRwKernel> kernel;
  };

  // Joint move (log sigma, coefs) -> (log sigma + e, exp(e) coefs) that
  // travels along the prior funnel of a penalized spline block.
  struct Rescale {
    std::string name;
    std::function<double&(ParameterState&)> sigma;
    std::function<Eigen::VectorXd&(ParameterState&)> coefs;
    std::vector<std::size_t> parts;
    PriorFn prior;
    ScalarRwKernel kernel;
  };

  void add_rescale(std::string name, std::function<double&(ParameterState&)> sigma,
                   std::function<Eigen::VectorXd&(ParameterState&)> coefs, std::vector<std::size_t> parts,
                   PriorFn prior) {
    for (auto p : parts) part_used_[p] = true;
    rescales_.push_back({std::move(name), std::move(sigma), std::move(coefs), std::move(parts), std::move(prior),
                         ScalarRwKernel(0.2, adapt_.target_accept_scalar, adapt_.adaptation_window)});
  }

  void update_rescale(Rescale& r, ParameterState& s, Rng& rng, bool adapting) {
    double& sg = r.sigma(s);
    Eigen::VectorXd& c = r.coefs(s);
    const double sg0 = sg;
    const Eigen::VectorXd c0 = c;
    double cur = r.prior(s) + std::log(sg0);
    for (auto p : r.parts) cur += cache_[p];
    const double e = r.kernel.propose(0.0, rng);
    sg = sg0 * std::exp(e);
    c = c0 * std::exp(e);
    bool acc = false;
    const double pr = r.prior(s);
    if (std::isfinite(pr) && std::isfinite(sg) && sg > 0) {
      double next = pr + std::log(sg) + e * static_cast<double>(c.size());
      scratch_.clear();
      for (auto p : r.parts) {
        const double v = compute_part(p, s);
        scratch_.push_back(v);
        next += v;
      }
      acc = next != kNegInf && !std::isnan(next) && metropolis_accept(rng, next - cur);
    }
    if (acc) {
      for (std::size_t i = 0; i < r.parts.size(); ++i) cache_[r.parts[i]] = scratch_[i];
    } else {
      sg = sg0;
      c = c0;
    }
    r.kernel.record(acc, adapting);
  }

  /// Recomputes cached likelihood parts; level_only limits this to the parts
  /// read by the level blocks.
  void refresh_parts(const ParameterState& s, bool level_only) {
    for (std::size_t p = 0; p < n_parts_; ++p) {
      if (!part_used_[p]) continue;
      const bool level = p == part_total() || p == part_report() || p == part_mvn();
      if (level_only && !level) continue;
      cache_[p] = compute_part(p, s);
    }
  }

  std::size_t part_total() const { return 0; }
  std::size_t part_delay(std::size_t c) const { return 1 + c; }
  std::size_t part_report() const { return n_de_ + 1; }
  std::size_t part_mvn() const { return n_de_ + 2; }

  double compute_part(std::size_t p, const ParameterState& s) const {
    if (p == part_total()) return m_.total_terms(s);
    if (p == part_report()) return m_.reporting_terms(s);
    if (p == part_mvn()) return m_.mvn_terms(s);
    return m_.delay_terms(s, p - 1);
  }

  void add_block(std::string name, Transform tr, Getter get, Setter set, std::vector<std::size_t> parts, PriorFn prior,
                 double init_sd, Eigen::Index dim) {
    for (auto p : parts) part_used_[p] = true;
    Block b{std::move(name), tr, std::move(get), std::move(set), std::move(parts), std::move(prior), ScalarRwKernel()};
    if (dim == 1)
      b.kernel = ScalarRwKernel(init_sd, adapt_.target_accept_scalar, adapt_.adaptation_window);
    else
      b.kernel = BlockRwKernel(Eigen::VectorXd::Constant(dim, init_sd), adapt_.target_accept_block,
                               adapt_.adaptation_window);
    blocks_.push_back(std::move(b));
  }

  static Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

  void build_blocks() {
    part_used_.assign(n_parts_, false);
    const auto& spec = m_.spec();
    const bool gdm = spec.is_gdm_family();
    const bool plus = spec.variant == Variant::kGLMPlus;
    std::vector<std::size_t> level_parts;
    if (gdm)
      level_parts = {part_total()};
    else if (plus)
      level_parts = {part_mvn()};
    else
      for (std::size_t c = 0; c < n_de_; ++c) level_parts.push_back(part_delay(c));
    const Model& m = m_;

    if (gdm) {
      add_block("iota", Transform::kIdentity, [](const ParameterState& s) { return scalar(s.iota); },
                [](ParameterState& s, const Eigen::VectorXd& v) { s.iota = v[0]; }, level_parts,
                [&m](const ParameterState& s) { return m.log_prior_iota(s); }, 0.05, 1);
    } else {
      const auto n = static_cast<Eigen::Index>(n_de_) + 1;
      add_block(
          "intercepts", Transform::kIdentity,
          [n](const ParameterState& s) {
            Eigen::VectorXd v(n);
            v[0] = s.iota;
            v.tail(n - 1) = s.psi;
            return v;
          },
          [n](ParameterState& s, const Eigen::VectorXd& v) {
            s.iota = v[0];
            s.psi = v.tail(n - 1);
          },
          level_parts,
          [&m, nde = n_de_](const ParameterState& s) {
            double out = m.log_prior_iota(s);
            for (std::size_t c = 0; c < nde; ++c) out += m.log_prior_psi(s, c);
            return out;
          },
          0.05, n);
    }
    add_block("alpha", Transform::kIdentity, [](const ParameterState& s) { return s.alpha; },
              [](ParameterState& s, const Eigen::VectorXd& v) { s.alpha = v; }, level_parts,
              [&m](const ParameterState& s) { return m.log_prior_alpha(s); }, 0.05, m.alpha_basis().dim());
    add_block("sigma_alpha", Transform::kLog, [](const ParameterState& s) { return scalar(s.sigma_alpha); },
              [](ParameterState& s, const Eigen::VectorXd& v) { s.sigma_alpha = v[0]; }, {},
              [&m](const ParameterState& s) {
                return m.log_prior_alpha(s) + log_prior_density(m.spec().sigma_alpha_prior, s.sigma_alpha);
              },
              0.3, 1);
    add_block("eta", Transform::kIdentity, [](const ParameterState& s) { return s.eta; },
              [](ParameterState& s, const Eigen::VectorXd& v) { s.eta = v; }, level_parts,
              [&m](const ParameterState& s) { return m.log_prior_eta(s); }, 0.05, m.eta_basis().dim());
    add_block("sigma_eta", Transform::kLog, [](const ParameterState& s) { return scalar(s.sigma_eta); },
              [](ParameterState& s, const Eigen::VectorXd& v) { s.sigma_eta = v[0]; }, {},
              [&m](const ParameterState& s) {
                return m.log_prior_eta(s) + log_prior_density(m.spec().sigma_eta_prior, s.sigma_eta);
              },
              0.3, 1);
    {
      const Eigen::Index na = m.alpha_basis().dim(), ne = m.eta_basis().dim();
      add_block(
          "level", Transform::kIdentity,
          [na, ne](const ParameterState& s) {
            Eigen::VectorXd v(1 + na + ne);
            v << s.iota, s.alpha, s.eta;
            return v;
          },
          [na, ne](ParameterState& s, const Eigen::VectorXd& v) {
            s.iota = v[0];
            s.alpha = v.segment(1, na);
            s.eta = v.segment(1 + na, ne);
          },
          level_parts,
          [&m](const ParameterState& s) { return m.log_prior_iota(s) + m.log_prior_alpha(s) + m.log_prior_eta(s); },
          0.02, 1 + na + ne);
    }
    add_rescale("rescale_alpha", [](ParameterState& s) -> double& { return s.sigma_alpha; },
                [](ParameterState& s) -> Eigen::VectorXd& { return s.alpha; }, level_parts,
                [&m](const ParameterState& s) {
                  return m.log_prior_alpha(s) + log_prior_density(m.spec().sigma_alpha_prior, s.sigma_alpha);
                });
    add_rescale("rescale_eta", [](ParameterState& s) -> double& { return s.sigma_eta; },
                [](ParameterState& s) -> Eigen::VectorXd& { return s.eta; }, level_parts,
                [&m](const ParameterState& s) {
                  return m.log_prior_eta(s) + log_prior_density(m.spec().sigma_eta_prior, s.sigma_eta);
                });
    if (gdm)
      add_block("theta", Transform::kLog, [](const ParameterState& s) { return scalar(s.theta[0]); },
                [](ParameterState& s, const Eigen::VectorXd& v) { s.theta[0] = v[0]; }, {part_total()},
                [&m](const ParameterState& s) { return log_prior_density(m.spec().theta_prior, s.theta[0]); }, 0.1,
                1);

    for (std::size_t c = 0; c < n_de_; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      const std::string tag = "[" + std::to_string(c + 1) + "]";
      const std::vector<std::size_t> dparts = plus ? std::vector<std::size_t>{part_mvn()}
                                                   : std::vector<std::size_t>{part_delay(c)};
      if (gdm)
        add_block("psi" + tag, Transform::kIdentity, [ci](const ParameterState& s) { return scalar(s.psi[ci]); },
                  [ci](ParameterState& s, const Eigen::VectorXd& v) { s.psi[ci] = v[0]; }, dparts,
                  [&m, c](const ParameterState& s) { return m.log_prior_psi(s, c); }, 0.1, 1);
      if (m.has_delay_splines()) {
        add_block("beta" + tag, Transform::kIdentity, [c](const ParameterState& s) { return s.beta[c]; },
                  [c](ParameterState& s, const Eigen::VectorXd& v) { s.beta[c] = v; }, dparts,
                  [&m, c](const ParameterState& s) { return m.log_prior_beta(s, c); }, 0.1, m.beta_basis().dim());
        add_block("sigma_beta" + tag, Transform::kLog,
                  [ci](const ParameterState& s) { return scalar(s.sigma_beta[ci]); },
                  [ci](ParameterState& s, const Eigen::VectorXd& v) { s.sigma_beta[ci] = v[0]; }, {},
                  [&m, c, ci](const ParameterState& s) {
                    return m.log_prior_beta(s, c) + log_prior_density(m.spec().sigma_beta_prior, s.sigma_beta[ci]);
                  },
                  0.3, 1);
        if (gdm) {
          const Eigen::Index nb = m.beta_basis().dim();
          add_block(
              "delay" + tag, Transform::kIdentity,
              [c, ci, nb](const ParameterState& s) {
                Eigen::VectorXd v(1 + nb);
                v << s.psi[ci], s.beta[c];
                return v;
              },
              [c, ci, nb](ParameterState& s, const Eigen::VectorXd& v) {
                s.psi[ci] = v[0];
                s.beta[c] = v.tail(nb);
              },
              dparts, [&m, c](const ParameterState& s) { return m.log_prior_psi(s, c) + m.log_prior_beta(s, c); },
              0.05, 1 + nb);
        }
        add_rescale("rescale_beta" + tag, [ci](ParameterState& s) -> double& { return s.sigma_beta[ci]; },
                    [c](ParameterState& s) -> Eigen::VectorXd& { return s.beta[c]; }, dparts,
                    [&m, c, ci](const ParameterState& s) {
                      return m.log_prior_beta(s, c) +
                             log_prior_density(m.spec().sigma_beta_prior, s.sigma_beta[ci]);
                    });
      }
      if (!gdm && !spec.poisson_limit)
        add_block("theta" + tag, Transform::kLog, [ci](const ParameterState& s) { return scalar(s.theta[ci]); },
                  [ci](ParameterState& s, const Eigen::VectorXd& v) { s.theta[ci] = v[0]; }, {part_delay(c)},
                  [&m, ci](const ParameterState& s) { return log_prior_density(m.spec().theta_prior, s.theta[ci]); },
                  0.1, 1);
      if (m.has_phi())
        add_block("phi" + tag, Transform::kLog, [ci](const ParameterState& s) { return scalar(s.phi[ci]); },
                  [ci](ParameterState& s, const Eigen::VectorXd& v) { s.phi[ci] = v[0]; }, {part_delay(c)},
                  [&m, ci](const ParameterState& s) { return log_prior_density(m.spec().phi_prior, s.phi[ci]); },
                  0.2, 1);
      if (spec.dispersion_spline) {
        add_block("disp" + tag, Transform::kIdentity, [c](const ParameterState& s) { return s.disp[c]; },
                  [c](ParameterState& s, const Eigen::VectorXd& v) { s.disp[c] = v; }, {part_delay(c)},
                  [&m, c](const ParameterState& s) { return m.log_prior_disp(s, c); }, 0.1,
                  m.dispersion_basis().dim());
        add_block("sigma_disp" + tag, Transform::kLog,
                  [ci](const ParameterState& s) { return scalar(s.sigma_disp[ci]); },
                  [ci](ParameterState& s, const Eigen::VectorXd& v) { s.sigma_disp[ci] = v[0]; }, {},
                  [&m, c, ci](const ParameterState& s) {
                    return m.log_prior_disp(s, c) +
                           log_prior_density(m.spec().sigma_dispersion_prior, s.sigma_disp[ci]);
                  },
                  0.3, 1);
      }
    }

    if (spec.variant == Variant::kGDMUR && !spec.fixed_reporting_rate) {
      add_block("pi_intercept", Transform::kIdentity, [](const ParameterState& s) { return scalar(s.pi_intercept); },
                [](ParameterState& s, const Eigen::VectorXd& v) { s.pi_intercept = v[0]; }, {part_report()},
                [&m](const ParameterState& s) {
                  return log_prior_density(*m.spec().reporting_intercept_prior, s.pi_intercept);
                },
                0.1, 1);
      if (spec.reporting_spline) {
        add_block("pi_coefs", Transform::kIdentity, [](const ParameterState& s) { return s.pi_coefs; },
                  [](ParameterState& s, const Eigen::VectorXd& v) { s.pi_coefs = v; }, {part_report()},
                  [&m](const ParameterState& s) { return m.log_prior_pi_coefs(s); }, 0.1,
                  m.reporting_basis().dim());
        add_block("sigma_pi", Transform::kLog, [](const ParameterState& s) { return scalar(s.sigma_pi); },
                  [](ParameterState& s, const Eigen::VectorXd& v) { s.sigma_pi = v[0]; }, {},
                  [&m](const ParameterState& s) {
                    return m.log_prior_pi_coefs(s) + log_prior_density(m.spec().sigma_reporting_prior, s.sigma_pi);
                  },
                  0.3, 1);
      }
    }
  }

  void build_latent_kernels() {
    const auto& spec = m_.spec();
    const double w = adapt_.target_accept_scalar;
    const int win = adapt_.adaptation_window;
    auto width_for = [&](std::size_t t) {
      const auto lo = static_cast<double>(m_.triangle().observed_sum(t));
      return std::max(1.0, 0.5 * std::sqrt(lo + 1.0));
    };
    if (spec.is_gdm_family())
      for (auto t : m_.latent_rows()) y_kernels_.emplace_back(width_for(t), w, win);
    if (spec.variant == Variant::kGDMUR) {
      for (std::size_t t = 0; t < m_.n_times(); ++t) x_kernels_.emplace_back(width_for(t), w, win);
      for (auto t : m_.latent_rows()) shift_kernels_.emplace_back(width_for(t), w, win);
    }
    if (spec.variant == Variant::kGLMPlus)
      for (std::size_t t = 0; t < m_.n_times(); ++t)
        logmu_kernels_.emplace_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m_.n_cells()), 0.1),
                                    adapt_.target_accept_block, win);
  }

  static Eigen::VectorXd to_u(const Eigen::VectorXd& x, Transform tr) {
    return tr == Transform::kLog ? Eigen::VectorXd(x.array().log()) : x;
  }
  static Eigen::VectorXd from_u(const Eigen::VectorXd& u, Transform tr) {
    return tr == Transform::kLog ? Eigen::VectorXd(u.array().exp()) : u;
  }
  static double log_jacobian(const Eigen::VectorXd& u, Transform tr) { return tr == Transform::kLog ? u.sum() : 0.0; }

  void update_block(Block& b, ParameterState& s, Rng& rng, bool adapting) {
    const Eigen::VectorXd x0 = b.get(s);
    const Eigen::VectorXd u0 = to_u(x0, b.transform);
    double cur = b.prior(s) + log_jacobian(u0, b.transform);
    for (auto p : b.parts) cur += cache_[p];

    Eigen::VectorXd u1 = std::visit(
        [&](auto& k) -> Eigen::VectorXd {
          if constexpr (std::is_same_v<std::decay_t<decltype(k)>, ScalarRwKernel>)
            return scalar(k.propose(u0[0], rng));
          else
            return k.propose(u0, rng);
        },
        b.kernel);
    const Eigen::VectorXd x1 = from_u(u1, b.transform);
    bool acc = false;
    if (x1.allFinite() && (b.transform != Transform::kLog || (x1.array() > 0.0).all())) {
      b.set(s, x1);
      const double pr = b.prior(s);
      if (pr != kNegInf && std::isfinite(pr)) {
        double next = pr + log_jacobian(u1, b.transform);
        scratch_.clear();
        for (auto p : b.parts) {
          const double v = compute_part(p, s);
          scratch_.push_back(v);
          next += v;
        }
        acc = next != kNegInf && !std::isnan(next) && metropolis_accept(rng, next - cur);
      }
      if (acc) {
        for (std::size_t i = 0; i < b.parts.size(); ++i) cache_[b.parts[i]] = scratch_[i];
      } else {
        b.set(s, x0);
      }
    }
    std::visit(
        [&](auto& k) {
          if constexpr (std::is_same_v<std::decay_t<decltype(k)>, ScalarRwKernel>)
            k.record(acc, adapting);
          else
            k.record(acc, acc ? u1 : u0, adapting);
        },
        b.kernel);
  }

  void latent_phase(ParameterState& s, Rng& rng, bool adapting, bool prepare) {
    const auto& spec = m_.spec();
    if (spec.is_gdm_family()) {
      ll_ = m_.log_lambda_vector(s);
      const bool ur = spec.variant == Variant::kGDMUR;
      if (prepare) prepare_rows(s);
      const double theta = s.theta[0];
      auto nb = [&](Count v, std::size_t t) {
        return log_pmf_neg_binomial(v, {std::exp(ll_[static_cast<Eigen::Index>(t)]), theta});
      };
      auto rows = [&](std::size_t t, Count y) {
        return m_.row_delay_terms(t, y, std::span<const double>(eta_rows_.data() + t * n_de_, n_de_),
                                  std::span<const double>(lphi_rows_.data() + t * n_de_, n_de_));
      };
      latent_updates(s, rng, adapting, ur, nb, rows);
      return;
    }
    latent_glmplus(s, rng, adapting);
  }

  void prepare_rows(const ParameterState& s) {
    const std::size_t T = m_.n_times();
    {
      eta_rows_.assign(T * n_de_, 0.0);
      lphi_rows_.assign(T * n_de_, 0.0);
      for (std::size_t c = 0; c < n_de_; ++c) {
        const Eigen::VectorXd e = m_.delay_predictor_vector(s, c);
        for (std::size_t t = 0; t < T; ++t) eta_rows_[t * n_de_ + c] = e[static_cast<Eigen::Index>(t)];
        if (m_.has_phi()) {
          const Eigen::VectorXd lp = m_.log_phi_vector(s, c);
          for (std::size_t t = 0; t < T; ++t) lphi_rows_[t * n_de_ + c] = lp[static_cast<Eigen::Index>(t)];
        }
      }
      if (m_.spec().variant == Variant::kGDMUR) {
        pi_.resize(T);
        for (std::size_t t = 0; t < T; ++t) pi_[t] = m_.reporting_rate(s, t);
      }
    }
  }

  template <class Nb, class Rows>
  void latent_updates(ParameterState& s, Rng& rng, bool adapting, bool ur, Nb&& nb, Rows&& rows) {
    const std::size_t T = m_.n_times();
    {
      const auto& lr = m_.latent_rows();
      for (std::size_t i = 0; i < lr.size(); ++i) {
        const std::size_t t = lr[i];
        const Count lo = m_.triangle().observed_sum(t);
        auto target = [&](Count y) {
          return (ur ? log_pmf_binomial(y, s.latent_x[t], pi_[t]) : nb(y, t)) + rows(t, y);
        };
        auto& k = y_kernels_[i];
        const Count y1 = s.latent_y[t] + k.propose_step(rng);
        bool acc = false;
        if (y1 >= lo && (!ur || y1 <= s.latent_x[t])) {
          const double next = target(y1);
          acc = next != kNegInf && metropolis_accept(rng, next - target(s.latent_y[t]));
        }
        if (acc) s.latent_y[t] = y1;
        k.record(acc, adapting);

        // Independence move from the total's conditional prior, corrected by
        // the delay terms. Exact Gibbs for rows without observed cells.
        const double mean = ur ? 0.0 : std::exp(ll_[static_cast<Eigen::Index>(t)]);
        if (ur || mean < kMaxProposalMean) {
          const Count y2 = ur ? sample_binomial(rng, s.latent_x[t], pi_[t])
                              : sample_neg_binomial(rng, {mean, s.theta[0]});
          if (y2 >= lo) {
            const double r = rows(t, y2);
            if (r != kNegInf && metropolis_accept(rng, r - rows(t, s.latent_y[t]))) s.latent_y[t] = y2;
          }
        }
      }
      if (ur) {
        for (std::size_t t = 0; t < T; ++t) {
          auto target = [&](Count x) { return nb(x, t) + log_pmf_binomial(s.latent_y[t], x, pi_[t]); };
          auto& k = x_kernels_[t];
          const Count x1 = s.latent_x[t] + k.propose_step(rng);
          bool acc = false;
          if (x1 >= s.latent_y[t]) {
            const double next = target(x1);
            acc = next != kNegInf && metropolis_accept(rng, next - target(s.latent_x[t]));
          }
          if (acc) s.latent_x[t] = x1;
          k.record(acc, adapting);

          // x - y given y is NB with size theta + y.
          const double lambda = std::exp(ll_[static_cast<Eigen::Index>(t)]), theta = s.theta[0];
          if (lambda < kMaxProposalMean) {
            const double y = static_cast<double>(s.latent_y[t]);
            const double missed = (theta + y) * lambda * (1.0 - pi_[t]) / (theta + lambda * pi_[t]);
            s.latent_x[t] = s.latent_y[t] + sample_neg_binomial(rng, {missed, theta + y});
          }
        }
        for (std::size_t i = 0; i < lr.size(); ++i) {
          const std::size_t t = lr[i];
          const Count lo = m_.triangle().observed_sum(t);
          auto target = [&](Count x, Count y) { return nb(x, t) + log_pmf_binomial(y, x, pi_[t]) + rows(t, y); };
          auto& k = shift_kernels_[i];
          const Count step = k.propose_step(rng);
          const Count x1 = s.latent_x[t] + step, y1 = s.latent_y[t] + step;
          bool acc = false;
          if (y1 >= lo) {
            const double next = target(x1, y1);
            acc = next != kNegInf && metropolis_accept(rng, next - target(s.latent_x[t], s.latent_y[t]));
          }
          if (acc) {
            s.latent_x[t] = x1;
            s.latent_y[t] = y1;
          }
          k.record(acc, adapting);
        }
      }
    }
  }

  void latent_glmplus(ParameterState& s, Rng& rng, bool adapting) {
    const std::size_t T = m_.n_times();
    if (m_.spec().variant == Variant::kGLMPlus) {
      const Eigen::MatrixXd means = m_.glmplus_means(s);
      Eigen::LLT<Eigen::MatrixXd> chol(s.sigma);
      const auto K = static_cast<Eigen::Index>(m_.n_cells());
      for (std::size_t t = 0; t < T; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        const Eigen::VectorXd mean = means.row(ti).transpose();
        const std::size_t len = m_.triangle().observed_prefix(t);
        auto target = [&](const Eigen::VectorXd& row) {
          double out = log_pdf_mvn(row, mean, chol);
          for (std::size_t c = 0; c < len; ++c) {
            const Count z = m_.triangle().cell(t, c);
            out += m_.glm_cell_term(z, row[static_cast<Eigen::Index>(c)], m_.theta(s, c),
                                    std::lgamma(static_cast<double>(z) + 1.0));
          }
          return out;
        };
        Eigen::VectorXd row = s.latent_logmu.row(ti).transpose();
        logmu_kernels_[t].step(row, target, rng, adapting);
        s.latent_logmu.row(ti) = row.transpose();
      }
      const Eigen::MatrixXd resid = s.latent_logmu - means;
      s.sigma = sample_sigma_conjugate(rng, resid, m_.iw_prior());
      (void)K;
    }
  }

  const Model& m_;
  AdaptationConfig adapt_;
  std::size_t n_de_ = 0, n_parts_ = 0;
  std::vector<Block> blocks_;
  std::vector<Rescale> rescales_;
  std::vector<std::size_t> level_blocks_, other_blocks_, level_rescales_, other_rescales_;
  std::vector<bool> part_used_;
  std::vector<double> cache_, scratch_;
  std::vector<DiscreteRwKernel> y_kernels_, x_kernels_, shift_kernels_;
  std::vector<BlockRwKernel> logmu_kernels_;
  Eigen::VectorXd ll_;
  std::vector<double> eta_rows_, lphi_rows_, pi_;
};

struct ChainOutput {
  Eigen::MatrixXd draws;
  LatentMatrix latent;
  ChainReport report;
  ParameterState final_state;
};

inline ChainOutput run_single_chain(const Model& model, const SamplerConfig& cfg, std::size_t chain) {
  Rng rng = chain_rng(cfg.seed, chain);
  ParameterState s;
  int attempts = 0;
  double lp = kNegInf;
  for (; attempts < 100; ++attempts) {
    s = model.initial_state(rng, cfg.init_jitter);
    lp = model.log_posterior(s);
    if (std::isfinite(lp)) break;
  }
  if (!std::isfinite(lp)) {
    const double lpr = model.log_prior(s);
    throw InitializationError("chain " + std::to_string(chain) +
                              ": log-posterior not finite after 100 initial draws (log-prior " + std::to_string(lpr) +
                              ", log-likelihood " + std::to_string(model.log_likelihood(s)) + ")");
  }
  GibbsSampler sampler(model, cfg.adaptation);
  const ParameterLayout layout = model.layout();
  ChainOutput out;
  out.report.init_attempts = attempts + 1;
  const long kept = cfg.n_kept();
  out.draws.resize(kept, static_cast<Eigen::Index>(layout.labels.size()));
  out.latent.resize(kept, static_cast<Eigen::Index>(layout.latent_labels.size()));
  long row = 0;
  for (long it = 0; it < cfg.n_iterations; ++it) {
    sampler.sweep(s, rng, it < cfg.burn_in);
    if (it == cfg.burn_in) out.report.scales_after_burn_in = sampler.scales();
    if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 && row < kept) {
      out.draws.row(row) = model.pack(s).transpose();
      const auto lat = model.pack_latent(s);
      for (std::size_t j = 0; j < lat.size(); ++j) out.latent(row, static_cast<Eigen::Index>(j)) = lat[j];
      ++row;
    }
  }
  out.report.scales_at_end = sampler.scales();
  out.report.blocks = sampler.report();
  out.final_state = std::move(s);
  return out;
}

inline PosteriorSamples run_chains(const Model& model, const SamplerConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_chains);
  std::vector<ChainOutput> outs(n);
  std::vector<std::exception_ptr> errors(n);
  const std::size_t n_threads = std::min<std::size_t>(n, cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      try {
        outs[c] = run_single_chain(model, cfg, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  PosteriorSamples ps;
  const ParameterLayout layout = model.layout();
  ps.labels = layout.labels;
  ps.latent_labels = layout.latent_labels;
  ps.config = cfg;
  for (auto& o : outs) {
    ps.draws.push_back(std::move(o.draws));
    ps.latent_draws.push_back(std::move(o.latent));
    ps.reports.push_back(std::move(o.report));
  }
  return ps;
}

inline PosteriorSamples run_chains(const ModelSpec& spec, const ReportingTriangle& tri, const SamplerConfig& cfg) {
  cfg.validate();
  const Model model(spec, tri);
  return run_chains(model, cfg);
}

}  // namespace delaycast
