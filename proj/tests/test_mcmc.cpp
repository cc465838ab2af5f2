#include <gtest/gtest.h>

#include <cmath>

#include "delaycast/diagnostics.hpp"
#include "delaycast/mcmc.hpp"
#include "test_support.hpp"

namespace dc = delaycast;
namespace dt = delaycast::testing;

namespace {

Eigen::VectorXd as_vector(const std::vector<double>& x) {
  return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
}

// Monte Carlo standard error of the mean of x from its autocorrelation-adjusted ESS.
double mcse(const std::vector<double>& x) {
  const auto ess = dc::effective_sample_size({as_vector(x)});
  return std::sqrt(dt::var_of(x) / ess.value);
}

dc::ModelSpec small_spec() {
  dc::ModelSpec s;
  s.delay_horizon = 2;
  s.alpha_basis = 4;
  s.eta_basis = 4;
  s.beta_basis = 4;
  s.season_period = 7.0;
  s.max_forecast_horizon = 5;
  return s;
}

dc::ReportingTriangle small_triangle(unsigned seed) {
  dc::Rng rng(seed);
  std::poisson_distribution<dc::Count> p(6.0);
  std::vector<dc::Count> cells(16 * 3);
  for (auto& c : cells) c = p(rng);
  const auto last = dc::collapsed_last_delays(2, 4);
  return dc::apply_staircase(16, cells, last, 16);
}

dc::SamplerConfig short_run(long iterations, long burn_in, long thin) {
  dc::SamplerConfig c;
  c.n_chains = 2;
  c.n_iterations = iterations;
  c.burn_in = burn_in;
  c.thin = thin;
  c.seed = 99;
  c.threads = 1;
  return c;
}

std::vector<Eigen::MatrixXd> mvn_chains(dc::Rng& rng, std::size_t m, Eigen::Index n, Eigen::Index p) {
  std::vector<Eigen::MatrixXd> chains;
  for (std::size_t j = 0; j < m; ++j) {
    Eigen::MatrixXd c(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < p; ++k) c(i, k) = dc::sample_normal(rng);
    chains.push_back(c);
  }
  return chains;
}

}  // namespace

TEST(ScalarKernel, AcceptanceReachesTarget) {
  dc::Rng rng(1);
  dc::ScalarRwKernel k(0.1);
  auto logd = [](double x) { return -0.5 * x * x; };
  double x = 0.0;
  for (int i = 0; i < 5000; ++i) k.step(x, logd, rng, true);
  for (int i = 0; i < 10000; ++i) k.step(x, logd, rng, false);
  EXPECT_NEAR(k.acceptance_rate(), 0.44, 0.05);
}

TEST(ScalarKernel, StandardNormalVariance) {
  dc::Rng rng(2);
  dc::ScalarRwKernel k(1.0);
  auto logd = [](double x) { return -0.5 * x * x; };
  double x = 0.0;
  for (int i = 0; i < 5000; ++i) k.step(x, logd, rng, true);
  std::vector<double> sq;
  for (int i = 0; i < 200000; ++i) {
    k.step(x, logd, rng, false);
    sq.push_back(x * x);
  }
  EXPECT_NEAR(dt::mean_of(sq), 1.0, 3 * mcse(sq));
}

TEST(ScalarKernel, LogScaleKeepsPositiveSupport) {
  // theta = exp(u) with the Jacobian: Exponential(1) target.
  dc::Rng rng(3);
  dc::ScalarRwKernel k(1.0);
  auto logd = [](double u) { return u - std::exp(u); };
  double u = 0.0;
  std::vector<double> theta;
  for (int i = 0; i < 100000; ++i) {
    k.step(u, logd, rng, i < 5000);
    ASSERT_GT(std::exp(u), 0.0);
    if (i >= 5000) theta.push_back(std::exp(u));
  }
  EXPECT_NEAR(dt::mean_of(theta), 1.0, 3 * mcse(theta));
}

TEST(BlockKernel, OneDimensionalBlockActsAsScalar) {
  dc::Rng rng(4);
  dc::BlockRwKernel k(Eigen::VectorXd::Constant(1, 0.5), 0.44);
  auto logd = [](const Eigen::VectorXd& v) { return -0.5 * (v[0] - 2.0) * (v[0] - 2.0) / 4.0; };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < 5000; ++i) k.step(x, logd, rng, true);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) {
    k.step(x, logd, rng, false);
    xs.push_back(x[0]);
  }
  EXPECT_NEAR(dt::mean_of(xs), 2.0, 3 * mcse(xs));
  EXPECT_NEAR(k.acceptance_rate(), 0.44, 0.05);
}

TEST(BlockKernel, GaussianConjugatePosterior) {
  // Coefficients with prior N(0, tau^-1 I) and Gaussian observations y = X c + e:
  // the posterior is N(A^-1 X'y / s2, A^-1), A = X'X / s2 + tau I.
  dc::Rng rng(5);
  const Eigen::Index n = 30, p = 3;
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) X.row(i) << 1.0, i / 10.0, std::sin(i / 3.0);
  const Eigen::Vector3d truth(0.5, -1.0, 2.0);
  const double s2 = 0.25, tau = 0.1;
  Eigen::VectorXd y = X * truth;
  for (auto& v : y) v += dc::sample_normal(rng, 0.0, std::sqrt(s2));
  const Eigen::MatrixXd A = X.transpose() * X / s2 + tau * Eigen::MatrixXd::Identity(p, p);
  const Eigen::VectorXd post_mean = A.ldlt().solve(X.transpose() * y / s2);

  auto logd = [&](const Eigen::VectorXd& c) {
    return -0.5 * (y - X * c).squaredNorm() / s2 - 0.5 * tau * c.squaredNorm();
  };
  dc::BlockRwKernel k(Eigen::VectorXd::Constant(p, 0.1));
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < 20000; ++i) k.step(c, logd, rng, true);
  EXPECT_TRUE(k.using_empirical_covariance());
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(p));
  for (int i = 0; i < 200000; ++i) {
    k.step(c, logd, rng, false);
    for (Eigen::Index j = 0; j < p; ++j) draws[static_cast<std::size_t>(j)].push_back(c[j]);
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& d = draws[static_cast<std::size_t>(j)];
    EXPECT_NEAR(dt::mean_of(d), post_mean[j], 3 * mcse(d)) << "coefficient " << j;
  }
}

TEST(ConjugateSigma, MatchesInverseWishartMean) {
  dc::Rng rng(6);
  Eigen::Matrix3d truth;
  truth << 1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.8;
  const Eigen::LLT<Eigen::MatrixXd> chol(truth);
  Eigen::MatrixXd resid(60, 3);
  for (Eigen::Index i = 0; i < 60; ++i) resid.row(i) = dc::sample_mvn(rng, Eigen::VectorXd::Zero(3), chol).transpose();
  const dc::InverseWishartSpec prior{Eigen::MatrixXd::Identity(3, 3), 5.0};
  const Eigen::MatrixXd post_scale = prior.scale + resid.transpose() * resid;
  const double post_df = prior.df + 60.0;
  const Eigen::MatrixXd analytic = post_scale / (post_df - 3 - 1);

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(3, 3);
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += dc::sample_sigma_conjugate(rng, resid, prior);
  const Eigen::MatrixXd empirical = sum / n;
  for (Eigen::Index a = 0; a < 3; ++a)
    for (Eigen::Index b = 0; b < 3; ++b) {
      const double scale = std::sqrt(analytic(a, a) * analytic(b, b));
      EXPECT_LT(std::abs(empirical(a, b) - analytic(a, b)), 0.05 * scale) << a << "," << b;
    }
}

TEST(RunChains, SameSeedSameDraws) {
  const dc::Model m(small_spec(), small_triangle(7));
  auto cfg = short_run(600, 300, 3);
  const auto a = dc::run_chains(m, cfg);
  const auto b = dc::run_chains(m, cfg);
  EXPECT_TRUE(a == b);
  cfg.threads = 2;
  EXPECT_TRUE(dc::run_chains(m, cfg) == a);
  cfg.seed = 100;
  EXPECT_FALSE(dc::run_chains(m, cfg) == a);
}

TEST(RunChains, KeptDrawsAndLatentBounds) {
  const auto tri = small_triangle(8);
  const dc::Model m(small_spec(), tri);
  const auto s = dc::run_chains(m, short_run(500, 200, 7));
  ASSERT_EQ(s.n_chains(), 2u);
  EXPECT_EQ(s.n_kept(), (500 - 200) / 7);
  EXPECT_EQ(s.labels, m.layout().labels);
  for (const auto& lat : s.latent_draws)
    for (Eigen::Index i = 0; i < lat.rows(); ++i)
      for (std::size_t j = 0; j < m.latent_rows().size(); ++j)
        EXPECT_GE(lat(i, static_cast<Eigen::Index>(j)), tri.observed_sum(m.latent_rows()[j]));
}

TEST(RunChains, InvalidConfig) {
  const dc::Model m(small_spec(), small_triangle(9));
  EXPECT_THROW(dc::run_chains(m, short_run(100, 100, 1)), dc::ConfigError);
  EXPECT_THROW(dc::run_chains(m, short_run(100, 10, 0)), dc::ConfigError);
  EXPECT_THROW(dc::run_chains(m, short_run(100, 95, 10)), dc::ConfigError);
}

TEST(RunChains, PriorOnlyIntercept) {
  auto spec = small_spec();
  spec.iota_prior = dc::PriorSpec::normal(2.0, 0.5);
  const dc::ReportingTriangle empty(16, 3, std::vector<dc::Count>(48, 0), std::vector<std::uint8_t>(48, 0));
  const dc::Model m(spec, empty);
  auto cfg = short_run(40000, 10000, 5);
  cfg.n_chains = 4;
  cfg.threads = 0;
  const auto s = dc::run_chains(m, cfg);

  std::vector<Eigen::VectorXd> chains, sq;
  for (const auto& d : s.draws) {
    const Eigen::VectorXd c = d.col(s.index_of("iota"));
    chains.push_back(c);
    sq.push_back((c.array() - 2.0).square().matrix());
  }
  const auto iota = s.pooled("iota");
  const double ess = dc::effective_sample_size(chains).value;
  EXPECT_NEAR(dt::mean_of(iota), 2.0, 3 * std::sqrt(dt::var_of(iota) / ess));
  std::vector<double> dev;
  for (double v : iota) dev.push_back((v - 2.0) * (v - 2.0));
  const double ess_sq = dc::effective_sample_size(sq).value;
  EXPECT_NEAR(dt::mean_of(dev), 0.25, 3 * std::sqrt(dt::var_of(dev) / ess_sq));

  // Without observed cells a latent total follows its NB prior predictive: E[y_t] = E[lambda_t].
  const std::size_t t = 7;
  const auto y = s.pooled_latent("y[" + std::to_string(t + 1) + "]");
  std::vector<double> lambda;
  for (const auto& d : s.draws)
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const Eigen::VectorXd row = d.row(i).transpose();
      const auto st = m.unpack(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                               std::vector<dc::Count>(m.latent_rows().size(), 0));
      lambda.push_back(std::exp(m.log_lambda(st, t)));
    }
  std::vector<double> diff(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) diff[i] = y[i] - lambda[i];
  std::vector<Eigen::VectorXd> diff_chains;
  const auto per = static_cast<std::size_t>(s.n_kept());
  for (std::size_t c = 0; c < s.n_chains(); ++c)
    diff_chains.push_back(as_vector(std::vector<double>(diff.begin() + static_cast<std::ptrdiff_t>(c * per),
                                                        diff.begin() + static_cast<std::ptrdiff_t>((c + 1) * per))));
  EXPECT_NEAR(dt::mean_of(diff), 0.0, 3 * std::sqrt(dt::var_of(diff) / dc::effective_sample_size(diff_chains).value));
}

TEST(RunChains, FullReportingPinsTrueCounts) {
  auto spec = small_spec();
  spec.variant = dc::Variant::kGDMUR;
  spec.fixed_reporting_rate = 1.0;
  const dc::Model m(spec, small_triangle(10));
  const auto s = dc::run_chains(m, short_run(400, 200, 2));
  for (std::size_t t = 0; t < m.n_times(); ++t) {
    const auto label = std::to_string(t + 1) + "]";
    const auto x = s.pooled_latent("x[" + label);
    const auto y = m.triangle().fully_observed(t) ? std::vector<double>(x.size(), static_cast<double>(m.triangle().observed_sum(t)))
                                                  : s.pooled_latent("y[" + label);
    EXPECT_EQ(x, y) << "row " << t + 1;
  }
}

TEST(ChainRng, StreamsDiffer) {
  auto a = dc::chain_rng(1, 0), b = dc::chain_rng(1, 1), c = dc::chain_rng(1, 0);
  const auto va = a(), vb = b(), vc = c();
  EXPECT_NE(va, vb);
  EXPECT_EQ(va, vc);
}

TEST(Mpsrf, IdenticalChains) {
  dc::Rng rng(11);
  const auto one = mvn_chains(rng, 1, 500, 3).front();
  const auto r = dc::mpsrf({one, one, one, one});
  EXPECT_NEAR(r.value, 499.0 / 500.0, 1e-12);
  EXPECT_LT(r.value, 1.0);
}

TEST(Mpsrf, IndependentChains) {
  dc::Rng rng(12);
  const auto r = dc::mpsrf(mvn_chains(rng, 4, 10000, 3));
  EXPECT_GT(r.value, 0.99);
  EXPECT_LT(r.value, 1.02);
}

TEST(Mpsrf, ShiftedChains) {
  dc::Rng rng(13);
  auto chains = mvn_chains(rng, 4, 2000, 3);
  chains[1].col(0).array() += 5.0;
  EXPECT_GT(dc::mpsrf(chains).value, 1.05);
}

TEST(Mpsrf, RejectsBadShapes) {
  dc::Rng rng(14);
  EXPECT_THROW(dc::mpsrf(mvn_chains(rng, 1, 100, 2)), dc::ConfigError);
  EXPECT_THROW(dc::mpsrf(mvn_chains(rng, 2, 5, 2)), dc::ConfigError);
  EXPECT_THROW(dc::mpsrf(mvn_chains(rng, 2, 10, 12)), dc::ConfigError);
}

TEST(Mpsrf, RidgeForSingularWithin) {
  dc::Rng rng(15);
  auto chains = mvn_chains(rng, 3, 200, 2);
  for (auto& c : chains) c.col(1).setConstant(4.0);
  const auto r = dc::mpsrf(chains);
  EXPECT_TRUE(r.ridge_applied);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Ess, IndependentDraws) {
  dc::Rng rng(16);
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(mvn_chains(rng, 1, 10000, 1).front().col(0));
  EXPECT_NEAR(dc::effective_sample_size(chains).value, 40000.0, 4000.0);
}

TEST(Ess, Ar1ClosedForm) {
  dc::Rng rng(17);
  const double rho = 0.9;
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < 4; ++c) chains.push_back(as_vector(dt::ar1(rng, 50000, rho)));
  const double expected = 4 * 50000 * (1 - rho) / (1 + rho);
  EXPECT_NEAR(dc::effective_sample_size(chains).value, expected, 0.15 * expected);
}

TEST(Ess, ConstantChainIsDegenerate) {
  const auto r = dc::effective_sample_size({Eigen::VectorXd::Constant(100, 3.0), Eigen::VectorXd::Constant(100, 3.0)});
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.degenerate);
}
