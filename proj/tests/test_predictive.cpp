#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "delaycast/predictive.hpp"
#include "test_support.hpp"

namespace dc = delaycast;
namespace dt = delaycast::testing;

namespace {

dc::ModelSpec constant_delay_spec(int D) {
  dc::ModelSpec s;
  s.delay_horizon = D;
  s.time_varying_delay = false;
  s.alpha_basis = 5;
  s.eta_basis = 4;
  s.season_period = 7.0;
  s.max_forecast_horizon = 8;
  return s;
}

// Posterior samples whose every draw is one of the given states.
dc::PosteriorSamples samples_from(const dc::Model& m, const std::vector<dc::ParameterState>& states, int n_chains = 2) {
  dc::PosteriorSamples ps;
  const auto layout = m.layout();
  ps.labels = layout.labels;
  ps.latent_labels = layout.latent_labels;
  ps.config.seed = 5;
  const auto per = static_cast<Eigen::Index>(states.size() / static_cast<std::size_t>(n_chains));
  std::size_t k = 0;
  for (int c = 0; c < n_chains; ++c) {
    Eigen::MatrixXd d(per, static_cast<Eigen::Index>(layout.labels.size()));
    dc::LatentMatrix l(per, static_cast<Eigen::Index>(layout.latent_labels.size()));
    for (Eigen::Index i = 0; i < per; ++i, ++k) {
      d.row(i) = m.pack(states[k]).transpose();
      const auto lat = m.pack_latent(states[k]);
      for (std::size_t j = 0; j < lat.size(); ++j) l(i, static_cast<Eigen::Index>(j)) = lat[j];
    }
    ps.draws.push_back(d);
    ps.latent_draws.push_back(l);
  }
  return ps;
}

dc::ReportingTriangle staircase(std::size_t T, int D, int maturity, unsigned seed) {
  dc::Rng rng(seed);
  std::poisson_distribution<dc::Count> p(8.0);
  std::vector<dc::Count> cells(T * static_cast<std::size_t>(D + 1));
  for (auto& c : cells) c = p(rng);
  const auto last = dc::collapsed_last_delays(D, maturity);
  return dc::apply_staircase(T, cells, last, static_cast<int>(T) - 1);
}

// Fully observed rows simulated from the GDM at constant (lambda, theta, nu, phi).
dc::ReportingTriangle gdm_rows(dc::Rng& rng, std::size_t T, const Eigen::VectorXd& nu, double phi, double lambda,
                               double theta) {
  const auto k = static_cast<std::size_t>(nu.size()) + 1;
  const dc::GDParams gd = dc::reparam_mean_dispersion({nu, Eigen::VectorXd::Constant(nu.size(), phi)});
  std::vector<dc::Count> cells;
  for (std::size_t t = 0; t < T; ++t) {
    const auto z = dc::sample_gdm(rng, gd, dc::sample_neg_binomial(rng, {lambda, theta}));
    cells.insert(cells.end(), z.begin(), z.end());
  }
  return dc::ReportingTriangle(T, k, cells, std::vector<std::uint8_t>(T * k, 1));
}

dc::ParameterState constant_state(const dc::Model& m, double lambda, double theta, const Eigen::VectorXd& nu,
                                  double phi) {
  auto s = m.zero_state();
  s.iota = std::log(lambda);
  s.theta[0] = theta;
  for (Eigen::Index c = 0; c < nu.size(); ++c) s.psi[c] = dc::logit(nu[c]);
  s.phi.setConstant(phi);
  return s;
}

dc::ReplicateSet identical_replicates(const dc::ReportingTriangle& tri, std::size_t n) {
  dc::ReplicateSet r;
  r.n_cells = tri.n_columns();
  for (std::size_t t = 0; t < tri.n_times(); ++t) r.rows.push_back(t);
  dc::LatentMatrix z(static_cast<Eigen::Index>(tri.n_times()), static_cast<Eigen::Index>(tri.n_columns()));
  for (std::size_t t = 0; t < tri.n_times(); ++t)
    for (std::size_t c = 0; c < tri.n_columns(); ++c)
      z(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = tri.cell(t, c);
  r.z.assign(n, z);
  r.y.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tri.n_times()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < tri.n_times(); ++t)
      r.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = tri.observed_sum(t);
  return r;
}

}  // namespace

TEST(Nowcast, FullyObservedRowsAreDegenerate) {
  const auto tri = staircase(16, 2, 4, 1);
  const dc::Model m(constant_delay_spec(2), tri);
  std::vector<dc::ParameterState> states;
  dc::Rng rng(2);
  for (int i = 0; i < 40; ++i) states.push_back(m.initial_state(rng, 1.0));
  const auto ps = samples_from(m, states);
  const auto now = dc::nowcast(m, ps, {0.5, 0.9});
  ASSERT_EQ(now.size(), 16u);
  EXPECT_EQ(now.draws.rows(), 40);
  for (std::size_t t = 0; t < 16; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    EXPECT_EQ(now.degenerate[t], tri.fully_observed(t));
    for (Eigen::Index i = 0; i < now.draws.rows(); ++i) {
      if (tri.fully_observed(t))
        EXPECT_EQ(now.draws(i, ti), tri.observed_sum(t));
      else
        EXPECT_EQ(now.draws(i, ti), states[static_cast<std::size_t>(i)].latent_y[t]);
      EXPECT_GE(now.draws(i, ti), tri.observed_sum(t));
    }
    if (tri.fully_observed(t)) {
      EXPECT_EQ(now.lower[t][1], now.upper[t][1]);
      EXPECT_EQ(now.median[t], static_cast<double>(tri.observed_sum(t)));
    }
    EXPECT_LE(now.lower[t][1], now.median[t]);
    EXPECT_LE(now.median[t], now.upper[t][1]);
  }
  EXPECT_THROW(dc::nowcast(m, ps, {1.0}), dc::ConfigError);
}

TEST(Nowcast, GlmAddsCellsToPrefix) {
  const auto tri = staircase(16, 2, 4, 3);
  auto spec = constant_delay_spec(2);
  spec.variant = dc::Variant::kGLM;
  const dc::Model m(spec, tri);
  std::vector<dc::ParameterState> states(200, m.zero_state());
  for (auto& s : states) {
    s.iota = std::log(3.0);
    s.psi.setZero();
  }
  const auto now = dc::nowcast(m, samples_from(m, states));
  for (std::size_t t = 0; t < 16; ++t)
    for (Eigen::Index i = 0; i < now.draws.rows(); ++i)
      EXPECT_GE(now.draws(i, static_cast<Eigen::Index>(t)), tri.observed_sum(t));
  // last row has no observed cells: y is a sum of three NB(3, 10) cells
  EXPECT_NEAR(now.mean[15], 9.0, 4 * std::sqrt((9.0 + 3 * 0.9) / 200.0));
}

TEST(Forecast, ZeroHorizonIsEmpty) {
  const dc::Model m(constant_delay_spec(2), staircase(16, 2, 4, 4));
  const auto ps = samples_from(m, std::vector<dc::ParameterState>(10, m.zero_state()));
  const auto f = dc::forecast(m, ps, 0);
  EXPECT_EQ(f.size(), 0u);
  EXPECT_EQ(f.kind, dc::PredictionKind::kForecast);
  EXPECT_THROW(dc::forecast(m, ps, 9), dc::DomainError);
  EXPECT_THROW(dc::forecast(m, ps, -1), dc::ConfigError);
}

TEST(Forecast, IgnoresDelayBlock) {
  const dc::Model m(constant_delay_spec(3), staircase(16, 3, 5, 5));
  dc::Rng rng(6);
  std::vector<dc::ParameterState> a, b;
  for (int i = 0; i < 50; ++i) {
    auto s = m.initial_state(rng, 1.0);
    a.push_back(s);
    s.psi.array() += 1.0;
    s.phi *= 4.0;
    b.push_back(s);
  }
  const auto fa = dc::forecast(m, samples_from(m, a), 6), fb = dc::forecast(m, samples_from(m, b), 6);
  EXPECT_EQ(fa.draws, fb.draws);
  EXPECT_EQ(fa.mean, fb.mean);
}

TEST(Forecast, MeanMatchesIntensity) {
  const dc::Model m(constant_delay_spec(2), staircase(16, 2, 4, 7));
  Eigen::VectorXd nu(2);
  nu << 0.5, 0.5;
  const auto ps = samples_from(m, std::vector<dc::ParameterState>(4000, constant_state(m, 25.0, 4.0, nu, 10.0)));
  const auto f = dc::forecast(m, ps, 5);
  const double se = std::sqrt((25.0 + 25.0 * 25.0 / 4.0) / 4000.0);
  for (std::size_t h = 0; h < 5; ++h) EXPECT_NEAR(f.mean[h], 25.0, 3 * se);
}

TEST(Replicates, RowSumsAndCount) {
  dc::Rng rng(8);
  Eigen::VectorXd nu(3);
  nu << 0.4, 0.5, 0.6;
  const auto tri = gdm_rows(rng, 30, nu, 5.0, 40.0, 6.0);
  const dc::Model m(constant_delay_spec(3), tri);
  const auto ps = samples_from(m, std::vector<dc::ParameterState>(2000, constant_state(m, 40.0, 6.0, nu, 5.0)));
  const auto reps = dc::replicate_insample(m, ps);
  ASSERT_EQ(reps.size(), 2000u);
  ASSERT_EQ(reps.rows.size(), 30u);
  std::vector<double> totals;
  for (std::size_t i = 0; i < reps.size(); ++i)
    for (Eigen::Index r = 0; r < 30; ++r) {
      EXPECT_EQ(reps.z[i].row(r).sum(), reps.y(static_cast<Eigen::Index>(i), r));
      if (r == 0) totals.push_back(static_cast<double>(reps.y(static_cast<Eigen::Index>(i), r)));
    }
  EXPECT_NEAR(dt::mean_of(totals), 40.0, 3 * std::sqrt(dt::var_of(totals) / 2000.0));
  EXPECT_EQ(dc::replicate_insample(m, ps, dc::DelayReplication::kFitted, 500).size(), 500u);
}

TEST(Replicates, VarianceIdentity) {
  dc::Rng rng(9);
  Eigen::VectorXd nu(3);
  nu << 0.3, 0.5, 0.5;
  const auto tri = gdm_rows(rng, 40, nu, 3.0, 60.0, 5.0);
  const dc::Model m(constant_delay_spec(3), tri);
  const auto ps = samples_from(m, std::vector<dc::ParameterState>(200, constant_state(m, 60.0, 5.0, nu, 3.0)));
  const auto check = dc::ppc_covariance(dc::replicate_insample(m, ps), tri);
  ASSERT_EQ(check.identity_gap.size(), 200u);
  for (double g : check.identity_gap) EXPECT_LT(g, 1e-9);
}

TEST(CovarianceCheck, IdenticalReplicates) {
  dc::Rng rng(10);
  Eigen::VectorXd nu(2);
  nu << 0.5, 0.4;
  const auto tri = gdm_rows(rng, 25, nu, 4.0, 30.0, 5.0);
  const auto check = dc::ppc_covariance(identical_replicates(tri, 3), tri);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(check.bias_z[r], 0.0);
    EXPECT_EQ(check.bias_p[r], 0.0);
    EXPECT_EQ(check.log_mse_z[r], dc::kNegInf);
    EXPECT_EQ(check.log_mse_p[r], dc::kNegInf);
  }
}

TEST(CovarianceCheck, ScaledColumnGivesKnownBias) {
  dc::Rng rng(11);
  Eigen::VectorXd nu(2);
  nu << 0.5, 0.4;
  const auto tri = gdm_rows(rng, 25, nu, 4.0, 30.0, 5.0);
  auto reps = identical_replicates(tri, 1);
  reps.z[0].col(0) *= 2;
  const auto check = dc::ppc_covariance(reps, tri);
  // Doubling column 0 adds 3 V_00 on the diagonal and C_0j twice per off-diagonal pair.
  const Eigen::MatrixXd& v = check.observed_cov_z;
  const double expected = (3 * v(0, 0) + 2 * (v(0, 1) + v(0, 2))) / 9.0;
  EXPECT_NEAR(check.bias_z[0], expected, 1e-9 * std::abs(expected));
  EXPECT_THROW(dc::ppc_covariance(identical_replicates(dc::ReportingTriangle(1, 3, {1, 2, 3}, {1, 1, 1}), 1),
                                  dc::ReportingTriangle(1, 3, {1, 2, 3}, {1, 1, 1})),
               dc::DomainError);
}

TEST(CovarianceCheck, RemainderCanBeExcluded) {
  dc::Rng rng(12);
  Eigen::VectorXd nu(2);
  nu << 0.5, 0.4;
  const auto tri = gdm_rows(rng, 25, nu, 4.0, 30.0, 5.0);
  const auto check = dc::ppc_covariance(identical_replicates(tri, 1), tri, false);
  EXPECT_EQ(check.observed_cov_z.rows(), 2);
  EXPECT_FALSE(check.include_remainder);
}

TEST(MeanVarCheck, DegenerateReplicates) {
  dc::Rng rng(13);
  Eigen::VectorXd nu(2);
  nu << 0.5, 0.4;
  const auto tri = gdm_rows(rng, 25, nu, 4.0, 30.0, 5.0);
  const auto check = dc::ppc_mean_var_sorted(identical_replicates(tri, 20), tri);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_DOUBLE_EQ(check.mean_draws[i], check.observed_mean);
    EXPECT_DOUBLE_EQ(check.var_draws[i], check.observed_var);
  }
  EXPECT_EQ(check.envelope_lower, check.observed_sorted);
  EXPECT_EQ(check.envelope_upper, check.observed_sorted);
  EXPECT_FALSE(check.heavy_upper_tail);
}

TEST(MeanVarCheck, EnvelopeIsMonotone) {
  dc::Rng rng(14);
  dc::LatentMatrix reps(300, 50);
  for (Eigen::Index i = 0; i < reps.rows(); ++i)
    for (Eigen::Index j = 0; j < reps.cols(); ++j) reps(i, j) = dc::sample_neg_binomial(rng, {20.0, 1.0});
  std::vector<double> obs(50);
  for (auto& o : obs) o = static_cast<double>(dc::sample_neg_binomial(rng, {20.0, 1.0}));
  const auto check = dc::mean_var_sorted(reps, obs);
  for (std::size_t j = 1; j < 50; ++j) {
    EXPECT_LE(check.envelope_lower[j - 1], check.envelope_lower[j]);
    EXPECT_LE(check.envelope_upper[j - 1], check.envelope_upper[j]);
    EXPECT_LE(check.envelope_mean[j - 1], check.envelope_mean[j]);
  }
}

TEST(MeanVarCheck, LogNormalMixtureHasHeavierTail) {
  // Poisson counts mixed over a Gamma(2) rate, whose log has sd 0.8, or a
  // Log-Normal rate with the same median and log sd 1.2.
  dc::Rng rng(15);
  const double shape = 2.0, scale = 50.0;
  std::vector<double> rates(100001);
  for (auto& r : rates) r = dc::sample_gamma(rng, shape, scale);
  std::nth_element(rates.begin(), rates.begin() + 50000, rates.end());
  const double m = std::log(rates[50000]);
  auto gamma_draw = [&] { return dc::sample_poisson(rng, dc::sample_gamma(rng, shape, scale)); };
  auto lognormal_draw = [&] { return dc::sample_poisson(rng, std::exp(dc::sample_normal(rng, m, 1.2))); };
  std::vector<double> obs(200);
  for (auto& o : obs) o = static_cast<double>(gamma_draw());
  dc::LatentMatrix g(400, 200), ln(400, 200);
  for (Eigen::Index i = 0; i < 400; ++i)
    for (Eigen::Index j = 0; j < 200; ++j) {
      g(i, j) = gamma_draw();
      ln(i, j) = lognormal_draw();
    }
  const auto cg = dc::mean_var_sorted(g, obs), cl = dc::mean_var_sorted(ln, obs);
  EXPECT_GT(cl.upper_tail_ratio, 1.5);
  EXPECT_NEAR(cg.upper_tail_ratio, 1.0, 0.15);
  EXPECT_TRUE(cl.heavy_upper_tail);
  EXPECT_FALSE(cg.heavy_upper_tail);
}

TEST(Coverage, EverythingInside) {
  const std::vector<double> obs{1, 2, 3}, lo{0, 0, 0}, hi{10, 10, 10};
  EXPECT_EQ(dc::coverage_fraction(obs, lo, hi), 1.0);
  EXPECT_THROW(dc::coverage_fraction({}, {}, {}), dc::DomainError);
}

TEST(Coverage, OverdispersionAgainstMultinomialLimit) {
  dc::Rng rng(16);
  Eigen::VectorXd nu(3);
  nu << 0.4, 0.5, 0.6;
  const auto tri = gdm_rows(rng, 150, nu, 5.0, 80.0, 10.0);
  const dc::Model m(constant_delay_spec(3), tri);
  const auto ps = samples_from(m, std::vector<dc::ParameterState>(2000, constant_state(m, 80.0, 10.0, nu, 5.0)));
  const auto fitted = dc::interval_coverage(m, ps);
  const auto limit = dc::interval_coverage(m, ps, dc::DelayReplication::kMultinomial);
  EXPECT_GE(fitted.overall, 0.92);
  EXPECT_LE(fitted.overall, 0.98);
  EXPECT_LT(limit.overall, 0.80);
  EXPECT_EQ(fitted.n_cells, 600);
}
