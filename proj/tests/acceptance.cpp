// Acceptance runner: one PASS/FAIL line per criterion. Arguments select a
// subset by number; no arguments runs all of them.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>

#include "delaycast/diagnostics.hpp"
#include "delaycast/io.hpp"
#include "delaycast/predictive.hpp"
#include "delaycast/simulator.hpp"
#include "delaycast/splines.hpp"
#include "test_support.hpp"

namespace dc = delaycast;
namespace dt = delaycast::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mcse(const std::vector<double>& x) {
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return std::sqrt(dt::var_of(x) / dc::effective_sample_size({v}).value);
}

// Desk-scale constant-delay GDM spec matching the simulator's default scenario.
dc::ModelSpec desk_spec() {
  dc::ModelSpec s;
  s.time_varying_delay = false;
  return s;
}

dc::SamplerConfig sampler(int chains, long iterations, long thin, std::uint64_t seed) {
  dc::SamplerConfig c;
  c.n_chains = chains;
  c.n_iterations = iterations;
  c.burn_in = iterations / 2;
  c.thin = thin;
  c.seed = seed;
  c.threads = chains;
  return c;
}

Outcome gdm_normalization() {
  dc::Rng rng(101);
  double worst = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int rep = 0; rep < 50; ++rep)
    for (std::size_t k = 2; k <= 4; ++k) {
      const auto p = dt::random_gd(rng, k);
      for (dc::Count y = 0; y <= 6; ++y) {
        double sum = 0.0;
        dt::for_each_composition(y, k, [&](const std::vector<dc::Count>& z) { sum += std::exp(dc::log_pmf_gdm(z, p, y)); });
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-10 && sec < 5.0, fmt("max |sum - 1| = %.2e, %.3f s", worst, sec)};
}

Outcome factorization() {
  dc::Rng rng(102);
  std::uniform_int_distribution<dc::Count> ys(0, 50);
  std::uniform_int_distribution<std::size_t> ks(2, 9);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t k = ks(rng);
    const auto p = dt::random_gd(rng, k);
    const dc::Count y = ys(rng);
    const auto z = dt::random_composition(rng, y, k);
    worst = std::max(worst, std::abs(dc::log_pmf_gdm(z, p, y) - dc::log_pmf_gdm_conditional(z, p, y)));
  }
  return {worst < 1e-10, fmt("max log-pmf difference %.2e over 200 cases", worst)};
}

Outcome prefix_marginalization() {
  double worst = 0.0;
  long checked = 0;
  for (int D = 1; D <= 3; ++D) {
    dc::Rng rng(103 + static_cast<unsigned>(D));
    const std::size_t k = static_cast<std::size_t>(D) + 1, T = 14;
    std::uniform_int_distribution<dc::Count> u(0, 2);
    std::vector<dc::Count> cells(T * k);
    for (auto& c : cells) c = u(rng);
    const auto tri = dc::apply_staircase(T, cells, dc::collapsed_last_delays(D, D + 2), static_cast<int>(T) - 1);
    dc::ModelSpec spec;
    spec.delay_horizon = D;
    spec.alpha_basis = 4;
    spec.eta_basis = 4;
    spec.beta_basis = 4;
    spec.season_period = 7.0;
    const dc::Model m(spec, tri);
    auto s = m.initial_state(rng, 1.0);
    std::normal_distribution<double> z(0.0, 0.5);
    for (auto& b : s.beta)
      for (auto& v : b) v = z(rng);
    for (auto& v : s.phi) v = std::exp(1.0 + z(rng));
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t len = tri.observed_prefix(t);
      if (len == k) continue;
      dc::DelayMeanDispersion md{Eigen::VectorXd(D), Eigen::VectorXd(D)};
      for (int c = 0; c < D; ++c) {
        md.nu[c] = m.nu(s, t, static_cast<std::size_t>(c));
        md.phi[c] = std::exp(m.log_phi(s, t, static_cast<std::size_t>(c)));
      }
      const auto params = dc::reparam_mean_dispersion(md);
      for (dc::Count y = tri.observed_sum(t); y <= 12; ++y) {
        double total = 0.0;
        dt::for_each_composition(y - tri.observed_sum(t), k - len, [&](const std::vector<dc::Count>& rest) {
          std::vector<dc::Count> zz(k);
          for (std::size_t c = 0; c < len; ++c) zz[c] = tri.cell(t, c);
          std::copy(rest.begin(), rest.end(), zz.begin() + static_cast<std::ptrdiff_t>(len));
          total += std::exp(dc::log_pmf_gdm(zz, params, y));
        });
        worst = std::max(worst, std::abs(std::exp(m.row_delay_terms(s, t, y)) - total));
        ++checked;
      }
    }
  }
  return {worst < 1e-10 && checked > 0, fmt("max difference %.2e over %ld (row, y) pairs", worst, checked)};
}

Outcome multinomial_limit() {
  dc::Rng rng(104);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  double worst = 0.0;
  for (std::size_t k : {2, 3, 4}) {
    Eigen::VectorXd nu(static_cast<Eigen::Index>(k - 1));
    for (auto& v : nu) v = u(rng);
    const auto gd = dc::reparam_mean_dispersion({nu, Eigen::VectorXd::Constant(nu.size(), 1e8)});
    for (dc::Count y = 0; y <= 20; ++y)
      dt::for_each_composition(y, k, [&](const std::vector<dc::Count>& z) {
        worst = std::max(worst, std::abs(std::exp(dc::log_pmf_gdm(z, gd, y)) -
                                         std::exp(dc::log_pmf_stick_breaking_multinomial(z, nu, y))));
      });
  }
  return {worst < 1e-4, fmt("sup-norm distance %.2e", worst)};
}

Outcome spline_contracts() {
  std::vector<double> pts;
  for (int t = 1; t <= 114; ++t) pts.push_back(t);
  dc::Rng rng(105);
  const auto cubic = dc::build_cubic_basis(pts, 10, {1.0, 170.0});
  const auto cyclic = dc::build_cyclic_basis(pts, 8, 52.0);
  double second = 0.0, period = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd a(cubic.dim()), c(cyclic.dim());
    for (auto& v : a) v = dc::sample_normal(rng);
    for (auto& v : c) v = dc::sample_normal(rng);
    auto f = [&](double x) { return cubic.evaluate(x).dot(a); };
    const double last = cubic.knots()[cubic.knots().size() - 1];
    for (double x = last + 0.5; x + 2 <= 170.0; x += 3.7) second = std::max(second, std::abs(f(x + 2) - 2 * f(x + 1) + f(x)));
    for (double x = 0.25; x < 60.0; x += 1.3)
      period = std::max(period, std::abs(cyclic.evaluate(x).dot(c) - cyclic.evaluate(x + 52.0).dot(c)));
  }
  return {second < 1e-8 && period < 1e-10, fmt("max second difference %.2e, periodicity gap %.2e", second, period)};
}

Outcome sampler_correctness() {
  std::ostringstream detail;
  bool ok = true;
  {
    // Scalar and block kernels on Gaussian targets.
    dc::Rng rng(106);
    dc::ScalarRwKernel k(1.0);
    auto logd = [](double x) { return -0.5 * (x - 1.0) * (x - 1.0) / 4.0; };
    double x = 0.0;
    for (int i = 0; i < 5000; ++i) k.step(x, logd, rng, true);
    std::vector<double> xs, sq;
    for (int i = 0; i < 200000; ++i) {
      k.step(x, logd, rng, false);
      xs.push_back(x);
      sq.push_back((x - 1.0) * (x - 1.0));
    }
    const double zm = std::abs(dt::mean_of(xs) - 1.0) / mcse(xs), zv = std::abs(dt::mean_of(sq) - 4.0) / mcse(sq);
    ok = ok && zm < 4 && zv < 4;
    detail << fmt("scalar mean %.1f, var %.1f MCSE; ", zm, zv);

    const Eigen::Index p = 3;
    Eigen::Matrix3d cov;
    cov << 1.0, 0.6, -0.3, 0.6, 2.0, 0.2, -0.3, 0.2, 0.5;
    const Eigen::Matrix3d prec = cov.inverse();
    const Eigen::Vector3d mu(0.5, -1.0, 2.0);
    auto logb = [&](const Eigen::VectorXd& v) { return -0.5 * (v - mu).dot(prec * (v - mu)); };
    dc::BlockRwKernel b(Eigen::VectorXd::Constant(p, 0.1));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < 20000; ++i) b.step(c, logb, rng, true);
    std::vector<std::vector<double>> draws(3);
    for (int i = 0; i < 200000; ++i) {
      b.step(c, logb, rng, false);
      for (Eigen::Index j = 0; j < p; ++j) draws[static_cast<std::size_t>(j)].push_back(c[j]);
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& d = draws[static_cast<std::size_t>(j)];
      worst = std::max(worst, std::abs(dt::mean_of(d) - mu[j]) / mcse(d));
    }
    ok = ok && worst < 4;
    detail << fmt("block marginal means within %.1f MCSE; ", worst);
  }
  {
    dc::Rng rng(107);
    Eigen::Matrix3d truth;
    truth << 1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, 0.8;
    const Eigen::LLT<Eigen::MatrixXd> chol(truth);
    Eigen::MatrixXd resid(60, 3);
    for (Eigen::Index i = 0; i < 60; ++i) resid.row(i) = dc::sample_mvn(rng, Eigen::VectorXd::Zero(3), chol).transpose();
    const dc::InverseWishartSpec prior{Eigen::MatrixXd::Identity(3, 3), 5.0};
    const Eigen::MatrixXd analytic = (prior.scale + resid.transpose() * resid) / (prior.df + 60.0 - 4.0);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(3, 3);
    for (int i = 0; i < 20000; ++i) sum += dc::sample_sigma_conjugate(rng, resid, prior);
    double worst = 0.0;
    for (Eigen::Index a = 0; a < 3; ++a)
      for (Eigen::Index b = 0; b < 3; ++b)
        worst = std::max(worst, std::abs(sum(a, b) / 20000.0 - analytic(a, b)) / std::sqrt(analytic(a, a) * analytic(b, b)));
    ok = ok && worst < 0.05;
    detail << fmt("inverse-Wishart mean within %.3f; ", worst);
  }
  {
    dc::ScenarioConfig sc;
    sc.n_times = 30;
    sc.delay_horizon = 2;
    sc.maturity = 4;
    sc.present_day = 28;
    sc.season_period = 12.0;
    const auto data = dc::simulate_dataset(sc);
    dc::ModelSpec spec;
    spec.delay_horizon = 2;
    spec.alpha_basis = 5;
    spec.season_period = 12.0;
    const dc::Model m(spec, data.collapsed);
    auto cfg = sampler(2, 600, 2, 108);
    const auto root = fs::temp_directory_path() / "delaycast_acceptance_determinism";
    fs::remove_all(root);
    dc::write_samples_directory(root / "a", dc::run_chains(m, cfg), spec, data.collapsed);
    dc::write_samples_directory(root / "b", dc::run_chains(m, cfg), spec, data.collapsed);
    cfg.threads = 1;
    dc::write_samples_directory(root / "c", dc::run_chains(m, cfg), spec, data.collapsed);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    bool rerun = true, threads = true;
    long files = 0;
    for (const auto& e : fs::directory_iterator(root / "a")) {
      const auto name = e.path().filename();
      const auto bytes = slurp(e.path());
      rerun = rerun && bytes == slurp(root / "b" / name);
      // meta.json records the thread count itself
      if (name != "meta.json") threads = threads && bytes == slurp(root / "c" / name);
      ++files;
    }
    fs::remove_all(root);
    ok = ok && rerun && threads && files > 0;
    detail << fmt("%ld sample files: rerun %s, 1 vs 2 threads %s", files, rerun ? "byte-identical" : "DIFFERS",
                  threads ? "byte-identical draws" : "DIFFERS");
  }
  return {ok, detail.str()};
}

Outcome mpsrf_gate() {
  dc::Rng rng(109);
  auto normal_chains = [&](std::size_t m, Eigen::Index n, Eigen::Index p) {
    std::vector<Eigen::MatrixXd> out;
    for (std::size_t j = 0; j < m; ++j) {
      Eigen::MatrixXd c(n, p);
      for (auto& v : c.reshaped()) v = dc::sample_normal(rng);
      out.push_back(c);
    }
    return out;
  };
  const auto one = normal_chains(1, 1000, 4).front();
  const double copies = dc::mpsrf({one, one, one, one}).value;
  auto shifted = normal_chains(4, 2000, 4);
  shifted[2].col(1).array() += 5.0;
  const double shift = dc::mpsrf(shifted).value;

  dc::ScenarioConfig sc;
  sc.seed = 1;
  const auto data = dc::simulate_dataset(sc);
  const dc::Model model(desk_spec(), data.collapsed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = dc::run_chains(model, sampler(4, 20000, 5, 11));
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double fit = dc::mpsrf(dc::convergence_quantities(model, samples).chains).value;
  return {copies < 1.0 && shift > 1.05 && fit < 1.05,
          fmt("copies %.4f, shifted %.3f, desk GDM fit %.4f (T=120, D=8, 4 x 20000, %.0f s)", copies, shift, fit, sec)};
}

Outcome recovery() {
  dc::ScenarioConfig sc;
  sc.seed = 2;
  dc::RecoveryConfig fit;
  fit.spec = desk_spec();
  fit.sampler = sampler(2, 6000, 3, 0);
  fit.sampler.threads = 1;
  fit.threads = 2;
  const auto table = dc::recovery_study(sc, fit, 20);
  const double params = table.parameter_coverage(), now = table.nowcast_coverage();
  std::map<std::string, std::pair<int, int>> by_param;
  for (const auto& r : table.rows) {
    auto& [hit, n] = by_param[r.parameter];
    hit += r.covered ? 1 : 0;
    ++n;
  }
  std::ostringstream misses;
  for (const auto& [name, hn] : by_param)
    if (hn.first < hn.second) misses << ' ' << name << ' ' << hn.first << '/' << hn.second;
  return {params >= 0.85 && now >= 0.90 && now <= 0.98,
          fmt("parameter coverage %.3f over %zu intervals, nowcast coverage %.3f over %ld rows (2 x 6000 per fit);",
              params, table.rows.size(), now, table.nowcast_rows) +
              (misses.str().empty() ? std::string(" no misses") : " misses:" + misses.str())};
}

// Criteria 9 and 10 share one fit on phi = 5 data.
struct OverdispersedFit {
  dc::SimulatedDataset data;
  std::unique_ptr<dc::Model> model;
  dc::PosteriorSamples samples;
};

const OverdispersedFit& overdispersed_fit() {
  static const OverdispersedFit f = [] {
    OverdispersedFit out;
    dc::ScenarioConfig sc;
    sc.seed = 3;
    sc.phi.assign(8, 5.0);
    out.data = dc::simulate_dataset(sc);
    out.model = std::make_unique<dc::Model>(desk_spec(), out.data.collapsed);
    out.samples = dc::run_chains(*out.model, sampler(2, 8000, 4, 12));
    return out;
  }();
  return f;
}

Outcome coverage_analogue() {
  const auto& f = overdispersed_fit();
  const auto fitted = dc::interval_coverage(*f.model, f.samples, dc::DelayReplication::kFitted);
  const auto multi = dc::interval_coverage(*f.model, f.samples, dc::DelayReplication::kMultinomial);
  return {fitted.overall >= 0.92 && fitted.overall <= 0.98 && multi.overall < 0.80,
          fmt("fitted GDM %.3f, multinomial limit %.3f over %ld cells", fitted.overall, multi.overall, fitted.n_cells)};
}

Outcome variance_identity() {
  const auto& f = overdispersed_fit();
  double worst = 0.0;
  std::size_t sets = 0;
  for (auto mode : {dc::DelayReplication::kFitted, dc::DelayReplication::kMultinomial}) {
    const auto reps = dc::replicate_insample(*f.model, f.samples, mode, 500);
    for (const auto& z : reps.z) worst = std::max(worst, dc::variance_identity_gap(z));
    sets += reps.size();
  }
  return {worst < 1e-9, fmt("max relative gap %.2e over %zu replicate sets", worst, sets)};
}

Outcome under_reporting() {
  dc::ScenarioConfig sc;
  sc.n_times = 30;
  sc.delay_horizon = 2;
  sc.maturity = 4;
  sc.present_day = 28;
  sc.season_period = 12.0;
  const auto data = dc::simulate_dataset(sc);
  dc::ModelSpec gspec;
  gspec.delay_horizon = 2;
  gspec.alpha_basis = 5;
  gspec.season_period = 12.0;
  auto uspec = gspec;
  uspec.variant = dc::Variant::kGDMUR;
  uspec.fixed_reporting_rate = 1.0;
  const dc::Model gdm(gspec, data.collapsed), ur(uspec, data.collapsed);
  dc::Rng rng(110);
  int equal = 0, states = 0;
  for (; states < 50; ++states) {
    const auto s = gdm.initial_state(rng, 1.5);
    auto u = ur.zero_state();
    u.iota = s.iota;
    u.psi = s.psi;
    u.alpha = s.alpha;
    u.eta = s.eta;
    u.beta = s.beta;
    u.theta = s.theta;
    u.phi = s.phi;
    u.latent_y = s.latent_y;
    u.latent_x = s.latent_y;
    equal += ur.gdm_ur_log_likelihood(u) == gdm.gdm_log_likelihood(s) ? 1 : 0;
  }
  double worst = 0.0;
  for (double lambda : {0.5, 3.0, 10.0})
    for (double theta : {0.7, 5.0, 40.0})
      for (double pi : {0.1, 0.5, 0.95})
        for (dc::Count y = 0; y <= 15; ++y) {
          double sum = 0.0;
          for (dc::Count x = y; x <= 400; ++x)
            sum += std::exp(dc::log_pmf_neg_binomial(x, {lambda, theta}) + dc::log_pmf_binomial(y, x, pi));
          worst = std::max(worst, std::abs(std::exp(dc::log_pmf_thinned_neg_binomial(y, lambda, theta, pi)) - sum));
        }
  return {equal == states && worst < 1e-8,
          fmt("%d/%d states bitwise equal, thinned marginal within %.2e", equal, states, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"GDM normalization", gdm_normalization},
      {"factorization identity", factorization},
      {"prefix marginalization", prefix_marginalization},
      {"multinomial limit", multinomial_limit},
      {"spline contracts", spline_contracts},
      {"sampler correctness", sampler_correctness},
      {"MPSRF gate", mpsrf_gate},
      {"recovery and calibration", recovery},
      {"overdispersion coverage", coverage_analogue},
      {"variance identity", variance_identity},
      {"under-reporting reduction", under_reporting},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!pick.empty() && !pick.contains(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
