#pragma once

// JSON configuration documents and the on-disk posterior sample directory.
//
// Config files are JSON; `//` and `/* */` comments are accepted. Keys that are
// absent keep their defaults, unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "delaycast/errors.hpp"
#include "delaycast/mcmc.hpp"
#include "delaycast/model.hpp"
#include "delaycast/simulator.hpp"
#include "delaycast/triangle.hpp"

namespace delaycast {

using Json = nlohmann::json;

inline constexpr const char* kSamplesSchema = "delaycast.samples/1";

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path.string());
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(what + ": unknown key '" + it.key() + "'");
}

template <class T>
void read_key(const Json& j, const char* key, T& out, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(what + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline Json prior_to_json(const PriorSpec& p) {
  switch (p.kind) {
    case PriorKind::kNormal: return {{"kind", "normal"}, {"mean", p.a}, {"sd", p.b}};
    case PriorKind::kHalfNormal: return {{"kind", "half_normal"}, {"sd", p.b}};
    case PriorKind::kExponential: return {{"kind", "exponential"}, {"rate", p.a}};
    case PriorKind::kLogNormal: return {{"kind", "log_normal"}, {"meanlog", p.a}, {"sdlog", p.b}};
    case PriorKind::kInverseWishart: break;
  }
  throw ConfigError("scalar prior expected");
}

inline PriorSpec prior_from_json(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(what + ": prior needs a 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  auto num = [&](const char* k) {
    if (!j.contains(k) || !j.at(k).is_number()) throw ConfigError(what + ": " + kind + " prior needs '" + k + "'");
    return j.at(k).get<double>();
  };
  PriorSpec p;
  if (kind == "normal") {
    detail::reject_unknown(j, {"kind", "mean", "sd"}, what);
    p = PriorSpec::normal(num("mean"), num("sd"));
  } else if (kind == "half_normal") {
    detail::reject_unknown(j, {"kind", "sd"}, what);
    p = PriorSpec::half_normal(num("sd"));
  } else if (kind == "exponential") {
    detail::reject_unknown(j, {"kind", "rate"}, what);
    p = PriorSpec::exponential(num("rate"));
  } else if (kind == "log_normal") {
    detail::reject_unknown(j, {"kind", "meanlog", "sdlog"}, what);
    p = PriorSpec::log_normal(num("meanlog"), num("sdlog"));
  } else {
    throw ConfigError(what + ": unknown prior kind '" + kind + "'");
  }
  if (p.kind == PriorKind::kExponential ? !(p.a > 0) : !(p.b > 0))
    throw ConfigError(what + ": prior scale must be positive");
  return p;
}

inline Json to_json(const ModelSpec& s) {
  Json j;
  j["variant"] = to_string(s.variant);
  j["delay_horizon"] = s.delay_horizon;
  j["alpha_basis"] = s.alpha_basis;
  j["eta_basis"] = s.eta_basis;
  j["beta_basis"] = s.beta_basis;
  j["dispersion_basis"] = s.dispersion_basis;
  j["reporting_basis"] = s.reporting_basis;
  j["season_period"] = s.season_period;
  j["max_forecast_horizon"] = s.max_forecast_horizon;
  j["time_varying_delay"] = s.time_varying_delay;
  j["dispersion_spline"] = s.dispersion_spline;
  j["multinomial_limit"] = s.multinomial_limit;
  j["poisson_limit"] = s.poisson_limit;
  j["reporting_spline"] = s.reporting_spline;
  j["fixed_reporting_rate"] = s.fixed_reporting_rate ? Json(*s.fixed_reporting_rate) : Json(nullptr);
  j["priors"] = {
      {"iota", prior_to_json(s.iota_prior)},
      {"psi_sd", s.psi_prior_sd},
      {"theta", prior_to_json(s.theta_prior)},
      {"phi", prior_to_json(s.phi_prior)},
      {"sigma_alpha", prior_to_json(s.sigma_alpha_prior)},
      {"sigma_eta", prior_to_json(s.sigma_eta_prior)},
      {"sigma_beta", prior_to_json(s.sigma_beta_prior)},
      {"sigma_dispersion", prior_to_json(s.sigma_dispersion_prior)},
      {"sigma_reporting", prior_to_json(s.sigma_reporting_prior)},
      {"reporting_intercept",
       s.reporting_intercept_prior ? prior_to_json(*s.reporting_intercept_prior) : Json(nullptr)},
      {"null_space_sd", s.null_space_sd},
      {"iw_df", s.iw_df},
  };
  return j;
}

inline ModelSpec model_spec_from_json(const Json& j, ModelSpec s = {}) {
  const std::string w = "model";
  detail::reject_unknown(j,
                         {"variant", "delay_horizon", "alpha_basis", "eta_basis", "beta_basis", "dispersion_basis",
                          "reporting_basis", "season_period", "max_forecast_horizon", "time_varying_delay",
                          "dispersion_spline", "multinomial_limit", "poisson_limit", "reporting_spline",
                          "fixed_reporting_rate", "priors"},
                         w);
  if (j.contains("variant")) s.variant = variant_from_string(j.at("variant").get<std::string>());
  detail::read_key(j, "delay_horizon", s.delay_horizon, w);
  detail::read_key(j, "alpha_basis", s.alpha_basis, w);
  detail::read_key(j, "eta_basis", s.eta_basis, w);
  detail::read_key(j, "beta_basis", s.beta_basis, w);
  detail::read_key(j, "dispersion_basis", s.dispersion_basis, w);
  detail::read_key(j, "reporting_basis", s.reporting_basis, w);
  detail::read_key(j, "season_period", s.season_period, w);
  detail::read_key(j, "max_forecast_horizon", s.max_forecast_horizon, w);
  detail::read_key(j, "time_varying_delay", s.time_varying_delay, w);
  detail::read_key(j, "dispersion_spline", s.dispersion_spline, w);
  detail::read_key(j, "multinomial_limit", s.multinomial_limit, w);
  detail::read_key(j, "poisson_limit", s.poisson_limit, w);
  detail::read_key(j, "reporting_spline", s.reporting_spline, w);
  if (j.contains("fixed_reporting_rate")) {
    const auto& v = j.at("fixed_reporting_rate");
    if (v.is_null()) s.fixed_reporting_rate.reset();
    else s.fixed_reporting_rate = v.get<double>();
  }
  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    const std::string pw = "model.priors";
    detail::reject_unknown(p,
                           {"iota", "psi_sd", "theta", "phi", "sigma_alpha", "sigma_eta", "sigma_beta",
                            "sigma_dispersion", "sigma_reporting", "reporting_intercept", "null_space_sd", "iw_df"},
                           pw);
    auto prior = [&](const char* k, PriorSpec& out) {
      if (p.contains(k)) out = prior_from_json(p.at(k), pw + "." + k);
    };
    prior("iota", s.iota_prior);
    prior("theta", s.theta_prior);
    prior("phi", s.phi_prior);
    prior("sigma_alpha", s.sigma_alpha_prior);
    prior("sigma_eta", s.sigma_eta_prior);
    prior("sigma_beta", s.sigma_beta_prior);
    prior("sigma_dispersion", s.sigma_dispersion_prior);
    prior("sigma_reporting", s.sigma_reporting_prior);
    if (p.contains("reporting_intercept")) {
      if (p.at("reporting_intercept").is_null()) s.reporting_intercept_prior.reset();
      else s.reporting_intercept_prior = prior_from_json(p.at("reporting_intercept"), pw + ".reporting_intercept");
    }
    detail::read_key(p, "psi_sd", s.psi_prior_sd, pw);
    detail::read_key(p, "null_space_sd", s.null_space_sd, pw);
    detail::read_key(p, "iw_df", s.iw_df, pw);
  }
  return s;
}

inline Json to_json(const SamplerConfig& c) {
  return {{"chains", c.n_chains},
          {"iterations", c.n_iterations},
          {"burn_in", c.burn_in},
          {"thin", c.thin},
          {"seed", c.seed},
          {"threads", c.threads},
          {"init_jitter", c.init_jitter},
          {"target_accept_scalar", c.adaptation.target_accept_scalar},
          {"target_accept_block", c.adaptation.target_accept_block},
          {"adaptation_window", c.adaptation.adaptation_window}};
}

inline SamplerConfig sampler_config_from_json(const Json& j, SamplerConfig c = {}) {
  const std::string w = "sampler";
  detail::reject_unknown(j,
                         {"chains", "iterations", "burn_in", "thin", "seed", "threads", "init_jitter",
                          "target_accept_scalar", "target_accept_block", "adaptation_window"},
                         w);
  detail::read_key(j, "chains", c.n_chains, w);
  detail::read_key(j, "iterations", c.n_iterations, w);
  detail::read_key(j, "burn_in", c.burn_in, w);
  detail::read_key(j, "thin", c.thin, w);
  detail::read_key(j, "seed", c.seed, w);
  detail::read_key(j, "threads", c.threads, w);
  detail::read_key(j, "init_jitter", c.init_jitter, w);
  detail::read_key(j, "target_accept_scalar", c.adaptation.target_accept_scalar, w);
  detail::read_key(j, "target_accept_block", c.adaptation.target_accept_block, w);
  detail::read_key(j, "adaptation_window", c.adaptation.adaptation_window, w);
  return c;
}

inline Json to_json(const ScenarioConfig& s) {
  return {{"n_times", s.n_times},
          {"delay_horizon", s.delay_horizon},
          {"maturity", s.maturity},
          {"present_day", s.present_day},
          {"iota", s.iota},
          {"seasonal_amplitude", s.seasonal_amplitude},
          {"season_period", s.season_period},
          {"trend_slope", s.trend_slope},
          {"psi", s.resolved_psi()},
          {"phi", s.resolved_phi()},
          {"theta", s.theta},
          {"multinomial", s.multinomial},
          {"reporting_rate", s.reporting_rate ? Json(*s.reporting_rate) : Json(nullptr)},
          {"tail_decay", s.tail_decay},
          {"seed", s.seed},
          {"series_id", s.series_id}};
}

inline ScenarioConfig scenario_from_json(const Json& j, ScenarioConfig s = {}) {
  const std::string w = "scenario";
  detail::reject_unknown(j,
                         {"n_times", "delay_horizon", "maturity", "present_day", "iota", "seasonal_amplitude",
                          "season_period", "trend_slope", "psi", "phi", "theta", "multinomial", "reporting_rate",
                          "tail_decay", "seed", "series_id"},
                         w);
  detail::read_key(j, "n_times", s.n_times, w);
  detail::read_key(j, "delay_horizon", s.delay_horizon, w);
  detail::read_key(j, "maturity", s.maturity, w);
  detail::read_key(j, "present_day", s.present_day, w);
  detail::read_key(j, "iota", s.iota, w);
  detail::read_key(j, "seasonal_amplitude", s.seasonal_amplitude, w);
  detail::read_key(j, "season_period", s.season_period, w);
  detail::read_key(j, "trend_slope", s.trend_slope, w);
  detail::read_key(j, "psi", s.psi, w);
  detail::read_key(j, "phi", s.phi, w);
  detail::read_key(j, "theta", s.theta, w);
  detail::read_key(j, "multinomial", s.multinomial, w);
  if (j.contains("reporting_rate")) {
    if (j.at("reporting_rate").is_null()) s.reporting_rate.reset();
    else s.reporting_rate = j.at("reporting_rate").get<double>();
  }
  detail::read_key(j, "tail_decay", s.tail_decay, w);
  detail::read_key(j, "seed", s.seed, w);
  detail::read_key(j, "series_id", s.series_id, w);
  return s;
}

// ---------------------------------------------------------------------------
// Posterior sample directory
//
//   meta.json        schema tag, labels, block index, sampler config, model spec, chain reports
//   data.csv         the fitted (collapsed) triangle, wide format
//   <block>.csv      chain,draw,<labels of one parameter block...>
//   latent_<b>.csv   chain,draw,<labels of one latent block...>
//
// A block is a maximal run of labels sharing the name before '['.

namespace detail {

inline void write_double(std::ostream& os, double v) {
  if (std::isnan(v)) os << "nan";
  else if (std::isinf(v)) os << (v > 0 ? "inf" : "-inf");
  else os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
}

inline double read_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return kPosInf;
  if (s == "-inf") return kNegInf;
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

inline std::vector<std::string> read_header(std::istream& in, const std::string& file) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(file + ": empty file");
  return split_csv(line);
}

struct SampleBlock {
  std::string name;
  std::string file;
  std::size_t first = 0;
  std::size_t size = 0;
};

inline std::vector<SampleBlock> sample_blocks(const std::vector<std::string>& labels, const std::string& file_prefix) {
  std::vector<SampleBlock> out;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const std::string name = labels[k].substr(0, labels[k].find('['));
    if (out.empty() || out.back().name != name) {
      for (const auto& b : out)
        if (b.name == name) throw ConfigError("sample labels of block '" + name + "' are not contiguous");
      out.push_back({name, file_prefix + name + ".csv", k, 0});
    }
    ++out.back().size;
  }
  return out;
}

template <class Matrix, class Writer>
void write_block_csv(const std::filesystem::path& path, const std::vector<std::string>& labels,
                     const SampleBlock& b, const std::vector<Matrix>& draws, Writer write) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "chain,draw";
  for (std::size_t k = 0; k < b.size; ++k) out << ',' << labels[b.first + k];
  out << '\n';
  for (std::size_t c = 0; c < draws.size(); ++c)
    for (Eigen::Index i = 0; i < draws[c].rows(); ++i) {
      out << c + 1 << ',' << i + 1;
      for (std::size_t k = 0; k < b.size; ++k) {
        out << ',';
        write(out, draws[c](i, static_cast<Eigen::Index>(b.first + k)));
      }
      out << '\n';
    }
}

inline Json blocks_to_json(const std::vector<SampleBlock>& blocks) {
  Json a = Json::array();
  for (const auto& b : blocks) a.push_back({{"name", b.name}, {"file", b.file}, {"first", b.first}, {"size", b.size}});
  return a;
}

}  // namespace detail

inline void write_samples_directory(const std::filesystem::path& dir, const PosteriorSamples& samples,
                                    const ModelSpec& spec, const ReportingTriangle& tri) {
  std::filesystem::create_directories(dir);
  const auto blocks = detail::sample_blocks(samples.labels, "");
  const auto latent_blocks = detail::sample_blocks(samples.latent_labels, "latent_");
  Json meta;
  meta["schema"] = kSamplesSchema;
  meta["labels"] = samples.labels;
  meta["latent_labels"] = samples.latent_labels;
  meta["blocks"] = detail::blocks_to_json(blocks);
  meta["latent_blocks"] = detail::blocks_to_json(latent_blocks);
  meta["chains"] = samples.n_chains();
  meta["kept_per_chain"] = samples.n_kept();
  meta["sampler"] = to_json(samples.config);
  meta["model"] = to_json(spec);
  meta["series_id"] = tri.series_id();
  Json reports = Json::array();
  for (const auto& r : samples.reports) {
    Json rb = Json::array();
    for (const auto& b : r.blocks) rb.push_back({{"name", b.name}, {"acceptance", b.acceptance}, {"scale", b.scale}});
    reports.push_back({{"blocks", rb},
                       {"scales_after_burn_in", r.scales_after_burn_in},
                       {"scales_at_end", r.scales_at_end},
                       {"init_attempts", r.init_attempts}});
  }
  meta["reports"] = reports;
  write_json_file(dir / "meta.json", meta);

  {
    std::ofstream out(dir / "data.csv");
    write_wide_csv(out, tri);
  }
  for (const auto& b : blocks) detail::write_block_csv(dir / b.file, samples.labels, b, samples.draws, detail::write_double);
  for (const auto& b : latent_blocks)
    detail::write_block_csv(dir / b.file, samples.latent_labels, b, samples.latent_draws,
                            [](std::ostream& os, Count v) { os << v; });
}

struct LoadedFit {
  ModelSpec spec;
  ReportingTriangle triangle;
  PosteriorSamples samples;
};

inline LoadedFit read_samples_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "meta.json"))
    throw ConfigError(dir.string() + " is not a fit output directory (no meta.json)");
  const Json meta = read_json_file(dir / "meta.json");
  if (meta.value("schema", std::string()) != kSamplesSchema)
    throw ConfigError(dir.string() + ": unsupported sample schema '" + meta.value("schema", std::string()) + "'");
  LoadedFit fit;
  fit.spec = model_spec_from_json(meta.at("model"));
  fit.samples.config = sampler_config_from_json(meta.at("sampler"));
  fit.samples.labels = meta.at("labels").get<std::vector<std::string>>();
  fit.samples.latent_labels = meta.at("latent_labels").get<std::vector<std::string>>();
  const auto n_chains = meta.at("chains").get<std::size_t>();
  const auto kept = meta.at("kept_per_chain").get<Eigen::Index>();
  for (const auto& r : meta.at("reports")) {
    ChainReport cr;
    for (const auto& b : r.at("blocks"))
      cr.blocks.push_back({b.at("name").get<std::string>(), b.at("acceptance").get<double>(), b.at("scale").get<double>()});
    cr.scales_after_burn_in = r.at("scales_after_burn_in").get<std::vector<double>>();
    cr.scales_at_end = r.at("scales_at_end").get<std::vector<double>>();
    cr.init_attempts = r.at("init_attempts").get<int>();
    fit.samples.reports.push_back(std::move(cr));
  }
  {
    std::ifstream in(dir / "data.csv");
    if (!in) throw ConfigError("cannot open " + (dir / "data.csv").string());
    fit.triangle = read_wide_csv(in, meta.value("series_id", std::string()));
  }

  auto load = [&](const detail::SampleBlock& b, auto& dest, auto parse) {
    const std::string& file = b.file;
    std::ifstream in(dir / file);
    if (!in) throw ConfigError("cannot open " + (dir / file).string());
    const auto header = detail::read_header(in, file);
    if (header.size() != b.size + 2) throw ConfigError(file + ": column count does not match meta.json");
    std::string line;
    std::size_t n_rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = detail::split_csv(line);
      if (f.size() != b.size + 2) throw ConfigError(file + ": ragged row");
      long c = -1, i = -1;
      try {
        c = std::stol(f[0]) - 1;
        i = std::stol(f[1]) - 1;
      } catch (const std::logic_error&) {
      }
      if (c < 0 || static_cast<std::size_t>(c) >= n_chains || i < 0 || i >= kept)
        throw ConfigError(file + ": chain/draw index out of range in '" + line.substr(0, 40) + "'");
      try {
        for (std::size_t k = 0; k < b.size; ++k)
          dest[static_cast<std::size_t>(c)](i, static_cast<Eigen::Index>(b.first + k)) = parse(f[k + 2]);
      } catch (const std::logic_error&) {
        throw ConfigError(file + ": malformed number in '" + line.substr(0, 40) + "'");
      }
      ++n_rows;
    }
    if (n_rows != n_chains * static_cast<std::size_t>(kept)) throw ConfigError(file + ": wrong number of draws");
  };
  auto load_all = [&](const std::vector<std::string>& labels, const std::string& prefix, auto& dest, auto parse) {
    for (std::size_t c = 0; c < n_chains; ++c) dest[c].resize(kept, static_cast<Eigen::Index>(labels.size()));
    for (const auto& b : detail::sample_blocks(labels, prefix)) load(b, dest, parse);
  };
  fit.samples.draws.resize(n_chains);
  fit.samples.latent_draws.resize(n_chains);
  load_all(fit.samples.labels, "", fit.samples.draws, detail::read_double);
  load_all(fit.samples.latent_labels, "latent_", fit.samples.latent_draws,
           [](const std::string& s) { return static_cast<Count>(std::stoll(s)); });
  return fit;
}

}  // namespace delaycast
