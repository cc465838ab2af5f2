#pragma once

// Reporting triangles of delayed counts.
//
// Delay indexing: delay 1 is the count reported in the week of occurrence.
// File formats (long and wide CSV) use 1-based time and delay indices. The
// C++ accessors below are 0-based: row r is time index r + 1 and column c is
// delay c + 1. In a collapsed triangle the last column holds the remainder
// z[t][D+1] = y[t] - sum_{d<=D} z[t][d].

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "delaycast/errors.hpp"
#include "delaycast/stats.hpp"

namespace delaycast {

using Count = std::int64_t;

struct CensoringSpec {
  int present_day = 0;    ///< last time index at which reports have arrived
  int delay_horizon = 1;  ///< D: individually modelled delays
  int maturity = 1;       ///< delay after which a total is treated as final

  void validate() const {
    if (delay_horizon < 1) throw ConfigError("delay_horizon must be >= 1");
    if (maturity < delay_horizon) throw ConfigError("delay_horizon must not exceed maturity");
    if (present_day < 0) throw ConfigError("present_day must be >= 0");
  }
};

class ReportingTriangle {
 public:
  ReportingTriangle() = default;

  /// Builds a triangle from dense row-major cells and an observation mask.
  /// Unobserved cells are stored as zero regardless of the input value.
  ReportingTriangle(std::size_t n_times, std::size_t n_columns, std::vector<Count> cells,
                    std::vector<std::uint8_t> observed, std::string series_id = {})
      : n_times_(n_times),
        n_columns_(n_columns),
        cells_(std::move(cells)),
        observed_(std::move(observed)),
        series_id_(std::move(series_id)) {
    if (cells_.size() != n_times_ * n_columns_ || observed_.size() != cells_.size())
      throw std::invalid_argument("ReportingTriangle: cell/mask size mismatch");
    prefix_.assign(n_times_, 0);
    for (std::size_t t = 0; t < n_times_; ++t) {
      std::size_t len = 0;
      bool gap = false;
      for (std::size_t c = 0; c < n_columns_; ++c) {
        const auto i = t * n_columns_ + c;
        if (observed_[i]) {
          if (gap) throw std::invalid_argument("ReportingTriangle: observed cells must form a prefix in row " +
                                               std::to_string(t + 1));
          if (cells_[i] < 0) throw std::invalid_argument("ReportingTriangle: negative count");
          ++len;
        } else {
          gap = true;
          cells_[i] = 0;
        }
      }
      prefix_[t] = len;
    }
  }

  static ReportingTriangle from_rows(const std::vector<std::vector<Count>>& rows,
                                     const std::vector<std::vector<bool>>& mask, std::string series_id = {}) {
    const std::size_t n = rows.size();
    const std::size_t k = n == 0 ? 0 : rows.front().size();
    std::vector<Count> cells;
    std::vector<std::uint8_t> obs;
    cells.reserve(n * k);
    obs.reserve(n * k);
    for (std::size_t t = 0; t < n; ++t) {
      if (rows[t].size() != k || mask.size() != n || mask[t].size() != k)
        throw std::invalid_argument("ReportingTriangle::from_rows: ragged input");
      for (std::size_t c = 0; c < k; ++c) {
        cells.push_back(rows[t][c]);
        obs.push_back(mask[t][c] ? 1 : 0);
      }
    }
    return ReportingTriangle(n, k, std::move(cells), std::move(obs), std::move(series_id));
  }

  std::size_t n_times() const noexcept { return n_times_; }
  std::size_t n_columns() const noexcept { return n_columns_; }
  const std::string& series_id() const noexcept { return series_id_; }

  Count cell(std::size_t t, std::size_t c) const { return cells_[t * n_columns_ + c]; }
  bool observed(std::size_t t, std::size_t c) const { return observed_[t * n_columns_ + c] != 0; }

  /// Number of observed leading cells in row t.
  std::size_t observed_prefix(std::size_t t) const { return prefix_[t]; }
  bool fully_observed(std::size_t t) const { return prefix_[t] == n_columns_; }

  Count prefix_sum(std::size_t t, std::size_t len) const {
    Count s = 0;
    for (std::size_t c = 0; c < len; ++c) s += cell(t, c);
    return s;
  }
  /// Sum of the observed cells of row t.
  Count observed_sum(std::size_t t) const { return prefix_sum(t, prefix_[t]); }

  /// y[t], available only for fully observed rows.
  std::optional<Count> total(std::size_t t) const {
    if (!fully_observed(t)) return std::nullopt;
    return observed_sum(t);
  }

  std::vector<std::size_t> fully_observed_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < n_times_; ++t)
      if (fully_observed(t)) out.push_back(t);
    return out;
  }

  bool operator==(const ReportingTriangle& o) const {
    return n_times_ == o.n_times_ && n_columns_ == o.n_columns_ && cells_ == o.cells_ && observed_ == o.observed_;
  }

 private:
  std::size_t n_times_ = 0;
  std::size_t n_columns_ = 0;
  std::vector<Count> cells_;
  std::vector<std::uint8_t> observed_;
  std::vector<std::size_t> prefix_;
  std::string series_id_;
};

/// Staircase observability: row t (1-based) column c is observed iff
/// t + last_delay[c] - 1 <= present_day. For an uncollapsed triangle
/// last_delay[c] = c + 1; the remainder column of a collapsed triangle uses
/// the maturity.
inline std::vector<std::uint8_t> staircase_mask(std::size_t n_times, std::span<const int> last_delay,
                                                int present_day) {
  std::vector<std::uint8_t> mask(n_times * last_delay.size(), 0);
  for (std::size_t t = 0; t < n_times; ++t)
    for (std::size_t c = 0; c < last_delay.size(); ++c)
      mask[t * last_delay.size() + c] = static_cast<long>(t + 1) + last_delay[c] - 1 <= present_day ? 1 : 0;
  return mask;
}

inline std::vector<int> raw_last_delays(std::size_t n_columns) {
  std::vector<int> d(n_columns);
  for (std::size_t c = 0; c < n_columns; ++c) d[c] = static_cast<int>(c) + 1;
  return d;
}

inline std::vector<int> collapsed_last_delays(int delay_horizon, int maturity) {
  auto d = raw_last_delays(static_cast<std::size_t>(delay_horizon));
  d.push_back(maturity);
  return d;
}

/// Censors complete cells (row-major, n_times x last_delay.size()) at present_day.
inline ReportingTriangle apply_staircase(std::size_t n_times, std::vector<Count> cells,
                                         std::span<const int> last_delay, int present_day,
                                         std::string series_id = {}) {
  auto mask = staircase_mask(n_times, last_delay, present_day);
  return ReportingTriangle(n_times, last_delay.size(), std::move(cells), std::move(mask), std::move(series_id));
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct LongCsvSchema {
  std::string time = "time_index";
  std::string delay = "delay";
  std::string count = "count";
  std::string series = "series";
};

namespace detail {

inline std::string trim(std::string s) {
  auto issp = [](unsigned char ch) { return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n'; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
  s.erase(0, i);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(trim(field));
  return out;
}

/// Parses a decimal integer; `integral` is false when the text is a valid
/// number with a fractional part.
inline std::optional<long long> parse_integer(const std::string& text, bool& integral) {
  integral = true;
  if (text.empty()) return std::nullopt;
  std::size_t pos = 0;
  try {
    long long v = std::stoll(text, &pos);
    if (pos == text.size()) return v;
    double d = std::stod(text, &pos);
    if (pos != text.size()) return std::nullopt;
    if (d == static_cast<double>(static_cast<long long>(d))) return static_cast<long long>(d);
    integral = false;
    return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

struct LongRecord {
  long long time, delay, count;
  std::string series;
  std::size_t line;
};

inline std::vector<LongRecord> read_long_records(std::istream& in, const LongCsvSchema& schema) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw ParseError(ParseErrorKind::kNoRecords, 0, "no records");
  auto col = [&](const std::string& name, bool required) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw ParseError(ParseErrorKind::kMissingColumn, lineno, "missing column '" + name + "'");
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int ct = col(schema.time, true), cd = col(schema.delay, true), cc = col(schema.count, true);
  const int cs = col(schema.series, false);

  std::vector<LongRecord> recs;
  std::map<std::tuple<std::string, long long, long long>, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split_csv(line);
    const int need = std::max({ct, cd, cc, cs}) + 1;
    if (static_cast<int>(f.size()) < need)
      throw ParseError(ParseErrorKind::kMalformedRow, lineno, "expected " + std::to_string(need) + " fields");
    bool integral = true;
    auto t = parse_integer(f[ct], integral);
    if (!t) throw ParseError(ParseErrorKind::kMalformedRow, lineno, "time index is not an integer: '" + f[ct] + "'");
    auto d = parse_integer(f[cd], integral);
    if (!d) throw ParseError(ParseErrorKind::kMalformedRow, lineno, "delay is not an integer: '" + f[cd] + "'");
    auto c = parse_integer(f[cc], integral);
    if (!c) {
      if (!integral) throw ParseError(ParseErrorKind::kNonIntegerCount, lineno, "non-integer count '" + f[cc] + "'");
      throw ParseError(ParseErrorKind::kMalformedRow, lineno, "count is not a number: '" + f[cc] + "'");
    }
    if (*c < 0) throw ParseError(ParseErrorKind::kNegativeCount, lineno, "negative count " + f[cc]);
    if (*d < 1) throw ParseError(ParseErrorKind::kDelayBelowOne, lineno, "delay must be >= 1 (got " + f[cd] + ")");
    if (*t < 1) throw ParseError(ParseErrorKind::kTimeBelowOne, lineno, "time index must be >= 1");
    std::string series = cs >= 0 ? f[cs] : std::string{};
    auto key = std::make_tuple(series, *t, *d);
    if (auto it = seen.find(key); it != seen.end())
      throw ParseError(ParseErrorKind::kDuplicateKey, lineno,
                       "duplicate (time, delay) pair, first seen on line " + std::to_string(it->second));
    seen.emplace(key, lineno);
    recs.push_back({*t, *d, *c, std::move(series), lineno});
  }
  if (recs.empty()) throw ParseError(ParseErrorKind::kNoRecords, 0, "no records");
  return recs;
}

inline ReportingTriangle build_from_records(const std::vector<LongRecord>& recs, const CensoringSpec& spec,
                                            const std::string& series) {
  long long max_t = spec.present_day, max_d = spec.maturity;
  for (const auto& r : recs) {
    max_t = std::max(max_t, r.time);
    max_d = std::max(max_d, r.delay);
  }
  const auto n = static_cast<std::size_t>(max_t), k = static_cast<std::size_t>(max_d);
  std::vector<Count> cells(n * k, 0);
  for (const auto& r : recs) cells[(r.time - 1) * k + (r.delay - 1)] = r.count;
  auto last = raw_last_delays(k);
  return apply_staircase(n, std::move(cells), last, spec.present_day, series);
}

}  // namespace detail

/// Reads every series of a long CSV (time_index, delay, count[, series]).
/// Pairs absent from the file are zero inside the observed staircase; cells
/// past the present day are unobserved whatever the file says.
inline std::vector<ReportingTriangle> parse_long_csv_series(std::istream& in, const CensoringSpec& spec,
                                                            const LongCsvSchema& schema = {}) {
  auto recs = detail::read_long_records(in, schema);
  std::vector<std::string> order;
  std::map<std::string, std::vector<detail::LongRecord>> by_series;
  for (auto& r : recs) {
    if (!by_series.count(r.series)) order.push_back(r.series);
    by_series[r.series].push_back(r);
  }
  std::vector<ReportingTriangle> out;
  for (const auto& s : order) out.push_back(detail::build_from_records(by_series[s], spec, s));
  return out;
}

inline ReportingTriangle parse_long_csv(std::istream& in, const CensoringSpec& spec,
                                        const LongCsvSchema& schema = {}) {
  auto all = parse_long_csv_series(in, spec, schema);
  if (all.size() != 1)
    throw ParseError(ParseErrorKind::kMalformedRow, 0,
                     "file holds " + std::to_string(all.size()) + " series; select one with parse_long_csv_series");
  return std::move(all.front());
}

inline ReportingTriangle parse_long_csv(const std::string& path, const CensoringSpec& spec,
                                        const LongCsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kIo, 0, "cannot open " + path);
  return parse_long_csv(in, spec, schema);
}

/// Observed cells only, 1-based indices.
inline void write_long_csv(std::ostream& os, const ReportingTriangle& tri, bool with_series = false) {
  os << "time_index,delay,count" << (with_series ? ",series" : "") << "\n";
  for (std::size_t t = 0; t < tri.n_times(); ++t)
    for (std::size_t c = 0; c < tri.observed_prefix(t); ++c) {
      os << t + 1 << ',' << c + 1 << ',' << tri.cell(t, c);
      if (with_series) os << ',' << tri.series_id();
      os << "\n";
    }
}

/// Wide layout: one row per time index, `NA` for unobserved cells.
inline void write_wide_csv(std::ostream& os, const ReportingTriangle& tri) {
  os << "time_index";
  for (std::size_t c = 0; c < tri.n_columns(); ++c) os << ",d" << c + 1;
  os << "\n";
  for (std::size_t t = 0; t < tri.n_times(); ++t) {
    os << t + 1;
    for (std::size_t c = 0; c < tri.n_columns(); ++c) {
      os << ',';
      if (tri.observed(t, c))
        os << tri.cell(t, c);
      else
        os << "NA";
    }
    os << "\n";
  }
}

inline ReportingTriangle read_wide_csv(std::istream& in, std::string series_id = {}) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) {
      header = detail::split_csv(line);
      break;
    }
  }
  if (header.size() < 2) throw ParseError(ParseErrorKind::kNoRecords, 0, "no records");
  const std::size_t k = header.size() - 1;
  std::vector<Count> cells;
  std::vector<std::uint8_t> mask;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_csv(line);
    if (f.size() != k + 1) throw ParseError(ParseErrorKind::kMalformedRow, lineno, "wrong field count");
    for (std::size_t c = 1; c <= k; ++c) {
      if (f[c] == "NA") {
        cells.push_back(0);
        mask.push_back(0);
        continue;
      }
      bool integral = true;
      auto v = detail::parse_integer(f[c], integral);
      if (!v) throw ParseError(integral ? ParseErrorKind::kMalformedRow : ParseErrorKind::kNonIntegerCount, lineno,
                               "bad cell '" + f[c] + "'");
      if (*v < 0) throw ParseError(ParseErrorKind::kNegativeCount, lineno, "negative count");
      cells.push_back(*v);
      mask.push_back(1);
    }
    ++n;
  }
  if (n == 0) throw ParseError(ParseErrorKind::kNoRecords, 0, "no records");
  try {
    return ReportingTriangle(n, k, std::move(cells), std::move(mask), std::move(series_id));
  } catch (const std::invalid_argument& e) {
    throw ParseError(ParseErrorKind::kMalformedRow, 0, e.what());
  }
}

// ---------------------------------------------------------------------------
// Derived triangles and summaries

/// Collapses delays D+1..maturity of a raw triangle into one remainder column.
/// The remainder is observed exactly when the raw cell at the maturity is.
inline ReportingTriangle collapse_remainder(const ReportingTriangle& raw, const CensoringSpec& spec) {
  if (spec.delay_horizon < 1) throw ConfigError("delay_horizon must be >= 1");
  if (spec.delay_horizon > spec.maturity) throw ConfigError("delay_horizon exceeds maturity");
  const auto D = static_cast<std::size_t>(spec.delay_horizon);
  const auto M = static_cast<std::size_t>(spec.maturity);
  if (raw.n_columns() < M) throw ConfigError("raw triangle has fewer columns than the maturity");
  const std::size_t n = raw.n_times(), k = D + 1;
  std::vector<Count> cells(n * k, 0);
  std::vector<std::uint8_t> mask(n * k, 0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < D; ++c) {
      cells[t * k + c] = raw.cell(t, c);
      mask[t * k + c] = raw.observed(t, c);
    }
    Count rem = 0;
    for (std::size_t c = D; c < M; ++c) rem += raw.cell(t, c);
    const bool obs = raw.observed(t, M - 1);
    cells[t * k + D] = obs ? rem : 0;
    mask[t * k + D] = obs;
  }
  return ReportingTriangle(n, k, std::move(cells), std::move(mask), raw.series_id());
}

/// Entry (d, q): empirical probs[q]-quantile over fully observed rows with
/// y > 0 of the cumulative proportion sum_{i<=d} z[t][i] / y[t].
inline Eigen::MatrixXd cumulative_proportion_quantiles(const ReportingTriangle& tri, std::span<const double> probs) {
  for (double p : probs)
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");
  auto rows = tri.fully_observed_rows();
  if (rows.empty()) throw DomainError("no fully observed rows");
  std::vector<std::vector<double>> props(tri.n_columns());
  for (auto t : rows) {
    const Count y = tri.observed_sum(t);
    if (y == 0) continue;
    Count cum = 0;
    for (std::size_t c = 0; c < tri.n_columns(); ++c) {
      cum += tri.cell(t, c);
      props[c].push_back(static_cast<double>(cum) / static_cast<double>(y));
    }
  }
  if (props.front().empty()) throw DomainError("all fully observed totals are zero");
  Eigen::MatrixXd out(tri.n_columns(), probs.size());
  for (std::size_t c = 0; c < tri.n_columns(); ++c) {
    std::sort(props[c].begin(), props[c].end());
    for (std::size_t q = 0; q < probs.size(); ++q) out(c, q) = stats::quantile_sorted(props[c], probs[q]);
  }
  return out;
}

struct DelaySelection {
  int delay_horizon = 1;
  /// False when no delay short of the last column reached the threshold; the
  /// selection then falls back to the maturity.
  bool reached = true;
};

inline DelaySelection select_delay_horizon(const ReportingTriangle& tri, double threshold, double quantile) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  const double probs[] = {quantile};
  auto q = cumulative_proportion_quantiles(tri, probs);
  const auto k = static_cast<int>(tri.n_columns());
  for (int d = 1; d < k; ++d)
    if (q(d - 1, 0) >= threshold) return {d, true};
  return {k, false};
}

}  // namespace delaycast
