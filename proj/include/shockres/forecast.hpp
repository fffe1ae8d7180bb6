#pragma once

// Posterior-predictive completion of the lower triangles and risk aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "shock_model.hpp"
#include "stats.hpp"
#include "triangles.hpp"
#include "tweedie.hpp"

namespace shockres {

struct ReserveDistribution {
  std::vector<std::string> line_ids;
  std::vector<std::vector<double>> lines;  // lines[n][s]
  std::vector<double> aggregate;           // aggregate[s] = sum_n lines[n][s]
  std::vector<int> draw;                   // posterior draw index of sample s
  std::vector<int> replicate;              // replicate index within the draw
  std::uint64_t seed = 0;

  std::size_t size() const { return aggregate.size(); }
};

namespace detail {
inline double row_exposure(const LossTriangle& t, int i) {
  return t.exposure() ? (*t.exposure())(i - 1) : 1.0;
}
}  // namespace detail

/// Simulates the future cells of `data` under each parameter draw. Each
/// future cell gets one shock V ~ Tw(alpha_j, beta) shared across lines and
/// idiosyncratic Z ~ Tw(eta_i nu_j, gamma); the cell value is
/// (kappa V + Z - xi) times the row exposure when the data carry one.
inline ReserveDistribution predict_lower(const std::vector<ShockModelParams>& draws, const TrianglePortfolio& data,
                                         std::uint64_t seed, int replicates_per_draw = 1, int threads = 1) {
  if (draws.empty()) throw ConfigError("predict_lower: no parameter draws");
  if (replicates_per_draw < 1) throw ConfigError("predict_lower: replicates_per_draw must be >= 1");
  const std::size_t N = data.size();
  for (const auto& m : draws) {
    if (!tweedie::sampling_supported(m.p)) throw NumericError("predict_lower: sampling not supported for p = " + io::format_number(m.p));
    if (m.lines() != N || m.accident_periods() != data.accident_periods() || m.development_periods() != data.development_periods())
      throw ConfigError("predict_lower: parameter dimensions do not match the data");
  }
  const std::vector<Cell> future = data[0].future_cells();
  const std::size_t R = static_cast<std::size_t>(replicates_per_draw);
  const std::size_t S = draws.size() * R;

  ReserveDistribution out;
  out.seed = seed;
  for (const auto& t : data) out.line_ids.push_back(t.line_id());
  out.lines.assign(N, std::vector<double>(S, 0.0));
  out.aggregate.assign(S, 0.0);
  out.draw.resize(S);
  out.replicate.resize(S);

  parallel_for(draws.size(), threads, [&](std::size_t k) {
    const ShockModelParams& m = draws[k];
    Rng rng = make_rng(seed, "predict_lower", k);
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t s = k * R + r;
      out.draw[s] = static_cast<int>(k);
      out.replicate[s] = static_cast<int>(r);
      for (const Cell& c : future) {
        const double v = tweedie::draw({m.p, shock_mean(m, c.j), m.beta}, rng);
        for (std::size_t n = 0; n < N; ++n) {
          const CellCoordinates cc{c.i, c.j, n};
          const double z = tweedie::draw({m.p, cell_mean(m, cc), m.gamma(static_cast<Eigen::Index>(n))}, rng);
          const double y = kappa(m, cc) * v + z - m.xi(static_cast<Eigen::Index>(n));
          out.lines[n][s] += y * detail::row_exposure(data[n], c.i);
        }
      }
      double agg = 0.0;
      for (std::size_t n = 0; n < N; ++n) agg += out.lines[n][s];
      out.aggregate[s] = agg;
    }
  });
  return out;
}

/// Analytic mean reserve per line at fixed parameters.
inline std::vector<double> expected_reserve(const ShockModelParams& m, const TrianglePortfolio& data) {
  std::vector<double> out(data.size(), 0.0);
  for (const Cell& c : data[0].future_cells())
    for (std::size_t n = 0; n < data.size(); ++n) {
      const CellCoordinates cc{c.i, c.j, n};
      const double mu = kappa(m, cc) * shock_mean(m, c.j) + cell_mean(m, cc) - m.xi(static_cast<Eigen::Index>(n));
      out[n] += mu * detail::row_exposure(data[n], c.i);
    }
  return out;
}

struct SummaryStats {
  std::string label;
  double mean = 0.0;
  double sd = 0.0;
  double var75 = 0.0;
  double var95 = 0.0;

  double value_at_risk(double level) const {
    if (level == 0.75) return var75;
    if (level == 0.95) return var95;
    throw ConfigError("VaR level " + io::format_number(level) + " not available (0.75 or 0.95)");
  }
};

inline SummaryStats summarize_samples(const std::string& label, std::vector<double> v) {
  if (v.empty()) throw DataError("summary of empty reserve sample");
  SummaryStats s;
  s.label = label;
  s.mean = stats::mean(v);
  s.sd = v.size() > 1 ? stats::sd(v) : 0.0;
  std::sort(v.begin(), v.end());
  s.var75 = stats::quantile_sorted(v, 0.75);
  s.var95 = stats::quantile_sorted(v, 0.95);
  return s;
}

/// Per-line statistics followed by the aggregate ("total").
inline std::vector<SummaryStats> summary_stats(const ReserveDistribution& d) {
  std::vector<SummaryStats> out;
  for (std::size_t n = 0; n < d.lines.size(); ++n) out.push_back(summarize_samples(d.line_ids[n], d.lines[n]));
  out.push_back(summarize_samples("total", d.aggregate));
  return out;
}

/// max(VaR_level - mean, SD / 2).
inline double risk_margin(const SummaryStats& s, double level) {
  return std::max(s.value_at_risk(level) - s.mean, 0.5 * s.sd);
}

/// Relative reduction (%) of the aggregate margin against the stand-alone sum.
inline double diversification_benefit(const std::vector<double>& line_margins, double aggregate_margin) {
  double sum = 0.0;
  for (double m : line_margins) {
    if (!(m > 0.0)) throw NumericError("diversification_benefit: line margins must be positive");
    sum += m;
  }
  if (!(sum > 0.0)) throw NumericError("diversification_benefit: zero denominator");
  return (sum - aggregate_margin) / sum * 100.0;
}

struct RiskRow {
  double level = 0.75;
  std::vector<double> line_margins;
  double aggregate_margin = 0.0;
  double benefit = 0.0;
};

/// Margins and benefit at 75% and 95% from per-line plus aggregate statistics.
inline std::vector<RiskRow> risk_table(const std::vector<SummaryStats>& s) {
  if (s.size() < 2) throw ConfigError("risk_table needs per-line and aggregate statistics");
  std::vector<RiskRow> out;
  for (double level : {0.75, 0.95}) {
    RiskRow r;
    r.level = level;
    for (std::size_t n = 0; n + 1 < s.size(); ++n) r.line_margins.push_back(risk_margin(s[n], level));
    r.aggregate_margin = risk_margin(s.back(), level);
    r.benefit = diversification_benefit(r.line_margins, r.aggregate_margin);
    out.push_back(r);
  }
  return out;
}

struct ReserveDependence {
  Eigen::MatrixXd pearson;                       // N x N
  std::vector<std::pair<double, double>> ranks;  // empirical-CDF pairs of lines 1 and 2
};

inline ReserveDependence reserve_dependence(const ReserveDistribution& d) {
  const std::size_t N = d.lines.size();
  if (N < 2) throw ConfigError("reserve_dependence needs at least two lines");
  for (const auto& v : d.lines)
    if (v.size() < 2 || stats::sd(v) == 0.0) throw NumericError("reserve_dependence: degenerate (zero-variance) samples");
  ReserveDependence out;
  out.pearson = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = a + 1; b < N; ++b) {
      const double r = stats::pearson(d.lines[a], d.lines[b]);
      out.pearson(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = r;
      out.pearson(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = r;
    }
  const auto r1 = stats::ranks(d.lines[0]);
  const auto r2 = stats::ranks(d.lines[1]);
  const double n = static_cast<double>(d.size());
  for (std::size_t s = 0; s < r1.size(); ++s) out.ranks.emplace_back(r1[s] / n, r2[s] / n);
  return out;
}

/// Gaussian kernel density estimate with Silverman's rule-of-thumb bandwidth
/// 0.9 min(sd, IQR / 1.34) n^(-1/5), on an evenly spaced grid covering the
/// sample range padded by three bandwidths.
inline std::vector<std::pair<double, double>> kernel_density(std::vector<double> v, int points = 512) {
  if (v.size() < 2) throw DataError("kernel_density needs at least two samples");
  if (points < 2) throw ConfigError("kernel_density needs at least two grid points");
  std::sort(v.begin(), v.end());
  const double sd = stats::sd(v);
  const double iqr = stats::quantile_sorted(v, 0.75) - stats::quantile_sorted(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  const double h = 0.9 * spread * std::pow(static_cast<double>(v.size()), -0.2);
  const double lo = v.front() - 3.0 * h, hi = v.back() + 3.0 * h;
  const double norm = 1.0 / (static_cast<double>(v.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<std::pair<double, double>> out;
  for (int k = 0; k < points; ++k) {
    const double x = lo + (hi - lo) * k / (points - 1);
    // Only samples within 8 bandwidths contribute measurably.
    const auto first = std::lower_bound(v.begin(), v.end(), x - 8.0 * h);
    const auto last = std::upper_bound(v.begin(), v.end(), x + 8.0 * h);
    double s = 0.0;
    for (auto it = first; it != last; ++it) {
      const double z = (x - *it) / h;
      s += std::exp(-0.5 * z * z);
    }
    out.emplace_back(x, s * norm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline std::string reserve_samples_csv(const ReserveDistribution& d) {
  std::string out = "draw,replicate,line,reserve\n";
  for (std::size_t s = 0; s < d.size(); ++s) {
    for (std::size_t n = 0; n < d.lines.size(); ++n)
      out += std::to_string(d.draw[s] + 1) + "," + std::to_string(d.replicate[s] + 1) + "," + d.line_ids[n] + "," +
             io::format_number(d.lines[n][s]) + "\n";
    out += std::to_string(d.draw[s] + 1) + "," + std::to_string(d.replicate[s] + 1) + ",total," + io::format_number(d.aggregate[s]) + "\n";
  }
  return out;
}

inline std::string summary_stats_csv(const std::vector<SummaryStats>& s) {
  std::string out = "line,mean,sd,var75,var95\n";
  for (const auto& r : s)
    out += r.label + "," + io::format_fixed(r.mean, 2) + "," + io::format_fixed(r.sd, 2) + "," + io::format_fixed(r.var75, 2) + "," +
           io::format_fixed(r.var95, 2) + "\n";
  return out;
}

inline std::string risk_table_csv(const std::vector<SummaryStats>& s, const std::vector<RiskRow>& rows) {
  std::string out = "level";
  for (std::size_t n = 0; n + 1 < s.size(); ++n) out += "," + s[n].label;
  out += ",total,diversification_benefit_pct\n";
  for (const auto& r : rows) {
    out += io::format_number(r.level);
    for (double m : r.line_margins) out += "," + io::format_fixed(m, 2);
    out += "," + io::format_fixed(r.aggregate_margin, 2) + "," + io::format_fixed(r.benefit, 1) + "\n";
  }
  return out;
}

inline nlohmann::json risk_json(const std::vector<SummaryStats>& s, const std::vector<RiskRow>& rows) {
  nlohmann::json j;
  for (const auto& r : s) j["summary"][r.label] = {{"mean", r.mean}, {"sd", r.sd}, {"var75", r.var75}, {"var95", r.var95}};
  for (const auto& r : rows) {
    nlohmann::json m;
    for (std::size_t n = 0; n < r.line_margins.size(); ++n) m[s[n].label] = r.line_margins[n];
    m["total"] = r.aggregate_margin;
    m["diversification_benefit_pct"] = r.benefit;
    j["risk_margins"][r.level == 0.75 ? "75" : "95"] = m;
  }
  return j;
}

inline std::string pairs_csv(const std::string& hx, const std::string& hy, const std::vector<std::pair<double, double>>& v) {
  std::string out = hx + "," + hy + "\n";
  for (const auto& [a, b] : v) out += io::format_number(a) + "," + io::format_number(b) + "\n";
  return out;
}

}  // namespace shockres
