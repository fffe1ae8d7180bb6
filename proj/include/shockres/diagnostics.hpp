#pragma once

// Preliminary dependence analysis, goodness of fit and the balanced/original
// comparison harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "glm.hpp"
#include "io.hpp"
#include "random.hpp"
#include "shock_model.hpp"
#include "stats.hpp"
#include "triangles.hpp"
#include "tweedie.hpp"

namespace shockres {

struct ResidualCorrelations {
  std::size_t n = 0;
  double pearson = 0.0, pearson_p = 1.0;
  double spearman = 0.0, spearman_p = 1.0;
  double kendall = 0.0, kendall_p = 1.0;
};

/// Cell-wise correlation of two residual grids; NaN marks cells to skip and
/// both grids must skip the same cells.
inline ResidualCorrelations residual_correlations(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DataError("residual_correlations: grid shapes differ");
  std::vector<double> x, y;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const bool fa = std::isfinite(a(i, j)), fb = std::isfinite(b(i, j));
      if (fa != fb) throw DataError("residual_correlations: observed masks differ");
      if (fa) {
        x.push_back(a(i, j));
        y.push_back(b(i, j));
      }
    }
  if (x.size() < 3) throw DataError("residual_correlations: fewer than 3 paired cells");
  ResidualCorrelations r;
  r.n = x.size();
  r.pearson = stats::pearson(x, y);
  r.pearson_p = stats::correlation_t_pvalue(r.pearson, r.n);
  r.spearman = stats::spearman(x, y);
  r.spearman_p = stats::correlation_t_pvalue(r.spearman, r.n);
  const auto k = stats::kendall(x, y);
  r.kendall = k.tau_b;
  r.kendall_p = k.p_value;
  return r;
}

inline ResidualCorrelations residual_correlations(const GlmFit& a, const GlmFit& b) {
  return residual_correlations(a.pearson, b.pearson);
}

inline nlohmann::json to_json(const ResidualCorrelations& r) {
  return {{"n", r.n},
          {"pearson", {{"coefficient", r.pearson}, {"p_value", r.pearson_p}}},
          {"spearman", {{"coefficient", r.spearman}, {"p_value", r.spearman_p}}},
          {"kendall", {{"coefficient", r.kendall}, {"p_value", r.kendall_p}}}};
}

/// Observed / fitted on the GLM's (translated) scale; NaN off the observed cells.
inline Eigen::MatrixXd residual_ratio_heatmap(const GlmFit& f, const LossTriangle& t) {
  const int I = t.accident_periods(), J = t.development_periods();
  if (f.fitted.rows() != I || f.fitted.cols() != J) throw DataError("residual_ratio_heatmap: fit and triangle differ in shape");
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(I, J, std::numeric_limits<double>::quiet_NaN());
  for (const Cell& c : t.observed_cells()) {
    const double m = f.fitted(c.i - 1, c.j - 1);
    if (!std::isfinite(m)) throw DataError("residual_ratio_heatmap: no fitted value at an observed cell");
    if (m == 0.0) throw NumericError("residual_ratio_heatmap: division by a zero fitted value");
    out(c.i - 1, c.j - 1) = (t(c.i, c.j) + f.translation) / m;
  }
  return out;
}

/// Estimated / true model correlation between lines a and b on the given
/// cells (the future cells of `mask` by default); NaN elsewhere.
inline Eigen::MatrixXd correlation_ratio_grid(const ShockModelParams& estimated, const ShockModelParams& truth,
                                              const LossTriangle& mask, std::size_t a = 0, std::size_t b = 1,
                                              CellState on = CellState::future) {
  const int I = mask.accident_periods(), J = mask.development_periods();
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(I, J, std::numeric_limits<double>::quiet_NaN());
  for (const Cell& c : mask.cells_in(on)) {
    const double t = model_correlation(truth, c.i, c.j, a, b);
    if (t == 0.0) throw NumericError("correlation_ratio_grid: zero true correlation");
    out(c.i - 1, c.j - 1) = model_correlation(estimated, c.i, c.j, a, b) / t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Goodness of fit

struct QqLine {
  std::string line_id;
  std::vector<double> u;                             // randomized PIT values, cell order
  std::vector<double> residuals;                     // normal-scale residuals, cell order
  std::vector<std::pair<double, double>> pairs;      // (theoretical, empirical), sorted
  bool degenerate = false;                           // all residuals equal
};

/// Randomized quantile residuals of the observed cells under the cell
/// marginals of Y + xi. At an atom the PIT value is drawn uniformly over the
/// atom's CDF jump.
inline std::vector<QqLine> qq_residuals(const ShockModelParams& m, const TrianglePortfolio& data, std::uint64_t seed) {
  if (m.lines() != data.size()) throw ConfigError("qq_residuals: parameter and data line counts differ");
  Rng rng = make_rng(seed, "qq_residuals");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<QqLine> out;
  for (std::size_t n = 0; n < data.size(); ++n) {
    QqLine q;
    q.line_id = data[n].line_id();
    for (const Cell& c : data[n].observed_cells()) {
      const tweedie::Params tp = marginal_params(m, {c.i, c.j, n});
      const tweedie::Density dens(tp);
      const double y = data[n](c.i, c.j) + m.xi(static_cast<Eigen::Index>(n));
      double lo, hi;
      if (tp.p == 1.0) {
        hi = dens.cdf(y);
        lo = dens.cdf(y - tp.phi);
      } else if (tp.p > 1.0 && tp.p < 2.0 && y <= 0.0) {
        lo = 0.0;
        hi = y < 0.0 ? 0.0 : std::exp(dens.log_zero_mass());
      } else {
        lo = hi = dens.cdf(y);
      }
      if (!std::isfinite(lo) || !std::isfinite(hi)) throw NumericError("qq_residuals: marginal CDF evaluation failed");
      double u = lo + (hi - lo) * unif(rng);
      u = std::clamp(u, 1e-15, 1.0 - 1e-15);
      q.u.push_back(u);
      q.residuals.push_back(stats::normal_quantile(u));
    }
    std::vector<double> s = q.residuals;
    std::sort(s.begin(), s.end());
    const double k = static_cast<double>(s.size());
    for (std::size_t r = 0; r < s.size(); ++r)
      q.pairs.emplace_back(stats::normal_quantile((static_cast<double>(r) + 0.5) / k), s[r]);
    q.degenerate = s.empty() || s.front() == s.back();
    out.push_back(std::move(q));
  }
  return out;
}

/// Observation minus model mean, y - (E[Y + xi] - xi), on the observed cells.
inline std::vector<Eigen::MatrixXd> raw_residuals(const ShockModelParams& m, const TrianglePortfolio& data) {
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const LossTriangle& t = data[n];
    Eigen::MatrixXd g = Eigen::MatrixXd::Constant(t.accident_periods(), t.development_periods(), std::numeric_limits<double>::quiet_NaN());
    for (const Cell& c : t.observed_cells())
      g(c.i - 1, c.j - 1) = t(c.i, c.j) - (marginal_params(m, {c.i, c.j, n}).mu - m.xi(static_cast<Eigen::Index>(n)));
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Balanced versus original

struct ProportionComparison {
  std::vector<Eigen::MatrixXd> balanced;  // fitted / true proportion, per line
  std::vector<Eigen::MatrixXd> original;
  double balanced_mean_abs_log = 0.0;
  double original_mean_abs_log = 0.0;
};

/// Fitted-over-true common-shock proportions for every cell of the square.
inline ProportionComparison shock_proportion_comparison(const ShockModelParams& truth, const ShockModelParams& balanced,
                                                        const ShockModelParams& original) {
  const int I = truth.accident_periods(), J = truth.development_periods();
  for (const auto* m : {&balanced, &original})
    if (m->lines() != truth.lines() || m->accident_periods() != I || m->development_periods() != J)
      throw ConfigError("shock_proportion_comparison: dimensions differ");
  ProportionComparison out;
  double sb = 0.0, so = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < truth.lines(); ++n) {
    Eigen::MatrixXd gb(I, J), go(I, J);
    for (int i = 1; i <= I; ++i)
      for (int j = 1; j <= J; ++j) {
        const CellCoordinates x{i, j, n};
        const double t = shock_proportion(truth, x);
        gb(i - 1, j - 1) = shock_proportion(balanced, x, ShockStructure::balanced) / t;
        go(i - 1, j - 1) = shock_proportion(original, x, ShockStructure::original) / t;
        sb += std::abs(std::log(gb(i - 1, j - 1)));
        so += std::abs(std::log(go(i - 1, j - 1)));
        ++count;
      }
    out.balanced.push_back(gb);
    out.original.push_back(go);
  }
  out.balanced_mean_abs_log = sb / static_cast<double>(count);
  out.original_mean_abs_log = so / static_cast<double>(count);
  return out;
}

// ---------------------------------------------------------------------------
// Empirical bivariate marginals

/// Pseudo-observations (rank / (n + 1)) of the observed cells of lines a and b.
inline std::vector<std::pair<double, double>> empirical_bivariate_marginals(const TrianglePortfolio& data, std::size_t a = 0,
                                                                           std::size_t b = 1) {
  if (data.size() < 2) throw ConfigError("empirical_bivariate_marginals needs two lines");
  if (!data[a].same_shape(data[b])) throw DataError("empirical_bivariate_marginals: observed masks differ");
  std::vector<double> x, y;
  for (const Cell& c : data[a].observed_cells()) {
    x.push_back(data[a](c.i, c.j));
    y.push_back(data[b](c.i, c.j));
  }
  const auto rx = stats::ranks(x), ry = stats::ranks(y);
  const double d = static_cast<double>(x.size()) + 1.0;
  std::vector<std::pair<double, double>> out;
  for (std::size_t k = 0; k < x.size(); ++k) out.emplace_back(rx[k] / d, ry[k] / d);
  return out;
}

/// One replicate of the observed cells simulated from fitted parameters, with
/// the data's mask.
inline TrianglePortfolio backfit_replicate(const ShockModelParams& m, const TrianglePortfolio& data, std::uint64_t seed) {
  const TrianglePortfolio sim = simulate_portfolio(m, derive_seed(seed, "backfit"));
  std::vector<LossTriangle> lines;
  for (std::size_t n = 0; n < data.size(); ++n) {
    LossTriangle t = data[n].like();
    for (const Cell& c : data[n].observed_cells()) t(c.i, c.j) = sim[n](c.i, c.j);
    lines.push_back(std::move(t));
  }
  return TrianglePortfolio(std::move(lines));
}

// ---------------------------------------------------------------------------
// Output

/// Grid as CSV with an accident column and one column per development period;
/// NaN cells are left blank.
inline std::string grid_csv(const Eigen::MatrixXd& g) {
  std::string out = "accident";
  for (Eigen::Index j = 0; j < g.cols(); ++j) out += ",dev" + std::to_string(j + 1);
  out += "\n";
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    out += std::to_string(i + 1);
    for (Eigen::Index j = 0; j < g.cols(); ++j) out += "," + (std::isfinite(g(i, j)) ? io::format_number(g(i, j)) : std::string());
    out += "\n";
  }
  return out;
}

/// Minimal SVG heat map of a ratio grid. Colours diverge on log2(ratio):
/// white at 1, red above, blue below, saturating at `span` octaves.
inline std::string heatmap_svg(const Eigen::MatrixXd& g, const std::string& title, double span = 1.0) {
  const int cell = 36, left = 40, top = 40;
  const int w = left + cell * static_cast<int>(g.cols()) + 10, h = top + cell * static_cast<int>(g.rows()) + 10;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  s << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    s << "<text x=\"" << left + cell * j + cell / 2 << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\">" << j + 1 << "</text>\n";
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * i + cell / 2 + 4 << "\" text-anchor=\"end\">" << i + 1 << "</text>\n";
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double v = g(i, j);
      if (!std::isfinite(v) || v <= 0.0) continue;
      const double t = std::clamp(std::log2(v) / span, -1.0, 1.0);
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(t))));
      const int r = t > 0.0 ? 255 : fade, gg = fade, b = t < 0.0 ? 255 : fade;
      s << "<rect x=\"" << left + cell * j << "\" y=\"" << top + cell * i << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"rgb(" << r << "," << gg << "," << b << ")\" stroke=\"#999\"/>\n";
      s << "<text x=\"" << left + cell * j + cell / 2 << "\" y=\"" << top + cell * i + cell / 2 + 4 << "\" text-anchor=\"middle\">"
        << io::format_fixed(v, 2) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

inline std::string qq_csv(const std::vector<QqLine>& q) {
  std::string out = "line,theoretical,empirical\n";
  for (const auto& l : q)
    for (const auto& [a, b] : l.pairs) out += l.line_id + "," + io::format_number(a) + "," + io::format_number(b) + "\n";
  return out;
}

}  // namespace shockres
