#pragma once

// Tweedie quasi-likelihood GLM with log link and chain-ladder mean structure
//   log mu_ij = a_i + b_j (+ h_t),  t = i + j - 1,  a_1 = 0 (and h_1 = 0),
// fitted by iteratively reweighted least squares on a column-pivoted QR, so
// the aliased calendar design is handled by dropping a redundant column.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "triangles.hpp"

namespace shockres {

struct GlmOptions {
  double p = 1.1;
  bool calendar = false;
  double translation = 0.0;  // added to every observation before fitting
  int max_iterations = 100;
  double tolerance = 1e-10;
};

struct GlmFit {
  std::string line_id;
  double p = 1.1;
  bool calendar = false;
  double translation = 0.0;
  Eigen::MatrixXd design;            // one row per observed cell (row-major over the triangle)
  Eigen::VectorXd coefficients;      // aliased columns hold 0
  std::vector<std::string> coefficient_names;
  Eigen::MatrixXd fitted;            // I x J fitted means (translated scale), NaN off the observed cells
  Eigen::MatrixXd pearson;           // I x J Pearson residuals, NaN off the observed cells
  std::vector<Cell> cells;           // observed cells in design-row order
  Eigen::VectorXd response;          // translated observations in design-row order
  Eigen::VectorXd mean;              // fitted means in design-row order
  double dispersion = 0.0;           // Pearson chi-square / (n - rank)
  int rank = 0;
  int iterations = 0;
  bool rank_deficient = false;
};

/// Log-linear predictor for any cell, including unobserved ones (used for
/// chain-ladder style completion). Calendar effects beyond the data are
/// unavailable and throw.
inline double glm_linear_predictor(const GlmFit& f, int i, int j, int I, int J) {
  double eta = 0.0;
  std::size_t k = 0;
  for (int a = 2; a <= I; ++a, ++k)
    if (a == i) eta += f.coefficients(static_cast<Eigen::Index>(k));
  for (int b = 1; b <= J; ++b, ++k)
    if (b == j) eta += f.coefficients(static_cast<Eigen::Index>(k));
  if (f.calendar) {
    const int t = i + j - 1;
    bool found = t == 1;
    for (int h = 2; k < static_cast<std::size_t>(f.coefficients.size()); ++h, ++k)
      if (h == t) {
        eta += f.coefficients(static_cast<Eigen::Index>(k));
        found = true;
      }
    if (!found) throw DataError("calendar effect for period " + std::to_string(t) + " is not estimable");
  }
  return eta;
}

/// Tweedie unit deviance d(y, mu).
inline double tweedie_unit_deviance(double y, double m, double p) {
  if (p == 0.0) return (y - m) * (y - m);
  if (p == 1.0) return 2.0 * ((y > 0.0 ? y * std::log(y / m) : 0.0) - (y - m));
  if (p == 2.0) return 2.0 * ((y > 0.0 ? std::log(m / y) : 0.0) + y / m - 1.0);
  const double a = y > 0.0 ? std::pow(y, 2.0 - p) / ((1.0 - p) * (2.0 - p)) : 0.0;
  return 2.0 * (a - y * std::pow(m, 1.0 - p) / (1.0 - p) + std::pow(m, 2.0 - p) / (2.0 - p));
}

inline GlmFit fit_tweedie_glm(const LossTriangle& t, const GlmOptions& opt = {}) {
  const int I = t.accident_periods(), J = t.development_periods();
  GlmFit f;
  f.line_id = t.line_id();
  f.p = opt.p;
  f.calendar = opt.calendar;
  f.translation = opt.translation;
  f.cells = t.observed_cells();
  const auto n = static_cast<Eigen::Index>(f.cells.size());

  int max_t = 1;
  for (const Cell& c : f.cells) max_t = std::max(max_t, c.i + c.j - 1);
  for (int a = 2; a <= I; ++a) f.coefficient_names.push_back("a" + std::to_string(a));
  for (int b = 1; b <= J; ++b) f.coefficient_names.push_back("b" + std::to_string(b));
  if (opt.calendar)
    for (int h = 2; h <= max_t; ++h) f.coefficient_names.push_back("h" + std::to_string(h));
  const auto k = static_cast<Eigen::Index>(f.coefficient_names.size());
  if (n <= k / 2) throw DataError("GLM: too few observed cells");

  f.design = Eigen::MatrixXd::Zero(n, k);
  f.response.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Cell c = f.cells[static_cast<std::size_t>(r)];
    if (c.i >= 2) f.design(r, c.i - 2) = 1.0;
    f.design(r, (I - 1) + (c.j - 1)) = 1.0;
    const int tt = c.i + c.j - 1;
    if (opt.calendar && tt >= 2) f.design(r, (I - 1) + J + (tt - 2)) = 1.0;
    f.response(r) = t(c.i, c.j) + opt.translation;
    if (opt.p > 0.0 && f.response(r) < 0.0)
      throw DataError("GLM: negative observation in line '" + t.line_id() + "' (translate first)");
  }

  // Aliased columns are dropped once up front so the iterations work on a
  // full-rank design; their coefficients stay at 0.
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr0(f.design);
  f.rank = static_cast<int>(qr0.rank());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < f.rank; ++c) keep.push_back(qr0.colsPermutation().indices()(c));
  std::sort(keep.begin(), keep.end());
  Eigen::MatrixXd X(n, f.rank);
  for (Eigen::Index c = 0; c < f.rank; ++c) X.col(c) = f.design.col(keep[static_cast<std::size_t>(c)]);

  const double p = opt.p;
  const double ybar = f.response.mean();
  if (!(ybar > 0.0)) throw DataError("GLM: mean response must be positive");
  Eigen::VectorXd mu = (f.response.array() + ybar) / 2.0;
  Eigen::VectorXd eta = mu.array().log();
  double prev = std::numeric_limits<double>::infinity();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(f.rank);
  bool converged = false;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    // Working response and weights for the log link: w = mu^(2-p).
    const Eigen::VectorXd z = eta.array() + (f.response.array() - mu.array()) / mu.array();
    const Eigen::VectorXd sw = mu.array().pow(1.0 - p / 2.0);
    const Eigen::MatrixXd Xw = X.array().colwise() * sw.array();
    const Eigen::VectorXd next = Xw.colPivHouseholderQr().solve((z.array() * sw.array()).matrix());
    const double step = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    eta = X * beta;
    mu = eta.array().exp();
    // Quasi-deviance change as the stopping rule.
    double dev = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) dev += tweedie_unit_deviance(f.response(r), mu(r), p);
    f.iterations = it;
    if (std::abs(dev - prev) <= opt.tolerance * std::abs(dev) || (it > 1 && step < 1e-12)) {
      converged = true;
      break;
    }
    prev = dev;
  }
  if (!converged) throw ConvergenceError("GLM: IRLS did not converge in " + std::to_string(opt.max_iterations) + " iterations");
  f.rank_deficient = f.rank < k;
  f.coefficients = Eigen::VectorXd::Zero(k);
  for (Eigen::Index c = 0; c < f.rank; ++c) f.coefficients(keep[static_cast<std::size_t>(c)]) = beta(c);
  f.mean = mu;

  f.fitted = Eigen::MatrixXd::Constant(I, J, std::numeric_limits<double>::quiet_NaN());
  f.pearson = f.fitted;
  double chi2 = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const Cell c = f.cells[static_cast<std::size_t>(r)];
    const double res = (f.response(r) - mu(r)) / std::sqrt(std::pow(mu(r), p));
    f.fitted(c.i - 1, c.j - 1) = mu(r);
    f.pearson(c.i - 1, c.j - 1) = res;
    chi2 += res * res;
  }
  f.dispersion = n > f.rank ? chi2 / static_cast<double>(n - f.rank) : 0.0;
  return f;
}

}  // namespace shockres
