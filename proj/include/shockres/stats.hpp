#pragma once

// Descriptive statistics, rank correlations and goodness-of-fit helpers shared
// by the inference, forecast and diagnostics modules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "errors.hpp"

namespace shockres {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Thread-safe log-gamma (std::lgamma writes the global signgam on glibc).
inline double log_gamma(double x) {
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

inline double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

namespace stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw DataError("mean of empty sample");
  // Neumaier-compensated sum keeps aggregate-vs-component comparisons tight.
  double sum = 0.0, comp = 0.0;
  for (double v : x) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(x.size());
}

/// Unbiased (n - 1) sample variance; zero for a single observation.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

inline double sd(std::span<const double> x) { return std::sqrt(variance(x)); }

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw DataError("quantile of empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("quantile level outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> x, double prob) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, prob);
}

/// 1-based ranks with ties averaged.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t k = 0; k < idx.size();) {
    std::size_t e = k;
    while (e + 1 < idx.size() && x[idx[e + 1]] == x[idx[k]]) ++e;
    const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
    for (std::size_t m = k; m <= e; ++m) r[idx[m]] = avg;
    k = e + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("pearson: need two equal-length samples of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DataError("pearson: zero-variance sample");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

struct KendallResult {
  double tau_b = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

/// Kendall tau-b with the tie-corrected normal approximation for the p-value.
inline KendallResult kendall(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 3) throw DataError("kendall: need two equal-length samples of size >= 3");
  double concordant_minus_discordant = 0.0;
  double n1 = 0.0, n2 = 0.0;  // tied pairs in x, y
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double dx = x[a] - x[b];
      const double dy = y[a] - y[b];
      if (dx == 0.0) n1 += 1.0;
      if (dy == 0.0) n2 += 1.0;
      if (dx != 0.0 && dy != 0.0) concordant_minus_discordant += (dx * dy > 0.0) ? 1.0 : -1.0;
    }
  }
  const double nd = static_cast<double>(n);
  const double n0 = nd * (nd - 1.0) / 2.0;
  if (n0 == n1 || n0 == n2) throw DataError("kendall: constant sample");
  KendallResult out;
  out.tau_b = concordant_minus_discordant / std::sqrt((n0 - n1) * (n0 - n2));

  // Tie group sizes for the variance correction.
  auto tie_terms = [](std::span<const double> v, double& t0, double& t1, double& t2) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    t0 = t1 = t2 = 0.0;
    for (std::size_t k = 0; k < s.size();) {
      std::size_t e = k;
      while (e + 1 < s.size() && s[e + 1] == s[k]) ++e;
      const double t = static_cast<double>(e - k + 1);
      t0 += t * (t - 1.0) * (2.0 * t + 5.0);
      t1 += t * (t - 1.0);
      t2 += t * (t - 1.0) * (t - 2.0);
      k = e + 1;
    }
  };
  double vt0, vt1, vt2, vu0, vu1, vu2;
  tie_terms(x, vt0, vt1, vt2);
  tie_terms(y, vu0, vu1, vu2);
  const double var = (nd * (nd - 1.0) * (2.0 * nd + 5.0) - vt0 - vu0) / 18.0 +
                     vt2 * vu2 / (9.0 * nd * (nd - 1.0) * (nd - 2.0)) + vt1 * vu1 / (2.0 * nd * (nd - 1.0));
  out.z = concordant_minus_discordant / std::sqrt(var);
  const boost::math::normal_distribution<> norm;
  out.p_value = 2.0 * boost::math::cdf(boost::math::complement(norm, std::abs(out.z)));
  return out;
}

/// Two-sided p-value of a correlation coefficient under the t approximation
/// with n - 2 degrees of freedom.
inline double correlation_t_pvalue(double r, std::size_t n) {
  if (n < 3) throw DataError("correlation p-value needs n >= 3");
  if (std::abs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  const boost::math::students_t_distribution<> dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_quantile(double u) {
  const boost::math::normal_distribution<> norm;
  return boost::math::quantile(norm, u);
}

/// Asymptotic Kolmogorov survival function with Stephens' finite-n correction.
inline double kolmogorov_pvalue(double d, double n_eff) {
  const double sn = std::sqrt(n_eff);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-18) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
inline KsResult ks_test(std::span<const double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw DataError("ks_test: empty sample");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double f = cdf(s[k]);
    d = std::max({d, f - static_cast<double>(k) / n, static_cast<double>(k + 1) / n - f});
  }
  return {d, kolmogorov_pvalue(d, n)};
}

/// Two-sample Kolmogorov-Smirnov test.
inline KsResult ks_test_2(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("ks_test_2: empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return {d, kolmogorov_pvalue(d, nx * ny / (nx + ny))};
}

/// Pearson chi-square goodness-of-fit p-value for observed vs expected counts.
/// Bins with expected count below `min_expected` are pooled into their neighbour.
inline double chi_square_pvalue(std::span<const double> observed, std::span<const double> expected,
                                std::size_t fitted_params = 0, double min_expected = 5.0) {
  if (observed.size() != expected.size()) throw DataError("chi_square: size mismatch");
  std::vector<double> o, e;
  double acc_o = 0.0, acc_e = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    acc_o += observed[k];
    acc_e += expected[k];
    if (acc_e >= min_expected) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0.0;
    }
  }
  if (acc_e > 0.0 && !e.empty()) {
    o.back() += acc_o;
    e.back() += acc_e;
  }
  if (e.size() < 2 + fitted_params) throw DataError("chi_square: too few bins");
  double stat = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) stat += (o[k] - e[k]) * (o[k] - e[k]) / e[k];
  const boost::math::chi_squared_distribution<> dist(static_cast<double>(e.size() - 1 - fitted_params));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace stats
}  // namespace shockres
