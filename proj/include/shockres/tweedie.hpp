#pragma once

// Reproductive-form Tweedie distributions Tw_p(mu, phi): mean mu, variance
// phi * mu^p. Covers the normal (p = 0), scaled Poisson (p = 1), compound
// Poisson-gamma (1 < p < 2), gamma (p = 2), positive stable (2 < p < 3) and
// inverse Gaussian (p = 3) members. Everything is computed on the log scale.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/inverse_gaussian.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "quadrature.hpp"
#include "random.hpp"
#include "stats.hpp"

namespace shockres::tweedie {

struct Params {
  double p = 1.5;
  double mu = 1.0;
  double phi = 1.0;
};

enum class Family { normal, poisson, compound_poisson, gamma, positive_stable, inverse_gaussian };

inline Family family_of(double p) {
  if (p == 0.0) return Family::normal;
  if (p == 1.0) return Family::poisson;
  if (p > 1.0 && p < 2.0) return Family::compound_poisson;
  if (p == 2.0) return Family::gamma;
  if (p > 2.0 && p < 3.0) return Family::positive_stable;
  if (p == 3.0) return Family::inverse_gaussian;
  if (p > 0.0 && p < 1.0) throw NumericError("Tweedie power p in (0, 1) has no distribution");
  throw NumericError("Tweedie power p = " + std::to_string(p) + " is not supported (need p = 0 or 1 <= p <= 3)");
}

inline void validate(const Params& prm) {
  if (!std::isfinite(prm.p) || !std::isfinite(prm.mu) || !std::isfinite(prm.phi))
    throw NumericError("Tweedie parameters must be finite");
  const Family fam = family_of(prm.p);
  if (prm.phi <= 0.0) throw NumericError("Tweedie dispersion phi must be positive");
  if (fam != Family::normal && prm.mu <= 0.0) throw NumericError("Tweedie mean mu must be positive for p >= 1");
}

inline bool sampling_supported(double p) {
  return p == 0.0 || p == 3.0 || (p >= 1.0 && p <= 2.0);
}

inline double mean(const Params& prm) { return prm.mu; }
inline double variance(const Params& prm) { return prm.phi * std::pow(prm.mu, prm.p); }

/// Log-density evaluator for one parameter set. Series coefficients that do
/// not depend on the argument are cached, so repeated evaluation at many
/// points (quadrature, grids) only pays for exp/log. Not safe to share across
/// threads; construct one per thread.
class Density {
 public:
  explicit Density(const Params& prm) : prm_(prm), family_(family_of(prm.p)) {
    validate(prm);
    if (family_ == Family::compound_poisson) {
      const double p = prm.p;
      lambda_ = std::pow(prm.mu, 2.0 - p) / (prm.phi * (2.0 - p));
      shape_ = (2.0 - p) / (p - 1.0);
      scale_ = prm.phi * (p - 1.0) * std::pow(prm.mu, p - 1.0);
      log_lambda_ = std::log(lambda_);
      log_scale_ = std::log(scale_);
    }
  }

  const Params& params() const { return prm_; }
  Family family() const { return family_; }

  /// Log of the point mass at zero; -inf when the law has no atom there.
  double log_zero_mass() const {
    switch (family_) {
      case Family::compound_poisson: return -lambda_;
      case Family::poisson: return -prm_.mu / prm_.phi;
      default: return kNegInf;
    }
  }

  /// Log-density of the law. For the compound Poisson member the value at
  /// y = 0 is the log point mass; for p = 1 the value on the lattice phi*k is
  /// the log probability mass and -inf off the lattice.
  double log_pdf(double y) const {
    if (family_ == Family::compound_poisson && y == 0.0) return -lambda_;
    return log_continuous(y);
  }

  /// Log-density of the absolutely continuous part (compound Poisson: y > 0
  /// only, -inf at 0). Identical to log_pdf for the other members.
  double log_continuous(double y) const {
    const double mu = prm_.mu, phi = prm_.phi;
    switch (family_) {
      case Family::normal:
        return -0.5 * std::log(2.0 * std::numbers::pi * phi) - (y - mu) * (y - mu) / (2.0 * phi);
      case Family::poisson: {
        if (y < 0.0) return kNegInf;
        const double k = std::round(y / phi);
        if (std::abs(y / phi - k) > 1e-9 * std::max(1.0, k)) return kNegInf;
        const double rate = mu / phi;
        return k * std::log(rate) - rate - log_gamma(k + 1.0);
      }
      case Family::compound_poisson:
        if (y <= 0.0) return kNegInf;
        return compound_poisson_log_pdf(y);
      case Family::gamma: {
        if (y <= 0.0) return kNegInf;
        const double shape = 1.0 / phi;
        return -log_gamma(shape) - shape * std::log(phi * mu) + (shape - 1.0) * std::log(y) - y / (phi * mu);
      }
      case Family::positive_stable:
        if (y <= 0.0) return kNegInf;
        return positive_stable_log_pdf(y);
      case Family::inverse_gaussian:
        if (y <= 0.0) return kNegInf;
        return -0.5 * std::log(2.0 * std::numbers::pi * phi * y * y * y) - (y - mu) * (y - mu) / (2.0 * phi * mu * mu * y);
    }
    return kNegInf;
  }

  /// Exponent e such that the continuous density behaves like y^e as y -> 0+
  /// (used to choose quadrature substitutions); +inf when it vanishes faster
  /// than any power.
  double log_pdf_origin_exponent() const {
    switch (family_) {
      case Family::compound_poisson: return shape_ - 1.0;
      case Family::gamma: return 1.0 / prm_.phi - 1.0;
      default: return std::numeric_limits<double>::infinity();
    }
  }

  double cdf(double y) const {
    const double mu = prm_.mu, phi = prm_.phi;
    switch (family_) {
      case Family::normal: return stats::normal_cdf((y - mu) / std::sqrt(phi));
      case Family::poisson: {
        if (y < 0.0) return 0.0;
        const double k = std::floor(y / phi + 1e-9);
        return boost::math::gamma_q(k + 1.0, mu / phi);
      }
      case Family::compound_poisson: {
        if (y < 0.0) return 0.0;
        double total = std::exp(-lambda_);
        if (y == 0.0) return total;
        const double kmax = lambda_ + 40.0 * std::sqrt(lambda_) + 40.0;
        for (double k = 1.0; k <= kmax; k += 1.0) {
          const double log_pois = -lambda_ + k * log_lambda_ - log_gamma(k + 1.0);
          total += std::exp(log_pois) * boost::math::gamma_p(k * shape_, y / scale_);
        }
        return std::min(total, 1.0);
      }
      case Family::gamma:
        if (y <= 0.0) return 0.0;
        return boost::math::gamma_p(1.0 / phi, y / (phi * mu));
      case Family::inverse_gaussian: {
        if (y <= 0.0) return 0.0;
        const boost::math::inverse_gaussian_distribution<> ig(mu, 1.0 / phi);
        return boost::math::cdf(ig, y);
      }
      case Family::positive_stable: {
        if (y <= 0.0) return 0.0;
        auto f = [this](double t) { return t > 0.0 ? std::exp(log_continuous(t)) : 0.0; };
        const quad::Result r = quad::integrate(f, 0.0, y, 1e-10, 1e-14, 2000);
        return std::clamp(r.value, 0.0, 1.0);
      }
    }
    return 0.0;
  }

 private:
  static constexpr double kDrop = 39.2;  // terms below 1e-17 of the running max are dropped
  static constexpr double kMaxTerms = 200000.0;
  static constexpr double kSeriesTerms = 20000.0;  // beyond this the integral is cheaper

  double cp_coef(std::size_t k) const {
    // k * log(lambda) - lgamma(k + 1) - lgamma(k * shape) - k * shape * log(scale)
    if (coef_.size() <= k) {
      const std::size_t old = coef_.size();
      coef_.resize(std::max(k + 1, 2 * old + 16));
      for (std::size_t m = old; m < coef_.size(); ++m) {
        const double km = static_cast<double>(m);
        coef_[m] = m == 0 ? 0.0
                          : km * log_lambda_ - log_gamma(km + 1.0) - log_gamma(km * shape_) - km * shape_ * log_scale_;
      }
    }
    return coef_[k];
  }

  double compound_poisson_log_pdf(double y) const {
    const double log_y = std::log(y);
    const double slope = shape_ * log_y;
    auto term = [&](std::size_t k) { return cp_coef(k) + static_cast<double>(k) * slope; };
    // Mode of the Poisson-gamma convolution index.
    const double z = log_lambda_ + shape_ * (log_y - log_scale_);
    double guess = std::exp((z - shape_ * std::log(shape_)) / (1.0 + shape_));
    if (!std::isfinite(guess)) guess = kMaxTerms;
    std::size_t k = static_cast<std::size_t>(std::clamp(std::round(guess), 1.0, kMaxTerms));
    double best = term(k);
    while (true) {
      const double up = term(k + 1);
      if (up > best) {
        ++k;
        best = up;
        continue;
      }
      if (k > 1) {
        const double down = term(k - 1);
        if (down > best) {
          --k;
          best = down;
          continue;
        }
      }
      break;
    }
    double sum = 1.0;
    for (std::size_t m = k + 1;; ++m) {
      const double d = term(m) - best;
      if (d < -kDrop) break;
      sum += std::exp(d);
      if (static_cast<double>(m - k) > kMaxTerms) throw NumericError("Tweedie series did not terminate");
    }
    for (std::size_t m = k - 1; m >= 1; --m) {
      const double d = term(m) - best;
      if (d < -kDrop) break;
      sum += std::exp(d);
    }
    return -lambda_ - y / scale_ - log_y + best + std::log(sum);
  }

  // Alternating series for 2 < p < 3 with the saddle factor exp((y theta - kappa)/phi).
  double positive_stable_log_pdf(double y) const {
    const double p = prm_.p, mu = prm_.mu, phi = prm_.phi;
    const double alpha = (2.0 - p) / (1.0 - p);
    const double theta = std::pow(mu, 1.0 - p) / (1.0 - p);
    const double kappa = std::pow(mu, 2.0 - p) / (2.0 - p);
    const double log_y = std::log(y);
    auto log_abs_term = [&](double k) {
      return log_gamma(1.0 + alpha * k) + k * (alpha - 1.0) * std::log(phi) + alpha * k * std::log(p - 1.0) -
             log_gamma(1.0 + k) - k * std::log(p - 2.0) - alpha * k * log_y;
    };
    double max_log = kNegInf;
    std::vector<double> logs, signs;
    bool converged = false;
    for (double k = 1.0; k <= kSeriesTerms; k += 1.0) {
      const double s = std::sin(-k * std::numbers::pi * alpha) * (static_cast<long long>(k) % 2 == 0 ? 1.0 : -1.0);
      const double l = log_abs_term(k);
      logs.push_back(l);
      signs.push_back(s);
      max_log = std::max(max_log, l);
      if (k > 2.0 && l < logs[logs.size() - 2] && l < max_log - kDrop) {
        converged = true;
        break;
      }
    }
    double sum = 0.0, comp = 0.0;
    for (std::size_t m = 0; m < logs.size(); ++m) {
      const double v = signs[m] * std::exp(logs[m] - max_log);
      const double t = sum + v;
      comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
      sum = t;
    }
    sum += comp;
    const double saddle = (y * theta - kappa) / phi;
    // Past ~e^12 of cancellation the series no longer carries 1e-10 accuracy;
    // switch to the integral representation of the stable base density.
    if (converged && sum > 0.0 && std::log(sum) > -12.0) return std::log(sum) + max_log - std::log(std::numbers::pi * y) + saddle;
    const double log_c = alpha * std::log(p - 1.0) + (alpha - 1.0) * std::log(phi) - std::log(p - 2.0);
    const double log_scale = log_c / alpha;  // base measure = scale * standard stable
    return log_standard_stable(alpha, log_y - log_scale) - log_scale + saddle;
  }

  // Log-density of the positive stable law with Laplace transform exp(-s^alpha),
  // 0 < alpha < 1, from Zolotarev's (Kanter's) integral over (0, pi).
  static double log_standard_stable(double alpha, double log_x) {
    const double e = alpha / (1.0 - alpha);
    const double log_zeta = -e * log_x;
    auto log_a = [alpha](double u) {
      const double sa = std::sin(alpha * u);
      return (std::log(sa) - std::log(std::sin(u))) / (1.0 - alpha) + std::log(std::sin((1.0 - alpha) * u)) - std::log(sa);
    };
    auto h = [&](double u) {
      const double la = log_a(u);
      return la - std::exp(log_zeta + la);
    };
    // log_a increases in u, and l - zeta e^l peaks at l = -log zeta, so the
    // integrand is unimodal; bisect for its mode and split there.
    double lo = 0.0, hi = std::numbers::pi;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      (log_a(mid) < -log_zeta ? lo : hi) = mid;
    }
    const double mode = std::clamp(0.5 * (lo + hi), 1e-300, std::numbers::pi * (1.0 - 1e-16));
    const double shift = h(mode);
    if (!std::isfinite(shift)) return kNegInf;
    auto f = [&](double u) {
      if (!(u > 0.0 && u < std::numbers::pi)) return 0.0;
      const double v = h(u);
      // rounding in log_a is amplified by zeta when x is tiny; the mode is the max
      return std::isfinite(v) ? std::exp(std::min(0.0, v - shift)) : 0.0;
    };
    const quad::Result r1 = quad::integrate(f, 0.0, mode, 1e-12, 0.0, 2000);
    const quad::Result r2 = quad::integrate(f, mode, std::numbers::pi, 1e-12, 0.0, 2000);
    const quad::Result r{r1.value + r2.value, r1.abs_error + r2.abs_error, 0, 0, r1.converged && r2.converged};
    if (!(r.value > 0.0)) return kNegInf;
    return std::log(e / std::numbers::pi) - log_x / (1.0 - alpha) + shift + std::log(r.value);
  }

  Params prm_;
  Family family_;
  double lambda_ = 0.0, shape_ = 0.0, scale_ = 0.0, log_lambda_ = 0.0, log_scale_ = 0.0;
  mutable std::vector<double> coef_;
};

inline double log_density(const Params& prm, double y) { return Density(prm).log_pdf(y); }

inline double cdf(const Params& prm, double y) { return Density(prm).cdf(y); }

/// P(Y = 0) for the compound Poisson member, exp(-mu^(2-p) / (phi (2-p))).
inline double zero_mass(const Params& prm) {
  if (!(prm.p > 1.0 && prm.p < 2.0)) throw NumericError("zero_mass requires 1 < p < 2");
  validate(prm);
  return std::exp(-std::pow(prm.mu, 2.0 - prm.p) / (prm.phi * (2.0 - prm.p)));
}

/// One draw. Compound Poisson draws are exact: Poisson count, then a gamma
/// with the summed shape.
inline double draw(const Params& prm, Rng& rng) {
  validate(prm);
  const double p = prm.p, mu = prm.mu, phi = prm.phi;
  if (p == 0.0) return std::normal_distribution<double>(mu, std::sqrt(phi))(rng);
  if (p == 1.0) return phi * static_cast<double>(std::poisson_distribution<long long>(mu / phi)(rng));
  if (p > 1.0 && p < 2.0) {
    const double lambda = std::pow(mu, 2.0 - p) / (phi * (2.0 - p));
    const long long count = std::poisson_distribution<long long>(lambda)(rng);
    if (count == 0) return 0.0;
    const double shape = (2.0 - p) / (p - 1.0);
    const double scale = phi * (p - 1.0) * std::pow(mu, p - 1.0);
    return std::gamma_distribution<double>(static_cast<double>(count) * shape, scale)(rng);
  }
  if (p == 2.0) return std::gamma_distribution<double>(1.0 / phi, phi * mu)(rng);
  if (p == 3.0) {
    // Michael, Schucany & Haas transformation.
    const double lam = 1.0 / phi;
    const double nu = std::normal_distribution<double>(0.0, 1.0)(rng);
    const double w = nu * nu;
    const double x = mu + mu * mu * w / (2.0 * lam) - mu / (2.0 * lam) * std::sqrt(4.0 * mu * lam * w + mu * mu * w * w);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    return u <= mu / (mu + x) ? x : mu * mu / x;
  }
  throw NumericError("sampling not supported for Tweedie power p = " + std::to_string(p));
}

inline std::vector<double> sample(const Params& prm, std::size_t count, std::uint64_t seed) {
  if (!sampling_supported(prm.p)) throw NumericError("sampling not supported for Tweedie power p = " + std::to_string(prm.p));
  Rng rng(seed);
  std::vector<double> out(count);
  for (double& v : out) v = draw(prm, rng);
  return out;
}

}  // namespace shockres::tweedie
