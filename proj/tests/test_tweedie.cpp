#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "shockres/tweedie.hpp"

using namespace shockres;
using Catch::Approx;

namespace {

double normal_log(double y, double mu, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - (y - mu) * (y - mu) / (2.0 * var);
}

double gamma_log(double y, double shape, double scale) {
  return (shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) - shape * std::log(scale);
}

double inverse_gaussian_log(double y, double mu, double phi) {
  return -0.5 * std::log(2.0 * std::numbers::pi * phi * y * y * y) - (y - mu) * (y - mu) / (2.0 * phi * mu * mu * y);
}

// Integral of the continuous density over (0, inf) via y = mu u / (1 - u).
double continuous_mass(const tweedie::Params& prm, double moment = 0.0) {
  const tweedie::Density d(prm);
  auto f = [&](double u) {
    if (u <= 0.0 || u >= 1.0) return 0.0;
    const double y = prm.mu * u / (1.0 - u);
    const double jac = prm.mu / ((1.0 - u) * (1.0 - u));
    return std::exp(d.log_continuous(y)) * std::pow(y, moment) * jac;
  };
  const double breaks[] = {0.0, 1e-6, 1e-3, 0.1, 0.5, 0.9, 1.0};
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < std::size(breaks); ++k)
    total += quad::integrate(f, breaks[k], breaks[k + 1], 1e-12, 1e-15, 4000).value;
  return total;
}

}  // namespace

TEST_CASE("parameter validation", "[tweedie]") {
  CHECK_THROWS_AS(tweedie::validate({0.5, 1.0, 1.0}), NumericError);
  CHECK_THROWS_AS(tweedie::validate({1.5, 0.0, 1.0}), NumericError);
  CHECK_THROWS_AS(tweedie::validate({1.5, 1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(tweedie::validate({3.5, 1.0, 1.0}), NumericError);
  CHECK_NOTHROW(tweedie::validate({0.0, -2.0, 1.0}));
  CHECK(tweedie::variance({1.7, 2.0, 0.3}) == Approx(0.3 * std::pow(2.0, 1.7)));
}

TEST_CASE("closed-form members", "[tweedie]") {
  CHECK(tweedie::log_density({0.0, 0.0, 1.0}, 0.0) == Approx(-0.9189385).margin(1e-7));
  CHECK(tweedie::log_density({2.0, 1.0, 0.5}, 1.0) == Approx(gamma_log(1.0, 2.0, 0.5)).margin(1e-12));
  CHECK(tweedie::log_density({1.5, 2.0, 1.0}, 0.0) == Approx(-2.828427).margin(1e-6));
  CHECK(tweedie::log_density({1.5, 2.0, 1.0}, -1.0) == -std::numeric_limits<double>::infinity());
  CHECK(tweedie::log_density({2.0, 2.0, 1.0}, -1.0) == -std::numeric_limits<double>::infinity());

  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double y = -4.0 + 0.09 * k;
    worst = std::max(worst, std::abs(tweedie::log_density({0.0, 0.7, 1.3}, y) - normal_log(y, 0.7, 1.3)));
  }
  for (int k = 1; k <= 100; ++k) {
    const double y = 0.05 * k;
    worst = std::max(worst, std::abs(tweedie::log_density({2.0, 1.4, 0.6}, y) - gamma_log(y, 1.0 / 0.6, 0.6 * 1.4)));
    worst = std::max(worst, std::abs(tweedie::log_density({3.0, 1.4, 0.6}, y) - inverse_gaussian_log(y, 1.4, 0.6)));
  }
  // overdispersed Poisson on the lattice phi * k
  for (int k = 0; k < 100; ++k) {
    const double mu = 6.0, phi = 0.5;
    const double oracle = k * std::log(mu / phi) - mu / phi - std::lgamma(k + 1.0);
    worst = std::max(worst, std::abs(tweedie::log_density({1.0, mu, phi}, phi * k) - oracle));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("zero mass", "[tweedie]") {
  CHECK(tweedie::zero_mass({1.5, 1.0, 2.0}) == Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(tweedie::zero_mass({1.5, 1e8, 1.0}) < 1e-300);
  CHECK(tweedie::zero_mass({1.5, 1.0, 1e-4}) < 1e-300);
  CHECK_THROWS_AS(tweedie::zero_mass({2.0, 1.0, 1.0}), NumericError);
}

TEST_CASE("mixed law integrates to one", "[tweedie][property]") {
  for (double p : {1.2, 1.5, 1.8})
    for (double mu : {0.3, 1.0, 7.0})
      for (double phi : {0.2, 1.0, 3.0}) {
        const tweedie::Params prm{p, mu, phi};
        INFO("p=" << p << " mu=" << mu << " phi=" << phi);
        CHECK(std::abs(tweedie::zero_mass(prm) + continuous_mass(prm) - 1.0) <= 1e-6);
      }
}

TEST_CASE("positive stable member integrates to one with mean mu", "[tweedie]") {
  for (double p : {2.3, 2.7}) {
    const tweedie::Params prm{p, 1.5, 0.4};
    CHECK(continuous_mass(prm) == Approx(1.0).margin(1e-6));
    CHECK(continuous_mass(prm, 1.0) == Approx(1.5).margin(1e-4));
  }
}

TEST_CASE("cdf agrees with the density", "[tweedie]") {
  for (double p : {1.3, 1.7, 2.0, 2.5, 3.0}) {
    const tweedie::Params prm{p, 2.0, 0.7};
    const tweedie::Density d(prm);
    const double atom = p < 2.0 ? tweedie::zero_mass(prm) : 0.0;
    auto f = [&](double y) { return y > 0.0 ? std::exp(d.log_continuous(y)) : 0.0; };
    for (double y : {0.5, 2.0, 5.0}) {
      const double v = atom + quad::integrate(f, 0.0, y, 1e-12, 1e-15, 4000).value;
      CHECK(d.cdf(y) == Approx(v).margin(1e-7));
    }
  }
}

TEST_CASE("sampler moments and families", "[tweedie]") {
  const auto pois = tweedie::sample({1.0, 3.0, 1.0}, 20000, 4);
  for (double v : pois) CHECK(v == std::floor(v));
  CHECK(stats::mean(pois) == Approx(3.0).margin(4.0 * std::sqrt(3.0 / 20000.0)));

  const std::size_t n = 1000000;
  const auto x = tweedie::sample({1.5, 2.0, 1.0}, n, 9);
  const double var = std::pow(2.0, 1.5);
  CHECK(std::abs(stats::mean(x) - 2.0) <= 4.0 * std::sqrt(var / n));
  // SE of the sample variance from the fourth central moment
  double m4 = 0.0;
  const double m = stats::mean(x);
  for (double v : x) m4 += std::pow(v - m, 4);
  m4 /= static_cast<double>(n);
  CHECK(std::abs(stats::variance(x) - var) <= 4.0 * std::sqrt((m4 - var * var) / n));

  const auto g = tweedie::sample({2.0, 1.0, 0.25}, 200000, 10);
  const auto ks = stats::ks_test(g, [](double y) { return y <= 0.0 ? 0.0 : boost::math::gamma_p(4.0, y / 0.25); });
  CHECK(ks.p_value > 0.01);

  CHECK(tweedie::sample({1.5, 2.0, 1.0}, 10, 77) == tweedie::sample({1.5, 2.0, 1.0}, 10, 77));
  CHECK_THROWS_AS(tweedie::sample({2.5, 1.0, 1.0}, 10, 1), NumericError);
}

TEST_CASE("sampler matches density (chi-square)", "[tweedie][property]") {
  const std::size_t n = 1000000;
  for (double p : {0.0, 1.2, 1.5, 1.8, 2.0, 3.0}) {
    const tweedie::Params prm{p, 2.0, 0.8};
    const tweedie::Density d(prm);
    const auto x = tweedie::sample(prm, n, 1234 + static_cast<std::uint64_t>(p * 10));
    // bins: the atom (if any), then equal-width bins on [lo, hi] plus open tails
    const double lo = p == 0.0 ? -3.0 : 0.0, hi = 8.0;
    const int bins = 40;
    std::vector<double> obs(bins + 3, 0.0), expct(bins + 3, 0.0);
    auto bin_of = [&](double v) -> std::size_t {
      if (p > 1.0 && p < 2.0 && v == 0.0) return 0;
      if (v < lo) return 1;
      if (v >= hi) return static_cast<std::size_t>(bins + 2);
      return 2 + static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins)));
    };
    for (double v : x) obs[bin_of(v)] += 1.0;
    const double atom = p > 1.0 && p < 2.0 ? tweedie::zero_mass(prm) : 0.0;
    expct[0] = atom * n;
    expct[1] = (p == 0.0 ? d.cdf(lo) : 0.0) * n;
    double prev = p == 0.0 ? d.cdf(lo) : atom;
    for (int b = 0; b < bins; ++b) {
      const double edge = lo + (hi - lo) * (b + 1) / bins;
      const double c = d.cdf(edge);
      expct[static_cast<std::size_t>(2 + b)] = (c - prev) * n;
      prev = c;
    }
    expct[static_cast<std::size_t>(bins + 2)] = (1.0 - prev) * n;
    std::vector<double> o, e;
    for (std::size_t k = 0; k < obs.size(); ++k)
      if (expct[k] > 0.0 || obs[k] > 0.0) {
        o.push_back(obs[k]);
        e.push_back(expct[k]);
      }
    INFO("p=" << p);
    CHECK(stats::chi_square_pvalue(o, e) > 0.001);
  }
}
