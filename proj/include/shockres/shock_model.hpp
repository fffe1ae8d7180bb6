#pragma once

// Balanced common-shock multivariate Tweedie model. For line n and cell (i, j)
//   Y + xi^(n) = kappa * V + Z,   V ~ Tw_p(alpha_j, beta),   Z ~ Tw_p(eta_i nu_j, gamma^(n)),
// with kappa = (alpha_j / (eta_i nu_j))^(1-p) * gamma^(n) / beta. The balanced
// structure sets alpha_j = c * geometric mean over lines of nu_j; the original
// structure uses alpha_j = c for every column.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>
#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "quadrature.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "triangles.hpp"
#include "tweedie.hpp"

namespace shockres {

enum class ShockStructure { balanced, original };

inline std::string to_string(ShockStructure s) { return s == ShockStructure::balanced ? "balanced" : "original"; }
inline ShockStructure parse_structure(const std::string& s) {
  if (s == "balanced") return ShockStructure::balanced;
  if (s == "original") return ShockStructure::original;
  throw ConfigError("unknown shock structure '" + s + "' (balanced|original)");
}

struct CellCoordinates {
  int i = 1;
  int j = 1;
  std::size_t n = 0;  // 0-based line index
};

struct ShockModelParams {
  ShockStructure structure = ShockStructure::balanced;
  double p = 1.5;
  double c = 1.0;
  double beta = 1.0;
  std::vector<Eigen::VectorXd> eta;  // per line, length I, eta[n](0) == 1
  std::vector<Eigen::VectorXd> nu;   // per line, length J
  Eigen::VectorXd gamma;             // per line
  Eigen::VectorXd xi;                // per line
  std::optional<Eigen::VectorXd> c_schedule;  // optional per-column c_j (length J)

  std::size_t lines() const { return nu.size(); }
  int accident_periods() const { return eta.empty() ? 0 : static_cast<int>(eta.front().size()); }
  int development_periods() const { return nu.empty() ? 0 : static_cast<int>(nu.front().size()); }
  double delta() const { return std::pow(c, 2.0 - p) / beta; }
  double c_at(int j) const { return c_schedule ? (*c_schedule)(j - 1) : c; }

  void validate() const {
    tweedie::family_of(p);
    if (nu.empty()) throw ConfigError("model needs at least one line");
    if (eta.size() != nu.size() || static_cast<std::size_t>(gamma.size()) != nu.size() ||
        static_cast<std::size_t>(xi.size()) != nu.size())
      throw ConfigError("eta, nu, gamma and xi must have one entry per line");
    if (!(c > 0.0) || !(beta > 0.0)) throw ConfigError("c and beta must be positive");
    for (std::size_t n = 0; n < lines(); ++n) {
      if (eta[n].size() != eta[0].size() || nu[n].size() != nu[0].size())
        throw ConfigError("all lines must share dimensions");
      if ((eta[n].array() <= 0.0).any() || (nu[n].array() <= 0.0).any() || !(gamma(static_cast<Eigen::Index>(n)) > 0.0))
        throw ConfigError("eta, nu and gamma must be positive");
      if (eta[n].size() == 0 || eta[n](0) != 1.0) throw ConfigError("eta_1 must equal 1 for every line");
      if (xi(static_cast<Eigen::Index>(n)) < 0.0) throw ConfigError("xi must be nonnegative");
    }
    if (c_schedule) {
      if (c_schedule->size() != development_periods()) throw ConfigError("c_schedule length must equal J");
      if ((c_schedule->array() <= 0.0).any()) throw ConfigError("c_schedule entries must be positive");
    }
  }
};

/// Geometric mean over lines of nu_j (1-based j).
inline double geometric_nu(const ShockModelParams& m, int j) {
  double s = 0.0;
  for (const auto& v : m.nu) s += std::log(v(j - 1));
  return std::exp(s / static_cast<double>(m.lines()));
}

/// alpha_j.
inline double shock_mean(const ShockModelParams& m, int j) {
  if (m.structure == ShockStructure::original) return m.c_at(j);
  return m.c_at(j) * geometric_nu(m, j);
}

inline double cell_mean(const ShockModelParams& m, const CellCoordinates& x) {
  return m.eta[x.n](x.i - 1) * m.nu[x.n](x.j - 1);
}

inline double kappa(const ShockModelParams& m, const CellCoordinates& x) {
  return std::pow(shock_mean(m, x.j) / cell_mean(m, x), 1.0 - m.p) * m.gamma(static_cast<Eigen::Index>(x.n)) / m.beta;
}

/// Shock-to-idiosyncratic mean ratio r = (alpha_j / (eta nu))^(2-p) gamma / beta.
inline double shock_ratio(const ShockModelParams& m, const CellCoordinates& x) {
  return std::pow(shock_mean(m, x.j) / cell_mean(m, x), 2.0 - m.p) * m.gamma(static_cast<Eigen::Index>(x.n)) / m.beta;
}

/// Tweedie law of a cell given its idiosyncratic mean and the ratio r.
inline tweedie::Params marginal_from_ratio(double p, double cell_mu, double gamma, double r) {
  return {p, cell_mu * (r + 1.0), gamma * std::pow(r + 1.0, 1.0 - p)};
}

/// Law of Y + xi at a cell.
inline tweedie::Params marginal_params(const ShockModelParams& m, const CellCoordinates& x) {
  return marginal_from_ratio(m.p, cell_mean(m, x), m.gamma(static_cast<Eigen::Index>(x.n)), shock_ratio(m, x));
}

/// Expected shock share of the cell mean, r / (r + 1). `structure` picks the
/// alpha used in the numerator (defaults to the parameter set's own).
inline double shock_proportion(const ShockModelParams& m, const CellCoordinates& x, std::optional<ShockStructure> structure = {}) {
  ShockModelParams view = m;
  if (structure) view.structure = *structure;
  const double r = shock_ratio(view, x);
  return r / (r + 1.0);
}

/// Model-implied Pearson correlation between lines a and b at (i, j).
inline double model_correlation(const ShockModelParams& m, int i, int j, std::size_t a, std::size_t b) {
  if (a == b) throw ConfigError("model_correlation needs two distinct lines");
  const CellCoordinates xa{i, j, a}, xb{i, j, b};
  const double alpha = shock_mean(m, j);
  const double shock_var = m.beta * std::pow(alpha, m.p);
  const double ka = kappa(m, xa), kb = kappa(m, xb);
  const double va = ka * ka * shock_var + m.gamma(static_cast<Eigen::Index>(a)) * std::pow(cell_mean(m, xa), m.p);
  const double vb = kb * kb * shock_var + m.gamma(static_cast<Eigen::Index>(b)) * std::pow(cell_mean(m, xb), m.p);
  return ka * kb * shock_var / std::sqrt(va * vb);
}

struct DensityResult {
  double log_value = kNegInf;
  double rel_error = 0.0;  // relative error estimate of the quadrature part
  bool converged = true;
};

namespace detail {

// Log-space integral of exp(g(w)) over [0, A]. Endpoint singularities of the
// form w^(e0) at 0 and (A - w)^(e1) at A are removed by power substitutions;
// the integrand is rescaled by its located maximum before exponentiation.
template <class G>
DensityResult log_integral(G&& g, double A, double e0, double e1, double rel_tol) {
  DensityResult out;
  if (!(A > 0.0)) {
    out.log_value = kNegInf;
    return out;
  }
  auto exponent_to_power = [](double e) { return std::isfinite(e) && e < 0.0 ? std::min(1.0 / (e + 1.0), 40.0) : 1.0; };
  const double q0 = exponent_to_power(e0), q1 = exponent_to_power(e1);

  // Probe for the peak.
  constexpr int kProbes = 96;
  double best = kNegInf, best_w = 0.5 * A;
  for (int k = 1; k < kProbes; ++k) {
    const double u = static_cast<double>(k) / kProbes;
    for (const double w : {A * 0.5 * std::pow(2.0 * u, q0), A - A * 0.5 * std::pow(2.0 * u, q1)}) {
      if (!(w > 0.0 && w < A)) continue;
      const double v = g(w);
      if (v > best) {
        best = v;
        best_w = w;
      }
    }
  }
  if (best == kNegInf) {
    out.log_value = kNegInf;
    return out;
  }
  // Polish the peak location (g is unimodal for the laws used here).
  {
    const double step = A / kProbes;
    const double lo = std::max(best_w - 2.0 * step, A * 1e-14), hi = std::min(best_w + 2.0 * step, A * (1.0 - 1e-14));
    if (hi > lo) {
      std::uintmax_t iters = 60;
      const auto r = boost::math::tools::brent_find_minima([&](double w) { return -g(w); }, lo, hi, 40, iters);
      if (-r.second > best) {
        best = -r.second;
        best_w = r.first;
      }
    }
  }
  double split = best_w;
  if (!(split > A * 1e-9 && split < A * (1.0 - 1e-9))) split = 0.5 * A;
  const double shift = best;

  // Left piece: w = split * u^q0; right piece: w = A - (A - split) * u^q1.
  auto left = [&](double u) {
    if (u <= 0.0) return 0.0;
    const double w = split * std::pow(u, q0);
    if (!(w > 0.0)) return 0.0;
    const double jac = split * q0 * std::pow(u, q0 - 1.0);
    return std::exp(g(w) - shift) * jac;
  };
  auto right = [&](double u) {
    if (u <= 0.0) return 0.0;
    const double w = A - (A - split) * std::pow(u, q1);
    if (!(w < A)) return 0.0;
    const double jac = (A - split) * q1 * std::pow(u, q1 - 1.0);
    return std::exp(g(w) - shift) * jac;
  };
  const quad::Result a = quad::integrate(left, 0.0, 1.0, rel_tol, 0.0, 400);
  const quad::Result b = quad::integrate(right, 0.0, 1.0, rel_tol, 0.0, 400);
  const double total = a.value + b.value;
  if (!(total > 0.0)) {
    out.log_value = kNegInf;
    out.converged = a.converged && b.converged;
    return out;
  }
  out.log_value = shift + std::log(total);
  out.rel_error = (a.abs_error + b.abs_error) / total;
  out.converged = a.converged && b.converged;
  return out;
}

}  // namespace detail

/// Joint log-density of one cell across all lines. `y` holds the untranslated
/// observations, one per line. For 1 < p < 2 the result is taken with respect
/// to the product of Lebesgue measure and a unit atom at 0 for every zero
/// coordinate, and includes the V = 0 atom and the single-line Z = 0 atom.
inline DensityResult multivariate_log_density(const ShockModelParams& m, int i, int j, const std::vector<double>& y,
                                              double rel_tol = 1e-8) {
  const std::size_t N = m.lines();
  if (y.size() != N) throw DataError("multivariate_log_density: one value per line required");
  std::vector<double> x(N), kap(N), mu(N);
  for (std::size_t n = 0; n < N; ++n) {
    x[n] = y[n] + m.xi(static_cast<Eigen::Index>(n));
    const CellCoordinates cc{i, j, n};
    kap[n] = kappa(m, cc);
    mu[n] = cell_mean(m, cc);
  }
  const double p = m.p;
  const double alpha = shock_mean(m, j);
  DensityResult out;

  if (p == 0.0) {
    Eigen::VectorXd k = Eigen::Map<Eigen::VectorXd>(kap.data(), static_cast<Eigen::Index>(N));
    Eigen::VectorXd d(static_cast<Eigen::Index>(N));
    for (std::size_t n = 0; n < N; ++n) d(static_cast<Eigen::Index>(n)) = x[n] - kap[n] * alpha - mu[n];
    Eigen::MatrixXd cov = m.beta * k * k.transpose();
    cov.diagonal() += m.gamma;
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("multivariate normal covariance not positive definite");
    const Eigen::VectorXd z = llt.matrixL().solve(d);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.log_value = -0.5 * (static_cast<double>(N) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
    return out;
  }

  for (std::size_t n = 0; n < N; ++n)
    if (x[n] < 0.0) throw DataError("multivariate_log_density: translated value below zero");

  const tweedie::Density fv({p, alpha, m.beta});
  std::vector<tweedie::Density> fz;
  fz.reserve(N);
  for (std::size_t n = 0; n < N; ++n) fz.emplace_back(tweedie::Params{p, mu[n], m.gamma(static_cast<Eigen::Index>(n))});

  if (p == 1.0) {
    // Lattice: kappa_n = gamma_n / beta, so x_n / gamma_n = k + m_n with k ~ Poisson(alpha / beta).
    double kmax = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < N; ++n) {
      const double g = m.gamma(static_cast<Eigen::Index>(n));
      const double t = std::round(x[n] / g);
      if (std::abs(x[n] / g - t) > 1e-9 * std::max(1.0, t)) return out;
      kmax = std::min(kmax, t);
    }
    double acc = kNegInf;
    for (double k = 0.0; k <= kmax; k += 1.0) {
      double term = fv.log_pdf(k * m.beta);
      for (std::size_t n = 0; n < N; ++n) term += fz[n].log_pdf(x[n] - k * kap[n]);
      acc = log_sum_exp(acc, term);
    }
    out.log_value = acc;
    return out;
  }

  const bool mixed = p > 1.0 && p < 2.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < N; ++n) any_zero = any_zero || x[n] == 0.0;
  if (any_zero) {
    if (!mixed) {
      out.log_value = kNegInf;
      return out;
    }
    double v = fv.log_zero_mass();
    for (std::size_t n = 0; n < N; ++n) v += fz[n].log_pdf(x[n]);
    out.log_value = v;
    return out;
  }

  double A = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t n = 0; n < N; ++n)
    if (x[n] / kap[n] < A) {
      A = x[n] / kap[n];
      arg = n;
    }

  auto g = [&](double w) {
    double v = fv.log_continuous(w);
    for (std::size_t n = 0; n < N && v != kNegInf; ++n) v += fz[n].log_continuous(x[n] - kap[n] * w);
    return v;
  };
  out = detail::log_integral(g, A, fv.log_pdf_origin_exponent(), fz[arg].log_pdf_origin_exponent(), rel_tol);

  if (mixed) {
    double atom_v = fv.log_zero_mass();
    for (std::size_t n = 0; n < N; ++n) atom_v += fz[n].log_continuous(x[n]);
    double atom_z = fz[arg].log_zero_mass() + fv.log_continuous(A) - std::log(kap[arg]);
    for (std::size_t n = 0; n < N; ++n)
      if (n != arg) atom_z += fz[n].log_continuous(x[n] - kap[n] * A);
    const double integral = out.log_value;
    out.log_value = log_sum_exp(log_sum_exp(integral, atom_v), atom_z);
    if (integral != kNegInf) out.rel_error *= std::exp(integral - out.log_value);
  }
  return out;
}

/// Simulates all I x J cells of every line; cells outside the standard
/// run-off mask are kept as future cells holding their simulated outcome.
/// `shocks`, when given, receives the I x J common-shock draws V.
inline TrianglePortfolio simulate_portfolio(const ShockModelParams& m, std::uint64_t seed, Eigen::MatrixXd* shocks = nullptr) {
  m.validate();
  if (!tweedie::sampling_supported(m.p)) throw NumericError("sampling not supported for p = " + std::to_string(m.p));
  const int I = m.accident_periods(), J = m.development_periods();
  Rng rng = make_rng(seed, "simulate_portfolio");
  if (shocks) shocks->resize(I, J);
  std::vector<LossTriangle> lines;
  for (std::size_t n = 0; n < m.lines(); ++n) lines.emplace_back("triangle" + std::to_string(n + 1), I, J);
  for (int i = 1; i <= I; ++i)
    for (int j = 1; j <= J; ++j) {
      const double v = tweedie::draw({m.p, shock_mean(m, j), m.beta}, rng);
      if (shocks) (*shocks)(i - 1, j - 1) = v;
      for (std::size_t n = 0; n < m.lines(); ++n) {
        const CellCoordinates cc{i, j, n};
        const double z = tweedie::draw({m.p, cell_mean(m, cc), m.gamma(static_cast<Eigen::Index>(n))}, rng);
        lines[n](i, j) = kappa(m, cc) * v + z - m.xi(static_cast<Eigen::Index>(n));
      }
    }
  return TrianglePortfolio(std::move(lines));
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
}  // namespace detail

inline nlohmann::json to_json(const ShockModelParams& m) {
  nlohmann::json j;
  j["structure"] = to_string(m.structure);
  j["p"] = m.p;
  j["c"] = m.c;
  j["beta"] = m.beta;
  j["delta"] = m.delta();
  j["gamma"] = detail::to_std(m.gamma);
  j["xi"] = detail::to_std(m.xi);
  for (const auto& e : m.eta) j["eta"].push_back(detail::to_std(e));
  for (const auto& v : m.nu) j["nu"].push_back(detail::to_std(v));
  if (m.c_schedule) j["c_schedule"] = detail::to_std(*m.c_schedule);
  return j;
}

/// Reads a parameter set. `delta`, when present, is ignored (always derived).
inline ShockModelParams params_from_json(const nlohmann::json& j) {
  ShockModelParams m;
  try {
    m.structure = parse_structure(j.value("structure", std::string("balanced")));
    m.p = j.at("p").get<double>();
    m.c = j.at("c").get<double>();
    m.beta = j.at("beta").get<double>();
    m.gamma = detail::to_eigen(j.at("gamma").get<std::vector<double>>());
    if (j.contains("xi"))
      m.xi = detail::to_eigen(j.at("xi").get<std::vector<double>>());
    else
      m.xi = Eigen::VectorXd::Zero(m.gamma.size());
    for (const auto& e : j.at("eta")) m.eta.push_back(detail::to_eigen(e.get<std::vector<double>>()));
    for (const auto& v : j.at("nu")) m.nu.push_back(detail::to_eigen(v.get<std::vector<double>>()));
    if (j.contains("c_schedule")) m.c_schedule = detail::to_eigen(j.at("c_schedule").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model parameters: ") + e.what());
  }
  m.validate();
  return m;
}

inline ShockModelParams load_params(const std::filesystem::path& path) {
  try {
    return params_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace shockres
