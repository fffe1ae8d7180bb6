#pragma once

// Two-stage Bayesian estimation. Stage 1 samples (p, xi, delta, eta, nu, gamma)
// from the product of cell marginals, in which c and beta enter only through
// delta = c^(2-p) / beta. Stage 2 samples c from the joint cell densities with
// the stage-1 medians held fixed; beta follows draw-wise as c^(2-p) / delta.
// Sampling is blocked random-walk Metropolis-Hastings on unconstrained scales.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "glm.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "shock_model.hpp"
#include "stats.hpp"
#include "triangles.hpp"
#include "tweedie.hpp"

namespace shockres {

// ---------------------------------------------------------------------------
// Transforms

enum class TransformKind { identity, log, logit, shifted_log };

struct Transform {
  static constexpr double kShiftEps = 1e-9;

  TransformKind kind = TransformKind::identity;
  double lo = 0.0;  // logit lower bound, or the shifted-log bound
  double hi = 1.0;  // logit upper bound

  static Transform identity() { return {}; }
  static Transform log() { return {TransformKind::log, 0.0, 0.0}; }
  static Transform logit(double lo, double hi) { return {TransformKind::logit, lo, hi}; }
  static Transform shifted_log(double bound) { return {TransformKind::shifted_log, bound, 0.0}; }

  double to_unconstrained(double x) const {
    switch (kind) {
      case TransformKind::identity: return x;
      case TransformKind::log: return std::log(x);
      case TransformKind::logit: {
        const double s = (x - lo) / (hi - lo);
        return std::log(s) - std::log1p(-s);
      }
      case TransformKind::shifted_log: return std::log(x - lo + kShiftEps);
    }
    return x;
  }

  double to_constrained(double u) const {
    switch (kind) {
      case TransformKind::identity: return u;
      case TransformKind::log: return std::exp(u);
      case TransformKind::logit: {
        const double s = u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
        return lo + (hi - lo) * s;
      }
      case TransformKind::shifted_log: return lo - kShiftEps + std::exp(u);
    }
    return u;
  }

  /// log |dx/du|.
  double log_jacobian(double u) const {
    auto softplus = [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); };
    switch (kind) {
      case TransformKind::identity: return 0.0;
      case TransformKind::log:
      case TransformKind::shifted_log: return u;
      case TransformKind::logit: return std::log(hi - lo) - softplus(-u) - softplus(u);
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Priors

enum class PriorFamily { uniform, uniform_transformed, lognormal, normal_transformed };

/// uniform: flat on [a, b] (original scale); a == b fixes the parameter.
/// uniform_transformed: flat on [T(a), T(b)] for the parameter's transform T.
/// lognormal: meanlog a, sdlog b. normal_transformed: N(a, b^2) on the T scale.
struct Prior {
  PriorFamily family = PriorFamily::uniform;
  double a = 0.0;
  double b = 1.0;

  static Prior uniform(double lo, double hi) { return {PriorFamily::uniform, lo, hi}; }
  static Prior fixed(double v) { return {PriorFamily::uniform, v, v}; }
  static Prior uniform_transformed(double lo, double hi) { return {PriorFamily::uniform_transformed, lo, hi}; }
  static Prior lognormal(double meanlog, double sdlog) { return {PriorFamily::lognormal, meanlog, sdlog}; }
  static Prior normal_transformed(double mean, double sd) { return {PriorFamily::normal_transformed, mean, sd}; }

  bool is_fixed() const { return (family == PriorFamily::uniform || family == PriorFamily::uniform_transformed) && a == b; }

  void validate(const std::string& name) const {
    if (!std::isfinite(a) || !std::isfinite(b)) throw ConfigError("prior for " + name + ": non-finite hyperparameter");
    if ((family == PriorFamily::uniform || family == PriorFamily::uniform_transformed) && b < a)
      throw ConfigError("prior for " + name + ": upper bound below lower bound");
    if ((family == PriorFamily::lognormal || family == PriorFamily::normal_transformed) && !(b > 0.0))
      throw ConfigError("prior for " + name + ": scale must be positive");
  }

  /// Log prior density on the original scale.
  double log_density(double x, const Transform& t) const {
    switch (family) {
      case PriorFamily::uniform:
        if (x < a || x > b) return kNegInf;
        return b > a ? -std::log(b - a) : 0.0;
      case PriorFamily::uniform_transformed: {
        if (x < a || x > b) return kNegInf;
        if (b == a) return 0.0;
        const double u = t.to_unconstrained(x);
        return -std::log(t.to_unconstrained(b) - t.to_unconstrained(a)) - t.log_jacobian(u);
      }
      case PriorFamily::lognormal: {
        if (!(x > 0.0)) return kNegInf;
        const double z = (std::log(x) - a) / b;
        return -0.5 * z * z - std::log(x * b * std::sqrt(2.0 * std::numbers::pi));
      }
      case PriorFamily::normal_transformed: {
        const double u = t.to_unconstrained(x);
        if (!std::isfinite(u)) return kNegInf;
        const double z = (u - a) / b;
        return -0.5 * z * z - std::log(b * std::sqrt(2.0 * std::numbers::pi)) - t.log_jacobian(u);
      }
    }
    return kNegInf;
  }
};

/// Priors by parameter group (p, xi, delta, eta, nu, gamma, c) with optional
/// overrides by exact parameter name (e.g. "gamma[1]", "nu[2][3]").
struct PriorSpec {
  std::map<std::string, Prior> groups;
  std::map<std::string, Prior> overrides;

  const Prior& lookup(const std::string& name, const std::string& group) const {
    if (auto it = overrides.find(name); it != overrides.end()) return it->second;
    if (auto it = groups.find(group); it != groups.end()) return it->second;
    throw ConfigError("no prior for parameter " + name);
  }
};

/// Lower bound for xi^(n): -min observed value when negative values occur, else none.
inline std::optional<double> xi_bound(const LossTriangle& t) {
  const double m = t.min_observed();
  if (m < 0.0) return -m;
  return std::nullopt;
}

/// Defaults: p uniform on [1, 2]; delta, eta, nu, gamma and c flat on the log
/// scale over wide ranges (nu scaled to the data). The translation is confined
/// to [bound, 2 bound]: with a wider range the marginal likelihood trades xi
/// against p (large xi, p near 1) on data with a single small negative cell.
inline PriorSpec default_priors(const TrianglePortfolio& data) {
  PriorSpec s;
  s.groups["p"] = Prior::uniform(1.0, 2.0);
  s.groups["delta"] = Prior::uniform_transformed(1e-4, 1e2);
  s.groups["eta"] = Prior::uniform_transformed(1e-3, 1e3);
  s.groups["gamma"] = Prior::uniform_transformed(1e-4, 1e2);
  s.groups["c"] = Prior::uniform_transformed(0.01, 100.0);
  double scale = 0.0;
  for (const auto& t : data)
    for (const Cell& c : t.observed_cells()) scale = std::max(scale, std::abs(t(c.i, c.j)));
  scale = std::max(scale, 1e-12);
  s.groups["nu"] = Prior::uniform_transformed(1e-6 * scale, 1e2 * scale);
  s.groups["xi"] = Prior::fixed(0.0);
  for (std::size_t n = 0; n < data.size(); ++n)
    if (const auto b = xi_bound(data[n]))
      s.overrides["xi[" + std::to_string(n + 1) + "]"] = Prior::uniform(*b, 2.0 * *b);
  return s;
}

// ---------------------------------------------------------------------------
// Stage-1 parameter layout

class Stage1Layout {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Stage1Layout() = default;
  Stage1Layout(const TrianglePortfolio& data, ShockStructure structure)
      : lines_(data.size()), I_(data.accident_periods()), J_(data.development_periods()), structure_(structure) {
    add("p");
    for (std::size_t n = 0; n < lines_; ++n) {
      bounds_.push_back(xi_bound(data[n]));
      xi_.push_back(bounds_.back() ? add("xi[" + tag(n) + "]") : npos);
    }
    delta_ = add("delta");
    for (std::size_t n = 0; n < lines_; ++n)
      for (int i = 2; i <= I_; ++i) add("eta[" + tag(n) + "][" + std::to_string(i) + "]");
    for (std::size_t n = 0; n < lines_; ++n)
      for (int j = 1; j <= J_; ++j) add("nu[" + tag(n) + "][" + std::to_string(j) + "]");
    for (std::size_t n = 0; n < lines_; ++n) add("gamma[" + tag(n) + "]");
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t lines() const { return lines_; }
  int accident_periods() const { return I_; }
  int development_periods() const { return J_; }
  ShockStructure structure() const { return structure_; }

  std::size_t p() const { return 0; }
  std::size_t xi(std::size_t n) const { return xi_[n]; }
  std::optional<double> xi_lower(std::size_t n) const { return bounds_[n]; }
  std::size_t delta() const { return delta_; }
  std::size_t eta(std::size_t n, int i) const { return delta_ + 1 + n * static_cast<std::size_t>(I_ - 1) + static_cast<std::size_t>(i - 2); }
  std::size_t nu(std::size_t n, int j) const {
    return delta_ + 1 + lines_ * static_cast<std::size_t>(I_ - 1) + n * static_cast<std::size_t>(J_) + static_cast<std::size_t>(j - 1);
  }
  std::size_t gamma(std::size_t n) const { return delta_ + 1 + lines_ * static_cast<std::size_t>(I_ - 1 + J_) + n; }

  std::string group(std::size_t k) const {
    const std::string& s = names_[k];
    return s.substr(0, s.find('['));
  }

  /// Parameter groups in sampling order: p | xi | delta | eta per line | nu per line | gamma.
  std::vector<std::vector<std::size_t>> blocks() const {
    std::vector<std::vector<std::size_t>> b;
    b.push_back({p()});
    std::vector<std::size_t> xs;
    for (std::size_t n = 0; n < lines_; ++n)
      if (xi_[n] != npos) xs.push_back(xi_[n]);
    if (!xs.empty()) b.push_back(xs);
    b.push_back({delta_});
    for (std::size_t n = 0; n < lines_; ++n) {
      std::vector<std::size_t> e;
      for (int i = 2; i <= I_; ++i) e.push_back(eta(n, i));
      if (!e.empty()) b.push_back(e);
    }
    for (std::size_t n = 0; n < lines_; ++n) {
      std::vector<std::size_t> v;
      for (int j = 1; j <= J_; ++j) v.push_back(nu(n, j));
      b.push_back(v);
    }
    std::vector<std::size_t> g;
    for (std::size_t n = 0; n < lines_; ++n) g.push_back(gamma(n));
    b.push_back(g);
    return b;
  }

  /// Full model parameters from a stage-1 vector and a value of c (beta is
  /// recovered as c^(2-p) / delta).
  ShockModelParams to_params(const std::vector<double>& x, double c = 1.0) const {
    ShockModelParams m;
    m.structure = structure_;
    m.p = x[p()];
    m.c = c;
    m.beta = std::pow(c, 2.0 - m.p) / x[delta_];
    m.gamma.resize(static_cast<Eigen::Index>(lines_));
    m.xi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lines_));
    for (std::size_t n = 0; n < lines_; ++n) {
      Eigen::VectorXd e(I_), v(J_);
      e(0) = 1.0;
      for (int i = 2; i <= I_; ++i) e(i - 1) = x[eta(n, i)];
      for (int j = 1; j <= J_; ++j) v(j - 1) = x[nu(n, j)];
      m.eta.push_back(e);
      m.nu.push_back(v);
      m.gamma(static_cast<Eigen::Index>(n)) = x[gamma(n)];
      if (xi_[n] != npos) m.xi(static_cast<Eigen::Index>(n)) = x[xi_[n]];
    }
    return m;
  }

  /// Stage-1 vector from a full parameter set.
  std::vector<double> from_params(const ShockModelParams& m) const {
    std::vector<double> x(size());
    x[p()] = m.p;
    x[delta_] = m.delta();
    for (std::size_t n = 0; n < lines_; ++n) {
      for (int i = 2; i <= I_; ++i) x[eta(n, i)] = m.eta[n](i - 1);
      for (int j = 1; j <= J_; ++j) x[nu(n, j)] = m.nu[n](j - 1);
      x[gamma(n)] = m.gamma(static_cast<Eigen::Index>(n));
      if (xi_[n] != npos) x[xi_[n]] = m.xi(static_cast<Eigen::Index>(n));
    }
    return x;
  }

  std::vector<Transform> transforms(const std::vector<Prior>& priors) const {
    std::vector<Transform> t(size(), Transform::log());
    const Prior& pp = priors[p()];
    double lo = 1.0, hi = 2.0;
    if (pp.family == PriorFamily::uniform || pp.family == PriorFamily::uniform_transformed) {
      lo = pp.a;
      hi = pp.b;
    }
    t[p()] = hi > lo ? Transform::logit(lo, hi) : Transform::identity();
    for (std::size_t n = 0; n < lines_; ++n)
      if (xi_[n] != npos) t[xi_[n]] = Transform::shifted_log(*bounds_[n]);
    return t;
  }

  std::vector<Prior> resolve(const PriorSpec& spec) const {
    std::vector<Prior> out;
    for (std::size_t k = 0; k < size(); ++k) {
      out.push_back(spec.lookup(names_[k], group(k)));
      out.back().validate(names_[k]);
    }
    const Prior& pp = out[p()];
    if (pp.family == PriorFamily::uniform && pp.a < 1.0 && pp.b > 0.0 && pp.a != pp.b)
      throw ConfigError("prior on p must exclude (0, 1)");
    for (std::size_t n = 0; n < lines_; ++n)
      if (xi_[n] != npos) {
        const Prior& xp = out[xi_[n]];
        if (xp.family == PriorFamily::uniform && xp.a < *bounds_[n])
          throw ConfigError("prior on " + names_[xi_[n]] + " extends below the data bound " + io::format_number(*bounds_[n]));
      }
    return out;
  }

 private:
  static std::string tag(std::size_t n) { return std::to_string(n + 1); }
  std::size_t add(const std::string& name) {
    names_.push_back(name);
    return names_.size() - 1;
  }

  std::size_t lines_ = 0;
  int I_ = 0, J_ = 0;
  ShockStructure structure_ = ShockStructure::balanced;
  std::vector<std::string> names_;
  std::vector<std::size_t> xi_;
  std::vector<std::optional<double>> bounds_;
  std::size_t delta_ = 0;
};

/// Sum of the cell marginal log-densities of y + xi (no priors).
inline double stage1_log_likelihood(const Stage1Layout& L, const std::vector<double>& x, const TrianglePortfolio& data) {
  const double p = x[L.p()];
  const double delta = x[L.delta()];
  if (p > 0.0 && p < 1.0) return kNegInf;
  // G_j = (geometric-mean nu_j)^(2-p) for the balanced structure, 1 for the original.
  std::vector<double> G(static_cast<std::size_t>(L.development_periods()), 1.0);
  if (L.structure() == ShockStructure::balanced)
    for (int j = 1; j <= L.development_periods(); ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < L.lines(); ++n) s += std::log(x[L.nu(n, j)]);
      G[static_cast<std::size_t>(j - 1)] = std::exp((2.0 - p) * s / static_cast<double>(L.lines()));
    }
  double total = 0.0;
  for (std::size_t n = 0; n < L.lines(); ++n) {
    const LossTriangle& t = data[n];
    const double g = x[L.gamma(n)];
    const double xi = L.xi(n) == Stage1Layout::npos ? 0.0 : x[L.xi(n)];
    for (const Cell& c : t.observed_cells()) {
      const double eta = c.i == 1 ? 1.0 : x[L.eta(n, c.i)];
      const double mu = eta * x[L.nu(n, c.j)];
      const double r = delta * G[static_cast<std::size_t>(c.j - 1)] * g * std::pow(mu, p - 2.0);
      const tweedie::Params tp = marginal_from_ratio(p, mu, g, r);
      if (!(tp.mu > 0.0) || !(tp.phi > 0.0) || !std::isfinite(tp.mu) || !std::isfinite(tp.phi)) return kNegInf;
      const double y = t(c.i, c.j) + xi;
      if (p != 0.0 && y < 0.0) return kNegInf;
      const double v = tweedie::Density(tp).log_pdf(y);
      if (v == kNegInf || std::isnan(v)) return kNegInf;
      total += v;
    }
  }
  return total;
}

inline double log_prior(const std::vector<double>& x, const std::vector<Prior>& priors, const std::vector<Transform>& tr) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (priors[k].is_fixed()) {
      if (x[k] != priors[k].a) return kNegInf;
      continue;
    }
    s += priors[k].log_density(x[k], tr[k]);
    if (s == kNegInf) return s;
  }
  return s;
}

/// Stage-1 log posterior (original-scale density).
inline double stage1_log_posterior(const Stage1Layout& L, const std::vector<double>& x, const TrianglePortfolio& data,
                                   const std::vector<Prior>& priors) {
  const auto tr = L.transforms(priors);
  const double lp = log_prior(x, priors, tr);
  if (lp == kNegInf) return lp;
  for (std::size_t k = 0; k < x.size(); ++k)
    if (k != L.p() && L.group(k) != "xi" && !(x[k] > 0.0)) return kNegInf;
  return lp + stage1_log_likelihood(L, x, data);
}

struct Stage2Evaluation {
  double log_likelihood = 0.0;
  int cells = 0;
  int nonconverged = 0;
  double worst_rel_error = 0.0;
};

/// Joint log-likelihood of all observed cells at the given full parameter set.
inline Stage2Evaluation stage2_log_likelihood(const ShockModelParams& m, const TrianglePortfolio& data, int threads = 1) {
  const std::vector<Cell> cells = data[0].observed_cells();
  std::vector<DensityResult> res(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t k) {
    std::vector<double> y;
    for (const auto& t : data) y.push_back(t(cells[k].i, cells[k].j));
    res[k] = multivariate_log_density(m, cells[k].i, cells[k].j, y);
  });
  Stage2Evaluation out;
  out.cells = static_cast<int>(cells.size());
  for (const auto& r : res) {
    out.log_likelihood += r.log_value;
    if (!r.converged) ++out.nonconverged;
    out.worst_rel_error = std::max(out.worst_rel_error, r.rel_error);
  }
  return out;
}

/// Stage-2 log posterior for c with the stage-1 estimates held fixed.
inline double stage2_log_posterior(double c, const ShockModelParams& fixed, const TrianglePortfolio& data, const Prior& prior,
                                   int threads = 1, Stage2Evaluation* info = nullptr) {
  if (!(c > 0.0)) return kNegInf;
  const double lp = prior.log_density(c, Transform::log());
  if (lp == kNegInf) return lp;
  ShockModelParams m = fixed;
  const double delta = fixed.delta();
  m.c = c;
  m.beta = std::pow(c, 2.0 - m.p) / delta;
  const Stage2Evaluation e = stage2_log_likelihood(m, data, threads);
  if (info) *info = e;
  return lp + e.log_likelihood;
}

// ---------------------------------------------------------------------------
// Sampler

struct McmcConfig {
  int iterations = 20000;
  int burn_in = 10000;
  int thin = 1;
  double target_scalar = 0.44;
  double target_block = 0.234;
  bool adapt = true;
  bool adapt_covariance = true;
  std::uint64_t seed = 1;
  double initial_scale = 0.1;
  int stuck_window = 1000;
  bool fail_on_stuck = false;

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be positive");
    if (burn_in < 0 || burn_in >= iterations) throw ConfigError("burn_in must satisfy 0 <= burn_in < iterations");
    if (thin < 1) throw ConfigError("thinning stride must be >= 1");
    if (!(target_scalar > 0.0 && target_scalar < 1.0) || !(target_block > 0.0 && target_block < 1.0))
      throw ConfigError("target acceptance rates must lie in (0, 1)");
    if (!(initial_scale > 0.0)) throw ConfigError("initial proposal scale must be positive");
  }
  int stored_draws() const { return (iterations - burn_in) / thin; }
};

struct McmcChain {
  std::vector<std::string> names;
  std::vector<Transform> transforms;
  std::vector<std::vector<std::size_t>> blocks;
  Eigen::MatrixXd draws;  // stored draws x parameters, original scale
  std::vector<double> log_posterior;
  std::vector<long> accepted, proposed;  // per block, after burn-in
  std::vector<double> scales;            // frozen proposal scales
  int iterations = 0, burn_in = 0, thin = 1;
  std::uint64_t seed = 0;
  double seconds = 0.0;
  std::vector<std::string> diagnostics;

  std::size_t index(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return k;
    throw ConfigError("no parameter named " + name);
  }
  std::vector<double> column(std::size_t k) const {
    std::vector<double> v(static_cast<std::size_t>(draws.rows()));
    for (Eigen::Index r = 0; r < draws.rows(); ++r) v[static_cast<std::size_t>(r)] = draws(r, static_cast<Eigen::Index>(k));
    return v;
  }
  std::vector<double> column(const std::string& name) const { return column(index(name)); }
  std::vector<double> row(Eigen::Index r) const {
    std::vector<double> v(static_cast<std::size_t>(draws.cols()));
    for (Eigen::Index k = 0; k < draws.cols(); ++k) v[static_cast<std::size_t>(k)] = draws(r, k);
    return v;
  }
  double acceptance_rate(std::size_t block) const {
    return proposed[block] > 0 ? static_cast<double>(accepted[block]) / static_cast<double>(proposed[block]) : 0.0;
  }
  std::string block_label(std::size_t b) const {
    const auto& blk = blocks[b];
    return blk.size() == 1 ? names[blk[0]] : names[blk.front()] + ".." + names[blk.back()];
  }
};

struct MhProblem {
  std::vector<std::string> names;
  std::vector<Transform> transforms;
  std::vector<std::vector<std::size_t>> blocks;  // parameters absent from every block stay at their initial value
  std::function<double(const std::vector<double>&)> log_posterior;  // original scale
};

/// Blocked Gaussian random-walk Metropolis-Hastings on the unconstrained
/// scale. During burn-in each block's scale follows a Robbins-Monro recursion
/// toward its target acceptance rate and, for multi-parameter blocks, the
/// proposal shape is re-estimated from the burn-in path; both are frozen
/// afterwards.
inline McmcChain run_mh(const MhProblem& prob, const std::vector<double>& initial, const McmcConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t K = initial.size();
  if (prob.transforms.size() != K || prob.names.size() != K) throw ConfigError("run_mh: layout size mismatch");

  McmcChain chain;
  chain.names = prob.names;
  chain.transforms = prob.transforms;
  chain.blocks = prob.blocks;
  chain.iterations = cfg.iterations;
  chain.burn_in = cfg.burn_in;
  chain.thin = cfg.thin;
  chain.seed = cfg.seed;
  const std::size_t B = prob.blocks.size();
  chain.accepted.assign(B, 0);
  chain.proposed.assign(B, 0);

  std::vector<double> x = initial;
  std::vector<double> u(K);
  for (std::size_t k = 0; k < K; ++k) u[k] = prob.transforms[k].to_unconstrained(x[k]);
  // each moving parameter contributes its Jacobian once, however many blocks hold it
  std::vector<std::size_t> moving;
  for (const auto& blk : prob.blocks) moving.insert(moving.end(), blk.begin(), blk.end());
  std::sort(moving.begin(), moving.end());
  moving.erase(std::unique(moving.begin(), moving.end()), moving.end());
  auto log_target = [&](const std::vector<double>& uu, std::vector<double>& xx) {
    xx = initial;  // parameters outside every block keep their exact starting value
    for (std::size_t k : moving) xx[k] = prob.transforms[k].to_constrained(uu[k]);
    const double lp = prob.log_posterior(xx);
    if (lp == kNegInf || std::isnan(lp)) return kNegInf;
    double jac = 0.0;
    for (std::size_t k : moving) jac += prob.transforms[k].log_jacobian(uu[k]);
    return lp + jac;
  };
  double current = log_target(u, x);
  if (current == kNegInf) throw NumericError("run_mh: initial value has zero posterior density");

  Rng rng = make_rng(cfg.seed, "run_mh");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> log_scale(B);
  std::vector<Eigen::MatrixXd> shape(B);
  std::vector<bool> shaped(B, false);
  std::vector<Eigen::VectorXd> w_mean(B);
  std::vector<Eigen::MatrixXd> w_m2(B);
  std::vector<long> w_count(B, 0);
  std::vector<long> window_acc(B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto d = static_cast<Eigen::Index>(prob.blocks[b].size());
    log_scale[b] = std::log(cfg.initial_scale / std::sqrt(static_cast<double>(d)));
    shape[b] = Eigen::MatrixXd::Identity(d, d);
    w_mean[b] = Eigen::VectorXd::Zero(d);
    w_m2[b] = Eigen::MatrixXd::Zero(d, d);
  }
  const int collect_from = cfg.burn_in / 5;
  const int stored = cfg.stored_draws();
  chain.draws.resize(stored, static_cast<Eigen::Index>(K));
  chain.log_posterior.reserve(static_cast<std::size_t>(stored));

  std::vector<double> u_prop(K), x_prop(K);
  int row = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    const bool burning = it <= cfg.burn_in;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& blk = prob.blocks[b];
      const auto d = static_cast<Eigen::Index>(blk.size());
      Eigen::VectorXd z(d);
      for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
      const Eigen::VectorXd step = std::exp(log_scale[b]) * (shape[b] * z);
      u_prop = u;
      for (Eigen::Index k = 0; k < d; ++k) u_prop[blk[static_cast<std::size_t>(k)]] += step(k);
      const double cand = log_target(u_prop, x_prop);
      const bool accept = cand != kNegInf && std::log(unif(rng)) < cand - current;
      if (accept) {
        u.swap(u_prop);
        x.swap(x_prop);
        current = cand;
      } else {
        for (std::size_t k : blk) x[k] = prob.transforms[k].to_constrained(u[k]);
      }
      if (burning) {
        if (cfg.adapt) {
          const double target = d == 1 ? cfg.target_scalar : cfg.target_block;
          const double gain = std::pow(static_cast<double>(it), -0.6);
          log_scale[b] += gain * ((accept ? 1.0 : 0.0) - target);
          if (cfg.adapt_covariance && d > 1 && it > collect_from) {
            Eigen::VectorXd v(d);
            for (Eigen::Index k = 0; k < d; ++k) v(k) = u[blk[static_cast<std::size_t>(k)]];
            ++w_count[b];
            const Eigen::VectorXd delta = v - w_mean[b];
            w_mean[b] += delta / static_cast<double>(w_count[b]);
            w_m2[b] += delta * (v - w_mean[b]).transpose();
            const long need = 200L * d;
            if (w_count[b] >= need && (w_count[b] - need) % 500 == 0) {
              Eigen::MatrixXd cov = w_m2[b] / static_cast<double>(w_count[b] - 1);
              const double ridge = 1e-10 * std::max(cov.diagonal().maxCoeff(), 1e-300);
              cov.diagonal().array() += ridge;
              const Eigen::LLT<Eigen::MatrixXd> llt(cov);
              if (llt.info() == Eigen::Success) {
                shape[b] = llt.matrixL();
                if (!shaped[b]) log_scale[b] = std::log(2.38 / std::sqrt(static_cast<double>(d)));
                shaped[b] = true;
              }
            }
          }
        }
      } else {
        ++chain.proposed[b];
        if (accept) {
          ++chain.accepted[b];
          ++window_acc[b];
        }
        const int m = it - cfg.burn_in;
        if (m % cfg.stuck_window == 0) {
          if (window_acc[b] * 100 < cfg.stuck_window) {
            const std::string msg = "block " + chain.block_label(b) + ": acceptance below 1% over iterations " +
                                    std::to_string(it - cfg.stuck_window + 1) + ".." + std::to_string(it);
            if (cfg.fail_on_stuck) throw ConvergenceError(msg);
            chain.diagnostics.push_back(msg);
          }
          window_acc[b] = 0;
        }
      }
    }
    if (!burning && (it - cfg.burn_in) % cfg.thin == 0 && row < stored) {
      for (std::size_t k = 0; k < K; ++k) chain.draws(row, static_cast<Eigen::Index>(k)) = x[k];
      chain.log_posterior.push_back(current);
      ++row;
    }
  }
  for (std::size_t b = 0; b < B; ++b) chain.scales.push_back(std::exp(log_scale[b]));
  chain.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return chain;
}

// ---------------------------------------------------------------------------
// Summaries

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
};

inline ParamSummary summarize(const std::string& name, std::vector<double> v) {
  if (v.empty()) throw DataError("summary of empty chain for " + name);
  ParamSummary s;
  s.name = name;
  s.mean = stats::mean(v);
  s.sd = stats::sd(v);
  std::sort(v.begin(), v.end());
  s.median = stats::quantile_sorted(v, 0.5);
  s.q05 = stats::quantile_sorted(v, 0.05);
  s.q95 = stats::quantile_sorted(v, 0.95);
  return s;
}

inline std::vector<ParamSummary> posterior_summary(const McmcChain& chain) {
  if (chain.draws.rows() == 0) throw DataError("posterior_summary: empty chain");
  std::vector<ParamSummary> out;
  for (std::size_t k = 0; k < chain.names.size(); ++k) out.push_back(summarize(chain.names[k], chain.column(k)));
  return out;
}

inline const ParamSummary& find_summary(const std::vector<ParamSummary>& s, const std::string& name) {
  for (const auto& r : s)
    if (r.name == name) return r;
  throw ConfigError("no summary for " + name);
}

// ---------------------------------------------------------------------------
// Two-stage fit

struct FitConfig {
  ShockStructure structure = ShockStructure::balanced;
  McmcConfig stage1;
  McmcConfig stage2{3000, 1000, 1};
  std::optional<PriorSpec> priors;  // defaults from default_priors(data)
  std::map<std::string, Prior> prior_overrides;  // applied on top of the priors
  bool run_stage2 = true;
  bool joint_block = true;  // extra adaptive move on all stage-1 parameters at once
  double initial_p = 1.5;
  int threads = 1;
  std::optional<std::vector<double>> initial;  // stage-1 vector, original scale
};

struct FitResult {
  Stage1Layout layout;
  PriorSpec spec;
  std::vector<Prior> priors;
  McmcChain stage1;
  std::optional<McmcChain> stage2;
  std::vector<double> stage2_beta;     // beta draws matching the stage-2 chain
  std::vector<ParamSummary> summary;   // stage-1 parameters, then c and beta
  ShockModelParams medians;            // stage-1 medians with the stage-2 median c
  int stage2_nonconverged = 0;
  std::vector<std::string> diagnostics;
};

/// Starting point from per-line Tweedie GLM fits on the translated data.
inline std::vector<double> initial_values(const Stage1Layout& L, const TrianglePortfolio& data, const std::vector<Prior>& priors,
                                          double p0) {
  std::vector<double> x(L.size(), 1.0);
  const Prior& pp = priors[L.p()];
  if (pp.is_fixed())
    p0 = pp.a;
  else if (pp.family == PriorFamily::uniform || pp.family == PriorFamily::uniform_transformed)
    p0 = std::clamp(p0, pp.a + 0.05 * (pp.b - pp.a), pp.b - 0.05 * (pp.b - pp.a));
  x[L.p()] = p0;
  const double glm_p = p0 > 1.0 && p0 < 2.0 ? p0 : 1.5;
  std::vector<double> base;
  for (std::size_t n = 0; n < L.lines(); ++n) {
    double xi = 0.0;
    if (L.xi(n) != Stage1Layout::npos) {
      const Prior& xp = priors[L.xi(n)];
      const double b = *L.xi_lower(n);
      xi = xp.is_fixed() ? xp.a : b + 0.05 * std::max(b, 1e-6);
      x[L.xi(n)] = xi;
    }
    GlmOptions go;
    go.p = glm_p;
    go.translation = xi;
    const GlmFit g = fit_tweedie_glm(data[n], go);
    for (int i = 2; i <= L.accident_periods(); ++i) x[L.eta(n, i)] = std::exp(g.coefficients(i - 2));
    for (int j = 1; j <= L.development_periods(); ++j)
      x[L.nu(n, j)] = std::exp(g.coefficients(L.accident_periods() - 1 + j - 1));
    x[L.gamma(n)] = std::clamp(g.dispersion, 1e-3, 50.0);
  }
  // Pick delta so that the median cell carries a ~10% shock share, and
  // deflate nu so the implied means stay near the GLM fit.
  std::vector<double> unit;
  for (std::size_t n = 0; n < L.lines(); ++n)
    for (const Cell& c : data[n].observed_cells()) {
      double s = 0.0;
      for (std::size_t m = 0; m < L.lines(); ++m) s += std::log(x[L.nu(m, c.j)]);
      const double G = L.structure() == ShockStructure::balanced ? std::exp((2.0 - p0) * s / static_cast<double>(L.lines())) : 1.0;
      const double mu = (c.i == 1 ? 1.0 : x[L.eta(n, c.i)]) * x[L.nu(n, c.j)];
      unit.push_back(G * x[L.gamma(n)] * std::pow(mu, p0 - 2.0));
    }
  x[L.delta()] = 0.1 / std::max(stats::quantile(unit, 0.5), 1e-300);
  for (std::size_t n = 0; n < L.lines(); ++n)
    for (int j = 1; j <= L.development_periods(); ++j) x[L.nu(n, j)] /= 1.1;
  // Respect fixed priors and pull starting values inside bounded supports.
  const auto tr = L.transforms(priors);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const Prior& pr = priors[k];
    if (pr.is_fixed()) {
      x[k] = pr.a;
    } else if (pr.family == PriorFamily::uniform) {
      const double lo = k == L.p() || L.group(k) == "xi" ? pr.a : std::max(pr.a, 0.0);
      const double pad = 1e-3 * (pr.b - lo);
      x[k] = std::clamp(x[k], lo + pad, pr.b - pad);
    } else if (pr.family == PriorFamily::uniform_transformed) {
      const double ua = tr[k].to_unconstrained(pr.a), ub = tr[k].to_unconstrained(pr.b);
      const double pad = 1e-3 * (ub - ua);
      x[k] = tr[k].to_constrained(std::clamp(tr[k].to_unconstrained(x[k]), ua + pad, ub - pad));
    }
  }
  return x;
}

inline std::vector<std::vector<std::size_t>> free_blocks(const std::vector<std::vector<std::size_t>>& blocks,
                                                         const std::vector<Prior>& priors) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& b : blocks) {
    std::vector<std::size_t> f;
    for (std::size_t k : b)
      if (!priors[k].is_fixed()) f.push_back(k);
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

inline McmcChain run_stage1(const Stage1Layout& L, const TrianglePortfolio& data, const std::vector<Prior>& priors,
                            const std::vector<double>& init, const McmcConfig& cfg, bool joint_block = true) {
  MhProblem prob;
  prob.names = L.names();
  prob.transforms = L.transforms(priors);
  prob.blocks = free_blocks(L.blocks(), priors);
  if (joint_block) {
    std::vector<std::size_t> all;
    for (const auto& b : prob.blocks) all.insert(all.end(), b.begin(), b.end());
    if (prob.blocks.size() > 1) prob.blocks.push_back(all);
  }
  prob.log_posterior = [&](const std::vector<double>& x) { return stage1_log_posterior(L, x, data, priors); };
  return run_mh(prob, init, cfg);
}

/// Stage-1 medians as a full parameter set with the given c.
inline ShockModelParams median_params(const Stage1Layout& L, const McmcChain& chain, double c) {
  std::vector<double> med(L.size());
  for (std::size_t k = 0; k < L.size(); ++k) med[k] = stats::quantile(chain.column(k), 0.5);
  return L.to_params(med, c);
}

/// Stage 1 only: marginal chain, summaries and medians (c = 1, beta = 1 / delta).
inline FitResult fit_stage1(const TrianglePortfolio& data, const FitConfig& cfg) {
  data.require_modelling_shape();
  FitResult out;
  out.layout = Stage1Layout(data, cfg.structure);
  const Stage1Layout& L = out.layout;
  out.spec = cfg.priors ? *cfg.priors : default_priors(data);
  for (const auto& [k, v] : cfg.prior_overrides) out.spec.overrides[k] = v;
  out.priors = L.resolve(out.spec);
  const std::vector<double> init = cfg.initial ? *cfg.initial : initial_values(L, data, out.priors, cfg.initial_p);
  if (init.size() != L.size()) throw ConfigError("initial vector has the wrong length");

  out.stage1 = run_stage1(L, data, out.priors, init, cfg.stage1, cfg.joint_block);
  out.summary = posterior_summary(out.stage1);
  for (const auto& s : out.summary)
    if (!std::isfinite(s.median) || !std::isfinite(s.sd)) throw NumericError("non-finite posterior summary for " + s.name);
  for (const auto& d : out.stage1.diagnostics) out.diagnostics.push_back("stage 1: " + d);
  out.medians = median_params(L, out.stage1, 1.0);
  return out;
}

/// Stage 2 on top of a stage-1 result: samples c with the stage-1 medians
/// fixed and appends c and beta to the summary.
inline void fit_stage2(FitResult& out, const TrianglePortfolio& data, const FitConfig& cfg) {
  Prior c_prior = out.spec.lookup("c", "c");
  c_prior.validate("c");
  const ShockModelParams fixed = out.medians;
  MhProblem prob;
  prob.names = {"c"};
  prob.transforms = {Transform::log()};
  if (!c_prior.is_fixed()) prob.blocks = {{0}};
  int nonconverged = 0;
  prob.log_posterior = [&](const std::vector<double>& x) {
    Stage2Evaluation e;
    const double v = stage2_log_posterior(x[0], fixed, data, c_prior, cfg.threads, &e);
    nonconverged = std::max(nonconverged, e.nonconverged);
    return v;
  };
  double c0 = 1.0;
  switch (c_prior.family) {
    case PriorFamily::uniform: c0 = 0.5 * (c_prior.a + c_prior.b); break;
    case PriorFamily::uniform_transformed: c0 = std::sqrt(c_prior.a * c_prior.b); break;
    case PriorFamily::lognormal:
    case PriorFamily::normal_transformed: c0 = std::exp(c_prior.a); break;
  }
  McmcConfig c2 = cfg.stage2;
  c2.seed = derive_seed(cfg.stage2.seed, "stage2");
  out.stage2 = run_mh(prob, {c0}, c2);
  out.stage2_nonconverged = nonconverged;
  if (nonconverged > 0)
    out.diagnostics.push_back("stage 2: up to " + std::to_string(nonconverged) + " cells per evaluation missed the quadrature tolerance");
  for (const auto& d : out.stage2->diagnostics) out.diagnostics.push_back("stage 2: " + d);
  const std::vector<double> cs = out.stage2->column(0);
  const double p = fixed.p, delta = fixed.delta();
  out.stage2_beta.clear();
  for (double c : cs) out.stage2_beta.push_back(std::pow(c, 2.0 - p) / delta);
  out.summary.push_back(summarize("c", cs));
  out.summary.push_back(summarize("beta", out.stage2_beta));
  const double c_med = stats::quantile(cs, 0.5);
  out.medians.c = c_med;
  out.medians.beta = std::pow(c_med, 2.0 - p) / delta;
}

inline FitResult fit(const TrianglePortfolio& data, const FitConfig& cfg) {
  FitResult out = fit_stage1(data, cfg);
  if (cfg.run_stage2) fit_stage2(out, data, cfg);
  return out;
}

/// Full parameter sets for stored stage-1 draws (every k-th row when
/// `max_draws` thins them), with c taken cyclically from `c_draws` (c = 1 when
/// empty; the predictive law depends on c and beta only through delta).
inline std::vector<ShockModelParams> params_from_draws(const Stage1Layout& L, const Eigen::MatrixXd& draws,
                                                       const std::vector<double>& c_draws, std::size_t max_draws = 0) {
  const auto n = static_cast<std::size_t>(draws.rows());
  if (n == 0) throw ConfigError("no posterior draws");
  if (static_cast<std::size_t>(draws.cols()) != L.size()) throw ConfigError("draw width does not match the parameter layout");
  const std::size_t take = max_draws == 0 ? n : std::min(n, max_draws);
  const std::size_t stride = n / take;
  std::vector<ShockModelParams> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) {
    const auto r = static_cast<Eigen::Index>(k * stride);
    std::vector<double> x(L.size());
    for (std::size_t q = 0; q < L.size(); ++q) x[q] = draws(r, static_cast<Eigen::Index>(q));
    const double c = c_draws.empty() ? 1.0 : c_draws[k % c_draws.size()];
    out.push_back(L.to_params(x, c));
  }
  return out;
}

inline std::vector<ShockModelParams> posterior_params(const FitResult& f, std::size_t max_draws = 0) {
  std::vector<double> cs;
  if (f.stage2) cs = f.stage2->column(0);
  return params_from_draws(f.layout, f.stage1.draws, cs, max_draws);
}

struct ChainTable {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;

  std::vector<double> column(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) {
        std::vector<double> v(static_cast<std::size_t>(draws.rows()));
        for (Eigen::Index r = 0; r < draws.rows(); ++r) v[static_cast<std::size_t>(r)] = draws(r, static_cast<Eigen::Index>(k));
        return v;
      }
    throw DataError("chain has no column " + name);
  }
};

/// Reads a chain written by chain_csv (the leading draw column is dropped).
inline ChainTable read_chain_csv(const std::filesystem::path& path) {
  const io::CsvTable csv = io::read_csv(path);
  ChainTable t;
  const std::size_t skip = !csv.header.empty() && csv.header[0] == "draw" ? 1 : 0;
  t.names.assign(csv.header.begin() + static_cast<std::ptrdiff_t>(skip), csv.header.end());
  t.draws.resize(static_cast<Eigen::Index>(csv.rows.size()), static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t r = 0; r < csv.rows.size(); ++r)
    for (std::size_t k = 0; k < t.names.size(); ++k)
      t.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          io::parse_double(csv.rows[r][k + skip], path.string() + ":" + std::to_string(csv.line_numbers[r]));
  return t;
}

/// Reorders a chain table to the layout's parameter order.
inline Eigen::MatrixXd align_draws(const Stage1Layout& L, const ChainTable& t) {
  Eigen::MatrixXd out(t.draws.rows(), static_cast<Eigen::Index>(L.size()));
  for (std::size_t k = 0; k < L.size(); ++k) {
    const auto v = t.column(L.names()[k]);
    for (Eigen::Index r = 0; r < t.draws.rows(); ++r) out(r, static_cast<Eigen::Index>(k)) = v[static_cast<std::size_t>(r)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON configuration

inline Prior prior_from_json(const nlohmann::json& j) {
  const std::string fam = j.at("family").get<std::string>();
  if (fam == "uniform") return Prior::uniform(j.at("lower").get<double>(), j.at("upper").get<double>());
  if (fam == "fixed") return Prior::fixed(j.at("value").get<double>());
  if (fam == "uniform_transformed") return Prior::uniform_transformed(j.at("lower").get<double>(), j.at("upper").get<double>());
  if (fam == "lognormal") return Prior::lognormal(j.at("meanlog").get<double>(), j.at("sdlog").get<double>());
  if (fam == "normal_transformed") return Prior::normal_transformed(j.at("mean").get<double>(), j.at("sd").get<double>());
  throw ConfigError("unknown prior family '" + fam + "'");
}

inline nlohmann::json to_json(const Prior& p) {
  switch (p.family) {
    case PriorFamily::uniform: return {{"family", "uniform"}, {"lower", p.a}, {"upper", p.b}};
    case PriorFamily::uniform_transformed: return {{"family", "uniform_transformed"}, {"lower", p.a}, {"upper", p.b}};
    case PriorFamily::lognormal: return {{"family", "lognormal"}, {"meanlog", p.a}, {"sdlog", p.b}};
    case PriorFamily::normal_transformed: return {{"family", "normal_transformed"}, {"mean", p.a}, {"sd", p.b}};
  }
  return {};
}

inline McmcConfig mcmc_from_json(const nlohmann::json& j, McmcConfig base = {}) {
  base.iterations = j.value("iterations", base.iterations);
  base.burn_in = j.value("burn_in", base.burn_in);
  base.thin = j.value("thin", base.thin);
  base.target_scalar = j.value("target_scalar", base.target_scalar);
  base.target_block = j.value("target_block", base.target_block);
  base.adapt = j.value("adapt", base.adapt);
  base.adapt_covariance = j.value("adapt_covariance", base.adapt_covariance);
  base.seed = j.value("seed", base.seed);
  base.initial_scale = j.value("initial_scale", base.initial_scale);
  base.stuck_window = j.value("stuck_window", base.stuck_window);
  base.fail_on_stuck = j.value("fail_on_stuck", base.fail_on_stuck);
  base.validate();
  return base;
}

inline nlohmann::json to_json(const McmcConfig& c) {
  return {{"iterations", c.iterations},       {"burn_in", c.burn_in},   {"thin", c.thin},
          {"target_scalar", c.target_scalar}, {"target_block", c.target_block}, {"adapt", c.adapt},
          {"adapt_covariance", c.adapt_covariance}, {"seed", c.seed}, {"initial_scale", c.initial_scale},
          {"stuck_window", c.stuck_window},   {"fail_on_stuck", c.fail_on_stuck}};
}

/// Chain as CSV: one row per stored draw, one column per parameter.
inline std::string chain_csv(const McmcChain& chain, const std::vector<std::pair<std::string, std::vector<double>>>& extra = {}) {
  std::string out = "draw";
  for (const auto& n : chain.names) out += "," + n;
  for (const auto& e : extra) out += "," + e.first;
  out += "\n";
  for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
    out += std::to_string(r + 1);
    for (Eigen::Index k = 0; k < chain.draws.cols(); ++k) out += "," + io::format_number(chain.draws(r, k));
    for (const auto& e : extra) out += "," + io::format_number(e.second[static_cast<std::size_t>(r)]);
    out += "\n";
  }
  return out;
}

inline std::string summary_csv(const std::vector<ParamSummary>& s) {
  std::string out = "parameter,median,sd,q05,q95,mean\n";
  for (const auto& r : s)
    out += r.name + "," + io::format_number(r.median) + "," + io::format_number(r.sd) + "," + io::format_number(r.q05) + "," +
           io::format_number(r.q95) + "," + io::format_number(r.mean) + "\n";
  return out;
}

}  // namespace shockres
