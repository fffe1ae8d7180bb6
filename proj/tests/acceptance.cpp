// Acceptance run: one PASS/FAIL line per criterion. Always exits 0 once every
// criterion has been evaluated, so a FAIL line is a reported result rather
// than a test-harness error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>

#include "shockres/shockres.hpp"

using namespace shockres;
namespace fs = std::filesystem;

namespace {

const fs::path kData = SHOCKRES_DATA_DIR;
constexpr std::uint64_t kSeed = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_seconds, const std::function<Outcome()>& body,
               double extra_seconds = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + extra_seconds;
  const bool in_time = secs < budget_seconds;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s %2d %s: %s [%.1f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs,
              budget_seconds, in_time ? "" : ", over budget");
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) { return io::format_fixed(v, digits); }

LossTriangle load_real(const std::string& file, const std::string& line) {
  LoadOptions o;
  o.layout = Layout::wide;
  o.kind = ValueKind::cumulative;
  o.line = line;
  return load_triangle(kData / file, o);
}

TrianglePortfolio real_portfolio() {
  return TrianglePortfolio({load_real("bodily_injury_cumulative.csv", "bodily_injury"),
                            load_real("accident_benefits_cumulative.csv", "accident_benefits")});
}

FitConfig desk_config(std::uint64_t seed, ShockStructure s = ShockStructure::balanced) {
  FitConfig cfg;
  cfg.structure = s;
  cfg.stage1.iterations = 20000;
  cfg.stage1.burn_in = 10000;
  cfg.stage1.seed = derive_seed(seed, "stage1");
  cfg.stage2 = {3000, 1000, 1};
  cfg.stage2.seed = derive_seed(seed, "stage2");
  return cfg;
}

const ParamSummary& summary_of(const FitResult& f, const std::string& name) {
  for (const auto& s : f.summary)
    if (s.name == name) return s;
  throw ConfigError("no summary for " + name);
}

double reported(const nlohmann::json& med, const std::string& name, const char* field) {
  return med.at("reported").at(name).at(field).get<double>();
}

// Shared by criteria 8 and 9.
std::optional<FitResult> refit;
double refit_seconds = 0.0;

const FitResult& dataset1_refit() {
  if (!refit) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrianglePortfolio d({load_triangle(kData / "dataset1_triangle1.csv"), load_triangle(kData / "dataset1_triangle2.csv")});
    refit = fit(d, desk_config(derive_seed(kSeed, "dataset1_refit")));
    refit_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return *refit;
}

}  // namespace

int main() {
  std::cout << "acceptance run, master seed " << kSeed << "\n";

  criterion(1, "development factors", 1.0, [] {
    const double table[2][9] = {{8.1617, 1.8968, 1.4521, 1.2652, 1.1249, 1.0624, 1.0225, 1.0254, 1.0092},
                                {2.5844, 1.3584, 1.1708, 1.1140, 1.0481, 1.0305, 1.0137, 1.0057, 1.0118}};
    const TrianglePortfolio real = real_portfolio();
    int ok = 0;
    double worst = 0.0;
    for (std::size_t n = 0; n < 2; ++n) {
      const auto f = age_to_age_factors(standardize(real[n]));
      for (std::size_t j = 0; j < 9; ++j) {
        worst = std::max(worst, std::abs(f[j] - table[n][j]));
        ok += io::format_fixed(f[j], 4) == io::format_fixed(table[n][j], 4);
      }
    }
    return Outcome{ok == 18, std::to_string(ok) + "/18 factors equal after rounding to 4 dp (max unrounded difference " + fmt(worst, 6) + ")"};
  });

  criterion(2, "risk arithmetic", 1.0, [] {
    auto st = [](const std::string& l, double mean, double sd, double v75, double v95) {
      SummaryStats s;
      s.label = l;
      s.mean = mean;
      s.sd = sd;
      s.var75 = v75;
      s.var95 = v95;
      return s;
    };
    const std::vector<SummaryStats> s = {st("bi", 165185.92, 22720.88, 179057.18, 205752.20),
                                         st("ab", 108465.81, 18554.65, 120100.43, 141426.24),
                                         st("total", 273651.73, 30538.83, 293061.56, 326177.22)};
    const auto rows = risk_table(s);
    const double want[2][3] = {{13871.26, 11634.61, 19409.83}, {40566.28, 32960.43, 52525.49}};
    const double want_db[2] = {23.9, 28.6};
    bool ok = true;
    double worst = 0.0;
    for (std::size_t r = 0; r < 2; ++r) {
      const double got[3] = {rows[r].line_margins[0], rows[r].line_margins[1], rows[r].aggregate_margin};
      // inputs are themselves rounded to cents
      for (std::size_t k = 0; k < 3; ++k) {
        worst = std::max(worst, std::abs(got[k] - want[r][k]));
        ok = ok && std::abs(got[k] - want[r][k]) <= 0.0101;
      }
      ok = ok && io::format_fixed(rows[r].benefit, 1) == io::format_fixed(want_db[r], 1);
    }
    return Outcome{ok, "max margin error " + fmt(worst, 3) + ", benefits " + fmt(rows[0].benefit, 1) + "% / " + fmt(rows[1].benefit, 1) + "%"};
  });

  criterion(3, "Tweedie closed forms", 1.0, [] {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const double y = -4.0 + 0.09 * k, mu = 0.7, var = 1.3;
      const double ref = -0.5 * std::log(2.0 * std::numbers::pi * var) - (y - mu) * (y - mu) / (2.0 * var);
      worst = std::max(worst, std::abs(tweedie::log_density({0.0, mu, var}, y) - ref));
    }
    for (int k = 1; k <= 100; ++k) {
      const double y = 0.05 * k, mu = 1.4, phi = 0.6;
      const double shape = 1.0 / phi, scale = phi * mu;
      const double g = (shape - 1.0) * std::log(y) - y / scale - std::lgamma(shape) - shape * std::log(scale);
      worst = std::max(worst, std::abs(tweedie::log_density({2.0, mu, phi}, y) - g));
      const double ig = -0.5 * std::log(2.0 * std::numbers::pi * phi * y * y * y) - (y - mu) * (y - mu) / (2.0 * phi * mu * mu * y);
      worst = std::max(worst, std::abs(tweedie::log_density({3.0, mu, phi}, y) - ig));
    }
    return Outcome{worst <= 1e-8, "max |error| " + io::format_number(worst)};
  });

  criterion(4, "mixed-law normalization", 10.0, [] {
    double worst = 0.0;
    for (double p : {1.2, 1.5, 1.8}) {
      const tweedie::Params prm{p, 1.0, 1.0};
      const tweedie::Density d(prm);
      auto f = [&](double u) {
        if (u <= 0.0 || u >= 1.0) return 0.0;
        const double y = u / (1.0 - u);
        return std::exp(d.log_continuous(y)) / ((1.0 - u) * (1.0 - u));
      };
      double mass = tweedie::zero_mass(prm);
      const double breaks[] = {0.0, 1e-6, 1e-3, 0.1, 0.5, 0.9, 1.0};
      for (std::size_t k = 0; k + 1 < std::size(breaks); ++k) mass += quad::integrate(f, breaks[k], breaks[k + 1], 1e-12, 1e-15, 4000).value;
      worst = std::max(worst, std::abs(mass - 1.0));
    }
    return Outcome{worst <= 1e-6, "max |total mass - 1| " + io::format_number(worst)};
  });

  criterion(5, "closure at p = 2", 30.0, [] {
    ShockModelParams m = load_params(kData / "dataset1_true.json");
    m.p = 2.0;
    m.xi.setZero();
    const CellCoordinates x{3, 2, 0};
    const tweedie::Params marg = marginal_params(m, x);
    Rng rng(derive_seed(kSeed, "closure"));
    std::vector<double> y(1000000);
    for (double& v : y) {
      const double s = tweedie::draw({2.0, shock_mean(m, x.j), m.beta}, rng);
      v = kappa(m, x) * s + tweedie::draw({2.0, cell_mean(m, x), m.gamma(0)}, rng);
    }
    const tweedie::Density d(marg);
    const auto ks = stats::ks_test(y, [&](double v) { return d.cdf(v); });
    return Outcome{ks.p_value > 0.01, "KS p-value " + fmt(ks.p_value, 3)};
  });

  criterion(6, "multivariate density consistency", 60.0, [] {
    ShockModelParams m = load_params(kData / "dataset1_true.json");
    m.p = 2.0;
    m.xi.setZero();
    const int i = 4, j = 3;
    const tweedie::Density marg(marginal_params(m, {i, j, 0}));
    const double mu2 = marginal_params(m, {i, j, 1}).mu;
    double worst = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double y1 = marginal_params(m, {i, j, 0}).mu * 0.06 * k;
      auto f = [&](double u) {
        if (u <= 0.0 || u >= 1.0) return 0.0;
        const double y2 = mu2 * u / (1.0 - u);
        return std::exp(multivariate_log_density(m, i, j, {y1, y2}).log_value) * mu2 / ((1.0 - u) * (1.0 - u));
      };
      double total = 0.0;
      const double breaks[] = {0.0, 1e-4, 0.05, 0.3, 0.6, 0.9, 1.0};
      for (std::size_t b = 0; b + 1 < std::size(breaks); ++b) total += quad::integrate(f, breaks[b], breaks[b + 1], 1e-10, 1e-14, 2000).value;
      const double ref = std::exp(marg.log_pdf(y1));
      worst = std::max(worst, std::abs(total - ref) / ref);
    }
    return Outcome{worst <= 1e-4, "max relative error " + io::format_number(worst) + " over 50 points"};
  });

  criterion(7, "shock-proportion reproduction", 1.0, [] {
    const auto real = load_params(kData / "real_posterior_medians.json");
    const auto props = io::read_csv(kData / "real_shock_proportions.csv");
    double worst = 0.0;
    for (const auto& row : props.rows) {
      const CellCoordinates c{std::stoi(row[1]), std::stoi(row[2]), static_cast<std::size_t>(std::stoi(row[0]) - 1)};
      worst = std::max(worst, std::abs(100.0 * shock_proportion(real, c) - std::stod(row[3])));
    }
    return Outcome{worst <= 0.5, std::to_string(props.rows.size()) + " cells, max deviation " + fmt(worst, 3) + " pp"};
  });

  criterion(8, "parameter recovery", 1800.0, [] {
    const ShockModelParams truth = load_params(kData / "dataset1_true.json");
    const std::uint64_t seed = derive_seed(kSeed, "recovery");
    const TrianglePortfolio sim = simulate_portfolio(truth, seed);
    FitConfig cfg = desk_config(seed);
    cfg.run_stage2 = false;
    const FitResult f = fit(sim, cfg);
    const auto x = f.layout.from_params(truth);
    int covered = 0, total = 0;
    std::string missed;
    for (std::size_t k = 0; k < f.layout.size(); ++k) {
      const auto& s = f.summary[k];
      if (s.name.rfind("xi", 0) == 0) continue;
      ++total;
      if (x[k] >= s.q05 && x[k] <= s.q95) ++covered;
      else if (missed.size() < 120) missed += (missed.empty() ? "" : ",") + s.name;
    }
    const bool coverage_ok = total == 42 && covered >= 0.8 * total;

    const FitResult& r = dataset1_refit();
    const auto med = nlohmann::json::parse(io::read_text(kData / "dataset1_posterior_medians.json"));
    std::string refit_detail;
    bool refit_ok = true;
    for (const auto& [name, key] : {std::pair{"gamma[1]", "gamma1"}, std::pair{"p", "p"}, std::pair{"delta", "delta"}}) {
      const double m = summary_of(r, name).median;
      const double target = reported(med, key, "median"), sd = reported(med, key, "sd");
      const bool ok = std::abs(m - target) <= 2.0 * sd;
      refit_ok = refit_ok && ok;
      refit_detail += std::string(" ") + name + " " + fmt(m, 3) + " vs " + fmt(target, 3) + "+-2*" + fmt(sd, 4) + (ok ? "" : " (out)");
    }
    return Outcome{coverage_ok && refit_ok, "coverage " + std::to_string(covered) + "/" + std::to_string(total) +
                                                (missed.empty() ? "" : " (missed " + missed + ")") + "; refit" + refit_detail};
  });

  criterion(
      9, "balanced versus original", 2700.0,
      [] {
        const auto cfg = nlohmann::json::parse(io::read_text(kData / ".." / "configs" / "simulate_mixture.json"));
        const ShockModelParams truth = params_from_json(cfg.at("params"));
        const std::uint64_t seed = derive_seed(kSeed, "mixture");
        const TrianglePortfolio sim = simulate_portfolio(truth, seed);
        const FitResult b = fit(sim, desk_config(seed, ShockStructure::balanced));
        const FitResult o = fit(sim, desk_config(seed, ShockStructure::original));
        const auto cmp = shock_proportion_comparison(truth, b.medians, o.medians);
        const bool mix_ok = cmp.balanced_mean_abs_log < cmp.original_mean_abs_log;

        const ShockModelParams t1 = load_params(kData / "dataset1_true.json");
        const FitResult& r = dataset1_refit();
        const auto grid = correlation_ratio_grid(r.medians, t1, LossTriangle("mask", 10, 10));
        double lo = 1e300, hi = -1e300;
        for (const Cell& c : LossTriangle("mask", 10, 10).future_cells()) {
          lo = std::min(lo, grid(c.i - 1, c.j - 1));
          hi = std::max(hi, grid(c.i - 1, c.j - 1));
        }
        const bool ratio_ok = lo > 0.9 && hi < 1.1;
        return Outcome{mix_ok && ratio_ok, "mean |log ratio| balanced " + fmt(cmp.balanced_mean_abs_log) + " vs original " +
                                               fmt(cmp.original_mean_abs_log) + "; refit correlation ratios in [" + fmt(lo, 3) +
                                               ", " + fmt(hi, 3) + "]"};
      },
      refit_seconds);  // the shared refit counts against this budget too

  criterion(10, "GLM dependence analysis", 10.0, [] {
    const TrianglePortfolio real = real_portfolio();
    GlmOptions o;
    const auto plain = residual_correlations(fit_tweedie_glm(standardize(real[0]), o), fit_tweedie_glm(standardize(real[1]), o));
    o.calendar = true;
    const auto cal = residual_correlations(fit_tweedie_glm(standardize(real[0]), o), fit_tweedie_glm(standardize(real[1]), o));
    const bool ok = std::abs(plain.pearson - 0.3659) <= 0.02 && std::abs(cal.pearson - 0.3416) <= 0.02;
    return Outcome{ok, "Pearson " + fmt(plain.pearson) + " (target 0.3659), with calendar effect " + fmt(cal.pearson) + " (target 0.3416)"};
  });

  criterion(11, "real-data pipeline", 3600.0, [] {
    const TrianglePortfolio raw = real_portfolio();
    const TrianglePortfolio lr = standardize(raw);
    const std::uint64_t seed = derive_seed(kSeed, "real");
    const FitResult f = fit(lr, desk_config(seed));
    const auto dist = predict_lower(posterior_params(f), raw, derive_seed(seed, "forecast"));
    const auto st = summary_stats(dist);
    const double mean = st.back().mean;
    const double corr = reserve_dependence(dist).pearson(0, 1);
    const bool mean_ok = std::abs(mean / 273651.73 - 1.0) <= 0.10;
    const bool corr_ok = corr > 0.02 && corr < 0.20;
    return Outcome{mean_ok && corr_ok, "aggregate mean " + fmt(mean, 0) + " (" + fmt(100.0 * (mean / 273651.73 - 1.0), 1) +
                                           "% vs 273,652), reserve correlation " + fmt(corr, 4) + ", p " +
                                           fmt(summary_of(f, "p").median, 3) + ", delta " + fmt(summary_of(f, "delta").median, 3)};
  });

  std::cout << failures << " of 11 criteria failed\n";
  return 0;
}
