#pragma once

// Command implementations behind the `shockres` executable. Each command takes
// a parsed JSON config plus run options, writes its outputs under the output
// directory and returns the run manifest (also written as manifest.json).

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>

#include "diagnostics.hpp"
#include "errors.hpp"
#include "forecast.hpp"
#include "glm.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "random.hpp"
#include "shock_model.hpp"
#include "triangles.hpp"
#include "tweedie.hpp"

namespace shockres::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

struct RunOptions {
  fs::path config_dir = ".";  // relative paths in the config resolve against this
  fs::path out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

inline json load_config(const fs::path& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline void check_schema(const json& cfg) {
  if (cfg.contains("schema_version") && cfg.at("schema_version").get<int>() != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + cfg.at("schema_version").dump());
}

template <class T>
T get(const json& j, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

inline fs::path resolve(const RunOptions& o, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : o.config_dir / path;
}

inline std::uint64_t master_seed(const json& cfg, const RunOptions& o) {
  if (o.seed) return *o.seed;
  return get<std::uint64_t>(cfg, "seed", 1);
}

/// Raw portfolio (exposure kept) from the "data" block.
inline TrianglePortfolio load_data(const json& d, const RunOptions& o) {
  check_keys(d, {"portfolio", "triangles", "standardize"}, "data");
  if (d.contains("portfolio")) return load_portfolio(resolve(o, d.at("portfolio").get<std::string>()));
  if (!d.contains("triangles")) throw ConfigError("data: need 'portfolio' or 'triangles'");
  std::vector<LossTriangle> lines;
  for (const auto& t : d.at("triangles")) {
    check_keys(t, {"path", "line", "layout", "kind"}, "data.triangles[]");
    LoadOptions lo;
    const std::string layout = get<std::string>(t, "layout", "long");
    if (layout != "long" && layout != "wide") throw ConfigError("data: layout must be 'long' or 'wide'");
    lo.layout = layout == "wide" ? Layout::wide : Layout::long_form;
    const std::string kind = get<std::string>(t, "kind", "incremental");
    if (kind != "incremental" && kind != "cumulative") throw ConfigError("data: kind must be 'incremental' or 'cumulative'");
    lo.kind = kind == "cumulative" ? ValueKind::cumulative : ValueKind::incremental;
    lo.line = get<std::string>(t, "line", "");
    lines.push_back(load_triangle(resolve(o, t.at("path").get<std::string>()), lo));
  }
  return TrianglePortfolio(std::move(lines));
}

/// Data the model is fitted to: loss ratios when "standardize" is set,
/// otherwise the raw values with any exposure dropped.
inline TrianglePortfolio modelling_data(const TrianglePortfolio& raw, bool standardize_data) {
  if (standardize_data) return standardize(raw);
  std::vector<LossTriangle> lines;
  for (const auto& t : raw) {
    LossTriangle c = t;
    c.clear_exposure();
    lines.push_back(std::move(c));
  }
  return TrianglePortfolio(std::move(lines));
}

inline ShockModelParams params_from(const json& j, const RunOptions& o) {
  if (j.is_string()) return load_params(resolve(o, j.get<std::string>()));
  return params_from_json(j);
}

inline std::string timestamp_utc() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Run {
 public:
  Run(std::string command, const json& cfg, const RunOptions& o, std::uint64_t seed)
      : t0_(std::chrono::steady_clock::now()), out_(o.out) {
    manifest_["command"] = std::move(command);
    manifest_["schema_version"] = kSchemaVersion;
    manifest_["config"] = cfg;
    manifest_["seed"] = seed;
    manifest_["threads"] = o.threads;
    manifest_["version"] = kVersion;
    manifest_["compiler"] = __VERSION__;
    manifest_["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION);
    manifest_["boost"] = BOOST_LIB_VERSION;
    manifest_["started_utc"] = timestamp_utc();
    manifest_["outputs"] = json::array();
    manifest_["status"] = "running";
    fs::create_directories(out_);
  }

  void write(const std::string& name, const std::string& text) {
    io::write_text(out_ / name, text);
    manifest_["outputs"].push_back(name);
  }
  json& manifest() { return manifest_; }

  json finish(const std::string& status = "ok") {
    manifest_["status"] = status;
    manifest_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    io::write_text(out_ / "manifest.json", manifest_.dump(2) + "\n");
    return manifest_;
  }

 private:
  std::chrono::steady_clock::time_point t0_;
  fs::path out_;
  json manifest_;
};

inline std::string safe_name(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  return s;
}

inline json summary_json(const std::vector<ParamSummary>& s) {
  json j = json::object();
  for (const auto& r : s) j[r.name] = {{"median", r.median}, {"sd", r.sd}, {"q05", r.q05}, {"q95", r.q95}, {"mean", r.mean}};
  return j;
}

inline json chain_info(const McmcChain& c) {
  json blocks = json::array();
  for (std::size_t b = 0; b < c.blocks.size(); ++b)
    blocks.push_back({{"block", c.block_label(b)}, {"acceptance", c.acceptance_rate(b)}, {"scale", c.scales[b]}});
  return {{"iterations", c.iterations}, {"burn_in", c.burn_in}, {"thin", c.thin}, {"stored", c.draws.rows()},
          {"seed", c.seed},             {"seconds", c.seconds}, {"blocks", blocks}, {"diagnostics", c.diagnostics}};
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Simulates a portfolio from a parameter set: triangles.csv (observed cells),
/// full.csv (every cell), true_params.json and, for two or more lines,
/// shocks.csv with the common-shock draws.
inline json cmd_simulate(const json& cfg, const RunOptions& o) {
  detail::check_keys(cfg, {"schema_version", "params", "seed"}, "simulate config");
  detail::check_schema(cfg);
  if (!cfg.contains("params")) throw ConfigError("simulate: 'params' is required");
  const ShockModelParams m = detail::params_from(cfg.at("params"), o);
  m.validate();
  const std::uint64_t seed = detail::master_seed(cfg, o);
  detail::Run run("simulate", cfg, o, seed);
  Eigen::MatrixXd shocks;
  const TrianglePortfolio sim = simulate_portfolio(m, seed, &shocks);
  save_portfolio(sim, o.out / "triangles.csv");
  run.manifest()["outputs"].push_back("triangles.csv");
  std::string full = "line,accident,development,value,observed\n";
  for (const auto& t : sim)
    for (int i = 1; i <= t.accident_periods(); ++i)
      for (int j = 1; j <= t.development_periods(); ++j)
        full += t.line_id() + "," + std::to_string(i) + "," + std::to_string(j) + "," + io::format_number(t(i, j)) + "," +
                (t.is_observed(i, j) ? "1" : "0") + "\n";
  run.write("full.csv", full);
  run.write("true_params.json", to_json(m).dump(2) + "\n");
  if (m.lines() >= 2) {
    std::string s = "accident,development,shock\n";
    for (int i = 1; i <= m.accident_periods(); ++i)
      for (int j = 1; j <= m.development_periods(); ++j)
        s += std::to_string(i) + "," + std::to_string(j) + "," + io::format_number(shocks(i - 1, j - 1)) + "\n";
    run.write("shocks.csv", s);
  }
  return run.finish();
}

inline FitConfig fit_config_from_json(const json& cfg, const TrianglePortfolio& data, std::uint64_t seed, int threads) {
  FitConfig fc;
  fc.structure = parse_structure(detail::get<std::string>(cfg, "structure", "balanced"));
  McmcConfig s1;
  s1.seed = derive_seed(seed, "stage1");
  McmcConfig s2{3000, 1000, 1};
  s2.seed = derive_seed(seed, "stage2");
  try {
    fc.stage1 = cfg.contains("stage1") ? mcmc_from_json(cfg.at("stage1"), s1) : s1;
    fc.stage2 = cfg.contains("stage2") ? mcmc_from_json(cfg.at("stage2"), s2) : s2;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mcmc settings: ") + e.what());
  }
  fc.run_stage2 = detail::get<bool>(cfg, "run_stage2", true);
  fc.joint_block = detail::get<bool>(cfg, "joint_block", true);
  fc.initial_p = detail::get<double>(cfg, "initial_p", 1.5);
  fc.threads = threads;
  PriorSpec spec = default_priors(data);
  if (cfg.contains("priors")) {
    const json& pj = cfg.at("priors");
    detail::check_keys(pj, {"p", "xi", "delta", "eta", "nu", "gamma", "c", "overrides"}, "priors");
    try {
      for (const auto& [k, v] : pj.items()) {
        if (k == "overrides")
          for (const auto& [name, pv] : v.items()) spec.overrides[name] = prior_from_json(pv);
        else
          spec.groups[k] = prior_from_json(v);
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("priors: ") + e.what());
    }
  }
  fc.priors = spec;
  return fc;
}

/// Two-stage fit: stage1_chain.csv, stage2_chain.csv, summary.csv (parameter
/// medians, SDs and 90% intervals), medians.json and fit.json. Stage-1
/// outputs are written before stage 2 starts.
inline json cmd_fit(const json& cfg, const RunOptions& o) {
  detail::check_keys(cfg, {"schema_version", "data", "seed", "structure", "stage1", "stage2", "run_stage2", "joint_block",
                           "initial_p", "priors"},
                     "fit config");
  detail::check_schema(cfg);
  if (!cfg.contains("data")) throw ConfigError("fit: 'data' is required");
  const TrianglePortfolio raw = detail::load_data(cfg.at("data"), o);
  const TrianglePortfolio data = detail::modelling_data(raw, detail::get<bool>(cfg.at("data"), "standardize", false));
  const std::uint64_t seed = detail::master_seed(cfg, o);
  const FitConfig fc = fit_config_from_json(cfg, data, seed, o.threads);
  detail::Run run("fit", cfg, o, seed);

  FitResult f = fit_stage1(data, fc);
  run.write("stage1_chain.csv", chain_csv(f.stage1));
  run.write("summary.csv", summary_csv(f.summary));
  run.write("medians.json", to_json(f.medians).dump(2) + "\n");
  json info;
  info["structure"] = to_string(fc.structure);
  info["parameters"] = f.layout.names();
  json pri = json::object();
  for (std::size_t k = 0; k < f.layout.size(); ++k) pri[f.layout.names()[k]] = to_json(f.priors[k]);
  info["priors"] = pri;
  info["stage1"] = detail::chain_info(f.stage1);
  info["diagnostics"] = f.diagnostics;
  run.write("fit.json", info.dump(2) + "\n");
  run.manifest()["stage1"] = detail::chain_info(f.stage1);

  if (fc.run_stage2) {
    try {
      fit_stage2(f, data, fc);
    } catch (const Error& e) {
      run.manifest()["error"] = e.what();
      run.finish("stage2_failed");
      throw;
    }
    run.write("stage2_chain.csv", chain_csv(*f.stage2, {{"beta", f.stage2_beta}}));
    run.write("summary.csv", summary_csv(f.summary));
    run.write("medians.json", to_json(f.medians).dump(2) + "\n");
    info["prior_c"] = to_json(f.spec.lookup("c", "c"));
    info["stage2"] = detail::chain_info(*f.stage2);
    info["stage2_nonconverged_cells"] = f.stage2_nonconverged;
    info["diagnostics"] = f.diagnostics;
    run.write("fit.json", info.dump(2) + "\n");
    run.manifest()["stage2"] = detail::chain_info(*f.stage2);
  }
  run.manifest()["summary"] = detail::summary_json(f.summary);
  run.manifest()["diagnostics"] = f.diagnostics;
  // outputs may have been rewritten; keep the list unique
  auto& outs = run.manifest()["outputs"];
  std::vector<std::string> names = outs.get<std::vector<std::string>>();
  std::vector<std::string> uniq;
  for (const auto& n : names)
    if (std::find(uniq.begin(), uniq.end(), n) == uniq.end()) uniq.push_back(n);
  outs = uniq;
  return run.finish();
}

/// Reserve distribution from a fit directory (posterior draws) or a fixed
/// parameter set: reserve_samples.csv, summary.csv, risk_margins.csv,
/// risk.json, density_*.csv (KDE), rank_scatter.csv and dependence.json.
inline json cmd_forecast(const json& cfg, const RunOptions& o) {
  detail::check_keys(cfg, {"schema_version", "data", "seed", "fit_dir", "params", "replicates_per_draw", "max_draws", "kde_points"},
                     "forecast config");
  detail::check_schema(cfg);
  if (!cfg.contains("data")) throw ConfigError("forecast: 'data' is required");
  if (cfg.contains("fit_dir") == cfg.contains("params")) throw ConfigError("forecast: give exactly one of 'fit_dir' or 'params'");
  const bool standardized = detail::get<bool>(cfg.at("data"), "standardize", false);
  const TrianglePortfolio raw = detail::load_data(cfg.at("data"), o);
  const TrianglePortfolio data = detail::modelling_data(raw, standardized);
  const TrianglePortfolio scale = standardized ? raw : data;
  const std::uint64_t seed = detail::master_seed(cfg, o);
  const int reps = detail::get<int>(cfg, "replicates_per_draw", 1);
  const auto max_draws = detail::get<std::size_t>(cfg, "max_draws", 0);
  const int kde_points = detail::get<int>(cfg, "kde_points", 512);

  std::vector<ShockModelParams> draws;
  if (cfg.contains("params")) {
    draws.push_back(detail::params_from(cfg.at("params"), o));
    draws.back().validate();
  } else {
    const fs::path dir = detail::resolve(o, cfg.at("fit_dir").get<std::string>());
    const json info = load_config(dir / "fit.json");
    const Stage1Layout L(data, parse_structure(info.at("structure").get<std::string>()));
    const ChainTable s1 = read_chain_csv(dir / "stage1_chain.csv");
    std::vector<double> cs;
    if (fs::exists(dir / "stage2_chain.csv")) cs = read_chain_csv(dir / "stage2_chain.csv").column("c");
    draws = params_from_draws(L, align_draws(L, s1), cs, max_draws);
  }

  detail::Run run("forecast", cfg, o, seed);
  const ReserveDistribution dist = predict_lower(draws, scale, derive_seed(seed, "forecast"), reps, o.threads);
  const auto st = summary_stats(dist);
  run.write("reserve_samples.csv", reserve_samples_csv(dist));
  run.write("summary.csv", summary_stats_csv(st));
  json risk = json::object();
  if (dist.lines.size() >= 1) {
    bool positive = true;
    for (std::size_t n = 0; n + 1 < st.size(); ++n)
      for (double level : {0.75, 0.95}) positive = positive && risk_margin(st[n], level) > 0.0;
    if (positive) {
      const auto rows = risk_table(st);
      run.write("risk_margins.csv", risk_table_csv(st, rows));
      risk = risk_json(st, rows);
    } else {
      for (const auto& r : st) risk["summary"][r.label] = {{"mean", r.mean}, {"sd", r.sd}, {"var75", r.var75}, {"var95", r.var95}};
      risk["note"] = "risk margins skipped: a line has a zero margin";
    }
  }
  run.write("risk.json", risk.dump(2) + "\n");
  for (std::size_t n = 0; n < dist.lines.size(); ++n)
    if (st[n].sd > 0.0) run.write("density_" + detail::safe_name(dist.line_ids[n]) + ".csv", pairs_csv("x", "density", kernel_density(dist.lines[n], kde_points)));
  if (st.back().sd > 0.0) run.write("density_total.csv", pairs_csv("x", "density", kernel_density(dist.aggregate, kde_points)));
  if (dist.lines.size() >= 2 && st[0].sd > 0.0 && st[1].sd > 0.0) {
    const auto dep = reserve_dependence(dist);
    run.write("rank_scatter.csv", pairs_csv("u1", "u2", dep.ranks));
    json d;
    for (Eigen::Index a = 0; a < dep.pearson.rows(); ++a)
      for (Eigen::Index b = a + 1; b < dep.pearson.cols(); ++b)
        d["pearson"].push_back({{"lines", {dist.line_ids[static_cast<std::size_t>(a)], dist.line_ids[static_cast<std::size_t>(b)]}},
                                {"coefficient", dep.pearson(a, b)}});
    run.write("dependence.json", d.dump(2) + "\n");
    run.manifest()["reserve_correlation"] = dep.pearson(0, 1);
  }
  run.manifest()["draws"] = draws.size();
  run.manifest()["samples"] = dist.size();
  return run.finish();
}

/// Preliminary and post-fit diagnostics. Always: GLM fits with and without a
/// calendar effect, residual correlation tables and observed/fitted ratio
/// grids. With "params": quantile and raw residuals, QQ pairs and empirical
/// bivariate marginals of data and a back-fitted replicate. With "truth"
/// and "params": estimated/true correlation ratios. With "compare": fitted /
/// true shock-proportion grids for both frameworks.
inline json cmd_diagnose(const json& cfg, const RunOptions& o) {
  detail::check_keys(cfg, {"schema_version", "data", "seed", "glm_power", "params", "truth", "compare"}, "diagnose config");
  detail::check_schema(cfg);
  if (!cfg.contains("data")) throw ConfigError("diagnose: 'data' is required");
  const bool standardized = detail::get<bool>(cfg.at("data"), "standardize", false);
  const TrianglePortfolio raw = detail::load_data(cfg.at("data"), o);
  const TrianglePortfolio data = detail::modelling_data(raw, standardized);
  const std::uint64_t seed = detail::master_seed(cfg, o);
  const double glm_p = detail::get<double>(cfg, "glm_power", 1.1);
  detail::Run run("diagnose", cfg, o, seed);

  // Development factors on premium-standardized data when exposure is known.
  {
    std::string s = "line";
    for (int j = 1; j < data.development_periods(); ++j) s += ",f" + std::to_string(j);
    s += "\n";
    for (const auto& t : data) {
      const auto f = age_to_age_factors(t);
      s += t.line_id();
      for (double v : f) s += "," + io::format_fixed(v, 4);
      s += "\n";
    }
    run.write("age_to_age.csv", s);
  }

  json corr = json::object();
  for (const bool calendar : {false, true}) {
    std::vector<GlmFit> fits;
    for (const auto& t : data) {
      GlmOptions go;
      go.p = glm_p;
      go.calendar = calendar;
      if (const auto b = xi_bound(t)) go.translation = *b;
      fits.push_back(fit_tweedie_glm(t, go));
    }
    const std::string tag = calendar ? "_calendar" : "";
    for (std::size_t n = 0; n < fits.size(); ++n) {
      const auto g = residual_ratio_heatmap(fits[n], data[n]);
      const std::string stem = "ratio_" + detail::safe_name(data[n].line_id()) + tag;
      run.write(stem + ".csv", grid_csv(g));
      run.write(stem + ".svg", heatmap_svg(g, "observed / fitted: " + data[n].line_id() + (calendar ? " (calendar effect)" : "")));
      run.write("pearson_" + detail::safe_name(data[n].line_id()) + tag + ".csv", grid_csv(fits[n].pearson));
    }
    if (fits.size() >= 2) {
      json c;
      c["glm_power"] = glm_p;
      c["dispersion"] = json::array();
      for (const auto& f : fits) c["dispersion"].push_back(f.dispersion);
      c["rank_deficient"] = fits.back().rank_deficient;
      c["lines_1_2"] = to_json(residual_correlations(fits[0], fits[1]));
      corr[calendar ? "with_calendar" : "without_calendar"] = c;
    }
  }
  if (!corr.empty()) run.write("glm_correlations.json", corr.dump(2) + "\n");

  if (cfg.contains("params")) {
    const ShockModelParams m = detail::params_from(cfg.at("params"), o);
    m.validate();
    const auto qq = qq_residuals(m, data, derive_seed(seed, "qq"));
    run.write("qq.csv", qq_csv(qq));
    json g;
    for (const auto& q : qq) {
      const auto ks = stats::ks_test(q.u, [](double u) { return std::clamp(u, 0.0, 1.0); });
      g[q.line_id] = {{"ks_statistic", ks.statistic}, {"ks_p_value", ks.p_value}, {"degenerate", q.degenerate}};
    }
    const auto raw_res = raw_residuals(m, data);
    for (std::size_t n = 0; n < data.size(); ++n)
      run.write("raw_residuals_" + detail::safe_name(data[n].line_id()) + ".csv", grid_csv(raw_res[n]));
    if (data.size() >= 2) {
      g["raw_residual_correlation"] = to_json(residual_correlations(raw_res[0], raw_res[1]));
      Eigen::MatrixXd q0 = Eigen::MatrixXd::Constant(data.accident_periods(), data.development_periods(), std::nan(""));
      Eigen::MatrixXd q1 = q0;
      const auto cells = data[0].observed_cells();
      for (std::size_t k = 0; k < cells.size(); ++k) {
        q0(cells[k].i - 1, cells[k].j - 1) = qq[0].residuals[k];
        q1(cells[k].i - 1, cells[k].j - 1) = qq[1].residuals[k];
      }
      g["quantile_residual_correlation"] = to_json(residual_correlations(q0, q1));
      run.write("bivariate_observed.csv", pairs_csv("u1", "u2", empirical_bivariate_marginals(data)));
      run.write("bivariate_backfit.csv",
                pairs_csv("u1", "u2", empirical_bivariate_marginals(backfit_replicate(m, data, derive_seed(seed, "backfit")))));
    }
    run.write("goodness_of_fit.json", g.dump(2) + "\n");
    if (cfg.contains("truth") && data.size() >= 2) {
      const ShockModelParams truth = detail::params_from(cfg.at("truth"), o);
      const auto r = correlation_ratio_grid(m, truth, data[0]);
      run.write("correlation_ratios.csv", grid_csv(r));
      run.write("correlation_ratios.svg", heatmap_svg(r, "estimated / true correlation", 0.25));
    }
  } else if (cfg.contains("truth")) {
    throw ConfigError("diagnose: 'truth' needs 'params'");
  }

  if (cfg.contains("compare")) {
    const json& c = cfg.at("compare");
    detail::check_keys(c, {"truth", "balanced", "original"}, "compare");
    const auto cmp = shock_proportion_comparison(detail::params_from(c.at("truth"), o), detail::params_from(c.at("balanced"), o),
                                                 detail::params_from(c.at("original"), o));
    for (std::size_t n = 0; n < cmp.balanced.size(); ++n) {
      const std::string id = std::to_string(n + 1);
      run.write("proportion_ratio_balanced_" + id + ".csv", grid_csv(cmp.balanced[n]));
      run.write("proportion_ratio_original_" + id + ".csv", grid_csv(cmp.original[n]));
      run.write("proportion_ratio_balanced_" + id + ".svg", heatmap_svg(cmp.balanced[n], "balanced: fitted / true shock proportion"));
      run.write("proportion_ratio_original_" + id + ".svg", heatmap_svg(cmp.original[n], "original: fitted / true shock proportion"));
    }
    run.write("proportion_summary.json", json{{"balanced_mean_abs_log_ratio", cmp.balanced_mean_abs_log},
                                              {"original_mean_abs_log_ratio", cmp.original_mean_abs_log}}
                                                 .dump(2) + "\n");
  }
  return run.finish();
}

/// Log-density and CDF of Tw_p(mu, phi) at each y, as CSV.
inline std::string cmd_tweedie_eval(double p, double mu, double phi, const std::vector<double>& ys) {
  const tweedie::Params prm{p, mu, phi};
  tweedie::validate(prm);
  const tweedie::Density d(prm);
  std::string out = "y,log_density,cdf\n";
  for (double y : ys) out += io::format_number(y) + "," + io::format_number(d.log_pdf(y)) + "," + io::format_number(d.cdf(y)) + "\n";
  return out;
}

}  // namespace shockres::cli
