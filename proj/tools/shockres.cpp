#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "shockres/cli.hpp"

namespace sc = shockres::cli;

int main(int argc, char** argv) {
  CLI::App app{"Dependent loss reserving with a common-shock Tweedie model"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* simulate = app.add_subcommand("simulate", "simulate a triangle portfolio from known parameters");
  auto* fit = app.add_subcommand("fit", "two-stage Bayesian fit");
  auto* forecast = app.add_subcommand("forecast", "predictive reserve distribution and risk margins");
  auto* diagnose = app.add_subcommand("diagnose", "GLM residual correlations and goodness-of-fit outputs");
  for (auto* s : {simulate, fit, forecast, diagnose}) add_common(s);

  auto* tw = app.add_subcommand("tweedie", "Tweedie distribution utilities");
  tw->require_subcommand(1);
  auto* eval = tw->add_subcommand("eval", "log-density and CDF at the given points");
  double p = 1.5, mu = 1.0, phi = 1.0;
  std::vector<double> ys;
  eval->add_option("--p", p, "power parameter")->required();
  eval->add_option("--mu", mu, "mean")->required();
  eval->add_option("--phi", phi, "dispersion")->required();
  eval->add_option("--y", ys, "evaluation points")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed()) {
      std::cout << sc::cmd_tweedie_eval(p, mu, phi, ys);
      return 0;
    }
    sc::RunOptions o;
    o.config_dir = std::filesystem::absolute(config_path).parent_path();
    o.out = out;
    o.seed = seed;
    o.threads = threads;
    const auto cfg = sc::load_config(config_path);
    nlohmann::json manifest;
    if (simulate->parsed()) manifest = sc::cmd_simulate(cfg, o);
    else if (fit->parsed()) manifest = sc::cmd_fit(cfg, o);
    else if (forecast->parsed()) manifest = sc::cmd_forecast(cfg, o);
    else manifest = sc::cmd_diagnose(cfg, o);
    std::cout << "wrote " << manifest["outputs"].size() << " files to " << out << " in "
              << shockres::io::format_fixed(manifest["wall_seconds"].get<double>(), 1) << " s\n";
    return 0;
  } catch (const shockres::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
