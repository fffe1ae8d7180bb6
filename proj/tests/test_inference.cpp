#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "shockres/inference.hpp"

using namespace shockres;
using Catch::Approx;

namespace {

const std::filesystem::path kData = SHOCKRES_DATA_DIR;

TrianglePortfolio dataset1() {
  return TrianglePortfolio({load_triangle(kData / "dataset1_triangle1.csv"), load_triangle(kData / "dataset1_triangle2.csv")});
}

ShockModelParams small_truth() {
  ShockModelParams m;
  m.p = 1.4;
  m.c = 0.5;
  m.beta = 0.6;
  m.eta = {Eigen::VectorXd::Ones(5), Eigen::VectorXd::Ones(5)};
  m.eta[0] << 1.0, 1.1, 0.9, 1.2, 1.0;
  Eigen::VectorXd nu1(5), nu2(5);
  nu1 << 40, 20, 10, 5, 2;
  nu2 << 10, 20, 15, 8, 3;
  m.nu = {nu1, nu2};
  m.gamma = Eigen::Vector2d(0.5, 0.7);
  m.xi = Eigen::Vector2d::Zero();
  return m;
}

}  // namespace

TEST_CASE("transforms round trip with correct Jacobians", "[inference]") {
  for (const Transform& t : {Transform::identity(), Transform::log(), Transform::logit(1.0, 2.0), Transform::shifted_log(0.3)}) {
    for (double u : {-2.0, -0.1, 0.4, 1.7}) {
      const double x = t.to_constrained(u);
      CHECK(t.to_unconstrained(x) == Approx(u).margin(1e-9));
      const double h = 1e-6;
      const double num = (t.to_constrained(u + h) - t.to_constrained(u - h)) / (2.0 * h);
      CHECK(t.log_jacobian(u) == Approx(std::log(num)).margin(1e-6));
    }
  }
}

TEST_CASE("priors", "[inference]") {
  const Transform lg = Transform::log();
  CHECK(Prior::uniform(0.0, 4.0).log_density(1.0, lg) == Approx(-std::log(4.0)));
  CHECK(Prior::uniform(0.0, 4.0).log_density(5.0, lg) == -std::numeric_limits<double>::infinity());
  // log-uniform on [1, e^2]: density 1 / (2 x)
  CHECK(Prior::uniform_transformed(1.0, std::exp(2.0)).log_density(3.0, lg) == Approx(-std::log(6.0)));
  CHECK(Prior::lognormal(0.0, 1.0).log_density(1.0, lg) == Approx(-0.5 * std::log(2.0 * std::numbers::pi)));
  CHECK(Prior::fixed(2.0).is_fixed());
  CHECK_THROWS_AS(Prior::uniform(3.0, 1.0).validate("x"), ConfigError);
  CHECK_THROWS_AS(Prior::lognormal(0.0, -1.0).validate("x"), ConfigError);

  const auto j = to_json(Prior::uniform_transformed(0.1, 10.0));
  const Prior back = prior_from_json(j);
  CHECK(back.family == PriorFamily::uniform_transformed);
  CHECK(back.b == 10.0);
  CHECK(prior_from_json(nlohmann::json{{"family", "fixed"}, {"value", 0.3}}).is_fixed());
}

TEST_CASE("stage-1 layout", "[inference]") {
  const auto data = dataset1();
  const Stage1Layout L(data, ShockStructure::balanced);
  const bool neg = xi_bound(data[0]).has_value();
  CHECK(L.size() == (neg ? 43u : 42u));
  CHECK(L.names()[L.delta()] == "delta");
  CHECK(L.names()[L.eta(1, 2)] == "eta[2][2]");
  CHECK(L.names()[L.nu(0, 10)] == "nu[1][10]");
  CHECK(L.names()[L.gamma(1)] == "gamma[2]");
  CHECK(L.xi(1) == Stage1Layout::npos);

  auto truth = load_params(kData / "dataset1_true.json");
  if (neg) truth.xi(0) = std::max(truth.xi(0), *xi_bound(data[0]) * 1.5);
  const auto x = L.from_params(truth);
  const auto back = L.to_params(x, truth.c);
  CHECK(back.beta == Approx(truth.beta));
  CHECK(back.nu[1].isApprox(truth.nu[1]));
  CHECK(back.eta[0].isApprox(truth.eta[0]));
}

TEST_CASE("prior resolution guards the support", "[inference]") {
  const auto data = dataset1();
  const Stage1Layout L(data, ShockStructure::balanced);
  PriorSpec s = default_priors(data);
  CHECK(L.resolve(s).size() == L.size());
  auto bad = s;
  bad.groups["p"] = Prior::uniform(0.5, 2.0);
  CHECK_THROWS_AS(L.resolve(bad), ConfigError);
  if (const auto b = xi_bound(data[0])) {
    bad = s;
    bad.overrides["xi[1]"] = Prior::uniform(0.0, 1.0);
    CHECK_THROWS_AS(L.resolve(bad), ConfigError);
  }
  bad = s;
  bad.groups.erase("nu");
  CHECK_THROWS_AS(L.resolve(bad), ConfigError);
}

TEST_CASE("stage-1 likelihood is the sum of cell marginals", "[inference]") {
  const auto truth = small_truth();
  const auto data = simulate_portfolio(truth, 3);
  for (ShockStructure st : {ShockStructure::balanced, ShockStructure::original}) {
    auto m = truth;
    m.structure = st;
    const Stage1Layout L(data, st);
    double oracle = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (const Cell& c : data[n].observed_cells())
        oracle += tweedie::log_density(marginal_params(m, {c.i, c.j, n}), data[n](c.i, c.j));
    CHECK(stage1_log_likelihood(L, L.from_params(m), data) == Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("stage-2 likelihood is the sum of joint cell densities", "[inference]") {
  const auto truth = small_truth();
  const auto data = simulate_portfolio(truth, 4);
  double oracle = 0.0;
  for (const Cell& c : data[0].observed_cells())
    oracle += multivariate_log_density(truth, c.i, c.j, {data[0](c.i, c.j), data[1](c.i, c.j)}).log_value;
  const auto e = stage2_log_likelihood(truth, data, 2);
  CHECK(e.log_likelihood == Approx(oracle).epsilon(1e-12));
  CHECK(e.cells == 15);
  // c moves the joint but not the marginal likelihood when delta is held
  const Prior flat = Prior::uniform_transformed(0.01, 100.0);
  const double a = stage2_log_posterior(0.3, truth, data, flat);
  const double b = stage2_log_posterior(3.0, truth, data, flat);
  CHECK(std::isfinite(a));
  CHECK(std::isfinite(b));
  CHECK(stage2_log_posterior(-1.0, truth, data, flat) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("adaptive Metropolis-Hastings recovers a known posterior", "[inference]") {
  // independent N(1, 0.5^2) on log a and N(-1, 0.2^2) on b
  MhProblem prob;
  prob.names = {"a", "b"};
  prob.transforms = {Transform::log(), Transform::identity()};
  prob.blocks = {{0}, {1}, {0, 1}};
  prob.log_posterior = [](const std::vector<double>& x) {
    if (!(x[0] > 0.0)) return -std::numeric_limits<double>::infinity();
    const double u = std::log(x[0]);
    // density of a on the original scale includes 1/a
    return -0.5 * std::pow((u - 1.0) / 0.5, 2) - u - 0.5 * std::pow((x[1] + 1.0) / 0.2, 2);
  };
  McmcConfig cfg;
  cfg.iterations = 30000;
  cfg.burn_in = 5000;
  cfg.seed = 9;
  const auto chain = run_mh(prob, {1.0, 0.0}, cfg);
  REQUIRE(chain.draws.rows() == 25000);
  std::vector<double> la = chain.column("a");
  for (double& v : la) v = std::log(v);
  CHECK(stats::mean(la) == Approx(1.0).margin(0.05));
  CHECK(stats::sd(la) == Approx(0.5).margin(0.04));
  CHECK(stats::mean(chain.column("b")) == Approx(-1.0).margin(0.02));
  CHECK(chain.acceptance_rate(0) == Approx(0.44).margin(0.1));
  CHECK(chain.acceptance_rate(2) == Approx(0.234).margin(0.1));

  const auto again = run_mh(prob, {1.0, 0.0}, cfg);
  CHECK(again.draws == chain.draws);

  cfg.thin = 5;
  CHECK(run_mh(prob, {1.0, 0.0}, cfg).draws.rows() == 5000);

  CHECK_THROWS_AS(run_mh(prob, {-1.0, 0.0}, cfg), NumericError);
  cfg.burn_in = cfg.iterations;
  CHECK_THROWS_AS(run_mh(prob, {1.0, 0.0}, cfg), ConfigError);
}

TEST_CASE("stuck chains are reported", "[inference]") {
  MhProblem prob;
  prob.names = {"a"};
  prob.transforms = {Transform::identity()};
  prob.blocks = {{0}};
  // a needle: any move away from the start is rejected
  prob.log_posterior = [](const std::vector<double>& x) { return x[0] == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity(); };
  McmcConfig cfg;
  cfg.iterations = 3000;
  cfg.burn_in = 1000;
  cfg.stuck_window = 500;
  const auto chain = run_mh(prob, {0.0}, cfg);
  CHECK_FALSE(chain.diagnostics.empty());
  cfg.fail_on_stuck = true;
  CHECK_THROWS_AS(run_mh(prob, {0.0}, cfg), ConvergenceError);
}

TEST_CASE("two-stage fit on a small simulated portfolio", "[inference]") {
  const auto truth = small_truth();
  const auto data = simulate_portfolio(truth, 77);
  FitConfig cfg;
  cfg.stage1.iterations = 4000;
  cfg.stage1.burn_in = 2000;
  cfg.stage1.seed = 5;
  cfg.stage2 = {300, 100, 1};
  cfg.stage2.seed = 6;
  const FitResult f = fit(data, cfg);
  REQUIRE(f.stage2);
  CHECK(f.stage1.draws.rows() == 2000);
  CHECK(f.stage2->draws.rows() == 200);
  CHECK(f.summary.size() == f.layout.size() + 2);
  const auto& p = find_summary(f.summary, "p");
  CHECK(p.q05 <= p.median);
  CHECK(p.median <= p.q95);
  CHECK(p.median > 1.0);
  CHECK(p.median < 2.0);
  // beta draws are c^(2-p) / delta at the stage-1 medians
  const double delta = find_summary(f.summary, "delta").median;
  const auto cs = f.stage2->column("c");
  for (std::size_t k = 0; k < cs.size(); k += 37)
    CHECK(f.stage2_beta[k] == Approx(std::pow(cs[k], 2.0 - f.medians.p) / delta));
  for (const auto& s : f.summary) CHECK(std::isfinite(s.median));

  // same seeds, same chains
  const FitResult g = fit_stage1(data, cfg);
  CHECK(g.stage1.draws == f.stage1.draws);

  // posterior draws carry the stage-2 c
  const auto draws = posterior_params(f, 50);
  CHECK(draws.size() == 50u);
  for (const auto& m : draws) CHECK_NOTHROW(m.validate());
}

TEST_CASE("a point-mass prior pins the parameter", "[inference]") {
  const auto data = simulate_portfolio(small_truth(), 78);
  FitConfig cfg;
  cfg.stage1.iterations = 1000;
  cfg.stage1.burn_in = 500;
  cfg.run_stage2 = false;
  cfg.prior_overrides["gamma[1]"] = Prior::fixed(0.37);
  const FitResult f = fit(data, cfg);
  CHECK(find_summary(f.summary, "gamma[1]").median == 0.37);
  CHECK(f.medians.gamma(0) == 0.37);
  CHECK(find_summary(f.summary, "gamma[2]").q05 < find_summary(f.summary, "gamma[2]").q95);
}

TEST_CASE("chain CSV round trip", "[inference]") {
  const auto truth = small_truth();
  const auto data = simulate_portfolio(truth, 78);
  FitConfig cfg;
  cfg.stage1.iterations = 600;
  cfg.stage1.burn_in = 300;
  cfg.run_stage2 = false;
  const FitResult f = fit(data, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "shockres_chain";
  std::filesystem::create_directories(dir);
  io::write_text(dir / "chain.csv", chain_csv(f.stage1));
  const ChainTable t = read_chain_csv(dir / "chain.csv");
  const Eigen::MatrixXd d = align_draws(f.layout, t);
  REQUIRE(d.rows() == f.stage1.draws.rows());
  CHECK(d.isApprox(f.stage1.draws, 1e-12));
  const auto ms = params_from_draws(f.layout, d, {}, 0);
  CHECK(ms.size() == static_cast<std::size_t>(d.rows()));
}

TEST_CASE("default priors follow the data", "[inference]") {
  const auto data = dataset1();
  const PriorSpec s = default_priors(data);
  CHECK(s.groups.at("p").a == 1.0);
  CHECK(s.groups.at("p").b == 2.0);
  if (const auto b = xi_bound(data[0])) {
    const Prior& x = s.lookup("xi[1]", "xi");
    CHECK(x.a == Approx(*b));
    CHECK(x.b == Approx(2.0 * *b));
  }
  CHECK(s.lookup("xi[2]", "xi").is_fixed());
}
