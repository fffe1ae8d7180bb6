#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "shockres/forecast.hpp"

using namespace shockres;
using Catch::Approx;

namespace {

ShockModelParams small_params(double p = 1.5, double c = 0.7, double beta = 0.6) {
  ShockModelParams m;
  m.p = p;
  m.c = c;
  m.beta = beta;
  m.eta = {Eigen::Vector3d(1.0, 1.2, 0.9), Eigen::Vector3d(1.0, 0.8, 1.1)};
  m.nu = {Eigen::Vector3d(5.0, 2.0, 0.5), Eigen::Vector3d(1.0, 3.0, 2.0)};
  m.gamma = Eigen::Vector2d(0.5, 0.3);
  m.xi = Eigen::Vector2d(0.2, 0.0);
  return m;
}

TrianglePortfolio small_data(const ShockModelParams& m) { return simulate_portfolio(m, 4); }

SummaryStats stats_of(const std::string& label, double mean, double sd, double v75, double v95) {
  SummaryStats s;
  s.label = label;
  s.mean = mean;
  s.sd = sd;
  s.var75 = v75;
  s.var95 = v95;
  return s;
}

// published reserve summary of the two-line portfolio
std::vector<SummaryStats> published_stats() {
  return {stats_of("bodily_injury", 165185.92, 22720.88, 179057.18, 205752.20),
          stats_of("accident_benefits", 108465.81, 18554.65, 120100.43, 141426.24),
          stats_of("total", 273651.73, 30538.83, 293061.56, 326177.22)};
}

}  // namespace

TEST_CASE("risk margins and diversification from published statistics", "[forecast]") {
  const auto rows = risk_table(published_stats());
  REQUIRE(rows.size() == 2u);
  // inputs are rounded to cents, so differences carry one cent of slack
  CHECK(rows[0].line_margins[0] == Approx(13871.26).margin(0.011));
  CHECK(rows[0].line_margins[1] == Approx(11634.61).margin(0.011));
  CHECK(rows[0].aggregate_margin == Approx(19409.83).margin(0.011));
  CHECK(rows[0].benefit == Approx(23.9).margin(0.05));
  CHECK(rows[1].line_margins[0] == Approx(40566.28).margin(0.011));
  CHECK(rows[1].line_margins[1] == Approx(32960.43).margin(0.011));
  CHECK(rows[1].aggregate_margin == Approx(52525.49).margin(0.011));
  CHECK(rows[1].benefit == Approx(28.6).margin(0.05));
}

TEST_CASE("risk margin floor and benefit errors", "[forecast]") {
  // VaR below mean + SD/2 falls back to half the SD
  CHECK(risk_margin(stats_of("x", 100.0, 40.0, 110.0, 150.0), 0.75) == 20.0);
  CHECK(risk_margin(stats_of("x", 100.0, 40.0, 110.0, 150.0), 0.95) == 50.0);
  CHECK_THROWS_AS(stats_of("x", 1, 1, 1, 1).value_at_risk(0.9), ConfigError);
  CHECK_THROWS_AS(diversification_benefit({0.0, 0.0}, 0.0), NumericError);
  CHECK_THROWS_AS(diversification_benefit({1.0, -1.0}, 0.5), NumericError);
  CHECK(diversification_benefit({10.0, 10.0}, 20.0) == 0.0);
  CHECK(diversification_benefit({10.0, 10.0}, 15.0) == 25.0);
}

TEST_CASE("summary statistics", "[forecast]") {
  std::vector<double> v;
  for (int k = 1; k <= 101; ++k) v.push_back(k);
  const auto s = summarize_samples("v", v);
  CHECK(s.mean == 51.0);
  CHECK(s.var75 == Approx(76.0));
  CHECK(s.var95 == Approx(96.0));
  CHECK(s.sd == Approx(std::sqrt(101.0 * 102.0 / 12.0)));
  CHECK_THROWS_AS(summarize_samples("e", {}), DataError);
}

TEST_CASE("simulated reserves match the analytic mean", "[forecast]") {
  const auto m = small_params();
  const auto data = small_data(m);
  const auto d = predict_lower({m}, data, 21, 200000);
  REQUIRE(d.size() == 200000u);
  const auto mean = expected_reserve(m, data);
  for (std::size_t n = 0; n < 2; ++n) {
    const double se = stats::sd(d.lines[n]) / std::sqrt(static_cast<double>(d.size()));
    INFO("line " << n);
    CHECK(std::abs(stats::mean(d.lines[n]) - mean[n]) <= 4.0 * se);
  }
  for (std::size_t s = 0; s < d.size(); s += 997) CHECK(d.aggregate[s] == Approx(d.lines[0][s] + d.lines[1][s]));
}

TEST_CASE("exposure scales each accident row", "[forecast]") {
  const auto m = small_params();
  TrianglePortfolio data = small_data(m);
  std::vector<LossTriangle> lines(data.begin(), data.end());
  for (auto& t : lines) t.set_exposure(Eigen::Vector3d(1.0, 2.0, 10.0));
  const TrianglePortfolio scaled(lines);
  const auto a = predict_lower({m}, data, 3, 50);
  const auto b = predict_lower({m}, scaled, 3, 50);
  const auto ea = expected_reserve(m, data), eb = expected_reserve(m, scaled);
  CHECK(eb[0] > ea[0]);
  // the only future cells are (2,3), (3,2), (3,3): rows 2 and 3
  double manual = 0.0;
  for (const Cell& c : data[0].future_cells()) {
    const CellCoordinates x{c.i, c.j, 0};
    manual += (c.i == 2 ? 2.0 : 10.0) * (marginal_params(m, x).mu - m.xi(0));
  }
  CHECK(eb[0] == Approx(manual));
  CHECK(a.lines[0] != b.lines[0]);
}

TEST_CASE("fully observed data has zero reserve", "[forecast]") {
  const auto m = small_params();
  ShockModelParams one = m;
  for (auto* v : {&one.eta[0], &one.eta[1], &one.nu[0], &one.nu[1]}) *v = v->head(1).eval();
  LossTriangle a("a", 1, 1), b("b", 1, 1);
  const TrianglePortfolio data({a, b});
  const auto d = predict_lower({one}, data, 1, 5);
  for (double v : d.aggregate) CHECK(v == 0.0);
  CHECK(expected_reserve(one, data) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("prediction is deterministic and thread independent", "[forecast]") {
  const auto m = small_params();
  const auto data = small_data(m);
  std::vector<ShockModelParams> draws(8, m);
  for (std::size_t k = 0; k < draws.size(); ++k) draws[k].c = 0.3 + 0.1 * static_cast<double>(k);
  const auto a = predict_lower(draws, data, 99, 3, 1);
  const auto b = predict_lower(draws, data, 99, 3, 4);
  CHECK(a.aggregate == b.aggregate);
  CHECK(a.draw == b.draw);
  CHECK(a.draw[5] == 1);
  CHECK(a.replicate[5] == 2);
  CHECK(predict_lower(draws, data, 100, 3).aggregate != a.aggregate);

  CHECK_THROWS_AS(predict_lower({}, data, 1), ConfigError);
  CHECK_THROWS_AS(predict_lower(draws, data, 1, 0), ConfigError);
  CHECK_THROWS_AS(predict_lower({small_params(2.5)}, data, 1), NumericError);
}

TEST_CASE("reserve dependence", "[forecast]") {
  // a dominant shock makes the line reserves strongly positively correlated
  const auto strong = small_params(1.5, 5.0, 0.05);
  const auto data = small_data(strong);
  const auto dep = reserve_dependence(predict_lower({strong}, data, 5, 20000));
  CHECK(dep.pearson(0, 1) > 0.5);
  CHECK(dep.pearson(0, 1) == dep.pearson(1, 0));
  REQUIRE(dep.ranks.size() == 20000u);
  for (const auto& [u, v] : dep.ranks) {
    CHECK(u > 0.0);
    CHECK(u <= 1.0);
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }

  // a vanishing shock leaves them close to independent
  const auto weak = small_params(1.5, 1e-4, 5.0);
  const auto dw = reserve_dependence(predict_lower({weak}, data, 5, 20000));
  CHECK(std::abs(dw.pearson(0, 1)) < 4.0 / std::sqrt(20000.0));

  ReserveDistribution flat;
  flat.line_ids = {"a", "b"};
  flat.lines = {{1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}};
  flat.aggregate = {2.0, 3.0, 4.0};
  CHECK_THROWS_AS(reserve_dependence(flat), NumericError);
}

TEST_CASE("kernel density integrates to one", "[forecast][property]") {
  Rng rng(8);
  std::gamma_distribution<double> g(3.0, 2.0);
  std::vector<double> v(5000);
  for (double& x : v) x = g(rng);
  const auto kde = kernel_density(v, 1024);
  REQUIRE(kde.size() == 1024u);
  double area = 0.0;
  for (std::size_t k = 1; k < kde.size(); ++k)
    area += 0.5 * (kde[k].second + kde[k - 1].second) * (kde[k].first - kde[k - 1].first);
  CHECK(area == Approx(1.0).margin(1e-3));
  for (const auto& pt : kde) CHECK(pt.second >= 0.0);
  CHECK_THROWS_AS(kernel_density({1.0}), DataError);
  CHECK_THROWS_AS(kernel_density(v, 1), ConfigError);
}

TEST_CASE("forecast outputs", "[forecast]") {
  const auto m = small_params();
  const auto d = predict_lower({m}, small_data(m), 2, 10);
  const std::string csv = reserve_samples_csv(d);
  CHECK(csv.rfind("draw,replicate", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
  const auto s = summary_stats(d);
  REQUIRE(s.size() == 3u);
  CHECK(s.back().label == "total");
  const auto j = risk_json(published_stats(), risk_table(published_stats()));
  CHECK(j["risk_margins"]["95"]["total"].get<double>() == Approx(52525.49));
  CHECK(summary_stats_csv(s).rfind("line,mean,sd,var75,var95", 0) == 0);
}
