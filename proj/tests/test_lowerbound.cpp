#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "distdpo/kernels.hpp"
#include "distdpo/lowerbound.hpp"

using namespace distdpo;

TEST_CASE("instance validation enforces the paired-group shape") {
  QuadraticInstance inst;
  CHECK_NOTHROW(inst.validate());
  inst.num_clients = 7;
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst.num_clients = 0;
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst = QuadraticInstance{};
  inst.alpha = 0.0;
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst = QuadraticInstance{};
  inst.noise_std = -0.5;
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
}

TEST_CASE("clients split into two equal opposing groups") {
  QuadraticInstance inst;
  inst.num_clients = 8;
  for (int c = 0; c < 4; ++c) CHECK(client_group(inst, c) == QuadGroup::a);
  for (int c = 4; c < 8; ++c) CHECK(client_group(inst, c) == QuadGroup::b);
  CHECK_THROWS_AS(client_group(inst, -1), std::invalid_argument);
  CHECK_THROWS_AS(client_group(inst, 8), std::invalid_argument);
}

TEST_CASE("noiseless gradients point at the group optima") {
  QuadraticInstance inst;
  inst.alpha = 1.5;
  RngStream rng(1);
  std::vector<double> at_a{1.5, 0.0};
  auto g = quad_gradient(inst, QuadGroup::a, at_a, rng);
  CHECK(g == std::vector<double>{0.0, 0.0});
  std::vector<double> origin{0.0, 0.0};
  CHECK(quad_gradient(inst, QuadGroup::a, origin, rng) == std::vector<double>{-1.5, 0.0});
  CHECK(quad_gradient(inst, QuadGroup::b, origin, rng) == std::vector<double>{1.5, 0.0});
  std::vector<double> bad{1.0};
  CHECK_THROWS_AS(quad_gradient(inst, QuadGroup::a, bad, rng), std::invalid_argument);
}

TEST_CASE("gradient noise is centered with the configured spread") {
  QuadraticInstance inst;
  inst.noise_std = 0.3;
  RngStream rng(2);
  std::vector<double> at{0.4, -0.2};
  const int n = 100000;
  double mean0 = 0.0, mean1 = 0.0, m2_0 = 0.0;
  for (int i = 0; i < n; ++i) {
    auto g = quad_gradient(inst, QuadGroup::a, at, rng);
    mean0 += g[0];
    mean1 += g[1];
    double centered = g[0] - (at[0] - inst.alpha);
    m2_0 += centered * centered;
  }
  mean0 /= n;
  mean1 /= n;
  const double se = inst.noise_std / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(mean0 - (at[0] - inst.alpha)) < 4.0 * se);
  CHECK(std::fabs(mean1 - at[1]) < 4.0 * se);
  CHECK(m2_0 / n == doctest::Approx(0.09).epsilon(0.05));
}

TEST_CASE("the assembled environment exposes the analytic objective") {
  QuadraticInstance inst;
  inst.num_clients = 6;
  inst.alpha = 0.8;
  GradientEnv env = make_quadratic_env(inst);
  CHECK(env.dim == 2);
  CHECK(env.num_clients == 6);
  CHECK(env.data_sizes == std::vector<int>(6, 1));

  std::vector<double> at{0.3, -1.2};
  CHECK(env.global_gradient(at) == std::vector<double>{0.3, -1.2});
  CHECK(env.global_loss(at) ==
        doctest::Approx(0.5 * (0.09 + 1.44) + 0.5 * 0.64).epsilon(1e-14));

  // Noiseless minibatch gradients average (over one client per group) to the
  // global gradient at any theta.
  RngStream rng(3);
  auto ga = env.minibatch_gradient(0, at, rng);
  auto gb = env.minibatch_gradient(5, at, rng);
  CHECK(0.5 * (ga[0] + gb[0]) == doctest::Approx(at[0]).epsilon(1e-14));
  CHECK(0.5 * (ga[1] + gb[1]) == doctest::Approx(at[1]).epsilon(1e-14));

  // Heterogeneity at the global optimum equals alpha^2: each group gradient
  // has norm alpha there while the mean vanishes.
  std::vector<double> opt{0.0, 0.0};
  auto g0 = env.minibatch_gradient(0, opt, rng);
  CHECK(kernels::sum_sq(g0) == doctest::Approx(inst.alpha * inst.alpha).epsilon(1e-14));
}

TEST_CASE("step rule shrinks inversely with the local step count") {
  EtaRule rule;
  rule.numerator = 0.4;
  CHECK(rule.eta(1) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(rule.eta(4) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_AS(rule.eta(0), std::invalid_argument);
  EtaRule bad;
  bad.numerator = 0.0;
  CHECK_THROWS_AS(bad.eta(2), std::invalid_argument);
}

TEST_CASE("full participation without noise converges geometrically") {
  QuadraticInstance inst;
  inst.num_clients = 8;
  inst.alpha = 1.0;
  inst.noise_std = 0.0;
  std::vector<int> e_grid{1};
  std::vector<int> s_grid{8};
  std::vector<std::uint64_t> seeds{42};
  EtaRule rule;
  rule.numerator = 0.5;
  LowerboundSweep sweep = run_lowerbound_sweep(inst, e_grid, s_grid, rule, 200, seeds);
  REQUIRE(sweep.cells.size() == 1);
  // E = 1, S = N, no noise: theta contracts by (1 - eta) per round toward the
  // origin, so the tail gradient norm is numerically zero.
  CHECK(sweep.cells[0].final_gap < 1e-12);
}

TEST_CASE("sweeps enumerate the grid and keep medians consistent") {
  QuadraticInstance inst;
  inst.num_clients = 4;
  inst.alpha = 1.0;
  inst.noise_std = 0.4;
  std::vector<int> e_grid{1, 4};
  std::vector<int> s_grid{2, 4};
  std::vector<std::uint64_t> seeds{7, 8, 9};
  EtaRule rule;
  LowerboundSweep sweep = run_lowerbound_sweep(inst, e_grid, s_grid, rule, 60, seeds);

  REQUIRE(sweep.cells.size() == 12);
  REQUIRE(sweep.median_gap.size() == 4);
  for (std::size_t e = 0; e < e_grid.size(); ++e)
    for (std::size_t s = 0; s < s_grid.size(); ++s) {
      std::vector<double> gaps;
      for (std::size_t k = 0; k < seeds.size(); ++k) {
        const LowerboundCell& cell = sweep.cells[(e * s_grid.size() + s) * seeds.size() + k];
        CHECK(cell.local_steps == e_grid[e]);
        CHECK(cell.participation == s_grid[s]);
        CHECK(cell.seed == seeds[k]);
        CHECK(cell.final_gap > 0.0);
        gaps.push_back(cell.final_gap);
      }
      std::sort(gaps.begin(), gaps.end());
      CHECK(sweep.median_gap[e * s_grid.size() + s] == doctest::Approx(gaps[1]).epsilon(1e-15));
    }

  nlohmann::json doc = sweep.to_json();
  CHECK(doc.at("cells").size() == 12);
  CHECK(doc.at("log_slope").is_number());

  // Identical inputs reproduce identical outputs, including across workers.
  LowerboundSweep again = run_lowerbound_sweep(inst, e_grid, s_grid, rule, 60, seeds, 4);
  CHECK(lowerbound_csv(again) == lowerbound_csv(sweep));
}

TEST_CASE("csv output carries the full grid with a fixed header") {
  QuadraticInstance inst;
  inst.num_clients = 4;
  inst.noise_std = 0.2;
  std::vector<int> e_grid{1, 2};
  std::vector<int> s_grid{4};
  std::vector<std::uint64_t> seeds{5};
  EtaRule rule;
  LowerboundSweep sweep = run_lowerbound_sweep(inst, e_grid, s_grid, rule, 30, seeds);
  std::string csv = lowerbound_csv(sweep);

  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "E,S,alpha,noise_std,seed,final_gap");
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows++;
    // Each row parses back to numbers matching a recorded cell.
    int e = 0, s = 0;
    unsigned long long seed = 0;
    double alpha = 0.0, noise = 0.0, gap = 0.0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%llu,%lf", &e, &s, &alpha, &noise, &seed,
                        &gap) == 6);
    const LowerboundCell& cell = sweep.cells[rows - 1];
    CHECK(e == cell.local_steps);
    CHECK(s == cell.participation);
    CHECK(alpha == cell.alpha);
    CHECK(seed == cell.seed);
    CHECK(gap == cell.final_gap);
  }
  CHECK(rows == 2);
}

TEST_CASE("sweep inputs are validated") {
  QuadraticInstance inst;
  std::vector<int> e_grid{1};
  std::vector<int> s_grid{2};
  std::vector<std::uint64_t> seeds{1};
  EtaRule rule;
  CHECK_THROWS_AS(
      run_lowerbound_sweep(inst, {}, s_grid, rule, 10, seeds), std::invalid_argument);
  CHECK_THROWS_AS(
      run_lowerbound_sweep(inst, e_grid, s_grid, rule, 0, seeds), std::invalid_argument);
  CHECK_THROWS_AS(
      run_lowerbound_sweep(inst, e_grid, s_grid, rule, 10, {}), std::invalid_argument);
  std::vector<int> bad_s{20};  // exceeds the client count
  CHECK_THROWS(run_lowerbound_sweep(inst, e_grid, bad_s, rule, 10, seeds));
}
