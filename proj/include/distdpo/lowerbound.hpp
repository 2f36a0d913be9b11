#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "distdpo/fed_runtime.hpp"

namespace distdpo {

// Two client groups with opposing quadratic objectives L^i = 0.5||theta-z_i||^2,
// group optima at (+alpha,0) and (-alpha,0), so client heterogeneity is alpha^2
// while the global optimum stays at the origin.
struct QuadraticInstance {
  int num_clients = 8;  // even; first half pulls toward +alpha, second half -alpha
  double alpha = 1.0;
  double noise_std = 0.0;

  void validate() const;
};

enum class QuadGroup { a, b };

QuadGroup client_group(const QuadraticInstance& inst, int client);

// (theta - z_group) plus independent Gaussian noise per coordinate.
std::vector<double> quad_gradient(const QuadraticInstance& inst, QuadGroup group,
                                  std::span<const double> theta, RngStream& rng);

// Plugs the quadratic gradients into the federated loop. Global gradient is
// exactly theta; global loss is 0.5||theta||^2 + alpha^2/2.
GradientEnv make_quadratic_env(const QuadraticInstance& inst);

// Step-size rule eta(E) = numerator / E, shrinking with the local step count.
struct EtaRule {
  double numerator = 0.1;

  double eta(int local_steps) const;
};

struct LowerboundCell {
  int local_steps = 0;
  int participation = 0;
  double alpha = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  double final_gap = 0.0;
};

struct LowerboundSweep {
  std::vector<int> e_grid;
  std::vector<int> s_grid;
  std::vector<std::uint64_t> seeds;
  std::vector<LowerboundCell> cells;
  // Median over seeds, indexed e_index * s_grid.size() + s_index.
  std::vector<double> median_gap;
  // Pooled least-squares slope of log(median gap) on log(E/S).
  double log_slope = 0.0;

  nlohmann::json to_json() const;
};

// One federated run per (E, S, seed) cell with step size from the rule; the
// reported gap is ||grad of the global loss||^2 averaged over the last 10
// recorded rounds. Same seed means the same randomness across cells.
LowerboundSweep run_lowerbound_sweep(const QuadraticInstance& inst, std::span<const int> e_grid,
                                     std::span<const int> s_grid, const EtaRule& rule, int rounds,
                                     std::span<const std::uint64_t> seeds, int workers = 1);

// Header E,S,alpha,noise_std,seed,final_gap; one row per cell.
std::string lowerbound_csv(const LowerboundSweep& sweep);

}  // namespace distdpo
