#include "distdpo/lowerbound.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/parallel.hpp"

namespace distdpo {
namespace {

double tail_mean_grad_norm(const std::vector<RoundMetrics>& metrics, int tail) {
  if (metrics.empty()) throw std::invalid_argument("no rounds recorded");
  const int use = std::min<int>(tail, static_cast<int>(metrics.size()));
  double total = 0.0;
  for (int i = static_cast<int>(metrics.size()) - use; i < static_cast<int>(metrics.size()); ++i)
    total += metrics[static_cast<std::size_t>(i)].grad_norm_sq;
  return total / use;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

void QuadraticInstance::validate() const {
  if (num_clients < 2 || num_clients % 2 != 0)
    throw std::invalid_argument("num_clients must be even and at least 2");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("noise_std must be nonnegative");
}

QuadGroup client_group(const QuadraticInstance& inst, int client) {
  if (client < 0 || client >= inst.num_clients)
    throw std::invalid_argument("client index out of range");
  return client < inst.num_clients / 2 ? QuadGroup::a : QuadGroup::b;
}

std::vector<double> quad_gradient(const QuadraticInstance& inst, QuadGroup group,
                                  std::span<const double> theta, RngStream& rng) {
  if (theta.size() != 2) throw std::invalid_argument("quadratic instance is two-dimensional");
  const double z0 = group == QuadGroup::a ? inst.alpha : -inst.alpha;
  std::vector<double> g{theta[0] - z0, theta[1]};
  if (inst.noise_std > 0.0) {
    g[0] += inst.noise_std * rng.normal();
    g[1] += inst.noise_std * rng.normal();
  }
  return g;
}

GradientEnv make_quadratic_env(const QuadraticInstance& inst) {
  inst.validate();
  GradientEnv env;
  env.dim = 2;
  env.num_clients = inst.num_clients;
  env.data_sizes.assign(static_cast<std::size_t>(inst.num_clients), 1);
  env.minibatch_gradient = [inst](int client, std::span<const double> theta, RngStream& rng) {
    return quad_gradient(inst, client_group(inst, client), theta, rng);
  };
  env.global_gradient = [](std::span<const double> theta) {
    return std::vector<double>(theta.begin(), theta.end());
  };
  env.global_loss = [inst](std::span<const double> theta) {
    return 0.5 * kernels::sum_sq(theta) + 0.5 * inst.alpha * inst.alpha;
  };
  return env;
}

double EtaRule::eta(int local_steps) const {
  if (local_steps < 1) throw std::invalid_argument("local step count must be positive");
  if (!(numerator > 0.0)) throw std::invalid_argument("eta numerator must be positive");
  return numerator / local_steps;
}

LowerboundSweep run_lowerbound_sweep(const QuadraticInstance& inst, std::span<const int> e_grid,
                                     std::span<const int> s_grid, const EtaRule& rule, int rounds,
                                     std::span<const std::uint64_t> seeds, int workers) {
  inst.validate();
  if (e_grid.empty() || s_grid.empty() || seeds.empty())
    throw std::invalid_argument("sweep grids and seeds must be nonempty");
  if (rounds < 1) throw std::invalid_argument("rounds must be positive");

  const GradientEnv env = make_quadratic_env(inst);

  LowerboundSweep sweep;
  sweep.e_grid.assign(e_grid.begin(), e_grid.end());
  sweep.s_grid.assign(s_grid.begin(), s_grid.end());
  sweep.seeds.assign(seeds.begin(), seeds.end());

  const int num_cells =
      static_cast<int>(e_grid.size() * s_grid.size() * seeds.size());
  sweep.cells.resize(num_cells);
  parallel_for(num_cells, workers, [&](int idx) {
    const int per_e = static_cast<int>(s_grid.size() * seeds.size());
    const int e_idx = idx / per_e;
    const int s_idx = (idx % per_e) / static_cast<int>(seeds.size());
    const int seed_idx = idx % static_cast<int>(seeds.size());

    FedConfig cfg;
    cfg.num_clients = inst.num_clients;
    cfg.participation = s_grid[s_idx];
    cfg.local_steps = e_grid[e_idx];
    cfg.rounds = rounds;
    cfg.step_size = rule.eta(e_grid[e_idx]);
    cfg.batch_size = 1;
    cfg.clip_norm.reset();

    const PolicyParams init{{inst.alpha, inst.alpha}};
    RngStream rng(seeds[seed_idx]);
    const std::vector<RoundMetrics> metrics = run_feddpo(env, cfg, init, rng);

    LowerboundCell& cell = sweep.cells[idx];
    cell.local_steps = e_grid[e_idx];
    cell.participation = s_grid[s_idx];
    cell.alpha = inst.alpha;
    cell.noise_std = inst.noise_std;
    cell.seed = seeds[seed_idx];
    cell.final_gap = tail_mean_grad_norm(metrics, 10);
  });

  sweep.median_gap.resize(e_grid.size() * s_grid.size());
  for (std::size_t e = 0; e < e_grid.size(); ++e)
    for (std::size_t s = 0; s < s_grid.size(); ++s) {
      std::vector<double> gaps;
      for (std::size_t k = 0; k < seeds.size(); ++k)
        gaps.push_back(sweep.cells[(e * s_grid.size() + s) * seeds.size() + k].final_gap);
      sweep.median_gap[e * s_grid.size() + s] = median(std::move(gaps));
    }

  // Least squares of log(median gap) on log(E/S) across the full grid.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(sweep.median_gap.size());
  for (std::size_t e = 0; e < e_grid.size(); ++e)
    for (std::size_t s = 0; s < s_grid.size(); ++s) {
      const double x = std::log(static_cast<double>(e_grid[e]) / s_grid[s]);
      const double y = std::log(std::max(sweep.median_gap[e * s_grid.size() + s], 1e-300));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
  const double denom = m * sxx - sx * sx;
  sweep.log_slope = denom > 0.0 ? (m * sxy - sx * sy) / denom : 0.0;
  return sweep;
}

nlohmann::json LowerboundSweep::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const LowerboundCell& cell : cells)
    cells_json.push_back(nlohmann::json{{"E", cell.local_steps},
                                        {"S", cell.participation},
                                        {"alpha", cell.alpha},
                                        {"noise_std", cell.noise_std},
                                        {"seed", cell.seed},
                                        {"final_gap", cell.final_gap}});
  return nlohmann::json{{"e_grid", e_grid},
                        {"s_grid", s_grid},
                        {"seeds", seeds},
                        {"median_gap", median_gap},
                        {"log_slope", log_slope},
                        {"cells", std::move(cells_json)}};
}

std::string lowerbound_csv(const LowerboundSweep& sweep) {
  std::string out = "E,S,alpha,noise_std,seed,final_gap\n";
  char buf[192];
  for (const LowerboundCell& cell : sweep.cells) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%llu,%.17g\n", cell.local_steps,
                  cell.participation, cell.alpha, cell.noise_std,
                  static_cast<unsigned long long>(cell.seed), cell.final_gap);
    out += buf;
  }
  return out;
}

}  // namespace distdpo
