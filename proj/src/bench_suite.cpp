#include "distdpo/bench_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/parallel.hpp"

namespace distdpo {
namespace {

double mean(std::span<const double> values) {
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double tail_mean(std::span<const RoundMetrics> metrics, int tail, bool consensus) {
  if (metrics.empty()) throw std::invalid_argument("no rounds recorded");
  if (tail < 1 || tail > static_cast<int>(metrics.size()))
    throw std::invalid_argument("tail window outside recorded rounds");
  double total = 0.0;
  for (std::size_t i = metrics.size() - static_cast<std::size_t>(tail); i < metrics.size(); ++i) {
    if (consensus) {
      if (!metrics[i].consensus_error.has_value())
        throw std::invalid_argument("consensus floor needs dec-mode metrics");
      total += *metrics[i].consensus_error;
    } else {
      total += metrics[i].grad_norm_sq;
    }
  }
  return total / tail;
}

FitDiag ols_fit(std::span<const double> xs, std::span<const double> ys) {
  FitDiag fit;
  const std::size_t n = xs.size();
  if (n < 2) return fit;
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.valid = true;
  return fit;
}

// Through-origin fit; R^2 is the uncentered variance-explained ratio.
FitDiag origin_fit(std::span<const double> xs, std::span<const double> ys) {
  FitDiag fit;
  if (xs.empty()) return fit;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  if (!(sxx > 0.0)) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = 0.0;
  double resid = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit.slope * xs[i];
    resid += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - resid / syy : 1.0;
  fit.valid = true;
  return fit;
}

bool monotone_along_grid(std::span<const double> medians, bool nonincreasing) {
  for (std::size_t i = 0; i + 1 < medians.size(); ++i) {
    if (nonincreasing && medians[i + 1] > medians[i]) return false;
    if (!nonincreasing && medians[i + 1] < medians[i]) return false;
  }
  return true;
}

void summarize_cells(SweepResult& result, std::size_t grid_size, std::size_t num_seeds,
                     bool use_floor) {
  result.cell_means.resize(grid_size);
  result.cell_medians.resize(grid_size);
  for (std::size_t g = 0; g < grid_size; ++g) {
    std::vector<double> values;
    for (std::size_t k = 0; k < num_seeds; ++k) {
      const SweepCell& cell = result.cells[g * num_seeds + k];
      values.push_back(use_floor ? cell.floor : cell.final_gap);
    }
    result.cell_means[g] = mean(values);
    result.cell_medians[g] = median(std::move(values));
  }
}

// Runs one federated cell per (grid value, seed) with the given config tweak;
// same seed reuses the same randomness across grid values.
SweepResult run_fed_sweep(const ExperimentBase& base, std::span<const int> grid,
                          std::span<const std::uint64_t> seeds, const std::string& axis,
                          const std::function<void(FedConfig&, int)>& apply_axis) {
  if (grid.empty() || seeds.empty())
    throw std::invalid_argument("sweep grid and seeds must be nonempty");
  const Experiment exp = prepare_experiment(base);
  const GradientEnv env = make_dpo_gradient_env(exp.instance.mdp, exp.instance.features,
                                                exp.clients, base.dpo, base.fed.batch_size,
                                                base.fed.weighting);
  const PolicyParams init{std::vector<double>(exp.instance.features.feature_dim, 0.0)};

  SweepResult result;
  result.axis = axis;
  for (int v : grid) result.grid.push_back(static_cast<double>(v));
  const int num_cells = static_cast<int>(grid.size() * seeds.size());
  result.cells.resize(num_cells);
  parallel_for(num_cells, base.workers, [&](int idx) {
    const std::size_t g = static_cast<std::size_t>(idx) / seeds.size();
    const std::size_t k = static_cast<std::size_t>(idx) % seeds.size();
    FedConfig cfg = base.fed;
    cfg.num_clients = static_cast<int>(exp.clients.size());
    apply_axis(cfg, grid[g]);
    RngStream rng(seeds[k]);
    const std::vector<RoundMetrics> metrics = run_feddpo(env, cfg, init, rng);
    SweepCell& cell = result.cells[idx];
    cell.axis_value = static_cast<double>(grid[g]);
    cell.seed = seeds[k];
    cell.final_gap = stationary_gap(metrics);
  });
  summarize_cells(result, grid.size(), seeds.size(), false);
  return result;
}

}  // namespace

Experiment prepare_experiment(const ExperimentBase& base) {
  if (base.num_clients < 1) throw std::invalid_argument("num_clients must be positive");
  RngStream root(base.data_seed);

  Experiment exp;
  RngStream inst_rng = root.split(stream_key::kInstance);
  exp.instance = make_random_instance(base.instance, inst_rng);

  HeterogeneityConfig data = base.data;
  if (data.base_weights.empty()) {
    RngStream dir_rng = root.split(stream_key::kInstance, 1);
    std::vector<double> w(static_cast<std::size_t>(base.instance.feature_dim));
    for (double& v : w) v = dir_rng.normal();
    const double norm = std::sqrt(kernels::sum_sq(w));
    kernels::scale(w, 2.0 / norm);
    data.base_weights = std::move(w);
  }
  data.validate(base.instance.feature_dim);

  const PolicyParams behavior{std::vector<double>(base.instance.feature_dim, 0.0)};
  for (int i = 0; i < base.num_clients; ++i) {
    RngStream client_rng = root.split(stream_key::kBehaviorData, static_cast<std::uint64_t>(i));
    exp.clients.push_back(generate_client_dataset(exp.instance.mdp, exp.instance.features,
                                                  behavior, data, i, client_rng));
  }
  return exp;
}

double stationary_gap(std::span<const RoundMetrics> metrics, int tail) {
  return tail_mean(metrics, tail, false);
}

double consensus_floor(std::span<const RoundMetrics> metrics, int tail) {
  return tail_mean(metrics, tail, true);
}

nlohmann::json FitDiag::to_json() const {
  return nlohmann::json{
      {"slope", slope}, {"intercept", intercept}, {"r2", r2}, {"valid", valid}};
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const SweepCell& cell : cells) {
    nlohmann::json row{{"axis_value", cell.axis_value},
                       {"seed", cell.seed},
                       {"final_gap", cell.final_gap}};
    if (!cell.label.empty()) {
      row["topology"] = cell.label;
      row["rho"] = cell.rho;
      row["consensus_floor"] = cell.floor;
    }
    cells_json.push_back(std::move(row));
  }
  nlohmann::json out{{"axis", axis},
                     {"grid", grid},
                     {"cell_means", cell_means},
                     {"cell_medians", cell_medians},
                     {"fit", fit.to_json()},
                     {"cells", std::move(cells_json)}};
  if (!labels.empty()) out["labels"] = labels;
  if (monotone.has_value()) out["monotone"] = *monotone;
  return out;
}

SweepResult sweep_participation(const ExperimentBase& base, std::span<const int> s_grid,
                                std::span<const std::uint64_t> seeds) {
  for (int s : s_grid)
    if (s < 1 || s > base.num_clients)
      throw std::invalid_argument("participation exceeds client count");
  SweepResult result = run_fed_sweep(base, s_grid, seeds, "participation",
                                     [](FedConfig& cfg, int s) { cfg.participation = s; });
  std::vector<double> xs;
  for (int s : s_grid) xs.push_back(1.0 / s);
  result.fit = ols_fit(xs, result.cell_means);
  return result;
}

SweepResult sweep_local_steps(const ExperimentBase& base, std::span<const int> e_grid,
                              std::span<const std::uint64_t> seeds) {
  for (int e : e_grid)
    if (e < 1) throw std::invalid_argument("local_steps must be positive");
  SweepResult result = run_fed_sweep(base, e_grid, seeds, "local_steps",
                                     [](FedConfig& cfg, int e) { cfg.local_steps = e; });
  result.monotone = monotone_along_grid(result.cell_medians, true);
  return result;
}

SweepResult sweep_staleness(const ExperimentBase& base, std::span<const int> q_grid,
                            std::span<const std::uint64_t> seeds) {
  for (int q : q_grid)
    if (q < 0) throw std::invalid_argument("q_max must be nonnegative");
  SweepResult result = run_fed_sweep(base, q_grid, seeds, "staleness",
                                     [](FedConfig& cfg, int q) { cfg.q_max = q; });
  result.monotone = monotone_along_grid(result.cell_medians, false);
  return result;
}

SweepResult sweep_topology(const ExperimentBase& base, std::span<const GraphKind> kinds,
                           std::span<const std::uint64_t> seeds) {
  if (kinds.empty() || seeds.empty())
    throw std::invalid_argument("sweep grid and seeds must be nonempty");
  const Experiment exp = prepare_experiment(base);
  const GradientEnv env = make_dpo_gradient_env(exp.instance.mdp, exp.instance.features,
                                                exp.clients, base.dpo, base.dec.batch_size,
                                                Weighting::uniform);
  const PolicyParams init{std::vector<double>(exp.instance.features.feature_dim, 0.0)};

  std::vector<MixingMatrix> mixings;
  for (GraphKind kind : kinds)
    mixings.push_back(build_mixing(kind, static_cast<int>(exp.clients.size()), base.dec.scheme));

  SweepResult result;
  result.axis = "topology";
  for (std::size_t g = 0; g < kinds.size(); ++g) {
    result.grid.push_back(mixings[g].rho);
    result.labels.push_back(graph_kind_name(kinds[g]));
  }
  const int num_cells = static_cast<int>(kinds.size() * seeds.size());
  result.cells.resize(num_cells);
  parallel_for(num_cells, base.workers, [&](int idx) {
    const std::size_t g = static_cast<std::size_t>(idx) / seeds.size();
    const std::size_t k = static_cast<std::size_t>(idx) % seeds.size();
    DecConfig cfg = base.dec;
    cfg.topology = kinds[g];
    RngStream rng(seeds[k]);
    const DecRunResult run = run_decdpo(env, cfg, mixings[g], init, rng);
    SweepCell& cell = result.cells[idx];
    cell.axis_value = mixings[g].rho;
    cell.label = graph_kind_name(kinds[g]);
    cell.seed = seeds[k];
    cell.rho = mixings[g].rho;
    cell.final_gap = stationary_gap(run.metrics);
    cell.floor = consensus_floor(run.metrics);
  });
  summarize_cells(result, kinds.size(), seeds.size(), true);

  std::vector<double> xs, ys;
  const double eta_sq = base.dec.step_size * base.dec.step_size;
  for (std::size_t g = 0; g < kinds.size(); ++g) {
    if (kinds[g] == GraphKind::star) continue;
    xs.push_back(eta_sq / (1.0 - mixings[g].rho * mixings[g].rho));
    ys.push_back(result.cell_means[g]);
  }
  result.fit = origin_fit(xs, ys);
  return result;
}

std::string sweep_csv(const SweepResult& result) {
  const bool topo = result.axis == "topology";
  std::string out = topo ? "axis_value,seed,final_gap,topology,rho,consensus_floor\n"
                         : "axis_value,seed,final_gap\n";
  char buf[256];
  for (const SweepCell& cell : result.cells) {
    if (topo) {
      std::snprintf(buf, sizeof(buf), "%.17g,%llu,%.17g,%s,%.17g,%.17g\n", cell.axis_value,
                    static_cast<unsigned long long>(cell.seed), cell.final_gap,
                    cell.label.c_str(), cell.rho, cell.floor);
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g,%llu,%.17g\n", cell.axis_value,
                    static_cast<unsigned long long>(cell.seed), cell.final_gap);
    }
    out += buf;
  }
  return out;
}

}  // namespace distdpo
