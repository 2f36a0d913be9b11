#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "distdpo/dec_runtime.hpp"
#include "distdpo/fed_runtime.hpp"

namespace distdpo {

// Shared base configuration for comparative runs and sweeps: one synthetic
// instance plus per-client preference data, reused across all cells.
struct ExperimentBase {
  InstanceConfig instance;
  HeterogeneityConfig data;
  std::uint64_t data_seed = 42;
  int num_clients = 5;
  DpoConfig dpo;
  FedConfig fed;
  DecConfig dec;
  int workers = 1;
};

struct Experiment {
  Instance instance;
  std::vector<ClientDataset> clients;
};

// Instance and client datasets derived deterministically from data_seed. An
// empty base reward direction defaults to a random unit direction scaled to
// norm 2 so preferences are informative out of the box.
Experiment prepare_experiment(const ExperimentBase& base);

// Mean gradient norm squared over the last `tail` recorded rounds.
double stationary_gap(std::span<const RoundMetrics> metrics, int tail = 10);

// Mean consensus error over the last `tail` recorded rounds (dec runs only).
double consensus_floor(std::span<const RoundMetrics> metrics, int tail = 20);

struct FitDiag {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool valid = false;

  nlohmann::json to_json() const;
};

struct SweepCell {
  double axis_value = 0.0;
  std::string label;
  std::uint64_t seed = 0;
  double final_gap = 0.0;
  // Topology sweep only.
  double rho = 0.0;
  double floor = 0.0;
};

struct SweepResult {
  std::string axis;
  std::vector<double> grid;
  std::vector<std::string> labels;         // topology names; empty otherwise
  std::vector<double> cell_means;          // per grid value, over seeds
  std::vector<double> cell_medians;
  std::vector<SweepCell> cells;
  // Direction depends on the axis: gap nonincreasing in local steps,
  // nondecreasing in staleness; unset for fitted axes.
  std::optional<bool> monotone;
  FitDiag fit;

  nlohmann::json to_json() const;
};

// Federated run per (participation, seed); ordinary least squares of the
// per-cell mean gap on 1/S.
SweepResult sweep_participation(const ExperimentBase& base, std::span<const int> s_grid,
                                std::span<const std::uint64_t> seeds);

// Federated run per (local step count, seed); reports whether median gaps are
// monotone nonincreasing along the grid.
SweepResult sweep_local_steps(const ExperimentBase& base, std::span<const int> e_grid,
                              std::span<const std::uint64_t> seeds);

// Federated run per (q_max, seed); reports whether median gaps are monotone
// nondecreasing along the grid.
SweepResult sweep_staleness(const ExperimentBase& base, std::span<const int> q_grid,
                            std::span<const std::uint64_t> seeds);

// Decentralized run per (topology, seed); cell quantity is the consensus
// floor; fit is through the origin against step_size^2/(1-rho^2), with the
// star topology kept in the raw cells but excluded from the fit.
SweepResult sweep_topology(const ExperimentBase& base, std::span<const GraphKind> kinds,
                           std::span<const std::uint64_t> seeds);

// Header axis_value,seed,final_gap; the topology sweep appends
// topology,rho,consensus_floor columns.
std::string sweep_csv(const SweepResult& result);

}  // namespace distdpo
