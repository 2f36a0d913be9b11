#pragma once

#include <functional>
#include <optional>

#include "distdpo/fed_runtime.hpp"
#include "distdpo/topology.hpp"

namespace distdpo {

struct DecConfig {
  GraphKind topology = GraphKind::ring;
  // Unset picks the kind's default gossip weights.
  std::optional<MixScheme> scheme;
  int rounds = 80;
  double step_size = 1e-4;
  int batch_size = 4;
  int local_steps_per_round = 5;
  std::optional<double> clip_norm = 1.0;
  // Test hook (not part of the config file); see FedConfig.
  bool shared_client_streams = false;

  void validate() const;
};

struct NodeStates {
  std::vector<std::vector<double>> thetas;
  int round = 0;

  std::vector<double> network_average() const;
};

// theta_i <- sum_j weights(i,j) theta_j for every node; preserves the average.
NodeStates mix(const NodeStates& states, const MixingMatrix& m);

// (1/N) sum_i ||theta_i - theta_bar||^2
double consensus_error(const NodeStates& states);

// Per-round bookkeeping for the contraction and average-identity checks. The
// round runs (k-1) plain local gradient steps, then one gradient computed at
// the pre-mix parameters, mixed, and applied.
struct DecRoundTrace {
  int round = 0;
  double consensus_before = 0.0;   // at round start
  double consensus_premix = 0.0;   // after local steps, before the mix
  double consensus_after = 0.0;    // at round end
  // Node-mean of ||g_i - g_bar||^2 for the gradients entering the mix step.
  double mix_grad_deviation_sq = 0.0;
  // Node-mean of the summed gradients applied within the round, so the
  // network average satisfies avg' = avg - step_size * this vector.
  std::vector<double> mean_applied_gradient;
};

struct DecRunResult {
  std::vector<RoundMetrics> metrics;
  std::vector<DecRoundTrace> traces;
};

using DecObserver = std::function<void(const NodeStates&, const RoundMetrics&)>;

// Metrics are recorded at round start: loss and gradient norm at the network
// average, consensus error across nodes. All nodes start from `init`.
DecRunResult run_decdpo(const GradientEnv& env, const DecConfig& cfg, const MixingMatrix& mixing,
                        const PolicyParams& init, RngStream& rng, int workers = 1,
                        const DecObserver& observer = {});

DecRunResult run_decdpo(const MdpSpec& spec, const FeatureTable& feats,
                        std::span<const ClientDataset> clients, const DecConfig& cfg,
                        const DpoConfig& dpo, RngStream& rng, int workers = 1,
                        const DecObserver& observer = {});

}  // namespace distdpo
