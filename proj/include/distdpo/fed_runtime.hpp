#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>

#include "distdpo/dpo_core.hpp"
#include "distdpo/metrics.hpp"

namespace distdpo {

enum class Weighting { uniform, data_size };

Weighting weighting_from_name(const std::string& name);
std::string weighting_name(Weighting w);

struct FedConfig {
  int num_clients = 5;
  int participation = 5;
  int local_steps = 3;
  int rounds = 80;
  double step_size = 1e-4;
  int batch_size = 4;
  std::optional<double> clip_norm = 1.0;
  int q_max = 0;
  Weighting weighting = Weighting::uniform;
  // Test hook (not part of the config file): every client draws minibatches
  // from the same per-round stream, making identical datasets yield identical
  // local updates.
  bool shared_client_streams = false;

  void validate() const;
};

struct ServerState {
  PolicyParams theta;
  // front() is the current round's parameters; older entries serve stale reads.
  std::deque<std::vector<double>> history;
  int round = 0;
};

// Uniform sample of `participation` distinct clients, returned sorted.
std::vector<int> select_clients(int num_clients, int participation, RngStream& rng);

// E local steps of clipped minibatch DPO gradient descent on one client.
PolicyParams local_update(const MdpSpec& spec, const FeatureTable& feats, const ClientDataset& ds,
                          const PolicyParams& start, const FedConfig& cfg, const DpoConfig& dpo,
                          RngStream& rng);

// Weighted average of client parameters; data_size weighting uses each
// client's dataset size, uniform uses 1/|updates|.
PolicyParams aggregate(const std::map<int, PolicyParams>& updates, Weighting weighting,
                       std::span<const int> data_sizes);

// ||theta^r - theta^{r-k}|| from the server history.
double measure_drift(const ServerState& server, int k);

// Per-client stochastic gradient seam. The federated loop only ever calls
// these three functions, so alternative objectives (the quadratic lower-bound
// construction) can ride the same loop.
struct GradientEnv {
  int dim = 0;
  int num_clients = 0;
  std::vector<int> data_sizes;
  std::function<std::vector<double>(int client, std::span<const double> theta, RngStream& rng)>
      minibatch_gradient;
  std::function<std::vector<double>(std::span<const double> theta)> global_gradient;
  std::function<double(std::span<const double> theta)> global_loss;
};

GradientEnv make_dpo_gradient_env(const MdpSpec& spec, const FeatureTable& feats,
                                  std::span<const ClientDataset> clients, const DpoConfig& dpo,
                                  int batch_size, Weighting weighting);

using FedObserver = std::function<void(const ServerState&, const RoundMetrics&)>;

// Metrics are recorded at round-start parameters, before aggregation. With
// q_max > 0 each selected client starts from an independently drawn stale
// entry and aggregation weights are uniform.
std::vector<RoundMetrics> run_feddpo(const GradientEnv& env, const FedConfig& cfg,
                                     const PolicyParams& init, RngStream& rng, int workers = 1,
                                     const FedObserver& observer = {});

std::vector<RoundMetrics> run_feddpo(const MdpSpec& spec, const FeatureTable& feats,
                                     std::span<const ClientDataset> clients, const FedConfig& cfg,
                                     const DpoConfig& dpo, RngStream& rng, int workers = 1,
                                     const FedObserver& observer = {});

// Rescales v to clip norm when it is longer; identity otherwise.
void clip_to_norm(std::span<double> v, const std::optional<double>& clip_norm);

}  // namespace distdpo
