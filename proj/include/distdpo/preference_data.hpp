#pragma once

#include <string>
#include <vector>

#include "distdpo/env_policy.hpp"

namespace distdpo {

struct PreferencePair {
  Trajectory plus;
  Trajectory minus;

  bool operator==(const PreferencePair&) const = default;
};

struct ClientDataset {
  int client_id = 0;
  std::vector<PreferencePair> pairs;
  std::vector<double> reward_weights;
};

// Controls how much the clients' latent reward weights disagree, which in turn
// controls measured gradient diversity.
struct HeterogeneityConfig {
  std::vector<double> base_weights;
  double perturbation_scale = 0.0;
  int pairs_per_client = 120;

  void validate(int feature_dim) const;
};

double trajectory_return(const FeatureTable& feats, std::span<const double> weights,
                         const Trajectory& traj);

// Samples pairs_per_client trajectory pairs from the behavior policy and
// labels each by a Bradley-Terry draw on the latent returns under this
// client's perturbed reward weights.
ClientDataset generate_client_dataset(const MdpSpec& spec, const FeatureTable& feats,
                                      const PolicyParams& behavior_theta,
                                      const HeterogeneityConfig& cfg, int client_id,
                                      RngStream& rng);

// batch_size pairs drawn uniformly with replacement.
std::vector<PreferencePair> sample_minibatch(const ClientDataset& ds, int batch_size,
                                             RngStream& rng);

// One pair per line: {"plus": [[s,a], ...], "minus": [[s,a], ...]}.
std::string pairs_to_jsonl(std::span<const PreferencePair> pairs);
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

}  // namespace distdpo
