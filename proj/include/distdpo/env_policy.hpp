#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "distdpo/rng.hpp"

namespace distdpo {

// Tabular episodic MDP. transition is laid out [state][action][next_state],
// row-major; initial_dist has one entry per state.
struct MdpSpec {
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int feature_dim = 0;
  std::vector<double> transition;
  std::vector<double> initial_dist;

  std::span<const double> transition_row(int state, int action) const;
  void validate() const;
};

// Dense feature map phi(s,u), laid out [state][action][component]. phi_bound
// records the largest feature norm so moment bounds stay finite and explicit.
struct FeatureTable {
  int num_states = 0;
  int num_actions = 0;
  int feature_dim = 0;
  double phi_bound = 0.0;
  std::vector<double> phi;

  std::span<const double> row(int state, int action) const;
  void validate() const;
};

struct PolicyParams {
  std::vector<double> theta;

  bool operator==(const PolicyParams&) const = default;
};

struct Step {
  int state = 0;
  int action = 0;

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::vector<Step> steps;

  bool operator==(const Trajectory&) const = default;
};

struct Instance {
  MdpSpec mdp;
  FeatureTable features;
};

struct InstanceConfig {
  int num_states = 6;
  int num_actions = 4;
  int horizon = 5;
  int feature_dim = 8;
  double phi_bound = 1.0;
};

// Random tabular instance: transition rows and the initial distribution drawn
// Dirichlet(1), features i.i.d. uniform on [-1,1]^d then rescaled so the
// largest feature norm equals cfg.phi_bound exactly.
Instance make_random_instance(const InstanceConfig& cfg, RngStream& rng);

// softmax over actions of theta . phi(state, u), max-subtracted.
std::vector<double> action_probs(const MdpSpec& spec, const FeatureTable& feats,
                                 const PolicyParams& theta, int state);
std::vector<double> action_log_probs(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, int state);

Trajectory sample_trajectory(const MdpSpec& spec, const FeatureTable& feats,
                             const PolicyParams& theta, RngStream& rng);

// phi(s,u) minus the policy-mean feature at s: the gradient of log pi(u|s).
std::vector<double> step_score(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta, int state, int action);
std::vector<double> trajectory_score(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, const Trajectory& traj);

double trajectory_log_prob(const MdpSpec& spec, const FeatureTable& feats,
                           const PolicyParams& theta, const Trajectory& traj);

// Per-theta cache of action probabilities, log-probabilities, and policy-mean
// features for every state. Lets dataset-wide loops avoid recomputing the
// softmax for each pair.
struct PolicyTables {
  int num_states = 0;
  int num_actions = 0;
  int feature_dim = 0;
  std::vector<double> probs;
  std::vector<double> log_probs;
  std::vector<double> mean_phi;

  std::span<const double> prob_row(int state) const;
  std::span<const double> log_prob_row(int state) const;
  std::span<const double> mean_phi_row(int state) const;
};

PolicyTables precompute_policy(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta);

double trajectory_log_prob(const PolicyTables& tables, const Trajectory& traj);

// Adds weight * trajectory score to out using the cached tables.
void accumulate_trajectory_score(const FeatureTable& feats, const PolicyTables& tables,
                                 const Trajectory& traj, double weight, std::span<double> out);

nlohmann::json instance_to_json(const Instance& inst);
Instance instance_from_json(const nlohmann::json& doc);

}  // namespace distdpo
