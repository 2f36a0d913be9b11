#pragma once

#include <span>
#include <vector>

#include "distdpo/preference_data.hpp"

namespace distdpo {

struct DpoConfig {
  double beta = 0.2;
  PolicyParams ref_theta;
  double loss_offset = 0.0;

  void validate() const;
};

// Cached softmax tables for the trained policy and the frozen reference,
// shared across every pair evaluated at the same theta.
struct DpoTables {
  PolicyTables policy;
  PolicyTables ref;
};

DpoTables precompute_dpo(const MdpSpec& spec, const FeatureTable& feats,
                         const PolicyParams& theta, const DpoConfig& cfg);

// omega = beta * [(log pi(tau+) - log pi(tau-)) - same gap under the reference].
double logit_gap(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                 const DpoConfig& cfg, const PreferencePair& pair);
double logit_gap(const DpoTables& tables, double beta, const PreferencePair& pair);

// -log sigmoid(omega) + loss_offset.
double pair_loss(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                 const DpoConfig& cfg, const PreferencePair& pair);

// Gradient of pair_loss in theta: beta * sigmoid(-omega) * (score(tau-) - score(tau+)).
std::vector<double> pair_gradient(const MdpSpec& spec, const FeatureTable& feats,
                                  const PolicyParams& theta, const DpoConfig& cfg,
                                  const PreferencePair& pair);

// Adds weight * pair gradient into out using cached tables.
void accumulate_pair_gradient(const FeatureTable& feats, const DpoTables& tables, double beta,
                              const PreferencePair& pair, double weight, std::span<double> out);

// Mean pair gradient / loss over a nonempty batch.
std::vector<double> batch_gradient(const MdpSpec& spec, const FeatureTable& feats,
                                   const PolicyParams& theta, const DpoConfig& cfg,
                                   std::span<const PreferencePair> batch);
double batch_loss(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                  const DpoConfig& cfg, std::span<const PreferencePair> batch);

}  // namespace distdpo
