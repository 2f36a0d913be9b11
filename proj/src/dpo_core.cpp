#include "distdpo/dpo_core.hpp"

#include <cmath>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/math_util.hpp"

namespace distdpo {
namespace {

PolicyParams resolved_ref(const DpoConfig& cfg, int feature_dim) {
  if (cfg.ref_theta.theta.empty()) return PolicyParams{std::vector<double>(feature_dim, 0.0)};
  if (static_cast<int>(cfg.ref_theta.theta.size()) != feature_dim)
    throw std::invalid_argument("ref_theta length does not match feature_dim");
  return cfg.ref_theta;
}

double table_gap(const DpoTables& tables, double beta, const PreferencePair& pair) {
  const double policy_gap =
      trajectory_log_prob(tables.policy, pair.plus) - trajectory_log_prob(tables.policy, pair.minus);
  const double ref_gap =
      trajectory_log_prob(tables.ref, pair.plus) - trajectory_log_prob(tables.ref, pair.minus);
  return beta * (policy_gap - ref_gap);
}

}  // namespace

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!std::isfinite(loss_offset)) throw std::invalid_argument("loss_offset must be finite");
}

DpoTables precompute_dpo(const MdpSpec& spec, const FeatureTable& feats,
                         const PolicyParams& theta, const DpoConfig& cfg) {
  cfg.validate();
  return DpoTables{precompute_policy(spec, feats, theta),
                   precompute_policy(spec, feats, resolved_ref(cfg, feats.feature_dim))};
}

double logit_gap(const DpoTables& tables, double beta, const PreferencePair& pair) {
  return table_gap(tables, beta, pair);
}

double logit_gap(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                 const DpoConfig& cfg, const PreferencePair& pair) {
  return table_gap(precompute_dpo(spec, feats, theta, cfg), cfg.beta, pair);
}

double pair_loss(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                 const DpoConfig& cfg, const PreferencePair& pair) {
  return -log_sigmoid(logit_gap(spec, feats, theta, cfg, pair)) + cfg.loss_offset;
}

void accumulate_pair_gradient(const FeatureTable& feats, const DpoTables& tables, double beta,
                              const PreferencePair& pair, double weight, std::span<double> out) {
  const double omega = table_gap(tables, beta, pair);
  const double coef = weight * beta * sigmoid(-omega);
  accumulate_trajectory_score(feats, tables.policy, pair.minus, coef, out);
  accumulate_trajectory_score(feats, tables.policy, pair.plus, -coef, out);
}

std::vector<double> pair_gradient(const MdpSpec& spec, const FeatureTable& feats,
                                  const PolicyParams& theta, const DpoConfig& cfg,
                                  const PreferencePair& pair) {
  const DpoTables tables = precompute_dpo(spec, feats, theta, cfg);
  std::vector<double> out(feats.feature_dim, 0.0);
  accumulate_pair_gradient(feats, tables, cfg.beta, pair, 1.0, out);
  return out;
}

std::vector<double> batch_gradient(const MdpSpec& spec, const FeatureTable& feats,
                                   const PolicyParams& theta, const DpoConfig& cfg,
                                   std::span<const PreferencePair> batch) {
  if (batch.empty()) throw std::invalid_argument("batch must be nonempty");
  const DpoTables tables = precompute_dpo(spec, feats, theta, cfg);
  std::vector<double> out(feats.feature_dim, 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const PreferencePair& pair : batch)
    accumulate_pair_gradient(feats, tables, cfg.beta, pair, w, out);
  return out;
}

double batch_loss(const MdpSpec& spec, const FeatureTable& feats, const PolicyParams& theta,
                  const DpoConfig& cfg, std::span<const PreferencePair> batch) {
  if (batch.empty()) throw std::invalid_argument("batch must be nonempty");
  const DpoTables tables = precompute_dpo(spec, feats, theta, cfg);
  double total = 0.0;
  for (const PreferencePair& pair : batch)
    total += -log_sigmoid(table_gap(tables, cfg.beta, pair)) + cfg.loss_offset;
  return total / static_cast<double>(batch.size());
}

}  // namespace distdpo
