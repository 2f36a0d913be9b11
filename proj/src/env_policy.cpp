#include "distdpo/env_policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "distdpo/kernels.hpp"

namespace distdpo {
namespace {

void check_positive(int v, const char* what) {
  if (v <= 0) throw std::invalid_argument(std::string(what) + " must be positive");
}

void check_distribution(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + " has a negative entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + " does not sum to 1");
}

void check_state(const MdpSpec& spec, int state) {
  if (state < 0 || state >= spec.num_states) throw std::invalid_argument("state index out of range");
}

void check_step(const MdpSpec& spec, const Step& st) {
  if (st.state < 0 || st.state >= spec.num_states || st.action < 0 ||
      st.action >= spec.num_actions)
    throw std::invalid_argument("trajectory step out of range");
}

std::vector<double> state_logits(const MdpSpec& spec, const FeatureTable& feats,
                                 const PolicyParams& theta, int state) {
  check_state(spec, state);
  if (static_cast<int>(theta.theta.size()) != feats.feature_dim)
    throw std::invalid_argument("policy parameter length does not match feature_dim");
  std::vector<double> logits(spec.num_actions);
  for (int a = 0; a < spec.num_actions; ++a) {
    const double v = kernels::dot(theta.theta, feats.row(state, a));
    if (!std::isfinite(v)) throw std::domain_error("non-finite policy logit");
    logits[a] = v;
  }
  return logits;
}

// In-place softmax with max subtraction; returns log of the normalizer so the
// caller can also form log-probabilities.
double softmax_inplace(std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : logits) v /= z;
  return m + std::log(z);
}

void fill_dirichlet1(std::span<double> row, RngStream& rng) {
  double total = 0.0;
  for (double& v : row) {
    v = -std::log(1.0 - rng.uniform01());
    total += v;
  }
  for (double& v : row) v /= total;
}

std::vector<double> json_flat_array(const nlohmann::json& node, const char* what) {
  if (!node.is_array()) throw std::invalid_argument(std::string(what) + " must be an array");
  std::vector<double> out;
  // Depth-first flatten; shape is validated against the declared sizes after.
  std::vector<const nlohmann::json*> stack{&node};
  while (!stack.empty()) {
    const nlohmann::json* cur = stack.back();
    stack.pop_back();
    if (cur->is_array()) {
      for (auto it = cur->rbegin(); it != cur->rend(); ++it) stack.push_back(&*it);
    } else if (cur->is_number()) {
      out.push_back(cur->get<double>());
    } else {
      throw std::invalid_argument(std::string(what) + " contains a non-numeric entry");
    }
  }
  return out;
}

}  // namespace

std::span<const double> MdpSpec::transition_row(int state, int action) const {
  const std::size_t offset =
      (static_cast<std::size_t>(state) * num_actions + action) * num_states;
  return {transition.data() + offset, static_cast<std::size_t>(num_states)};
}

void MdpSpec::validate() const {
  check_positive(num_states, "num_states");
  check_positive(num_actions, "num_actions");
  check_positive(horizon, "horizon");
  check_positive(feature_dim, "feature_dim");
  const std::size_t expect =
      static_cast<std::size_t>(num_states) * num_actions * num_states;
  if (transition.size() != expect) throw std::invalid_argument("transition table has wrong size");
  if (initial_dist.size() != static_cast<std::size_t>(num_states))
    throw std::invalid_argument("initial_dist has wrong size");
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) check_distribution(transition_row(s, a), "transition row");
  check_distribution(initial_dist, "initial_dist");
}

std::span<const double> FeatureTable::row(int state, int action) const {
  const std::size_t offset =
      (static_cast<std::size_t>(state) * num_actions + action) * feature_dim;
  return {phi.data() + offset, static_cast<std::size_t>(feature_dim)};
}

void FeatureTable::validate() const {
  check_positive(num_states, "num_states");
  check_positive(num_actions, "num_actions");
  check_positive(feature_dim, "feature_dim");
  if (!std::isfinite(phi_bound) || phi_bound <= 0.0)
    throw std::invalid_argument("phi_bound must be positive and finite");
  const std::size_t expect =
      static_cast<std::size_t>(num_states) * num_actions * feature_dim;
  if (phi.size() != expect) throw std::invalid_argument("feature table has wrong size");
  const double limit_sq = phi_bound * phi_bound * (1.0 + 1e-9);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      if (kernels::sum_sq(row(s, a)) > limit_sq)
        throw std::invalid_argument("feature norm exceeds phi_bound");
}

Instance make_random_instance(const InstanceConfig& cfg, RngStream& rng) {
  check_positive(cfg.num_states, "num_states");
  check_positive(cfg.num_actions, "num_actions");
  check_positive(cfg.horizon, "horizon");
  check_positive(cfg.feature_dim, "feature_dim");
  if (!(cfg.phi_bound > 0.0)) throw std::invalid_argument("phi_bound must be positive");

  Instance inst;
  inst.mdp.num_states = cfg.num_states;
  inst.mdp.num_actions = cfg.num_actions;
  inst.mdp.horizon = cfg.horizon;
  inst.mdp.feature_dim = cfg.feature_dim;
  inst.mdp.transition.resize(static_cast<std::size_t>(cfg.num_states) * cfg.num_actions *
                             cfg.num_states);
  inst.mdp.initial_dist.resize(cfg.num_states);
  for (int s = 0; s < cfg.num_states; ++s)
    for (int a = 0; a < cfg.num_actions; ++a) {
      const std::size_t offset =
          (static_cast<std::size_t>(s) * cfg.num_actions + a) * cfg.num_states;
      fill_dirichlet1({inst.mdp.transition.data() + offset,
                       static_cast<std::size_t>(cfg.num_states)},
                      rng);
    }
  fill_dirichlet1(inst.mdp.initial_dist, rng);

  inst.features.num_states = cfg.num_states;
  inst.features.num_actions = cfg.num_actions;
  inst.features.feature_dim = cfg.feature_dim;
  inst.features.phi.resize(static_cast<std::size_t>(cfg.num_states) * cfg.num_actions *
                           cfg.feature_dim);
  for (double& v : inst.features.phi) v = rng.uniform(-1.0, 1.0);

  double max_norm_sq = 0.0;
  for (int s = 0; s < cfg.num_states; ++s)
    for (int a = 0; a < cfg.num_actions; ++a)
      max_norm_sq = std::max(max_norm_sq, kernels::sum_sq(inst.features.row(s, a)));
  if (max_norm_sq == 0.0) throw std::domain_error("degenerate all-zero feature draw");
  kernels::scale(inst.features.phi, cfg.phi_bound / std::sqrt(max_norm_sq));
  inst.features.phi_bound = cfg.phi_bound;

  inst.mdp.validate();
  inst.features.validate();
  return inst;
}

std::vector<double> action_probs(const MdpSpec& spec, const FeatureTable& feats,
                                 const PolicyParams& theta, int state) {
  std::vector<double> probs = state_logits(spec, feats, theta, state);
  softmax_inplace(probs);
  return probs;
}

std::vector<double> action_log_probs(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, int state) {
  std::vector<double> logits = state_logits(spec, feats, theta, state);
  std::vector<double> scratch = logits;
  const double log_z = softmax_inplace(scratch);
  for (double& v : logits) v -= log_z;
  return logits;
}

Trajectory sample_trajectory(const MdpSpec& spec, const FeatureTable& feats,
                             const PolicyParams& theta, RngStream& rng) {
  Trajectory traj;
  traj.steps.reserve(spec.horizon);
  int state = rng.categorical(spec.initial_dist);
  for (int h = 0; h < spec.horizon; ++h) {
    const std::vector<double> probs = action_probs(spec, feats, theta, state);
    const int action = rng.categorical(probs);
    traj.steps.push_back({state, action});
    if (h + 1 < spec.horizon) state = rng.categorical(spec.transition_row(state, action));
  }
  return traj;
}

std::vector<double> step_score(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta, int state, int action) {
  if (action < 0 || action >= spec.num_actions)
    throw std::invalid_argument("action index out of range");
  const std::vector<double> probs = action_probs(spec, feats, theta, state);
  std::vector<double> out(feats.row(state, action).begin(), feats.row(state, action).end());
  for (int a = 0; a < spec.num_actions; ++a) kernels::axpy(-probs[a], feats.row(state, a), out);
  return out;
}

std::vector<double> trajectory_score(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, const Trajectory& traj) {
  std::vector<double> out(feats.feature_dim, 0.0);
  for (const Step& st : traj.steps) {
    check_step(spec, st);
    const std::vector<double> s = step_score(spec, feats, theta, st.state, st.action);
    kernels::axpy(1.0, s, out);
  }
  return out;
}

double trajectory_log_prob(const MdpSpec& spec, const FeatureTable& feats,
                           const PolicyParams& theta, const Trajectory& traj) {
  double total = 0.0;
  for (const Step& st : traj.steps) {
    check_step(spec, st);
    total += action_log_probs(spec, feats, theta, st.state)[st.action];
  }
  return total;
}

std::span<const double> PolicyTables::prob_row(int state) const {
  return {probs.data() + static_cast<std::size_t>(state) * num_actions,
          static_cast<std::size_t>(num_actions)};
}

std::span<const double> PolicyTables::log_prob_row(int state) const {
  return {log_probs.data() + static_cast<std::size_t>(state) * num_actions,
          static_cast<std::size_t>(num_actions)};
}

std::span<const double> PolicyTables::mean_phi_row(int state) const {
  return {mean_phi.data() + static_cast<std::size_t>(state) * feature_dim,
          static_cast<std::size_t>(feature_dim)};
}

PolicyTables precompute_policy(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta) {
  PolicyTables t;
  t.num_states = spec.num_states;
  t.num_actions = spec.num_actions;
  t.feature_dim = feats.feature_dim;
  t.probs.resize(static_cast<std::size_t>(spec.num_states) * spec.num_actions);
  t.log_probs.resize(t.probs.size());
  t.mean_phi.assign(static_cast<std::size_t>(spec.num_states) * feats.feature_dim, 0.0);
  for (int s = 0; s < spec.num_states; ++s) {
    const std::vector<double> lp = action_log_probs(spec, feats, theta, s);
    std::span<double> mean{t.mean_phi.data() + static_cast<std::size_t>(s) * feats.feature_dim,
                           static_cast<std::size_t>(feats.feature_dim)};
    for (int a = 0; a < spec.num_actions; ++a) {
      const double p = std::exp(lp[a]);
      t.log_probs[static_cast<std::size_t>(s) * spec.num_actions + a] = lp[a];
      t.probs[static_cast<std::size_t>(s) * spec.num_actions + a] = p;
      kernels::axpy(p, feats.row(s, a), mean);
    }
  }
  return t;
}

double trajectory_log_prob(const PolicyTables& tables, const Trajectory& traj) {
  double total = 0.0;
  for (const Step& st : traj.steps)
    total += tables.log_prob_row(st.state)[st.action];
  return total;
}

void accumulate_trajectory_score(const FeatureTable& feats, const PolicyTables& tables,
                                 const Trajectory& traj, double weight, std::span<double> out) {
  for (const Step& st : traj.steps) {
    kernels::axpy(weight, feats.row(st.state, st.action), out);
    kernels::axpy(-weight, tables.mean_phi_row(st.state), out);
  }
}

nlohmann::json instance_to_json(const Instance& inst) {
  const MdpSpec& m = inst.mdp;
  const FeatureTable& f = inst.features;
  nlohmann::json transition = nlohmann::json::array();
  for (int s = 0; s < m.num_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < m.num_actions; ++a) {
      auto row = m.transition_row(s, a);
      per_action.push_back(std::vector<double>(row.begin(), row.end()));
    }
    transition.push_back(std::move(per_action));
  }
  nlohmann::json phi = nlohmann::json::array();
  for (int s = 0; s < f.num_states; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < f.num_actions; ++a) {
      auto row = f.row(s, a);
      per_action.push_back(std::vector<double>(row.begin(), row.end()));
    }
    phi.push_back(std::move(per_action));
  }
  return nlohmann::json{{"num_states", m.num_states},   {"num_actions", m.num_actions},
                        {"horizon", m.horizon},         {"feature_dim", m.feature_dim},
                        {"transition", std::move(transition)},
                        {"initial_dist", m.initial_dist},
                        {"phi", std::move(phi)}};
}

Instance instance_from_json(const nlohmann::json& doc) {
  static const char* kFields[] = {"num_states",  "num_actions", "horizon", "feature_dim",
                                  "transition",  "initial_dist", "phi"};
  if (!doc.is_object()) throw std::invalid_argument("instance document must be an object");
  for (const char* f : kFields)
    if (!doc.contains(f)) throw std::invalid_argument(std::string("instance missing field ") + f);
  for (const auto& [key, _] : doc.items()) {
    bool known = false;
    for (const char* f : kFields) known = known || key == f;
    if (!known) throw std::invalid_argument("unknown instance field " + key);
  }

  Instance inst;
  inst.mdp.num_states = doc.at("num_states").get<int>();
  inst.mdp.num_actions = doc.at("num_actions").get<int>();
  inst.mdp.horizon = doc.at("horizon").get<int>();
  inst.mdp.feature_dim = doc.at("feature_dim").get<int>();
  inst.mdp.transition = json_flat_array(doc.at("transition"), "transition");
  inst.mdp.initial_dist = json_flat_array(doc.at("initial_dist"), "initial_dist");

  inst.features.num_states = inst.mdp.num_states;
  inst.features.num_actions = inst.mdp.num_actions;
  inst.features.feature_dim = inst.mdp.feature_dim;
  inst.features.phi = json_flat_array(doc.at("phi"), "phi");

  inst.mdp.validate();
  const std::size_t expect = static_cast<std::size_t>(inst.mdp.num_states) *
                             inst.mdp.num_actions * inst.mdp.feature_dim;
  if (inst.features.phi.size() != expect)
    throw std::invalid_argument("feature table has wrong size");
  double max_norm_sq = 0.0;
  for (int s = 0; s < inst.features.num_states; ++s)
    for (int a = 0; a < inst.features.num_actions; ++a)
      max_norm_sq = std::max(max_norm_sq, kernels::sum_sq(inst.features.row(s, a)));
  if (max_norm_sq == 0.0) throw std::invalid_argument("feature table is all zero");
  inst.features.phi_bound = std::sqrt(max_norm_sq);
  inst.features.validate();
  return inst;
}

}  // namespace distdpo
