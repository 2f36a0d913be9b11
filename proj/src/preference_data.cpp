#include "distdpo/preference_data.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/math_util.hpp"

namespace distdpo {

void HeterogeneityConfig::validate(int feature_dim) const {
  if (!base_weights.empty() && static_cast<int>(base_weights.size()) != feature_dim)
    throw std::invalid_argument("base_weights length does not match feature_dim");
  if (!(perturbation_scale >= 0.0))
    throw std::invalid_argument("perturbation_scale must be nonnegative");
  if (pairs_per_client <= 0) throw std::invalid_argument("pairs_per_client must be positive");
}

double trajectory_return(const FeatureTable& feats, std::span<const double> weights,
                         const Trajectory& traj) {
  if (static_cast<int>(weights.size()) != feats.feature_dim)
    throw std::invalid_argument("reward weight length does not match feature_dim");
  double total = 0.0;
  for (const Step& st : traj.steps) total += kernels::dot(weights, feats.row(st.state, st.action));
  return total;
}

ClientDataset generate_client_dataset(const MdpSpec& spec, const FeatureTable& feats,
                                      const PolicyParams& behavior_theta,
                                      const HeterogeneityConfig& cfg, int client_id,
                                      RngStream& rng) {
  cfg.validate(feats.feature_dim);
  if (client_id < 0) throw std::invalid_argument("client_id must be nonnegative");

  ClientDataset ds;
  ds.client_id = client_id;
  ds.reward_weights.assign(feats.feature_dim, 0.0);
  if (!cfg.base_weights.empty())
    std::copy(cfg.base_weights.begin(), cfg.base_weights.end(), ds.reward_weights.begin());

  // Per-client unit direction; drawn even at scale zero so the trajectory
  // draws that follow line up across perturbation sweeps.
  std::vector<double> direction(feats.feature_dim);
  for (double& v : direction) v = rng.normal();
  const double norm = std::sqrt(kernels::sum_sq(direction));
  if (norm > 0.0) kernels::scale(direction, 1.0 / norm);
  kernels::axpy(cfg.perturbation_scale, direction, ds.reward_weights);

  ds.pairs.reserve(cfg.pairs_per_client);
  for (int j = 0; j < cfg.pairs_per_client; ++j) {
    Trajectory a = sample_trajectory(spec, feats, behavior_theta, rng);
    Trajectory b = sample_trajectory(spec, feats, behavior_theta, rng);
    const double gap = trajectory_return(feats, ds.reward_weights, a) -
                       trajectory_return(feats, ds.reward_weights, b);
    const bool a_preferred = rng.uniform01() < sigmoid(gap);
    if (a_preferred)
      ds.pairs.push_back({std::move(a), std::move(b)});
    else
      ds.pairs.push_back({std::move(b), std::move(a)});
  }
  return ds;
}

std::vector<PreferencePair> sample_minibatch(const ClientDataset& ds, int batch_size,
                                             RngStream& rng) {
  const int n = static_cast<int>(ds.pairs.size());
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (batch_size > n) throw std::invalid_argument("batch_size exceeds dataset size");
  std::vector<PreferencePair> batch;
  batch.reserve(batch_size);
  for (int j = 0; j < batch_size; ++j)
    batch.push_back(ds.pairs[rng.uniform_int(static_cast<std::uint64_t>(n))]);
  return batch;
}

namespace {

nlohmann::json traj_to_json(const Trajectory& traj) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Step& st : traj.steps) arr.push_back({st.state, st.action});
  return arr;
}

Trajectory traj_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw std::invalid_argument("trajectory must be an array of steps");
  Trajectory traj;
  for (const auto& step : arr) {
    if (!step.is_array() || step.size() != 2)
      throw std::invalid_argument("trajectory step must be a [state, action] pair");
    traj.steps.push_back({step[0].get<int>(), step[1].get<int>()});
  }
  return traj;
}

}  // namespace

std::string pairs_to_jsonl(std::span<const PreferencePair> pairs) {
  std::ostringstream out;
  for (const PreferencePair& p : pairs) {
    out << nlohmann::json{{"plus", traj_to_json(p.plus)}, {"minus", traj_to_json(p.minus)}}.dump()
        << '\n';
  }
  return out.str();
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
  std::vector<PreferencePair> pairs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json doc = nlohmann::json::parse(line);
    if (!doc.is_object() || !doc.contains("plus") || !doc.contains("minus"))
      throw std::invalid_argument("pair line must contain plus and minus trajectories");
    pairs.push_back({traj_from_json(doc.at("plus")), traj_from_json(doc.at("minus"))});
  }
  return pairs;
}

}  // namespace distdpo
