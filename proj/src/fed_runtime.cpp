#include "distdpo/fed_runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/parallel.hpp"

namespace distdpo {
namespace {

std::uint64_t client_stream_key(const FedConfig& cfg, int client) {
  return cfg.shared_client_streams ? stream_key::kSharedClient
                                   : static_cast<std::uint64_t>(client);
}

// Shared local-step loop for the dataset path and the pluggable-gradient path.
std::vector<double> run_local_steps(const GradientEnv& env, const FedConfig& cfg, int client,
                                    std::vector<double> theta, RngStream& rng) {
  for (int e = 0; e < cfg.local_steps; ++e) {
    std::vector<double> g = env.minibatch_gradient(client, theta, rng);
    clip_to_norm(g, cfg.clip_norm);
    kernels::axpy(-cfg.step_size, g, theta);
  }
  return theta;
}

}  // namespace

Weighting weighting_from_name(const std::string& name) {
  if (name == "uniform") return Weighting::uniform;
  if (name == "data_size") return Weighting::data_size;
  throw std::invalid_argument("unknown weighting: " + name);
}

std::string weighting_name(Weighting w) {
  return w == Weighting::uniform ? "uniform" : "data_size";
}

void FedConfig::validate() const {
  if (num_clients < 1) throw std::invalid_argument("num_clients must be positive");
  if (participation < 1 || participation > num_clients)
    throw std::invalid_argument("participation exceeds client count");
  if (local_steps < 1) throw std::invalid_argument("local_steps must be positive");
  if (rounds < 1) throw std::invalid_argument("rounds must be positive");
  if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (clip_norm.has_value() && !(*clip_norm > 0.0))
    throw std::invalid_argument("clip_norm must be positive when set");
  if (q_max < 0) throw std::invalid_argument("q_max must be nonnegative");
}

void clip_to_norm(std::span<double> v, const std::optional<double>& clip_norm) {
  if (!clip_norm.has_value()) return;
  const double norm = std::sqrt(kernels::sum_sq(v));
  if (norm > *clip_norm) kernels::scale(v, *clip_norm / norm);
}

std::vector<int> select_clients(int num_clients, int participation, RngStream& rng) {
  if (participation < 1 || participation > num_clients)
    throw std::invalid_argument("participation exceeds client count");
  std::vector<int> idx(num_clients);
  std::iota(idx.begin(), idx.end(), 0);
  for (int j = 0; j < participation; ++j) {
    const int pick = j + static_cast<int>(rng.uniform_int(num_clients - j));
    std::swap(idx[j], idx[pick]);
  }
  idx.resize(participation);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PolicyParams local_update(const MdpSpec& spec, const FeatureTable& feats, const ClientDataset& ds,
                          const PolicyParams& start, const FedConfig& cfg, const DpoConfig& dpo,
                          RngStream& rng) {
  cfg.validate();
  PolicyParams theta = start;
  for (int e = 0; e < cfg.local_steps; ++e) {
    const std::vector<PreferencePair> batch = sample_minibatch(ds, cfg.batch_size, rng);
    std::vector<double> g = batch_gradient(spec, feats, theta, dpo, batch);
    clip_to_norm(g, cfg.clip_norm);
    kernels::axpy(-cfg.step_size, g, theta.theta);
  }
  return theta;
}

PolicyParams aggregate(const std::map<int, PolicyParams>& updates, Weighting weighting,
                       std::span<const int> data_sizes) {
  if (updates.empty()) throw std::invalid_argument("aggregate needs at least one update");
  double total = 0.0;
  if (weighting == Weighting::data_size) {
    for (const auto& [client, _] : updates) {
      if (client < 0 || client >= static_cast<int>(data_sizes.size()))
        throw std::invalid_argument("missing dataset size for client");
      total += static_cast<double>(data_sizes[client]);
    }
    if (!(total > 0.0)) throw std::invalid_argument("data_size weighting needs positive sizes");
  }
  const std::size_t dim = updates.begin()->second.theta.size();
  PolicyParams out{std::vector<double>(dim, 0.0)};
  for (const auto& [client, params] : updates) {
    if (params.theta.size() != dim)
      throw std::invalid_argument("update dimensions disagree");
    const double lambda = weighting == Weighting::uniform
                              ? 1.0 / static_cast<double>(updates.size())
                              : static_cast<double>(data_sizes[client]) / total;
    kernels::axpy(lambda, params.theta, out.theta);
  }
  return out;
}

double measure_drift(const ServerState& server, int k) {
  if (k < 0 || k >= static_cast<int>(server.history.size()))
    throw std::invalid_argument("drift lag outside recorded history");
  return std::sqrt(kernels::dist_sq(server.history.front(), server.history[k]));
}

GradientEnv make_dpo_gradient_env(const MdpSpec& spec, const FeatureTable& feats,
                                  std::span<const ClientDataset> clients, const DpoConfig& dpo,
                                  int batch_size, Weighting weighting) {
  if (clients.empty()) throw std::invalid_argument("at least one client dataset required");
  dpo.validate();

  GradientEnv env;
  env.dim = feats.feature_dim;
  env.num_clients = static_cast<int>(clients.size());
  double total_pairs = 0.0;
  for (const ClientDataset& ds : clients) {
    env.data_sizes.push_back(static_cast<int>(ds.pairs.size()));
    total_pairs += static_cast<double>(ds.pairs.size());
  }
  std::vector<double> lambdas(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i)
    lambdas[i] = weighting == Weighting::uniform
                     ? 1.0 / static_cast<double>(clients.size())
                     : static_cast<double>(clients[i].pairs.size()) / total_pairs;

  // The span's backing storage outlives the env in every call path (datasets
  // are owned by the caller for the duration of the run).
  const ClientDataset* data = clients.data();
  const std::size_t n = clients.size();

  env.minibatch_gradient = [&spec, &feats, dpo, batch_size, data](
                               int client, std::span<const double> theta, RngStream& rng) {
    std::vector<PreferencePair> batch = sample_minibatch(data[client], batch_size, rng);
    return batch_gradient(spec, feats, PolicyParams{{theta.begin(), theta.end()}}, dpo, batch);
  };
  env.global_gradient = [&spec, &feats, dpo, data, n, lambdas](std::span<const double> theta) {
    const PolicyParams params{{theta.begin(), theta.end()}};
    const DpoTables tables = precompute_dpo(spec, feats, params, dpo);
    std::vector<double> out(feats.feature_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double w = lambdas[i] / static_cast<double>(data[i].pairs.size());
      for (const PreferencePair& pair : data[i].pairs)
        accumulate_pair_gradient(feats, tables, dpo.beta, pair, w, out);
    }
    return out;
  };
  env.global_loss = [&spec, &feats, dpo, data, n, lambdas](std::span<const double> theta) {
    const PolicyParams params{{theta.begin(), theta.end()}};
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      total += lambdas[i] * batch_loss(spec, feats, params, dpo, data[i].pairs);
    return total;
  };
  return env;
}

std::vector<RoundMetrics> run_feddpo(const GradientEnv& env, const FedConfig& cfg,
                                     const PolicyParams& init, RngStream& rng, int workers,
                                     const FedObserver& observer) {
  cfg.validate();
  if (env.num_clients != cfg.num_clients)
    throw std::invalid_argument("gradient env does not match num_clients");
  if (static_cast<int>(init.theta.size()) != env.dim)
    throw std::invalid_argument("init parameter length does not match env dim");

  ServerState server;
  server.theta = init;
  server.history.push_front(init.theta);
  server.round = 0;

  std::vector<RoundMetrics> metrics;
  metrics.reserve(cfg.rounds);

  for (int r = 0; r < cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();

    RoundMetrics row;
    row.round = r;
    row.grad_norm_sq = kernels::sum_sq(env.global_gradient(server.theta.theta));
    row.loss = env.global_loss(server.theta.theta);

    RngStream select_rng = rng.split(stream_key::kClientSelect, static_cast<std::uint64_t>(r));
    const std::vector<int> selected =
        select_clients(cfg.num_clients, cfg.participation, select_rng);

    std::vector<int> stale(selected.size(), 0);
    if (cfg.q_max > 0) {
      const int max_q = std::min(r, cfg.q_max);
      for (std::size_t i = 0; i < selected.size(); ++i) {
        RngStream q_rng = rng.split(stream_key::kStaleness, static_cast<std::uint64_t>(r),
                                    static_cast<std::uint64_t>(selected[i]));
        stale[i] = static_cast<int>(q_rng.uniform_int(static_cast<std::uint64_t>(max_q) + 1));
      }
    }

    std::vector<std::vector<double>> results(selected.size());
    parallel_for(static_cast<int>(selected.size()), workers, [&](int i) {
      const int client = selected[i];
      RngStream local_rng = rng.split(stream_key::kLocalStep, static_cast<std::uint64_t>(r),
                                      client_stream_key(cfg, client));
      results[i] = run_local_steps(env, cfg, client, server.history[stale[i]], local_rng);
    });

    // Stale rounds aggregate uniformly; otherwise the configured weighting.
    std::map<int, PolicyParams> updates;
    for (std::size_t i = 0; i < selected.size(); ++i)
      updates.emplace(selected[i], PolicyParams{std::move(results[i])});
    const Weighting w = cfg.q_max > 0 ? Weighting::uniform : cfg.weighting;
    server.theta = aggregate(updates, w, env.data_sizes);

    server.history.push_front(server.theta.theta);
    while (static_cast<int>(server.history.size()) > cfg.q_max + 1) server.history.pop_back();
    server.round = r + 1;

    row.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    metrics.push_back(row);
    if (observer) observer(server, metrics.back());
  }
  return metrics;
}

std::vector<RoundMetrics> run_feddpo(const MdpSpec& spec, const FeatureTable& feats,
                                     std::span<const ClientDataset> clients, const FedConfig& cfg,
                                     const DpoConfig& dpo, RngStream& rng, int workers,
                                     const FedObserver& observer) {
  const GradientEnv env =
      make_dpo_gradient_env(spec, feats, clients, dpo, cfg.batch_size, cfg.weighting);
  const PolicyParams init{std::vector<double>(feats.feature_dim, 0.0)};
  return run_feddpo(env, cfg, init, rng, workers, observer);
}

}  // namespace distdpo
