#include "distdpo/dec_runtime.hpp"

#include <chrono>
#include <stdexcept>

#include "distdpo/kernels.hpp"
#include "distdpo/parallel.hpp"

namespace distdpo {

void DecConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("rounds must be positive");
  if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (local_steps_per_round < 1)
    throw std::invalid_argument("local_steps_per_round must be positive");
  if (clip_norm.has_value() && !(*clip_norm > 0.0))
    throw std::invalid_argument("clip_norm must be positive when set");
}

std::vector<double> NodeStates::network_average() const {
  if (thetas.empty()) throw std::invalid_argument("no node states");
  std::vector<double> avg(thetas.front().size(), 0.0);
  for (const std::vector<double>& theta : thetas) {
    if (theta.size() != avg.size()) throw std::invalid_argument("node dimensions disagree");
    kernels::axpy(1.0, theta, avg);
  }
  kernels::scale(avg, 1.0 / static_cast<double>(thetas.size()));
  return avg;
}

NodeStates mix(const NodeStates& states, const MixingMatrix& m) {
  const int n = static_cast<int>(states.thetas.size());
  if (n != m.n) throw std::invalid_argument("node count does not match mixing matrix");
  NodeStates out;
  out.round = states.round;
  out.thetas.resize(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> mixed(states.thetas[0].size(), 0.0);
    for (int j = 0; j < n; ++j) {
      const double w = m.at(i, j);
      if (w != 0.0) kernels::axpy(w, states.thetas[j], mixed);
    }
    out.thetas[i] = std::move(mixed);
  }
  return out;
}

double consensus_error(const NodeStates& states) {
  if (states.thetas.empty()) throw std::invalid_argument("no node states");
  const std::vector<double> avg = states.network_average();
  double total = 0.0;
  for (const std::vector<double>& theta : states.thetas)
    total += kernels::dist_sq(theta, avg);
  return total / static_cast<double>(states.thetas.size());
}

DecRunResult run_decdpo(const GradientEnv& env, const DecConfig& cfg, const MixingMatrix& mixing,
                        const PolicyParams& init, RngStream& rng, int workers,
                        const DecObserver& observer) {
  cfg.validate();
  const int n = env.num_clients;
  if (n != mixing.n) throw std::invalid_argument("gradient env does not match mixing matrix");
  if (static_cast<int>(init.theta.size()) != env.dim)
    throw std::invalid_argument("init parameter length does not match env dim");

  NodeStates states;
  states.thetas.assign(static_cast<std::size_t>(n), init.theta);
  states.round = 0;

  DecRunResult result;
  result.metrics.reserve(cfg.rounds);
  result.traces.reserve(cfg.rounds);

  for (int r = 0; r < cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();

    RoundMetrics row;
    row.round = r;
    const std::vector<double> avg = states.network_average();
    row.grad_norm_sq = kernels::sum_sq(env.global_gradient(avg));
    row.loss = env.global_loss(avg);
    row.consensus_error = consensus_error(states);

    DecRoundTrace trace;
    trace.round = r;
    trace.consensus_before = *row.consensus_error;

    // Per node: (k-1) plain steps, then the gradient that enters the mix,
    // evaluated at the pre-mix parameters.
    NodeStates premix;
    premix.round = r;
    premix.thetas.resize(n);
    std::vector<std::vector<double>> mix_grads(n);
    std::vector<std::vector<double>> applied_sums(n);
    parallel_for(n, workers, [&](int i) {
      RngStream node_rng = rng.split(
          stream_key::kLocalStep, static_cast<std::uint64_t>(r),
          cfg.shared_client_streams ? stream_key::kSharedClient : static_cast<std::uint64_t>(i));
      std::vector<double> theta = states.thetas[i];
      std::vector<double> applied(theta.size(), 0.0);
      for (int e = 0; e + 1 < cfg.local_steps_per_round; ++e) {
        std::vector<double> g = env.minibatch_gradient(i, theta, node_rng);
        clip_to_norm(g, cfg.clip_norm);
        kernels::axpy(-cfg.step_size, g, theta);
        kernels::axpy(1.0, g, applied);
      }
      std::vector<double> g = env.minibatch_gradient(i, theta, node_rng);
      clip_to_norm(g, cfg.clip_norm);
      kernels::axpy(1.0, g, applied);
      premix.thetas[i] = std::move(theta);
      mix_grads[i] = std::move(g);
      applied_sums[i] = std::move(applied);
    });

    trace.consensus_premix = consensus_error(premix);
    std::vector<double> mix_grad_mean(env.dim, 0.0);
    for (int i = 0; i < n; ++i) kernels::axpy(1.0 / n, mix_grads[i], mix_grad_mean);
    double dev = 0.0;
    for (int i = 0; i < n; ++i) dev += kernels::dist_sq(mix_grads[i], mix_grad_mean);
    trace.mix_grad_deviation_sq = dev / static_cast<double>(n);
    trace.mean_applied_gradient.assign(env.dim, 0.0);
    for (int i = 0; i < n; ++i) kernels::axpy(1.0 / n, applied_sums[i], trace.mean_applied_gradient);

    states = mix(premix, mixing);
    for (int i = 0; i < n; ++i)
      kernels::axpy(-cfg.step_size, mix_grads[i], states.thetas[i]);
    states.round = r + 1;

    trace.consensus_after = consensus_error(states);
    row.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(row);
    result.traces.push_back(std::move(trace));
    if (observer) observer(states, result.metrics.back());
  }
  return result;
}

DecRunResult run_decdpo(const MdpSpec& spec, const FeatureTable& feats,
                        std::span<const ClientDataset> clients, const DecConfig& cfg,
                        const DpoConfig& dpo, RngStream& rng, int workers,
                        const DecObserver& observer) {
  const GradientEnv env =
      make_dpo_gradient_env(spec, feats, clients, dpo, cfg.batch_size, Weighting::uniform);
  const MixingMatrix mixing =
      build_mixing(cfg.topology, static_cast<int>(clients.size()), cfg.scheme);
  const PolicyParams init{std::vector<double>(feats.feature_dim, 0.0)};
  return run_decdpo(env, cfg, mixing, init, rng, workers, observer);
}

}  // namespace distdpo
