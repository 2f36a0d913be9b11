#include "distdpo/theory_constants.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "distdpo/kernels.hpp"

namespace distdpo {
namespace {

struct ScoredTrajectory {
  Trajectory traj;
  std::vector<double> scores;  // H rows of length d
};

ScoredTrajectory sample_scored(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyTables& score_tables, const PolicyParams& sampler,
                               RngStream& rng) {
  ScoredTrajectory out;
  out.traj = sample_trajectory(spec, feats, sampler, rng);
  const int d = feats.feature_dim;
  out.scores.assign(static_cast<std::size_t>(spec.horizon) * d, 0.0);
  for (int h = 0; h < spec.horizon; ++h) {
    const Step& st = out.traj.steps[h];
    std::span<double> row{out.scores.data() + static_cast<std::size_t>(h) * d,
                          static_cast<std::size_t>(d)};
    kernels::axpy(1.0, feats.row(st.state, st.action), row);
    kernels::axpy(-1.0, score_tables.mean_phi_row(st.state), row);
  }
  return out;
}

struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
};

OlsFit fit_line(std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  OlsFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = y[i] - fit.intercept - fit.slope * x[i];
      rss += r * r;
    }
    const double s2 = rss / (n - 2);
    fit.slope_se = std::sqrt(s2 / sxx);
    fit.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  return fit;
}

}  // namespace

ZetaPhiEstimate estimate_zeta_phi_sq(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, int num_samples, RngStream& rng,
                                     const PolicyParams* sampling_theta) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be positive");
  const PolicyParams& sampler = sampling_theta != nullptr ? *sampling_theta : theta;
  const PolicyTables tables = precompute_policy(spec, feats, theta);

  const int H = spec.horizon;
  std::vector<double> sum(H, 0.0), sum_sq(H, 0.0);
  for (int i = 0; i < num_samples; ++i) {
    RngStream sub = rng.split(stream_key::kMonteCarlo, static_cast<std::uint64_t>(i));
    const Trajectory traj = sample_trajectory(spec, feats, sampler, sub);
    for (int h = 0; h < H; ++h) {
      const Step& st = traj.steps[h];
      const double v =
          kernels::dist_sq(feats.row(st.state, st.action), tables.mean_phi_row(st.state));
      sum[h] += v;
      sum_sq[h] += v * v;
    }
  }

  ZetaPhiEstimate est;
  est.num_samples = num_samples;
  for (int h = 0; h < H; ++h) {
    const double mean = sum[h] / num_samples;
    const double var = std::max(0.0, sum_sq[h] / num_samples - mean * mean);
    const double se = std::sqrt(var / num_samples);
    est.value = std::max(est.value, mean);
    est.ucb = std::max(est.ucb, mean + 3.0 * se);
  }
  for (int s = 0; s < spec.num_states; ++s)
    for (int a = 0; a < spec.num_actions; ++a)
      est.pointwise_bound = std::max(
          est.pointwise_bound, kernels::dist_sq(feats.row(s, a), tables.mean_phi_row(s)));
  return est;
}

MixingEstimate estimate_mixing(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta, int num_samples, RngStream& rng,
                               const PolicyParams* sampling_theta) {
  if (spec.horizon < 2) throw std::invalid_argument("mixing estimation needs horizon >= 2");
  if (num_samples < 1) throw std::invalid_argument("num_samples must be positive");
  const PolicyParams& sampler = sampling_theta != nullptr ? *sampling_theta : theta;
  const PolicyTables tables = precompute_policy(spec, feats, theta);

  const int H = spec.horizon;
  const int d = feats.feature_dim;
  const int max_lag = H - 1;
  std::vector<double> lag_sum(max_lag, 0.0);
  double zeta_acc = 0.0;
  std::vector<double> step_mean(H, 0.0);

  for (int i = 0; i < num_samples; ++i) {
    RngStream sub = rng.split(stream_key::kMonteCarlo, static_cast<std::uint64_t>(i));
    const ScoredTrajectory st = sample_scored(spec, feats, tables, sampler, sub);
    for (int h = 0; h < H; ++h) {
      std::span<const double> row{st.scores.data() + static_cast<std::size_t>(h) * d,
                                  static_cast<std::size_t>(d)};
      step_mean[h] += kernels::sum_sq(row);
    }
    for (int k = 1; k <= max_lag; ++k) {
      double acc = 0.0;
      for (int h = 0; h + k < H; ++h) {
        std::span<const double> a{st.scores.data() + static_cast<std::size_t>(h) * d,
                                  static_cast<std::size_t>(d)};
        std::span<const double> b{st.scores.data() + static_cast<std::size_t>(h + k) * d,
                                  static_cast<std::size_t>(d)};
        acc += kernels::dot(a, b);
      }
      lag_sum[k - 1] += acc / (H - k);
    }
  }

  for (int h = 0; h < H; ++h) zeta_acc = std::max(zeta_acc, step_mean[h] / num_samples);

  MixingEstimate est;
  est.num_samples = num_samples;
  est.noise_floor = 3.0 / std::sqrt(static_cast<double>(num_samples)) * zeta_acc;
  est.lag_corr.resize(max_lag);
  for (int k = 0; k < max_lag; ++k) est.lag_corr[k] = lag_sum[k] / num_samples;

  std::vector<double> xs, ys;
  for (int k = 1; k <= max_lag; ++k) {
    const double c = est.lag_corr[k - 1];
    if (std::abs(c) > est.noise_floor) {
      xs.push_back(static_cast<double>(k));
      ys.push_back(std::log(std::abs(c)));
    }
  }
  if (xs.size() < 2 || zeta_acc <= 0.0) {
    est.degenerate = true;
    return est;
  }

  const OlsFit fit = fit_line(xs, ys);
  const double cap = 1.0 - 1e-6;
  est.degenerate = false;
  est.varsigma = std::clamp(std::exp(fit.slope), 0.0, cap);
  est.c0 = std::max(1.0, std::exp(fit.intercept) / zeta_acc);
  est.varsigma_ucb = std::clamp(std::exp(fit.slope + 3.0 * fit.slope_se), 0.0, cap);
  est.c0_ucb = std::max(1.0, std::exp(fit.intercept + 3.0 * fit.intercept_se) / zeta_acc);
  return est;
}

double mixing_factor(double c0, double varsigma) {
  if (!(c0 >= 1.0) || !(varsigma >= 0.0) || !(varsigma < 1.0))
    throw std::invalid_argument("mixing_factor needs c0 >= 1 and varsigma in [0,1)");
  return 1.0 + 2.0 * c0 * varsigma / (1.0 - varsigma);
}

double smoothness_constant(double beta, double c_mix, double zeta_phi_sq, int horizon) {
  if (!(beta > 0.0) || !(c_mix >= 1.0) || !(zeta_phi_sq >= 0.0) || horizon < 1)
    throw std::invalid_argument("invalid smoothness inputs");
  return (beta * beta * c_mix + 2.0 * beta) * zeta_phi_sq * horizon;
}

double variance_bound(double beta, double c_mix, double zeta_phi_sq, int horizon) {
  if (!(beta > 0.0) || !(c_mix >= 1.0) || !(zeta_phi_sq >= 0.0) || horizon < 1)
    throw std::invalid_argument("invalid variance-bound inputs");
  return 4.0 * beta * beta * c_mix * zeta_phi_sq * horizon;
}

double estimate_kappa_sq(std::span<const ClientDataset> clients, const MdpSpec& spec,
                         const FeatureTable& feats, const PolicyParams& theta,
                         const DpoConfig& cfg) {
  if (clients.size() < 2) throw std::invalid_argument("kappa estimation needs at least 2 clients");
  const int d = feats.feature_dim;
  std::vector<std::vector<double>> grads;
  grads.reserve(clients.size());
  double total_pairs = 0.0;
  for (const ClientDataset& ds : clients) {
    grads.push_back(batch_gradient(spec, feats, theta, cfg, ds.pairs));
    total_pairs += static_cast<double>(ds.pairs.size());
  }
  std::vector<double> global(d, 0.0);
  for (std::size_t i = 0; i < clients.size(); ++i)
    kernels::axpy(static_cast<double>(clients[i].pairs.size()) / total_pairs, grads[i], global);
  double acc = 0.0;
  for (const auto& g : grads) acc += kernels::dist_sq(global, g);
  return acc / static_cast<double>(clients.size());
}

std::vector<double> finite_diff_gradient(const LossFunctional& f, std::span<const double> theta,
                                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("step must be positive");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(theta.size(), 0.0);
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + step;
    const double up = f(point);
    point[i] = orig - step;
    const double down = f(point);
    point[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double spectral_norm_symmetric(std::span<const double> mat, int n, double tol) {
  if (n <= 0 || mat.size() != static_cast<std::size_t>(n) * n)
    throw std::invalid_argument("matrix shape mismatch");
  RngStream rng(0x5eed5eedULL);
  std::vector<double> v(n), w(n);
  for (double& x : v) x = rng.normal();
  double norm = std::sqrt(kernels::sum_sq(v));
  if (norm == 0.0) v[0] = norm = 1.0;
  kernels::scale(v, 1.0 / norm);

  const auto matvec = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (int i = 0; i < n; ++i)
      out[i] = kernels::dot({mat.data() + static_cast<std::size_t>(i) * n,
                             static_cast<std::size_t>(n)},
                            in);
  };

  // Iterate on the squared matrix so eigenvalue sign flips cannot stall
  // convergence; the estimate is ||B w|| at the current normalized direction.
  double sigma = 0.0;
  for (int it = 0; it < 100000; ++it) {
    matvec(v, w);
    const double s1 = std::sqrt(kernels::sum_sq(w));
    if (s1 == 0.0) return 0.0;
    kernels::scale(w, 1.0 / s1);
    matvec(w, v);
    const double s2 = std::sqrt(kernels::sum_sq(v));
    if (s2 == 0.0) return 0.0;
    kernels::scale(v, 1.0 / s2);
    if (std::abs(s2 - sigma) <= tol * std::max(1.0, s2)) return s2;
    sigma = s2;
  }
  return sigma;
}

double numerical_hessian_norm(const LossFunctional& f, std::span<const double> theta,
                              double step) {
  if (!(step > 0.0)) throw std::invalid_argument("step must be positive");
  const int d = static_cast<int>(theta.size());
  if (d > 64) throw std::invalid_argument("dense Hessian differencing guarded to d <= 64");
  std::vector<double> point(theta.begin(), theta.end());
  const double center = f(point);
  std::vector<double> hess(static_cast<std::size_t>(d) * d, 0.0);

  const auto eval2 = [&](int i, double di, int j, double dj) {
    point[i] += di;
    point[j] += dj;
    const double v = f(point);
    point[i] -= di;
    point[j] -= dj;
    return v;
  };

  for (int i = 0; i < d; ++i) {
    const double up = eval2(i, step, i, 0.0);
    const double down = eval2(i, -step, i, 0.0);
    hess[static_cast<std::size_t>(i) * d + i] = (up - 2.0 * center + down) / (step * step);
    for (int j = i + 1; j < d; ++j) {
      const double pp = eval2(i, step, j, step);
      const double pm = eval2(i, step, j, -step);
      const double mp = eval2(i, -step, j, step);
      const double mm = eval2(i, -step, j, -step);
      const double v = (pp - pm - mp + mm) / (4.0 * step * step);
      hess[static_cast<std::size_t>(i) * d + j] = v;
      hess[static_cast<std::size_t>(j) * d + i] = v;
    }
  }
  return spectral_norm_symmetric(hess, d);
}

nlohmann::json ConstantReport::to_json() const {
  return nlohmann::json{{"beta", beta},
                        {"horizon", horizon},
                        {"zeta_phi_sq", zeta_phi_sq},
                        {"zeta_phi_pointwise", zeta_phi_pointwise},
                        {"varsigma", varsigma},
                        {"c0", c0},
                        {"degenerate_mixing_fit", degenerate_mixing_fit},
                        {"c_mix", c_mix},
                        {"smoothness_L", smoothness_L},
                        {"zeta_g_sq", zeta_g_sq},
                        {"kappa_sq", kappa_sq},
                        {"sample_sizes", sample_sizes}};
}

ConstantReport build_constant_report(const MdpSpec& spec, const FeatureTable& feats,
                                     std::span<const ClientDataset> clients,
                                     const PolicyParams& behavior_theta,
                                     const PolicyParams& eval_theta, const DpoConfig& dpo,
                                     int num_samples, RngStream& rng) {
  ConstantReport rep;
  rep.beta = dpo.beta;
  rep.horizon = spec.horizon;

  RngStream zeta_rng = rng.split(stream_key::kMonteCarlo, 1);
  RngStream mix_rng = rng.split(stream_key::kMonteCarlo, 2);
  const ZetaPhiEstimate zeta =
      estimate_zeta_phi_sq(spec, feats, eval_theta, num_samples, zeta_rng, &behavior_theta);
  const MixingEstimate mix =
      estimate_mixing(spec, feats, eval_theta, num_samples, mix_rng, &behavior_theta);

  rep.zeta_phi_sq = zeta.value;
  rep.zeta_phi_pointwise = zeta.pointwise_bound;
  rep.varsigma = mix.varsigma;
  rep.c0 = mix.c0;
  rep.degenerate_mixing_fit = mix.degenerate;
  rep.c_mix = mixing_factor(rep.c0, rep.varsigma);
  rep.smoothness_L = smoothness_constant(dpo.beta, rep.c_mix, rep.zeta_phi_sq, spec.horizon);
  rep.zeta_g_sq = variance_bound(dpo.beta, rep.c_mix, rep.zeta_phi_sq, spec.horizon);

  int total_pairs = 0;
  for (const ClientDataset& ds : clients) total_pairs += static_cast<int>(ds.pairs.size());
  if (clients.size() >= 2)
    rep.kappa_sq = estimate_kappa_sq(clients, spec, feats, eval_theta, dpo);
  rep.sample_sizes = {{"zeta_phi", num_samples},
                      {"mixing", num_samples},
                      {"kappa_pairs", total_pairs}};
  return rep;
}

nlohmann::json GradCheckReport::to_json() const {
  return nlohmann::json{{"pass", pass},
                        {"max_rel_error", max_rel_error},
                        {"num_instances", num_instances},
                        {"tolerance", tolerance}};
}

GradCheckReport run_gradient_check(int num_instances, std::uint64_t seed) {
  if (num_instances < 1) throw std::invalid_argument("num_instances must be positive");
  GradCheckReport rep;
  rep.num_instances = num_instances;
  RngStream root(seed);

  for (int k = 0; k < num_instances; ++k) {
    RngStream rng = root.split(stream_key::kInstance, static_cast<std::uint64_t>(k));

    InstanceConfig cfg;
    cfg.num_states = 2 + static_cast<int>(rng.uniform_int(4));
    cfg.num_actions = 2 + static_cast<int>(rng.uniform_int(4));
    cfg.horizon = 1 + static_cast<int>(rng.uniform_int(6));
    cfg.feature_dim = 2 + static_cast<int>(rng.uniform_int(7));
    const Instance inst = make_random_instance(cfg, rng);

    const auto draw_params = [&](double scale) {
      std::vector<double> v(static_cast<std::size_t>(cfg.feature_dim));
      for (double& x : v) x = scale * rng.normal();
      return PolicyParams{std::move(v)};
    };
    const PolicyParams theta = draw_params(0.5);
    const PolicyParams behavior = draw_params(0.2);

    DpoConfig dpo;
    dpo.beta = 0.1 + 0.4 * rng.uniform01();
    dpo.ref_theta = draw_params(0.3);

    PreferencePair pair;
    pair.plus = sample_trajectory(inst.mdp, inst.features, behavior, rng);
    pair.minus = sample_trajectory(inst.mdp, inst.features, behavior, rng);

    const std::vector<double> analytic =
        pair_gradient(inst.mdp, inst.features, theta, dpo, pair);
    const LossFunctional loss = [&](std::span<const double> t) {
      return pair_loss(inst.mdp, inst.features, PolicyParams{{t.begin(), t.end()}}, dpo, pair);
    };
    const std::vector<double> fd = finite_diff_gradient(loss, theta.theta, 1e-5);

    const double err = std::sqrt(kernels::dist_sq(analytic, fd));
    const double rel = err / std::max({std::sqrt(kernels::sum_sq(analytic)),
                                       std::sqrt(kernels::sum_sq(fd)), 1e-8});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
  }
  rep.pass = rep.max_rel_error < rep.tolerance;
  return rep;
}

}  // namespace distdpo
