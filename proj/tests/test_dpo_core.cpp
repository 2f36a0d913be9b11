#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "distdpo/dpo_core.hpp"
#include "distdpo/kernels.hpp"
#include "distdpo/math_util.hpp"

using namespace distdpo;

namespace {

// One state, two actions, phi = (+1) and (-1) in one dimension, H = 1.
Instance bandit() {
  Instance inst;
  inst.mdp.num_states = 1;
  inst.mdp.num_actions = 2;
  inst.mdp.horizon = 1;
  inst.mdp.feature_dim = 1;
  inst.mdp.initial_dist = {1.0};
  inst.mdp.transition = {1.0, 1.0};
  inst.features.num_states = 1;
  inst.features.num_actions = 2;
  inst.features.feature_dim = 1;
  inst.features.phi = {1.0, -1.0};
  inst.features.phi_bound = 1.0;
  inst.mdp.validate();
  inst.features.validate();
  return inst;
}

PreferencePair bandit_pair() {
  PreferencePair p;
  p.plus.steps = {{0, 0}};
  p.minus.steps = {{0, 1}};
  return p;
}

struct Setup {
  Instance inst;
  DpoConfig cfg;
  PolicyParams theta;
  std::vector<PreferencePair> pairs;
};

Setup random_setup(std::uint64_t seed, int num_pairs) {
  RngStream rng(seed);
  Setup s;
  s.inst = make_random_instance(InstanceConfig{}, rng);
  const int d = s.inst.mdp.feature_dim;
  s.cfg.beta = 0.2;
  s.cfg.ref_theta.theta.resize(d);
  s.theta.theta.resize(d);
  for (double& x : s.cfg.ref_theta.theta) x = 0.3 * rng.normal();
  for (double& x : s.theta.theta) x = 0.5 * rng.normal();
  HeterogeneityConfig hcfg;
  hcfg.base_weights = std::vector<double>(d, 0.0);
  hcfg.base_weights[0] = 2.0;
  hcfg.perturbation_scale = 0.0;
  hcfg.pairs_per_client = num_pairs;
  PolicyParams behavior{std::vector<double>(d, 0.0)};
  ClientDataset ds =
      generate_client_dataset(s.inst.mdp, s.inst.features, behavior, hcfg, 0, rng);
  s.pairs = std::move(ds.pairs);
  return s;
}

}  // namespace

TEST_CASE("logit gap vanishes at the reference and for identical trajectories") {
  Setup s = random_setup(1, 8);
  for (const PreferencePair& p : s.pairs) {
    CHECK(std::fabs(logit_gap(s.inst.mdp, s.inst.features, s.cfg.ref_theta, s.cfg, p)) < 1e-12);
    PreferencePair same{p.plus, p.plus};
    CHECK(std::fabs(logit_gap(s.inst.mdp, s.inst.features, s.theta, s.cfg, same)) < 1e-12);
  }
}

TEST_CASE("logit gap is linear in the preference strength") {
  Setup s = random_setup(2, 8);
  DpoConfig unit = s.cfg;
  unit.beta = 1.0;
  for (const PreferencePair& p : s.pairs) {
    double base = logit_gap(s.inst.mdp, s.inst.features, s.theta, unit, p);
    CHECK(logit_gap(s.inst.mdp, s.inst.features, s.theta, s.cfg, p) ==
          doctest::Approx(0.2 * base).epsilon(1e-12));
  }
}

TEST_CASE("logit gap matches the log-probability definition") {
  Setup s = random_setup(3, 8);
  for (const PreferencePair& p : s.pairs) {
    double expected =
        s.cfg.beta *
        ((trajectory_log_prob(s.inst.mdp, s.inst.features, s.theta, p.plus) -
          trajectory_log_prob(s.inst.mdp, s.inst.features, s.theta, p.minus)) -
         (trajectory_log_prob(s.inst.mdp, s.inst.features, s.cfg.ref_theta, p.plus) -
          trajectory_log_prob(s.inst.mdp, s.inst.features, s.cfg.ref_theta, p.minus)));
    CHECK(logit_gap(s.inst.mdp, s.inst.features, s.theta, s.cfg, p) ==
          doctest::Approx(expected).epsilon(1e-11));
    DpoTables tables = precompute_dpo(s.inst.mdp, s.inst.features, s.theta, s.cfg);
    CHECK(logit_gap(tables, s.cfg.beta, p) == doctest::Approx(expected).epsilon(1e-11));
  }
}

TEST_CASE("pair loss is the logistic loss of the gap") {
  Setup s = random_setup(4, 12);
  for (const PreferencePair& p : s.pairs) {
    double omega = logit_gap(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
    double naive = -std::log(1.0 / (1.0 + std::exp(-omega)));
    CHECK(pair_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, p) ==
          doctest::Approx(naive).epsilon(1e-12));
    CHECK(pair_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, p) ==
          doctest::Approx(-log_sigmoid(omega)).epsilon(1e-14));
  }
  // At the reference, omega = 0 so the loss is ln 2.
  CHECK(pair_loss(s.inst.mdp, s.inst.features, s.cfg.ref_theta, s.cfg, s.pairs[0]) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss offset shifts the loss without touching the gradient") {
  Setup s = random_setup(5, 6);
  DpoConfig shifted = s.cfg;
  shifted.loss_offset = 0.7;
  for (const PreferencePair& p : s.pairs) {
    CHECK(pair_loss(s.inst.mdp, s.inst.features, s.theta, shifted, p) ==
          doctest::Approx(pair_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, p) + 0.7)
              .epsilon(1e-12));
    auto g0 = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
    auto g1 = pair_gradient(s.inst.mdp, s.inst.features, s.theta, shifted, p);
    CHECK(g0 == g1);
  }
}

TEST_CASE("saturated preferences drive the loss to zero") {
  Instance inst = bandit();
  DpoConfig cfg;
  cfg.beta = 1.0;
  cfg.ref_theta.theta = {0.0};
  PolicyParams strong{std::vector<double>{500.0}};
  CHECK(pair_loss(inst.mdp, inst.features, strong, cfg, bandit_pair()) < 1e-6);
  PolicyParams wrong{std::vector<double>{-40.0}};
  // Confidently wrong: loss approaches |omega| = beta * 2 * 40.
  CHECK(pair_loss(inst.mdp, inst.features, wrong, cfg, bandit_pair()) ==
        doctest::Approx(80.0).epsilon(1e-6));
}

TEST_CASE("gradient at zero gap is half the preference strength times the score gap") {
  Instance inst = bandit();
  DpoConfig cfg;
  cfg.beta = 0.2;
  cfg.ref_theta.theta = {0.0};
  PolicyParams theta{std::vector<double>{0.0}};
  auto g = pair_gradient(inst.mdp, inst.features, theta, cfg, bandit_pair());
  // score(tau+) = +1 - 0 = 1, score(tau-) = -1; sigmoid(0) = 1/2:
  // g = beta/2 * (score- - score+) = 0.1 * (-2) = -0.2.
  REQUIRE(g.size() == 1);
  CHECK(g[0] == doctest::Approx(-0.2).epsilon(1e-14));
}

TEST_CASE("gradient for identical trajectories cancels to rounding error") {
  Setup s = random_setup(6, 6);
  for (const PreferencePair& p : s.pairs) {
    PreferencePair same{p.minus, p.minus};
    auto g = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, same);
    for (double x : g) CHECK(std::fabs(x) < 1e-15);
  }
}

TEST_CASE("gradients match finite differences of the loss") {
  Setup s = random_setup(7, 10);
  const int d = s.inst.mdp.feature_dim;
  const double step = 1e-5;
  for (const PreferencePair& p : s.pairs) {
    auto analytic = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
    std::vector<double> fd(d);
    for (int k = 0; k < d; ++k) {
      PolicyParams hi = s.theta, lo = s.theta;
      hi.theta[k] += step;
      lo.theta[k] -= step;
      fd[k] = (pair_loss(s.inst.mdp, s.inst.features, hi, s.cfg, p) -
               pair_loss(s.inst.mdp, s.inst.features, lo, s.cfg, p)) /
              (2 * step);
    }
    double na = std::sqrt(kernels::sum_sq(analytic));
    double rel = std::sqrt(kernels::dist_sq(analytic, fd)) / std::max(na, 1e-8);
    CHECK(rel < 1e-6);
  }
}

TEST_CASE("accumulate matches the direct pair gradient") {
  Setup s = random_setup(8, 10);
  DpoTables tables = precompute_dpo(s.inst.mdp, s.inst.features, s.theta, s.cfg);
  for (const PreferencePair& p : s.pairs) {
    std::vector<double> acc(s.inst.mdp.feature_dim, 0.0);
    accumulate_pair_gradient(s.inst.features, tables, s.cfg.beta, p, 2.5, acc);
    auto direct = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
    kernels::scale(direct, 2.5);
    CHECK(std::sqrt(kernels::dist_sq(acc, direct)) < 1e-12);
  }
}

TEST_CASE("batch gradient and loss average over the batch") {
  Setup s = random_setup(9, 4);
  auto single = batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg,
                               std::span<const PreferencePair>(s.pairs.data(), 1));
  auto direct = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, s.pairs[0]);
  CHECK(std::sqrt(kernels::dist_sq(single, direct)) < 1e-14);

  std::vector<PreferencePair> dup{s.pairs[1], s.pairs[1]};
  auto dupg = batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, dup);
  auto one = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, s.pairs[1]);
  CHECK(std::sqrt(kernels::dist_sq(dupg, one)) < 1e-13);

  std::vector<double> mean(s.inst.mdp.feature_dim, 0.0);
  double mean_loss = 0.0;
  for (const PreferencePair& p : s.pairs) {
    kernels::axpy(0.25, pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, p), mean);
    mean_loss += 0.25 * pair_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
  }
  auto batch = batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, s.pairs);
  CHECK(std::sqrt(kernels::dist_sq(batch, mean)) < 1e-12);
  CHECK(batch_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, s.pairs) ==
        doctest::Approx(mean_loss).epsilon(1e-12));

  CHECK_THROWS_AS(
      batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, std::span<const PreferencePair>{}),
      std::invalid_argument);
  CHECK_THROWS_AS(
      batch_loss(s.inst.mdp, s.inst.features, s.theta, s.cfg, std::span<const PreferencePair>{}),
      std::invalid_argument);
}

TEST_CASE("minibatch gradients are unbiased for the dataset gradient") {
  Setup s = random_setup(10, 50);
  auto full = batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, s.pairs);
  const int d = s.inst.mdp.feature_dim;
  const int n = 10000;
  ClientDataset ds;
  ds.pairs = s.pairs;
  RngStream rng(11);

  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  for (int i = 0; i < n; ++i) {
    auto batch = sample_minibatch(ds, 4, rng);
    auto g = batch_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, batch);
    for (int k = 0; k < d; ++k) {
      double delta = g[k] - mean[k];
      mean[k] += delta / (i + 1);
      m2[k] += delta * (g[k] - mean[k]);
    }
  }
  for (int k = 0; k < d; ++k) {
    double se = std::sqrt(m2[k] / (n - 1.0) / n);
    CHECK(std::fabs(mean[k] - full[k]) < 4.0 * se + 1e-12);
  }
}

TEST_CASE("pair gradients respect the uniform norm bound") {
  Setup s = random_setup(12, 40);
  const double bound =
      4.0 * s.cfg.beta * s.inst.mdp.horizon * s.inst.features.phi_bound;
  for (const PreferencePair& p : s.pairs) {
    auto g = pair_gradient(s.inst.mdp, s.inst.features, s.theta, s.cfg, p);
    CHECK(std::sqrt(kernels::sum_sq(g)) <= bound + 1e-12);
  }
}

TEST_CASE("config validation rejects bad preference strengths") {
  DpoConfig cfg;
  cfg.beta = 0.0;
  cfg.ref_theta.theta = {0.0};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.beta = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.beta = 0.5;
  CHECK_NOTHROW(cfg.validate());
  cfg.loss_offset = std::nan("");
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
