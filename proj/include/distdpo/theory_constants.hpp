#pragma once

#include <functional>
#include <map>
#include <string>

#include "distdpo/dpo_core.hpp"

namespace distdpo {

// Score second-moment estimate: max over step index of the mean squared score
// norm, with a 3-standard-error upper confidence value and the analytic
// pointwise ceiling max_{s,u} ||step_score||^2 alongside.
struct ZetaPhiEstimate {
  double value = 0.0;
  double ucb = 0.0;
  double pointwise_bound = 0.0;
  int num_samples = 0;
};

// Trajectories are drawn from sampling_theta when given (e.g. the behavior
// policy that produced a dataset), otherwise from theta itself; scores are
// always evaluated at theta.
ZetaPhiEstimate estimate_zeta_phi_sq(const MdpSpec& spec, const FeatureTable& feats,
                                     const PolicyParams& theta, int num_samples, RngStream& rng,
                                     const PolicyParams* sampling_theta = nullptr);

// Exponential decay fit of score lag-correlations. degenerate means every lag
// sat below the noise floor (or too few usable lags), in which case the
// independent-steps values (0, 1) are reported.
struct MixingEstimate {
  double varsigma = 0.0;
  double c0 = 1.0;
  bool degenerate = true;
  double varsigma_ucb = 0.0;
  double c0_ucb = 1.0;
  std::vector<double> lag_corr;
  double noise_floor = 0.0;
  int num_samples = 0;
};

MixingEstimate estimate_mixing(const MdpSpec& spec, const FeatureTable& feats,
                               const PolicyParams& theta, int num_samples, RngStream& rng,
                               const PolicyParams* sampling_theta = nullptr);

// C_mix = 1 + 2 c0 varsigma / (1 - varsigma).
double mixing_factor(double c0, double varsigma);
// L = (beta^2 C_mix + 2 beta) zeta_phi_sq H.
double smoothness_constant(double beta, double c_mix, double zeta_phi_sq, int horizon);
// zeta_g^2 = 4 beta^2 C_mix zeta_phi_sq H.
double variance_bound(double beta, double c_mix, double zeta_phi_sq, int horizon);

// Mean squared deviation of per-client full-dataset gradients from the
// data-size-weighted global gradient.
double estimate_kappa_sq(std::span<const ClientDataset> clients, const MdpSpec& spec,
                         const FeatureTable& feats, const PolicyParams& theta,
                         const DpoConfig& cfg);

using LossFunctional = std::function<double(std::span<const double>)>;

std::vector<double> finite_diff_gradient(const LossFunctional& f, std::span<const double> theta,
                                         double step);

// Spectral norm of the symmetrized central-difference Hessian; dense
// differencing guarded to d <= 64.
double numerical_hessian_norm(const LossFunctional& f, std::span<const double> theta, double step);

// Power iteration on the squared matrix, so sign-alternating spectra converge;
// mat is n x n row-major and must be symmetric.
double spectral_norm_symmetric(std::span<const double> mat, int n, double tol = 1e-8);

struct ConstantReport {
  double beta = 0.0;
  int horizon = 0;
  double zeta_phi_sq = 0.0;
  double zeta_phi_pointwise = 0.0;
  double varsigma = 0.0;
  double c0 = 1.0;
  bool degenerate_mixing_fit = true;
  double c_mix = 1.0;
  double smoothness_L = 0.0;
  double zeta_g_sq = 0.0;
  double kappa_sq = 0.0;
  std::map<std::string, int> sample_sizes;

  nlohmann::json to_json() const;
};

ConstantReport build_constant_report(const MdpSpec& spec, const FeatureTable& feats,
                                     std::span<const ClientDataset> clients,
                                     const PolicyParams& behavior_theta,
                                     const PolicyParams& eval_theta, const DpoConfig& dpo,
                                     int num_samples, RngStream& rng);

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  int num_instances = 0;
  double tolerance = 1e-6;

  nlohmann::json to_json() const;
};

// Analytic pair gradient against a central finite difference of the pair loss
// (step 1e-5) on random small instances; relative error is
// ||a - fd|| / max(||a||, ||fd||, 1e-8).
GradCheckReport run_gradient_check(int num_instances, std::uint64_t seed);

}  // namespace distdpo
