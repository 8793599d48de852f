#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mdmo/generative.hpp"
#include "mdmo/loss.hpp"
#include "mdmo/nets.hpp"

namespace mdmo {

/// Upper bound on enumerated trajectories; larger instances raise
/// kInstanceTooLarge before any work is done.
inline constexpr double kMaxEnumeratedPaths = 1e6;

/// 2^(diffused positions * T), the trajectory-count bound used by the guard.
double enumeration_size(const Sequence& x0, int T);
void check_enumerable(const Sequence& x0, int T);

/// The generative model's networks as decode-time functions for a loss config.
DenoiserFn loss_denoiser_fn(const Model& model, const DiffusionConfig& cfg);
SelectorFn loss_selector_fn(const Model& model, const DiffusionConfig& cfg);

/// log P(x0) under the literal generative model (masks may survive t = 0;
/// such outputs never equal x0). Only x0's tokens are drawn at reveals.
double exact_log_likelihood(const Sequence& x0, const DenoiserFn& denoiser, const SelectorFn& selector, int T);
double exact_log_likelihood(const Sequence& x0, const Model& model, const DiffusionConfig& cfg);

/// Exact ELBO: sum over t of the posterior expectation of F_t.
double exact_elbo(const Sequence& x0, const Model& model, const DiffusionConfig& cfg);

/// Exact gradient components of the ELBO, by enumeration and reverse mode.
struct ExactGradients {
  double elbo = 0.0;
  ParamVector theta;
  ParamVector psi;
  /// Expectation of dF/dphi with the path held fixed.
  ParamVector phi_pathwise;
  /// Expectation of F * dlogQ/dphi.
  ParamVector phi_score;
};

ExactGradients exact_gradient_parts(const Sequence& x0, const Model& model, const DiffusionConfig& cfg);

/// Central finite differences (step h) of exact_elbo over one segment of one
/// network, in segment order.
std::vector<double> exact_gradient(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, NetRole role,
                                   const std::string& segment, double h = 1e-5);
/// Same over every coordinate of one network.
ParamVector exact_gradient_all(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, NetRole role,
                               double h = 1e-5);

/// Total probability of all complete generative paths (every r and every
/// token value), summed explicitly path by path. Equals 1 for a valid model.
double generative_path_total(const Sequence& prompt_state, const DenoiserFn& denoiser, const SelectorFn& selector,
                             int T);
/// Total posterior probability of all paths x_T .. x_1.
double posterior_path_total(const Sequence& x0, const Model& model, const DiffusionConfig& cfg);

/// Sum over every mask-free completion x0 of exp(exact_log_likelihood).
double total_data_probability(const Sequence& prompt_template, const DenoiserFn& denoiser, const SelectorFn& selector,
                              int T);

/// Classical masked-diffusion bound: sum over t of the forward-marginal
/// expectation of (alpha_t - alpha_{t+1}) / (1 - alpha_{t+1}) times the masked
/// cross-entropy. Coded directly from the forward marginals.
double classical_mdm_bound(const Sequence& x0, const DenoiserFn& denoiser, const MaskSchedule& sched);

/// Every mask-free sequence sharing the template's prompt.
std::vector<Sequence> enumerate_completions(const Sequence& prompt_template);

}  // namespace mdmo
