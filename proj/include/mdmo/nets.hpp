#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mdmo/schedule.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

enum class NetRole { kDenoiser, kSelector, kScore };

const char* role_name(NetRole role);

/// Shape of one bidirectional transformer encoder. `vocab_size` counts the
/// mask token; `num_timesteps` sizes the learned time embedding.
struct NetConfig {
  int vocab_size = 3;
  int seq_len = 1;
  int hidden_dim = 16;
  int num_layers = 2;
  int num_heads = 2;
  int mlp_dim = 32;
  int num_timesteps = 1;
  bool time_conditioning = true;

  bool operator==(const NetConfig&) const = default;
};

void validate_net_config(const NetConfig& cfg);

/// Network parameters and the layout they follow.
struct Network {
  NetRole role = NetRole::kDenoiser;
  NetConfig config;
  ParamVector params;

  /// Width of the output head: vocab_size - 1 for the denoiser, 1 otherwise.
  int output_dim() const;
};

/// Network with the role's segment layout and all parameters zero.
Network make_network(NetRole role, const NetConfig& cfg);

/// Scaled-uniform fan-in initialisation: weights ~ U(-1/sqrt(fan_in), +),
/// embeddings ~ U(-1, 1), biases 0, layer-norm gains 1.
void init_network(Network& net, std::uint64_t seed);

/// The three learnable networks: denoiser mu_theta, selector p_psi and the
/// order-score network alpha_phi.
struct Model {
  Network denoiser;
  Network selector;
  Network score;

  Network& get(NetRole role);
  const Network& get(NetRole role) const;
};

Model make_model(const NetConfig& denoiser, const NetConfig& selector, const NetConfig& score, std::uint64_t seed);

// Differentiable forwards. `t` is the network's own time index and is
// ignored when the config has no time conditioning.

/// Per-position log-probabilities over the non-mask vocabulary (n x (V-1)).
Var denoiser_log_probs(Tape& tape, const Network& net, std::span<const int> tokens, int t);
/// Order-score logits (n x 1); scores are their sigmoid.
Var score_logits(Tape& tape, const Network& net, std::span<const int> tokens);
/// Selector logits (n x 1); probabilities are their sigmoid, gated by the mask.
Var selector_logits(Tape& tape, const Network& net, std::span<const int> tokens, int t);

/// Categorical over non-mask tokens per position.
struct DenoiserOutput {
  Matrix probs;
};

DenoiserOutput denoiser_forward(const Network& net, const Sequence& x, int t);
ScoreVector score_forward(const Network& net, const Sequence& x0);
/// Exactly zero wherever x_next is not the mask token.
ProbVector selector_forward(const Network& net, const Sequence& x_next, int t);

}  // namespace mdmo
