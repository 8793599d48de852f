#pragma once

#include <cstdint>
#include <string>

#include "mdmo/data.hpp"
#include "mdmo/generative.hpp"
#include "mdmo/loss.hpp"
#include "mdmo/nets.hpp"

namespace mdmo {

inline constexpr int kConfigVersion = 1;

struct NetDims {
  int hidden_dim = 16;
  int num_layers = 2;
  int num_heads = 2;
  int mlp_dim = 32;

  bool operator==(const NetDims&) const = default;
};

struct RunConfig {
  TaskSpec task;
  int train_count = 2048;
  int test_count = 256;

  int T = 3;
  double tau = 0.1;
  int k_rloo = 8;
  int batch_size = 32;
  double lr = 3e-4;
  double weight_decay = 0.0;
  int train_steps = 1000;
  std::uint64_t seed = 0;
  ScaleMode scale_mode = ScaleMode::kUnbiasedT;
  ValueDecoding value_decoding = ValueDecoding::kGreedy;
  PosteriorKind posterior = PosteriorKind::kLearned;
  SelectorKind selector = SelectorKind::kLearned;

  bool train_theta = true;
  bool train_psi = true;
  bool train_phi = true;

  NetDims denoiser;
  NetDims selector_net;
  NetDims score_net;

  /// Parameters to start from; relative paths resolve against the config file.
  std::string init_ckpt;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  /// 0 means one worker per hardware thread.
  int threads = 0;

  bool operator==(const RunConfig&) const = default;
};

/// Parses a config document. Unknown keys, missing required keys and invalid
/// values raise ConfigError naming the field path.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
/// Canonical JSON form; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

NetConfig net_config(const RunConfig& cfg, NetRole role);
Model build_model(const RunConfig& cfg);
DiffusionConfig diffusion_config(const RunConfig& cfg);

const char* scale_mode_name(ScaleMode m);
const char* value_decoding_name(ValueDecoding v);

}  // namespace mdmo
