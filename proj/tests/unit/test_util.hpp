#pragma once

#include <cstdint>

#include "mdmo/loss.hpp"
#include "mdmo/nets.hpp"
#include "mdmo/rng.hpp"

namespace mdmo::test {

inline NetConfig tiny_net(int vocab_with_mask, int seq_len, int T, int hidden = 4, int layers = 1) {
  NetConfig c;
  c.vocab_size = vocab_with_mask;
  c.seq_len = seq_len;
  c.hidden_dim = hidden;
  c.num_layers = layers;
  c.num_heads = 2;
  c.mlp_dim = 2 * hidden;
  c.num_timesteps = T;
  return c;
}

inline Model tiny_model(int vocab, int seq_len, int T, std::uint64_t seed, int hidden = 4, int layers = 1) {
  const NetConfig c = tiny_net(vocab + 1, seq_len, T, hidden, layers);
  NetConfig s = c;
  s.time_conditioning = false;
  return make_model(c, c, s, seed);
}

inline DiffusionConfig tiny_config(int T, double tau = 0.5) {
  DiffusionConfig cfg;
  cfg.schedule = make_linear_schedule(T);
  cfg.posterior.tau = tau;
  return cfg;
}

inline Sequence random_sequence(int N, int prompt_len, int vocab, Rng& rng) {
  Sequence x;
  x.mask_id = vocab;
  x.prompt_len = prompt_len;
  for (int n = 0; n < N; ++n) x.tokens.push_back(rng.uniform_int(vocab));
  return x;
}

}  // namespace mdmo::test
