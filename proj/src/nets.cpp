#include "mdmo/nets.hpp"

#include <cmath>

#include "mdmo/error.hpp"
#include "mdmo/rng.hpp"

namespace mdmo {

namespace {

std::string seg(NetRole role, const std::string& name) { return std::string(role_name(role)) + "." + name; }

std::string layer_seg(NetRole role, int layer, const std::string& name) {
  return seg(role, "layer" + std::to_string(layer) + "." + name);
}

bool uses_time(const Network& net) { return net.config.time_conditioning && net.role != NetRole::kScore; }

void check_finite(Var v, const Network& net, const std::string& where) {
  if (!v.value().all_finite()) {
    fail(ErrorCode::kNumericFailure, std::string("non-finite activations in ") + role_name(net.role) + " " + where);
  }
}

Var param(Tape& tape, const Network& net, const std::string& name) { return tape.param(net.params, seg(net.role, name)); }

Var layer_param(Tape& tape, const Network& net, int layer, const std::string& name) {
  return tape.param(net.params, layer_seg(net.role, layer, name));
}

Var encode(Tape& tape, const Network& net, std::span<const int> tokens, int t) {
  const NetConfig& c = net.config;
  if (static_cast<int>(tokens.size()) != c.seq_len) {
    fail(ErrorCode::kContractViolation, std::string(role_name(net.role)) + ": sequence length does not match config");
  }
  Var h = ops::gather_rows(param(tape, net, "tok_emb"), tokens);
  h = ops::add(h, param(tape, net, "pos_emb"));
  if (uses_time(net)) {
    if (t < 0 || t >= c.num_timesteps) fail(ErrorCode::kContractViolation, "time index out of range for network");
    h = ops::add(h, ops::broadcast_row(param(tape, net, "time_emb"), t, c.seq_len));
  }
  check_finite(h, net, "embedding");
  for (int l = 0; l < c.num_layers; ++l) {
    Var a = ops::layer_norm(h, layer_param(tape, net, l, "ln1.g"), layer_param(tape, net, l, "ln1.b"));
    Var q = ops::matmul(a, layer_param(tape, net, l, "attn.wq"));
    Var k = ops::matmul(a, layer_param(tape, net, l, "attn.wk"));
    Var v = ops::matmul(a, layer_param(tape, net, l, "attn.wv"));
    Var o = ops::attention(q, k, v, c.num_heads);
    o = ops::add_row(ops::matmul(o, layer_param(tape, net, l, "attn.wo")), layer_param(tape, net, l, "attn.bo"));
    h = ops::add(h, o);
    Var m = ops::layer_norm(h, layer_param(tape, net, l, "ln2.g"), layer_param(tape, net, l, "ln2.b"));
    m = ops::add_row(ops::matmul(m, layer_param(tape, net, l, "mlp.w1")), layer_param(tape, net, l, "mlp.b1"));
    m = ops::gelu(m);
    m = ops::add_row(ops::matmul(m, layer_param(tape, net, l, "mlp.w2")), layer_param(tape, net, l, "mlp.b2"));
    h = ops::add(h, m);
    check_finite(h, net, "layer " + std::to_string(l));
  }
  h = ops::layer_norm(h, param(tape, net, "ln_f.g"), param(tape, net, "ln_f.b"));
  return h;
}

Var head(Tape& tape, const Network& net, Var h) {
  Var out = ops::add_row(ops::matmul(h, param(tape, net, "head.w")), param(tape, net, "head.b"));
  check_finite(out, net, "head");
  return out;
}

void expect_role(const Network& net, NetRole role) {
  if (net.role != role) {
    fail(ErrorCode::kContractViolation, std::string("expected a ") + role_name(role) + " network, got " + role_name(net.role));
  }
}

}  // namespace

const char* role_name(NetRole role) {
  switch (role) {
    case NetRole::kDenoiser:
      return "denoiser";
    case NetRole::kSelector:
      return "selector";
    case NetRole::kScore:
      return "score";
  }
  return "?";
}

void validate_net_config(const NetConfig& c) {
  require(c.vocab_size >= 2, "vocab_size must be >= 2");
  require(c.seq_len >= 1, "seq_len must be >= 1");
  require(c.hidden_dim >= 1, "hidden_dim must be >= 1");
  require(c.num_layers >= 0, "num_layers must be >= 0");
  require(c.num_heads >= 1, "num_heads must be >= 1");
  require(c.hidden_dim % c.num_heads == 0, "hidden_dim must be divisible by num_heads");
  require(c.mlp_dim >= 1, "mlp_dim must be >= 1");
  require(c.num_timesteps >= 1, "num_timesteps must be >= 1");
}

int Network::output_dim() const { return role == NetRole::kDenoiser ? config.vocab_size - 1 : 1; }

Network make_network(NetRole role, const NetConfig& cfg) {
  validate_net_config(cfg);
  Network net;
  net.role = role;
  net.config = cfg;
  const int H = cfg.hidden_dim;
  ParamVector& p = net.params;
  p.add_segment(seg(role, "tok_emb"), cfg.vocab_size, H);
  p.add_segment(seg(role, "pos_emb"), cfg.seq_len, H);
  if (uses_time(net)) p.add_segment(seg(role, "time_emb"), cfg.num_timesteps, H);
  for (int l = 0; l < cfg.num_layers; ++l) {
    p.add_segment(layer_seg(role, l, "ln1.g"), 1, H);
    p.add_segment(layer_seg(role, l, "ln1.b"), 1, H);
    p.add_segment(layer_seg(role, l, "attn.wq"), H, H);
    p.add_segment(layer_seg(role, l, "attn.wk"), H, H);
    p.add_segment(layer_seg(role, l, "attn.wv"), H, H);
    p.add_segment(layer_seg(role, l, "attn.wo"), H, H);
    p.add_segment(layer_seg(role, l, "attn.bo"), 1, H);
    p.add_segment(layer_seg(role, l, "ln2.g"), 1, H);
    p.add_segment(layer_seg(role, l, "ln2.b"), 1, H);
    p.add_segment(layer_seg(role, l, "mlp.w1"), H, cfg.mlp_dim);
    p.add_segment(layer_seg(role, l, "mlp.b1"), 1, cfg.mlp_dim);
    p.add_segment(layer_seg(role, l, "mlp.w2"), cfg.mlp_dim, H);
    p.add_segment(layer_seg(role, l, "mlp.b2"), 1, H);
  }
  p.add_segment(seg(role, "ln_f.g"), 1, H);
  p.add_segment(seg(role, "ln_f.b"), 1, H);
  p.add_segment(seg(role, "head.w"), H, net.output_dim());
  p.add_segment(seg(role, "head.b"), 1, net.output_dim());
  return net;
}

void init_network(Network& net, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(net.role) + 1));
  for (const Segment& s : net.params.segments()) {
    auto v = net.params.view(s);
    const std::string& name = s.name;
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double bound = 0.0;
    double fill = 0.0;
    if (ends_with(".g")) {
      fill = 1.0;
    } else if (ends_with("_emb")) {
      bound = 1.0;
    } else if (ends_with(".b") || ends_with(".bo") || ends_with(".b1") || ends_with(".b2")) {
      fill = 0.0;
    } else {
      bound = 1.0 / std::sqrt(static_cast<double>(s.rows));
    }
    for (double& x : v) x = bound > 0.0 ? bound * (2.0 * rng.uniform() - 1.0) : fill;
  }
}

Network& Model::get(NetRole role) {
  switch (role) {
    case NetRole::kDenoiser:
      return denoiser;
    case NetRole::kSelector:
      return selector;
    case NetRole::kScore:
      return score;
  }
  return denoiser;
}

const Network& Model::get(NetRole role) const { return const_cast<Model*>(this)->get(role); }

Model make_model(const NetConfig& denoiser, const NetConfig& selector, const NetConfig& score, std::uint64_t seed) {
  Model m{make_network(NetRole::kDenoiser, denoiser), make_network(NetRole::kSelector, selector),
          make_network(NetRole::kScore, score)};
  init_network(m.denoiser, seed);
  init_network(m.selector, seed);
  init_network(m.score, seed);
  return m;
}

Var denoiser_log_probs(Tape& tape, const Network& net, std::span<const int> tokens, int t) {
  expect_role(net, NetRole::kDenoiser);
  return ops::log_softmax_rows(head(tape, net, encode(tape, net, tokens, t)));
}

Var score_logits(Tape& tape, const Network& net, std::span<const int> tokens) {
  expect_role(net, NetRole::kScore);
  return head(tape, net, encode(tape, net, tokens, 0));
}

Var selector_logits(Tape& tape, const Network& net, std::span<const int> tokens, int t) {
  expect_role(net, NetRole::kSelector);
  return head(tape, net, encode(tape, net, tokens, t));
}

DenoiserOutput denoiser_forward(const Network& net, const Sequence& x, int t) {
  Tape tape;
  Var lp = denoiser_log_probs(tape, net, x.tokens, t);
  DenoiserOutput out{lp.value()};
  for (double& v : out.probs.data) v = std::exp(v);
  return out;
}

ScoreVector score_forward(const Network& net, const Sequence& x0) {
  Tape tape;
  Var s = ops::sigmoid(score_logits(tape, net, x0.tokens));
  return s.value().data;
}

ProbVector selector_forward(const Network& net, const Sequence& x_next, int t) {
  Tape tape;
  Var p = ops::sigmoid(selector_logits(tape, net, x_next.tokens, t));
  ProbVector out = p.value().data;
  for (int n = 0; n < x_next.size(); ++n) {
    if (!x_next.is_masked(n)) out[static_cast<std::size_t>(n)] = 0.0;
  }
  return out;
}

}  // namespace mdmo
