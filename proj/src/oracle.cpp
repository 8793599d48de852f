#include "mdmo/oracle.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "mdmo/error.hpp"
#include "mdmo/posterior.hpp"

namespace mdmo {

namespace {

using Key = std::pair<std::vector<int>, int>;

DenoiserFn cached(DenoiserFn fn) {
  auto memo = std::make_shared<std::map<Key, Matrix>>();
  return [fn = std::move(fn), memo](const Sequence& x, int t) {
    Key key{x.tokens, t};
    auto it = memo->find(key);
    if (it == memo->end()) it = memo->emplace(std::move(key), fn(x, t)).first;
    return it->second;
  };
}

SelectorFn cached(SelectorFn fn) {
  auto memo = std::make_shared<std::map<Key, ProbVector>>();
  return [fn = std::move(fn), memo](const Sequence& x, int t) {
    Key key{x.tokens, t};
    auto it = memo->find(key);
    if (it == memo->end()) it = memo->emplace(std::move(key), fn(x, t)).first;
    return it->second;
  };
}

std::vector<int> masked_positions(const Sequence& x) {
  std::vector<int> m;
  for (int n = 0; n < x.size(); ++n) {
    if (x.is_masked(n)) m.push_back(n);
  }
  return m;
}

// Probability of revealing exactly the subset `bits` of `masked`.
double subset_prob(const std::vector<int>& masked, unsigned bits, const ProbVector& p) {
  double w = 1.0;
  for (std::size_t j = 0; j < masked.size(); ++j) {
    const double pj = p[static_cast<std::size_t>(masked[j])];
    w *= (bits >> j) & 1U ? pj : 1.0 - pj;
  }
  return w;
}

UnmaskVector subset_vector(const std::vector<int>& masked, unsigned bits, int n) {
  UnmaskVector r(static_cast<std::size_t>(n), 0);
  for (std::size_t j = 0; j < masked.size(); ++j) {
    if ((bits >> j) & 1U) r[static_cast<std::size_t>(masked[j])] = 1;
  }
  return r;
}

// One node of the posterior enumeration tree: the path down to x_{t+1}.
struct PathNode {
  TrajectorySample traj;
  double prob = 0.0;
};

// Enumerates every posterior path prefix x_T .. x_{t+1} for t = T-1 .. 0.
void enumerate_posterior(const Sequence& x0, const DiffusionConfig& cfg, const ScoreVector& scores, PathNode node,
                         std::vector<PathNode>& out) {
  out.push_back(node);
  const int t = node.traj.t_star;
  if (t == 0) return;
  const Sequence& x = node.traj.last();
  const std::vector<int> masked = masked_positions(x);
  const ProbVector q = masked.empty() ? ProbVector(x.tokens.size(), 0.0) : loss_posterior_probs(cfg, scores, x, t);
  for (unsigned bits = 0; bits < (1U << masked.size()); ++bits) {
    const double w = subset_prob(masked, bits, q);
    if (w == 0.0) continue;
    PathNode child = node;
    const UnmaskVector r = subset_vector(masked, bits, x.size());
    child.traj.states.push_back(apply_reveals(x, r, x0));
    child.traj.decisions.push_back(r);
    child.traj.t_star = t - 1;
    child.prob = node.prob * w;
    enumerate_posterior(x0, cfg, scores, std::move(child), out);
  }
}

std::vector<PathNode> posterior_tree(const Sequence& x0, const Model& model, const DiffusionConfig& cfg) {
  check_enumerable(x0, cfg.T());
  ScoreVector scores;
  if (cfg.posterior_kind == PosteriorKind::kLearned) scores = score_forward(model.score, x0);
  PathNode root;
  root.traj.t_star = cfg.T() - 1;
  root.traj.states.push_back(fully_masked(x0));
  root.prob = 1.0;
  std::vector<PathNode> nodes;
  enumerate_posterior(x0, cfg, scores, root, nodes);
  return nodes;
}

double step_value(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, const ScoreVector& scores,
                  const Sequence& x, int t) {
  if (x.mask_free()) return 0.0;
  const ProbVector q = loss_posterior_probs(cfg, scores, x, t);
  const ProbVector p = loss_selector_probs(cfg, model, x, t);
  const Matrix mu = loss_denoiser_fn(model, cfg)(x, t);
  return local_loss(x, x0, q, p, mu, t, cfg.log_floor).f;
}

}  // namespace

double enumeration_size(const Sequence& x0, int T) {
  const int diffused = x0.size() - x0.prompt_len;
  return std::pow(2.0, static_cast<double>(diffused) * T);
}

void check_enumerable(const Sequence& x0, int T) {
  if (enumeration_size(x0, T) > kMaxEnumeratedPaths) {
    fail(ErrorCode::kInstanceTooLarge, "instance has more than 1e6 trajectories");
  }
}

DenoiserFn loss_denoiser_fn(const Model& model, const DiffusionConfig& cfg) {
  const Network* net = &model.denoiser;
  const int T = cfg.T();
  return [net, T](const Sequence& x, int t) { return denoiser_forward(*net, x, network_time(*net, t, T)).probs; };
}

SelectorFn loss_selector_fn(const Model& model, const DiffusionConfig& cfg) {
  if (cfg.selector_kind == SelectorKind::kForward) return fixed_forward_selector(cfg.schedule);
  const Network* net = &model.selector;
  const int T = cfg.T();
  return [net, T](const Sequence& x, int t) { return selector_forward(*net, x, network_time(*net, t, T)); };
}

double exact_log_likelihood(const Sequence& x0, const DenoiserFn& denoiser, const SelectorFn& selector, int T) {
  validate_sequence(x0);
  require(x0.mask_free(), "exact_log_likelihood needs a mask-free x0");
  check_enumerable(x0, T);
  // reach(x, t): probability that steps t .. 0 starting from x_{t+1} = x end at x0.
  std::map<std::pair<std::vector<int>, int>, double> memo;
  std::function<double(const Sequence&, int)> reach = [&](const Sequence& x, int t) -> double {
    const std::vector<int> masked = masked_positions(x);
    if (masked.empty()) return 1.0;
    if (t < 0) return 0.0;
    const auto key = std::make_pair(x.tokens, t);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const ProbVector p = selector(x, t);
    const Matrix mu = denoiser(x, t);
    double total = 0.0;
    for (unsigned bits = 0; bits < (1U << masked.size()); ++bits) {
      double w = subset_prob(masked, bits, p);
      for (std::size_t j = 0; j < masked.size(); ++j) {
        if ((bits >> j) & 1U) w *= mu(masked[j], x0.tokens[static_cast<std::size_t>(masked[j])]);
      }
      if (w == 0.0) continue;
      total += w * reach(apply_reveals(x, subset_vector(masked, bits, x.size()), x0), t - 1);
    }
    memo.emplace(key, total);
    return total;
  };
  return std::log(reach(fully_masked(x0), T - 1));
}

double exact_log_likelihood(const Sequence& x0, const Model& model, const DiffusionConfig& cfg) {
  return exact_log_likelihood(x0, loss_denoiser_fn(model, cfg), loss_selector_fn(model, cfg), cfg.T());
}

double exact_elbo(const Sequence& x0, const Model& model, const DiffusionConfig& cfg) {
  validate_sequence(x0);
  const std::vector<PathNode> nodes = posterior_tree(x0, model, cfg);
  ScoreVector scores;
  if (cfg.posterior_kind == PosteriorKind::kLearned) scores = score_forward(model.score, x0);
  std::map<std::pair<std::vector<int>, int>, double> memo;
  double total = 0.0;
  for (const PathNode& node : nodes) {
    const Sequence& x = node.traj.last();
    const int t = node.traj.t_star;
    const auto key = std::make_pair(x.tokens, t);
    auto it = memo.find(key);
    if (it == memo.end()) it = memo.emplace(key, step_value(x0, model, cfg, scores, x, t)).first;
    total += node.prob * it->second;
  }
  return total;
}

ExactGradients exact_gradient_parts(const Sequence& x0, const Model& model, const DiffusionConfig& cfg) {
  validate_sequence(x0);
  const std::vector<PathNode> nodes = posterior_tree(x0, model, cfg);
  const bool learned = cfg.posterior_kind == PosteriorKind::kLearned;
  Tape tape;
  tape.track(model.denoiser.params);
  if (cfg.selector_kind == SelectorKind::kLearned) tape.track(model.selector.params);
  if (learned) tape.track(model.score.params);
  Var alpha;
  if (learned) alpha = score_column(tape, model, x0);

  // Path weights aggregated per visited state, in first-visit order.
  std::map<std::pair<std::vector<int>, int>, std::size_t> index;
  std::vector<std::pair<const PathNode*, double>> states;
  for (const PathNode& node : nodes) {
    const auto key = std::make_pair(node.traj.last().tokens, node.traj.t_star);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, states.size());
      states.emplace_back(&node, node.prob);
    } else {
      states[it->second].second += node.prob;
    }
  }
  std::vector<Var> f_vars;
  Var j_path = tape.scalar_constant(0.0);
  for (const auto& [node, weight] : states) {
    Var f = step_objective(tape, model, cfg, x0, alpha, node->traj.last(), node->traj.t_star, nullptr);
    f_vars.push_back(f);
    j_path = ops::add(j_path, ops::scale(f, weight));
  }
  ExactGradients out;
  out.elbo = j_path.scalar();
  tape.backward(j_path);
  out.theta = tape.gradient(model.denoiser.params);
  out.psi = tape.gradient(model.selector.params);
  out.phi_pathwise = tape.gradient(model.score.params);
  out.phi_score = model.score.params.zeros_like();
  if (learned) {
    Var j_score = tape.scalar_constant(0.0);
    for (const PathNode& node : nodes) {
      if (node.traj.decisions.empty()) continue;
      const auto key = std::make_pair(node.traj.last().tokens, node.traj.t_star);
      const double f = f_vars[index.at(key)].scalar();
      Var log_q = trajectory_log_q(tape, alpha, node.traj, cfg.posterior.tau);
      j_score = ops::add(j_score, ops::scale(log_q, node.prob * f));
    }
    tape.backward(j_score);
    out.phi_score = tape.gradient(model.score.params);
  }
  return out;
}

std::vector<double> exact_gradient(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, NetRole role,
                                   const std::string& segment, double h) {
  require(h > 0.0, "finite-difference step must be positive");
  Model work = model;
  const Segment& seg = work.get(role).params.segment(segment);
  std::vector<double> grad(seg.size());
  auto values = work.get(role).params.view(seg);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = exact_elbo(x0, work, cfg);
    values[i] = orig - h;
    const double down = exact_elbo(x0, work, cfg);
    values[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

ParamVector exact_gradient_all(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, NetRole role,
                               double h) {
  ParamVector out = model.get(role).params.zeros_like();
  for (const Segment& seg : model.get(role).params.segments()) {
    const std::vector<double> g = exact_gradient(x0, model, cfg, role, seg.name, h);
    auto dst = out.view(seg);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] = g[i];
  }
  return out;
}

double generative_path_total(const Sequence& prompt_state, const DenoiserFn& denoiser, const SelectorFn& selector,
                             int T) {
  require(T >= 1, "T must be >= 1");
  const Sequence start = fully_masked(prompt_state);
  const int diffused = start.size() - start.prompt_len;
  if (std::pow(static_cast<double>(start.mask_id + 1), static_cast<double>(diffused) * T) > kMaxEnumeratedPaths) {
    fail(ErrorCode::kInstanceTooLarge, "instance has more than 1e6 generative paths");
  }
  const DenoiserFn den = cached(denoiser);
  const SelectorFn sel = cached(selector);
  std::vector<Sequence> states{start};
  std::vector<UnmaskVector> decisions;
  double total = 0.0;
  std::function<void()> walk = [&]() {
    if (static_cast<int>(decisions.size()) == T) {
      total += std::exp(model_joint_log_prob(states, decisions, den, sel));
      return;
    }
    const Sequence x = states.back();
    const std::vector<int> masked = masked_positions(x);
    const int V = x.mask_id;
    for (unsigned bits = 0; bits < (1U << masked.size()); ++bits) {
      const UnmaskVector r = subset_vector(masked, bits, x.size());
      std::vector<int> revealed;
      for (std::size_t j = 0; j < masked.size(); ++j) {
        if ((bits >> j) & 1U) revealed.push_back(masked[j]);
      }
      // Every assignment of values to the revealed positions.
      std::vector<int> digits(revealed.size(), 0);
      while (true) {
        Sequence next = x;
        for (std::size_t j = 0; j < revealed.size(); ++j) next.tokens[static_cast<std::size_t>(revealed[j])] = digits[j];
        states.push_back(next);
        decisions.push_back(r);
        walk();
        states.pop_back();
        decisions.pop_back();
        std::size_t j = 0;
        while (j < digits.size() && ++digits[j] == V) digits[j++] = 0;
        if (j == digits.size()) break;
      }
    }
  };
  walk();
  return total;
}

double posterior_path_total(const Sequence& x0, const Model& model, const DiffusionConfig& cfg) {
  const std::vector<PathNode> nodes = posterior_tree(x0, model, cfg);
  ScoreVector scores;
  if (cfg.posterior_kind == PosteriorKind::kLearned) scores = score_forward(model.score, x0);
  double total = 0.0;
  for (const PathNode& node : nodes) {
    if (node.traj.t_star != 0) continue;
    if (cfg.posterior_kind == PosteriorKind::kLearned) {
      total += std::exp(trajectory_log_prob(node.traj, x0, scores, cfg.posterior));
    } else {
      total += node.prob;
    }
  }
  return total;
}

std::vector<Sequence> enumerate_completions(const Sequence& prompt_template) {
  const int diffused = prompt_template.size() - prompt_template.prompt_len;
  const int V = prompt_template.mask_id;
  require(V >= 1, "vocabulary has no non-mask tokens");
  if (std::pow(static_cast<double>(V), diffused) > kMaxEnumeratedPaths) {
    fail(ErrorCode::kInstanceTooLarge, "too many completions to enumerate");
  }
  std::vector<Sequence> out;
  Sequence x = prompt_template;
  std::vector<int> digits(static_cast<std::size_t>(diffused), 0);
  while (true) {
    for (int j = 0; j < diffused; ++j) x.tokens[static_cast<std::size_t>(x.prompt_len + j)] = digits[static_cast<std::size_t>(j)];
    out.push_back(x);
    std::size_t j = 0;
    while (j < digits.size() && ++digits[j] == V) digits[j++] = 0;
    if (j == digits.size()) break;
  }
  return out;
}

double total_data_probability(const Sequence& prompt_template, const DenoiserFn& denoiser, const SelectorFn& selector,
                              int T) {
  const DenoiserFn den = cached(denoiser);
  const SelectorFn sel = cached(selector);
  double total = 0.0;
  for (const Sequence& x0 : enumerate_completions(prompt_template)) {
    total += std::exp(exact_log_likelihood(x0, den, sel, T));
  }
  return total;
}

double classical_mdm_bound(const Sequence& x0, const DenoiserFn& denoiser, const MaskSchedule& sched) {
  validate_sequence(x0);
  check_enumerable(x0, sched.T);
  const int n = x0.size();
  const int d = n - x0.prompt_len;
  double bound = 0.0;
  for (int t = 0; t < sched.T; ++t) {
    const double a_t = sched.alpha[static_cast<std::size_t>(t)];
    const double a_next = sched.alpha[static_cast<std::size_t>(t) + 1];
    const double weight = (a_t - a_next) / (1.0 - a_next);
    for (unsigned bits = 1; bits < (1U << d); ++bits) {
      // Forward marginal of this mask pattern at time t + 1.
      Sequence x = x0;
      double prob = 1.0;
      for (int j = 0; j < d; ++j) {
        if ((bits >> j) & 1U) {
          x.tokens[static_cast<std::size_t>(x0.prompt_len + j)] = x0.mask_id;
          prob *= 1.0 - a_next;
        } else {
          prob *= a_next;
        }
      }
      if (prob == 0.0) continue;
      const Matrix mu = denoiser(x, t);
      double ce = 0.0;
      for (int j = 0; j < d; ++j) {
        if ((bits >> j) & 1U) {
          const int pos = x0.prompt_len + j;
          ce += std::log(mu(pos, x0.tokens[static_cast<std::size_t>(pos)]));
        }
      }
      bound += prob * weight * ce;
    }
  }
  return bound;
}

}  // namespace mdmo
