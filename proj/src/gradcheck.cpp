#include "mdmo/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "mdmo/error.hpp"
#include "mdmo/oracle.hpp"
#include "mdmo/posterior.hpp"

namespace mdmo {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

FdReport finite_diff_check(const ParamVector& params, const LossFn& loss, const ParamVector& analytic, double h,
                           double tol) {
  require(h > 0.0, "finite-difference step must be > 0");
  require(analytic.same_layout(params), "analytic gradient layout does not match params");
  const double base1 = loss(params);
  const double base2 = loss(params);
  if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
    fail(ErrorCode::kDeterminism, "loss function is not deterministic: two evaluations differ");
  }
  FdReport rep;
  rep.tol = tol;
  ParamVector work = params;
  for (const Segment& seg : params.segments()) {
    SegmentError se;
    se.name = seg.name;
    for (std::size_t i = seg.offset; i < seg.offset + seg.size(); ++i) {
      const double orig = work.values()[i];
      work.values()[i] = orig + h;
      const double up = loss(work);
      work.values()[i] = orig - h;
      const double down = loss(work);
      work.values()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double err = relative_error(analytic.values()[i], fd);
      if (i == seg.offset || err > se.max_rel_error) {
        se.max_rel_error = err;
        se.worst_index = i;
        se.analytic = analytic.values()[i];
        se.numeric = fd;
      }
      if (rep.worst_segment.empty() || err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_index = i;
        rep.worst_segment = seg.name;
      }
    }
    if (se.max_rel_error > tol) rep.failing.push_back(se.name);
    rep.segments.push_back(se);
  }
  rep.pass = rep.failing.empty();
  return rep;
}

namespace {

Model tiny_model(std::uint64_t seed, int T, int N) {
  NetConfig c;
  c.vocab_size = 4;
  c.seq_len = N;
  c.hidden_dim = 4;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_dim = 8;
  c.num_timesteps = T;
  NetConfig s = c;
  s.time_conditioning = false;
  return make_model(c, c, s, seed);
}

Network& net_of(Model& m, NetRole role) { return m.get(role); }

void inject(ParamVector& g, const std::string& segment) {
  if (segment.empty() || !g.has_segment(segment)) return;
  for (double& v : g.view(g.segment(segment))) v = -v;
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& opts) {
  GradcheckResult res;
  auto add = [&](const std::string& check, NetRole role, FdReport rep) {
    res.pass = res.pass && rep.pass;
    res.entries.push_back({check, role, std::move(rep)});
  };

  // Frozen-path objectives of the stochastic estimator.
  {
    const int T = 3;
    const Model base = tiny_model(opts.seed, T, 6);
    DiffusionConfig cfg;
    cfg.schedule = make_linear_schedule(T);
    cfg.posterior.tau = 0.1;
    Sequence x0;
    x0.mask_id = 3;
    x0.prompt_len = 1;
    x0.tokens = {2, 0, 1, 1, 2, 0};
    Rng rng(derive_seed(opts.seed, 1));
    const int t = 1;
    const ScoreVector scores = score_forward(base.score, x0);
    std::vector<TrajectorySample> paths;
    std::vector<double> weights;
    // With fewer than two masks left q is constant, so keep drawing until four
    // paths depend on phi.
    for (int attempt = 0; paths.size() < 4 && attempt < 1000; ++attempt) {
      TrajectorySample path = sample_trajectory(x0, T, t, scores, cfg.posterior, rng);
      if (path.last().count_masked() < 2) continue;
      weights.push_back(0.5 - 0.25 * static_cast<double>(paths.size()));
      paths.push_back(std::move(path));
    }
    if (paths.size() < 4) fail(ErrorCode::kInvalidState, "gradcheck could not draw paths with masks remaining");
    const FixedPathObjective g = fixed_path_objective(x0, base, cfg, t, paths, weights);
    for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
      ParamVector analytic = role == NetRole::kDenoiser ? g.theta : role == NetRole::kSelector ? g.psi : g.phi_pathwise;
      inject(analytic, opts.fault_segment);
      const LossFn loss = [&, role](const ParamVector& p) {
        Model m = base;
        net_of(m, role).params = p;
        return fixed_path_objective(x0, m, cfg, t, paths, weights).j1;
      };
      add("path-objective", role, finite_diff_check(base.get(role).params, loss, analytic, opts.h, opts.tol));
    }
    ParamVector analytic = g.phi_score;
    inject(analytic, opts.fault_segment);
    const LossFn surrogate = [&](const ParamVector& p) {
      Model m = base;
      m.score.params = p;
      return fixed_path_objective(x0, m, cfg, t, paths, weights).j2;
    };
    add("score-surrogate", NetRole::kScore, finite_diff_check(base.score.params, surrogate, analytic, opts.h, opts.tol));
  }

  // Exact enumerated ELBO.
  {
    const int T = 2;
    const Model base = tiny_model(derive_seed(opts.seed, 2), T, 4);
    DiffusionConfig cfg;
    cfg.schedule = make_linear_schedule(T);
    cfg.posterior.tau = 0.5;
    Sequence x0;
    x0.mask_id = 3;
    x0.prompt_len = 1;
    x0.tokens = {1, 2, 0, 2};
    const ExactGradients g = exact_gradient_parts(x0, base, cfg);
    for (NetRole role : {NetRole::kDenoiser, NetRole::kSelector, NetRole::kScore}) {
      ParamVector analytic = role == NetRole::kDenoiser ? g.theta : role == NetRole::kSelector ? g.psi : g.phi_pathwise;
      if (role == NetRole::kScore) analytic += g.phi_score;
      inject(analytic, opts.fault_segment);
      const LossFn loss = [&, role](const ParamVector& p) {
        Model m = base;
        net_of(m, role).params = p;
        return exact_elbo(x0, m, cfg);
      };
      add("exact-elbo", role, finite_diff_check(base.get(role).params, loss, analytic, opts.h, opts.tol));
    }
  }
  return res;
}

std::string format_gradcheck(const GradcheckResult& result) {
  std::ostringstream os;
  char buf[256];
  for (const GradcheckEntry& e : result.entries) {
    for (const SegmentError& s : e.report.segments) {
      std::snprintf(buf, sizeof(buf), "%-16s %-9s %-30s max_rel_err=%.3e (analytic %+.6e, fd %+.6e) %s\n",
                    e.check.c_str(), role_name(e.role), s.name.c_str(), s.max_rel_error, s.analytic, s.numeric,
                    s.max_rel_error <= e.report.tol ? "ok" : "FAIL");
      os << buf;
    }
  }
  os << (result.pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return os.str();
}

}  // namespace mdmo
