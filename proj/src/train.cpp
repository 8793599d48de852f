#include "mdmo/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "mdmo/error.hpp"
#include "mdmo/loss.hpp"

namespace mdmo {

AdamW::AdamW(const ParamVector& params, const AdamConfig& cfg)
    : cfg_(cfg), m_(params.size(), 0.0), v_(params.size(), 0.0) {}

void AdamW::step(ParamVector& params, const ParamVector& grad) {
  require(grad.size() == m_.size() && params.size() == m_.size(), "optimizer state does not match parameters");
  if (cfg_.lr == 0.0) return;
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto p = params.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
    const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    p[i] += cfg_.lr * (update - cfg_.weight_decay * p[i]);
  }
}

std::string metrics_csv_header() { return "step,elbo,f1,f2,grad_norm_theta,grad_norm_psi,grad_norm_phi,wall_ms\n"; }

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.step, r.elbo, r.f1, r.f2,
                r.grad_norm_theta, r.grad_norm_psi, r.grad_norm_phi, r.wall_ms);
  return buf;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

namespace {

struct ElementResult {
  GradEstimate grad;
  double f1 = 0.0;
  double f2 = 0.0;
  std::string error;
};

[[noreturn]] void numeric_abort(int step, int b, int index, const std::string& what) {
  fail(ErrorCode::kNumericFailure, "step " + std::to_string(step) + ", batch element " + std::to_string(b) +
                                       ", dataset index " + std::to_string(index) + ": " + what);
}

bool finite(const ParamVector& p) {
  for (double v : p.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

std::vector<MetricsRow> train_loop(const Dataset& data, Model& model, const RunConfig& cfg, const TrainOptions& opts) {
  require(!data.sequences.empty(), "training needs a non-empty dataset");
  const DiffusionConfig dcfg = diffusion_config(cfg);
  GradOptions gopts;
  gopts.theta = cfg.train_theta;
  gopts.psi = cfg.train_psi && cfg.selector == SelectorKind::kLearned;
  gopts.phi = cfg.train_phi && cfg.posterior == PosteriorKind::kLearned;
  if (gopts.phi && cfg.k_rloo < 2) fail(ErrorCode::kInvalidArgument, "k_rloo must be >= 2 to train phi");

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  AdamW opt_theta(model.denoiser.params, acfg);
  AdamW opt_psi(model.selector.params, acfg);
  AdamW opt_phi(model.score.params, acfg);

  std::vector<MetricsRow> rows;
  const int B = cfg.batch_size;
  const int n_data = static_cast<int>(data.sequences.size());
  std::vector<ElementResult> results(static_cast<std::size_t>(B));
  std::vector<int> indices(static_cast<std::size_t>(B));
  for (int s = 0; s < cfg.train_steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int b = 0; b < B; ++b) {
      Rng pick(derive_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1, static_cast<std::uint64_t>(b) + 1));
      indices[static_cast<std::size_t>(b)] = pick.uniform_int(n_data);
    }
    parallel_for(B, opts.threads, [&](int b) {
      ElementResult& r = results[static_cast<std::size_t>(b)];
      r.error.clear();
      Rng rng(derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1, static_cast<std::uint64_t>(b) + 1), 2));
      const Sequence& x0 = data.sequences[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
      try {
        r.grad = grad_step(x0, model, dcfg, cfg.k_rloo, rng, gopts);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNumericFailure && e.code() != ErrorCode::kInfiniteKl) throw;
        r.error = e.what();
        return;
      }
      const double sf = scale_factor(dcfg);
      double f1 = 0.0, f2 = 0.0;
      for (const LossTerms& lt : r.grad.terms) {
        f1 += lt.f1;
        f2 += lt.f2;
      }
      r.f1 = sf * f1 / static_cast<double>(r.grad.terms.size());
      r.f2 = sf * f2 / static_cast<double>(r.grad.terms.size());
      if (!std::isfinite(r.grad.elbo)) r.error = "non-finite ELBO estimate";
      else if (!finite(r.grad.grad_theta) || !finite(r.grad.grad_psi) || !finite(r.grad.grad_phi_pathwise) ||
               !finite(r.grad.grad_phi_rloo)) {
        r.error = "non-finite gradient";
      }
    });

    ParamVector g_theta = model.denoiser.params.zeros_like();
    ParamVector g_psi = model.selector.params.zeros_like();
    ParamVector g_phi = model.score.params.zeros_like();
    MetricsRow row;
    row.step = s + 1;
    for (int b = 0; b < B; ++b) {
      const ElementResult& r = results[static_cast<std::size_t>(b)];
      if (!r.error.empty()) numeric_abort(s + 1, b, indices[static_cast<std::size_t>(b)], r.error);
      g_theta += r.grad.grad_theta;
      g_psi += r.grad.grad_psi;
      g_phi += r.grad.grad_phi_pathwise;
      g_phi += r.grad.grad_phi_rloo;
      row.elbo += r.grad.elbo;
      row.f1 += r.f1;
      row.f2 += r.f2;
    }
    const double inv = 1.0 / static_cast<double>(B);
    g_theta *= inv;
    g_psi *= inv;
    g_phi *= inv;
    row.elbo *= inv;
    row.f1 *= inv;
    row.f2 *= inv;
    row.grad_norm_theta = g_theta.norm();
    row.grad_norm_psi = g_psi.norm();
    row.grad_norm_phi = g_phi.norm();

    if (gopts.theta) opt_theta.step(model.denoiser.params, g_theta);
    if (gopts.psi) opt_psi.step(model.selector.params, g_psi);
    if (gopts.phi) opt_phi.step(model.score.params, g_phi);

    if (opts.timing) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (opts.on_row) opts.on_row(row);
    rows.push_back(row);
    if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && opts.on_checkpoint) {
      opts.on_checkpoint(s + 1, model);
    }
  }
  return rows;
}

}  // namespace mdmo
