#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdmo/config.hpp"
#include "mdmo/data.hpp"
#include "mdmo/nets.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW that ascends the objective. With lr = 0 parameters are untouched.
class AdamW {
 public:
  AdamW(const ParamVector& params, const AdamConfig& cfg);
  void step(ParamVector& params, const ParamVector& grad);

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

struct MetricsRow {
  int step = 0;
  double elbo = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_psi = 0.0;
  double grad_norm_phi = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
  /// Worker count for batch-parallel gradients; results do not depend on it.
  int threads = 1;
  /// Record wall-clock milliseconds; off keeps the CSV byte-reproducible.
  bool timing = false;
  std::function<void(const MetricsRow&)> on_row;
  /// Called every `checkpoint_every` steps with the 1-based step count.
  std::function<void(int step, const Model&)> on_checkpoint;
};

/// Ascends the ELBO for cfg.train_steps steps. Batch element b of step s
/// draws its example and randomness from derive_seed(cfg.seed, s + 1, b + 1),
/// and per-element gradients are summed in batch order. A non-finite loss or
/// gradient throws kNumericFailure naming the step and dataset index.
std::vector<MetricsRow> train_loop(const Dataset& data, Model& model, const RunConfig& cfg, const TrainOptions& opts);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace mdmo
