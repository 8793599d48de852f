#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdmo/loss.hpp"
#include "mdmo/nets.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

struct SegmentError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Values at the worst coordinate.
  double analytic = 0.0;
  double numeric = 0.0;
};

struct FdReport {
  bool pass = true;
  double tol = 0.0;
  double max_rel_error = 0.0;
  /// Flat coordinate and segment with the largest error.
  std::size_t worst_index = 0;
  std::string worst_segment;
  std::vector<SegmentError> segments;
  /// Names of segments above tolerance.
  std::vector<std::string> failing;
};

using LossFn = std::function<double(const ParamVector& params)>;

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-6);

/// Compares `analytic` with central differences of `loss` (step h) at every
/// coordinate. `loss` must be deterministic: two evaluations at the base
/// point that differ raise kDeterminism.
FdReport finite_diff_check(const ParamVector& params, const LossFn& loss, const ParamVector& analytic, double h = 1e-5,
                           double tol = 1e-4);

struct GradcheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 42;
  /// Flips the sign of the analytic gradient of this segment before the
  /// comparison; empty disables the fault.
  std::string fault_segment;
};

/// One named comparison of the verification suite.
struct GradcheckEntry {
  std::string check;
  NetRole role = NetRole::kDenoiser;
  FdReport report;
};

struct GradcheckResult {
  bool pass = true;
  std::vector<GradcheckEntry> entries;
};

/// Finite-difference verification of every network on seeded tiny models:
/// the frozen-path estimator objectives (pathwise and score-function) and the
/// exact enumerated ELBO.
GradcheckResult run_gradcheck(const GradcheckOptions& opts);

/// Human-readable report: one line per (check, segment).
std::string format_gradcheck(const GradcheckResult& result);

}  // namespace mdmo
