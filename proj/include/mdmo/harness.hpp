#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdmo/checkpoint.hpp"
#include "mdmo/config.hpp"
#include "mdmo/error.hpp"
#include "mdmo/samplers.hpp"

namespace mdmo {

enum ExitCode { kExitOk = 0, kExitPropertyFailure = 1, kExitUsage = 2, kExitNumeric = 3 };

struct CommandOptions {
  bool has_seed = false;
  std::uint64_t seed = 0;
  /// 0 defers to the config, then to the hardware thread count.
  int threads = 0;
  /// Gradcheck negative control: flips the sign of one analytic segment.
  bool fault_inject = false;
  /// Record wall-clock time in the metrics CSV.
  bool timing = false;
};

/// Exit code plus the text report the command produced. Errors are thrown as
/// mdmo::Error; exit_code_for maps them onto the exit-code contract.
struct CommandOutcome {
  int exit_code = kExitOk;
  std::string report;
};

int exit_code_for(ErrorCode code);

/// Writes model.ckpt, metrics.csv and meta.json into out_dir (created if
/// needed). Periodic checkpoints go to ckpt_step<N>.ckpt.
CommandOutcome cmd_train(const std::string& config_path, const std::string& out_dir, const CommandOptions& opts);
/// One CSV row per (strategy, T) over the checkpoint's test split, plus
/// <out_csv>.meta.json. Empty `steps` uses the checkpoint's T.
CommandOutcome cmd_bench(const std::string& ckpt_path, const std::string& strategies, const std::vector<int>& steps,
                         const std::string& out_csv, const CommandOptions& opts);
/// Decodes the test split with one strategy and writes the outputs in the
/// dataset file format.
CommandOutcome cmd_sample(const std::string& ckpt_path, const std::string& strategy, int T, const std::string& out_path,
                          const CommandOptions& opts);
/// Finite-difference suite; the config (optional) supplies the seed.
CommandOutcome cmd_gradcheck(const std::string& config_path, const CommandOptions& opts);
/// Oracle suites on random enumerable instances using the config's T, tau
/// and scale mode: bound, normalisation, unbiasedness and reduction.
CommandOutcome cmd_oracle(const std::string& config_path, const CommandOptions& opts);
/// Writes train.txt and test.txt for the config's task into out_dir.
CommandOutcome cmd_gen_data(const std::string& config_path, const std::string& out_dir, const CommandOptions& opts);

std::string bench_csv_header();

struct BenchRow {
  Strategy strategy = Strategy::kIid;
  int T = 0;
  EvalMetrics metrics;
  std::uint64_t seed = 0;
  std::vector<DecodeResult> decoded;
};

std::string format_bench_row(const BenchRow& row);

/// Decodes every test sequence with one strategy; example i draws from
/// derive_seed(seed, strategy + 1, T, i + 1).
BenchRow run_bench(const Checkpoint& ckpt, const std::vector<Sequence>& test, Strategy strategy, int T, std::uint64_t seed,
                   int threads);

/// Threads to use: the explicit value, then the config, then the hardware.
int resolve_threads(int requested, int config_threads);

}  // namespace mdmo
