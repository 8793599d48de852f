#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mdmo/mdmo.h"

namespace {

int report_status(mdmo_status st, char*& report) {
  if (report) {
    std::fputs(report, stdout);
    mdmo_string_free(report);
    report = nullptr;
  }
  if (st != MDMO_OK) std::fprintf(stderr, "error: %s\n", mdmo_last_error());
  return mdmo_exit_code(st);
}

std::vector<int> parse_steps(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion with learned unmasking orders"};
  app.require_subcommand(1);

  std::string config, ckpt, out, strategies = "iid,top-prob,top-prob-margin,learned", steps;
  std::uint64_t seed = 0;
  int threads = 0;
  bool fault = false, timing = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the seed (recorded in the emitted metadata)");
    sub->add_option("--threads", threads, "Worker threads (default: config, then hardware)")->check(CLI::NonNegativeNumber);
  };

  CLI::App* train = app.add_subcommand("train", "Train and write model.ckpt, metrics.csv and meta.json");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_flag("--timing", timing, "Record wall-clock time in metrics.csv");
  add_common(train);

  CLI::App* bench = app.add_subcommand("bench", "Decode the test split with each strategy and step count");
  bench->add_option("--ckpt", ckpt, "Checkpoint")->required();
  bench->add_option("--strategies", strategies, "Comma-separated: iid, top-prob, top-prob-margin, learned");
  bench->add_option("--steps", steps, "Comma-separated step counts (default: the checkpoint's T)");
  bench->add_option("--out", out, "CSV output path")->required();
  add_common(bench);

  CLI::App* sample = app.add_subcommand("sample", "Decode the test split with one strategy");
  std::string strategy = "learned";
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample->add_option("--strategies", strategy, "Strategy name");
  sample->add_option("--steps", steps, "Step count (default: the checkpoint's T)");
  sample->add_option("--out", out, "Output dataset file")->required();
  add_common(sample);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->add_option("--config", config, "Run config supplying the seed");
  gradcheck->add_flag("--fault-inject", fault, "Flip the sign of one analytic gradient segment");
  add_common(gradcheck);

  CLI::App* oracle = app.add_subcommand("oracle", "Enumeration oracle checks");
  oracle->add_option("--config", config, "Run config supplying T, tau and the scale mode");
  add_common(oracle);

  CLI::App* gen = app.add_subcommand("gen-data", "Write train.txt and test.txt for the config's task");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();
  add_common(gen);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  mdmo_options opts;
  mdmo_options_init(&opts);
  opts.threads = threads;
  opts.fault_inject = fault ? 1 : 0;
  opts.timing = timing ? 1 : 0;
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) {
      opts.has_seed = 1;
      opts.seed = seed;
    }
  }

  std::vector<int> step_list;
  try {
    step_list = parse_steps(steps);
  } catch (const std::exception&) {
    std::fprintf(stderr, "error: --steps must be a comma-separated list of integers\n");
    return 2;
  }

  char* report = nullptr;
  mdmo_status st = MDMO_ERR_INVALID_ARGUMENT;
  if (train->parsed()) {
    st = mdmo_train(config.c_str(), out.c_str(), &opts, &report);
  } else if (bench->parsed()) {
    st = mdmo_bench(ckpt.c_str(), strategies.c_str(), step_list.data(), static_cast<int>(step_list.size()), out.c_str(),
                    &opts, &report);
  } else if (sample->parsed()) {
    if (step_list.size() > 1) {
      std::fprintf(stderr, "error: sample takes a single step count\n");
      return 2;
    }
    const int T = step_list.empty() ? 0 : step_list.front();
    st = mdmo_sample(ckpt.c_str(), strategy.c_str(), T, out.c_str(), &opts, &report);
  } else if (gradcheck->parsed()) {
    st = mdmo_gradcheck(config.empty() ? nullptr : config.c_str(), &opts, &report);
  } else if (oracle->parsed()) {
    st = mdmo_oracle(config.empty() ? nullptr : config.c_str(), &opts, &report);
  } else if (gen->parsed()) {
    st = mdmo_gen_data(config.c_str(), out.c_str(), &opts, &report);
  }
  return report_status(st, report);
}
