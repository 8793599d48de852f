#include "mdmo/mdmo.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "mdmo/checkpoint.hpp"
#include "mdmo/error.hpp"
#include "mdmo/harness.hpp"

struct mdmo_model {
  mdmo::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

mdmo_status status_for(mdmo::ErrorCode code) {
  using mdmo::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDomainError:
      return MDMO_ERR_INVALID_ARGUMENT;
    case ErrorCode::kConfig:
      return MDMO_ERR_CONFIG;
    case ErrorCode::kIo:
      return MDMO_ERR_IO;
    case ErrorCode::kParse:
      return MDMO_ERR_PARSE;
    case ErrorCode::kValidation:
      return MDMO_ERR_VALIDATION;
    case ErrorCode::kChecksum:
      return MDMO_ERR_CHECKSUM;
    case ErrorCode::kNumericFailure:
    case ErrorCode::kInfiniteKl:
      return MDMO_ERR_NUMERIC;
    case ErrorCode::kContractViolation:
    case ErrorCode::kInvalidState:
    case ErrorCode::kImpossibleTrajectory:
      return MDMO_ERR_CONTRACT;
    case ErrorCode::kInstanceTooLarge:
      return MDMO_ERR_INSTANCE_TOO_LARGE;
    case ErrorCode::kDeterminism:
      return MDMO_ERR_DETERMINISM;
  }
  return MDMO_ERR_INTERNAL;
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

mdmo::CommandOptions convert(const mdmo_options* o) {
  mdmo::CommandOptions c;
  if (!o) return c;
  c.has_seed = o->has_seed != 0;
  c.seed = o->seed;
  c.threads = o->threads;
  c.fault_inject = o->fault_inject != 0;
  c.timing = o->timing != 0;
  return c;
}

template <typename F>
mdmo_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const mdmo::Error& e) {
    g_last_error = std::string(mdmo::error_code_name(e.code())) + ": " + e.what();
    return status_for(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = std::string("internal: ") + e.what();
  } catch (...) {
    g_last_error = "internal: unknown exception";
  }
  return MDMO_ERR_INTERNAL;
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

mdmo_status finish(const mdmo::CommandOutcome& out, char** report) {
  if (report) *report = dup_string(out.report);
  if (out.exit_code == mdmo::kExitOk) return MDMO_OK;
  g_last_error = "property check failed";
  return MDMO_ERR_PROPERTY_FAILED;
}

void require_arg(const void* p, const char* name) {
  if (!p) mdmo::fail(mdmo::ErrorCode::kInvalidArgument, std::string(name) + " must not be null");
}

}  // namespace

extern "C" {

void mdmo_options_init(mdmo_options* opts) {
  if (opts) *opts = mdmo_options{0, 0, 0, 0, 0};
}

const char* mdmo_last_error(void) { return g_last_error.c_str(); }

const char* mdmo_status_name(mdmo_status status) {
  switch (status) {
    case MDMO_OK:
      return "ok";
    case MDMO_ERR_INVALID_ARGUMENT:
      return "invalid-argument";
    case MDMO_ERR_CONFIG:
      return "config";
    case MDMO_ERR_IO:
      return "io";
    case MDMO_ERR_PARSE:
      return "parse";
    case MDMO_ERR_VALIDATION:
      return "validation";
    case MDMO_ERR_CHECKSUM:
      return "checksum";
    case MDMO_ERR_NUMERIC:
      return "numeric";
    case MDMO_ERR_CONTRACT:
      return "contract-violation";
    case MDMO_ERR_INSTANCE_TOO_LARGE:
      return "instance-too-large";
    case MDMO_ERR_DETERMINISM:
      return "determinism";
    case MDMO_ERR_PROPERTY_FAILED:
      return "property-failed";
    case MDMO_ERR_INTERNAL:
      return "internal";
  }
  return "unknown";
}

int mdmo_exit_code(mdmo_status status) {
  switch (status) {
    case MDMO_OK:
      return 0;
    case MDMO_ERR_PROPERTY_FAILED:
    case MDMO_ERR_CONTRACT:
    case MDMO_ERR_DETERMINISM:
    case MDMO_ERR_INTERNAL:
      return 1;
    case MDMO_ERR_NUMERIC:
      return 3;
    default:
      return 2;
  }
}

void mdmo_string_free(char* s) { std::free(s); }

mdmo_status mdmo_train(const char* config_path, const char* out_dir, const mdmo_options* opts, char** report) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    require_arg(out_dir, "out_dir");
    return finish(mdmo::cmd_train(config_path, out_dir, convert(opts)), report);
  });
}

mdmo_status mdmo_bench(const char* ckpt_path, const char* strategies, const int* steps, int n_steps, const char* out_csv,
                       const mdmo_options* opts, char** report) {
  return guarded([&] {
    require_arg(ckpt_path, "ckpt_path");
    require_arg(strategies, "strategies");
    require_arg(out_csv, "out_csv");
    if (n_steps < 0 || (n_steps > 0 && !steps)) mdmo::fail(mdmo::ErrorCode::kInvalidArgument, "invalid steps list");
    std::vector<int> Ts(steps, steps + n_steps);
    return finish(mdmo::cmd_bench(ckpt_path, strategies, Ts, out_csv, convert(opts)), report);
  });
}

mdmo_status mdmo_sample(const char* ckpt_path, const char* strategy, int T, const char* out_path,
                        const mdmo_options* opts, char** report) {
  return guarded([&] {
    require_arg(ckpt_path, "ckpt_path");
    require_arg(strategy, "strategy");
    require_arg(out_path, "out_path");
    return finish(mdmo::cmd_sample(ckpt_path, strategy, T, out_path, convert(opts)), report);
  });
}

mdmo_status mdmo_gradcheck(const char* config_path, const mdmo_options* opts, char** report) {
  return guarded([&] { return finish(mdmo::cmd_gradcheck(str(config_path), convert(opts)), report); });
}

mdmo_status mdmo_oracle(const char* config_path, const mdmo_options* opts, char** report) {
  return guarded([&] { return finish(mdmo::cmd_oracle(str(config_path), convert(opts)), report); });
}

mdmo_status mdmo_gen_data(const char* config_path, const char* out_dir, const mdmo_options* opts, char** report) {
  return guarded([&] {
    require_arg(config_path, "config_path");
    require_arg(out_dir, "out_dir");
    return finish(mdmo::cmd_gen_data(config_path, out_dir, convert(opts)), report);
  });
}

mdmo_status mdmo_model_load(const char* ckpt_path, mdmo_model** out) {
  return guarded([&] {
    require_arg(ckpt_path, "ckpt_path");
    require_arg(out, "out");
    *out = nullptr;
    auto* m = new mdmo_model{mdmo::load_checkpoint(ckpt_path)};
    *out = m;
    return MDMO_OK;
  });
}

mdmo_status mdmo_model_save(const mdmo_model* model, const char* ckpt_path) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(ckpt_path, "ckpt_path");
    mdmo::save_checkpoint(model->ckpt, ckpt_path);
    return MDMO_OK;
  });
}

void mdmo_model_free(mdmo_model* model) { delete model; }

int mdmo_model_seq_len(const mdmo_model* model) { return model ? model->ckpt.config.task.N : -1; }
int mdmo_model_prompt_len(const mdmo_model* model) { return model ? model->ckpt.config.task.prompt_len : -1; }
int mdmo_model_steps(const mdmo_model* model) { return model ? model->ckpt.config.T : -1; }

mdmo_status mdmo_model_decode(const mdmo_model* model, const char* strategy, int T, const int* prompt, int prompt_len,
                              uint64_t seed, int* out_tokens, int out_len, int* steps_used) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(strategy, "strategy");
    require_arg(out_tokens, "out_tokens");
    const mdmo::RunConfig& cfg = model->ckpt.config;
    if (prompt_len != cfg.task.prompt_len) {
      mdmo::fail(mdmo::ErrorCode::kInvalidArgument, "prompt_len must equal the model's prompt length " +
                                                        std::to_string(cfg.task.prompt_len));
    }
    if (prompt_len > 0) require_arg(prompt, "prompt");
    if (out_len != cfg.task.N) mdmo::fail(mdmo::ErrorCode::kInvalidArgument, "out_len must equal the sequence length");
    mdmo::Sequence x;
    x.mask_id = cfg.task.mask_id();
    x.prompt_len = prompt_len;
    x.tokens.assign(static_cast<std::size_t>(cfg.task.N), x.mask_id);
    for (int n = 0; n < prompt_len; ++n) {
      if (prompt[n] < 0 || prompt[n] >= x.mask_id) mdmo::fail(mdmo::ErrorCode::kInvalidArgument, "prompt token out of range");
      x.tokens[static_cast<std::size_t>(n)] = prompt[n];
    }
    const mdmo::BenchRow row = mdmo::run_bench(model->ckpt, {x}, mdmo::parse_strategy(strategy), T > 0 ? T : cfg.T, seed, 1);
    const mdmo::DecodeResult& d = row.decoded.front();
    for (int n = 0; n < out_len; ++n) out_tokens[n] = d.output.tokens[static_cast<std::size_t>(n)];
    if (steps_used) *steps_used = d.steps_used;
    return MDMO_OK;
  });
}

}  // extern "C"
