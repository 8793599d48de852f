#ifndef MDMO_MDMO_H
#define MDMO_MDMO_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MDMO_API __declspec(dllexport)
#else
#define MDMO_API __attribute__((visibility("default")))
#endif

typedef enum mdmo_status {
  MDMO_OK = 0,
  MDMO_ERR_INVALID_ARGUMENT = 1,
  MDMO_ERR_CONFIG = 2,
  MDMO_ERR_IO = 3,
  MDMO_ERR_PARSE = 4,
  MDMO_ERR_VALIDATION = 5,
  MDMO_ERR_CHECKSUM = 6,
  MDMO_ERR_NUMERIC = 7,
  MDMO_ERR_CONTRACT = 8,
  MDMO_ERR_INSTANCE_TOO_LARGE = 9,
  MDMO_ERR_DETERMINISM = 10,
  MDMO_ERR_PROPERTY_FAILED = 11,
  MDMO_ERR_INTERNAL = 12
} mdmo_status;

typedef struct mdmo_model mdmo_model;

typedef struct mdmo_options {
  uint64_t seed;
  /* Nonzero to override the config seed with `seed`. */
  int has_seed;
  /* 0 defers to the config, then to the hardware thread count. */
  int threads;
  /* Gradcheck negative control. */
  int fault_inject;
  /* Record wall-clock time in metrics CSVs. */
  int timing;
} mdmo_options;

MDMO_API void mdmo_options_init(mdmo_options* opts);

/* Message of the last failed call on this thread; empty after success. */
MDMO_API const char* mdmo_last_error(void);
MDMO_API const char* mdmo_status_name(mdmo_status status);
/* Process exit code for a status: 0 ok, 1 property failure, 2 usage, 3 numeric. */
MDMO_API int mdmo_exit_code(mdmo_status status);
MDMO_API void mdmo_string_free(char* s);

/* Commands. `report`, when non-null, receives a heap string owned by the
   caller (free with mdmo_string_free); it is set on success and on property
   failures. `opts` may be null. */
MDMO_API mdmo_status mdmo_train(const char* config_path, const char* out_dir, const mdmo_options* opts, char** report);
MDMO_API mdmo_status mdmo_bench(const char* ckpt_path, const char* strategies, const int* steps, int n_steps,
                                const char* out_csv, const mdmo_options* opts, char** report);
MDMO_API mdmo_status mdmo_sample(const char* ckpt_path, const char* strategy, int T, const char* out_path,
                                 const mdmo_options* opts, char** report);
/* config_path may be null. */
MDMO_API mdmo_status mdmo_gradcheck(const char* config_path, const mdmo_options* opts, char** report);
MDMO_API mdmo_status mdmo_oracle(const char* config_path, const mdmo_options* opts, char** report);
MDMO_API mdmo_status mdmo_gen_data(const char* config_path, const char* out_dir, const mdmo_options* opts, char** report);

/* Model handles. */
MDMO_API mdmo_status mdmo_model_load(const char* ckpt_path, mdmo_model** out);
MDMO_API mdmo_status mdmo_model_save(const mdmo_model* model, const char* ckpt_path);
MDMO_API void mdmo_model_free(mdmo_model* model);
MDMO_API int mdmo_model_seq_len(const mdmo_model* model);
MDMO_API int mdmo_model_prompt_len(const mdmo_model* model);
MDMO_API int mdmo_model_steps(const mdmo_model* model);

/* Decodes one sequence from `prompt` (prompt_len tokens of the model's
   prompt length) into `out_tokens` (seq_len entries). */
MDMO_API mdmo_status mdmo_model_decode(const mdmo_model* model, const char* strategy, int T, const int* prompt,
                                       int prompt_len, uint64_t seed, int* out_tokens, int out_len, int* steps_used);

#ifdef __cplusplus
}
#endif

#endif
