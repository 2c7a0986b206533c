#ifndef RED_H
#define RED_H

/* C interface to the reversible fusion library. Every call returns a
   red_status; on failure red_last_error() describes the problem (per thread,
   valid until the next failing call on that thread). */

#include <stddef.h>

#if defined(_WIN32)
#define RED_API __declspec(dllexport)
#else
#define RED_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum red_status {
  RED_OK = 0,
  RED_ERR_USAGE = 1,
  RED_ERR_DATA = 2,
  RED_ERR_NUMERIC = 3,
  RED_ERR_IO = 4,
  RED_ERR_SHAPE = 5,
  RED_ERR_INTERNAL = 6
} red_status;

typedef struct red_config red_config;
typedef struct red_model red_model;

/* Receives one line of text (no trailing newline). */
typedef void (*red_sink)(const char* line, void* user);

RED_API const char* red_last_error(void);
/* "usage", "data", "numeric", "io", "shape", "internal" or "ok". */
RED_API const char* red_status_name(red_status status);
RED_API const char* red_version(void);

RED_API red_status red_config_create(red_config** out);
RED_API void red_config_destroy(red_config* cfg);
RED_API red_status red_config_set(red_config* cfg, const char* key, const char* value);
RED_API red_status red_config_load_file(red_config* cfg, const char* path);
/* Copies the value into buf (NUL-terminated); *needed gets the full length + 1. */
RED_API red_status red_config_get(const red_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);

RED_API red_status red_model_create(const red_config* cfg, red_model** out);
RED_API red_status red_model_load(const char* path, red_model** out);
RED_API red_status red_model_save(const red_model* model, const char* path);
RED_API void red_model_destroy(red_model* model);
RED_API red_status red_model_w(const red_model* model, double* out);

/* Trains for the configured step count. Writes <output_root>/checkpoint.redc
   and <output_root>/train_log.jsonl; each log line also goes to on_line. */
RED_API red_status red_train(red_model* model, const red_config* cfg, red_sink on_line, red_sink on_warning,
                             void* user);

/* Writes <out_root>/fused/<name>.pgm for every pair under <data_root>/{vis,ir}. */
RED_API red_status red_fuse_directory(const red_model* model, const char* data_root, const char* out_root,
                                      int pad_to_even, red_sink on_warning, void* user);

/* Scores every .pgm in fused_root against <data_root>/{vis,ir}. The JSON report and
   the text table are delivered whole through the sinks. */
RED_API red_status red_eval_directory(const char* data_root, const char* fused_root, int range_255,
                                      red_sink on_json, red_sink on_table, red_sink on_warning, void* user);

RED_API red_status red_bench_mem(const red_config* cfg, red_sink on_json, red_sink on_table, red_sink on_progress,
                                 void* user);

#ifdef __cplusplus
}
#endif

#endif
