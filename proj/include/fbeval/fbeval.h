#ifndef FBEVAL_FBEVAL_H
#define FBEVAL_FBEVAL_H

#include <stddef.h>
#include <stdint.h>

#if defined(FBEVAL_BUILDING_LIBRARY)
#define FBE_API __attribute__((visibility("default")))
#else
#define FBE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum {
    FBE_OK = 0,
    FBE_ERR_INVALID_ARGUMENT = 1, /* API misuse: null pointers, bad enum values */
    FBE_ERR_CONFIG = 2,
    FBE_ERR_PIPELINE = 3,
    FBE_ERR_JUDGE_FORMAT = 4,
    FBE_ERR_INTERNAL = 5
} fbe_status;

typedef enum { FBE_FORMAT_JSON = 0, FBE_FORMAT_CSV = 1, FBE_FORMAT_MARKDOWN = 2 } fbe_format;

typedef struct fbe_pipeline fbe_pipeline;

FBE_API const char* fbe_version(void);

/* Message of the last failed call on this thread; "" after a success. */
FBE_API const char* fbe_last_error(void);

/* Loads a JSON config file and applies "dotted.key=value" overrides. */
FBE_API fbe_status fbe_pipeline_create(const char* config_path, const char* const* overrides, size_t n_overrides,
                                       fbe_pipeline** out);
FBE_API void fbe_pipeline_destroy(fbe_pipeline* pipeline);

FBE_API fbe_status fbe_pipeline_run(fbe_pipeline* pipeline, const char* command);

/* Borrowed; valid until the pipeline is destroyed. */
FBE_API const char* fbe_pipeline_run_dir(const fbe_pipeline* pipeline);
FBE_API const char* fbe_pipeline_config_hash(const fbe_pipeline* pipeline);

/* Re-renders report.{json,csv,md} in a run directory and returns the
   requested format in *out, to be released with fbe_string_free. */
FBE_API fbe_status fbe_render_report(const char* run_dir, fbe_format format, char** out);
FBE_API void fbe_string_free(char* s);

/* Statistics. */
FBE_API double fbe_pabak(double observed_agreement);
/* table is a row-major k x k agreement table. */
FBE_API fbe_status fbe_cohen_kappa(const uint64_t* table, size_t k, double* kappa, int* degenerate);
FBE_API fbe_status fbe_fisher_exact(uint64_t a, uint64_t b, uint64_t c, uint64_t d, double* p);
FBE_API fbe_status fbe_mann_whitney(const double* first, size_t n1, const double* second, size_t n2, double* u,
                                    double* p, int* exact);
/* validity and action are the lowercase wire names. Returns 1, 0, or -1 for unknown labels. */
FBE_API int fbe_success_indicator(const char* validity, const char* action);

#ifdef __cplusplus
}
#endif

#endif
