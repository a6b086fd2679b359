#ifndef CONVEQ_H
#define CONVEQ_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CONVEQ_API __declspec(dllexport)
#else
#define CONVEQ_API __attribute__((visibility("default")))
#endif

typedef enum conveq_status {
    CONVEQ_OK = 0,
    CONVEQ_ERR_INVALID_INPUT = 1, /* malformed spec/config or violated precondition */
    CONVEQ_ERR_BUDGET = 2,        /* grid, series or memory budget exceeded */
    CONVEQ_ERR_QUADRATURE = 3,    /* quadrature missed its tolerance */
    CONVEQ_ERR_INTERNAL = 4
} conveq_status;

typedef enum conveq_verdict {
    CONVEQ_MEMBER = 0,
    CONVEQ_NOT_MEMBER = 1,
    CONVEQ_INCONCLUSIVE = 2
} conveq_verdict;

typedef struct conveq_density conveq_density;

CONVEQ_API const char* conveq_version(void);

/* Message of the last failed call on this thread; "" if none. Valid until the
   next call on the same thread. */
CONVEQ_API const char* conveq_last_error(void);

/* Strings returned through char** out-parameters belong to the caller. */
CONVEQ_API void conveq_string_free(char* s);

/* Density from a JSON spec, e.g.
   {"d":2,"profile":{"kind":"tempered","m":1,"beta":2},"eta":{"kind":"constant","a":1}} */
CONVEQ_API conveq_status conveq_density_create(const char* spec_json, conveq_density** out);
CONVEQ_API void conveq_density_destroy(conveq_density* f);
CONVEQ_API int conveq_density_dim(const conveq_density* f);
/* Spec with all defaults filled in. */
CONVEQ_API conveq_status conveq_density_spec(const conveq_density* f, char** spec_json);
CONVEQ_API conveq_status conveq_density_eval(const conveq_density* f, const double* x, size_t d, double* out);
CONVEQ_API conveq_status conveq_density_l1_norm(const conveq_density* f, double quad_tol, double* out);

/* Pipelines. config_json may be NULL or "" for defaults; unknown keys are
   rejected. Every artifact embeds the resolved config, the density spec and
   the library version, and is byte-identical across reruns. */

/* keys: "theta" (default first axis) plus the classify options. */
CONVEQ_API conveq_status conveq_classify(const conveq_density* f, const char* config_json, conveq_verdict* verdict,
                                         char** report_json);

/* CSV r,k_estimate,stabilization_indicator and a JSON summary with the
   fitted slope. */
CONVEQ_API conveq_status conveq_kcurve(const conveq_density* f, const char* config_json, char** csv,
                                       char** summary_json);

/* Evidence JSON for the compound Poisson law with rate "lambda"; histogram
   CSV only when "mc_samples" > 0 (else *histogram_csv is NULL). all_pass is
   1 when every check passed. */
CONVEQ_API conveq_status conveq_cpoisson(const conveq_density* f, const char* config_json, int* all_pass,
                                         char** evidence_json, char** histogram_csv);

/* Slice through the origin of the n-fold self-convolution: x, value, error,
   trusted. */
CONVEQ_API conveq_status conveq_conv(const conveq_density* f, const char* config_json, char** csv);

/* Random sums: index, count, x_0..x_{d-1}. */
CONVEQ_API conveq_status conveq_sample(const conveq_density* f, const char* config_json, char** csv);

#ifdef __cplusplus
}
#endif

#endif
