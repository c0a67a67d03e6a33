/* C API of the segsr shared library.
 *
 * Every function returns a segsr_status; SEGSR_OK means success. On failure
 * segsr_last_error() returns a message describing what went wrong (the
 * pointer stays valid until the next API call on the same thread).
 * Handles are opaque and must be released with the matching _free call.
 */
#ifndef SEGSR_H
#define SEGSR_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum segsr_status {
    SEGSR_OK = 0,
    SEGSR_ERR_RUNTIME = 1, /* I/O failures, bad inputs, internal errors */
    SEGSR_ERR_NAN = 2,     /* training aborted on a non-finite loss      */
    SEGSR_ERR_CONFIG = 3   /* config schema or value violations          */
} segsr_status;

typedef struct segsr_config segsr_config;
typedef struct segsr_model segsr_model;

const char* segsr_last_error(void);
const char* segsr_version(void);
/* static reference text describing every config key */
const char* segsr_config_keys_help(void);

/* ---- configuration ---- */
segsr_status segsr_config_default(segsr_config** out);
segsr_status segsr_config_load(const char* path, segsr_config** out);
/* dotted key, value parsed as JSON (bare words become strings) */
segsr_status segsr_config_set(segsr_config* cfg, const char* key, const char* value);
/* semantic validation of the assembled config (types/keys are checked per set) */
segsr_status segsr_config_validate(const segsr_config* cfg);
segsr_status segsr_config_dump(const segsr_config* cfg, char** json_out);
void segsr_config_free(segsr_config* cfg);

/* ---- dataset preparation ---- */
segsr_status segsr_split(const char* root, int ratio_train, int ratio_test, uint64_t seed,
                         const char* out_manifest, char** summary_json);
segsr_status segsr_degrade(const char* root, const char* out_root, int scale, int* images_written);

/* ---- training / evaluation ---- */
/* resume_ckpt may be NULL. */
segsr_status segsr_train(const segsr_config* cfg, const char* out_dir, const char* resume_ckpt);
/* ckpt may be NULL when baseline_bicubic is nonzero. class_filter may be NULL. */
segsr_status segsr_evaluate(const segsr_config* cfg, const char* ckpt, const char* split,
                            int baseline_bicubic, const char* class_filter, const char* out_dir);

/* ---- inference on a loaded checkpoint ---- */
segsr_status segsr_model_load(const char* ckpt, segsr_model** out);
segsr_status segsr_model_infer(const segsr_model* model, const char* input_png,
                               const char* output_png);
/* writes <out_dir>/map_XX.png plus maps.json; *map_count gets k */
segsr_status segsr_model_export_maps(const segsr_model* model, const char* input_png,
                                     const char* out_dir, int* map_count);
segsr_status segsr_model_scale(const segsr_model* model, int* scale);
void segsr_model_free(segsr_model* model);

/* frees strings returned through char** out-parameters */
void segsr_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SEGSR_H */
