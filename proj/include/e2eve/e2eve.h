/* C interface to the e2eve library. Every call returns an e2eve_status; on failure the
 * message is available from e2eve_last_error() on the same thread. Strings handed out
 * through char** must be released with e2eve_free_string(). */
#ifndef E2EVE_E2EVE_H
#define E2EVE_E2EVE_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define E2EVE_API __declspec(dllexport)
#else
#define E2EVE_API __attribute__((visibility("default")))
#endif

typedef enum e2eve_status {
  E2EVE_OK = 0,
  E2EVE_ERR_INVALID_ARGUMENT = 1,
  E2EVE_ERR_IO = 2,
  E2EVE_ERR_NO_IMAGES = 3,
  E2EVE_ERR_MASK_SHAPE_MISMATCH = 4,
  E2EVE_ERR_EMPTY_MASK = 5,
  E2EVE_ERR_INFEASIBLE_REGION = 6,
  E2EVE_ERR_INFEASIBLE_CROP = 7,
  E2EVE_ERR_SHAPE = 8,
  E2EVE_ERR_INVALID_TOKEN = 9,
  E2EVE_ERR_DIVERGENCE = 10,
  E2EVE_ERR_SEQUENCE_TOO_LONG = 11,
  E2EVE_ERR_MODEL_MISMATCH = 12,
  E2EVE_ERR_INVALID_REQUEST = 13,
  E2EVE_ERR_INSUFFICIENT_DATA = 14,
  E2EVE_ERR_UNSUPPORTED = 15,
  E2EVE_ERR_FORMAT = 16,
  E2EVE_ERR_INTERNAL = 99
} e2eve_status;

typedef struct e2eve_config e2eve_config; /* run configuration (all modules) */
typedef struct e2eve_model e2eve_model;   /* artist plus its two quantizers, read-only */
typedef struct e2eve_server e2eve_server; /* HTTP editing service */

typedef void (*e2eve_log_fn)(const char* line, void* user);

E2EVE_API const char* e2eve_version(void);
E2EVE_API const char* e2eve_last_error(void);
E2EVE_API const char* e2eve_status_name(int status);
E2EVE_API void e2eve_free_string(char* s);
/* Progress lines from long-running calls; NULL silences them. Process-wide. */
E2EVE_API void e2eve_set_log(e2eve_log_fn fn, void* user);

/* Configuration. "toy" and "paper-scale" are the presets. A config file is JSON whose
 * optional "preset" key picks the base and whose other keys patch it. */
E2EVE_API e2eve_status e2eve_config_preset(const char* name, e2eve_config** out);
E2EVE_API e2eve_status e2eve_config_load(const char* path, e2eve_config** out);
/* RFC 7386 merge patch, e.g. {"seed": 3, "artist": {"layers": 2}}. */
E2EVE_API e2eve_status e2eve_config_patch(e2eve_config* cfg, const char* json_patch);
E2EVE_API e2eve_status e2eve_config_validate(const e2eve_config* cfg);
E2EVE_API e2eve_status e2eve_config_to_json(const e2eve_config* cfg, char** out_json);
E2EVE_API e2eve_status e2eve_config_describe(const e2eve_config* cfg, char** out_text);
/* Module seeds derived from the run seed, as JSON. */
E2EVE_API e2eve_status e2eve_config_seeds(const e2eve_config* cfg, char** out_json);
E2EVE_API void e2eve_config_free(e2eve_config* cfg);

/* Data: both write <out_dir>/manifest.json. */
E2EVE_API e2eve_status e2eve_data_toy(const e2eve_config* cfg, const char* out_dir);
E2EVE_API e2eve_status e2eve_data_ingest(const e2eve_config* cfg, const char* in_dir, const char* out_dir);

/* Writes quadruplet shards for one split ("train" or "val"). */
E2EVE_API e2eve_status e2eve_synth(const e2eve_config* cfg, const char* manifest_path, const char* split,
                                   const char* shards_dir);

/* role "image" trains on the manifest's train images; role "driver" trains on the drivers of
 * the quadruplets in shards_dir. The unused source may be NULL. */
E2EVE_API e2eve_status e2eve_train_vq(const e2eve_config* cfg, const char* role, const char* manifest_path,
                                      const char* shards_dir, const char* out_ckpt);

/* Exactly one of shards_dir / manifest_path: shards are read from disk, a manifest is
 * synthesized in memory with the config's synth settings. */
E2EVE_API e2eve_status e2eve_train_artist(const e2eve_config* cfg, const char* vq_image_ckpt,
                                          const char* vq_driver_ckpt, const char* shards_dir,
                                          const char* manifest_path, const char* out_ckpt);

E2EVE_API e2eve_status e2eve_model_load(const char* artist_ckpt, e2eve_model** out);
E2EVE_API e2eve_status e2eve_model_info(const e2eve_model* model, char** out_json);
E2EVE_API void e2eve_model_free(e2eve_model* model);

/* Generates candidates for one edit and writes the kept ones as PNGs plus samples.json into
 * out_dir. request_json: {"n", "keep", "policy": {"kind","p","k","temperature"}, "seed",
 * "rect": [top,left,height,width]} where "rect" is used when mask_png is NULL. driver_png may be
 * NULL for driver-free inpainting. The sidecar JSON is also returned through out_json. */
E2EVE_API e2eve_status e2eve_sample(const e2eve_model* model, const char* source_png, const char* mask_png,
                                    const char* driver_png, const char* request_json, const char* out_dir,
                                    char** out_json);

/* E2EVE, Copy-Paste and Inpaint metrics on the manifest's val split. Writes report_path
 * when non-NULL. */
E2EVE_API e2eve_status e2eve_evaluate(const e2eve_config* cfg, const e2eve_model* model, const char* manifest_path,
                                      const char* report_path, char** out_json);

/* toy corpus, synth, both quantizers, artist, evaluation under workdir; writes report.json. */
E2EVE_API e2eve_status e2eve_pipeline(const e2eve_config* cfg, const char* workdir, char** out_json);

/* Service. ckpt_dir holds artist.ckpt; samples_dir and host may be NULL. Port, max_jobs and
 * session ttl come from the config's serve section (port 0 picks a free port). */
E2EVE_API e2eve_status e2eve_server_create(const e2eve_config* cfg, const char* ckpt_dir, const char* samples_dir,
                                           const char* host, e2eve_server** out);
/* Binds, starts loading the model in the background, and serves until stopped. */
E2EVE_API e2eve_status e2eve_server_run(e2eve_server* server);
/* Same, on a background thread; the bound port is stored in *port. */
E2EVE_API e2eve_status e2eve_server_start(e2eve_server* server, int* port);
E2EVE_API e2eve_status e2eve_server_stop(e2eve_server* server);
E2EVE_API void e2eve_server_free(e2eve_server* server);

#ifdef __cplusplus
}
#endif

#endif
