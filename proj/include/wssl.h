/*
 * Split-learning training engine: C API.
 *
 * All functions returning int give WSSL_OK (0) on success or one of the
 * WSSL_ERR_* codes; wssl_last_error() then holds a message for the calling
 * thread. Handles are opaque and owned by the caller via the matching
 * _free function. A run handle is immutable once created; config handles
 * are not thread-safe, run handles may be read from any thread.
 */
#ifndef WSSL_H
#define WSSL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define WSSL_OK 0
#define WSSL_ERR_INVALID 1  /* bad argument (null handle, out-of-range round) */
#define WSSL_ERR_CONFIG 2   /* bad configuration key, value, or file */
#define WSSL_ERR_IO 3       /* filesystem or socket failure */
#define WSSL_ERR_PROTOCOL 4 /* malformed or unexpected message traffic */
#define WSSL_ERR_TIMEOUT 5
#define WSSL_ERR_INTERNAL 6

typedef struct wssl_config wssl_config;
typedef struct wssl_run wssl_run;

const char* wssl_version(void);

/* Message for the most recent failed call on this thread; never NULL. */
const char* wssl_last_error(void);

/* ------------------------------------------------------------- config -- */

/* Built-in defaults: synthetic 2000x20 two-class blobs, 4 clients,
 * 20 rounds, batch 128, lr 0.05/0.05, in-process transport, seed 0. */
wssl_config* wssl_config_default(void);

/* JSON text / file with the schema documented in the README. NULL on
 * failure (wssl_last_error() explains). */
wssl_config* wssl_config_from_json(const char* text);
wssl_config* wssl_config_from_file(const char* path);

void wssl_config_free(wssl_config* cfg);

/* Keys for set_int: clients, rounds, batch_size, seed, clients_per_round,
 * broadcast_global, timing_in_csv, threaded_clients (last three 0/1),
 * dataset.rows, dataset.dim, dataset.classes.
 * Keys for set_real: client_lr, server_lr, train_fraction,
 * dataset.separation.
 * Keys for set_string: transport ("inproc" | "tcp:<port>"), importance
 * ("inverse_loss" | "accuracy"), output, dataset.kind ("csv" | "synth"),
 * dataset.path, dataset.label_column. */
int wssl_config_set_int(wssl_config* cfg, const char* key, long long value);
int wssl_config_set_real(wssl_config* cfg, const char* key, double value);
int wssl_config_set_string(wssl_config* cfg, const char* key, const char* value);

/* --------------------------------------------------------------- runs -- */

/* Full split training run / centralized baseline on the pooled data.
 * On success *out owns the results; on failure *out is NULL. If the config
 * names an output path the metrics CSV is written as a side effect. */
int wssl_run_split(const wssl_config* cfg, wssl_run** out);
int wssl_run_centralized(const wssl_config* cfg, wssl_run** out);

void wssl_run_free(wssl_run* run);

size_t wssl_run_round_count(const wssl_run* run);

/* Any output pointer may be NULL to skip that metric. */
int wssl_run_round_metrics(const wssl_run* run, size_t round, double* train_loss,
                           double* val_accuracy, double* wall_ms);

/* Copies up to cap ids (sampled order) into buf; *count gets the full
 * number selected that round. buf may be NULL when cap is 0. */
int wssl_run_round_selected(const wssl_run* run, size_t round, int32_t* buf, size_t cap,
                            size_t* count);

/* Per-client normalized importance weights, client-id order; same buffer
 * contract as wssl_run_round_selected. Empty for centralized runs. */
int wssl_run_round_gammas(const wssl_run* run, size_t round, double* buf, size_t cap,
                          size_t* count);

int wssl_run_write_csv(const wssl_run* run, const char* path);

/* ------------------------------------------------------------ digests -- */

/* Computes the configured client partitions and writes their SHA-256
 * manifest (JSON) to path. */
int wssl_digests_write(const wssl_config* cfg, const char* path);

/* Recomputes the partitions and checks them against the manifest. Returns
 * WSSL_OK even when digests differ: *failing_count holds the number of
 * mismatched client ids (0 means verified), and up to cap of them are
 * copied into failing_buf. */
int wssl_digests_verify(const wssl_config* cfg, const char* path, int32_t* failing_buf,
                        size_t cap, size_t* failing_count);

#ifdef __cplusplus
}
#endif

#endif
