#ifndef DSGRL_H
#define DSGRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsgrlStatus {
  DSGRL_STATUS_OK = 0,
  DSGRL_STATUS_NULL_POINTER = 1,
  DSGRL_STATUS_INVALID_UTF8 = 2,
  DSGRL_STATUS_SHAPE = 3,
  DSGRL_STATUS_NUMERIC = 4,
  DSGRL_STATUS_LIFECYCLE = 5,
  DSGRL_STATUS_PARSE = 6,
  DSGRL_STATUS_RANGE = 7,
  DSGRL_STATUS_CONSISTENCY = 8,
  DSGRL_STATUS_CONFIG = 9,
  DSGRL_STATUS_FORMAT = 10,
  DSGRL_STATUS_PROTOCOL = 11,
  DSGRL_STATUS_IO = 12,
  DSGRL_STATUS_PANIC = 13,
} DsgrlStatus;

// A loaded or generated graph.
typedef struct DsgrlGraph DsgrlGraph;

// A trained (or loaded) model checkpoint.
typedef struct DsgrlModel DsgrlModel;

// A dense row-major `f64` matrix.
typedef struct DsgrlTensor DsgrlTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// successful one. Valid until the next `dsgrl_*` call on the same thread.
const char *dsgrl_last_error(void);

// Loads a graph from an edge list and a feature file (CSV or DSGF).
// `labels` may be NULL.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum DsgrlStatus dsgrl_graph_load(const char *edges,
                                  const char *features,
                                  const char *labels,
                                  bool directed,
                                  bool header,
                                  struct DsgrlGraph **out);

// Generates a labeled stochastic block model graph. `config_json` may be
// NULL for the defaults (3 blocks of 50, p_in 0.1, p_out 0.01, noise 0.5).
//
// # Safety
// `config_json` must be NULL or NUL-terminated; `out` must be writable.
enum DsgrlStatus dsgrl_graph_sbm(const char *config_json, struct DsgrlGraph **out);

// # Safety
// `g` must be NULL or a live graph handle.
size_t dsgrl_graph_num_nodes(const struct DsgrlGraph *g);

// # Safety
// `g` must be NULL or a live graph handle.
size_t dsgrl_graph_num_features(const struct DsgrlGraph *g);

// Copies node labels into `buf` (length `len` must equal the node count);
// unlabeled nodes get -1.
//
// # Safety
// `buf` must point to `len` writable `int64_t`.
enum DsgrlStatus dsgrl_graph_labels(const struct DsgrlGraph *g, int64_t *buf, size_t len);

// # Safety
// `g` must be NULL or a handle not yet freed.
void dsgrl_graph_free(struct DsgrlGraph *g);

// Trains on `g`. `config_json` may be NULL for defaults. `out_embeddings`
// may be NULL; otherwise it receives the final `[Z₁ | Z₂]`.
//
// # Safety
// Handles must be live; out pointers writable when non-NULL.
enum DsgrlStatus dsgrl_train(const struct DsgrlGraph *g,
                             const char *config_json,
                             struct DsgrlModel **out_model,
                             struct DsgrlTensor **out_embeddings);

// Node embeddings of `g` under a model.
//
// # Safety
// Handles must be live; `out` writable.
enum DsgrlStatus dsgrl_embed(const struct DsgrlModel *m,
                             const struct DsgrlGraph *g,
                             struct DsgrlTensor **out);

// # Safety
// `m` must be live; `path` NUL-terminated.
enum DsgrlStatus dsgrl_model_save(const struct DsgrlModel *m, const char *path);

// # Safety
// `path` NUL-terminated; `out` writable.
enum DsgrlStatus dsgrl_model_load(const char *path, struct DsgrlModel **out);

// Epochs the model was trained for.
//
// # Safety
// `m` must be NULL or live.
size_t dsgrl_model_epochs(const struct DsgrlModel *m);

// # Safety
// `m` must be NULL or a handle not yet freed.
void dsgrl_model_free(struct DsgrlModel *m);

// Linear-probe accuracy over `n_splits` stratified 5/15/80 splits with
// seeds `seed, seed+1, ...`, using the graph's labels.
//
// # Safety
// Handles must be live; `out_mean`/`out_std` writable (either may be NULL).
enum DsgrlStatus dsgrl_evaluate(const struct DsgrlTensor *z,
                                const struct DsgrlGraph *g,
                                size_t n_splits,
                                uint64_t seed,
                                double *out_mean,
                                double *out_std);

// # Safety
// `t` must be NULL or live.
size_t dsgrl_tensor_rows(const struct DsgrlTensor *t);

// # Safety
// `t` must be NULL or live.
size_t dsgrl_tensor_cols(const struct DsgrlTensor *t);

// Row-major data, `rows * cols` doubles owned by the tensor.
//
// # Safety
// `t` must be NULL or live; the pointer dies with the tensor.
const double *dsgrl_tensor_data(const struct DsgrlTensor *t);

// # Safety
// `t` must be NULL or a handle not yet freed.
void dsgrl_tensor_free(struct DsgrlTensor *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSGRL_H */
