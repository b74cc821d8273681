#ifndef GROUNDNET_H
#define GROUNDNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum GnFormat {
  GN_FORMAT_DOT = 0,
  GN_FORMAT_JSON = 1,
} GnFormat;

typedef enum GnNodeKind {
  GN_NODE_KIND_LOCATE = 0,
  GN_NODE_KIND_RELATE = 1,
  GN_NODE_KIND_INTERSECT = 2,
} GnNodeKind;

typedef enum GnStatus {
  GN_STATUS_OK = 0,
  GN_STATUS_NULL_POINTER = 1,
  GN_STATUS_INVALID_UTF8 = 2,
  GN_STATUS_PARSE = 3,
  GN_STATUS_COMPILE = 4,
  GN_STATUS_IO = 5,
  GN_STATUS_CHECKPOINT = 6,
  GN_STATUS_SCENE = 7,
  GN_STATUS_GROUNDING = 8,
  GN_STATUS_OUT_OF_RANGE = 9,
  GN_STATUS_PANIC = 10,
} GnStatus;

/**
 * Compiled computation graph.
 */
typedef struct GnGraph GnGraph;

/**
 * Trained model loaded from a checkpoint.
 */
typedef struct GnModel GnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *gn_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *gn_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void gn_string_free(char *s);

/**
 * Compiles a bracketed parse into a graph.
 *
 * # Safety
 * `ptb` must be a nul-terminated string; `out` a writable pointer.
 */
enum GnStatus gn_graph_compile(const char *ptb, struct GnGraph **out);

/**
 * # Safety
 * `graph` must come from [`gn_graph_compile`] and not have been freed.
 */
void gn_graph_free(struct GnGraph *graph);

/**
 * Number of nodes; 0 for NULL.
 *
 * # Safety
 * `graph` must be NULL or a live handle.
 */
uintptr_t gn_graph_node_count(const struct GnGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum GnStatus gn_graph_root(const struct GnGraph *graph, uintptr_t *out);

/**
 * Kind of node `id`.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum GnStatus gn_graph_node_kind(const struct GnGraph *graph, uintptr_t id, enum GnNodeKind *out);

/**
 * Space-separated phrase of node `id`; free with [`gn_string_free`].
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum GnStatus gn_graph_node_phrase(const struct GnGraph *graph, uintptr_t id, char **out);

/**
 * DOT or JSON rendering; free with [`gn_string_free`].
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum GnStatus gn_graph_export(const struct GnGraph *graph, enum GnFormat format, char **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` a writable pointer.
 */
enum GnStatus gn_model_load(const char *path, struct GnModel **out);

/**
 * # Safety
 * `model` must come from [`gn_model_load`] and not have been freed.
 */
void gn_model_free(struct GnModel *model);

/**
 * Grounds a scene given as one dataset record (JSON). With a NULL
 * `graph` the scene's own parse is compiled. Writes the per-node report
 * as JSON to `report` and, when `prediction` is not NULL, the id of the
 * predicted box.
 *
 * # Safety
 * `model` must be a live handle, `graph` NULL or live, `scene_json`
 * nul-terminated and `report` writable.
 */
enum GnStatus gn_ground(const struct GnModel *model,
                        const struct GnGraph *graph,
                        const char *scene_json,
                        char **report,
                        uint32_t *prediction);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROUNDNET_H */
