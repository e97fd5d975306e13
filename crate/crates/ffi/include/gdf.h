/* Generated by cbindgen from gdf-ffi; do not edit. */

#ifndef GDF_H
#define GDF_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum GdfStatus {
  GDF_STATUS_OK = 0,
  GDF_STATUS_NULL_ARGUMENT = 1,
  GDF_STATUS_INVALID_ARGUMENT = 2,
  GDF_STATUS_UTF8 = 3,
  GDF_STATUS_NOT_FOUND = 4,
  GDF_STATUS_ALREADY_EXISTS = 5,
  GDF_STATUS_CHECKSUM_MISMATCH = 6,
  GDF_STATUS_IO = 7,
  GDF_STATUS_UNREACHABLE = 8,
  GDF_STATUS_CORRUPT = 9,
  GDF_STATUS_VALIDATION_FAILED = 10,
  GDF_STATUS_JSON = 11,
  /**
   * A catalog rule was violated (gapless indices, last replica, ...).
   */
  GDF_STATUS_REJECTED = 12,
  GDF_STATUS_BUFFER_TOO_SMALL = 13,
  GDF_STATUS_INTERNAL = 99,
} GdfStatus;

/**
 * Catalog handle: in-process (optionally persistent) or a network client.
 */
typedef struct GdfCatalog GdfCatalog;

/**
 * Open event file.
 */
typedef struct GdfEventReader GdfEventReader;

/**
 * Statistics of one event file.
 */
typedef struct GdfEventStats {
  uint64_t n_events;
  uint64_t bytes_raw;
  uint64_t bytes_compressed;
  double mean_event_bytes;
  uint64_t file_bytes;
} GdfEventStats;

/**
 * One calorimeter hit, in file field order.
 */
typedef struct GdfHit {
  float edep_abs;
  float edep_gap;
  float track_len_abs;
  float track_len_gap;
} GdfHit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call on this thread; do not free.
 */
const char *gdf_last_error(void);

/**
 * Release a string returned by this library. NULL is ignored.
 */
void gdf_string_free(char *s);

/**
 * Library version, static storage.
 */
const char *gdf_version(void);

/**
 * CRC-32 (IEEE, reflected) of `len` bytes; NULL with `len == 0` is allowed.
 */
uint32_t gdf_crc32(const uint8_t *data, size_t len);

/**
 * Open an in-process catalog. `state_dir` NULL means in-memory only;
 * otherwise the record log in that directory is replayed and appended.
 */
enum GdfStatus gdf_catalog_open(const char *state_dir, struct GdfCatalog **out);

/**
 * Connect to a catalog service at `addr` (`host:port`).
 */
enum GdfStatus gdf_catalog_connect(const char *addr,
                                   double timeout_seconds,
                                   struct GdfCatalog **out);

void gdf_catalog_free(struct GdfCatalog *h);

/**
 * Register `lfn` from a JSON array of fragments
 * (`[{"index":0,"size_bytes":..,"crc32":..,"replicas":[{"node_id":..,"path":..,"crc32":..}]}]`).
 * On success `entry_json` (if not NULL) receives the new entry.
 */
enum GdfStatus gdf_catalog_register_file(const struct GdfCatalog *h,
                                         const char *lfn,
                                         const char *fragments_json,
                                         char **entry_json);

/**
 * Add a replica (`{"node_id":..,"path":..,"crc32":..}`) of fragment `index`.
 */
enum GdfStatus gdf_catalog_add_replica(const struct GdfCatalog *h,
                                       const char *lfn,
                                       uint32_t index,
                                       const char *location_json,
                                       char **entry_json);

enum GdfStatus gdf_catalog_remove_replica(const struct GdfCatalog *h,
                                          const char *lfn,
                                          uint32_t index,
                                          const char *node_id,
                                          char **entry_json);

enum GdfStatus gdf_catalog_lookup(const struct GdfCatalog *h, const char *lfn, char **entry_json);

/**
 * Entries whose name matches the glob `pattern`, as a JSON array sorted by name.
 */
enum GdfStatus gdf_catalog_list(const struct GdfCatalog *h,
                                const char *pattern,
                                char **entries_json);

/**
 * Insert or replace a node record
 * (`{"node_id":..,"address":..,"storage_root":..,"rate_limit_bps":..,"status":"up"}`).
 */
enum GdfStatus gdf_catalog_register_node(const struct GdfCatalog *h,
                                         const char *node_json,
                                         char **stored_json);

enum GdfStatus gdf_catalog_nodes(const struct GdfCatalog *h, char **nodes_json);

/**
 * Write `n_events` synthetic events to `path`. `codec`: 0 stored, 1 deflate.
 * `stats` may be NULL.
 */
enum GdfStatus gdf_events_generate(const char *path,
                                   uint64_t n_events,
                                   uint32_t hits_per_event,
                                   uint64_t seed,
                                   uint32_t quantize_bits,
                                   uint8_t codec,
                                   uint32_t events_per_block,
                                   struct GdfEventStats *stats);

/**
 * Raw over stored payload bytes.
 */
enum GdfStatus gdf_compression_factor(const struct GdfEventStats *stats, double *out);

enum GdfStatus gdf_event_reader_open(const char *path, struct GdfEventReader **out);

void gdf_event_reader_free(struct GdfEventReader *r);

enum GdfStatus gdf_event_reader_n_events(struct GdfEventReader *r, uint64_t *out);

/**
 * Whole-file statistics (reads block headers only).
 */
enum GdfStatus gdf_event_reader_stats(struct GdfEventReader *r, struct GdfEventStats *out);

/**
 * Copy the hits of collection `collection` (NULL: the first) of the event at
 * ordinal `event` into `buf`. `n_hits` receives the hit count; when it
 * exceeds `capacity` nothing is copied and `BufferTooSmall` is returned.
 * Only the selected collection is decompressed.
 */
enum GdfStatus gdf_event_reader_read_hits(struct GdfEventReader *r,
                                          const char *collection,
                                          uint64_t event,
                                          struct GdfHit *buf,
                                          size_t capacity,
                                          size_t *n_hits);

/**
 * Compile a `.rootio` file. Templates and `name=value` defines are arrays
 * of `n_*` strings. Diagnostics (one `FILE:LINE: severity: message` per
 * line) are returned through `diagnostics` when not NULL, also on
 * `ValidationFailed`.
 */
enum GdfStatus gdf_schemac_compile(const char *schema_path,
                                   const char *const *templates,
                                   size_t n_templates,
                                   const char *out_dir,
                                   const char *const *defines,
                                   size_t n_defines,
                                   char **diagnostics);

/**
 * Completion of `n` nodes working in parallel, node `i` moving `bytes[i]`
 * at `rates_bps[i]`: the slowest node's time, and total bytes over it.
 */
enum GdfStatus gdf_predict_completion(const uint64_t *bytes,
                                      const double *rates_bps,
                                      size_t n,
                                      double *wall_seconds,
                                      double *aggregate_bps);

/**
 * Flag nodes whose rate `bytes[i] / seconds[i]` is below `threshold` times
 * the median rate. `flags[i]` is set to 1 for stragglers, 0 otherwise;
 * `median_bps` may be NULL.
 */
enum GdfStatus gdf_detect_stragglers(const uint64_t *bytes,
                                     const double *seconds,
                                     size_t n,
                                     double threshold,
                                     uint8_t *flags,
                                     double *median_bps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GDF_H */
