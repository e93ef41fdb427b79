#ifndef GRIDSCHED_H
#define GRIDSCHED_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>

/*
 Result codes. Zero is success.
 */
typedef enum GsStatus {
  GS_STATUS_OK = 0,
  GS_STATUS_NULL_POINTER = 1,
  GS_STATUS_INVALID_UTF8 = 2,
  GS_STATUS_INVALID_ARGUMENT = 3,
  /*
   The ledger would become infeasible.
   */
  GS_STATUS_REJECTED = 4,
  GS_STATUS_UNKNOWN_JOB = 5,
  GS_STATUS_DUPLICATE_JOB = 6,
  /*
   Malformed or schema-violating XML or JSON.
   */
  GS_STATUS_PARSE_ERROR = 7,
  /*
   Scenario failed validation.
   */
  GS_STATUS_CONFIG_ERROR = 8,
  /*
   A Rust panic was caught at the boundary.
   */
  GS_STATUS_INTERNAL = 9,
} GsStatus;

/*
 Opaque load ledger.
 */
typedef struct GsLedger GsLedger;

/*
 A node's bid for one query window.
 */
typedef struct GsBid {
  double window_s;
  double unsubscribed_marks;
  double confidence;
} GsBid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failure on this thread, or NULL. Valid until the next
 call into this library from the same thread; do not free.
 */
const char *gs_last_error_message(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void gs_string_free(char *s);

/*
 Library version, static storage; do not free.
 */
const char *gs_version(void);

/*
 Creates an empty ledger for a node running at `rate` marks/s, clock at `now`.

 # Safety
 `node_id` must be a valid C string and `out` a writable pointer.
 */
enum GsStatus gs_ledger_new(const char *node_id, double rate, double now, struct GsLedger **out);

/*
 Restores a ledger from [`gs_ledger_to_json`] output.

 # Safety
 `json` must be a valid C string and `out` a writable pointer.
 */
enum GsStatus gs_ledger_from_json(const char *json, struct GsLedger **out);

/*
 Destroys a ledger. NULL is ignored.

 # Safety
 `ledger` must come from this library and not have been freed already.
 */
void gs_ledger_free(struct GsLedger *ledger);

/*
 Admits a commitment if the ledger stays feasible; `GS_STATUS_REJECTED`
 otherwise, leaving the ledger unchanged.

 # Safety
 `l` must be a live handle; strings must be valid C strings.
 */
enum GsStatus gs_ledger_admit(struct GsLedger *l,
                              const char *job_id,
                              const char *app_id,
                              double booked_marks,
                              double due_time,
                              double on_time_prob);

/*
 Largest extra commitment due at `now + window_s` that still fits.

 # Safety
 `l` must be a live handle and `out` writable.
 */
enum GsStatus gs_ledger_unsubscribed(struct GsLedger *l, double window_s, double *out);

/*
 # Safety
 `l` must be a live handle and `out` writable.
 */
enum GsStatus gs_ledger_make_bid(struct GsLedger *l, double window_s, struct GsBid *out);

/*
 # Safety
 `l` must be a live handle and `out` writable.
 */
enum GsStatus gs_ledger_is_feasible(struct GsLedger *l, bool *out);

/*
 Records progress on a job. `retired` (may be NULL) is set when the booking
 is used up and the commitment leaves the ledger.

 # Safety
 `l` must be a live handle; `job_id` a valid C string.
 */
enum GsStatus gs_ledger_consume(struct GsLedger *l,
                                const char *job_id,
                                double marks,
                                bool *retired);

/*
 Moves the ledger clock forward. `misses` (may be NULL) receives how many
 commitments became late.

 # Safety
 `l` must be a live handle.
 */
enum GsStatus gs_ledger_advance_time(struct GsLedger *l, double t, size_t *misses);

/*
 # Safety
 `l` must be a live handle and `out` writable.
 */
enum GsStatus gs_ledger_to_json(struct GsLedger *l, char **out);

/*
 Checks a computer or application profile document.

 # Safety
 `xml` must be a valid C string.
 */
enum GsStatus gs_profile_validate(const char *xml);

/*
 Parses a profile and, when `out` is not NULL, returns its canonical XML.

 # Safety
 `xml` must be a valid C string; `out` NULL or writable.
 */
enum GsStatus gs_profile_canonicalize(const char *xml, char **out);

/*
 Hex SHA-256 application id for `name` and `version`.

 # Safety
 Strings must be valid C strings and `out` writable.
 */
enum GsStatus gs_compute_app_id(const char *name, const char *version, char **out);

/*
 Runs a scenario given as JSON and returns the report JSON.

 # Safety
 `scenario_json` must be a valid C string and `out` writable.
 */
enum GsStatus gs_simulate(const char *scenario_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDSCHED_H */
