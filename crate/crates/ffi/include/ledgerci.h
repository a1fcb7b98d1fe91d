#ifndef LEDGERCI_H
#define LEDGERCI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum LciStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  LCI_STATUS_OK = 0,
  LCI_STATUS_NULL_ARGUMENT = 1,
  LCI_STATUS_INVALID_UTF8 = 2,
  LCI_STATUS_INVALID_INPUT = 3,
  LCI_STATUS_NOT_FOUND = 4,
  LCI_STATUS_INTEGRITY_VIOLATION = 5,
  LCI_STATUS_IO = 6,
  LCI_STATUS_PANIC = 7,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum LciStatus LciStatus;
#else
typedef int32_t LciStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Gate outcome written by [`lci_scan`].
 */
enum LciVerdict
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  LCI_VERDICT_PASS = 0,
  LCI_VERDICT_HALT = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum LciVerdict LciVerdict;
#else
typedef int32_t LciVerdict;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Source-URL policy for [`lci_scan`].
 */
enum LciSourceMode
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  LCI_SOURCE_MODE_STRICT = 0,
  LCI_SOURCE_MODE_PERMISSIVE = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum LciSourceMode LciSourceMode;
#else
typedef int32_t LciSourceMode;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * An opened ledger home: its configuration and the chain as loaded.
 */
typedef struct LciLedger LciLedger;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message left by the last call on this thread, or null. Valid until
 * the next call into this library on the same thread.
 */
const char *lci_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void lci_string_free(char *s);

/**
 * Re-encode arbitrary JSON text in canonical form.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be writable.
 */
LciStatus lci_canonicalize(const char *json, char **out);

/**
 * Lowercase hex SHA-256 of `len` bytes at `data`. `data` may be null
 * when `len` is 0.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
LciStatus lci_sha256_hex(const uint8_t *data, size_t len, char **out);

/**
 * Writes -1, 0 or 1 as `a` orders before, equal to or after `b`.
 *
 * # Safety
 * `a` and `b` must be valid NUL-terminated strings; `out` must be writable.
 */
LciStatus lci_compare_versions(const char *a, const char *b, int32_t *out);

/**
 * Scan a `deps.json` manifest against a feed. `allowlist` is newline
 * separated URL prefixes and may be null; `mode` is an [`LciSourceMode`]. The canonical report goes to
 * `report_out`, the verdict to `verdict_out`.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings or null where
 * allowed; out-pointers must be writable.
 */
LciStatus lci_scan(const char *manifest_json,
                   const char *feed_json,
                   uint8_t threshold,
                   const char *allowlist,
                   int32_t mode,
                   char **report_out,
                   LciVerdict *verdict_out);

/**
 * Open the ledger home at `dir`, validating and loading its chain.
 * Release with [`lci_ledger_free`].
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string; `out` must be writable.
 */
LciStatus lci_ledger_open(const char *dir, struct LciLedger **out);

/**
 * # Safety
 * `ledger` must come from [`lci_ledger_open`] and not have been freed.
 */
void lci_ledger_free(struct LciLedger *ledger);

/**
 * Number of blocks loaded at open time.
 *
 * # Safety
 * `ledger` must be live; `out` must be writable.
 */
LciStatus lci_ledger_height(const struct LciLedger *ledger, uint64_t *out);

/**
 * Re-read the block files from disk. Writes 1 to `ok_out` when the chain
 * validates; otherwise 0 and the first bad height to `bad_height_out`.
 * Status stays `Ok` either way.
 *
 * # Safety
 * `ledger` must be live; out-pointers must be writable.
 */
LciStatus lci_ledger_verify(const struct LciLedger *ledger,
                            int32_t *ok_out,
                            uint64_t *bad_height_out);

/**
 * Canonical JSON `{"value":<base64>,"version":{..}}` for `key` in the
 * world state as loaded. `NotFound` when the key is absent.
 *
 * # Safety
 * `ledger` must be live; `key` a valid NUL-terminated string; `out`
 * writable.
 */
LciStatus lci_ledger_query(const struct LciLedger *ledger, const char *key, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEDGERCI_H */
