#ifndef PDH_H
#define PDH_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call. Nonzero values mirror the CLI exit codes,
 * plus FFI-specific argument errors.
 */
typedef enum PdhStatus {
  PDH_STATUS_OK = 0,
  PDH_STATUS_CONFIG = 2,
  PDH_STATUS_INGESTION = 3,
  PDH_STATUS_NUMERIC = 4,
  PDH_STATUS_EVALUATION = 5,
  PDH_STATUS_NULL_ARGUMENT = 10,
  PDH_STATUS_INVALID_ARGUMENT = 11,
} PdhStatus;

/**
 * Opaque handle to a loaded part model bank.
 */
typedef struct PdhBank {
  uint8_t _private[0];
} PdhBank;

/**
 * Opaque handle to an immutable gallery code index.
 */
typedef struct PdhIndex {
  uint8_t _private[0];
} PdhIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pdh_last_error_message(void);

/**
 * Load a bank checkpoint directory. Returns NULL on failure (see
 * `pdh_last_error_message`).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct PdhBank *pdh_bank_load(const char *path);

/**
 * # Safety
 * `bank` must be NULL or a pointer returned by `pdh_bank_load`, not yet freed.
 */
void pdh_bank_free(struct PdhBank *bank);

/**
 * Total code length in bits (parts x bits-per-part); 0 for NULL.
 *
 * # Safety
 * `bank` must be NULL or a live pointer from `pdh_bank_load`.
 */
uint32_t pdh_bank_code_bits(const struct PdhBank *bank);

/**
 * Number of bytes `pdh_bank_encode` writes per image.
 *
 * # Safety
 * `bank` must be NULL or a live pointer from `pdh_bank_load`.
 */
uintptr_t pdh_bank_code_bytes(const struct PdhBank *bank);

/**
 * Encode one 128x64 RGB image. `pixels` holds 3*128*64 doubles in [0,1],
 * channel-major (all red rows, then green, then blue). The packed code is
 * written to `code_out` (little-endian bit order), which must hold at least
 * `pdh_bank_code_bytes(bank)` bytes.
 *
 * # Safety
 * `bank` must be a live pointer from `pdh_bank_load`; `pixels` must point to
 * 3*128*64 doubles; `code_out` must point to `code_out_len` writable bytes.
 */
enum PdhStatus pdh_bank_encode(const struct PdhBank *bank,
                               const double *pixels,
                               uint8_t *code_out,
                               uintptr_t code_out_len);

/**
 * Load a PDHCODE1 code file as a searchable index. NULL on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct PdhIndex *pdh_index_load(const char *path);

/**
 * # Safety
 * `index` must be NULL or a pointer returned by `pdh_index_load`, not yet freed.
 */
void pdh_index_free(struct PdhIndex *index);

/**
 * # Safety
 * `index` must be NULL or a live pointer from `pdh_index_load`.
 */
uintptr_t pdh_index_len(const struct PdhIndex *index);

/**
 * # Safety
 * `index` must be NULL or a live pointer from `pdh_index_load`.
 */
uint32_t pdh_index_code_bits(const struct PdhIndex *index);

/**
 * Rank the index against a query code and return the top-k entries.
 * `code` holds ceil(code_bits/8) bytes in little-endian bit order.
 * `out_indices` and `out_distances` must each hold `k` entries; the number
 * actually written (min(k, index size)) lands in `out_count`.
 *
 * # Safety
 * All pointers must be valid for the documented lengths.
 */
enum PdhStatus pdh_index_top_k(const struct PdhIndex *index,
                               const uint8_t *code,
                               uint32_t code_bits,
                               uintptr_t k,
                               uint32_t *out_indices,
                               uint32_t *out_distances,
                               uintptr_t *out_count);

/**
 * Hamming distance between two packed codes of `bits` bits each. Returns
 * `u32::MAX` on invalid input.
 *
 * # Safety
 * `a` and `b` must each point to ceil(bits/8) readable bytes.
 */
uint32_t pdh_hamming(const uint8_t *a, const uint8_t *b, uint32_t bits);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PDH_H */
