#ifndef NEUROQUANT_H
#define NEUROQUANT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NqStatus {
  NQ_STATUS_OK = 0,
  NQ_STATUS_NULL_POINTER = 1,
  NQ_STATUS_INVALID_ARGUMENT = 2,
  NQ_STATUS_LENGTH_MISMATCH = 3,
  NQ_STATUS_IO = 4,
  NQ_STATUS_PARSE = 5,
  NQ_STATUS_NUMERICAL = 6,
  NQ_STATUS_PANIC = 7,
} NqStatus;

/**
 * Parity-check matrix with its Tanner graph and systematic encoder.
 */
typedef struct NqCode NqCode;

/**
 * Frozen neural quantizer loaded from a checkpoint.
 */
typedef struct NqQuantizer NqQuantizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *nq_last_error(void);

/**
 * Static NUL-terminated crate version.
 */
const char *nq_version(void);

/**
 * Noise variance for an Eb/N0 of `snr_db` at code rate `rate`.
 */
double nq_snr_to_variance(double snr_db, double rate);

/**
 * Parses alist text.
 *
 * # Safety
 * `alist` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NqStatus nq_code_from_alist(const char *alist, struct NqCode **out);

/**
 * Reads an alist file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NqStatus nq_code_load_alist(const char *path, struct NqCode **out);

/**
 * # Safety
 * `code` must be null or a handle from this library not yet freed.
 */
void nq_code_free(struct NqCode *code);

/**
 * Block length, or 0 for a null handle.
 *
 * # Safety
 * `code` must be null or a live handle.
 */
size_t nq_code_n(const struct NqCode *code);

/**
 * Message length `n - rank(H)`, or 0 for a null handle.
 *
 * # Safety
 * `code` must be null or a live handle.
 */
size_t nq_code_k(const struct NqCode *code);

/**
 * Number of parity checks, or 0 for a null handle.
 *
 * # Safety
 * `code` must be null or a live handle.
 */
size_t nq_code_m(const struct NqCode *code);

/**
 * Encodes `k` message bits into `n` codeword bits.
 *
 * # Safety
 * `message` must hold `message_len` bytes and `codeword` `codeword_len` bytes.
 */
enum NqStatus nq_code_encode(const struct NqCode *code,
                             const uint8_t *message,
                             size_t message_len,
                             uint8_t *codeword,
                             size_t codeword_len);

/**
 * Runs `iterations` flooding sum-product rounds on `n` channel LLRs and
 * writes hard decisions. Messages are clipped to `[-clip, clip]`.
 *
 * # Safety
 * `llr` must hold `n` doubles and `bits` `n` bytes.
 */
enum NqStatus nq_code_decode(const struct NqCode *code,
                             const double *llr,
                             size_t n,
                             size_t iterations,
                             double clip,
                             uint8_t *bits);

/**
 * Writes 1 to `result` iff `bits` (length `n`) satisfies every check.
 *
 * # Safety
 * `bits` must hold `n` bytes and `result` be writable.
 */
enum NqStatus nq_code_is_codeword(const struct NqCode *code,
                                  const uint8_t *bits,
                                  size_t n,
                                  int32_t *result);

/**
 * Parses checkpoint JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NqStatus nq_quantizer_from_json(const char *json, struct NqQuantizer **out);

/**
 * Reads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NqStatus nq_quantizer_load(const char *path, struct NqQuantizer **out);

/**
 * # Safety
 * `quantizer` must be null or a handle from this library not yet freed.
 */
void nq_quantizer_free(struct NqQuantizer *quantizer);

/**
 * Number of staircase levels, or 0 for a null handle.
 *
 * # Safety
 * `quantizer` must be null or a live handle.
 */
size_t nq_quantizer_levels(const struct NqQuantizer *quantizer);

/**
 * Applies the quantizer at `temperature` (0 gives the hard staircase).
 *
 * # Safety
 * `input` and `output` must each hold `len` doubles.
 */
enum NqStatus nq_quantizer_apply(const struct NqQuantizer *quantizer,
                                 const double *input,
                                 size_t len,
                                 double temperature,
                                 double *output);

/**
 * Lloyd-Max design for a unit Gaussian source: `levels` reconstruction
 * points and `levels - 1` thresholds, ascending. `distortion` may be null.
 *
 * # Safety
 * `points` must hold `levels` doubles and `thresholds` `levels - 1`.
 */
enum NqStatus nq_lloyd_design(size_t levels,
                              double *points,
                              double *thresholds,
                              double *distortion);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROQUANT_H */
