#ifndef NMST_H
#define NMST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NmstStatus {
  NMST_STATUS_OK = 0,
  NMST_STATUS_NULL_ARGUMENT = 1,
  NMST_STATUS_INVALID_ARGUMENT = 2,
  NMST_STATUS_DECODER_SPEC = 3,
  NMST_STATUS_CHECKPOINT = 4,
  NMST_STATUS_IO = 5,
  NMST_STATUS_INTERNAL = 6,
} NmstStatus;

typedef enum NmstHeadKind {
  NMST_HEAD_KIND_VANILLA = 0,
  NMST_HEAD_KIND_SELF_TERMINATING = 1,
  NMST_HEAD_KIND_NON_MONOTONIC = 2,
} NmstHeadKind;

// One decoded continuation, including eos if it terminated.
typedef struct NmstGeneration NmstGeneration;

// A loaded model. Immutable after loading, so one handle may be shared by
// threads that only call decoding functions.
typedef struct NmstModel NmstModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Owned by the
// library; valid until the next call on this thread.
const char *nmst_last_error(void);

// First step at which the eos lower bound `1 - (1 - epsilon)^t` exceeds
// 1/2. Returns 0 unless `0 < epsilon < 1`.
size_t nmst_half_life(double epsilon);

// Loads a checkpoint file. On success `*out` owns a new model.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum NmstStatus nmst_model_load(const char *path, struct NmstModel **out);

// # Safety
// `model` must be null or a handle from [`nmst_model_load`] not yet freed.
void nmst_model_free(struct NmstModel *model);

// # Safety
// `model` must be a live handle.
size_t nmst_model_vocab_size(const struct NmstModel *model);

// # Safety
// `model` must be a live handle.
uint32_t nmst_model_eos_id(const struct NmstModel *model);

// Head kind and epsilon (0 for the vanilla head).
//
// # Safety
// `model` must be a live handle; `kind` and `epsilon` valid pointers.
enum NmstStatus nmst_model_head(const struct NmstModel *model,
                                enum NmstHeadKind *kind,
                                double *epsilon);

// Token string for `id`, or null if out of range. Owned by the model.
//
// # Safety
// `model` must be a live handle.
const uint8_t *nmst_model_token(const struct NmstModel *model, uint32_t id, size_t *len);

// Decodes one continuation of `context`. `decoder` uses the command-line
// syntax: `greedy`, `top-k:K`, `nucleus:P` or `beam:K`. Sampling decoders
// are deterministic given `seed`.
//
// # Safety
// `model` must be a live handle, `context` must point to `context_len`
// ids (or be null when the length is 0), `decoder` must be a
// nul-terminated string and `out` a valid pointer.
enum NmstStatus nmst_generate(const struct NmstModel *model,
                              const uint32_t *context_ids,
                              size_t context_len,
                              const char *decoder,
                              size_t cap,
                              uint64_t seed,
                              struct NmstGeneration **out);

// Teacher-forced `p(eos)` at every step of `tokens` after `context`.
// Writes `tokens_len` values to `out`.
//
// # Safety
// Pointers must be valid for the given lengths.
enum NmstStatus nmst_eos_probabilities(const struct NmstModel *model,
                                       const uint32_t *context_ids,
                                       size_t context_len,
                                       const uint32_t *tokens,
                                       size_t tokens_len,
                                       double *out);

// # Safety
// `g` must be null or a handle from [`nmst_generate`] not yet freed.
void nmst_generation_free(struct NmstGeneration *g);

// Generated ids (eos included when terminated). Owned by the generation.
//
// # Safety
// `g` must be a live handle and `len` a valid pointer.
const uint32_t *nmst_generation_tokens(const struct NmstGeneration *g, size_t *len);

// `p(eos)` at each generated step. Owned by the generation.
//
// # Safety
// `g` must be a live handle and `len` a valid pointer.
const double *nmst_generation_eos_probs(const struct NmstGeneration *g, size_t *len);

// # Safety
// `g` must be a live handle.
bool nmst_generation_terminated(const struct NmstGeneration *g);

// Model log-probability of the generated sequence.
//
// # Safety
// `g` must be a live handle.
double nmst_generation_log_prob(const struct NmstGeneration *g);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMST_H */
