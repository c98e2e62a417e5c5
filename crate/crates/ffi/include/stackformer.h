#ifndef STACKFORMER_H
#define STACKFORMER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_DIMENSION_MISMATCH = 3,
  SF_STATUS_NON_FINITE = 4,
  SF_STATUS_BUFFER_TOO_SMALL = 5,
  SF_STATUS_IO = 6,
  SF_STATUS_CHECKPOINT = 7,
  SF_STATUS_PANIC = 8,
} SfStatus;

/**
 * Structure selector for [`sf_stack_new`].
 */
typedef enum SfStructure {
  SF_STRUCTURE_STACK = 0,
  SF_STRUCTURE_QUEUE = 1,
} SfStructure;

/**
 * Opaque model handle.
 */
typedef struct SfModel SfModel;

/**
 * Opaque soft-stack handle.
 */
typedef struct SfStack SfStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *sf_last_error_message(void);

/**
 * Load a checkpoint written by the `stackformer` CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SfStatus sf_model_load(const char *path, struct SfModel **out);

/**
 * Write the model to `path`.
 *
 * # Safety
 * `model` must come from [`sf_model_load`]; `path` must be NUL-terminated.
 */
enum SfStatus sf_model_save(const struct SfModel *model, const char *path);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`sf_model_load`] and not be used afterwards.
 */
void sf_model_free(struct SfModel *model);

/**
 * Vocabulary size, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t sf_model_vocab_size(const struct SfModel *model);

/**
 * Logits for every position: `n_tokens × vocab` floats, row-major.
 *
 * # Safety
 * `tokens` must hold `n_tokens` ids and `logits` `logits_len` floats.
 */
enum SfStatus sf_model_forward(const struct SfModel *model,
                               const uint32_t *tokens,
                               size_t n_tokens,
                               float *logits,
                               size_t logits_len);

/**
 * Greedy continuation of `prompt`. Pass a negative `eos` to disable early
 * stopping. New tokens (not the prompt) go to `out`; their count goes to
 * `out_len`.
 *
 * # Safety
 * Buffers must be valid for the stated lengths; `out_len` writable.
 */
enum SfStatus sf_model_generate(const struct SfModel *model,
                                const uint32_t *prompt,
                                size_t n_prompt,
                                size_t max_new,
                                int64_t eos,
                                uint32_t *out,
                                size_t out_cap,
                                size_t *out_len);

/**
 * Empty soft stack (or queue) with `slots × width` storage.
 *
 * # Safety
 * `out` must be writable.
 */
enum SfStatus sf_stack_new(size_t slots,
                           size_t width,
                           enum SfStructure structure,
                           struct SfStack **out);

/**
 * Release a stack. NULL is ignored.
 *
 * # Safety
 * `stack` must come from [`sf_stack_new`] and not be used afterwards.
 */
void sf_stack_free(struct SfStack *stack);

/**
 * One soft update with explicit probabilities, which must be
 * non-negative and sum to one.
 *
 * # Safety
 * `h` must hold `width` floats.
 */
enum SfStatus sf_stack_update(struct SfStack *stack,
                              const float *h,
                              size_t width,
                              float push,
                              float pop,
                              float noop);

/**
 * Copy the `slots × width` values (slot 0 first) into `out`.
 *
 * # Safety
 * `out` must hold `out_len` floats.
 */
enum SfStatus sf_stack_values(const struct SfStack *stack, float *out, size_t out_len);

/**
 * Copy the activation mask (`slots` floats) into `out`.
 *
 * # Safety
 * `out` must hold `out_len` floats.
 */
enum SfStatus sf_stack_mask(const struct SfStack *stack, float *out, size_t out_len);

/**
 * Number of slots, or 0 for NULL.
 *
 * # Safety
 * `stack` must be NULL or a live handle.
 */
size_t sf_stack_slots(const struct SfStack *stack);

/**
 * Slot width, or 0 for NULL.
 *
 * # Safety
 * `stack` must be NULL or a live handle.
 */
size_t sf_stack_width(const struct SfStack *stack);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STACKFORMER_H */
