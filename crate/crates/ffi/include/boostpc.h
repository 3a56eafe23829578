#ifndef BOOSTPC_H
#define BOOSTPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BpcStatus {
  BPC_STATUS_OK = 0,
  BPC_STATUS_NULL_POINTER = 1,
  BPC_STATUS_INVALID_ARGUMENT = 2,
  BPC_STATUS_SIZE_MISMATCH = 3,
  BPC_STATUS_IO = 4,
  BPC_STATUS_DISCONNECTED = 5,
  BPC_STATUS_DEGENERATE = 6,
  BPC_STATUS_PANIC = 7,
} BpcStatus;

// Win counts of one comparison set, optionally with anchors attached.
typedef struct BpcCountMatrix BpcCountMatrix;

// RGB image, 8 bits per channel, row-major.
typedef struct BpcImage BpcImage;

// Reconstructed scale values.
typedef struct BpcScale BpcScale;

typedef struct BpcWaeParams {
  double s;
  double t;
  double a1;
  double a2;
  double a3;
} BpcWaeParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *bpc_last_error(void);

// Copies `len == width * height * 3` bytes of RGB data into a new image.
//
// # Safety
// `rgb` must point to `len` readable bytes and `out` must be writable.
enum BpcStatus bpc_image_new(size_t width,
                             size_t height,
                             const uint8_t *rgb,
                             size_t len,
                             struct BpcImage **out);

// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum BpcStatus bpc_image_load_png(const char *path, struct BpcImage **out);

// # Safety
// `img` must be a live handle and `path` a nul-terminated string.
enum BpcStatus bpc_image_save_png(const struct BpcImage *img, const char *path);

// Writes width and height.
//
// # Safety
// `img` must be a live handle; the out pointers must be writable.
enum BpcStatus bpc_image_size(const struct BpcImage *img, size_t *width, size_t *height);

// Copies the pixel data into `buf`, which must hold width * height * 3 bytes.
//
// # Safety
// `img` must be a live handle and `buf` must point to `len` writable bytes.
enum BpcStatus bpc_image_copy_pixels(const struct BpcImage *img, uint8_t *buf, size_t len);

// # Safety
// `img` must be null or a handle not yet freed.
void bpc_image_free(struct BpcImage *img);

// Amplifies the difference of `interp` from `gt` by `alpha`, capped per
// pixel so no channel saturates.
//
// # Safety
// `gt` and `interp` must be live handles and `out` writable.
enum BpcStatus bpc_amplify(const struct BpcImage *gt,
                           const struct BpcImage *interp,
                           double alpha,
                           struct BpcImage **out);

// RMSE of the luma channels.
//
// # Safety
// Both images must be live handles and `out` writable.
enum BpcStatus bpc_rmse(const struct BpcImage *interp, const struct BpcImage *gt, double *out);

// # Safety
// Both images must be live handles and `out` writable.
enum BpcStatus bpc_gn_rmse(const struct BpcImage *interp, const struct BpcImage *gt, double *out);

// # Safety
// Both images must be live handles and `out` writable.
enum BpcStatus bpc_wae(const struct BpcImage *interp,
                       const struct BpcImage *gt,
                       struct BpcWaeParams params,
                       double *out);

// Empty count matrix over `n` items.
//
// # Safety
// `out` must be writable.
enum BpcStatus bpc_counts_new(size_t n, struct BpcCountMatrix **out);

// Records `times` wins of `winner` over `loser`.
//
// # Safety
// `c` must be a live handle.
enum BpcStatus bpc_counts_add(struct BpcCountMatrix *c,
                              size_t winner,
                              size_t loser,
                              uint32_t times);

// New matrix with a low and a high anchor appended, each compared
// `pseudo_count` times with every item.
//
// # Safety
// `c` must be a live handle and `out` writable.
enum BpcStatus bpc_counts_with_anchors(const struct BpcCountMatrix *c,
                                       uint32_t pseudo_count,
                                       struct BpcCountMatrix **out);

// # Safety
// `c` must be null or a handle not yet freed.
void bpc_counts_free(struct BpcCountMatrix *c);

// Case V reconstruction. With anchors attached the scale is also mapped so
// the low anchor is 0 and the high anchor is 1.
//
// # Safety
// `c` must be a live handle and `out` writable.
enum BpcStatus bpc_reconstruct(const struct BpcCountMatrix *c, struct BpcScale **out);

// Number of real items (anchors excluded).
//
// # Safety
// `s` must be a live handle and `out` writable.
enum BpcStatus bpc_scale_len(const struct BpcScale *s, size_t *out);

// Copies the scores of the real items: rescaled values when anchors were
// attached, latent values otherwise. `len` must equal [`bpc_scale_len`].
//
// # Safety
// `s` must be a live handle and `buf` must point to `len` writable values.
enum BpcStatus bpc_scale_scores(const struct BpcScale *s, double *buf, size_t len);

// # Safety
// `s` must be null or a handle not yet freed.
void bpc_scale_free(struct BpcScale *s);

// Spearman rank correlation with average ranks for ties.
//
// # Safety
// `x` and `y` must point to `n` values and `out` must be writable.
enum BpcStatus bpc_srocc(const double *x, const double *y, size_t n, double *out);

// Kendall tau-b.
//
// # Safety
// `x` and `y` must point to `n` values and `out` must be writable.
enum BpcStatus bpc_krocc(const double *x, const double *y, size_t n, double *out);

// Pearson correlation.
//
// # Safety
// `x` and `y` must point to `n` values and `out` must be writable.
enum BpcStatus bpc_plcc(const double *x, const double *y, size_t n, double *out);

// Fisher-z confidence interval of a correlation `r` from `n` samples.
//
// # Safety
// `low` and `high` must be writable.
enum BpcStatus bpc_fisher_ci(double r, size_t n, double level, double *low, double *high);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOOSTPC_H */
