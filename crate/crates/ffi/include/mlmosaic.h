#ifndef MLMOSAIC_H
#define MLMOSAIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call. Values 2 to 4 match the CLI exit codes.
typedef enum MlmStatus {
  MLM_STATUS_OK = 0,
  MLM_STATUS_NULL_POINTER = 1,
  MLM_STATUS_INVALID_INPUT = 2,
  MLM_STATUS_IO = 3,
  MLM_STATUS_ALGORITHM = 4,
  MLM_STATUS_PANIC = 5,
} MlmStatus;

typedef enum MlmModel {
  MLM_MODEL_TRANSLATION = 0,
  MLM_MODEL_AFFINE = 1,
} MlmModel;

// A grayscale image with intensities in [0, 1].
typedef struct MlmRaster MlmRaster;

// One motion model per frame plus the anchor frame.
typedef struct MlmRegistration MlmRegistration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL after a
// success. Valid until the next call on the same thread.
const char *mlm_last_error(void);

// Library version as a static NUL-terminated string.
const char *mlm_version(void);

// Copies `width * height` row-major samples into a new raster.
//
// # Safety
// `data` must point to `width * height` readable doubles and `out` to a
// writable handle slot.
enum MlmStatus mlm_raster_new(size_t width,
                              size_t height,
                              const double *data,
                              struct MlmRaster **out);

// Loads an 8-bit PGM or PNG file.
//
// # Safety
// `file` must be a NUL-terminated string and `out` a writable handle slot.
enum MlmStatus mlm_raster_load(const char *file, struct MlmRaster **out);

// Writes the raster as an 8-bit PGM file.
//
// # Safety
// `raster` must be a live handle and `file` a NUL-terminated string.
enum MlmStatus mlm_raster_save(const struct MlmRaster *raster, const char *file);

// Width and height of the raster; either output may be NULL.
//
// # Safety
// `raster` must be a live handle; non-null outputs must be writable.
enum MlmStatus mlm_raster_size(const struct MlmRaster *raster, size_t *width, size_t *height);

// Copies the row-major samples into `data`, which holds `len` doubles.
//
// # Safety
// `raster` must be a live handle and `data` must hold `len` writable doubles.
enum MlmStatus mlm_raster_copy_data(const struct MlmRaster *raster, double *data, size_t len);

// # Safety
// `raster` must be NULL or a handle not yet freed.
void mlm_raster_free(struct MlmRaster *raster);

// Builds a registration from `n_frames` parameter vectors laid out back to
// back, 2 values per frame for translation and 6 for affine
// (a11, a12, a21, a22, tx, ty).
//
// # Safety
// `params` must hold `n_frames * dof` readable doubles and `out` must be a
// writable handle slot.
enum MlmStatus mlm_registration_new(enum MlmModel model,
                                    const double *params,
                                    size_t n_frames,
                                    size_t anchor,
                                    struct MlmRegistration **out);

// Number of frames, parameters per frame and anchor; outputs may be NULL.
//
// # Safety
// `reg` must be a live handle; non-null outputs must be writable.
enum MlmStatus mlm_registration_info(const struct MlmRegistration *reg,
                                     size_t *n_frames,
                                     size_t *dof,
                                     size_t *anchor);

// Copies the parameters of `frame` into `theta`, which holds `len` doubles.
//
// # Safety
// `reg` must be a live handle and `theta` must hold `len` writable doubles.
enum MlmStatus mlm_registration_params(const struct MlmRegistration *reg,
                                       size_t frame,
                                       double *theta,
                                       size_t len);

// # Safety
// `reg` must be NULL or a handle not yet freed.
void mlm_registration_free(struct MlmRegistration *reg);

// Registers `b` against `a` with default options. `init` holds `dof`
// starting parameters or is NULL for identity; the estimate is written to
// `theta`, which holds `len` doubles.
//
// # Safety
// `a` and `b` must be live handles; `init`, when non-null, must hold `dof`
// readable doubles; `theta` must hold `len` writable doubles.
enum MlmStatus mlm_register_pair(const struct MlmRaster *a,
                                 const struct MlmRaster *b,
                                 enum MlmModel model,
                                 const double *init,
                                 double *theta,
                                 size_t len);

// Chains pairwise registrations of consecutive frames, anchored at frame 0.
//
// # Safety
// `frames` must hold `n_frames` live raster handles and `out` must be a
// writable handle slot.
enum MlmStatus mlm_sequential_init(const struct MlmRaster *const *frames,
                                   size_t n_frames,
                                   enum MlmModel model,
                                   struct MlmRegistration **out);

// Refines `initial` jointly over all frames with `max_sweeps` sweeps per
// level (0 keeps the default). `cost`, when non-null, receives the final
// cost.
//
// # Safety
// `frames` must hold `n_frames` live raster handles, `initial` must be a
// live handle, `out` a writable handle slot and `cost` NULL or writable.
enum MlmStatus mlm_refine(const struct MlmRaster *const *frames,
                          size_t n_frames,
                          const struct MlmRegistration *initial,
                          size_t max_sweeps,
                          struct MlmRegistration **out,
                          double *cost);

// Total squared disagreement between overlapping frames, each pixel
// weighted by the inverse number of frames observing it.
//
// # Safety
// `frames` must hold `n_frames` live raster handles, `reg` must be a live
// handle and `cost` writable.
enum MlmStatus mlm_ml_cost(const struct MlmRaster *const *frames,
                           size_t n_frames,
                           const struct MlmRegistration *reg,
                           double *cost);

// Averages the frames onto the panorama grid. `panorama` receives the mean
// intensity (0 where no frame observes) and `weights`, when non-null, the
// number of observing frames per pixel. `origin`, when non-null, receives
// the panorama coordinates of pixel (0, 0).
//
// # Safety
// `frames` must hold `n_frames` live raster handles, `reg` must be a live
// handle, `panorama` a writable handle slot, `weights` NULL or a writable
// handle slot and `origin` NULL or 2 writable doubles.
enum MlmStatus mlm_panorama(const struct MlmRaster *const *frames,
                            size_t n_frames,
                            const struct MlmRegistration *reg,
                            struct MlmRaster **panorama,
                            struct MlmRaster **weights,
                            double *origin);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLMOSAIC_H */
