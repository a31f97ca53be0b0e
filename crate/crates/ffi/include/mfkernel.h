#ifndef MFKERNEL_H
#define MFKERNEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes; the nonzero values below 10 match the CLI exit codes.
typedef enum MfkStatus {
  MFK_STATUS_OK = 0,
  MFK_STATUS_CONFIG = 2,
  MFK_STATUS_SIMULATION = 3,
  MFK_STATUS_BASIS = 4,
  MFK_STATUS_SOLVE = 5,
  MFK_STATUS_NULL_POINTER = 10,
  MFK_STATUS_PANIC = 11,
} MfkStatus;

typedef enum MfkPotentialKind {
  // `a x^2 / 2`
  MFK_POTENTIAL_KIND_QUADRATIC,
  // `x^4/4 - x^2/2`
  MFK_POTENTIAL_KIND_BISTABLE,
  MFK_POTENTIAL_KIND_COSH,
  // `depth (1 - exp(-a (x^2 - r^2)))^2`
  MFK_POTENTIAL_KIND_MORSE_LIKE,
  // `-amplitude / sqrt(2 pi) exp(-x^2 / 2)`
  MFK_POTENTIAL_KIND_GAUSSIAN_WELL,
  // `sum coeffs[j] x^j + amplitude cos(x)`
  MFK_POTENTIAL_KIND_POLY_COS,
  // `sum coeffs[j] x^j`
  MFK_POTENTIAL_KIND_POLYNOMIAL,
  MFK_POTENTIAL_KIND_ZERO,
} MfkPotentialKind;

typedef struct MfkBasis MfkBasis;

typedef struct MfkEstimate MfkEstimate;

typedef struct MfkTrajectory MfkTrajectory;

typedef struct MfkSimParams {
  size_t n_particles;
  double horizon;
  double h;
  double sigma;
  uint64_t seed;
  // Common starting point of all particles.
  double x0;
  double burn_in;
  size_t store_stride;
  size_t threads;
} MfkSimParams;

// A potential. Fields a family does not use are ignored.
typedef struct MfkPotential {
  enum MfkPotentialKind kind;
  double a;
  double depth;
  double r;
  double amplitude;
  const double *coeffs;
  size_t n_coeffs;
} MfkPotential;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mfk_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mfk_version(void);

// Simulates the particle system and returns the path of particle 1.
//
// # Safety
// Pointers must be valid for reads (inputs) or writes (`out`).
enum MfkStatus mfk_simulate(const struct MfkSimParams *params,
                            const struct MfkPotential *confining,
                            const struct MfkPotential *interaction,
                            struct MfkTrajectory **out);

// Wraps equally spaced observations `values[0..len]` with spacing `delta`.
//
// # Safety
// `values` must point to `len` readable doubles; `out` must be writable.
enum MfkStatus mfk_trajectory_from_samples(const double *values,
                                           size_t len,
                                           double delta,
                                           struct MfkTrajectory **out);

// Number of stored samples, or 0 for NULL.
//
// # Safety
// `traj` must be NULL or a live handle.
size_t mfk_trajectory_len(const struct MfkTrajectory *traj);

// Copies up to `cap` samples into `buf`.
//
// # Safety
// `traj` must be a live handle and `buf` writable for `cap` doubles.
enum MfkStatus mfk_trajectory_values(const struct MfkTrajectory *traj, double *buf, size_t cap);

// Quadratic-variation estimate of the diffusion coefficient.
//
// # Safety
// `traj` must be a live handle and `out` writable.
enum MfkStatus mfk_quadratic_variation_sigma(const struct MfkTrajectory *traj, double *out);

// # Safety
// `traj` must be NULL or a handle not yet freed.
void mfk_trajectory_free(struct MfkTrajectory *traj);

// Orthonormal basis of degree `order` from the empirical moments of `traj`.
//
// # Safety
// `traj` must be a live handle and `out` writable.
enum MfkStatus mfk_basis_from_trajectory(const struct MfkTrajectory *traj,
                                         size_t order,
                                         bool discrete,
                                         struct MfkBasis **out);

// Orthonormal basis of degree `order` for `N(mean, var)`.
//
// # Safety
// `out` must be writable.
enum MfkStatus mfk_basis_from_gaussian(double mean,
                                       double var,
                                       size_t order,
                                       struct MfkBasis **out);

// Highest degree in the basis, or 0 for NULL.
//
// # Safety
// `basis` must be NULL or a live handle.
size_t mfk_basis_order(const struct MfkBasis *basis);

// `psi_k(x)`.
//
// # Safety
// `basis` must be a live handle and `out` writable.
enum MfkStatus mfk_basis_eval(const struct MfkBasis *basis, size_t k, double x, double *out);

// Monomial coefficients of `psi_k` (`k + 1` values) copied into `buf`.
//
// # Safety
// `basis` must be a live handle and `buf` writable for `cap` doubles.
enum MfkStatus mfk_basis_coefficients(const struct MfkBasis *basis,
                                      size_t k,
                                      double *buf,
                                      size_t cap);

// # Safety
// `basis` must be NULL or a handle not yet freed.
void mfk_basis_free(struct MfkBasis *basis);

// Estimates `W'` from `traj` with `order + 1` coefficients. A positive
// `ball_radius` projects onto that Euclidean ball; zero or negative means
// no projection.
//
// # Safety
// `traj` and `confining` must be valid; `out` writable.
enum MfkStatus mfk_estimate(const struct MfkTrajectory *traj,
                            const struct MfkPotential *confining,
                            size_t order,
                            double sigma,
                            double ball_radius,
                            bool discrete,
                            struct MfkEstimate **out);

// `W'_hat(x)`.
//
// # Safety
// `est` must be a live handle and `out` writable.
enum MfkStatus mfk_estimate_eval(const struct MfkEstimate *est, double x, double *out);

// Number of coefficients (`K + 1`), or 0 for NULL.
//
// # Safety
// `est` must be NULL or a live handle.
size_t mfk_estimate_len(const struct MfkEstimate *est);

// Copies the basis coefficients `beta_hat` into `buf`.
//
// # Safety
// `est` must be a live handle and `buf` writable for `cap` doubles.
enum MfkStatus mfk_estimate_coefficients(const struct MfkEstimate *est, double *buf, size_t cap);

// # Safety
// `est` must be NULL or a handle not yet freed.
void mfk_estimate_free(struct MfkEstimate *est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFKERNEL_H */
