#ifndef CSIMPUTE_H
#define CSIMPUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum CsiStatus {
  CSI_STATUS_OK = 0,
  CSI_STATUS_NULL_POINTER = 1,
  CSI_STATUS_INVALID_ARGUMENT = 2,
  CSI_STATUS_SHAPE_MISMATCH = 3,
  CSI_STATUS_BUFFER_TOO_SMALL = 4,
  CSI_STATUS_NUMERICAL_FAILURE = 5,
  CSI_STATUS_PANIC = 6,
} CsiStatus;

typedef enum CsiMethod {
  CSI_METHOD_CSI = 0,
  CSI_METHOD_SLI = 1,
} CsiMethod;

// Orthonormal spline basis on a uniform grid.
typedef struct CsiBasis CsiBasis;

// Result of a fit.
typedef struct CsiFit CsiFit;

// Observed matrix, treatment onsets and basis of one fitting problem.
typedef struct CsiProblem CsiProblem;

// Simulated dataset with its ground truth.
typedef struct CsiSim CsiSim;

// Solver settings; obtain defaults from [`csi_solver_config_default`].
typedef struct CsiSolverConfig {
  double lambda;
  double tolerance;
  size_t max_iter;
  double denom_guard;
} CsiSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *csi_last_error(void);

struct CsiSolverConfig csi_solver_config_default(void);

// Basis of dimension `k` on `t` uniform points spanning `[t_min, t_max]`.
//
// # Safety
// `out` must be a valid pointer.
enum CsiStatus csi_basis_new(double t_min, double t_max, size_t t, size_t k, struct CsiBasis **out);

// # Safety
// `basis` must come from this library and not be used afterwards.
void csi_basis_free(struct CsiBasis *basis);

// # Safety
// Pointers must be valid.
enum CsiStatus csi_basis_dims(const struct CsiBasis *basis, size_t *t, size_t *k);

// Copies the `t x k` basis matrix, row-major, into `buf`.
//
// # Safety
// `buf` must hold `len` doubles.
enum CsiStatus csi_basis_matrix(const struct CsiBasis *basis, double *buf, size_t len);

// Problem from row-major `n x t` values, a zero-one mask of the same shape
// and per-row treatment onsets (zero-based grid column, negative for never
// treated). Values outside the mask are ignored.
//
// # Safety
// `values` and `mask` must hold `n * t` entries, `onsets` `n` entries.
enum CsiStatus csi_problem_new(const struct CsiBasis *basis,
                               size_t n,
                               size_t t,
                               const double *values,
                               const uint8_t *mask,
                               const int64_t *onsets,
                               struct CsiProblem **out);

// # Safety
// `problem` must come from this library and not be used afterwards.
void csi_problem_free(struct CsiProblem *problem);

// Fits the problem from zero. Running out of iterations is not an error;
// check [`csi_fit_converged`].
//
// # Safety
// Pointers must be valid; `config` may be null for defaults.
enum CsiStatus csi_fit(const struct CsiProblem *problem,
                       enum CsiMethod method,
                       const struct CsiSolverConfig *config,
                       struct CsiFit **out);

// # Safety
// `fit` must come from this library and not be used afterwards.
void csi_fit_free(struct CsiFit *fit);

// Scalar summary of a fit. Any output pointer may be null.
//
// # Safety
// Non-null pointers must be valid.
enum CsiStatus csi_fit_summary(const struct CsiFit *fit,
                               double *mu,
                               double *lambda,
                               size_t *iterations,
                               bool *converged);

// Whether the fit met the stopping rule; false also for a null handle.
//
// # Safety
// `fit` must be null or valid.
bool csi_fit_converged(const struct CsiFit *fit);

// Copies the row-major `n x k` coefficient matrix.
//
// # Safety
// `buf` must hold `len` doubles.
enum CsiStatus csi_fit_w(const struct CsiFit *fit, double *buf, size_t len);

// Copies the objective value after each iteration; `len` must be at least
// the iteration count.
//
// # Safety
// `buf` must hold `len` doubles.
enum CsiStatus csi_fit_loss_trace(const struct CsiFit *fit, double *buf, size_t len);

// Copies the row-major `n x t` prediction `W B' + mu I_S`.
//
// # Safety
// `buf` must hold `len` doubles.
enum CsiStatus csi_fit_predict(const struct CsiFit *fit, double *buf, size_t len);

// Simulated dataset with default auxiliary parameters.
//
// # Safety
// `out` must be a valid pointer.
enum CsiStatus csi_simulate(size_t n,
                            size_t t,
                            size_t k,
                            double mu,
                            double rho,
                            uint64_t seed,
                            struct CsiSim **out);

// # Safety
// `sim` must come from this library and not be used afterwards.
void csi_sim_free(struct CsiSim *sim);

// Ground-truth treatment effect.
//
// # Safety
// `sim` must be valid.
double csi_sim_mu(const struct CsiSim *sim);

// Copies the row-major `n x k` true coefficients.
//
// # Safety
// `buf` must hold `len` doubles.
enum CsiStatus csi_sim_w(const struct CsiSim *sim, double *buf, size_t len);

// New problem handle over the simulated observations.
//
// # Safety
// Pointers must be valid.
enum CsiStatus csi_sim_problem(const struct CsiSim *sim, struct CsiProblem **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSIMPUTE_H */
