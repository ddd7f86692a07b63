#ifndef UOTLAB_H
#define UOTLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum UotStatus {
  UotStatus_Ok = 0,
  UotStatus_NullPointer = 1,
  UotStatus_Domain = 2,
  UotStatus_Structural = 3,
  UotStatus_Infeasible = 4,
  UotStatus_InvalidInput = 5,
  UotStatus_Io = 6,
  UotStatus_Panic = 7,
} UotStatus;

typedef enum UotCost {
  UotCost_SquaredEuclidean = 0,
  UotCost_HellingerKantorovich = 1,
} UotCost;

typedef enum UotEntropy {
  UotEntropy_Kl = 0,
  UotEntropy_Balanced = 1,
} UotEntropy;

/**
 * Opaque handle to a finitely supported nonnegative measure.
 */
typedef struct UotMeasure UotMeasure;

/**
 * Summary of a solve.
 */
typedef struct UotReport {
  double primal;
  double dual;
  double gap;
  uint64_t iterations;
  /**
   * Largest marginal residual over both sides.
   */
  double marginal_residual;
  bool converged;
} UotReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *uot_last_error_message(void);

/**
 * Creates a measure from `n` points of dimension `dim` (row-major) and `n` weights.
 *
 * # Safety
 * `points` must hold `n * dim` doubles, `weights` must hold `n` doubles and
 * `out_measure` must be writable. Free the handle with [`uot_measure_free`].
 */
enum UotStatus uot_measure_new(const double *points,
                               uintptr_t n,
                               uintptr_t dim,
                               const double *weights,
                               struct UotMeasure **out_measure);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `measure` must come from [`uot_measure_new`] and not be used afterwards.
 */
void uot_measure_free(struct UotMeasure *measure);

/**
 * Number of support points.
 *
 * # Safety
 * `measure` must be a live handle or NULL.
 */
enum UotStatus uot_measure_len(const struct UotMeasure *measure, uintptr_t *out_len);

/**
 * Total mass.
 *
 * # Safety
 * `measure` must be a live handle or NULL.
 */
enum UotStatus uot_measure_mass(const struct UotMeasure *measure, double *out_mass);

/**
 * Solves the original-space regularised problem with the normalised product
 * reference. If `plan` is non-NULL it receives the `len(mu0) * len(mu1)`
 * optimal plan in row-major order.
 *
 * # Safety
 * Handles must be live, `report` writable, and `plan` NULL or large enough.
 */
enum UotStatus uot_solve_x_eps(const struct UotMeasure *mu0,
                               const struct UotMeasure *mu1,
                               enum UotCost cost,
                               enum UotEntropy entropy,
                               double eps,
                               double tolerance,
                               uint64_t max_iters,
                               double *plan,
                               struct UotReport *report);

/**
 * Solves the unregularised extended-space problem on a geometric radial grid
 * with `radial_nodes` positive nodes.
 *
 * # Safety
 * Handles must be live and `report` writable.
 */
enum UotStatus uot_solve_y_unreg(const struct UotMeasure *mu0,
                                 const struct UotMeasure *mu1,
                                 enum UotCost cost,
                                 double p,
                                 uintptr_t radial_nodes,
                                 struct UotReport *report);

/**
 * Hellinger-Kantorovich cost of a distance `d` (infinite beyond pi/2).
 *
 * # Safety
 * `out_value` must be writable.
 */
enum UotStatus uot_hk_cost(double d, double *out_value);

/**
 * Regularised perspective cost `H_eps(s0, s1, S, c)`.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum UotStatus uot_perspective_h_eps(double s0,
                                     double s1,
                                     double big_s,
                                     double c,
                                     double eps,
                                     double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UOTLAB_H */
