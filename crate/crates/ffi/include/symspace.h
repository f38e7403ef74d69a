#ifndef SYMSPACE_H
#define SYMSPACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define SYMSPACE_OK 0

#define SYMSPACE_ERR_NULL_POINTER -1

#define SYMSPACE_ERR_INVALID_UTF8 -2

#define SYMSPACE_ERR_PANIC -3

#define SYMSPACE_ERR_LENGTH -4

#define SYMSPACE_ERR_NOT_CLOSED 1

#define SYMSPACE_ERR_DEPENDENT_BASIS 2

#define SYMSPACE_ERR_DEGENERATE 3

#define SYMSPACE_ERR_COMPACT_TYPE 4

#define SYMSPACE_ERR_MIXED_ALGEBRAS 5

#define SYMSPACE_ERR_INVALID_FAMILY 6

#define SYMSPACE_ERR_THETA_NOT_AUTOMORPHISM 10

#define SYMSPACE_ERR_BTHETA_NOT_POSITIVE 11

#define SYMSPACE_ERR_SEED_NOT_IN_P 12

#define SYMSPACE_ERR_SEED_NOT_UNIT 13

#define SYMSPACE_ERR_SEED_NOT_EXTENDABLE 14

#define SYMSPACE_ERR_GENERICITY_FAILURE 15

#define SYMSPACE_ERR_NOT_DECOMPOSABLE 16

#define SYMSPACE_ERR_H1_NOT_UNIT 17

#define SYMSPACE_ERR_H1_NOT_IN_A 18

#define SYMSPACE_ERR_NOT_IN_S 20

#define SYMSPACE_ERR_NILPOTENCY_OVERFLOW 21

#define SYMSPACE_ERR_NON_DIFFERENTIABLE 22

#define SYMSPACE_ERR_FLOW_ESCAPE 23

#define SYMSPACE_ERR_INDEX_OUT_OF_RANGE 24

#define SYMSPACE_ERR_BOUNDARY_MASS 30

#define SYMSPACE_ERR_INVALID_GRID 31

#define SYMSPACE_ERR_BAD_EXPONENT 40

#define SYMSPACE_ERR_SUPPORT_LEAK 41

#define SYMSPACE_ERR_NO_DECAY 50

#define SYMSPACE_ERR_ZERO_DENOMINATOR 51

#define SYMSPACE_ERR_NOT_DIV_FREE 52

#define SYMSPACE_ERR_NO_POSITIVE_RHO 53

#define SYMSPACE_ERR_CONFIG 60

#define SYMSPACE_ERR_IO 61

/*
 A real semisimple matrix Lie algebra.
 */
typedef struct SymspaceAlgebra SymspaceAlgebra;

/*
 An Iwasawa structure with its good frame and exponential chart on S = NA.
 */
typedef struct SymspaceStructure SymspaceStructure;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or NULL. Valid until the next
 failing call on the same thread.
 */
const char *symspace_last_error(void);

/*
 Build an algebra from JSON such as `{"family": "sl", "n": 3}`.

 # Safety
 `spec_json` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t symspace_algebra_new(const char *spec_json, struct SymspaceAlgebra **out);

/*
 # Safety
 `alg` must come from `symspace_algebra_new` and not be freed twice.
 */
void symspace_algebra_free(struct SymspaceAlgebra *alg);

/*
 Dimension of the algebra, 0 for NULL.

 # Safety
 `alg` must be NULL or a live handle.
 */
uintptr_t symspace_algebra_dim(const struct SymspaceAlgebra *alg);

/*
 Killing form of two elements given by basis coordinates of length `len`.

 # Safety
 `x` and `y` must point to `len` doubles; `out` must be valid.
 */
int32_t symspace_killing_form(const struct SymspaceAlgebra *alg,
                              const double *x,
                              const double *y,
                              uintptr_t len,
                              double *out);

/*
 Iwasawa structure, good frame and chart; `seed` drives genericity retries.

 # Safety
 `alg` must be a live handle and `out` a valid pointer.
 */
int32_t symspace_structure_new(const struct SymspaceAlgebra *alg,
                               uint64_t seed,
                               struct SymspaceStructure **out);

/*
 Structure adapted to a unit vector `v0` of p (algebra coordinates).

 # Safety
 `v0` must point to `len` doubles; `alg` and `out` must be valid.
 */
int32_t symspace_structure_adapted(const struct SymspaceAlgebra *alg,
                                   const double *v0,
                                   uintptr_t len,
                                   uint64_t seed,
                                   struct SymspaceStructure **out);

/*
 # Safety
 `s` must come from a `symspace_structure_*` constructor and not be freed twice.
 */
void symspace_structure_free(struct SymspaceStructure *s);

/*
 Real rank r, 0 for NULL.

 # Safety
 `s` must be NULL or a live handle.
 */
uintptr_t symspace_structure_rank(const struct SymspaceStructure *s);

/*
 m = dim S, 0 for NULL.

 # Safety
 `s` must be NULL or a live handle.
 */
uintptr_t symspace_structure_m(const struct SymspaceStructure *s);

/*
 ρ(H_i) on the frame vectors H_1..H_r; `len` must be at least r.

 # Safety
 `out` must point to `len` writable doubles.
 */
int32_t symspace_structure_rho(const struct SymspaceStructure *s, double *out, uintptr_t len);

/*
 (e^{2ρ(log a)}, det Ad(a)|_n) with log a = Σ t_i H_i in frame coordinates.

 # Safety
 `t` must point to `len` = r doubles; `lhs` and `rhs` must be valid.
 */
int32_t symspace_jacobian_check(const struct SymspaceStructure *s,
                                const double *t,
                                uintptr_t len,
                                double *lhs,
                                double *rhs);

/*
 Iwasawa structure and frame as JSON; free the string with `symspace_string_free`.

 # Safety
 `out` must be a valid pointer.
 */
int32_t symspace_structure_json(const struct SymspaceStructure *s, char **out);

/*
 Monte Carlo average of ⟨u,v⟩⟨u',v⟩ over the unit sphere against ⟨u,u'⟩/m.

 # Safety
 `u`, `up` must point to `m` doubles; the three outputs must be valid.
 */
int32_t symspace_sphere_average(const double *u,
                                const double *up,
                                uintptr_t m,
                                uintptr_t samples,
                                uint64_t seed,
                                double *monte_carlo,
                                double *closed_form,
                                double *std_error);

/*
 Run the verification suite on a JSON experiment configuration. Returns
 `SYMSPACE_OK` when the run completed; `passed` tells whether every
 asserted row passed and `report_json` receives the report.

 # Safety
 `config_json` must be NUL-terminated; `passed` and `report_json` must be valid.
 */
int32_t symspace_run_suite(const char *config_json, bool *passed, char **report_json);

/*
 Release a string returned by this library.

 # Safety
 `s` must be NULL or a string returned by this library, freed once.
 */
void symspace_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYMSPACE_H */
