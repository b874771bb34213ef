#pragma once

/**
 * Matrix-free least-squares step.
 *
 * Solves the Gauss-Newton normal equations (J^T J + lambda I) dx = J^T d
 * by conjugate gradient. The Jacobian is only ever touched through
 * apply_j / apply_jt closures, so nothing of size P x P is formed. With a
 * zero initial guess and lambda = 0 the iterates stay in range(J^T), which
 * makes the returned dx the minimum-norm least-squares solution; for the
 * single-residual case that solution is available in closed form as
 * rank_one_solution and serves as the solver's oracle.
 */

#include <functional>

#include "rosa/common.hpp"

namespace rosa {

struct SolverConfig {
  double rel_tolerance = 1e-8;
  int max_iterations = 0;  // 0 means min(P, 100)
  double damping = 0.0;    // Tikhonov lambda

  void validate() const;
};

// Adjoint pair for a residual-space Jacobian. apply_j maps parameter space
// (dim domain_dim) to residual space (dim range_dim); apply_jt is its adjoint.
struct LinearOperator {
  std::size_t domain_dim = 0;
  std::size_t range_dim = 0;
  std::function<void(std::span<const double>, std::span<double>)> apply_j;
  std::function<void(std::span<const double>, std::span<double>)> apply_jt;
};

// Operator backed by explicit Jacobian rows (each of length P).
LinearOperator rows_operator(const std::vector<Vec>& rows);

struct SolveResult {
  Vec delta;
  int iterations = 0;
  double residual_norm = 0.0;  // normal-equations residual at exit
  bool converged = false;
};

// One randomized probe of <Jv, s> == <v, J^T s>; throws NumericError when the
// pair is not adjoint-consistent. Runs before every solve.
void check_adjoint(const LinearOperator& op, double tolerance = 1e-10);

SolveResult solve_normal_equations(const LinearOperator& op,
                                   std::span<const double> d,
                                   const SolverConfig& cfg);

// Closed-form minimum-norm solution of the rank-one system:
// dx = g * d / (|g|^2 + lambda). Throws NumericError when g = 0.
Vec rank_one_solution(std::span<const double> g, double d, double damping = 0.0);

}  // namespace rosa
