#include "rosa/solver.hpp"

#include <algorithm>
#include <cmath>

#include "rosa/rng.hpp"

namespace rosa {

void SolverConfig::validate() const {
  if (!(rel_tolerance > 0.0)) throw ArgumentError("solver tolerance must be positive");
  if (max_iterations < 0) throw ArgumentError("max_iterations must be >= 0");
  if (damping < 0.0) throw ArgumentError("damping must be >= 0");
}

LinearOperator rows_operator(const std::vector<Vec>& rows) {
  if (rows.empty()) throw ArgumentError("rows_operator: no rows");
  const std::size_t p = rows.front().size();
  for (const Vec& r : rows) {
    if (r.size() != p) throw ArgumentError("rows_operator: ragged rows");
  }
  LinearOperator op;
  op.domain_dim = p;
  op.range_dim = rows.size();
  op.apply_j = [&rows](std::span<const double> v, std::span<double> out) {
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = dot(rows[i], v);
  };
  op.apply_jt = [&rows, p](std::span<const double> s, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) axpy(s[i], rows[i], out);
  };
  return op;
}

void check_adjoint(const LinearOperator& op, double tolerance) {
  if (op.domain_dim == 0 || op.range_dim == 0 || !op.apply_j || !op.apply_jt)
    throw ArgumentError("incomplete linear operator");
  Rng rng(derive_seed(0xAD701A7ULL, {op.domain_dim, op.range_dim}));
  Vec v(op.domain_dim), s(op.range_dim);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  for (double& x : s) x = rng.uniform(-1.0, 1.0);
  Vec jv(op.range_dim, 0.0), jts(op.domain_dim, 0.0);
  op.apply_j(v, jv);
  op.apply_jt(s, jts);
  const double lhs = dot(jv, s);
  const double rhs = dot(v, jts);
  const double scl = std::max({1.0, std::abs(lhs), std::abs(rhs)});
  if (!(std::abs(lhs - rhs) <= tolerance * scl))
    throw NumericError("operator failed the adjoint consistency probe");
}

SolveResult solve_normal_equations(const LinearOperator& op,
                                   std::span<const double> d,
                                   const SolverConfig& cfg) {
  cfg.validate();
  if (d.size() != op.range_dim)
    throw ArgumentError("residual length does not match operator range");
  if (!all_finite(d)) throw NumericError("non-finite residual");
  check_adjoint(op);

  const std::size_t p = op.domain_dim;
  const int max_iter = cfg.max_iterations > 0
                           ? cfg.max_iterations
                           : static_cast<int>(std::min<std::size_t>(p, 100));

  // A x = b with A = J^T J + lambda I, b = J^T d, x0 = 0.
  Vec b(p, 0.0);
  op.apply_jt(d, b);
  const double b_norm = norm2(b);

  SolveResult res;
  res.delta.assign(p, 0.0);
  if (b_norm == 0.0) {
    res.converged = true;
    return res;
  }

  Vec r = b;          // residual b - A x
  Vec q = r;          // search direction
  Vec jq(op.range_dim, 0.0);
  Vec aq(p, 0.0);
  double rr = dot(r, r);

  for (int it = 0; it < max_iter; ++it) {
    op.apply_j(q, jq);
    op.apply_jt(jq, aq);
    if (cfg.damping > 0.0) axpy(cfg.damping, q, aq);

    const double qaq = dot(q, aq);
    if (!std::isfinite(qaq)) throw NumericError("cg: non-finite curvature");
    if (qaq <= 0.0) break;  // numerically rank-deficient direction

    const double alpha = rr / qaq;
    axpy(alpha, q, res.delta);
    axpy(-alpha, aq, r);
    res.iterations = it + 1;

    const double rr_next = dot(r, r);
    if (!std::isfinite(rr_next)) throw NumericError("cg: non-finite residual");
    if (std::sqrt(rr_next) <= cfg.rel_tolerance * b_norm) {
      res.converged = true;
      res.residual_norm = std::sqrt(rr_next);
      return res;
    }
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t i = 0; i < p; ++i) q[i] = r[i] + beta * q[i];
  }

  res.residual_norm = std::sqrt(rr);
  res.converged = res.residual_norm <= cfg.rel_tolerance * b_norm;
  return res;
}

Vec rank_one_solution(std::span<const double> g, double d, double damping) {
  if (damping < 0.0) throw ArgumentError("damping must be >= 0");
  if (!std::isfinite(d)) throw ArgumentError("residual must be finite");
  double gg = 0.0;
  for (double v : g) {
    if (!std::isfinite(v)) throw NumericError("non-finite gradient entry");
    gg += v * v;
  }
  if (gg == 0.0) throw NumericError("degenerate gradient: |g| = 0");
  Vec out(g.begin(), g.end());
  scale(d / (gg + damping), out);
  return out;
}

}  // namespace rosa
