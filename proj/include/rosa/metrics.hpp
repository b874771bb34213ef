#pragma once

/**
 * KL computations, executable bound checks, and performance metrics.
 *
 * The bound checks come in two regimes. Exact-update checks replace the
 * policy by the re-weighted target directly (the premise of the per-turn
 * and cumulative bounds) and verify the per-turn identity
 *
 *   delta KL = log Z_k - (r_k / beta) * user(y_k)
 *
 * to tight tolerance. The unified check consumes traces of real linearized
 * updates and measures the bound that charges linearization error at
 * (L/2) |delta theta|^2 per turn, with L estimated empirically.
 */

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rosa/common.hpp"
#include "rosa/policy.hpp"
#include "rosa/target.hpp"

namespace rosa {

inline constexpr double kBoundTolerance = 1e-9;

// KL(p || q) = sum p_i log(p_i / q_i), with 0 log 0 = 0. Entries where both
// sides are positive but below 1e-12 are floored inside the log; a true
// support violation (p_i > 0, q_i = 0) returns +infinity instead of an error.
double kl(std::span<const double> p, std::span<const double> q);

// Identity value for one exact update: log Z - (r / beta) * user(y_k).
double predicted_delta_kl(std::span<const double> user,
                          std::span<const double> pi_prev, int y_k,
                          const RewardSignal& r, double beta);

struct TurnBound {
  int turn = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;  // lhs <= rhs + kBoundTolerance
  double slack = 0.0;  // rhs - lhs
};

struct BoundReport {
  std::string theorem;
  std::vector<TurnBound> turns;

  bool all_hold() const;
};

// Single exact update: verifies the identity to 1e-10 (throws NumericError
// otherwise) and reports the per-turn bound lhs <= -(1/beta) user(y_k).
BoundReport check_monotonic(std::span<const double> user,
                            std::span<const double> pi_prev, int y_k,
                            const RewardSignal& r, double beta);

struct ExactStep {
  int y_k = 0;
  RewardSignal reward;
};

// Chain of exact updates from pi0; reports the cumulative bound
// kl(user, pi_K) <= kl(user, pi_0) - (1/beta) sum user(y_k) at every prefix.
BoundReport check_cumulative(std::span<const double> user, Vec pi0,
                             std::span<const ExactStep> steps, double beta);

struct LinearizedTurn {
  int y_k = 0;
  double reward = 0.0;
  double delta_norm = 0.0;
  Vec dist_after;
};

struct LinearizedTrace {
  Vec dist_initial;
  std::vector<LinearizedTurn> turns;
};

struct UnifiedReport {
  BoundReport bound;
  // (lhat/2) sum |delta|^2 minus the measured linearization penalty; a
  // violated bound must come with negative slack here (estimator too small).
  double lhat_slack = 0.0;
};

UnifiedReport check_unified(const LinearizedTrace& trace,
                            std::span<const double> user, double beta,
                            double lhat);

using RegionSampler = std::function<std::pair<Vec, Vec>(Rng&)>;

// Pairs (theta, theta + step) around a center point, with displacement
// norms log-uniform in [min_scale, max_scale].
RegionSampler perturbation_sampler(Vec center, double min_scale = 1e-3,
                                   double max_scale = 1.0);

// Unit direction maximizing the local KL curvature of the policy at theta
// (power iteration on the Fisher quadratic form).
Vec top_curvature_direction(const PolicyModel& model, const Vec& theta, int x,
                            int iterations, Rng& rng);

// Pairs anchored at visited parameter points, displaced along their
// top-curvature directions (and occasional random ones) at small scales
// where the quadratic regime holds. This probes the worst case that a
// purely random sampler tends to miss.
RegionSampler trajectory_sampler(const PolicyModel& model, int x,
                                 std::vector<Vec> visited,
                                 double min_scale = 1e-3,
                                 double max_scale = 0.1);

// Empirical smoothness constant: max over n sampled pairs of
// 2 KL(pi_a || pi_b) / |a - b|^2 (max over contexts), inflated by 2.
// Pairs closer than 1e-12 are skipped. Requires n >= 100.
double estimate_lipschitz(const PolicyModel& model, const RegionSampler& sampler,
                          int n, std::uint64_t seed);

struct TaskOutcome {
  std::string task_id;
  int solved_turn = 0;  // 0 when unsolved
  int turns_taken = 0;
};

// Fraction of tasks solved at any turn <= max_turn.
double accuracy(std::span<const TaskOutcome> outcomes, int max_turn);

// Percentage of first-turn failures solved at a later turn <= max_turn;
// absent when every task was solved at turn 1.
std::optional<double> correction_uplift(std::span<const TaskOutcome> outcomes,
                                        int max_turn);

// counts[k-1] = tasks first solved exactly at turn k.
std::vector<int> newly_solved_per_turn(std::span<const TaskOutcome> outcomes,
                                       int max_turn);

}  // namespace rosa
