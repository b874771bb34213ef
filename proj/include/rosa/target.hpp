#pragma once

/**
 * Re-weighted target policies.
 *
 * Given a reward signal on a sampled response, the KL-regularized objective
 * has a closed-form optimum: the previous policy exponentially re-weighted
 * by reward and renormalized. closed_form_policy computes that optimum for
 * an explicit reward vector; practical_target specializes it to the
 * single observed response (reward zero elsewhere), whose partition
 * function collapses to
 *
 *   Z = 1 - (1 - exp(r / beta)) * pi(y_k | x).
 */

#include <functional>

#include "rosa/common.hpp"

namespace rosa {

enum class RewardKind { Sparse, Dense };

struct RewardSignal {
  double value = 0.0;
  RewardKind kind = RewardKind::Sparse;

  // sparse => value in {-1, +1}; dense => value in [-1, +1]
  void validate() const;
};

struct TargetValue {
  double z = 1.0;            // single-sample partition function
  double target_prob = 0.0;  // re-weighted probability of the observed response
  double beta = 1.0;
};

// Single-sample partition function. p_yk is pi(y_k|x) under the previous policy.
double partition_single(double p_yk, const RewardSignal& r, double beta);

// Re-weighted probability of the observed response only.
TargetValue practical_target(double p_yk, const RewardSignal& r, double beta);

// Full closed-form optimum for an explicit per-response reward vector.
Vec closed_form_policy(std::span<const double> dist,
                       const std::function<double(int)>& reward_fn, double beta);

// Full practical target vector: reward applied at y_k, zero elsewhere.
Vec practical_target_vector(std::span<const double> dist, int y_k,
                            const RewardSignal& r, double beta);

// Update residual d = target - current.
double residual(const TargetValue& target, double current);

}  // namespace rosa
