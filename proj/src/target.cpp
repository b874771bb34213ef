#include "rosa/target.hpp"

#include <cmath>

namespace rosa {

void RewardSignal::validate() const {
  if (!std::isfinite(value)) throw ArgumentError("reward value must be finite");
  if (kind == RewardKind::Sparse) {
    if (value != 1.0 && value != -1.0)
      throw ArgumentError("sparse reward must be -1 or +1");
  } else {
    if (value < -1.0 || value > 1.0)
      throw ArgumentError("dense reward must lie in [-1, +1]");
  }
}

namespace {

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw ArgumentError("beta must be positive and finite");
}

void check_prob(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("probability outside [0, 1]");
}

}  // namespace

double partition_single(double p_yk, const RewardSignal& r, double beta) {
  check_beta(beta);
  check_prob(p_yk);
  r.validate();
  return 1.0 - (1.0 - std::exp(r.value / beta)) * p_yk;
}

TargetValue practical_target(double p_yk, const RewardSignal& r, double beta) {
  TargetValue t;
  t.beta = beta;
  t.z = partition_single(p_yk, r, beta);
  t.target_prob = p_yk * std::exp(r.value / beta) / t.z;
  return t;
}

Vec closed_form_policy(std::span<const double> dist,
                       const std::function<double(int)>& reward_fn, double beta) {
  check_beta(beta);
  double sum = 0.0;
  for (double p : dist) {
    check_prob(p);
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ArgumentError("closed_form_policy: input distribution not normalized");

  Vec out(dist.size());
  double z = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const double r = reward_fn(static_cast<int>(i));
    if (!std::isfinite(r)) throw ArgumentError("closed_form_policy: non-finite reward");
    out[i] = dist[i] * std::exp(r / beta);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

Vec practical_target_vector(std::span<const double> dist, int y_k,
                            const RewardSignal& r, double beta) {
  if (y_k < 0 || static_cast<std::size_t>(y_k) >= dist.size())
    throw ArgumentError("practical_target_vector: response id out of range");
  r.validate();
  return closed_form_policy(
      dist, [&](int y) { return y == y_k ? r.value : 0.0; }, beta);
}

double residual(const TargetValue& target, double current) {
  check_prob(current);
  return target.target_prob - current;
}

}  // namespace rosa
