#pragma once

/**
 * Parametric policy families.
 *
 * A PolicyModel is a conditional distribution pi_theta(y|x) over a small
 * finite response set, evaluated from a flat parameter vector. Three
 * families are supported:
 *
 *   tabular-softmax  one logit row per context, softmax over responses
 *   linear-softmax   logits = W * features(x), softmax
 *   mlp-softmax      logits = W2 * tanh(W1 * features(x) + b1) + b2
 *
 * All evaluation is pure in (model, theta). Gradients of pi(y|x) with
 * respect to theta are analytic; jvp/vjp are the matching directional
 * products for the single-row Jacobian. The mlp family additionally
 * supports an additive shift on the hidden activation before the output
 * head, used by the hidden-shift update mechanism.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rosa/common.hpp"
#include "rosa/rng.hpp"

namespace rosa {

enum class PolicyFamily { TabularSoftmax, LinearSoftmax, MlpSoftmax };

std::string_view family_name(PolicyFamily family);
std::optional<PolicyFamily> family_from_name(std::string_view name);

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Named slices of the flat parameter vector. Blocks are contiguous, in
// registration order, and partition [0, total_size()) exactly.
class ParamLayout {
 public:
  void add_block(std::string name, std::size_t size);
  const ParamBlock& block(std::string_view name) const;
  bool has_block(std::string_view name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total_size() const { return total_; }

  std::span<const double> slice(const Vec& theta, std::string_view name) const;
  std::span<double> slice(Vec& theta, std::string_view name) const;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

// Numerically stable softmax; the result is strictly positive and sums to 1.
Vec softmax(std::span<const double> logits);

// Inverse-CDF draw from an explicit distribution.
int sample_index(std::span<const double> dist, Rng& rng);

class PolicyModel {
 public:
  // Empty model; every operation rejects it until a factory assigns one.
  PolicyModel() = default;

  static PolicyModel tabular(int context_count, int response_count);

  // Feature-based families carry one feature vector per context id.
  static PolicyModel linear(std::vector<Vec> context_features, int response_count);
  static PolicyModel mlp(std::vector<Vec> context_features, int hidden_dim,
                         int response_count);

  // Convenience constructors with seeded uniform(-1, 1) features.
  static PolicyModel linear(int context_count, int feature_dim, int response_count,
                            std::uint64_t feature_seed);
  static PolicyModel mlp(int context_count, int feature_dim, int hidden_dim,
                         int response_count, std::uint64_t feature_seed);

  PolicyFamily family() const { return family_; }
  int context_count() const { return context_count_; }
  int response_count() const { return response_count_; }
  int feature_dim() const { return feature_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total_size(); }
  const Vec& context_features(int x) const;

  // Tabular starts at zero logits; linear/mlp weights from uniform(-0.5, 0.5).
  Vec init_params(std::uint64_t seed) const;

  Vec logits(const Vec& theta, int x) const;
  Vec distribution(const Vec& theta, int x) const;
  double prob(const Vec& theta, int x, int y) const;
  Vec grad_prob(const Vec& theta, int x, int y) const;
  double jvp(const Vec& theta, int x, int y, std::span<const double> v) const;
  Vec vjp(const Vec& theta, int x, int y, double s) const;
  int sample(const Vec& theta, int x, Rng& rng) const;
  int argmax(const Vec& theta, int x) const;

  // Hidden-shift variants (mlp only): shift is added to the tanh activation.
  Vec distribution_shifted(const Vec& theta, int x,
                           std::span<const double> shift) const;
  double prob_shifted(const Vec& theta, int x, int y,
                      std::span<const double> shift) const;
  // Gradient of pi(y|x) with respect to the shift coordinates.
  Vec grad_prob_shift(const Vec& theta, int x, int y,
                      std::span<const double> shift) const;

 private:
  void check_context(int x) const;
  void check_response(int y) const;
  void check_theta(const Vec& theta) const;
  void check_shift(std::span<const double> shift) const;

  // Hidden activation (tanh, plus optional shift) for feature families.
  Vec hidden_activation(const Vec& theta, int x,
                        std::span<const double> shift) const;

  PolicyFamily family_ = PolicyFamily::TabularSoftmax;
  int context_count_ = 0;
  int response_count_ = 0;
  int feature_dim_ = 0;
  int hidden_dim_ = 0;
  std::vector<Vec> features_;
  ParamLayout layout_;
};

}  // namespace rosa
