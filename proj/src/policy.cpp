#include "rosa/policy.hpp"

#include <algorithm>
#include <cmath>

namespace rosa {

std::string_view family_name(PolicyFamily family) {
  switch (family) {
    case PolicyFamily::TabularSoftmax: return "tabular";
    case PolicyFamily::LinearSoftmax: return "linear";
    case PolicyFamily::MlpSoftmax: return "mlp";
  }
  return "unknown";
}

std::optional<PolicyFamily> family_from_name(std::string_view name) {
  if (name == "tabular" || name == "tabular-softmax") return PolicyFamily::TabularSoftmax;
  if (name == "linear" || name == "linear-softmax") return PolicyFamily::LinearSoftmax;
  if (name == "mlp" || name == "mlp-softmax") return PolicyFamily::MlpSoftmax;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// ParamLayout
// ---------------------------------------------------------------------------

void ParamLayout::add_block(std::string name, std::size_t size) {
  if (size == 0) throw ArgumentError("layout block must be non-empty: " + name);
  if (has_block(name)) throw ArgumentError("duplicate layout block: " + name);
  blocks_.push_back({std::move(name), total_, size});
  total_ += size;
}

bool ParamLayout::has_block(std::string_view name) const {
  return std::any_of(blocks_.begin(), blocks_.end(),
                     [&](const ParamBlock& b) { return b.name == name; });
}

const ParamBlock& ParamLayout::block(std::string_view name) const {
  for (const ParamBlock& b : blocks_) {
    if (b.name == name) return b;
  }
  throw ArgumentError("unknown layout block: " + std::string(name));
}

std::span<const double> ParamLayout::slice(const Vec& theta,
                                           std::string_view name) const {
  if (theta.size() != total_) throw ArgumentError("parameter vector length mismatch");
  const ParamBlock& b = block(name);
  return {theta.data() + b.offset, b.size};
}

std::span<double> ParamLayout::slice(Vec& theta, std::string_view name) const {
  if (theta.size() != total_) throw ArgumentError("parameter vector length mismatch");
  const ParamBlock& b = block(name);
  return {theta.data() + b.offset, b.size};
}

// ---------------------------------------------------------------------------
// Softmax helpers
// ---------------------------------------------------------------------------

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("softmax: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(m)) throw NumericError("softmax: non-finite logit");
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

int sample_index(std::span<const double> dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(dist.size()) - 1;  // cumulative rounding
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

void check_positive(int v, const char* what) {
  if (v <= 0) throw ArgumentError(std::string(what) + " must be positive");
}

std::vector<Vec> random_features(int context_count, int feature_dim,
                                 std::uint64_t seed) {
  check_positive(context_count, "context_count");
  check_positive(feature_dim, "feature_dim");
  std::vector<Vec> features(static_cast<std::size_t>(context_count));
  for (int x = 0; x < context_count; ++x) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(x)}));
    features[static_cast<std::size_t>(x)].resize(static_cast<std::size_t>(feature_dim));
    for (double& f : features[static_cast<std::size_t>(x)]) f = rng.uniform(-1.0, 1.0);
  }
  return features;
}

}  // namespace

PolicyModel PolicyModel::tabular(int context_count, int response_count) {
  check_positive(context_count, "context_count");
  check_positive(response_count, "response_count");
  PolicyModel m;
  m.family_ = PolicyFamily::TabularSoftmax;
  m.context_count_ = context_count;
  m.response_count_ = response_count;
  m.layout_.add_block("logits", static_cast<std::size_t>(context_count) *
                                    static_cast<std::size_t>(response_count));
  return m;
}

PolicyModel PolicyModel::linear(std::vector<Vec> context_features, int response_count) {
  if (context_features.empty()) throw ArgumentError("linear: no context features");
  check_positive(response_count, "response_count");
  const std::size_t dim = context_features.front().size();
  if (dim == 0) throw ArgumentError("linear: empty feature vector");
  for (const Vec& f : context_features) {
    if (f.size() != dim) throw ArgumentError("linear: ragged feature vectors");
  }
  PolicyModel m;
  m.family_ = PolicyFamily::LinearSoftmax;
  m.context_count_ = static_cast<int>(context_features.size());
  m.response_count_ = response_count;
  m.feature_dim_ = static_cast<int>(dim);
  m.features_ = std::move(context_features);
  m.layout_.add_block("weight", static_cast<std::size_t>(response_count) * dim);
  return m;
}

PolicyModel PolicyModel::mlp(std::vector<Vec> context_features, int hidden_dim,
                             int response_count) {
  if (context_features.empty()) throw ArgumentError("mlp: no context features");
  check_positive(hidden_dim, "hidden_dim");
  check_positive(response_count, "response_count");
  const std::size_t dim = context_features.front().size();
  if (dim == 0) throw ArgumentError("mlp: empty feature vector");
  for (const Vec& f : context_features) {
    if (f.size() != dim) throw ArgumentError("mlp: ragged feature vectors");
  }
  PolicyModel m;
  m.family_ = PolicyFamily::MlpSoftmax;
  m.context_count_ = static_cast<int>(context_features.size());
  m.response_count_ = response_count;
  m.feature_dim_ = static_cast<int>(dim);
  m.hidden_dim_ = hidden_dim;
  m.features_ = std::move(context_features);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto y = static_cast<std::size_t>(response_count);
  m.layout_.add_block("hidden_weight", h * dim);
  m.layout_.add_block("hidden_bias", h);
  m.layout_.add_block("head_weight", y * h);
  m.layout_.add_block("head_bias", y);
  return m;
}

PolicyModel PolicyModel::linear(int context_count, int feature_dim, int response_count,
                                std::uint64_t feature_seed) {
  return linear(random_features(context_count, feature_dim, feature_seed),
                response_count);
}

PolicyModel PolicyModel::mlp(int context_count, int feature_dim, int hidden_dim,
                             int response_count, std::uint64_t feature_seed) {
  return mlp(random_features(context_count, feature_dim, feature_seed), hidden_dim,
             response_count);
}

const Vec& PolicyModel::context_features(int x) const {
  check_context(x);
  if (features_.empty()) throw ArgumentError("tabular model has no features");
  return features_[static_cast<std::size_t>(x)];
}

Vec PolicyModel::init_params(std::uint64_t seed) const {
  Vec theta(param_count(), 0.0);
  if (family_ == PolicyFamily::TabularSoftmax) return theta;
  Rng rng(seed);
  for (double& v : theta) v = rng.uniform(-0.5, 0.5);
  return theta;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void PolicyModel::check_context(int x) const {
  if (x < 0 || x >= context_count_) throw ArgumentError("context id out of range");
}

void PolicyModel::check_response(int y) const {
  if (y < 0 || y >= response_count_) throw ArgumentError("response id out of range");
}

void PolicyModel::check_theta(const Vec& theta) const {
  if (theta.size() != param_count())
    throw ArgumentError("parameter vector length mismatch");
  if (!all_finite(theta)) throw NumericError("non-finite parameter value");
}

void PolicyModel::check_shift(std::span<const double> shift) const {
  if (family_ != PolicyFamily::MlpSoftmax)
    throw ArgumentError("hidden shift requires an mlp-softmax model");
  if (shift.size() != static_cast<std::size_t>(hidden_dim_))
    throw ArgumentError("hidden shift length mismatch");
}

// ---------------------------------------------------------------------------
// Forward evaluation
// ---------------------------------------------------------------------------

Vec PolicyModel::hidden_activation(const Vec& theta, int x,
                                   std::span<const double> shift) const {
  const Vec& f = features_[static_cast<std::size_t>(x)];
  const auto w1 = layout_.slice(theta, "hidden_weight");
  const auto b1 = layout_.slice(theta, "hidden_bias");
  Vec h(static_cast<std::size_t>(hidden_dim_));
  for (int i = 0; i < hidden_dim_; ++i) {
    double u = b1[static_cast<std::size_t>(i)];
    const double* row = w1.data() + static_cast<std::size_t>(i) * f.size();
    for (std::size_t d = 0; d < f.size(); ++d) u += row[d] * f[d];
    h[static_cast<std::size_t>(i)] = std::tanh(u);
  }
  if (!shift.empty()) {
    for (int i = 0; i < hidden_dim_; ++i)
      h[static_cast<std::size_t>(i)] += shift[static_cast<std::size_t>(i)];
  }
  return h;
}

Vec PolicyModel::logits(const Vec& theta, int x) const {
  check_context(x);
  check_theta(theta);
  const auto ny = static_cast<std::size_t>(response_count_);
  switch (family_) {
    case PolicyFamily::TabularSoftmax: {
      const auto all = layout_.slice(theta, "logits");
      const double* row = all.data() + static_cast<std::size_t>(x) * ny;
      return Vec(row, row + ny);
    }
    case PolicyFamily::LinearSoftmax: {
      const Vec& f = features_[static_cast<std::size_t>(x)];
      const auto w = layout_.slice(theta, "weight");
      Vec z(ny, 0.0);
      for (std::size_t j = 0; j < ny; ++j) {
        const double* row = w.data() + j * f.size();
        for (std::size_t d = 0; d < f.size(); ++d) z[j] += row[d] * f[d];
      }
      return z;
    }
    case PolicyFamily::MlpSoftmax: {
      const Vec h = hidden_activation(theta, x, {});
      const auto w2 = layout_.slice(theta, "head_weight");
      const auto b2 = layout_.slice(theta, "head_bias");
      Vec z(ny);
      for (std::size_t j = 0; j < ny; ++j) {
        double v = b2[j];
        const double* row = w2.data() + j * h.size();
        for (std::size_t i = 0; i < h.size(); ++i) v += row[i] * h[i];
        z[j] = v;
      }
      return z;
    }
  }
  throw NumericError("unreachable policy family");
}

Vec PolicyModel::distribution(const Vec& theta, int x) const {
  return softmax(logits(theta, x));
}

double PolicyModel::prob(const Vec& theta, int x, int y) const {
  check_response(y);
  return distribution(theta, x)[static_cast<std::size_t>(y)];
}

Vec PolicyModel::distribution_shifted(const Vec& theta, int x,
                                      std::span<const double> shift) const {
  check_context(x);
  check_theta(theta);
  check_shift(shift);
  const Vec h = hidden_activation(theta, x, shift);
  const auto w2 = layout_.slice(theta, "head_weight");
  const auto b2 = layout_.slice(theta, "head_bias");
  Vec z(static_cast<std::size_t>(response_count_));
  for (std::size_t j = 0; j < z.size(); ++j) {
    double v = b2[j];
    const double* row = w2.data() + j * h.size();
    for (std::size_t i = 0; i < h.size(); ++i) v += row[i] * h[i];
    z[j] = v;
  }
  return softmax(z);
}

double PolicyModel::prob_shifted(const Vec& theta, int x, int y,
                                 std::span<const double> shift) const {
  check_response(y);
  return distribution_shifted(theta, x, shift)[static_cast<std::size_t>(y)];
}

int PolicyModel::sample(const Vec& theta, int x, Rng& rng) const {
  const Vec dist = distribution(theta, x);
  return sample_index(dist, rng);
}

int PolicyModel::argmax(const Vec& theta, int x) const {
  const Vec dist = distribution(theta, x);
  return static_cast<int>(
      std::max_element(dist.begin(), dist.end()) - dist.begin());
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

Vec PolicyModel::grad_prob(const Vec& theta, int x, int y) const {
  check_context(x);
  check_response(y);
  check_theta(theta);
  const auto ny = static_cast<std::size_t>(response_count_);
  const auto yy = static_cast<std::size_t>(y);
  Vec grad(param_count(), 0.0);

  // d pi_y / d z_j = pi_y (delta_yj - pi_j) for softmax logits z.
  const Vec pi = distribution(theta, x);
  Vec gz(ny);
  for (std::size_t j = 0; j < ny; ++j)
    gz[j] = pi[yy] * ((j == yy ? 1.0 : 0.0) - pi[j]);

  switch (family_) {
    case PolicyFamily::TabularSoftmax: {
      const std::size_t base = static_cast<std::size_t>(x) * ny;
      for (std::size_t j = 0; j < ny; ++j) grad[base + j] = gz[j];
      return grad;
    }
    case PolicyFamily::LinearSoftmax: {
      const Vec& f = features_[static_cast<std::size_t>(x)];
      const ParamBlock& w = layout_.block("weight");
      for (std::size_t j = 0; j < ny; ++j) {
        double* row = grad.data() + w.offset + j * f.size();
        for (std::size_t d = 0; d < f.size(); ++d) row[d] = gz[j] * f[d];
      }
      return grad;
    }
    case PolicyFamily::MlpSoftmax: {
      const Vec& f = features_[static_cast<std::size_t>(x)];
      const Vec h = hidden_activation(theta, x, {});
      const auto w2 = layout_.slice(theta, "head_weight");

      const ParamBlock& head_w = layout_.block("head_weight");
      const ParamBlock& head_b = layout_.block("head_bias");
      for (std::size_t j = 0; j < ny; ++j) {
        double* row = grad.data() + head_w.offset + j * h.size();
        for (std::size_t i = 0; i < h.size(); ++i) row[i] = gz[j] * h[i];
        grad[head_b.offset + j] = gz[j];
      }

      // Backprop through the head and the tanh.
      Vec gh(h.size(), 0.0);
      for (std::size_t j = 0; j < ny; ++j) {
        const double* row = w2.data() + j * h.size();
        for (std::size_t i = 0; i < h.size(); ++i) gh[i] += row[i] * gz[j];
      }
      const ParamBlock& hid_w = layout_.block("hidden_weight");
      const ParamBlock& hid_b = layout_.block("hidden_bias");
      for (std::size_t i = 0; i < h.size(); ++i) {
        const double gu = gh[i] * (1.0 - h[i] * h[i]);
        double* row = grad.data() + hid_w.offset + i * f.size();
        for (std::size_t d = 0; d < f.size(); ++d) row[d] = gu * f[d];
        grad[hid_b.offset + i] = gu;
      }
      return grad;
    }
  }
  throw NumericError("unreachable policy family");
}

Vec PolicyModel::grad_prob_shift(const Vec& theta, int x, int y,
                                 std::span<const double> shift) const {
  check_response(y);
  check_context(x);
  check_theta(theta);
  check_shift(shift);
  const auto ny = static_cast<std::size_t>(response_count_);
  const auto yy = static_cast<std::size_t>(y);
  const Vec pi = distribution_shifted(theta, x, shift);
  const auto w2 = layout_.slice(theta, "head_weight");
  // d pi_y / d shift_i = sum_j (d pi_y / d z_j) * W2[j][i]
  Vec grad(static_cast<std::size_t>(hidden_dim_), 0.0);
  for (std::size_t j = 0; j < ny; ++j) {
    const double gz = pi[yy] * ((j == yy ? 1.0 : 0.0) - pi[j]);
    const double* row = w2.data() + j * grad.size();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gz * row[i];
  }
  return grad;
}

double PolicyModel::jvp(const Vec& theta, int x, int y,
                        std::span<const double> v) const {
  if (v.size() != param_count()) throw ArgumentError("jvp: direction length mismatch");
  const Vec g = grad_prob(theta, x, y);
  return dot(g, v);
}

Vec PolicyModel::vjp(const Vec& theta, int x, int y, double s) const {
  if (!std::isfinite(s)) throw ArgumentError("vjp: non-finite scalar");
  Vec g = grad_prob(theta, x, y);
  scale(s, g);
  return g;
}

}  // namespace rosa
