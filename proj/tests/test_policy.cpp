#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rosa/policy.hpp"

using namespace rosa;

namespace {

PolicyModel random_model(PolicyFamily family, Rng& rng) {
  const int ny = 2 + static_cast<int>(rng.below(7));
  const int contexts = 1 + static_cast<int>(rng.below(3));
  switch (family) {
    case PolicyFamily::TabularSoftmax:
      return PolicyModel::tabular(contexts, ny);
    case PolicyFamily::LinearSoftmax:
      return PolicyModel::linear(contexts, 3 + static_cast<int>(rng.below(4)), ny,
                                 rng.next_u64());
    case PolicyFamily::MlpSoftmax:
      return PolicyModel::mlp(contexts, 3 + static_cast<int>(rng.below(4)),
                              2 + static_cast<int>(rng.below(6)), ny,
                              rng.next_u64());
  }
  throw std::logic_error("bad family");
}

Vec random_theta(const PolicyModel& model, Rng& rng) {
  Vec theta(model.param_count());
  for (double& v : theta) v = rng.uniform(-1.5, 1.5);
  return theta;
}

}  // namespace

TEST_CASE("uniform tabular softmax") {
  const auto model = PolicyModel::tabular(2, 4);
  const Vec theta(model.param_count(), 0.0);
  for (int y = 0; y < 4; ++y) CHECK(model.prob(theta, 0, y) == doctest::Approx(0.25));
}

TEST_CASE("tabular probabilities from log-odds") {
  const auto model = PolicyModel::tabular(1, 3);
  const Vec theta = {std::log(5.0), std::log(3.0), std::log(2.0)};
  CHECK(model.prob(theta, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(model.prob(theta, 0, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(model.prob(theta, 0, 2) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("mlp with zero head is uniform") {
  const auto model = PolicyModel::mlp(1, 3, 4, 2, 7);
  Vec theta = model.init_params(11);
  auto head_w = model.layout().slice(theta, "head_weight");
  auto head_b = model.layout().slice(theta, "head_bias");
  std::fill(head_w.begin(), head_w.end(), 0.0);
  std::fill(head_b.begin(), head_b.end(), 0.0);
  CHECK(model.prob(theta, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(model.prob(theta, 0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("argument and numeric errors") {
  const auto model = PolicyModel::tabular(1, 3);
  Vec theta(model.param_count(), 0.0);
  CHECK_THROWS_AS((void)model.prob(theta, 0, 3), ArgumentError);
  CHECK_THROWS_AS((void)model.prob(theta, 1, 0), ArgumentError);
  CHECK_THROWS_AS((void)model.prob(theta, -1, 0), ArgumentError);
  theta[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)model.prob(theta, 0, 0), NumericError);
  CHECK_THROWS_AS((void)model.grad_prob(Vec(2, 0.0), 0, 0), ArgumentError);
}

TEST_CASE("layout blocks partition the flat vector") {
  Rng rng(404);
  for (const auto family : {PolicyFamily::TabularSoftmax, PolicyFamily::LinearSoftmax,
                            PolicyFamily::MlpSoftmax}) {
    const auto model = random_model(family, rng);
    std::size_t expected_offset = 0;
    for (const ParamBlock& block : model.layout().blocks()) {
      CHECK(block.offset == expected_offset);
      expected_offset += block.size;
    }
    CHECK(expected_offset == model.param_count());
  }
}

TEST_CASE("normalization over random models") {
  Rng rng(1234);
  for (int i = 0; i < 1000; ++i) {
    const auto family = static_cast<PolicyFamily>(rng.below(3));
    const auto model = random_model(family, rng);
    const Vec theta = random_theta(model, rng);
    const int x = static_cast<int>(rng.below(model.context_count()));
    const Vec dist = model.distribution(theta, x);
    double sum = 0.0;
    for (double p : dist) {
      CHECK(p > 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("tabular gradient of the uniform two-way policy") {
  const auto model = PolicyModel::tabular(3, 2);
  const Vec theta(model.param_count(), 0.0);
  const Vec grad = model.grad_prob(theta, 1, 0);
  // Active context block is entries [2, 4).
  CHECK(grad[2] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(grad[3] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(grad[0] == 0.0);
  CHECK(grad[1] == 0.0);
  CHECK(grad[4] == 0.0);
  CHECK(grad[5] == 0.0);
}

TEST_CASE("gradients of a constant sum vanish") {
  Rng rng(55);
  for (const auto family : {PolicyFamily::TabularSoftmax, PolicyFamily::LinearSoftmax,
                            PolicyFamily::MlpSoftmax}) {
    const auto model = random_model(family, rng);
    const Vec theta = random_theta(model, rng);
    const int x = static_cast<int>(rng.below(model.context_count()));
    Vec total(model.param_count(), 0.0);
    for (int y = 0; y < model.response_count(); ++y)
      axpy(1.0, model.grad_prob(theta, x, y), total);
    for (double v : total) CHECK(std::abs(v) <= 1e-14);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(99);
  for (const auto family : {PolicyFamily::TabularSoftmax, PolicyFamily::LinearSoftmax,
                            PolicyFamily::MlpSoftmax}) {
    for (int i = 0; i < 100; ++i) {
      const auto model = random_model(family, rng);
      const Vec theta = random_theta(model, rng);
      const int x = static_cast<int>(rng.below(model.context_count()));
      const int y = static_cast<int>(rng.below(model.response_count()));
      const Vec analytic = model.grad_prob(theta, x, y);
      const Vec numeric = testing::fd_grad_prob(model, theta, x, y);
      CHECK(testing::relative_error(analytic, numeric) <= 1e-5);
    }
  }
}

TEST_CASE("hidden-shift evaluation and gradient") {
  const auto model = PolicyModel::mlp(1, 4, 5, 3, 21);
  const Vec theta = model.init_params(22);
  const Vec zero_shift(5, 0.0);

  SUBCASE("zero shift leaves the distribution unchanged") {
    const Vec base = model.distribution(theta, 0);
    const Vec shifted = model.distribution_shifted(theta, 0, zero_shift);
    for (std::size_t i = 0; i < base.size(); ++i)
      CHECK(base[i] == doctest::Approx(shifted[i]).epsilon(1e-15));
  }

  SUBCASE("shift gradient matches central differences") {
    Rng rng(23);
    Vec shift(5);
    for (double& v : shift) v = rng.uniform(-0.4, 0.4);
    const Vec analytic = model.grad_prob_shift(theta, 0, 1, shift);
    const Vec numeric = testing::fd_grad_prob_shift(model, theta, 0, 1, shift);
    CHECK(testing::relative_error(analytic, numeric) <= 1e-5);
  }

  SUBCASE("shift on a non-mlp model is rejected") {
    const auto tab = PolicyModel::tabular(1, 3);
    CHECK_THROWS_AS(
        (void)tab.distribution_shifted(Vec(3, 0.0), 0, zero_shift), ArgumentError);
  }
}

TEST_CASE("jvp and vjp are the directional products of the gradient row") {
  Rng rng(77);
  const auto model = random_model(PolicyFamily::MlpSoftmax, rng);
  const Vec theta = random_theta(model, rng);
  const int x = static_cast<int>(rng.below(model.context_count()));
  const int y = static_cast<int>(rng.below(model.response_count()));
  const Vec grad = model.grad_prob(theta, x, y);

  SUBCASE("zero direction") {
    CHECK(model.jvp(theta, x, y, Vec(model.param_count(), 0.0)) == 0.0);
  }
  SUBCASE("gradient direction gives the squared norm") {
    const double n = norm2(grad);
    CHECK(model.jvp(theta, x, y, grad) == doctest::Approx(n * n).epsilon(1e-12));
  }
  SUBCASE("random directions agree with the dense dot product") {
    for (int i = 0; i < 20; ++i) {
      Vec v(model.param_count());
      for (double& e : v) e = rng.uniform(-1.0, 1.0);
      CHECK(model.jvp(theta, x, y, v) == doctest::Approx(dot(grad, v)).epsilon(1e-12));
      // Adjoint consistency: <vjp(1), v> = jvp(v).
      CHECK(dot(model.vjp(theta, x, y, 1.0), v) ==
            doctest::Approx(model.jvp(theta, x, y, v)).epsilon(1e-12));
    }
  }
  SUBCASE("length mismatch is an argument error") {
    CHECK_THROWS_AS((void)model.jvp(theta, x, y, Vec(3, 0.0)), ArgumentError);
  }
}

TEST_CASE("sampling near-degenerate mass") {
  const auto model = PolicyModel::tabular(1, 3);
  // Distribution [1 - 2e-12, 1e-12, 1e-12] via direct construction.
  Rng rng(1);
  const Vec dist = {1.0 - 2e-12, 1e-12, 1e-12};
  for (int i = 0; i < 1000; ++i) CHECK(sample_index(dist, rng) == 0);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  const auto model = PolicyModel::tabular(1, 5);
  Vec theta = {0.3, -0.2, 0.9, 0.0, -1.1};
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i)
    CHECK(model.sample(theta, 0, a) == model.sample(theta, 0, b));
}

TEST_CASE("sampling frequencies follow the distribution") {
  const auto model = PolicyModel::tabular(1, 3);
  const Vec theta = {std::log(5.0), std::log(3.0), std::log(2.0)};
  Rng rng(2024);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[model.sample(theta, 0, rng)];
  CHECK(std::abs(counts[0] / double(n) - 0.5) < 0.01);
  CHECK(std::abs(counts[1] / double(n) - 0.3) < 0.01);
  CHECK(std::abs(counts[2] / double(n) - 0.2) < 0.01);
}

TEST_CASE("init_params is seeded and family-appropriate") {
  const auto tab = PolicyModel::tabular(2, 3);
  for (double v : tab.init_params(5)) CHECK(v == 0.0);

  const auto mlp = PolicyModel::mlp(1, 3, 4, 2, 9);
  const Vec a = mlp.init_params(5);
  const Vec b = mlp.init_params(5);
  const Vec c = mlp.init_params(6);
  CHECK(a == b);
  CHECK(a != c);
  for (double v : a) {
    CHECK(v >= -0.5);
    CHECK(v <= 0.5);
  }
}
