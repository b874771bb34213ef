#include <doctest.h>

#include <cmath>
#include <limits>

#include "rosa/metrics.hpp"

using namespace rosa;

namespace {

constexpr RewardSignal kFail{-1.0, RewardKind::Sparse};
constexpr RewardSignal kPass{1.0, RewardKind::Sparse};

Vec random_distribution(Rng& rng, int ny) {
  Vec logits(static_cast<std::size_t>(ny));
  for (double& v : logits) v = 2.0 * rng.gaussian();
  return softmax(logits);
}

}  // namespace

TEST_CASE("kl basics") {
  CHECK(kl(Vec{0.5, 0.5}, Vec{0.5, 0.5}) == 0.0);
  CHECK(kl(Vec{1.0, 0.0}, Vec{0.5, 0.5}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::isinf(kl(Vec{0.5, 0.5}, Vec{1.0, 0.0})));
  CHECK_THROWS_AS((void)kl(Vec{0.5, 0.6}, Vec{0.5, 0.5}), ArgumentError);
  CHECK_THROWS_AS((void)kl(Vec{0.5, 0.5}, Vec{0.5}), ArgumentError);
  CHECK_THROWS_AS((void)kl(Vec{-0.1, 1.1}, Vec{0.5, 0.5}), ArgumentError);
}

TEST_CASE("kl is nonnegative and zero only at equality") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const int ny = 2 + static_cast<int>(rng.below(14));
    const Vec p = random_distribution(rng, ny);
    const Vec q = random_distribution(rng, ny);
    const double v = kl(p, q);
    CHECK(v >= 0.0);
    CHECK(kl(p, p) == 0.0);
  }
}

TEST_CASE("kl floors tiny-but-positive entries without masking zeros") {
  // Both sides positive-but-tiny: finite value, no blowup past the floor.
  const Vec p = {1.0 - 1e-15, 1e-15};
  const Vec q = {1e-15, 1.0 - 1e-15};
  const double v = kl(p, q);
  CHECK(std::isfinite(v));
  // A true zero on the q side still signals infinite divergence.
  CHECK(std::isinf(kl(Vec{0.5, 0.5}, Vec{0.0, 1.0})));
}

TEST_CASE("predicted delta kl") {
  const Vec user = {0.0, 0.6, 0.4};
  const Vec prev = {0.5, 0.3, 0.2};
  // With zero user mass at y_k the identity value is exactly log Z.
  CHECK(predicted_delta_kl(user, prev, 0, kFail, 1.0) ==
        doctest::Approx(std::log(0.6839397206)).epsilon(1e-9));
  CHECK(predicted_delta_kl(user, prev, 0, kFail, 1.0) ==
        doctest::Approx(-0.3798854).epsilon(1e-6));

  SUBCASE("zero user mass with negative reward is always negative") {
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
      const Vec p = random_distribution(rng, 3);
      CHECK(predicted_delta_kl(user, p, 0, kFail, rng.uniform(0.25, 1.75)) < 0.0);
    }
  }
  SUBCASE("huge beta kills both terms") {
    CHECK(std::abs(predicted_delta_kl(user, prev, 1, kFail, 1e12)) <= 1e-12);
    CHECK(std::abs(predicted_delta_kl(user, prev, 1, kPass, 1e12)) <= 1e-12);
  }
}

TEST_CASE("monotonic check verifies the identity against measured kl") {
  const Vec user = {0.0, 0.6, 0.4};
  const Vec prev = {0.5, 0.3, 0.2};
  const BoundReport report = check_monotonic(user, prev, 0, kFail, 1.0);
  REQUIRE(report.turns.size() == 1);
  CHECK(report.turns[0].lhs ==
        doctest::Approx(std::log(0.5 * std::exp(-1.0) + 0.5)).epsilon(1e-9));
  // rhs = -(1/beta) user[y_k] = 0, and log Z < 0, so the bound holds here.
  CHECK(report.turns[0].rhs == 0.0);
  CHECK(report.turns[0].holds);
}

TEST_CASE("monotonic check reports the success-side bound honestly") {
  // With user == pi_prev any exact update moves away from the user policy,
  // so the measured delta is positive while the claimed bound is -1/(2 beta);
  // the report must record the violation, not hide it.
  const Vec user = {0.5, 0.5};
  const BoundReport report = check_monotonic(user, user, 0, kPass, 1.0);
  REQUIRE(report.turns.size() == 1);
  const double z = 1.0 + (std::exp(1.0) - 1.0) * 0.5;
  CHECK(report.turns[0].lhs == doctest::Approx(std::log(z) - 0.5).epsilon(1e-9));
  CHECK(report.turns[0].lhs > 0.0);
  CHECK(report.turns[0].rhs == doctest::Approx(-0.5));
  CHECK_FALSE(report.turns[0].holds);
}

TEST_CASE("exact-update identity holds for both reward signs") {
  Rng rng(31);
  for (int i = 0; i < 500; ++i) {
    const int ny = 2 + static_cast<int>(rng.below(14));
    const Vec prev = random_distribution(rng, ny);
    Vec user = random_distribution(rng, ny);
    const int y_k = static_cast<int>(rng.below(ny));
    const double beta = rng.uniform(0.25, 1.75);
    // check_monotonic throws if measured and predicted disagree by > 1e-10.
    CHECK_NOTHROW((void)check_monotonic(user, prev, y_k, kFail, beta));
    CHECK_NOTHROW((void)check_monotonic(user, prev, y_k, kPass, beta));
  }
}

TEST_CASE("cumulative bound over exact-update chains") {
  const Vec user = {0.0, 0.0, 1.0};
  const Vec pi0 = {0.5, 0.3, 0.2};

  SUBCASE("empty trace produces no rows") {
    const BoundReport report = check_cumulative(user, pi0, {}, 1.0);
    CHECK(report.turns.empty());
    CHECK(report.all_hold());
  }
  SUBCASE("failure-only chains hold at every prefix") {
    std::vector<ExactStep> steps = {{0, kFail}, {1, kFail}, {0, kFail}, {1, kFail}};
    const BoundReport report = check_cumulative(user, pi0, steps, 0.7);
    CHECK(report.turns.size() == 4);
    CHECK(report.all_hold());
    // With zero user mass on every updated response the bound is simply the
    // initial divergence, and each exact step strictly reduces the lhs.
    for (std::size_t k = 0; k + 1 < report.turns.size(); ++k)
      CHECK(report.turns[k + 1].lhs < report.turns[k].lhs);
    for (const TurnBound& t : report.turns)
      CHECK(t.rhs == doctest::Approx(kl(user, pi0)).epsilon(1e-12));
  }
}

TEST_CASE("unified bound bookkeeping") {
  const Vec user = {0.0, 1.0};
  const Vec pi0 = {0.7, 0.3};

  SUBCASE("zero-update trace keeps both sides at the initial divergence") {
    LinearizedTrace trace;
    trace.dist_initial = pi0;
    trace.turns.push_back({0, -1.0, 0.0, pi0});
    // beta huge: the target equals the previous policy, so the penalty is 0.
    const UnifiedReport report = check_unified(trace, user, 1e12, 1.0);
    REQUIRE(report.bound.turns.size() == 1);
    CHECK(report.bound.turns[0].lhs ==
          doctest::Approx(report.bound.turns[0].rhs).epsilon(1e-9));
    CHECK(report.bound.turns[0].holds);
  }
  SUBCASE("single linearized turn with zero user mass") {
    // lhs = kl(user, pi_1) must be below kl(user, pi_0) + (lhat/2) |delta|^2.
    LinearizedTrace trace;
    trace.dist_initial = pi0;
    const Vec after = {0.6, 0.4};
    trace.turns.push_back({0, -1.0, 0.5, after});
    const UnifiedReport report = check_unified(trace, user, 1.0, 2.0);
    REQUIRE(report.bound.turns.size() == 1);
    CHECK(report.bound.turns[0].rhs ==
          doctest::Approx(kl(user, pi0) + 0.5 * 2.0 * 0.25).epsilon(1e-12));
    CHECK(report.bound.turns[0].holds);
    CHECK(std::isfinite(report.lhat_slack));
  }
}

TEST_CASE("lipschitz estimation") {
  const auto model = PolicyModel::tabular(1, 6);
  Vec center(model.param_count(), 0.0);

  SUBCASE("tabular smoothness stays within the analytic ceiling") {
    const double lhat =
        estimate_lipschitz(model, perturbation_sampler(center), 2000, 9);
    // Logit-space KL satisfies 2 kl / d^2 <= 1, so the inflated value is <= 2.
    CHECK(lhat <= 2.0);
    CHECK(lhat > 0.0);
  }
  SUBCASE("estimate is non-decreasing in the sample count") {
    const auto sampler = perturbation_sampler(center);
    const double small = estimate_lipschitz(model, sampler, 100, 12);
    const double medium = estimate_lipschitz(model, sampler, 1000, 12);
    const double large = estimate_lipschitz(model, sampler, 5000, 12);
    CHECK(small <= medium);
    CHECK(medium <= large);
  }
  SUBCASE("identical pairs are skipped") {
    const RegionSampler constant = [&](Rng&) { return std::pair(center, center); };
    CHECK(estimate_lipschitz(model, constant, 500, 1) == 0.0);
  }
  SUBCASE("sample floor") {
    CHECK_THROWS_AS(
        (void)estimate_lipschitz(model, perturbation_sampler(center), 99, 1),
        ArgumentError);
  }
  SUBCASE("trajectory sampler probes the strongest local curvature") {
    Rng rng(77);
    Vec anchor(model.param_count());
    for (double& v : anchor) v = rng.uniform(-1.0, 1.0);
    const double random_dirs =
        estimate_lipschitz(model, perturbation_sampler(anchor, 1e-3, 0.1), 2000, 3);
    const double curvature_dirs = estimate_lipschitz(
        model, trajectory_sampler(model, 0, {anchor}, 1e-3, 0.1), 2000, 3);
    CHECK(curvature_dirs >= random_dirs * 0.99);
  }
}

TEST_CASE("accuracy and correction uplift") {
  const std::vector<TaskOutcome> outcomes = {
      {"a", 1, 1}, {"b", 3, 3}, {"c", 0, 10}, {"d", 2, 2}};

  CHECK(accuracy(outcomes, 10) == doctest::Approx(0.75));
  CHECK(accuracy(outcomes, 1) == doctest::Approx(0.25));

  // First-turn failures: b, c, d; later solved: b, d.
  const auto uplift = correction_uplift(outcomes, 10);
  REQUIRE(uplift.has_value());
  CHECK(*uplift == doctest::Approx(100.0 * 2.0 / 3.0));

  SUBCASE("two failures, one recovered") {
    const std::vector<TaskOutcome> two = {{"a", 1, 1}, {"b", 4, 4}, {"c", 0, 10}};
    CHECK(*correction_uplift(two, 10) == doctest::Approx(50.0));
  }
  SUBCASE("uplift is absent when every task solves at turn one") {
    const std::vector<TaskOutcome> all = {{"a", 1, 1}, {"b", 1, 1}};
    CHECK_FALSE(correction_uplift(all, 10).has_value());
    CHECK(accuracy(all, 10) == 1.0);
  }
  SUBCASE("empty task sets are rejected") {
    CHECK_THROWS_AS((void)accuracy({}, 10), ArgumentError);
    CHECK_THROWS_AS((void)correction_uplift({}, 10), ArgumentError);
  }
  SUBCASE("newly-solved counts sum to the solved total") {
    const auto counts = newly_solved_per_turn(outcomes, 10);
    CHECK(counts[0] == 1);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 1);
    int total = 0;
    for (int c : counts) total += c;
    CHECK(total == 3);
  }
}
