#include "rosa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rosa {

namespace {

constexpr double kKlFloor = 1e-12;

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ArgumentError(std::string(what) + ": negative mass");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ArgumentError(std::string(what) + ": not normalized");
}

}  // namespace

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ArgumentError("kl: length mismatch");
  check_distribution(p, "kl p");
  check_distribution(q, "kl q");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    sum += p[i] * std::log(std::max(p[i], kKlFloor) / std::max(q[i], kKlFloor));
  }
  return sum;
}

double predicted_delta_kl(std::span<const double> user,
                          std::span<const double> pi_prev, int y_k,
                          const RewardSignal& r, double beta) {
  check_distribution(user, "user policy");
  check_distribution(pi_prev, "pi_prev");
  if (user.size() != pi_prev.size()) throw ArgumentError("distribution length mismatch");
  if (y_k < 0 || static_cast<std::size_t>(y_k) >= pi_prev.size())
    throw ArgumentError("response id out of range");
  const double z = partition_single(pi_prev[static_cast<std::size_t>(y_k)], r, beta);
  return std::log(z) - (r.value / beta) * user[static_cast<std::size_t>(y_k)];
}

bool BoundReport::all_hold() const {
  return std::all_of(turns.begin(), turns.end(),
                     [](const TurnBound& t) { return t.holds; });
}

namespace {

TurnBound make_bound(int turn, double lhs, double rhs) {
  TurnBound b;
  b.turn = turn;
  b.lhs = lhs;
  b.rhs = rhs;
  b.slack = rhs - lhs;
  b.holds = lhs <= rhs + kBoundTolerance;
  return b;
}

}  // namespace

BoundReport check_monotonic(std::span<const double> user,
                            std::span<const double> pi_prev, int y_k,
                            const RewardSignal& r, double beta) {
  const double predicted = predicted_delta_kl(user, pi_prev, y_k, r, beta);
  const Vec pi_new = practical_target_vector(pi_prev, y_k, r, beta);

  const double kl_prev = kl(user, pi_prev);
  const double kl_new = kl(user, pi_new);
  if (std::isinf(kl_prev) || std::isinf(kl_new))
    throw NumericError("check_monotonic: support violation in measured KL");
  const double measured = kl_new - kl_prev;
  if (std::abs(measured - predicted) > 1e-10)
    throw NumericError("check_monotonic: exact-update identity violated");

  BoundReport report;
  report.theorem = "monotonic";
  report.turns.push_back(make_bound(
      1, measured, -(1.0 / beta) * user[static_cast<std::size_t>(y_k)]));
  return report;
}

BoundReport check_cumulative(std::span<const double> user, Vec pi0,
                             std::span<const ExactStep> steps, double beta) {
  check_distribution(user, "user policy");
  check_distribution(pi0, "pi0");
  const double kl_initial = kl(user, pi0);
  if (std::isinf(kl_initial))
    throw NumericError("check_cumulative: support violation at the initial policy");

  BoundReport report;
  report.theorem = "cumulative";
  Vec pi = std::move(pi0);
  double improvement = 0.0;
  int turn = 0;
  for (const ExactStep& step : steps) {
    pi = practical_target_vector(pi, step.y_k, step.reward, beta);
    improvement += user[static_cast<std::size_t>(step.y_k)] / beta;
    const double lhs = kl(user, pi);
    if (std::isinf(lhs))
      throw NumericError("check_cumulative: support violation along the chain");
    report.turns.push_back(make_bound(++turn, lhs, kl_initial - improvement));
  }
  return report;
}

UnifiedReport check_unified(const LinearizedTrace& trace,
                            std::span<const double> user, double beta,
                            double lhat) {
  check_distribution(user, "user policy");
  check_distribution(trace.dist_initial, "trace initial distribution");
  if (!(lhat >= 0.0)) throw ArgumentError("lhat must be >= 0");
  const double kl_initial = kl(user, trace.dist_initial);
  if (std::isinf(kl_initial))
    throw NumericError("check_unified: support violation at the initial policy");

  UnifiedReport out;
  out.bound.theorem = "unified";
  out.lhat_slack = std::numeric_limits<double>::infinity();
  double improvement = 0.0;
  double step_energy = 0.0;      // sum |delta|^2
  double measured_penalty = 0.0; // sum of per-turn linearization penalties
  const Vec* prev = &trace.dist_initial;
  int turn = 0;
  for (const LinearizedTurn& t : trace.turns) {
    improvement += user[static_cast<std::size_t>(t.y_k)] / beta;
    step_energy += t.delta_norm * t.delta_norm;

    // Penalty actually incurred: kl to the real policy minus kl to the
    // exact target it was steered toward.
    const Vec target = practical_target_vector(
        *prev, t.y_k, {t.reward, RewardKind::Dense}, beta);
    const double kl_actual = kl(user, t.dist_after);
    const double kl_target = kl(user, target);
    if (std::isinf(kl_actual) || std::isinf(kl_target))
      throw NumericError("check_unified: support violation along the trace");
    measured_penalty += kl_actual - kl_target;

    const double rhs = kl_initial - improvement + 0.5 * lhat * step_energy;
    out.bound.turns.push_back(make_bound(++turn, kl_actual, rhs));
    out.lhat_slack =
        std::min(out.lhat_slack, 0.5 * lhat * step_energy - measured_penalty);
    prev = &t.dist_after;
  }
  if (trace.turns.empty()) out.lhat_slack = 0.0;
  return out;
}

RegionSampler perturbation_sampler(Vec center, double min_scale, double max_scale) {
  if (!(min_scale > 0.0) || !(max_scale >= min_scale))
    throw ArgumentError("perturbation_sampler: bad scale range");
  return [center = std::move(center), min_scale,
          max_scale](Rng& rng) -> std::pair<Vec, Vec> {
    Vec a = center;
    Vec b(center.size());
    const double region = std::exp(rng.uniform(std::log(min_scale), std::log(max_scale)));
    for (double& v : a) v += region * rng.gaussian();
    const double step = std::exp(rng.uniform(std::log(min_scale), std::log(max_scale)));
    Vec dir(center.size());
    for (double& v : dir) v = rng.gaussian();
    const double n = norm2(dir);
    for (std::size_t i = 0; i < b.size(); ++i)
      b[i] = a[i] + (n > 0.0 ? step * dir[i] / n : 0.0);
    return {std::move(a), std::move(b)};
  };
}

Vec top_curvature_direction(const PolicyModel& model, const Vec& theta, int x,
                            int iterations, Rng& rng) {
  // Local KL curvature is v^T F v with F = sum_y grad pi_y grad pi_y^T / pi_y.
  const Vec pi = model.distribution(theta, x);
  std::vector<Vec> rows(pi.size());
  for (int y = 0; y < model.response_count(); ++y) {
    rows[static_cast<std::size_t>(y)] = model.grad_prob(theta, x, y);
    scale(1.0 / std::sqrt(pi[static_cast<std::size_t>(y)]),
          rows[static_cast<std::size_t>(y)]);
  }
  Vec v(model.param_count());
  for (double& e : v) e = rng.gaussian();
  for (int it = 0; it < iterations; ++it) {
    Vec next(v.size(), 0.0);
    for (const Vec& r : rows) axpy(dot(r, v), r, next);
    const double n = norm2(next);
    if (n < 1e-300) break;  // flat point; keep the previous direction
    scale(1.0 / n, next);
    v = std::move(next);
  }
  const double n = norm2(v);
  if (n > 0.0) scale(1.0 / n, v);
  return v;
}

RegionSampler trajectory_sampler(const PolicyModel& model, int x,
                                 std::vector<Vec> visited, double min_scale,
                                 double max_scale) {
  if (visited.empty()) throw ArgumentError("trajectory_sampler: no visited points");
  if (!(min_scale > 0.0) || !(max_scale >= min_scale))
    throw ArgumentError("trajectory_sampler: bad scale range");
  // One top-curvature direction per anchor, computed once up front.
  std::vector<Vec> directions;
  directions.reserve(visited.size());
  Rng dir_rng(derive_seed(0x70C79FEULL, {visited.size()}));
  for (const Vec& point : visited)
    directions.push_back(top_curvature_direction(model, point, x, 20, dir_rng));

  return [model, x, visited = std::move(visited),
          directions = std::move(directions), min_scale,
          max_scale](Rng& rng) -> std::pair<Vec, Vec> {
    const std::size_t i = rng.below(visited.size());
    Vec a = visited[i];
    const double jitter = std::exp(rng.uniform(std::log(min_scale), std::log(max_scale)));
    for (double& e : a) e += 0.1 * jitter * rng.gaussian();

    Vec dir;
    if (rng.uniform() < 0.75) {
      dir = directions[i];
    } else {
      dir.resize(a.size());
      for (double& e : dir) e = rng.gaussian();
      const double n = norm2(dir);
      if (n > 0.0) scale(1.0 / n, dir);
    }
    const double step = std::exp(rng.uniform(std::log(min_scale), std::log(max_scale)));
    Vec b = a;
    axpy(step, dir, b);
    return {std::move(a), std::move(b)};
  };
}

double estimate_lipschitz(const PolicyModel& model, const RegionSampler& sampler,
                          int n, std::uint64_t seed) {
  if (n < 100) throw ArgumentError("estimate_lipschitz: need at least 100 samples");
  double max_ratio = 0.0;
  Vec diff(model.param_count());
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    auto [a, b] = sampler(rng);
    if (a.size() != model.param_count() || b.size() != model.param_count())
      throw ArgumentError("estimate_lipschitz: sampler dimension mismatch");
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = a[j] - b[j];
    const double d2 = dot(diff, diff);
    if (d2 < 1e-24) continue;  // degenerate pair
    double worst_kl = 0.0;
    for (int x = 0; x < model.context_count(); ++x) {
      worst_kl = std::max(
          worst_kl, kl(model.distribution(a, x), model.distribution(b, x)));
    }
    max_ratio = std::max(max_ratio, 2.0 * worst_kl / d2);
  }
  return 2.0 * max_ratio;  // safety inflation
}

double accuracy(std::span<const TaskOutcome> outcomes, int max_turn) {
  if (outcomes.empty()) throw ArgumentError("accuracy: empty task set");
  if (max_turn < 1) throw ArgumentError("accuracy: max_turn must be >= 1");
  int solved = 0;
  for (const TaskOutcome& t : outcomes) {
    if (t.turns_taken < 1) throw ArgumentError("accuracy: task with no recorded turns");
    if (t.solved_turn > 0 && t.solved_turn <= max_turn) ++solved;
  }
  return static_cast<double>(solved) / static_cast<double>(outcomes.size());
}

std::optional<double> correction_uplift(std::span<const TaskOutcome> outcomes,
                                        int max_turn) {
  if (outcomes.empty()) throw ArgumentError("correction_uplift: empty task set");
  int first_turn_failures = 0;
  int recovered = 0;
  for (const TaskOutcome& t : outcomes) {
    if (t.turns_taken < 1)
      throw ArgumentError("correction_uplift: task with no recorded turns");
    if (t.solved_turn == 1) continue;
    ++first_turn_failures;
    if (t.solved_turn > 1 && t.solved_turn <= max_turn) ++recovered;
  }
  if (first_turn_failures == 0) return std::nullopt;
  return 100.0 * static_cast<double>(recovered) /
         static_cast<double>(first_turn_failures);
}

std::vector<int> newly_solved_per_turn(std::span<const TaskOutcome> outcomes,
                                       int max_turn) {
  if (max_turn < 1) throw ArgumentError("newly_solved_per_turn: max_turn must be >= 1");
  std::vector<int> counts(static_cast<std::size_t>(max_turn), 0);
  for (const TaskOutcome& t : outcomes) {
    if (t.solved_turn >= 1 && t.solved_turn <= max_turn)
      ++counts[static_cast<std::size_t>(t.solved_turn - 1)];
  }
  return counts;
}

}  // namespace rosa
