#include "rosa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string_view>
#include <thread>

namespace rosa::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Suite generation
// ---------------------------------------------------------------------------

void SuiteSpec::validate() const {
  if (task_count < 1) throw ArgumentError("suite: task_count must be >= 1");
  if (response_count < 2) throw ArgumentError("suite: response_count must be >= 2");
  if (!(difficulty > 0.0 && difficulty < 1.0))
    throw ArgumentError("suite: difficulty must lie in (0, 1)");
  if (distractor_mass < 0.0 || distractor_mass >= 1.0)
    throw ArgumentError("suite: distractor_mass must lie in [0, 1)");
  if (distractor_jitter < 0.0) throw ArgumentError("suite: negative jitter");
  if (feature_dim < 1) throw ArgumentError("suite: feature_dim must be >= 1");
  if (hidden_dim < 1) throw ArgumentError("suite: hidden_dim must be >= 1");
}

namespace {

std::string make_task_id(int index, int total) {
  int width = 1;
  for (int v = total - 1; v >= 10; v /= 10) ++width;
  width = std::clamp(width, 3, 9);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "task-%0*d", width, index);
  return buf;
}

// Target distribution for one task: pi(y*) = difficulty, optionally with a
// dominant distractor taking a jittered share of the remaining mass.
Vec task_distribution(const SuiteSpec& spec, int y_star, int& distractor, Rng& rng) {
  const auto ny = static_cast<std::size_t>(spec.response_count);
  const double p = spec.difficulty;
  Vec probs(ny, 0.0);
  probs[static_cast<std::size_t>(y_star)] = p;
  distractor = -1;

  if (spec.distractor_mass <= 0.0) {
    const double rest = (1.0 - p) / static_cast<double>(ny - 1);
    for (std::size_t j = 0; j < ny; ++j) {
      if (static_cast<int>(j) != y_star) probs[j] = rest;
    }
    return probs;
  }

  double share = spec.distractor_mass;
  if (spec.distractor_jitter > 0.0)
    share += rng.uniform(-spec.distractor_jitter, spec.distractor_jitter);
  share = std::clamp(share, 0.05, 0.95);

  distractor = static_cast<int>(rng.below(ny - 1));
  if (distractor >= y_star) ++distractor;

  if (spec.response_count == 2) {
    probs[static_cast<std::size_t>(distractor)] = 1.0 - p;
    return probs;
  }
  probs[static_cast<std::size_t>(distractor)] = share * (1.0 - p);
  const double rest =
      (1.0 - share) * (1.0 - p) / static_cast<double>(ny - 2);
  for (std::size_t j = 0; j < ny; ++j) {
    if (static_cast<int>(j) != y_star && static_cast<int>(j) != distractor)
      probs[j] = rest;
  }
  return probs;
}

Vec centered_log(const Vec& probs) {
  Vec logits(probs.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    logits[i] = std::log(probs[i]);
    mean += logits[i];
  }
  mean /= static_cast<double>(probs.size());
  for (double& v : logits) v -= mean;
  return logits;
}

// Writes `out[j] = logits[j] * basis / |basis|^2` rows so the model's logits
// at this context equal `logits` exactly.
void fill_outer(std::span<double> block, const Vec& logits, const Vec& basis) {
  const double nn = dot(basis, basis);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    for (std::size_t i = 0; i < basis.size(); ++i)
      block[j * basis.size() + i] = logits[j] * basis[i] / nn;
  }
}

GeneratedTask build_task(const SuiteSpec& spec, int index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(index), 0x7A5BULL}));
  const int y_star = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.response_count)));

  GeneratedTask out;
  out.task.task_id = make_task_id(index, spec.task_count);
  out.task.context = 0;
  out.task.response_count = spec.response_count;
  out.task.ground_truth = y_star;
  if (spec.attach_user_policy) {
    Vec user(static_cast<std::size_t>(spec.response_count), 0.0);
    user[static_cast<std::size_t>(y_star)] = 1.0;
    out.task.user_policy = std::move(user);
  }

  const Vec probs = task_distribution(spec, y_star, out.distractor, rng);
  const Vec logits = centered_log(probs);
  const std::uint64_t feature_seed =
      derive_seed(seed, {static_cast<std::uint64_t>(index), 0xFEA7ULL});

  switch (spec.family) {
    case PolicyFamily::TabularSoftmax: {
      out.model = PolicyModel::tabular(1, spec.response_count);
      out.theta_base = logits;
      break;
    }
    case PolicyFamily::LinearSoftmax: {
      out.model = PolicyModel::linear(1, spec.feature_dim, spec.response_count,
                                      feature_seed);
      out.theta_base.assign(out.model.param_count(), 0.0);
      fill_outer(out.model.layout().slice(out.theta_base, "weight"), logits,
                 out.model.context_features(0));
      break;
    }
    case PolicyFamily::MlpSoftmax: {
      out.model = PolicyModel::mlp(1, spec.feature_dim, spec.hidden_dim,
                                   spec.response_count, feature_seed);
      out.theta_base = out.model.init_params(
          derive_seed(seed, {static_cast<std::uint64_t>(index), 0x1417ULL}));
      // Hidden activation under the random first layer.
      const Vec& f = out.model.context_features(0);
      const auto w1 = out.model.layout().slice(out.theta_base, "hidden_weight");
      auto b1 = out.model.layout().slice(out.theta_base, "hidden_bias");
      Vec h(static_cast<std::size_t>(spec.hidden_dim));
      for (int attempt = 0;; ++attempt) {
        for (std::size_t i = 0; i < h.size(); ++i) {
          double u = b1[i];
          for (std::size_t d = 0; d < f.size(); ++d) u += w1[i * f.size() + d] * f[d];
          h[i] = std::tanh(u);
        }
        if (dot(h, h) > 1e-8) break;
        if (attempt > 8) throw NumericError("suite: degenerate hidden activation");
        for (double& v : b1) v += 0.1;
      }
      // Solve the head so the logits land exactly on the target values.
      fill_outer(out.model.layout().slice(out.theta_base, "head_weight"), logits, h);
      auto b2 = out.model.layout().slice(out.theta_base, "head_bias");
      std::fill(b2.begin(), b2.end(), 0.0);
      break;
    }
  }

  out.initial_distribution = out.model.distribution(out.theta_base, 0);
  return out;
}

}  // namespace

std::vector<GeneratedTask> generate_suite(const SuiteSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<GeneratedTask> tasks;
  tasks.reserve(static_cast<std::size_t>(spec.task_count));
  for (int i = 0; i < spec.task_count; ++i) tasks.push_back(build_task(spec, i, seed));
  return tasks;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  suite.validate();
  if (methods.empty()) throw ArgumentError("config: no methods selected");
  if (betas.empty()) throw ArgumentError("config: no beta values");
  for (double b : betas) {
    if (!(b > 0.0)) throw ArgumentError("config: beta must be positive");
  }
  if (max_turns < 1) throw ArgumentError("config: turns must be >= 1");
  if (seeds.empty()) throw ArgumentError("config: no seeds");
  if (rl_step_size < 0.0) throw ArgumentError("config: rl_step_size must be >= 0");
  if (workers < 0) throw ArgumentError("config: workers must be >= 0");
  if (dense_sigma < 0.0) throw ArgumentError("config: dense_sigma must be >= 0");
  solver.validate();
}

const MethodSummary& ExperimentResult::summary_for(Method m, double beta,
                                                   std::uint64_t seed) const {
  for (const MethodSummary& s : summaries) {
    if (s.method == m && s.beta == beta && s.seed == seed) return s;
  }
  throw ArgumentError("no summary for the requested (method, beta, seed)");
}

namespace {

struct TaskRun {
  std::vector<TurnRecord> history;
  int solved_turn = 0;
  int turns_taken = 0;
};

FeedbackOracle make_oracle(const ExperimentConfig& cfg) {
  if (cfg.oracle == OracleKind::Rule) {
    return [](int y, const TaskInstance& t) { return rule_reward(y, t); };
  }
  const double sigma = cfg.dense_sigma;
  return [sigma](int y, const TaskInstance& t) { return dense_reward(y, t, sigma); };
}

SessionConfig session_config(const ExperimentConfig& cfg, double beta) {
  SessionConfig sc;
  sc.beta = beta;
  sc.max_turns = cfg.max_turns;
  sc.greedy = cfg.greedy;
  sc.full_vector_residual = cfg.full_vector_residual;
  sc.rl_step_size = cfg.rl_step_size;
  sc.solver = cfg.solver;
  return sc;
}

TaskRun to_task_run(InteractionSession&& session) {
  TaskRun run;
  run.solved_turn = session.solved_turn();
  run.turns_taken = session.turns_taken();
  run.history = session.history();
  return run;
}

// One (method, beta, seed) block over the whole suite, fanned out across
// workers. Results are indexed by task, so scheduling cannot affect output.
std::vector<TaskRun> run_block(const ExperimentConfig& cfg,
                               const std::vector<GeneratedTask>& tasks,
                               Method method, double beta, std::size_t beta_index,
                               std::uint64_t master_seed) {
  const FeedbackOracle oracle = make_oracle(cfg);
  const SessionConfig sc = session_config(cfg, beta);
  std::vector<TaskRun> runs(tasks.size());

  auto run_task = [&](std::size_t i) {
    const GeneratedTask& g = tasks[i];
    const std::uint64_t session_seed = derive_seed(
        master_seed, {static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(method), beta_index});
    runs[i] = to_task_run(run_session(g.model, g.theta_base, cfg.mechanism, g.task,
                                      oracle, sc, session_seed, method));
  };

  if (!cfg.reset_between_tasks) {
    // Parameters persist across tasks: run sequentially and thread the
    // adapted vector through (hidden shifts still reset per task).
    std::optional<Vec> carried;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const GeneratedTask& g = tasks[i];
      const std::uint64_t session_seed = derive_seed(
          master_seed, {static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(method), beta_index});
      Vec base = g.theta_base;
      if (carried && cfg.mechanism.kind == MechanismKind::FullParameter) {
        if (carried->size() != base.size())
          throw ConfigError("persist-params requires a homogeneous suite");
        base = *carried;
      }
      InteractionSession session =
          run_session(g.model, base, cfg.mechanism, g.task, oracle, sc,
                      session_seed, method);
      if (cfg.mechanism.kind == MechanismKind::FullParameter)
        carried = session.adapted();
      runs[i] = to_task_run(std::move(session));
    }
    return runs;
  }

  unsigned n = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers)
                               : std::min(8u, std::max(1u, std::thread::hardware_concurrency()));
  n = std::min<unsigned>(n, static_cast<unsigned>(tasks.size()));
  if (n <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
    return runs;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        run_task(i);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return runs;
}

class CsvFile {
 public:
  explicit CsvFile(std::filesystem::path path) : path_(std::move(path)) {
    stream_.open(path_, std::ios::trunc);
    if (!stream_) throw std::runtime_error("cannot open " + path_.string());
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) stream_ << ',';
      stream_ << cells[i];
    }
    stream_ << '\n';
    if (!stream_) throw std::runtime_error("write failure on " + path_.string());
  }

  void close() {
    stream_.close();
    if (stream_.fail()) throw std::runtime_error("close failure on " + path_.string());
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream stream_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);

  ExperimentResult result;
  result.turns_csv = out_dir / "turns.csv";
  result.summary_csv = out_dir / "summary.csv";
  result.timing_csv = out_dir / "timing.csv";

  try {
    CsvFile turns(result.turns_csv);
    CsvFile summary(result.summary_csv);
    CsvFile timing(result.timing_csv);

    std::vector<std::string> header = {
        "task_id", "method", "beta",        "seed",       "turn",
        "response", "reward", "prob_before", "prob_after", "z_k",
        "delta_norm", "solver_iters", "kl_to_user"};
    turns.row(header);

    std::vector<std::string> sum_header = {
        "method", "beta", "seed", "accuracy", "correction_uplift",
        "mean_turns_to_solve"};
    for (int k = 1; k <= cfg.max_turns; ++k)
      sum_header.push_back("newly_solved_" + std::to_string(k));
    summary.row(sum_header);

    timing.row({"method", "beta", "seed", "mean_infer_seconds",
                "mean_update_seconds"});

    for (const std::uint64_t master_seed : cfg.seeds) {
      const std::vector<GeneratedTask> tasks =
          generate_suite(cfg.suite, master_seed);
      cfg.mechanism.validate_for(tasks.front().model);
      for (const Method method : cfg.methods) {
        for (std::size_t bi = 0; bi < cfg.betas.size(); ++bi) {
          const double beta = cfg.betas[bi];
          const std::vector<TaskRun> runs =
              run_block(cfg, tasks, method, beta, bi, master_seed);

          std::vector<TaskOutcome> outcomes;
          outcomes.reserve(runs.size());
          double infer_total = 0.0, update_total = 0.0;
          std::size_t turn_total = 0;

          for (std::size_t i = 0; i < runs.size(); ++i) {
            const TaskRun& run = runs[i];
            outcomes.push_back(
                {tasks[i].task.task_id, run.solved_turn, run.turns_taken});
            for (const TurnRecord& rec : run.history) {
              turns.row({tasks[i].task.task_id, std::string(method_name(method)),
                         format_double(beta), std::to_string(master_seed),
                         std::to_string(rec.turn), std::to_string(rec.response),
                         format_double(rec.reward), format_double(rec.prob_before),
                         format_double(rec.prob_after), format_double(rec.z),
                         format_double(rec.delta_norm),
                         std::to_string(rec.solver_iterations),
                         rec.kl_to_user ? format_double(*rec.kl_to_user)
                                        : std::string()});
              infer_total += rec.infer_seconds;
              update_total += rec.update_seconds;
              ++turn_total;
            }
          }

          MethodSummary ms;
          ms.method = method;
          ms.beta = beta;
          ms.seed = master_seed;
          ms.accuracy = accuracy(outcomes, cfg.max_turns);
          ms.correction_uplift = correction_uplift(outcomes, cfg.max_turns);
          ms.newly_solved = newly_solved_per_turn(outcomes, cfg.max_turns);
          double solve_turn_total = 0.0;
          int solved = 0;
          for (const TaskOutcome& o : outcomes) {
            if (o.solved_turn > 0) {
              solve_turn_total += o.solved_turn;
              ++solved;
            }
          }
          if (solved > 0) ms.mean_turns_to_solve = solve_turn_total / solved;
          if (turn_total > 0) {
            ms.mean_infer_seconds = infer_total / static_cast<double>(turn_total);
            ms.mean_update_seconds = update_total / static_cast<double>(turn_total);
          }

          std::vector<std::string> sum_row = {
              std::string(method_name(method)), format_double(beta),
              std::to_string(master_seed), format_double(ms.accuracy),
              ms.correction_uplift ? format_double(*ms.correction_uplift)
                                   : std::string(),
              ms.mean_turns_to_solve ? format_double(*ms.mean_turns_to_solve)
                                     : std::string()};
          for (int count : ms.newly_solved) sum_row.push_back(std::to_string(count));
          summary.row(sum_row);

          timing.row({std::string(method_name(method)), format_double(beta),
                      std::to_string(master_seed),
                      format_double(ms.mean_infer_seconds),
                      format_double(ms.mean_update_seconds)});

          result.summaries.push_back(std::move(ms));
        }
      }
    }

    turns.close();
    summary.close();
    timing.close();
  } catch (...) {
    // Do not leave partial outputs behind.
    std::error_code ec;
    std::filesystem::remove(result.turns_csv, ec);
    std::filesystem::remove(result.summary_csv, ec);
    std::filesystem::remove(result.timing_csv, ec);
    throw;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Theory-check batches
// ---------------------------------------------------------------------------

double TheoryReport::holds_rate() const {
  if (instances == 0) return 1.0;
  return static_cast<double>(instances - violations) /
         static_cast<double>(instances);
}

namespace {

Vec random_distribution(Rng& rng, int ny) {
  Vec logits(static_cast<std::size_t>(ny));
  for (double& v : logits) v = 3.0 * rng.gaussian();
  return softmax(logits);
}

// Random user policy with zero mass on roughly half the responses.
Vec random_sparse_user(Rng& rng, int ny) {
  Vec user(static_cast<std::size_t>(ny), 0.0);
  double sum = 0.0;
  for (double& v : user) {
    if (rng.uniform() < 0.5) {
      const double u = rng.uniform();
      v = u * u;
      sum += v;
    }
  }
  if (sum == 0.0) {
    user[rng.below(static_cast<std::uint64_t>(ny))] = 1.0;
    sum = 1.0;
  }
  for (double& v : user) v /= sum;
  return user;
}

int random_response_count(Rng& rng) {
  return 2 + static_cast<int>(rng.below(15));  // 2..16
}

void finalize(TheoryReport& report) {
  report.min_slack = std::numeric_limits<double>::infinity();
  for (const TheoryRow& row : report.rows)
    report.min_slack = std::min(report.min_slack, row.slack);
  if (report.rows.empty()) report.min_slack = 0.0;
}

}  // namespace

TheoryReport theory_identity(int instances, std::uint64_t seed) {
  TheoryReport report;
  report.regime = "identity";
  report.instances = instances;
  const auto start = Clock::now();
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i), 0x1DE47ULL}));
    const int ny = random_response_count(rng);
    const Vec pi_prev = random_distribution(rng, ny);
    const Vec user = random_sparse_user(rng, ny);
    const int y_k = static_cast<int>(rng.below(static_cast<std::uint64_t>(ny)));
    const double beta = rng.uniform(0.25, 1.75);

    bool ok = true;
    for (const double r_value : {1.0, -1.0}) {
      const RewardSignal r{r_value, RewardKind::Sparse};
      const double predicted = predicted_delta_kl(user, pi_prev, y_k, r, beta);
      const Vec pi_new = practical_target_vector(pi_prev, y_k, r, beta);
      const double measured = kl(user, pi_new) - kl(user, pi_prev);
      const double gap = std::abs(measured - predicted);
      report.max_identity_gap = std::max(report.max_identity_gap, gap);
      const bool holds = gap <= 1e-10;
      ok = ok && holds;
      report.rows.push_back({i, r_value > 0 ? 1 : 2, measured, predicted,
                             1e-10 - gap, holds});
    }
    if (!ok) ++report.violations;
  }
  report.elapsed_seconds = seconds_since(start);
  finalize(report);
  return report;
}

TheoryReport theory_monotonic_positive(int instances, std::uint64_t seed) {
  TheoryReport report;
  report.regime = "monotonic-positive";
  report.instances = instances;
  const auto start = Clock::now();
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i), 0x90511ULL}));
    const int ny = random_response_count(rng);
    const Vec pi_prev = random_distribution(rng, ny);
    const Vec user = random_sparse_user(rng, ny);
    // Success convention: the response comes from the user policy.
    const int y_k = sample_index(user, rng);
    const double beta = rng.uniform(0.25, 1.75);
    const BoundReport bound = check_monotonic(user, pi_prev, y_k,
                                              {1.0, RewardKind::Sparse}, beta);
    const TurnBound& t = bound.turns.front();
    report.rows.push_back({i, 1, t.lhs, t.rhs, t.slack, t.holds});
    if (!t.holds) ++report.violations;
  }
  report.elapsed_seconds = seconds_since(start);
  finalize(report);
  return report;
}

TheoryReport theory_monotonic_negative(int instances, std::uint64_t seed) {
  TheoryReport report;
  report.regime = "monotonic-negative-zero-mass";
  report.instances = instances;
  const auto start = Clock::now();
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i), 0x90512ULL}));
    const int ny = random_response_count(rng);
    const Vec pi_prev = random_distribution(rng, ny);
    Vec user = random_sparse_user(rng, ny);
    // Force a designated wrong answer: user mass zero at y_k.
    int y_k = static_cast<int>(rng.below(static_cast<std::uint64_t>(ny)));
    if (user[static_cast<std::size_t>(y_k)] > 0.0) {
      user[static_cast<std::size_t>(y_k)] = 0.0;
      double rest = 0.0;
      for (double v : user) rest += v;
      if (rest == 0.0) {
        user[static_cast<std::size_t>((y_k + 1) % ny)] = 1.0;
      } else {
        for (double& v : user) v /= rest;
      }
    }
    const double beta = rng.uniform(0.25, 1.75);
    const BoundReport bound = check_monotonic(user, pi_prev, y_k,
                                              {-1.0, RewardKind::Sparse}, beta);
    // Here the identity collapses to log Z, which must be strictly negative.
    const double lhs = bound.turns.front().lhs;
    const bool holds = lhs < 0.0;
    report.rows.push_back({i, 1, lhs, 0.0, -lhs, holds});
    if (!holds) ++report.violations;
  }
  report.elapsed_seconds = seconds_since(start);
  finalize(report);
  return report;
}

TheoryReport theory_cumulative(int traces, int max_turns, std::uint64_t seed) {
  TheoryReport report;
  report.regime = "cumulative";
  report.instances = traces;
  const auto start = Clock::now();
  for (int i = 0; i < traces; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i), 0xC0130ULL}));
    const int ny = 4 + static_cast<int>(rng.below(13));  // 4..16
    const Vec pi0 = random_distribution(rng, ny);
    // Place the user's answer on the least likely response so traces run long.
    const int y_star = static_cast<int>(
        std::min_element(pi0.begin(), pi0.end()) - pi0.begin());
    Vec user(static_cast<std::size_t>(ny), 0.0);
    user[static_cast<std::size_t>(y_star)] = 1.0;
    const double beta = rng.uniform(0.25, 1.75);

    // Failure-driven exact updates: draws conditioned on wrong answers, the
    // regime of a session whose oracle keeps returning -1 for max_turns.
    std::vector<ExactStep> steps;
    Vec pi = pi0;
    Vec wrong(pi.size());
    for (int k = 0; k < max_turns; ++k) {
      double mass = 0.0;
      for (std::size_t j = 0; j < pi.size(); ++j) {
        wrong[j] = static_cast<int>(j) == y_star ? 0.0 : pi[j];
        mass += wrong[j];
      }
      for (double& v : wrong) v /= mass;
      const ExactStep step{sample_index(wrong, rng), {-1.0, RewardKind::Sparse}};
      pi = practical_target_vector(pi, step.y_k, step.reward, beta);
      steps.push_back(step);
    }

    const BoundReport bound = check_cumulative(user, pi0, steps, beta);
    bool ok = true;
    for (const TurnBound& t : bound.turns) {
      report.rows.push_back({i, t.turn, t.lhs, t.rhs, t.slack, t.holds});
      ok = ok && t.holds;
    }
    if (!ok) ++report.violations;
  }
  report.elapsed_seconds = seconds_since(start);
  finalize(report);
  return report;
}

TheoryReport theory_unified(int sessions, int lipschitz_samples, double beta,
                            int max_turns, std::uint64_t seed,
                            bool full_vector_residual) {
  TheoryReport report;
  report.regime = full_vector_residual ? "unified-full-vector" : "unified-scalar";
  report.instances = sessions;
  const auto start = Clock::now();

  // Sessions over the canonical mlp suite construction.
  SuiteSpec spec;
  spec.task_count = sessions;
  spec.family = PolicyFamily::MlpSoftmax;
  const std::vector<GeneratedTask> tasks =
      generate_suite(spec, derive_seed(seed, {0x0F1EDULL}));

  for (int s = 0; s < sessions; ++s) {
    const std::uint64_t base = derive_seed(seed, {static_cast<std::uint64_t>(s), 0x0F1EDULL});
    const GeneratedTask& g = tasks[static_cast<std::size_t>(s)];
    const PolicyModel& model = g.model;
    const Vec& theta = g.theta_base;
    const TaskInstance& task = g.task;
    const Vec& user = *task.user_policy;

    SessionConfig sc;
    sc.beta = beta;
    sc.max_turns = max_turns;
    sc.full_vector_residual = full_vector_residual;
    // Drive the loop by hand to snapshot every parameter point visited; the
    // smoothness estimate then probes exactly the traversed region.
    InteractionSession session(model, theta, UpdateMechanism::full_parameter(),
                               task, sc, derive_seed(base, {0x5E55ULL}));
    std::vector<Vec> visited = {session.effective_params()};
    while (session.status() == SessionStatus::Active) {
      const int y = session.generate();
      const RewardSignal r = rule_reward(y, task);
      if (r.value >= 1.0) {
        session.observe_only(y, r);
      } else {
        session.adapt_step(y, r);
        visited.push_back(session.effective_params());
      }
    }
    const LinearizedTrace trace = linearized_trace(session);

    if (trace.turns.empty()) {
      report.rows.push_back({s, 0, 0.0, 0.0, 0.0, true});
      continue;
    }

    const RegionSampler sampler = trajectory_sampler(model, 0, std::move(visited));
    const double lhat = estimate_lipschitz(model, sampler, lipschitz_samples,
                                           derive_seed(base, {0x11F5ULL}));
    const UnifiedReport unified = check_unified(trace, user, beta, lhat);

    bool ok = true;
    for (const TurnBound& t : unified.bound.turns) {
      report.rows.push_back({s, t.turn, t.lhs, t.rhs, t.slack, t.holds});
      ok = ok && t.holds;
    }
    if (!ok) {
      ++report.violations;
      if (unified.lhat_slack >= 0.0) report.violations_explained = false;
    }
  }
  report.elapsed_seconds = seconds_since(start);
  finalize(report);
  return report;
}

std::vector<TheoryReport> run_theory_suite(const TheoryConfig& cfg) {
  if (cfg.instances < 1 || cfg.sessions < 1)
    throw ArgumentError("theory: counts must be >= 1");
  std::vector<TheoryReport> reports;
  reports.push_back(theory_identity(cfg.instances, cfg.seed));
  reports.push_back(theory_monotonic_positive(cfg.instances, cfg.seed));
  reports.push_back(theory_monotonic_negative(cfg.instances, cfg.seed));
  reports.push_back(theory_cumulative(cfg.instances, cfg.max_turns, cfg.seed));
  reports.push_back(theory_unified(cfg.sessions, cfg.lipschitz_samples, cfg.beta,
                                   cfg.max_turns, cfg.seed, true));
  reports.push_back(theory_unified(cfg.sessions, cfg.lipschitz_samples, cfg.beta,
                                   cfg.max_turns, cfg.seed, false));

  if (!cfg.out_dir.empty()) {
    const std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);
    const auto rows_path = out_dir / "theory.csv";
    const auto summary_path = out_dir / "theory_summary.csv";
    try {
      CsvFile rows(rows_path);
      rows.row({"regime", "instance", "turn", "lhs", "rhs", "slack", "holds"});
      for (const TheoryReport& report : reports) {
        for (const TheoryRow& r : report.rows) {
          rows.row({report.regime, std::to_string(r.instance),
                    std::to_string(r.turn), format_double(r.lhs),
                    format_double(r.rhs), format_double(r.slack),
                    r.holds ? "1" : "0"});
        }
      }
      rows.close();

      CsvFile summary(summary_path);
      summary.row({"regime", "instances", "violations", "holds_rate",
                   "min_slack", "max_identity_gap"});
      for (const TheoryReport& report : reports) {
        summary.row({report.regime, std::to_string(report.instances),
                     std::to_string(report.violations),
                     format_double(report.holds_rate()),
                     format_double(report.min_slack),
                     format_double(report.max_identity_gap)});
      }
      summary.close();
    } catch (...) {
      std::error_code ec;
      std::filesystem::remove(rows_path, ec);
      std::filesystem::remove(summary_path, ec);
      throw;
    }
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Interactive mode
// ---------------------------------------------------------------------------

InteractionSession run_interactive(const ExperimentConfig& cfg, std::istream& in,
                                   std::ostream& out) {
  cfg.validate();
  const std::uint64_t master_seed = cfg.seeds.front();
  SuiteSpec spec = cfg.suite;
  spec.task_count = 1;
  const std::vector<GeneratedTask> tasks = generate_suite(spec, master_seed);
  const GeneratedTask& g = tasks.front();
  cfg.mechanism.validate_for(g.model);

  InteractiveOracle oracle(in, out);
  const SessionConfig sc = session_config(cfg, cfg.betas.front());
  InteractionSession session = run_session(
      g.model, g.theta_base, cfg.mechanism, g.task,
      [&oracle](int y, const TaskInstance& t) { return oracle(y, t); }, sc,
      derive_seed(master_seed, {0, static_cast<std::uint64_t>(Method::Rosa), 0}),
      Method::Rosa);

  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "interactive.csv";
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream stream(path, std::ios::app);
  if (!stream) throw std::runtime_error("cannot open " + path.string());
  if (fresh)
    stream << "task_id,turn,response,reward,prob_before,prob_after,z_k,"
              "delta_norm\n";
  for (const TurnRecord& rec : session.history()) {
    stream << g.task.task_id << ',' << rec.turn << ',' << rec.response << ','
           << format_double(rec.reward) << ',' << format_double(rec.prob_before)
           << ',' << format_double(rec.prob_after) << ',' << format_double(rec.z)
           << ',' << format_double(rec.delta_norm) << '\n';
  }
  if (!stream) throw std::runtime_error("write failure on " + path.string());
  return session;
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream stream(value);
  std::string item;
  while (std::getline(stream, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": " + value);
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": " + value);
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad seed value for " + key + ": " + value);
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on")
    return true;
  if (value == "false" || value == "0" || value == "no" || value == "off")
    return false;
  throw ConfigError("bad boolean value for " + key + ": " + value);
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::stringstream stream(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

ConfigMap parse_config_file(const std::filesystem::path& path) {
  std::ifstream stream(path);
  if (!stream) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << stream.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_config(ExperimentConfig& cfg, const ConfigMap& values) {
  for (const auto& [key, value] : values) {
    if (key == "suite.task_count") cfg.suite.task_count = to_int(key, value);
    else if (key == "suite.response_count") cfg.suite.response_count = to_int(key, value);
    else if (key == "suite.family") {
      const auto family = family_from_name(value);
      if (!family) throw ConfigError("unknown policy family: " + value);
      cfg.suite.family = *family;
    } else if (key == "suite.difficulty") cfg.suite.difficulty = to_double(key, value);
    else if (key == "suite.distractor_mass") cfg.suite.distractor_mass = to_double(key, value);
    else if (key == "suite.distractor_jitter") cfg.suite.distractor_jitter = to_double(key, value);
    else if (key == "suite.feature_dim") cfg.suite.feature_dim = to_int(key, value);
    else if (key == "suite.hidden_dim") cfg.suite.hidden_dim = to_int(key, value);
    else if (key == "suite.attach_user_policy") cfg.suite.attach_user_policy = to_bool(key, value);
    else if (key == "run.methods") {
      cfg.methods.clear();
      for (const std::string& name : split_list(value)) {
        const auto m = method_from_name(name);
        if (!m) throw ConfigError("unknown method: " + name);
        cfg.methods.push_back(*m);
      }
    } else if (key == "run.mechanism") {
      const auto m = mechanism_from_name(value);
      if (!m) throw ConfigError("unknown mechanism: " + value);
      cfg.mechanism.kind = *m;
    } else if (key == "run.rank") cfg.mechanism.rank = to_int(key, value);
    else if (key == "run.alpha") cfg.mechanism.alpha = to_double(key, value);
    else if (key == "run.betas" || key == "run.beta") {
      cfg.betas.clear();
      for (const std::string& item : split_list(value))
        cfg.betas.push_back(to_double(key, item));
    } else if (key == "run.turns") cfg.max_turns = to_int(key, value);
    else if (key == "run.seeds" || key == "run.seed") {
      cfg.seeds.clear();
      for (const std::string& item : split_list(value))
        cfg.seeds.push_back(to_u64(key, item));
    } else if (key == "run.oracle") {
      if (value == "rule") cfg.oracle = OracleKind::Rule;
      else if (value == "dense") cfg.oracle = OracleKind::Dense;
      else throw ConfigError("unknown oracle kind: " + value);
    } else if (key == "run.dense_sigma") cfg.dense_sigma = to_double(key, value);
    else if (key == "run.out") cfg.out_dir = value;
    else if (key == "run.reset_between_tasks") cfg.reset_between_tasks = to_bool(key, value);
    else if (key == "run.greedy") cfg.greedy = to_bool(key, value);
    else if (key == "run.full_vector_residual") cfg.full_vector_residual = to_bool(key, value);
    else if (key == "run.rl_step_size") cfg.rl_step_size = to_double(key, value);
    else if (key == "run.workers") cfg.workers = to_int(key, value);
    else if (key == "solver.rel_tolerance") cfg.solver.rel_tolerance = to_double(key, value);
    else if (key == "solver.max_iterations") cfg.solver.max_iterations = to_int(key, value);
    else if (key == "solver.damping") cfg.solver.damping = to_double(key, value);
    else throw ConfigError("unknown config key: " + key);
  }
}

}  // namespace rosa::harness
