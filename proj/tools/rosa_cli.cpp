// Command-line experiment runner: suites, method comparisons, beta sweeps,
// theory-check batches, and a human-in-the-loop mode. All run artifacts are
// CSV files; see README for the schemas.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "rosa/harness.hpp"

#ifdef _WIN32
#include <io.h>
#define ROSA_ISATTY _isatty
#define ROSA_FILENO _fileno
#else
#include <unistd.h>
#define ROSA_ISATTY isatty
#define ROSA_FILENO fileno
#endif

namespace {

using rosa::harness::ExperimentConfig;

struct CliOverrides {
  std::string config_path;
  std::vector<std::string> methods;
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::string mechanism;
  std::string family;
  std::string oracle;
  std::string out_dir;
  int turns = -1;
  int tasks = -1;
  int responses = -1;
  int rank = -1;
  int workers = -1;
  int feature_dim = -1;
  int hidden_dim = -1;
  double alpha = -1.0;
  double difficulty = -1.0;
  double distractor_mass = -1.0;
  double distractor_jitter = -1.0;
  double rl_step_size = -1.0;
  double dense_sigma = -1.0;
  double cg_tolerance = -1.0;
  int cg_max_iterations = -1;
  double damping = -1.0;
  bool greedy = false;
  bool persist_params = false;
  bool full_vector = false;
  bool no_user_policy = false;
};

void add_common_options(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config_path, "key = value config file");
  cmd->add_option("--seed", o.seeds, "master seed(s)")->delimiter(',');
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--method", o.methods, "methods: static, rl, rosa")->delimiter(',');
  cmd->add_option("--beta", o.betas, "KL-regularization coefficient(s)")->delimiter(',');
  cmd->add_option("--turns", o.turns, "turn budget K per task");
  cmd->add_option("--mechanism", o.mechanism,
                  "update mechanism: full, low-rank-head, hidden-shift");
  cmd->add_option("--rank", o.rank, "low-rank adapter rank");
  cmd->add_option("--alpha", o.alpha, "low-rank adapter scaling alpha");
  cmd->add_option("--tasks", o.tasks, "suite size");
  cmd->add_option("--responses", o.responses, "response-space size |Y|");
  cmd->add_option("--family", o.family, "policy family: tabular, linear, mlp");
  cmd->add_option("--difficulty", o.difficulty, "initial probability of y*");
  cmd->add_option("--distractor-mass", o.distractor_mass,
                  "share of the non-target mass on one distractor (0 = uniform)");
  cmd->add_option("--distractor-jitter", o.distractor_jitter,
                  "per-task jitter on the distractor share");
  cmd->add_option("--feature-dim", o.feature_dim, "feature dimension (linear/mlp)");
  cmd->add_option("--hidden-dim", o.hidden_dim, "hidden units (mlp)");
  cmd->add_option("--oracle", o.oracle, "feedback oracle: rule, dense");
  cmd->add_option("--dense-sigma", o.dense_sigma, "dense oracle width (0 = |Y|/8)");
  cmd->add_option("--rl-step-size", o.rl_step_size, "RL baseline step size");
  cmd->add_option("--workers", o.workers, "worker threads (0 = auto)");
  cmd->add_option("--cg-tol", o.cg_tolerance, "CG relative tolerance");
  cmd->add_option("--cg-max-iters", o.cg_max_iterations,
                  "CG iteration cap (0 = min(P, 100))");
  cmd->add_option("--damping", o.damping, "Tikhonov damping lambda");
  cmd->add_flag("--greedy", o.greedy, "argmax generation instead of sampling");
  cmd->add_flag("--persist-params", o.persist_params,
                "carry adapted parameters across tasks");
  cmd->add_flag("--full-vector-residual", o.full_vector,
                "target the whole distribution, not just y_k");
  cmd->add_flag("--no-user-policy", o.no_user_policy,
                "do not attach a reference user policy to tasks");
}

ExperimentConfig build_config(const CliOverrides& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty())
    rosa::harness::apply_config(cfg, rosa::harness::parse_config_file(o.config_path));

  if (!o.methods.empty()) {
    cfg.methods.clear();
    for (const std::string& name : o.methods) {
      const auto m = rosa::method_from_name(name);
      if (!m) throw rosa::ConfigError("unknown method: " + name);
      cfg.methods.push_back(*m);
    }
  }
  if (!o.betas.empty()) cfg.betas = o.betas;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.mechanism.empty()) {
    const auto m = rosa::mechanism_from_name(o.mechanism);
    if (!m) throw rosa::ConfigError("unknown mechanism: " + o.mechanism);
    cfg.mechanism.kind = *m;
  }
  if (!o.family.empty()) {
    const auto f = rosa::family_from_name(o.family);
    if (!f) throw rosa::ConfigError("unknown policy family: " + o.family);
    cfg.suite.family = *f;
  }
  if (!o.oracle.empty()) {
    if (o.oracle == "rule") cfg.oracle = rosa::harness::OracleKind::Rule;
    else if (o.oracle == "dense") cfg.oracle = rosa::harness::OracleKind::Dense;
    else throw rosa::ConfigError("unknown oracle kind: " + o.oracle);
  }
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.turns >= 0) cfg.max_turns = o.turns;
  if (o.tasks >= 0) cfg.suite.task_count = o.tasks;
  if (o.responses >= 0) cfg.suite.response_count = o.responses;
  if (o.rank >= 0) cfg.mechanism.rank = o.rank;
  if (o.alpha >= 0.0) cfg.mechanism.alpha = o.alpha;
  if (o.workers >= 0) cfg.workers = o.workers;
  if (o.feature_dim >= 0) cfg.suite.feature_dim = o.feature_dim;
  if (o.hidden_dim >= 0) cfg.suite.hidden_dim = o.hidden_dim;
  if (o.difficulty >= 0.0) cfg.suite.difficulty = o.difficulty;
  if (o.distractor_mass >= 0.0) cfg.suite.distractor_mass = o.distractor_mass;
  if (o.distractor_jitter >= 0.0) cfg.suite.distractor_jitter = o.distractor_jitter;
  if (o.rl_step_size >= 0.0) cfg.rl_step_size = o.rl_step_size;
  if (o.dense_sigma >= 0.0) cfg.dense_sigma = o.dense_sigma;
  if (o.cg_tolerance >= 0.0) cfg.solver.rel_tolerance = o.cg_tolerance;
  if (o.cg_max_iterations >= 0) cfg.solver.max_iterations = o.cg_max_iterations;
  if (o.damping >= 0.0) cfg.solver.damping = o.damping;
  if (o.greedy) cfg.greedy = true;
  if (o.persist_params) cfg.reset_between_tasks = false;
  if (o.full_vector) cfg.full_vector_residual = true;
  if (o.no_user_policy) cfg.suite.attach_user_policy = false;
  return cfg;
}

void print_summaries(const rosa::harness::ExperimentResult& result) {
  std::printf("%-8s %-6s %-6s %-9s %-9s %-8s\n", "method", "beta", "seed",
              "accuracy", "uplift", "turns");
  for (const auto& s : result.summaries) {
    std::printf("%-8s %-6g %-6llu %-9.4f %-9s %-8s\n",
                std::string(rosa::method_name(s.method)).c_str(), s.beta,
                static_cast<unsigned long long>(s.seed), s.accuracy,
                s.correction_uplift
                    ? (std::to_string(*s.correction_uplift).substr(0, 7)).c_str()
                    : "-",
                s.mean_turns_to_solve
                    ? (std::to_string(*s.mean_turns_to_solve).substr(0, 6)).c_str()
                    : "-");
  }
  std::printf("wrote %s\n", result.turns_csv.string().c_str());
  std::printf("wrote %s\n", result.summary_csv.string().c_str());
}

int cmd_run(const CliOverrides& o) {
  const ExperimentConfig cfg = build_config(o);
  print_summaries(rosa::harness::run_experiment(cfg));
  return 0;
}

int cmd_sweep_beta(const CliOverrides& o) {
  ExperimentConfig cfg = build_config(o);
  if (o.betas.empty())
    cfg.betas = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  if (o.methods.empty()) cfg.methods = {rosa::Method::Rosa};
  print_summaries(rosa::harness::run_experiment(cfg));
  return 0;
}

int cmd_gen_suite(const CliOverrides& o) {
  const ExperimentConfig cfg = build_config(o);
  const auto tasks = rosa::harness::generate_suite(cfg.suite, cfg.seeds.front());
  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "suite.csv";
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::fprintf(f,
               "task_id,family,response_count,ground_truth,difficulty,"
               "initial_prob,distractor,distractor_prob\n");
  for (const auto& g : tasks) {
    const double p0 =
        g.initial_distribution[static_cast<std::size_t>(g.task.ground_truth)];
    const double pd =
        g.distractor >= 0
            ? g.initial_distribution[static_cast<std::size_t>(g.distractor)]
            : 0.0;
    std::fprintf(f, "%s,%s,%d,%d,%s,%s,%d,%s\n", g.task.task_id.c_str(),
                 std::string(rosa::family_name(cfg.suite.family)).c_str(),
                 g.task.response_count, g.task.ground_truth,
                 rosa::harness::format_double(cfg.suite.difficulty).c_str(),
                 rosa::harness::format_double(p0).c_str(), g.distractor,
                 rosa::harness::format_double(pd).c_str());
  }
  std::fclose(f);
  std::printf("wrote %s (%zu tasks)\n", path.string().c_str(), tasks.size());
  return 0;
}

int cmd_theory(const CliOverrides& o, int instances, int sessions,
               int lipschitz_samples) {
  const ExperimentConfig cfg = build_config(o);
  rosa::harness::TheoryConfig tc;
  tc.instances = instances;
  tc.sessions = sessions;
  tc.lipschitz_samples = lipschitz_samples;
  tc.beta = cfg.betas.front();
  tc.seed = cfg.seeds.front();
  tc.max_turns = cfg.max_turns;
  tc.out_dir = cfg.out_dir;
  const auto reports = rosa::harness::run_theory_suite(tc);
  std::printf("%-30s %-10s %-11s %-11s %-12s\n", "regime", "instances",
              "violations", "holds_rate", "min_slack");
  for (const auto& r : reports) {
    std::printf("%-30s %-10d %-11d %-11.4f %-12.4g\n", r.regime.c_str(),
                r.instances, r.violations, r.holds_rate(), r.min_slack);
  }
  return 0;
}

int cmd_interactive(const CliOverrides& o) {
  if (!ROSA_ISATTY(ROSA_FILENO(stdin)))
    throw rosa::ConfigError(
        "interactive mode needs an attached terminal; use `run` for batch jobs");
  ExperimentConfig cfg = build_config(o);
  const auto session = rosa::harness::run_interactive(cfg, std::cin, std::cout);
  const char* status = "unsolved";
  if (session.status() == rosa::SessionStatus::Solved) status = "solved";
  if (session.status() == rosa::SessionStatus::Aborted) status = "aborted";
  std::printf("session %s after %d turn(s); transcript appended to %s\n", status,
              session.turns_taken(),
              (std::filesystem::path(cfg.out_dir) / "interactive.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time policy adaptation experiments"};
  app.require_subcommand(1);

  CliOverrides run_o, sweep_o, theory_o, interactive_o, gen_o;
  int instances = 1000, sessions = 100, lipschitz_samples = 10000;

  add_common_options(app.add_subcommand("run", "run a method-comparison experiment"),
                     run_o);
  add_common_options(
      app.add_subcommand("sweep-beta", "sweep beta over its ablation range"), sweep_o);
  CLI::App* theory =
      app.add_subcommand("theory", "run the numerical theory-check batches");
  add_common_options(theory, theory_o);
  theory->add_option("--instances", instances, "instances per regime");
  theory->add_option("--sessions", sessions, "linearized sessions (unified regime)");
  theory->add_option("--lipschitz-samples", lipschitz_samples,
                     "pairs for the smoothness estimate");
  add_common_options(
      app.add_subcommand("interactive", "score one session by hand (+/-/q)"),
      interactive_o);
  add_common_options(app.add_subcommand("gen-suite", "write the generated task suite"),
                     gen_o);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("run")) return cmd_run(run_o);
    if (app.got_subcommand("sweep-beta")) return cmd_sweep_beta(sweep_o);
    if (app.got_subcommand("theory"))
      return cmd_theory(theory_o, instances, sessions, lipschitz_samples);
    if (app.got_subcommand("interactive")) return cmd_interactive(interactive_o);
    if (app.got_subcommand("gen-suite")) return cmd_gen_suite(gen_o);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const rosa::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const rosa::ArgumentError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
