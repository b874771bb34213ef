// Python bindings for the core operations: policy families, re-weighted
// targets, the matrix-free least-squares step, KL diagnostics, interaction
// sessions, and the experiment harness.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rosa/engine.hpp"
#include "rosa/harness.hpp"

namespace py = pybind11;
using namespace rosa;

namespace {

RewardSignal make_reward(double value, bool dense) {
  RewardSignal r{value, dense ? RewardKind::Dense : RewardKind::Sparse};
  r.validate();
  return r;
}

py::dict record_to_dict(const TurnRecord& rec) {
  py::dict d;
  d["turn"] = rec.turn;
  d["response"] = rec.response;
  d["reward"] = rec.reward;
  d["prob_before"] = rec.prob_before;
  d["prob_after"] = rec.prob_after;
  d["z"] = rec.z;
  d["target_prob"] = rec.target_prob;
  d["delta_norm"] = rec.delta_norm;
  d["solver_iterations"] = rec.solver_iterations;
  d["updated"] = rec.updated;
  d["degenerate"] = rec.degenerate;
  if (rec.kl_to_user) d["kl_to_user"] = *rec.kl_to_user;
  else d["kl_to_user"] = py::none();
  return d;
}

const char* status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Solved: return "solved";
    case SessionStatus::Exhausted: return "exhausted";
    case SessionStatus::Aborted: return "aborted";
  }
  return "unknown";
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Test-time policy adaptation: one-step KL-regularized updates on "
            "small softmax policies";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ---- policies -----------------------------------------------------------

  py::class_<PolicyModel>(m, "PolicyModel")
      .def_static("tabular", &PolicyModel::tabular, py::arg("context_count"),
                  py::arg("response_count"))
      .def_static(
          "linear",
          [](int contexts, int feature_dim, int responses, std::uint64_t seed) {
            return PolicyModel::linear(contexts, feature_dim, responses, seed);
          },
          py::arg("context_count"), py::arg("feature_dim"),
          py::arg("response_count"), py::arg("feature_seed") = 0)
      .def_static(
          "mlp",
          [](int contexts, int feature_dim, int hidden, int responses,
             std::uint64_t seed) {
            return PolicyModel::mlp(contexts, feature_dim, hidden, responses, seed);
          },
          py::arg("context_count"), py::arg("feature_dim"), py::arg("hidden_dim"),
          py::arg("response_count"), py::arg("feature_seed") = 0)
      .def_property_readonly("param_count", &PolicyModel::param_count)
      .def_property_readonly("context_count", &PolicyModel::context_count)
      .def_property_readonly("response_count", &PolicyModel::response_count)
      .def_property_readonly("family",
                             [](const PolicyModel& mdl) {
                               return std::string(family_name(mdl.family()));
                             })
      .def_property_readonly("layout",
                             [](const PolicyModel& mdl) {
                               py::dict d;
                               for (const ParamBlock& b : mdl.layout().blocks())
                                 d[py::str(b.name)] = py::make_tuple(b.offset, b.size);
                               return d;
                             })
      .def("init_params", &PolicyModel::init_params, py::arg("seed"))
      .def("prob", &PolicyModel::prob, py::arg("theta"), py::arg("x"), py::arg("y"))
      .def("distribution", &PolicyModel::distribution, py::arg("theta"), py::arg("x"))
      .def("grad_prob", &PolicyModel::grad_prob, py::arg("theta"), py::arg("x"),
           py::arg("y"))
      .def(
          "jvp",
          [](const PolicyModel& mdl, const Vec& theta, int x, int y, const Vec& v) {
            return mdl.jvp(theta, x, y, v);
          },
          py::arg("theta"), py::arg("x"), py::arg("y"), py::arg("v"))
      .def("vjp", &PolicyModel::vjp, py::arg("theta"), py::arg("x"), py::arg("y"),
           py::arg("s"))
      .def(
          "sample",
          [](const PolicyModel& mdl, const Vec& theta, int x, std::uint64_t seed) {
            Rng rng(seed);
            return mdl.sample(theta, x, rng);
          },
          py::arg("theta"), py::arg("x"), py::arg("seed"))
      .def("argmax", &PolicyModel::argmax, py::arg("theta"), py::arg("x"));

  // ---- targets ------------------------------------------------------------

  py::class_<TargetValue>(m, "TargetValue")
      .def_readonly("z", &TargetValue::z)
      .def_readonly("target_prob", &TargetValue::target_prob)
      .def_readonly("beta", &TargetValue::beta);

  m.def(
      "partition_single",
      [](double p, double reward, double beta, bool dense) {
        return partition_single(p, make_reward(reward, dense), beta);
      },
      py::arg("p"), py::arg("reward"), py::arg("beta") = 1.0,
      py::arg("dense") = false);
  m.def(
      "practical_target",
      [](double p, double reward, double beta, bool dense) {
        return practical_target(p, make_reward(reward, dense), beta);
      },
      py::arg("p"), py::arg("reward"), py::arg("beta") = 1.0,
      py::arg("dense") = false);
  m.def(
      "closed_form_policy",
      [](const Vec& dist, const Vec& rewards, double beta) {
        if (rewards.size() != dist.size())
          throw ArgumentError("rewards length must match the distribution");
        return closed_form_policy(
            dist, [&](int y) { return rewards[static_cast<std::size_t>(y)]; }, beta);
      },
      py::arg("dist"), py::arg("rewards"), py::arg("beta") = 1.0);
  m.def(
      "practical_target_vector",
      [](const Vec& dist, int y_k, double reward, double beta, bool dense) {
        return practical_target_vector(dist, y_k, make_reward(reward, dense), beta);
      },
      py::arg("dist"), py::arg("y_k"), py::arg("reward"), py::arg("beta") = 1.0,
      py::arg("dense") = false);

  // ---- solver ---------------------------------------------------------------

  m.def(
      "rank_one_solution",
      [](const Vec& g, double d, double damping) {
        return rank_one_solution(g, d, damping);
      },
      py::arg("g"), py::arg("d"), py::arg("damping") = 0.0);
  m.def(
      "solve_normal_equations",
      [](const std::vector<Vec>& rows, const Vec& d, double rel_tolerance,
         int max_iterations, double damping) {
        SolverConfig cfg{rel_tolerance, max_iterations, damping};
        const SolveResult res =
            solve_normal_equations(rows_operator(rows), d, cfg);
        return py::make_tuple(res.delta, res.iterations, res.converged);
      },
      py::arg("rows"), py::arg("d"), py::arg("rel_tolerance") = 1e-8,
      py::arg("max_iterations") = 0, py::arg("damping") = 0.0,
      "Matrix-free CG on the normal equations; returns (delta, iterations, "
      "converged)");

  // ---- metrics --------------------------------------------------------------

  m.def(
      "kl", [](const Vec& p, const Vec& q) { return kl(p, q); }, py::arg("p"),
      py::arg("q"));
  m.def(
      "predicted_delta_kl",
      [](const Vec& user, const Vec& pi_prev, int y_k, double reward, double beta) {
        return predicted_delta_kl(user, pi_prev, y_k,
                                  make_reward(reward, false), beta);
      },
      py::arg("user"), py::arg("pi_prev"), py::arg("y_k"), py::arg("reward"),
      py::arg("beta") = 1.0);

  // ---- tasks and rewards ----------------------------------------------------

  py::class_<TaskInstance>(m, "TaskInstance")
      .def(py::init([](std::string task_id, int response_count, int ground_truth,
                       std::optional<Vec> user_policy) {
             TaskInstance t;
             t.task_id = std::move(task_id);
             t.response_count = response_count;
             t.ground_truth = ground_truth;
             t.user_policy = std::move(user_policy);
             t.validate();
             return t;
           }),
           py::arg("task_id"), py::arg("response_count"), py::arg("ground_truth"),
           py::arg("user_policy") = py::none())
      .def_readonly("task_id", &TaskInstance::task_id)
      .def_readonly("response_count", &TaskInstance::response_count)
      .def_readonly("ground_truth", &TaskInstance::ground_truth)
      .def_readonly("user_policy", &TaskInstance::user_policy);

  m.def(
      "rule_reward",
      [](int y, const TaskInstance& t) { return rule_reward(y, t).value; },
      py::arg("y"), py::arg("task"));
  m.def(
      "dense_reward",
      [](int y, const TaskInstance& t, double sigma) {
        return dense_reward(y, t, sigma).value;
      },
      py::arg("y"), py::arg("task"), py::arg("sigma") = 0.0);

  // ---- sessions ---------------------------------------------------------------

  py::class_<UpdateMechanism>(m, "UpdateMechanism")
      .def_static("full_parameter", &UpdateMechanism::full_parameter)
      .def_static("low_rank_head", &UpdateMechanism::low_rank_head,
                  py::arg("rank") = 1, py::arg("alpha") = 8.0)
      .def_static("hidden_shift", &UpdateMechanism::hidden_shift)
      .def_readonly("rank", &UpdateMechanism::rank)
      .def_readonly("alpha", &UpdateMechanism::alpha)
      .def_property_readonly("kind", [](const UpdateMechanism& mech) {
        return std::string(mechanism_name(mech.kind));
      });

  m.def(
      "effective_params",
      [](const UpdateMechanism& mech, const PolicyModel& model, const Vec& base,
         const Vec& adapted) {
        return effective_params(mech, model, base, adapted);
      },
      py::arg("mechanism"), py::arg("model"), py::arg("base"), py::arg("adapted"));
  m.def(
      "mechanism_distribution",
      [](const UpdateMechanism& mech, const PolicyModel& model, const Vec& base,
         const Vec& adapted, int x) {
        return mechanism_distribution(mech, model, base, adapted, x);
      },
      py::arg("mechanism"), py::arg("model"), py::arg("base"), py::arg("adapted"),
      py::arg("x") = 0);
  m.def(
      "mechanism_gradient",
      [](const UpdateMechanism& mech, const PolicyModel& model, const Vec& base,
         const Vec& adapted, int x, int y) {
        return mechanism_gradient(mech, model, base, adapted, x, y);
      },
      py::arg("mechanism"), py::arg("model"), py::arg("base"), py::arg("adapted"),
      py::arg("x"), py::arg("y"));

  py::class_<InteractionSession>(m, "InteractionSession")
      .def(py::init([](const PolicyModel& model, const Vec& theta,
                       const UpdateMechanism& mech, const TaskInstance& task,
                       double beta, int max_turns, bool greedy,
                       bool full_vector_residual, double rl_step_size,
                       std::uint64_t seed) {
             SessionConfig cfg;
             cfg.beta = beta;
             cfg.max_turns = max_turns;
             cfg.greedy = greedy;
             cfg.full_vector_residual = full_vector_residual;
             cfg.rl_step_size = rl_step_size;
             return InteractionSession(model, theta, mech, task, cfg, seed);
           }),
           py::arg("model"), py::arg("theta"), py::arg("mechanism"),
           py::arg("task"), py::arg("beta") = 1.0, py::arg("max_turns") = 10,
           py::arg("greedy") = false, py::arg("full_vector_residual") = false,
           py::arg("rl_step_size") = 0.15, py::arg("seed") = 0)
      .def("generate", &InteractionSession::generate)
      .def(
          "adapt_step",
          [](InteractionSession& s, int y, double reward, bool dense) {
            return record_to_dict(s.adapt_step(y, make_reward(reward, dense)));
          },
          py::arg("y"), py::arg("reward"), py::arg("dense") = false)
      .def(
          "rl_baseline_step",
          [](InteractionSession& s, int y, double reward, double step_size) {
            return record_to_dict(
                s.rl_baseline_step(y, make_reward(reward, false), step_size));
          },
          py::arg("y"), py::arg("reward"), py::arg("step_size") = 0.15)
      .def(
          "observe_only",
          [](InteractionSession& s, int y, double reward, bool dense) {
            return record_to_dict(s.observe_only(y, make_reward(reward, dense)));
          },
          py::arg("y"), py::arg("reward"), py::arg("dense") = false)
      .def("current_distribution", &InteractionSession::current_distribution)
      .def("current_prob", &InteractionSession::current_prob, py::arg("y"))
      .def("effective_params", &InteractionSession::effective_params)
      .def_property_readonly("adapted", &InteractionSession::adapted)
      .def_property_readonly("solved", &InteractionSession::solved)
      .def_property_readonly("turns_taken", &InteractionSession::turns_taken)
      .def_property_readonly("solved_turn", &InteractionSession::solved_turn)
      .def_property_readonly("status",
                             [](const InteractionSession& s) {
                               return std::string(status_name(s.status()));
                             })
      .def_property_readonly("history", [](const InteractionSession& s) {
        py::list out;
        for (const TurnRecord& rec : s.history()) out.append(record_to_dict(rec));
        return out;
      });

  m.def(
      "run_session",
      [](const PolicyModel& model, const Vec& theta, const UpdateMechanism& mech,
         const TaskInstance& task, const std::string& method, double beta,
         int max_turns, bool greedy, double rl_step_size, std::uint64_t seed,
         const std::optional<py::function>& oracle) {
        const auto m_kind = method_from_name(method);
        if (!m_kind) throw ArgumentError("unknown method: " + method);
        SessionConfig cfg;
        cfg.beta = beta;
        cfg.max_turns = max_turns;
        cfg.greedy = greedy;
        cfg.rl_step_size = rl_step_size;
        FeedbackOracle fb;
        if (oracle) {
          fb = [fn = *oracle](int y, const TaskInstance& t) {
            return make_reward(fn(y, t).cast<double>(), false);
          };
        } else {
          fb = [](int y, const TaskInstance& t) { return rule_reward(y, t); };
        }
        return run_session(model, theta, mech, task, fb, cfg, seed, *m_kind);
      },
      py::arg("model"), py::arg("theta"), py::arg("mechanism"), py::arg("task"),
      py::arg("method") = "rosa", py::arg("beta") = 1.0, py::arg("max_turns") = 10,
      py::arg("greedy") = false, py::arg("rl_step_size") = 0.15,
      py::arg("seed") = 0, py::arg("oracle") = py::none(),
      "Run one feedback-driven session; the oracle is a callable "
      "(response, task) -> reward in [-1, 1], defaulting to exact match");

  // ---- harness ----------------------------------------------------------------

  m.def(
      "generate_suite",
      [](int task_count, int response_count, const std::string& family,
         double difficulty, double distractor_mass, std::uint64_t seed) {
        harness::SuiteSpec spec;
        spec.task_count = task_count;
        spec.response_count = response_count;
        const auto fam = family_from_name(family);
        if (!fam) throw ArgumentError("unknown policy family: " + family);
        spec.family = *fam;
        spec.difficulty = difficulty;
        spec.distractor_mass = distractor_mass;
        const auto tasks = harness::generate_suite(spec, seed);
        py::list out;
        for (const auto& g : tasks) {
          py::dict d;
          d["task"] = g.task;
          d["model"] = g.model;
          d["theta_base"] = g.theta_base;
          d["initial_distribution"] = g.initial_distribution;
          d["distractor"] = g.distractor;
          out.append(d);
        }
        return out;
      },
      py::arg("task_count"), py::arg("response_count") = 8,
      py::arg("family") = "tabular", py::arg("difficulty") = 0.2,
      py::arg("distractor_mass") = 0.7, py::arg("seed") = 1);

  m.def(
      "run_experiment",
      [](const std::map<std::string, std::string>& options) {
        harness::ExperimentConfig cfg;
        harness::apply_config(cfg, harness::ConfigMap(options.begin(), options.end()));
        const auto result = harness::run_experiment(cfg);
        py::list summaries;
        for (const auto& s : result.summaries) {
          py::dict d;
          d["method"] = std::string(method_name(s.method));
          d["beta"] = s.beta;
          d["seed"] = s.seed;
          d["accuracy"] = s.accuracy;
          d["correction_uplift"] =
              s.correction_uplift ? py::cast(*s.correction_uplift) : py::none();
          d["mean_turns_to_solve"] =
              s.mean_turns_to_solve ? py::cast(*s.mean_turns_to_solve) : py::none();
          d["newly_solved"] = s.newly_solved;
          summaries.append(d);
        }
        py::dict out;
        out["summaries"] = summaries;
        out["turns_csv"] = result.turns_csv;
        out["summary_csv"] = result.summary_csv;
        return out;
      },
      py::arg("options"),
      "Run a full experiment from config-file keys, e.g. "
      "{'suite.task_count': '50', 'run.out': 'out'}");
}
