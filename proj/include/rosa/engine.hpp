#pragma once

/**
 * One-step adaptation engine.
 *
 * Runs the per-turn loop: sample a response, receive a reward, build the
 * re-weighted target for the observed response, and take one linearized
 * least-squares step of the adapted coordinates toward it (conjugate
 * gradient on the normal equations, matrix-free). Three update mechanisms
 * choose which coordinates move:
 *
 *   full-parameter  the whole flat vector
 *   low-rank-head   a rank-r adapter (alpha/r) * A * B added to the final
 *                   linear head; only A and B move
 *   hidden-shift    an additive vector on the mlp hidden activation
 *
 * A single-sample policy-gradient baseline (rl_baseline_step) and a
 * no-update baseline are provided for method comparisons.
 */

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "rosa/common.hpp"
#include "rosa/feedback.hpp"
#include "rosa/metrics.hpp"
#include "rosa/policy.hpp"
#include "rosa/solver.hpp"
#include "rosa/target.hpp"

namespace rosa {

enum class MechanismKind { FullParameter, LowRankHead, HiddenShift };

std::string_view mechanism_name(MechanismKind kind);
std::optional<MechanismKind> mechanism_from_name(std::string_view name);

struct UpdateMechanism {
  MechanismKind kind = MechanismKind::FullParameter;
  int rank = 1;        // low-rank only
  double alpha = 8.0;  // low-rank only

  static UpdateMechanism full_parameter() { return {}; }
  static UpdateMechanism low_rank_head(int rank = 1, double alpha = 8.0) {
    return {MechanismKind::LowRankHead, rank, alpha};
  }
  static UpdateMechanism hidden_shift() {
    return {MechanismKind::HiddenShift, 1, 0.0};
  }

  // Throws ConfigError when the mechanism cannot attach to the model
  // (low-rank needs a linear head, hidden-shift needs an mlp).
  void validate_for(const PolicyModel& model) const;

  // Length of the adapted coordinate vector for this mechanism.
  std::size_t adapted_dim(const PolicyModel& model) const;

  // Fresh adapted coordinates. Full-parameter copies the base; low-rank
  // draws A from seeded uniform(-0.5, 0.5) and zeroes B so the initial
  // adapter contributes nothing but has a usable gradient; hidden-shift
  // starts at zero.
  Vec init_adapted(const PolicyModel& model, const Vec& theta_base,
                   std::uint64_t seed) const;
};

// Full parameter vector implied by (mechanism, base, adapted). Hidden-shift
// leaves the weights untouched (the shift acts on activations at forward
// time), so it returns the base unchanged.
Vec effective_params(const UpdateMechanism& mech, const PolicyModel& model,
                     const Vec& theta_base, const Vec& adapted);

// Response distribution under (mechanism, base, adapted).
Vec mechanism_distribution(const UpdateMechanism& mech, const PolicyModel& model,
                           const Vec& theta_base, const Vec& adapted, int x);

// Gradient of pi(y|x) with respect to the mechanism's adapted coordinates.
Vec mechanism_gradient(const UpdateMechanism& mech, const PolicyModel& model,
                       const Vec& theta_base, const Vec& adapted, int x, int y);

enum class Method { Static, RlBaseline, Rosa };

std::string_view method_name(Method m);
std::optional<Method> method_from_name(std::string_view name);

struct TurnRecord {
  int turn = 0;
  int response = -1;
  double reward = 0.0;
  double prob_before = 0.0;
  double z = 1.0;             // single-sample partition function for this turn
  double target_prob = 0.0;   // re-weighted target for the observed response
  double delta_norm = 0.0;    // |adapted step|_2
  double prob_after = 0.0;
  int solver_iterations = 0;
  std::optional<double> kl_to_user;  // KL(user || policy) after the turn
  bool updated = false;
  bool degenerate = false;    // zero gradient; update skipped
  double infer_seconds = 0.0;
  double update_seconds = 0.0;
  Vec dist_after;             // full post-turn distribution (diagnostics)
};

enum class SessionStatus { Active, Solved, Exhausted, Aborted };

struct SessionConfig {
  double beta = 1.0;
  int max_turns = 10;
  bool greedy = false;
  bool full_vector_residual = false;  // target every response, not just y_k
  double rl_step_size = 0.15;
  SolverConfig solver;

  void validate() const;
};

class InteractionSession {
 public:
  InteractionSession(PolicyModel model, Vec theta_base, UpdateMechanism mech,
                     TaskInstance task, SessionConfig cfg, std::uint64_t seed);

  // Draw the next response (greedy argmax or a seeded sample).
  int generate();

  // Record a turn without touching parameters (static baseline, success turns).
  const TurnRecord& observe_only(int y, const RewardSignal& r);

  // One linearized least-squares step toward the re-weighted target.
  const TurnRecord& adapt_step(int y, const RewardSignal& r);

  // Single-sample policy gradient: adapted += eta * r * grad log pi(y|x).
  const TurnRecord& rl_baseline_step(int y, const RewardSignal& r,
                                     double step_size);

  Vec current_distribution() const;
  double current_prob(int y) const;
  Vec effective_params() const;

  const PolicyModel& model() const { return model_; }
  const TaskInstance& task() const { return task_; }
  const SessionConfig& config() const { return cfg_; }
  const UpdateMechanism& mechanism() const { return mech_; }
  const Vec& theta_base() const { return theta_base_; }
  const Vec& adapted() const { return adapted_; }
  const Vec& initial_distribution() const { return dist_initial_; }

  const std::vector<TurnRecord>& history() const { return history_; }
  TurnRecord& last_record();
  SessionStatus status() const { return status_; }
  bool solved() const { return status_ == SessionStatus::Solved; }
  int turns_taken() const { return static_cast<int>(history_.size()); }
  // Turn at which the task was solved; 0 when unsolved.
  int solved_turn() const;

  void mark_aborted() { status_ = SessionStatus::Aborted; }

 private:
  // Gradient of pi(y|x) with respect to the adapted coordinates.
  Vec adapted_gradient(int y) const;
  TurnRecord& begin_turn(int y, const RewardSignal& r);
  void finish_turn(TurnRecord& rec, const RewardSignal& r);

  PolicyModel model_;
  Vec theta_base_;
  UpdateMechanism mech_;
  TaskInstance task_;
  SessionConfig cfg_;
  Rng rng_;
  Vec adapted_;
  Vec dist_initial_;
  std::vector<TurnRecord> history_;
  SessionStatus status_ = SessionStatus::Active;
};

// Algorithm loop: generate, score, stop on success, otherwise update per the
// method. The oracle raising SessionAborted yields an Aborted session.
InteractionSession run_session(const PolicyModel& model, const Vec& theta_base,
                               const UpdateMechanism& mech, const TaskInstance& task,
                               const FeedbackOracle& oracle, const SessionConfig& cfg,
                               std::uint64_t seed, Method method = Method::Rosa);

// Trace view of a completed session for the bound checks.
LinearizedTrace linearized_trace(const InteractionSession& session);

}  // namespace rosa
