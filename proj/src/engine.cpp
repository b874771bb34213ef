#include "rosa/engine.hpp"

#include <chrono>
#include <cmath>

namespace rosa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Head weight block that a low-rank adapter attaches to.
const char* head_block_name(const PolicyModel& model) {
  switch (model.family()) {
    case PolicyFamily::LinearSoftmax: return "weight";
    case PolicyFamily::MlpSoftmax: return "head_weight";
    case PolicyFamily::TabularSoftmax: break;
  }
  throw ConfigError("low-rank-head requires a model with a linear head");
}

// Inner dimension of the head: features for linear, hidden units for mlp.
std::size_t head_in_dim(const PolicyModel& model) {
  return model.family() == PolicyFamily::LinearSoftmax
             ? static_cast<std::size_t>(model.feature_dim())
             : static_cast<std::size_t>(model.hidden_dim());
}

}  // namespace

std::string_view mechanism_name(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::FullParameter: return "full";
    case MechanismKind::LowRankHead: return "low-rank-head";
    case MechanismKind::HiddenShift: return "hidden-shift";
  }
  return "unknown";
}

std::optional<MechanismKind> mechanism_from_name(std::string_view name) {
  if (name == "full" || name == "full-parameter") return MechanismKind::FullParameter;
  if (name == "low-rank-head" || name == "lora") return MechanismKind::LowRankHead;
  if (name == "hidden-shift") return MechanismKind::HiddenShift;
  return std::nullopt;
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Static: return "static";
    case Method::RlBaseline: return "rl";
    case Method::Rosa: return "rosa";
  }
  return "unknown";
}

std::optional<Method> method_from_name(std::string_view name) {
  if (name == "static") return Method::Static;
  if (name == "rl" || name == "rl-baseline") return Method::RlBaseline;
  if (name == "rosa") return Method::Rosa;
  return std::nullopt;
}

void UpdateMechanism::validate_for(const PolicyModel& model) const {
  switch (kind) {
    case MechanismKind::FullParameter:
      return;
    case MechanismKind::LowRankHead:
      if (rank < 1) throw ConfigError("low-rank-head: rank must be >= 1");
      head_block_name(model);
      return;
    case MechanismKind::HiddenShift:
      if (model.family() != PolicyFamily::MlpSoftmax)
        throw ConfigError("hidden-shift requires an mlp-softmax model");
      return;
  }
}

std::size_t UpdateMechanism::adapted_dim(const PolicyModel& model) const {
  validate_for(model);
  switch (kind) {
    case MechanismKind::FullParameter:
      return model.param_count();
    case MechanismKind::LowRankHead: {
      const auto r = static_cast<std::size_t>(rank);
      return static_cast<std::size_t>(model.response_count()) * r +
             r * head_in_dim(model);
    }
    case MechanismKind::HiddenShift:
      return static_cast<std::size_t>(model.hidden_dim());
  }
  throw ConfigError("unreachable mechanism kind");
}

Vec UpdateMechanism::init_adapted(const PolicyModel& model, const Vec& theta_base,
                                  std::uint64_t seed) const {
  validate_for(model);
  if (theta_base.size() != model.param_count())
    throw ArgumentError("base parameter length mismatch");
  switch (kind) {
    case MechanismKind::FullParameter:
      return theta_base;
    case MechanismKind::LowRankHead: {
      Vec adapted(adapted_dim(model), 0.0);
      // A nonzero, B zero: the initial adapter is a no-op with live gradient.
      const std::size_t a_size =
          static_cast<std::size_t>(model.response_count()) *
          static_cast<std::size_t>(rank);
      Rng rng(seed);
      for (std::size_t i = 0; i < a_size; ++i) adapted[i] = rng.uniform(-0.5, 0.5);
      return adapted;
    }
    case MechanismKind::HiddenShift:
      return Vec(adapted_dim(model), 0.0);
  }
  throw ConfigError("unreachable mechanism kind");
}

Vec effective_params(const UpdateMechanism& mech, const PolicyModel& model,
                     const Vec& theta_base, const Vec& adapted) {
  mech.validate_for(model);
  if (theta_base.size() != model.param_count())
    throw ArgumentError("base parameter length mismatch");
  if (adapted.size() != mech.adapted_dim(model))
    throw ArgumentError("adapted parameter length mismatch");

  switch (mech.kind) {
    case MechanismKind::FullParameter:
      return adapted;
    case MechanismKind::LowRankHead: {
      Vec theta = theta_base;
      const std::size_t ny = static_cast<std::size_t>(model.response_count());
      const std::size_t nr = static_cast<std::size_t>(mech.rank);
      const std::size_t nh = head_in_dim(model);
      const double scaling = mech.alpha / static_cast<double>(mech.rank);
      const double* a = adapted.data();            // ny x nr
      const double* b = adapted.data() + ny * nr;  // nr x nh
      auto head = model.layout().slice(theta, head_block_name(model));
      for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t c = 0; c < nr; ++c) {
          const double ajc = scaling * a[j * nr + c];
          if (ajc == 0.0) continue;
          for (std::size_t i = 0; i < nh; ++i)
            head[j * nh + i] += ajc * b[c * nh + i];
        }
      }
      return theta;
    }
    case MechanismKind::HiddenShift:
      return theta_base;  // shift acts on activations, not weights
  }
  throw ConfigError("unreachable mechanism kind");
}

Vec mechanism_distribution(const UpdateMechanism& mech, const PolicyModel& model,
                           const Vec& theta_base, const Vec& adapted, int x) {
  switch (mech.kind) {
    case MechanismKind::FullParameter:
      if (adapted.size() != model.param_count())
        throw ArgumentError("adapted parameter length mismatch");
      return model.distribution(adapted, x);
    case MechanismKind::HiddenShift:
      if (adapted.size() != mech.adapted_dim(model))
        throw ArgumentError("adapted parameter length mismatch");
      return model.distribution_shifted(theta_base, x, adapted);
    case MechanismKind::LowRankHead:
      return model.distribution(effective_params(mech, model, theta_base, adapted),
                                x);
  }
  throw ConfigError("unreachable mechanism kind");
}

Vec mechanism_gradient(const UpdateMechanism& mech, const PolicyModel& model,
                       const Vec& theta_base, const Vec& adapted, int x, int y) {
  switch (mech.kind) {
    case MechanismKind::FullParameter:
      if (adapted.size() != model.param_count())
        throw ArgumentError("adapted parameter length mismatch");
      return model.grad_prob(adapted, x, y);
    case MechanismKind::HiddenShift:
      if (adapted.size() != mech.adapted_dim(model))
        throw ArgumentError("adapted parameter length mismatch");
      return model.grad_prob_shift(theta_base, x, y, adapted);
    case MechanismKind::LowRankHead: {
      const Vec theta = effective_params(mech, model, theta_base, adapted);
      const Vec full = model.grad_prob(theta, x, y);
      const auto head = model.layout().block(head_block_name(model));
      const std::size_t ny = static_cast<std::size_t>(model.response_count());
      const std::size_t nr = static_cast<std::size_t>(mech.rank);
      const std::size_t nh = head_in_dim(model);
      const double scaling = mech.alpha / static_cast<double>(mech.rank);
      const double* gw = full.data() + head.offset;  // ny x nh
      const double* a = adapted.data();
      const double* b = adapted.data() + ny * nr;
      Vec grad(adapted.size(), 0.0);
      // dpi/dA[j,c] = s * sum_i gw[j,i] B[c,i];
      // dpi/dB[c,i] = s * sum_j A[j,c] gw[j,i]
      for (std::size_t j = 0; j < ny; ++j) {
        for (std::size_t c = 0; c < nr; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < nh; ++i) acc += gw[j * nh + i] * b[c * nh + i];
          grad[j * nr + c] = scaling * acc;
        }
      }
      for (std::size_t c = 0; c < nr; ++c) {
        for (std::size_t i = 0; i < nh; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < ny; ++j) acc += a[j * nr + c] * gw[j * nh + i];
          grad[ny * nr + c * nh + i] = scaling * acc;
        }
      }
      return grad;
    }
  }
  throw ConfigError("unreachable mechanism kind");
}

void SessionConfig::validate() const {
  if (!(beta > 0.0)) throw ArgumentError("beta must be positive");
  if (max_turns < 1) throw ArgumentError("max_turns must be >= 1");
  if (rl_step_size < 0.0) throw ArgumentError("rl step size must be >= 0");
  solver.validate();
}

InteractionSession::InteractionSession(PolicyModel model, Vec theta_base,
                                       UpdateMechanism mech, TaskInstance task,
                                       SessionConfig cfg, std::uint64_t seed)
    : model_(std::move(model)),
      theta_base_(std::move(theta_base)),
      mech_(mech),
      task_(std::move(task)),
      cfg_(cfg),
      rng_(derive_seed(seed, {0x5E5510ULL})) {
  cfg_.validate();
  task_.validate();
  if (task_.response_count != model_.response_count())
    throw ConfigError("task response count does not match the model");
  if (task_.context >= model_.context_count())
    throw ConfigError("task context id does not exist in the model");
  adapted_ = mech_.init_adapted(model_, theta_base_, derive_seed(seed, {0xADA97ULL}));
  dist_initial_ = current_distribution();
}

Vec InteractionSession::current_distribution() const {
  return mechanism_distribution(mech_, model_, theta_base_, adapted_,
                                task_.context);
}

double InteractionSession::current_prob(int y) const {
  if (y < 0 || y >= model_.response_count())
    throw ArgumentError("response id out of range");
  return current_distribution()[static_cast<std::size_t>(y)];
}

Vec InteractionSession::effective_params() const {
  return rosa::effective_params(mech_, model_, theta_base_, adapted_);
}

int InteractionSession::generate() {
  if (status_ != SessionStatus::Active)
    throw ArgumentError("generate called on a finished session");
  const Vec dist = current_distribution();
  if (cfg_.greedy) {
    return static_cast<int>(
        std::max_element(dist.begin(), dist.end()) - dist.begin());
  }
  return sample_index(dist, rng_);
}

Vec InteractionSession::adapted_gradient(int y) const {
  return mechanism_gradient(mech_, model_, theta_base_, adapted_, task_.context, y);
}

TurnRecord& InteractionSession::begin_turn(int y, const RewardSignal& r) {
  if (status_ != SessionStatus::Active)
    throw ArgumentError("turn recorded on a finished session");
  if (y < 0 || y >= model_.response_count())
    throw ArgumentError("response id out of range");
  r.validate();
  TurnRecord rec;
  rec.turn = static_cast<int>(history_.size()) + 1;
  rec.response = y;
  rec.reward = r.value;
  rec.prob_before = current_prob(y);
  const TargetValue tv = practical_target(rec.prob_before, r, cfg_.beta);
  rec.z = tv.z;
  rec.target_prob = tv.target_prob;
  history_.push_back(std::move(rec));
  return history_.back();
}

void InteractionSession::finish_turn(TurnRecord& rec, const RewardSignal& r) {
  rec.dist_after = current_distribution();
  rec.prob_after = rec.dist_after[static_cast<std::size_t>(rec.response)];
  if (task_.user_policy)
    rec.kl_to_user = kl(*task_.user_policy, rec.dist_after);
  if (r.value >= 1.0) {
    status_ = SessionStatus::Solved;
  } else if (static_cast<int>(history_.size()) >= cfg_.max_turns) {
    status_ = SessionStatus::Exhausted;
  }
}

const TurnRecord& InteractionSession::observe_only(int y, const RewardSignal& r) {
  TurnRecord& rec = begin_turn(y, r);
  finish_turn(rec, r);
  return rec;
}

const TurnRecord& InteractionSession::adapt_step(int y, const RewardSignal& r) {
  TurnRecord& rec = begin_turn(y, r);
  const auto start = Clock::now();

  const std::size_t p = adapted_.size();
  std::vector<Vec> rows;
  Vec residuals;
  if (cfg_.full_vector_residual) {
    const Vec dist = current_distribution();
    const Vec target = practical_target_vector(dist, y, r, cfg_.beta);
    rows.reserve(dist.size());
    residuals.reserve(dist.size());
    for (int j = 0; j < model_.response_count(); ++j) {
      rows.push_back(adapted_gradient(j));
      residuals.push_back(target[static_cast<std::size_t>(j)] -
                          dist[static_cast<std::size_t>(j)]);
    }
  } else {
    rows.push_back(adapted_gradient(y));
    residuals.push_back(rec.target_prob - rec.prob_before);
  }

  bool all_zero = true;
  for (const Vec& g : rows) {
    if (norm2(g) != 0.0) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) {
    // Degenerate gradient: record a no-op instead of failing the run.
    rec.degenerate = true;
    rec.update_seconds = seconds_since(start);
    finish_turn(rec, r);
    return rec;
  }

  SolverConfig solver = cfg_.solver;
  if (solver.max_iterations == 0)
    solver.max_iterations = static_cast<int>(std::min<std::size_t>(p, 100));
  const SolveResult sol = solve_normal_equations(rows_operator(rows), residuals, solver);

  axpy(1.0, sol.delta, adapted_);
  rec.delta_norm = norm2(sol.delta);
  rec.solver_iterations = sol.iterations;
  rec.updated = true;
  rec.update_seconds = seconds_since(start);
  finish_turn(rec, r);
  return rec;
}

const TurnRecord& InteractionSession::rl_baseline_step(int y, const RewardSignal& r,
                                                       double step_size) {
  if (step_size < 0.0) throw ArgumentError("rl step size must be >= 0");
  TurnRecord& rec = begin_turn(y, r);
  const auto start = Clock::now();

  // grad log pi = grad pi / pi; the KL term's gradient vanishes at the
  // current parameters, leaving the single-sample reward term.
  const Vec g = adapted_gradient(y);
  const double gn = norm2(g);
  if (gn == 0.0 || step_size == 0.0) {
    rec.degenerate = (gn == 0.0);
    rec.update_seconds = seconds_since(start);
    finish_turn(rec, r);
    return rec;
  }
  const double coeff = step_size * r.value / rec.prob_before;
  axpy(coeff, g, adapted_);
  rec.delta_norm = std::abs(coeff) * gn;
  rec.updated = true;
  rec.update_seconds = seconds_since(start);
  finish_turn(rec, r);
  return rec;
}

int InteractionSession::solved_turn() const {
  if (status_ != SessionStatus::Solved) return 0;
  return static_cast<int>(history_.size());
}

TurnRecord& InteractionSession::last_record() {
  if (history_.empty()) throw ArgumentError("session has no recorded turns");
  return history_.back();
}

InteractionSession run_session(const PolicyModel& model, const Vec& theta_base,
                               const UpdateMechanism& mech, const TaskInstance& task,
                               const FeedbackOracle& oracle, const SessionConfig& cfg,
                               std::uint64_t seed, Method method) {
  InteractionSession session(model, theta_base, mech, task, cfg, seed);
  while (session.status() == SessionStatus::Active) {
    const auto start = Clock::now();
    const int y = session.generate();
    RewardSignal r;
    try {
      r = oracle(y, task);
    } catch (const SessionAborted&) {
      session.mark_aborted();
      break;
    }
    const double infer_seconds = seconds_since(start);

    if (r.value >= 1.0) {
      session.observe_only(y, r);  // success terminates before any update
    } else {
      switch (method) {
        case Method::Static: session.observe_only(y, r); break;
        case Method::RlBaseline:
          session.rl_baseline_step(y, r, cfg.rl_step_size);
          break;
        case Method::Rosa: session.adapt_step(y, r); break;
      }
    }
    session.last_record().infer_seconds = infer_seconds;
  }
  return session;
}

LinearizedTrace linearized_trace(const InteractionSession& session) {
  LinearizedTrace trace;
  trace.dist_initial = session.initial_distribution();
  for (const TurnRecord& rec : session.history()) {
    if (!rec.updated && !rec.degenerate) continue;  // success/static turns
    LinearizedTurn t;
    t.y_k = rec.response;
    t.reward = rec.reward;
    t.delta_norm = rec.delta_norm;
    t.dist_after = rec.dist_after;
    trace.turns.push_back(std::move(t));
  }
  return trace;
}

}  // namespace rosa
