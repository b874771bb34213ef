#include "rosa/feedback.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace rosa {

void TaskInstance::validate() const {
  if (response_count <= 0) throw ArgumentError("task: response_count must be positive");
  if (ground_truth < 0 || ground_truth >= response_count)
    throw ArgumentError("task: ground truth out of range");
  if (context < 0) throw ArgumentError("task: negative context id");
  if (user_policy) {
    if (user_policy->size() != static_cast<std::size_t>(response_count))
      throw ArgumentError("task: user policy length mismatch");
    double sum = 0.0;
    for (double p : *user_policy) {
      if (!(p >= 0.0)) throw ArgumentError("task: negative user policy mass");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ArgumentError("task: user policy not normalized");
  }
}

RewardSignal rule_reward(int y, const TaskInstance& task) {
  if (y < 0 || y >= task.response_count)
    throw ArgumentError("rule_reward: response out of range");
  return {y == task.ground_truth ? 1.0 : -1.0, RewardKind::Sparse};
}

RewardSignal dense_reward(int y, const TaskInstance& task, double sigma) {
  if (y < 0 || y >= task.response_count)
    throw ArgumentError("dense_reward: response out of range");
  if (sigma <= 0.0) sigma = static_cast<double>(task.response_count) / 8.0;
  const double dist = std::abs(y - task.ground_truth);
  double value = 2.0 * std::exp(-dist * dist / (2.0 * sigma * sigma)) - 1.0;
  value = std::clamp(value, -1.0, 1.0);
  return {value, RewardKind::Dense};
}

InteractiveOracle::InteractiveOracle(std::istream& in, std::ostream& out)
    : in_(&in), out_(&out) {}

RewardSignal InteractiveOracle::operator()(int y, const TaskInstance& task) {
  ++turn_;
  while (true) {
    *out_ << "task=" << task.task_id << " turn=" << turn_ << " response=" << y
          << " correct?[+/-/q] " << std::flush;
    char key = 0;
    if (!(*in_ >> key)) throw SessionAborted("end of interactive input");
    if (key == '+') return {1.0, RewardKind::Sparse};
    if (key == '-') return {-1.0, RewardKind::Sparse};
    if (key == 'q') throw SessionAborted("interactive session aborted");
    *out_ << "unrecognized key '" << key << "'\n";
  }
}

}  // namespace rosa
