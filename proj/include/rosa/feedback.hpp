#pragma once

/**
 * Per-turn reward oracles.
 *
 * rule_reward is the sparse exact-match signal (+1 on the ground truth,
 * -1 otherwise). dense_reward is a synthetic graded scorer: a Gaussian
 * bump in response-index distance, rescaled to [-1, +1] and equal to +1
 * exactly at the ground truth. InteractiveOracle reads +/- keystrokes
 * from an attached stream so a person can drive a session by hand.
 */

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "rosa/common.hpp"
#include "rosa/target.hpp"

namespace rosa {

struct TaskInstance {
  std::string task_id;
  int context = 0;
  int response_count = 0;
  int ground_truth = 0;                  // y*
  std::optional<Vec> user_policy;        // optional pi*_user over responses

  void validate() const;
};

// Raised when an interactive run is cancelled ('q' or end of input).
struct SessionAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using FeedbackOracle = std::function<RewardSignal(int, const TaskInstance&)>;

RewardSignal rule_reward(int y, const TaskInstance& task);

// sigma controls the width of the bump; default |Y| / 8 when <= 0.
RewardSignal dense_reward(int y, const TaskInstance& task, double sigma);

// Prompts `task=<id> turn=<k> response=<y> correct?[+/-/q]` on out and maps
// '+'/'-' keystrokes to rewards. Re-prompts on anything else; 'q' or EOF
// raises SessionAborted.
class InteractiveOracle {
 public:
  InteractiveOracle(std::istream& in, std::ostream& out);

  RewardSignal operator()(int y, const TaskInstance& task);

  int turns_seen() const { return turn_; }

 private:
  std::istream* in_;
  std::ostream* out_;
  int turn_ = 0;
};

}  // namespace rosa
