#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "rnac/agent.hpp"
#include "rnac/observation.hpp"
#include "rnac/sim.hpp"

namespace rnac {

// Chooses one action per sensor each step. Implementations may keep
// per-episode state; begin_episode resets it.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void begin_episode(const EnvState& state) = 0;
  virtual std::vector<Action> act(const EnvState& state, Rng& rng) = 0;
};

// Shared-policy controller: every sensor is steered by the same network, each
// through its own history with itself marked as controlled.
class AgentController : public Controller {
 public:
  AgentController(ParameterStore params, ActionMode mode,
                  bool mean_aggregate = false)
      : params_(std::move(params)),
        mode_(mode),
        mean_aggregate_(mean_aggregate) {}

  void begin_episode(const EnvState& state) override {
    histories_.assign(state.sensors.size(), FrameHistory{});
  }

  std::vector<Action> act(const EnvState& state, Rng& rng) override {
    std::vector<Action> actions(state.sensors.size(), Action::NoOp);
    for (std::size_t k = 0; k < state.sensors.size(); ++k) {
      const int id = state.sensors[k].id;
      push_history(histories_[k], state, id);
      const RelationSet rel = encode(histories_[k], id);
      const PolicyOutput out =
          rn_forward(params_, rel, false, nullptr, mean_aggregate_);
      actions[k] = select_action(out, mode_, rng);
    }
    return actions;
  }

  const ParameterStore& params() const { return params_; }

 private:
  ParameterStore params_;
  ActionMode mode_;
  bool mean_aggregate_;
  std::vector<FrameHistory> histories_;
};

}  // namespace rnac
