#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rnac/controller.hpp"
#include "rnac/error.hpp"
#include "rnac/rng.hpp"
#include "rnac/sim.hpp"

namespace rnac {

// Uniform over all five actions, or over the four movement actions when the
// do-nothing action is excluded.
inline Action random_policy(bool include_noop, Rng& rng) {
  if (include_noop) return static_cast<Action>(rng.uniform_int(0, 4));
  return static_cast<Action>(rng.uniform_int(1, 4));
}

class RandomController : public Controller {
 public:
  explicit RandomController(bool include_noop) : include_noop_(include_noop) {}
  void begin_episode(const EnvState&) override {}
  std::vector<Action> act(const EnvState& state, Rng& rng) override {
    std::vector<Action> actions(state.sensors.size());
    for (auto& a : actions) a = random_policy(include_noop_, rng);
    return actions;
  }

 private:
  bool include_noop_;
};

// Column-sweep state machine. The sweep side-steps once at each top/bottom
// contact; side-step direction reverses at the scene's left/right edges so
// the pattern is a boustrophedon. seek_x, when finite, makes the sensor move
// to its assigned starting column before sweeping (used to stagger several
// sensors).
struct LawnmowerState {
  enum class Phase { MovingUp, MovingDown };
  Phase phase = Phase::MovingUp;
  bool side_step_pending = false;
  bool sweeping_right = true;
  double seek_x = std::numeric_limits<double>::quiet_NaN();
};

// One decision of the sweep; `step` is the displacement one action produces
// (sensor speed times the episode time scale).
inline std::pair<Action, LawnmowerState> lawnmower_policy(
    LawnmowerState state, const Sensor& sensor, const SceneBounds& scene,
    double step) {
  constexpr double kEps = 1e-9;
  if (std::isfinite(state.seek_x)) {
    const double dx = state.seek_x - sensor.view.cx;
    if (std::fabs(dx) > 0.5 * step) {
      return {dx > 0.0 ? Action::Right : Action::Left, state};
    }
    state.seek_x = std::numeric_limits<double>::quiet_NaN();
  }
  if (state.side_step_pending) {
    state.side_step_pending = false;
    state.phase = state.phase == LawnmowerState::Phase::MovingUp
                      ? LawnmowerState::Phase::MovingDown
                      : LawnmowerState::Phase::MovingUp;
    if (state.sweeping_right && sensor.view.right() >= scene.width - kEps)
      state.sweeping_right = false;
    else if (!state.sweeping_right && sensor.view.left() <= kEps)
      state.sweeping_right = true;
    return {state.sweeping_right ? Action::Right : Action::Left, state};
  }
  if (state.phase == LawnmowerState::Phase::MovingUp) {
    if (sensor.view.top() >= scene.height - kEps) state.side_step_pending = true;
    return {Action::Up, state};
  }
  if (sensor.view.bottom() <= kEps) state.side_step_pending = true;
  return {Action::Down, state};
}

class LawnmowerController : public Controller {
 public:
  void begin_episode(const EnvState& state) override {
    states_.assign(state.sensors.size(), LawnmowerState{});
    // Several sweepers start in evenly spaced columns; a lone sweeper starts
    // where it stands.
    const std::size_t m = state.sensors.size();
    if (m > 1) {
      for (std::size_t k = 0; k < m; ++k) {
        const double frac = (static_cast<double>(k) + 0.5) / static_cast<double>(m);
        states_[k].seek_x = frac * state.params.scene.width;
      }
    }
  }

  std::vector<Action> act(const EnvState& state, Rng&) override {
    std::vector<Action> actions(state.sensors.size(), Action::NoOp);
    for (std::size_t k = 0; k < state.sensors.size(); ++k) {
      const Sensor& sensor = state.sensors[k];
      const double step = sensor.speed * state.params.time_scale;
      auto [action, next] =
          lawnmower_policy(states_[k], sensor, state.params.scene, step);
      actions[k] = action;
      states_[k] = next;
    }
    return actions;
  }

 private:
  std::vector<LawnmowerState> states_;
};

struct EvalEpisode {
  int objects_total = 0;
  int objects_captured = 0;
};

struct EvalReport {
  int episodes = 0;
  double capture_pct = 0.0;       // pooled: 100 * sum(captured) / sum(total)
  double capture_pct_mean = 0.0;  // mean of per-episode percentages
  double stderr_pct = 0.0;        // standard error of the per-episode mean
  std::vector<EvalEpisode> per_episode;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

// Runs one full episode and reports how many of the objects that ever existed
// were captured.
inline EvalEpisode run_episode(Controller& controller, const EnvConfig& config,
                               std::uint64_t episode_seed) {
  EnvState env = init_episode(config, episode_seed);
  Rng action_rng(derive_seed(episode_seed, 0x5eed));
  controller.begin_episode(env);
  while (!env.done()) {
    const std::vector<Action> actions = controller.act(env, action_rng);
    step(env, actions);
  }
  return EvalEpisode{env.next_object_id, env.captured_total};
}

// Table-style evaluation: `episodes` fresh seeded episodes, percentage of all
// objects ever present that were captured. Episodes run in parallel; the
// report is assembled in episode order so results do not depend on thread
// scheduling.
inline EvalReport evaluate(const ControllerFactory& make_controller,
                           const EnvConfig& config, int episodes,
                           std::uint64_t seed, int n_threads = 1) {
  if (episodes < 1) throw UsageError("evaluate: episodes must be >= 1");
  validate_env_config(config);
  EvalReport report;
  report.episodes = episodes;
  report.per_episode.assign(static_cast<std::size_t>(episodes), EvalEpisode{});

  std::atomic<int> next{0};
  auto run_range = [&]() {
    auto controller = make_controller();
    for (int e = next.fetch_add(1); e < episodes; e = next.fetch_add(1)) {
      report.per_episode[static_cast<std::size_t>(e)] =
          run_episode(*controller, config, derive_seed(seed, static_cast<std::uint64_t>(e)));
    }
  };
  if (n_threads <= 1) {
    run_range();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(run_range);
    for (auto& th : pool) th.join();
  }

  long long total = 0, captured = 0;
  double mean = 0.0;
  std::vector<double> pcts;
  pcts.reserve(report.per_episode.size());
  for (const EvalEpisode& ep : report.per_episode) {
    total += ep.objects_total;
    captured += ep.objects_captured;
    const double pct =
        ep.objects_total > 0
            ? 100.0 * static_cast<double>(ep.objects_captured) / ep.objects_total
            : 0.0;
    pcts.push_back(pct);
    mean += pct;
  }
  report.capture_pct = total > 0 ? 100.0 * static_cast<double>(captured) /
                                       static_cast<double>(total)
                                 : 0.0;
  mean /= static_cast<double>(pcts.size());
  report.capture_pct_mean = mean;
  if (pcts.size() > 1) {
    double var = 0.0;
    for (double p : pcts) var += (p - mean) * (p - mean);
    var /= static_cast<double>(pcts.size() - 1);
    report.stderr_pct = std::sqrt(var / static_cast<double>(pcts.size()));
  }
  return report;
}

// Named baseline lookup used by the CLI and tests.
inline ControllerFactory baseline_factory(const std::string& name) {
  if (name == "random")
    return [] { return std::make_unique<RandomController>(false); };
  if (name == "random-noop")
    return [] { return std::make_unique<RandomController>(true); };
  if (name == "lawnmower")
    return [] { return std::make_unique<LawnmowerController>(); };
  throw UsageError("unknown baseline '" + name +
                   "' (expected random, random-noop, or lawnmower)");
}

}  // namespace rnac
