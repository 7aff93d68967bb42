#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rnac/error.hpp"
#include "rnac/geometry.hpp"
#include "rnac/rng.hpp"

namespace rnac {

enum class Action : int { NoOp = 0, Up = 1, Down = 2, Left = 3, Right = 4 };
inline constexpr int kActionCount = 5;

inline const char* action_name(Action a) {
  switch (a) {
    case Action::NoOp: return "noop";
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
  }
  return "?";
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Interval&) const = default;
};

struct IntInterval {
  int lo = 0;
  int hi = 0;
  bool operator==(const IntInterval&) const = default;
};

// Per-episode randomization ranges and dynamics constants. Sizes and speeds
// are in world units (scene defaults to the unit square).
struct EnvConfig {
  SceneBounds scene{1.0, 1.0};
  IntInterval n_sensors{1, 5};
  IntInterval n_objects{1, 50};
  Interval object_size{0.02, 0.08};
  Interval sensor_view_size{0.10, 0.25};
  Interval sensor_speed{0.01, 0.05};
  Interval object_speed{0.0, 0.02};
  Interval time_scale{0.5, 2.0};
  IntInterval horizon{500, 1500};
  double p_toggle = 0.02;    // per-step probability of flipping moving flag
  double sigma_turn = 0.2;   // radians of heading noise per moving step
  double p_reverse = 0.005;  // per-step probability of reversing heading
  double spawn_rate = 0.01;  // expected boundary entries per step

  bool operator==(const EnvConfig&) const = default;
};

inline void validate_env_config(const EnvConfig& c) {
  check_scene(c.scene);
  auto range_ok = [](const Interval& r) { return r.lo <= r.hi; };
  auto int_range_ok = [](const IntInterval& r) { return r.lo <= r.hi; };
  if (!int_range_ok(c.n_sensors) || c.n_sensors.lo < 1 || c.n_sensors.hi > 5)
    throw ConfigError("env.n_sensors must be a range within [1,5]");
  if (!int_range_ok(c.n_objects) || c.n_objects.lo < 1 || c.n_objects.hi > 50)
    throw ConfigError("env.n_objects must be a range within [1,50]");
  if (!range_ok(c.object_size) || c.object_size.lo <= 0.0)
    throw ConfigError("env.object_size must be a positive range");
  if (!range_ok(c.sensor_view_size) || c.sensor_view_size.lo <= 0.0)
    throw ConfigError("env.sensor_view_size must be a positive range");
  if (c.sensor_view_size.hi > c.scene.width ||
      c.sensor_view_size.hi > c.scene.height)
    throw ConfigError("env.sensor_view_size must fit inside the scene");
  if (!range_ok(c.sensor_speed) || c.sensor_speed.lo <= 0.0)
    throw ConfigError("env.sensor_speed must be a positive range");
  if (!range_ok(c.object_speed) || c.object_speed.lo < 0.0)
    throw ConfigError("env.object_speed must be a non-negative range");
  if (!range_ok(c.time_scale) || c.time_scale.lo <= 0.0)
    throw ConfigError("env.time_scale must be a positive range");
  if (!int_range_ok(c.horizon) || c.horizon.lo < 1)
    throw ConfigError("env.horizon must be a positive range");
  if (c.p_toggle < 0.0 || c.p_toggle > 1.0)
    throw ConfigError("env.p_toggle must be in [0,1]");
  if (c.sigma_turn < 0.0) throw ConfigError("env.sigma_turn must be >= 0");
  if (c.p_reverse < 0.0 || c.p_reverse > 1.0)
    throw ConfigError("env.p_reverse must be in [0,1]");
  if (c.spawn_rate < 0.0) throw ConfigError("env.spawn_rate must be >= 0");
}

struct SimObject {
  int id = 0;
  Box box;
  double heading = 0.0;  // radians, +x axis = 0, +y = pi/2
  double speed = 0.0;    // world units per unscaled step
  bool moving = false;
  bool captured = false;

  bool operator==(const SimObject&) const = default;
};

struct Sensor {
  int id = 0;
  Box view;
  double speed = 0.0;

  bool operator==(const Sensor&) const = default;
};

struct EpisodeParams {
  SceneBounds scene;
  int n_sensors = 0;
  int n_objects = 0;  // initial population
  double time_scale = 1.0;
  int horizon = 0;
  double spawn_rate = 0.0;

  bool operator==(const EpisodeParams&) const = default;
};

struct StepResult {
  std::vector<int> rewards;        // first captures credited per sensor
  std::vector<int> newly_captured; // object ids captured this step
  bool done = false;
};

struct EnvState {
  EnvConfig config;  // runtime ranges for spawning and dynamics
  EpisodeParams params;
  std::vector<SimObject> objects;
  std::vector<Sensor> sensors;
  int t = 0;
  Rng rng;
  int next_object_id = 0;  // ids 0..next_object_id-1 have existed
  int captured_total = 0;  // distinct ids ever marked captured

  bool done() const { return t >= params.horizon; }

  bool operator==(const EnvState&) const = default;
};

// Applies one action to a sensor and keeps the view inside the scene.
inline void move_sensor(Sensor& sensor, Action action, double time_scale,
                        const SceneBounds& scene) {
  const double d = sensor.speed * time_scale;
  switch (action) {
    case Action::NoOp: break;
    case Action::Up: sensor.view.cy += d; break;
    case Action::Down: sensor.view.cy -= d; break;
    case Action::Left: sensor.view.cx -= d; break;
    case Action::Right: sensor.view.cx += d; break;
  }
  sensor.view = clamp_center_to_scene(sensor.view, scene);
}

// Advances one object by one step. Draw order is fixed: toggle, then (moving
// only) turn noise and reversal.
inline SimObject object_dynamics(SimObject o, Rng& rng, double time_scale,
                                 const EnvConfig& cfg) {
  if (rng.bernoulli(cfg.p_toggle)) o.moving = !o.moving;
  if (o.moving) {
    o.heading += rng.normal(0.0, cfg.sigma_turn);
    if (rng.bernoulli(cfg.p_reverse)) o.heading += M_PI;
    o.box.cx += o.speed * time_scale * std::cos(o.heading);
    o.box.cy += o.speed * time_scale * std::sin(o.heading);
  }
  return o;
}

inline EnvState init_episode(const EnvConfig& config, std::uint64_t seed) {
  validate_env_config(config);
  EnvState s;
  s.config = config;
  s.rng = Rng(seed);
  const SceneBounds& scene = config.scene;

  s.params.scene = scene;
  s.params.n_sensors =
      static_cast<int>(s.rng.uniform_int(config.n_sensors.lo, config.n_sensors.hi));
  s.params.n_objects =
      static_cast<int>(s.rng.uniform_int(config.n_objects.lo, config.n_objects.hi));
  s.params.time_scale = s.rng.uniform(config.time_scale.lo, config.time_scale.hi);
  s.params.horizon =
      static_cast<int>(s.rng.uniform_int(config.horizon.lo, config.horizon.hi));
  s.params.spawn_rate = config.spawn_rate;

  for (int i = 0; i < s.params.n_sensors; ++i) {
    Sensor sensor;
    sensor.id = i;
    sensor.view.w = s.rng.uniform(config.sensor_view_size.lo, config.sensor_view_size.hi);
    sensor.view.h = s.rng.uniform(config.sensor_view_size.lo, config.sensor_view_size.hi);
    sensor.speed = s.rng.uniform(config.sensor_speed.lo, config.sensor_speed.hi);
    sensor.view.cx = s.rng.uniform(0.5 * sensor.view.w, scene.width - 0.5 * sensor.view.w);
    sensor.view.cy = s.rng.uniform(0.5 * sensor.view.h, scene.height - 0.5 * sensor.view.h);
    s.sensors.push_back(sensor);
  }

  for (int i = 0; i < s.params.n_objects; ++i) {
    SimObject o;
    o.id = i;
    o.box.w = s.rng.uniform(config.object_size.lo, config.object_size.hi);
    o.box.h = s.rng.uniform(config.object_size.lo, config.object_size.hi);
    o.speed = s.rng.uniform(config.object_speed.lo, config.object_speed.hi);
    o.heading = s.rng.uniform(0.0, 2.0 * M_PI);
    o.moving = s.rng.bernoulli(0.5);
    // Initial boxes lie fully inside the scene; only later motion or boundary
    // entries produce partially visible objects.
    o.box.cx = s.rng.uniform(0.5 * o.box.w, scene.width - 0.5 * o.box.w);
    o.box.cy = s.rng.uniform(0.5 * o.box.h, scene.height - 0.5 * o.box.h);
    s.objects.push_back(o);
  }
  s.next_object_id = s.params.n_objects;
  return s;
}

namespace detail {

inline SimObject spawn_boundary_object(EnvState& s) {
  const EnvConfig& cfg = s.config;
  const SceneBounds& scene = cfg.scene;
  SimObject o;
  o.id = s.next_object_id++;
  o.box.w = s.rng.uniform(cfg.object_size.lo, cfg.object_size.hi);
  o.box.h = s.rng.uniform(cfg.object_size.lo, cfg.object_size.hi);
  o.speed = s.rng.uniform(cfg.object_speed.lo, cfg.object_speed.hi);
  o.moving = true;
  const int edge = static_cast<int>(s.rng.uniform_int(0, 3));
  const double along = s.rng.uniform01();
  double inward = 0.0;
  switch (edge) {
    case 0:  // left edge, entering rightwards
      o.box.cx = 0.0;
      o.box.cy = along * scene.height;
      inward = 0.0;
      break;
    case 1:  // right edge
      o.box.cx = scene.width;
      o.box.cy = along * scene.height;
      inward = M_PI;
      break;
    case 2:  // bottom edge
      o.box.cx = along * scene.width;
      o.box.cy = 0.0;
      inward = 0.5 * M_PI;
      break;
    default:  // top edge
      o.box.cx = along * scene.width;
      o.box.cy = scene.height;
      inward = -0.5 * M_PI;
      break;
  }
  o.heading = inward + s.rng.uniform(-0.25 * M_PI, 0.25 * M_PI);
  return o;
}

}  // namespace detail

// One simulation step. Order of effects: sensor moves, object dynamics and
// exits, boundary entries, capture marking, clock.
inline StepResult step(EnvState& s, const std::vector<Action>& actions) {
  if (s.done()) throw LifecycleError("step: episode is done");
  if (actions.size() != s.sensors.size())
    throw UsageError("step: expected " + std::to_string(s.sensors.size()) +
                     " actions, got " + std::to_string(actions.size()));

  StepResult result;
  result.rewards.assign(s.sensors.size(), 0);

  const double ts = s.params.time_scale;
  for (std::size_t i = 0; i < s.sensors.size(); ++i)
    move_sensor(s.sensors[i], actions[i], ts, s.params.scene);

  for (SimObject& o : s.objects) o = object_dynamics(o, s.rng, ts, s.config);
  std::erase_if(s.objects, [&](const SimObject& o) {
    return o.box.cx < 0.0 || o.box.cx > s.params.scene.width ||
           o.box.cy < 0.0 || o.box.cy > s.params.scene.height;
  });

  const int entries = s.rng.poisson(s.params.spawn_rate);
  for (int i = 0; i < entries; ++i)
    s.objects.push_back(detail::spawn_boundary_object(s));

  for (SimObject& o : s.objects) {
    if (o.captured) continue;
    for (const Sensor& sensor : s.sensors) {  // ascending id: ties go low
      if (contains(sensor.view, o.box)) {
        o.captured = true;
        ++s.captured_total;
        ++result.rewards[static_cast<std::size_t>(sensor.id)];
        result.newly_captured.push_back(o.id);
        break;
      }
    }
  }

  ++s.t;
  result.done = s.done();
  return result;
}

}  // namespace rnac
