#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnac/baselines.hpp"
#include "rnac/controller.hpp"
#include "rnac/error.hpp"
#include "rnac/geometry.hpp"
#include "rnac/sim.hpp"

namespace rnac {

struct TraceDetection {
  int track_id = 0;
  Box box;

  bool operator==(const TraceDetection&) const = default;
};

struct TraceFrame {
  int t = 0;
  std::vector<TraceDetection> detections;

  bool operator==(const TraceFrame&) const = default;
};

// Externally recorded detection/track boxes: a scene-bounds header followed
// by per-step detections. Tracks may flicker in and out, as real trackers
// do.
struct TraceEpisode {
  SceneBounds scene;
  std::vector<TraceFrame> frames;

  bool operator==(const TraceEpisode&) const = default;
};

// Line-delimited records. First line {"scene_w":..,"scene_h":..}; each
// further line {"t":..,"track_id":..,"cx":..,"cy":..,"w":..,"h":..} with t
// non-decreasing; equal t values belong to one frame.
inline TraceEpisode load_trace(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open trace: " + path);

  TraceEpisode episode;
  std::string line;
  int line_no = 0;
  bool have_header = false;

  auto fail = [&](const std::string& msg) -> void {
    throw FormatError(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) fail("record must be an object");

    if (!have_header) {
      if (!j.contains("scene_w") || !j.contains("scene_h"))
        fail("first record must be the {scene_w, scene_h} header");
      episode.scene.width = j.at("scene_w").get<double>();
      episode.scene.height = j.at("scene_h").get<double>();
      try {
        check_scene(episode.scene);
      } catch (const GeometryError& e) {
        fail(e.what());
      }
      have_header = true;
      continue;
    }

    for (const char* key : {"t", "track_id", "cx", "cy", "w", "h"})
      if (!j.contains(key)) fail(std::string("missing field ") + key);

    const int t = j.at("t").get<int>();
    TraceDetection d;
    d.track_id = j.at("track_id").get<int>();
    d.box = Box{j.at("cx").get<double>(), j.at("cy").get<double>(),
                j.at("w").get<double>(), j.at("h").get<double>()};
    try {
      check_box(d.box);
    } catch (const GeometryError& e) {
      fail(e.what());
    }

    if (episode.frames.empty() || episode.frames.back().t < t) {
      episode.frames.push_back(TraceFrame{t, {}});
    } else if (episode.frames.back().t > t) {
      fail("non-monotonic t: " + std::to_string(t) + " after " +
           std::to_string(episode.frames.back().t));
    }
    for (const TraceDetection& prev : episode.frames.back().detections)
      if (prev.track_id == d.track_id)
        fail("duplicate track_id " + std::to_string(d.track_id) +
             " in frame t=" + std::to_string(t));
    episode.frames.back().detections.push_back(d);
  }
  if (!have_header) throw FormatError(path + ": empty trace (no header)");
  return episode;
}

inline void save_trace(const TraceEpisode& episode, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << std::setprecision(17);
  os << "{\"scene_w\":" << episode.scene.width
     << ",\"scene_h\":" << episode.scene.height << "}\n";
  for (const TraceFrame& f : episode.frames)
    for (const TraceDetection& d : f.detections)
      os << "{\"t\":" << f.t << ",\"track_id\":" << d.track_id
         << ",\"cx\":" << d.box.cx << ",\"cy\":" << d.box.cy
         << ",\"w\":" << d.box.w << ",\"h\":" << d.box.h << "}\n";
  if (!os) throw IoError("write failed: " + path);
}

// Drives a sim episode with no-op sensors and records each object as a
// detection, dropping each with the given probability. Exercises the replay
// path without a real detector.
inline TraceEpisode synth_trace(const EnvConfig& config, std::uint64_t seed,
                                int steps, double detection_dropout) {
  if (detection_dropout < 0.0 || detection_dropout >= 1.0)
    throw UsageError("synth_trace: dropout must be in [0,1)");
  EnvState env = init_episode(config, seed);
  Rng drop_rng(derive_seed(seed, 0xD207));
  TraceEpisode episode;
  episode.scene = config.scene;
  const std::vector<Action> noops(env.sensors.size(), Action::NoOp);
  for (int t = 0; t < steps && !env.done(); ++t) {
    TraceFrame frame;
    frame.t = t;
    for (const SimObject& o : env.objects)
      if (!drop_rng.bernoulli(detection_dropout))
        frame.detections.push_back(TraceDetection{o.id, o.box});
    episode.frames.push_back(std::move(frame));
    step(env, noops);
  }
  return episode;
}

// Replays recorded detections against simulated sensors: objects follow the
// trace verbatim, sensor motion and capture marking work exactly as in the
// simulator, and the object universe is the set of distinct track ids.
inline EvalReport replay(
    const TraceEpisode& trace, Controller& controller,
    const EnvConfig& config, int n_sensors, std::uint64_t seed,
    const std::function<void(const EnvState&, int)>& on_frame = {}) {
  if (trace.frames.empty()) throw UsageError("replay: trace has no frames");
  if (n_sensors < 1) throw UsageError("replay: n_sensors must be >= 1");

  // Sensors are drawn the way init_episode draws them, inside the trace's
  // scene bounds.
  Rng rng(seed);
  EnvState state;
  state.config = config;
  state.params.scene = trace.scene;
  state.params.n_sensors = n_sensors;
  state.params.n_objects = 0;
  state.params.time_scale = rng.uniform(config.time_scale.lo, config.time_scale.hi);
  state.params.horizon = static_cast<int>(trace.frames.size());
  state.params.spawn_rate = 0.0;
  for (int i = 0; i < n_sensors; ++i) {
    Sensor sensor;
    sensor.id = i;
    sensor.view.w = rng.uniform(config.sensor_view_size.lo, config.sensor_view_size.hi);
    sensor.view.h = rng.uniform(config.sensor_view_size.lo, config.sensor_view_size.hi);
    sensor.speed = rng.uniform(config.sensor_speed.lo, config.sensor_speed.hi);
    sensor.view.cx =
        rng.uniform(0.5 * sensor.view.w, trace.scene.width - 0.5 * sensor.view.w);
    sensor.view.cy =
        rng.uniform(0.5 * sensor.view.h, trace.scene.height - 0.5 * sensor.view.h);
    state.sensors.push_back(sensor);
  }

  std::set<int> seen_ids;
  std::set<int> captured_ids;
  auto load_frame = [&](std::size_t idx) {
    state.objects.clear();
    for (const TraceDetection& d : trace.frames[idx].detections) {
      seen_ids.insert(d.track_id);
      SimObject o;
      o.id = d.track_id;
      o.box = d.box;
      o.captured = captured_ids.count(d.track_id) > 0;
      state.objects.push_back(o);
    }
  };

  Rng action_rng(derive_seed(seed, 0xAC7));
  load_frame(0);
  state.t = 0;
  controller.begin_episode(state);
  if (on_frame) on_frame(state, 0);

  for (std::size_t i = 1; i < trace.frames.size(); ++i) {
    const std::vector<Action> actions = controller.act(state, action_rng);
    if (actions.size() != state.sensors.size())
      throw UsageError("replay: controller returned wrong action count");
    for (std::size_t k = 0; k < state.sensors.size(); ++k)
      move_sensor(state.sensors[k], actions[k], state.params.time_scale,
                  trace.scene);
    load_frame(i);
    state.t = static_cast<int>(i);
    for (SimObject& o : state.objects) {
      if (o.captured) continue;
      for (const Sensor& sensor : state.sensors) {
        if (contains(sensor.view, o.box)) {
          o.captured = true;
          captured_ids.insert(o.id);
          break;
        }
      }
    }
    if (on_frame) on_frame(state, static_cast<int>(i));
  }

  EvalReport report;
  report.episodes = 1;
  EvalEpisode ep;
  ep.objects_total = static_cast<int>(seen_ids.size());
  ep.objects_captured = static_cast<int>(captured_ids.size());
  report.per_episode.push_back(ep);
  report.capture_pct =
      ep.objects_total > 0
          ? 100.0 * static_cast<double>(ep.objects_captured) / ep.objects_total
          : 0.0;
  report.capture_pct_mean = report.capture_pct;
  report.stderr_pct = 0.0;
  return report;
}

}  // namespace rnac
