#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnac/agent.hpp"
#include "rnac/error.hpp"
#include "rnac/sim.hpp"
#include "rnac/trainer.hpp"

namespace rnac {

struct EvalConfig {
  int episodes = 100;
  ActionMode action_mode = ActionMode::Deterministic;

  bool operator==(const EvalConfig&) const = default;
};

struct RenderConfig {
  double scale = 400.0;  // pixels per world unit
  std::string output_dir = "frames";

  bool operator==(const RenderConfig&) const = default;
};

struct AgentConfig {
  bool mean_aggregation = false;  // average relation vectors instead of summing

  bool operator==(const AgentConfig&) const = default;
};

struct AnalysisConfig {
  bool reverse_kl = false;  // KL(pi||u) instead of KL(u||pi)

  bool operator==(const AnalysisConfig&) const = default;
};

struct Config {
  std::uint64_t seed = 1;
  EnvConfig env;
  TrainerConfig trainer;
  SearchSpec search;
  EvalConfig eval;
  RenderConfig render;
  AgentConfig agent;
  AnalysisConfig analysis;

  bool operator==(const Config&) const = default;
};

namespace cfg_detail {

using nlohmann::json;

inline void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + " must be an object");
}

inline void reject_unknown(const json& j, const std::string& path,
                           const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key " +
                        (path.empty() ? it.key() : path + "." + it.key()));
}

template <typename T>
void load_scalar(const json& j, const std::string& path, const char* key,
                 T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for " + path + "." + key);
  }
}

inline void load_interval(const json& j, const std::string& path,
                          const char* key, Interval& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(path + "." + key + " must be a [lo, hi] pair");
  out.lo = v[0].get<double>();
  out.hi = v[1].get<double>();
}

inline void load_int_interval(const json& j, const std::string& path,
                              const char* key, IntInterval& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
      !v[1].is_number_integer())
    throw ConfigError(path + "." + key + " must be an integer [lo, hi] pair");
  out.lo = v[0].get<int>();
  out.hi = v[1].get<int>();
}

inline json interval_json(const Interval& r) { return json::array({r.lo, r.hi}); }
inline json int_interval_json(const IntInterval& r) {
  return json::array({r.lo, r.hi});
}

inline void load_env(const json& j, EnvConfig& env) {
  require_object(j, "env");
  reject_unknown(j, "env",
                 {"scene", "n_sensors", "n_objects", "object_size",
                  "sensor_view_size", "sensor_speed", "object_speed",
                  "time_scale", "horizon", "p_toggle", "sigma_turn",
                  "p_reverse", "spawn_rate"});
  if (j.contains("scene")) {
    const json& s = j.at("scene");
    require_object(s, "env.scene");
    reject_unknown(s, "env.scene", {"width", "height"});
    load_scalar(s, "env.scene", "width", env.scene.width);
    load_scalar(s, "env.scene", "height", env.scene.height);
  }
  load_int_interval(j, "env", "n_sensors", env.n_sensors);
  load_int_interval(j, "env", "n_objects", env.n_objects);
  load_interval(j, "env", "object_size", env.object_size);
  load_interval(j, "env", "sensor_view_size", env.sensor_view_size);
  load_interval(j, "env", "sensor_speed", env.sensor_speed);
  load_interval(j, "env", "object_speed", env.object_speed);
  load_interval(j, "env", "time_scale", env.time_scale);
  load_int_interval(j, "env", "horizon", env.horizon);
  load_scalar(j, "env", "p_toggle", env.p_toggle);
  load_scalar(j, "env", "sigma_turn", env.sigma_turn);
  load_scalar(j, "env", "p_reverse", env.p_reverse);
  load_scalar(j, "env", "spawn_rate", env.spawn_rate);
}

inline void load_trainer(const json& j, TrainerConfig& t) {
  require_object(j, "trainer");
  reject_unknown(j, "trainer",
                 {"n_workers", "t_max", "gamma", "beta", "alpha",
                  "value_loss_weight", "clip_norm", "rmsprop_rho",
                  "rmsprop_epsilon", "total_env_steps"});
  load_scalar(j, "trainer", "n_workers", t.n_workers);
  load_scalar(j, "trainer", "t_max", t.t_max);
  load_scalar(j, "trainer", "gamma", t.gamma);
  load_scalar(j, "trainer", "beta", t.beta);
  load_scalar(j, "trainer", "alpha", t.alpha);
  load_scalar(j, "trainer", "value_loss_weight", t.value_loss_weight);
  load_scalar(j, "trainer", "clip_norm", t.clip_norm);
  load_scalar(j, "trainer", "rmsprop_rho", t.rmsprop_rho);
  load_scalar(j, "trainer", "rmsprop_epsilon", t.rmsprop_epsilon);
  load_scalar(j, "trainer", "total_env_steps", t.total_env_steps);
}

inline void load_search(const json& j, SearchSpec& s) {
  require_object(j, "search");
  reject_unknown(j, "search", {"alpha", "beta", "gamma_set", "agents"});
  load_interval(j, "search", "alpha", s.alpha);
  load_interval(j, "search", "beta", s.beta);
  if (j.contains("gamma_set")) {
    const json& g = j.at("gamma_set");
    if (!g.is_array() || g.empty())
      throw ConfigError("search.gamma_set must be a nonempty array");
    s.gamma_set.clear();
    for (const json& v : g) {
      if (!v.is_number()) throw ConfigError("search.gamma_set must hold numbers");
      s.gamma_set.push_back(v.get<double>());
    }
  }
  load_scalar(j, "search", "agents", s.agents);
}

}  // namespace cfg_detail

inline Config config_from_json(const nlohmann::json& j) {
  using namespace cfg_detail;
  require_object(j, "config");
  reject_unknown(j, "",
                 {"seed", "env", "trainer", "search", "eval", "render",
                  "agent", "analysis"});
  Config c;
  load_scalar(j, "", "seed", c.seed);
  if (j.contains("env")) load_env(j.at("env"), c.env);
  if (j.contains("trainer")) load_trainer(j.at("trainer"), c.trainer);
  if (j.contains("search")) load_search(j.at("search"), c.search);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_object(e, "eval");
    reject_unknown(e, "eval", {"episodes", "action_mode"});
    load_scalar(e, "eval", "episodes", c.eval.episodes);
    if (e.contains("action_mode")) {
      if (!e.at("action_mode").is_string())
        throw ConfigError("eval.action_mode must be a string");
      c.eval.action_mode = parse_action_mode(e.at("action_mode").get<std::string>());
    }
    if (c.eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  }
  if (j.contains("render")) {
    const json& r = j.at("render");
    require_object(r, "render");
    reject_unknown(r, "render", {"scale", "output_dir"});
    load_scalar(r, "render", "scale", c.render.scale);
    load_scalar(r, "render", "output_dir", c.render.output_dir);
    if (!(c.render.scale > 0.0)) throw ConfigError("render.scale must be > 0");
  }
  if (j.contains("agent")) {
    const json& a = j.at("agent");
    require_object(a, "agent");
    reject_unknown(a, "agent", {"mean_aggregation"});
    load_scalar(a, "agent", "mean_aggregation", c.agent.mean_aggregation);
  }
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    require_object(a, "analysis");
    reject_unknown(a, "analysis", {"reverse_kl"});
    load_scalar(a, "analysis", "reverse_kl", c.analysis.reverse_kl);
  }

  // Derived wiring: the trainer shares the global seed and the aggregation
  // choice.
  c.trainer.seed = c.seed;
  c.trainer.mean_aggregate = c.agent.mean_aggregation;

  validate_env_config(c.env);
  validate_trainer_config(c.trainer);
  validate_search_spec(c.search);
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  using namespace cfg_detail;
  json j;
  j["seed"] = c.seed;
  j["env"] = {
      {"scene", {{"width", c.env.scene.width}, {"height", c.env.scene.height}}},
      {"n_sensors", int_interval_json(c.env.n_sensors)},
      {"n_objects", int_interval_json(c.env.n_objects)},
      {"object_size", interval_json(c.env.object_size)},
      {"sensor_view_size", interval_json(c.env.sensor_view_size)},
      {"sensor_speed", interval_json(c.env.sensor_speed)},
      {"object_speed", interval_json(c.env.object_speed)},
      {"time_scale", interval_json(c.env.time_scale)},
      {"horizon", int_interval_json(c.env.horizon)},
      {"p_toggle", c.env.p_toggle},
      {"sigma_turn", c.env.sigma_turn},
      {"p_reverse", c.env.p_reverse},
      {"spawn_rate", c.env.spawn_rate},
  };
  j["trainer"] = {
      {"n_workers", c.trainer.n_workers},
      {"t_max", c.trainer.t_max},
      {"gamma", c.trainer.gamma},
      {"beta", c.trainer.beta},
      {"alpha", c.trainer.alpha},
      {"value_loss_weight", c.trainer.value_loss_weight},
      {"clip_norm", c.trainer.clip_norm},
      {"rmsprop_rho", c.trainer.rmsprop_rho},
      {"rmsprop_epsilon", c.trainer.rmsprop_epsilon},
      {"total_env_steps", c.trainer.total_env_steps},
  };
  j["search"] = {
      {"alpha", interval_json(c.search.alpha)},
      {"beta", interval_json(c.search.beta)},
      {"gamma_set", c.search.gamma_set},
      {"agents", c.search.agents},
  };
  j["eval"] = {
      {"episodes", c.eval.episodes},
      {"action_mode", action_mode_name(c.eval.action_mode)},
  };
  j["render"] = {
      {"scale", c.render.scale},
      {"output_dir", c.render.output_dir},
  };
  j["agent"] = {{"mean_aggregation", c.agent.mean_aggregation}};
  j["analysis"] = {{"reverse_kl", c.analysis.reverse_kl}};
  return j;
}

inline std::string serialize_config(const Config& c) {
  return config_to_json(c).dump(2) + "\n";
}

inline Config parse_config_text(const std::string& text,
                                const std::string& origin = "<string>") {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    return config_from_json(nlohmann::json::object());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());  // message carries line/column
  }
  return config_from_json(j);
}

inline Config parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

// Applies a "dotted.key=value" override on top of a config; values parse as
// JSON (numbers, booleans, [lo,hi] pairs) with a bare-string fallback.
// Command-line overrides beat file values, which beat defaults.
inline Config with_override(const Config& base, const std::string& dotted_key,
                            const std::string& value) {
  nlohmann::json j = config_to_json(base);
  nlohmann::json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key " + dotted_key);
    if (dot == std::string::npos) {
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(value);
      } catch (const nlohmann::json::parse_error&) {
        parsed = value;  // plain string, e.g. action_mode=deterministic
      }
      (*cur)[part] = parsed;
      break;
    }
    cur = &(*cur)[part];
    start = dot + 1;
  }
  return config_from_json(j);
}

inline Config apply_overrides(Config config,
                              const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override must look like key=value, got '" + ov + "'");
    config = with_override(config, ov.substr(0, eq), ov.substr(eq + 1));
  }
  return config;
}

}  // namespace rnac
