// Command-line front end: training, evaluation, trace replay, attribution
// analysis, rendering, and the gradient-check suite.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "rnac/analysis.hpp"
#include "rnac/baselines.hpp"
#include "rnac/checkpoint.hpp"
#include "rnac/config.hpp"
#include "rnac/controller.hpp"
#include "rnac/gradcheck.hpp"
#include "rnac/trace.hpp"
#include "rnac/trainer.hpp"

namespace fs = std::filesystem;
using namespace rnac;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path,
                  "Configuration file (JSON); defaults apply when omitted");
  cmd->add_option("--set", opts.overrides,
                  "Override a config value, e.g. --set trainer.alpha=3e-4");
}

Config load_config(const CommonOpts& opts) {
  Config c = opts.config_path.empty() ? Config{} : parse_config(opts.config_path);
  return apply_overrides(std::move(c), opts.overrides);
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["episodes"] = r.episodes;
  j["capture_pct"] = r.capture_pct;
  j["capture_pct_mean"] = r.capture_pct_mean;
  j["stderr_pct"] = r.stderr_pct;
  nlohmann::json eps = nlohmann::json::array();
  for (const EvalEpisode& e : r.per_episode)
    eps.push_back({{"objects_total", e.objects_total},
                   {"objects_captured", e.objects_captured}});
  j["per_episode"] = std::move(eps);
  return j.dump();
}

ControllerFactory policy_factory(const std::string& checkpoint,
                                 const std::string& baseline, ActionMode mode,
                                 bool mean_aggregate) {
  if (!checkpoint.empty() && !baseline.empty())
    throw UsageError("give either --checkpoint or --baseline, not both");
  if (!checkpoint.empty()) {
    ParameterStore params = load_params(checkpoint);
    validate_params(params);
    return [params = std::move(params), mode, mean_aggregate] {
      return std::make_unique<AgentController>(params, mode, mean_aggregate);
    };
  }
  if (!baseline.empty()) return baseline_factory(baseline);
  throw UsageError("a policy is required: --checkpoint FILE or --baseline NAME");
}

int cmd_train(const CommonOpts& common, const std::string& out,
              const std::string& log_path) {
  const Config cfg = load_config(common);
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot open log for writing: " + log_path);

  long long print_every = std::max(1LL, cfg.trainer.total_env_steps /
                                            (20LL * cfg.trainer.t_max));
  const TrainResult result = train(
      cfg.trainer, cfg.env, &log, [&](const TrainLogRecord& r) {
        if (r.update % print_every == 0)
          std::fprintf(stderr,
                       "update %lld  steps %lld  capture %.1f%%  entropy %.3f\n",
                       r.update, r.env_steps, r.capture_pct, r.entropy);
      });

  save_params(result.params, out);
  save_optimizer(result.optimizer, out + ".opt");
  std::printf("trained %lld env steps over %lld updates\n", result.env_steps,
              result.updates);
  std::printf("trailing capture_pct %.2f\n", result.final_capture_pct);
  std::printf("checkpoint written to %s (optimizer: %s.opt, log: %s)\n",
              out.c_str(), out.c_str(), log_path.c_str());
  return 0;
}

int cmd_search(const CommonOpts& common, const std::string& out_dir) {
  const Config cfg = load_config(common);
  fs::create_directories(out_dir);
  std::ofstream results(fs::path(out_dir) / "search_results.jsonl");

  int done = 0;
  const auto runs = hyperparameter_search(
      cfg.search, cfg.trainer, cfg.env, cfg.eval.episodes,
      static_cast<int>(std::thread::hardware_concurrency()),
      [&](const SearchRun& run) {
        ++done;
        const std::string status =
            run.failed ? "FAILED: " + run.error
                       : "capture " + std::to_string(run.eval_capture_pct) + "%";
        std::fprintf(stderr, "agent %d/%d done: alpha=%.3g beta=%.3g gamma=%g %s\n",
                     done, cfg.search.agents, run.alpha, run.beta, run.gamma,
                     status.c_str());
      });

  std::printf("rank  agent  alpha      beta       gamma   capture_pct\n");
  int rank = 1;
  for (const SearchRun& run : runs) {
    nlohmann::json j{{"rank", rank},         {"agent", run.index},
                     {"alpha", run.alpha},   {"beta", run.beta},
                     {"gamma", run.gamma},   {"failed", run.failed},
                     {"error", run.error},   {"capture_pct", run.eval_capture_pct}};
    results << j.dump() << "\n";
    if (run.failed) {
      std::printf("%4d  %5d  %-9.3g  %-9.3g  %-6g  FAILED (%s)\n", rank,
                  run.index, run.alpha, run.beta, run.gamma, run.error.c_str());
    } else {
      std::printf("%4d  %5d  %-9.3g  %-9.3g  %-6g  %.2f\n", rank, run.index,
                  run.alpha, run.beta, run.gamma, run.eval_capture_pct);
      const std::string ck =
          (fs::path(out_dir) / ("agent_" + std::to_string(run.index) + ".rnac"))
              .string();
      save_params(run.params, ck);
    }
    ++rank;
  }
  std::printf("results written to %s\n", out_dir.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& checkpoint,
             const std::string& baseline, int episodes_flag,
             std::uint64_t seed_flag, bool seed_set, const std::string& mode_flag,
             int threads) {
  Config cfg = load_config(common);
  if (episodes_flag > 0) cfg.eval.episodes = episodes_flag;
  if (seed_set) cfg.seed = seed_flag;
  if (!mode_flag.empty()) cfg.eval.action_mode = parse_action_mode(mode_flag);

  const ControllerFactory factory = policy_factory(
      checkpoint, baseline, cfg.eval.action_mode, cfg.agent.mean_aggregation);
  const EvalReport report =
      evaluate(factory, cfg.env, cfg.eval.episodes, cfg.seed, threads);
  std::printf("%s\n", eval_report_json(report).c_str());
  std::fprintf(stderr, "capture_pct %.2f (per-episode mean %.2f +- %.2f)\n",
               report.capture_pct, report.capture_pct_mean, report.stderr_pct);
  return 0;
}

int cmd_replay(const CommonOpts& common, const std::string& trace_path,
               const std::string& checkpoint, const std::string& baseline,
               int n_sensors, std::uint64_t seed_flag, bool seed_set,
               const std::string& mode_flag, const std::string& frames_dir) {
  Config cfg = load_config(common);
  if (seed_set) cfg.seed = seed_flag;
  if (!mode_flag.empty()) cfg.eval.action_mode = parse_action_mode(mode_flag);

  const TraceEpisode trace = load_trace(trace_path);
  const ControllerFactory factory = policy_factory(
      checkpoint, baseline, cfg.eval.action_mode, cfg.agent.mean_aggregation);
  auto controller = factory();

  std::function<void(const EnvState&, int)> on_frame;
  if (!frames_dir.empty()) {
    fs::create_directories(frames_dir);
    on_frame = [&cfg, &frames_dir](const EnvState& state, int t) {
      char name[64];
      std::snprintf(name, sizeof(name), "frame_%05d.ppm", t);
      write_ppm(render_frame(state, 0, nullptr, cfg.render.scale),
                (fs::path(frames_dir) / name).string());
    };
  }

  const EvalReport report =
      replay(trace, *controller, cfg.env, n_sensors, cfg.seed, on_frame);
  std::printf("%s\n", eval_report_json(report).c_str());
  return 0;
}

int cmd_analyze(const CommonOpts& common, const std::string& checkpoint,
                std::uint64_t seed_flag, bool seed_set, int steps,
                const std::string& out_dir) {
  Config cfg = load_config(common);
  if (seed_set) cfg.seed = seed_flag;

  ParameterStore params = load_params(checkpoint);
  validate_params(params);
  fs::create_directories(out_dir);
  std::ofstream sidecar(fs::path(out_dir) / "contributions.jsonl");

  EnvState env = init_episode(cfg.env, cfg.seed);
  std::vector<FrameHistory> histories(env.sensors.size());
  Rng rng(derive_seed(cfg.seed, 0xA11));
  int rendered = 0;
  for (int t = 0; t < steps && !env.done(); ++t) {
    std::vector<Action> actions(env.sensors.size(), Action::NoOp);
    ContributionReport report;
    bool have_report = false;
    for (std::size_t k = 0; k < env.sensors.size(); ++k) {
      const int id = env.sensors[k].id;
      push_history(histories[k], env, id);
      const RelationSet rel = encode(histories[k], id);
      const PolicyOutput out =
          rn_forward(params, rel, false, nullptr, cfg.agent.mean_aggregation);
      actions[k] = select_action(out, cfg.eval.action_mode, rng);
      if (k == 0 && rel.row_count() > 0) {
        report = relation_contributions(params, rel, cfg.analysis.reverse_kl,
                                        cfg.agent.mean_aggregation);
        have_report = true;
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%05d.ppm", t);
    write_ppm(render_frame(env, 0, have_report ? &report : nullptr,
                           cfg.render.scale),
              (fs::path(out_dir) / name).string());
    if (have_report) sidecar << contribution_json_line(t, report) << "\n";
    ++rendered;
    step(env, actions);
  }
  std::printf("wrote %d frames and contribution sidecars to %s\n", rendered,
              out_dir.c_str());
  return 0;
}

int cmd_render(const CommonOpts& common, std::uint64_t seed_flag, bool seed_set,
               int steps, const std::string& baseline,
               const std::string& out_dir) {
  Config cfg = load_config(common);
  if (seed_set) cfg.seed = seed_flag;

  fs::create_directories(out_dir);
  EnvState env = init_episode(cfg.env, cfg.seed);
  auto controller = baseline_factory(baseline)();
  controller->begin_episode(env);
  Rng rng(derive_seed(cfg.seed, 0x4E4D));
  int t = 0;
  for (; t < steps && !env.done(); ++t) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%05d.ppm", t);
    write_ppm(render_frame(env, -1, nullptr, cfg.render.scale),
              (fs::path(out_dir) / name).string());
    step(env, controller->act(env, rng));
  }
  std::printf("wrote %d frames to %s\n", t, out_dir.c_str());
  return 0;
}

int cmd_gradcheck(int seeds) {
  const gradcheck::Report report = gradcheck::run(seeds, &std::cerr);
  std::printf("gradcheck: %lld comparisons, %lld non-smooth probes skipped\n",
              report.checks, report.skipped_nonsmooth);
  std::printf("max relative error %.3g (tolerance %.3g)\n",
              report.max_rel_error, gradcheck::kTolerance);
  if (!report.pass()) {
    for (const auto& f : report.failures)
      std::fprintf(stderr, "FAIL %s\n", f.c_str());
    return 1;
  }
  std::printf("PASS\n");
  return 0;
}

int cmd_tracegen(const CommonOpts& common, std::uint64_t seed_flag,
                 bool seed_set, int steps, double dropout,
                 const std::string& out) {
  Config cfg = load_config(common);
  if (seed_set) cfg.seed = seed_flag;
  const TraceEpisode trace = synth_trace(cfg.env, cfg.seed, steps, dropout);
  save_trace(trace, out);
  std::printf("wrote %zu frames to %s\n", trace.frames.size(), out.c_str());
  return 0;
}

int cmd_config(const CommonOpts& common) {
  // With no file this prints the full default reference; with one, the
  // effective config after defaults and overrides.
  const Config cfg = load_config(common);
  std::printf("%s", serialize_config(cfg).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relational-network sensor coverage lab"};
  app.require_subcommand(1);

  CommonOpts train_opts, search_opts, eval_opts, replay_opts, analyze_opts,
      render_opts, tracegen_opts, config_opts;

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a policy (A3C)");
  add_common(train_cmd, train_opts);
  std::string train_out = "checkpoint.rnac";
  std::string train_log = "train_log.jsonl";
  train_cmd->add_option("-o,--out", train_out, "Checkpoint output path");
  train_cmd->add_option("--log", train_log, "Training log path (JSON lines)");

  // search
  auto* search_cmd =
      app.add_subcommand("search", "Random hyperparameter search");
  add_common(search_cmd, search_opts);
  std::string search_dir = "search_out";
  search_cmd->add_option("-o,--out-dir", search_dir, "Output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a policy over episodes");
  add_common(eval_cmd, eval_opts);
  std::string eval_ckpt, eval_baseline, eval_mode;
  int eval_episodes = 0, eval_threads = 1;
  std::uint64_t eval_seed = 0;
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Episode seed");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate");
  eval_cmd->add_option("--baseline", eval_baseline,
                       "Baseline: random, random-noop, or lawnmower");
  eval_cmd->add_option("--episodes", eval_episodes, "Episode count");
  eval_cmd->add_option("--mode", eval_mode, "stochastic or deterministic");
  eval_cmd->add_option("--threads", eval_threads, "Parallel episode workers");

  // replay
  auto* replay_cmd =
      app.add_subcommand("replay", "Replay a detection trace against a policy");
  add_common(replay_cmd, replay_opts);
  std::string replay_trace, replay_ckpt, replay_baseline, replay_mode,
      replay_frames;
  int replay_sensors = 1;
  std::uint64_t replay_seed = 0;
  replay_cmd->add_option("--trace", replay_trace, "Trace file (JSON lines)")
      ->required();
  replay_cmd->add_option("--checkpoint", replay_ckpt, "Checkpoint to replay");
  replay_cmd->add_option("--baseline", replay_baseline, "Baseline policy");
  replay_cmd->add_option("--sensors", replay_sensors, "Simulated sensor count");
  auto* replay_seed_opt =
      replay_cmd->add_option("--seed", replay_seed, "Sensor placement seed");
  replay_cmd->add_option("--mode", replay_mode, "stochastic or deterministic");
  replay_cmd->add_option("--frames-dir", replay_frames,
                         "Render each replayed frame into this directory");

  // analyze
  auto* analyze_cmd = app.add_subcommand(
      "analyze", "Per-relation contribution frames for one episode");
  add_common(analyze_cmd, analyze_opts);
  std::string analyze_ckpt, analyze_dir = "analysis_out";
  int analyze_steps = 100;
  std::uint64_t analyze_seed = 0;
  analyze_cmd->add_option("--checkpoint", analyze_ckpt, "Checkpoint to analyze")
      ->required();
  auto* analyze_seed_opt =
      analyze_cmd->add_option("--seed", analyze_seed, "Episode seed");
  analyze_cmd->add_option("--steps", analyze_steps, "Steps to analyze");
  analyze_cmd->add_option("-o,--out-dir", analyze_dir, "Output directory");

  // render
  auto* render_cmd = app.add_subcommand("render", "Render simulator frames");
  add_common(render_cmd, render_opts);
  std::string render_baseline = "random", render_dir = "render_out";
  int render_steps = 100;
  std::uint64_t render_seed = 0;
  auto* render_seed_opt =
      render_cmd->add_option("--seed", render_seed, "Episode seed");
  render_cmd->add_option("--steps", render_steps, "Steps to render");
  render_cmd->add_option("--baseline", render_baseline, "Driving policy");
  render_cmd->add_option("-o,--out-dir", render_dir, "Output directory");

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference verification of all gradients");
  int grad_seeds = 20;
  grad_cmd->add_option("--seeds", grad_seeds, "Random seeds to sweep");

  // tracegen
  auto* tracegen_cmd = app.add_subcommand(
      "tracegen", "Generate a synthetic detection trace from the simulator");
  add_common(tracegen_cmd, tracegen_opts);
  std::string tracegen_out = "trace.jsonl";
  int tracegen_steps = 200;
  double tracegen_dropout = 0.0;
  std::uint64_t tracegen_seed = 0;
  auto* tracegen_seed_opt =
      tracegen_cmd->add_option("--seed", tracegen_seed, "Episode seed");
  tracegen_cmd->add_option("--steps", tracegen_steps, "Frames to record");
  tracegen_cmd->add_option("--dropout", tracegen_dropout,
                           "Per-frame detection drop probability");
  tracegen_cmd->add_option("-o,--out", tracegen_out, "Trace output path");

  // config
  auto* config_cmd = app.add_subcommand(
      "config", "Print the effective configuration (defaults reference)");
  add_common(config_cmd, config_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts, train_out, train_log);
    if (*search_cmd) return cmd_search(search_opts, search_dir);
    if (*eval_cmd)
      return cmd_eval(eval_opts, eval_ckpt, eval_baseline, eval_episodes,
                      eval_seed, eval_seed_opt->count() > 0, eval_mode,
                      eval_threads);
    if (*replay_cmd)
      return cmd_replay(replay_opts, replay_trace, replay_ckpt, replay_baseline,
                        replay_sensors, replay_seed,
                        replay_seed_opt->count() > 0, replay_mode,
                        replay_frames);
    if (*analyze_cmd)
      return cmd_analyze(analyze_opts, analyze_ckpt, analyze_seed,
                         analyze_seed_opt->count() > 0, analyze_steps,
                         analyze_dir);
    if (*render_cmd)
      return cmd_render(render_opts, render_seed, render_seed_opt->count() > 0,
                        render_steps, render_baseline, render_dir);
    if (*grad_cmd) return cmd_gradcheck(grad_seeds);
    if (*tracegen_cmd)
      return cmd_tracegen(tracegen_opts, tracegen_seed,
                          tracegen_seed_opt->count() > 0, tracegen_steps,
                          tracegen_dropout, tracegen_out);
    if (*config_cmd) return cmd_config(config_opts);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
