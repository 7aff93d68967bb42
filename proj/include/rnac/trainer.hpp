#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rnac/agent.hpp"
#include "rnac/baselines.hpp"
#include "rnac/error.hpp"
#include "rnac/nn.hpp"
#include "rnac/observation.hpp"
#include "rnac/sim.hpp"
#include "rnac/tape.hpp"

namespace rnac {

struct TrainerConfig {
  int n_workers = 16;
  int t_max = 20;
  double gamma = 0.99;           // reward discount
  double beta = 0.01;            // entropy regularization weight
  double alpha = 2e-4;           // learning rate
  double value_loss_weight = 0.5;
  double clip_norm = 40.0;       // global gradient norm cap
  double rmsprop_rho = 0.99;
  double rmsprop_epsilon = 0.1;
  long long total_env_steps = 1'000'000;
  std::uint64_t seed = 1;
  bool mean_aggregate = false;

  bool operator==(const TrainerConfig&) const = default;
};

inline void validate_trainer_config(const TrainerConfig& c) {
  if (c.n_workers < 1) throw ConfigError("trainer.n_workers must be >= 1");
  if (c.t_max < 1) throw ConfigError("trainer.t_max must be >= 1");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0))
    throw ConfigError("trainer.gamma must be in (0,1]");
  if (c.beta < 0.0) throw ConfigError("trainer.beta must be >= 0");
  if (!(c.alpha > 0.0)) throw ConfigError("trainer.alpha must be > 0");
  if (!(c.value_loss_weight > 0.0))
    throw ConfigError("trainer.value_loss_weight must be > 0");
  if (!(c.clip_norm > 0.0)) throw ConfigError("trainer.clip_norm must be > 0");
  if (!(c.rmsprop_rho >= 0.0 && c.rmsprop_rho < 1.0))
    throw ConfigError("trainer.rmsprop_rho must be in [0,1)");
  if (!(c.rmsprop_epsilon > 0.0))
    throw ConfigError("trainer.rmsprop_epsilon must be > 0");
  if (c.total_env_steps < 1)
    throw ConfigError("trainer.total_env_steps must be >= 1");
}

// One main-agent step: observed relations, chosen action, credited reward
// (all sensors' captures), and the acting value estimate.
struct Transition {
  RelationSet state;
  Action action = Action::NoOp;
  double reward = 0.0;
  double value = 0.0;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  double bootstrap = 0.0;  // V(s_{t+k}), 0 when the episode ended
  std::vector<double> returns;
  std::vector<double> advantages;

  std::size_t size() const { return transitions.size(); }
};

// Backward recursion R_i = r_i + gamma * R_{i+1}, seeded by the bootstrap;
// advantages subtract the stored value estimates.
inline void compute_targets(RolloutBuffer& buffer, double gamma) {
  const std::size_t n = buffer.size();
  buffer.returns.assign(n, 0.0);
  buffer.advantages.assign(n, 0.0);
  double running = buffer.bootstrap;
  for (std::size_t i = n; i-- > 0;) {
    running = buffer.transitions[i].reward + gamma * running;
    buffer.returns[i] = running;
    buffer.advantages[i] = running - buffer.transitions[i].value;
  }
}

// H = -sum p log p with 0 log 0 = 0.
inline double entropy(const std::array<double, kActionCount>& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

struct LossMetrics {
  double policy_loss = 0.0;  // -mean(log pi(a) * A)
  double value_loss = 0.0;   // mean((R - V)^2)
  double entropy = 0.0;      // mean action entropy
  double total_loss = 0.0;   // the scalar the gradients are taken of
};

struct LossGraph {
  Tape tape;
  Tape::NodeId total = -1;
  LossMetrics metrics;
};

// Builds the negated A3C objective over a rollout on a fresh tape. The policy
// term treats advantages as constants; the value term treats returns as
// constants. Dropout fires only in train mode (the finite-difference suite
// evaluates with it off).
inline LossGraph build_loss(const RolloutBuffer& buffer,
                            const ParameterStore& params, double beta,
                            double value_loss_weight, Rng* dropout_rng,
                            bool train_mode = true,
                            bool mean_aggregate = false) {
  if (buffer.size() == 0) throw UsageError("loss: empty buffer");
  if (buffer.returns.size() != buffer.size())
    throw UsageError("loss: targets not computed");

  LossGraph g;
  Tape& tape = g.tape;
  Tape::NodeId objective = tape.leaf(Tensor::scalar(0.0), true);
  Tape::NodeId value_loss = tape.leaf(Tensor::scalar(0.0), true);

  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Transition& tr = buffer.transitions[i];
    const ForwardNodes nodes = rn_forward_tape(tape, params, tr.state,
                                               train_mode, dropout_rng,
                                               nullptr, mean_aggregate);

    const Tape::NodeId logp = tape.log_softmax_rows(nodes.logits);
    const Tape::NodeId logp_a =
        tape.pick(logp, static_cast<std::size_t>(tr.action));
    const Tape::NodeId policy_term = tape.scale(logp_a, buffer.advantages[i]);

    const Tape::NodeId ent =
        tape.scale(tape.sum_all(tape.mul(nodes.probs, logp)), -1.0);
    objective = tape.add(objective, tape.add(policy_term, tape.scale(ent, beta)));

    const Tape::NodeId ret = tape.leaf(Tensor::scalar(buffer.returns[i]));
    const Tape::NodeId verr = tape.square(tape.sub(ret, nodes.value));
    value_loss = tape.add(value_loss, verr);

    g.metrics.policy_loss -= tape.value(logp_a)[0] * buffer.advantages[i];
    g.metrics.value_loss += tape.value(verr)[0];
    g.metrics.entropy += tape.value(ent)[0];
  }

  g.total = tape.scale(
      tape.sub(objective, tape.scale(value_loss, value_loss_weight)), -1.0);
  g.metrics.total_loss = tape.value(g.total)[0];

  const double inv_n = 1.0 / static_cast<double>(buffer.size());
  g.metrics.policy_loss *= inv_n;
  g.metrics.value_loss *= inv_n;
  g.metrics.entropy *= inv_n;
  return g;
}

inline std::pair<GradMap, LossMetrics> loss_and_grads(
    const RolloutBuffer& buffer, const ParameterStore& params, double beta,
    double value_loss_weight, Rng& dropout_rng, bool mean_aggregate = false,
    bool train_mode = true) {
  LossGraph g = build_loss(buffer, params, beta, value_loss_weight,
                           &dropout_rng, train_mode, mean_aggregate);
  g.tape.backward(g.total);
  GradMap grads = g.tape.named_grads();
  for (const auto& [name, grad] : grads)
    if (!grad.all_finite()) throw NumericError("non-finite gradient for " + name);
  return {std::move(grads), g.metrics};
}

// Advances the environment up to t_max steps. Every sensor acts through the
// shared policy with itself marked controlled; only sensor 0 (the main
// agent) contributes transitions, and its reward is the sum of all sensors'
// rewards. Stops early at episode end with a zero bootstrap; otherwise the
// bootstrap is the value of the main agent's next state.
inline RolloutBuffer rollout(EnvState& env, std::vector<FrameHistory>& histories,
                             const ParameterStore& params, int t_max, Rng& rng,
                             bool mean_aggregate = false) {
  if (env.done()) throw LifecycleError("rollout: episode is done");
  if (histories.size() != env.sensors.size())
    throw UsageError("rollout: one history per sensor required");

  RolloutBuffer buffer;
  buffer.transitions.reserve(static_cast<std::size_t>(t_max));
  for (int step_i = 0; step_i < t_max; ++step_i) {
    const std::size_t n_sensors = env.sensors.size();
    std::vector<Action> actions(n_sensors, Action::NoOp);
    RelationSet main_rel;
    double main_value = 0.0;
    for (std::size_t k = 0; k < n_sensors; ++k) {
      const int id = env.sensors[k].id;
      push_history(histories[k], env, id);
      RelationSet rel = encode(histories[k], id);
      const PolicyOutput out =
          rn_forward(params, rel, false, nullptr, mean_aggregate);
      actions[k] = select_action(out, ActionMode::Stochastic, rng);
      if (k == 0) {
        main_rel = std::move(rel);
        main_value = out.value;
      }
    }

    const StepResult result = step(env, actions);
    double credited = 0.0;
    for (int r : result.rewards) credited += r;

    Transition tr;
    tr.state = std::move(main_rel);
    tr.action = actions[0];
    tr.reward = credited;
    tr.value = main_value;
    buffer.transitions.push_back(std::move(tr));

    if (result.done) {
      buffer.bootstrap = 0.0;
      return buffer;
    }
  }
  // Bootstrap from the main agent's next state without disturbing the live
  // history.
  FrameHistory scratch = histories[0];
  push_history(scratch, env, env.sensors[0].id);
  const RelationSet next_rel = encode(scratch, env.sensors[0].id);
  buffer.bootstrap =
      rn_forward(params, next_rel, false, nullptr, mean_aggregate).value;
  return buffer;
}

// Owns one simulation environment, its per-sensor histories, and the episode
// seeding stream.
class RolloutWorker {
 public:
  RolloutWorker(EnvConfig env_config, std::uint64_t seed, bool mean_aggregate)
      : env_config_(std::move(env_config)),
        seeder_(derive_seed(seed, 0xE9)),
        rng_(derive_seed(seed, 0xAC)),
        mean_aggregate_(mean_aggregate) {
    reset_episode();
  }

  RolloutBuffer run(const ParameterStore& params, int t_max) {
    RolloutBuffer buffer = rollout(env_, histories_, params, t_max, rng_,
                                   mean_aggregate_);
    if (env_.done()) {
      finished_episode_pcts_.push_back(
          env_.next_object_id > 0
              ? 100.0 * env_.captured_total / env_.next_object_id
              : 0.0);
      reset_episode();
    }
    return buffer;
  }

  std::vector<double> drain_episode_pcts() {
    return std::exchange(finished_episode_pcts_, {});
  }

  Rng& rng() { return rng_; }
  const EnvState& env() const { return env_; }

 private:
  void reset_episode() {
    env_ = init_episode(env_config_, seeder_.next_u64());
    histories_.assign(env_.sensors.size(), FrameHistory{});
  }

  EnvConfig env_config_;
  Rng seeder_;
  Rng rng_;
  bool mean_aggregate_;
  EnvState env_;
  std::vector<FrameHistory> histories_;
  std::vector<double> finished_episode_pcts_;
};

// One line-delimited record per global update.
struct TrainLogRecord {
  long long update = 0;
  long long env_steps = 0;
  double capture_pct = 0.0;  // trailing mean over recently finished episodes
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double lr = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

inline std::string to_json_line(const TrainLogRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"update\":%lld,\"env_steps\":%lld,\"capture_pct\":%.4f,"
                "\"policy_loss\":%.6g,\"value_loss\":%.6g,\"entropy\":%.6g,"
                "\"lr\":%.6g,\"beta\":%.6g,\"gamma\":%.6g}",
                r.update, r.env_steps, r.capture_pct, r.policy_loss,
                r.value_loss, r.entropy, r.lr, r.beta, r.gamma);
  return buf;
}

struct TrainResult {
  ParameterStore params;
  OptimizerState optimizer;
  long long env_steps = 0;
  long long updates = 0;
  double final_capture_pct = 0.0;  // trailing mean at shutdown
};

namespace detail {

// Single-consumer record sink: workers enqueue, one writer thread drains.
class LogQueue {
 public:
  void push(TrainLogRecord r) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      items_.push_back(std::move(r));
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool pop(TrainLogRecord& out) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return false;
    out = std::move(items_.front());
    items_.pop_front();
    return true;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TrainLogRecord> items_;
  bool closed_ = false;
};

}  // namespace detail

// Asynchronous advantage actor-critic over n_workers parallel environments.
// Workers copy the global parameters, run up to t_max steps, and apply their
// clipped gradients to the shared store under a lock. Runs until the step
// budget is consumed.
inline TrainResult train(const TrainerConfig& config, const EnvConfig& env_config,
                         std::ostream* log_stream = nullptr,
                         const std::function<void(const TrainLogRecord&)>&
                             on_update = {}) {
  validate_trainer_config(config);
  validate_env_config(env_config);

  TrainResult result;
  result.params = init_params(derive_seed(config.seed, 0x1217));
  result.optimizer = OptimizerState::create(result.params, config.rmsprop_rho,
                                            config.rmsprop_epsilon, config.alpha);

  std::mutex global_mu;           // guards params + optimizer
  std::atomic<long long> env_steps{0};
  std::atomic<long long> updates{0};
  std::atomic<bool> failed{false};
  std::mutex fail_mu;
  std::string fail_msg;

  std::mutex ep_mu;
  std::deque<double> recent_pcts;  // trailing window of episode percentages
  constexpr std::size_t kPctWindow = 64;

  detail::LogQueue queue;
  const bool want_log = log_stream != nullptr || static_cast<bool>(on_update);

  std::thread writer;
  if (want_log) {
    writer = std::thread([&] {
      TrainLogRecord r;
      while (queue.pop(r)) {
        if (log_stream) (*log_stream) << to_json_line(r) << '\n';
        if (on_update) on_update(r);
      }
      if (log_stream) log_stream->flush();
    });
  }

  auto worker_fn = [&](int worker_id) {
    try {
      RolloutWorker worker(env_config,
                           derive_seed(config.seed, 0x700 + static_cast<std::uint64_t>(worker_id)),
                           config.mean_aggregate);
      while (!failed.load() && env_steps.load() < config.total_env_steps) {
        ParameterStore snapshot;
        {
          std::lock_guard<std::mutex> lk(global_mu);
          snapshot = result.params;
        }
        RolloutBuffer buffer = worker.run(snapshot, config.t_max);
        compute_targets(buffer, config.gamma);
        auto [grads, metrics] =
            loss_and_grads(buffer, snapshot, config.beta,
                           config.value_loss_weight, worker.rng(),
                           config.mean_aggregate);
        clip_global_norm(grads, config.clip_norm);
        {
          std::lock_guard<std::mutex> lk(global_mu);
          rmsprop_update(result.params, grads, result.optimizer);
        }
        const long long steps_now =
            env_steps.fetch_add(static_cast<long long>(buffer.size())) +
            static_cast<long long>(buffer.size());
        const long long update_id = updates.fetch_add(1) + 1;

        double trailing = 0.0;
        {
          std::lock_guard<std::mutex> lk(ep_mu);
          for (double pct : worker.drain_episode_pcts()) {
            recent_pcts.push_back(pct);
            while (recent_pcts.size() > kPctWindow) recent_pcts.pop_front();
          }
          if (!recent_pcts.empty()) {
            for (double p : recent_pcts) trailing += p;
            trailing /= static_cast<double>(recent_pcts.size());
          }
        }

        if (want_log) {
          TrainLogRecord rec;
          rec.update = update_id;
          rec.env_steps = steps_now;
          rec.capture_pct = trailing;
          rec.policy_loss = metrics.policy_loss;
          rec.value_loss = metrics.value_loss;
          rec.entropy = metrics.entropy;
          rec.lr = config.alpha;
          rec.beta = config.beta;
          rec.gamma = config.gamma;
          queue.push(rec);
        }
      }
    } catch (const std::exception& e) {
      failed.store(true);
      std::lock_guard<std::mutex> lk(fail_mu);
      if (fail_msg.empty())
        fail_msg = "worker " + std::to_string(worker_id) + ": " + e.what();
    }
  };

  {
    std::vector<std::thread> pool;
    for (int w = 0; w < config.n_workers; ++w) pool.emplace_back(worker_fn, w);
    for (auto& th : pool) th.join();
  }
  queue.close();
  if (writer.joinable()) writer.join();

  if (failed.load()) throw Error("training aborted: " + fail_msg);

  result.env_steps = env_steps.load();
  result.updates = updates.load();
  {
    std::lock_guard<std::mutex> lk(ep_mu);
    if (!recent_pcts.empty()) {
      double s = 0.0;
      for (double p : recent_pcts) s += p;
      result.final_capture_pct = s / static_cast<double>(recent_pcts.size());
    }
  }
  return result;
}

// Random-search specification: log-uniform learning rate and entropy weight,
// discount drawn from a discrete set.
struct SearchSpec {
  Interval alpha{1e-5, 1e-3};
  Interval beta{1e-3, 5e-2};
  std::vector<double> gamma_set{0.9, 0.95, 0.99, 0.995};
  int agents = 4;

  bool operator==(const SearchSpec&) const = default;
};

inline void validate_search_spec(const SearchSpec& s) {
  if (s.agents < 1) throw ConfigError("search.agents must be >= 1");
  if (!(s.alpha.lo > 0.0) || s.alpha.lo > s.alpha.hi)
    throw ConfigError("search.alpha must be a positive range");
  if (!(s.beta.lo > 0.0) || s.beta.lo > s.beta.hi)
    throw ConfigError("search.beta must be a positive range");
  if (s.gamma_set.empty()) throw ConfigError("search.gamma_set must be nonempty");
  for (double g : s.gamma_set)
    if (!(g > 0.0 && g <= 1.0))
      throw ConfigError("search.gamma_set values must be in (0,1]");
}

struct SearchRun {
  int index = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  bool failed = false;
  std::string error;
  double eval_capture_pct = 0.0;
  ParameterStore params;
};

// Trains `agents` policies with independently drawn hyperparameters and ranks
// them by a shared evaluation protocol. Failed runs stay in the report.
inline std::vector<SearchRun> hyperparameter_search(
    const SearchSpec& spec, const TrainerConfig& base_config,
    const EnvConfig& env_config, int eval_episodes, int eval_threads = 1,
    const std::function<void(const SearchRun&)>& on_run = {}) {
  validate_search_spec(spec);
  Rng rng(derive_seed(base_config.seed, 0x5EA7C4));
  std::vector<SearchRun> runs;
  for (int i = 0; i < spec.agents; ++i) {
    SearchRun run;
    run.index = i;
    run.alpha = std::exp(rng.uniform(std::log(spec.alpha.lo), std::log(spec.alpha.hi)));
    run.beta = std::exp(rng.uniform(std::log(spec.beta.lo), std::log(spec.beta.hi)));
    run.gamma = spec.gamma_set[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.gamma_set.size()) - 1))];

    TrainerConfig config = base_config;
    config.alpha = run.alpha;
    config.beta = run.beta;
    config.gamma = run.gamma;
    config.seed = derive_seed(base_config.seed, 0xA9E7 + static_cast<std::uint64_t>(i));

    try {
      TrainResult trained = train(config, env_config);
      run.params = std::move(trained.params);
      const EvalReport report = evaluate(
          [&] {
            return std::make_unique<AgentController>(
                run.params, ActionMode::Deterministic, config.mean_aggregate);
          },
          env_config, eval_episodes, derive_seed(config.seed, 0xEA1),
          eval_threads);
      run.eval_capture_pct = report.capture_pct;
    } catch (const std::exception& e) {
      run.failed = true;
      run.error = e.what();
    }
    if (on_run) on_run(run);
    runs.push_back(std::move(run));
  }
  std::stable_sort(runs.begin(), runs.end(), [](const SearchRun& a, const SearchRun& b) {
    if (a.failed != b.failed) return !a.failed;
    return a.eval_capture_pct > b.eval_capture_pct;
  });
  return runs;
}

}  // namespace rnac
