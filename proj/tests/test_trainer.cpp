#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "rnac/gradcheck.hpp"
#include "rnac/trainer.hpp"

using namespace rnac;

namespace {

RolloutBuffer buffer_from(std::vector<double> rewards, double bootstrap,
                          std::vector<double> values = {}) {
  RolloutBuffer b;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Transition tr;
    tr.reward = rewards[i];
    tr.value = i < values.size() ? values[i] : 0.0;
    b.transitions.push_back(std::move(tr));
  }
  b.bootstrap = bootstrap;
  return b;
}

}  // namespace

TEST_CASE("compute_targets") {
  SUBCASE("single reward at the head") {
    RolloutBuffer b = buffer_from({1, 0, 0}, 0.0);
    compute_targets(b, 0.9);
    CHECK(b.returns == std::vector<double>{1, 0, 0});
  }
  SUBCASE("bootstrapped recursion") {
    RolloutBuffer b = buffer_from({0, 1}, 2.0);
    compute_targets(b, 0.9);
    CHECK(b.returns[1] == doctest::Approx(2.8).epsilon(1e-15));
    CHECK(b.returns[0] == doctest::Approx(2.52).epsilon(1e-15));
  }
  SUBCASE("zero rewards leave advantages at -V") {
    RolloutBuffer b = buffer_from({0, 0}, 0.0, {0.7, -0.3});
    compute_targets(b, 0.95);
    CHECK(b.advantages[0] == doctest::Approx(-0.7));
    CHECK(b.advantages[1] == doctest::Approx(0.3));
  }
  SUBCASE("recursion matches the brute-force discounted sum") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 20));
      std::vector<double> rewards;
      for (std::size_t i = 0; i < n; ++i) rewards.push_back(rng.uniform(-1, 2));
      const double gamma = rng.uniform(0.01, 1.0);
      const double bootstrap = rng.uniform(-2, 2);
      RolloutBuffer b = buffer_from(rewards, bootstrap);
      compute_targets(b, gamma);

      for (std::size_t i = 0; i < n; ++i) {
        double brute = 0.0;
        double g = 1.0;
        for (std::size_t j = i; j < n; ++j) {
          brute += g * rewards[j];
          g *= gamma;
        }
        brute += g * bootstrap;
        CHECK(std::fabs(b.returns[i] - brute) < 1e-12);
        // Exact recursion identity at 64-bit.
        const double next = i + 1 < n ? b.returns[i + 1] : bootstrap;
        CHECK(b.returns[i] == rewards[i] + gamma * next);
      }
    }
  }
}

TEST_CASE("entropy") {
  CHECK(entropy({0.2, 0.2, 0.2, 0.2, 0.2}) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(entropy({1, 0, 0, 0, 0}) == 0.0);
  CHECK(entropy({0.5, 0.5, 0, 0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss_and_grads") {
  Rng rng(7);
  const ParameterStore params = init_params(11);

  SUBCASE("policy objective equals log pi(a) * A for one transition") {
    RolloutBuffer b;
    Transition tr;
    tr.state = gradcheck::detail::random_relation_set(rng, 4);
    tr.action = Action::Down;
    tr.reward = 0.0;
    tr.value = 0.0;
    b.transitions.push_back(tr);
    b.bootstrap = 0.0;
    b.returns = {0.0};
    b.advantages = {2.0};

    const PolicyOutput out = rn_forward(params, tr.state);
    Rng dr(1);
    auto [grads, metrics] =
        loss_and_grads(b, params, 0.0, 0.5, dr, false, /*train_mode=*/false);
    const double logp = std::log(out.probs[static_cast<std::size_t>(Action::Down)]);
    CHECK(metrics.policy_loss == doctest::Approx(-2.0 * logp).epsilon(1e-12));
    CHECK(metrics.entropy == doctest::Approx(entropy(out.probs)).epsilon(1e-12));
    CHECK(metrics.value_loss == doctest::Approx(out.value * out.value).epsilon(1e-12));
  }
  SUBCASE("zero advantages and zero beta give exactly zero policy-head grads") {
    RolloutBuffer b;
    for (int i = 0; i < 3; ++i) {
      Transition tr;
      tr.state = gradcheck::detail::random_relation_set(rng, 3);
      tr.action = static_cast<Action>(i % kActionCount);
      tr.reward = 0.5;
      tr.value = 0.1;
      b.transitions.push_back(std::move(tr));
    }
    b.bootstrap = 0.0;
    b.returns = {0.4, 0.2, 0.1};
    b.advantages = {0.0, 0.0, 0.0};

    Rng dr(1);
    auto [grads, metrics] = loss_and_grads(b, params, 0.0, 0.5, dr, false, false);
    for (double v : grads.at("pi.w").values()) CHECK(v == 0.0);
    for (double v : grads.at("pi.b").values()) CHECK(v == 0.0);
    // The value path still learns.
    double max_v = 0.0;
    for (double v : grads.at("v.w").values()) max_v = std::max(max_v, std::fabs(v));
    CHECK(max_v > 0.0);
  }
  SUBCASE("a large-beta update on a fixed state raises the policy entropy") {
    RolloutBuffer b;
    Transition tr;
    tr.state = gradcheck::detail::random_relation_set(rng, 5);
    tr.action = Action::Left;
    b.transitions.push_back(tr);
    const PolicyOutput before = rn_forward(params, tr.state);
    b.transitions[0].value = before.value;
    b.bootstrap = 0.0;
    b.returns = {before.value};  // zero value error, zero advantage
    b.advantages = {0.0};

    ParameterStore trained = params;
    OptimizerState opt = OptimizerState::create(trained, 0.99, 0.1, 5e-4);
    Rng dr(1);
    auto [grads, metrics] =
        loss_and_grads(b, trained, 10.0, 0.5, dr, false, /*train_mode=*/false);
    rmsprop_update(trained, grads, opt);
    const PolicyOutput after = rn_forward(trained, tr.state);
    CHECK(entropy(after.probs) > entropy(before.probs));
  }
  SUBCASE("identical snapshot, rollout, and rng give identical gradients") {
    RolloutBuffer b;
    for (int i = 0; i < 2; ++i) {
      Transition tr;
      tr.state = gradcheck::detail::random_relation_set(rng, 4);
      tr.action = Action::Right;
      tr.reward = 1.0;
      tr.value = 0.2;
      b.transitions.push_back(std::move(tr));
    }
    b.bootstrap = 0.1;
    compute_targets(b, 0.9);
    auto run = [&] {
      Rng dr(55);
      return loss_and_grads(b, params, 0.02, 0.5, dr).first;
    };
    CHECK(run() == run());
  }
  SUBCASE("empty or untargeted buffers are usage errors") {
    RolloutBuffer empty;
    Rng dr(1);
    CHECK_THROWS_AS(loss_and_grads(empty, params, 0.0, 0.5, dr), UsageError);
    RolloutBuffer b = buffer_from({1.0}, 0.0);
    b.transitions[0].state = gradcheck::detail::random_relation_set(rng, 2);
    CHECK_THROWS_AS(loss_and_grads(b, params, 0.0, 0.5, dr), UsageError);
  }
}

TEST_CASE("rollout") {
  EnvConfig config;
  config.n_sensors = {1, 2};
  config.n_objects = {2, 5};
  config.horizon = {30, 40};
  const ParameterStore params = init_params(2);

  SUBCASE("multi-sensor rewards are credited to the main agent") {
    // Three sensors; an object sits deep inside sensor 2's large view with a
    // tiny sensor speed, so it is captured on the first step regardless of
    // the sampled actions.
    EnvState env;
    env.config.p_toggle = 0.0;
    env.config.sigma_turn = 0.0;
    env.config.p_reverse = 0.0;
    env.config.spawn_rate = 0.0;
    env.params.scene = SceneBounds{1.0, 1.0};
    env.params.n_sensors = 3;
    env.params.n_objects = 1;
    env.params.time_scale = 1.0;
    env.params.horizon = 10;
    env.sensors = {Sensor{0, Box{0.15, 0.15, 0.2, 0.2}, 1e-4},
                   Sensor{1, Box{0.85, 0.15, 0.2, 0.2}, 1e-4},
                   Sensor{2, Box{0.5, 0.7, 0.4, 0.4}, 1e-4}};
    env.objects = {SimObject{0, Box{0.5, 0.7, 0.05, 0.05}, 0.0, 0.0, false, false}};
    env.next_object_id = 1;
    env.rng = Rng(3);

    std::vector<FrameHistory> histories(3);
    Rng rng(9);
    const RolloutBuffer buffer = rollout(env, histories, params, 1, rng);
    REQUIRE(buffer.size() == 1);
    CHECK(buffer.transitions[0].reward == doctest::Approx(1.0));
    CHECK(env.captured_total == 1);
  }
  SUBCASE("episode end stops the rollout with a zero bootstrap") {
    EnvState env = init_episode(config, 5);
    std::vector<FrameHistory> histories(env.sensors.size());
    Rng rng(9);
    const int horizon = env.params.horizon;
    const RolloutBuffer buffer =
        rollout(env, histories, params, horizon + 20, rng);
    CHECK(buffer.size() == static_cast<std::size_t>(horizon));
    CHECK(buffer.bootstrap == 0.0);
    CHECK(env.done());
  }
  SUBCASE("credited rewards over a full episode equal the episode's captures") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      EnvState env = init_episode(config, seed);
      std::vector<FrameHistory> histories(env.sensors.size());
      Rng rng(seed + 7);
      double total = 0.0;
      while (!env.done()) {
        const RolloutBuffer buffer = rollout(env, histories, params, 7, rng);
        for (const Transition& tr : buffer.transitions) total += tr.reward;
      }
      CHECK(total == doctest::Approx(env.captured_total));
    }
  }
  SUBCASE("t_max-bounded rollout bootstraps from the next state") {
    EnvState env = init_episode(config, 6);
    std::vector<FrameHistory> histories(env.sensors.size());
    Rng rng(10);
    const RolloutBuffer buffer = rollout(env, histories, params, 4, rng);
    CHECK(buffer.size() == 4);
    CHECK(std::isfinite(buffer.bootstrap));
    CHECK_FALSE(env.done());
    // Histories were advanced exactly once per step.
    CHECK(histories[0].frames.size() == 4);
  }
}

TEST_CASE("train") {
  EnvConfig env_config;
  env_config.n_sensors = {1, 1};
  env_config.n_objects = {2, 4};
  env_config.horizon = {20, 30};

  TrainerConfig config;
  config.n_workers = 1;
  config.t_max = 5;
  config.total_env_steps = 120;
  config.seed = 42;

  SUBCASE("single-worker training is deterministic") {
    std::ostringstream log_a, log_b;
    const TrainResult a = train(config, env_config, &log_a);
    const TrainResult b = train(config, env_config, &log_b);
    CHECK(a.params == b.params);
    CHECK(a.env_steps == b.env_steps);
    CHECK(log_a.str() == log_b.str());
    CHECK(a.env_steps >= config.total_env_steps);
  }
  SUBCASE("training log carries one record per update") {
    std::ostringstream log;
    std::vector<TrainLogRecord> records;
    const TrainResult r = train(config, env_config, &log,
                                [&](const TrainLogRecord& rec) {
                                  records.push_back(rec);
                                });
    CHECK(static_cast<long long>(records.size()) == r.updates);
    long long steps = 0;
    for (const auto& rec : records) {
      CHECK(rec.lr == config.alpha);
      CHECK(rec.beta == config.beta);
      CHECK(rec.gamma == config.gamma);
      steps = std::max(steps, rec.env_steps);
    }
    CHECK(steps == r.env_steps);
    // And the stream got the same number of lines.
    std::istringstream in(log.str());
    std::string line;
    long long lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == r.updates);
  }
  SUBCASE("multi-worker smoke run") {
    config.n_workers = 4;
    config.total_env_steps = 400;
    const TrainResult r = train(config, env_config);
    CHECK(r.env_steps >= 400);
    validate_params(r.params);
  }
  SUBCASE("config validation names the offending field") {
    config.gamma = 1.5;
    CHECK_THROWS_WITH_AS(train(config, env_config),
                         "trainer.gamma must be in (0,1]", ConfigError);
  }
}

TEST_CASE("hyperparameter_search") {
  EnvConfig env_config;
  env_config.n_sensors = {1, 1};
  env_config.n_objects = {2, 3};
  env_config.horizon = {15, 20};

  TrainerConfig base;
  base.n_workers = 1;
  base.t_max = 5;
  base.total_env_steps = 60;
  base.seed = 7;

  SUBCASE("singleton ranges pin the hyperparameters") {
    SearchSpec spec;
    spec.alpha = {1e-4, 1e-4};
    spec.beta = {0.01, 0.01};
    spec.gamma_set = {0.95};
    spec.agents = 2;
    const auto runs = hyperparameter_search(spec, base, env_config, 3);
    REQUIRE(runs.size() == 2);
    for (const auto& run : runs) {
      CHECK(run.alpha == doctest::Approx(1e-4));
      CHECK(run.beta == doctest::Approx(0.01));
      CHECK(run.gamma == 0.95);
      CHECK_FALSE(run.failed);
    }
  }
  SUBCASE("runs come back ranked by evaluation score") {
    SearchSpec spec;
    spec.agents = 3;
    const auto runs = hyperparameter_search(spec, base, env_config, 3);
    REQUIRE(runs.size() == 3);
    for (std::size_t i = 1; i < runs.size(); ++i)
      CHECK(runs[i - 1].eval_capture_pct >= runs[i].eval_capture_pct);
  }
}
