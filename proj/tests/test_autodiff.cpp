#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rnac/gradcheck.hpp"
#include "rnac/nn.hpp"
#include "rnac/tape.hpp"
#include "rnac/tensor.hpp"

using namespace rnac;

TEST_CASE("affine_forward") {
  Tape tape;
  SUBCASE("identity map") {
    auto x = tape.leaf(Tensor({1, 2}, {3, 4}));
    auto W = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    auto b = tape.leaf(Tensor({2}, {0, 0}));
    const Tensor& y = tape.value(tape.affine(x, W, b));
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 4.0);
  }
  SUBCASE("2*3+1") {
    auto x = tape.leaf(Tensor({1, 2}, {3, 4}));
    auto W = tape.leaf(Tensor({1, 2}, {2, 0}));
    auto b = tape.leaf(Tensor({1}, {1}));
    CHECK(tape.value(tape.affine(x, W, b))[0] == 7.0);
  }
  SUBCASE("bias only") {
    auto x = tape.leaf(Tensor({1, 2}, {9, -2}));
    auto W = tape.leaf(Tensor({1, 2}, {0, 0}));
    auto b = tape.leaf(Tensor({1}, {5}));
    CHECK(tape.value(tape.affine(x, W, b))[0] == 5.0);
  }
  SUBCASE("shape mismatch throws") {
    auto x = tape.leaf(Tensor({1, 3}));
    auto W = tape.leaf(Tensor({2, 2}));
    auto b = tape.leaf(Tensor({2}));
    CHECK_THROWS_AS(tape.affine(x, W, b), ShapeError);
  }
}

TEST_CASE("activations and dropout") {
  Tape tape;
  SUBCASE("softmax of zeros is uniform over 5") {
    auto z = tape.leaf(Tensor({1, 5}, {0, 0, 0, 0, 0}));
    const Tensor& p = tape.value(tape.softmax_rows(z));
    for (std::size_t k = 0; k < 5; ++k) CHECK(p[k] == doctest::Approx(0.2));
  }
  SUBCASE("relu clips negatives") {
    auto x = tape.leaf(Tensor({1, 2}, {-1, 2}));
    const Tensor& y = tape.value(tape.relu(x));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 2.0);
  }
  SUBCASE("softmax rows sum to 1 with entries in (0,1)") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      Tensor z({3, 5});
      for (double& v : z.values()) v = rng.uniform(-12.0, 12.0);
      Tape t;
      const Tensor& p = t.value(t.softmax_rows(t.leaf(z)));
      for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
          CHECK(p.at(r, k) > 0.0);
          CHECK(p.at(r, k) < 1.0);
          sum += p.at(r, k);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("dropout in train mode preserves expectation within 1%") {
    Rng rng(123);
    const double rate = 0.02;
    const int trials = 100000;
    double sum = 0.0;
    for (int i = 0; i < trials; ++i) {
      Tape t;
      auto x = t.leaf(Tensor({1, 1}, {1.0}));
      sum += t.value(t.dropout(x, rate, rng))[0];
    }
    CHECK(std::fabs(sum / trials - 1.0) < 0.01);
  }
  SUBCASE("dropout rate outside [0,1) is rejected") {
    Rng rng(1);
    auto x = tape.leaf(Tensor({1, 1}, {1.0}));
    CHECK_THROWS_AS(tape.dropout(x, 1.0, rng), UsageError);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("d(w*x)/dw = x") {
    Tape tape;
    auto w = tape.param("w", Tensor({1, 1}, {2.0}));
    auto x = tape.leaf(Tensor({1, 1}, {3.0}));
    auto loss = tape.sum_all(tape.mul(w, x));
    tape.backward(loss);
    CHECK(tape.named_grads().at("w")[0] == 3.0);
  }
  SUBCASE("softmax cross-entropy gradient is p - onehot") {
    Tape tape;
    auto z = tape.leaf(Tensor({1, 5}, {0.3, -1.2, 0.7, 0.0, 2.0}), true);
    auto nll = tape.scale(tape.pick(tape.log_softmax_rows(z), 2), -1.0);
    tape.backward(nll);
    const Tensor p = Tape::softmax_values(Tensor({1, 5}, {0.3, -1.2, 0.7, 0.0, 2.0}));
    const Tensor& g = tape.grad(z);
    for (std::size_t k = 0; k < 5; ++k) {
      const double expect = p[k] - (k == 2 ? 1.0 : 0.0);
      CHECK(g[k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    auto x = tape.leaf(Tensor({1, 2}, {1, 2}), true);
    CHECK_THROWS_AS(tape.backward(x), UsageError);
  }
  SUBCASE("empty relation batch flows through affine and sum_rows") {
    Tape tape;
    auto x = tape.leaf(Tensor({0, 3}));
    auto W = tape.param("w", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto b = tape.param("b", Tensor({2}, {0.5, -0.5}));
    auto pooled = tape.sum_rows(tape.affine(x, W, b));
    const Tensor& v = tape.value(pooled);
    CHECK(v.shape() == std::vector<std::size_t>{1, 2});
    CHECK(v[0] == 0.0);
    CHECK(v[1] == 0.0);
  }
}

TEST_CASE("gradcheck: every op matches central differences") {
  gradcheck::Report report;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    gradcheck::check_layers(report, seed);
  CAPTURE(report.max_rel_error);
  for (const auto& f : report.failures) MESSAGE(f);
  CHECK(report.pass());
  CHECK(report.max_rel_error < gradcheck::kTolerance);
}

TEST_CASE("gradcheck: full model forward+loss matches central differences") {
  gradcheck::Report report;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    gradcheck::check_full_model(report, seed, 4);
  for (const auto& f : report.failures) MESSAGE(f);
  CHECK(report.pass());
  CHECK(report.max_rel_error < gradcheck::kTolerance);
}

TEST_CASE("clip_global_norm") {
  SUBCASE("norm below the cap is untouched") {
    GradMap g{{"a", Tensor({2}, {3, 4})}};
    clip_global_norm(g, 10.0);
    CHECK(g.at("a")[0] == 3.0);
    CHECK(g.at("a")[1] == 4.0);
  }
  SUBCASE("rescales to the cap") {
    GradMap g{{"a", Tensor({2}, {3, 4})}};
    clip_global_norm(g, 1.0);
    CHECK(g.at("a")[0] == doctest::Approx(0.6));
    CHECK(g.at("a")[1] == doctest::Approx(0.8));
  }
  SUBCASE("zero gradients stay zero") {
    GradMap g{{"a", Tensor({3})}};
    clip_global_norm(g, 1.0);
    for (double v : g.at("a").values()) CHECK(v == 0.0);
  }
  SUBCASE("norm spans tensors") {
    GradMap g{{"a", Tensor({1}, {3})}, {"b", Tensor({1}, {4})}};
    clip_global_norm(g, 2.5);  // joint norm 5 -> halved
    CHECK(g.at("a")[0] == doctest::Approx(1.5));
    CHECK(g.at("b")[0] == doctest::Approx(2.0));
  }
}

TEST_CASE("rmsprop_update") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore p{{"w", Tensor({2}, {1.0, -2.0})}};
    OptimizerState opt = OptimizerState::create(p, 0.99, 0.1, 0.5);
    rmsprop_update(p, GradMap{{"w", Tensor({2})}}, opt);
    CHECK(p.at("w")[0] == 1.0);
    CHECK(p.at("w")[1] == -2.0);
  }
  SUBCASE("rho=0, eps~0 takes a normalized step of alpha*sign(g)") {
    ParameterStore p{{"w", Tensor({1}, {1.0})}};
    OptimizerState opt = OptimizerState::create(p, 0.0, 1e-300, 0.1);
    rmsprop_update(p, GradMap{{"w", Tensor({1}, {0.004})}}, opt);
    CHECK(p.at("w")[0] == doctest::Approx(0.9));
  }
  SUBCASE("key mismatch is a usage error") {
    ParameterStore p{{"w", Tensor({1})}};
    OptimizerState opt = OptimizerState::create(p, 0.99, 0.1, 0.1);
    CHECK_THROWS_AS(rmsprop_update(p, GradMap{{"nope", Tensor({1})}}, opt),
                    UsageError);
  }
  SUBCASE("result is independent of gradient insertion order") {
    auto run = [](std::vector<std::pair<std::string, double>> grads) {
      ParameterStore p{{"a", Tensor({1}, {1.0})},
                       {"b", Tensor({1}, {2.0})},
                       {"c", Tensor({1}, {3.0})}};
      OptimizerState opt = OptimizerState::create(p, 0.9, 0.01, 0.05);
      GradMap g;
      for (auto& [k, v] : grads) g[k] = Tensor({1}, {v});
      rmsprop_update(p, g, opt);
      return std::vector<double>{p.at("a")[0], p.at("b")[0], p.at("c")[0]};
    };
    const auto fwd = run({{"a", 0.1}, {"b", -0.2}, {"c", 0.3}});
    const auto rev = run({{"c", 0.3}, {"b", -0.2}, {"a", 0.1}});
    CHECK(fwd == rev);
  }
  SUBCASE("deterministic trajectory across runs") {
    auto run = [] {
      Rng rng(42);
      ParameterStore p{{"w", Tensor({4}, {0.1, -0.2, 0.3, -0.4})}};
      OptimizerState opt = OptimizerState::create(p, 0.99, 0.1, 0.01);
      for (int i = 0; i < 50; ++i) {
        Tensor g({4});
        for (double& v : g.values()) v = rng.uniform(-1.0, 1.0);
        rmsprop_update(p, GradMap{{"w", g}}, opt);
      }
      return p.at("w");
    };
    CHECK(run() == run());
  }
}
