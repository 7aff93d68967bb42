#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "rnac/agent.hpp"
#include "rnac/observation.hpp"
#include "rnac/tape.hpp"
#include "rnac/trainer.hpp"

namespace rnac {

// Central-difference verification of the reverse-mode gradients, for each op
// in isolation and for the complete forward + A3C loss (dropout off). This is
// the independent oracle: it evaluates the forward path only.
//
// ReLU makes the loss piecewise smooth; a probe whose +-h interval straddles
// an activation boundary yields a meaningless difference quotient. Each probe
// therefore compares the step-h and step-h/2 estimates and is skipped (and
// counted) when they disagree beyond the smooth-case level.
namespace gradcheck {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kTolerance = 1e-4;

// Relative error with an absolute floor so near-zero gradients are compared
// against the finite-difference noise level rather than each other.
inline double rel_error(double a, double b) {
  return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), 1e-3);
}

struct Report {
  double max_rel_error = 0.0;
  long long checks = 0;
  long long skipped_nonsmooth = 0;
  std::vector<std::string> failures;

  bool pass() const { return failures.empty() && checks > 0; }

  // fd_h and fd_h2 are the step-h and step-h/2 central differences.
  void record(const std::string& what, double ad, double fd_h, double fd_h2) {
    const double denom = std::max(std::fabs(ad) + std::fabs(fd_h2), 1e-3);
    if (std::fabs(fd_h - fd_h2) > 0.25 * kTolerance * denom) {
      ++skipped_nonsmooth;
      return;
    }
    ++checks;
    const double err = rel_error(ad, fd_h2);
    if (err > max_rel_error) max_rel_error = err;
    if (err >= kTolerance)
      failures.push_back(what + ": reverse-mode " + std::to_string(ad) +
                         " vs central-difference " + std::to_string(fd_h2) +
                         " (rel " + std::to_string(err) + ")");
  }
};

namespace detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Checks d(projection . op(inputs))/d(inputs) against central differences for
// every input coordinate. `run` must rebuild the graph from the current input
// values on each call and return the op output node.
inline void check_op(
    Report& report, const std::string& name, std::vector<Tensor> inputs,
    const std::function<Tape::NodeId(Tape&, std::vector<Tape::NodeId>&)>& run,
    Rng& rng) {
  Tensor projection;
  auto forward = [&](bool want_backward,
                     std::vector<Tensor>* grads_out) -> double {
    Tape tape;
    std::vector<Tape::NodeId> ids;
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t, true));
    const Tape::NodeId out = run(tape, ids);
    if (projection.size() == 0)  // first call fixes a random projection
      projection = random_tensor(tape.value(out).shape(), rng);
    const Tape::NodeId loss = tape.sum_all(tape.mul(out, tape.leaf(projection)));
    const double value = tape.value(loss)[0];
    if (want_backward) {
      tape.backward(loss);
      grads_out->clear();
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& g = tape.grad(ids[i]);
        grads_out->push_back(g.size() ? g : Tensor::zeros(inputs[i].shape()));
      }
    }
    return value;
  };

  std::vector<Tensor> grads;
  forward(true, &grads);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i][j];
      auto probe = [&](double h) {
        inputs[i][j] = keep + h;
        const double hi = forward(false, nullptr);
        inputs[i][j] = keep - h;
        const double lo = forward(false, nullptr);
        inputs[i][j] = keep;
        return (hi - lo) / (2.0 * h);
      };
      const double fd_h = probe(kFdStep);
      const double fd_h2 = probe(0.5 * kFdStep);
      report.record(name + "[" + std::to_string(i) + "][" + std::to_string(j) + "]",
                    grads[i][j], fd_h, fd_h2);
    }
  }
}

inline RelationSet random_relation_set(Rng& rng, std::size_t rows) {
  RelationSet rel;
  rel.rows = random_tensor({rows, kRelationDim}, rng);
  for (std::size_t i = 0; i < rows; ++i)
    rel.pair_index.emplace_back(EntityRef{true, 0},
                                EntityRef{false, static_cast<int>(i)});
  return rel;
}

inline RolloutBuffer random_buffer(Rng& rng, std::size_t steps) {
  RolloutBuffer buffer;
  for (std::size_t i = 0; i < steps; ++i) {
    Transition tr;
    tr.state = random_relation_set(
        rng, static_cast<std::size_t>(rng.uniform_int(1, 5)));
    tr.action = static_cast<Action>(rng.uniform_int(0, kActionCount - 1));
    tr.reward = rng.bernoulli(0.4) ? rng.uniform(0.0, 2.0) : 0.0;
    tr.value = rng.uniform(-1.0, 1.0);
    buffer.transitions.push_back(std::move(tr));
  }
  buffer.bootstrap = rng.uniform(-1.0, 1.0);
  return buffer;
}

}  // namespace detail

// Per-op checks with small random shapes.
inline void check_layers(Report& report, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1a));
  using detail::check_op;
  using detail::random_tensor;

  check_op(report, "affine",
           {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng),
            random_tensor({2}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.affine(in[0], in[1], in[2]);
           },
           rng);
  check_op(report, "relu", {random_tensor({3, 5}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) { return t.relu(in[0]); },
           rng);
  check_op(report, "softmax", {random_tensor({2, 5}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.softmax_rows(in[0]);
           },
           rng);
  check_op(report, "log_softmax", {random_tensor({2, 5}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.log_softmax_rows(in[0]);
           },
           rng);
  // Dropout differentiates with a fixed mask: the rng is re-seeded per
  // evaluation so the finite-difference probes see the same mask.
  const std::uint64_t mask_seed = derive_seed(seed, 0xd0);
  check_op(report, "dropout", {random_tensor({2, 6}, rng)},
           [mask_seed](Tape& t, std::vector<Tape::NodeId>& in) {
             Rng mask_rng(mask_seed);
             return t.dropout(in[0], 0.3, mask_rng);
           },
           rng);
  check_op(report, "sum_rows", {random_tensor({4, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.sum_rows(in[0]);
           },
           rng);
  check_op(report, "scale_rows",
           {random_tensor({4, 3}, rng), random_tensor({4}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.scale_rows(in[0], in[1]);
           },
           rng);
  check_op(report, "mul", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.mul(in[0], in[1]);
           },
           rng);
  check_op(report, "sub", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.sub(in[0], in[1]);
           },
           rng);
  check_op(report, "square", {random_tensor({2, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) { return t.square(in[0]); },
           rng);
  check_op(report, "pick", {random_tensor({1, 6}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) { return t.pick(in[0], 2); },
           rng);
  check_op(report, "scale_add_const", {random_tensor({2, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.add_const(t.scale(in[0], -1.7), 0.4);
           },
           rng);
  check_op(report, "sum_all", {random_tensor({3, 3}, rng)},
           [](Tape& t, std::vector<Tape::NodeId>& in) {
             return t.sum_all(in[0]);
           },
           rng);
}

// Full forward + loss: reverse-mode parameter gradients vs central
// differences on sampled coordinates of every parameter tensor.
inline void check_full_model(Report& report, std::uint64_t seed,
                             std::size_t coords_per_tensor = 8) {
  Rng rng(derive_seed(seed, 0xF));
  ParameterStore params = init_params(derive_seed(seed, 0xFF));
  RolloutBuffer buffer = detail::random_buffer(rng, 3);
  compute_targets(buffer, 0.97);

  auto loss_value = [&]() {
    return build_loss(buffer, params, 0.01, 0.5, nullptr, /*train_mode=*/false)
        .metrics.total_loss;
  };

  LossGraph g = build_loss(buffer, params, 0.01, 0.5, nullptr, false);
  g.tape.backward(g.total);
  const GradMap grads = g.tape.named_grads();

  for (auto& [name, tensor] : params) {
    const Tensor& grad = grads.at(name);
    for (std::size_t c = 0; c < coords_per_tensor; ++c) {
      const std::size_t j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(tensor.size()) - 1));
      const double keep = tensor[j];
      auto probe = [&](double h) {
        tensor[j] = keep + h;
        const double hi = loss_value();
        tensor[j] = keep - h;
        const double lo = loss_value();
        tensor[j] = keep;
        return (hi - lo) / (2.0 * h);
      };
      const double fd_h = probe(kFdStep);
      const double fd_h2 = probe(0.5 * kFdStep);
      report.record("model." + name + "[" + std::to_string(j) + "]", grad[j],
                    fd_h, fd_h2);
    }
  }
}

inline Report run(int seeds = 20, std::ostream* log = nullptr) {
  Report report;
  for (int s = 0; s < seeds; ++s) {
    check_layers(report, static_cast<std::uint64_t>(s) + 1);
    check_full_model(report, static_cast<std::uint64_t>(s) + 1);
    if (log)
      (*log) << "gradcheck seed " << s + 1 << "/" << seeds
             << ": max rel error so far " << report.max_rel_error << "\n";
  }
  return report;
}

}  // namespace gradcheck
}  // namespace rnac
