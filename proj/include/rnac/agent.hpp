#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "rnac/error.hpp"
#include "rnac/nn.hpp"
#include "rnac/observation.hpp"
#include "rnac/rng.hpp"
#include "rnac/sim.hpp"
#include "rnac/tape.hpp"

namespace rnac {

// Fixed network dimensions: relation MLP 60 -> 128 -> 256 -> 256, summed,
// then 256 -> 256 with 2% dropout, feeding 5-way policy and scalar value
// heads.
struct RNArchitecture {
  static constexpr std::size_t relation_dim = kRelationDim;
  static constexpr std::array<std::size_t, 3> g_widths{128, 256, 256};
  static constexpr std::size_t f_width = 256;
  static constexpr double dropout_rate = 0.02;
  static constexpr std::size_t n_actions = kActionCount;
};

inline ParameterStore init_params(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore p;
  std::size_t in = RNArchitecture::relation_dim;
  const char* gnames[3] = {"g1", "g2", "g3"};
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const std::size_t out = RNArchitecture::g_widths[layer];
    p[std::string(gnames[layer]) + ".w"] = init_weight(out, in, rng);
    p[std::string(gnames[layer]) + ".b"] = init_bias(out, in, rng);
    in = out;
  }
  p["f1.w"] = init_weight(RNArchitecture::f_width, in, rng);
  p["f1.b"] = init_bias(RNArchitecture::f_width, in, rng);
  p["pi.w"] = init_weight(RNArchitecture::n_actions, RNArchitecture::f_width, rng);
  p["pi.b"] = init_bias(RNArchitecture::n_actions, RNArchitecture::f_width, rng);
  p["v.w"] = init_weight(1, RNArchitecture::f_width, rng);
  p["v.b"] = init_bias(1, RNArchitecture::f_width, rng);
  return p;
}

// Checks that a parameter map matches the compiled architecture exactly.
inline void validate_params(const ParameterStore& params) {
  const ParameterStore ref = init_params(0);
  if (params.size() != ref.size())
    throw VersionError("parameter store does not match architecture: expected " +
                       std::to_string(ref.size()) + " tensors, got " +
                       std::to_string(params.size()));
  for (const auto& [name, t] : ref) {
    auto it = params.find(name);
    if (it == params.end())
      throw VersionError("parameter store missing tensor " + name);
    if (it->second.shape() != t.shape())
      throw VersionError("parameter " + name + " has shape " +
                         shape_str(it->second) + ", expected " + shape_str(t));
  }
}

struct PolicyOutput {
  std::array<double, RNArchitecture::n_actions> probs{};
  std::array<double, RNArchitecture::n_actions> logits{};
  double value = 0.0;
  Tensor relation_activations;  // [n, 256] post-relation-MLP rows
};

// Tape node handles for the pieces the trainer and the attribution pass need.
struct ForwardNodes {
  Tape::NodeId relation_activations = -1;
  Tape::NodeId gates = -1;  // -1 when no gates were injected
  Tape::NodeId logits = -1;
  Tape::NodeId probs = -1;
  Tape::NodeId value = -1;
};

// Full forward pass on a tape. `gate_values`, when given, scales each
// relation's activation row before summation (used by the attribution pass).
// Dropout fires only in train mode and draws from `dropout_rng`.
inline ForwardNodes rn_forward_tape(Tape& tape, const ParameterStore& params,
                                    const RelationSet& rel, bool train_mode,
                                    Rng* dropout_rng,
                                    const Tensor* gate_values,
                                    bool mean_aggregate = false) {
  if (rel.rows.rank() != 2 || rel.rows.dim(1) != RNArchitecture::relation_dim)
    throw ShapeError("rn_forward: relation rows must be [n," +
                     std::to_string(RNArchitecture::relation_dim) + "], got " +
                     shape_str(rel.rows));
  auto P = [&](const std::string& name) -> Tape::NodeId {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("missing parameter " + name);
    return tape.param(name, it->second);
  };

  Tape::NodeId x = tape.leaf(rel.rows);
  x = tape.relu(tape.affine(x, P("g1.w"), P("g1.b")));
  x = tape.relu(tape.affine(x, P("g2.w"), P("g2.b")));
  x = tape.relu(tape.affine(x, P("g3.w"), P("g3.b")));

  ForwardNodes nodes;
  nodes.relation_activations = x;
  if (gate_values) {
    nodes.gates = tape.leaf(*gate_values, /*needs_grad=*/true);
    x = tape.scale_rows(x, nodes.gates);
  }
  Tape::NodeId pooled = tape.sum_rows(x);
  if (mean_aggregate && rel.row_count() > 0)
    pooled = tape.scale(pooled, 1.0 / static_cast<double>(rel.row_count()));

  Tape::NodeId f = tape.relu(tape.affine(pooled, P("f1.w"), P("f1.b")));
  if (train_mode) {
    if (!dropout_rng) throw UsageError("rn_forward: train mode needs an rng");
    f = tape.dropout(f, RNArchitecture::dropout_rate, *dropout_rng);
  }
  nodes.logits = tape.affine(f, P("pi.w"), P("pi.b"));
  nodes.probs = tape.softmax_rows(nodes.logits);
  nodes.value = tape.pick(tape.affine(f, P("v.w"), P("v.b")), 0);
  return nodes;
}

inline PolicyOutput rn_forward(const ParameterStore& params,
                               const RelationSet& rel, bool train_mode = false,
                               Rng* dropout_rng = nullptr,
                               bool mean_aggregate = false) {
  Tape tape;
  const ForwardNodes nodes = rn_forward_tape(tape, params, rel, train_mode,
                                             dropout_rng, nullptr,
                                             mean_aggregate);
  PolicyOutput out;
  const Tensor& logits = tape.value(nodes.logits);
  const Tensor& probs = tape.value(nodes.probs);
  for (std::size_t k = 0; k < RNArchitecture::n_actions; ++k) {
    out.logits[k] = logits[k];
    out.probs[k] = probs[k];
  }
  out.value = tape.value(nodes.value)[0];
  out.relation_activations = tape.value(nodes.relation_activations);
  return out;
}

enum class ActionMode { Stochastic, Deterministic };

inline ActionMode parse_action_mode(const std::string& s) {
  if (s == "stochastic") return ActionMode::Stochastic;
  if (s == "deterministic") return ActionMode::Deterministic;
  throw ConfigError("action_mode must be 'stochastic' or 'deterministic', got '" +
                    s + "'");
}

inline const char* action_mode_name(ActionMode m) {
  return m == ActionMode::Stochastic ? "stochastic" : "deterministic";
}

// Stochastic: sample from probs. Deterministic: argmax, lowest index wins
// ties.
inline Action select_action(const PolicyOutput& out, ActionMode mode, Rng& rng) {
  if (mode == ActionMode::Deterministic) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < out.probs.size(); ++k)
      if (out.probs[k] > out.probs[best]) best = k;
    return static_cast<Action>(best);
  }
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t k = 0; k < out.probs.size(); ++k) {
    acc += out.probs[k];
    if (u < acc) return static_cast<Action>(k);
  }
  return static_cast<Action>(out.probs.size() - 1);  // guards rounding
}

}  // namespace rnac
