#pragma once

// Helpers shared by the unit and acceptance suites. Oracles here evaluate
// forward arithmetic only, so they stay independent of the reverse-mode path
// they are used to check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rnac/agent.hpp"
#include "rnac/observation.hpp"
#include "rnac/tape.hpp"

namespace rnac::testsupport {

// KL(uniform || pi) of the policy produced with the given relation gates.
inline double kl_of_gates(const ParameterStore& params, const RelationSet& rel,
                          const Tensor& gates) {
  Tape tape;
  const ForwardNodes nodes =
      rn_forward_tape(tape, params, rel, false, nullptr, &gates);
  const Tensor& probs = tape.value(nodes.probs);
  const double u = 1.0 / kActionCount;
  double kl = 0.0;
  for (std::size_t k = 0; k < kActionCount; ++k)
    kl += u * (std::log(u) - std::log(probs[k]));
  return kl;
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

// Spearman rank correlation: Pearson correlation of the rank vectors.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// One-sided p-value for rho > 0 under the large-sample normal approximation
// z = rho * sqrt(n - 1).
inline double spearman_p_value(double rho, std::size_t n) {
  const double z = rho * std::sqrt(static_cast<double>(n) - 1.0);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace rnac::testsupport
