#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rnac/agent.hpp"
#include "rnac/error.hpp"
#include "rnac/observation.hpp"
#include "rnac/sim.hpp"
#include "rnac/tape.hpp"

namespace rnac {

struct ContributionEntry {
  EntityRef a;
  EntityRef b;
  double value = 0.0;
};

// Signed per-relation influence on how far the action distribution sits from
// uniform, plus the distribution it was computed for.
struct ContributionReport {
  std::vector<ContributionEntry> contributions;  // aligned with relation rows
  Action chosen_action = Action::NoOp;
  std::array<double, kActionCount> probs{};
  double divergence = 0.0;  // the KL value the gradient was taken of
};

// Scales each relation's activation row by a gate, takes the gradient of the
// KL divergence between the uniform distribution and the policy with respect
// to the gates, evaluated at all-ones. reverse_kl swaps the divergence's
// argument order.
inline ContributionReport relation_contributions(const ParameterStore& params,
                                                 const RelationSet& rel,
                                                 bool reverse_kl = false,
                                                 bool mean_aggregate = false) {
  const std::size_t n = rel.row_count();
  if (n == 0) throw UsageError("relation_contributions: empty relation set");

  Tensor ones({n});
  for (double& v : ones.values()) v = 1.0;

  Tape tape;
  const ForwardNodes nodes = rn_forward_tape(tape, params, rel,
                                             /*train_mode=*/false, nullptr,
                                             &ones, mean_aggregate);
  const double k = static_cast<double>(kActionCount);
  const Tape::NodeId logp = tape.log_softmax_rows(nodes.logits);
  Tape::NodeId divergence;
  if (reverse_kl) {
    // KL(pi || u) = sum pi log pi + log k
    divergence = tape.add_const(
        tape.sum_all(tape.mul(nodes.probs, logp)), std::log(k));
  } else {
    // KL(u || pi) = -log k - (1/k) sum_k log pi_k
    divergence =
        tape.add_const(tape.scale(tape.sum_all(logp), -1.0 / k), -std::log(k));
  }
  tape.backward(divergence);

  ContributionReport report;
  report.divergence = tape.value(divergence)[0];
  const Tensor& g = tape.grad(nodes.gates);
  report.contributions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ContributionEntry e;
    e.a = rel.pair_index[i].first;
    e.b = rel.pair_index[i].second;
    e.value = g.size() ? g[i] : 0.0;
    if (!std::isfinite(e.value))
      throw NumericError("non-finite relation contribution");
    report.contributions.push_back(e);
  }

  const Tensor& probs = tape.value(nodes.probs);
  std::size_t best = 0;
  for (std::size_t i = 0; i < kActionCount; ++i) {
    report.probs[i] = probs[i];
    if (probs[i] > probs[best]) best = i;
  }
  report.chosen_action = static_cast<Action>(best);
  return report;
}

struct FrameImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, top row first

  std::uint8_t* pixel(std::size_t row, std::size_t col) {
    return rgb.data() + 3 * (row * width + col);
  }
  const std::uint8_t* pixel(std::size_t row, std::size_t col) const {
    return rgb.data() + 3 * (row * width + col);
  }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Rgb kColorBackground{255, 255, 255};
inline constexpr Rgb kColorObject{0, 0, 0};
inline constexpr Rgb kColorCaptured{0, 255, 0};
inline constexpr Rgb kColorControlled{0, 255, 255};
inline constexpr Rgb kColorSensor{0, 0, 255};
inline constexpr Rgb kColorPositive{0, 255, 0};
inline constexpr Rgb kColorNegative{255, 0, 0};

namespace detail {

// World +y points up; pixel row 0 is the top of the scene.
inline bool center_inside(const Box& b, double scale, std::size_t height_px,
                          std::size_t row, std::size_t col) {
  const double wx = (static_cast<double>(col) + 0.5) / scale;
  const double wy = (static_cast<double>(height_px) - static_cast<double>(row) - 0.5) / scale;
  return wx >= b.left() && wx <= b.right() && wy >= b.bottom() && wy <= b.top();
}

inline void fill_box(FrameImage& img, const Box& b, double scale, Rgb color) {
  const std::size_t H = img.height, W = img.width;
  const long r0 = std::max(0L, static_cast<long>(std::floor(static_cast<double>(H) - b.top() * scale)) - 1);
  const long r1 = std::min(static_cast<long>(H) - 1,
                           static_cast<long>(std::ceil(static_cast<double>(H) - b.bottom() * scale)) + 1);
  const long c0 = std::max(0L, static_cast<long>(std::floor(b.left() * scale)) - 1);
  const long c1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(b.right() * scale)) + 1);
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c)
      if (center_inside(b, scale, H, static_cast<std::size_t>(r), static_cast<std::size_t>(c))) {
        std::uint8_t* p = img.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        p[0] = color.r;
        p[1] = color.g;
        p[2] = color.b;
      }
}

// One-pixel border: pixels inside the box with a 4-neighbour outside it.
inline void outline_box(FrameImage& img, const Box& b, double scale, Rgb color) {
  const std::size_t H = img.height, W = img.width;
  const long r0 = std::max(0L, static_cast<long>(std::floor(static_cast<double>(H) - b.top() * scale)) - 1);
  const long r1 = std::min(static_cast<long>(H) - 1,
                           static_cast<long>(std::ceil(static_cast<double>(H) - b.bottom() * scale)) + 1);
  const long c0 = std::max(0L, static_cast<long>(std::floor(b.left() * scale)) - 1);
  const long c1 = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(b.right() * scale)) + 1);
  auto inside = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= static_cast<long>(H) || c >= static_cast<long>(W))
      return false;
    return center_inside(b, scale, H, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c) {
      if (!inside(r, c)) continue;
      if (inside(r - 1, c) && inside(r + 1, c) && inside(r, c - 1) && inside(r, c + 1))
        continue;
      std::uint8_t* p = img.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      p[0] = color.r;
      p[1] = color.g;
      p[2] = color.b;
    }
}

inline void blend_pixel(FrameImage& img, long r, long c, Rgb color, double alpha) {
  if (r < 0 || c < 0 || r >= static_cast<long>(img.height) ||
      c >= static_cast<long>(img.width))
    return;
  std::uint8_t* p = img.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  p[0] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[0] + alpha * color.r));
  p[1] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[1] + alpha * color.g));
  p[2] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[2] + alpha * color.b));
}

inline void blend_line(FrameImage& img, double x0, double y0, double x1,
                       double y1, double scale, Rgb color, double alpha) {
  const double H = static_cast<double>(img.height);
  long c0 = std::lround(x0 * scale - 0.5);
  long r0 = std::lround(H - y0 * scale - 0.5);
  long c1 = std::lround(x1 * scale - 0.5);
  long r1 = std::lround(H - y1 * scale - 0.5);
  const long dc = std::labs(c1 - c0), dr = -std::labs(r1 - r0);
  const long sc = c0 < c1 ? 1 : -1, sr = r0 < r1 ? 1 : -1;
  long err = dc + dr;
  while (true) {
    blend_pixel(img, r0, c0, color, alpha);
    if (c0 == c1 && r0 == r1) break;
    const long e2 = 2 * err;
    if (e2 >= dr) {
      err += dr;
      c0 += sc;
    }
    if (e2 <= dc) {
      err += dc;
      r0 += sr;
    }
  }
}

}  // namespace detail

// Deterministic rasterization of a state: black uncaptured objects, green
// captured objects, cyan controlled sensor, blue other sensors; optional
// relation lines tinted by contribution sign with intensity normalized to the
// frame's strongest contribution.
inline FrameImage render_frame(const EnvState& state, int controlled_sensor,
                               const ContributionReport* contributions,
                               double scale) {
  if (!(scale > 0.0)) throw UsageError("render_frame: scale must be > 0");
  FrameImage img;
  img.width = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(state.params.scene.width * scale)));
  img.height = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(state.params.scene.height * scale)));
  img.rgb.assign(img.width * img.height * 3, 0);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    img.rgb[3 * i + 0] = kColorBackground.r;
    img.rgb[3 * i + 1] = kColorBackground.g;
    img.rgb[3 * i + 2] = kColorBackground.b;
  }

  for (const SimObject& o : state.objects)
    detail::fill_box(img, o.box, scale, o.captured ? kColorCaptured : kColorObject);
  for (const Sensor& s : state.sensors)
    detail::outline_box(img, s.view, scale,
                        s.id == controlled_sensor ? kColorControlled : kColorSensor);

  if (contributions && !contributions->contributions.empty()) {
    double max_abs = 0.0;
    for (const ContributionEntry& e : contributions->contributions)
      max_abs = std::max(max_abs, std::fabs(e.value));
    if (max_abs > 0.0) {
      auto center_of = [&](const EntityRef& e, double& x, double& y) {
        if (e.is_sensor) {
          for (const Sensor& s : state.sensors)
            if (s.id == e.id) {
              x = s.view.cx;
              y = s.view.cy;
              return true;
            }
        } else {
          for (const SimObject& o : state.objects)
            if (o.id == e.id) {
              x = o.box.cx;
              y = o.box.cy;
              return true;
            }
        }
        return false;
      };
      for (const ContributionEntry& e : contributions->contributions) {
        double ax, ay, bx, by;
        if (!center_of(e.a, ax, ay) || !center_of(e.b, bx, by)) continue;
        const double alpha = std::fabs(e.value) / max_abs;
        detail::blend_line(img, ax, ay, bx, by, scale,
                           e.value >= 0.0 ? kColorPositive : kColorNegative,
                           alpha);
      }
    }
  }
  return img;
}

// Binary P6: "P6\n{w} {h}\n255\n" then 3 bytes per pixel, top row first.
inline void write_ppm(const FrameImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw IoError("write failed: " + path);
}

// One sidecar record per analyzed frame: relation pairs, raw contribution
// values, the chosen action, and the action distribution.
inline std::string contribution_json_line(int t, const ContributionReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"t\":" << t << ",\"pairs\":[";
  for (std::size_t i = 0; i < r.contributions.size(); ++i) {
    if (i) os << ",";
    os << "[\"" << entity_str(r.contributions[i].a) << "\",\""
       << entity_str(r.contributions[i].b) << "\"]";
  }
  os << "],\"values\":[";
  for (std::size_t i = 0; i < r.contributions.size(); ++i) {
    if (i) os << ",";
    os << r.contributions[i].value;
  }
  os << "],\"action\":\"" << action_name(r.chosen_action) << "\",\"probs\":[";
  for (std::size_t i = 0; i < r.probs.size(); ++i) {
    if (i) os << ",";
    os << r.probs[i];
  }
  os << "],\"kl\":" << r.divergence << "}";
  return os.str();
}

}  // namespace rnac
