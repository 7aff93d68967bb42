#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "rnac/error.hpp"
#include "rnac/geometry.hpp"
#include "rnac/sim.hpp"
#include "rnac/tensor.hpp"

namespace rnac {

inline constexpr std::size_t kFrameDim = 5;    // nbox (4) + type tag
inline constexpr std::size_t kStackFrames = 4;
inline constexpr std::size_t kEntityDim = kFrameDim * kStackFrames;  // 20
inline constexpr std::size_t kRelationDim = 3 * kEntityDim;          // 60

inline constexpr double kTagObject = 0.0;
inline constexpr double kTagOtherSensor = 0.5;
inline constexpr double kTagControlledSensor = 1.0;

// Sensors and objects have separate id spaces; an entity is the pair.
struct EntityRef {
  bool is_sensor = false;
  int id = 0;

  bool operator==(const EntityRef&) const = default;
  auto operator<=>(const EntityRef&) const = default;
};

inline std::string entity_str(const EntityRef& e) {
  return (e.is_sensor ? "s" : "o") + std::to_string(e.id);
}

// One entity as seen in one frame: normalized box plus type tag.
struct EntityFrame {
  NormalizedBox nbox;
  double type_tag = kTagObject;

  bool operator==(const EntityFrame&) const = default;
};

// The stacked 4-frame, 20-value representation of one entity.
struct ObjectVector {
  EntityRef entity;
  std::array<double, kEntityDim> values{};
};

// Ring buffer of the last kStackFrames per-entity frame snapshots for one
// controlled sensor. Entries are ordered sensors-then-objects, ascending id.
struct FrameHistory {
  struct Entry {
    EntityRef entity;
    EntityFrame frame;
  };
  struct Frame {
    std::vector<Entry> entries;

    const EntityFrame* find(const EntityRef& e) const {
      for (const Entry& en : entries)
        if (en.entity == e) return &en.frame;
      return nullptr;
    }
  };

  std::deque<Frame> frames;

  bool empty() const { return frames.empty(); }
  const Frame& newest() const { return frames.back(); }
};

// Snapshots the current state into the history. Captured objects are not
// recorded; the newest frame thus only carries entities the agent may see.
inline void push_history(FrameHistory& h, const EnvState& state,
                         int controlled_sensor) {
  bool known = false;
  for (const Sensor& s : state.sensors) known = known || s.id == controlled_sensor;
  if (!known)
    throw UsageError("push_history: unknown sensor id " +
                     std::to_string(controlled_sensor));

  FrameHistory::Frame frame;
  frame.entries.reserve(state.sensors.size() + state.objects.size());
  for (const Sensor& s : state.sensors) {
    const double tag =
        s.id == controlled_sensor ? kTagControlledSensor : kTagOtherSensor;
    frame.entries.push_back(
        {EntityRef{true, s.id},
         EntityFrame{normalize_box(s.view, state.params.scene), tag}});
  }
  for (const SimObject& o : state.objects) {
    if (o.captured) continue;
    frame.entries.push_back(
        {EntityRef{false, o.id},
         EntityFrame{normalize_box(o.box, state.params.scene), kTagObject}});
  }
  h.frames.push_back(std::move(frame));
  while (h.frames.size() > kStackFrames) h.frames.pop_front();
}

// The sensor-filtered conditioned relation set fed to the network.
struct RelationSet {
  Tensor rows;  // [n, kRelationDim]
  std::vector<std::pair<EntityRef, EntityRef>> pair_index;
  std::vector<EntityRef> entities;  // encode order: sensors then objects
  ObjectVector condition;

  std::size_t row_count() const { return rows.rank() == 2 ? rows.dim(0) : 0; }
};

namespace detail {

// Stacked vector oldest-to-newest; slots before an entity's first appearance
// are back-filled with that first appearance.
inline ObjectVector stack_entity(const FrameHistory& h, const EntityRef& e) {
  std::vector<const EntityFrame*> present;
  for (const FrameHistory::Frame& f : h.frames) present.push_back(f.find(e));
  const EntityFrame* fill = nullptr;
  for (const EntityFrame* p : present)
    if (p) {
      fill = p;
      break;
    }
  if (!fill) throw UsageError("stack_entity: entity absent from history");

  ObjectVector ov;
  ov.entity = e;
  std::size_t slot = 0;
  auto emit = [&](const EntityFrame& f) {
    ov.values[slot * kFrameDim + 0] = f.nbox.nx;
    ov.values[slot * kFrameDim + 1] = f.nbox.ny;
    ov.values[slot * kFrameDim + 2] = f.nbox.nw;
    ov.values[slot * kFrameDim + 3] = f.nbox.nh;
    ov.values[slot * kFrameDim + 4] = f.type_tag;
    ++slot;
  };
  const std::size_t missing = kStackFrames - present.size();
  for (std::size_t i = 0; i < missing; ++i) emit(*fill);
  // Slots before the first appearance replicate it; interior gaps (replayed
  // detections can flicker) carry the last seen frame forward.
  const EntityFrame* last = fill;
  for (const EntityFrame* p : present) {
    if (p) last = p;
    emit(*last);
  }
  return ov;
}

}  // namespace detail

// Builds all ordered entity pairs that include at least one sensor, each row
// conditioned on the controlled sensor's stacked vector.
inline RelationSet encode(const FrameHistory& h, int controlled_sensor) {
  if (h.empty()) throw UsageError("encode: history is empty");
  const FrameHistory::Frame& newest = h.newest();
  const EntityRef controlled{true, controlled_sensor};
  const EntityFrame* cf = newest.find(controlled);
  if (!cf || cf->type_tag != kTagControlledSensor)
    throw UsageError("encode: controlled sensor " +
                     std::to_string(controlled_sensor) +
                     " missing from newest frame");

  RelationSet rel;
  std::vector<ObjectVector> vectors;
  vectors.reserve(newest.entries.size());
  for (const FrameHistory::Entry& en : newest.entries) {
    rel.entities.push_back(en.entity);
    vectors.push_back(detail::stack_entity(h, en.entity));
  }
  rel.condition = detail::stack_entity(h, controlled);

  const std::size_t n = rel.entities.size();
  std::size_t rows = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (rel.entities[i].is_sensor || rel.entities[j].is_sensor) ++rows;
    }

  rel.rows = Tensor({rows, kRelationDim});
  rel.pair_index.reserve(rows);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      if (!rel.entities[i].is_sensor && !rel.entities[j].is_sensor) continue;
      double* row = rel.rows.data() + r * kRelationDim;
      std::copy(vectors[i].values.begin(), vectors[i].values.end(), row);
      std::copy(vectors[j].values.begin(), vectors[j].values.end(),
                row + kEntityDim);
      std::copy(rel.condition.values.begin(), rel.condition.values.end(),
                row + 2 * kEntityDim);
      rel.pair_index.emplace_back(rel.entities[i], rel.entities[j]);
      ++r;
    }
  return rel;
}

}  // namespace rnac
