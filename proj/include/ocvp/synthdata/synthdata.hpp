// SPDX-License-Identifier: Apache-2.0
//
// Seeded multi-object bouncing-scene video generation with exact panoptic
// instance masks, plus the on-disk dataset container.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ocvp/core/kv.hpp"

namespace ocvp::synthdata {

struct Vec2 {
  double x = 0, y = 0;
};

struct Box {
  Vec2 lo, hi;
  bool contains(Vec2 p) const { return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y; }
};

/// Class list (index 0 = background) and slots per class. Slot ordering is
/// total and deterministic: class index first, then slot index within class.
struct SceneSchema {
  std::vector<std::string> classes;
  std::vector<int> slots_per_class;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int total_slots() const;
  int class_of_slot(int slot) const;
  int first_slot_of_class(int class_id) const;
  int foreground_slots() const { return total_slots() - 1; }

  void validate() const;
  std::string to_string() const;  // "background:1;ball:2"
  static SceneSchema from_string(const std::string& s);
};

struct PhysicsParams {
  Box colliding_position_range{{-1, -1}, {1, 1}};
  double summon_radius = 5.0;
  double min_summon_distance = 2.0;
  double max_initial_speed = 5.0;
  double ground_friction = 0.3;   // per-second velocity decay
  double restitution = 0.9;       // global default, in [0,1]
  std::vector<double> class_restitution;  // optional per-class override, indexed by class id
  double object_radius_min = 0.8;
  double object_radius_max = 1.3;
  double dt = 0.15;
  int max_sample_attempts = 1000;
  /// Redraw scene velocities until the simulated clip contains an
  /// inter-object contact (only meaningful with >= 2 foreground slots).
  bool require_collision = true;

  double restitution_of(int class_id) const;
  void validate() const;
  void to_kv(core::KvMap& kv, const std::string& prefix) const;
  static PhysicsParams from_kv(const core::KvMap& kv, const std::string& prefix,
                               std::vector<std::string>* errors);
};

struct ObjectState {
  Vec2 position;
  Vec2 velocity;
  double radius = 1.0;
  float color[3] = {1, 1, 1};
  int class_id = 0;
  int slot_id = 0;
};

struct ClipSpec {
  int n_frames = 10;  // conditioning + horizon
  int height = 32;
  int width = 32;
  double world_to_pixel = 2.5;

  void validate() const;
  Box world_bounds() const;
  void to_kv(core::KvMap& kv, const std::string& prefix) const;
  static ClipSpec from_kv(const core::KvMap& kv, const std::string& prefix,
                          std::vector<std::string>* errors);
};

struct FrameU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // h*w*3 row-major
};

struct MaskU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> ids;  // h*w slot ids
};

struct Clip {
  std::vector<FrameU8> frames;
  std::vector<MaskU8> masks;
};

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

/// Foreground objects summoned inside summon_radius with pairwise distance
/// >= min_summon_distance, all aimed at one target point sampled inside the
/// colliding position range, speed in (0.3, 1.0] * max_initial_speed.
std::vector<ObjectState> sample_scene(const SceneSchema& schema, const PhysicsParams& physics,
                                      uint64_t rng_seed);

/// One integration step: advance, apply friction, reflect off the walls of
/// `bounds`, resolve pairwise circle collisions as equal-mass impulses.
/// Returns the number of inter-object contacts resolved this step.
int step_physics(std::vector<ObjectState>& states, const PhysicsParams& physics, const Box& bounds);

struct Rendered {
  FrameU8 frame;
  MaskU8 mask;
};

/// Hard-edged disks, painter's order by slot id (higher slot occludes lower);
/// background slot 0 claims every unclaimed pixel.
Rendered render_frame(const std::vector<ObjectState>& states, const ClipSpec& spec,
                      const SceneSchema& schema);

struct SlotCentroid {
  int frame = 0;
  int slot = 0;
  double cx_px = 0, cy_px = 0;
};

struct SimulatedClip {
  Clip clip;
  std::vector<SlotCentroid> centroids;
  int collision_contacts = 0;
};

SimulatedClip simulate_clip(const SceneSchema& schema, const PhysicsParams& physics,
                            const ClipSpec& spec, uint64_t clip_seed);

// ---------------------------------------------------------------------------
// container
// ---------------------------------------------------------------------------

struct DatasetManifest {
  int format_version = 1;
  std::string name;
  SceneSchema schema;
  PhysicsParams physics;
  ClipSpec clip_spec;
  int n_clips = 0;
  uint64_t seed = 0;
  std::string config_hash;

  core::KvMap to_kv(bool with_hash) const;
};

/// Writes manifest, per-clip .ocv files, and the centroid sidecar. Re-running
/// with identical arguments reproduces every file byte for byte.
DatasetManifest generate_dataset(const std::string& name, const SceneSchema& schema,
                                 const PhysicsParams& physics, const ClipSpec& spec, int n_clips,
                                 uint64_t seed, const std::string& out_path);

std::string clip_filename(int index);
void save_clip(const std::string& path, const Clip& clip);
Clip load_clip(const std::string& path);

/// Read-only view of a generated dataset directory.
class Dataset {
 public:
  explicit Dataset(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::string& dir() const { return dir_; }
  int n_clips() const { return manifest_.n_clips; }
  Clip clip(int index) const;

  /// Per-clip centroid records from the sidecar (throws if missing).
  std::vector<std::vector<SlotCentroid>> load_centroids() const;

 private:
  std::string dir_;
  DatasetManifest manifest_;
};

}  // namespace ocvp::synthdata
