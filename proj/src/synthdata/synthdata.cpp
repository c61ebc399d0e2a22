// SPDX-License-Identifier: Apache-2.0
#include "ocvp/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ocvp/core/hash.hpp"
#include "ocvp/core/rng.hpp"
#include "ocvp/core/tensor.hpp"

namespace fs = std::filesystem;

namespace ocvp::synthdata {

using core::KvMap;
using core::Rng;

// ---------------------------------------------------------------------------
// SceneSchema
// ---------------------------------------------------------------------------

int SceneSchema::total_slots() const {
  int n = 0;
  for (int s : slots_per_class) n += s;
  return n;
}

int SceneSchema::class_of_slot(int slot) const {
  int acc = 0;
  for (size_t c = 0; c < slots_per_class.size(); ++c) {
    acc += slots_per_class[c];
    if (slot < acc) return static_cast<int>(c);
  }
  OCVP_CHECK(false, "schema: slot " << slot << " out of range (N=" << total_slots() << ")");
  return -1;
}

int SceneSchema::first_slot_of_class(int class_id) const {
  int acc = 0;
  for (int c = 0; c < class_id; ++c) acc += slots_per_class[static_cast<size_t>(c)];
  return acc;
}

void SceneSchema::validate() const {
  OCVP_CHECK(!classes.empty() && classes.size() == slots_per_class.size(),
             "schema: classes/slots size mismatch");
  OCVP_CHECK(classes[0] == "background", "schema: class 0 must be 'background'");
  OCVP_CHECK(slots_per_class[0] == 1, "schema: background must have exactly one slot");
  for (int s : slots_per_class) OCVP_CHECK(s >= 1, "schema: every class needs at least one slot");
}

std::string SceneSchema::to_string() const {
  std::string out;
  for (size_t c = 0; c < classes.size(); ++c) {
    if (c) out += ";";
    out += classes[c] + ":" + std::to_string(slots_per_class[c]);
  }
  return out;
}

SceneSchema SceneSchema::from_string(const std::string& s) {
  SceneSchema schema;
  std::istringstream in(s);
  std::string part;
  while (std::getline(in, part, ';')) {
    size_t colon = part.find(':');
    OCVP_CHECK(colon != std::string::npos, "schema parse: expected 'name:count' in '" << part << "'");
    schema.classes.push_back(part.substr(0, colon));
    schema.slots_per_class.push_back(std::stoi(part.substr(colon + 1)));
  }
  schema.validate();
  return schema;
}

// ---------------------------------------------------------------------------
// PhysicsParams / ClipSpec
// ---------------------------------------------------------------------------

double PhysicsParams::restitution_of(int class_id) const {
  if (class_id >= 0 && static_cast<size_t>(class_id) < class_restitution.size() &&
      class_restitution[static_cast<size_t>(class_id)] >= 0)
    return class_restitution[static_cast<size_t>(class_id)];
  return restitution;
}

void PhysicsParams::validate() const {
  std::vector<std::string> bad;
  if (!(min_summon_distance < 2 * summon_radius)) bad.push_back("min_summon_distance < 2*summon_radius");
  if (!(max_initial_speed > 0)) bad.push_back("max_initial_speed > 0");
  if (!(restitution >= 0 && restitution <= 1)) bad.push_back("restitution in [0,1]");
  if (!(object_radius_min > 0 && object_radius_max >= object_radius_min))
    bad.push_back("0 < object_radius_min <= object_radius_max");
  if (!(dt > 0)) bad.push_back("dt > 0");
  if (!(colliding_position_range.lo.x <= colliding_position_range.hi.x &&
        colliding_position_range.lo.y <= colliding_position_range.hi.y))
    bad.push_back("colliding_position_range well-formed");
  if (!bad.empty()) {
    std::string msg = "physics params invalid:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw std::runtime_error(msg);
  }
}

void PhysicsParams::to_kv(KvMap& kv, const std::string& p) const {
  kv.set_double(p + "collide_x0", colliding_position_range.lo.x);
  kv.set_double(p + "collide_y0", colliding_position_range.lo.y);
  kv.set_double(p + "collide_x1", colliding_position_range.hi.x);
  kv.set_double(p + "collide_y1", colliding_position_range.hi.y);
  kv.set_double(p + "summon_radius", summon_radius);
  kv.set_double(p + "min_summon_distance", min_summon_distance);
  kv.set_double(p + "max_initial_speed", max_initial_speed);
  kv.set_double(p + "ground_friction", ground_friction);
  kv.set_double(p + "restitution", restitution);
  kv.set_double(p + "object_radius_min", object_radius_min);
  kv.set_double(p + "object_radius_max", object_radius_max);
  kv.set_double(p + "dt", dt);
  kv.set_int(p + "max_sample_attempts", max_sample_attempts);
  kv.set_bool(p + "require_collision", require_collision);
  std::string cr;
  for (size_t i = 0; i < class_restitution.size(); ++i) {
    if (i) cr += ";";
    cr += core::format_double(class_restitution[i]);
  }
  if (!cr.empty()) kv.set(p + "class_restitution", cr);
}

PhysicsParams PhysicsParams::from_kv(const KvMap& kv, const std::string& p,
                                     std::vector<std::string>* errors) {
  PhysicsParams d;
  PhysicsParams out;
  out.colliding_position_range.lo.x = kv.get_double(p + "collide_x0", d.colliding_position_range.lo.x, errors);
  out.colliding_position_range.lo.y = kv.get_double(p + "collide_y0", d.colliding_position_range.lo.y, errors);
  out.colliding_position_range.hi.x = kv.get_double(p + "collide_x1", d.colliding_position_range.hi.x, errors);
  out.colliding_position_range.hi.y = kv.get_double(p + "collide_y1", d.colliding_position_range.hi.y, errors);
  out.summon_radius = kv.get_double(p + "summon_radius", d.summon_radius, errors);
  out.min_summon_distance = kv.get_double(p + "min_summon_distance", d.min_summon_distance, errors);
  out.max_initial_speed = kv.get_double(p + "max_initial_speed", d.max_initial_speed, errors);
  out.ground_friction = kv.get_double(p + "ground_friction", d.ground_friction, errors);
  out.restitution = kv.get_double(p + "restitution", d.restitution, errors);
  out.object_radius_min = kv.get_double(p + "object_radius_min", d.object_radius_min, errors);
  out.object_radius_max = kv.get_double(p + "object_radius_max", d.object_radius_max, errors);
  out.dt = kv.get_double(p + "dt", d.dt, errors);
  out.max_sample_attempts = static_cast<int>(kv.get_int(p + "max_sample_attempts", d.max_sample_attempts, errors));
  out.require_collision = kv.get_bool(p + "require_collision", d.require_collision, errors);
  if (auto cr = kv.get(p + "class_restitution")) {
    std::istringstream in(*cr);
    std::string part;
    while (std::getline(in, part, ';')) out.class_restitution.push_back(std::stod(part));
  }
  return out;
}

void ClipSpec::validate() const {
  std::vector<std::string> bad;
  auto pow2 = [](int v) { return v >= 1 && (v & (v - 1)) == 0; };
  if (!(height == width)) bad.push_back("height == width");
  if (!(pow2(height) && height >= 32)) bad.push_back("resolution power of two >= 32");
  if (!(n_frames >= 10)) bad.push_back("n_frames >= 10");
  if (!(world_to_pixel > 0)) bad.push_back("world_to_pixel > 0");
  if (!bad.empty()) {
    std::string msg = "clip spec invalid:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw std::runtime_error(msg);
  }
}

Box ClipSpec::world_bounds() const {
  const double hx = width / (2.0 * world_to_pixel);
  const double hy = height / (2.0 * world_to_pixel);
  return Box{{-hx, -hy}, {hx, hy}};
}

void ClipSpec::to_kv(KvMap& kv, const std::string& p) const {
  kv.set_int(p + "n_frames", n_frames);
  kv.set_int(p + "height", height);
  kv.set_int(p + "width", width);
  kv.set_double(p + "world_to_pixel", world_to_pixel);
}

ClipSpec ClipSpec::from_kv(const KvMap& kv, const std::string& p, std::vector<std::string>* errors) {
  ClipSpec d;
  ClipSpec out;
  out.n_frames = static_cast<int>(kv.get_int(p + "n_frames", d.n_frames, errors));
  out.height = static_cast<int>(kv.get_int(p + "height", d.height, errors));
  out.width = static_cast<int>(kv.get_int(p + "width", d.width, errors));
  out.world_to_pixel = kv.get_double(p + "world_to_pixel", d.world_to_pixel, errors);
  return out;
}

// ---------------------------------------------------------------------------
// scene sampling
// ---------------------------------------------------------------------------

namespace {

void hsv_to_rgb(double h, double s, double v, float out[3]) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  if (h < 60) { r = c; g = x; }
  else if (h < 120) { r = x; g = c; }
  else if (h < 180) { g = c; b = x; }
  else if (h < 240) { g = x; b = c; }
  else if (h < 300) { r = x; b = c; }
  else { r = c; b = x; }
  out[0] = static_cast<float>(r + m);
  out[1] = static_cast<float>(g + m);
  out[2] = static_cast<float>(b + m);
}

constexpr float kBackground[3] = {0.10f, 0.10f, 0.14f};

}  // namespace

std::vector<ObjectState> sample_scene(const SceneSchema& schema, const PhysicsParams& physics,
                                      uint64_t rng_seed) {
  schema.validate();
  physics.validate();
  OCVP_CHECK(schema.foreground_slots() >= 1, "sample_scene: schema needs at least one foreground slot");
  Rng rng(rng_seed);

  const Box& cbox = physics.colliding_position_range;
  const Vec2 target{rng.uniform(cbox.lo.x, cbox.hi.x), rng.uniform(cbox.lo.y, cbox.hi.y)};

  std::vector<ObjectState> states;
  const int m = schema.num_classes();
  for (int c = 1; c < m; ++c) {
    for (int s = 0; s < schema.slots_per_class[static_cast<size_t>(c)]; ++s) {
      ObjectState obj;
      obj.class_id = c;
      obj.slot_id = schema.first_slot_of_class(c) + s;
      obj.radius = rng.uniform(physics.object_radius_min, physics.object_radius_max);
      // each foreground class owns a hue band so appearance correlates with class
      const double band = 360.0 / static_cast<double>(m - 1);
      const double hue = band * (c - 1) + rng.uniform(-0.35, 0.35) * band;
      hsv_to_rgb(hue, 0.72 + 0.23 * rng.uniform(), 0.82 + 0.18 * rng.uniform(), obj.color);

      bool placed = false;
      for (int attempt = 0; attempt < physics.max_sample_attempts; ++attempt) {
        const double r = physics.summon_radius * std::sqrt(rng.uniform());
        const double a = rng.uniform(0.0, 6.283185307179586);
        obj.position = Vec2{r * std::cos(a), r * std::sin(a)};
        bool ok = true;
        for (const auto& other : states) {
          const double dx = other.position.x - obj.position.x;
          const double dy = other.position.y - obj.position.y;
          if (dx * dx + dy * dy < physics.min_summon_distance * physics.min_summon_distance) {
            ok = false;
            break;
          }
        }
        if (ok) {
          placed = true;
          break;
        }
      }
      if (!placed)
        throw std::runtime_error(
            "sample_scene: rejection sampling failed after " + std::to_string(physics.max_sample_attempts) +
            " attempts (violated constraint: pairwise min_summon_distance=" +
            core::format_double(physics.min_summon_distance) + " inside summon_radius=" +
            core::format_double(physics.summon_radius) + ")");

      // collision-aimed: direction toward the shared target, speed (0.3, 1.0]*max
      double dx = target.x - obj.position.x;
      double dy = target.y - obj.position.y;
      double norm = std::sqrt(dx * dx + dy * dy);
      if (norm < 1e-9) {
        dx = 1.0;
        dy = 0.0;
        norm = 1.0;
      }
      const double speed = physics.max_initial_speed * (0.3 + 0.7 * (1.0 - rng.uniform()));
      obj.velocity = Vec2{dx / norm * speed, dy / norm * speed};
      states.push_back(obj);
    }
  }
  return states;
}

// ---------------------------------------------------------------------------
// physics step
// ---------------------------------------------------------------------------

int step_physics(std::vector<ObjectState>& states, const PhysicsParams& physics, const Box& bounds) {
  const double dt = physics.dt;
  for (auto& s : states) {
    s.position.x += s.velocity.x * dt;
    s.position.y += s.velocity.y * dt;
    const double decay = std::max(0.0, 1.0 - physics.ground_friction * dt);
    s.velocity.x *= decay;
    s.velocity.y *= decay;
  }

  // wall reflection with the object's own restitution
  for (auto& s : states) {
    const double e = physics.restitution_of(s.class_id);
    if (s.position.x - s.radius < bounds.lo.x) {
      s.position.x = bounds.lo.x + s.radius;
      if (s.velocity.x < 0) s.velocity.x = -s.velocity.x * e;
    }
    if (s.position.x + s.radius > bounds.hi.x) {
      s.position.x = bounds.hi.x - s.radius;
      if (s.velocity.x > 0) s.velocity.x = -s.velocity.x * e;
    }
    if (s.position.y - s.radius < bounds.lo.y) {
      s.position.y = bounds.lo.y + s.radius;
      if (s.velocity.y < 0) s.velocity.y = -s.velocity.y * e;
    }
    if (s.position.y + s.radius > bounds.hi.y) {
      s.position.y = bounds.hi.y - s.radius;
      if (s.velocity.y > 0) s.velocity.y = -s.velocity.y * e;
    }
  }

  // pairwise equal-mass impulses; positions projected out of overlap first
  int contacts = 0;
  const size_t n = states.size();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      ObjectState& a = states[i];
      ObjectState& b = states[j];
      double dx = b.position.x - a.position.x;
      double dy = b.position.y - a.position.y;
      const double rsum = a.radius + b.radius;
      const double d2 = dx * dx + dy * dy;
      if (d2 >= rsum * rsum) continue;
      double dist = std::sqrt(d2);
      if (dist < 1e-12) {
        dx = 1.0;
        dy = 0.0;
        dist = 1.0;
      }
      const double nx = dx / dist, ny = dy / dist;
      const double overlap = rsum - dist;
      a.position.x -= nx * overlap * 0.5;
      a.position.y -= ny * overlap * 0.5;
      b.position.x += nx * overlap * 0.5;
      b.position.y += ny * overlap * 0.5;
      const double u1 = a.velocity.x * nx + a.velocity.y * ny;
      const double u2 = b.velocity.x * nx + b.velocity.y * ny;
      if (u1 - u2 <= 0) continue;  // separating already
      const double e = std::min(physics.restitution_of(a.class_id), physics.restitution_of(b.class_id));
      const double u1n = ((1 - e) * u1 + (1 + e) * u2) * 0.5;
      const double u2n = ((1 + e) * u1 + (1 - e) * u2) * 0.5;
      a.velocity.x += (u1n - u1) * nx;
      a.velocity.y += (u1n - u1) * ny;
      b.velocity.x += (u2n - u2) * nx;
      b.velocity.y += (u2n - u2) * ny;
      ++contacts;
    }
  return contacts;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

Rendered render_frame(const std::vector<ObjectState>& states, const ClipSpec& spec,
                      const SceneSchema& schema) {
  const int h = spec.height, w = spec.width;
  Rendered out;
  out.frame.h = h;
  out.frame.w = w;
  out.frame.rgb.resize(static_cast<size_t>(h) * w * 3);
  out.mask.h = h;
  out.mask.w = w;
  out.mask.ids.assign(static_cast<size_t>(h) * w, 0);  // background slot

  for (int p = 0; p < h * w; ++p)
    for (int ch = 0; ch < 3; ++ch)
      out.frame.rgb[static_cast<size_t>(p) * 3 + ch] =
          static_cast<uint8_t>(std::lround(kBackground[ch] * 255.0f));

  // painter's order: ascending slot id, later (higher) slots overwrite
  std::vector<const ObjectState*> order;
  for (const auto& s : states) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const ObjectState* a, const ObjectState* b) { return a->slot_id < b->slot_id; });

  const double s2p = spec.world_to_pixel;
  for (const ObjectState* obj : order) {
    OCVP_CHECK(obj->slot_id >= 0 && obj->slot_id < schema.total_slots(),
               "render_frame: slot id " << obj->slot_id << " outside schema");
    const double cx = obj->position.x * s2p + w / 2.0;
    const double cy = obj->position.y * s2p + h / 2.0;
    const double rp = obj->radius * s2p;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rp)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rp)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - rp)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + rp)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5 - cx;
        const double py = y + 0.5 - cy;
        if (px * px + py * py > rp * rp) continue;
        const size_t p = static_cast<size_t>(y) * w + x;
        out.mask.ids[p] = static_cast<uint8_t>(obj->slot_id);
        for (int ch = 0; ch < 3; ++ch)
          out.frame.rgb[p * 3 + ch] = static_cast<uint8_t>(std::lround(obj->color[ch] * 255.0f));
      }
  }
  return out;
}

namespace {

int dry_run_contacts(std::vector<ObjectState> states, const PhysicsParams& physics, const Box& bounds,
                     int n_steps) {
  int contacts = 0;
  for (int i = 0; i < n_steps; ++i) contacts += step_physics(states, physics, bounds);
  return contacts;
}

}  // namespace

SimulatedClip simulate_clip(const SceneSchema& schema, const PhysicsParams& physics,
                            const ClipSpec& spec, uint64_t clip_seed) {
  spec.validate();
  SimulatedClip out;
  const Box bounds = spec.world_bounds();

  // The sampling law aims every object at a shared target; on top of that,
  // velocity draws are rejected until the simulated clip actually contains a
  // contact (the datasets are built from clips where objects *will* collide).
  const bool want_collision = physics.require_collision && schema.foreground_slots() >= 2;
  std::vector<ObjectState> states;
  if (!want_collision) {
    states = sample_scene(schema, physics, clip_seed);
  } else {
    bool accepted = false;
    for (int attempt = 0; attempt < physics.max_sample_attempts; ++attempt) {
      states = sample_scene(schema, physics, Rng::derive_seed(clip_seed, static_cast<uint64_t>(attempt)));
      if (dry_run_contacts(states, physics, bounds, spec.n_frames - 1) > 0) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw std::runtime_error(
          "simulate_clip: rejection sampling failed after " + std::to_string(physics.max_sample_attempts) +
          " attempts (violated constraint: require_collision within " + std::to_string(spec.n_frames) +
          " frames)");
  }
  for (int f = 0; f < spec.n_frames; ++f) {
    Rendered r = render_frame(states, spec, schema);
    out.clip.frames.push_back(std::move(r.frame));
    out.clip.masks.push_back(std::move(r.mask));
    for (const auto& s : states)
      out.centroids.push_back(SlotCentroid{f, s.slot_id, s.position.x * spec.world_to_pixel + spec.width / 2.0,
                                           s.position.y * spec.world_to_pixel + spec.height / 2.0});
    if (f + 1 < spec.n_frames) out.collision_contacts += step_physics(states, physics, bounds);
  }
  return out;
}

// ---------------------------------------------------------------------------
// container I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kClipMagic[4] = {'O', 'C', 'V', 'P'};
constexpr uint16_t kClipVersion = 1;

void write_u16(std::ostream& out, uint16_t v) {
  const unsigned char buf[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(buf), 2);
}

uint16_t read_u16(std::istream& in) {
  unsigned char buf[2];
  in.read(reinterpret_cast<char*>(buf), 2);
  return static_cast<uint16_t>(buf[0] | (buf[1] << 8));
}

}  // namespace

std::string clip_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%06d.ocv", index);
  return buf;
}

void save_clip(const std::string& path, const Clip& clip) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_clip: cannot write " + path);
  OCVP_CHECK(!clip.frames.empty() && clip.frames.size() == clip.masks.size(),
             "save_clip: malformed clip");
  const int h = clip.frames[0].h, w = clip.frames[0].w;
  uint8_t n_slots = 0;
  for (const auto& m : clip.masks)
    for (uint8_t id : m.ids) n_slots = std::max<uint8_t>(n_slots, static_cast<uint8_t>(id + 1));
  out.write(kClipMagic, 4);
  write_u16(out, kClipVersion);
  write_u16(out, static_cast<uint16_t>(clip.frames.size()));
  write_u16(out, static_cast<uint16_t>(h));
  write_u16(out, static_cast<uint16_t>(w));
  write_u16(out, n_slots);
  for (const auto& f : clip.frames)
    out.write(reinterpret_cast<const char*>(f.rgb.data()), static_cast<std::streamsize>(f.rgb.size()));
  for (const auto& m : clip.masks)
    out.write(reinterpret_cast<const char*>(m.ids.data()), static_cast<std::streamsize>(m.ids.size()));
  if (!out) throw std::runtime_error("save_clip: write failed for " + path);
}

Clip load_clip(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_clip: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kClipMagic, 4) != 0)
    throw std::runtime_error("load_clip: bad magic in " + path);
  const uint16_t version = read_u16(in);
  if (version != kClipVersion)
    throw std::runtime_error("load_clip: unsupported version in " + path);
  const int t = read_u16(in);
  const int h = read_u16(in);
  const int w = read_u16(in);
  (void)read_u16(in);  // n_slots
  Clip clip;
  for (int f = 0; f < t; ++f) {
    FrameU8 fr;
    fr.h = h;
    fr.w = w;
    fr.rgb.resize(static_cast<size_t>(h) * w * 3);
    in.read(reinterpret_cast<char*>(fr.rgb.data()), static_cast<std::streamsize>(fr.rgb.size()));
    clip.frames.push_back(std::move(fr));
  }
  for (int f = 0; f < t; ++f) {
    MaskU8 m;
    m.h = h;
    m.w = w;
    m.ids.resize(static_cast<size_t>(h) * w);
    in.read(reinterpret_cast<char*>(m.ids.data()), static_cast<std::streamsize>(m.ids.size()));
    clip.masks.push_back(std::move(m));
  }
  if (!in) throw std::runtime_error("load_clip: truncated file " + path);
  return clip;
}

core::KvMap DatasetManifest::to_kv(bool with_hash) const {
  KvMap kv;
  kv.set_int("format_version", format_version);
  kv.set("name", name);
  kv.set("schema", schema.to_string());
  physics.to_kv(kv, "physics.");
  clip_spec.to_kv(kv, "clip.");
  kv.set_int("n_clips", n_clips);
  kv.set_int("seed", static_cast<int64_t>(seed));
  if (with_hash) kv.set("config_hash", config_hash);
  return kv;
}

DatasetManifest generate_dataset(const std::string& name, const SceneSchema& schema,
                                 const PhysicsParams& physics, const ClipSpec& spec, int n_clips,
                                 uint64_t seed, const std::string& out_path) {
  schema.validate();
  physics.validate();
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_path, ec);
  if (ec) throw std::runtime_error("generate_dataset: cannot create " + out_path + ": " + ec.message());

  DatasetManifest manifest;
  manifest.name = name;
  manifest.schema = schema;
  manifest.physics = physics;
  manifest.clip_spec = spec;
  manifest.n_clips = n_clips;
  manifest.seed = seed;
  manifest.config_hash = core::sha256_hex(manifest.to_kv(false).canonical_text());

  std::ostringstream centroids;
  centroids << "clip,frame,slot,cx,cy\n";
  std::ostringstream stats;
  stats << "clip,collision_contacts\n";

  for (int i = 0; i < n_clips; ++i) {
    const uint64_t clip_seed = Rng::derive_seed(seed, static_cast<uint64_t>(i));
    SimulatedClip sim = simulate_clip(schema, physics, spec, clip_seed);
    const std::string clip_path = out_path + "/" + clip_filename(i);
    save_clip(clip_path, sim.clip);
    char line[160];
    for (const auto& c : sim.centroids) {
      std::snprintf(line, sizeof(line), "%d,%d,%d,%.4f,%.4f\n", i, c.frame, c.slot, c.cx_px, c.cy_px);
      centroids << line;
    }
    stats << i << "," << sim.collision_contacts << "\n";
  }

  {
    std::ofstream out(out_path + "/manifest");
    if (!out) throw std::runtime_error("generate_dataset: cannot write manifest in " + out_path);
    out << manifest.to_kv(true).canonical_text();
  }
  {
    std::ofstream out(out_path + "/centroids.csv");
    if (!out) throw std::runtime_error("generate_dataset: cannot write centroids.csv in " + out_path);
    out << centroids.str();
  }
  {
    std::ofstream out(out_path + "/stats.csv");
    if (!out) throw std::runtime_error("generate_dataset: cannot write stats.csv in " + out_path);
    out << stats.str();
  }
  return manifest;
}

Dataset::Dataset(const std::string& dir) : dir_(dir) {
  const std::string mpath = dir + "/manifest";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("dataset: cannot open " + mpath);
  std::ostringstream ss;
  ss << in.rdbuf();
  KvMap kv = core::parse_kv(ss.str());
  std::vector<std::string> errors;
  manifest_.format_version = static_cast<int>(kv.get_int("format_version", 1, &errors));
  manifest_.name = kv.get_string("name", "", &errors);
  manifest_.schema = SceneSchema::from_string(kv.get_string("schema", "background:1", &errors));
  manifest_.physics = PhysicsParams::from_kv(kv, "physics.", &errors);
  manifest_.clip_spec = ClipSpec::from_kv(kv, "clip.", &errors);
  manifest_.n_clips = static_cast<int>(kv.get_int("n_clips", 0, &errors));
  manifest_.seed = static_cast<uint64_t>(kv.get_int("seed", 0, &errors));
  manifest_.config_hash = kv.get_string("config_hash", "", &errors);
  if (!errors.empty()) {
    std::string msg = "dataset: manifest errors in " + mpath + ":";
    for (const auto& e : errors) msg += " [" + e + "]";
    throw std::runtime_error(msg);
  }
}

Clip Dataset::clip(int index) const {
  OCVP_CHECK(index >= 0 && index < manifest_.n_clips,
             "dataset: clip index " << index << " out of range (n=" << manifest_.n_clips << ")");
  return load_clip(dir_ + "/" + clip_filename(index));
}

std::vector<std::vector<SlotCentroid>> Dataset::load_centroids() const {
  const std::string path = dir_ + "/centroids.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: missing centroid sidecar " + path);
  std::vector<std::vector<SlotCentroid>> out(static_cast<size_t>(manifest_.n_clips));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SlotCentroid c;
    int clip = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf", &clip, &c.frame, &c.slot, &c.cx_px, &c.cy_px) != 5)
      throw std::runtime_error("dataset: malformed centroid line: " + line);
    OCVP_CHECK(clip >= 0 && clip < manifest_.n_clips, "dataset: centroid clip index out of range");
    out[static_cast<size_t>(clip)].push_back(c);
  }
  return out;
}

}  // namespace ocvp::synthdata
