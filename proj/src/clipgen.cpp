#include "f2f/clipgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "f2f/common.hpp"
#include "f2f/kv.hpp"

namespace f2f::data {

void WorldConfig::validate() const {
  F2F_CHECK(height >= 16 && width >= 16, "world dims too small");
  F2F_CHECK(classes >= 2 && classes <= 256, "classes must be in [2,256]");
  for (int id : moving_class_ids)
    F2F_CHECK(id >= 1 && id < classes, "moving class id out of range");
  F2F_CHECK(min_objects >= 0 && min_objects <= max_objects, "bad object count range");
  F2F_CHECK(min_static >= 0 && min_static <= max_static, "bad static count range");
  if (!moving_class_ids.empty())
    F2F_CHECK(max_objects >= 1, "moving classes requested but zero objects allowed");
  F2F_CHECK(min_speed >= 0 && min_speed <= max_speed, "bad speed range");
  F2F_CHECK(max_vy >= 0, "max_vy must be >= 0");
  F2F_CHECK(max_accel >= 0, "max_accel must be >= 0");
  F2F_CHECK(rightward_prob >= 0 && rightward_prob <= 1, "rightward_prob must be in [0,1]");
  F2F_CHECK(band_halfwidth >= 0 && band_center - band_halfwidth >= 0 &&
                band_center + band_halfwidth <= 1,
            "moving-shape band must fit in [0,1]");
  F2F_CHECK(min_size >= 2 && min_size <= max_size, "bad size range");
}

namespace {

enum class Kind { kSquare, kCircle, kBar, kSlab, kPillar };

// Static structures take the non-moving ids >= 1; their flavor and a moving
// shape's silhouette are functions of the class id so labels stay meaningful.
std::vector<int> static_ids(const WorldConfig& cfg) {
  std::vector<int> out;
  for (int id = 1; id < cfg.classes; ++id)
    if (std::find(cfg.moving_class_ids.begin(), cfg.moving_class_ids.end(), id) ==
        cfg.moving_class_ids.end())
      out.push_back(id);
  return out;
}

Kind shape_kind(const WorldConfig& cfg, int class_id) {
  const auto& mv = cfg.moving_class_ids;
  auto it = std::find(mv.begin(), mv.end(), class_id);
  if (it != mv.end()) {
    switch ((it - mv.begin()) % 3) {
      case 0: return Kind::kSquare;
      case 1: return Kind::kCircle;
      default: return Kind::kBar;
    }
  }
  std::vector<int> st = static_ids(cfg);
  auto sit = std::find(st.begin(), st.end(), class_id);
  F2F_CHECK(sit != st.end(), "class id has no shape");
  return ((sit - st.begin()) % 2 == 0) ? Kind::kSlab : Kind::kPillar;
}

bool inside(Kind k, double dy, double dx, double size) {
  switch (k) {
    case Kind::kSquare: return std::abs(dy) <= size && std::abs(dx) <= size;
    case Kind::kCircle: return dy * dy + dx * dx <= size * size;
    case Kind::kBar: return std::abs(dy) <= 0.45 * size && std::abs(dx) <= 1.6 * size;
    case Kind::kSlab: return std::abs(dy) <= 0.55 * size && std::abs(dx) <= 1.8 * size;
    case Kind::kPillar: return std::abs(dy) <= 1.8 * size && std::abs(dx) <= 0.55 * size;
  }
  return false;
}

double extent(Kind k, double size) {
  switch (k) {
    case Kind::kSquare: return size;
    case Kind::kCircle: return size;
    case Kind::kBar: return 1.6 * size;
    default: return 1.8 * size;
  }
}

void paint(img::Gray8& im, img::LabelMap& lm, const WorldConfig& cfg,
           const ShapeMeta& s, int frame) {
  const Kind k = shape_kind(cfg, s.class_id);
  const double cy = s.y_at(frame), cx = s.x_at(frame);
  const double e = extent(k, s.size);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - e)));
  const int y1 = std::min(cfg.height - 1, static_cast<int>(std::ceil(cy + e)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - e)));
  const int x1 = std::min(cfg.width - 1, static_cast<int>(std::ceil(cx + e)));
  const uint8_t g = static_cast<uint8_t>(std::lround(s.shade * 255.0));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside(k, y - cy, x - cx, s.size)) {
        im.at(y, x) = g;
        lm.at(y, x) = s.class_id;
      }
}

}  // namespace

MiniClip generate_clip(const WorldConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x636c6970 /* "clip" */));
  MiniClip clip;

  const double bg_shade = rng.uniform(0.03, 0.10);
  const std::vector<int> st_ids = static_ids(cfg);

  const int n_static = static_cast<int>(rng.uniform_int(cfg.min_static, cfg.max_static));
  for (int i = 0; i < n_static && !st_ids.empty(); ++i) {
    ShapeMeta s;
    s.class_id = st_ids[static_cast<size_t>(rng.uniform_int(0, int64_t(st_ids.size()) - 1))];
    s.y10 = rng.uniform(0.12, 0.88) * cfg.height;
    s.x10 = rng.uniform(0.08, 0.92) * cfg.width;
    s.size = rng.uniform(cfg.min_size, cfg.max_size);
    s.shade = 0.22 + 0.10 * (shape_kind(cfg, s.class_id) == Kind::kPillar) +
              rng.uniform(-0.05, 0.05);
    clip.statics.push_back(s);
  }

  const int n_movers = cfg.moving_class_ids.empty()
                           ? 0
                           : static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  for (int i = 0; i < n_movers; ++i) {
    ShapeMeta s;
    s.class_id = cfg.moving_class_ids[static_cast<size_t>(
        rng.uniform_int(0, int64_t(cfg.moving_class_ids.size()) - 1))];
    s.y10 = (cfg.band_center + rng.uniform(-1.0, 1.0) * cfg.band_halfwidth) * cfg.height;
    s.x10 = rng.uniform(0.15, 0.85) * cfg.width;
    s.size = rng.uniform(cfg.min_size, cfg.max_size);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    s.vx = (rng.uniform01() < cfg.rightward_prob) ? speed : -speed;
    s.vy = rng.uniform(-cfg.max_vy, cfg.max_vy);
    if (cfg.accelerate) {
      s.ax = rng.uniform(-cfg.max_accel, cfg.max_accel);
      s.ay = rng.uniform(-0.4 * cfg.max_accel, 0.4 * cfg.max_accel);
    }
    const Kind k = shape_kind(cfg, s.class_id);
    s.shade = 0.55 + 0.13 * static_cast<int>(k) + rng.uniform(-0.04, 0.04);
    if (s.shade > 0.98) s.shade = 0.98;
    clip.movers.push_back(s);
  }

  const uint8_t bg = static_cast<uint8_t>(std::lround(bg_shade * 255.0));
  clip.frames.reserve(kClipFrames);
  clip.labels.reserve(kClipFrames);
  for (int f = 0; f < kClipFrames; ++f) {
    img::Gray8 im = img::make_gray(cfg.height, cfg.width, bg);
    img::LabelMap lm = img::make_labels(cfg.height, cfg.width, 0);
    for (const ShapeMeta& s : clip.statics) paint(im, lm, cfg, s, f);
    for (const ShapeMeta& s : clip.movers) paint(im, lm, cfg, s, f);
    clip.frames.push_back(std::move(im));
    clip.labels.push_back(std::move(lm));
  }
  return clip;
}

// --- on-disk dataset ---------------------------------------------------------

bool Dataset::is_val(int id) const {
  return std::binary_search(val_ids.begin(), val_ids.end(), id);
}

std::vector<int> Dataset::train_ids() const {
  std::vector<int> out;
  for (int id = 0; id < clip_count; ++id)
    if (!is_val(id)) out.push_back(id);
  return out;
}

std::string Dataset::clip_dir(int id) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%05d", id);
  return root + "/" + buf;
}

std::string Dataset::frame_path(int id, int frame) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "f%02d.pgm", frame);
  return clip_dir(id) + "/" + buf;
}

std::string Dataset::label_path(int id, int frame) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "l%02d.pgm", frame);
  return clip_dir(id) + "/" + buf;
}

namespace {

// Seed-stable split: rank ids by a per-id hash and take the lowest-ranked
// slice as validation, so the split is invariant to generation order.
std::vector<int> pick_val_ids(int n_clips, double val_fraction, uint64_t seed) {
  int n_val = static_cast<int>(std::floor(n_clips * val_fraction));
  if (val_fraction > 0 && n_val == 0 && n_clips >= 2) n_val = 1;
  std::vector<int> ids(static_cast<size_t>(n_clips));
  std::iota(ids.begin(), ids.end(), 0);
  const uint64_t salt = derive_seed(seed, 0x76616c5f /* "val_" */);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return derive_seed(salt, static_cast<uint64_t>(a)) <
           derive_seed(salt, static_cast<uint64_t>(b));
  });
  ids.resize(static_cast<size_t>(n_val));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

Dataset generate_dataset(const WorldConfig& cfg, int n_clips, double val_fraction,
                         uint64_t seed, const std::string& root) {
  cfg.validate();
  F2F_CHECK(n_clips >= 1, "need at least one clip");
  F2F_CHECK(val_fraction >= 0 && val_fraction < 1, "val_fraction must be in [0,1)");

  Dataset ds;
  ds.world = cfg;
  ds.root = root;
  ds.clip_count = n_clips;
  ds.val_ids = pick_val_ids(n_clips, val_fraction, seed);

  const uint64_t clip_salt = derive_seed(seed, 0x64617461 /* "data" */);
  for (int id = 0; id < n_clips; ++id) {
    MiniClip clip = generate_clip(cfg, derive_seed(clip_salt, static_cast<uint64_t>(id)));
    clip.id = id;
    std::filesystem::create_directories(ds.clip_dir(id));
    for (int f = 0; f < kClipFrames; ++f) {
      img::write_pgm(ds.frame_path(id, f), clip.frames[static_cast<size_t>(f)]);
      img::write_label_pgm(ds.label_path(id, f), clip.labels[static_cast<size_t>(f)]);
    }
  }
  write_dataset_manifest(ds);
  return ds;
}

void append_world_entries(const WorldConfig& w,
                          std::vector<std::pair<std::string, std::string>>& e) {
  e.emplace_back("world.height", std::to_string(w.height));
  e.emplace_back("world.width", std::to_string(w.width));
  e.emplace_back("world.classes", std::to_string(w.classes));
  e.emplace_back("world.moving_class_ids", kv::fmt_int_list(w.moving_class_ids));
  e.emplace_back("world.min_objects", std::to_string(w.min_objects));
  e.emplace_back("world.max_objects", std::to_string(w.max_objects));
  e.emplace_back("world.min_static", std::to_string(w.min_static));
  e.emplace_back("world.max_static", std::to_string(w.max_static));
  e.emplace_back("world.min_speed", kv::fmt_double(w.min_speed));
  e.emplace_back("world.max_speed", kv::fmt_double(w.max_speed));
  e.emplace_back("world.max_vy", kv::fmt_double(w.max_vy));
  e.emplace_back("world.rightward_prob", kv::fmt_double(w.rightward_prob));
  e.emplace_back("world.accelerate", w.accelerate ? "true" : "false");
  e.emplace_back("world.max_accel", kv::fmt_double(w.max_accel));
  e.emplace_back("world.band_center", kv::fmt_double(w.band_center));
  e.emplace_back("world.band_halfwidth", kv::fmt_double(w.band_halfwidth));
  e.emplace_back("world.min_size", std::to_string(w.min_size));
  e.emplace_back("world.max_size", std::to_string(w.max_size));
}

WorldConfig take_world(kv::Map& m, const WorldConfig& defaults) {
  WorldConfig w = defaults;
  w.height = static_cast<int>(kv::take_int(m, "world.height", w.height));
  w.width = static_cast<int>(kv::take_int(m, "world.width", w.width));
  w.classes = static_cast<int>(kv::take_int(m, "world.classes", w.classes));
  if (kv::has(m, "world.moving_class_ids"))
    w.moving_class_ids = kv::parse_int_list(kv::take_str(m, "world.moving_class_ids"),
                                            "world.moving_class_ids");
  w.min_objects = static_cast<int>(kv::take_int(m, "world.min_objects", w.min_objects));
  w.max_objects = static_cast<int>(kv::take_int(m, "world.max_objects", w.max_objects));
  w.min_static = static_cast<int>(kv::take_int(m, "world.min_static", w.min_static));
  w.max_static = static_cast<int>(kv::take_int(m, "world.max_static", w.max_static));
  w.min_speed = kv::take_double(m, "world.min_speed", w.min_speed);
  w.max_speed = kv::take_double(m, "world.max_speed", w.max_speed);
  w.max_vy = kv::take_double(m, "world.max_vy", w.max_vy);
  w.rightward_prob = kv::take_double(m, "world.rightward_prob", w.rightward_prob);
  w.accelerate = kv::take_bool(m, "world.accelerate", w.accelerate);
  w.max_accel = kv::take_double(m, "world.max_accel", w.max_accel);
  w.band_center = kv::take_double(m, "world.band_center", w.band_center);
  w.band_halfwidth = kv::take_double(m, "world.band_halfwidth", w.band_halfwidth);
  w.min_size = static_cast<int>(kv::take_int(m, "world.min_size", w.min_size));
  w.max_size = static_cast<int>(kv::take_int(m, "world.max_size", w.max_size));
  return w;
}

void write_dataset_manifest(const Dataset& ds) {
  std::vector<std::pair<std::string, std::string>> e;
  append_world_entries(ds.world, e);
  e.emplace_back("clips", std::to_string(ds.clip_count));
  e.emplace_back("val_ids", kv::fmt_int_list(ds.val_ids));
  std::filesystem::create_directories(ds.root);
  kv::write_file(ds.root + "/manifest.txt", e, "dataset manifest");
}

Dataset open_dataset(const std::string& root) {
  const std::string path = root + "/manifest.txt";
  kv::Map m = kv::read_file(path);
  Dataset ds;
  ds.root = root;
  WorldConfig& w = ds.world;
  w = take_world(m, WorldConfig{});
  ds.clip_count = static_cast<int>(kv::take_int(m, "clips"));
  ds.val_ids = kv::parse_int_list(kv::take_str(m, "val_ids", ""), "val_ids");
  kv::reject_unknown(m, path);
  try {
    w.validate();
  } catch (const Error& e) {
    throw DataError(path + ": " + e.what());
  }
  F2F_CHECK_DATA(ds.clip_count >= 1, "manifest lists no clips");
  for (int id : ds.val_ids)
    F2F_CHECK_DATA(id >= 0 && id < ds.clip_count, "val id out of range");
  F2F_CHECK_DATA(std::is_sorted(ds.val_ids.begin(), ds.val_ids.end()), "val ids not sorted");
  return ds;
}

img::Gray8 load_frame(const Dataset& ds, int id, int frame) {
  F2F_CHECK_DATA(id >= 0 && id < ds.clip_count, "clip id out of range");
  F2F_CHECK_DATA(frame >= 0 && frame < kClipFrames, "frame index out of range");
  return img::read_pgm(ds.frame_path(id, frame));
}

img::LabelMap load_labels(const Dataset& ds, int id, int frame) {
  F2F_CHECK_DATA(id >= 0 && id < ds.clip_count, "clip id out of range");
  F2F_CHECK_DATA(frame >= 0 && frame < kClipFrames, "frame index out of range");
  return img::read_label_pgm(ds.label_path(id, frame));
}

}  // namespace f2f::data
