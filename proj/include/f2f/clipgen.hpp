#pragma once

#include <string>
#include <utility>
#include <vector>

#include "f2f/image.hpp"
#include "f2f/kv.hpp"

// Synthetic moving-shapes mini-clips: 20 frames of constant-velocity shapes
// over static background structures, rendered with painter's-algorithm
// occlusion (later-listed objects on top). The "labeled" frame sits at t=10,
// so t+9 = 19 is the mid-term target and frames {1,4,7,10} form the standard
// four-frame input tuple at stride 3.

namespace f2f::data {

inline constexpr int kClipFrames = 20;
inline constexpr int kObservedFrame = 10;  // t

struct WorldConfig {
  int height = 64, width = 64;
  int classes = 6;  // 0 background, 1-2 static structure, 3-5 moving shapes
  std::vector<int> moving_class_ids = {3, 4, 5};
  int min_objects = 3, max_objects = 5;  // moving shapes per clip
  int min_static = 2, max_static = 4;    // static structures per clip
  double min_speed = 2.0, max_speed = 5.0;  // |vx| in px/frame
  double max_vy = 0.4;                      // |vy| cap, px/frame
  double rightward_prob = 0.5;              // P(vx > 0)
  bool accelerate = false;
  double max_accel = 0.05;  // |ax| cap in px/frame^2 when accelerate is set
  double band_center = 0.5, band_halfwidth = 0.25;  // moving-shape y band, fraction of H
  int min_size = 5, max_size = 9;                   // shape half-extent in px

  void validate() const;
};

struct ShapeMeta {
  int class_id = 0;
  double y10 = 0, x10 = 0;  // centre at the observed frame t=10
  double vy = 0, vx = 0;    // px/frame
  double ay = 0, ax = 0;    // px/frame^2, zero unless cfg.accelerate
  double size = 0;          // half-extent in px
  double shade = 0;         // rendered intensity in (0,1]

  double y_at(int frame) const { return y10 + vy * (frame - 10) + 0.5 * ay * (frame - 10) * (frame - 10); }
  double x_at(int frame) const { return x10 + vx * (frame - 10) + 0.5 * ax * (frame - 10) * (frame - 10); }
};

struct MiniClip {
  int id = 0;
  std::vector<img::Gray8> frames;     // kClipFrames images
  std::vector<img::LabelMap> labels;  // kClipFrames maps, class 0 background
  std::vector<ShapeMeta> statics;     // painted first, in order
  std::vector<ShapeMeta> movers;      // painted after statics, in order
};

MiniClip generate_clip(const WorldConfig& cfg, uint64_t seed);

// --- on-disk dataset ---------------------------------------------------------
//
// Layout under a root directory:
//   manifest.txt            key=value lines (world.*, clips, val ids)
//   c{id:05}/f{frame:02}.pgm   rendered frames
//   c{id:05}/l{frame:02}.pgm   label maps
struct Dataset {
  WorldConfig world;
  std::string root;
  int clip_count = 0;
  std::vector<int> val_ids;  // sorted; the rest are train

  bool is_val(int id) const;
  std::vector<int> train_ids() const;
  std::string clip_dir(int id) const;
  std::string frame_path(int id, int frame) const;
  std::string label_path(int id, int frame) const;
};

// Deterministic in (cfg, seed, n_clips, val_fraction): clip i uses a seed
// derived from `seed` and i, and the val split hashes clip ids.
Dataset generate_dataset(const WorldConfig& cfg, int n_clips, double val_fraction,
                         uint64_t seed, const std::string& root);

void write_dataset_manifest(const Dataset& ds);
Dataset open_dataset(const std::string& root);

// World serialization shared by the dataset manifest and run configs: keys are
// "world.*"; absent keys fall back to the provided defaults.
void append_world_entries(const WorldConfig& w,
                          std::vector<std::pair<std::string, std::string>>& entries);
WorldConfig take_world(kv::Map& m, const WorldConfig& defaults);

img::Gray8 load_frame(const Dataset& ds, int id, int frame);
img::LabelMap load_labels(const Dataset& ds, int id, int frame);

}  // namespace f2f::data
