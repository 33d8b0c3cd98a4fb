#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "f2f/clipgen.hpp"
#include "f2f/serialize.hpp"
#include "test_util.hpp"

using namespace f2f;
using data::generate_clip;
using data::kClipFrames;
using data::kObservedFrame;
using data::MiniClip;
using data::ShapeMeta;
using data::WorldConfig;
using testutil::TempDir;

namespace {

std::vector<char> slurp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  REQUIRE(bool(f));
  std::vector<char> buf(static_cast<size_t>(f.tellg()));
  f.seekg(0);
  f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  return buf;
}

// Independent transcription of the renderer's silhouettes, used as an oracle
// to re-render frames from trajectory metadata.
bool oracle_covers(const WorldConfig& cfg, const ShapeMeta& s, int frame, int y, int x) {
  const double dy = y - s.y_at(frame), dx = x - s.x_at(frame);
  const auto& mv = cfg.moving_class_ids;
  auto it = std::find(mv.begin(), mv.end(), s.class_id);
  if (it != mv.end()) {
    switch ((it - mv.begin()) % 3) {
      case 0: return std::abs(dy) <= s.size && std::abs(dx) <= s.size;          // square
      case 1: return dy * dy + dx * dx <= s.size * s.size;                      // circle
      default: return std::abs(dy) <= 0.45 * s.size && std::abs(dx) <= 1.6 * s.size;  // bar
    }
  }
  if (s.class_id % 2 == 1)  // default world: class 1 slab, class 2 pillar
    return std::abs(dy) <= 0.55 * s.size && std::abs(dx) <= 1.8 * s.size;
  return std::abs(dy) <= 1.8 * s.size && std::abs(dx) <= 0.55 * s.size;
}

double centroid_x(const img::LabelMap& lm, int cls, int* count = nullptr) {
  double sx = 0;
  int n = 0;
  for (int y = 0; y < lm.h; ++y)
    for (int x = 0; x < lm.w; ++x)
      if (lm.at(y, x) == cls) {
        sx += x;
        ++n;
      }
  if (count) *count = n;
  return n ? sx / n : 0.0;
}

WorldConfig lone_square_world(double speed, int width = 224) {
  WorldConfig cfg;
  cfg.width = width;
  cfg.height = 64;
  cfg.moving_class_ids = {3};
  cfg.min_objects = cfg.max_objects = 1;
  cfg.min_static = cfg.max_static = 0;
  cfg.min_speed = cfg.max_speed = speed;
  cfg.max_vy = 0.0;
  cfg.rightward_prob = 1.0;
  cfg.min_size = cfg.max_size = 5;
  return cfg;
}

}  // namespace

TEST_CASE("generate_clip is deterministic in (cfg, seed)") {
  WorldConfig cfg;
  MiniClip a = generate_clip(cfg, 42);
  MiniClip b = generate_clip(cfg, 42);
  REQUIRE(a.frames.size() == size_t(kClipFrames));
  REQUIRE(a.labels.size() == size_t(kClipFrames));
  for (int f = 0; f < kClipFrames; ++f) {
    CHECK(a.frames[f].pix == b.frames[f].pix);
    CHECK(a.labels[f].ids == b.labels[f].ids);
  }
  REQUIRE(a.movers.size() == b.movers.size());
  for (size_t i = 0; i < a.movers.size(); ++i) {
    CHECK(a.movers[i].x10 == b.movers[i].x10);
    CHECK(a.movers[i].vx == b.movers[i].vx);
    CHECK(a.movers[i].shade == b.movers[i].shade);
  }

  MiniClip c = generate_clip(cfg, 43);
  bool any_diff = false;
  for (int f = 0; f < kClipFrames && !any_diff; ++f)
    any_diff = (a.frames[f].pix != c.frames[f].pix);
  CHECK(any_diff);
}

TEST_CASE("all-zero velocities freeze the world") {
  WorldConfig cfg;
  cfg.min_speed = cfg.max_speed = 0.0;
  cfg.max_vy = 0.0;
  MiniClip clip = generate_clip(cfg, 7);
  for (int f = 1; f < kClipFrames; ++f) {
    CHECK(clip.labels[f].ids == clip.labels[0].ids);
    CHECK(clip.frames[f].pix == clip.frames[0].pix);
  }
}

TEST_CASE("world config validation") {
  WorldConfig cfg;
  cfg.min_objects = cfg.max_objects = 0;  // moving classes requested but impossible
  CHECK_THROWS_AS(generate_clip(cfg, 1), Error);

  WorldConfig ok;
  ok.moving_class_ids = {};  // a fully static world is fine
  ok.min_objects = ok.max_objects = 0;
  MiniClip clip = generate_clip(ok, 1);
  for (int f = 0; f < kClipFrames; ++f) CHECK(clip.labels[f].ids == clip.labels[0].ids);

  WorldConfig bad1;
  bad1.moving_class_ids = {9};  // out of range for classes=6
  CHECK_THROWS_AS(generate_clip(bad1, 1), Error);
  WorldConfig bad2;
  bad2.min_speed = 5.0;
  bad2.max_speed = 2.0;
  CHECK_THROWS_AS(generate_clip(bad2, 1), Error);
  WorldConfig bad3;
  bad3.band_center = 0.9;
  bad3.band_halfwidth = 0.3;  // band leaves [0,1]
  CHECK_THROWS_AS(generate_clip(bad3, 1), Error);
}

TEST_CASE("a lone square at velocity (3,0) lands 27 px right of frame t at t+9") {
  WorldConfig cfg = lone_square_world(3.0);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    MiniClip clip = generate_clip(cfg, seed);
    REQUIRE(clip.movers.size() == 1);
    const ShapeMeta& m = clip.movers[0];
    CHECK(m.vx == 3.0);
    CHECK(m.vy == 0.0);
    CHECK(m.x_at(kObservedFrame + 9) - m.x_at(kObservedFrame) == 27.0);

    int n10 = 0, n19 = 0;
    const double cx10 = centroid_x(clip.labels[kObservedFrame], 3, &n10);
    const double cx19 = centroid_x(clip.labels[kObservedFrame + 9], 3, &n19);
    REQUIRE(n10 > 0);
    REQUIRE(n19 > 0);
    CHECK(n10 == n19);  // fully on canvas at both ends by construction
    CHECK(std::abs(cx19 - cx10 - 27.0) <= 1.0);
  }
}

TEST_CASE("rendered frames and labels match a painter re-render from meta") {
  WorldConfig cfg;
  cfg.max_objects = 5;
  cfg.min_objects = 4;  // dense world to get real occlusions
  for (uint64_t seed : {11ull, 12ull}) {
    MiniClip clip = generate_clip(cfg, seed);
    std::vector<const ShapeMeta*> order;
    for (const auto& s : clip.statics) order.push_back(&s);
    for (const auto& s : clip.movers) order.push_back(&s);
    for (int f : {0, kObservedFrame, kClipFrames - 1}) {
      const img::LabelMap& lm = clip.labels[f];
      const img::Gray8& im = clip.frames[f];
      int bg_gray = -1;
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const ShapeMeta* top = nullptr;
          for (const ShapeMeta* s : order)
            if (oracle_covers(cfg, *s, f, y, x)) top = s;  // later-listed wins
          if (top) {
            REQUIRE(lm.at(y, x) == top->class_id);
            REQUIRE(im.at(y, x) == uint8_t(std::lround(top->shade * 255.0)));
          } else {
            REQUIRE(lm.at(y, x) == 0);
            if (bg_gray < 0) bg_gray = im.at(y, x);
            REQUIRE(im.at(y, x) == bg_gray);
          }
        }
    }
  }
}

TEST_CASE("fast movers exit the canvas and disocclude the background") {
  WorldConfig cfg = lone_square_world(6.0, 64);
  MiniClip clip = generate_clip(cfg, 5);
  const ShapeMeta& m = clip.movers[0];
  const int py = int(std::lround(m.y10)), px = int(std::lround(m.x10));
  CHECK(clip.labels[kObservedFrame].at(py, px) == 3);
  // 9 frames later the square sits 54 px to the right: off this pixel, and
  // (mostly) off the canvas.
  CHECK(clip.labels[kClipFrames - 1].at(py, px) == 0);
  int n19 = 0;
  centroid_x(clip.labels[kClipFrames - 1], 3, &n19);
  int n10 = 0;
  centroid_x(clip.labels[kObservedFrame], 3, &n10);
  CHECK(n19 < n10);
}

TEST_CASE("pgm round trip and malformed inputs") {
  TempDir td("tmp_pgm");
  Rng rng(3);
  img::Gray8 im = img::make_gray(13, 17);
  for (auto& p : im.pix) p = uint8_t(rng.uniform_int(0, 255));
  img::write_pgm(td.path + "/a.pgm", im);
  img::Gray8 back = img::read_pgm(td.path + "/a.pgm");
  CHECK(back.h == 13);
  CHECK(back.w == 17);
  CHECK(back.pix == im.pix);

  img::LabelMap lm = img::make_labels(5, 4);
  for (auto& id : lm.ids) id = int32_t(rng.uniform_int(0, 7));
  img::write_label_pgm(td.path + "/l.pgm", lm);
  CHECK(img::read_label_pgm(td.path + "/l.pgm").ids == lm.ids);

  {
    std::ofstream f(td.path + "/comment.pgm", std::ios::binary);
    f << "P5\n# a comment\n2 1\n255\n";
    f.put('\x01');
    f.put('\x02');
  }
  img::Gray8 c = img::read_pgm(td.path + "/comment.pgm");
  CHECK(c.w == 2);
  CHECK(c.pix[1] == 2);

  {
    std::ofstream f(td.path + "/bad_magic.pgm", std::ios::binary);
    f << "P2\n2 1\n255\n12";
  }
  CHECK_THROWS_AS(img::read_pgm(td.path + "/bad_magic.pgm"), DataError);
  {
    std::ofstream f(td.path + "/bad_maxval.pgm", std::ios::binary);
    f << "P5\n2 1\n254\n";
    f.put('\x01');
    f.put('\x02');
  }
  CHECK_THROWS_AS(img::read_pgm(td.path + "/bad_maxval.pgm"), DataError);
  {
    std::ofstream f(td.path + "/short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.put('\x01');
  }
  CHECK_THROWS_AS(img::read_pgm(td.path + "/short.pgm"), DataError);
  CHECK_THROWS_AS(img::read_pgm(td.path + "/missing.pgm"), DataError);

  img::LabelMap wide = img::make_labels(1, 1, 300);  // id beyond PGM range
  CHECK_THROWS_AS(img::write_label_pgm(td.path + "/wide.pgm", wide), DataError);
}

TEST_CASE("dataset generation, manifest round trip, and split stability") {
  TempDir td("tmp_dataset");
  WorldConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  data::Dataset ds = data::generate_dataset(cfg, 6, 0.25, 99, td.path + "/a");
  CHECK(ds.clip_count == 6);
  CHECK(ds.val_ids.size() == 1);
  CHECK(ds.train_ids().size() == 5);
  for (int id : ds.train_ids()) CHECK(!ds.is_val(id));
  for (int id : ds.val_ids) CHECK(ds.is_val(id));

  data::Dataset re = data::open_dataset(td.path + "/a");
  CHECK(re.clip_count == ds.clip_count);
  CHECK(re.val_ids == ds.val_ids);
  CHECK(re.world.height == cfg.height);
  CHECK(re.world.moving_class_ids == cfg.moving_class_ids);
  CHECK(re.world.max_speed == cfg.max_speed);

  img::Gray8 fr = data::load_frame(re, 3, kObservedFrame);
  CHECK(fr.h == 32);
  CHECK(fr.w == 32);
  img::LabelMap lb = data::load_labels(re, 3, kObservedFrame);
  for (int32_t id : lb.ids) CHECK((id >= 0 && id < cfg.classes));

  // Same seed, fresh root: bit-identical manifest and frames.
  data::generate_dataset(cfg, 6, 0.25, 99, td.path + "/b");
  CHECK(slurp_file(td.path + "/a/manifest.txt") == slurp_file(td.path + "/b/manifest.txt"));
  CHECK(slurp_file(ds.frame_path(3, 10)) ==
        slurp_file(td.path + "/b/c00003/f10.pgm"));

  CHECK_THROWS_AS(data::load_frame(re, 6, 0), DataError);
  CHECK_THROWS_AS(data::load_frame(re, 0, kClipFrames), DataError);

  {
    std::ofstream f(td.path + "/a/manifest.txt", std::ios::app);
    f << "bogus_key=1\n";
  }
  CHECK_THROWS_WITH_AS(data::open_dataset(td.path + "/a"),
                       doctest::Contains("unknown key"), DataError);
}

TEST_CASE("feature cache round trip with random access") {
  TempDir td("tmp_cache");
  const std::string path = td.path + "/feat.f2fc";
  Rng rng(17);
  Tensor<float> t0 = random_uniform<float>({4, 3, 2}, -2.f, 2.f, rng);
  Tensor<float> t1 = random_uniform<float>({1, 5}, -2.f, 2.f, rng);
  Tensor<float> t2 = random_uniform<float>({2, 2, 2, 2}, -2.f, 2.f, rng);
  {
    cache::CacheWriter w(path);
    w.add(2, 1, t0);  // deliberately out of key order
    w.add(0, 4, t1);
    w.add(0, 1, t2);
    CHECK_THROWS_WITH_AS(w.add(0, 4, t1), doctest::Contains("duplicate"), DataError);
    w.close();
  }
  cache::CacheReader r(path);
  REQUIRE(r.keys().size() == 3);  // sorted enumeration of exactly the written keys
  CHECK(r.keys()[0] == cache::FeatureKey{0, 1});
  CHECK(r.keys()[1] == cache::FeatureKey{0, 4});
  CHECK(r.keys()[2] == cache::FeatureKey{2, 1});
  CHECK(r.contains(0, 4));
  CHECK(!r.contains(1, 0));

  Tensor<float> b0 = r.read(2, 1);
  CHECK(b0.shape == t0.shape);
  CHECK(b0.data == t0.data);  // bit-identical
  CHECK(r.read(0, 1).data == t2.data);
  CHECK(r.read(0, 4).data == t1.data);
  CHECK_THROWS_WITH_AS(r.read(3, 3), doctest::Contains("no cache record"), DataError);
}

TEST_CASE("feature cache rejects malformed files distinctly") {
  TempDir td("tmp_cache_bad");
  const std::string good = td.path + "/good.f2fc";
  {
    cache::CacheWriter w(good);
    Tensor<float> t({2, 2}, {1.f, 2.f, 3.f, 4.f});
    w.add(0, 0, t);
    w.close();
  }
  CHECK_NOTHROW(cache::CacheReader{good});

  {
    std::ofstream f(td.path + "/magic.f2fc", std::ios::binary);
    f << "NOPExxxxxxxxxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(cache::CacheReader{td.path + "/magic.f2fc"},
                       doctest::Contains("magic"), DataError);

  {
    std::ofstream f(td.path + "/version.f2fc", std::ios::binary);
    f << "F2FC";
    uint32_t v = 99;
    f.write(reinterpret_cast<char*>(&v), 4);
    f << "xxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(cache::CacheReader{td.path + "/version.f2fc"},
                       doctest::Contains("version"), DataError);

  std::vector<char> bytes = slurp_file(good);
  {
    std::ofstream f(td.path + "/trunc.f2fc", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  CHECK_THROWS_WITH_AS(cache::CacheReader{td.path + "/trunc.f2fc"},
                       doctest::Contains("truncated"), DataError);

  {  // empty cache is valid
    cache::CacheWriter w(td.path + "/empty.f2fc");
    w.close();
    cache::CacheReader r(td.path + "/empty.f2fc");
    CHECK(r.keys().empty());
    CHECK(!r.contains(0, 0));
  }
}

TEST_CASE("checkpoint record round trip") {
  TempDir td("tmp_ckpt");
  const std::string path = td.path + "/m.f2fw";
  Rng rng(23);
  std::vector<ckpt::Record> recs;
  recs.push_back({"layer1.weight", random_uniform<float>({4, 2, 1, 1}, -1.f, 1.f, rng)});
  recs.push_back({"layer1.bias", random_uniform<float>({4}, -1.f, 1.f, rng)});
  recs.push_back({"norm.mean", random_uniform<float>({2}, -1.f, 1.f, rng)});
  ckpt::save_records(path, recs);
  std::vector<ckpt::Record> back = ckpt::load_records(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == recs[i].name);
    CHECK(back[i].tensor.shape == recs[i].tensor.shape);
    CHECK(back[i].tensor.data == recs[i].tensor.data);
  }

  std::vector<char> bytes = slurp_file(path);
  {
    std::ofstream f(td.path + "/trunc.f2fw", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS_WITH_AS(ckpt::load_records(td.path + "/trunc.f2fw"),
                       doctest::Contains("truncated"), CheckpointError);
  {
    std::ofstream f(td.path + "/magic.f2fw", std::ios::binary);
    f << "WXYZ0000000000";
  }
  CHECK_THROWS_WITH_AS(ckpt::load_records(td.path + "/magic.f2fw"),
                       doctest::Contains("magic"), CheckpointError);
  CHECK_THROWS_AS(ckpt::load_records(td.path + "/nothere.f2fw"), CheckpointError);
}

TEST_CASE("model parameters survive a save/load cycle") {
  TempDir td("tmp_ckpt_model");
  const std::string path = td.path + "/f2f.f2fw";
  model::F2FConfig cfg;
  cfg.variant = model::Variant::kDeformable;
  cfg.n_layers = 3;
  cfg.frames = 2;
  cfg.channels_per_frame = 6;
  cfg.hidden = 8;

  auto a = model::build_f2f<float>(cfg, 1);
  Tensor<float> mean = Tensor<float>::full({6}, 0.25f);
  Tensor<float> stdv = Tensor<float>::full({6}, 1.5f);
  ckpt::save_params<float>(path, a.named_parameters(), {{"norm.mean", mean}, {"norm.std", stdv}});

  auto b = model::build_f2f<float>(cfg, 2);
  bool differed = false;
  for (size_t i = 0; i < a.layers.size() && !differed; ++i)
    differed = testutil::max_abs_diff(a.parameters()[0]->value, b.parameters()[0]->value) > 0;
  CHECK(differed);

  std::map<std::string, Tensor<float>> extra;
  ckpt::load_params<float>(path, b.named_parameters(), &extra);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].var->value.data == pb[i].var->value.data);  // bit-exact through f32
  }
  REQUIRE(extra.size() == 2);
  CHECK(extra.at("norm.mean").data == mean.data);
  CHECK(extra.at("norm.std").data == stdv.data);

  // Without an extra sink, unexpected records are an error.
  CHECK_THROWS_WITH_AS(ckpt::load_params<float>(path, b.named_parameters()),
                       doctest::Contains("unexpected"), CheckpointError);

  // Shape mismatch: same names, different widths.
  model::F2FConfig cfg2 = cfg;
  cfg2.hidden = 12;
  auto c = model::build_f2f<float>(cfg2, 1);
  CHECK_THROWS_WITH_AS(ckpt::load_params<float>(path, c.named_parameters(), &extra),
                       doctest::Contains("shape"), CheckpointError);

  // Missing record: checkpoint holding only a subset.
  auto subset = a.named_parameters();
  subset.resize(2);
  ckpt::save_params<float>(td.path + "/partial.f2fw", subset);
  CHECK_THROWS_WITH_AS(
      ckpt::load_params<float>(td.path + "/partial.f2fw", b.named_parameters(), &extra),
      doctest::Contains("missing"), CheckpointError);
}
