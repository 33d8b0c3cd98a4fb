#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "f2f/common.hpp"
#include "f2f/f2f_model.hpp"
#include "f2f/tensor.hpp"

// Binary on-disk formats. Both store payloads as little-endian IEEE-754
// binary32 and assume a little-endian host (checked at reader open).
//
//   F2FW checkpoint: magic "F2FW", u32 version, u32 record count, then per
//   record ⟨u16 name length, name bytes, u8 rank, u32 extents..., f32
//   payload⟩. Names follow "layer{i}.{weight|bias|offset_weight|offset_bias}"
//   for F2F models; the segmentation stub and feature normalizer use their
//   own prefixes.
//
//   F2FC feature cache (see cache::CacheWriter): record stream plus a sorted
//   (clip, frame) → offset index in a footer, so any record is readable
//   without scanning the ones before it.

namespace f2f::ckpt {

struct Record {
  std::string name;
  Tensor<float> tensor;
};

void save_records(const std::string& path, const std::vector<Record>& records);
std::vector<Record> load_records(const std::string& path);

inline std::map<std::string, Tensor<float>> load_record_map(const std::string& path) {
  std::map<std::string, Tensor<float>> m;
  for (auto& r : load_records(path)) {
    if (!m.emplace(r.name, std::move(r.tensor)).second)
      throw CheckpointError("duplicate record name '" + r.name + "' in " + path);
  }
  return m;
}

template <class T>
Record to_record(const std::string& name, const Tensor<T>& t) {
  Record r;
  r.name = name;
  r.tensor.shape = t.shape;
  r.tensor.data.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) r.tensor.data[i] = static_cast<float>(t.data[i]);
  return r;
}

template <class T>
void assign_from_record(Tensor<T>& dst, const Record& r, const std::string& ctx) {
  if (dst.shape != r.tensor.shape)
    throw CheckpointError(ctx + ": record '" + r.name + "' has shape " +
                          shape_str(r.tensor.shape) + ", model wants " + shape_str(dst.shape));
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] = static_cast<T>(r.tensor.data[i]);
}

// Saves a model's named parameters plus optional extra tensors (e.g. the
// feature normalizer's "norm.mean"/"norm.std").
template <class T>
void save_params(const std::string& path, const std::vector<model::NamedParam<T>>& params,
                 const std::vector<std::pair<std::string, Tensor<T>>>& extra = {}) {
  std::vector<Record> recs;
  recs.reserve(params.size() + extra.size());
  for (const auto& np : params) recs.push_back(to_record(np.name, np.var->value));
  for (const auto& [name, t] : extra) recs.push_back(to_record(name, t));
  save_records(path, recs);
}

// Loads named parameters in place. Every model parameter must be present with
// a matching shape; unknown record names are rejected unless listed in
// `extra_out` (which receives them).
template <class T>
void load_params(const std::string& path, const std::vector<model::NamedParam<T>>& params,
                 std::map<std::string, Tensor<float>>* extra_out = nullptr) {
  std::map<std::string, Tensor<float>> recs = load_record_map(path);
  for (const auto& np : params) {
    auto it = recs.find(np.name);
    if (it == recs.end())
      throw CheckpointError(path + ": missing record '" + np.name + "'");
    Record r{it->first, std::move(it->second)};
    assign_from_record(np.var->value, r, path);
    recs.erase(it);
  }
  if (extra_out) {
    *extra_out = std::move(recs);
  } else if (!recs.empty()) {
    throw CheckpointError(path + ": unexpected record '" + recs.begin()->first + "'");
  }
}

}  // namespace f2f::ckpt

namespace f2f::cache {

struct FeatureKey {
  uint32_t clip = 0;
  uint16_t frame = 0;

  friend bool operator<(const FeatureKey& a, const FeatureKey& b) {
    return a.clip != b.clip ? a.clip < b.clip : a.frame < b.frame;
  }
  friend bool operator==(const FeatureKey& a, const FeatureKey& b) {
    return a.clip == b.clip && a.frame == b.frame;
  }
};

// Append-only writer; close() emits the sorted offset index. Duplicate keys
// are rejected at add() time.
class CacheWriter {
 public:
  explicit CacheWriter(const std::string& path);
  ~CacheWriter();
  CacheWriter(const CacheWriter&) = delete;
  CacheWriter& operator=(const CacheWriter&) = delete;

  void add(uint32_t clip, uint16_t frame, const Tensor<float>& t);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::map<FeatureKey, uint64_t> index_;
  bool closed_ = false;
};

// Loads the whole file into memory once; read() is then a lookup plus a copy,
// safe to call from multiple threads.
class CacheReader {
 public:
  explicit CacheReader(const std::string& path);

  const std::vector<FeatureKey>& keys() const { return keys_; }
  bool contains(uint32_t clip, uint16_t frame) const;
  Tensor<float> read(uint32_t clip, uint16_t frame) const;

 private:
  std::string path_;
  std::vector<char> buf_;
  std::vector<FeatureKey> keys_;
  std::vector<uint64_t> offsets_;
};

}  // namespace f2f::cache
