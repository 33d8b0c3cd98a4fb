#include "f2f/serialize.hpp"

#include <algorithm>
#include <bit>

namespace f2f {

namespace {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts unsupported");

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(const char* buf, size_t size, size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > size) throw DataError(path + ": truncated file");
  T v;
  std::memcpy(&v, buf + pos, sizeof v);
  pos += sizeof v;
  return v;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open: " + path);
  const std::streamoff n = in.tellg();
  std::vector<char> buf(static_cast<size_t>(n));
  in.seekg(0);
  in.read(buf.data(), n);
  if (!in) throw DataError("read failed: " + path);
  return buf;
}

}  // namespace

namespace ckpt {

static constexpr uint32_t kCkptVersion = 1;

void save_records(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write("F2FW", 4);
  put<uint32_t>(out, kCkptVersion);
  put<uint32_t>(out, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    F2F_CHECK(r.name.size() <= 0xffff, "record name too long");
    F2F_CHECK(r.tensor.rank() <= 255, "record rank too large");
    put<uint16_t>(out, static_cast<uint16_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<uint8_t>(out, static_cast<uint8_t>(r.tensor.rank()));
    for (int d = 0; d < r.tensor.rank(); ++d) put<uint32_t>(out, static_cast<uint32_t>(r.tensor.dim(d)));
    out.write(reinterpret_cast<const char*>(r.tensor.ptr()),
              static_cast<std::streamsize>(sizeof(float) * r.tensor.data.size()));
  }
  if (!out) throw CheckpointError("short write: " + path);
}

std::vector<Record> load_records(const std::string& path) {
  std::vector<char> buf;
  try {
    buf = slurp(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > buf.size()) throw CheckpointError(path + ": truncated checkpoint");
  };
  need(4);
  if (std::memcmp(buf.data(), "F2FW", 4) != 0)
    throw CheckpointError(path + ": bad magic (not a checkpoint)");
  pos = 4;
  auto get32 = [&]() { need(4); uint32_t v; std::memcpy(&v, buf.data() + pos, 4); pos += 4; return v; };
  auto get16 = [&]() { need(2); uint16_t v; std::memcpy(&v, buf.data() + pos, 2); pos += 2; return v; };
  const uint32_t version = get32();
  if (version != kCkptVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = get32();
  std::vector<Record> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Record r;
    const uint16_t name_len = get16();
    need(name_len);
    r.name.assign(buf.data() + pos, name_len);
    pos += name_len;
    need(1);
    const uint8_t rank = static_cast<uint8_t>(buf[pos++]);
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(get32());
    const int64_t n = numel_of(shape);
    need(sizeof(float) * static_cast<size_t>(n));
    r.tensor.shape = std::move(shape);
    r.tensor.data.resize(static_cast<size_t>(n));
    std::memcpy(r.tensor.data.data(), buf.data() + pos, sizeof(float) * static_cast<size_t>(n));
    pos += sizeof(float) * static_cast<size_t>(n);
    out.push_back(std::move(r));
  }
  if (pos != buf.size())
    throw CheckpointError(path + ": trailing bytes after last record");
  return out;
}

}  // namespace ckpt

namespace cache {

static constexpr uint32_t kCacheVersion = 1;

CacheWriter::CacheWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw DataError("cannot open for writing: " + path);
  out_.write("F2FC", 4);
  put<uint32_t>(out_, kCacheVersion);
}

CacheWriter::~CacheWriter() {
  try {
    close();
  } catch (...) {
    // destructor must not throw; an explicit close() reports errors
  }
}

void CacheWriter::add(uint32_t clip, uint16_t frame, const Tensor<float>& t) {
  F2F_CHECK(!closed_, "add() after close()");
  const FeatureKey key{clip, frame};
  if (index_.count(key))
    throw DataError(path_ + ": duplicate cache key (clip " + std::to_string(clip) +
                    ", frame " + std::to_string(frame) + ")");
  F2F_CHECK(t.rank() >= 1 && t.rank() <= 255, "cache tensor rank out of range");
  index_[key] = static_cast<uint64_t>(out_.tellp());
  put<uint32_t>(out_, clip);
  put<uint16_t>(out_, frame);
  put<uint8_t>(out_, static_cast<uint8_t>(t.rank()));
  put<uint8_t>(out_, 0);
  for (int d = 0; d < t.rank(); ++d) put<uint32_t>(out_, static_cast<uint32_t>(t.dim(d)));
  out_.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(sizeof(float) * t.data.size()));
  if (!out_) throw DataError("short write: " + path_);
}

void CacheWriter::close() {
  if (closed_) return;
  closed_ = true;
  const uint64_t footer_offset = static_cast<uint64_t>(out_.tellp());
  put<uint32_t>(out_, static_cast<uint32_t>(index_.size()));
  for (const auto& [key, off] : index_) {  // std::map iterates keys in sorted order
    put<uint32_t>(out_, key.clip);
    put<uint16_t>(out_, key.frame);
    put<uint16_t>(out_, 0);
    put<uint64_t>(out_, off);
  }
  put<uint64_t>(out_, footer_offset);
  out_.write("F2FE", 4);
  out_.close();
  if (!out_) throw DataError("short write: " + path_);
}

CacheReader::CacheReader(const std::string& path) : path_(path), buf_(slurp(path)) {
  const size_t n = buf_.size();
  if (n < 8 + 12) throw DataError(path + ": truncated cache file");
  if (std::memcmp(buf_.data(), "F2FC", 4) != 0)
    throw DataError(path + ": bad magic (not a feature cache)");
  uint32_t version;
  std::memcpy(&version, buf_.data() + 4, 4);
  if (version != kCacheVersion)
    throw DataError(path + ": unsupported cache version " + std::to_string(version));
  if (std::memcmp(buf_.data() + n - 4, "F2FE", 4) != 0)
    throw DataError(path + ": truncated cache file (missing end marker)");
  uint64_t footer_offset;
  std::memcpy(&footer_offset, buf_.data() + n - 12, 8);
  if (footer_offset < 8 || footer_offset > n - 12)
    throw DataError(path + ": corrupt cache index offset");
  size_t pos = static_cast<size_t>(footer_offset);
  const uint32_t count = get<uint32_t>(buf_.data(), n, pos, path);
  keys_.reserve(count);
  offsets_.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    FeatureKey key;
    key.clip = get<uint32_t>(buf_.data(), n, pos, path);
    key.frame = get<uint16_t>(buf_.data(), n, pos, path);
    get<uint16_t>(buf_.data(), n, pos, path);  // padding
    const uint64_t off = get<uint64_t>(buf_.data(), n, pos, path);
    if (off < 8 || off >= footer_offset)
      throw DataError(path + ": index entry points outside the record region");
    if (!keys_.empty() && !(keys_.back() < key))
      throw DataError(path + ": cache index not sorted or has duplicates");
    keys_.push_back(key);
    offsets_.push_back(off);
  }
  if (pos != footer_offset + 4 + 16ull * count)
    throw DataError(path + ": corrupt cache index");
}

bool CacheReader::contains(uint32_t clip, uint16_t frame) const {
  return std::binary_search(keys_.begin(), keys_.end(), FeatureKey{clip, frame});
}

Tensor<float> CacheReader::read(uint32_t clip, uint16_t frame) const {
  const FeatureKey want{clip, frame};
  auto it = std::lower_bound(keys_.begin(), keys_.end(), want);
  if (it == keys_.end() || !(*it == want))
    throw DataError(path_ + ": no cache record for (clip " + std::to_string(clip) +
                    ", frame " + std::to_string(frame) + ")");
  size_t pos = static_cast<size_t>(offsets_[static_cast<size_t>(it - keys_.begin())]);
  const size_t n = buf_.size();
  const uint32_t rclip = get<uint32_t>(buf_.data(), n, pos, path_);
  const uint16_t rframe = get<uint16_t>(buf_.data(), n, pos, path_);
  if (rclip != clip || rframe != frame)
    throw DataError(path_ + ": index/record key mismatch");
  const uint8_t rank = static_cast<uint8_t>(get<uint8_t>(buf_.data(), n, pos, path_));
  get<uint8_t>(buf_.data(), n, pos, path_);  // reserved
  Shape shape(rank);
  for (int d = 0; d < rank; ++d)
    shape[static_cast<size_t>(d)] = static_cast<int>(get<uint32_t>(buf_.data(), n, pos, path_));
  const int64_t numel = numel_of(shape);
  if (pos + sizeof(float) * static_cast<size_t>(numel) > n)
    throw DataError(path_ + ": truncated record payload");
  Tensor<float> t(std::move(shape));
  std::memcpy(t.ptr(), buf_.data() + pos, sizeof(float) * static_cast<size_t>(numel));
  return t;
}

}  // namespace cache

}  // namespace f2f
