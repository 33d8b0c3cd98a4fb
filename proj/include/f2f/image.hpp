#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "f2f/tensor.hpp"

// 8-bit grayscale images and integer label maps, stored as binary PGM (P5).
// Label maps use the gray value as the class id, which caps C at 255.

namespace f2f::img {

struct Gray8 {
  int h = 0, w = 0;
  std::vector<uint8_t> pix;  // row-major, h*w entries

  uint8_t& at(int y, int x) { return pix[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return pix[static_cast<size_t>(y) * w + x]; }
};

struct LabelMap {
  int h = 0, w = 0;
  std::vector<int32_t> ids;  // row-major, h*w entries

  int32_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
  int32_t at(int y, int x) const { return ids[static_cast<size_t>(y) * w + x]; }
};

Gray8 make_gray(int h, int w, uint8_t fill = 0);
LabelMap make_labels(int h, int w, int32_t fill = 0);

// Binary PGM with maxval 255. Malformed files raise DataError.
void write_pgm(const std::string& path, const Gray8& im);
Gray8 read_pgm(const std::string& path);

void write_label_pgm(const std::string& path, const LabelMap& lm);
LabelMap read_label_pgm(const std::string& path);

// Intensities scaled to [0,1], shape [1, 1, H, W].
template <class T>
Tensor<T> to_tensor(const Gray8& im) {
  Tensor<T> t({1, 1, im.h, im.w});
  for (size_t i = 0; i < im.pix.size(); ++i) t[int64_t(i)] = T(im.pix[i]) / T(255);
  return t;
}

// Clamped round-trip from a [0,1]-scaled tensor of shape [1,1,H,W] or [H,W].
template <class T>
Gray8 from_unit_tensor(const Tensor<T>& t) {
  const int h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  Gray8 im = make_gray(h, w);
  for (int64_t i = 0; i < t.numel(); ++i) {
    T v = t[i];
    if (v < T(0)) v = T(0);
    if (v > T(1)) v = T(1);
    im.pix[static_cast<size_t>(i)] = static_cast<uint8_t>(v * T(255) + T(0.5));
  }
  return im;
}

}  // namespace f2f::img
