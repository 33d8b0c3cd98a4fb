#include "f2f/image.hpp"

#include <cctype>
#include <fstream>

#include "f2f/common.hpp"

namespace f2f::img {

Gray8 make_gray(int h, int w, uint8_t fill) {
  F2F_CHECK(h > 0 && w > 0, "image dims must be positive");
  Gray8 im;
  im.h = h;
  im.w = w;
  im.pix.assign(static_cast<size_t>(h) * w, fill);
  return im;
}

LabelMap make_labels(int h, int w, int32_t fill) {
  F2F_CHECK(h > 0 && w > 0, "label map dims must be positive");
  LabelMap lm;
  lm.h = h;
  lm.w = w;
  lm.ids.assign(static_cast<size_t>(h) * w, fill);
  return lm;
}

void write_pgm(const std::string& path, const Gray8& im) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << "P5\n" << im.w << " " << im.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(im.pix.data()),
          static_cast<std::streamsize>(im.pix.size()));
  if (!f) throw DataError("short write: " + path);
}

namespace {

// Reads the next whitespace-delimited token, skipping '#' comment lines.
int next_pgm_int(std::istream& f, const std::string& path) {
  for (;;) {
    int c = f.peek();
    if (c == '#') {
      std::string line;
      std::getline(f, line);
      continue;
    }
    if (std::isspace(c)) {
      f.get();
      continue;
    }
    break;
  }
  int v;
  if (!(f >> v)) throw DataError("malformed PGM header: " + path);
  return v;
}

}  // namespace

Gray8 read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5') throw DataError("not a binary PGM (P5): " + path);
  const int w = next_pgm_int(f, path);
  const int h = next_pgm_int(f, path);
  const int maxval = next_pgm_int(f, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw DataError("unsupported PGM geometry in " + path);
  f.get();  // single whitespace before raster
  Gray8 im = make_gray(h, w);
  f.read(reinterpret_cast<char*>(im.pix.data()), static_cast<std::streamsize>(im.pix.size()));
  if (f.gcount() != static_cast<std::streamsize>(im.pix.size()))
    throw DataError("truncated PGM raster: " + path);
  return im;
}

void write_label_pgm(const std::string& path, const LabelMap& lm) {
  Gray8 im = make_gray(lm.h, lm.w);
  for (size_t i = 0; i < lm.ids.size(); ++i) {
    const int32_t id = lm.ids[i];
    F2F_CHECK_DATA(0 <= id && id <= 255, "label id out of PGM range");
    im.pix[i] = static_cast<uint8_t>(id);
  }
  write_pgm(path, im);
}

LabelMap read_label_pgm(const std::string& path) {
  Gray8 im = read_pgm(path);
  LabelMap lm = make_labels(im.h, im.w);
  for (size_t i = 0; i < im.pix.size(); ++i) lm.ids[i] = im.pix[i];
  return lm;
}

}  // namespace f2f::img
