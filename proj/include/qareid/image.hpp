#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace qareid {

// H x W x 3 interleaved image with values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<double> px;

  Image() = default;
  Image(int hh, int ww) : h(hh), w(ww), px(static_cast<size_t>(hh) * ww * 3, 0.0) {}
  double& at(int r, int c, int ch) { return px[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return px[(static_cast<size_t>(r) * w + c) * 3 + ch]; }
};

// H x W semantic label grid; 0 is background.
struct SegMap {
  int h = 0, w = 0;
  std::vector<uint8_t> labels;

  SegMap() = default;
  SegMap(int hh, int ww) : h(hh), w(ww), labels(static_cast<size_t>(hh) * ww, 0) {}
  uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * w + c]; }
  uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * w + c]; }
};

// 8-bit PNG round trip. Images are stored as RGB and mapped to [0,1] on read;
// segmentation maps must be single-channel and keep their raw label values.
Image read_image_png(const std::filesystem::path& path);
SegMap read_seg_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Image& img);
void write_gray_png(const std::filesystem::path& path, const uint8_t* gray, int h, int w);

}  // namespace qareid
