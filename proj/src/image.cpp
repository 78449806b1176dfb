#include "qareid/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "qareid/errors.hpp"

namespace qareid {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

// Reads any 8/16-bit PNG as 8-bit with `channels` output channels (1 or 3).
std::vector<uint8_t> read_png_raw(const std::filesystem::path& path, int channels, int* out_h,
                                  int* out_w, bool require_single_channel) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open PNG for reading: " + path.string());

  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw IoError("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("failed to decode PNG: " + path.string());

  png_init_io(ctx.png, fp.get());
  png_read_info(ctx.png, ctx.info);

  const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  const png_byte color = png_get_color_type(ctx.png, ctx.info);
  const png_byte depth = png_get_bit_depth(ctx.png, ctx.info);

  if (require_single_channel &&
      (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
       color == PNG_COLOR_TYPE_PALETTE)) {
    throw ValidationError("expected single-channel label PNG: " + path.string());
  }

  if (depth == 16) png_set_strip_16(ctx.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(ctx.png);
  if (channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) {
    png_set_gray_to_rgb(ctx.png);
  }
  if (channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA)) {
    png_set_rgb_to_gray_fixed(ctx.png, 1, -1, -1);
  }
  png_read_update_info(ctx.png, ctx.info);

  const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
  if (rowbytes != static_cast<size_t>(w) * channels) {
    throw IoError("unexpected PNG row size in " + path.string());
  }

  std::vector<uint8_t> buf(static_cast<size_t>(h) * rowbytes);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + static_cast<size_t>(r) * rowbytes;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  *out_h = static_cast<int>(h);
  *out_w = static_cast<int>(w);
  return buf;
}

void write_png_raw(const std::filesystem::path& path, const uint8_t* data, int h, int w,
                   int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open PNG for writing: " + path.string());

  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw IoError("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw IoError("failed to encode PNG: " + path.string());

  png_init_io(ctx.png, fp.get());
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  std::vector<png_bytep> rows(static_cast<size_t>(h));
  const size_t rowbytes = static_cast<size_t>(w) * channels;
  for (int r = 0; r < h; ++r) {
    rows[static_cast<size_t>(r)] = const_cast<png_bytep>(data + static_cast<size_t>(r) * rowbytes);
  }
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

}  // namespace

Image read_image_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> raw = read_png_raw(path, 3, &h, &w, false);
  Image img(h, w);
  for (size_t i = 0; i < raw.size(); ++i) img.px[i] = raw[i] / 255.0;
  return img;
}

SegMap read_seg_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> raw = read_png_raw(path, 1, &h, &w, true);
  SegMap seg(h, w);
  seg.labels = std::move(raw);
  return seg;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  std::vector<uint8_t> raw(img.px.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.px[i]));
    raw[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  write_png_raw(path, raw.data(), img.h, img.w, 3);
}

void write_gray_png(const std::filesystem::path& path, const uint8_t* gray, int h, int w) {
  write_png_raw(path, gray, h, w, 1);
}

}  // namespace qareid
