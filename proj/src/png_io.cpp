#include "iid/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <memory>
#include <vector>

#include "iid/error.hpp"

namespace iid::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

FloatMap read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail_input("png: cannot open: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail_input("png: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_input("png: allocation failure reading " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_input("png: decode error in " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth != 8 && bit_depth != 16) {
    // palette/1/2/4-bit inputs get expanded to 8 below; anything else is out.
    if (color_type != PNG_COLOR_TYPE_PALETTE && bit_depth > 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      fail_input("png: unsupported bit depth " + std::to_string(bit_depth) +
                 " in " + path);
    }
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // libpng serves 16-bit big-endian
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_input("png: unsupported channel count after expansion in " + path);
  }

  const size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raster(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raster.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  FloatMap out(static_cast<int>(width), static_cast<int>(height), channels);
  if (depth == 8) {
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = raster[i] / 255.0f;
  } else {
    const std::uint16_t* px = reinterpret_cast<const std::uint16_t*>(raster.data());
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = px[i] / 65535.0f;
  }
  return out;
}

void write_png_preview(const FloatMap& linear, const std::string& path) {
  if (linear.channels != 1 && linear.channels != 3)
    fail_input("png: preview requires 1 or 3 channels");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail_input("png: cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail_input("png: allocation failure writing " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_input("png: encode error for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, linear.width, linear.height, 8,
               linear.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(linear.width) * linear.channels);
  for (int y = 0; y < linear.height; ++y) {
    for (size_t i = 0; i < row.size(); ++i) {
      const float v = linear_to_srgb(
          linear.data[static_cast<size_t>(y) * row.size() + i]);
      row[i] = static_cast<png_byte>(v * 255.0f + 0.5f);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

FloatMap read_mask_png(const std::string& path) {
  FloatMap raw = read_png(path);
  FloatMap mask(raw.width, raw.height, 1);
  for (std::int64_t p = 0; p < raw.pixel_count(); ++p) {
    float any = 0.0f;
    for (int c = 0; c < raw.channels; ++c)
      any = std::max(any, raw.data[p * raw.channels + c]);
    mask.data[p] = any > 0.0f ? 1.0f : 0.0f;
  }
  return mask;
}

}  // namespace iid::img
