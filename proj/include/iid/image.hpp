#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace iid::img {

// Planar-interleaved float raster: data[(y*width + x)*channels + c].
struct FloatMap {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  FloatMap() = default;
  FloatMap(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::int64_t pixel_count() const {
    return static_cast<std::int64_t>(width) * height;
  }
  bool same_dims(const FloatMap& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// The observed image I, linear RGB, values >= 0.
struct LinearImage : FloatMap {
  LinearImage() = default;
  explicit LinearImage(FloatMap m);
  static LinearImage zeros(int w, int h) { return LinearImage(FloatMap(w, h, 3)); }
};

// Single-channel shading S in [0, inf); specular values well above 1 allowed.
struct ShadingMap : FloatMap {
  ShadingMap() = default;
  explicit ShadingMap(FloatMap m);
  static ShadingMap zeros(int w, int h) { return ShadingMap(FloatMap(w, h, 1)); }
};

// Inverse shading D = 1/(S+1), bounded to [0, 1].
struct InverseShading : FloatMap {
  InverseShading() = default;
  explicit InverseShading(FloatMap m);
  static InverseShading zeros(int w, int h) { return InverseShading(FloatMap(w, h, 1)); }
};

// 3-channel Lambertian reflectance, values >= 0 (may exceed 1; never clipped).
struct AlbedoMap : FloatMap {
  AlbedoMap() = default;
  explicit AlbedoMap(FloatMap m);
  static AlbedoMap zeros(int w, int h) { return AlbedoMap(FloatMap(w, h, 3)); }
};

// Network output correct only up to a monotonically increasing map.
struct OrdinalEstimate : FloatMap {
  enum class Tag { low_res, high_res };

  OrdinalEstimate() = default;
  OrdinalEstimate(FloatMap m, Tag tag);
  Tag tag() const { return tag_; }

 private:
  Tag tag_ = Tag::low_res;
};

// --- color -------------------------------------------------------------------

// sRGB EOTF on a normalized [0,1] value.
float srgb_to_linear(float v);
// sRGB OETF, input clamped to [0,1].
float linear_to_srgb(float v);

// Decodes an 8/16-bit sRGB raster (values already normalized to [0,1]) into
// linear light. Gray input is expanded to 3 channels.
LinearImage srgb_decode(const FloatMap& encoded);

// Rec.709 luma weights; used wherever a scalar is needed from linear RGB.
float luminance709(float r, float g, float b);
FloatMap luminance709_map(const FloatMap& rgb);
// Plain channel mean; the convention used by the WHDR metric.
float luminance_mean(float r, float g, float b);

// --- resampling --------------------------------------------------------------

// Bilinear, align-corners=false. The tensor-op resampler uses the same tap
// math so image- and graph-space resizes agree bitwise.
FloatMap resize_bilinear(const FloatMap& src, int out_w, int out_h);

// Keeps aspect ratio; scales so the long side equals long_side.
void fit_long_side(int w, int h, int long_side, int& out_w, int& out_h);

}  // namespace iid::img
