#include "iid/image.hpp"

#include <algorithm>
#include <cmath>

#include "iid/error.hpp"

namespace iid::img {

namespace {

void require_channels(const FloatMap& m, int c, const char* what) {
  if (m.channels != c)
    fail_input(std::string(what) + " requires " + std::to_string(c) +
               " channels, got " + std::to_string(m.channels));
}

void require_finite_min(const FloatMap& m, float lo, const char* what) {
  for (float v : m.data) {
    if (!std::isfinite(v))
      fail_numeric(std::string(what) + " contains a non-finite value");
    if (v < lo)
      fail_input(std::string(what) + " contains value " + std::to_string(v) +
                 " below " + std::to_string(lo));
  }
}

}  // namespace

LinearImage::LinearImage(FloatMap m) : FloatMap(std::move(m)) {
  require_channels(*this, 3, "LinearImage");
  require_finite_min(*this, 0.0f, "LinearImage");
}

ShadingMap::ShadingMap(FloatMap m) : FloatMap(std::move(m)) {
  require_channels(*this, 1, "ShadingMap");
  require_finite_min(*this, 0.0f, "ShadingMap");
}

InverseShading::InverseShading(FloatMap m) : FloatMap(std::move(m)) {
  require_channels(*this, 1, "InverseShading");
  require_finite_min(*this, 0.0f, "InverseShading");
  for (float v : data)
    if (v > 1.0f)
      fail_input("InverseShading contains value " + std::to_string(v) + " above 1");
}

AlbedoMap::AlbedoMap(FloatMap m) : FloatMap(std::move(m)) {
  require_channels(*this, 3, "AlbedoMap");
  require_finite_min(*this, 0.0f, "AlbedoMap");
}

OrdinalEstimate::OrdinalEstimate(FloatMap m, Tag tag)
    : FloatMap(std::move(m)), tag_(tag) {
  require_channels(*this, 1, "OrdinalEstimate");
  for (float v : data)
    if (!(v >= 0.0f && v <= 1.0f))
      fail_input("OrdinalEstimate contains value outside [0,1]");
}

float srgb_to_linear(float v) {
  if (v <= 0.04045f) return v / 12.92f;
  return std::pow((v + 0.055f) / 1.055f, 2.4f);
}

float linear_to_srgb(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  if (v <= 0.0031308f) return v * 12.92f;
  return 1.055f * std::pow(v, 1.0f / 2.4f) - 0.055f;
}

LinearImage srgb_decode(const FloatMap& encoded) {
  if (encoded.channels != 1 && encoded.channels != 3)
    fail_input("srgb_decode expects 1 or 3 channels, got " +
               std::to_string(encoded.channels));
  FloatMap out(encoded.width, encoded.height, 3);
  for (std::int64_t p = 0; p < encoded.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) {
      const int sc = encoded.channels == 1 ? 0 : c;
      out.data[p * 3 + c] =
          srgb_to_linear(encoded.data[p * encoded.channels + sc]);
    }
  }
  return LinearImage(std::move(out));
}

float luminance709(float r, float g, float b) {
  return 0.2126f * r + 0.7152f * g + 0.0722f * b;
}

FloatMap luminance709_map(const FloatMap& rgb) {
  if (rgb.channels == 1) return rgb;
  if (rgb.channels != 3) fail_input("luminance requires 1 or 3 channels");
  FloatMap out(rgb.width, rgb.height, 1);
  for (std::int64_t p = 0; p < rgb.pixel_count(); ++p)
    out.data[p] = luminance709(rgb.data[p * 3], rgb.data[p * 3 + 1],
                               rgb.data[p * 3 + 2]);
  return out;
}

float luminance_mean(float r, float g, float b) { return (r + g + b) / 3.0f; }

namespace {

struct Tap {
  int i0, i1;
  float w1;
};

std::vector<Tap> make_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double f = (o + 0.5) * scale - 0.5;
    if (f < 0.0) f = 0.0;
    if (f > in_size - 1) f = in_size - 1;
    const int i0 = static_cast<int>(f);
    const int i1 = std::min(i0 + 1, in_size - 1);
    taps[o] = {i0, i1, static_cast<float>(f - i0)};
  }
  return taps;
}

}  // namespace

FloatMap resize_bilinear(const FloatMap& src, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    fail_args("resize_bilinear: target size must be >= 1");
  FloatMap out(out_w, out_h, src.channels);
  const auto ty = make_taps(src.height, out_h);
  const auto tx = make_taps(src.width, out_w);
  const int ch = src.channels;
  for (int oy = 0; oy < out_h; ++oy) {
    const Tap& yt = ty[oy];
    for (int ox = 0; ox < out_w; ++ox) {
      const Tap& xt = tx[ox];
      for (int c = 0; c < ch; ++c) {
        const float top = src.at(xt.i0, yt.i0, c) * (1.0f - xt.w1) +
                          src.at(xt.i1, yt.i0, c) * xt.w1;
        const float bot = src.at(xt.i0, yt.i1, c) * (1.0f - xt.w1) +
                          src.at(xt.i1, yt.i1, c) * xt.w1;
        out.at(ox, oy, c) = top * (1.0f - yt.w1) + bot * yt.w1;
      }
    }
  }
  return out;
}

void fit_long_side(int w, int h, int long_side, int& out_w, int& out_h) {
  if (w >= h) {
    out_w = long_side;
    out_h = std::max(1, static_cast<int>(std::lround(
                            static_cast<double>(h) * long_side / w)));
  } else {
    out_h = long_side;
    out_w = std::max(1, static_cast<int>(std::lround(
                            static_cast<double>(w) * long_side / h)));
  }
}

}  // namespace iid::img
