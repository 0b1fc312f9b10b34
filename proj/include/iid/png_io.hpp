#pragma once

#include <string>

#include "iid/image.hpp"

namespace iid::img {

// Reads an 8- or 16-bit PNG. Values are normalized to [0,1] but NOT
// linearized; pass the result through srgb_decode for linear light.
// Gray stays 1-channel, color becomes 3-channel; alpha is dropped.
FloatMap read_png(const std::string& path);

// Writes an 8-bit preview: input is linear light, clamped to [0,1] and
// passed through the sRGB OETF. 1- or 3-channel.
void write_png_preview(const FloatMap& linear, const std::string& path);

// Binary mask: nonzero pixels map to 1.0.
FloatMap read_mask_png(const std::string& path);

}  // namespace iid::img
