#pragma once

#include <string>

#include "iid/image.hpp"

namespace iid::img {

// Portable Float Map, 1 or 3 channels, little-endian (scale -1.0), rows
// stored bottom-to-top. Round trips are bitwise exact.
void write_pfm(const FloatMap& map, const std::string& path);
FloatMap read_pfm(const std::string& path);

}  // namespace iid::img
