#include "iid/pfm.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
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

// Reads one whitespace-terminated token, skipping leading whitespace and
// '#' comment lines (some writers emit them).
std::string read_token(std::FILE* f, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = std::fgetc(f)) != EOF) {
    if (ch == '#') {
      while ((ch = std::fgetc(f)) != EOF && ch != '\n') {
      }
      continue;
    }
    if (!std::isspace(ch)) break;
  }
  if (ch == EOF) fail_input("pfm: truncated header in " + path);
  tok.push_back(static_cast<char>(ch));
  while ((ch = std::fgetc(f)) != EOF && !std::isspace(ch))
    tok.push_back(static_cast<char>(ch));
  return tok;
}

void byteswap_floats(std::vector<float>& v) {
  for (float& x : v) {
    std::uint32_t u;
    std::memcpy(&u, &x, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&x, &u, 4);
  }
}

}  // namespace

void write_pfm(const FloatMap& map, const std::string& path) {
  if (map.channels != 1 && map.channels != 3)
    fail_input("pfm: only 1- or 3-channel maps supported, got " +
               std::to_string(map.channels));
  for (float v : map.data)
    if (!std::isfinite(v)) fail_numeric("pfm: refusing to write non-finite value");

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail_input("pfm: cannot open for writing: " + path);
  std::fprintf(f.get(), "%s\n%d %d\n-1.0\n", map.channels == 3 ? "PF" : "Pf",
               map.width, map.height);
  const size_t row_floats = static_cast<size_t>(map.width) * map.channels;
  for (int y = map.height - 1; y >= 0; --y) {
    const float* row = map.data.data() + static_cast<size_t>(y) * row_floats;
    if (std::fwrite(row, sizeof(float), row_floats, f.get()) != row_floats)
      fail_input("pfm: short write to " + path);
  }
}

FloatMap read_pfm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail_input("pfm: cannot open: " + path);

  const std::string magic = read_token(f.get(), path);
  int channels;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else fail_input("pfm: bad magic '" + magic + "' in " + path);

  int width, height;
  try {
    width = std::stoi(read_token(f.get(), path));
    height = std::stoi(read_token(f.get(), path));
  } catch (const std::exception&) {
    fail_input("pfm: malformed dimensions in " + path);
  }
  if (width < 1 || height < 1)
    fail_input("pfm: invalid dimensions in " + path);

  double scale;
  try {
    scale = std::stod(read_token(f.get(), path));
  } catch (const std::exception&) {
    fail_input("pfm: malformed scale line in " + path);
  }
  const bool little_endian = scale < 0.0;

  FloatMap map(width, height, channels);
  const size_t row_floats = static_cast<size_t>(width) * channels;
  std::vector<float> row(row_floats);
  for (int y = height - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row_floats, f.get()) != row_floats)
      fail_input("pfm: truncated payload in " + path);
    if (!little_endian) byteswap_floats(row);
    std::memcpy(map.data.data() + static_cast<size_t>(y) * row_floats,
                row.data(), row_floats * sizeof(float));
  }
  return map;
}

}  // namespace iid::img
