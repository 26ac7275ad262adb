#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "samm2d/errors.hpp"

namespace samm2d {

// Distinguishes what went wrong while parsing a binary file so tests and
// callers can tell truncation from corruption.
class FormatError : public DataError {
 public:
  enum class Kind { bad_magic, truncated, crc_mismatch, bad_field };
  FormatError(Kind kind, const std::string& msg) : DataError(msg), kind(kind) {}
  Kind kind;
};

// 3D voxel grid. Storage is Z-major row-major: index (z*Y + y)*X + x.
struct Volume {
  uint32_t dims[3] = {0, 0, 0};  // X, Y, Z
  float spacing_mm[3] = {1.0f, 1.0f, 1.0f};
  std::vector<float> voxels;
  std::map<std::string, std::string> meta;

  size_t voxel_count() const { return (size_t)dims[0] * dims[1] * dims[2]; }
  float& at(uint32_t x, uint32_t y, uint32_t z) {
    return voxels[((size_t)z * dims[1] + y) * dims[0] + x];
  }
  float at(uint32_t x, uint32_t y, uint32_t z) const {
    return voxels[((size_t)z * dims[1] + y) * dims[0] + x];
  }
};

// MVOL: "MVOL" magic, u16 version, 3x u32 dims, 3x f32 spacing, then the
// voxel payload as little-endian f32 (Z-major) and a trailing CRC32 of the
// payload bytes. Round-trips are bit-exact.
void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

inline constexpr uint16_t kMvolVersion = 1;

}  // namespace samm2d
