#include "samm2d/volume.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace samm2d {

namespace {

void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(reinterpret_cast<const char*>(p), n);
}

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_bytes(buf, &v, sizeof(T));  // host is little-endian
}

class Reader {
 public:
  Reader(const std::vector<char>& data, const char* what) : data_(data), what_(what) {}

  template <typename T>
  T get() {
    T v;
    if (pos_ + sizeof(T) > data_.size())
      throw FormatError(FormatError::Kind::truncated,
                        std::string(what_) + ": file truncated in header");
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  const char* take(size_t n, const char* field) {
    if (pos_ + n > data_.size())
      throw FormatError(FormatError::Kind::truncated,
                        std::string(what_) + ": file truncated in " + field);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  size_t remaining() const { return data_.size() - pos_; }

 private:
  const std::vector<char>& data_;
  const char* what_;
  size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string(what) + ": cannot open " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, const std::string& buf, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(std::string(what) + ": cannot open for writing: " + path.string());
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw DataError(std::string(what) + ": write failed: " + path.string());
}

}  // namespace

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  if (volume.voxels.size() != volume.voxel_count())
    throw DataError("save_volume: voxel buffer does not match dims");
  std::string buf;
  buf.reserve(24 + volume.voxels.size() * 4 + 4);
  put_bytes(buf, "MVOL", 4);
  put<uint16_t>(buf, kMvolVersion);
  for (int i = 0; i < 3; ++i) put<uint32_t>(buf, volume.dims[i]);
  for (int i = 0; i < 3; ++i) put<float>(buf, volume.spacing_mm[i]);
  const size_t payload_off = buf.size();
  put_bytes(buf, volume.voxels.data(), volume.voxels.size() * 4);
  const uint32_t crc = (uint32_t)crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + payload_off),
                                       (uInt)(volume.voxels.size() * 4));
  put<uint32_t>(buf, crc);
  write_file(path, buf, "save_volume");
}

Volume load_volume(const std::filesystem::path& path) {
  const auto data = read_file(path, "load_volume");
  Reader r(data, "load_volume");

  char magic[4];
  std::memcpy(magic, r.take(4, "magic"), 4);
  if (std::memcmp(magic, "MVOL", 4) != 0)
    throw FormatError(FormatError::Kind::bad_magic, "load_volume: bad magic in " + path.string());
  const uint16_t version = r.get<uint16_t>();
  if (version != kMvolVersion)
    throw FormatError(FormatError::Kind::bad_field,
                      "load_volume: unsupported version " + std::to_string(version));

  Volume v;
  for (int i = 0; i < 3; ++i) v.dims[i] = r.get<uint32_t>();
  for (int i = 0; i < 3; ++i) v.spacing_mm[i] = r.get<float>();
  const size_t count = v.voxel_count();
  if (count == 0 || count > (1ull << 32))
    throw FormatError(FormatError::Kind::bad_field, "load_volume: implausible dims");

  const char* payload = r.take(count * 4, "payload");
  const uint32_t stored_crc = r.get<uint32_t>();
  const uint32_t crc =
      (uint32_t)crc32(0L, reinterpret_cast<const Bytef*>(payload), (uInt)(count * 4));
  if (crc != stored_crc)
    throw FormatError(FormatError::Kind::crc_mismatch,
                      "load_volume: payload CRC mismatch in " + path.string());

  v.voxels.resize(count);
  std::memcpy(v.voxels.data(), payload, count * 4);
  for (float x : v.voxels)
    if (!std::isfinite(x))
      throw FormatError(FormatError::Kind::bad_field, "load_volume: non-finite voxel");
  return v;
}

}  // namespace samm2d
