#pragma once

// Test-side file fixtures built byte by byte, independent of the writer.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixture {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("caidc_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

class Bytes {
 public:
  Bytes(std::size_t size, bool big_endian) : data_(size, 0), big_(big_endian) {}

  template <typename T>
  void put(std::size_t offset, T value) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if (big_ != (std::endian::native == std::endian::big))
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    if (data_.size() < offset + sizeof(T)) data_.resize(offset + sizeof(T), 0);
    std::memcpy(data_.data() + offset, raw.data(), sizeof(T));
  }
  void put_text(std::size_t offset, const char* text, std::size_t n) {
    std::memcpy(data_.data() + offset, text, n);
  }
  std::vector<std::uint8_t>& data() { return data_; }

 private:
  std::vector<std::uint8_t> data_;
  bool big_;
};

/// Single-file NIfTI-1 with int16 voxels in the requested byte order.
inline void write_int16_nifti(const std::filesystem::path& path, std::array<std::int16_t, 3> dims,
                              std::array<float, 3> spacing, const std::vector<std::int16_t>& voxels,
                              bool big_endian, float slope = 1.0f, float intercept = 0.0f) {
  Bytes b(352, big_endian);
  b.put<std::int32_t>(0, 348);
  b.put<std::int16_t>(40, 3);
  for (int i = 0; i < 3; ++i) b.put<std::int16_t>(42 + 2 * i, dims[i]);
  for (int i = 3; i < 7; ++i) b.put<std::int16_t>(42 + 2 * i, 1);
  b.put<std::int16_t>(70, 4);
  b.put<std::int16_t>(72, 16);
  b.put<float>(76, 1.0f);
  for (int i = 0; i < 3; ++i) b.put<float>(80 + 4 * i, spacing[i]);
  b.put<float>(108, 352.0f);
  b.put<float>(112, slope);
  b.put<float>(116, intercept);
  b.put_text(344, "n+1\0", 4);
  std::size_t offset = 352;
  for (auto v : voxels) {
    b.put<std::int16_t>(offset, v);
    offset += 2;
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data().data()), static_cast<std::streamsize>(b.data().size()));
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixture
