#pragma once

// NIfTI-1 reading and writing. Single-file (n+1) and header/image pair (ni1)
// inputs in either byte order, optionally gzip-compressed; output is always
// little-endian single-file with vox_offset 352.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "caidc/error.hpp"
#include "caidc/grid.hpp"

namespace caidc::nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kSingleFileOffset = 352;

enum class Datatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
};

inline std::size_t bytes_per_voxel(Datatype t) {
  switch (t) {
    case Datatype::uint8: return 1;
    case Datatype::int16: return 2;
    case Datatype::int32: return 4;
    case Datatype::float32: return 4;
    case Datatype::float64: return 8;
  }
  throw Error(ErrorCode::unsupported_datatype, "unknown datatype");
}

inline bool is_supported(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: return true;
    default: return false;
  }
}

using HeaderBytes = std::array<std::uint8_t, kHeaderSize>;

struct Volume {
  std::array<std::size_t, 3> dims{1, 1, 1};  // nx, ny, nz
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<double> data;  // HU after slope/intercept, x fastest
  Datatype datatype = Datatype::float32;
  /// Header as read (little-endian), so fields the library does not
  /// interpret survive a read-modify-write. Empty for fresh volumes.
  std::vector<std::uint8_t> header;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }

  void check() const {
    for (auto d : dims)
      if (d == 0) throw Error(ErrorCode::dim_mismatch, "zero dimension");
    for (auto s : spacing)
      if (!(s > 0)) throw Error(ErrorCode::invalid_argument, "non-positive spacing");
    if (data.size() != voxel_count()) throw Error(ErrorCode::dim_mismatch, "data size does not match dims");
  }

  /// Slice `z` as an image with rows along y and columns along x.
  Image slice(std::size_t z) const {
    Image img(dims[1], dims[0]);
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) img(y, x) = data[index(x, y, z)];
    return img;
  }

  void set_slice(std::size_t z, const Image& img) {
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) data[index(x, y, z)] = img(y, x);
  }

  Mask mask_slice(std::size_t z) const {
    Mask m(dims[1], dims[0]);
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) m(y, x) = data[index(x, y, z)] != 0.0;
    return m;
  }
};

/// A fresh volume with the geometry of `like` (header bytes included).
inline Volume like(const Volume& like, Datatype datatype, double fill = 0.0) {
  Volume v;
  v.dims = like.dims;
  v.spacing = like.spacing;
  v.datatype = datatype;
  v.header = like.header;
  v.data.assign(like.voxel_count(), fill);
  return v;
}

namespace detail {

// (offset, width) of every numeric header field, for byte swapping.
struct Field {
  std::size_t offset;
  std::size_t width;
  std::size_t count;
};
inline constexpr std::array<Field, 24> kNumericFields = {{
    {0, 4, 1},     // sizeof_hdr
    {32, 4, 1},    // extents
    {36, 2, 1},    // session_error
    {40, 2, 8},    // dim
    {56, 4, 3},    // intent_p1..3
    {68, 2, 1},    // intent_code
    {70, 2, 1},    // datatype
    {72, 2, 1},    // bitpix
    {74, 2, 1},    // slice_start
    {76, 4, 8},    // pixdim
    {108, 4, 1},   // vox_offset
    {112, 4, 1},   // scl_slope
    {116, 4, 1},   // scl_inter
    {120, 2, 1},   // slice_end
    {124, 4, 1},   // cal_max
    {128, 4, 1},   // cal_min
    {132, 4, 1},   // slice_duration
    {136, 4, 1},   // toffset
    {140, 4, 1},   // glmax
    {144, 4, 1},   // glmin
    {252, 2, 1},   // qform_code
    {254, 2, 1},   // sform_code
    {256, 4, 6},   // quatern_b..qoffset_z
    {280, 4, 12},  // srow_x, srow_y, srow_z
}};

inline void swap_bytes(std::uint8_t* p, std::size_t width) {
  for (std::size_t i = 0; i < width / 2; ++i) std::swap(p[i], p[width - 1 - i]);
}

inline void swap_header(std::span<std::uint8_t> header) {
  for (const auto& f : kNumericFields)
    for (std::size_t k = 0; k < f.count; ++k) swap_bytes(header.data() + f.offset + k * f.width, f.width);
}

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void put(std::span<std::uint8_t> bytes, std::size_t offset, T v) {
  std::memcpy(bytes.data() + offset, &v, sizeof(T));
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (!file) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buffer;
  while (true) {
    const int got = gzread(file, buffer.data(), static_cast<unsigned>(buffer.size()));
    if (got < 0) {
      gzclose(file);
      throw Error(ErrorCode::io_failure, "read error in " + path.string());
    }
    if (got == 0) break;
    out.insert(out.end(), buffer.begin(), buffer.begin() + got);
  }
  gzclose(file);
  return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::filesystem::path image_path_for(const std::filesystem::path& header_path) {
  std::string s = header_path.string();
  if (ends_with(s, ".hdr.gz")) return s.substr(0, s.size() - 7) + ".img.gz";
  if (ends_with(s, ".hdr")) return s.substr(0, s.size() - 4) + ".img";
  throw Error(ErrorCode::io_failure, "header/image pair needs a .hdr path: " + s);
}

template <typename T>
double load(const std::uint8_t* p, bool swap) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if (swap) swap_bytes(raw.data(), sizeof(T));
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  return static_cast<double>(v);
}

}  // namespace detail

/// Parses a NIfTI-1 volume. Scale and intercept are applied (a zero slope is
/// read as 1). gzip input is detected from the stream itself.
inline Volume read_volume(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_all(path);
  if (bytes.size() < kHeaderSize) throw Error(ErrorCode::truncated_data, "file shorter than a NIfTI-1 header");
  std::vector<std::uint8_t> header(bytes.begin(), bytes.begin() + kHeaderSize);

  const auto sizeof_hdr = detail::get<std::int32_t>(header, 0);
  bool swapped = false;
  if (sizeof_hdr != 348) {
    std::int32_t other = sizeof_hdr;
    detail::swap_bytes(reinterpret_cast<std::uint8_t*>(&other), 4);
    if (other == 540 || sizeof_hdr == 540)
      throw Error(ErrorCode::bad_magic, "NIfTI-2 is not supported");
    if (other != 348) throw Error(ErrorCode::bad_magic, "sizeof_hdr is not 348");
    swapped = true;
    detail::swap_header(header);
  }
  const std::string magic(reinterpret_cast<const char*>(header.data() + 344), 3);
  const bool single = magic == "n+1" && header[347] == 0;
  const bool pair = magic == "ni1" && header[347] == 0;
  if (magic == "n+2") throw Error(ErrorCode::bad_magic, "NIfTI-2 is not supported");
  if (!single && !pair) throw Error(ErrorCode::bad_magic, "magic is neither n+1 nor ni1");

  const auto ndim = detail::get<std::int16_t>(header, 40);
  if (ndim < 1 || ndim > 7) throw Error(ErrorCode::dim_mismatch, "dim[0] outside 1..7");
  Volume v;
  for (int i = 0; i < 7; ++i) {
    const auto d = detail::get<std::int16_t>(header, 42 + 2 * i);
    const std::int64_t extent = i < ndim ? d : 1;
    if (extent < 1) throw Error(ErrorCode::dim_mismatch, "non-positive dimension");
    if (i < 3) {
      v.dims[i] = static_cast<std::size_t>(extent);
      const double pix = std::abs(detail::get<float>(header, 80 + 4 * i));
      v.spacing[i] = pix > 0 ? pix : 1.0;
    } else if (extent > 1) {
      throw Error(ErrorCode::dim_mismatch, "only 3D volumes are supported");
    }
  }

  const auto code = detail::get<std::int16_t>(header, 70);
  if (!is_supported(code))
    throw Error(ErrorCode::unsupported_datatype, "datatype code " + std::to_string(code));
  v.datatype = static_cast<Datatype>(code);
  const std::size_t width = bytes_per_voxel(v.datatype);

  float slope = detail::get<float>(header, 112);
  const float inter = detail::get<float>(header, 116);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;
  const double intercept = std::isfinite(inter) ? inter : 0.0;

  std::vector<std::uint8_t> image_storage;
  std::span<const std::uint8_t> payload;
  const auto vox_offset = static_cast<std::size_t>(detail::get<float>(header, 108));
  if (single) {
    if (vox_offset < kHeaderSize) throw Error(ErrorCode::truncated_data, "vox_offset inside header");
    payload = std::span<const std::uint8_t>(bytes).subspan(std::min(vox_offset, bytes.size()));
  } else {
    image_storage = detail::read_all(detail::image_path_for(path));
    payload = std::span<const std::uint8_t>(image_storage).subspan(std::min(vox_offset, image_storage.size()));
  }
  const std::size_t n = v.voxel_count();
  if (payload.size() < n * width) throw Error(ErrorCode::truncated_data, "voxel data shorter than dims imply");

  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = payload.data() + i * width;
    double raw = 0.0;
    switch (v.datatype) {
      case Datatype::uint8: raw = *p; break;
      case Datatype::int16: raw = detail::load<std::int16_t>(p, swapped); break;
      case Datatype::int32: raw = detail::load<std::int32_t>(p, swapped); break;
      case Datatype::float32: raw = detail::load<float>(p, swapped); break;
      case Datatype::float64: raw = detail::load<double>(p, swapped); break;
    }
    v.data[i] = slope == 1.0f && intercept == 0.0 ? raw : raw * static_cast<double>(slope) + intercept;
  }
  v.header = std::move(header);
  return v;
}

struct WriteReport {
  std::size_t saturated = 0;  // voxels clipped or rounded to fit the datatype
  bool lossy() const { return saturated > 0; }
};

namespace detail {

template <typename T>
T cast_saturating(double value, std::size_t& saturated) {
  if constexpr (std::is_floating_point_v<T>) {
    if (std::isnan(value)) {
      ++saturated;
      return T{0};
    }
    constexpr double hi = static_cast<double>(std::numeric_limits<T>::max());
    if (value > hi) {
      ++saturated;
      return std::numeric_limits<T>::max();
    }
    if (value < -hi) {
      ++saturated;
      return std::numeric_limits<T>::lowest();
    }
    return static_cast<T>(value);
  } else {
    if (std::isnan(value)) {
      ++saturated;
      return T{0};
    }
    const double rounded = std::nearbyint(value);
    constexpr double lo = static_cast<double>(std::numeric_limits<T>::min());
    constexpr double hi = static_cast<double>(std::numeric_limits<T>::max());
    if (rounded < lo) {
      ++saturated;
      return std::numeric_limits<T>::min();
    }
    if (rounded > hi) {
      ++saturated;
      return std::numeric_limits<T>::max();
    }
    if (rounded != value) ++saturated;
    return static_cast<T>(rounded);
  }
}

template <typename T>
void append(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace detail

/// Writes a little-endian single-file NIfTI-1. Values outside the datatype's
/// range are saturated and counted in the report. Paths ending in .gz are
/// gzip-compressed.
inline WriteReport write_volume(const Volume& volume, const std::filesystem::path& path,
                                Datatype datatype) {
  volume.check();
  std::vector<std::uint8_t> header(kHeaderSize, 0);
  const bool fresh = volume.header.size() != kHeaderSize;
  if (!fresh) header = volume.header;
  std::span<std::uint8_t> h(header);
  detail::put<std::int32_t>(h, 0, 348);
  if (fresh) {
    h[38] = 'r';  // regular
    detail::put<float>(h, 76, 1.0f);  // qfac
    h[123] = 2;  // xyzt_units: mm
  }
  detail::put<std::int16_t>(h, 40, 3);
  for (int i = 0; i < 7; ++i) {
    const std::size_t extent = i < 3 ? volume.dims[i] : 1;
    if (extent > 32767) throw Error(ErrorCode::dim_mismatch, "dimension exceeds NIfTI-1 range");
    detail::put<std::int16_t>(h, 42 + 2 * i, static_cast<std::int16_t>(extent));
  }
  for (int i = 0; i < 3; ++i) detail::put<float>(h, 80 + 4 * i, static_cast<float>(volume.spacing[i]));
  detail::put<std::int16_t>(h, 70, static_cast<std::int16_t>(datatype));
  detail::put<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(datatype)));
  detail::put<float>(h, 108, static_cast<float>(kSingleFileOffset));
  detail::put<float>(h, 112, 1.0f);
  detail::put<float>(h, 116, 0.0f);
  std::memcpy(h.data() + 344, "n+1\0", 4);

  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.resize(kSingleFileOffset, 0);  // empty extension flag
  out.reserve(kSingleFileOffset + volume.voxel_count() * bytes_per_voxel(datatype));
  WriteReport report;
  for (double value : volume.data) {
    switch (datatype) {
      case Datatype::uint8: detail::append(out, detail::cast_saturating<std::uint8_t>(value, report.saturated)); break;
      case Datatype::int16: detail::append(out, detail::cast_saturating<std::int16_t>(value, report.saturated)); break;
      case Datatype::int32: detail::append(out, detail::cast_saturating<std::int32_t>(value, report.saturated)); break;
      case Datatype::float32: detail::append(out, detail::cast_saturating<float>(value, report.saturated)); break;
      case Datatype::float64: detail::append(out, value); break;
    }
  }

  const bool gz = detail::ends_with(path.string(), ".gz");
  gzFile file = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
  if (!file) throw Error(ErrorCode::io_failure, "cannot create " + path.string());
  const int written = gzwrite(file, out.data(), static_cast<unsigned>(out.size()));
  const int closed = gzclose(file);
  if (written != static_cast<int>(out.size()) || closed != Z_OK)
    throw Error(ErrorCode::io_failure, "short write to " + path.string());
  return report;
}

/// Shared dims and spacing (within 1e-6 mm) and {0,1}-valued masks.
inline ValidationReport validate_geometry(const Volume& volume, std::span<const Volume* const> masks) {
  ValidationReport report;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const Volume& m = *masks[k];
    const std::string tag = "mask " + std::to_string(k) + ": ";
    if (m.dims != volume.dims) report.add(tag + "dims differ from volume");
    for (int i = 0; i < 3; ++i)
      if (std::abs(m.spacing[i] - volume.spacing[i]) > 1e-6) {
        report.add(tag + "spacing differs from volume");
        break;
      }
    for (double v : m.data)
      if (v != 0.0 && v != 1.0) {
        report.add(tag + "non-binary mask");
        break;
      }
  }
  return report;
}

}  // namespace caidc::nifti
