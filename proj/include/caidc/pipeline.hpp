#pragma once

// Whole-volume processing: slices are independent work units handed to a
// small pool of threads; results land in slice order whatever the pool size.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "caidc/error.hpp"
#include "caidc/nifti_io.hpp"
#include "caidc/slice_engine.hpp"

namespace caidc {

struct VolumeOptions {
  SliceOptions slice;
  double w_th_mm = 2.0;
  std::optional<double> w_pix;  // px/mm; defaults to 1 / in-plane spacing
  double blood_baseline = kDefaultBloodBaseline;
  unsigned jobs = 1;
};

/// Worker count from an explicit value, then CAIDC_JOBS, then 1.
inline unsigned resolve_jobs(std::optional<unsigned> requested) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("CAIDC_JOBS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

/// Runs `work(i)` for i in [0, n) on `jobs` threads. The first exception
/// thrown by any task is rethrown after all workers stop.
template <typename Work>
void parallel_for(std::size_t n, unsigned jobs, Work&& work) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline double pixel_density(const nifti::Volume& volume, const VolumeOptions& options) {
  if (options.w_pix) return *options.w_pix;
  return 1.0 / volume.spacing[0];
}

/// Slice z of the volume with its S-region and propagated P-region.
inline SliceData slice_data(const nifti::Volume& volume, const nifti::Volume& s_mask, std::size_t z,
                            const VolumeOptions& options) {
  SliceData slice;
  slice.pixels = volume.slice(z);
  slice.s_mask = s_mask.mask_slice(z);
  slice.spacing = {volume.spacing[1], volume.spacing[0]};
  slice.slice_index = static_cast<int>(z);
  slice.p_mask = count(slice.s_mask) == 0 ? Mask(slice.s_mask.rows(), slice.s_mask.cols(), 0)
                                          : propagate_mask(slice.s_mask, options.w_th_mm,
                                                           pixel_density(volume, options));
  return slice;
}

inline void check_inputs(const nifti::Volume& volume, const nifti::Volume& s_mask) {
  volume.check();
  s_mask.check();
  const nifti::Volume* masks[] = {&s_mask};
  const ValidationReport geometry = nifti::validate_geometry(volume, masks);
  if (!geometry.ok()) {
    std::string msg = "volume and mask disagree:";
    for (const auto& v : geometry.violations) msg += " " + v + ";";
    throw Error(ErrorCode::dim_mismatch, msg);
  }
}

inline std::vector<SliceResult> process_volume(const nifti::Volume& volume, const nifti::Volume& s_mask,
                                               const VolumeOptions& options,
                                               const std::vector<std::size_t>& slices = {}) {
  check_inputs(volume, s_mask);
  std::vector<std::size_t> order = slices;
  if (order.empty())
    for (std::size_t z = 0; z < volume.dims[2]; ++z) order.push_back(z);
  for (auto z : order)
    if (z >= volume.dims[2]) throw Error(ErrorCode::invalid_argument, "slice index out of range");
  std::vector<SliceResult> results(order.size());
  parallel_for(order.size(), options.jobs, [&](std::size_t i) {
    results[i] = process_slice(slice_data(volume, s_mask, order[i], options), options.slice);
  });
  return results;
}

struct Elimination {
  nifti::Volume volume;
  std::vector<int> skipped_slices;  // lumen not fully covered by fits
};

/// Synthetic non-contrast volume: lumen voxels of fitted slices become
/// observed - CAiDC + blood_baseline; all other voxels are copied through.
inline Elimination eliminate_volume(const nifti::Volume& volume, const std::vector<SliceResult>& results,
                                    double blood_baseline) {
  Elimination out{volume, {}};
  out.volume.datatype = nifti::Datatype::float32;
  for (const auto& r : results) {
    if (r.empty()) continue;
    SliceData eliminated;
    try {
      eliminated = eliminate_ca(r.processed, r.field, blood_baseline);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::insufficient_data) throw;
      out.skipped_slices.push_back(r.slice_index);
      continue;
    }
    const auto z = static_cast<std::size_t>(r.slice_index);
    for (std::size_t y = 0; y < volume.dims[1]; ++y)
      for (std::size_t x = 0; x < volume.dims[0]; ++x)
        if (r.processed.s_mask(y, x)) out.volume.data[volume.index(x, y, z)] = eliminated.pixels(y, x);
  }
  return out;
}

}  // namespace caidc
