#pragma once

// DSPKDAT1 patch-dataset file.
//
//   offset  size  field
//   0       8     magic "DSPKDAT1"
//   8       4     u32 patch count
//   12      4     u32 patch size P
//   16      4     f32 looks
//   20      8     u64 seed
//   28      ...   per patch: clean plane then speckle plane, P*P f32 each
//
// Everything is little-endian, planes row-major. The noisy plane is not
// stored; it is recomputed as clean * speckle on load.

#include <cstdint>
#include <filesystem>
#include <limits>

#include "despeckle/binary_io.hpp"
#include "despeckle/speckle.hpp"

namespace despeckle {

inline constexpr std::string_view kDatasetMagic = "DSPKDAT1";
inline constexpr std::size_t kDatasetHeaderBytes = 28;

/// Incremental writer, so full-size datasets never have to sit in memory.
class DatasetWriter {
 public:
  DatasetWriter(std::size_t count, std::size_t patch_size, Looks looks, std::uint64_t seed)
      : count_(count), patch_size_(patch_size) {
    if (count > std::numeric_limits<std::uint32_t>::max() ||
        patch_size > std::numeric_limits<std::uint32_t>::max())
      throw ConfigError("dataset too large for the DSPKDAT1 header");
    w_.bytes(kDatasetMagic);
    w_.u32(static_cast<std::uint32_t>(count));
    w_.u32(static_cast<std::uint32_t>(patch_size));
    w_.f32(static_cast<float>(looks.value()));
    w_.u64(seed);
  }

  void add(const Patch& p) {
    if (p.clean.rows() != patch_size_ || p.clean.cols() != patch_size_ || !p.clean.same_shape(p.speckle))
      throw ShapeError("DatasetWriter: patch dimensions differ from header");
    if (written_ == count_) throw ShapeError("DatasetWriter: more patches than declared");
    for (double v : p.clean.data()) w_.f32(static_cast<float>(v));
    for (double v : p.speckle.data()) w_.f32(static_cast<float>(v));
    ++written_;
  }

  void save(const std::filesystem::path& path) const {
    if (written_ != count_) throw ShapeError("DatasetWriter: fewer patches than declared");
    io::write_file_atomic(path, w_.buffer());
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return w_.buffer(); }

 private:
  std::size_t count_;
  std::size_t patch_size_;
  std::size_t written_ = 0;
  io::ByteWriter w_;
};

inline std::vector<std::uint8_t> encode_dataset(const PatchDataset& ds) {
  DatasetWriter w(ds.size(), ds.patch_size, ds.looks, ds.seed);
  for (const auto& p : ds.patches) w.add(p);
  return w.bytes();
}

inline void save_dataset(const PatchDataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dataset(ds));
}

inline PatchDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "DSPKDAT1");
  r.expect_magic(kDatasetMagic);
  const std::uint32_t count = r.u32();
  const std::uint32_t size = r.u32();
  const float looks = r.f32();
  const std::uint64_t seed = r.u64();
  if (!(looks >= 1.0f)) r.fail("looks must be >= 1");
  if (count > 0 && size == 0) r.fail("patch size must be >= 1");
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (r.remaining() / 8 / (plane ? plane : 1) < count) r.fail("truncated patch data");

  PatchDataset ds;
  ds.patch_size = size;
  ds.looks = Looks(looks);
  ds.seed = seed;
  ds.patches.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Patch p{Image2D(size, size), Image2D(size, size), Image2D(size, size)};
    for (double& v : p.clean.data()) v = r.f32();
    for (double& v : p.speckle.data()) v = r.f32();
    p.noisy = corrupt(p.clean, p.speckle);
    ds.patches.push_back(std::move(p));
  }
  if (!r.at_end()) r.fail("trailing bytes after patch data");
  return ds;
}

inline PatchDataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_file(path));
}

}  // namespace despeckle
