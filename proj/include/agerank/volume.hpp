#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agerank/io.hpp"
#include "agerank/tensor.hpp"

namespace agerank {

/// Dense scalar field, x-fastest: index = x + nx * (y + ny * z).
struct Volume {
  std::array<std::size_t, 3> dims{32, 32, 32};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> voxels;

  Volume() = default;
  Volume(std::array<std::size_t, 3> d, float fill = 0.0f) : dims(d), voxels(d[0] * d[1] * d[2], fill) {}

  std::size_t nx() const noexcept { return dims[0]; }
  std::size_t ny() const noexcept { return dims[1]; }
  std::size_t nz() const noexcept { return dims[2]; }
  std::size_t count() const noexcept { return dims[0] * dims[1] * dims[2]; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims[0] * (y + dims[1] * z);
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return voxels[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const noexcept { return voxels[index(x, y, z)]; }

  /// View as a [1,1,nz,ny,nx] tensor.
  template <typename T = float>
  Tensor<T> as_tensor() const {
    std::vector<T> d(voxels.begin(), voxels.end());
    return Tensor<T>({1, 1, nz(), ny(), nx()}, std::move(d));
  }

  bool all_finite() const {
    for (float v : voxels)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.dims == b.dims && a.spacing == b.spacing && a.voxels == b.voxels;
  }
};

class VolumeFormatError : public io::IoError {
 public:
  using io::IoError::IoError;
};

namespace rvol {

inline constexpr char kMagic[4] = {'R', 'V', 'O', 'L'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint64_t kMaxVoxels = std::uint64_t{1} << 30;

inline std::string encode(const Volume& v) {
  io::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  for (auto d : v.dims) w.u32(static_cast<std::uint32_t>(d));
  for (auto s : v.spacing) w.f32(s);
  w.f32s(v.voxels.data(), v.voxels.size());
  return w.take();
}

inline Volume decode(const std::string& bytes, const std::string& context = "RVOL") {
  io::ByteReader r(bytes, context);
  if (r.remaining() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw VolumeFormatError(context + ": bad magic (expected 'RVOL')");
  }
  r.bytes(4, "magic");
  try {
    const auto version = r.u32();
    if (version != kVersion) {
      throw VolumeFormatError(context + ": unsupported version " + std::to_string(version));
    }
    Volume v;
    std::uint64_t count = 1;
    for (auto& d : v.dims) {
      const auto e = r.u32();
      if (e == 0) throw VolumeFormatError(context + ": dimension overflow: zero extent");
      count *= e;
      if (count > kMaxVoxels) {
        throw VolumeFormatError(context + ": dimension overflow: more than " + std::to_string(kMaxVoxels) + " voxels");
      }
      d = e;
    }
    for (auto& s : v.spacing) s = r.f32();
    const std::uint64_t payload = count * sizeof(float);
    if (r.remaining() < payload) {
      throw VolumeFormatError(context + ": truncated payload: expected " + std::to_string(r.position() + payload) +
                              " bytes, got " + std::to_string(bytes.size()));
    }
    v.voxels.resize(count);
    r.f32s(v.voxels.data(), count, "payload");
    return v;
  } catch (const VolumeFormatError&) {
    throw;
  } catch (const io::IoError& e) {
    throw VolumeFormatError(e.what());
  }
}

}  // namespace rvol

inline void write_volume(const std::filesystem::path& path, const Volume& v) {
  io::atomic_write(path, rvol::encode(v));
}

inline Volume read_volume(const std::filesystem::path& path) {
  return rvol::decode(io::read_file(path), path.string());
}

}  // namespace agerank
