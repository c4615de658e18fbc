#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include "agerank/ops.hpp"
#include "agerank/phantom.hpp"
#include "agerank/rng.hpp"
#include "agerank/volume.hpp"

namespace agerank {

/// Training-time augmentation. Each transform fires independently with its
/// probability, always in the order translate -> rotate -> noise -> crop.
struct AugmentConfig {
  double p_translate = 0.5;
  double p_rotate = 0.5;
  double p_noise = 0.5;
  double p_crop = 0.5;
  std::optional<int> max_translation;  // voxels; default ceil(0.05 * min extent)
  double rotation_min = 0.1;           // radians
  double rotation_max = 0.5;
  double noise_mean = 0.0;
  double noise_std = 0.025;
  double crop_min_fraction = 0.70;
  std::uint64_t seed = 7;

  void validate() const {
    for (double p : {p_translate, p_rotate, p_noise, p_crop})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment config: probabilities must lie in [0,1]");
    if (!(rotation_min <= rotation_max) || rotation_min < 0.0)
      throw ConfigError("augment config: rotation range must be ordered and nonnegative");
    if (!(crop_min_fraction > 0.0 && crop_min_fraction <= 1.0))
      throw ConfigError("augment config: crop fraction must lie in (0,1]");
    if (noise_std < 0.0) throw ConfigError("augment config: noise std must be nonnegative");
    if (max_translation && *max_translation < 0) throw ConfigError("augment config: negative max translation");
  }

  int translation_limit(const std::array<std::size_t, 3>& dims) const {
    if (max_translation) return *max_translation;
    const auto m = *std::min_element(dims.begin(), dims.end());
    return static_cast<int>(std::ceil(0.05 * static_cast<double>(m)));
  }

  static AugmentConfig disabled() {
    AugmentConfig c;
    c.p_translate = c.p_rotate = c.p_noise = c.p_crop = 0.0;
    return c;
  }
};

/// What one augment call did.
struct AugmentTrace {
  bool translated = false, rotated = false, noised = false, cropped = false;
  std::array<int, 3> shift{0, 0, 0};
  double angle = 0.0;
  std::array<double, 3> axis{0.0, 0.0, 1.0};
  std::array<std::size_t, 3> crop_origin{0, 0, 0};
  std::array<std::size_t, 3> crop_extent{0, 0, 0};
};

namespace augment_ops {

/// Integer shift along (x, y, z); vacated voxels become zero.
inline Volume translate(const Volume& v, std::array<int, 3> shift) {
  Volume out(v.dims, 0.0f);
  out.spacing = v.spacing;
  const auto n = v.dims;
  for (std::size_t z = 0; z < n[2]; ++z)
    for (std::size_t y = 0; y < n[1]; ++y)
      for (std::size_t x = 0; x < n[0]; ++x) {
        const long sx = static_cast<long>(x) - shift[0];
        const long sy = static_cast<long>(y) - shift[1];
        const long sz = static_cast<long>(z) - shift[2];
        if (sx < 0 || sy < 0 || sz < 0 || sx >= static_cast<long>(n[0]) || sy >= static_cast<long>(n[1]) ||
            sz >= static_cast<long>(n[2]))
          continue;
        out.at(x, y, z) = v.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
      }
  return out;
}

/// Trilinear sample with zero outside the grid.
inline double sample_zero(const Volume& v, double x, double y, double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy), z0 = static_cast<long>(fz);
  const double wx = x - fx, wy = y - fy, wz = z - fz;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const long xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        const double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * (dz ? wz : 1 - wz);
        if (w == 0.0) continue;
        if (xi < 0 || yi < 0 || zi < 0 || xi >= static_cast<long>(v.dims[0]) || yi >= static_cast<long>(v.dims[1]) ||
            zi >= static_cast<long>(v.dims[2]))
          continue;
        acc += w * v.at(static_cast<std::size_t>(xi), static_cast<std::size_t>(yi), static_cast<std::size_t>(zi));
      }
  return acc;
}

/// Rotation by `angle` about unit `axis` through the volume centre.
inline Volume rotate(const Volume& v, std::array<double, 3> axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const auto [ux, uy, uz] = axis;
  // Rodrigues matrix; its transpose maps output coordinates back to the source.
  const double R[3][3] = {{t * ux * ux + c, t * ux * uy - s * uz, t * ux * uz + s * uy},
                          {t * ux * uy + s * uz, t * uy * uy + c, t * uy * uz - s * ux},
                          {t * ux * uz - s * uy, t * uy * uz + s * ux, t * uz * uz + c}};
  Volume out(v.dims, 0.0f);
  out.spacing = v.spacing;
  const double cx = 0.5 * static_cast<double>(v.dims[0] - 1);
  const double cy = 0.5 * static_cast<double>(v.dims[1] - 1);
  const double cz = 0.5 * static_cast<double>(v.dims[2] - 1);
  for (std::size_t z = 0; z < v.dims[2]; ++z)
    for (std::size_t y = 0; y < v.dims[1]; ++y)
      for (std::size_t x = 0; x < v.dims[0]; ++x) {
        const double px = static_cast<double>(x) - cx, py = static_cast<double>(y) - cy, pz = static_cast<double>(z) - cz;
        const double sx = R[0][0] * px + R[1][0] * py + R[2][0] * pz + cx;
        const double sy = R[0][1] * px + R[1][1] * py + R[2][1] * pz + cy;
        const double sz = R[0][2] * px + R[1][2] * py + R[2][2] * pz + cz;
        out.at(x, y, z) = static_cast<float>(sample_zero(v, sx, sy, sz));
      }
  return out;
}

/// Crops the box [origin, origin + extent) and resamples it back to the
/// input dims with half-pixel trilinear interpolation.
inline Volume crop_resize(const Volume& v, std::array<std::size_t, 3> origin, std::array<std::size_t, 3> extent) {
  Volume crop(extent, 0.0f);
  for (std::size_t z = 0; z < extent[2]; ++z)
    for (std::size_t y = 0; y < extent[1]; ++y)
      for (std::size_t x = 0; x < extent[0]; ++x)
        crop.at(x, y, z) = v.at(origin[0] + x, origin[1] + y, origin[2] + z);
  Volume out(v.dims, 0.0f);
  out.spacing = v.spacing;
  auto tz = ops::detail::lerp_taps(extent[2], v.dims[2]);
  auto ty = ops::detail::lerp_taps(extent[1], v.dims[1]);
  auto tx = ops::detail::lerp_taps(extent[0], v.dims[0]);
  ops::detail::trilinear_forward(crop.voxels.data(), {extent[2], extent[1], extent[0]}, out.voxels.data(),
                                 {v.dims[2], v.dims[1], v.dims[0]}, tz, ty, tx);
  return out;
}

}  // namespace augment_ops

inline Volume augment(const Volume& input, const AugmentConfig& cfg, Rng& rng, AugmentTrace* trace = nullptr) {
  cfg.validate();
  for (auto d : input.dims)
    if (d < 8) throw ConfigError("augment: degenerate volume dims (every extent must be >= 8)");
  AugmentTrace tr;
  Volume v = input;

  // Every draw happens regardless of which transforms fire, so the stream
  // position after augment() does not depend on the coin flips.
  const bool do_translate = bernoulli(rng, cfg.p_translate);
  const int lim = cfg.translation_limit(input.dims);
  std::uniform_int_distribution<int> shift_dist(-lim, lim);
  for (auto& s : tr.shift) s = shift_dist(rng);

  const bool do_rotate = bernoulli(rng, cfg.p_rotate);
  tr.angle = uniform(rng, cfg.rotation_min, cfg.rotation_max);
  {
    std::normal_distribution<double> nd(0.0, 1.0);
    double ax = 0, ay = 0, az = 0, norm = 0;
    do {
      ax = nd(rng);
      ay = nd(rng);
      az = nd(rng);
      norm = std::sqrt(ax * ax + ay * ay + az * az);
    } while (norm < 1e-9);
    tr.axis = {ax / norm, ay / norm, az / norm};
  }

  const bool do_noise = bernoulli(rng, cfg.p_noise);
  const std::uint64_t noise_seed = rng();

  const bool do_crop = bernoulli(rng, cfg.p_crop);
  for (int a = 0; a < 3; ++a) {
    const auto n = input.dims[a];
    const auto min_ext = static_cast<std::size_t>(std::ceil(cfg.crop_min_fraction * static_cast<double>(n) - 1e-9));
    std::uniform_int_distribution<std::size_t> ext(std::max<std::size_t>(min_ext, 1), n);
    tr.crop_extent[a] = ext(rng);
    std::uniform_int_distribution<std::size_t> org(0, n - tr.crop_extent[a]);
    tr.crop_origin[a] = org(rng);
  }

  if (do_translate) {
    tr.translated = true;
    v = augment_ops::translate(v, tr.shift);
  }
  if (do_rotate) {
    tr.rotated = true;
    v = augment_ops::rotate(v, tr.axis, tr.angle);
  }
  if (do_noise) {
    tr.noised = true;
    Rng nr(noise_seed);
    std::normal_distribution<double> nd(cfg.noise_mean, cfg.noise_std);
    for (auto& x : v.voxels) x = static_cast<float>(x + nd(nr));
  }
  if (do_crop) {
    tr.cropped = true;
    v = augment_ops::crop_resize(v, tr.crop_origin, tr.crop_extent);
  }
  if (trace) *trace = tr;
  return v;
}

}  // namespace agerank
