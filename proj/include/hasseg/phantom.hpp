#pragma once

#include <array>
#include <cstdint>

#include "hasseg/config.hpp"
#include "hasseg/volume.hpp"

namespace hasseg {

/// Synthetic head-like phantom: a rotated ellipsoid with an attached lobe,
/// bright rim, multiplicative speckle, acoustic-shadow cones cast from the
/// D = 0 face, and rim segments that drop out. Lengths are in voxels.
struct PhantomSpec {
  std::array<std::size_t, 3> dims{48, 48, 48};
  float spacing = 1.0f;  // isotropic mm per voxel
  double semi_axis_min = 9.0;
  double semi_axis_max = 15.0;
  double center_jitter = 0.08;  // fraction of each dim
  double lobe_scale = 0.55;     // lobe semi-axes relative to the main ones
  double lobe_offset = 0.75;    // lobe center along the main first axis, in units of that semi-axis
  double background = 0.12;
  double interior = 0.38;
  double rim = 0.92;
  double rim_width = 0.18;  // rim where the implicit radius lies in [1 - rim_width, 1]
  double speckle = 0.35;    // std of the multiplicative noise; 0 disables
  int shadow_count = 2;
  double shadow_half_angle_deg = 9.0;
  double shadow_attenuation = 1.0;  // 1 zeroes the cone completely
  int dropout_sectors = 8;
  double dropout_probability = 0.25;
  double min_foreground = 0.02;
  double max_foreground = 0.40;
  int max_retries = 50;

  void validate() const;
  static PhantomSpec from_config(const Config& cfg);
  void to_config(Config& cfg) const;
};

/// Ellipsoid geometry in voxel-index coordinates (d, h, w).
struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  std::array<std::array<double, 3>, 3> rotation{};  // columns are the body axes

  /// Implicit radius: sum over body axes of (q_i / a_i)^2 with q = R^T (p - c).
  double radius2(double d, double h, double w) const;
};

struct PhantomGeometry {
  Ellipsoid head;
  Ellipsoid lobe;
};

struct Phantom {
  Volume image;
  Volume mask;
  PhantomGeometry geometry;
  int attempts = 1;
};

/// Deterministic in (spec, seed). Throws ValueError if no draw satisfies the
/// foreground-fraction and single-component constraints within max_retries.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

}  // namespace hasseg
