#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hasseg {

enum class VolumeKind : std::uint8_t { Image = 0, Mask = 1, Prob = 2 };

/// Scalar D x H x W grid, W fastest. spacing[a] is the physical size (mm) of a
/// voxel along axis a (a = 0: D, 1: H, 2: W).
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  VolumeKind kind = VolumeKind::Image;
  std::vector<float> data;

  Volume() = default;
  Volume(std::array<std::size_t, 3> dims, std::array<float, 3> spacing, VolumeKind kind);

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * dims[1] + h) * dims[2] + w; }
  float& at(std::size_t d, std::size_t h, std::size_t w) { return data[index(d, h, w)]; }
  float at(std::size_t d, std::size_t h, std::size_t w) const { return data[index(d, h, w)]; }
  bool same_grid(const Volume& other) const { return dims == other.dims; }

  /// Throws ValueError: non-positive spacing, size mismatch, non-binary mask,
  /// non-finite values.
  void validate() const;

  bool operator==(const Volume&) const = default;
};

/// Throws ShapeError unless both volumes share dims.
void require_same_grid(const Volume& a, const Volume& b, const char* what);

// ---- SVOL1 ----

std::vector<std::uint8_t> encode_volume(const Volume& v);
/// `origin` names the source in error messages. Throws IoError on a malformed
/// buffer and ValueError if the decoded volume is invalid.
Volume decode_volume(std::span<const std::uint8_t> bytes, const std::string& origin = "buffer");
void write_volume(const Volume& v, const std::string& path);
Volume read_volume(const std::string& path);

// ---- manifests ----

struct ManifestEntry {
  std::string image;
  std::string mask;  // may be empty for inference-only manifests
};

/// One `image<TAB>mask` (or just `image`) per line. Relative paths are resolved
/// against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// ---- intensity and geometry ----

/// Per-volume min-max scaling to [0, 1]; a constant volume maps to all zeros.
Volume normalize_minmax(const Volume& v);

enum class Interp { Nearest, Trilinear };

/// Interpolation used when `kind` is resampled without an explicit method.
Interp default_interp(VolumeKind kind);

/// Voxel-center aligned resampling to `dims`; spacing scales by old/new extent so
/// the physical extent is preserved.
Volume resample(const Volume& v, std::array<std::size_t, 3> dims, Interp method);
/// Target dims = max(1, round(dims * factor)).
Volume resample(const Volume& v, double factor, Interp method);

/// Element of the orientation group generated by axis flips and 180-degree
/// rotations (a rotation about one axis flips the other two).
struct Orientation {
  bool flip_d = false, flip_h = false, flip_w = false;
  std::string name() const;
  bool operator==(const Orientation&) const = default;
};

/// The group has 8 elements; the first `count` of the canonical order are
/// returned (identity first). Throws ConfigError outside 1..8.
std::vector<Orientation> orientation_set(int count);
Volume apply_orientation(const Volume& v, const Orientation& o);

struct OrientedPair {
  Orientation orientation;
  Volume image;
  Volume mask;
};
std::vector<OrientedPair> orientation_augment(const Volume& image, const Volume& mask, int count);

/// Axis-aligned cuboid [start, start + extent) per axis.
struct EraseBox {
  std::array<std::size_t, 3> start{0, 0, 0};
  std::array<std::size_t, 3> extent{0, 0, 0};
  std::size_t voxels() const { return extent[0] * extent[1] * extent[2]; }
};

class Rng;

/// Zeroes one cuboid of `image`. Per axis a scale s ~ U[scale_lo, scale_hi] sets
/// extent = round(s * dim); then a center is drawn uniformly inside the mask's
/// bounding box (whole grid if the mask is empty) and the cuboid is placed
/// around it, shifted to stay inside the grid. Draw order: three scales, then
/// three center coordinates, axes in D, H, W order.
Volume random_erase(const Volume& image, const Volume& mask, double scale_lo, double scale_hi, Rng& rng,
                    EraseBox* box = nullptr);

// ---- joins and masks ----

/// Element-wise sum of an image and a probability map (Auto-Context join).
Volume join(const Volume& image, const Volume& prob);

/// Number of mask voxels equal to 1.
std::size_t count_foreground(const Volume& mask);

/// Number of 6-connected foreground components.
std::size_t count_components(const Volume& mask);

}  // namespace hasseg
