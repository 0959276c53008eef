#pragma once

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hasseg/volume.hpp"

namespace hasseg {

/// Conformity for a zero Dice score, where (3 DSC - 2) / DSC is undefined.
inline constexpr double kConformityUndefined = -std::numeric_limits<double>::infinity();

struct Overlap {
  double dsc = 0.0;
  double jacc = 0.0;
  double conf = 0.0;
};

double conformity_from_dsc(double dsc);
double jaccard_from_dsc(double dsc);

/// E = estimate, G = ground truth. Throws ShapeError on grid mismatch and
/// ValueError if G is empty or either mask is not binary.
Overlap overlap_metrics(const Volume& estimate, const Volume& truth);

/// Foreground voxels with at least one background 6-neighbor (outside the grid
/// counts as background), as voxel-center coordinates index * spacing in mm.
struct SurfaceVoxelSet {
  std::vector<std::array<double, 3>> points;
};

SurfaceVoxelSet extract_surface(const Volume& mask);

struct SurfaceDistances {
  double adb_mm = 0.0;
  double hdb_mm = 0.0;
};

/// Exact (brute-force) symmetric surface distances. Adb averages the nearest
/// distances over each surface's own vertex count. Throws ValueError if either set is empty.
SurfaceDistances surface_distances(const SurfaceVoxelSet& estimate, const SurfaceVoxelSet& truth);

/// Variant that divides the two distance sums by the foreground voxel counts
/// |G| and |E| instead of the surface vertex counts.
SurfaceDistances surface_distances_literal(const SurfaceVoxelSet& estimate, const SurfaceVoxelSet& truth,
                                           std::size_t estimate_voxels, std::size_t truth_voxels);

/// Foreground count times voxel volume, in millilitres.
double volume_mL(const Volume& mask);

struct Agreement {
  std::size_t n = 0;
  double pearson_r = 0.0;
  double mean_diff = 0.0;  // mean of (estimate - truth)
  double sd_diff = 0.0;    // sample standard deviation of the differences
  double loa = 0.0;        // 1.96 * sd_diff; limits are mean_diff -/+ loa
};

/// Pairs are (estimate, truth). Throws ValueError for fewer than 3 pairs or if
/// either coordinate has zero variance.
Agreement agreement(const std::vector<std::pair<double, double>>& pairs);

struct Reproducibility {
  std::vector<double> per_group_std;  // sample standard deviation per group
  double mean_std = 0.0;
  double min_std = 0.0;
  double max_std = 0.0;
};

/// Throws ValueError for an empty list or a group with fewer than 2 values.
Reproducibility reproducibility(const std::vector<std::vector<double>>& groups);

enum class AdbMode { Surface, Literal };

struct CaseMetrics {
  std::string id;
  double dsc = 0.0, conf = 0.0, jacc = 0.0;
  double adb_mm = 0.0, hdb_mm = 0.0;  // +inf if the estimate is empty
  double vol_e_mL = 0.0, vol_g_mL = 0.0;
};

CaseMetrics evaluate_case(const std::string& id, const Volume& estimate, const Volume& truth,
                          AdbMode mode = AdbMode::Surface);

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  CaseMetrics mean;  // id "mean"
  CaseMetrics std;   // sample std (0 for a single case), id "std"
  bool has_agreement = false;
  Agreement agreement;
  bool has_reproducibility = false;
  std::vector<std::string> group_names;
  Reproducibility reproducibility;
};

/// Aggregates cases in order. Agreement is computed when there are at least 3
/// cases with non-degenerate volumes; groups (name, case ids) add reproducibility.
MetricsReport build_report(std::vector<CaseMetrics> cases,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups = {});

/// Header `case,dsc,conf,jacc,adb_mm,hdb_mm,vol_e_mL,vol_g_mL`, one row per case.
std::string metrics_csv(const MetricsReport& r);
/// Human-readable per-case records plus the aggregate block.
std::string report_text(const MetricsReport& r);
/// Bland-Altman data: case, mean of the pair, difference.
std::string bland_altman_csv(const MetricsReport& r);
std::string reproducibility_csv(const MetricsReport& r);

}  // namespace hasseg
