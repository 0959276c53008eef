#include "hasseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "hasseg/config.hpp"
#include "hasseg/error.hpp"

namespace hasseg {

namespace {

void require_binary(const Volume& m, const char* what) {
  for (float v : m.data) {
    if (v != 0.f && v != 1.f) throw ValueError(std::string(what) + ": mask must contain only 0 and 1");
  }
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Sum over `from` of the distance to the nearest point of `to`, and the largest such distance.
std::pair<double, double> directed(const SurfaceVoxelSet& from, const SurfaceVoxelSet& to) {
  const long n = static_cast<long>(from.points.size());
  std::vector<double> nearest(from.points.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto& p = from.points[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to.points) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    nearest[static_cast<std::size_t>(i)] = std::sqrt(best);
  }
  double sum = 0.0, worst = 0.0;
  for (double d : nearest) {
    sum += d;
    worst = std::max(worst, d);
  }
  return {sum, worst};
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

double conformity_from_dsc(double dsc) { return dsc > 0.0 ? (3.0 * dsc - 2.0) / dsc : kConformityUndefined; }

double jaccard_from_dsc(double dsc) { return dsc / (2.0 - dsc); }

Overlap overlap_metrics(const Volume& estimate, const Volume& truth) {
  require_same_grid(estimate, truth, "overlap_metrics");
  require_binary(estimate, "overlap_metrics estimate");
  require_binary(truth, "overlap_metrics truth");
  std::size_t e = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const bool a = estimate.data[i] == 1.f, b = truth.data[i] == 1.f;
    e += a;
    g += b;
    both += a && b;
  }
  if (g == 0) throw ValueError("overlap_metrics: ground-truth mask is empty");
  Overlap o;
  o.dsc = 2.0 * static_cast<double>(both) / static_cast<double>(e + g);
  o.jacc = static_cast<double>(both) / static_cast<double>(e + g - both);
  o.conf = conformity_from_dsc(o.dsc);
  return o;
}

SurfaceVoxelSet extract_surface(const Volume& mask) {
  require_binary(mask, "extract_surface");
  const auto [D, H, W] = mask.dims;
  SurfaceVoxelSet s;
  auto bg = [&](long d, long h, long w) {
    if (d < 0 || h < 0 || w < 0 || d >= static_cast<long>(D) || h >= static_cast<long>(H) ||
        w >= static_cast<long>(W))
      return true;
    return mask.at(static_cast<std::size_t>(d), static_cast<std::size_t>(h), static_cast<std::size_t>(w)) == 0.f;
  };
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        if (mask.at(d, h, w) != 1.f) continue;
        const long a = static_cast<long>(d), b = static_cast<long>(h), c = static_cast<long>(w);
        if (bg(a - 1, b, c) || bg(a + 1, b, c) || bg(a, b - 1, c) || bg(a, b + 1, c) || bg(a, b, c - 1) ||
            bg(a, b, c + 1)) {
          s.points.push_back({static_cast<double>(d) * mask.spacing[0], static_cast<double>(h) * mask.spacing[1],
                              static_cast<double>(w) * mask.spacing[2]});
        }
      }
  return s;
}

SurfaceDistances surface_distances(const SurfaceVoxelSet& estimate, const SurfaceVoxelSet& truth) {
  if (estimate.points.empty() || truth.points.empty()) throw ValueError("surface_distances: empty surface set");
  const auto [sum_g, max_g] = directed(truth, estimate);
  const auto [sum_e, max_e] = directed(estimate, truth);
  SurfaceDistances r;
  r.adb_mm = 0.5 * (sum_g / static_cast<double>(truth.points.size()) +
                    sum_e / static_cast<double>(estimate.points.size()));
  r.hdb_mm = std::max(max_g, max_e);
  return r;
}

SurfaceDistances surface_distances_literal(const SurfaceVoxelSet& estimate, const SurfaceVoxelSet& truth,
                                           std::size_t estimate_voxels, std::size_t truth_voxels) {
  if (estimate.points.empty() || truth.points.empty()) throw ValueError("surface_distances: empty surface set");
  const auto [sum_g, max_g] = directed(truth, estimate);
  const auto [sum_e, max_e] = directed(estimate, truth);
  SurfaceDistances r;
  r.adb_mm = 0.5 * (sum_g / static_cast<double>(truth_voxels) + sum_e / static_cast<double>(estimate_voxels));
  r.hdb_mm = std::max(max_g, max_e);
  return r;
}

double volume_mL(const Volume& mask) {
  require_binary(mask, "volume_mL");
  const double voxel_mm3 = static_cast<double>(mask.spacing[0]) * mask.spacing[1] * mask.spacing[2];
  return static_cast<double>(count_foreground(mask)) * voxel_mm3 / 1000.0;
}

Agreement agreement(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.size() < 3) throw ValueError("agreement: need at least 3 measurement pairs");
  const double n = static_cast<double>(pairs.size());
  double me = 0.0, mg = 0.0;
  for (const auto& [e, g] : pairs) {
    me += e;
    mg += g;
  }
  me /= n;
  mg /= n;
  double see = 0.0, sgg = 0.0, seg = 0.0;
  std::vector<double> diffs;
  for (const auto& [e, g] : pairs) {
    see += (e - me) * (e - me);
    sgg += (g - mg) * (g - mg);
    seg += (e - me) * (g - mg);
    diffs.push_back(e - g);
  }
  if (see == 0.0 || sgg == 0.0) throw ValueError("agreement: zero variance in measurements");
  Agreement a;
  a.n = pairs.size();
  a.pearson_r = seg / std::sqrt(see * sgg);
  for (double d : diffs) a.mean_diff += d;
  a.mean_diff /= n;
  a.sd_diff = sample_std(diffs);
  a.loa = 1.96 * a.sd_diff;
  return a;
}

Reproducibility reproducibility(const std::vector<std::vector<double>>& groups) {
  if (groups.empty()) throw ValueError("reproducibility: no groups");
  Reproducibility r;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].size() < 2) {
      throw ValueError("reproducibility: group " + std::to_string(i) + " has fewer than 2 measurements");
    }
    r.per_group_std.push_back(sample_std(groups[i]));
  }
  r.min_std = *std::min_element(r.per_group_std.begin(), r.per_group_std.end());
  r.max_std = *std::max_element(r.per_group_std.begin(), r.per_group_std.end());
  for (double s : r.per_group_std) r.mean_std += s;
  r.mean_std /= static_cast<double>(r.per_group_std.size());
  return r;
}

CaseMetrics evaluate_case(const std::string& id, const Volume& estimate, const Volume& truth, AdbMode mode) {
  const Overlap o = overlap_metrics(estimate, truth);
  CaseMetrics c;
  c.id = id;
  c.dsc = o.dsc;
  c.conf = o.conf;
  c.jacc = o.jacc;
  c.vol_e_mL = volume_mL(estimate);
  c.vol_g_mL = volume_mL(truth);
  const SurfaceVoxelSet se = extract_surface(estimate);
  const SurfaceVoxelSet sg = extract_surface(truth);
  if (se.points.empty()) {
    c.adb_mm = c.hdb_mm = std::numeric_limits<double>::infinity();
    return c;
  }
  const SurfaceDistances d = mode == AdbMode::Surface
                                 ? surface_distances(se, sg)
                                 : surface_distances_literal(se, sg, count_foreground(estimate), count_foreground(truth));
  c.adb_mm = d.adb_mm;
  c.hdb_mm = d.hdb_mm;
  return c;
}

MetricsReport build_report(std::vector<CaseMetrics> cases,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups) {
  if (cases.empty()) throw ValueError("build_report: no cases");
  MetricsReport r;
  r.cases = std::move(cases);
  const double n = static_cast<double>(r.cases.size());
  auto field = [&](double CaseMetrics::*f, CaseMetrics& mean, CaseMetrics& sd) {
    std::vector<double> v;
    double total = 0.0;
    for (const auto& c : r.cases) {
      v.push_back(c.*f);
      total += c.*f;
    }
    mean.*f = total / n;
    sd.*f = std::isfinite(mean.*f) ? sample_std(v) : std::numeric_limits<double>::quiet_NaN();
  };
  r.mean.id = "mean";
  r.std.id = "std";
  for (auto f : {&CaseMetrics::dsc, &CaseMetrics::conf, &CaseMetrics::jacc, &CaseMetrics::adb_mm,
                 &CaseMetrics::hdb_mm, &CaseMetrics::vol_e_mL, &CaseMetrics::vol_g_mL}) {
    field(f, r.mean, r.std);
  }
  if (r.cases.size() == 1) r.std = CaseMetrics{"std"};

  std::vector<std::pair<double, double>> pairs;
  for (const auto& c : r.cases) pairs.emplace_back(c.vol_e_mL, c.vol_g_mL);
  try {
    r.agreement = agreement(pairs);
    r.has_agreement = true;
  } catch (const ValueError&) {
    r.has_agreement = false;
  }

  if (!groups.empty()) {
    std::map<std::string, double> by_id;
    for (const auto& c : r.cases) by_id[c.id] = c.vol_e_mL;
    std::vector<std::vector<double>> values;
    for (const auto& [name, ids] : groups) {
      std::vector<double> g;
      for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw ValueError("grouping refers to unknown case '" + id + "'");
        g.push_back(it->second);
      }
      values.push_back(std::move(g));
      r.group_names.push_back(name);
    }
    r.reproducibility = reproducibility(values);
    r.has_reproducibility = true;
  }
  return r;
}

std::string metrics_csv(const MetricsReport& r) {
  std::string out = "case,dsc,conf,jacc,adb_mm,hdb_mm,vol_e_mL,vol_g_mL\n";
  for (const auto& c : r.cases) {
    out += c.id + "," + fmt(c.dsc) + "," + fmt(c.conf) + "," + fmt(c.jacc) + "," + fmt(c.adb_mm) + "," +
           fmt(c.hdb_mm) + "," + fmt(c.vol_e_mL) + "," + fmt(c.vol_g_mL) + "\n";
  }
  return out;
}

std::string report_text(const MetricsReport& r) {
  std::ostringstream os;
  auto row = [&](const CaseMetrics& c) {
    os << "case " << c.id << "\n"
       << "  dsc " << fmt(c.dsc) << "\n  conf " << fmt(c.conf) << "\n  jacc " << fmt(c.jacc) << "\n  adb_mm "
       << fmt(c.adb_mm) << "\n  hdb_mm " << fmt(c.hdb_mm) << "\n  vol_e_mL " << fmt(c.vol_e_mL)
       << "\n  vol_g_mL " << fmt(c.vol_g_mL) << "\n";
  };
  for (const auto& c : r.cases) row(c);
  os << "aggregate (" << r.cases.size() << " cases)\n";
  row(r.mean);
  row(r.std);
  if (r.has_agreement) {
    os << "agreement\n  pearson_r " << fmt(r.agreement.pearson_r) << "\n  bland_mean_diff_mL "
       << fmt(r.agreement.mean_diff) << "\n  bland_loa_mL " << fmt(r.agreement.loa) << "\n";
  } else {
    os << "agreement\n  unavailable (needs >= 3 cases with non-constant volumes)\n";
  }
  if (r.has_reproducibility) {
    os << "reproducibility\n  groups " << r.reproducibility.per_group_std.size() << "\n  mean_std_mL "
       << fmt(r.reproducibility.mean_std) << "\n  min_std_mL " << fmt(r.reproducibility.min_std)
       << "\n  max_std_mL " << fmt(r.reproducibility.max_std) << "\n";
  }
  return os.str();
}

std::string bland_altman_csv(const MetricsReport& r) {
  std::string out = "case,mean_mL,diff_mL\n";
  for (const auto& c : r.cases) {
    out += c.id + "," + fmt(0.5 * (c.vol_e_mL + c.vol_g_mL)) + "," + fmt(c.vol_e_mL - c.vol_g_mL) + "\n";
  }
  return out;
}

std::string reproducibility_csv(const MetricsReport& r) {
  std::string out = "group,std_mL\n";
  for (std::size_t i = 0; i < r.group_names.size(); ++i) {
    out += r.group_names[i] + "," + fmt(r.reproducibility.per_group_std[i]) + "\n";
  }
  return out;
}

}  // namespace hasseg
