#include "hasseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hasseg/error.hpp"
#include "hasseg/rng.hpp"

namespace hasseg {

namespace {

constexpr std::uint8_t kMagic[8] = {'S', 'V', 'O', 'L', 0x01, 0, 0, 0};
constexpr std::size_t kHeaderBytes = 8 + 3 * 4 + 3 * 4 + 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

const char* kind_name(VolumeKind k) {
  switch (k) {
    case VolumeKind::Image:
      return "image";
    case VolumeKind::Mask:
      return "mask";
    case VolumeKind::Prob:
      return "prob";
  }
  return "?";
}

}  // namespace

Volume::Volume(std::array<std::size_t, 3> d, std::array<float, 3> s, VolumeKind k)
    : dims(d), spacing(s), kind(k), data(d[0] * d[1] * d[2], 0.f) {}

void Volume::validate() const {
  for (float s : spacing) {
    if (!(s > 0.f) || !std::isfinite(s)) throw ValueError("volume spacing must be positive and finite");
  }
  if (data.size() != size()) {
    throw ValueError("volume holds " + std::to_string(data.size()) + " values for dims " +
                     std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float v = data[i];
    if (!std::isfinite(v)) throw ValueError("volume contains a non-finite value at index " + std::to_string(i));
    if (kind == VolumeKind::Mask && v != 0.f && v != 1.f) {
      throw ValueError("mask volume contains value " + std::to_string(v) + " at index " + std::to_string(i) +
                       " (only 0 and 1 allowed)");
    }
  }
}

void require_same_grid(const Volume& a, const Volume& b, const char* what) {
  if (!a.same_grid(b)) {
    throw ShapeError(std::string(what) + ": grid mismatch " + std::to_string(a.dims[0]) + "x" +
                     std::to_string(a.dims[1]) + "x" + std::to_string(a.dims[2]) + " vs " +
                     std::to_string(b.dims[0]) + "x" + std::to_string(b.dims[1]) + "x" + std::to_string(b.dims[2]));
  }
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  out.reserve(kHeaderBytes + 4 * v.data.size());
  for (std::size_t d : v.dims) {
    if (d > 0xffffffffULL) throw ValueError("volume dimension exceeds the 32-bit header field");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float s : v.spacing) put_u32(out, std::bit_cast<std::uint32_t>(s));
  out.push_back(static_cast<std::uint8_t>(v.kind));
  out.insert(out.end(), 3, 0);
  for (float x : v.data) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError(origin + ": bad magic (not an SVOL1 volume)");
  }
  if (bytes.size() < kHeaderBytes) throw IoError(origin + ": truncated header");
  const std::uint8_t* p = bytes.data() + 8;
  Volume v;
  for (int a = 0; a < 3; ++a) v.dims[a] = get_u32(p + 4 * a);
  for (int a = 0; a < 3; ++a) v.spacing[a] = std::bit_cast<float>(get_u32(p + 12 + 4 * a));
  const std::uint8_t kind = p[24];
  if (kind > 2) throw IoError(origin + ": unknown volume kind " + std::to_string(kind));
  v.kind = static_cast<VolumeKind>(kind);
  const std::size_t count = v.size();
  const std::size_t payload = bytes.size() - kHeaderBytes;
  if (payload != 4 * count) {
    throw IoError(origin + ": payload holds " + std::to_string(payload) + " bytes, header dims require " +
                  std::to_string(4 * count));
  }
  v.data.resize(count);
  const std::uint8_t* q = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) v.data[i] = std::bit_cast<float>(get_u32(q + 4 * i));
  try {
    v.validate();
  } catch (const ValueError& e) {
    throw ValueError(origin + " (" + kind_name(v.kind) + "): " + e.what());
  }
  return v;
}

void write_volume(const Volume& v, const std::string& path) {
  const auto bytes = encode_volume(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_volume(bytes, path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() || base.empty() ? p : (base / fp).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    ManifestEntry e;
    e.image = resolve(line.substr(0, tab));
    if (tab != std::string::npos) {
      const std::string mask = line.substr(tab + 1);
      if (mask.find('\t') != std::string::npos) {
        throw IoError(path + ":" + std::to_string(lineno) + ": expected 'image<TAB>mask'");
      }
      if (!mask.empty()) e.mask = resolve(mask);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& e : entries) {
    out << e.image;
    if (!e.mask.empty()) out << '\t' << e.mask;
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

Volume normalize_minmax(const Volume& v) {
  Volume out = v;
  if (v.data.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const double mn = *lo, range = static_cast<double>(*hi) - mn;
  for (float& x : out.data) x = range > 0.0 ? static_cast<float>((x - mn) / range) : 0.f;
  return out;
}

Interp default_interp(VolumeKind kind) { return kind == VolumeKind::Mask ? Interp::Nearest : Interp::Trilinear; }

namespace {

struct AxisMap {
  std::vector<std::size_t> lo, hi;
  std::vector<double> t;
};

AxisMap axis_map(std::size_t in, std::size_t out, Interp method) {
  AxisMap m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.t.assign(out, 0.0);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    if (method == Interp::Nearest) {
      const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * ratio));
      m.lo[i] = m.hi[i] = std::min(s, in - 1);
      continue;
    }
    const double s = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    m.lo[i] = i0;
    m.hi[i] = std::min(i0 + 1, in - 1);
    m.t[i] = s - static_cast<double>(i0);
  }
  return m;
}

}  // namespace

Volume resample(const Volume& v, std::array<std::size_t, 3> dims, Interp method) {
  for (std::size_t d : dims) {
    if (d == 0) throw ValueError("resample: target dims must be positive");
  }
  if (v.size() == 0) throw ValueError("resample: empty input volume");
  Volume out(dims, v.spacing, v.kind);
  for (int a = 0; a < 3; ++a) {
    out.spacing[a] = static_cast<float>(static_cast<double>(v.spacing[a]) * static_cast<double>(v.dims[a]) /
                                        static_cast<double>(dims[a]));
  }
  if (dims == v.dims) {
    out.data = v.data;
    return out;
  }
  const AxisMap md = axis_map(v.dims[0], dims[0], method);
  const AxisMap mh = axis_map(v.dims[1], dims[1], method);
  const AxisMap mw = axis_map(v.dims[2], dims[2], method);
  const long nd = static_cast<long>(dims[0]);
#pragma omp parallel for schedule(static)
  for (long dl = 0; dl < nd; ++dl) {
    const auto d = static_cast<std::size_t>(dl);
    for (std::size_t h = 0; h < dims[1]; ++h) {
      for (std::size_t w = 0; w < dims[2]; ++w) {
        float& dst = out.data[(d * dims[1] + h) * dims[2] + w];
        if (method == Interp::Nearest) {
          dst = v.at(md.lo[d], mh.lo[h], mw.lo[w]);
          continue;
        }
        const double td = md.t[d], th = mh.t[h], tw = mw.t[w];
        auto lerp_w = [&](std::size_t a, std::size_t b) {
          return (1.0 - tw) * v.at(a, b, mw.lo[w]) + tw * v.at(a, b, mw.hi[w]);
        };
        const double c0 = (1.0 - th) * lerp_w(md.lo[d], mh.lo[h]) + th * lerp_w(md.lo[d], mh.hi[h]);
        const double c1 = (1.0 - th) * lerp_w(md.hi[d], mh.lo[h]) + th * lerp_w(md.hi[d], mh.hi[h]);
        dst = static_cast<float>((1.0 - td) * c0 + td * c1);
      }
    }
  }
  return out;
}

Volume resample(const Volume& v, double factor, Interp method) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw ValueError("resample: factor must be positive");
  std::array<std::size_t, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(v.dims[a]) * factor)));
  }
  return resample(v, dims, method);
}

std::string Orientation::name() const {
  std::string s;
  if (flip_d) s += "d";
  if (flip_h) s += "h";
  if (flip_w) s += "w";
  return s.empty() ? "identity" : "flip_" + s;
}

std::vector<Orientation> orientation_set(int count) {
  if (count < 1 || count > 8) {
    throw ConfigError("orientation count " + std::to_string(count) +
                      " outside 1..8 (flips and 180-degree rotations form a group of 8)");
  }
  // Identity, the three single flips, the three 180-degree rotations, inversion.
  static const Orientation order[8] = {
      {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
      {false, true, true},   {true, false, true},  {true, true, false},  {true, true, true}};
  return std::vector<Orientation>(order, order + count);
}

Volume apply_orientation(const Volume& v, const Orientation& o) {
  Volume out(v.dims, v.spacing, v.kind);
  const auto [D, H, W] = v.dims;
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        out.at(d, h, w) = v.at(o.flip_d ? D - 1 - d : d, o.flip_h ? H - 1 - h : h, o.flip_w ? W - 1 - w : w);
  return out;
}

std::vector<OrientedPair> orientation_augment(const Volume& image, const Volume& mask, int count) {
  require_same_grid(image, mask, "orientation_augment");
  std::vector<OrientedPair> out;
  for (const auto& o : orientation_set(count)) {
    out.push_back({o, apply_orientation(image, o), apply_orientation(mask, o)});
  }
  return out;
}

Volume random_erase(const Volume& image, const Volume& mask, double scale_lo, double scale_hi, Rng& rng,
                    EraseBox* box_out) {
  require_same_grid(image, mask, "random_erase");
  if (!(scale_lo >= 0.0) || !(scale_hi <= 1.0) || scale_lo > scale_hi) {
    throw ValueError("random_erase: scale range must satisfy 0 <= lo <= hi <= 1");
  }
  std::array<std::size_t, 3> lo = image.dims, hi{0, 0, 0};
  bool any = false;
  for (std::size_t d = 0; d < image.dims[0]; ++d)
    for (std::size_t h = 0; h < image.dims[1]; ++h)
      for (std::size_t w = 0; w < image.dims[2]; ++w) {
        if (mask.at(d, h, w) < 0.5f) continue;
        any = true;
        const std::size_t c[3] = {d, h, w};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
      }
  if (!any) {
    lo = {0, 0, 0};
    hi = {image.dims[0] - 1, image.dims[1] - 1, image.dims[2] - 1};
  }
  EraseBox box;
  for (int a = 0; a < 3; ++a) {
    const double s = rng.uniform(scale_lo, scale_hi);
    box.extent[a] = std::min(image.dims[a], static_cast<std::size_t>(std::llround(s * static_cast<double>(image.dims[a]))));
  }
  for (int a = 0; a < 3; ++a) {
    const std::size_t center = lo[a] + rng.uniform_index(hi[a] - lo[a] + 1);
    const std::size_t half = box.extent[a] / 2;
    const std::size_t start = center >= half ? center - half : 0;
    box.start[a] = std::min(start, image.dims[a] - box.extent[a]);
  }
  Volume out = image;
  for (std::size_t d = box.start[0]; d < box.start[0] + box.extent[0]; ++d)
    for (std::size_t h = box.start[1]; h < box.start[1] + box.extent[1]; ++h)
      for (std::size_t w = box.start[2]; w < box.start[2] + box.extent[2]; ++w) out.at(d, h, w) = 0.f;
  if (box_out) *box_out = box;
  return out;
}

Volume join(const Volume& image, const Volume& prob) {
  require_same_grid(image, prob, "join");
  Volume out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += prob.data[i];
  return out;
}

std::size_t count_foreground(const Volume& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](float v) { return v >= 0.5f; }));
}

std::size_t count_components(const Volume& mask) {
  const auto [D, H, W] = mask.dims;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t components = 0;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (seen[start] || mask.data[start] < 0.5f) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t w = i % W, h = (i / W) % H, d = i / (W * H);
      auto visit = [&](std::size_t j) {
        if (!seen[j] && mask.data[j] >= 0.5f) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (d > 0) visit(i - W * H);
      if (d + 1 < D) visit(i + W * H);
      if (h > 0) visit(i - W);
      if (h + 1 < H) visit(i + W);
      if (w > 0) visit(i - 1);
      if (w + 1 < W) visit(i + 1);
    }
  }
  return components;
}

}  // namespace hasseg
