#include "hasseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hasseg/error.hpp"
#include "hasseg/rng.hpp"

namespace hasseg {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Uniform random rotation from a normalized Gaussian quaternion.
Mat3 random_rotation(Rng& rng) {
  double q[4];
  double n = 0.0;
  for (double& v : q) {
    v = rng.normal();
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : q) v /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r{};
  r[0] = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)};
  r[1] = {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)};
  r[2] = {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)};
  return r;
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("phantom.") + what);
}

}  // namespace

double Ellipsoid::radius2(double d, double h, double w) const {
  const double p[3] = {d - center[0], h - center[1], w - center[2]};
  double r = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double q = rotation[0][i] * p[0] + rotation[1][i] * p[1] + rotation[2][i] * p[2];
    r += (q / semi_axes[i]) * (q / semi_axes[i]);
  }
  return r;
}

void PhantomSpec::validate() const {
  for (std::size_t d : dims) require(d >= 4 && d <= 1024, "dims must lie in [4, 1024]");
  require(spacing > 0.f, "spacing must be positive");
  require(semi_axis_min > 0.0 && semi_axis_max >= semi_axis_min, "semi-axis range invalid");
  require(center_jitter >= 0.0 && center_jitter < 0.5, "center_jitter must lie in [0, 0.5)");
  require(lobe_scale >= 0.0 && lobe_scale <= 1.0, "lobe_scale must lie in [0, 1]");
  require(lobe_offset >= 0.0 && lobe_offset < 1.0, "lobe_offset must lie in [0, 1) so the lobe overlaps the head");
  for (double v : {background, interior, rim}) require(v >= 0.0 && v <= 1.0, "intensities must lie in [0, 1]");
  require(rim_width >= 0.0 && rim_width <= 1.0, "rim_width must lie in [0, 1]");
  require(speckle >= 0.0, "speckle must be >= 0");
  require(shadow_count >= 0, "shadow_count must be >= 0");
  require(shadow_half_angle_deg >= 0.0 && shadow_half_angle_deg < 90.0, "shadow_half_angle_deg must lie in [0, 90)");
  require(shadow_attenuation >= 0.0 && shadow_attenuation <= 1.0, "shadow_attenuation must lie in [0, 1]");
  require(dropout_sectors >= 1, "dropout_sectors must be >= 1");
  require(dropout_probability >= 0.0 && dropout_probability <= 1.0, "dropout_probability must lie in [0, 1]");
  require(min_foreground >= 0.0 && max_foreground <= 1.0 && min_foreground < max_foreground,
          "foreground bounds invalid");
  require(max_retries >= 1, "max_retries must be >= 1");
}

PhantomSpec PhantomSpec::from_config(const Config& cfg) {
  PhantomSpec s;
  const auto size = static_cast<std::size_t>(cfg.get_int("phantom.size", 0));
  if (size) s.dims = {size, size, size};
  s.dims[0] = static_cast<std::size_t>(cfg.get_int("phantom.dim_d", static_cast<std::int64_t>(s.dims[0])));
  s.dims[1] = static_cast<std::size_t>(cfg.get_int("phantom.dim_h", static_cast<std::int64_t>(s.dims[1])));
  s.dims[2] = static_cast<std::size_t>(cfg.get_int("phantom.dim_w", static_cast<std::int64_t>(s.dims[2])));
  s.spacing = static_cast<float>(cfg.get_double("phantom.spacing", s.spacing));
  s.semi_axis_min = cfg.get_double("phantom.semi_axis_min", s.semi_axis_min);
  s.semi_axis_max = cfg.get_double("phantom.semi_axis_max", s.semi_axis_max);
  s.center_jitter = cfg.get_double("phantom.center_jitter", s.center_jitter);
  s.lobe_scale = cfg.get_double("phantom.lobe_scale", s.lobe_scale);
  s.lobe_offset = cfg.get_double("phantom.lobe_offset", s.lobe_offset);
  s.background = cfg.get_double("phantom.background", s.background);
  s.interior = cfg.get_double("phantom.interior", s.interior);
  s.rim = cfg.get_double("phantom.rim", s.rim);
  s.rim_width = cfg.get_double("phantom.rim_width", s.rim_width);
  s.speckle = cfg.get_double("phantom.speckle", s.speckle);
  s.shadow_count = static_cast<int>(cfg.get_int("phantom.shadow_count", s.shadow_count));
  s.shadow_half_angle_deg = cfg.get_double("phantom.shadow_half_angle_deg", s.shadow_half_angle_deg);
  s.shadow_attenuation = cfg.get_double("phantom.shadow_attenuation", s.shadow_attenuation);
  s.dropout_sectors = static_cast<int>(cfg.get_int("phantom.dropout_sectors", s.dropout_sectors));
  s.dropout_probability = cfg.get_double("phantom.dropout_probability", s.dropout_probability);
  s.min_foreground = cfg.get_double("phantom.min_foreground", s.min_foreground);
  s.max_foreground = cfg.get_double("phantom.max_foreground", s.max_foreground);
  s.max_retries = static_cast<int>(cfg.get_int("phantom.max_retries", s.max_retries));
  return s;
}

void PhantomSpec::to_config(Config& cfg) const {
  auto setd = [&](const char* k, double v) { cfg.set(std::string("phantom.") + k, format_double(v)); };
  auto seti = [&](const char* k, long long v) { cfg.set(std::string("phantom.") + k, std::to_string(v)); };
  seti("dim_d", static_cast<long long>(dims[0]));
  seti("dim_h", static_cast<long long>(dims[1]));
  seti("dim_w", static_cast<long long>(dims[2]));
  setd("spacing", spacing);
  setd("semi_axis_min", semi_axis_min);
  setd("semi_axis_max", semi_axis_max);
  setd("center_jitter", center_jitter);
  setd("lobe_scale", lobe_scale);
  setd("lobe_offset", lobe_offset);
  setd("background", background);
  setd("interior", interior);
  setd("rim", rim);
  setd("rim_width", rim_width);
  setd("speckle", speckle);
  seti("shadow_count", shadow_count);
  setd("shadow_half_angle_deg", shadow_half_angle_deg);
  setd("shadow_attenuation", shadow_attenuation);
  seti("dropout_sectors", dropout_sectors);
  setd("dropout_probability", dropout_probability);
  setd("min_foreground", min_foreground);
  setd("max_foreground", max_foreground);
  seti("max_retries", max_retries);
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto [D, H, W] = spec.dims;
  const std::array<float, 3> spacing{spec.spacing, spec.spacing, spec.spacing};

  for (int attempt = 1; attempt <= spec.max_retries; ++attempt) {
    Phantom ph;
    ph.attempts = attempt;
    Ellipsoid& head = ph.geometry.head;
    for (int a = 0; a < 3; ++a) {
      const double extent = static_cast<double>(spec.dims[a]);
      head.center[a] = (extent - 1.0) / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * extent;
      head.semi_axes[a] = rng.uniform(spec.semi_axis_min, spec.semi_axis_max);
    }
    head.rotation = random_rotation(rng);
    Ellipsoid& lobe = ph.geometry.lobe;
    lobe.rotation = head.rotation;
    for (int a = 0; a < 3; ++a) {
      lobe.semi_axes[a] = spec.lobe_scale * head.semi_axes[a];
      lobe.center[a] = head.center[a] + spec.lobe_offset * head.semi_axes[0] * head.rotation[a][0];
    }

    ph.mask = Volume(spec.dims, spacing, VolumeKind::Mask);
    std::vector<double> radius(ph.mask.size());
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const double r = head.radius2(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w));
          const double rl = spec.lobe_scale > 0.0
                                ? lobe.radius2(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w))
                                : 2.0;
          const std::size_t i = ph.mask.index(d, h, w);
          radius[i] = std::sqrt(r);
          if (r <= 1.0 || rl <= 1.0) ph.mask.data[i] = 1.f;
        }
    const double fraction = static_cast<double>(count_foreground(ph.mask)) / static_cast<double>(ph.mask.size());

    // The image is drawn even when this attempt is rejected so that the RNG
    // stream, and with it every later attempt, does not depend on the checks.
    ph.image = Volume(spec.dims, spacing, VolumeKind::Image);
    std::vector<bool> dropped(static_cast<std::size_t>(spec.dropout_sectors));
    for (std::size_t s = 0; s < dropped.size(); ++s) dropped[s] = rng.uniform() < spec.dropout_probability;
    struct Cone {
      double d0, h0, w0;
    };
    std::vector<Cone> cones;
    for (int k = 0; k < spec.shadow_count; ++k) {
      // Apex on the near (low-D) side of the rim, where the skull faces the probe.
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double lift = rng.uniform(0.2, 0.8);
      const double q[3] = {-std::sqrt(1.0 - lift * lift), lift * std::cos(phi), lift * std::sin(phi)};
      double p[3];
      for (int a = 0; a < 3; ++a) {
        p[a] = head.center[a];
        for (int b = 0; b < 3; ++b) p[a] += head.rotation[a][b] * q[b] * head.semi_axes[b];
      }
      // The cone opens along +D, behind the reflector.
      cones.push_back({p[0], p[1], p[2]});
    }
    const double tan_half = std::tan(spec.shadow_half_angle_deg * std::numbers::pi / 180.0);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t i = ph.mask.index(d, h, w);
          const double r = radius[i];
          double v = spec.background + 0.05 * std::cos(0.15 * static_cast<double>(d + h));
          if (r <= 1.0) {
            v = spec.interior * (1.0 - 0.25 * r * r);
            if (r >= 1.0 - spec.rim_width) {
              const double az = std::atan2(static_cast<double>(w) - head.center[2], static_cast<double>(h) - head.center[1]);
              auto sector = static_cast<std::size_t>((az + std::numbers::pi) / (2.0 * std::numbers::pi) *
                                                     static_cast<double>(spec.dropout_sectors));
              sector = std::min(sector, dropped.size() - 1);
              if (!dropped[sector]) v = spec.rim;
            }
          } else if (ph.mask.data[i] > 0.f) {
            v = spec.interior * 0.9;
          }
          if (spec.speckle > 0.0) v *= 1.0 + spec.speckle * rng.normal();
          for (const auto& c : cones) {
            const double depth = static_cast<double>(d) - c.d0;
            if (depth <= 0.0) continue;
            const double lateral = std::hypot(static_cast<double>(h) - c.h0, static_cast<double>(w) - c.w0);
            if (lateral <= depth * tan_half) v *= 1.0 - spec.shadow_attenuation;
          }
          ph.image.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }

    if (fraction < spec.min_foreground || fraction > spec.max_foreground) continue;
    if (count_components(ph.mask) != 1) continue;
    return ph;
  }
  throw ValueError("generate_phantom: no valid phantom after " + std::to_string(spec.max_retries) +
                   " attempts (foreground fraction or connectivity constraint)");
}

}  // namespace hasseg
