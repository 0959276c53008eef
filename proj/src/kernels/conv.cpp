#include "hasseg/kernels/conv.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "gemm.hpp"

namespace hasseg::kernels {

namespace {

using detail::gemm;

// Upper bound on the im2col buffer, in elements. Output depth planes are
// processed in slabs so the buffer never exceeds this.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

std::size_t slab_planes(const ConvGeometry& g) {
  const std::size_t per_plane = g.patch() * g.out_h() * g.out_w();
  return std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_plane, 1), 1, g.out_d());
}

// col[(c, kd, kh, kw)][(od - od0, oh, ow)] = x[c][od*s - p + kd][...], zero outside.
template <typename T>
void vol2col(const ConvGeometry& g, const T* x, std::size_t od0, std::size_t od1, T* col) {
  const std::size_t k = g.kernel, oh_n = g.out_h(), ow_n = g.out_w();
  const std::size_t cols = (od1 - od0) * oh_n * ow_n;
  const long pad = static_cast<long>(g.padding), stride = static_cast<long>(g.stride);
  const long in_d = static_cast<long>(g.in_d), in_h = static_cast<long>(g.in_h),
             in_w = static_cast<long>(g.in_w);
  const long rows = static_cast<long>(g.patch());
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const std::size_t kw = r % k, kh = (r / k) % k, kd = (r / (k * k)) % k, c = r / (k * k * k);
    const T* xc = x + c * g.in_spatial();
    T* out = col + r * cols;
    for (std::size_t od = od0; od < od1; ++od) {
      const long id = static_cast<long>(od) * stride - pad + static_cast<long>(kd);
      for (std::size_t oh = 0; oh < oh_n; ++oh) {
        const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(kh);
        T* dst = out + ((od - od0) * oh_n + oh) * ow_n;
        if (id < 0 || id >= in_d || ih < 0 || ih >= in_h) {
          std::fill(dst, dst + ow_n, T(0));
          continue;
        }
        const T* src = xc + (id * in_h + ih) * in_w;
        for (std::size_t ow = 0; ow < ow_n; ++ow) {
          const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kw);
          dst[ow] = (iw >= 0 && iw < in_w) ? src[iw] : T(0);
        }
      }
    }
  }
}

// Adjoint of vol2col: dx += scatter(col). Parallel over input channels so no
// two threads touch the same dx element.
template <typename T>
void col2vol(const ConvGeometry& g, const T* col, std::size_t od0, std::size_t od1, T* dx) {
  const std::size_t k = g.kernel, oh_n = g.out_h(), ow_n = g.out_w();
  const std::size_t cols = (od1 - od0) * oh_n * ow_n;
  const long pad = static_cast<long>(g.padding), stride = static_cast<long>(g.stride);
  const long in_d = static_cast<long>(g.in_d), in_h = static_cast<long>(g.in_h),
             in_w = static_cast<long>(g.in_w);
  const long channels = static_cast<long>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < channels; ++c) {
    T* xc = dx + c * g.in_spatial();
    for (std::size_t kk = 0; kk < k * k * k; ++kk) {
      const std::size_t kw = kk % k, kh = (kk / k) % k, kd = kk / (k * k);
      const T* in = col + (c * k * k * k + kk) * cols;
      for (std::size_t od = od0; od < od1; ++od) {
        const long id = static_cast<long>(od) * stride - pad + static_cast<long>(kd);
        if (id < 0 || id >= in_d) continue;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const long ih = static_cast<long>(oh) * stride - pad + static_cast<long>(kh);
          if (ih < 0 || ih >= in_h) continue;
          const T* src = in + ((od - od0) * oh_n + oh) * ow_n;
          T* dst = xc + (id * in_h + ih) * in_w;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const long iw = static_cast<long>(ow) * stride - pad + static_cast<long>(kw);
            if (iw >= 0 && iw < in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y) {
  const int m = static_cast<int>(g.out_channels), kdim = static_cast<int>(g.patch());
  const std::size_t out_sp = g.out_spatial(), plane = g.out_h() * g.out_w();
  std::vector<T> col;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xn = x + n * g.in_channels * g.in_spatial();
    T* yn = y + n * g.out_channels * out_sp;
    if (is_pointwise(g)) {
      gemm(false, false, m, static_cast<int>(out_sp), kdim, T(1), w, kdim, xn,
           static_cast<int>(out_sp), T(0), yn, static_cast<int>(out_sp));
    } else {
      const std::size_t step = slab_planes(g);
      col.resize(g.patch() * step * plane);
      for (std::size_t od0 = 0; od0 < g.out_d(); od0 += step) {
        const std::size_t od1 = std::min(od0 + step, g.out_d());
        const int cols = static_cast<int>((od1 - od0) * plane);
        vol2col(g, xn, od0, od1, col.data());
        gemm(false, false, m, cols, kdim, T(1), w, kdim, col.data(), cols, T(0),
             yn + od0 * plane, static_cast<int>(out_sp));
      }
    }
    if (b) {
      const long channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static)
      for (long k = 0; k < channels; ++k) {
        T* yk = yn + k * out_sp;
        for (std::size_t i = 0; i < out_sp; ++i) yk[i] += b[k];
      }
    }
  }
}

template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx) {
  const int m = static_cast<int>(g.out_channels), kdim = static_cast<int>(g.patch());
  const std::size_t out_sp = g.out_spatial(), plane = g.out_h() * g.out_w();
  std::vector<T> col;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dyn = dy + n * g.out_channels * out_sp;
    T* dxn = dx + n * g.in_channels * g.in_spatial();
    if (is_pointwise(g)) {
      gemm(true, false, kdim, static_cast<int>(out_sp), m, T(1), w, kdim, dyn,
           static_cast<int>(out_sp), T(1), dxn, static_cast<int>(out_sp));
      continue;
    }
    const std::size_t step = slab_planes(g);
    col.resize(g.patch() * step * plane);
    for (std::size_t od0 = 0; od0 < g.out_d(); od0 += step) {
      const std::size_t od1 = std::min(od0 + step, g.out_d());
      const int cols = static_cast<int>((od1 - od0) * plane);
      gemm(true, false, kdim, cols, m, T(1), w, kdim, dyn + od0 * plane,
           static_cast<int>(out_sp), T(0), col.data(), cols);
      col2vol(g, col.data(), od0, od1, dxn);
    }
  }
}

template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* db) {
  const int m = static_cast<int>(g.out_channels), kdim = static_cast<int>(g.patch());
  const std::size_t out_sp = g.out_spatial(), plane = g.out_h() * g.out_w();
  std::vector<T> col;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xn = x + n * g.in_channels * g.in_spatial();
    const T* dyn = dy + n * g.out_channels * out_sp;
    if (is_pointwise(g)) {
      gemm(false, true, m, kdim, static_cast<int>(out_sp), T(1), dyn,
           static_cast<int>(out_sp), xn, static_cast<int>(out_sp), T(1), dw, kdim);
    } else {
      const std::size_t step = slab_planes(g);
      col.resize(g.patch() * step * plane);
      for (std::size_t od0 = 0; od0 < g.out_d(); od0 += step) {
        const std::size_t od1 = std::min(od0 + step, g.out_d());
        const int cols = static_cast<int>((od1 - od0) * plane);
        vol2col(g, xn, od0, od1, col.data());
        gemm(false, true, m, kdim, cols, T(1), dyn + od0 * plane, static_cast<int>(out_sp),
             col.data(), cols, T(1), dw, kdim);
      }
    }
    if (db) {
      const long channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static)
      for (long k = 0; k < channels; ++k) {
        const T* dyk = dyn + k * out_sp;
        T acc = T(0);
        for (std::size_t i = 0; i < out_sp; ++i) acc += dyk[i];
        db[k] += acc;
      }
    }
  }
}

// Transposed conv as one GEMM per sample: cols[(k, a, b, c)][s] = sum_ci w[ci][k,a,b,c] x[ci][s],
// then each input voxel s spreads to its own 2x2x2 output block.
template <typename T>
void conv_transpose3d_forward(const UpGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t sp = g.in_spatial(), rows = g.out_channels * 8;
  const std::size_t oh = 2 * g.in_h, ow = 2 * g.in_w;
  std::vector<T> cols(rows * sp);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* xn = x + n * g.in_channels * sp;
    T* yn = y + n * g.out_channels * g.out_spatial();
    gemm(true, false, static_cast<int>(rows), static_cast<int>(sp),
         static_cast<int>(g.in_channels), T(1), w, static_cast<int>(rows), xn,
         static_cast<int>(sp), T(0), cols.data(), static_cast<int>(sp));
    const long out_channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static)
    for (long k = 0; k < out_channels; ++k) {
      T* yk = yn + k * g.out_spatial();
      for (std::size_t tap = 0; tap < 8; ++tap) {
        const std::size_t a = tap >> 2, b = (tap >> 1) & 1, c = tap & 1;
        const T* src = cols.data() + (k * 8 + tap) * sp;
        for (std::size_t d = 0; d < g.in_d; ++d)
          for (std::size_t h = 0; h < g.in_h; ++h) {
            T* dst = yk + ((2 * d + a) * oh + 2 * h + b) * ow + c;
            const T* s = src + (d * g.in_h + h) * g.in_w;
            for (std::size_t wi = 0; wi < g.in_w; ++wi) dst[2 * wi] = s[wi];
          }
      }
    }
  }
}

namespace {

// cols[(k, tap)][s] = dy[k][2d+a][2h+b][2w+c]
template <typename T>
void gather_up(const UpGeometry& g, const T* dyn, T* cols) {
  const std::size_t sp = g.in_spatial(), oh = 2 * g.in_h, ow = 2 * g.in_w;
  const long out_channels = static_cast<long>(g.out_channels);
#pragma omp parallel for schedule(static)
  for (long k = 0; k < out_channels; ++k) {
    const T* dyk = dyn + k * g.out_spatial();
    for (std::size_t tap = 0; tap < 8; ++tap) {
      const std::size_t a = tap >> 2, b = (tap >> 1) & 1, c = tap & 1;
      T* dst = cols + (k * 8 + tap) * sp;
      for (std::size_t d = 0; d < g.in_d; ++d)
        for (std::size_t h = 0; h < g.in_h; ++h) {
          const T* s = dyk + ((2 * d + a) * oh + 2 * h + b) * ow + c;
          T* o = dst + (d * g.in_h + h) * g.in_w;
          for (std::size_t wi = 0; wi < g.in_w; ++wi) o[wi] = s[2 * wi];
        }
    }
  }
}

}  // namespace

template <typename T>
void conv_transpose3d_backward_input(const UpGeometry& g, const T* w, const T* dy, T* dx) {
  const std::size_t sp = g.in_spatial(), rows = g.out_channels * 8;
  std::vector<T> cols(rows * sp);
  for (std::size_t n = 0; n < g.batch; ++n) {
    gather_up(g, dy + n * g.out_channels * g.out_spatial(), cols.data());
    gemm(false, false, static_cast<int>(g.in_channels), static_cast<int>(sp),
         static_cast<int>(rows), T(1), w, static_cast<int>(rows), cols.data(),
         static_cast<int>(sp), T(1), dx + n * g.in_channels * sp, static_cast<int>(sp));
  }
}

template <typename T>
void conv_transpose3d_backward_weight(const UpGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t sp = g.in_spatial(), rows = g.out_channels * 8;
  std::vector<T> cols(rows * sp);
  for (std::size_t n = 0; n < g.batch; ++n) {
    gather_up(g, dy + n * g.out_channels * g.out_spatial(), cols.data());
    gemm(false, true, static_cast<int>(g.in_channels), static_cast<int>(rows),
         static_cast<int>(sp), T(1), x + n * g.in_channels * sp, static_cast<int>(sp),
         cols.data(), static_cast<int>(sp), T(1), dw, static_cast<int>(rows));
  }
}

template <typename T>
void maxpool3d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  const std::size_t in_sp = g.in_d * g.in_h * g.in_w, out_sp = g.out_spatial();
  const long planes = static_cast<long>(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const std::size_t in_base = p * in_sp;
    std::size_t o = p * out_sp;
    for (std::size_t od = 0; od < g.out_d(); ++od)
      for (std::size_t oh = 0; oh < g.out_h(); ++oh)
        for (std::size_t ow = 0; ow < g.out_w(); ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = in_base + ((2 * od) * g.in_h + 2 * oh) * g.in_w + 2 * ow;
          for (std::size_t a = 0; a < 2; ++a) {
            const std::size_t d = 2 * od + a;
            if (d >= g.in_d) break;
            for (std::size_t b = 0; b < 2; ++b) {
              const std::size_t h = 2 * oh + b;
              if (h >= g.in_h) break;
              for (std::size_t c = 0; c < 2; ++c) {
                const std::size_t wi = 2 * ow + c;
                if (wi >= g.in_w) break;
                const std::size_t idx = in_base + (d * g.in_h + h) * g.in_w + wi;
                if (x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                }
              }
            }
          }
          y[o] = best;
          argmax[o] = static_cast<std::uint32_t>(best_idx);
        }
  }
}

template <typename T>
void maxpool3d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy,
                        T* dx) {
  // Windows do not overlap, so each dx element has at most one writer.
  const long total = static_cast<long>(g.batch * g.channels * g.out_spatial());
#pragma omp parallel for schedule(static)
  for (long o = 0; o < total; ++o) dx[argmax[o]] += dy[o];
}

#define HASSEG_INSTANTIATE(T)                                                                   \
  template void conv3d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);       \
  template void conv3d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);          \
  template void conv3d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*, T*);     \
  template void conv_transpose3d_forward<T>(const UpGeometry&, const T*, const T*, T*);         \
  template void conv_transpose3d_backward_input<T>(const UpGeometry&, const T*, const T*, T*);  \
  template void conv_transpose3d_backward_weight<T>(const UpGeometry&, const T*, const T*, T*); \
  template void maxpool3d_forward<T>(const PoolGeometry&, const T*, T*, std::uint32_t*);        \
  template void maxpool3d_backward<T>(const PoolGeometry&, const std::uint32_t*, const T*, T*);

HASSEG_INSTANTIATE(float)
HASSEG_INSTANTIATE(double)

#undef HASSEG_INSTANTIATE

}  // namespace hasseg::kernels
