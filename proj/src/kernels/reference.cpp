// Serial reference kernels: direct loops, no blocking, no BLAS, no threads.

#include <limits>

#include "hasseg/kernels/conv.hpp"

namespace hasseg::reference {

namespace {

// Maps output coordinate + tap to input coordinate; false if it falls in padding.
bool source_index(std::size_t o, std::size_t tap, const ConvGeometry& g, std::size_t extent,
                  std::size_t& i) {
  const long v = static_cast<long>(o * g.stride + tap) - static_cast<long>(g.padding);
  if (v < 0 || v >= static_cast<long>(extent)) return false;
  i = static_cast<std::size_t>(v);
  return true;
}

}  // namespace

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y) {
  const std::size_t k = g.kernel, od = g.out_d(), oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            T acc = b ? b[co] : T(0);
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kd = 0; kd < k; ++kd)
                for (std::size_t kh = 0; kh < k; ++kh)
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    std::size_t iz, ir, ic;
                    if (!source_index(z, kd, g, g.in_d, iz) || !source_index(r, kh, g, g.in_h, ir) ||
                        !source_index(c, kw, g, g.in_w, ic))
                      continue;
                    acc += x[(((n * g.in_channels + ci) * g.in_d + iz) * g.in_h + ir) * g.in_w + ic] *
                           w[(((co * g.in_channels + ci) * k + kd) * k + kh) * k + kw];
                  }
            y[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c] = acc;
          }
}

template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx) {
  const std::size_t k = g.kernel, od = g.out_d(), oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            const T g_out = dy[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kd = 0; kd < k; ++kd)
                for (std::size_t kh = 0; kh < k; ++kh)
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    std::size_t iz, ir, ic;
                    if (!source_index(z, kd, g, g.in_d, iz) || !source_index(r, kh, g, g.in_h, ir) ||
                        !source_index(c, kw, g, g.in_w, ic))
                      continue;
                    dx[(((n * g.in_channels + ci) * g.in_d + iz) * g.in_h + ir) * g.in_w + ic] +=
                        g_out * w[(((co * g.in_channels + ci) * k + kd) * k + kh) * k + kw];
                  }
          }
}

template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* db) {
  const std::size_t k = g.kernel, od = g.out_d(), oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            const T g_out = dy[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c];
            if (db) db[co] += g_out;
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              for (std::size_t kd = 0; kd < k; ++kd)
                for (std::size_t kh = 0; kh < k; ++kh)
                  for (std::size_t kw = 0; kw < k; ++kw) {
                    std::size_t iz, ir, ic;
                    if (!source_index(z, kd, g, g.in_d, iz) || !source_index(r, kh, g, g.in_h, ir) ||
                        !source_index(c, kw, g, g.in_w, ic))
                      continue;
                    dw[(((co * g.in_channels + ci) * k + kd) * k + kh) * k + kw] +=
                        g_out *
                        x[(((n * g.in_channels + ci) * g.in_d + iz) * g.in_h + ir) * g.in_w + ic];
                  }
          }
}

// y[n][co][2d+a][2h+b][2w+c] = sum_ci x[n][ci][d][h][w] * w[ci][co][a][b][c]
template <typename T>
void conv_transpose3d_forward(const UpGeometry& g, const T* x, const T* w, T* y) {
  const std::size_t od = 2 * g.in_d, oh = 2 * g.in_h, ow = 2 * g.in_w;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            T acc = T(0);
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              acc += x[(((n * g.in_channels + ci) * g.in_d + z / 2) * g.in_h + r / 2) * g.in_w + c / 2] *
                     w[(((ci * g.out_channels + co) * 2 + z % 2) * 2 + r % 2) * 2 + c % 2];
            y[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c] = acc;
          }
}

template <typename T>
void conv_transpose3d_backward_input(const UpGeometry& g, const T* w, const T* dy, T* dx) {
  const std::size_t od = 2 * g.in_d, oh = 2 * g.in_h, ow = 2 * g.in_w;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            const T g_out = dy[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              dx[(((n * g.in_channels + ci) * g.in_d + z / 2) * g.in_h + r / 2) * g.in_w + c / 2] +=
                  g_out * w[(((ci * g.out_channels + co) * 2 + z % 2) * 2 + r % 2) * 2 + c % 2];
          }
}

template <typename T>
void conv_transpose3d_backward_weight(const UpGeometry& g, const T* x, const T* dy, T* dw) {
  const std::size_t od = 2 * g.in_d, oh = 2 * g.in_h, ow = 2 * g.in_w;
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c) {
            const T g_out = dy[(((n * g.out_channels + co) * od + z) * oh + r) * ow + c];
            for (std::size_t ci = 0; ci < g.in_channels; ++ci)
              dw[(((ci * g.out_channels + co) * 2 + z % 2) * 2 + r % 2) * 2 + c % 2] +=
                  g_out *
                  x[(((n * g.in_channels + ci) * g.in_d + z / 2) * g.in_h + r / 2) * g.in_w + c / 2];
          }
}

template <typename T>
void maxpool3d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax) {
  std::size_t o = 0;
  for (std::size_t p = 0; p < g.batch * g.channels; ++p)
    for (std::size_t z = 0; z < g.out_d(); ++z)
      for (std::size_t r = 0; r < g.out_h(); ++r)
        for (std::size_t c = 0; c < g.out_w(); ++c, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t e = 0; e < 2; ++e) {
                const std::size_t zi = 2 * z + a, ri = 2 * r + b, ci = 2 * c + e;
                if (zi >= g.in_d || ri >= g.in_h || ci >= g.in_w) continue;
                const std::size_t idx = ((p * g.in_d + zi) * g.in_h + ri) * g.in_w + ci;
                if (first || x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                  first = false;
                }
              }
          y[o] = best;
          argmax[o] = static_cast<std::uint32_t>(best_idx);
        }
}

template <typename T>
void maxpool3d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy,
                        T* dx) {
  const std::size_t total = g.batch * g.channels * g.out_spatial();
  for (std::size_t o = 0; o < total; ++o) dx[argmax[o]] += dy[o];
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

}  // namespace hasseg::reference
