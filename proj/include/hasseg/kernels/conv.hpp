#pragma once

#include <cstddef>
#include <cstdint>

// Low-level volumetric kernels on raw NCDHW buffers.
//
// hasseg::kernels holds the OpenMP-parallel implementations used by the ops;
// hasseg::reference holds straightforward serial loops with identical
// signatures. The reference set exists for tests and benchmarks only.
//
// All backward kernels accumulate (+=) into their outputs.

namespace hasseg::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_d = 1, in_h = 1, in_w = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_d() const { return (in_d + 2 * padding - kernel) / stride + 1; }
  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::size_t in_spatial() const { return in_d * in_h * in_w; }
  std::size_t out_spatial() const { return out_d() * out_h() * out_w(); }
  std::size_t patch() const { return in_channels * kernel * kernel * kernel; }
};

/// Geometry of the stride-2, kernel-2 transposed convolution.
struct UpGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_d = 1, in_h = 1, in_w = 1;

  std::size_t in_spatial() const { return in_d * in_h * in_w; }
  std::size_t out_spatial() const { return 8 * in_spatial(); }
};

struct PoolGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t in_d = 1, in_h = 1, in_w = 1;

  std::size_t out_d() const { return (in_d + 1) / 2; }
  std::size_t out_h() const { return (in_h + 1) / 2; }
  std::size_t out_w() const { return (in_w + 1) / 2; }
  std::size_t out_spatial() const { return out_d() * out_h() * out_w(); }
};

// y = conv(x, w) + b; b may be null. y is overwritten.
template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y);
template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx);
// db may be null.
template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* db);

template <typename T>
void conv_transpose3d_forward(const UpGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv_transpose3d_backward_input(const UpGeometry& g, const T* w, const T* dy, T* dx);
template <typename T>
void conv_transpose3d_backward_weight(const UpGeometry& g, const T* x, const T* dy, T* dw);

// argmax receives, per output voxel, the flat input index of the selected element.
template <typename T>
void maxpool3d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax);
template <typename T>
void maxpool3d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy,
                        T* dx);

}  // namespace hasseg::kernels

namespace hasseg::reference {

using kernels::ConvGeometry;
using kernels::PoolGeometry;
using kernels::UpGeometry;

template <typename T>
void conv3d_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* y);
template <typename T>
void conv3d_backward_input(const ConvGeometry& g, const T* w, const T* dy, T* dx);
template <typename T>
void conv3d_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* db);

template <typename T>
void conv_transpose3d_forward(const UpGeometry& g, const T* x, const T* w, T* y);
template <typename T>
void conv_transpose3d_backward_input(const UpGeometry& g, const T* w, const T* dy, T* dx);
template <typename T>
void conv_transpose3d_backward_weight(const UpGeometry& g, const T* x, const T* dy, T* dw);

template <typename T>
void maxpool3d_forward(const PoolGeometry& g, const T* x, T* y, std::uint32_t* argmax);
template <typename T>
void maxpool3d_backward(const PoolGeometry& g, const std::uint32_t* argmax, const T* dy,
                        T* dx);

}  // namespace hasseg::reference
