#include "hasseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hasseg/error.hpp"
#include "hasseg/kernels/conv.hpp"

namespace hasseg::ops {

namespace {

// Fixed-size chunking keeps reduction order a function of the length only,
// never of the thread count.
constexpr std::size_t kReduceChunk = 8192;

template <typename F>
double deterministic_sum(std::size_t n, F&& term) {
  const long chunks = static_cast<long>((n + kReduceChunk - 1) / kReduceChunk);
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (long c = 0; c < chunks; ++c) {
    const std::size_t lo = static_cast<std::size_t>(c) * kReduceChunk;
    const std::size_t hi = std::min(n, lo + kReduceChunk);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += term(i);
    partial[static_cast<std::size_t>(c)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
Tensor<T> finite_output(Tensor<T> out, const char* what) {
  out.check_finite(what);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding) {
  require_5d(input.shape(), "conv3d input");
  require_5d(weight.shape(), "conv3d weight");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  const std::size_t k = ws[2];
  if (ws[3] != k || ws[4] != k) throw ShapeError("conv3d: kernel must be cubic, got " + ws.str());
  if (ws[1] != xs.c()) {
    throw ShapeError("conv3d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                     std::to_string(xs.c()));
  }
  if (bias.defined() && bias.shape() != Shape{ws[0]}) {
    throw ShapeError("conv3d: bias shape " + bias.shape().str() + " does not match " +
                     std::to_string(ws[0]) + " output channels");
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv3d: stride must be >= 1 and padding >= 0");

  kernels::ConvGeometry g;
  g.batch = xs.n();
  g.in_channels = xs.c();
  g.out_channels = ws[0];
  g.in_d = xs.d();
  g.in_h = xs.h();
  g.in_w = xs.w();
  g.kernel = k;
  g.stride = static_cast<std::size_t>(stride);
  g.padding = static_cast<std::size_t>(padding);
  for (std::size_t extent : {xs.d(), xs.h(), xs.w()}) {
    const std::size_t padded = extent + 2 * g.padding;
    if (padded < k || (padded - k) % g.stride != 0) {
      throw ShapeError("conv3d: non-integral output size for input " + xs.str() + ", kernel " +
                       std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                       std::to_string(padding));
    }
  }

  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_d(), g.out_h(), g.out_w()});
  kernels::conv3d_forward(g, input.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data().data());
  out = finite_output(std::move(out), "conv3d");

  if (tape.wants({&input, &weight, &bias})) {
    tape.record("conv3d", {input, weight, bias}, out, [=, input = input, weight = weight, bias = bias]() mutable {
      const T* dy = out.grad().data();
      if (input.requires_grad()) {
        kernels::conv3d_backward_input(g, weight.data().data(), dy, input.ensure_grad().data());
      }
      if (weight.requires_grad() || (bias.defined() && bias.requires_grad())) {
        std::vector<T> scratch_w, scratch_b;
        T* dw = nullptr;
        if (weight.requires_grad()) {
          dw = weight.ensure_grad().data();
        } else {
          scratch_w.assign(weight.numel(), T(0));
          dw = scratch_w.data();
        }
        T* db = nullptr;
        if (bias.defined() && bias.requires_grad()) db = bias.ensure_grad().data();
        kernels::conv3d_backward_weight(g, input.data().data(), dy, dw, db);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight) {
  require_5d(input.shape(), "conv_transpose3d input");
  require_5d(weight.shape(), "conv_transpose3d weight");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws[0] != xs.c() || ws[2] != 2 || ws[3] != 2 || ws[4] != 2) {
    throw ShapeError("conv_transpose3d: weight " + ws.str() + " incompatible with input " + xs.str() +
                     " (expected C_in x C_out x 2 x 2 x 2)");
  }
  kernels::UpGeometry g;
  g.batch = xs.n();
  g.in_channels = xs.c();
  g.out_channels = ws[1];
  g.in_d = xs.d();
  g.in_h = xs.h();
  g.in_w = xs.w();

  Tensor<T> out(Shape{g.batch, g.out_channels, 2 * g.in_d, 2 * g.in_h, 2 * g.in_w});
  kernels::conv_transpose3d_forward(g, input.data().data(), weight.data().data(), out.data().data());
  out = finite_output(std::move(out), "conv_transpose3d");

  if (tape.wants({&input, &weight})) {
    tape.record("conv_transpose3d", {input, weight}, out, [=, input = input, weight = weight]() mutable {
      const T* dy = out.grad().data();
      if (input.requires_grad()) {
        kernels::conv_transpose3d_backward_input(g, weight.data().data(), dy,
                                                 input.ensure_grad().data());
      }
      if (weight.requires_grad()) {
        kernels::conv_transpose3d_backward_weight(g, input.data().data(), dy,
                                                  weight.ensure_grad().data());
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& input) {
  require_5d(input.shape(), "maxpool3d");
  const Shape& xs = input.shape();
  kernels::PoolGeometry g;
  g.batch = xs.n();
  g.channels = xs.c();
  g.in_d = xs.d();
  g.in_h = xs.h();
  g.in_w = xs.w();
  Tensor<T> out(Shape{g.batch, g.channels, g.out_d(), g.out_h(), g.out_w()});
  std::vector<std::uint32_t> argmax(out.numel());
  kernels::maxpool3d_forward(g, input.data().data(), out.data().data(), argmax.data());

  if (tape.wants({&input})) {
    tape.record("maxpool3d", {input}, out, [=, input = input, argmax = std::move(argmax)]() mutable {
      kernels::maxpool3d_backward(g, argmax.data(), out.grad().data(), input.ensure_grad().data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm3d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& stats, Mode mode, T eps,
                      T momentum) {
  require_5d(input.shape(), "batchnorm3d");
  const Shape& xs = input.shape();
  const std::size_t channels = xs.c(), sp = xs.spatial(), batch = xs.n();
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("batchnorm3d: gamma/beta must have shape [" + std::to_string(channels) + "]");
  }
  if (mode == Mode::Eval && !stats.ready) {
    throw ValueError("batchnorm3d: eval mode requested before any train step (running stats unset)");
  }
  if (stats.running_mean.size() != channels) {
    stats.running_mean.assign(channels, T(0));
    stats.running_var.assign(channels, T(1));
    stats.ready = false;
  }

  const std::size_t count = batch * sp;
  std::vector<T> mean(channels), inv_std(channels);
  const T* x = input.data().data();

  if (mode == Mode::Train) {
    std::vector<T> var(channels);
    const long nc = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
    for (long c = 0; c < nc; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* xc = x + (n * channels + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) s += xc[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* xc = x + (n * channels + c) * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          const double dlt = xc[i] - mu;
          ss += dlt * dlt;
        }
      }
      const double v = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(v);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    }
    for (std::size_t c = 0; c < channels; ++c) {
      if (stats.ready) {
        stats.running_mean[c] = momentum * stats.running_mean[c] + (T(1) - momentum) * mean[c];
        stats.running_var[c] = momentum * stats.running_var[c] + (T(1) - momentum) * var[c];
      } else {
        stats.running_mean[c] = mean[c];
        stats.running_var[c] = var[c];
      }
    }
    stats.ready = true;
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[c]) +
                                                  static_cast<double>(eps)));
    }
  }

  Tensor<T> out(xs);
  {
    T* y = out.data().data();
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();
    const long planes = static_cast<long>(batch * channels);
#pragma omp parallel for schedule(static)
    for (long p = 0; p < planes; ++p) {
      const std::size_t c = static_cast<std::size_t>(p) % channels;
      const T scale_c = gm[c] * inv_std[c];
      const T shift_c = bt[c] - mean[c] * scale_c;
      const T* xc = x + p * sp;
      T* yc = y + p * sp;
      for (std::size_t i = 0; i < sp; ++i) yc[i] = xc[i] * scale_c + shift_c;
    }
  }
  out = finite_output(std::move(out), "batchnorm3d");

  if (tape.wants({&input, &gamma, &beta})) {
    tape.record("batchnorm3d", {input, gamma, beta}, out,
                [=, input = input, gamma = gamma, beta = beta, mean = std::move(mean), inv_std = std::move(inv_std)]() mutable {
                  const T* dy = out.grad().data();
                  const T* xv = input.data().data();
                  const T* gm = gamma.data().data();
                  std::vector<double> sum_dy(channels), sum_dy_xhat(channels);
                  const long nc = static_cast<long>(channels);
#pragma omp parallel for schedule(static)
                  for (long c = 0; c < nc; ++c) {
                    double a = 0.0, b = 0.0;
                    for (std::size_t n = 0; n < batch; ++n) {
                      const std::size_t off = (n * channels + c) * sp;
                      for (std::size_t i = 0; i < sp; ++i) {
                        const double xhat = (xv[off + i] - mean[c]) * inv_std[c];
                        a += dy[off + i];
                        b += dy[off + i] * xhat;
                      }
                    }
                    sum_dy[c] = a;
                    sum_dy_xhat[c] = b;
                  }
                  if (gamma.requires_grad()) {
                    auto dg = gamma.ensure_grad();
                    for (std::size_t c = 0; c < channels; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
                  }
                  if (beta.requires_grad()) {
                    auto db = beta.ensure_grad();
                    for (std::size_t c = 0; c < channels; ++c) db[c] += static_cast<T>(sum_dy[c]);
                  }
                  if (!input.requires_grad()) return;
                  T* dx = input.ensure_grad().data();
                  const double inv_count = 1.0 / static_cast<double>(count);
                  const long planes = static_cast<long>(batch * channels);
#pragma omp parallel for schedule(static)
                  for (long p = 0; p < planes; ++p) {
                    const std::size_t c = static_cast<std::size_t>(p) % channels;
                    const std::size_t off = static_cast<std::size_t>(p) * sp;
                    const double k = static_cast<double>(gm[c]) * inv_std[c];
                    if (mode == Mode::Eval) {
                      for (std::size_t i = 0; i < sp; ++i) dx[off + i] += static_cast<T>(k * dy[off + i]);
                      continue;
                    }
                    const double mdy = sum_dy[c] * inv_count, mdyx = sum_dy_xhat[c] * inv_count;
                    for (std::size_t i = 0; i < sp; ++i) {
                      const double xhat = (xv[off + i] - mean[c]) * inv_std[c];
                      dx[off + i] += static_cast<T>(k * (dy[off + i] - mdy - xhat * mdyx));
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.data().data();
  T* y = out.data().data();
  const long n = static_cast<long>(out.numel());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);

  if (tape.wants({&input})) {
    tape.record("relu", {input}, out, [=, input = input]() mutable {
      const T* yv = out.data().data();
      const T* dy = out.grad().data();
      T* dx = input.ensure_grad().data();
      const long count = static_cast<long>(out.numel());
#pragma omp parallel for schedule(static)
      for (long i = 0; i < count; ++i) {
        if (yv[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_channels(Tape<T>& tape, const Tensor<T>& input) {
  require_5d(input.shape(), "softmax_channels");
  const Shape& xs = input.shape();
  const std::size_t channels = xs.c(), sp = xs.spatial();
  if (channels == 0) throw ShapeError("softmax_channels: need at least one channel");
  Tensor<T> out(xs);
  const T* x = input.data().data();
  T* y = out.data().data();
  const long positions = static_cast<long>(xs.n() * sp);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < positions; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / sp, s = static_cast<std::size_t>(p) % sp;
    const std::size_t base = n * channels * sp + s;
    T mx = x[base];
    for (std::size_t k = 1; k < channels; ++k) mx = std::max(mx, x[base + k * sp]);
    T total = T(0);
    for (std::size_t k = 0; k < channels; ++k) {
      const T e = std::exp(x[base + k * sp] - mx);
      y[base + k * sp] = e;
      total += e;
    }
    const T inv = T(1) / total;
    for (std::size_t k = 0; k < channels; ++k) y[base + k * sp] *= inv;
  }
  out = finite_output(std::move(out), "softmax_channels");

  if (tape.wants({&input})) {
    tape.record("softmax_channels", {input}, out, [=, input = input]() mutable {
      const T* yv = out.data().data();
      const T* dy = out.grad().data();
      T* dx = input.ensure_grad().data();
      const long count = static_cast<long>(out.shape().n() * sp);
#pragma omp parallel for schedule(static)
      for (long p = 0; p < count; ++p) {
        const std::size_t n = static_cast<std::size_t>(p) / sp, s = static_cast<std::size_t>(p) % sp;
        const std::size_t base = n * channels * sp + s;
        T dot = T(0);
        for (std::size_t k = 0; k < channels; ++k) dot += dy[base + k * sp] * yv[base + k * sp];
        for (std::size_t k = 0; k < channels; ++k) {
          dx[base + k * sp] += yv[base + k * sp] * (dy[base + k * sp] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_5d(a.shape(), "concat_channels");
  require_5d(b.shape(), "concat_channels");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n() != bs.n() || as.d() != bs.d() || as.h() != bs.h() || as.w() != bs.w()) {
    throw ShapeError("concat_channels: spatial mismatch " + as.str() + " vs " + bs.str());
  }
  const std::size_t sp = as.spatial(), ca = as.c(), cb = bs.c();
  Tensor<T> out(Shape{as.n(), ca + cb, as.d(), as.h(), as.w()});
  T* y = out.data().data();
  for (std::size_t n = 0; n < as.n(); ++n) {
    std::copy_n(a.data().data() + n * ca * sp, ca * sp, y + n * (ca + cb) * sp);
    std::copy_n(b.data().data() + n * cb * sp, cb * sp, y + (n * (ca + cb) + ca) * sp);
  }
  if (tape.wants({&a, &b})) {
    tape.record("concat_channels", {a, b}, out, [=, a = a, b = b]() mutable {
      const T* dy = out.grad().data();
      for (std::size_t n = 0; n < as.n(); ++n) {
        if (a.requires_grad()) {
          T* da = a.ensure_grad().data() + n * ca * sp;
          const T* src = dy + n * (ca + cb) * sp;
          for (std::size_t i = 0; i < ca * sp; ++i) da[i] += src[i];
        }
        if (b.requires_grad()) {
          T* dbv = b.ensure_grad().data() + n * cb * sp;
          const T* src = dy + (n * (ca + cb) + ca) * sp;
          for (std::size_t i = 0; i < cb * sp; ++i) dbv[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  const T* av = a.data().data();
  const T* bv = b.data().data();
  T* y = out.data().data();
  const long n = static_cast<long>(out.numel());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) y[i] = av[i] + bv[i];
  out = finite_output(std::move(out), "add");
  if (tape.wants({&a, &b})) {
    tape.record("add", {a, b}, out, [=, a = a, b = b]() mutable {
      const auto dy = out.grad();
      for (Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  const T* av = a.data().data();
  const T* bv = b.data().data();
  T* y = out.data().data();
  const long n = static_cast<long>(out.numel());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) y[i] = av[i] * bv[i];
  out = finite_output(std::move(out), "mul");
  if (tape.wants({&a, &b})) {
    tape.record("mul", {a, b}, out, [=, a = a, b = b]() mutable {
      const T* dy = out.grad().data();
      const T* avv = a.data().data();
      const T* bvv = b.data().data();
      const long count = static_cast<long>(out.numel());
      if (a.requires_grad()) {
        T* da = a.ensure_grad().data();
#pragma omp parallel for schedule(static)
        for (long i = 0; i < count; ++i) da[i] += dy[i] * bvv[i];
      }
      if (b.requires_grad()) {
        T* db = b.ensure_grad().data();
#pragma omp parallel for schedule(static)
        for (long i = 0; i < count; ++i) db[i] += dy[i] * avv[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x[i];
  out = finite_output(std::move(out), "scale");
  if (tape.wants({&input})) {
    tape.record("scale", {input}, out, [=, input = input]() mutable {
      auto dy = out.grad();
      auto dx = input.ensure_grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input) {
  const T* x = input.data().data();
  const double total = deterministic_sum(input.numel(), [x](std::size_t i) { return static_cast<double>(x[i]); });
  Tensor<T> out = finite_output(Tensor<T>::scalar(static_cast<T>(total)), "sum");
  if (tape.wants({&input})) {
    tape.record("sum", {input}, out, [=, input = input]() mutable {
      const T g = out.grad()[0];
      for (T& v : input.ensure_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_squares(Tape<T>& tape, const Tensor<T>& input) {
  const T* x = input.data().data();
  const double total = deterministic_sum(input.numel(), [x](std::size_t i) {
    return static_cast<double>(x[i]) * static_cast<double>(x[i]);
  });
  Tensor<T> out = finite_output(Tensor<T>::scalar(static_cast<T>(total)), "sum_squares");
  if (tape.wants({&input})) {
    tape.record("sum_squares", {input}, out, [=, input = input]() mutable {
      const T g = out.grad()[0];
      auto dx = input.ensure_grad();
      auto xv = input.data();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T(2) * xv[i] * g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::uint8_t> labels) {
  require_5d(logits.shape(), "cross_entropy");
  const Shape& zs = logits.shape();
  const std::size_t classes = zs.c(), sp = zs.spatial(), voxels = zs.n() * sp;
  if (labels.size() != voxels) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + zs.str());
  }
  for (std::uint8_t l : labels) {
    if (l >= classes) {
      throw ValueError("cross_entropy: label value " + std::to_string(l) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  const T* z = logits.data().data();
  auto nll = [&](std::size_t v) {
    const std::size_t n = v / sp, s = v % sp, base = n * classes * sp + s;
    double mx = z[base];
    for (std::size_t k = 1; k < classes; ++k) mx = std::max<double>(mx, z[base + k * sp]);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(z[base + k * sp] - mx);
    return mx + std::log(total) - static_cast<double>(z[base + labels[v] * sp]);
  };
  const double loss = deterministic_sum(voxels, nll) / static_cast<double>(voxels);
  Tensor<T> out = finite_output(Tensor<T>::scalar(static_cast<T>(loss)), "cross_entropy");

  if (tape.wants({&logits})) {
    std::vector<std::uint8_t> saved(labels.begin(), labels.end());
    tape.record("cross_entropy", {logits}, out, [=, logits = logits, saved = std::move(saved)]() mutable {
      const T g = out.grad()[0] / static_cast<T>(voxels);
      const T* zv = logits.data().data();
      T* dz = logits.ensure_grad().data();
      const long count = static_cast<long>(voxels);
#pragma omp parallel for schedule(static)
      for (long v = 0; v < count; ++v) {
        const std::size_t n = static_cast<std::size_t>(v) / sp, s = static_cast<std::size_t>(v) % sp;
        const std::size_t base = n * classes * sp + s;
        T mx = zv[base];
        for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, zv[base + k * sp]);
        T total = T(0);
        for (std::size_t k = 0; k < classes; ++k) total += std::exp(zv[base + k * sp] - mx);
        for (std::size_t k = 0; k < classes; ++k) {
          const T p = std::exp(zv[base + k * sp] - mx) / total;
          dz[base + k * sp] += g * (p - (k == saved[static_cast<std::size_t>(v)] ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

#define HASSEG_INSTANTIATE(T)                                                                    \
  template Tensor<T> conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                            int);                                                                \
  template Tensor<T> conv_transpose3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> maxpool3d(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> batchnorm3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                 BatchNormStats<T>&, Mode, T, T);                                \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> softmax_channels(Tape<T>&, const Tensor<T>&);                               \
  template Tensor<T> concat_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                       \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                            \
  template Tensor<T> sum_squares(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const std::uint8_t>);

HASSEG_INSTANTIATE(float)
HASSEG_INSTANTIATE(double)

#undef HASSEG_INSTANTIATE

}  // namespace hasseg::ops
