#include "freeup/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace freeup::kernels {

namespace {

int g_threads = 0;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void check_conv_shapes(const Tensor4& in, const Tensor4& out, std::size_t weight_len,
                       const ConvParams& p) {
  if (in.n != out.n) throw ShapeError("conv batch mismatch: " + shape_string(in) + " vs " + shape_string(out));
  if (conv_out_extent(in.h, p) != out.h || conv_out_extent(in.w, p) != out.w) {
    throw ShapeError("conv spatial mismatch: " + shape_string(in) + " -> " + shape_string(out));
  }
  if (weight_len != static_cast<std::size_t>(out.c) * in.c * p.kernel * p.kernel) {
    throw ShapeError("conv weight length mismatch for " + shape_string(in) + " -> " + shape_string(out));
  }
}

// col[(ic*k*k + ky*k + kx)][oy*ow + ox]
void im2col(const float* img, int c, int h, int w, int oh, int ow, const ConvParams& p, float* col) {
  const int k = p.kernel;
  const int npix = oh * ow;
  for (int ic = 0; ic < c; ++ic) {
    const float* src = img + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + static_cast<std::size_t>((ic * k + ky) * k + kx) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * p.stride - p.pad + ky;
          float* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * p.stride - p.pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[iy * w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int c, int h, int w, int oh, int ow, const ConvParams& p, float* img) {
  const int k = p.kernel;
  const int npix = oh * ow;
  for (int ic = 0; ic < c; ++ic) {
    float* dst = img + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + static_cast<std::size_t>((ic * k + ky) * k + kx) * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * p.stride - p.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * p.stride - p.pad + kx;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

int current_thread() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) { g_threads = std::max(0, n); }

int conv_out_extent(int in, const ConvParams& p) { return (in + 2 * p.pad - p.kernel) / p.stride + 1; }

void conv2d_forward(const Tensor4& in, std::span<const float> weight, std::span<const float> bias,
                    Tensor4& out, const ConvParams& p) {
  check_conv_shapes(in, out, weight.size(), p);
  const int kk = in.c * p.kernel * p.kernel;
  const int npix = out.h * out.w;
  const int nthreads = thread_count();
#pragma omp parallel num_threads(nthreads)
  {
    std::vector<float> col(static_cast<std::size_t>(kk) * npix);
#pragma omp for schedule(static)
    for (int n = 0; n < in.n; ++n) {
      im2col(in.image(n), in.c, in.h, in.w, out.h, out.w, p, col.data());
      float* dst = out.image(n);
      for (int co = 0; co < out.c; ++co) {
        float* orow = dst + static_cast<std::size_t>(co) * npix;
        const float b = bias.empty() ? 0.0f : bias[co];
        std::fill(orow, orow + npix, b);
        const float* wrow = weight.data() + static_cast<std::size_t>(co) * kk;
        for (int k = 0; k < kk; ++k) {
          const float a = wrow[k];
          const float* crow = col.data() + static_cast<std::size_t>(k) * npix;
#pragma omp simd
          for (int i = 0; i < npix; ++i) orow[i] += a * crow[i];
        }
      }
    }
  }
}

void conv2d_backward_input(const Tensor4& dout, std::span<const float> weight, Tensor4& din,
                           const ConvParams& p) {
  check_conv_shapes(din, dout, weight.size(), p);
  const int kk = din.c * p.kernel * p.kernel;
  const int npix = dout.h * dout.w;
  const int nthreads = thread_count();
#pragma omp parallel num_threads(nthreads)
  {
    std::vector<float> col(static_cast<std::size_t>(kk) * npix);
#pragma omp for schedule(static)
    for (int n = 0; n < dout.n; ++n) {
      std::fill(col.begin(), col.end(), 0.0f);
      const float* g = dout.image(n);
      for (int k = 0; k < kk; ++k) {
        float* crow = col.data() + static_cast<std::size_t>(k) * npix;
        for (int co = 0; co < dout.c; ++co) {
          const float a = weight[static_cast<std::size_t>(co) * kk + k];
          const float* grow = g + static_cast<std::size_t>(co) * npix;
#pragma omp simd
          for (int i = 0; i < npix; ++i) crow[i] += a * grow[i];
        }
      }
      float* dst = din.image(n);
      std::fill(dst, dst + din.image_size(), 0.0f);
      col2im_add(col.data(), din.c, din.h, din.w, dout.h, dout.w, p, dst);
    }
  }
}

void conv2d_backward_weight(const Tensor4& in, const Tensor4& dout, std::span<float> dweight,
                            std::span<float> dbias, const ConvParams& p) {
  check_conv_shapes(in, dout, dweight.size(), p);
  const int kk = in.c * p.kernel * p.kernel;
  const int npix = dout.h * dout.w;
  const int nthreads = std::max(1, std::min(thread_count(), in.n));
  // Per-thread partial sums, reduced in thread order so results do not depend
  // on scheduling for a fixed thread count.
  std::vector<std::vector<float>> partial_w(nthreads, std::vector<float>(dweight.size(), 0.0f));
  std::vector<std::vector<float>> partial_b(nthreads, std::vector<float>(dout.c, 0.0f));
#pragma omp parallel num_threads(nthreads)
  {
    const int tid = current_thread();
    std::vector<float> col(static_cast<std::size_t>(kk) * npix);
    auto& pw = partial_w[tid];
    auto& pb = partial_b[tid];
#pragma omp for schedule(static)
    for (int n = 0; n < in.n; ++n) {
      im2col(in.image(n), in.c, in.h, in.w, dout.h, dout.w, p, col.data());
      const float* g = dout.image(n);
      for (int co = 0; co < dout.c; ++co) {
        const float* grow = g + static_cast<std::size_t>(co) * npix;
        float bsum = 0.0f;
#pragma omp simd reduction(+ : bsum)
        for (int i = 0; i < npix; ++i) bsum += grow[i];
        pb[co] += bsum;
        float* wrow = pw.data() + static_cast<std::size_t>(co) * kk;
        for (int k = 0; k < kk; ++k) {
          const float* crow = col.data() + static_cast<std::size_t>(k) * npix;
          float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
          for (int i = 0; i < npix; ++i) acc += grow[i] * crow[i];
          wrow[k] += acc;
        }
      }
    }
  }
  for (int t = 0; t < nthreads; ++t) {
    for (std::size_t i = 0; i < dweight.size(); ++i) dweight[i] += partial_w[t][i];
    if (!dbias.empty()) {
      for (int co = 0; co < dout.c; ++co) dbias[co] += partial_b[t][co];
    }
  }
}

void fft1d(std::span<Complex> data, bool inverse) {
  const int n = static_cast<int>(data.size());
  if (n <= 1) return;
  if (!is_pow2(n)) {
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<Complex> out(n);
    for (int k = 0; k < n; ++k) {
      Complex acc{};
      for (int t = 0; t < n; ++t) {
        const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * t) % n) / n;
        acc += data[t] * Complex(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
    std::copy(out.begin(), out.end(), data.begin());
    return;
  }
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  // Twiddles come from a per-thread table evaluated with cos/sin directly,
  // which keeps round-off at machine precision.
  thread_local std::vector<Complex> twiddle;
  thread_local int twiddle_n = 0;
  if (twiddle_n != n) {
    twiddle.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * k / n;
      twiddle[k] = Complex(std::cos(ang), std::sin(ang));
    }
    twiddle_n = n;
  }
  for (int len = 2; len <= n; len <<= 1) {
    const int half = len / 2;
    const int step = n / len;
    for (int i = 0; i < n; i += len) {
      for (int k = 0; k < half; ++k) {
        const Complex wk = inverse ? std::conj(twiddle[k * step]) : twiddle[k * step];
        const Complex u = data[i + k];
        const Complex v = data[i + k + half] * wk;
        data[i + k] = u + v;
        data[i + k + half] = u - v;
      }
    }
  }
}

void fft2d(std::span<Complex> plane, int rows, int cols, bool inverse) {
  if (plane.size() != static_cast<std::size_t>(rows) * cols) throw ShapeError("fft2d: plane size mismatch");
  for (int r = 0; r < rows; ++r) fft1d(plane.subspan(static_cast<std::size_t>(r) * cols, cols), inverse);
  std::vector<Complex> column(rows);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) column[r] = plane[static_cast<std::size_t>(r) * cols + c];
    fft1d(column, inverse);
    for (int r = 0; r < rows; ++r) plane[static_cast<std::size_t>(r) * cols + c] = column[r];
  }
}

void fft2d_planes(std::span<Complex> planes, const Shape3& shape, bool inverse) {
  if (planes.size() != shape.size()) throw ShapeError("fft2d_planes: size mismatch with " + to_string(shape));
  const std::size_t ps = shape.plane_size();
  const int nthreads = thread_count();
#pragma omp parallel for schedule(static) num_threads(nthreads) if (shape.planes > 1)
  for (int p = 0; p < shape.planes; ++p) {
    fft2d(planes.subspan(p * ps, ps), shape.rows, shape.cols, inverse);
  }
}

namespace reference {

void conv2d_forward(const Tensor4& in, std::span<const float> weight, std::span<const float> bias,
                    Tensor4& out, const ConvParams& p) {
  check_conv_shapes(in, out, weight.size(), p);
  const int k = p.kernel;
  for (int n = 0; n < in.n; ++n)
    for (int co = 0; co < out.c; ++co)
      for (int oy = 0; oy < out.h; ++oy)
        for (int ox = 0; ox < out.w; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < in.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * p.stride - p.pad + ky;
                const int ix = ox * p.stride - p.pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(weight[((co * in.c + ci) * k + ky) * k + kx]) *
                       in.plane(n, ci)[iy * in.w + ix];
              }
          out.plane(n, co)[oy * out.w + ox] = static_cast<float>(acc);
        }
}

void conv2d_backward_input(const Tensor4& dout, std::span<const float> weight, Tensor4& din,
                           const ConvParams& p) {
  check_conv_shapes(din, dout, weight.size(), p);
  const int k = p.kernel;
  std::vector<double> acc(din.size(), 0.0);
  for (int n = 0; n < dout.n; ++n)
    for (int co = 0; co < dout.c; ++co)
      for (int oy = 0; oy < dout.h; ++oy)
        for (int ox = 0; ox < dout.w; ++ox) {
          const double g = dout.plane(n, co)[oy * dout.w + ox];
          for (int ci = 0; ci < din.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * p.stride - p.pad + ky;
                const int ix = ox * p.stride - p.pad + kx;
                if (iy < 0 || iy >= din.h || ix < 0 || ix >= din.w) continue;
                acc[((static_cast<std::size_t>(n) * din.c + ci) * din.h + iy) * din.w + ix] +=
                    g * weight[((co * din.c + ci) * k + ky) * k + kx];
              }
        }
  for (std::size_t i = 0; i < acc.size(); ++i) din.data[i] = static_cast<float>(acc[i]);
}

void conv2d_backward_weight(const Tensor4& in, const Tensor4& dout, std::span<float> dweight,
                            std::span<float> dbias, const ConvParams& p) {
  check_conv_shapes(in, dout, dweight.size(), p);
  const int k = p.kernel;
  for (int co = 0; co < dout.c; ++co) {
    if (!dbias.empty()) {
      double b = 0.0;
      for (int n = 0; n < dout.n; ++n)
        for (std::size_t i = 0; i < dout.plane_size(); ++i) b += dout.plane(n, co)[i];
      dbias[co] += static_cast<float>(b);
    }
    for (int ci = 0; ci < in.c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (int n = 0; n < in.n; ++n)
            for (int oy = 0; oy < dout.h; ++oy)
              for (int ox = 0; ox < dout.w; ++ox) {
                const int iy = oy * p.stride - p.pad + ky;
                const int ix = ox * p.stride - p.pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(dout.plane(n, co)[oy * dout.w + ox]) * in.plane(n, ci)[iy * in.w + ix];
              }
          dweight[((co * in.c + ci) * k + ky) * k + kx] += static_cast<float>(acc);
        }
  }
}

void dft2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols, bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) {
      Complex acc{};
      for (int h = 0; h < rows; ++h)
        for (int w = 0; w < cols; ++w) {
          const double ang = sign * 2.0 * std::numbers::pi *
                             (static_cast<double>(u * h) / rows + static_cast<double>(v * w) / cols);
          acc += in[static_cast<std::size_t>(h) * cols + w] * Complex(std::cos(ang), std::sin(ang));
        }
      out[static_cast<std::size_t>(u) * cols + v] = acc;
    }
}

void fft2d_planes(std::span<Complex> planes, const Shape3& shape, bool inverse) {
  if (planes.size() != shape.size()) throw ShapeError("dft2d planes: size mismatch with " + to_string(shape));
  const std::size_t ps = shape.plane_size();
  std::vector<Complex> tmp(ps);
  for (int p = 0; p < shape.planes; ++p) {
    auto plane = planes.subspan(p * ps, ps);
    dft2d(plane, tmp, shape.rows, shape.cols, inverse);
    std::copy(tmp.begin(), tmp.end(), plane.begin());
  }
}

}  // namespace reference
}  // namespace freeup::kernels
