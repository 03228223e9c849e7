#pragma once

// Compute kernels shared by the spectral and model modules.
//
// Every kernel has two implementations with identical signatures:
//   freeup::kernels::            OpenMP-parallel, im2col/radix-2 based
//   freeup::kernels::reference:: serial, written straight from the definition
// The reference versions exist for tests and benchmarks only.

#include <complex>
#include <span>

#include "freeup/tensor.hpp"

namespace freeup::kernels {

using Complex = std::complex<double>;

/// Number of worker threads the parallel kernels will use.
int thread_count();
void set_thread_count(int n);

struct ConvParams {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

/// Output extent of a convolution along one axis.
int conv_out_extent(int in, const ConvParams& p);

// Convolution (cross-correlation) with weights laid out [out_c][in_c][k][k].
// `out`/`din` must already carry the intended shape; they are overwritten.
// Weight-gradient kernels accumulate into `dweight` / `dbias`.
void conv2d_forward(const Tensor4& in, std::span<const float> weight, std::span<const float> bias,
                    Tensor4& out, const ConvParams& p);
void conv2d_backward_input(const Tensor4& dout, std::span<const float> weight, Tensor4& din,
                           const ConvParams& p);
void conv2d_backward_weight(const Tensor4& in, const Tensor4& dout, std::span<float> dweight,
                            std::span<float> dbias, const ConvParams& p);

/// In-place unnormalized 1-D DFT (sign -1 forward, +1 inverse). Radix-2 for
/// power-of-two lengths, direct evaluation otherwise.
void fft1d(std::span<Complex> data, bool inverse);

/// In-place unnormalized 2-D DFT of one rows x cols plane.
void fft2d(std::span<Complex> plane, int rows, int cols, bool inverse);

/// fft2d applied to every plane of a P x H x W complex array.
void fft2d_planes(std::span<Complex> planes, const Shape3& shape, bool inverse);

namespace reference {

void conv2d_forward(const Tensor4& in, std::span<const float> weight, std::span<const float> bias,
                    Tensor4& out, const ConvParams& p);
void conv2d_backward_input(const Tensor4& dout, std::span<const float> weight, Tensor4& din,
                           const ConvParams& p);
void conv2d_backward_weight(const Tensor4& in, const Tensor4& dout, std::span<float> dweight,
                            std::span<float> dbias, const ConvParams& p);

/// Direct O((HW)^2) 2-D DFT, unnormalized.
void dft2d(std::span<const Complex> in, std::span<Complex> out, int rows, int cols, bool inverse);

void fft2d_planes(std::span<Complex> planes, const Shape3& shape, bool inverse);

}  // namespace reference
}  // namespace freeup::kernels
