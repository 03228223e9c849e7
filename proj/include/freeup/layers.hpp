#pragma once

// Trainable building blocks with explicit forward/backward passes.
// Backward methods accumulate into Parameter::grad and return the gradient
// with respect to the layer input.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "freeup/kernels.hpp"
#include "freeup/tensor.hpp"

namespace freeup::nn {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

enum class Nonlinearity { relu, leaky_relu, tanh, silu };

std::string_view to_string(Nonlinearity a);
Nonlinearity parse_nonlinearity(std::string_view text);

inline constexpr float kLeakySlope = 0.1f;

float activate(Nonlinearity a, float z);
/// d activate / dz evaluated at the pre-activation z.
float activate_derivative(Nonlinearity a, float z);

void apply_activation(Nonlinearity a, const Tensor4& z, Tensor4& out);
/// dz = da * f'(z)
void activation_backward(Nonlinearity a, const Tensor4& z, const Tensor4& da, Tensor4& dz);

/// He-uniform weights, zero bias.
void init_uniform(Parameter& p, std::mt19937_64& rng, double bound);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_c, int out_c, kernels::ConvParams p);

  void init(std::mt19937_64& rng);
  Tensor4 forward(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& x, const Tensor4& dy);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

  Parameter weight;  // [out_c][in_c][k][k]
  Parameter bias;    // [out_c]

 private:
  int in_c_ = 0, out_c_ = 0;
  kernels::ConvParams p_;
};

/// Stride-s transposed convolution producing exactly s times the input extent
/// (output padding s - 1).
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_c, int out_c, kernels::ConvParams p);

  void init(std::mt19937_64& rng);
  Tensor4 forward(const Tensor4& x) const;
  Tensor4 backward(const Tensor4& x, const Tensor4& dy);

  Parameter weight;  // [in_c][out_c][k][k]
  Parameter bias;    // [out_c]

 private:
  int in_c_ = 0, out_c_ = 0;
  kernels::ConvParams p_;
};

/// Squeeze-excite style channel gate: g = sigmoid(W2 f(W1 mean_hw(x))).
class ChannelAttention {
 public:
  struct Cache {
    Tensor4 x;
    std::vector<float> pooled, hidden_pre, gate;  // N x C, N x R, N x C
  };

  ChannelAttention() = default;
  ChannelAttention(const std::string& name, int channels, int reduction, Nonlinearity act);

  void init(std::mt19937_64& rng);
  Tensor4 forward(const Tensor4& x, Cache* cache) const;
  Tensor4 backward(const Cache& cache, const Tensor4& dy);

  Parameter w1, b1, w2, b2;

 private:
  int channels_ = 0, hidden_ = 0;
  Nonlinearity act_ = Nonlinearity::relu;
};

/// Spatial gate from channel-mean and channel-max maps: g = sigmoid(conv3x3([mean, max])).
class SpatialAttention {
 public:
  struct Cache {
    Tensor4 x;
    Tensor4 pooled;            // N x 2 x H x W
    std::vector<int> argmax;   // N x H x W channel index of the max
    Tensor4 gate;              // N x 1 x H x W
  };

  SpatialAttention() = default;
  explicit SpatialAttention(const std::string& name);

  void init(std::mt19937_64& rng);
  Tensor4 forward(const Tensor4& x, Cache* cache) const;
  Tensor4 backward(const Cache& cache, const Tensor4& dy);

  Conv2d conv;
};

inline float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

}  // namespace freeup::nn
