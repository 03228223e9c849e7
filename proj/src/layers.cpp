#include "freeup/layers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace freeup::nn {

Parameter::Parameter(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<std::size_t>());
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

std::string_view to_string(Nonlinearity a) {
  switch (a) {
    case Nonlinearity::relu: return "relu";
    case Nonlinearity::leaky_relu: return "leaky_relu";
    case Nonlinearity::tanh: return "tanh";
    case Nonlinearity::silu: return "silu";
  }
  return "relu";
}

Nonlinearity parse_nonlinearity(std::string_view text) {
  if (text == "relu") return Nonlinearity::relu;
  if (text == "leaky_relu") return Nonlinearity::leaky_relu;
  if (text == "tanh") return Nonlinearity::tanh;
  if (text == "silu") return Nonlinearity::silu;
  throw std::invalid_argument("unknown nonlinearity '" + std::string(text) + "'");
}

float activate(Nonlinearity a, float z) {
  switch (a) {
    case Nonlinearity::relu: return z > 0.0f ? z : 0.0f;
    case Nonlinearity::leaky_relu: return z > 0.0f ? z : kLeakySlope * z;
    case Nonlinearity::tanh: return std::tanh(z);
    case Nonlinearity::silu: return z * sigmoid(z);
  }
  return z;
}

float activate_derivative(Nonlinearity a, float z) {
  switch (a) {
    case Nonlinearity::relu: return z > 0.0f ? 1.0f : 0.0f;
    case Nonlinearity::leaky_relu: return z > 0.0f ? 1.0f : kLeakySlope;
    case Nonlinearity::tanh: {
      const float t = std::tanh(z);
      return 1.0f - t * t;
    }
    case Nonlinearity::silu: {
      const float s = sigmoid(z);
      return s * (1.0f + z * (1.0f - s));
    }
  }
  return 1.0f;
}

void apply_activation(Nonlinearity a, const Tensor4& z, Tensor4& out) {
  out = Tensor4(z.n, z.c, z.h, z.w);
  const std::size_t n = z.size();
  for (std::size_t i = 0; i < n; ++i) out.data[i] = activate(a, z.data[i]);
}

void activation_backward(Nonlinearity a, const Tensor4& z, const Tensor4& da, Tensor4& dz) {
  require_same_shape(z, da, "activation_backward");
  dz = Tensor4(z.n, z.c, z.h, z.w);
  const std::size_t n = z.size();
  for (std::size_t i = 0; i < n; ++i) dz.data[i] = da.data[i] * activate_derivative(a, z.data[i]);
}

void init_uniform(Parameter& p, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = static_cast<float>(dist(rng));
}

// --- Conv2d ------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, kernels::ConvParams p)
    : weight(name + ".weight", {out_c, in_c, p.kernel, p.kernel}),
      bias(name + ".bias", {out_c}),
      in_c_(in_c),
      out_c_(out_c),
      p_(p) {}

void Conv2d::init(std::mt19937_64& rng) {
  init_uniform(weight, rng, std::sqrt(6.0 / (in_c_ * p_.kernel * p_.kernel)));
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor4 Conv2d::forward(const Tensor4& x) const {
  if (x.c != in_c_) throw ShapeError("Conv2d " + weight.name + ": input " + shape_string(x));
  Tensor4 out(x.n, out_c_, kernels::conv_out_extent(x.h, p_), kernels::conv_out_extent(x.w, p_));
  kernels::conv2d_forward(x, weight.value, bias.value, out, p_);
  return out;
}

Tensor4 Conv2d::backward(const Tensor4& x, const Tensor4& dy) {
  kernels::conv2d_backward_weight(x, dy, weight.grad, bias.grad, p_);
  Tensor4 dx(x.n, x.c, x.h, x.w);
  kernels::conv2d_backward_input(dy, weight.value, dx, p_);
  return dx;
}

// --- ConvTranspose2d ------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in_c, int out_c, kernels::ConvParams p)
    : weight(name + ".weight", {in_c, out_c, p.kernel, p.kernel}),
      bias(name + ".bias", {out_c}),
      in_c_(in_c),
      out_c_(out_c),
      p_(p) {}

void ConvTranspose2d::init(std::mt19937_64& rng) {
  // Each output sees about in_c * k^2 / stride^2 taps.
  const double fan_in = static_cast<double>(in_c_) * p_.kernel * p_.kernel / (p_.stride * p_.stride);
  init_uniform(weight, rng, std::sqrt(6.0 / fan_in));
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor4 ConvTranspose2d::forward(const Tensor4& x) const {
  if (x.c != in_c_) throw ShapeError("ConvTranspose2d " + weight.name + ": input " + shape_string(x));
  Tensor4 out(x.n, out_c_, x.h * p_.stride, x.w * p_.stride);
  // A transposed convolution is the input-gradient of the matching forward convolution.
  kernels::conv2d_backward_input(x, weight.value, out, p_);
  const std::size_t ps = out.plane_size();
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c) {
      float* dst = out.plane(n, c);
      for (std::size_t i = 0; i < ps; ++i) dst[i] += bias.value[c];
    }
  return out;
}

Tensor4 ConvTranspose2d::backward(const Tensor4& x, const Tensor4& dy) {
  const std::size_t ps = dy.plane_size();
  for (int n = 0; n < dy.n; ++n)
    for (int c = 0; c < dy.c; ++c) {
      const float* g = dy.plane(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < ps; ++i) s += g[i];
      bias.grad[c] += static_cast<float>(s);
    }
  kernels::conv2d_backward_weight(dy, x, weight.grad, {}, p_);
  Tensor4 dx(x.n, x.c, x.h, x.w);
  kernels::conv2d_forward(dy, weight.value, {}, dx, p_);
  return dx;
}

// --- ChannelAttention -------------------------------------------------------------

ChannelAttention::ChannelAttention(const std::string& name, int channels, int reduction, Nonlinearity act)
    : w1(name + ".fc1.weight", {std::max(1, channels / reduction), channels}),
      b1(name + ".fc1.bias", {std::max(1, channels / reduction)}),
      w2(name + ".fc2.weight", {channels, std::max(1, channels / reduction)}),
      b2(name + ".fc2.bias", {channels}),
      channels_(channels),
      hidden_(std::max(1, channels / reduction)),
      act_(act) {}

void ChannelAttention::init(std::mt19937_64& rng) {
  init_uniform(w1, rng, std::sqrt(6.0 / channels_));
  init_uniform(w2, rng, std::sqrt(6.0 / hidden_));
  std::fill(b1.value.begin(), b1.value.end(), 0.0f);
  std::fill(b2.value.begin(), b2.value.end(), 0.0f);
}

Tensor4 ChannelAttention::forward(const Tensor4& x, Cache* cache) const {
  if (x.c != channels_) throw ShapeError("ChannelAttention: input " + shape_string(x));
  const int n = x.n, c = x.c, r = hidden_;
  const std::size_t ps = x.plane_size();
  std::vector<float> pooled(static_cast<std::size_t>(n) * c), pre(static_cast<std::size_t>(n) * r),
      gate(static_cast<std::size_t>(n) * c);
  Tensor4 y(x.n, x.c, x.h, x.w);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = x.plane(i, ch);
      double s = 0.0;
      for (std::size_t k = 0; k < ps; ++k) s += src[k];
      pooled[i * c + ch] = static_cast<float>(s / ps);
    }
    for (int j = 0; j < r; ++j) {
      float z = b1.value[j];
      for (int ch = 0; ch < c; ++ch) z += w1.value[j * c + ch] * pooled[i * c + ch];
      pre[i * r + j] = z;
    }
    for (int ch = 0; ch < c; ++ch) {
      float z = b2.value[ch];
      for (int j = 0; j < r; ++j) z += w2.value[ch * r + j] * activate(act_, pre[i * r + j]);
      gate[i * c + ch] = sigmoid(z);
      const float g = gate[i * c + ch];
      const float* src = x.plane(i, ch);
      float* dst = y.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) dst[k] = src[k] * g;
    }
  }
  if (cache) {
    cache->x = x;
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(pre);
    cache->gate = std::move(gate);
  }
  return y;
}

Tensor4 ChannelAttention::backward(const Cache& cache, const Tensor4& dy) {
  const Tensor4& x = cache.x;
  require_same_shape(x, dy, "ChannelAttention::backward");
  const int n = x.n, c = x.c, r = hidden_;
  const std::size_t ps = x.plane_size();
  Tensor4 dx(x.n, x.c, x.h, x.w);
  std::vector<float> dz2(c), dpre(r), dpooled(c);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float g = cache.gate[i * c + ch];
      const float* src = x.plane(i, ch);
      const float* gy = dy.plane(i, ch);
      float* gx = dx.plane(i, ch);
      double dg = 0.0;
      for (std::size_t k = 0; k < ps; ++k) {
        gx[k] = gy[k] * g;
        dg += static_cast<double>(gy[k]) * src[k];
      }
      dz2[ch] = static_cast<float>(dg) * g * (1.0f - g);
      b2.grad[ch] += dz2[ch];
    }
    std::fill(dpre.begin(), dpre.end(), 0.0f);
    for (int ch = 0; ch < c; ++ch)
      for (int j = 0; j < r; ++j) {
        w2.grad[ch * r + j] += dz2[ch] * activate(act_, cache.hidden_pre[i * r + j]);
        dpre[j] += w2.value[ch * r + j] * dz2[ch];
      }
    std::fill(dpooled.begin(), dpooled.end(), 0.0f);
    for (int j = 0; j < r; ++j) {
      const float dz1 = dpre[j] * activate_derivative(act_, cache.hidden_pre[i * r + j]);
      b1.grad[j] += dz1;
      for (int ch = 0; ch < c; ++ch) {
        w1.grad[j * c + ch] += dz1 * cache.pooled[i * c + ch];
        dpooled[ch] += w1.value[j * c + ch] * dz1;
      }
    }
    for (int ch = 0; ch < c; ++ch) {
      const float add = dpooled[ch] / static_cast<float>(ps);
      float* gx = dx.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) gx[k] += add;
    }
  }
  return dx;
}

// --- SpatialAttention ---------------------------------------------------------------

SpatialAttention::SpatialAttention(const std::string& name) : conv(name + ".conv", 2, 1, {3, 1, 1}) {}

void SpatialAttention::init(std::mt19937_64& rng) { conv.init(rng); }

Tensor4 SpatialAttention::forward(const Tensor4& x, Cache* cache) const {
  const std::size_t ps = x.plane_size();
  Tensor4 pooled(x.n, 2, x.h, x.w);
  std::vector<int> argmax(static_cast<std::size_t>(x.n) * ps, 0);
  for (int i = 0; i < x.n; ++i) {
    float* mean = pooled.plane(i, 0);
    float* mx = pooled.plane(i, 1);
    const float* first = x.plane(i, 0);
    for (std::size_t k = 0; k < ps; ++k) {
      mean[k] = first[k];
      mx[k] = first[k];
    }
    for (int ch = 1; ch < x.c; ++ch) {
      const float* src = x.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) {
        mean[k] += src[k];
        if (src[k] > mx[k]) {
          mx[k] = src[k];
          argmax[i * ps + k] = ch;
        }
      }
    }
    for (std::size_t k = 0; k < ps; ++k) mean[k] /= static_cast<float>(x.c);
  }
  Tensor4 gate = conv.forward(pooled);
  for (auto& g : gate.data) g = sigmoid(g);
  Tensor4 y(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    const float* g = gate.plane(i, 0);
    for (int ch = 0; ch < x.c; ++ch) {
      const float* src = x.plane(i, ch);
      float* dst = y.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) dst[k] = src[k] * g[k];
    }
  }
  if (cache) {
    cache->x = x;
    cache->pooled = std::move(pooled);
    cache->argmax = std::move(argmax);
    cache->gate = std::move(gate);
  }
  return y;
}

Tensor4 SpatialAttention::backward(const Cache& cache, const Tensor4& dy) {
  const Tensor4& x = cache.x;
  require_same_shape(x, dy, "SpatialAttention::backward");
  const std::size_t ps = x.plane_size();
  Tensor4 dx(x.n, x.c, x.h, x.w);
  Tensor4 dlogit(x.n, 1, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    const float* g = cache.gate.plane(i, 0);
    float* dl = dlogit.plane(i, 0);
    std::vector<double> dg(ps, 0.0);
    for (int ch = 0; ch < x.c; ++ch) {
      const float* src = x.plane(i, ch);
      const float* gy = dy.plane(i, ch);
      float* gx = dx.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) {
        gx[k] = gy[k] * g[k];
        dg[k] += static_cast<double>(gy[k]) * src[k];
      }
    }
    for (std::size_t k = 0; k < ps; ++k) dl[k] = static_cast<float>(dg[k]) * g[k] * (1.0f - g[k]);
  }
  Tensor4 dpooled = conv.backward(cache.pooled, dlogit);
  for (int i = 0; i < x.n; ++i) {
    const float* dmean = dpooled.plane(i, 0);
    const float* dmax = dpooled.plane(i, 1);
    for (int ch = 0; ch < x.c; ++ch) {
      float* gx = dx.plane(i, ch);
      for (std::size_t k = 0; k < ps; ++k) gx[k] += dmean[k] / static_cast<float>(x.c);
    }
    for (std::size_t k = 0; k < ps; ++k) {
      dx.plane(i, cache.argmax[i * ps + k])[k] += dmax[k];
    }
  }
  return dx;
}

}  // namespace freeup::nn
