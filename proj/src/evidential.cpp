#include "freeup/evidential.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

namespace freeup::evidential {

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }
double sgn(double v) { return (v > 0.0) - (v < 0.0); }

void check_shapes(const Volume& x, const Volume& x_tilde, std::span<double> grad) {
  if (!(x.shape == x_tilde.shape)) {
    throw ShapeError("evidential loss: " + to_string(x.shape) + " vs " + to_string(x_tilde.shape));
  }
  if (!grad.empty() && grad.size() != x.size()) throw ShapeError("evidential loss: gradient buffer size mismatch");
}

}  // namespace

bool NIGParams::valid() const {
  return std::isfinite(v) && std::isfinite(alpha) && std::isfinite(beta) && v >= kVFloor &&
         alpha >= 1.0 + kAlphaMargin && beta >= kBetaFloor;
}

double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }

NIGParams nig_from_raw(const RawOutputs& raw) {
  return {softplus(raw[0]) + kVFloor, 1.0 + softplus(raw[1]) + kAlphaMargin, softplus(raw[2]) + kBetaFloor};
}

RawOutputs raw_gradient(const RawOutputs& raw, const NIGGrad& g) {
  return {g.v * logistic(raw[0]), g.alpha * logistic(raw[1]), g.beta * logistic(raw[2])};
}

EvidentialHead::EvidentialHead(std::size_t in_features, std::uint64_t seed, const std::string& name)
    : weight(name + ".weight", {3, static_cast<int>(in_features)}), bias(name + ".bias", {3}), in_features_(in_features) {
  std::mt19937_64 rng(seed);
  nn::init_uniform(weight, rng, 1.0 / std::sqrt(static_cast<double>(in_features)));
}

RawOutputs EvidentialHead::raw(std::span<const double> x_tilde) const {
  if (x_tilde.size() != in_features_) {
    throw ShapeError("EvidentialHead: expected " + std::to_string(in_features_) + " inputs, got " +
                     std::to_string(x_tilde.size()));
  }
  RawOutputs out{};
  for (int o = 0; o < 3; ++o) {
    const float* w = weight.value.data() + o * in_features_;
    double acc = bias.value[o];
    for (std::size_t i = 0; i < in_features_; ++i) acc += w[i] * x_tilde[i];
    out[o] = acc;
  }
  return out;
}

NIGParams EvidentialHead::predict(std::span<const double> x_tilde) const {
  const RawOutputs r = raw(x_tilde);
  for (double t : r) {
    if (!std::isfinite(t)) throw DivergenceError("evidential head produced a non-finite output");
  }
  return nig_from_raw(r);
}

void EvidentialHead::backward(std::span<const double> x_tilde, const RawOutputs& draw, std::span<double> grad_x) {
  accumulate_gradient(x_tilde, draw);
  if (!grad_x.empty()) input_gradient(draw, grad_x);
}

void EvidentialHead::accumulate_gradient(std::span<const double> x_tilde, const RawOutputs& draw, double scale) {
  if (x_tilde.size() != in_features_) throw ShapeError("EvidentialHead: input size mismatch");
  for (int o = 0; o < 3; ++o) {
    float* gw = weight.grad.data() + o * in_features_;
    const double d = draw[o] * scale;
    bias.grad[o] += static_cast<float>(d);
    for (std::size_t i = 0; i < in_features_; ++i) gw[i] += static_cast<float>(d * x_tilde[i]);
  }
}

void EvidentialHead::input_gradient(const RawOutputs& draw, std::span<double> grad_x) const {
  if (grad_x.size() != in_features_) throw ShapeError("EvidentialHead: gradient size mismatch");
  for (int o = 0; o < 3; ++o) {
    const float* w = weight.value.data() + o * in_features_;
    const double d = draw[o];
    for (std::size_t i = 0; i < in_features_; ++i) grad_x[i] += d * w[i];
  }
}

std::vector<NIGParams> predict_nig(const EvidentialHead& head, std::span<const Volume> x_tildes) {
  std::vector<NIGParams> out;
  out.reserve(x_tildes.size());
  for (const auto& x : x_tildes) out.push_back(head.predict(x.data));
  return out;
}

double uncertainty(const NIGParams& p) { return p.beta / (p.v * (p.alpha - 1.0)); }

double nll_loss(const Volume& x, const Volume& x_tilde, const NIGParams& p, std::span<double> grad_x_tilde,
                NIGGrad* grad_params, double scale) {
  check_shapes(x, x_tilde, grad_x_tilde);
  const double v = p.v, a = p.alpha, b = p.beta;
  const double omega = 2.0 * b * (1.0 + v);
  const double n = static_cast<double>(x.size());
  // Terms that do not depend on the residual.
  const double constant = 0.5 * std::log(std::numbers::pi / v) - a * std::log(omega) + std::lgamma(a) -
                          std::lgamma(a + 0.5);
  double sum_log = 0.0;
  double d_v = 0.0, d_omega = 0.0;  // residual-dependent partials, summed
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double r = x.data[i] - x_tilde.data[i];
    const double q = r * r * v + omega;
    sum_log += std::log(q);
    if (!grad_x_tilde.empty()) grad_x_tilde[i] += scale * (a + 0.5) * (-2.0 * r * v / q) / n;
    if (grad_params) {
      d_v += r * r / q;
      d_omega += 1.0 / q;
    }
  }
  const double loss = constant + (a + 0.5) * sum_log / n;
  if (grad_params) {
    // omega depends on v (2 beta) and beta (2 (1 + v)).
    const double mean_inv_q = d_omega / n;
    const double dl_domega = -a / omega + (a + 0.5) * mean_inv_q;
    grad_params->v += scale * (-0.5 / v + (a + 0.5) * d_v / n + dl_domega * 2.0 * b);
    grad_params->beta += scale * dl_domega * 2.0 * (1.0 + v);
    grad_params->alpha += scale * (-std::log(omega) + boost::math::digamma(a) - boost::math::digamma(a + 0.5) +
                                   sum_log / n);
  }
  return loss;
}

double pen_loss(const Volume& x, const Volume& x_tilde, const NIGParams& p, std::span<double> grad_x_tilde,
                NIGGrad* grad_params, double scale) {
  check_shapes(x, x_tilde, grad_x_tilde);
  const double n = static_cast<double>(x.size());
  const double evidence = 2.0 * p.v + p.alpha;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double r = x.data[i] - x_tilde.data[i];
    abs_sum += std::abs(r);
    if (!grad_x_tilde.empty()) grad_x_tilde[i] += scale * (-sgn(r)) * evidence / n;
  }
  const double mean_abs = abs_sum / n;
  if (grad_params) {
    grad_params->v += scale * 2.0 * mean_abs;
    grad_params->alpha += scale * mean_abs;
  }
  return mean_abs * evidence;
}

}  // namespace freeup::evidential
