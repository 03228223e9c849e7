#include "freeup/fusion.hpp"

#include <stdexcept>
#include <string>

namespace freeup::fusion {

FusedEvidence fuse_nig(const Volume& x_low, const NIGParams& low, const Volume& x_high, const NIGParams& high) {
  if (!(x_low.shape == x_high.shape)) {
    throw ShapeError("fuse_nig: branch shapes differ: " + to_string(x_low.shape) + " vs " + to_string(x_high.shape));
  }
  const double vs = low.v + high.v;
  FusedEvidence f{Volume(x_low.shape), {}};
  double dl = 0.0, dh = 0.0;
  for (std::size_t i = 0; i < x_low.data.size(); ++i) {
    const double xf = (low.v * x_low.data[i] + high.v * x_high.data[i]) / vs;
    f.x_tilde.data[i] = xf;
    dl += (x_low.data[i] - xf) * (x_low.data[i] - xf);
    dh += (x_high.data[i] - xf) * (x_high.data[i] - xf);
  }
  const double n = static_cast<double>(x_low.size());
  f.params.v = vs;
  f.params.alpha = low.alpha + high.alpha + 0.5;
  f.params.beta = low.beta + high.beta + 0.5 * low.v * (dl / n) + 0.5 * high.v * (dh / n);
  return f;
}

BranchGrad fuse_nig_backward(const Volume& x_low, const NIGParams& low, const Volume& x_high, const NIGParams& high,
                             const FusionGrad& upstream, std::span<double> grad_x_low, std::span<double> grad_x_high) {
  const std::size_t size = x_low.size();
  if (!(x_low.shape == x_high.shape) || grad_x_low.size() != size || grad_x_high.size() != size ||
      (!upstream.x_tilde.empty() && upstream.x_tilde.size() != size)) {
    throw ShapeError("fuse_nig_backward: shape mismatch");
  }
  const double vl = low.v, vh = high.v, s = vl + vh;
  const double n = static_cast<double>(size);
  // With delta = x~_l - x~_h the discrepancy part of beta_f reduces to
  // 1/2 * (v_l v_h / s) * m(delta^2).
  const double c = vl * vh / s;
  const double gb = upstream.params.beta;
  double mean_sq = 0.0;
  double dxf_dvl = 0.0, dxf_dvh = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double delta = x_low.data[i] - x_high.data[i];
    mean_sq += delta * delta;
    double g_low = gb * c * delta / n;
    double g_high = -g_low;
    if (!upstream.x_tilde.empty()) {
      const double g = upstream.x_tilde[i];
      g_low += g * vl / s;
      g_high += g * vh / s;
      const double xf = (vl * x_low.data[i] + vh * x_high.data[i]) / s;
      dxf_dvl += g * (x_low.data[i] - xf) / s;
      dxf_dvh += g * (x_high.data[i] - xf) / s;
    }
    grad_x_low[i] += g_low;
    grad_x_high[i] += g_high;
  }
  mean_sq /= n;
  BranchGrad out;
  out.low.v = upstream.params.v + gb * 0.5 * mean_sq * vh * vh / (s * s) + dxf_dvl;
  out.high.v = upstream.params.v + gb * 0.5 * mean_sq * vl * vl / (s * s) + dxf_dvh;
  out.low.alpha = upstream.params.alpha;
  out.high.alpha = upstream.params.alpha;
  out.low.beta = gb;
  out.high.beta = gb;
  return out;
}

double anomaly_score(const FusedEvidence& f) { return f.params.beta / (f.params.v * (f.params.alpha - 1.0)); }

std::string_view to_string(StaticMode mode) { return mode == StaticMode::product ? "product" : "weighted_sum"; }

StaticMode parse_static_mode(std::string_view text) {
  if (text == "product") return StaticMode::product;
  if (text == "weighted_sum" || text == "sum") return StaticMode::weighted_sum;
  throw std::invalid_argument("unknown static fusion mode '" + std::string(text) + "'");
}

double static_fuse(double score_low, double score_high, StaticMode mode, double weight) {
  if (score_low < 0.0 || score_high < 0.0) throw std::invalid_argument("static_fuse: scores must be nonnegative");
  if (weight < 0.0 || weight > 1.0) throw std::invalid_argument("static_fuse: weight must lie in [0,1]");
  if (mode == StaticMode::product) return score_low * score_high;
  return weight * score_low + (1.0 - weight) * score_high;
}

}  // namespace freeup::fusion
