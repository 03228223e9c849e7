#pragma once

// Normal-Inverse-Gamma evidential heads and their losses.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "freeup/layers.hpp"
#include "freeup/tensor.hpp"

namespace freeup::evidential {

/// Non-finite losses or head outputs during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kVFloor = 1e-6;
inline constexpr double kAlphaMargin = 1e-6;  // alpha >= 1 + margin
inline constexpr double kBetaFloor = 1e-6;

/// One NIG(v, alpha, beta) triple per sample; the mean is the reconstruction.
struct NIGParams {
  double v = 1.0;
  double alpha = 2.0;
  double beta = 1.0;

  bool valid() const;
};

/// Partial derivatives of a scalar loss with respect to (v, alpha, beta).
struct NIGGrad {
  double v = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  NIGGrad& operator+=(const NIGGrad& o) {
    v += o.v;
    alpha += o.alpha;
    beta += o.beta;
    return *this;
  }
};

using RawOutputs = std::array<double, 3>;

/// ln(1 + e^t), overflow-safe.
double softplus(double t);

/// v = sp(r_v) + floor, alpha = 1 + sp(r_a) + margin, beta = sp(r_b) + floor.
NIGParams nig_from_raw(const RawOutputs& raw);
/// Chain rule through nig_from_raw.
RawOutputs raw_gradient(const RawOutputs& raw, const NIGGrad& g);

/// Linear map from a flattened reconstruction to the three raw outputs.
class EvidentialHead {
 public:
  EvidentialHead() = default;
  EvidentialHead(std::size_t in_features, std::uint64_t seed, const std::string& name);

  std::size_t in_features() const { return in_features_; }

  RawOutputs raw(std::span<const double> x_tilde) const;
  /// Throws DivergenceError when the affine map produces a non-finite value.
  NIGParams predict(std::span<const double> x_tilde) const;

  /// Accumulates weight gradients for d loss / d raw = `draw`; adds
  /// d loss / d x_tilde into `grad_x` when non-empty.
  void backward(std::span<const double> x_tilde, const RawOutputs& draw, std::span<double> grad_x);
  /// Weight-gradient half of backward(), scaled by `scale`.
  void accumulate_gradient(std::span<const double> x_tilde, const RawOutputs& draw, double scale = 1.0);
  /// Input-gradient half of backward(): grad_x += W^T draw.
  void input_gradient(const RawOutputs& draw, std::span<double> grad_x) const;

  std::vector<nn::Parameter*> parameters() { return {&weight, &bias}; }
  std::vector<const nn::Parameter*> parameters() const { return {&weight, &bias}; }

  nn::Parameter weight;  // [3][in_features]
  nn::Parameter bias;    // [3]

 private:
  std::size_t in_features_ = 0;
};

/// One triple per input.
std::vector<NIGParams> predict_nig(const EvidentialHead& head, std::span<const Volume> x_tildes);

/// Variance of the mean: beta / (v (alpha - 1)).
double uncertainty(const NIGParams& p);

/// Element-averaged NIG negative log-likelihood of x under mean x~.
/// Optional outputs receive `scale` times the gradient (accumulated).
double nll_loss(const Volume& x, const Volume& x_tilde, const NIGParams& p, std::span<double> grad_x_tilde = {},
                NIGGrad* grad_params = nullptr, double scale = 1.0);

/// mean|x - x~| * (2v + alpha).
double pen_loss(const Volume& x, const Volume& x_tilde, const NIGParams& p, std::span<double> grad_x_tilde = {},
                NIGGrad* grad_params = nullptr, double scale = 1.0);

}  // namespace freeup::evidential
