#pragma once

// Frequency-constrained autoencoders, complement-band integration and the
// spatial + frequency reconstruction loss.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freeup/layers.hpp"
#include "freeup/spectral.hpp"
#include "freeup/tensor.hpp"

namespace freeup::model {

struct AEConfig {
  int in_planes = 8;
  std::vector<int> widths{32, 64, 128};
  int latent = 128;
  bool attention = true;
  int attention_reduction = 4;
  nn::Nonlinearity nonlinearity = nn::Nonlinearity::leaky_relu;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
  /// Spatial extents must be divisible by this.
  int spatial_multiple() const { return 1 << widths.size(); }
};

enum class BranchKind { low, high, fused };

std::string_view to_string(BranchKind kind);

/// Stride-2 conv encoder / transposed-conv decoder with a channel-then-spatial
/// attention block after every hidden stage. The last decoder layer is linear.
class Autoencoder {
 public:
  struct StageCache {
    Tensor4 input;
    Tensor4 pre;  // conv output before the nonlinearity
    Tensor4 act;  // after the nonlinearity, before attention
    nn::ChannelAttention::Cache channel;
    nn::SpatialAttention::Cache spatial;
  };
  struct Cache {
    std::vector<StageCache> encoder;
    StageCache bottleneck;
    std::vector<StageCache> decoder;
  };

  Autoencoder() = default;
  Autoencoder(const AEConfig& cfg, const std::string& name);

  const AEConfig& config() const { return cfg_; }

  /// Pass a cache to record what backward() needs; nullptr for inference.
  Tensor4 forward(const Tensor4& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns d loss / d input.
  Tensor4 backward(const Cache& cache, const Tensor4& dy);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  Tensor4 run_stage(std::size_t which, bool decoder, const Tensor4& x, StageCache* cache) const;
  Tensor4 back_stage(std::size_t which, bool decoder, const StageCache& cache, const Tensor4& dy);

  AEConfig cfg_;
  std::vector<nn::Conv2d> enc_conv_;
  std::vector<nn::ConvTranspose2d> dec_conv_;
  nn::Conv2d bottleneck_;
  std::vector<nn::ChannelAttention> enc_channel_, dec_channel_;
  std::vector<nn::SpatialAttention> enc_spatial_, dec_spatial_;
};

// Volume <-> single-image batch conversion.
Tensor4 to_batch(std::span<const Volume> volumes);
Volume from_batch(const Tensor4& batch, int index);

/// Inference on one P x H x W band.
Volume ae_forward(const Autoencoder& ae, const Volume& band);

/// ae_out + complement_band, computed in the spatial domain.
Volume integrate_complement(const Volume& ae_out, const Volume& complement_band);
/// idft2(dft2(ae_out) + dft2(complement_band)); equal to the spatial sum by linearity.
Volume integrate_complement_spectral(const Volume& ae_out, const Volume& complement_band);

/// Natural-layout mask used by the frequency term of `kind`; empty = identity.
std::vector<double> branch_mask(BranchKind kind, const spectral::GaussianMasks& masks);

struct RecLoss {
  double total = 0.0;
  double spatial = 0.0;
  double frequency = 0.0;
};

/// mean|x - x~| + lambda_f * mean(|Re d| + |Im d|), d = M .* (F(x) - F(x~)).
/// `x_spectrum` is dft2(x) in natural layout. When `grad` is non-null,
/// grad_scale * d total / d x~ is added to it.
RecLoss rec_loss(const Volume& x, const spectral::Spectrum& x_spectrum, const Volume& x_tilde,
                 std::span<const double> mask_natural, double lambda_f, Volume* grad = nullptr,
                 double grad_scale = 1.0);

/// Convenience overload building the transform and masks itself.
double rec_loss(const Volume& x, const Volume& x_tilde, BranchKind kind, double cutoff, double lambda_f);

}  // namespace freeup::model
