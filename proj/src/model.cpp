#include "freeup/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "freeup/kernels.hpp"

namespace freeup::model {

namespace {

constexpr kernels::ConvParams kDown{3, 2, 1};
constexpr kernels::ConvParams kPointwise{1, 1, 0};

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

void AEConfig::validate() const {
  if (in_planes < 1) throw std::invalid_argument("AEConfig: in_planes must be >= 1");
  if (widths.empty()) throw std::invalid_argument("AEConfig: at least one encoder stage is required");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("AEConfig: stage widths must be positive");
  }
  if (latent < 1) throw std::invalid_argument("AEConfig: latent width must be positive");
  if (attention_reduction < 1) throw std::invalid_argument("AEConfig: attention_reduction must be >= 1");
}

std::string_view to_string(BranchKind kind) {
  switch (kind) {
    case BranchKind::low: return "low";
    case BranchKind::high: return "high";
    case BranchKind::fused: return "fused";
  }
  return "fused";
}

Autoencoder::Autoencoder(const AEConfig& cfg, const std::string& name) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t stages = cfg_.widths.size();
  int in_c = cfg_.in_planes;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string tag = name + ".enc" + std::to_string(s);
    enc_conv_.emplace_back(tag, in_c, cfg_.widths[s], kDown);
    if (cfg_.attention) {
      enc_channel_.emplace_back(tag + ".ca", cfg_.widths[s], cfg_.attention_reduction, cfg_.nonlinearity);
      enc_spatial_.emplace_back(tag + ".sa");
    }
    in_c = cfg_.widths[s];
  }
  bottleneck_ = nn::Conv2d(name + ".latent", in_c, cfg_.latent, kPointwise);
  in_c = cfg_.latent;
  for (std::size_t s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    const int out_c = last ? cfg_.in_planes : cfg_.widths[stages - 2 - s];
    const std::string tag = name + ".dec" + std::to_string(s);
    dec_conv_.emplace_back(tag, in_c, out_c, kDown);
    if (cfg_.attention && !last) {
      dec_channel_.emplace_back(tag + ".ca", out_c, cfg_.attention_reduction, cfg_.nonlinearity);
      dec_spatial_.emplace_back(tag + ".sa");
    }
    in_c = out_c;
  }

  std::mt19937_64 rng(cfg_.seed);
  for (auto& c : enc_conv_) c.init(rng);
  for (auto& a : enc_channel_) a.init(rng);
  for (auto& a : enc_spatial_) a.init(rng);
  bottleneck_.init(rng);
  for (auto& c : dec_conv_) c.init(rng);
  for (auto& a : dec_channel_) a.init(rng);
  for (auto& a : dec_spatial_) a.init(rng);
}

Tensor4 Autoencoder::run_stage(std::size_t which, bool decoder, const Tensor4& x, StageCache* cache) const {
  const bool last_decoder = decoder && which + 1 == dec_conv_.size();
  Tensor4 pre = decoder ? dec_conv_[which].forward(x) : enc_conv_[which].forward(x);
  if (last_decoder) {
    if (cache) cache->input = x;
    return pre;
  }
  Tensor4 act;
  nn::apply_activation(cfg_.nonlinearity, pre, act);
  Tensor4 out = act;
  if (cfg_.attention) {
    const auto& ca = decoder ? dec_channel_[which] : enc_channel_[which];
    const auto& sa = decoder ? dec_spatial_[which] : enc_spatial_[which];
    out = sa.forward(ca.forward(act, cache ? &cache->channel : nullptr), cache ? &cache->spatial : nullptr);
  }
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Tensor4 Autoencoder::back_stage(std::size_t which, bool decoder, const StageCache& cache, const Tensor4& dy) {
  const bool last_decoder = decoder && which + 1 == dec_conv_.size();
  if (last_decoder) return dec_conv_[which].backward(cache.input, dy);
  Tensor4 dact = dy;
  if (cfg_.attention) {
    auto& ca = decoder ? dec_channel_[which] : enc_channel_[which];
    auto& sa = decoder ? dec_spatial_[which] : enc_spatial_[which];
    dact = ca.backward(cache.channel, sa.backward(cache.spatial, dy));
  }
  Tensor4 dpre;
  nn::activation_backward(cfg_.nonlinearity, cache.pre, dact, dpre);
  return decoder ? dec_conv_[which].backward(cache.input, dpre) : enc_conv_[which].backward(cache.input, dpre);
}

Tensor4 Autoencoder::forward(const Tensor4& x, Cache* cache) const {
  const int mult = cfg_.spatial_multiple();
  if (x.c != cfg_.in_planes || x.h % mult != 0 || x.w % mult != 0 || x.h < mult || x.w < mult) {
    throw ShapeError("Autoencoder: input " + shape_string(x) + " incompatible with " +
                     std::to_string(cfg_.in_planes) + " planes and spatial multiple " + std::to_string(mult));
  }
  if (cache) {
    cache->encoder.assign(enc_conv_.size(), {});
    cache->decoder.assign(dec_conv_.size(), {});
  }
  Tensor4 h = x;
  for (std::size_t s = 0; s < enc_conv_.size(); ++s) h = run_stage(s, false, h, cache ? &cache->encoder[s] : nullptr);

  Tensor4 pre = bottleneck_.forward(h);
  Tensor4 act;
  nn::apply_activation(cfg_.nonlinearity, pre, act);
  if (cache) {
    cache->bottleneck.input = std::move(h);
    cache->bottleneck.pre = std::move(pre);
  }
  h = std::move(act);

  for (std::size_t s = 0; s < dec_conv_.size(); ++s) h = run_stage(s, true, h, cache ? &cache->decoder[s] : nullptr);
  return h;
}

Tensor4 Autoencoder::backward(const Cache& cache, const Tensor4& dy) {
  Tensor4 g = dy;
  for (std::size_t s = dec_conv_.size(); s-- > 0;) g = back_stage(s, true, cache.decoder[s], g);
  Tensor4 dpre;
  nn::activation_backward(cfg_.nonlinearity, cache.bottleneck.pre, g, dpre);
  g = bottleneck_.backward(cache.bottleneck.input, dpre);
  for (std::size_t s = enc_conv_.size(); s-- > 0;) g = back_stage(s, false, cache.encoder[s], g);
  return g;
}

std::vector<nn::Parameter*> Autoencoder::parameters() {
  std::vector<nn::Parameter*> out;
  auto add_conv = [&](auto& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  auto add_ca = [&](nn::ChannelAttention& a) {
    out.insert(out.end(), {&a.w1, &a.b1, &a.w2, &a.b2});
  };
  for (std::size_t s = 0; s < enc_conv_.size(); ++s) {
    add_conv(enc_conv_[s]);
    if (cfg_.attention) {
      add_ca(enc_channel_[s]);
      add_conv(enc_spatial_[s].conv);
    }
  }
  add_conv(bottleneck_);
  for (std::size_t s = 0; s < dec_conv_.size(); ++s) {
    add_conv(dec_conv_[s]);
    if (cfg_.attention && s < dec_channel_.size()) {
      add_ca(dec_channel_[s]);
      add_conv(dec_spatial_[s].conv);
    }
  }
  return out;
}

std::vector<const nn::Parameter*> Autoencoder::parameters() const {
  auto ps = const_cast<Autoencoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t Autoencoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void Autoencoder::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Tensor4 to_batch(std::span<const Volume> volumes) {
  if (volumes.empty()) throw ShapeError("to_batch: empty input");
  const Shape3 s = volumes.front().shape;
  Tensor4 t(static_cast<int>(volumes.size()), s.planes, s.rows, s.cols);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (!(volumes[i].shape == s)) throw ShapeError("to_batch: mixed shapes");
    std::transform(volumes[i].data.begin(), volumes[i].data.end(), t.image(static_cast<int>(i)),
                   [](double v) { return static_cast<float>(v); });
  }
  return t;
}

Volume from_batch(const Tensor4& batch, int index) {
  Volume v(Shape3{batch.c, batch.h, batch.w});
  const float* src = batch.image(index);
  std::copy(src, src + batch.image_size(), v.data.begin());
  return v;
}

Volume ae_forward(const Autoencoder& ae, const Volume& band) {
  const Volume* one = &band;
  return from_batch(ae.forward(to_batch(std::span<const Volume>(one, 1))), 0);
}

Volume integrate_complement(const Volume& ae_out, const Volume& complement_band) {
  if (!(ae_out.shape == complement_band.shape)) {
    throw ShapeError("integrate_complement: " + to_string(ae_out.shape) + " vs " + to_string(complement_band.shape));
  }
  Volume out(ae_out.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ae_out.data[i] + complement_band.data[i];
  return out;
}

Volume integrate_complement_spectral(const Volume& ae_out, const Volume& complement_band) {
  if (!(ae_out.shape == complement_band.shape)) {
    throw ShapeError("integrate_complement: " + to_string(ae_out.shape) + " vs " + to_string(complement_band.shape));
  }
  spectral::Spectrum a = spectral::dft2(ae_out);
  const spectral::Spectrum b = spectral::dft2(complement_band);
  for (std::size_t i = 0; i < a.bins.data.size(); ++i) a.bins.data[i] += b.bins.data[i];
  return spectral::idft2(a);
}

std::vector<double> branch_mask(BranchKind kind, const spectral::GaussianMasks& masks) {
  switch (kind) {
    case BranchKind::low: return masks.low_natural();
    case BranchKind::high: return masks.high_natural();
    case BranchKind::fused: return {};
  }
  return {};
}

RecLoss rec_loss(const Volume& x, const spectral::Spectrum& x_spectrum, const Volume& x_tilde,
                 std::span<const double> mask_natural, double lambda_f, Volume* grad, double grad_scale) {
  if (!(x.shape == x_tilde.shape) || !(x_spectrum.bins.shape == x.shape)) {
    throw ShapeError("rec_loss: shape mismatch " + to_string(x.shape) + " vs " + to_string(x_tilde.shape));
  }
  if (x_spectrum.layout != spectral::Layout::natural) throw std::invalid_argument("rec_loss: expects natural layout");
  if (lambda_f < 0.0) throw std::invalid_argument("rec_loss: lambda_f must be >= 0");
  const std::size_t ps = x.shape.plane_size();
  if (!mask_natural.empty() && mask_natural.size() != ps) throw ShapeError("rec_loss: mask size mismatch");
  if (grad && !(grad->shape == x.shape)) throw ShapeError("rec_loss: gradient buffer shape mismatch");

  const double n = static_cast<double>(x.size());
  RecLoss out;
  double spatial = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double r = x.data[i] - x_tilde.data[i];
    spatial += std::abs(r);
    if (grad) grad->data[i] += grad_scale * (-sgn(r) / n);
  }
  out.spatial = spatial / n;

  if (lambda_f > 0.0) {
    spectral::Spectrum diff = spectral::dft2(x_tilde);  // becomes M .* (F(x) - F(x~))
    double freq = 0.0;
    for (std::size_t i = 0; i < diff.bins.data.size(); ++i) {
      const double m = mask_natural.empty() ? 1.0 : mask_natural[i % ps];
      const spectral::Complex d = m * (x_spectrum.bins.data[i] - diff.bins.data[i]);
      freq += std::abs(d.real()) + std::abs(d.imag());
      // dL/dF(x~) packed as (dL/dRe) + i (dL/dIm)
      diff.bins.data[i] = spectral::Complex(-m * sgn(d.real()), -m * sgn(d.imag())) * (lambda_f / n);
    }
    out.frequency = freq / n;
    if (grad) {
      // For F = sum x e^{-i theta}, dL/dx = Re(sum_k G_k e^{+i theta}): an unnormalized inverse DFT.
      kernels::fft2d_planes(diff.bins.data, x.shape, /*inverse=*/true);
      for (std::size_t i = 0; i < grad->data.size(); ++i) grad->data[i] += grad_scale * diff.bins.data[i].real();
    }
  }
  out.total = out.spatial + lambda_f * out.frequency;
  return out;
}

double rec_loss(const Volume& x, const Volume& x_tilde, BranchKind kind, double cutoff, double lambda_f) {
  const auto masks = spectral::gaussian_masks(x.shape.rows, x.shape.cols, cutoff);
  const auto mask = branch_mask(kind, masks);
  return rec_loss(x, spectral::dft2(x), x_tilde, mask, lambda_f).total;
}

}  // namespace freeup::model
