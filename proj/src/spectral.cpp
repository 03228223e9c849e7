#include "freeup/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "freeup/kernels.hpp"

namespace freeup::spectral {

namespace {

Spectrum shift(const Spectrum& s, bool to_center) {
  const Shape3 sh = s.bins.shape;
  Spectrum out{Array3<Complex>(sh), to_center ? Layout::centered : Layout::natural};
  for (int p = 0; p < sh.planes; ++p) {
    auto src = s.bins.plane(p);
    auto dst = out.bins.plane(p);
    for (int u = 0; u < sh.rows; ++u)
      for (int v = 0; v < sh.cols; ++v) {
        const int c = centered_index(u, v, sh.rows, sh.cols);
        const std::size_t n = static_cast<std::size_t>(u) * sh.cols + v;
        if (to_center) {
          dst[c] = src[n];
        } else {
          dst[n] = src[c];
        }
      }
  }
  return out;
}

std::vector<double> to_natural_mask(const std::vector<double>& centered, int rows, int cols) {
  std::vector<double> out(centered.size());
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) out[static_cast<std::size_t>(u) * cols + v] = centered[centered_index(u, v, rows, cols)];
  return out;
}

Volume masked_inverse(const Spectrum& natural, std::span<const double> mask_natural) {
  Spectrum filtered = natural;
  const std::size_t ps = natural.bins.shape.plane_size();
  for (int p = 0; p < natural.bins.shape.planes; ++p) {
    auto plane = filtered.bins.plane(p);
    for (std::size_t i = 0; i < ps; ++i) plane[i] *= mask_natural[i];
  }
  return idft2(filtered);
}

}  // namespace

Spectrum dft2(const Volume& x) {
  Spectrum s{Array3<Complex>(x.shape), Layout::natural};
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (!std::isfinite(x.data[i])) throw SpectrumError("dft2: non-finite input value");
    s.bins.data[i] = Complex(x.data[i], 0.0);
  }
  kernels::fft2d_planes(s.bins.data, x.shape, /*inverse=*/false);
  return s;
}

Volume idft2(const Spectrum& spectrum) {
  Spectrum nat = spectrum.layout == Layout::centered ? to_natural(spectrum) : spectrum;
  const Shape3 sh = nat.bins.shape;
  kernels::fft2d_planes(nat.bins.data, sh, /*inverse=*/true);
  const double scale = 1.0 / static_cast<double>(sh.plane_size());
  Volume out(sh);
  double max_re = 0.0, max_im = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = nat.bins.data[i].real() * scale;
    max_re = std::max(max_re, std::abs(out.data[i]));
    max_im = std::max(max_im, std::abs(nat.bins.data[i].imag() * scale));
  }
  if (max_im > kImagTolerance * std::max(1.0, max_re)) {
    throw SpectrumError("idft2: imaginary residue " + std::to_string(max_im) +
                        " indicates a non-conjugate-symmetric spectrum");
  }
  return out;
}

Spectrum to_centered(const Spectrum& s) { return s.layout == Layout::centered ? s : shift(s, true); }

Spectrum to_natural(const Spectrum& s) { return s.layout == Layout::natural ? s : shift(s, false); }

GaussianMasks gaussian_masks(int rows, int cols, double cutoff) {
  if (!(cutoff > 0.0) || !std::isfinite(cutoff)) throw std::invalid_argument("gaussian_masks: cutoff D must be > 0");
  if (rows < 1 || cols < 1) throw ShapeError("gaussian_masks: rows and cols must be >= 1");
  GaussianMasks m{rows, cols, cutoff, std::vector<double>(static_cast<std::size_t>(rows) * cols),
                  std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  const double cu = rows / 2, cv = cols / 2;
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) {
      const double d2 = (u - cu) * (u - cu) + (v - cv) * (v - cv);
      const std::size_t i = static_cast<std::size_t>(u) * cols + v;
      m.low[i] = std::exp(-d2 / (2.0 * cutoff * cutoff));
      m.high[i] = 1.0 - m.low[i];
    }
  return m;
}

std::vector<double> GaussianMasks::low_natural() const { return to_natural_mask(low, rows, cols); }
std::vector<double> GaussianMasks::high_natural() const { return to_natural_mask(high, rows, cols); }

FrequencyBands decouple(const Volume& x, double cutoff) {
  return decouple(x, gaussian_masks(x.shape.rows, x.shape.cols, cutoff));
}

FrequencyBands decouple(const Volume& x, const GaussianMasks& masks) {
  if (masks.rows != x.shape.rows || masks.cols != x.shape.cols) {
    throw ShapeError("decouple: mask grid does not match sample " + to_string(x.shape));
  }
  const Spectrum s = dft2(x);
  return {masked_inverse(s, masks.low_natural()), masked_inverse(s, masks.high_natural())};
}

RadialProfile power_spectrum_profile(std::span<const Volume> samples, int n_bins) {
  if (samples.empty()) throw std::invalid_argument("power_spectrum_profile: empty sample set");
  if (n_bins < 2) throw std::invalid_argument("power_spectrum_profile: n_bins must be >= 2");
  const Shape3 sh = samples.front().shape;
  const int rows = sh.rows, cols = sh.cols;
  const double cu = rows / 2, cv = cols / 2;

  // Radial bin of every centered position.
  std::vector<double> dist(sh.plane_size());
  double d_max = 0.0;
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) {
      const double d = std::hypot(u - cu, v - cv);
      dist[static_cast<std::size_t>(u) * cols + v] = d;
      d_max = std::max(d_max, d);
    }
  const double width = d_max > 0.0 ? d_max / n_bins : 1.0;
  std::vector<int> bin_of(dist.size());
  std::vector<int> bin_count(n_bins, 0);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    bin_of[i] = std::min(n_bins - 1, static_cast<int>(dist[i] / width));
    ++bin_count[bin_of[i]];
  }

  RadialProfile prof;
  prof.radial_center.resize(n_bins);
  prof.mean_log_power.assign(n_bins, 0.0);
  for (int b = 0; b < n_bins; ++b) prof.radial_center[b] = (b + 0.5) * width;

  for (const auto& x : samples) {
    if (!(x.shape == sh)) throw ShapeError("power_spectrum_profile: mixed sample shapes");
    const Spectrum c = to_centered(dft2(x));
    std::vector<double> power(sh.plane_size(), 0.0);
    for (int p = 0; p < sh.planes; ++p) {
      auto plane = c.bins.plane(p);
      for (std::size_t i = 0; i < power.size(); ++i) power[i] += std::norm(plane[i]);
    }
    std::vector<double> acc(n_bins, 0.0);
    for (std::size_t i = 0; i < power.size(); ++i) {
      acc[bin_of[i]] += std::log10(power[i] / sh.planes + kLogPowerFloor);
    }
    for (int b = 0; b < n_bins; ++b) {
      if (bin_count[b] > 0) prof.mean_log_power[b] += acc[b] / bin_count[b];
    }
  }
  for (int b = 0; b < n_bins; ++b) {
    prof.mean_log_power[b] = bin_count[b] > 0 ? prof.mean_log_power[b] / static_cast<double>(samples.size())
                                              : std::numeric_limits<double>::quiet_NaN();
  }
  return prof;
}

void write_profile_csv(const RadialProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "bin_index,radial_center,mean_log_power\n" << std::setprecision(9);
  for (std::size_t b = 0; b < profile.mean_log_power.size(); ++b) {
    out << b << ',' << profile.radial_center[b] << ',' << profile.mean_log_power[b] << '\n';
  }
}

}  // namespace freeup::spectral
