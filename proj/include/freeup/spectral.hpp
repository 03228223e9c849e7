#pragma once

// Per-plane 2-D Fourier analysis and Gaussian frequency decoupling.

#include <complex>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "freeup/tensor.hpp"

namespace freeup::spectral {

using Complex = std::complex<double>;

/// The inverse transform produced a non-negligible imaginary part.
class SpectrumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Layout { natural, centered };

struct Spectrum {
  Array3<Complex> bins;
  Layout layout = Layout::natural;
};

/// Largest imaginary residue idft2 silently drops (scaled by max(1, max|re|)).
inline constexpr double kImagTolerance = 1e-5;

/// Unnormalized forward DFT of each plane, natural layout.
Spectrum dft2(const Volume& x);
/// Inverse DFT with the 1/(HW) factor; accepts either layout.
Volume idft2(const Spectrum& spectrum);

/// Moves the DC bin to (H/2, W/2) and back.
Spectrum to_centered(const Spectrum& s);
Spectrum to_natural(const Spectrum& s);

/// Index in a centered H x W grid of natural-layout bin (u, v).
inline int centered_index(int u, int v, int rows, int cols) {
  return ((u + rows / 2) % rows) * cols + (v + cols / 2) % cols;
}

/// Gaussian low/high pass pair on the centered grid; high = 1 - low.
struct GaussianMasks {
  int rows = 0;
  int cols = 0;
  double cutoff = 0.0;
  std::vector<double> low;   // centered layout
  std::vector<double> high;  // centered layout

  /// The same masks re-indexed to natural layout, for direct use on dft2 output.
  std::vector<double> low_natural() const;
  std::vector<double> high_natural() const;
};

GaussianMasks gaussian_masks(int rows, int cols, double cutoff);

struct FrequencyBands {
  Volume low;
  Volume high;
};

FrequencyBands decouple(const Volume& x, double cutoff);
/// Same as above with masks built once by the caller.
FrequencyBands decouple(const Volume& x, const GaussianMasks& masks);

/// Mean log10 power per radial bin, averaged over samples.
struct RadialProfile {
  std::vector<double> radial_center;
  std::vector<double> mean_log_power;
};

inline constexpr double kLogPowerFloor = 1e-12;

RadialProfile power_spectrum_profile(std::span<const Volume> samples, int n_bins);

/// CSV with header bin_index,radial_center,mean_log_power.
void write_profile_csv(const RadialProfile& profile, const std::filesystem::path& path);

}  // namespace freeup::spectral
