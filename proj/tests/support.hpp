#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>

#include "freeup/tensor.hpp"

namespace freeup::testing {

inline Volume random_volume(const Shape3& s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Volume v(s);
  for (auto& x : v.data) x = u(rng);
  return v;
}

inline double max_abs_diff(const Volume& a, const Volume& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline double rel_err(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f at 0 refined by Ridders' extrapolation over a
/// shrinking step sequence starting at h0. `f(d)` returns the objective with
/// the variable moved by d; it may round d in place to the step actually
/// applied when the variable is stored in reduced precision. The returned
/// error is the extrapolation's own estimate of its accuracy.
struct Derivative {
  double value = 0.0;
  double error = 0.0;
};

template <class F>
Derivative ridders_derivative(F&& f, double h0) {
  constexpr int kTab = 10;
  constexpr double kCon = 1.4, kCon2 = kCon * kCon, kSafe = 2.0;
  double a[kTab][kTab];
  auto central = [&](double h) {
    double up = h, down = -h;  // may be rounded by f
    const double fp = f(up), fm = f(down);
    return (fp - fm) / (up - down);
  };
  double h = h0, err = std::numeric_limits<double>::max(), ans = 0.0;
  a[0][0] = central(h);
  ans = a[0][0];
  for (int i = 1; i < kTab; ++i) {
    h /= kCon;
    a[0][i] = central(h);
    double fac = kCon2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kCon2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        ans = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return {ans, err};
}

/// Derivative of a piecewise-smooth objective, or nothing when the point is
/// too close to a kink for finite differences to resolve it: two Ridders
/// runs started at h_wide and h_narrow must agree and both be converged to
/// `tol` relative.
template <class F>
std::optional<double> smooth_derivative(F&& f, double h_wide = 1e-2, double h_narrow = 1e-3, double tol = 1e-3) {
  const Derivative a = ridders_derivative(f, h_wide), b = ridders_derivative(f, h_narrow);
  const double scale = std::max({std::abs(a.value), std::abs(b.value), 1e-4});
  if (a.error > tol * scale || b.error > tol * scale || std::abs(a.value - b.value) > tol * scale) return std::nullopt;
  return b.value;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("freeup_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace freeup::testing
