#include <doctest.h>

#include <cmath>
#include <numbers>

#include "freeup/kernels.hpp"
#include "freeup/spectral.hpp"
#include "support.hpp"

using namespace freeup;
using namespace freeup::spectral;
using freeup::testing::max_abs_diff;
using freeup::testing::random_volume;

namespace {

// Direct evaluation of one DFT bin, independent of the library kernels.
Complex dft_bin(const Volume& x, int p, int u, int v) {
  const int H = x.shape.rows, W = x.shape.cols;
  Complex acc = 0.0;
  for (int h = 0; h < H; ++h) {
    for (int w = 0; w < W; ++w) {
      const double ang = -2.0 * std::numbers::pi * (double(u) * h / H + double(v) * w / W);
      acc += x.at(p, h, w) * Complex(std::cos(ang), std::sin(ang));
    }
  }
  return acc;
}

}  // namespace

TEST_SUITE("spectral") {

TEST_CASE("dft2 of constants and impulses") {
  Volume c(Shape3{2, 8, 8}, 0.75);
  auto s = dft2(c);
  CHECK(s.layout == Layout::natural);
  CHECK(std::abs(s.bins.at(0, 0, 0) - Complex(0.75 * 64, 0)) < 1e-9);
  for (std::size_t i = 0; i < s.bins.data.size(); ++i) {
    if (i % 64 != 0) CHECK(std::abs(s.bins.data[i]) < 1e-5);
  }

  Volume imp(Shape3{1, 8, 8});
  imp.at(0, 0, 0) = 1.0;
  for (auto z : dft2(imp).bins.data) CHECK(std::abs(z - Complex(1, 0)) < 1e-12);
}

TEST_CASE("dft2 matches direct summation, including non power-of-two sizes") {
  std::mt19937_64 rng(1);
  for (Shape3 s : {Shape3{2, 8, 8}, Shape3{1, 6, 10}, Shape3{1, 5, 3}}) {
    auto x = random_volume(s, rng, -1, 1);
    auto f = dft2(x);
    for (int p = 0; p < s.planes; ++p) {
      for (int u = 0; u < s.rows; ++u) {
        for (int v = 0; v < s.cols; ++v) CHECK(std::abs(f.bins.at(p, u, v) - dft_bin(x, p, u, v)) < 1e-9);
      }
    }
  }
}

TEST_CASE("round trip, Parseval and conjugate symmetry on random samples") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_volume(Shape3{8, 32, 32}, rng);
    auto f = dft2(x);
    CHECK(max_abs_diff(idft2(f), x) < 1e-5);

    double lhs = 0.0, rhs = 0.0;
    for (double v : x.data) lhs += v * v;
    for (auto z : f.bins.data) rhs += std::norm(z);
    rhs /= 32.0 * 32.0;
    CHECK(std::abs(lhs - rhs) / lhs < 1e-5);

    for (int u = 0; u < 32; ++u) {
      for (int v = 0; v < 32; ++v) {
        auto a = f.bins.at(3, u, v), b = f.bins.at(3, (32 - u) % 32, (32 - v) % 32);
        CHECK(std::abs(a - std::conj(b)) < 1e-9);
      }
    }
  }
  auto zero = idft2(Spectrum{Array3<Complex>(Shape3{1, 4, 4}), Layout::natural});
  for (double v : zero.data) CHECK(v == 0.0);
}

TEST_CASE("idft2 rejects a non-symmetric spectrum") {
  Spectrum s{Array3<Complex>(Shape3{1, 4, 4}), Layout::natural};
  s.bins.at(0, 1, 0) = Complex(0, 1.0);
  CHECK_THROWS_AS(idft2(s), SpectrumError);
}

TEST_CASE("centering moves DC to the middle and back") {
  std::mt19937_64 rng(3);
  auto x = random_volume(Shape3{1, 6, 8}, rng);
  auto f = dft2(x);
  auto c = to_centered(f);
  CHECK(c.layout == Layout::centered);
  CHECK(std::abs(c.bins.at(0, 3, 4) - f.bins.at(0, 0, 0)) < 1e-15);
  CHECK(c.bins.data[centered_index(2, 5, 6, 8)] == f.bins.at(0, 2, 5));
  auto back = to_natural(c);
  CHECK(back.bins.data == f.bins.data);
  CHECK(max_abs_diff(idft2(c), x) < 1e-9);
}

TEST_CASE("gaussian masks") {
  auto m = gaussian_masks(32, 32, 5.0);
  const int dc = 16 * 32 + 16;
  CHECK(m.low[dc] == 1.0);
  CHECK(m.high[dc] == 0.0);
  for (std::size_t i = 0; i < m.low.size(); ++i) {
    CHECK(m.low[i] + m.high[i] == 1.0);
    CHECK(m.low[i] >= 0.0);
    CHECK(m.low[i] <= 1.0);
  }
  // d = D exactly at (16+5, 16) and (16+3, 16+4).
  CHECK(m.low[21 * 32 + 16] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(m.low[19 * 32 + 20] == doctest::Approx(0.6065306597).epsilon(1e-9));
  CHECK_THROWS_AS(gaussian_masks(32, 32, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_masks(32, 32, -1.0), std::invalid_argument);

  auto nat = m.low_natural();
  CHECK(nat[0] == 1.0);
}

TEST_CASE("decouple examples") {
  Volume c(Shape3{2, 32, 32}, 0.4);
  auto b = decouple(c, 5.0);
  for (double v : b.high.data) CHECK(std::abs(v) < 1e-5);
  CHECK(max_abs_diff(b.low, c) < 1e-5);

  Volume chk(Shape3{1, 32, 32});
  for (int h = 0; h < 32; ++h) {
    for (int w = 0; w < 32; ++w) chk.at(0, h, w) = ((h + w) % 2 == 0) ? 1.0 : -1.0;
  }
  auto cb = decouple(chk, 5.0);
  double mx = 0.0;
  for (double v : cb.low.data) mx = std::max(mx, std::abs(v));
  CHECK(mx == doctest::Approx(std::exp(-512.0 / 50.0)).epsilon(1e-6));
  CHECK(mx == doctest::Approx(3.6e-5).epsilon(0.02));
}

TEST_CASE("decouple is complementary and linear") {
  std::mt19937_64 rng(4);
  const auto masks = gaussian_masks(32, 32, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_volume(Shape3{8, 32, 32}, rng);
    auto y = random_volume(Shape3{8, 32, 32}, rng);
    auto bx = decouple(x, masks), by = decouple(y, masks);
    Volume sum(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) sum.data[i] = bx.low.data[i] + bx.high.data[i];
    CHECK(max_abs_diff(sum, x) < 1e-4);

    const double a = 1.7, c = -0.3;
    Volume mix(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) mix.data[i] = a * x.data[i] + c * y.data[i];
    auto bm = decouple(mix, masks);
    Volume lin_low(x.shape), lin_high(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      lin_low.data[i] = a * bx.low.data[i] + c * by.low.data[i];
      lin_high.data[i] = a * bx.high.data[i] + c * by.high.data[i];
    }
    CHECK(max_abs_diff(bm.low, lin_low) < 1e-4);
    CHECK(max_abs_diff(bm.high, lin_high) < 1e-4);
  }
}

TEST_CASE("re-filtering the low band changes it less than filtering the raw sample") {
  std::mt19937_64 rng(5);
  const auto masks = gaussian_masks(32, 32, 5.0);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_volume(Shape3{2, 32, 32}, rng);
    auto b = decouple(x, masks);
    auto bb = decouple(b.low, masks);
    CHECK(max_abs_diff(bb.low, b.low) < max_abs_diff(b.low, x));
  }
}

TEST_CASE("power spectrum profiles") {
  std::mt19937_64 rng(6);
  std::vector<Volume> consts(3, Volume(Shape3{2, 16, 16}, 0.5));
  auto pc = power_spectrum_profile(consts, 6);
  REQUIRE(pc.mean_log_power.size() == 6);
  CHECK(pc.mean_log_power[0] > -11.0);
  for (int b = 1; b < 6; ++b) CHECK(pc.mean_log_power[b] == doctest::Approx(-12.0).epsilon(1e-6));
  CHECK(pc.radial_center[0] < pc.radial_center[5]);

  std::vector<Volume> noise;
  for (int i = 0; i < 100; ++i) noise.push_back(random_volume(Shape3{1, 32, 32}, rng));
  auto pn = power_spectrum_profile(noise, 10);
  auto [lo, hi] = std::minmax_element(pn.mean_log_power.begin() + 1, pn.mean_log_power.end());
  CHECK(*hi - *lo < 1.0);

  std::vector<Volume> blobs;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Volume v(Shape3{1, 32, 32});
    const double ch = 16 + 3 * n(rng), cw = 16 + 3 * n(rng), sig = 1.5 + 0.5 * std::abs(n(rng));
    for (int h = 0; h < 32; ++h) {
      for (int w = 0; w < 32; ++w) {
        v.at(0, h, w) = std::exp(-((h - ch) * (h - ch) + (w - cw) * (w - cw)) / (2 * sig * sig));
      }
    }
    blobs.push_back(v);
  }
  auto pb = power_spectrum_profile(blobs, 16);
  for (int b = 1; b < 8; ++b) CHECK(pb.mean_log_power[b] < pb.mean_log_power[b - 1]);

  CHECK_THROWS_AS(power_spectrum_profile(std::vector<Volume>{}, 4), std::invalid_argument);
  CHECK_THROWS_AS(power_spectrum_profile(consts, 1), std::invalid_argument);
}

}  // TEST_SUITE
