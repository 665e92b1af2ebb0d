#include <doctest.h>

#include <cmath>

#include "mixgraph/fft.hpp"
#include "mixgraph/rng.hpp"

using namespace mixgraph;

namespace {

std::vector<double> random_signal(std::size_t n, Rng& rng, double amp = 1.0) {
  std::vector<double> x(n);
  for (auto& v : x) v = amp * (2.0 * rng.next_double() - 1.0);
  return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("rfft/irfft round trip") {
  Rng rng(1);
  for (std::size_t n : {8u, 15u, 384u, 512u, 2047u, 4096u}) {
    auto x = random_signal(n, rng);
    std::vector<cplx> bins;
    fft::rfft(x, n, bins);
    REQUIRE(bins.size() == n / 2 + 1);
    std::vector<double> back;
    fft::irfft(bins, n, back);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(back[i] - x[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("rfft matches a direct DFT") {
  Rng rng(2);
  const std::size_t n = 96;
  auto x = random_signal(n, rng);
  std::vector<cplx> bins;
  fft::rfft(x, n, bins);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    cplx ref(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ang = -2.0 * 3.14159265358979323846 * double(k) * double(i) / double(n);
      ref += x[i] * cplx(std::cos(ang), std::sin(ang));
    }
    CHECK(std::abs(bins[k] - ref) < 1e-10);
  }
}

// Adjoint identity <A x, G> = <x, A^T G> for both transform directions.
TEST_CASE("rfft adjoint dot test") {
  Rng rng(3);
  for (std::size_t n : {16u, 31u, 384u}) {
    auto x = random_signal(n, rng);
    std::vector<cplx> bins;
    fft::rfft(x, n, bins);
    std::vector<cplx> g(bins.size());
    for (auto& v : g) v = cplx(2.0 * rng.next_double() - 1.0, 2.0 * rng.next_double() - 1.0);
    // X is the rfft of a real signal: DC (and Nyquist) imaginary parts carry
    // no sensitivity, so test with their grads zeroed.
    g[0] = cplx(g[0].real(), 0.0);
    if (n % 2 == 0) g[n / 2] = cplx(g[n / 2].real(), 0.0);

    double lhs = 0.0;
    for (std::size_t k = 0; k < bins.size(); ++k)
      lhs += bins[k].real() * g[k].real() + bins[k].imag() * g[k].imag();
    std::vector<double> gx;
    fft::rfft_adjoint(g, n, gx);
    CHECK(std::abs(lhs - dot(x, gx)) < 1e-9 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("irfft adjoint dot test") {
  Rng rng(4);
  for (std::size_t n : {16u, 31u, 384u, 2047u}) {
    const std::size_t bins = n / 2 + 1;
    std::vector<cplx> spec(bins);
    for (auto& v : spec) v = cplx(2.0 * rng.next_double() - 1.0, 2.0 * rng.next_double() - 1.0);
    spec[0] = cplx(spec[0].real(), 0.0);
    if (n % 2 == 0) spec[n / 2] = cplx(spec[n / 2].real(), 0.0);

    std::vector<double> x;
    fft::irfft(spec, n, x);
    auto g = random_signal(n, rng);
    std::vector<cplx> gspec;
    fft::irfft_adjoint(g, n, gspec);

    const double lhs = dot(x, g);
    double rhs = 0.0;
    for (std::size_t k = 0; k < bins; ++k)
      rhs += spec[k].real() * gspec[k].real() + spec[k].imag() * gspec[k].imag();
    CHECK(std::abs(lhs - rhs) < 1e-9 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("fft convolution equals direct convolution") {
  Rng rng(5);
  for (int rep = 0; rep < 8; ++rep) {
    const std::size_t nx = 200 + std::size_t(rng.next_below(800));
    const std::size_t nh = 1 + std::size_t(rng.next_below(300));
    const std::size_t offset = rep % 2 == 0 ? 0 : nh / 2;
    auto x = random_signal(nx, rng);
    auto h = random_signal(nh, rng);
    ConvPlan plan(x, h, nx, offset);
    std::vector<double> ref;
    direct_conv(x, h, nx, offset, ref);
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < nx; ++i) {
      worst = std::max(worst, std::abs(plan.output()[i] - ref[i]));
      scale = std::max(scale, std::abs(ref[i]));
    }
    CHECK(worst <= 1e-6 * std::max(1.0, scale));
  }
}

TEST_CASE("convolution gradients pass the adjoint dot test") {
  Rng rng(6);
  const std::size_t nx = 500, nh = 101, offset = 50;
  auto x = random_signal(nx, rng);
  auto h = random_signal(nh, rng);
  ConvPlan plan(x, h, nx, offset);
  auto gy = random_signal(nx, rng);

  std::vector<double> gx, gh;
  plan.grad_x(gy, gx);
  plan.grad_h(gy, gh);

  const double lhs = dot(plan.output(), gy);
  // <y, gy> = <x, grad_x> when y is linear in x; same identity for h.
  CHECK(std::abs(lhs - dot(x, gx)) < 1e-9 * std::max(1.0, std::abs(lhs)));
  CHECK(std::abs(lhs - dot(h, gh)) < 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("next_fast_size is 7-smooth and minimal enough") {
  CHECK(fft::next_fast_size(1) == 1);
  CHECK(fft::next_fast_size(7) == 7);
  CHECK(fft::next_fast_size(11) == 12);
  CHECK(fft::next_fast_size(121) == 125);
  for (std::size_t n : {1000u, 44100u, 114000u}) {
    std::size_t m = fft::next_fast_size(n);
    CHECK(m >= n);
    for (std::size_t f : {2u, 3u, 5u, 7u})
      while (m % f == 0) m /= f;
    CHECK(m == 1);
  }
}
