#include "mixgraph/resample.hpp"

#include <cmath>

namespace mixgraph {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;
constexpr double kKaiserBeta = 8.0;
constexpr int kHalfTaps = 32;  // per side, at the lower of the two rates

double bessel_i0(double x) {
  // power series; converges quickly for the beta range used here
  double sum = 1.0, term = 1.0;
  const double x2 = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= x2 / double(k * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

double kaiser(double frac) {  // frac in [-1, 1]
  const double a = 1.0 - frac * frac;
  if (a <= 0.0) return 0.0;
  return bessel_i0(kKaiserBeta * std::sqrt(a)) / bessel_i0(kKaiserBeta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(kPi * x) / (kPi * x);
}

}  // namespace

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  if (fs_in == fs_out) return {x.begin(), x.end()};
  const double ratio = fs_out / fs_in;
  const double cutoff = std::min(1.0, ratio);  // fraction of input Nyquist
  const double half_width = double(kHalfTaps) / cutoff;
  const std::size_t out_len = std::size_t(std::ceil(double(x.size()) * ratio));
  std::vector<double> y(out_len, 0.0);
  for (std::size_t j = 0; j < out_len; ++j) {
    const double t = double(j) / ratio;
    const long i_lo = long(std::ceil(t - half_width));
    const long i_hi = long(std::floor(t + half_width));
    double acc = 0.0;
    for (long i = std::max(0L, i_lo); i <= std::min(long(x.size()) - 1, i_hi); ++i) {
      const double tau = t - double(i);
      acc += x[std::size_t(i)] * cutoff * sinc(cutoff * tau) * kaiser(tau / half_width);
    }
    y[j] = acc;
  }
  return y;
}

Stereo resample(const Stereo& x, double fs_in, double fs_out) {
  Stereo out;
  out.left = resample(std::span<const double>(x.left), fs_in, fs_out);
  out.right = resample(std::span<const double>(x.right), fs_in, fs_out);
  return out;
}

}  // namespace mixgraph
