#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace mixgraph {

using cplx = std::complex<double>;

// Thin wrapper over FFTW (double precision, FFTW_ESTIMATE plans, cached per
// size). All transforms are out-of-place and accept arbitrary vectors.
//
// Conventions:
//   rfft(x, N)  -> bins 0..N/2           X[k] = sum_n x[n] e^{-j 2 pi k n / N}
//   irfft(X, N) -> real signal, 1/N normalized, Hermitian extension of X.
//                  Imaginary parts of the DC and (even N) Nyquist bins are
//                  ignored, so irfft is well defined for any input.
namespace fft {

std::size_t bin_count(std::size_t n);  // n/2 + 1

void rfft(std::span<const double> x, std::size_t n, std::vector<cplx>& out);
void irfft(std::span<const cplx> bins, std::size_t n, std::vector<double>& out);

// Adjoint maps of the linear transforms above, for reverse-mode gradients.
//
// rfft_adjoint: given dL/dX (complex, treating re/im as independent reals),
// returns dL/dx. Equals sum_k Re(G[k] e^{j 2 pi k n / N}) over stored bins.
void rfft_adjoint(std::span<const cplx> grad_bins, std::size_t n, std::vector<double>& grad_x);

// irfft_adjoint: given dL/dx for x = irfft(X), returns dL/dX.
void irfft_adjoint(std::span<const double> grad_x, std::size_t n, std::vector<cplx>& grad_bins);

// Complex transforms (unnormalized), used to batch stereo channel pairs
// through one FFT.
void cfft(std::span<const cplx> x, std::size_t n, std::vector<cplx>& out);
void icfft(std::span<const cplx> spectrum, std::size_t n, std::vector<cplx>& out);

// Smallest size >= n whose prime factors are all in {2, 3, 5, 7}; FFTW is
// O(n log n) for these.
std::size_t next_fast_size(std::size_t n);

}  // namespace fft

// Linear convolution via a shared zero-padded FFT. Keeps the operand spectra
// so the adjoint passes reuse them.
class ConvPlan {
 public:
  // y[i] = sum_j x[j] h[i + offset - j], for i in [0, out_len). offset = 0 is
  // plain causal convolution; offset = (len(h)-1)/2 centers a zero-phase FIR.
  ConvPlan(std::span<const double> x, std::span<const double> h, std::size_t out_len,
           std::size_t offset = 0);

  // Variant reusing a precomputed kernel spectrum (see spectrum_of). The
  // spectrum is borrowed; it must outlive the plan.
  ConvPlan(std::span<const double> x, std::size_t x_len_hint, const std::vector<cplx>& h_spectrum,
           std::size_t h_len, std::size_t fft_len, std::size_t out_len, std::size_t offset = 0);

  const std::vector<double>& output() const { return y_; }

  // dL/dx given dL/dy; length = len(x).
  void grad_x(std::span<const double> grad_y, std::vector<double>& out) const;
  // dL/dh given dL/dy; length = len(h).
  void grad_h(std::span<const double> grad_y, std::vector<double>& out) const;
  // Both adjoints with a single transform of grad_y.
  void grads(std::span<const double> grad_y, std::vector<double>& gx,
             std::vector<double>& gh) const;

  // Kernel spectrum at a given FFT size, for reuse across convolutions.
  static void spectrum_of(std::span<const double> h, std::size_t fft_len, std::vector<cplx>& out);
  static std::size_t fft_len_for(std::size_t x_len, std::size_t h_len) {
    return fft::next_fast_size(x_len + h_len - 1);
  }

 private:
  void grad_circular(std::span<const double> grad_y, const std::vector<cplx>& other_spectrum,
                     std::size_t out_len, std::vector<double>& out) const;

  const std::vector<cplx>& h_spectrum() const { return borrowed_h_ ? *borrowed_h_ : hspec_; }

  std::size_t nx_ = 0, nh_ = 0, nfft_ = 0, offset_ = 0;
  std::vector<cplx> xspec_, hspec_;
  const std::vector<cplx>* borrowed_h_ = nullptr;
  std::vector<double> y_;
};

// Reference O(n*m) convolution used by tests as the semantic oracle.
void direct_conv(std::span<const double> x, std::span<const double> h, std::size_t out_len,
                 std::size_t offset, std::vector<double>& out);

}  // namespace mixgraph
