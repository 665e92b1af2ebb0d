#include "mixgraph/fft.hpp"

#include <fftw3.h>

#include <malloc.h>

#include <cstring>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

namespace mixgraph {
namespace fft {
namespace {

// The render paths cycle multi-megabyte spectra every step; keeping those
// allocations inside the arena (instead of mmap/munmap round trips with page
// zeroing) roughly halves a training step.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();

// FFTW planner is not thread-safe; executions with distinct buffers are.
std::mutex g_plan_mutex;

struct PlanPair {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  // Dummy buffers the plans were created with (kept alive for FFTW).
  double* real = nullptr;
  fftw_complex* cplx_buf = nullptr;
};

struct CplxPlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
};

// Plans execute on their own FFTW-aligned buffers (SIMD codelets stay
// enabled); callers' data is copied across. One plan cache per thread, since
// the buffers double as scratch; creation is serialized for the planner.
PlanPair& plans_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, PlanPair> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  PlanPair p;
  p.real = fftw_alloc_real(n);
  p.cplx_buf = fftw_alloc_complex(n / 2 + 1);
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    p.r2c = fftw_plan_dft_r2c_1d(int(n), p.real, p.cplx_buf, FFTW_ESTIMATE);
    p.c2r = fftw_plan_dft_c2r_1d(int(n), p.cplx_buf, p.real, FFTW_ESTIMATE);
  }
  if (!p.r2c || !p.c2r) throw std::runtime_error("fftw plan creation failed");
  return cache.emplace(n, p).first->second;
}

CplxPlanPair& cplx_plans_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, CplxPlanPair> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  CplxPlanPair p;
  p.in = fftw_alloc_complex(n);
  p.out = fftw_alloc_complex(n);
  {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    p.fwd = fftw_plan_dft_1d(int(n), p.in, p.out, FFTW_FORWARD, FFTW_ESTIMATE);
    p.bwd = fftw_plan_dft_1d(int(n), p.in, p.out, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  if (!p.fwd || !p.bwd) throw std::runtime_error("fftw plan creation failed");
  return cache.emplace(n, p).first->second;
}

}  // namespace

std::size_t bin_count(std::size_t n) { return n / 2 + 1; }

void rfft(std::span<const double> x, std::size_t n, std::vector<cplx>& out) {
  if (x.size() > n) throw std::invalid_argument("rfft: input longer than transform");
  auto& p = plans_for(n);
  if (!x.empty()) std::memcpy(p.real, x.data(), x.size() * sizeof(double));
  if (x.size() < n) std::memset(p.real + x.size(), 0, (n - x.size()) * sizeof(double));
  fftw_execute(p.r2c);
  out.resize(n / 2 + 1);
  std::memcpy(out.data(), p.cplx_buf, (n / 2 + 1) * sizeof(cplx));
}

void irfft(std::span<const cplx> bins, std::size_t n, std::vector<double>& out) {
  if (bins.size() != n / 2 + 1) throw std::invalid_argument("irfft: bin count mismatch");
  auto& p = plans_for(n);
  std::memcpy(p.cplx_buf, bins.data(), bins.size() * sizeof(cplx));
  p.cplx_buf[0][1] = 0.0;
  if (n % 2 == 0) p.cplx_buf[n / 2][1] = 0.0;
  fftw_execute(p.c2r);
  out.resize(n);
  const double scale = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = p.real[i] * scale;
}

void rfft_adjoint(std::span<const cplx> grad_bins, std::size_t n, std::vector<double>& grad_x) {
  // d/dx of X = rfft(x): grad_x[n] = sum_k Re(G[k] e^{j 2 pi k n / N}).
  // Expressed through the unnormalized c2r transform with interior bins halved.
  auto& p = plans_for(n);
  std::memcpy(p.cplx_buf, grad_bins.data(), grad_bins.size() * sizeof(cplx));
  const std::size_t nyq = (n % 2 == 0) ? n / 2 : std::size_t(-1);
  for (std::size_t k = 1; k < n / 2 + 1; ++k)
    if (k != nyq) {
      p.cplx_buf[k][0] *= 0.5;
      p.cplx_buf[k][1] *= 0.5;
    }
  p.cplx_buf[0][1] = 0.0;
  if (nyq != std::size_t(-1)) p.cplx_buf[nyq][1] = 0.0;
  fftw_execute(p.c2r);
  grad_x.resize(n);
  std::memcpy(grad_x.data(), p.real, n * sizeof(double));
}

void irfft_adjoint(std::span<const double> grad_x, std::size_t n, std::vector<cplx>& grad_bins) {
  // d/dX of x = irfft(X): interior bins pick up a factor 2/N, ends 1/N, and
  // the imaginary parts of DC/Nyquist are zero by the irfft convention.
  std::vector<cplx> full;
  rfft(grad_x, n, full);
  grad_bins.assign(full.begin(), full.end());
  const double inv_n = 1.0 / double(n);
  const std::size_t nyq = (n % 2 == 0) ? n / 2 : std::size_t(-1);
  for (std::size_t k = 0; k < grad_bins.size(); ++k) {
    const bool edge = (k == 0 || k == nyq);
    grad_bins[k] *= edge ? inv_n : 2.0 * inv_n;
    if (edge) grad_bins[k] = cplx(grad_bins[k].real(), 0.0);
  }
}

void cfft(std::span<const cplx> x, std::size_t n, std::vector<cplx>& out) {
  if (x.size() > n) throw std::invalid_argument("cfft: input longer than transform");
  auto& p = cplx_plans_for(n);
  std::memcpy(p.in, x.data(), x.size() * sizeof(cplx));
  if (x.size() < n) std::memset(p.in + x.size(), 0, (n - x.size()) * sizeof(cplx));
  fftw_execute(p.fwd);
  out.resize(n);
  std::memcpy(out.data(), p.out, n * sizeof(cplx));
}

void icfft(std::span<const cplx> spectrum, std::size_t n, std::vector<cplx>& out) {
  if (spectrum.size() != n) throw std::invalid_argument("icfft: size mismatch");
  auto& p = cplx_plans_for(n);
  std::memcpy(p.in, spectrum.data(), n * sizeof(cplx));
  fftw_execute(p.bwd);
  out.resize(n);
  std::memcpy(out.data(), p.out, n * sizeof(cplx));
}

std::size_t next_fast_size(std::size_t n) {
  if (n == 0) return 1;
  while (true) {
    std::size_t m = n;
    for (std::size_t f : {2, 3, 5, 7})
      while (m % f == 0) m /= f;
    if (m == 1) return n;
    ++n;
  }
}

}  // namespace fft

ConvPlan::ConvPlan(std::span<const double> x, std::span<const double> h, std::size_t out_len,
                   std::size_t offset)
    : nx_(x.size()), nh_(h.size()), offset_(offset) {
  nfft_ = fft_len_for(nx_, nh_);
  fft::rfft(x, nfft_, xspec_);
  fft::rfft(h, nfft_, hspec_);
  std::vector<cplx> prod(xspec_.size());
  for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = xspec_[k] * hspec_[k];
  std::vector<double> full;
  fft::irfft(prod, nfft_, full);
  y_.assign(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + offset_;
    if (j < full.size()) y_[i] = full[j];
  }
}

ConvPlan::ConvPlan(std::span<const double> x, std::size_t x_len_hint,
                   const std::vector<cplx>& h_spectrum, std::size_t h_len, std::size_t fft_len,
                   std::size_t out_len, std::size_t offset)
    : nx_(x_len_hint), nh_(h_len), nfft_(fft_len), offset_(offset), borrowed_h_(&h_spectrum) {
  if (nx_ + nh_ - 1 > nfft_) throw std::invalid_argument("ConvPlan: fft_len too small");
  fft::rfft(x, nfft_, xspec_);
  const auto& hs = *borrowed_h_;
  std::vector<cplx> prod(xspec_.size());
  for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = xspec_[k] * hs[k];
  std::vector<double> full;
  fft::irfft(prod, nfft_, full);
  y_.assign(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + offset_;
    if (j < full.size()) y_[i] = full[j];
  }
}

void ConvPlan::grad_circular(std::span<const double> grad_y, const std::vector<cplx>& other,
                             std::size_t out_len, std::vector<double>& out) const {
  // Place grad_y at its absolute position inside the circular buffer, then
  // correlate: grad = irfft(G * conj(other)). The zero padding guarantees no
  // wrap-around touches the retained samples.
  std::vector<double> padded(nfft_, 0.0);
  for (std::size_t i = 0; i < grad_y.size() && i + offset_ < nfft_; ++i)
    padded[i + offset_] = grad_y[i];
  std::vector<cplx> gspec;
  fft::rfft(padded, nfft_, gspec);
  for (std::size_t k = 0; k < gspec.size(); ++k) gspec[k] *= std::conj(other[k]);
  std::vector<double> full;
  fft::irfft(gspec, nfft_, full);
  out.assign(full.begin(), full.begin() + out_len);
}

void ConvPlan::grad_x(std::span<const double> grad_y, std::vector<double>& out) const {
  grad_circular(grad_y, h_spectrum(), nx_, out);
}

void ConvPlan::grad_h(std::span<const double> grad_y, std::vector<double>& out) const {
  grad_circular(grad_y, xspec_, nh_, out);
}

void ConvPlan::grads(std::span<const double> grad_y, std::vector<double>& gx,
                     std::vector<double>& gh) const {
  std::vector<double> padded(nfft_, 0.0);
  for (std::size_t i = 0; i < grad_y.size() && i + offset_ < nfft_; ++i)
    padded[i + offset_] = grad_y[i];
  std::vector<cplx> gspec;
  fft::rfft(padded, nfft_, gspec);
  const auto& hs = h_spectrum();
  std::vector<cplx> prod(gspec.size());
  std::vector<double> full;
  for (std::size_t k = 0; k < gspec.size(); ++k) prod[k] = gspec[k] * std::conj(hs[k]);
  fft::irfft(prod, nfft_, full);
  gx.assign(full.begin(), full.begin() + std::ptrdiff_t(nx_));
  for (std::size_t k = 0; k < gspec.size(); ++k) prod[k] = gspec[k] * std::conj(xspec_[k]);
  fft::irfft(prod, nfft_, full);
  gh.assign(full.begin(), full.begin() + std::ptrdiff_t(nh_));
}

void ConvPlan::spectrum_of(std::span<const double> h, std::size_t fft_len, std::vector<cplx>& out) {
  fft::rfft(h, fft_len, out);
}

void direct_conv(std::span<const double> x, std::span<const double> h, std::size_t out_len,
                 std::size_t offset, std::vector<double>& out) {
  out.assign(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t m = i + offset;
    double acc = 0.0;
    const std::size_t j_lo = (m >= h.size() - 1) ? m - (h.size() - 1) : 0;
    const std::size_t j_hi = std::min(m, x.size() - 1);
    for (std::size_t j = j_lo; j <= j_hi; ++j) acc += x[j] * h[m - j];
    out[i] = acc;
  }
}

}  // namespace mixgraph
