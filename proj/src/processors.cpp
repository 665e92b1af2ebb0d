#include "mixgraph/processors.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cstring>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include "mixgraph/rng.hpp"

namespace mixgraph {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kDbToLn = 0.11512925464970229;  // ln(10)/20
constexpr double kLnToDb10 = 4.342944819032518;  // 10/ln(10)

std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j) w[j] = 0.5 - 0.5 * std::cos(kTwoPi * double(j) / double(n));
  return w;
}

std::vector<double> hann_symmetric(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j)
    w[j] = 0.5 - 0.5 * std::cos(kTwoPi * double(j) / double(n - 1));
  return w;
}

const std::vector<double>& eq_window() {
  static const std::vector<double> w = hann_symmetric(kEqFirLen);
  return w;
}

const std::vector<double>& delay_fir_window() {
  static const std::vector<double> w = hann_symmetric(kDelayFirLen);
  return w;
}

const std::vector<double>& reverb_window() {
  static const std::vector<double> w = hann_periodic(kReverbFft);
  return w;
}

std::size_t reverb_frames(std::size_t n_ir) {
  if (n_ir < kReverbFft)
    throw std::invalid_argument("reverb: impulse response shorter than one STFT frame");
  return 1 + (n_ir - kReverbFft) / kReverbHop;
}

// ---- global memo tables ----------------------------------------------------

std::mutex g_memo_mutex;

// STFT of the per-node noise, keyed by (seed, ir length). Layout: [channel]
// then frame-major, kReverbBins bins per frame.
const std::vector<std::vector<cplx>>& noise_spectra(std::uint64_t seed, std::size_t n_ir) {
  static std::unordered_map<std::uint64_t, std::vector<std::vector<cplx>>> cache;
  const std::uint64_t key = seed * 0x9e3779b97f4a7c15ULL ^ n_ir;
  std::lock_guard<std::mutex> lock(g_memo_mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const std::size_t frames = reverb_frames(n_ir);
  const auto& win = reverb_window();
  Rng rng(seed);
  std::vector<std::vector<cplx>> spectra(2);
  std::vector<double> noise(n_ir), frame(kReverbFft);
  std::vector<cplx> bins;
  for (int c = 0; c < 2; ++c) {
    for (auto& v : noise) v = 2.0 * rng.next_double() - 1.0;
    spectra[c].resize(frames * kReverbBins);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t j = 0; j < kReverbFft; ++j) frame[j] = noise[t * kReverbHop + j] * win[j];
      fft::rfft(frame, kReverbFft, bins);
      std::copy(bins.begin(), bins.end(), spectra[c].begin() + t * kReverbBins);
    }
  }
  return cache.emplace(key, std::move(spectra)).first->second;
}

// Reciprocal of the overlap-add normalization envelope (sum of squared
// windows, floored), per ir length.
const std::vector<double>& ola_inv_envelope(std::size_t n_ir) {
  static std::unordered_map<std::size_t, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(g_memo_mutex);
  auto it = cache.find(n_ir);
  if (it != cache.end()) return it->second;
  const std::size_t frames = reverb_frames(n_ir);
  const auto& win = reverb_window();
  std::vector<double> env(n_ir, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < kReverbFft; ++j) env[t * kReverbHop + j] += win[j] * win[j];
  for (auto& v : env) v = 1.0 / std::max(v, 1e-8);
  return cache.emplace(n_ir, std::move(env)).first->second;
}

// Content-hash memo for the expensive per-node kernels (equalizer FIR
// spectrum, reverb/delay IR spectra). Parameters freeze during pruning
// trials, so every window after the first is a hit; training always misses.
struct SpectraEntry {
  std::vector<cplx> left, right;  // kernel spectra at the conv FFT size
  std::size_t kernel_len = 0;
};

struct SpectraKey {
  std::uint64_t h1 = 0xcbf29ce484222325ULL, h2 = 0x9e3779b97f4a7c15ULL;
  void mix(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h1 = (h1 ^ p[i]) * 0x100000001b3ULL;
      h2 = (h2 + p[i]) * 0xff51afd7ed558ccdULL;
      h2 ^= h2 >> 33;
    }
  }
  void mix_block(const NodeParams& params, const char* name) {
    const auto b = params.block(name);
    mix(b.data(), b.size() * sizeof(double));
  }
  bool operator==(const SpectraKey& o) const { return h1 == o.h1 && h2 == o.h2; }
};

struct SpectraKeyHash {
  std::size_t operator()(const SpectraKey& k) const { return std::size_t(k.h1 ^ k.h2); }
};

using SpectraMap =
    std::unordered_map<SpectraKey, std::shared_ptr<const SpectraEntry>, SpectraKeyHash>;

SpectraMap& spectra_cache() {
  static SpectraMap cache;
  return cache;
}

std::shared_ptr<const SpectraEntry> spectra_memo_get(const SpectraKey& key) {
  std::lock_guard<std::mutex> lock(g_memo_mutex);
  auto& cache = spectra_cache();
  auto it = cache.find(key);
  return it == cache.end() ? nullptr : it->second;
}

void spectra_memo_put(const SpectraKey& key, std::shared_ptr<const SpectraEntry> entry) {
  static constexpr std::size_t kCapacity = 96;
  std::lock_guard<std::mutex> lock(g_memo_mutex);
  auto& cache = spectra_cache();
  if (cache.size() >= kCapacity) cache.clear();
  cache[key] = std::move(entry);
}

// cos(2 pi k j / n_ir) for j = 1..19, row-major over bins: table[k*19 + (j-1)].
const std::vector<double>& delay_cos_table(std::size_t n_ir) {
  static std::unordered_map<std::size_t, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(g_memo_mutex);
  auto it = cache.find(n_ir);
  if (it != cache.end()) return it->second;
  const std::size_t bins = n_ir / 2 + 1;
  const std::size_t half = kDelayFirLen / 2;  // 19
  std::vector<double> table(bins * half);
  for (std::size_t k = 0; k < bins; ++k) {
    const double base = kTwoPi * double(k) / double(n_ir);
    for (std::size_t j = 1; j <= half; ++j) table[k * half + (j - 1)] = std::cos(base * double(j));
  }
  return cache.emplace(n_ir, std::move(table)).first->second;
}

// ---- zero-phase FIR synthesis ----------------------------------------------

// FIR from log magnitudes: exp -> zero-phase irfft -> center -> window.
// n_fir odd, bins = (n_fir+1)/2.
void fir_from_log_mag(std::span<const double> log_mag, std::size_t n_fir,
                      const std::vector<double>& window, std::vector<double>& fir,
                      std::vector<double>& mag_out) {
  const std::size_t bins = n_fir / 2 + 1;
  assert(log_mag.size() == bins);
  mag_out.resize(bins);
  std::vector<cplx> spec(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    mag_out[k] = std::exp(log_mag[k]);
    spec[k] = cplx(mag_out[k], 0.0);
  }
  std::vector<double> h0;
  fft::irfft(spec, n_fir, h0);
  const std::size_t center = n_fir / 2;
  fir.resize(n_fir);
  for (std::size_t n = 0; n < n_fir; ++n) fir[n] = h0[(n + n_fir - center) % n_fir] * window[n];
}

// Adjoint of fir_from_log_mag: maps dL/dfir back to dL/dlog_mag (accumulates).
void fir_from_log_mag_grad(std::span<const double> grad_fir, std::span<const double> mag,
                           std::size_t n_fir, const std::vector<double>& window,
                           std::span<double> grad_log_mag) {
  const std::size_t center = n_fir / 2;
  std::vector<double> gh0(n_fir);
  for (std::size_t n = 0; n < n_fir; ++n)
    gh0[(n + n_fir - center) % n_fir] = grad_fir[n] * window[n];
  std::vector<cplx> gspec;
  fft::irfft_adjoint(gh0, n_fir, gspec);
  for (std::size_t k = 0; k < grad_log_mag.size(); ++k)
    grad_log_mag[k] += gspec[k].real() * mag[k];
}

}  // namespace

// ---- forward cache ----------------------------------------------------------

struct FwdCache {
  // shared FFT convolutions (left/right)
  std::optional<ConvPlan> conv_l, conv_r;
  // equalizer
  std::vector<double> eq_mag;
  std::vector<cplx> eq_fir_spec;  // owns the spectrum the conv plans borrow
  // compressor / noisegate
  std::vector<double> env;
  std::vector<double> lin;
  // reverb: exp mask per channel (mid, side), frame-major
  std::vector<double> rev_mask[2];
  // delay: per channel, per tap: windowed FIR, its bin magnitudes, delay in samples
  std::vector<double> dly_hw[2];    // [tap * 39 + j]
  std::vector<double> dly_mag[2];   // [tap * 20 + b]
  std::vector<double> dly_z[2];     // [tap]
  std::vector<double> dly_h_all[2]; // tap frequency responses, [bin * 20 + tap]
};

void destroy_cache(FwdCache* c) noexcept { delete c; }

namespace {

// ---- gain / panning ----------------------------------------------------------

void gain_forward(const NodeParams& p, const Stereo& u, Stereo& wet) {
  const auto g = p.block("gain");
  const double gl = std::exp(g[0]), gr = std::exp(g[1]);
  const std::size_t n = u.size();
  wet.left.resize(n);
  wet.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) wet.left[i] = u.left[i] * gl;
  for (std::size_t i = 0; i < n; ++i) wet.right[i] = u.right[i] * gr;
}

void gain_backward(const NodeParams& p, const Stereo& u, const Stereo& gw, Stereo& gu,
                   NodeParams& gp) {
  const auto g = p.block("gain");
  const double gl = std::exp(g[0]), gr = std::exp(g[1]);
  auto gg = gp.block("gain");
  double al = 0.0, ar = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    gu.left[i] += gw.left[i] * gl;
    gu.right[i] += gw.right[i] * gr;
    al += gw.left[i] * u.left[i];
    ar += gw.right[i] * u.right[i];
  }
  gg[0] += al * gl;
  gg[1] += ar * gr;
}

// ---- stereo imager -----------------------------------------------------------

void imager_forward(const NodeParams& p, const Stereo& u, Stereo& wet) {
  const double sg = std::exp(p.block("side_gain")[0]);
  const std::size_t n = u.size();
  wet.left.resize(n);
  wet.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mid = 0.5 * (u.left[i] + u.right[i]);
    const double side = 0.5 * (u.left[i] - u.right[i]) * sg;
    wet.left[i] = mid + side;
    wet.right[i] = mid - side;
  }
}

void imager_backward(const NodeParams& p, const Stereo& u, const Stereo& gw, Stereo& gu,
                     NodeParams& gp) {
  const double sg = std::exp(p.block("side_gain")[0]);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double gm = gw.left[i] + gw.right[i];
    const double gs2 = gw.left[i] - gw.right[i];
    const double side = 0.5 * (u.left[i] - u.right[i]);
    acc += gs2 * side * sg;
    const double gs = gs2 * sg;
    gu.left[i] += 0.5 * (gm + gs);
    gu.right[i] += 0.5 * (gm - gs);
  }
  gp.block("side_gain")[0] += acc;
}

// ---- equalizer ----------------------------------------------------------------

void eq_forward(const NodeParams& p, const Stereo& u, FwdCache* cache, Stereo& wet) {
  const std::size_t n = u.size();
  const std::size_t offset = kEqFirLen / 2;  // group-delay compensation
  const std::size_t nfft = ConvPlan::fft_len_for(n, kEqFirLen);

  std::shared_ptr<const SpectraEntry> memo;
  if (!cache) {
    SpectraKey key;
    key.mix("eq", 2);
    key.mix_block(p, "log_mag");
    key.mix(&nfft, sizeof(nfft));
    memo = spectra_memo_get(key);
    if (!memo) {
      auto entry = std::make_shared<SpectraEntry>();
      std::vector<double> fir, mag;
      fir_from_log_mag(p.block("log_mag"), kEqFirLen, eq_window(), fir, mag);
      ConvPlan::spectrum_of(fir, nfft, entry->left);
      entry->kernel_len = kEqFirLen;
      memo = entry;
      spectra_memo_put(key, memo);
    }
    ConvPlan pl(u.left, n, memo->left, kEqFirLen, nfft, n, offset);
    ConvPlan pr(u.right, n, memo->left, kEqFirLen, nfft, n, offset);
    wet.left = pl.output();
    wet.right = pr.output();
    return;
  }

  std::vector<double> fir, mag;
  fir_from_log_mag(p.block("log_mag"), kEqFirLen, eq_window(), fir, mag);
  // The plans borrow the spectrum, so it must live in the cache beside them.
  ConvPlan::spectrum_of(fir, nfft, cache->eq_fir_spec);
  ConvPlan pl(u.left, n, cache->eq_fir_spec, kEqFirLen, nfft, n, offset);
  ConvPlan pr(u.right, n, cache->eq_fir_spec, kEqFirLen, nfft, n, offset);
  wet.left = pl.output();
  wet.right = pr.output();
  cache->eq_mag = std::move(mag);
  cache->conv_l.emplace(std::move(pl));
  cache->conv_r.emplace(std::move(pr));
}

void eq_backward(const NodeParams& p, const FwdCache& c, const Stereo& gw, Stereo& gu,
                 NodeParams& gp) {
  (void)p;
  std::vector<double> gx, gfir, gfir_r;
  c.conv_l->grads(gw.left, gx, gfir);
  for (std::size_t i = 0; i < gx.size(); ++i) gu.left[i] += gx[i];
  c.conv_r->grads(gw.right, gx, gfir_r);
  for (std::size_t i = 0; i < gx.size(); ++i) gu.right[i] += gx[i];
  for (std::size_t i = 0; i < gfir.size(); ++i) gfir[i] += gfir_r[i];
  fir_from_log_mag_grad(gfir, c.eq_mag, kEqFirLen, eq_window(), gp.block("log_mag"));
}

// ---- compressor / noisegate ----------------------------------------------------

void dynamics_forward(NodeType type, const NodeParams& p, const Stereo& u,
                      const ProcessorConfig& cfg, FwdCache* cache, Stereo& wet) {
  const double t_db = comp_threshold_db(p.block("threshold")[0]);
  const double ratio = comp_ratio(p.block("ratio")[0]);
  const double alpha = comp_alpha(p.block("envelope")[0]);
  const double eps = cfg.envelope_floor;
  const std::size_t n = u.size();

  // e_db > t_db is equivalent to e + eps > 10^(t_db/10); inactive samples
  // keep unit gain and skip the log/exp pair entirely.
  const double t_lin = std::pow(10.0, t_db / 10.0);
  std::vector<double> env(n), lin(n);
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x2 = 0.5 * (u.left[i] * u.left[i] + u.right[i] * u.right[i]);
    e = alpha * e + (1.0 - alpha) * x2;
    env[i] = e;
    const bool above = e + eps > t_lin;
    if (type == NodeType::compressor ? !above : above) {
      lin[i] = 1.0;
      continue;
    }
    const double e_db = kLnToDb10 * std::log(e + eps);
    const double g_db = type == NodeType::compressor ? (1.0 / ratio - 1.0) * (e_db - t_db)
                                                     : (1.0 - ratio) * (t_db - e_db);
    lin[i] = std::exp(kDbToLn * g_db);
  }
  wet.left.resize(n);
  wet.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) wet.left[i] = u.left[i] * lin[i];
  for (std::size_t i = 0; i < n; ++i) wet.right[i] = u.right[i] * lin[i];
  if (cache) {
    cache->env = std::move(env);
    cache->lin = std::move(lin);
  }
}

void dynamics_backward(NodeType type, const NodeParams& p, const FwdCache& c, const Stereo& u,
                       const Stereo& gw, const ProcessorConfig& cfg, Stereo& gu, NodeParams& gp) {
  const double raw_t = p.block("threshold")[0];
  const double raw_r = p.block("ratio")[0];
  const double raw_a = p.block("envelope")[0];
  const double t_db = comp_threshold_db(raw_t);
  const double ratio = comp_ratio(raw_r);
  const double alpha = comp_alpha(raw_a);
  const double eps = cfg.envelope_floor;
  const std::size_t n = u.size();

  const double t_lin = std::pow(10.0, t_db / 10.0);
  std::vector<double> ge(n);
  double g_t = 0.0, g_ratio = 0.0;
  const double c_r = 1.0 / ratio - 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double glin = gw.left[i] * u.left[i] + gw.right[i] * u.right[i];
    gu.left[i] += gw.left[i] * c.lin[i];
    gu.right[i] += gw.right[i] * c.lin[i];
    const bool above = c.env[i] + eps > t_lin;
    if (type == NodeType::compressor ? !above : above) {
      ge[i] = 0.0;
      continue;
    }
    const double g_gdb = glin * c.lin[i] * kDbToLn;
    const double e_db = kLnToDb10 * std::log(c.env[i] + eps);
    double g_edb;
    if (type == NodeType::compressor) {
      const double over = e_db - t_db;
      g_edb = g_gdb * c_r;
      g_t -= g_gdb * c_r;
      g_ratio += g_gdb * over * (-1.0 / (ratio * ratio));
    } else {
      const double under = t_db - e_db;
      g_edb = -g_gdb * (1.0 - ratio);
      g_t += g_gdb * (1.0 - ratio);
      g_ratio -= g_gdb * under;
    }
    ge[i] = g_edb * kLnToDb10 / (c.env[i] + eps);
  }

  // Reverse the one-pole recursion e[i] = a e[i-1] + (1-a) x2[i].
  double g_alpha = 0.0;
  double carry = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double total = ge[i] + alpha * carry;
    carry = total;
    const double e_prev = i == 0 ? 0.0 : c.env[i - 1];
    const double x2 = 0.5 * (u.left[i] * u.left[i] + u.right[i] * u.right[i]);
    g_alpha += total * (e_prev - x2);
    const double gx2 = total * (1.0 - alpha);
    gu.left[i] += gx2 * u.left[i];
    gu.right[i] += gx2 * u.right[i];
  }

  gp.block("threshold")[0] += g_t * 60.0 * sigmoid_grad(raw_t);
  gp.block("ratio")[0] += g_ratio * 19.0 * sigmoid_grad(raw_r);
  gp.block("envelope")[0] += g_alpha * sigmoid_grad(raw_a);
}

// ---- reverb --------------------------------------------------------------------

void reverb_build_ir(const NodeParams& p, const ProcessorConfig& cfg, FwdCache* cache,
                     std::vector<double>& ir_l, std::vector<double>& ir_r) {
  const std::size_t n_ir = cfg.ir_length();
  const std::size_t frames = reverb_frames(n_ir);
  const auto seed = std::uint64_t(p.block("noise_seed")[0]);
  const auto& spectra = noise_spectra(seed, n_ir);
  const auto& inv_env = ola_inv_envelope(n_ir);
  const auto& win = reverb_window();
  const auto a = p.block("init_log_mag");
  const auto braw = p.block("decay");

  std::vector<double> ir_ms[2];
  std::vector<cplx> spec(kReverbBins);
  std::vector<double> frame;
  for (int c = 0; c < 2; ++c) {
    // M[t,f] = exp(a_f + t b_f) built incrementally down the frames.
    std::vector<double> mask(frames * kReverbBins);
    std::vector<double> row(kReverbBins), step(kReverbBins);
    for (std::size_t f = 0; f < kReverbBins; ++f) {
      row[f] = std::exp(a[c * kReverbBins + f]);
      step[f] = std::exp(-softplus(braw[c * kReverbBins + f]));
    }
    std::vector<double> ola(n_ir, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      const cplx* z = &spectra[c][t * kReverbBins];
      double* m = &mask[t * kReverbBins];
      for (std::size_t f = 0; f < kReverbBins; ++f) {
        m[f] = row[f];
        spec[f] = z[f] * row[f];
        row[f] *= step[f];
      }
      fft::irfft(spec, kReverbFft, frame);
      double* dst = &ola[t * kReverbHop];
      for (std::size_t j = 0; j < kReverbFft; ++j) dst[j] += frame[j] * win[j];
    }
    ir_ms[c].resize(n_ir);
    for (std::size_t i = 0; i < n_ir; ++i) ir_ms[c][i] = ola[i] * inv_env[i];
    if (cache) cache->rev_mask[c] = std::move(mask);
  }
  ir_l.resize(n_ir);
  ir_r.resize(n_ir);
  for (std::size_t i = 0; i < n_ir; ++i) {
    ir_l[i] = ir_ms[0][i] + ir_ms[1][i];
    ir_r[i] = ir_ms[0][i] - ir_ms[1][i];
  }
}

void reverb_forward(const NodeParams& p, const Stereo& u, const ProcessorConfig& cfg,
                    FwdCache* cache, Stereo& wet) {
  const std::size_t n = u.size();
  const std::size_t n_ir = cfg.ir_length();
  const std::size_t nfft = ConvPlan::fft_len_for(n, n_ir);

  if (!cache) {
    SpectraKey key;
    key.mix("rv", 2);
    key.mix_block(p, "init_log_mag");
    key.mix_block(p, "decay");
    key.mix_block(p, "noise_seed");
    key.mix(&cfg.sample_rate, sizeof(double));
    key.mix(&nfft, sizeof(nfft));
    auto memo = spectra_memo_get(key);
    if (!memo) {
      auto entry = std::make_shared<SpectraEntry>();
      std::vector<double> ir_l, ir_r;
      reverb_build_ir(p, cfg, nullptr, ir_l, ir_r);
      ConvPlan::spectrum_of(ir_l, nfft, entry->left);
      ConvPlan::spectrum_of(ir_r, nfft, entry->right);
      entry->kernel_len = n_ir;
      memo = entry;
      spectra_memo_put(key, memo);
    }
    ConvPlan pl(u.left, n, memo->left, n_ir, nfft, n, 0);
    ConvPlan pr(u.right, n, memo->right, n_ir, nfft, n, 0);
    wet.left = pl.output();
    wet.right = pr.output();
    return;
  }

  std::vector<double> ir_l, ir_r;
  reverb_build_ir(p, cfg, cache, ir_l, ir_r);
  ConvPlan pl(u.left, ir_l, n, 0);
  ConvPlan pr(u.right, ir_r, n, 0);
  wet.left = pl.output();
  wet.right = pr.output();
  cache->conv_l.emplace(std::move(pl));
  cache->conv_r.emplace(std::move(pr));
}

void reverb_backward(const NodeParams& p, const FwdCache& c, const Stereo& gw,
                     const ProcessorConfig& cfg, Stereo& gu, NodeParams& gp) {
  const std::size_t n_ir = cfg.ir_length();
  const std::size_t frames = reverb_frames(n_ir);
  const auto seed = std::uint64_t(p.block("noise_seed")[0]);
  const auto& spectra = noise_spectra(seed, n_ir);
  const auto& inv_env = ola_inv_envelope(n_ir);
  const auto& win = reverb_window();
  const auto braw = p.block("decay");

  std::vector<double> gx, g_ir_l, g_ir_r;
  c.conv_l->grads(gw.left, gx, g_ir_l);
  for (std::size_t i = 0; i < gx.size(); ++i) gu.left[i] += gx[i];
  c.conv_r->grads(gw.right, gx, g_ir_r);
  for (std::size_t i = 0; i < gx.size(); ++i) gu.right[i] += gx[i];

  auto ga = gp.block("init_log_mag");
  auto gb = gp.block("decay");
  std::vector<double> g_frame(kReverbFft);
  std::vector<cplx> g_spec;
  std::vector<double> gb_local(2 * kReverbBins, 0.0);
  for (int ch = 0; ch < 2; ++ch) {
    // mid gets the sum of the L/R impulse-response grads, side the difference
    std::vector<double> g_ofa(n_ir);
    for (std::size_t i = 0; i < n_ir; ++i) {
      const double g = ch == 0 ? g_ir_l[i] + g_ir_r[i] : g_ir_l[i] - g_ir_r[i];
      g_ofa[i] = g * inv_env[i];
    }
    for (std::size_t t = 0; t < frames; ++t) {
      const double* src = &g_ofa[t * kReverbHop];
      for (std::size_t j = 0; j < kReverbFft; ++j) g_frame[j] = src[j] * win[j];
      fft::irfft_adjoint(g_frame, kReverbFft, g_spec);
      const cplx* z = &spectra[ch][t * kReverbBins];
      const double* m = &c.rev_mask[ch][t * kReverbBins];
      for (std::size_t f = 0; f < kReverbBins; ++f) {
        const double gm = g_spec[f].real() * z[f].real() + g_spec[f].imag() * z[f].imag();
        ga[ch * kReverbBins + f] += gm * m[f];
        gb_local[ch * kReverbBins + f] += gm * m[f] * double(t);
      }
    }
  }
  // decay = -softplus(raw): chain through the remaining map.
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gb_local[i] * -sigmoid(braw[i]);
}

// ---- multitap delay --------------------------------------------------------------

struct DelayChannelSpec {
  std::vector<double> hw;   // [tap * 39 + j]
  std::vector<double> mag;  // [tap * 20 + b]
  std::vector<double> z;    // delay in samples, per tap
};

DelayChannelSpec delay_channel_spec(const NodeParams& p, int ch, const ProcessorConfig& cfg) {
  DelayChannelSpec out;
  const auto phases = p.block("delay_phase");
  const auto log_mag = p.block("log_mag");
  out.hw.resize(kDelayTaps * kDelayFirLen);
  out.mag.resize(kDelayTaps * kDelayFirBins);
  out.z.resize(kDelayTaps);
  std::vector<double> fir, mag;
  for (std::size_t m = 0; m < kDelayTaps; ++m) {
    const double phase = phases[std::size_t(ch) * kDelayTaps + m];
    out.z[m] = (double(m) + sigmoid(phase)) * kDelayTapSeconds * cfg.sample_rate;
    const std::size_t base = (std::size_t(ch) * kDelayTaps + m) * kDelayFirBins;
    fir_from_log_mag(log_mag.subspan(base, kDelayFirBins), kDelayFirLen, delay_fir_window(), fir,
                     mag);
    std::copy(fir.begin(), fir.end(), out.hw.begin() + m * kDelayFirLen);
    std::copy(mag.begin(), mag.end(), out.mag.begin() + m * kDelayFirBins);
  }
  return out;
}

// Damped rotations X_m[k] = rho^k e^{-j 2 pi k z_m / N}; recomputed blockwise
// to bound the recurrence drift.
struct TapRotations {
  static constexpr std::size_t kRow = 24;  // 64-byte padded tap rows
  alignas(64) std::array<double, kRow> re{}, im{}, rot_re{}, rot_im{};
  std::array<double, kRow> phi{};
  double log_rho = 0.0, rho = 1.0;
  std::size_t n_ir = 0, block = 4096;

  TapRotations(const DelayChannelSpec& spec, double rho_, std::size_t n_ir_)
      : log_rho(std::log(rho_)), rho(rho_), n_ir(n_ir_) {
    if (rho_ <= 0.0) throw std::invalid_argument("delay damping must be positive");
    for (std::size_t m = 0; m < kDelayTaps; ++m) {
      phi[m] = kTwoPi * spec.z[m] / double(n_ir);
      rot_re[m] = rho * std::cos(phi[m]);
      rot_im[m] = -rho * std::sin(phi[m]);
    }
  }

  void reset_at(std::size_t k) {
    const double amp = std::exp(log_rho * double(k));
    for (std::size_t m = 0; m < kDelayTaps; ++m) {
      const double ang = -phi[m] * double(k);
      re[m] = amp * std::cos(ang);
      im[m] = amp * std::sin(ang);
    }
  }

  void advance() {
    for (std::size_t m = 0; m < kRow; ++m) {
      const double nre = re[m] * rot_re[m] - im[m] * rot_im[m];
      im[m] = re[m] * rot_im[m] + im[m] * rot_re[m];
      re[m] = nre;
    }
  }
};

// One pass over the rFFT grid: evaluates every tap's zero-centered FIR
// response H_m[k] (cosine expansion of the symmetric 39-tap kernel),
// accumulates the damped-rotation spectrum S[k] = sum_m X_m[k] H_m[k], and
// optionally stores H for the backward pass. Rows padded to a 64-byte
// multiple; the auto-vectorizer otherwise trips over the alternating row
// alignment of a [19][20] layout.
void delay_channel_spectrum(const DelayChannelSpec& spec, const ProcessorConfig& cfg,
                            std::size_t n_ir, std::vector<double>* h_all_out,
                            std::vector<cplx>& s) {
  const std::size_t bins = n_ir / 2 + 1;
  const std::size_t half = kDelayFirLen / 2;  // 19
  const auto& table = delay_cos_table(n_ir);
  constexpr std::size_t kRow = 24;
  alignas(64) double c0[kRow] = {};
  alignas(64) double cj[19][kRow] = {};
  for (std::size_t m = 0; m < kDelayTaps; ++m) {
    const double* hw = &spec.hw[m * kDelayFirLen];
    c0[m] = hw[half];
    for (std::size_t j = 1; j <= half; ++j) cj[j - 1][m] = hw[half + j] + hw[half - j];
  }
  if (h_all_out) h_all_out->resize(bins * kDelayTaps);
  s.assign(bins, cplx(0.0, 0.0));
  TapRotations rot(spec, cfg.damping(), n_ir);
  alignas(64) double h[kRow];
  // Loops run over the zero-padded width so they vectorize without tails.
  for (std::size_t k = 0; k < bins; ++k) {
    if (k % rot.block == 0) rot.reset_at(k);
    const double* row = &table[k * half];
    for (std::size_t m = 0; m < kRow; ++m) h[m] = c0[m];
    for (std::size_t j = 0; j < half; ++j) {
      const double ckj = row[j];
      for (std::size_t m = 0; m < kRow; ++m) h[m] += ckj * cj[j][m];
    }
    double acc_re = 0.0, acc_im = 0.0;
    for (std::size_t m = 0; m < kDelayTaps; ++m) {
      acc_re += h[m] * rot.re[m];
      acc_im += h[m] * rot.im[m];
    }
    s[k] = cplx(acc_re, acc_im);
    if (h_all_out) std::memcpy(&(*h_all_out)[k * kDelayTaps], h, kDelayTaps * sizeof(double));
    rot.advance();
  }
}

void delay_forward(const NodeParams& p, const Stereo& u, const ProcessorConfig& cfg,
                   FwdCache* cache, Stereo& wet) {
  const std::size_t n = u.size();
  const std::size_t n_ir = cfg.ir_length();
  const std::size_t nfft = ConvPlan::fft_len_for(n, n_ir);

  if (!cache) {
    SpectraKey key;
    key.mix("dl", 2);
    key.mix_block(p, "delay_phase");
    key.mix_block(p, "log_mag");
    const double rho = cfg.damping();
    key.mix(&cfg.sample_rate, sizeof(double));
    key.mix(&rho, sizeof(double));
    key.mix(&nfft, sizeof(nfft));
    auto memo = spectra_memo_get(key);
    if (!memo) {
      auto entry = std::make_shared<SpectraEntry>();
      for (int ch = 0; ch < 2; ++ch) {
        DelayChannelSpec spec = delay_channel_spec(p, ch, cfg);
        std::vector<cplx> s;
        std::vector<double> ir;
        delay_channel_spectrum(spec, cfg, n_ir, nullptr, s);
        fft::irfft(s, n_ir, ir);
        ConvPlan::spectrum_of(ir, nfft, ch == 0 ? entry->left : entry->right);
      }
      entry->kernel_len = n_ir;
      memo = entry;
      spectra_memo_put(key, memo);
    }
    ConvPlan pl(u.left, n, memo->left, n_ir, nfft, n, 0);
    ConvPlan pr(u.right, n, memo->right, n_ir, nfft, n, 0);
    wet.left = pl.output();
    wet.right = pr.output();
    return;
  }

  for (int ch = 0; ch < 2; ++ch) {
    DelayChannelSpec spec = delay_channel_spec(p, ch, cfg);
    std::vector<cplx> s;
    std::vector<double> h_all, ir;
    delay_channel_spectrum(spec, cfg, n_ir, &h_all, s);
    fft::irfft(s, n_ir, ir);
    ConvPlan plan(ch == 0 ? u.left : u.right, ir, n, 0);
    (ch == 0 ? wet.left : wet.right) = plan.output();
    (ch == 0 ? cache->conv_l : cache->conv_r).emplace(std::move(plan));
    cache->dly_hw[ch] = std::move(spec.hw);
    cache->dly_mag[ch] = std::move(spec.mag);
    cache->dly_z[ch] = std::move(spec.z);
    cache->dly_h_all[ch] = std::move(h_all);
  }
}

void delay_backward(const NodeParams& p, const FwdCache& c, const Stereo& gw,
                    const ProcessorConfig& cfg, Stereo& gu, NodeParams& gp) {
  const std::size_t n_ir = cfg.ir_length();
  const std::size_t bins = n_ir / 2 + 1;
  const std::size_t half = kDelayFirLen / 2;
  const auto& table = delay_cos_table(n_ir);
  const auto phases = p.block("delay_phase");
  auto g_phases = gp.block("delay_phase");
  auto g_log_mag = gp.block("log_mag");

  for (int ch = 0; ch < 2; ++ch) {
    const ConvPlan& plan = ch == 0 ? *c.conv_l : *c.conv_r;
    const std::vector<double>& gw_ch = ch == 0 ? gw.left : gw.right;
    std::vector<double>& gu_ch = ch == 0 ? gu.left : gu.right;

    std::vector<double> gx, g_ir;
    plan.grads(gw_ch, gx, g_ir);
    for (std::size_t i = 0; i < gx.size(); ++i) gu_ch[i] += gx[i];
    std::vector<cplx> g_s;
    fft::irfft_adjoint(g_ir, n_ir, g_s);

    DelayChannelSpec spec;
    spec.hw = c.dly_hw[ch];
    spec.mag = c.dly_mag[ch];
    spec.z = c.dly_z[ch];
    const std::vector<double>& h_all = c.dly_h_all[ch];

    // Single pass over bins: gH[m] = <gS, X_m>, the delay sensitivity
    // gz_m += (2 pi k / N) H Re(-j conj(gS) X), and the reduction of gH onto
    // the symmetric FIR coefficients via the cosine table.
    constexpr std::size_t kRow = TapRotations::kRow;
    alignas(64) double g_z[kRow] = {}, sum0[kRow] = {};
    alignas(64) double sums[19][kRow] = {};
    TapRotations rot(spec, cfg.damping(), n_ir);
    const double w_step = kTwoPi / double(n_ir);
    for (std::size_t k = 0; k < bins; ++k) {
      if (k % rot.block == 0) rot.reset_at(k);
      const double a = g_s[k].real(), b = g_s[k].imag();
      const double wk = w_step * double(k);
      const double* h = &h_all[k * kDelayTaps];
      const double* row = &table[k * half];
      alignas(64) double gh[kRow];
      for (std::size_t m = 0; m < kDelayTaps; ++m) {
        gh[m] = a * rot.re[m] + b * rot.im[m];
        g_z[m] += wk * h[m] * (a * rot.im[m] - b * rot.re[m]);
        sum0[m] += gh[m];
      }
      for (std::size_t m = kDelayTaps; m < kRow; ++m) gh[m] = 0.0;
      for (std::size_t j = 0; j < half; ++j) {
        const double ckj = row[j];
        for (std::size_t m = 0; m < kRow; ++m) sums[j][m] += ckj * gh[m];
      }
      rot.advance();
    }

    for (std::size_t m = 0; m < kDelayTaps; ++m) {
      std::vector<double> ghw(kDelayFirLen, 0.0);
      ghw[half] = sum0[m];
      for (std::size_t j = 1; j <= half; ++j) {
        ghw[half + j] = sums[j - 1][m];
        ghw[half - j] = sums[j - 1][m];
      }
      const std::size_t base = (std::size_t(ch) * kDelayTaps + m) * kDelayFirBins;
      fir_from_log_mag_grad(ghw, std::span<const double>(&spec.mag[m * kDelayFirBins], kDelayFirBins),
                            kDelayFirLen, delay_fir_window(),
                            g_log_mag.subspan(base, kDelayFirBins));
      const double raw = phases[std::size_t(ch) * kDelayTaps + m];
      g_phases[std::size_t(ch) * kDelayTaps + m] +=
          g_z[m] * kDelayTapSeconds * cfg.sample_rate * sigmoid_grad(raw);
    }
  }
}

}  // namespace

// ---- public entry points -----------------------------------------------------

CachePtr processor_forward(NodeType type, const NodeParams& params, const Stereo& u,
                           const ProcessorConfig& cfg, Stereo& wet, bool keep_cache) {
  CachePtr cache(keep_cache ? new FwdCache() : nullptr);
  switch (type) {
    case NodeType::gain_pan:
      gain_forward(params, u, wet);
      break;
    case NodeType::stereo_imager:
      imager_forward(params, u, wet);
      break;
    case NodeType::equalizer:
      eq_forward(params, u, cache.get(), wet);
      break;
    case NodeType::compressor:
    case NodeType::noisegate:
      dynamics_forward(type, params, u, cfg, cache.get(), wet);
      break;
    case NodeType::reverb:
      reverb_forward(params, u, cfg, cache.get(), wet);
      break;
    case NodeType::multitap_delay:
      delay_forward(params, u, cfg, cache.get(), wet);
      break;
    default:
      throw std::invalid_argument("processor_forward: not a processor type");
  }
  return cache;
}

void processor_backward(NodeType type, const NodeParams& params, const FwdCache& cache,
                        const Stereo& u, const Stereo& grad_wet, const ProcessorConfig& cfg,
                        Stereo& grad_u, NodeParams& grad_params) {
  switch (type) {
    case NodeType::gain_pan:
      gain_backward(params, u, grad_wet, grad_u, grad_params);
      break;
    case NodeType::stereo_imager:
      imager_backward(params, u, grad_wet, grad_u, grad_params);
      break;
    case NodeType::equalizer:
      eq_backward(params, cache, grad_wet, grad_u, grad_params);
      break;
    case NodeType::compressor:
    case NodeType::noisegate:
      dynamics_backward(type, params, cache, u, grad_wet, cfg, grad_u, grad_params);
      break;
    case NodeType::reverb:
      reverb_backward(params, cache, grad_wet, cfg, grad_u, grad_params);
      break;
    case NodeType::multitap_delay:
      delay_backward(params, cache, grad_wet, cfg, grad_u, grad_params);
      break;
    default:
      throw std::invalid_argument("processor_backward: not a processor type");
  }
}

void drywet_apply(const Stereo& u, const Stereo& wet, double w, Stereo& y) {
  require_same_shape(u, wet, "drywet_apply");
  const std::size_t n = u.size();
  y.left.resize(n);
  y.right.resize(n);
  const double dry = 1.0 - w;
  for (std::size_t i = 0; i < n; ++i) y.left[i] = w * wet.left[i] + dry * u.left[i];
  for (std::size_t i = 0; i < n; ++i) y.right[i] = w * wet.right[i] + dry * u.right[i];
}

NodeEval node_forward(NodeType type, const NodeParams& params, double logit_w, double mask_bit,
                      const Stereo& u, const ProcessorConfig& cfg, bool keep_cache,
                      bool want_mid_norms) {
  NodeEval eval;
  eval.w_eff = sigmoid(logit_w) * mask_bit;
  if (eval.w_eff == 0.0) {
    eval.bypassed = true;
    eval.y = u;
    return eval;
  }
  Stereo wet;
  eval.cache = processor_forward(type, params, u, cfg, wet, keep_cache);
  const std::size_t n = u.size();
  eval.y.left.resize(n);
  eval.y.right.resize(n);
  const double w = eval.w_eff, dry = 1.0 - eval.w_eff;
  if (want_mid_norms) {
    double wm2 = 0.0, um2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wl = wet.left[i], wr = wet.right[i];
      eval.y.left[i] = w * wl + dry * u.left[i];
      eval.y.right[i] = w * wr + dry * u.right[i];
      const double wmid = 0.5 * (wl + wr);
      const double umid = 0.5 * (u.left[i] + u.right[i]);
      wm2 += wmid * wmid;
      um2 += umid * umid;
    }
    eval.wet_mid_norm = std::sqrt(wm2);
    eval.in_mid_norm = std::sqrt(um2);
  } else {
    for (std::size_t i = 0; i < n; ++i) eval.y.left[i] = w * wet.left[i] + dry * u.left[i];
    for (std::size_t i = 0; i < n; ++i) eval.y.right[i] = w * wet.right[i] + dry * u.right[i];
  }
  return eval;
}

double node_backward(NodeType type, const NodeParams& params, double logit_w, double mask_bit,
                     const Stereo& u, const Stereo& y, const NodeEval& eval,
                     const Stereo& grad_y, const MidGradInjection* injection,
                     const ProcessorConfig& cfg, Stereo& grad_u, NodeParams& grad_params) {
  const std::size_t n = u.size();
  if (grad_u.size() != n) grad_u.assign_zero(n);
  if (eval.bypassed) {
    // y = u exactly; the wet path was never evaluated and gets no gradient.
    for (std::size_t i = 0; i < n; ++i) grad_u.left[i] += grad_y.left[i];
    for (std::size_t i = 0; i < n; ++i) grad_u.right[i] += grad_y.right[i];
    return 0.0;
  }
  if (!eval.cache) throw std::runtime_error("node_backward: forward cache missing");

  // One fused pass: reconstruct wet from (u, y), build grad_wet = w * grad_y
  // (+ mid-projected injections), accumulate the dry-path input grad, and
  // reduce the dry/wet sensitivity.
  const double w = eval.w_eff;
  const double inv_w = 1.0 / w;
  const double dry = 1.0 - w;
  const double wc = injection ? 0.5 * injection->wet_coef : 0.0;
  const double ic = injection ? 0.5 * injection->in_coef : 0.0;
  Stereo grad_wet(n);
  double g_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ul = u.left[i], ur = u.right[i];
    const double dl = (y.left[i] - ul) * inv_w;   // wet_l - u_l
    const double dr = (y.right[i] - ur) * inv_w;  // wet_r - u_r
    const double gl = grad_y.left[i], gr = grad_y.right[i];
    g_w += gl * dl + gr * dr;
    const double wet_mid = 0.5 * (dl + dr) + 0.5 * (ul + ur);
    const double in_mid = 0.5 * (ul + ur);
    grad_wet.left[i] = w * gl + wc * wet_mid;
    grad_wet.right[i] = w * gr + wc * wet_mid;
    grad_u.left[i] += dry * gl + ic * in_mid;
    grad_u.right[i] += dry * gr + ic * in_mid;
  }

  processor_backward(type, params, *eval.cache, u, grad_wet, cfg, grad_u, grad_params);
  return g_w * mask_bit * sigmoid_grad(logit_w);
}

}  // namespace mixgraph
