#include "mixgraph/losses.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include "mixgraph/fft.hpp"

namespace mixgraph {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kLogFloor = 1e-8;  // mel magnitude floor inside the log
constexpr double kScEps = 1e-8;    // spectral-convergence zero guard
constexpr std::size_t kAwFirLen = 1023;

std::mutex g_loss_mutex;

std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t j = 0; j < n; ++j) w[j] = 0.5 - 0.5 * std::cos(kTwoPi * double(j) / double(n));
  return w;
}

const std::vector<double>& stft_window(std::size_t n) {
  static std::unordered_map<std::size_t, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(g_loss_mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, hann_periodic(n)).first;
  return it->second;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }

// HTK-style triangular filterbank, 0 Hz..Nyquist, peaks at 1, stored as
// sparse rows (each FFT bin touches at most two triangles). A row whose
// triangle is narrower than the FFT resolution gets its nearest bin instead,
// so every row keeps nonzero mass.
struct MelBank {
  std::size_t mel_bins = 0, fft_bins = 0;
  std::vector<std::size_t> row_start;       // first bin of each row
  std::vector<std::vector<double>> row_w;   // weights from row_start on
};

const MelBank& mel_bank(double fs, std::size_t n_fft, std::size_t n_mels) {
  static std::map<std::tuple<long long, std::size_t, std::size_t>, MelBank> cache;
  std::lock_guard<std::mutex> lock(g_loss_mutex);
  auto key = std::make_tuple((long long)(fs * 1000.0), n_fft, n_mels);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const std::size_t bins = n_fft / 2 + 1;
  MelBank bank;
  bank.mel_bins = n_mels;
  bank.fft_bins = bins;
  bank.row_start.resize(n_mels);
  bank.row_w.resize(n_mels);
  const double mel_max = hz_to_mel(fs / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_max * double(i) / double(n_mels + 1);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    std::vector<double> dense(bins, 0.0);
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel_k = hz_to_mel(double(k) * fs / double(n_fft));
      double v = 0.0;
      if (mel_k > lo && mel_k < hi)
        v = mel_k <= c ? (mel_k - lo) / (c - lo) : (hi - mel_k) / (hi - c);
      dense[k] = v;
      row_sum += v;
    }
    if (row_sum <= 0.0) {
      const double fc = 700.0 * (std::pow(10.0, c / 2595.0) - 1.0);
      std::size_t nearest = std::size_t(fc * double(n_fft) / fs + 0.5);
      dense[std::min(nearest, bins - 1)] = 1.0;
    }
    std::size_t first = 0;
    while (first < bins && dense[first] == 0.0) ++first;
    std::size_t last = bins;
    while (last > first && dense[last - 1] == 0.0) --last;
    bank.row_start[m] = first;
    bank.row_w[m].assign(dense.begin() + std::ptrdiff_t(first),
                         dense.begin() + std::ptrdiff_t(last));
  }
  return cache.emplace(key, std::move(bank)).first->second;
}

double a_curve_linear(double f) {
  if (f <= 0.0) return 0.0;
  const double f2 = f * f;
  const double num = 12194.0 * 12194.0 * f2 * f2;
  const double den = (f2 + 20.6 * 20.6) *
                     std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)) *
                     (f2 + 12194.0 * 12194.0);
  return num / den;
}

}  // namespace

const std::vector<double>& a_weighting_fir(double sample_rate) {
  static std::map<long long, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(g_loss_mutex);
  const long long key = (long long)(sample_rate * 1000.0);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const std::size_t bins = kAwFirLen / 2 + 1;  // 512
  const double ref = a_curve_linear(1000.0);
  std::vector<cplx> spec(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = double(k) * sample_rate / double(kAwFirLen);
    spec[k] = cplx(a_curve_linear(f) / ref, 0.0);
  }
  std::vector<double> h0;
  fft::irfft(spec, kAwFirLen, h0);
  const std::size_t center = kAwFirLen / 2;
  std::vector<double> fir(kAwFirLen);
  std::vector<double> win(kAwFirLen);
  for (std::size_t j = 0; j < kAwFirLen; ++j)
    win[j] = 0.5 - 0.5 * std::cos(kTwoPi * double(j) / double(kAwFirLen - 1));
  for (std::size_t n = 0; n < kAwFirLen; ++n)
    fir[n] = h0[(n + kAwFirLen - center) % kAwFirLen] * win[n];
  return cache.emplace(key, std::move(fir)).first->second;
}

double sparsity_coefficient(std::size_t prune_step, const LossWeights& weights) {
  if (weights.sparsity_ramp_steps == 0) return weights.alpha_sparsity_max;
  const double frac =
      std::min(1.0, double(prune_step) / double(weights.sparsity_ramp_steps));
  return weights.alpha_sparsity_max * frac;
}

double combine_total(const LossBreakdown& parts, Phase phase, std::size_t prune_step,
                     const LossWeights& weights) {
  double total = parts.audio + weights.alpha_gain * parts.gain_staging;
  if (phase == Phase::prune)
    total += sparsity_coefficient(prune_step, weights) * parts.sparsity;
  return total;
}

namespace {

// One channel's spectra at one resolution, with everything the backward pass
// needs retained.
struct ChannelSpec {
  std::size_t frames = 0, bins = 0, mel_bins = 0;
  std::vector<cplx> stft;       // frame-major
  std::vector<double> mag;      // frame-major
  std::vector<double> mel;      // linear, frame-major
  double fro = 0.0;             // Frobenius norm of mel
};

ChannelSpec channel_spec(std::span<const double> x, std::size_t n_fft, std::size_t hop,
                         const MelBank& bank, bool keep_stft) {
  if (x.size() < n_fft) throw std::invalid_argument("stft: signal shorter than FFT size");
  ChannelSpec out;
  out.frames = 1 + (x.size() - n_fft) / hop;
  out.bins = n_fft / 2 + 1;
  out.mel_bins = bank.mel_bins;
  const auto& win = stft_window(n_fft);
  out.mag.resize(out.frames * out.bins);
  out.mel.assign(out.frames * out.mel_bins, 0.0);
  if (keep_stft) out.stft.resize(out.frames * out.bins);

  std::vector<double> frame(n_fft);
  std::vector<cplx> bins;
  double fro = 0.0;
  for (std::size_t t = 0; t < out.frames; ++t) {
    for (std::size_t j = 0; j < n_fft; ++j) frame[j] = x[t * hop + j] * win[j];
    fft::rfft(frame, n_fft, bins);
    double* mag = &out.mag[t * out.bins];
    for (std::size_t k = 0; k < out.bins; ++k) {
      // plain sqrt: magnitudes here never approach the double range limits
      const double re = bins[k].real(), im = bins[k].imag();
      mag[k] = std::sqrt(re * re + im * im);
    }
    if (keep_stft) std::copy(bins.begin(), bins.end(), out.stft.begin() + t * out.bins);
    double* mel = &out.mel[t * out.mel_bins];
    for (std::size_t m = 0; m < out.mel_bins; ++m) {
      const auto& w = bank.row_w[m];
      const double* src = mag + bank.row_start[m];
      double acc = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * src[k];
      mel[m] = acc;
      fro += acc * acc;
    }
  }
  out.fro = std::sqrt(fro);
  return out;
}

// All four projection channels (L, R, mid, side) of a stereo pair at one
// resolution, sharing a single complex FFT per frame: pack z = L + jR, then
// X_L = (Z[k] + conj(Z[N-k]))/2, X_R = -j(Z[k] - conj(Z[N-k]))/2, and the
// mid/side spectra are (X_L +- X_R)/2.
std::array<ChannelSpec, 4> quad_specs(std::span<const double> l, std::span<const double> r,
                                      std::size_t n_fft, std::size_t hop, const MelBank& bank,
                                      bool keep_stft) {
  if (l.size() < n_fft) throw std::invalid_argument("stft: signal shorter than FFT size");
  const std::size_t frames = 1 + (l.size() - n_fft) / hop;
  const std::size_t bins = n_fft / 2 + 1;
  const auto& win = stft_window(n_fft);

  std::array<ChannelSpec, 4> out;
  for (auto& spec : out) {
    spec.frames = frames;
    spec.bins = bins;
    spec.mel_bins = bank.mel_bins;
    spec.mag.resize(frames * bins);
    spec.mel.assign(frames * bank.mel_bins, 0.0);
    if (keep_stft) spec.stft.resize(frames * bins);
  }

  std::vector<cplx> frame(n_fft), z;
  std::array<double, 4> fro{};
  std::vector<cplx> x(4);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < n_fft; ++j)
      frame[j] = cplx(l[t * hop + j] * win[j], r[t * hop + j] * win[j]);
    fft::cfft(frame, n_fft, z);
    for (std::size_t k = 0; k < bins; ++k) {
      const cplx zk = z[k];
      const cplx zc = std::conj(z[(n_fft - k) % n_fft]);
      x[0] = 0.5 * (zk + zc);
      const cplx d = zk - zc;
      x[1] = cplx(0.5 * d.imag(), -0.5 * d.real());
      x[2] = 0.5 * (x[0] + x[1]);
      x[3] = 0.5 * (x[0] - x[1]);
      for (int c = 0; c < 4; ++c) {
        const double re = x[std::size_t(c)].real(), im = x[std::size_t(c)].imag();
        out[std::size_t(c)].mag[t * bins + k] = std::sqrt(re * re + im * im);
        if (keep_stft) out[std::size_t(c)].stft[t * bins + k] = x[std::size_t(c)];
      }
    }
    for (int c = 0; c < 4; ++c) {
      auto& spec = out[std::size_t(c)];
      const double* mag = &spec.mag[t * bins];
      double* mel = &spec.mel[t * spec.mel_bins];
      for (std::size_t m = 0; m < spec.mel_bins; ++m) {
        const auto& w = bank.row_w[m];
        const double* mag_at = mag + bank.row_start[m];
        double acc = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * mag_at[k];
        mel[m] = acc;
        fro[std::size_t(c)] += acc * acc;
      }
    }
  }
  for (int c = 0; c < 4; ++c) out[std::size_t(c)].fro = std::sqrt(fro[std::size_t(c)]);
  return out;
}

struct TermValue {
  double l1 = 0.0;
  double sc = 0.0;
  double value() const { return l1 + sc; }
};

TermValue term_against(const ChannelSpec& target, const ChannelSpec& pred) {
  if (target.mel.size() != pred.mel.size())
    throw std::invalid_argument("stft_term: frame count mismatch");
  TermValue tv;
  double diff_sq = 0.0;
  for (std::size_t i = 0; i < pred.mel.size(); ++i) {
    const double yt = std::max(target.mel[i], kLogFloor);
    const double yp = std::max(pred.mel[i], kLogFloor);
    tv.l1 += std::abs(std::log(yp) - std::log(yt));
    const double d = pred.mel[i] - target.mel[i];
    diff_sq += d * d;
  }
  tv.l1 /= double(pred.frames);
  const double diff = std::sqrt(diff_sq);
  if (target.fro >= kScEps)
    tv.sc = diff / target.fro;
  else
    tv.sc = diff < kScEps ? 0.0 : diff / kScEps;
  return tv;
}

// dL/d(pred samples) for one channel/resolution term with upstream weight.
void term_backward(const ChannelSpec& target, const ChannelSpec& pred, double upstream,
                   std::size_t n_fft, std::size_t hop, const MelBank& bank,
                   std::vector<double>& grad_signal) {
  double diff_sq = 0.0;
  for (std::size_t i = 0; i < pred.mel.size(); ++i) {
    const double d = pred.mel[i] - target.mel[i];
    diff_sq += d * d;
  }
  const double diff = std::sqrt(diff_sq);
  double sc_scale = 0.0;
  if (target.fro >= kScEps)
    sc_scale = diff > 0.0 ? 1.0 / (diff * target.fro) : 0.0;
  else
    sc_scale = diff >= kScEps && diff > 0.0 ? 1.0 / (diff * kScEps) : 0.0;

  const auto& win = stft_window(n_fft);
  std::vector<double> gmel(pred.mel_bins);
  std::vector<double> gmag(pred.bins);
  std::vector<cplx> gstft(pred.bins);
  std::vector<double> gframe;
  const double inv_frames = 1.0 / double(pred.frames);
  for (std::size_t t = 0; t < pred.frames; ++t) {
    const double* melp = &pred.mel[t * pred.mel_bins];
    const double* melt = &target.mel[t * pred.mel_bins];
    for (std::size_t m = 0; m < pred.mel_bins; ++m) {
      double g = 0.0;
      // l1 on logs, with the floor cutting the gradient
      if (melp[m] > kLogFloor) {
        const double yt = std::max(melt[m], kLogFloor);
        const double s = std::log(melp[m]) - std::log(yt);
        g += inv_frames * (s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0)) / melp[m];
      }
      g += sc_scale * (melp[m] - melt[m]);
      gmel[m] = upstream * g;
    }
    // transpose filterbank
    std::fill(gmag.begin(), gmag.end(), 0.0);
    for (std::size_t m = 0; m < pred.mel_bins; ++m) {
      const double gm = gmel[m];
      if (gm == 0.0) continue;
      const auto& w = bank.row_w[m];
      double* dst = gmag.data() + bank.row_start[m];
      for (std::size_t k = 0; k < w.size(); ++k) dst[k] += w[k] * gm;
    }
    const cplx* X = &pred.stft[t * pred.bins];
    const double* mag = &pred.mag[t * pred.bins];
    for (std::size_t k = 0; k < pred.bins; ++k)
      gstft[k] = mag[k] > 0.0 ? cplx(gmag[k] / mag[k]) * X[k] : cplx(0.0, 0.0);
    fft::rfft_adjoint(gstft, n_fft, gframe);
    double* dst = &grad_signal[t * hop];
    for (std::size_t j = 0; j < n_fft; ++j) dst[j] += gframe[j] * win[j];
  }
}

// dL/d(mel) -> dL/d(stft bins) for one channel of one frame.
void frame_spec_grad(const ChannelSpec& target, const ChannelSpec& pred, double sc_scale,
                     double upstream, std::size_t t, const MelBank& bank,
                     std::vector<double>& gmel, std::vector<double>& gmag,
                     std::vector<cplx>& gstft) {
  const double inv_frames = 1.0 / double(pred.frames);
  const double* melp = &pred.mel[t * pred.mel_bins];
  const double* melt = &target.mel[t * pred.mel_bins];
  for (std::size_t m = 0; m < pred.mel_bins; ++m) {
    double g = 0.0;
    if (melp[m] > kLogFloor) {
      const double yt = std::max(melt[m], kLogFloor);
      const double s = std::log(melp[m]) - std::log(yt);
      g += inv_frames * (s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0)) / melp[m];
    }
    g += sc_scale * (melp[m] - melt[m]);
    gmel[m] = upstream * g;
  }
  std::fill(gmag.begin(), gmag.end(), 0.0);
  for (std::size_t m = 0; m < pred.mel_bins; ++m) {
    const double gm = gmel[m];
    if (gm == 0.0) continue;
    const auto& w = bank.row_w[m];
    double* dst = gmag.data() + bank.row_start[m];
    for (std::size_t k = 0; k < w.size(); ++k) dst[k] += w[k] * gm;
  }
  const cplx* x = &pred.stft[t * pred.bins];
  const double* mag = &pred.mag[t * pred.bins];
  for (std::size_t k = 0; k < pred.bins; ++k)
    gstft[k] = mag[k] > 0.0 ? cplx(gmag[k] / mag[k]) * x[k] : cplx(0.0, 0.0);
}

// Gradient of the four-channel term sum at one resolution w.r.t. the stereo
// samples, via one inverse complex FFT per frame.
void quad_backward(const std::array<ChannelSpec, 4>& target,
                   const std::array<ChannelSpec, 4>& pred,
                   const std::array<double, 4>& upstream, std::size_t n_fft, std::size_t hop,
                   const MelBank& bank, std::vector<double>& grad_l,
                   std::vector<double>& grad_r) {
  const auto& win = stft_window(n_fft);
  const std::size_t bins = pred[0].bins;

  std::array<double, 4> sc_scale{};
  for (int c = 0; c < 4; ++c) {
    double diff_sq = 0.0;
    const auto& tc = target[std::size_t(c)];
    const auto& pc = pred[std::size_t(c)];
    for (std::size_t i = 0; i < pc.mel.size(); ++i) {
      const double d = pc.mel[i] - tc.mel[i];
      diff_sq += d * d;
    }
    const double diff = std::sqrt(diff_sq);
    if (tc.fro >= kScEps)
      sc_scale[std::size_t(c)] = diff > 0.0 ? 1.0 / (diff * tc.fro) : 0.0;
    else
      sc_scale[std::size_t(c)] = diff >= kScEps && diff > 0.0 ? 1.0 / (diff * kScEps) : 0.0;
  }

  std::vector<double> gmel(pred[0].mel_bins), gmag(bins);
  std::array<std::vector<cplx>, 4> gstft;
  for (auto& g : gstft) g.resize(bins);
  std::vector<cplx> packed(n_fft), z;
  for (std::size_t t = 0; t < pred[0].frames; ++t) {
    for (int c = 0; c < 4; ++c)
      frame_spec_grad(target[std::size_t(c)], pred[std::size_t(c)], sc_scale[std::size_t(c)],
                      upstream[std::size_t(c)], t, bank, gmel, gmag, gstft[std::size_t(c)]);
    // Fold mid/side back onto L/R, then pack both adjoints into one inverse
    // transform: V = A + B with A Hermitian from G_L and B = j * (Hermitian
    // from G_R); Re/Im of the inverse give the two time-domain gradients.
    std::fill(packed.begin(), packed.end(), cplx(0.0, 0.0));
    for (std::size_t k = 0; k < bins; ++k) {
      const cplx gl = gstft[0][k] + 0.5 * (gstft[2][k] + gstft[3][k]);
      const cplx gr = gstft[1][k] + 0.5 * (gstft[2][k] - gstft[3][k]);
      const cplx a = 0.5 * gl;
      const cplx b = cplx(-0.5 * gr.imag(), 0.5 * gr.real());  // j/2 * gr
      packed[k] += a + b;
      packed[(n_fft - k) % n_fft] += std::conj(a) + cplx(-std::conj(gr).imag() * 0.5,
                                                         std::conj(gr).real() * 0.5);
    }
    fft::icfft(packed, n_fft, z);
    double* dl = &grad_l[t * hop];
    double* dr = &grad_r[t * hop];
    for (std::size_t j = 0; j < n_fft; ++j) {
      dl[j] += z[j].real() * win[j];
      dr[j] += z[j].imag() * win[j];
    }
  }
}

}  // namespace

MelSpec mel_log_stft(std::span<const double> signal, const StftConfig& cfg,
                     std::size_t resolution_index, double sample_rate) {
  const std::size_t n_fft = cfg.fft_sizes.at(resolution_index);
  const std::size_t hop = n_fft / cfg.hop_divisor;
  const auto& bank = mel_bank(sample_rate, n_fft, cfg.mel_bins);
  auto spec = channel_spec(signal, n_fft, hop, bank, false);
  MelSpec out;
  out.frames = spec.frames;
  out.mel_bins = spec.mel_bins;
  out.v.resize(spec.mel.size());
  for (std::size_t i = 0; i < spec.mel.size(); ++i)
    out.v[i] = std::log(std::max(spec.mel[i], kLogFloor));
  return out;
}

double stft_term(std::span<const double> target, std::span<const double> prediction,
                 const StftConfig& cfg, double sample_rate) {
  if (target.size() != prediction.size())
    throw std::invalid_argument("stft_term: length mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < cfg.fft_sizes.size(); ++r) {
    const std::size_t n_fft = cfg.fft_sizes[r];
    const std::size_t hop = n_fft / cfg.hop_divisor;
    const auto& bank = mel_bank(sample_rate, n_fft, cfg.mel_bins);
    auto ts = channel_spec(target, n_fft, hop, bank, false);
    auto ps = channel_spec(prediction, n_fft, hop, bank, false);
    total += term_against(ts, ps).value();
  }
  return total;
}

// Four projection channels in fixed order.
enum { kChanL = 0, kChanR = 1, kChanM = 2, kChanS = 3 };

struct TargetSpectra {
  double sample_rate = 0.0;
  std::size_t length = 0;
  // [resolution][channel]
  std::vector<std::array<ChannelSpec, 4>> specs;
};

const TargetSpectra* target_spectra_get(const Stereo& target, const StftConfig& cfg,
                                        double sample_rate,
                                        std::shared_ptr<TargetSpectra>& slot) {
  if (slot && slot->length == target.size() && slot->sample_rate == sample_rate)
    return slot.get();
  slot = std::make_shared<TargetSpectra>();
  slot->sample_rate = sample_rate;
  slot->length = target.size();

  const std::size_t n = target.size();
  std::vector<double> aw_l, aw_r;
  if (cfg.a_weighting) {
    const auto& fir = a_weighting_fir(sample_rate);
    const std::size_t off = fir.size() / 2;
    aw_l = ConvPlan(target.left, fir, n, off).output();
    aw_r = ConvPlan(target.right, fir, n, off).output();
  } else {
    aw_l = target.left;
    aw_r = target.right;
  }
  slot->specs.resize(cfg.fft_sizes.size());
  for (std::size_t r = 0; r < cfg.fft_sizes.size(); ++r) {
    const std::size_t n_fft = cfg.fft_sizes[r];
    const std::size_t hop = n_fft / cfg.hop_divisor;
    const auto& bank = mel_bank(sample_rate, n_fft, cfg.mel_bins);
    slot->specs[r] = quad_specs(aw_l, aw_r, n_fft, hop, bank, false);
  }
  return slot.get();
}

LossBreakdown audio_loss(const Stereo& target, const Stereo& prediction, const StftConfig& cfg,
                         const LossWeights& weights, double sample_rate,
                         const TargetSpectra* precomputed, Stereo* grad_pred) {
  require_same_shape(target, prediction, "audio_loss");
  const std::size_t n = prediction.size();

  std::shared_ptr<TargetSpectra> local;
  const TargetSpectra* ts = precomputed ? precomputed
                                        : target_spectra_get(target, cfg, sample_rate, local);

  // Prediction-side projections (keep the A-weighting plans for the adjoint).
  std::vector<double> pred_l, pred_r;
  std::optional<ConvPlan> aw_l, aw_r;
  if (cfg.a_weighting) {
    const auto& fir = a_weighting_fir(sample_rate);
    const std::size_t off = fir.size() / 2;
    aw_l.emplace(prediction.left, fir, n, off);
    aw_r.emplace(prediction.right, fir, n, off);
    pred_l = aw_l->output();
    pred_r = aw_r->output();
  } else {
    pred_l = prediction.left;
    pred_r = prediction.right;
  }

  LossBreakdown out;
  // Per-channel upstream weights: L and R are averaged inside L_lr.
  const std::array<double, 4> chan_weight = {0.5 * weights.alpha_lr, 0.5 * weights.alpha_lr,
                                             weights.alpha_mid, weights.alpha_side};
  std::vector<double> g_l, g_r;
  if (grad_pred) {
    g_l.assign(n, 0.0);
    g_r.assign(n, 0.0);
  }

  for (std::size_t r = 0; r < cfg.fft_sizes.size(); ++r) {
    const std::size_t n_fft = cfg.fft_sizes[r];
    const std::size_t hop = n_fft / cfg.hop_divisor;
    const auto& bank = mel_bank(sample_rate, n_fft, cfg.mel_bins);
    auto ps = quad_specs(pred_l, pred_r, n_fft, hop, bank, grad_pred != nullptr);
    for (int c = 0; c < 4; ++c) {
      const double v = term_against(ts->specs[r][std::size_t(c)], ps[std::size_t(c)]).value();
      if (c == kChanL || c == kChanR)
        out.lr += 0.5 * v;
      else if (c == kChanM)
        out.mid += v;
      else
        out.side += v;
    }
    if (grad_pred)
      quad_backward(ts->specs[r], ps, chan_weight, n_fft, hop, bank, g_l, g_r);
  }
  out.audio = weights.alpha_lr * out.lr + weights.alpha_mid * out.mid +
              weights.alpha_side * out.side;

  if (grad_pred) {
    grad_pred->left.assign(n, 0.0);
    grad_pred->right.assign(n, 0.0);
    if (cfg.a_weighting) {
      std::vector<double> tmp;
      aw_l->grad_x(g_l, tmp);
      grad_pred->left = tmp;
      aw_r->grad_x(g_r, tmp);
      grad_pred->right = tmp;
    } else {
      grad_pred->left = std::move(g_l);
      grad_pred->right = std::move(g_r);
    }
  }
  return out;
}

double gain_staging_loss(const std::map<NodeId, std::array<double, 2>>& ms_norms) {
  double total = 0.0;
  for (const auto& [id, norms] : ms_norms) {
    const double wn = std::max(norms[0], 1e-12);
    const double un = std::max(norms[1], 1e-12);
    total += std::abs(std::log(wn) - std::log(un));
  }
  return total;
}

double gain_staging_coefficients(const std::map<NodeId, std::array<double, 2>>& ms_norms,
                                 double scale,
                                 std::map<NodeId, MidGradInjection>& injections) {
  double total = 0.0;
  for (const auto& [id, norms] : ms_norms) {
    const double wn = norms[0], un = norms[1];
    const double lw = std::log(std::max(wn, 1e-12));
    const double lu = std::log(std::max(un, 1e-12));
    total += std::abs(lw - lu);
    const double sgn = lw > lu ? 1.0 : (lw < lu ? -1.0 : 0.0);
    MidGradInjection inj;
    // d|log||wet_m|| - log||u_m||| / dwet = sgn * wet_m / ||wet_m||^2, and the
    // mirrored term for the input; both are pure mid projections.
    if (wn > 1e-12) inj.wet_coef = scale * sgn / (wn * wn);
    if (un > 1e-12) inj.in_coef = -scale * sgn / (un * un);
    if (inj.wet_coef != 0.0 || inj.in_coef != 0.0) injections[id] = inj;
  }
  return total;
}

double sparsity_loss(const ParamStore& store) {
  double total = 0.0;
  for (const auto& [id, logit] : store.weights) total += sigmoid(logit);
  return total;
}

}  // namespace mixgraph
