#include <doctest.h>

#include <cmath>
#include <complex>

#include "mixgraph/losses.hpp"
#include "mixgraph/rng.hpp"

using namespace mixgraph;

namespace {

constexpr double kPi = 3.14159265358979323846;

Stereo random_stereo(std::size_t n, Rng& rng, double amp = 0.5) {
  Stereo s(n);
  for (auto& v : s.left) v = amp * (2.0 * rng.next_double() - 1.0);
  for (auto& v : s.right) v = amp * (2.0 * rng.next_double() - 1.0);
  return s;
}

// Independent Eq-4-style scalar: direct DFT, HTK mel triangles, natural logs.
// Reimplemented from the definitions, not from the library code.
double oracle_term_single_res(std::span<const double> target, std::span<const double> pred,
                              std::size_t n_fft, std::size_t hop, std::size_t n_mels,
                              double fs) {
  const std::size_t bins = n_fft / 2 + 1;
  auto mel_of = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  std::vector<double> bank(n_mels * bins, 0.0);
  const double mel_max = mel_of(fs / 2.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = mel_max * double(m) / double(n_mels + 1);
    const double c = mel_max * double(m + 1) / double(n_mels + 1);
    const double hi = mel_max * double(m + 2) / double(n_mels + 1);
    double row = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mk = mel_of(double(k) * fs / double(n_fft));
      double v = 0.0;
      if (mk > lo && mk < hi) v = mk <= c ? (mk - lo) / (c - lo) : (hi - mk) / (hi - c);
      bank[m * bins + k] = v;
      row += v;
    }
    if (row <= 0.0) {
      const double fc = 700.0 * (std::pow(10.0, c / 2595.0) - 1.0);
      std::size_t nearest = std::size_t(fc * double(n_fft) / fs + 0.5);
      bank[m * bins + std::min(nearest, bins - 1)] = 1.0;
    }
  }

  auto mel_spec = [&](std::span<const double> x) {
    const std::size_t frames = 1 + (x.size() - n_fft) / hop;
    std::vector<double> mel(frames * n_mels, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<double> mag(bins);
      for (std::size_t k = 0; k < bins; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t j = 0; j < n_fft; ++j) {
          const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * double(j) / double(n_fft));
          const double ang = -2.0 * kPi * double(k) * double(j) / double(n_fft);
          acc += x[t * hop + j] * w * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        mag[k] = std::abs(acc);
      }
      for (std::size_t m = 0; m < n_mels; ++m) {
        double v = 0.0;
        for (std::size_t k = 0; k < bins; ++k) v += bank[m * bins + k] * mag[k];
        mel[t * n_mels + m] = v;
      }
    }
    return std::pair<std::vector<double>, std::size_t>(mel, frames);
  };

  auto [ty, frames] = mel_spec(target);
  auto [py, frames2] = mel_spec(pred);
  double l1 = 0.0, d2 = 0.0, t2 = 0.0;
  for (std::size_t i = 0; i < ty.size(); ++i) {
    const double yt = std::max(ty[i], 1e-8);
    const double yp = std::max(py[i], 1e-8);
    l1 += std::abs(std::log(yp) - std::log(yt));
    d2 += (py[i] - ty[i]) * (py[i] - ty[i]);
    t2 += ty[i] * ty[i];
  }
  return l1 / double(frames) + std::sqrt(d2) / std::sqrt(t2);
}

}  // namespace

TEST_CASE("sparsity coefficient ramp") {
  LossWeights w;
  CHECK(sparsity_coefficient(0, w) == 0.0);
  CHECK(sparsity_coefficient(2000, w) == doctest::Approx(5e-5));
  CHECK(sparsity_coefficient(4000, w) == doctest::Approx(1e-4));
  CHECK(sparsity_coefficient(40000, w) == doctest::Approx(1e-4));
}

TEST_CASE("console phase ignores the sparsity term") {
  LossWeights w;
  LossBreakdown parts;
  parts.audio = 1.0;
  parts.gain_staging = 2.0;
  parts.sparsity = 100.0;
  CHECK(combine_total(parts, Phase::console, 9999, w) == doctest::Approx(1.0 + 2e-3));
  CHECK(combine_total(parts, Phase::prune, 4000, w) ==
        doctest::Approx(1.0 + 2e-3 + 1e-4 * 100.0));
}

TEST_CASE("mel_log_stft: zero signal hits the log floor everywhere") {
  StftConfig cfg;
  std::vector<double> zero(2048, 0.0);
  MelSpec spec = mel_log_stft(zero, cfg, 0, 30000.0);
  REQUIRE(spec.v.size() == spec.frames * spec.mel_bins);
  for (double v : spec.v) CHECK(v == doctest::Approx(std::log(1e-8)));
}

TEST_CASE("mel_log_stft: scaling the signal shifts log magnitudes by log 2") {
  Rng rng(1);
  StftConfig cfg;
  std::vector<double> x(4096);
  for (auto& v : x) v = 0.5 * (2.0 * rng.next_double() - 1.0);
  std::vector<double> x2 = x;
  for (auto& v : x2) v *= 2.0;
  MelSpec a = mel_log_stft(x, cfg, 0, 30000.0);
  MelSpec b = mel_log_stft(x2, cfg, 0, 30000.0);
  for (std::size_t i = 0; i < a.v.size(); ++i)
    if (a.v[i] > std::log(1e-8) + 1.0)  // away from the floor
      CHECK(b.v[i] - a.v[i] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("mel_log_stft: sine peak lands in the oracle's mel bin") {
  StftConfig cfg;
  const double fs = 30000.0, freq = 1000.0;
  std::vector<double> x(8192);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = 0.8 * std::sin(2.0 * kPi * freq * double(i) / fs);
  MelSpec spec = mel_log_stft(x, cfg, 0, fs);

  // Direct-DFT oracle on one frame.
  const std::size_t n_fft = 512, bins = 257;
  std::vector<double> mag(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t j = 0; j < n_fft; ++j) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * double(j) / double(n_fft));
      const double ang = -2.0 * kPi * double(k) * double(j) / double(n_fft);
      acc += x[j] * w * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    mag[k] = std::abs(acc);
  }
  // Oracle peak mel bin: triangle center nearest to the peak FFT bin.
  std::size_t peak_fft = 0;
  for (std::size_t k = 1; k < bins; ++k)
    if (mag[k] > mag[peak_fft]) peak_fft = k;
  auto mel_of = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const double mel_max = mel_of(fs / 2.0);
  const double peak_mel = mel_of(double(peak_fft) * fs / double(n_fft));
  std::size_t oracle_bin =
      std::size_t(std::max(0.0, peak_mel / mel_max * double(cfg.mel_bins + 1) - 1.0) + 0.5);

  std::size_t got = 0;
  for (std::size_t m = 1; m < spec.mel_bins; ++m)
    if (spec.v[m] > spec.v[got]) got = m;
  CHECK(std::abs(int(got) - int(oracle_bin)) <= 1);
}

TEST_CASE("stft_term: zero for identical inputs, exact values for 2x scaling") {
  Rng rng(2);
  std::vector<double> x(8192);
  for (auto& v : x) v = 0.6 * (2.0 * rng.next_double() - 1.0);
  StftConfig cfg;
  CHECK(stft_term(x, x, cfg, 30000.0) == 0.0);

  std::vector<double> x2 = x;
  for (auto& v : x2) v *= 2.0;
  // Per resolution: spectral convergence |2Y - Y|_F / |Y|_F = 1 exactly and
  // the log-l1 term contributes 96 * log 2 (every row is active for noise).
  const double expect = 3.0 * (1.0 + 96.0 * std::log(2.0));
  CHECK(stft_term(x, x2, cfg, 30000.0) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("stft_term matches an independent reimplementation") {
  Rng rng(3);
  std::vector<double> t(1200), p(1200);
  for (auto& v : t) v = 0.5 * (2.0 * rng.next_double() - 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.8 * t[i] + 0.1 * (2.0 * rng.next_double() - 1.0);

  StftConfig cfg;
  cfg.fft_sizes = {512, 512, 512};  // single-resolution oracle, summed thrice
  const double got = stft_term(t, p, cfg, 30000.0);
  const double want = 3.0 * oracle_term_single_res(t, p, 512, 128, 96, 30000.0);
  CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("stft_term rejects too-short signals") {
  StftConfig cfg;
  std::vector<double> x(1000, 0.1);  // shorter than the 4096 resolution
  CHECK_THROWS(stft_term(x, x, cfg, 30000.0));
}

TEST_CASE("audio_loss axioms") {
  Rng rng(4);
  StftConfig cfg;
  LossWeights w;
  Stereo y = random_stereo(8192, rng);
  LossBreakdown same = audio_loss(y, y, cfg, w, 30000.0);
  CHECK(same.audio == 0.0);
  CHECK(same.lr == 0.0);
  CHECK(same.mid == 0.0);
  CHECK(same.side == 0.0);

  // Mono pair: the side channel is silent on both sides -> guarded zero.
  Stereo mono(8192), mono2(8192);
  for (std::size_t i = 0; i < mono.size(); ++i) {
    mono.left[i] = mono.right[i] = 0.4 * std::sin(0.07 * double(i));
    mono2.left[i] = mono2.right[i] = 0.4 * std::sin(0.09 * double(i));
  }
  LossBreakdown lb = audio_loss(mono, mono2, cfg, w, 30000.0);
  CHECK(lb.side == 0.0);
  CHECK(lb.audio == doctest::Approx(w.alpha_lr * lb.lr + w.alpha_mid * lb.mid));
  CHECK(lb.audio > 0.0);
}

TEST_CASE("audio_loss combination weights") {
  Rng rng(5);
  StftConfig cfg;
  LossWeights w;
  Stereo t = random_stereo(8192, rng), p = random_stereo(8192, rng);
  LossBreakdown lb = audio_loss(t, p, cfg, w, 30000.0);
  CHECK(lb.audio ==
        doctest::Approx(0.5 * lb.lr + 0.25 * lb.mid + 0.25 * lb.side).epsilon(1e-12));
  CHECK(lb.audio > 0.0);
}

TEST_CASE("A-weighting filter: unity at 1 kHz, strong cut at 100 Hz") {
  const double fs = 30000.0;
  const auto& fir = a_weighting_fir(fs);
  REQUIRE(fir.size() == 1023);

  auto gain_at = [&](double freq) {
    const std::size_t n = 16384;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * kPi * freq * double(i) / fs);
    ConvPlan plan(x, fir, n, fir.size() / 2);
    double in = 0.0, out = 0.0;
    for (std::size_t i = 2000; i + 2000 < n; ++i) {
      in += x[i] * x[i];
      out += plan.output()[i] * plan.output()[i];
    }
    return 10.0 * std::log10(out / in);
  };
  CHECK(std::abs(gain_at(1000.0)) < 0.1);           // 0 dB at 1 kHz
  CHECK(gain_at(100.0) == doctest::Approx(-19.1).epsilon(0.08));  // standard curve
}

TEST_CASE("gain staging: values and set membership") {
  // i -> e -> o with a broadband gain of exp(c): contribution |c|.
  Graph g;
  g.nodes.push_back({0, NodeType::input, 0});
  g.nodes.push_back({1, NodeType::equalizer, std::nullopt});
  g.nodes.push_back({2, NodeType::output, std::nullopt});
  g.edges = {{0, 1}, {1, 2}};
  ParamStore store = init_param_store(g, 0, 30000.0);
  for (auto& v : store.params[1].blocks["log_mag"]) v = std::log(2.0);

  Rng rng(6);
  std::vector<Stereo> sources;
  sources.push_back(random_stereo(4000, rng));
  ProcessorConfig pcfg;
  pcfg.sample_rate = 30000.0;
  ExecOptions opts;
  opts.gain_staging_norms = true;

  RenderOutput out = execute(g, plan_schedule(g), store, sources, pcfg, opts);
  const double lg = gain_staging_loss(out.ms_norms);
  CHECK(lg == doctest::Approx(std::log(2.0)).epsilon(1e-4));

  // The term reads the wet signal, not the dry/wet output: w must not matter.
  store.weights[1] = -2.0;
  RenderOutput out2 = execute(g, plan_schedule(g), store, sources, pcfg, opts);
  CHECK(gain_staging_loss(out2.ms_norms) == doctest::Approx(lg).epsilon(1e-12));

  // Gains, compressors and noisegates are not in the regularized set.
  Graph g2;
  g2.nodes.push_back({0, NodeType::input, 0});
  g2.nodes.push_back({1, NodeType::gain_pan, std::nullopt});
  g2.nodes.push_back({2, NodeType::compressor, std::nullopt});
  g2.nodes.push_back({3, NodeType::output, std::nullopt});
  g2.edges = {{0, 1}, {1, 2}, {2, 3}};
  ParamStore store2 = init_param_store(g2, 0, 30000.0);
  store2.params[1].blocks["gain"][0] = 2.0;  // loud, would contribute if counted
  RenderOutput out3 = execute(g2, plan_schedule(g2), store2, sources, pcfg, opts);
  CHECK(out3.ms_norms.empty());
  CHECK(gain_staging_loss(out3.ms_norms) == 0.0);
}

TEST_CASE("sparsity loss") {
  ParamStore store;
  for (NodeId id = 0; id < 10; ++id) store.weights[id] = 0.0;  // w = 0.5 each
  CHECK(sparsity_loss(store) == doctest::Approx(5.0));
  for (auto& [id, w] : store.weights) w = -800.0;  // w = 0
  CHECK(sparsity_loss(store) == 0.0);
  store.weights.erase(9);  // pruned nodes no longer contribute
  CHECK(store.weights.size() == 9);
  CHECK(sparsity_loss(store) == 0.0);
}
