#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "mixgraph/audio.hpp"
#include "mixgraph/executor.hpp"

namespace mixgraph {

struct StftConfig {
  std::array<std::size_t, 3> fft_sizes{512, 1024, 4096};
  std::size_t hop_divisor = 4;
  std::size_t mel_bins = 96;
  bool a_weighting = true;
};

struct LossWeights {
  double alpha_lr = 0.5;
  double alpha_mid = 0.25;
  double alpha_side = 0.25;
  double alpha_gain = 1e-3;
  double alpha_sparsity_max = 1e-4;
  std::size_t sparsity_ramp_steps = 4000;
};

enum class Phase { console, prune };

struct LossBreakdown {
  double audio = 0.0;   // L_a
  double lr = 0.0, mid = 0.0, side = 0.0;
  double gain_staging = 0.0;  // L_g (unweighted)
  double sparsity = 0.0;      // L_p (unweighted)
  double total = 0.0;
};

// Sparsity coefficient: linear ramp 0 -> alpha_sparsity_max over the first
// sparsity_ramp_steps pruning-phase steps, then held.
double sparsity_coefficient(std::size_t prune_step, const LossWeights& weights);

double combine_total(const LossBreakdown& parts, Phase phase, std::size_t prune_step,
                     const LossWeights& weights);

// Log-Mel spectrogram of one channel at one resolution (A-weighting is applied
// by the caller). Frame-major layout: value(t, m) = v[t * mel_bins + m].
struct MelSpec {
  std::size_t frames = 0, mel_bins = 0;
  std::vector<double> v;
};

MelSpec mel_log_stft(std::span<const double> signal, const StftConfig& cfg,
                     std::size_t resolution_index, double sample_rate);

// Sum over resolutions of  |log Y - log Yhat|_1 / frames  +  |Y - Yhat|_F / |Y|_F.
double stft_term(std::span<const double> target, std::span<const double> prediction,
                 const StftConfig& cfg, double sample_rate);

// Precomputed target-side spectra; reusable across repeated evaluations
// against the same target window.
struct TargetSpectra;
const TargetSpectra* target_spectra_get(const Stereo& target, const StftConfig& cfg,
                                        double sample_rate, std::shared_ptr<TargetSpectra>& slot);

// Full audio loss over L/R + mid/side projections, optionally with the
// gradient w.r.t. the prediction samples.
LossBreakdown audio_loss(const Stereo& target, const Stereo& prediction, const StftConfig& cfg,
                         const LossWeights& weights, double sample_rate,
                         const TargetSpectra* precomputed = nullptr, Stereo* grad_pred = nullptr);

// Gain-staging regularizer: sum over active equalizer/reverb/delay nodes of
// |log ||wet_mid|| - log ||in_mid|||. Value-only form consumes the norms
// recorded by the executor.
double gain_staging_loss(const std::map<NodeId, std::array<double, 2>>& ms_norms);

// Gradient form: converts the recorded mid-channel norms into the per-node
// mid-projection coefficients consumed by backward_pass, scaled by `scale`.
// Returns the (unscaled) loss value.
double gain_staging_coefficients(const std::map<NodeId, std::array<double, 2>>& ms_norms,
                                 double scale,
                                 std::map<NodeId, MidGradInjection>& injections);

// L_p: sum of dry/wet weights (sigmoid of the logits) over remaining nodes.
double sparsity_loss(const ParamStore& store);

// A-weighting pre-filter (length-1023 linear-phase FIR sampled from the
// standard curve, unity at 1 kHz); cached per sample rate.
const std::vector<double>& a_weighting_fir(double sample_rate);

}  // namespace mixgraph
