#pragma once

#include <memory>
#include <optional>

#include "mixgraph/audio.hpp"
#include "mixgraph/fft.hpp"
#include "mixgraph/params.hpp"

namespace mixgraph {

struct ProcessorConfig {
  double sample_rate = 30000.0;
  // Damping base for the delay's surrogate sinusoids; < 0 selects the
  // default 1 - 8/N_ir. Tests override it to 1 for exact integer delays.
  double delay_damping = -1.0;
  double envelope_floor = 1e-10;  // added inside the dB conversion

  std::size_t ir_length() const { return std::size_t(kIrSeconds * sample_rate + 0.5); }
  double damping() const {
    return delay_damping < 0.0 ? 1.0 - 8.0 / double(ir_length()) : delay_damping;
  }
};

// Opaque per-render state captured by a forward pass so the matching backward
// pass can run without recomputing spectra or envelopes.
struct FwdCache;
void destroy_cache(FwdCache*) noexcept;

struct FwdCacheDeleter {
  void operator()(FwdCache* c) const noexcept { destroy_cache(c); }
};
using CachePtr = std::unique_ptr<FwdCache, FwdCacheDeleter>;

// wet = f(u, params). When keep_cache is set the returned cache must be handed
// back to processor_backward together with the same inputs.
CachePtr processor_forward(NodeType type, const NodeParams& params, const Stereo& u,
                           const ProcessorConfig& cfg, Stereo& wet, bool keep_cache);

// Exact adjoint of processor_forward. Accumulates into grad_u and grad_params.
void processor_backward(NodeType type, const NodeParams& params, const FwdCache& cache,
                        const Stereo& u, const Stereo& grad_wet, const ProcessorConfig& cfg,
                        Stereo& grad_u, NodeParams& grad_params);

// y = w * wet + (1 - w) * u
void drywet_apply(const Stereo& u, const Stereo& wet, double w, Stereo& y);

// Full node evaluation: processor forward followed by the dry/wet mix with
// effective weight sigmoid(logit) * mask_bit. A zero effective weight skips
// the wet path entirely (exact bypass). The wet signal is not retained: for
// w > 0 it is recovered from (u, y) as u + (y - u) / w.
struct NodeEval {
  Stereo y;
  CachePtr cache;
  double w_eff = 0.0;
  bool bypassed = false;
  // mid-channel l2 norms of the wet and input signals (when requested)
  double wet_mid_norm = 0.0;
  double in_mid_norm = 0.0;
};

NodeEval node_forward(NodeType type, const NodeParams& params, double logit_w, double mask_bit,
                      const Stereo& u, const ProcessorConfig& cfg, bool keep_cache,
                      bool want_mid_norms = false);

// Extra gradients injected by regularizers that act on mid projections:
// grad_wet += 0.5 * wet_coef * mid(wet), grad_u += 0.5 * in_coef * mid(u).
struct MidGradInjection {
  double wet_coef = 0.0;
  double in_coef = 0.0;
};

// Gradients of a scalar loss through one node given dL/dy. `y` is the node's
// dry/wet output from the forward pass (the wet signal is reconstructed from
// it). Accumulates grad_u and grad_params; returns dL/d logit.
double node_backward(NodeType type, const NodeParams& params, double logit_w, double mask_bit,
                     const Stereo& u, const Stereo& y, const NodeEval& eval,
                     const Stereo& grad_y, const MidGradInjection* injection,
                     const ProcessorConfig& cfg, Stereo& grad_u, NodeParams& grad_params);

}  // namespace mixgraph
