#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixgraph/executor.hpp"
#include "mixgraph/losses.hpp"
#include "mixgraph/rng.hpp"

namespace mixgraph {

struct TrainConfig {
  double lr = 0.01;
  std::size_t console_steps = 12000;          // standalone console fit
  std::size_t preprune_console_steps = 6000;  // console fit inside a search
  std::size_t finetune_steps = 500;           // per pruning round
  std::size_t rounds = 12;
  double segment_seconds = 3.8;
  double tail_seconds = 2.8;  // loss-bearing tail; the head warms up processor state
  std::uint64_t seed = 0;
  double grad_clip = 10.0;
  // AdamW at its conventional defaults; only the learning rate is tuned.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  StftConfig stft;
  LossWeights loss_weights;
};

struct SongSession {
  std::vector<Stereo> tracks;
  SubgroupSpec subgroups;
  Stereo mix;
  double sample_rate = 30000.0;
};

struct TraceEntry {
  std::size_t step = 0;  // global step within its phase sequence
  Phase phase = Phase::console;
  double audio = 0.0, gain_staging = 0.0, sparsity = 0.0, total = 0.0;
};

// Decoupled-weight-decay Adam over the ParamStore layout. Non-trainable
// blocks (e.g. reverb noise seeds) are left untouched. Moments persist across
// pruning rounds; pruned entries are dropped.
class AdamW {
 public:
  void step(ParamStore& params, const ParamStore& grads, const TrainConfig& cfg);
  void drop_pruned(const PruneMask& mask);
  std::size_t steps_taken() const { return t_; }

 private:
  void ensure_state(const ParamStore& params);
  ParamStore m_, v_;
  bool init_ = false;
  std::size_t t_ = 0;
};

// Uniform random 3.8 s crop; sessions shorter than one segment are looped.
std::size_t sample_segment_start(std::size_t song_len, std::size_t segment_len, Rng& rng);

// Scales gradients so their global l2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(ParamStore& grads, double max_norm);

struct TrainResult {
  std::vector<TraceEntry> trace;
};

// Gradient-descent fitting loop. phase selects the objective (Eq-6-style for
// console, sparsity-regularized for prune); prune_step_offset carries the
// cumulative fine-tuning step count across rounds for the sparsity ramp.
// Throws on non-finite loss, naming the first offending node.
TrainResult train(const Graph& graph, ParamStore& store, AdamW& optimizer,
                  const SongSession& session, Phase phase, std::size_t steps,
                  std::size_t prune_step_offset, const TrainConfig& cfg, Rng& sample_rng);

// Deterministic full-song evaluation: consecutive tail windows, each rendered
// with its preceding warm-up context; audio loss averaged across windows.
struct EvalCache {
  struct Window {
    std::size_t render_start = 0, render_len = 0, tail_offset = 0, tail_len = 0;
    std::shared_ptr<TargetSpectra> target;
    Stereo target_tail;
  };
  std::vector<Window> windows;
  std::size_t song_len = 0;
  double sample_rate = 0.0;
};

LossBreakdown evaluate(const Graph& graph, const ParamStore& store, const PruneMask* mask,
                       const SongSession& session, const TrainConfig& cfg,
                       EvalCache* cache = nullptr);

}  // namespace mixgraph
