#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixgraph/training.hpp"

namespace mixgraph {

enum class SamplerKind { brute_force, dry_wet, hybrid };

const char* sampler_name(SamplerKind kind);
SamplerKind sampler_from_name(const std::string& name);

struct PruneConfig {
  double tolerance = 0.01;
  SamplerKind sampler = SamplerKind::hybrid;
  std::size_t rounds = 12;
  double r_init = 0.1;
  std::size_t hybrid_period = 4;  // brute-force fires on rounds divisible by this
  std::uint64_t seed = 0;
};

struct TrialRecord {
  std::size_t round = 0;
  std::string sampler;
  std::vector<NodeId> candidates;
  double audio_loss = 0.0;
  double threshold = 0.0;  // L_a^min before this trial
  bool accepted = false;
};

struct ImportanceRecord {
  NodeId node = -1;
  NodeType type = NodeType::gain_pan;
  double weight = 0.0;
  double delta = 0.0;  // loss increase when this node alone is pruned
};

// One pruning stage's candidate stream. next() yields the trial candidates;
// feedback() reports acceptance and advances the stream:
//   brute force  - every remaining processor exactly once, seeded order;
//   dry/wet      - per-type batches of the max(1, floor(r_t N_t))
//                  smallest-weight nodes; rejection halves r_t until single
//                  candidates fail, which drops the type from the pool.
class StageSampler {
 public:
  virtual ~StageSampler() = default;
  virtual bool next(std::vector<NodeId>& candidates) = 0;
  virtual void feedback(bool accepted) = 0;
  virtual const char* name() const = 0;
};

// Stage factory; `round_1based` selects brute force on hybrid rounds
// divisible by cfg.hybrid_period.
std::unique_ptr<StageSampler> make_stage_sampler(const PruneConfig& cfg,
                                                 std::size_t round_1based, const Graph& graph,
                                                 const ParamStore& store, Rng& rng);

struct SearchReport {
  double console_loss = 0.0;    // L_a after the initial console fit
  double final_loss = 0.0;      // terminal evaluate
  double threshold_final = 0.0; // L_a^min at the end
  LossBreakdown final_breakdown;
  GraphMetrics graph_metrics;
  std::vector<TrialRecord> trials;
  std::vector<TraceEntry> trace;  // all phases, in order
  std::size_t total_steps = 0;
  std::string abort_reason;  // set when training diverged; state is the last good checkpoint
};

struct SearchResult {
  Graph graph;
  ParamStore store;
  SearchReport report;
};

// Iterative prune/fine-tune search over a freshly built or preloaded console.
// Follows: init -> console fit -> threshold -> rounds of {trial stage ->
// apply_prune -> fine-tune} -> terminal evaluate.
SearchResult search(const Graph& console, ParamStore store, const SongSession& session,
                    const TrainConfig& train_cfg, const PruneConfig& prune_cfg);

// Per-node loss increase when only that node is masked (the weight/importance
// scatter data).
std::vector<ImportanceRecord> importance_scan(const Graph& graph, const ParamStore& store,
                                              const SongSession& session,
                                              const TrainConfig& cfg);

}  // namespace mixgraph
