#include "mixgraph/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mixgraph {

const char* sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::brute_force: return "brute_force";
    case SamplerKind::dry_wet: return "dry_wet";
    case SamplerKind::hybrid: return "hybrid";
  }
  return "?";
}

SamplerKind sampler_from_name(const std::string& name) {
  if (name == "brute_force") return SamplerKind::brute_force;
  if (name == "dry_wet") return SamplerKind::dry_wet;
  if (name == "hybrid") return SamplerKind::hybrid;
  throw std::invalid_argument("unknown sampler: " + name);
}

namespace {

// Every remaining processor once, in seeded random order.
class BruteForceStage : public StageSampler {
 public:
  BruteForceStage(const std::vector<NodeId>& pool, Rng& rng) : pool_(pool) {
    rng.shuffle(pool_);
  }
  bool next(std::vector<NodeId>& candidates) override {
    if (index_ >= pool_.size()) return false;
    candidates = {pool_[index_++]};
    return true;
  }
  void feedback(bool) override {}
  const char* name() const override { return "brute_force"; }

 private:
  std::vector<NodeId> pool_;
  std::size_t index_ = 0;
};

// Per-type smallest-weight candidate batches with halving on rejection.
class DryWetStage : public StageSampler {
 public:
  DryWetStage(const Graph& graph, const ParamStore& store, double r_init, Rng& rng)
      : rng_(rng) {
    for (const auto& n : graph.nodes) {
      if (!is_processor(n.type)) continue;
      auto& t = types_[n.type];
      t.nodes.push_back(n.id);
    }
    for (auto& [type, t] : types_) {
      t.initial_count = t.nodes.size();
      t.ratio = r_init;
      // Smallest weights first; ties by ascending node id.
      std::sort(t.nodes.begin(), t.nodes.end(), [&](NodeId a, NodeId b) {
        const double wa = sigmoid(store.weights.at(a));
        const double wb = sigmoid(store.weights.at(b));
        return wa != wb ? wa < wb : a < b;
      });
      pool_.push_back(type);
    }
  }

  bool next(std::vector<NodeId>& candidates) override {
    if (pool_.empty()) return false;
    const std::size_t pick = std::size_t(rng_.next_below(pool_.size()));
    current_ = pool_[pick];
    auto& t = types_[current_];
    const std::size_t want = t.candidate_count();
    const std::size_t take = std::min(want, t.nodes.size());
    candidates.assign(t.nodes.begin(), t.nodes.begin() + std::ptrdiff_t(take));
    return true;
  }

  void feedback(bool accepted) override {
    auto& t = types_[current_];
    if (accepted) {
      const std::size_t take = std::min(t.candidate_count(), t.nodes.size());
      t.nodes.erase(t.nodes.begin(), t.nodes.begin() + std::ptrdiff_t(take));
      if (t.nodes.empty()) drop(current_);
    } else if (t.candidate_count() > 1) {
      t.ratio *= 0.5;
    } else {
      drop(current_);
    }
  }

  const char* name() const override { return "dry_wet"; }

 private:
  struct TypeState {
    std::vector<NodeId> nodes;  // remaining, ascending weight
    std::size_t initial_count = 0;
    double ratio = 0.1;
    std::size_t candidate_count() const {
      return std::max<std::size_t>(1, std::size_t(ratio * double(initial_count)));
    }
  };

  void drop(NodeType type) {
    pool_.erase(std::remove(pool_.begin(), pool_.end(), type), pool_.end());
  }

  std::map<NodeType, TypeState> types_;
  std::vector<NodeType> pool_;
  NodeType current_ = NodeType::gain_pan;
  Rng& rng_;
};

PruneMask ones_mask(const Graph& graph) {
  PruneMask m;
  for (NodeId id : graph.processor_ids()) m.keep[id] = 1;
  return m;
}

}  // namespace

std::unique_ptr<StageSampler> make_stage_sampler(const PruneConfig& cfg,
                                                 std::size_t round_1based, const Graph& graph,
                                                 const ParamStore& store, Rng& rng) {
  SamplerKind kind = cfg.sampler;
  if (kind == SamplerKind::hybrid) {
    const bool brute = cfg.hybrid_period > 0 && round_1based % cfg.hybrid_period == 0;
    kind = brute ? SamplerKind::brute_force : SamplerKind::dry_wet;
  }
  if (kind == SamplerKind::brute_force)
    return std::make_unique<BruteForceStage>(graph.processor_ids(), rng);
  return std::make_unique<DryWetStage>(graph, store, cfg.r_init, rng);
}

SearchResult search(const Graph& console, ParamStore store, const SongSession& session,
                    const TrainConfig& train_cfg, const PruneConfig& prune_cfg) {
  {
    auto report = validate(console);
    if (!report.ok())
      throw std::invalid_argument("search: console graph invalid: " +
                                  report.violations.front().message);
  }

  SearchResult result;
  result.graph = console;
  result.store = std::move(store);

  AdamW optimizer;
  Rng train_rng(Rng::derive(train_cfg.seed, 0x7261696e));
  Rng sampler_rng(Rng::derive(prune_cfg.seed, 0x70727565));

  // Initial console fit, then the pruning threshold.
  ParamStore checkpoint = result.store;
  bool aborted = false;
  try {
    auto tr = train(result.graph, result.store, optimizer, session, Phase::console,
                    train_cfg.preprune_console_steps, 0, train_cfg, train_rng);
    result.report.trace = std::move(tr.trace);
    result.report.total_steps += train_cfg.preprune_console_steps;
  } catch (const std::exception& e) {
    result.store = std::move(checkpoint);
    result.report.abort_reason = e.what();
    aborted = true;
  }

  EvalCache eval_cache;
  double threshold = evaluate(result.graph, result.store, nullptr, session, train_cfg,
                              &eval_cache)
                         .audio;
  result.report.console_loss = threshold;

  std::size_t prune_steps_done = 0;
  for (std::size_t round = 1; !aborted && round <= prune_cfg.rounds; ++round) {
    auto stage = make_stage_sampler(prune_cfg, round, result.graph, result.store, sampler_rng);
    PruneMask accumulated = ones_mask(result.graph);

    std::vector<NodeId> candidates;
    while (stage->next(candidates)) {
      PruneMask trial_mask = accumulated;
      for (NodeId id : candidates) trial_mask.keep[id] = 0;
      const double la =
          evaluate(result.graph, result.store, &trial_mask, session, train_cfg, &eval_cache)
              .audio;
      // Strict tolerance test; a trial exactly matching the threshold is a
      // zero-effect removal and is kept as well (relevant only at tau = 0).
      const bool accepted = la < threshold + prune_cfg.tolerance || la <= threshold;
      result.report.trials.push_back(
          {round, stage->name(), candidates, la, threshold, accepted});
      if (accepted) {
        threshold = std::min(threshold, la);
        accumulated = std::move(trial_mask);
      }
      stage->feedback(accepted);
    }

    // Apply the accumulated mask, drop the removed state, fine-tune.
    result.graph = apply_prune(result.graph, accumulated);
    prune_store(result.store, accumulated);
    optimizer.drop_pruned(accumulated);

    checkpoint = result.store;
    try {
      auto tr = train(result.graph, result.store, optimizer, session, Phase::prune,
                      train_cfg.finetune_steps, prune_steps_done, train_cfg, train_rng);
      for (auto& e : tr.trace) {
        e.step += prune_steps_done;
        result.report.trace.push_back(e);
      }
      prune_steps_done += train_cfg.finetune_steps;
      result.report.total_steps += train_cfg.finetune_steps;
    } catch (const std::exception& e) {
      result.store = std::move(checkpoint);
      result.report.abort_reason = e.what();
      break;
    }
  }

  result.report.threshold_final = threshold;
  result.report.final_breakdown =
      evaluate(result.graph, result.store, nullptr, session, train_cfg, &eval_cache);
  result.report.final_loss = result.report.final_breakdown.audio;
  result.report.graph_metrics = metrics(console, result.graph);
  return result;
}

std::vector<ImportanceRecord> importance_scan(const Graph& graph, const ParamStore& store,
                                              const SongSession& session,
                                              const TrainConfig& cfg) {
  EvalCache cache;
  const double base = evaluate(graph, store, nullptr, session, cfg, &cache).audio;
  std::vector<ImportanceRecord> records;
  for (const auto& node : graph.nodes) {
    if (!is_processor(node.type)) continue;
    PruneMask mask;
    mask.keep[node.id] = 0;
    const double la = evaluate(graph, store, &mask, session, cfg, &cache).audio;
    ImportanceRecord rec;
    rec.node = node.id;
    rec.type = node.type;
    rec.weight = sigmoid(store.weights.at(node.id));
    rec.delta = la - base;
    records.push_back(rec);
  }
  return records;
}

}  // namespace mixgraph
