#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixgraph/graph.hpp"

namespace mixgraph {

// Fixed processor dimensions. The reverb/delay parameter grids do not depend
// on the sample rate; only the impulse-response length in samples does.
constexpr std::size_t kEqBins = 1024;
constexpr std::size_t kEqFirLen = 2047;  // odd-length zero-phase FIR from 1024 bins
constexpr std::size_t kReverbFft = 384;
constexpr std::size_t kReverbHop = 192;
constexpr std::size_t kReverbBins = kReverbFft / 2 + 1;  // 193
constexpr std::size_t kDelayTaps = 20;                   // one per 100 ms of a 2 s IR
constexpr std::size_t kDelayFirBins = 20;
constexpr std::size_t kDelayFirLen = 39;
constexpr double kIrSeconds = 2.0;
constexpr double kDelayTapSeconds = 0.1;

struct BlockSpec {
  const char* name;
  std::size_t size;
  bool trainable;
};

// Parameter layout per processor type. All parameters are stored as
// unconstrained reals; constrained views are computed by the processors.
std::span<const BlockSpec> blocks_for(NodeType type);

struct NodeParams {
  NodeType type = NodeType::gain_pan;
  std::map<std::string, std::vector<double>> blocks;

  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;
};

// All trainable state of a graph: per-node parameter blocks plus the
// unconstrained dry/wet logits (weights[id]; w = sigmoid(logit)).
struct ParamStore {
  std::map<NodeId, NodeParams> params;
  std::map<NodeId, double> weights;
};

// Smooth maps between unconstrained reals and the constrained ranges.
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
inline double sigmoid_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s);
}
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Compressor/noisegate constrained views.
inline double comp_threshold_db(double raw) { return -60.0 + 60.0 * sigmoid(raw); }
inline double comp_ratio(double raw) { return 1.0 + 19.0 * sigmoid(raw); }
inline double comp_alpha(double raw) { return sigmoid(raw); }

// Neutral starting point for one node; reverb nodes draw their noise seed
// from (run_seed, node id).
NodeParams init_params(NodeType type, NodeId id, std::uint64_t run_seed, double sample_rate);

// Initializes parameters and logits for every processor in the graph.
ParamStore init_param_store(const Graph& graph, std::uint64_t run_seed, double sample_rate);

// Same shape, all values zero; gradient accumulator.
ParamStore zero_like(const ParamStore& store);

// Drops entries for nodes removed by the mask (keep = 0).
void prune_store(ParamStore& store, const PruneMask& mask);

// Checks that the store covers exactly the graph's processors with the right
// block shapes; throws on mismatch.
void validate_store(const Graph& graph, const ParamStore& store);

}  // namespace mixgraph
