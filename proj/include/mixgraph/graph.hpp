#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mixgraph {

// Node types. 'input', 'output' and 'mix' are auxiliary; the other seven are
// processors and the only prunable nodes.
enum class NodeType : std::uint8_t {
  input,
  output,
  mix,
  equalizer,
  compressor,
  noisegate,
  stereo_imager,
  gain_pan,
  reverb,
  multitap_delay,
};

constexpr std::array<NodeType, 7> kProcessorTypes = {
    NodeType::equalizer,  NodeType::compressor, NodeType::noisegate,    NodeType::stereo_imager,
    NodeType::gain_pan,   NodeType::reverb,     NodeType::multitap_delay,
};

// Serial chain applied to every track and every subgroup bus, in this order.
constexpr std::array<NodeType, 7> kChainOrder = {
    NodeType::equalizer,  NodeType::compressor, NodeType::noisegate,    NodeType::stereo_imager,
    NodeType::gain_pan,   NodeType::multitap_delay, NodeType::reverb,
};

char type_letter(NodeType t);
std::optional<NodeType> type_from_letter(char c);
bool is_processor(NodeType t);

using NodeId = std::int64_t;

struct Node {
  NodeId id = -1;
  NodeType type = NodeType::input;
  // Track index for input nodes, absent otherwise.
  std::optional<int> source_index;
};

struct Edge {
  NodeId src = -1;
  NodeId dst = -1;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// Directed acyclic audio-processing graph. Immutable by convention after
// construction; pruning builds a new graph.
struct Graph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  const Node* find(NodeId id) const;
  std::vector<NodeId> predecessors(NodeId id) const;
  std::vector<NodeId> successors(NodeId id) const;
  std::size_t processor_count() const;
  std::vector<NodeId> processor_ids() const;
};

// Partition of track indices into named-by-position groups.
struct SubgroupSpec {
  std::vector<std::vector<int>> groups;
};

// keep[id] = 1 keeps a processor, 0 removes it. Only processor nodes appear.
struct PruneMask {
  std::map<NodeId, int> keep;

  // Element-wise product over the union of keys.
  static PruneMask combine(const PruneMask& a, const PruneMask& b);
};

struct GraphMetrics {
  double total_ratio = 0.0;
  std::map<NodeType, double> per_type_ratio;
  std::size_t node_count = 0;
  std::size_t processor_count = 0;
};

struct Violation {
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Builds the full mixing console: per-track serial chain, subgroup mix nodes,
// per-subgroup bus chain, single output summing the buses. Ids are dense and
// deterministic. `chain` selects which processor types populate the chains
// (defaults to all seven, console order preserved).
Graph build_mixing_console(int track_count, const SubgroupSpec& subgroups);
Graph build_mixing_console(int track_count, const SubgroupSpec& subgroups,
                           const std::vector<NodeType>& chain);

void validate_subgroups(int track_count, const SubgroupSpec& subgroups);

ValidationReport validate(const Graph& graph);

// Removes every keep=0 node, rewiring its predecessor to its successor.
Graph apply_prune(const Graph& graph, const PruneMask& mask);

GraphMetrics metrics(const Graph& console, const Graph& pruned);

// Deterministic topological order (Kahn, smallest id first). Throws on cycles.
std::vector<NodeId> topological_order(const Graph& graph);

}  // namespace mixgraph
