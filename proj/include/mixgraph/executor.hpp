#pragma once

#include <map>
#include <vector>

#include "mixgraph/graph.hpp"
#include "mixgraph/params.hpp"
#include "mixgraph/processors.hpp"

namespace mixgraph {

// Batched render schedule: stages of same-type nodes; every edge crosses
// stages forward, so all nodes within a stage are independent.
struct SchedulePlan {
  struct Stage {
    NodeType type;
    std::vector<NodeId> nodes;
  };
  std::vector<Stage> stages;

  std::size_t stage_count() const { return stages.size(); }
  std::size_t stage_of(NodeId id) const;
};

SchedulePlan plan_schedule(const Graph& graph);

struct ExecOptions {
  const PruneMask* mask = nullptr;  // optional; keep=0 forces bypass
  bool keep_activations = false;    // retain wet signals + caches for backward
  bool collect_outputs = false;     // copy every node output into RenderOutput
  bool gain_staging_norms = false;  // record mid-channel energies for e/r/d nodes
};

struct RenderOutput {
  Stereo mix;
  std::map<NodeId, Stereo> node_outputs;             // when collect_outputs
  std::map<NodeId, std::array<double, 2>> ms_norms;  // {||wet_mid||, ||in_mid||}
};

// Everything backward_pass needs from a forward render.
struct ExecutionRecord {
  struct NodeState {
    NodeType type = NodeType::input;
    NodeId input_node = -1;  // single predecessor (processors only)
    double mask_bit = 1.0;
    NodeEval eval;  // wet/cache/w_eff for processors
  };
  std::map<NodeId, Stereo> outputs;  // every node's post-dry/wet output
  std::map<NodeId, NodeState> states;
  NodeId output_node = -1;
  std::size_t length = 0;
};

// Batched execution over the schedule. Sources are indexed by the input
// nodes' source_index. Mix/output nodes sum in ascending producer id order.
RenderOutput execute(const Graph& graph, const SchedulePlan& plan, const ParamStore& store,
                     const std::vector<Stereo>& sources, const ProcessorConfig& cfg,
                     const ExecOptions& options, ExecutionRecord* record = nullptr);

// Node-by-node render in topological order; the semantic oracle for execute.
RenderOutput execute_reference(const Graph& graph, const ParamStore& store,
                               const std::vector<Stereo>& sources, const ProcessorConfig& cfg,
                               const ExecOptions& options, ExecutionRecord* record = nullptr);

// Reverse-stage gradient accumulation. grad_mix is dL/d(output mix);
// injections add mid-projected gradients on a node's wet and input signals
// (the gain-staging term). Returns a ParamStore-shaped gradient container
// (weights hold dL/d logit).
ParamStore backward_pass(const Graph& graph, const ParamStore& store,
                         const ExecutionRecord& record, const Stereo& grad_mix,
                         const ProcessorConfig& cfg,
                         const std::map<NodeId, MidGradInjection>* injections = nullptr);

}  // namespace mixgraph
