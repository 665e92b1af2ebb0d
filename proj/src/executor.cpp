#include "mixgraph/executor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace mixgraph {

namespace {

int chain_position(NodeType t) {
  for (std::size_t i = 0; i < kChainOrder.size(); ++i)
    if (kChainOrder[i] == t) return int(i);
  return -1;
}

// Section index: number of mix nodes crossed on the longest path from any
// input. Track-chain processors and their mix node share section 0; bus
// processors live in section 1, and so on for nested subgroup layers.
std::unordered_map<NodeId, int> section_index(const Graph& graph,
                                              const std::vector<NodeId>& topo) {
  std::unordered_map<NodeId, const Node*> by_id;
  for (const auto& n : graph.nodes) by_id[n.id] = &n;
  std::unordered_map<NodeId, std::vector<NodeId>> preds;
  for (const auto& e : graph.edges) preds[e.dst].push_back(e.src);
  std::unordered_map<NodeId, int> sec;
  for (NodeId v : topo) {
    int s = 0;
    for (NodeId p : preds[v]) {
      const int cand = sec[p] + (by_id[p]->type == NodeType::mix ? 1 : 0);
      s = std::max(s, cand);
    }
    sec[v] = s;
  }
  return sec;
}

bool plan_is_sound(const Graph& graph, const SchedulePlan& plan) {
  std::unordered_map<NodeId, std::size_t> stage_of;
  for (std::size_t s = 0; s < plan.stages.size(); ++s)
    for (NodeId id : plan.stages[s].nodes) stage_of[id] = s;
  if (stage_of.size() != graph.nodes.size()) return false;
  for (const auto& e : graph.edges)
    if (stage_of[e.src] >= stage_of[e.dst]) return false;
  return true;
}

// Fallback for graphs that do not follow the console chain order: ASAP levels
// split by type. Always sound, possibly more stages.
SchedulePlan asap_schedule(const Graph& graph, const std::vector<NodeId>& topo) {
  std::unordered_map<NodeId, std::vector<NodeId>> preds;
  for (const auto& e : graph.edges) preds[e.dst].push_back(e.src);
  std::unordered_map<NodeId, const Node*> by_id;
  for (const auto& n : graph.nodes) by_id[n.id] = &n;
  std::unordered_map<NodeId, int> level;
  for (NodeId v : topo) {
    int l = 0;
    for (NodeId p : preds[v]) l = std::max(l, level[p] + 1);
    level[v] = l;
  }
  std::map<std::pair<int, int>, SchedulePlan::Stage> buckets;
  for (const auto& n : graph.nodes) {
    const int rank = int(n.type);
    auto& st = buckets[{level[n.id], rank}];
    st.type = n.type;
    st.nodes.push_back(n.id);
  }
  SchedulePlan plan;
  for (auto& [key, st] : buckets) {
    std::sort(st.nodes.begin(), st.nodes.end());
    plan.stages.push_back(std::move(st));
  }
  return plan;
}

}  // namespace

std::size_t SchedulePlan::stage_of(NodeId id) const {
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (NodeId n : stages[s].nodes)
      if (n == id) return s;
  throw std::out_of_range("node not in schedule");
}

SchedulePlan plan_schedule(const Graph& graph) {
  const auto topo = topological_order(graph);  // throws on cycles
  const auto sec = section_index(graph, topo);

  int max_sec = 0;
  for (const auto& [id, s] : sec) max_sec = std::max(max_sec, s);

  SchedulePlan plan;
  auto push = [&](NodeType t, std::vector<NodeId> nodes) {
    if (nodes.empty()) return;
    std::sort(nodes.begin(), nodes.end());
    plan.stages.push_back({t, std::move(nodes)});
  };

  std::vector<NodeId> inputs, output;
  for (const auto& n : graph.nodes) {
    if (n.type == NodeType::input) inputs.push_back(n.id);
    if (n.type == NodeType::output) output.push_back(n.id);
  }
  push(NodeType::input, std::move(inputs));

  for (int s = 0; s <= max_sec; ++s) {
    for (NodeType t : kChainOrder) {
      std::vector<NodeId> nodes;
      for (const auto& n : graph.nodes)
        if (n.type == t && sec.at(n.id) == s) nodes.push_back(n.id);
      push(t, std::move(nodes));
    }
    std::vector<NodeId> mixes;
    for (const auto& n : graph.nodes)
      if (n.type == NodeType::mix && sec.at(n.id) == s) mixes.push_back(n.id);
    push(NodeType::mix, std::move(mixes));
  }
  push(NodeType::output, std::move(output));
  (void)chain_position;

  if (!plan_is_sound(graph, plan)) return asap_schedule(graph, topo);
  return plan;
}

namespace {

struct ExecContext {
  const Graph& graph;
  const ParamStore& store;
  const std::vector<Stereo>& sources;
  const ProcessorConfig& cfg;
  const ExecOptions& options;
  ExecutionRecord* record;

  std::unordered_map<NodeId, const Node*> by_id;
  std::unordered_map<NodeId, std::vector<NodeId>> preds;
  std::map<NodeId, Stereo> outputs;
  RenderOutput out;

  explicit ExecContext(const Graph& g, const ParamStore& st, const std::vector<Stereo>& src,
                       const ProcessorConfig& c, const ExecOptions& opt, ExecutionRecord* rec)
      : graph(g), store(st), sources(src), cfg(c), options(opt), record(rec) {
    for (const auto& n : graph.nodes) by_id[n.id] = &n;
    for (const auto& e : graph.edges) preds[e.dst].push_back(e.src);
    for (auto& [id, p] : preds) std::sort(p.begin(), p.end());
  }

  double mask_bit(NodeId id) const {
    if (!options.mask) return 1.0;
    auto it = options.mask->keep.find(id);
    return it == options.mask->keep.end() ? 1.0 : double(it->second);
  }

  void run_node(NodeId id) {
    const Node& node = *by_id.at(id);
    switch (node.type) {
      case NodeType::input: {
        if (!node.source_index || std::size_t(*node.source_index) >= sources.size())
          throw std::runtime_error("execute: input node " + std::to_string(id) +
                                   " has no matching source");
        outputs[id] = sources[std::size_t(*node.source_index)];
        break;
      }
      case NodeType::mix:
      case NodeType::output: {
        const auto& ps = preds[id];
        if (ps.empty()) throw std::runtime_error("execute: sum node with no inputs");
        Stereo sum = outputs.at(ps[0]);
        for (std::size_t i = 1; i < ps.size(); ++i) sum.add(outputs.at(ps[i]));
        outputs[id] = std::move(sum);
        break;
      }
      default: {
        const auto& ps = preds[id];
        if (ps.size() != 1) throw std::runtime_error("execute: processor fan-in != 1");
        const Stereo& u = outputs.at(ps[0]);
        auto pit = store.params.find(id);
        auto wit = store.weights.find(id);
        if (pit == store.params.end() || wit == store.weights.end())
          throw std::runtime_error("execute: missing parameters for node " + std::to_string(id));
        const bool lti_set = node.type == NodeType::equalizer || node.type == NodeType::reverb ||
                             node.type == NodeType::multitap_delay;
        const bool want_norms = options.gain_staging_norms && lti_set;
        NodeEval eval = node_forward(node.type, pit->second, wit->second, mask_bit(id), u, cfg,
                                     options.keep_activations, want_norms);
        if (want_norms && !eval.bypassed)
          out.ms_norms[id] = {eval.wet_mid_norm, eval.in_mid_norm};
        outputs[id] = std::move(eval.y);
        eval.y = Stereo();
        if (record) {
          auto& st = record->states[id];
          st.type = node.type;
          st.input_node = ps[0];
          st.mask_bit = mask_bit(id);
          st.eval = std::move(eval);
        }
        break;
      }
    }
  }

  RenderOutput finish() {
    NodeId out_id = -1;
    for (const auto& n : graph.nodes)
      if (n.type == NodeType::output) out_id = n.id;
    if (out_id < 0) throw std::runtime_error("execute: graph has no output node");
    out.mix = outputs.at(out_id);
    if (options.collect_outputs)
      for (const auto& [id, sig] : outputs) out.node_outputs[id] = sig;
    if (record) {
      record->output_node = out_id;
      record->length = out.mix.size();
      record->outputs = std::move(outputs);
    }
    return std::move(out);
  }
};

void check_sources(const Graph& graph, const std::vector<Stereo>& sources) {
  std::size_t input_count = 0;
  for (const auto& n : graph.nodes) input_count += n.type == NodeType::input;
  if (sources.size() != input_count)
    throw std::invalid_argument("execute: source count does not match input nodes");
  for (const auto& s : sources) {
    if (s.left.size() != s.right.size() || s.size() != sources[0].size())
      throw std::invalid_argument("execute: sources must share one length");
  }
}

}  // namespace

RenderOutput execute(const Graph& graph, const SchedulePlan& plan, const ParamStore& store,
                     const std::vector<Stereo>& sources, const ProcessorConfig& cfg,
                     const ExecOptions& options, ExecutionRecord* record) {
  check_sources(graph, sources);
  ExecContext ctx(graph, store, sources, cfg, options, record);
  for (const auto& stage : plan.stages)
    for (NodeId id : stage.nodes) ctx.run_node(id);
  return ctx.finish();
}

RenderOutput execute_reference(const Graph& graph, const ParamStore& store,
                               const std::vector<Stereo>& sources, const ProcessorConfig& cfg,
                               const ExecOptions& options, ExecutionRecord* record) {
  check_sources(graph, sources);
  ExecContext ctx(graph, store, sources, cfg, options, record);
  for (NodeId id : topological_order(graph)) ctx.run_node(id);
  return ctx.finish();
}

ParamStore backward_pass(const Graph& graph, const ParamStore& store,
                         const ExecutionRecord& record, const Stereo& grad_mix,
                         const ProcessorConfig& cfg,
                         const std::map<NodeId, MidGradInjection>* injections) {
  if (record.outputs.empty()) throw std::runtime_error("backward_pass: activation cache missing");
  ParamStore grads = zero_like(store);

  std::unordered_map<NodeId, std::vector<NodeId>> preds;
  for (const auto& e : graph.edges) preds[e.dst].push_back(e.src);
  for (auto& [id, p] : preds) std::sort(p.begin(), p.end());

  const std::size_t n = record.length;
  std::map<NodeId, Stereo> grad_out;
  auto grad_of = [&](NodeId id) -> Stereo& {
    auto it = grad_out.find(id);
    if (it == grad_out.end()) it = grad_out.emplace(id, Stereo(n)).first;
    return it->second;
  };
  grad_of(record.output_node) = grad_mix;

  auto topo = topological_order(graph);
  std::unordered_map<NodeId, const Node*> by_id;
  for (const auto& nd : graph.nodes) by_id[nd.id] = &nd;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const NodeId id = *it;
    const Node& node = *by_id.at(id);
    if (node.type == NodeType::input) continue;
    const Stereo& gy = grad_of(id);
    if (node.type == NodeType::mix || node.type == NodeType::output) {
      for (NodeId p : preds[id]) {
        Stereo& gp = grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp.left[i] += gy.left[i];
        for (std::size_t i = 0; i < n; ++i) gp.right[i] += gy.right[i];
      }
      continue;
    }
    auto sit = record.states.find(id);
    if (sit == record.states.end())
      throw std::runtime_error("backward_pass: no cached state for node " + std::to_string(id));
    const auto& st = sit->second;
    const Stereo& u = record.outputs.at(st.input_node);
    const MidGradInjection* inj = nullptr;
    if (injections) {
      auto ij = injections->find(id);
      if (ij != injections->end()) inj = &ij->second;
    }
    Stereo& gu = grad_of(st.input_node);
    const double logit_w = store.weights.at(id);
    grads.weights[id] += node_backward(node.type, store.params.at(id), logit_w, st.mask_bit, u,
                                       record.outputs.at(id), st.eval, gy, inj, cfg, gu,
                                       grads.params[id]);
  }
  return grads;
}

}  // namespace mixgraph
