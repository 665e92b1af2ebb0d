#include "mixgraph/graph.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mixgraph {

char type_letter(NodeType t) {
  switch (t) {
    case NodeType::input: return 'i';
    case NodeType::output: return 'o';
    case NodeType::mix: return 'm';
    case NodeType::equalizer: return 'e';
    case NodeType::compressor: return 'c';
    case NodeType::noisegate: return 'n';
    case NodeType::stereo_imager: return 's';
    case NodeType::gain_pan: return 'g';
    case NodeType::reverb: return 'r';
    case NodeType::multitap_delay: return 'd';
  }
  return '?';
}

std::optional<NodeType> type_from_letter(char c) {
  switch (c) {
    case 'i': return NodeType::input;
    case 'o': return NodeType::output;
    case 'm': return NodeType::mix;
    case 'e': return NodeType::equalizer;
    case 'c': return NodeType::compressor;
    case 'n': return NodeType::noisegate;
    case 's': return NodeType::stereo_imager;
    case 'g': return NodeType::gain_pan;
    case 'r': return NodeType::reverb;
    case 'd': return NodeType::multitap_delay;
    default: return std::nullopt;
  }
}

bool is_processor(NodeType t) {
  return t != NodeType::input && t != NodeType::output && t != NodeType::mix;
}

const Node* Graph::find(NodeId id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

std::vector<NodeId> Graph::predecessors(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& e : edges)
    if (e.dst == id) out.push_back(e.src);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<NodeId> Graph::successors(NodeId id) const {
  std::vector<NodeId> out;
  for (const auto& e : edges)
    if (e.src == id) out.push_back(e.dst);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t Graph::processor_count() const {
  std::size_t c = 0;
  for (const auto& n : nodes) c += is_processor(n.type);
  return c;
}

std::vector<NodeId> Graph::processor_ids() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes)
    if (is_processor(n.type)) out.push_back(n.id);
  std::sort(out.begin(), out.end());
  return out;
}

PruneMask PruneMask::combine(const PruneMask& a, const PruneMask& b) {
  PruneMask out = a;
  for (const auto& [id, keep] : b.keep) {
    auto it = out.keep.find(id);
    if (it == out.keep.end())
      out.keep[id] = keep;
    else
      it->second = it->second * keep;
  }
  return out;
}

void validate_subgroups(int track_count, const SubgroupSpec& subgroups) {
  if (track_count < 1) throw std::invalid_argument("subgroups: track_count must be >= 1");
  std::set<int> seen;
  for (const auto& g : subgroups.groups) {
    if (g.empty()) throw std::invalid_argument("subgroups: empty group");
    for (int t : g) {
      if (t < 0 || t >= track_count)
        throw std::invalid_argument("subgroups: track index out of range");
      if (!seen.insert(t).second)
        throw std::invalid_argument("subgroups: track assigned to more than one group");
    }
  }
  if (int(seen.size()) != track_count)
    throw std::invalid_argument("subgroups: every track must belong to a group");
}

Graph build_mixing_console(int track_count, const SubgroupSpec& subgroups) {
  return build_mixing_console(track_count, subgroups,
                              std::vector<NodeType>(kChainOrder.begin(), kChainOrder.end()));
}

Graph build_mixing_console(int track_count, const SubgroupSpec& subgroups,
                           const std::vector<NodeType>& chain) {
  validate_subgroups(track_count, subgroups);
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    auto pos = [](NodeType t) {
      for (std::size_t p = 0; p < kChainOrder.size(); ++p)
        if (kChainOrder[p] == t) return p;
      throw std::invalid_argument("console chain: not a processor type");
    };
    if (pos(chain[i]) >= pos(chain[i + 1]))
      throw std::invalid_argument("console chain: types must follow console order");
  }

  Graph g;
  NodeId next_id = 0;
  auto add_node = [&](NodeType t, std::optional<int> src = std::nullopt) {
    Node n;
    n.id = next_id++;
    n.type = t;
    n.source_index = src;
    g.nodes.push_back(n);
    return n.id;
  };
  auto add_chain = [&](NodeId from) {
    NodeId prev = from;
    for (NodeType t : chain) {
      NodeId p = add_node(t);
      g.edges.push_back({prev, p});
      prev = p;
    }
    return prev;
  };

  std::vector<NodeId> inputs;
  for (int k = 0; k < track_count; ++k) inputs.push_back(add_node(NodeType::input, k));

  std::vector<NodeId> chain_tails(track_count);
  for (int k = 0; k < track_count; ++k) chain_tails[k] = add_chain(inputs[k]);

  std::vector<NodeId> bus_tails;
  for (const auto& group : subgroups.groups) {
    NodeId mix = add_node(NodeType::mix);
    auto sorted = group;
    std::sort(sorted.begin(), sorted.end());
    for (int t : sorted) g.edges.push_back({chain_tails[t], mix});
    bus_tails.push_back(add_chain(mix));
  }

  // Subgroup buses feed the output node directly; it performs the final sum.
  NodeId out = add_node(NodeType::output);
  for (NodeId tail : bus_tails) g.edges.push_back({tail, out});
  return g;
}

ValidationReport validate(const Graph& graph) {
  ValidationReport report;
  auto add = [&](std::string msg) { report.violations.push_back({std::move(msg)}); };

  std::unordered_map<NodeId, const Node*> by_id;
  for (const auto& n : graph.nodes) {
    if (!by_id.emplace(n.id, &n).second) add("duplicate node id " + std::to_string(n.id));
  }

  std::set<int> sources;
  for (const auto& n : graph.nodes) {
    if (n.type == NodeType::input) {
      if (!n.source_index) {
        add("input node " + std::to_string(n.id) + " missing source index");
      } else if (!sources.insert(*n.source_index).second) {
        add("duplicate source index on input node " + std::to_string(n.id));
      }
    } else if (n.source_index) {
      add("non-input node " + std::to_string(n.id) + " has a source index");
    }
  }

  std::unordered_map<NodeId, int> in_deg, out_deg;
  std::set<std::pair<NodeId, NodeId>> seen_edges;
  for (const auto& e : graph.edges) {
    if (!by_id.count(e.src) || !by_id.count(e.dst)) {
      add("edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
          ") references unknown node");
      continue;
    }
    if (!seen_edges.insert({e.src, e.dst}).second)
      add("duplicate edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) + ")");
    ++out_deg[e.src];
    ++in_deg[e.dst];
  }

  std::size_t output_count = 0;
  NodeId output_id = -1;
  for (const auto& n : graph.nodes) {
    const int in = in_deg.count(n.id) ? in_deg[n.id] : 0;
    const int out = out_deg.count(n.id) ? out_deg[n.id] : 0;
    switch (n.type) {
      case NodeType::input:
        if (in != 0) add("input node " + std::to_string(n.id) + " has incoming edges");
        break;
      case NodeType::output:
        ++output_count;
        output_id = n.id;
        if (in < 1) add("output node " + std::to_string(n.id) + " has no incoming edge");
        if (out != 0) add("output node " + std::to_string(n.id) + " has outgoing edges");
        break;
      case NodeType::mix:
        if (in < 1) add("mix node " + std::to_string(n.id) + " has no incoming edge");
        break;
      default:
        if (in != 1)
          add("processor node " + std::to_string(n.id) + " has fan-in " + std::to_string(in));
        if (out != 1)
          add("processor node " + std::to_string(n.id) + " has fan-out " + std::to_string(out));
        break;
    }
  }
  if (output_count != 1) add("graph must have exactly one output node, found " +
                             std::to_string(output_count));

  // Cycle check via Kahn's algorithm.
  {
    std::unordered_map<NodeId, int> deg = in_deg;
    std::queue<NodeId> q;
    for (const auto& n : graph.nodes)
      if (!deg.count(n.id) || deg[n.id] == 0) q.push(n.id);
    std::size_t visited = 0;
    std::unordered_map<NodeId, std::vector<NodeId>> adj;
    for (const auto& e : graph.edges) adj[e.src].push_back(e.dst);
    while (!q.empty()) {
      NodeId v = q.front();
      q.pop();
      ++visited;
      for (NodeId w : adj[v])
        if (--deg[w] == 0) q.push(w);
    }
    if (visited != graph.nodes.size()) add("graph contains a cycle");
  }

  // Reachability: forward from inputs and backward from the output.
  if (output_count == 1) {
    std::unordered_set<NodeId> fwd, bwd;
    std::unordered_map<NodeId, std::vector<NodeId>> adj, radj;
    for (const auto& e : graph.edges) {
      adj[e.src].push_back(e.dst);
      radj[e.dst].push_back(e.src);
    }
    std::queue<NodeId> q;
    for (const auto& n : graph.nodes)
      if (n.type == NodeType::input) {
        fwd.insert(n.id);
        q.push(n.id);
      }
    while (!q.empty()) {
      NodeId v = q.front();
      q.pop();
      for (NodeId w : adj[v])
        if (fwd.insert(w).second) q.push(w);
    }
    q.push(output_id);
    bwd.insert(output_id);
    while (!q.empty()) {
      NodeId v = q.front();
      q.pop();
      for (NodeId w : radj[v])
        if (bwd.insert(w).second) q.push(w);
    }
    for (const auto& n : graph.nodes)
      if (!fwd.count(n.id) || !bwd.count(n.id))
        add("node " + std::to_string(n.id) + " is not on an input-to-output path");
  }

  return report;
}

Graph apply_prune(const Graph& graph, const PruneMask& mask) {
  std::unordered_map<NodeId, const Node*> by_id;
  for (const auto& n : graph.nodes) by_id[n.id] = &n;
  for (const auto& [id, keep] : mask.keep) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("prune mask references unknown node " + std::to_string(id));
    if (!is_processor(it->second->type))
      throw std::invalid_argument("prune mask references non-processor node " + std::to_string(id));
    (void)keep;
  }

  Graph out = graph;
  for (const auto& [id, keep] : mask.keep) {
    if (keep != 0) continue;
    NodeId pred = -1, succ = -1;
    for (const auto& e : out.edges) {
      if (e.dst == id) pred = e.src;
      if (e.src == id) succ = e.dst;
    }
    if (pred < 0 || succ < 0)
      throw std::invalid_argument("pruned node " + std::to_string(id) + " is not a 1-in/1-out chain node");
    std::vector<Edge> edges;
    edges.reserve(out.edges.size() - 1);
    for (const auto& e : out.edges) {
      if (e.src == id || e.dst == id) continue;
      edges.push_back(e);
    }
    edges.push_back({pred, succ});
    out.edges = std::move(edges);
    out.nodes.erase(std::remove_if(out.nodes.begin(), out.nodes.end(),
                                   [&](const Node& n) { return n.id == id; }),
                    out.nodes.end());
  }
  return out;
}

GraphMetrics metrics(const Graph& console, const Graph& pruned) {
  std::unordered_set<NodeId> console_ids;
  for (const auto& n : console.nodes) console_ids.insert(n.id);
  for (const auto& n : pruned.nodes)
    if (!console_ids.count(n.id))
      throw std::invalid_argument("metrics: pruned graph has node " + std::to_string(n.id) +
                                  " not present in the console");

  std::map<NodeType, std::size_t> console_counts, pruned_counts;
  for (NodeType t : kProcessorTypes) console_counts[t] = pruned_counts[t] = 0;
  for (const auto& n : console.nodes)
    if (is_processor(n.type)) ++console_counts[n.type];
  for (const auto& n : pruned.nodes)
    if (is_processor(n.type)) ++pruned_counts[n.type];

  GraphMetrics m;
  m.node_count = pruned.nodes.size();
  m.processor_count = pruned.processor_count();
  const std::size_t total = console.processor_count();
  m.total_ratio = total == 0 ? 0.0 : double(total - m.processor_count) / double(total);
  for (NodeType t : kProcessorTypes) {
    const std::size_t c = console_counts[t];
    m.per_type_ratio[t] = c == 0 ? 0.0 : double(c - pruned_counts[t]) / double(c);
  }
  return m;
}

std::vector<NodeId> topological_order(const Graph& graph) {
  std::unordered_map<NodeId, int> in_deg;
  std::unordered_map<NodeId, std::vector<NodeId>> adj;
  for (const auto& n : graph.nodes) in_deg[n.id] = 0;
  for (const auto& e : graph.edges) {
    adj[e.src].push_back(e.dst);
    ++in_deg[e.dst];
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<NodeId>> ready;
  for (const auto& n : graph.nodes)
    if (in_deg[n.id] == 0) ready.push(n.id);
  std::vector<NodeId> order;
  order.reserve(graph.nodes.size());
  while (!ready.empty()) {
    NodeId v = ready.top();
    ready.pop();
    order.push_back(v);
    for (NodeId w : adj[v])
      if (--in_deg[w] == 0) ready.push(w);
  }
  if (order.size() != graph.nodes.size())
    throw std::runtime_error("topological_order: graph contains a cycle");
  return order;
}

}  // namespace mixgraph
