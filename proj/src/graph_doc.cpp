#include "mixgraph/graph_doc.hpp"

#include <set>
#include <stdexcept>

#include <json.hpp>

namespace mixgraph {

using json = nlohmann::ordered_json;

std::string serialize_graph(const Graph& graph, const ParamStore& store) {
  json doc;
  doc["nodes"] = json::array();
  for (const auto& n : graph.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["type"] = std::string(1, type_letter(n.type));
    if (n.source_index) jn["source"] = *n.source_index;
    doc["nodes"].push_back(std::move(jn));
  }
  doc["edges"] = json::array();
  for (const auto& e : graph.edges) doc["edges"].push_back(json::array({e.src, e.dst}));

  doc["weights"] = json::object();
  for (const auto& [id, logit] : store.weights) doc["weights"][std::to_string(id)] = logit;

  doc["params"] = json::object();
  for (const auto& [id, p] : store.params) {
    json jp;
    for (const auto& spec : blocks_for(p.type)) jp[spec.name] = p.blocks.at(spec.name);
    doc["params"][std::to_string(id)] = std::move(jp);
  }
  return doc.dump(1);
}

GraphDocument deserialize_graph(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("graph document: ") + e.what());
  }

  GraphDocument out;
  std::set<NodeId> ids;
  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw std::runtime_error("graph document: missing nodes array");
  for (const auto& jn : doc["nodes"]) {
    Node n;
    n.id = jn.at("id").get<NodeId>();
    const std::string tag = jn.at("type").get<std::string>();
    if (tag.size() != 1)
      throw std::runtime_error("graph document: bad type tag '" + tag + "'");
    auto t = type_from_letter(tag[0]);
    if (!t) throw std::runtime_error("graph document: unknown node type tag '" + tag + "'");
    n.type = *t;
    if (jn.contains("source")) n.source_index = jn["source"].get<int>();
    if (!ids.insert(n.id).second)
      throw std::runtime_error("graph document: duplicate node id " + std::to_string(n.id));
    out.graph.nodes.push_back(n);
  }
  if (!doc.contains("edges") || !doc["edges"].is_array())
    throw std::runtime_error("graph document: missing edges array");
  for (const auto& je : doc["edges"]) {
    if (!je.is_array() || je.size() != 2)
      throw std::runtime_error("graph document: edge must be a [src, dst] pair");
    out.graph.edges.push_back({je[0].get<NodeId>(), je[1].get<NodeId>()});
  }

  auto report = validate(out.graph);
  if (!report.ok())
    throw std::runtime_error("graph document: invalid graph: " +
                             report.violations.front().message);

  std::map<NodeId, NodeType> type_of;
  for (const auto& n : out.graph.nodes) type_of[n.id] = n.type;

  if (doc.contains("weights"))
    for (const auto& [key, value] : doc["weights"].items()) {
      const NodeId id = std::stoll(key);
      if (!type_of.count(id))
        throw std::runtime_error("graph document: weight for unknown node " + key);
      out.store.weights[id] = value.get<double>();
    }
  if (doc.contains("params"))
    for (const auto& [key, value] : doc["params"].items()) {
      const NodeId id = std::stoll(key);
      auto it = type_of.find(id);
      if (it == type_of.end())
        throw std::runtime_error("graph document: params for unknown node " + key);
      NodeParams p;
      p.type = it->second;
      for (const auto& spec : blocks_for(p.type)) {
        if (!value.contains(spec.name))
          throw std::runtime_error("graph document: node " + key + " missing block " +
                                   spec.name);
        auto vec = value[spec.name].get<std::vector<double>>();
        if (vec.size() != spec.size)
          throw std::runtime_error("graph document: node " + key + " block " + spec.name +
                                   " has wrong size");
        p.blocks[spec.name] = std::move(vec);
      }
      out.store.params[id] = std::move(p);
    }

  validate_store(out.graph, out.store);
  return out;
}

}  // namespace mixgraph
