#pragma once

#include <string>

#include "mixgraph/graph.hpp"
#include "mixgraph/params.hpp"

namespace mixgraph {

// Graph document: a single JSON object
//   { "nodes": [{"id", "type", "source"?}], "edges": [[src, dst]],
//     "weights": {id: logit}, "params": {id: {name: [values]}} }
// Floating values round-trip bit-exactly.
std::string serialize_graph(const Graph& graph, const ParamStore& store);

struct GraphDocument {
  Graph graph;
  ParamStore store;
};

// Throws std::runtime_error with a location on malformed input; rejects
// unknown type tags, duplicate ids, wrong block shapes, and invalid graphs.
GraphDocument deserialize_graph(const std::string& text);

}  // namespace mixgraph
