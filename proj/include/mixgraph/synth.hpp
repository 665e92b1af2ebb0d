#pragma once

#include <string>
#include <vector>

#include "mixgraph/training.hpp"

namespace mixgraph {

// Synthetic ground-truth session generator. Each chain position string lists
// the processor letters kept active on that chain (subset of "ecnsgdr");
// everything else is pruned from the truth graph.
struct SynthSpec {
  int track_count = 4;
  SubgroupSpec subgroups;
  double seconds = 30.0;
  double sample_rate = 30000.0;
  std::uint64_t seed = 1;
  std::vector<std::string> track_active;  // one entry per track
  std::vector<std::string> bus_active;    // one entry per subgroup
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

struct SynthResult {
  SongSession session;
  Graph truth_graph;
  ParamStore truth_store;
};

// Synthesizes dry tracks with disjoint spectra, prunes a console down to the
// active set, samples in-range parameters with w = 1, and renders the mix.
SynthResult synth_generate(const SynthSpec& spec);

}  // namespace mixgraph
