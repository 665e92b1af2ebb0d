#pragma once

#include <map>
#include <string>
#include <vector>

#include "mixgraph/pruning.hpp"
#include "mixgraph/session.hpp"

namespace mixgraph {

// Graphviz text; node labels are the type letters.
std::string export_dot(const Graph& graph);

// Atomic text write (temp + rename); directories are created as needed.
void write_text_atomic(const std::string& path, const std::string& content);

std::string trace_to_jsonl(const std::vector<TraceEntry>& trace);
std::string trials_to_jsonl(const std::vector<TrialRecord>& trials);
std::string importance_to_csv(const std::vector<ImportanceRecord>& records);

// Everything in the run report is recomputable from the logged artifacts;
// wall-clock timings go to a separate sidecar so reports stay byte-stable
// across reruns.
struct RunConfigEcho {
  std::string command;
  std::string manifest_path;
  TrainConfig train;
  PruneConfig prune;
  bool used_prune = false;
};

std::string run_report_json(const RunConfigEcho& echo, const SearchReport& report,
                            const std::string& trace_path, const std::string& trial_path);
std::string fit_report_json(const RunConfigEcho& echo, const LossBreakdown& final_eval,
                            const std::string& trace_path);
std::string timings_json(const std::map<std::string, double>& seconds_per_phase);

}  // namespace mixgraph
