#include "mixgraph/workbench.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mixgraph {

using json = nlohmann::ordered_json;

std::string export_dot(const Graph& graph) {
  std::ostringstream out;
  out << "digraph mixgraph {\n";
  out << "  rankdir=LR;\n";
  for (const auto& n : graph.nodes) {
    out << "  n" << n.id << " [label=\"" << type_letter(n.type) << "\"";
    if (n.source_index) out << " shape=box";
    out << "];\n";
  }
  for (const auto& e : graph.edges) out << "  n" << e.src << " -> n" << e.dst << ";\n";
  out << "}\n";
  return out.str();
}

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

std::string trace_to_jsonl(const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  for (const auto& e : trace) {
    json j;
    j["step"] = e.step;
    j["phase"] = e.phase == Phase::console ? "console" : "prune";
    j["la"] = e.audio;
    j["lg"] = e.gain_staging;
    j["lp"] = e.sparsity;
    j["total"] = e.total;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::string trials_to_jsonl(const std::vector<TrialRecord>& trials) {
  std::ostringstream out;
  for (const auto& t : trials) {
    json j;
    j["round"] = t.round;
    j["sampler"] = t.sampler;
    j["candidates"] = t.candidates;
    j["la"] = t.audio_loss;
    j["threshold"] = t.threshold;
    j["accepted"] = t.accepted;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::string importance_to_csv(const std::vector<ImportanceRecord>& records) {
  std::ostringstream out;
  out << "node_id,type,weight,delta\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.node << "," << type_letter(r.type) << "," << r.weight << "," << r.delta << "\n";
  return out.str();
}

namespace {

json train_config_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["console_steps"] = cfg.console_steps;
  j["preprune_console_steps"] = cfg.preprune_console_steps;
  j["finetune_steps"] = cfg.finetune_steps;
  j["rounds"] = cfg.rounds;
  j["segment_seconds"] = cfg.segment_seconds;
  j["tail_seconds"] = cfg.tail_seconds;
  j["seed"] = cfg.seed;
  j["grad_clip"] = cfg.grad_clip;
  j["adam"] = {{"beta1", cfg.adam_beta1},
               {"beta2", cfg.adam_beta2},
               {"eps", cfg.adam_eps},
               {"weight_decay", cfg.weight_decay}};
  j["loss"] = {{"alpha_lr", cfg.loss_weights.alpha_lr},
               {"alpha_mid", cfg.loss_weights.alpha_mid},
               {"alpha_side", cfg.loss_weights.alpha_side},
               {"alpha_gain", cfg.loss_weights.alpha_gain},
               {"alpha_sparsity_max", cfg.loss_weights.alpha_sparsity_max},
               {"sparsity_ramp_steps", cfg.loss_weights.sparsity_ramp_steps}};
  j["stft"] = {{"fft_sizes", cfg.stft.fft_sizes},
               {"hop_divisor", cfg.stft.hop_divisor},
               {"mel_bins", cfg.stft.mel_bins},
               {"a_weighting", cfg.stft.a_weighting}};
  return j;
}

json prune_config_json(const PruneConfig& cfg) {
  json j;
  j["tolerance"] = cfg.tolerance;
  j["sampler"] = sampler_name(cfg.sampler);
  j["rounds"] = cfg.rounds;
  j["r_init"] = cfg.r_init;
  j["hybrid_period"] = cfg.hybrid_period;
  j["seed"] = cfg.seed;
  return j;
}

json breakdown_json(const LossBreakdown& b) {
  return json{{"la", b.audio},   {"lr", b.lr},       {"lm", b.mid},   {"ls", b.side},
              {"lg", b.gain_staging}, {"lp", b.sparsity}, {"total", b.total}};
}

json metrics_json(const GraphMetrics& m) {
  json j;
  j["total_ratio"] = m.total_ratio;
  json per;
  for (const auto& [type, r] : m.per_type_ratio) per[std::string(1, type_letter(type))] = r;
  j["per_type_ratio"] = per;
  j["node_count"] = m.node_count;
  j["processor_count"] = m.processor_count;
  return j;
}

}  // namespace

std::string run_report_json(const RunConfigEcho& echo, const SearchReport& report,
                            const std::string& trace_path, const std::string& trial_path) {
  json j;
  j["command"] = echo.command;
  j["manifest"] = echo.manifest_path;
  j["train_config"] = train_config_json(echo.train);
  j["prune_config"] = prune_config_json(echo.prune);
  j["console_loss"] = report.console_loss;
  j["threshold_final"] = report.threshold_final;
  j["final"] = breakdown_json(report.final_breakdown);
  j["metrics"] = metrics_json(report.graph_metrics);
  j["total_steps"] = report.total_steps;
  j["trials"] = report.trials.size();
  std::size_t accepted = 0;
  for (const auto& t : report.trials) accepted += t.accepted;
  j["trials_accepted"] = accepted;
  j["loss_trace"] = trace_path;
  j["trial_log"] = trial_path;
  if (!report.abort_reason.empty()) j["aborted"] = report.abort_reason;
  return j.dump(1);
}

std::string fit_report_json(const RunConfigEcho& echo, const LossBreakdown& final_eval,
                            const std::string& trace_path) {
  json j;
  j["command"] = echo.command;
  j["manifest"] = echo.manifest_path;
  j["train_config"] = train_config_json(echo.train);
  j["final"] = breakdown_json(final_eval);
  j["loss_trace"] = trace_path;
  return j.dump(1);
}

std::string timings_json(const std::map<std::string, double>& seconds_per_phase) {
  json j;
  for (const auto& [phase, seconds] : seconds_per_phase) j[phase] = seconds;
  return j.dump(1);
}

}  // namespace mixgraph
