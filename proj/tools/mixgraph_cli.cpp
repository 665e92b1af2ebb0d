// Command-line front end: fit a mixing console to a session, search for a
// pruned graph, render/scan existing graphs, export DOT, and generate
// synthetic ground-truth sessions.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "mixgraph/graph_doc.hpp"
#include "mixgraph/pruning.hpp"
#include "mixgraph/synth.hpp"
#include "mixgraph/wav.hpp"
#include "mixgraph/workbench.hpp"

namespace fs = std::filesystem;
using namespace mixgraph;

namespace {

struct Timer {
  std::map<std::string, double> phases;
  std::chrono::steady_clock::time_point mark = std::chrono::steady_clock::now();
  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    phases[name] += std::chrono::duration<double>(now - mark).count();
    mark = now;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<NodeType> parse_chain(const std::string& letters) {
  std::vector<NodeType> chain;
  for (char c : letters) {
    auto t = type_from_letter(c);
    if (!t || !is_processor(*t))
      throw std::runtime_error(std::string("invalid chain letter '") + c + "'");
    chain.push_back(*t);
  }
  return chain;
}

SongSession session_from(const std::string& manifest_path, double sample_rate_override) {
  SessionManifest manifest = load_manifest(manifest_path);
  if (sample_rate_override > 0.0) manifest.sample_rate = sample_rate_override;
  return load_session(manifest, fs::path(manifest_path).parent_path().string());
}

int cmd_fit(const std::string& manifest_path, const std::string& out_dir, TrainConfig cfg,
            const std::string& chain_letters, double sample_rate) {
  Timer timer;
  SongSession session = session_from(manifest_path, sample_rate);
  timer.lap("load");

  Graph console =
      chain_letters == "ecnsgdr"
          ? build_mixing_console(int(session.tracks.size()), session.subgroups)
          : build_mixing_console(int(session.tracks.size()), session.subgroups,
                                 parse_chain(chain_letters));
  ParamStore store = init_param_store(console, cfg.seed, session.sample_rate);

  AdamW optimizer;
  Rng rng(Rng::derive(cfg.seed, 0x7261696e));
  auto result = train(console, store, optimizer, session, Phase::console, cfg.console_steps, 0,
                      cfg, rng);
  timer.lap("train");
  LossBreakdown final_eval = evaluate(console, store, nullptr, session, cfg, nullptr);
  timer.lap("evaluate");

  RunConfigEcho echo;
  echo.command = "fit";
  echo.manifest_path = manifest_path;
  echo.train = cfg;
  write_text_atomic((fs::path(out_dir) / "graph.json").string(),
                    serialize_graph(console, store));
  write_text_atomic((fs::path(out_dir) / "trace.jsonl").string(), trace_to_jsonl(result.trace));
  write_text_atomic((fs::path(out_dir) / "report.json").string(),
                    fit_report_json(echo, final_eval, "trace.jsonl"));
  write_text_atomic((fs::path(out_dir) / "timings.json").string(), timings_json(timer.phases));
  std::cout << "fit: final La = " << final_eval.audio << "\n";
  return 0;
}

int cmd_prune(const std::string& manifest_path, const std::string& out_dir, TrainConfig tcfg,
              PruneConfig pcfg, double sample_rate) {
  Timer timer;
  SongSession session = session_from(manifest_path, sample_rate);
  timer.lap("load");

  Graph console = build_mixing_console(int(session.tracks.size()), session.subgroups);
  ParamStore store = init_param_store(console, tcfg.seed, session.sample_rate);
  SearchResult result = search(console, std::move(store), session, tcfg, pcfg);
  timer.lap("search");

  RunConfigEcho echo;
  echo.command = "prune";
  echo.manifest_path = manifest_path;
  echo.train = tcfg;
  echo.prune = pcfg;
  echo.used_prune = true;
  write_text_atomic((fs::path(out_dir) / "graph.json").string(),
                    serialize_graph(result.graph, result.store));
  write_text_atomic((fs::path(out_dir) / "trace.jsonl").string(),
                    trace_to_jsonl(result.report.trace));
  write_text_atomic((fs::path(out_dir) / "trials.jsonl").string(),
                    trials_to_jsonl(result.report.trials));
  write_text_atomic((fs::path(out_dir) / "report.json").string(),
                    run_report_json(echo, result.report, "trace.jsonl", "trials.jsonl"));
  write_text_atomic((fs::path(out_dir) / "timings.json").string(), timings_json(timer.phases));
  std::cout << "prune: ratio = " << result.report.graph_metrics.total_ratio
            << ", final La = " << result.report.final_loss << "\n";
  if (!result.report.abort_reason.empty()) {
    std::cerr << "warning: search aborted early: " << result.report.abort_reason << "\n";
    return 2;
  }
  return 0;
}

int cmd_render(const std::string& graph_path, const std::string& manifest_path,
               const std::string& out_path, double sample_rate) {
  SongSession session = session_from(manifest_path, sample_rate);
  GraphDocument doc = deserialize_graph(read_file(graph_path));
  ProcessorConfig pcfg;
  pcfg.sample_rate = session.sample_rate;
  const auto plan = plan_schedule(doc.graph);
  ExecOptions opts;
  RenderOutput render =
      execute(doc.graph, plan, doc.store, session.tracks, pcfg, opts, nullptr);
  write_wav(out_path, render.mix, session.sample_rate);
  std::cout << "render: wrote " << out_path << " (" << render.mix.size() << " samples)\n";
  return 0;
}

int cmd_scan(const std::string& graph_path, const std::string& manifest_path,
             const std::string& out_path, TrainConfig cfg, double sample_rate) {
  SongSession session = session_from(manifest_path, sample_rate);
  GraphDocument doc = deserialize_graph(read_file(graph_path));
  auto records = importance_scan(doc.graph, doc.store, session, cfg);
  write_text_atomic(out_path, importance_to_csv(records));
  std::cout << "scan: wrote " << records.size() << " records to " << out_path << "\n";
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec = synth_spec_from_json(read_file(spec_path));
  SynthResult result = synth_generate(spec);
  fs::create_directories(out_dir);

  SessionManifest manifest;
  manifest.sample_rate = spec.sample_rate;
  manifest.mix_path = "mix.wav";
  for (std::size_t k = 0; k < result.session.tracks.size(); ++k) {
    const std::string name = "track_" + std::to_string(k) + ".wav";
    write_wav((fs::path(out_dir) / name).string(), result.session.tracks[k], spec.sample_rate);
    ManifestTrack t;
    t.path = name;
    t.name = "track_" + std::to_string(k);
    for (std::size_t g = 0; g < spec.subgroups.groups.size(); ++g)
      for (int idx : spec.subgroups.groups[g])
        if (idx == int(k)) t.group = "group_" + std::to_string(g);
    manifest.tracks.push_back(std::move(t));
  }
  write_wav((fs::path(out_dir) / "mix.wav").string(), result.session.mix, spec.sample_rate);
  save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  write_text_atomic((fs::path(out_dir) / "truth_graph.json").string(),
                    serialize_graph(result.truth_graph, result.truth_store));
  std::cout << "synth: wrote session to " << out_dir << "\n";
  return 0;
}

int cmd_export_dot(const std::string& graph_path, const std::string& out_path) {
  GraphDocument doc = deserialize_graph(read_file(graph_path));
  write_text_atomic(out_path, export_dot(doc.graph));
  std::cout << "export-dot: wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixgraph: differentiable mixing-console fitting and graph pruning"};
  app.require_subcommand(1);

  TrainConfig tcfg;
  PruneConfig pcfg;
  std::string manifest_path, out_dir = "out", graph_path, out_path, spec_path;
  std::string chain_letters = "ecnsgdr", sampler = "hybrid";
  double sample_rate = 0.0;

  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--lr", tcfg.lr, "learning rate");
    cmd->add_option("--seed", tcfg.seed, "run seed");
    cmd->add_option("--sample-rate", sample_rate, "resample the session to this rate");
  };

  auto* fit = app.add_subcommand("fit", "fit a mixing console to a session");
  fit->add_option("--manifest", manifest_path, "session manifest")->required();
  fit->add_option("--out-dir", out_dir, "output directory");
  fit->add_option("--steps", tcfg.console_steps, "optimization steps");
  fit->add_option("--chain", chain_letters, "chain letters (subset of ecnsgdr)");
  add_train_flags(fit);

  auto* prune = app.add_subcommand("prune", "search for a pruned mixing graph");
  prune->add_option("--manifest", manifest_path, "session manifest")->required();
  prune->add_option("--tolerance", pcfg.tolerance, "loss tolerance tau");
  prune->add_option("--sampler", sampler, "brute_force | dry_wet | hybrid");
  prune->add_option("--rounds", pcfg.rounds, "pruning rounds");
  prune->add_option("--steps-console", tcfg.preprune_console_steps, "initial console steps");
  prune->add_option("--steps-finetune", tcfg.finetune_steps, "fine-tune steps per round");
  prune->add_option("--out-dir", out_dir, "output directory");
  add_train_flags(prune);

  auto* render = app.add_subcommand("render", "render a graph document over a session");
  render->add_option("--graph", graph_path, "graph document")->required();
  render->add_option("--manifest", manifest_path, "session manifest")->required();
  render->add_option("--out", out_path, "output WAV path")->required();
  render->add_option("--sample-rate", sample_rate, "resample the session to this rate");

  auto* scan = app.add_subcommand("scan", "per-node pruning importance scan");
  scan->add_option("--graph", graph_path, "graph document")->required();
  scan->add_option("--manifest", manifest_path, "session manifest")->required();
  scan->add_option("--out", out_path, "output CSV path")->required();
  scan->add_option("--sample-rate", sample_rate, "resample the session to this rate");

  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth session");
  synth->add_option("--spec", spec_path, "synth spec JSON")->required();
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  auto* dot = app.add_subcommand("export-dot", "write Graphviz text for a graph document");
  dot->add_option("--graph", graph_path, "graph document")->required();
  dot->add_option("--out", out_path, "output DOT path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return cmd_fit(manifest_path, out_dir, tcfg, chain_letters, sample_rate);
    if (prune->parsed()) {
      pcfg.sampler = sampler_from_name(sampler);
      pcfg.seed = tcfg.seed;
      tcfg.rounds = pcfg.rounds;
      return cmd_prune(manifest_path, out_dir, tcfg, pcfg, sample_rate);
    }
    if (render->parsed()) return cmd_render(graph_path, manifest_path, out_path, sample_rate);
    if (scan->parsed()) return cmd_scan(graph_path, manifest_path, out_path, tcfg, sample_rate);
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (dot->parsed()) return cmd_export_dot(graph_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
