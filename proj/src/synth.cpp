#include "mixgraph/synth.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "mixgraph/rng.hpp"

namespace mixgraph {

using json = nlohmann::ordered_json;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Band-limited sawtooth plus one-pole-filtered noise; fundamental and cutoff
// differ per track so per-track processing is identifiable from the mix.
Stereo synth_track(int index, std::size_t n, double fs, Rng& rng) {
  const double f0 = 82.41 * std::pow(2.0, double(index) * 5.0 / 12.0);
  const int harmonics = int(0.45 * fs / f0);
  std::vector<double> mono(n, 0.0);
  for (int h = 1; h <= harmonics; ++h) {
    const double amp = 0.12 / double(h);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double w = kTwoPi * f0 * double(h) / fs;
    for (std::size_t i = 0; i < n; ++i) mono[i] += amp * std::sin(w * double(i) + phase);
  }
  const double cutoff = 500.0 * std::pow(2.0, double(index % 5));
  const double a = std::exp(-kTwoPi * cutoff / fs);
  double state = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double noise = 2.0 * rng.next_double() - 1.0;
    state = a * state + (1.0 - a) * noise;
    mono[i] += 0.25 * state;
  }
  // Slow amplitude envelope so dynamics processors see level changes.
  const double env_rate = rng.uniform(0.05, 0.25);
  for (std::size_t i = 0; i < n; ++i) {
    const double env = 0.65 + 0.35 * std::sin(kTwoPi * env_rate * double(i) / fs);
    mono[i] *= env;
  }
  Stereo out;
  out.left = mono;
  out.right = std::move(mono);
  return out;
}

void quantize_to_float(Stereo& s) {
  for (auto& v : s.left) v = double(float(v));
  for (auto& v : s.right) v = double(float(v));
}

// In-range random parameters for an active ground-truth processor.
void sample_params(NodeParams& p, NodeType type, Rng& rng) {
  switch (type) {
    case NodeType::gain_pan:
      p.blocks["gain"][0] = rng.uniform(-0.7, 0.7);
      p.blocks["gain"][1] = rng.uniform(-0.7, 0.7);
      break;
    case NodeType::stereo_imager:
      p.blocks["side_gain"][0] = rng.uniform(-1.0, 1.0);
      break;
    case NodeType::equalizer: {
      // Smooth curve: a few low-order cosines over the log-magnitude bins.
      auto lm = p.block("log_mag");
      const int orders = 3;
      double amp[orders], ph[orders];
      for (int o = 0; o < orders; ++o) {
        amp[o] = rng.uniform(-0.35, 0.35);
        ph[o] = rng.uniform(0.0, kTwoPi);
      }
      for (std::size_t k = 0; k < lm.size(); ++k) {
        double v = 0.0;
        for (int o = 0; o < orders; ++o)
          v += amp[o] * std::cos(kTwoPi * double(o + 1) * double(k) / double(lm.size()) + ph[o]);
        lm[k] = v;
      }
      break;
    }
    case NodeType::compressor:
    case NodeType::noisegate: {
      const double t_db = rng.uniform(-35.0, -15.0);
      p.blocks["threshold"][0] = logit((t_db + 60.0) / 60.0);
      const double ratio = rng.uniform(2.0, 6.0);
      p.blocks["ratio"][0] = logit((ratio - 1.0) / 19.0);
      break;  // envelope keeps its init
    }
    case NodeType::reverb: {
      const double a = rng.uniform(-4.0, -2.5);
      for (auto& v : p.blocks["init_log_mag"]) v = a + rng.uniform(-0.3, 0.3);
      const double decay = rng.uniform(0.2, 0.5);
      for (auto& v : p.blocks["decay"]) v = std::log(std::expm1(decay));
      break;
    }
    case NodeType::multitap_delay: {
      for (auto& v : p.blocks["log_mag"]) v = -6.0;
      auto lm = p.block("log_mag");
      // Two audible echoes per channel.
      for (int ch = 0; ch < 2; ++ch)
        for (std::size_t tap : {std::size_t(1), std::size_t(3)})
          for (std::size_t b = 0; b < kDelayFirBins; ++b)
            lm[(std::size_t(ch) * kDelayTaps + tap) * kDelayFirBins + b] = rng.uniform(-2.0, -1.2);
      for (auto& v : p.blocks["delay_phase"]) v = rng.uniform(-1.0, 1.0);
      break;
    }
    default:
      break;
  }
}

}  // namespace

SynthSpec synth_spec_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("synth spec: ") + e.what());
  }
  SynthSpec spec;
  spec.track_count = doc.at("tracks").get<int>();
  for (const auto& g : doc.at("groups")) spec.subgroups.groups.push_back(g.get<std::vector<int>>());
  if (doc.contains("seconds")) spec.seconds = doc["seconds"].get<double>();
  if (doc.contains("sample_rate")) spec.sample_rate = doc["sample_rate"].get<double>();
  if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
  spec.track_active = doc.at("track_active").get<std::vector<std::string>>();
  spec.bus_active = doc.at("bus_active").get<std::vector<std::string>>();
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  json doc;
  doc["tracks"] = spec.track_count;
  doc["groups"] = spec.subgroups.groups;
  doc["seconds"] = spec.seconds;
  doc["sample_rate"] = spec.sample_rate;
  doc["seed"] = spec.seed;
  doc["track_active"] = spec.track_active;
  doc["bus_active"] = spec.bus_active;
  return doc.dump(1);
}

SynthResult synth_generate(const SynthSpec& spec) {
  validate_subgroups(spec.track_count, spec.subgroups);
  if (spec.track_active.size() != std::size_t(spec.track_count))
    throw std::invalid_argument("synth: track_active must have one entry per track");
  if (spec.bus_active.size() != spec.subgroups.groups.size())
    throw std::invalid_argument("synth: bus_active must have one entry per subgroup");

  SynthResult out;
  out.session.sample_rate = spec.sample_rate;
  out.session.subgroups = spec.subgroups;

  const std::size_t n = std::size_t(spec.seconds * spec.sample_rate + 0.5);
  Rng rng(Rng::derive(spec.seed, 0x73796e74));
  for (int k = 0; k < spec.track_count; ++k) {
    Stereo t = synth_track(k, n, spec.sample_rate, rng);
    quantize_to_float(t);
    out.session.tracks.push_back(std::move(t));
  }

  // Console pruned down to the active set = the ground-truth graph.
  Graph console = build_mixing_console(spec.track_count, spec.subgroups);
  auto keep_set = [&](NodeId chain_head_pred, const std::string& letters, PruneMask& mask,
                      const Graph& g) {
    // Walk the chain from its head; keep nodes whose letter is listed.
    NodeId cur = chain_head_pred;
    for (std::size_t step = 0; step < kChainOrder.size(); ++step) {
      const auto succ = g.successors(cur);
      if (succ.empty()) break;
      const Node* node = g.find(succ[0]);
      if (!node || !is_processor(node->type)) break;
      const char letter = type_letter(node->type);
      mask.keep[node->id] = letters.find(letter) != std::string::npos ? 1 : 0;
      cur = node->id;
    }
  };

  PruneMask mask;
  std::vector<NodeId> input_ids, mix_ids;
  for (const auto& node : console.nodes) {
    if (node.type == NodeType::input) input_ids.push_back(node.id);
    if (node.type == NodeType::mix) mix_ids.push_back(node.id);
  }
  for (int k = 0; k < spec.track_count; ++k)
    keep_set(input_ids[std::size_t(k)], spec.track_active[std::size_t(k)], mask, console);
  for (std::size_t b = 0; b < mix_ids.size(); ++b)
    keep_set(mix_ids[b], spec.bus_active[b], mask, console);

  out.truth_graph = apply_prune(console, mask);
  out.truth_store = init_param_store(out.truth_graph, spec.seed, spec.sample_rate);
  for (auto& [id, p] : out.truth_store.params) sample_params(p, p.type, rng);
  for (auto& [id, w] : out.truth_store.weights) w = 40.0;  // w = 1 up to double precision

  const auto plan = plan_schedule(out.truth_graph);
  ProcessorConfig pcfg;
  pcfg.sample_rate = spec.sample_rate;
  ExecOptions opts;
  RenderOutput render =
      execute(out.truth_graph, plan, out.truth_store, out.session.tracks, pcfg, opts, nullptr);
  out.session.mix = std::move(render.mix);
  quantize_to_float(out.session.mix);
  return out;
}

}  // namespace mixgraph
