#include "mixgraph/params.hpp"

#include <stdexcept>

#include "mixgraph/rng.hpp"

namespace mixgraph {

namespace {

constexpr BlockSpec kEq[] = {{"log_mag", kEqBins, true}};
constexpr BlockSpec kComp[] = {{"threshold", 1, true}, {"ratio", 1, true}, {"envelope", 1, true}};
constexpr BlockSpec kImager[] = {{"side_gain", 1, true}};
constexpr BlockSpec kGain[] = {{"gain", 2, true}};
constexpr BlockSpec kReverb[] = {{"init_log_mag", 2 * kReverbBins, true},
                                 {"decay", 2 * kReverbBins, true},
                                 {"noise_seed", 1, false}};
constexpr BlockSpec kDelay[] = {{"delay_phase", 2 * kDelayTaps, true},
                                {"log_mag", 2 * kDelayTaps * kDelayFirBins, true}};

}  // namespace

std::span<const BlockSpec> blocks_for(NodeType type) {
  switch (type) {
    case NodeType::equalizer: return kEq;
    case NodeType::compressor: return kComp;
    case NodeType::noisegate: return kComp;
    case NodeType::stereo_imager: return kImager;
    case NodeType::gain_pan: return kGain;
    case NodeType::reverb: return kReverb;
    case NodeType::multitap_delay: return kDelay;
    default: throw std::invalid_argument("blocks_for: not a processor type");
  }
}

std::span<double> NodeParams::block(const std::string& name) {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw std::out_of_range("missing parameter block " + name);
  return it->second;
}

std::span<const double> NodeParams::block(const std::string& name) const {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw std::out_of_range("missing parameter block " + name);
  return it->second;
}

NodeParams init_params(NodeType type, NodeId id, std::uint64_t run_seed, double sample_rate) {
  NodeParams p;
  p.type = type;
  for (const auto& spec : blocks_for(type)) p.blocks[spec.name].assign(spec.size, 0.0);

  switch (type) {
    case NodeType::equalizer:
    case NodeType::stereo_imager:
    case NodeType::gain_pan:
      break;  // zeros are the identity
    case NodeType::compressor:
    case NodeType::noisegate: {
      // -20 dB threshold, ratio near 1.5, envelope time constant about 10 ms.
      p.blocks["threshold"][0] = logit((-20.0 + 60.0) / 60.0);
      p.blocks["ratio"][0] = logit(0.5 / 19.0);
      const double alpha = std::exp(-1.0 / (0.010 * sample_rate));
      p.blocks["envelope"][0] = logit(alpha);
      break;
    }
    case NodeType::reverb: {
      for (auto& v : p.blocks["init_log_mag"]) v = -3.0;
      // decay = -softplus(raw) ~ -0.3 per frame
      const double raw = std::log(std::expm1(0.3));
      for (auto& v : p.blocks["decay"]) v = raw;
      p.blocks["noise_seed"][0] = double(Rng::derive(run_seed, std::uint64_t(id)) & 0xffffffffULL);
      break;
    }
    case NodeType::multitap_delay: {
      for (auto& v : p.blocks["log_mag"]) v = -3.0;
      break;  // delay_phase = 0 puts each tap mid-interval
    }
    default:
      throw std::invalid_argument("init_params: not a processor type");
  }
  return p;
}

ParamStore init_param_store(const Graph& graph, std::uint64_t run_seed, double sample_rate) {
  ParamStore store;
  for (const auto& n : graph.nodes) {
    if (!is_processor(n.type)) continue;
    store.params[n.id] = init_params(n.type, n.id, run_seed, sample_rate);
    store.weights[n.id] = 0.0;  // w = 0.5
  }
  return store;
}

ParamStore zero_like(const ParamStore& store) {
  ParamStore out;
  for (const auto& [id, p] : store.params) {
    NodeParams z;
    z.type = p.type;
    for (const auto& [name, values] : p.blocks) z.blocks[name].assign(values.size(), 0.0);
    out.params[id] = std::move(z);
  }
  for (const auto& [id, w] : store.weights) {
    (void)w;
    out.weights[id] = 0.0;
  }
  return out;
}

void prune_store(ParamStore& store, const PruneMask& mask) {
  for (const auto& [id, keep] : mask.keep) {
    if (keep != 0) continue;
    store.params.erase(id);
    store.weights.erase(id);
  }
}

void validate_store(const Graph& graph, const ParamStore& store) {
  std::size_t procs = 0;
  for (const auto& n : graph.nodes) {
    if (!is_processor(n.type)) continue;
    ++procs;
    auto it = store.params.find(n.id);
    if (it == store.params.end())
      throw std::runtime_error("param store missing node " + std::to_string(n.id));
    if (it->second.type != n.type)
      throw std::runtime_error("param store type mismatch for node " + std::to_string(n.id));
    for (const auto& spec : blocks_for(n.type)) {
      auto b = it->second.blocks.find(spec.name);
      if (b == it->second.blocks.end() || b->second.size() != spec.size)
        throw std::runtime_error("param store block shape mismatch for node " +
                                 std::to_string(n.id) + " block " + spec.name);
    }
    if (!store.weights.count(n.id))
      throw std::runtime_error("param store missing dry/wet logit for node " +
                               std::to_string(n.id));
  }
  if (store.params.size() != procs)
    throw std::runtime_error("param store has entries for nodes not in the graph");
}

}  // namespace mixgraph
