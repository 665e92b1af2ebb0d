#include "mixgraph/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mixgraph {

namespace {

bool block_trainable(NodeType type, const std::string& name) {
  for (const auto& spec : blocks_for(type))
    if (name == spec.name) return spec.trainable;
  return false;
}

bool all_finite(const Stereo& s) {
  for (double v : s.left)
    if (!std::isfinite(v)) return false;
  for (double v : s.right)
    if (!std::isfinite(v)) return false;
  return true;
}

ProcessorConfig processor_config(const SongSession& session) {
  ProcessorConfig cfg;
  cfg.sample_rate = session.sample_rate;
  return cfg;
}

}  // namespace

void AdamW::ensure_state(const ParamStore& params) {
  if (!init_) {
    m_ = zero_like(params);
    v_ = zero_like(params);
    init_ = true;
    return;
  }
  // New nodes never appear mid-run; pruned ones are dropped eagerly.
}

void AdamW::drop_pruned(const PruneMask& mask) {
  if (!init_) return;
  prune_store(m_, mask);
  prune_store(v_, mask);
}

void AdamW::step(ParamStore& params, const ParamStore& grads, const TrainConfig& cfg) {
  ensure_state(params);
  ++t_;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, double(t_));
  const double bc2 = 1.0 - std::pow(b2, double(t_));

  auto update = [&](double& p, double g, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p);
  };

  for (auto& [id, p] : params.params) {
    auto git = grads.params.find(id);
    if (git == grads.params.end()) continue;
    auto& mn = m_.params.at(id);
    auto& vn = v_.params.at(id);
    for (auto& [name, values] : p.blocks) {
      if (!block_trainable(p.type, name)) continue;
      const auto& g = git->second.blocks.at(name);
      auto& m = mn.blocks.at(name);
      auto& v = vn.blocks.at(name);
      for (std::size_t i = 0; i < values.size(); ++i) update(values[i], g[i], m[i], v[i]);
    }
  }
  for (auto& [id, w] : params.weights) {
    auto git = grads.weights.find(id);
    if (git == grads.weights.end()) continue;
    update(w, git->second, m_.weights.at(id), v_.weights.at(id));
  }
}

std::size_t sample_segment_start(std::size_t song_len, std::size_t segment_len, Rng& rng) {
  if (song_len <= segment_len) return 0;
  return std::size_t(rng.next_below(song_len - segment_len + 1));
}

double clip_gradients(ParamStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [id, p] : grads.params)
    for (const auto& [name, values] : p.blocks) {
      if (!block_trainable(p.type, name)) continue;
      for (double v : values) sq += v * v;
    }
  for (const auto& [id, w] : grads.weights) sq += w * w;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [id, p] : grads.params)
      for (auto& [name, values] : p.blocks)
        for (double& v : values) v *= scale;
    for (auto& [id, w] : grads.weights) w *= scale;
  }
  return norm;
}

namespace {

// Copies an aligned segment out of every track, looping short songs.
std::vector<Stereo> slice_sources(const SongSession& session, std::size_t start,
                                  std::size_t len) {
  std::vector<Stereo> out(session.tracks.size());
  const std::size_t song = session.mix.size();
  for (std::size_t k = 0; k < session.tracks.size(); ++k) {
    out[k].left.resize(len);
    out[k].right.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t j = (start + i) % song;
      out[k].left[i] = session.tracks[k].left[j];
      out[k].right[i] = session.tracks[k].right[j];
    }
  }
  return out;
}

Stereo slice_stereo(const Stereo& s, std::size_t start, std::size_t len) {
  Stereo out(len);
  const std::size_t n = s.size();
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t j = (start + i) % n;
    out.left[i] = s.left[j];
    out.right[i] = s.right[j];
  }
  return out;
}

NodeId find_nonfinite_node(const ExecutionRecord& record) {
  for (const auto& [id, sig] : record.outputs)
    if (!all_finite(sig)) return id;
  return -1;
}

}  // namespace

TrainResult train(const Graph& graph, ParamStore& store, AdamW& optimizer,
                  const SongSession& session, Phase phase, std::size_t steps,
                  std::size_t prune_step_offset, const TrainConfig& cfg, Rng& sample_rng) {
  validate_store(graph, store);
  TrainResult result;
  if (steps == 0) return result;

  const double fs = session.sample_rate;
  const std::size_t seg_len = std::size_t(cfg.segment_seconds * fs + 0.5);
  const std::size_t tail_len = std::size_t(cfg.tail_seconds * fs + 0.5);
  if (tail_len > seg_len) throw std::invalid_argument("train: tail longer than segment");
  const std::size_t warm_len = seg_len - tail_len;

  const auto plan = plan_schedule(graph);
  const auto pcfg = processor_config(session);
  const bool has_params = !store.params.empty() || !store.weights.empty();

  result.trace.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t start = sample_segment_start(session.mix.size(), seg_len, sample_rng);
    const auto sources = slice_sources(session, start, seg_len);
    const Stereo target_tail = slice_stereo(session.mix, start + warm_len, tail_len);

    ExecOptions opts;
    opts.keep_activations = true;
    opts.gain_staging_norms = true;
    ExecutionRecord record;
    RenderOutput render = execute(graph, plan, store, sources, pcfg, opts, &record);

    Stereo pred_tail(tail_len);
    std::copy(render.mix.left.begin() + warm_len, render.mix.left.end(), pred_tail.left.begin());
    std::copy(render.mix.right.begin() + warm_len, render.mix.right.end(),
              pred_tail.right.begin());

    Stereo grad_tail;
    LossBreakdown parts = audio_loss(target_tail, pred_tail, cfg.stft, cfg.loss_weights, fs,
                                     nullptr, &grad_tail);

    std::map<NodeId, MidGradInjection> injections;
    parts.gain_staging = gain_staging_coefficients(render.ms_norms,
                                                   cfg.loss_weights.alpha_gain, injections);
    parts.sparsity = sparsity_loss(store);
    const std::size_t prune_step = prune_step_offset + step;
    parts.total = combine_total(parts, phase, prune_step, cfg.loss_weights);

    if (!std::isfinite(parts.total)) {
      const NodeId bad = find_nonfinite_node(record);
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               (bad >= 0 ? " (first non-finite output at node " +
                                               std::to_string(bad) + ")"
                                         : " (loss-side overflow)"));
    }

    result.trace.push_back({step, phase, parts.audio, parts.gain_staging, parts.sparsity,
                            parts.total});
    if (!has_params) continue;

    Stereo grad_mix(seg_len);
    std::copy(grad_tail.left.begin(), grad_tail.left.end(), grad_mix.left.begin() + warm_len);
    std::copy(grad_tail.right.begin(), grad_tail.right.end(), grad_mix.right.begin() + warm_len);

    ParamStore grads = backward_pass(graph, store, record, grad_mix, pcfg, &injections);

    if (phase == Phase::prune) {
      const double ap = sparsity_coefficient(prune_step, cfg.loss_weights);
      if (ap > 0.0)
        for (auto& [id, g] : grads.weights) g += ap * sigmoid_grad(store.weights.at(id));
    }

    clip_gradients(grads, cfg.grad_clip);
    optimizer.step(store, grads, cfg);
  }
  return result;
}

LossBreakdown evaluate(const Graph& graph, const ParamStore& store, const PruneMask* mask,
                       const SongSession& session, const TrainConfig& cfg, EvalCache* cache) {
  validate_store(graph, store);
  const double fs = session.sample_rate;
  const std::size_t tail_len = std::size_t(cfg.tail_seconds * fs + 0.5);
  const std::size_t warm_len =
      std::size_t((cfg.segment_seconds - cfg.tail_seconds) * fs + 0.5);
  const std::size_t song = session.mix.size();
  if (song < tail_len) throw std::invalid_argument("evaluate: song shorter than one window");

  EvalCache local;
  EvalCache* ec = cache ? cache : &local;
  if (ec->windows.empty() || ec->song_len != song || ec->sample_rate != fs) {
    ec->windows.clear();
    ec->song_len = song;
    ec->sample_rate = fs;
    const std::size_t count = song / tail_len;  // final partial window dropped
    for (std::size_t i = 0; i < count; ++i) {
      EvalCache::Window w;
      const std::size_t tail_start = i * tail_len;
      w.render_start = tail_start >= warm_len ? tail_start - warm_len : 0;
      w.render_len = tail_start - w.render_start + tail_len;
      w.tail_offset = tail_start - w.render_start;
      w.tail_len = tail_len;
      w.target_tail = slice_stereo(session.mix, tail_start, tail_len);
      ec->windows.push_back(std::move(w));
    }
  }

  const auto plan = plan_schedule(graph);
  const auto pcfg = processor_config(session);
  LossBreakdown sum;
  for (auto& w : ec->windows) {
    const auto sources = slice_sources(session, w.render_start, w.render_len);
    ExecOptions opts;
    opts.mask = mask;
    opts.gain_staging_norms = true;
    RenderOutput render = execute(graph, plan, store, sources, pcfg, opts, nullptr);

    Stereo pred_tail(w.tail_len);
    std::copy(render.mix.left.begin() + w.tail_offset,
              render.mix.left.begin() + w.tail_offset + w.tail_len, pred_tail.left.begin());
    std::copy(render.mix.right.begin() + w.tail_offset,
              render.mix.right.begin() + w.tail_offset + w.tail_len, pred_tail.right.begin());

    const TargetSpectra* ts = target_spectra_get(w.target_tail, cfg.stft, fs, w.target);
    LossBreakdown parts =
        audio_loss(w.target_tail, pred_tail, cfg.stft, cfg.loss_weights, fs, ts, nullptr);
    sum.audio += parts.audio;
    sum.lr += parts.lr;
    sum.mid += parts.mid;
    sum.side += parts.side;
    sum.gain_staging += gain_staging_loss(render.ms_norms);
  }
  const double inv = 1.0 / double(ec->windows.size());
  sum.audio *= inv;
  sum.lr *= inv;
  sum.mid *= inv;
  sum.side *= inv;
  sum.gain_staging *= inv;
  sum.sparsity = sparsity_loss(store);
  sum.total = sum.audio + cfg.loss_weights.alpha_gain * sum.gain_staging;
  return sum;
}

}  // namespace mixgraph
