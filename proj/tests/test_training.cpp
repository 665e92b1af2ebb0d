#include <doctest.h>

#include <cmath>

#include "mixgraph/synth.hpp"
#include "mixgraph/training.hpp"

using namespace mixgraph;

namespace {

SynthSpec gain_truth_spec(int tracks, double seconds, std::uint64_t seed) {
  SynthSpec spec;
  spec.track_count = tracks;
  spec.subgroups.groups = {{}};
  for (int t = 0; t < tracks; ++t) spec.subgroups.groups[0].push_back(t);
  spec.seconds = seconds;
  spec.seed = seed;
  spec.track_active.assign(std::size_t(tracks), "g");
  spec.bus_active = {""};
  return spec;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("segment and tail sample counts at 30 kHz") {
  TrainConfig cfg;
  CHECK(std::size_t(cfg.segment_seconds * 30000.0 + 0.5) == 114000);
  CHECK(std::size_t(cfg.tail_seconds * 30000.0 + 0.5) == 84000);
  // Search phase accounting: console budget equals the summed search budget.
  CHECK(cfg.preprune_console_steps + cfg.rounds * cfg.finetune_steps == cfg.console_steps);
}

TEST_CASE("segment sampling is seeded, aligned and in bounds") {
  Rng a(5), b(5), c(6);
  std::vector<std::size_t> sa, sb, sc;
  for (int i = 0; i < 200; ++i) {
    sa.push_back(sample_segment_start(900000, 114000, a));
    sb.push_back(sample_segment_start(900000, 114000, b));
    sc.push_back(sample_segment_start(900000, 114000, c));
  }
  CHECK(sa == sb);       // fixed seed: identical crop sequence
  CHECK(sa != sc);       // different seed: different sequence
  for (std::size_t s : sa) CHECK(s + 114000 <= 900000);

  // Short songs fall back to offset zero (the slicer loops them).
  Rng d(7);
  CHECK(sample_segment_start(50000, 114000, d) == 0);
}

TEST_CASE("gradient clipping caps the global norm") {
  ParamStore grads;
  grads.params[0] = init_params(NodeType::gain_pan, 0, 0, 30000.0);
  grads.params[0].blocks["gain"] = {30.0, 40.0};  // norm 50
  grads.weights[0] = 0.0;
  const double pre = clip_gradients(grads, 10.0);
  CHECK(pre == doctest::Approx(50.0));
  CHECK(grads.params[0].blocks["gain"][0] == doctest::Approx(6.0));
  CHECK(grads.params[0].blocks["gain"][1] == doctest::Approx(8.0));
}

TEST_CASE("zero steps leave parameters untouched") {
  SynthResult synth = synth_generate(gain_truth_spec(2, 4.0, 3));
  Graph console = build_mixing_console(2, synth.session.subgroups,
                                       std::vector<NodeType>{NodeType::gain_pan});
  ParamStore store = init_param_store(console, 1, synth.session.sample_rate);
  ParamStore before = store;

  AdamW opt;
  TrainConfig cfg = quick_config();
  Rng rng(1);
  auto result = train(console, store, opt, synth.session, Phase::console, 0, 0, cfg, rng);
  CHECK(result.trace.empty());
  for (const auto& [id, p] : store.params)
    for (const auto& [name, values] : p.blocks) {
      const auto& ref = before.params.at(id).blocks.at(name);
      for (std::size_t i = 0; i < values.size(); ++i) CHECK(values[i] == ref[i]);
    }
}

TEST_CASE("gain-only ground truth is recovered within 0.05 log units") {
  // Two tracks, gains/pans as the only truth processing.
  SynthResult synth = synth_generate(gain_truth_spec(2, 6.0, 11));
  const auto& session = synth.session;

  Graph console = build_mixing_console(2, session.subgroups,
                                       std::vector<NodeType>{NodeType::gain_pan});
  ParamStore store = init_param_store(console, 21, session.sample_rate);

  TrainConfig cfg = quick_config();
  AdamW opt;
  Rng rng(Rng::derive(cfg.seed, 1));
  auto result = train(console, store, opt, session, Phase::console, 500, 0, cfg, rng);

  // Loss trace: finite everywhere, and the end is below the start on average.
  REQUIRE(result.trace.size() == 500);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(std::isfinite(result.trace[i].total));
    head += result.trace[i].audio;
    tail += result.trace[result.trace.size() - 1 - i].audio;
  }
  CHECK(tail < head);

  // Per track: effective gain (through dry/wet) matches the truth gains.
  // The truth graph holds one gain node per track with w = 1.
  std::map<int, NodeId> truth_gain, fitted_gain;
  for (const auto& n : synth.truth_graph.nodes)
    if (n.type == NodeType::input) {
      const NodeId g = synth.truth_graph.successors(n.id)[0];
      if (is_processor(synth.truth_graph.find(g)->type)) truth_gain[*n.source_index] = g;
    }
  for (const auto& n : console.nodes)
    if (n.type == NodeType::input) fitted_gain[*n.source_index] = console.successors(n.id)[0];

  // Bus gain multiplies every track equally; include it in the comparison.
  NodeId bus_gain = -1;
  for (const auto& n : console.nodes)
    if (n.type == NodeType::mix) bus_gain = console.successors(n.id)[0];
  auto effective = [&](NodeId id, int channel) {
    const double w = sigmoid(store.weights.at(id));
    const double g = std::exp(store.params.at(id).blocks.at("gain")[std::size_t(channel)]);
    return w * g + 1.0 - w;
  };
  for (int t = 0; t < 2; ++t) {
    for (int ch = 0; ch < 2; ++ch) {
      const double truth =
          synth.truth_store.params.at(truth_gain[t]).blocks.at("gain")[std::size_t(ch)];
      const double fitted =
          std::log(effective(fitted_gain[t], ch) * effective(bus_gain, ch));
      CHECK(std::abs(fitted - truth) < 0.05);
    }
  }
}

TEST_CASE("training aborts on non-finite parameters naming a node") {
  SynthResult synth = synth_generate(gain_truth_spec(1, 4.0, 5));
  Graph console = build_mixing_console(1, synth.session.subgroups,
                                       std::vector<NodeType>{NodeType::gain_pan});
  ParamStore store = init_param_store(console, 1, synth.session.sample_rate);
  store.params.begin()->second.blocks["gain"][0] = std::nan("");

  AdamW opt;
  TrainConfig cfg = quick_config();
  Rng rng(2);
  try {
    train(console, store, opt, synth.session, Phase::console, 1, 0, cfg, rng);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("evaluate is deterministic and zero for an exact bypass match") {
  // Session whose mix is exactly the sample-wise track sum; an all-bypass
  // console reproduces it bit-for-bit.
  SongSession session;
  session.sample_rate = 30000.0;
  session.subgroups.groups = {{0, 1}};
  Rng rng(13);
  const std::size_t n = 210000;  // 7 s
  for (int t = 0; t < 2; ++t) {
    Stereo s(n);
    for (auto& v : s.left) v = 0.3 * (2.0 * rng.next_double() - 1.0);
    for (auto& v : s.right) v = 0.3 * (2.0 * rng.next_double() - 1.0);
    session.tracks.push_back(std::move(s));
  }
  session.mix.assign_zero(n);
  session.mix.add(session.tracks[0]);
  session.mix.add(session.tracks[1]);

  Graph console = build_mixing_console(2, session.subgroups);
  ParamStore store = init_param_store(console, 3, session.sample_rate);
  for (auto& [id, w] : store.weights) w = -800.0;  // w = 0

  TrainConfig cfg = quick_config();
  LossBreakdown a = evaluate(console, store, nullptr, session, cfg, nullptr);
  LossBreakdown b = evaluate(console, store, nullptr, session, cfg, nullptr);
  CHECK(a.audio == 0.0);
  CHECK(a.audio == b.audio);
  CHECK(a.gain_staging == b.gain_staging);
  CHECK(a.total == b.total);
}

TEST_CASE("evaluate equals the mean of independently computed windows") {
  SynthSpec spec = gain_truth_spec(2, 8.0, 17);
  SynthResult synth = synth_generate(spec);
  const auto& session = synth.session;

  Graph console = build_mixing_console(2, session.subgroups,
                                       std::vector<NodeType>{NodeType::gain_pan});
  ParamStore store = init_param_store(console, 7, session.sample_rate);
  // Slightly off-neutral so the loss is nonzero.
  for (auto& [id, p] : store.params) p.blocks["gain"][0] = 0.2;

  TrainConfig cfg = quick_config();
  const double got = evaluate(console, store, nullptr, session, cfg, nullptr).audio;

  // Oracle: replicate the window contract directly.
  const double fs = session.sample_rate;
  const std::size_t tail = std::size_t(cfg.tail_seconds * fs + 0.5);
  const std::size_t warm = std::size_t((cfg.segment_seconds - cfg.tail_seconds) * fs + 0.5);
  const std::size_t count = session.mix.size() / tail;
  REQUIRE(count == 2);  // 8 s / 2.8 s
  ProcessorConfig pcfg;
  pcfg.sample_rate = fs;
  const auto plan = plan_schedule(console);
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t tail_start = i * tail;
    const std::size_t start = tail_start >= warm ? tail_start - warm : 0;
    const std::size_t len = tail_start - start + tail;
    std::vector<Stereo> sources;
    for (const auto& t : session.tracks) {
      Stereo s(len);
      for (std::size_t j = 0; j < len; ++j) {
        s.left[j] = t.left[start + j];
        s.right[j] = t.right[start + j];
      }
      sources.push_back(std::move(s));
    }
    RenderOutput out = execute(console, plan, store, sources, pcfg, {});
    Stereo pred(tail), target(tail);
    for (std::size_t j = 0; j < tail; ++j) {
      const std::size_t o = tail_start - start + j;
      pred.left[j] = out.mix.left[o];
      pred.right[j] = out.mix.right[o];
      target.left[j] = session.mix.left[tail_start + j];
      target.right[j] = session.mix.right[tail_start + j];
    }
    sum += audio_loss(target, pred, cfg.stft, cfg.loss_weights, fs, nullptr, nullptr).audio;
  }
  CHECK(got == doctest::Approx(sum / double(count)).epsilon(1e-12));
}
