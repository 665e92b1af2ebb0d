#pragma once

// Finite-difference oracle for the processor gradients: a scalar loss
// L = <c, y> over a node's output, analytic gradients from node_backward,
// central differences with a step sweep and best-step comparison.

#include <cmath>
#include <string>
#include <vector>

#include "mixgraph/processors.hpp"
#include "mixgraph/rng.hpp"

namespace fd {

using namespace mixgraph;

inline Stereo random_stereo(std::size_t n, Rng& rng, double amp = 0.5) {
  Stereo s(n);
  for (auto& v : s.left) v = amp * (2.0 * rng.next_double() - 1.0);
  for (auto& v : s.right) v = amp * (2.0 * rng.next_double() - 1.0);
  return s;
}

struct Case {
  NodeType type;
  NodeParams params;
  double logit = 0.0;
  double mask = 1.0;
  Stereo input;
  Stereo upstream;  // fixed random c defining L = <c, y>
  ProcessorConfig cfg;
};

inline Case make_case(NodeType type, std::size_t n, Rng& rng, double fs = 30000.0) {
  Case c;
  c.type = type;
  c.cfg.sample_rate = fs;
  c.params = init_params(type, 1, rng.next_u64(), fs);
  for (auto& [name, values] : c.params.blocks) {
    if (name == "noise_seed") continue;
    for (auto& v : values) v += 0.3 * (2.0 * rng.next_double() - 1.0);
  }
  c.logit = 0.8 * (2.0 * rng.next_double() - 1.0);
  c.input = random_stereo(n, rng);
  c.upstream = random_stereo(n, rng, 1.0);
  return c;
}

inline double loss_of(const Case& c, const NodeParams& p, double logit, const Stereo& u) {
  NodeEval eval = node_forward(c.type, p, logit, c.mask, u, c.cfg, false);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    acc += c.upstream.left[i] * eval.y.left[i] + c.upstream.right[i] * eval.y.right[i];
  return acc;
}

struct Grads {
  NodeParams params;
  double logit = 0.0;
  Stereo input;
};

inline Grads analytic(const Case& c) {
  NodeEval eval = node_forward(c.type, c.params, c.logit, c.mask, c.input, c.cfg, true);
  Grads g;
  g.params = init_params(c.type, 1, 0, c.cfg.sample_rate);
  for (auto& [name, values] : g.params.blocks) std::fill(values.begin(), values.end(), 0.0);
  g.input.assign_zero(c.input.size());
  g.logit = node_backward(c.type, c.params, c.logit, c.mask, c.input, eval.y, eval, c.upstream,
                          nullptr, c.cfg, g.input, g.params);
  return g;
}

inline double rel_err(double fd_val, double an) {
  return std::abs(fd_val - an) / std::max({std::abs(fd_val), std::abs(an), 1e-10});
}

// Central difference along a direction through the trainable parameters and
// the dry/wet logit; returns the best relative error across the step sweep.
inline double directional_param_err(const Case& c, const Grads& g, Rng& rng) {
  std::vector<double*> coords;
  std::vector<const double*> grads;
  NodeParams p = c.params;
  for (const auto& spec : blocks_for(c.type)) {
    if (!spec.trainable) continue;
    auto& values = p.blocks[spec.name];
    const auto& gv = g.params.blocks.at(spec.name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      coords.push_back(&values[i]);
      grads.push_back(&gv[i]);
    }
  }
  double logit = c.logit;
  coords.push_back(&logit);
  grads.push_back(&g.logit);

  std::vector<double> direction(coords.size());
  for (auto& v : direction) v = 2.0 * rng.next_double() - 1.0;
  double expected = 0.0;
  for (std::size_t i = 0; i < coords.size(); ++i) expected += direction[i] * *grads[i];

  std::vector<double> base(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) base[i] = *coords[i];

  double best = 1e9;
  for (double h : {1e-3, 1e-4, 1e-5}) {
    for (std::size_t i = 0; i < coords.size(); ++i) *coords[i] = base[i] + h * direction[i];
    const double lp = loss_of(c, p, logit, c.input);
    for (std::size_t i = 0; i < coords.size(); ++i) *coords[i] = base[i] - h * direction[i];
    const double lm = loss_of(c, p, logit, c.input);
    for (std::size_t i = 0; i < coords.size(); ++i) *coords[i] = base[i];
    best = std::min(best, rel_err((lp - lm) / (2.0 * h), expected));
  }
  return best;
}

// Central difference along a random direction through the input samples.
inline double directional_input_err(const Case& c, const Grads& g, Rng& rng) {
  const std::size_t n = c.input.size();
  Stereo dir = random_stereo(n, rng, 1.0);
  double expected = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    expected += dir.left[i] * g.input.left[i] + dir.right[i] * g.input.right[i];

  double best = 1e9;
  for (double h : {1e-3, 1e-4, 1e-5}) {
    Stereo up = c.input, um = c.input;
    for (std::size_t i = 0; i < n; ++i) {
      up.left[i] += h * dir.left[i];
      up.right[i] += h * dir.right[i];
      um.left[i] -= h * dir.left[i];
      um.right[i] -= h * dir.right[i];
    }
    const double lp = loss_of(c, c.params, c.logit, up);
    const double lm = loss_of(c, c.params, c.logit, um);
    best = std::min(best, rel_err((lp - lm) / (2.0 * h), expected));
  }
  return best;
}

// Central difference on a handful of single parameter coordinates. Only
// coordinates with a meaningful analytic gradient are eligible: the FD
// quotient of a near-zero coordinate is dominated by cancellation noise, and
// the directional test already covers those in aggregate.
inline double worst_coordinate_err(const Case& c, const Grads& g, std::size_t samples, Rng& rng) {
  struct Coord {
    std::string block;
    std::size_t index;
  };
  double scale = 0.0;
  for (const auto& [name, values] : g.params.blocks)
    for (double v : values) scale = std::max(scale, std::abs(v));
  std::vector<Coord> all;
  for (const auto& spec : blocks_for(c.type)) {
    if (!spec.trainable) continue;
    const auto& gv = g.params.blocks.at(spec.name);
    for (std::size_t i = 0; i < spec.size; ++i)
      if (std::abs(gv[i]) >= 1e-4 * scale) all.push_back({spec.name, i});
  }
  double worst = 0.0;
  for (std::size_t s = 0; s < samples && !all.empty(); ++s) {
    const auto& coord = all[std::size_t(rng.next_below(all.size()))];
    const double an = g.params.blocks.at(coord.block)[coord.index];
    NodeParams p = c.params;
    const double base = p.blocks[coord.block][coord.index];
    double best = 1e9;
    for (double h : {1e-3, 1e-4, 1e-5}) {
      p.blocks[coord.block][coord.index] = base + h;
      const double lp = loss_of(c, p, c.logit, c.input);
      p.blocks[coord.block][coord.index] = base - h;
      const double lm = loss_of(c, p, c.logit, c.input);
      p.blocks[coord.block][coord.index] = base;
      best = std::min(best, rel_err((lp - lm) / (2.0 * h), an));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

inline double logit_err(const Case& c, const Grads& g) {
  double best = 1e9;
  for (double h : {1e-3, 1e-4, 1e-5}) {
    const double lp = loss_of(c, c.params, c.logit + h, c.input);
    const double lm = loss_of(c, c.params, c.logit - h, c.input);
    best = std::min(best, rel_err((lp - lm) / (2.0 * h), g.logit));
  }
  return best;
}

}  // namespace fd
