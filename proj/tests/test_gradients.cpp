#include <doctest.h>

#include "fd_harness.hpp"

using namespace mixgraph;

namespace {

// Smaller inputs for the dense-FIR processors keep the FD loop fast without
// losing coverage; dynamics processors get longer signals so the envelope
// recursion matters.
std::size_t case_length(NodeType t, Rng& rng) {
  switch (t) {
    case NodeType::compressor:
    case NodeType::noisegate:
      return 2048 + std::size_t(rng.next_below(2048));
    case NodeType::reverb:
    case NodeType::multitap_delay:
      return 1024 + std::size_t(rng.next_below(1024));
    default:
      return 1500 + std::size_t(rng.next_below(2000));
  }
}

void check_type(NodeType type, int cases, double tol = 1e-3) {
  Rng rng(0xf00d + std::uint64_t(type));
  for (int rep = 0; rep < cases; ++rep) {
    fd::Case c = fd::make_case(type, case_length(type, rng), rng);
    fd::Grads g = fd::analytic(c);
    CAPTURE(int(type));
    CAPTURE(rep);
    CHECK(fd::directional_param_err(c, g, rng) <= tol);
    CHECK(fd::directional_input_err(c, g, rng) <= tol);
    CHECK(fd::worst_coordinate_err(c, g, 3, rng) <= tol);
    CHECK(fd::logit_err(c, g) <= tol);
  }
}

}  // namespace

TEST_CASE("gain/pan gradients match finite differences") {
  check_type(NodeType::gain_pan, 5);
}

TEST_CASE("gain/pan analytic gradient has the closed form") {
  Rng rng(42);
  fd::Case c = fd::make_case(NodeType::gain_pan, 512, rng);
  c.logit = 500.0;  // w = 1: y = wet, so dL/dgL = sum c_L * L * exp(gL)
  fd::Grads g = fd::analytic(c);
  const double gl = c.params.blocks["gain"][0];
  double expect = 0.0;
  for (std::size_t i = 0; i < c.input.size(); ++i)
    expect += c.upstream.left[i] * c.input.left[i] * std::exp(gl);
  CHECK(g.params.blocks["gain"][0] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("stereo imager gradients match finite differences") {
  check_type(NodeType::stereo_imager, 5);
}

TEST_CASE("equalizer gradients match finite differences") {
  check_type(NodeType::equalizer, 4);
}

TEST_CASE("compressor gradients match finite differences") {
  check_type(NodeType::compressor, 4);
}

TEST_CASE("noisegate gradients match finite differences") {
  check_type(NodeType::noisegate, 4);
}

TEST_CASE("reverb gradients match finite differences") {
  check_type(NodeType::reverb, 3);
}

TEST_CASE("multitap delay gradients match finite differences") {
  check_type(NodeType::multitap_delay, 3);
}

TEST_CASE("masked node: zero parameter grads, pass-through input grad") {
  Rng rng(7);
  fd::Case c = fd::make_case(NodeType::equalizer, 1024, rng);
  c.mask = 0.0;
  fd::Grads g = fd::analytic(c);
  CHECK(g.logit == 0.0);
  for (const auto& [name, values] : g.params.blocks)
    for (double v : values) CHECK(v == 0.0);
  for (std::size_t i = 0; i < c.input.size(); ++i) {
    CHECK(g.input.left[i] == c.upstream.left[i]);
    CHECK(g.input.right[i] == c.upstream.right[i]);
  }
}
