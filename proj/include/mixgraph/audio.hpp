#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace mixgraph {

// Stereo audio in planar layout. Most of the library works on raw channel
// vectors; this type is the unit that flows along graph edges.
struct Stereo {
  std::vector<double> left;
  std::vector<double> right;

  Stereo() = default;
  explicit Stereo(std::size_t n) : left(n, 0.0), right(n, 0.0) {}

  std::size_t size() const { return left.size(); }
  bool empty() const { return left.empty(); }

  void assign_zero(std::size_t n) {
    left.assign(n, 0.0);
    right.assign(n, 0.0);
  }

  void add(const Stereo& o) {
    for (std::size_t i = 0; i < left.size(); ++i) left[i] += o.left[i];
    for (std::size_t i = 0; i < right.size(); ++i) right[i] += o.right[i];
  }
};

// An audio buffer with its sample rate; the session- and interface-level type.
struct AudioBuffer {
  Stereo samples;
  double sample_rate = 0.0;

  std::size_t size() const { return samples.size(); }
};

inline void require_same_shape(const Stereo& a, const Stereo& b, const char* what) {
  if (a.left.size() != b.left.size() || a.right.size() != b.right.size())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// mid = (L+R)/2, side = (L-R)/2
inline void to_mid_side(const Stereo& in, std::vector<double>& mid, std::vector<double>& side) {
  const std::size_t n = in.size();
  mid.resize(n);
  side.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    mid[i] = 0.5 * (in.left[i] + in.right[i]);
    side[i] = 0.5 * (in.left[i] - in.right[i]);
  }
}

// L = mid + side, R = mid - side (inverse of to_mid_side)
inline void from_mid_side(const std::vector<double>& mid, const std::vector<double>& side, Stereo& out) {
  const std::size_t n = mid.size();
  out.left.resize(n);
  out.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.left[i] = mid[i] + side[i];
    out.right[i] = mid[i] - side[i];
  }
}

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double energy(const Stereo& s) { return energy(s.left) + energy(s.right); }

}  // namespace mixgraph
