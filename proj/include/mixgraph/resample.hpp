#pragma once

#include "mixgraph/audio.hpp"

namespace mixgraph {

// Windowed-sinc (Kaiser) resampler.
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);
Stereo resample(const Stereo& x, double fs_in, double fs_out);

}  // namespace mixgraph
