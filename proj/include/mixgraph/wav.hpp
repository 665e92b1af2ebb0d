#pragma once

#include <string>

#include "mixgraph/audio.hpp"

namespace mixgraph {

// Reads 16/24-bit PCM and 32-bit float WAV. Mono is duplicated to stereo;
// more than two channels is rejected.
AudioBuffer read_wav(const std::string& path);

// 32-bit float stereo, written atomically (temp + rename).
void write_wav(const std::string& path, const Stereo& samples, double sample_rate);

}  // namespace mixgraph
