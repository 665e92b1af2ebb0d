#pragma once

#include <string>
#include <vector>

#include "mixgraph/training.hpp"

namespace mixgraph {

struct ManifestTrack {
  std::string path;
  std::string name;
  std::string group;
};

struct SessionManifest {
  std::vector<ManifestTrack> tracks;
  std::string mix_path;
  double sample_rate = 30000.0;
};

SessionManifest load_manifest(const std::string& path);
std::string manifest_to_json(const SessionManifest& manifest);
void save_manifest(const SessionManifest& manifest, const std::string& path);

// Decodes and resamples all referenced audio, duplicates mono to stereo,
// zero-pads everything to a common length, and maps the group labels to a
// SubgroupSpec (groups ordered by first appearance).
SongSession load_session(const SessionManifest& manifest, const std::string& base_dir);

}  // namespace mixgraph
