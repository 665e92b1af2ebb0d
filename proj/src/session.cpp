#include "mixgraph/session.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mixgraph/resample.hpp"
#include "mixgraph/wav.hpp"

namespace mixgraph {

using json = nlohmann::ordered_json;

SessionManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: missing file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
  SessionManifest m;
  if (doc.contains("sample_rate")) m.sample_rate = doc["sample_rate"].get<double>();
  if (!doc.contains("mix")) throw std::runtime_error("manifest: missing mix path");
  m.mix_path = doc["mix"].get<std::string>();
  if (!doc.contains("tracks") || !doc["tracks"].is_array() || doc["tracks"].empty())
    throw std::runtime_error("manifest: missing tracks");
  for (const auto& jt : doc["tracks"]) {
    ManifestTrack t;
    t.path = jt.at("path").get<std::string>();
    if (jt.contains("name")) t.name = jt["name"].get<std::string>();
    if (!jt.contains("group"))
      throw std::runtime_error("manifest: track " + t.path + " has no subgroup");
    t.group = jt["group"].get<std::string>();
    m.tracks.push_back(std::move(t));
  }
  return m;
}

std::string manifest_to_json(const SessionManifest& manifest) {
  json doc;
  doc["sample_rate"] = manifest.sample_rate;
  doc["mix"] = manifest.mix_path;
  doc["tracks"] = json::array();
  for (const auto& t : manifest.tracks) {
    json jt;
    jt["path"] = t.path;
    if (!t.name.empty()) jt["name"] = t.name;
    jt["group"] = t.group;
    doc["tracks"].push_back(std::move(jt));
  }
  return doc.dump(1);
}

void save_manifest(const SessionManifest& manifest, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot write " + tmp);
    out << manifest_to_json(manifest) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

SongSession load_session(const SessionManifest& manifest, const std::string& base_dir) {
  namespace fs = std::filesystem;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    if (path.is_absolute() || base_dir.empty()) return path.string();
    return (fs::path(base_dir) / path).string();
  };

  SongSession session;
  session.sample_rate = manifest.sample_rate;

  auto load_one = [&](const std::string& path) {
    AudioBuffer buf = read_wav(resolve(path));
    if (buf.sample_rate != session.sample_rate)
      buf.samples = resample(buf.samples, buf.sample_rate, session.sample_rate);
    return buf.samples;
  };

  std::size_t max_len = 0;
  for (const auto& t : manifest.tracks) {
    session.tracks.push_back(load_one(t.path));
    max_len = std::max(max_len, session.tracks.back().size());
  }
  session.mix = load_one(manifest.mix_path);
  max_len = std::max(max_len, session.mix.size());

  auto pad = [&](Stereo& s) {
    s.left.resize(max_len, 0.0);
    s.right.resize(max_len, 0.0);
  };
  for (auto& t : session.tracks) pad(t);
  pad(session.mix);

  // Group labels -> subgroup indices, ordered by first appearance.
  std::vector<std::string> group_names;
  for (const auto& t : manifest.tracks) {
    if (std::find(group_names.begin(), group_names.end(), t.group) == group_names.end())
      group_names.push_back(t.group);
  }
  session.subgroups.groups.resize(group_names.size());
  for (std::size_t k = 0; k < manifest.tracks.size(); ++k) {
    const auto idx = std::size_t(std::find(group_names.begin(), group_names.end(),
                                           manifest.tracks[k].group) -
                                 group_names.begin());
    session.subgroups.groups[idx].push_back(int(k));
  }
  validate_subgroups(int(manifest.tracks.size()), session.subgroups);
  return session;
}

}  // namespace mixgraph
