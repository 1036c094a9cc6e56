// SPDX-License-Identifier: Apache-2.0

#include "morphctl/corpus.h"

#include <algorithm>
#include <cstdio>

#include "morphctl/morphology_io.h"
#include "morphctl/variation.h"

namespace morphctl {

std::vector<Robot> LoadRobots(const std::filesystem::path& path, const SpaceConfig& space) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw MorphologyError("robot corpus '" + path.string() + "' does not exist");
  std::vector<Robot> robots;
  auto load = [&](const fs::path& p) {
    robots.push_back({p.stem().string(), LoadMorphologyFile(p, space)});
  };
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".json" &&
          e.path().filename() != "manifest.json") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MorphologyError("robot corpus '" + path.string() + "' has no .json files");
    for (const fs::path& f : files) load(f);
  } else if (path.filename() == "manifest.json") {
    for (const ManifestRecord& r : ReadManifest(path)) load(r.path);
  } else {
    load(path);
  }
  return robots;
}

std::vector<Robot> SampleCorpus(int count, std::uint64_t seed, const SpaceConfig& space) {
  std::vector<Robot> robots;
  for (int i = 0; i < count; ++i) {
    Rng rng(DeriveSeed(seed, {static_cast<std::uint64_t>(i)}));
    char id[32];
    std::snprintf(id, sizeof(id), "robot_%03d", i);
    MorphologyGraph g = SampleMorphology(space, rng);
    g.name = id;
    robots.push_back({id, std::move(g)});
  }
  return robots;
}

void WriteCorpus(const std::vector<Robot>& robots, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const Robot& r : robots) SaveMorphologyFile(dir / (r.id + ".json"), r.graph);
}

}  // namespace morphctl
