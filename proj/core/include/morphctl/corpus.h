// SPDX-License-Identifier: Apache-2.0

#ifndef MORPHCTL_CORPUS_H_
#define MORPHCTL_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <vector>

#include "morphctl/morphology.h"
#include "morphctl/ppo.h"

namespace morphctl {

// `path` may be a directory of morphology files (sorted by name; a
// manifest.json inside is ignored), a variant manifest, or one file. Robot
// ids are file stems.
std::vector<Robot> LoadRobots(const std::filesystem::path& path,
                              const SpaceConfig& space = SpaceConfig{});

// Robots "robot_000", "robot_001", ... each drawn from its own derived stream.
std::vector<Robot> SampleCorpus(int count, std::uint64_t seed, const SpaceConfig& space = SpaceConfig{});

void WriteCorpus(const std::vector<Robot>& robots, const std::filesystem::path& dir);

}  // namespace morphctl

#endif  // MORPHCTL_CORPUS_H_
