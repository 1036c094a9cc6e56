// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container:
//   8 bytes   magic "MMCKPT01"
//   8 bytes   header length n (uint64, little-endian)
//   n bytes   JSON header: layout version, config, robots, scalars and a
//             tensor directory of {name, shape, offset} (offset in doubles)
//   rest      float64 little-endian tensor data

#ifndef MORPHCTL_CHECKPOINT_H_
#define MORPHCTL_CHECKPOINT_H_

#include <stdexcept>
#include <string>

#include "morphctl/trainer.h"

namespace morphctl {

inline constexpr char kCheckpointMagic[9] = "MMCKPT01";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void SaveCheckpoint(const std::string& path, const TrainerState& state);
TrainerState LoadCheckpoint(const std::string& path);

}  // namespace morphctl

#endif  // MORPHCTL_CHECKPOINT_H_
