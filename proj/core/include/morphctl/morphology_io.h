// SPDX-License-Identifier: Apache-2.0

#ifndef MORPHCTL_MORPHOLOGY_IO_H_
#define MORPHCTL_MORPHOLOGY_IO_H_

#include <filesystem>
#include <string>
#include <string_view>

#include "morphctl/morphology.h"

namespace morphctl {

// Schema violation while reading a morphology document. what() starts with a
// JSON path such as "nodes[2].radius".
class ParseError : public MorphologyError {
 public:
  using MorphologyError::MorphologyError;
};

// Tree or parameter violation in an otherwise well-formed document.
class ValidationError : public MorphologyError {
 public:
  ValidationError(const std::string& message, ValidationReport report)
      : MorphologyError(message), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  ValidationReport report_;
};

MorphologyGraph ParseMorphology(std::string_view document,
                                const SpaceConfig& space = SpaceConfig{});

// Canonical text: nodes in depth-first declaration order, fixed key order,
// 17 significant digits. Identical graphs serialize to identical bytes.
std::string SerializeMorphology(const MorphologyGraph& g,
                                const SpaceConfig& space = SpaceConfig{});

MorphologyGraph LoadMorphologyFile(const std::filesystem::path& path,
                                   const SpaceConfig& space = SpaceConfig{});
void SaveMorphologyFile(const std::filesystem::path& path, const MorphologyGraph& g,
                        const SpaceConfig& space = SpaceConfig{});

}  // namespace morphctl

#endif  // MORPHCTL_MORPHOLOGY_IO_H_
