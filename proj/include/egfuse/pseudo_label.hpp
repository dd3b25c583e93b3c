// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "egfuse/data.hpp"
#include "egfuse/labels.hpp"
#include "egfuse/pipeline.hpp"

namespace egfuse {

struct PseudoLabelConfig {
  std::vector<std::vector<int>> combinations;  // modality slots per combination
  int threshold = 2;
  int ignore_label = kIgnoreLabel;

  void validate(int num_modalities) const;
};

/// All non-empty subsets of {0..num_modalities-1} in binary-counting order.
std::vector<std::vector<int>> enumerate_combinations(int num_modalities);

/// Resolves explicit name lists against the available modality names.
std::vector<std::vector<int>> combinations_from_names(
    const std::vector<std::string>& available,
    const std::vector<std::vector<std::string>>& requested);

/// The most frequent candidate class if its count reaches the threshold and
/// the mode is unique; the ignore label otherwise.
int vote_pixel(const std::vector<int>& candidates, int threshold, int ignore_label);

struct PseudoResult {
  LabelMap map;
  double coverage = 0.0;  // labeled fraction of the grid
};

/// Runs the frozen teacher once per modality combination, argmaxes each
/// probability map, and votes per pixel.
PseudoResult generate_pseudo_labels(const ModelParams& teacher, const EncoderConfig& cfg,
                                    const FusionStrategy& strategy, const SampleRecord& sample,
                                    const PseudoLabelConfig& pcfg);

}  // namespace egfuse
