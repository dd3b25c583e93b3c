// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "egfuse/data.hpp"
#include "egfuse/model.hpp"
#include "egfuse/pipeline.hpp"
#include "egfuse/pseudo_label.hpp"

namespace egfuse {

struct AdaptConfig {
  PseudoLabelConfig pseudo;
  TrainConfig train;
  int refresh_interval = 1;  // epochs between pseudo-label regeneration

  void validate(int num_modalities) const {
    train.validate();
    pseudo.validate(num_modalities);
    if (refresh_interval < 1) throw ConfigError("adapt: refresh_interval must be >= 1");
  }
};

struct AdaptResult {
  std::vector<double> epoch_loss_adapt;
  std::vector<double> epoch_loss_kl;
  std::vector<double> epoch_loss_total;
  std::vector<double> epoch_coverage;
  std::vector<double> epoch_target_miou;  // filled only when target truth is usable
};

/// Teacher-student adaptation: the frozen teacher votes pseudo-labels on the
/// target data; the student trains on the total loss over labeled pixels.
/// Target ground truth, when present, feeds the evaluation curve only.
AdaptResult adapt(const ModelParams& teacher, ModelParams& student, const Dataset& target,
                  const EncoderConfig& cfg, const FusionStrategy& strategy,
                  const AdaptConfig& acfg, bool evaluate_each_epoch = false);

}  // namespace egfuse
