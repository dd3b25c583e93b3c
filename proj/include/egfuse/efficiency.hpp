// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "egfuse/model.hpp"
#include "egfuse/pipeline.hpp"

namespace egfuse {

/// Cost of one pipeline segment. `stage == num_stages` denotes the
/// aggregation + head segment.
struct StageCost {
  int stage = 0;
  int active_in = 0;   // branches encoded in this stage
  int dropped = 0;     // branches terminated after it
  int64_t flops = 0;
};

struct EfficiencyReport {
  int64_t param_count = 0;
  int64_t flops = 0;
  std::vector<StageCost> per_stage_breakdown;
};

/// FLOPs of a convolution: 2 per multiply-accumulate, bias excluded.
inline int64_t conv_flops(int64_t b, int64_t c_in, int64_t c_out, int64_t h_out, int64_t w_out,
                          int64_t k, int64_t groups = 1) {
  return 2 * b * c_out * h_out * w_out * (c_in / groups) * k * k;
}

/// Analytic cost of a forward pass under the strategy's drop schedule.
/// Dropped branches stop contributing at the stage after their termination.
EfficiencyReport count_efficiency(const ModelParams& params, const EncoderConfig& cfg,
                                  const FusionStrategy& strategy, int num_modalities, int batch,
                                  int in_h, int in_w);

}  // namespace egfuse
