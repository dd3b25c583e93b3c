// SPDX-License-Identifier: Apache-2.0
#include "egfuse/efficiency.hpp"

namespace egfuse {

namespace {

int64_t conv_out(int64_t in, int64_t stride) { return (in - 1) / stride + 1; }  // k=3, pad=1

struct Dims {
  int64_t b, c, h, w;
  int64_t elems() const { return b * c * h * w; }
};

// Elementwise and reduction ops count one FLOP per touched element.
int64_t gap_flops(const Dims& d) { return d.b * d.c * (d.h * d.w + 1); }

int64_t scoring_flops(const Dims& d) {
  const int64_t mid = EncoderConfig::reduced(static_cast<int>(d.c));
  int64_t f = gap_flops(d);
  f += conv_flops(d.b, d.c, mid, 1, 1, 1) + d.b * mid;      // p1 + relu
  f += conv_flops(d.b, mid, mid, 1, 1, 1);                  // p2
  f += conv_flops(d.b, mid, 1, 1, 1, 1) + d.b;              // out + sigmoid
  return f;
}

int64_t gate_flops(const Dims& d) {
  const int64_t mid = EncoderConfig::reduced(static_cast<int>(d.c));
  int64_t f = gap_flops(d);
  f += conv_flops(d.b, d.c, mid, 1, 1, 1) + d.b * mid;      // channel gate bottleneck
  f += conv_flops(d.b, mid, d.c, 1, 1, 1) + d.b * d.c;
  f += 2 * d.elems();                                       // mean + max squeeze
  f += conv_flops(d.b, 2, 1, d.h, d.w, 3) + d.b * d.h * d.w;  // 3x3 conv + sigmoid
  return f;
}

}  // namespace

EfficiencyReport count_efficiency(const ModelParams& params, const EncoderConfig& cfg,
                                  const FusionStrategy& strategy, int num_modalities, int batch,
                                  int in_h, int in_w) {
  cfg.validate();
  strategy.validate();
  if (num_modalities < 1) throw ConfigError("count_efficiency: need at least one modality");

  EfficiencyReport report;
  report.param_count = params.parameter_count();

  int64_t active = num_modalities;
  int64_t h = in_h, w = in_w;

  for (int s = 0; s < cfg.num_stages; ++s) {
    const int64_t c_in = cfg.stage_input_channels(s);
    const int64_t c_out = cfg.channels_per_stage[s];
    const int64_t h1 = conv_out(h, cfg.stage_stride);
    const int64_t w1 = conv_out(w, cfg.stage_stride);
    const Dims d{batch, c_out, h1, w1};

    StageCost cost;
    cost.stage = s;
    cost.active_in = static_cast<int>(active);

    int64_t branch = conv_flops(batch, c_in, c_out, h1, w1, 3) + d.elems();  // conv1 + relu
    branch += conv_flops(batch, c_out, c_out, h1, w1, 3) + d.elems();        // conv2 + relu
    cost.flops += active * branch;

    const int64_t want = strategy.wants_drops() && active > 1
                             ? std::min<int64_t>(strategy.drops_per_stage, active - 1)
                             : 0;
    if (want > 0) {
      if (strategy.kind != FusionKind::random_drop) cost.flops += active * scoring_flops(d);
      if (strategy.kind != FusionKind::naive_drop) {
        const int64_t donors = strategy.scope == CompensationScope::dropped ? want : active;
        cost.flops += donors * (gate_flops(d) + 2 * d.elems());  // gates + two gated products
        const int64_t survivors = active - want;
        // Terms feeding one survivor: every donor except itself.
        const int64_t self_donors = strategy.scope == CompensationScope::dropped ? 0 : 1;
        const int64_t terms = donors - self_donors;
        if (terms > 0) {
          const int64_t per_family = (terms - 1) * d.elems() + d.elems() + d.elems();
          cost.flops += survivors * 2 * per_family;
        }
      }
      cost.dropped = static_cast<int>(want);
      active -= want;
    }

    report.per_stage_breakdown.push_back(cost);
    report.flops += cost.flops;
    h = h1;
    w = w1;
  }

  StageCost head;
  head.stage = cfg.num_stages;
  head.active_in = static_cast<int>(active);
  const int64_t c_last = cfg.channels_per_stage.back();
  head.flops += (active - 1) * batch * c_last * h * w;  // aggregation adds
  head.flops += batch * c_last * h * w;                 // mean scale
  head.flops += conv_flops(batch, c_last, cfg.num_classes, h, w, 1);
  head.flops += 7 * batch * static_cast<int64_t>(cfg.num_classes) * in_h * in_w;  // 4-tap resample
  report.per_stage_breakdown.push_back(head);
  report.flops += head.flops;

  return report;
}

}  // namespace egfuse
