// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "egfuse/compensation.hpp"
#include "egfuse/data.hpp"
#include "egfuse/encoder.hpp"
#include "egfuse/metrics.hpp"
#include "egfuse/model.hpp"
#include "egfuse/scoring.hpp"

namespace egfuse {

enum class FusionKind { score_drop, random_drop, naive_drop, average_fusion };

/// Which donors feed the compensation sum: the dropped branches only, or
/// every other active branch (the literal all-pairs reading).
enum class CompensationScope { dropped, all_others };

std::string to_string(FusionKind k);
FusionKind fusion_kind_from_string(const std::string& s);

struct FusionStrategy {
  FusionKind kind = FusionKind::score_drop;
  int drops_per_stage = 1;
  CompensationScope scope = CompensationScope::dropped;
  uint64_t seed = 0;  // drives random_drop selection

  bool wants_drops() const { return kind != FusionKind::average_fusion && drops_per_stage > 0; }

  void validate() const {
    if (drops_per_stage < 0) throw ConfigError("strategy: drops_per_stage must be >= 0");
    if (kind == FusionKind::average_fusion && drops_per_stage != 0) {
      throw ConfigError("strategy: average_fusion requires drops_per_stage = 0");
    }
  }
};

/// Per-stage record of what the forward pass decided.
template <typename T>
struct StageTraceT {
  std::vector<int> active_before;              // global modality slots entering the stage
  std::optional<ScoreReportT<T>> score;        // ordered like active_before; absent for random drops
  std::vector<int> dropped;                    // global slots terminated at this stage
};

template <typename T>
struct ForwardTraceT {
  std::vector<StageTraceT<T>> stages;
  std::vector<int> survivors;  // global slots that reached aggregation

  int total_drops() const {
    int n = 0;
    for (const auto& s : stages) n += static_cast<int>(s.dropped.size());
    return n;
  }
};

using ForwardTrace = ForwardTraceT<float>;

/// Full forward pass over tape nodes: encode every active branch per stage,
/// score and drop per the strategy, compensate survivors, aggregate, head.
/// Dropped branches terminate: they are never encoded again.
template <typename T>
typename TapeT<T>::Node* forward_on_tape(TapeT<T>& tape, const ParamNodesT<T>& pn,
                                         const ModelParamsT<T>& params, const EncoderConfig& cfg,
                                         const FusionStrategy& strategy,
                                         const ModalityBundleT<T>& bundle,
                                         ForwardTraceT<T>* trace = nullptr,
                                         std::mt19937_64* rng = nullptr) {
  using Node = typename TapeT<T>::Node;
  cfg.validate();
  strategy.validate();
  bundle.validate();

  std::vector<int> active;  // global slots
  for (int i = 0; i < bundle.size(); ++i) {
    if (bundle.active[i]) active.push_back(i);
  }
  const int n0 = static_cast<int>(active.size());
  const TensorT<T>& probe = bundle.tensors[active[0]];
  if (probe.channels() != cfg.input_channels) {
    throw ShapeError("forward: modality channel count does not match the encoder");
  }
  const int64_t divisor = cfg.spatial_divisor();
  if (probe.height() % divisor != 0 || probe.width() % divisor != 0) {
    throw ShapeError("forward: input extent must be divisible by " + std::to_string(divisor));
  }
  if (n0 > 1 && strategy.wants_drops() && strategy.drops_per_stage > n0 - 1) {
    throw ConfigError("strategy: drops_per_stage exceeds modality count minus one");
  }

  std::mt19937_64 local_rng(strategy.seed);
  std::mt19937_64* rand_src = rng ? rng : &local_rng;

  std::vector<Node*> feats;  // parallel to `active`
  feats.reserve(active.size());
  for (int slot : active) feats.push_back(tape.leaf(bundle.tensors[slot]));

  if (trace) {
    trace->stages.clear();
    trace->survivors.clear();
  }

  const int in_h = probe.height();
  const int in_w = probe.width();

  for (int s = 0; s < cfg.num_stages; ++s) {
    StageTraceT<T> st;
    st.active_before = active;

    for (auto& f : feats) f = encode_stage_on_tape(tape, pn, cfg, s, f);

    const int live = static_cast<int>(active.size());
    const int want = strategy.wants_drops() && live > 1
                         ? std::min(strategy.drops_per_stage, live - 1)
                         : 0;
    if (want > 0) {
      std::vector<int> drop_local;
      if (strategy.kind == FusionKind::random_drop) {
        std::vector<int> pool(live);
        std::iota(pool.begin(), pool.end(), 0);
        for (int d = 0; d < want; ++d) {
          const int pick = std::uniform_int_distribution<int>(0, static_cast<int>(pool.size()) - 1)(*rand_src);
          drop_local.push_back(pool[pick]);
          pool.erase(pool.begin() + pick);
        }
        std::sort(drop_local.begin(), drop_local.end());
      } else {
        std::vector<TensorT<T>> values;
        values.reserve(live);
        for (Node* f : feats) values.push_back(f->value);
        auto report = score_modalities(values, StageScoringParams<T>::from(params, s));
        auto order = rank_modalities(report);
        drop_local.assign(order.begin(), order.begin() + want);
        std::sort(drop_local.begin(), drop_local.end());
        st.score = std::move(report);
      }

      std::vector<char> is_dropped(live, 0);
      for (int d : drop_local) is_dropped[d] = 1;
      std::vector<int> survivors_local;
      for (int i = 0; i < live; ++i) {
        if (!is_dropped[i]) survivors_local.push_back(i);
      }

      std::vector<Node*> next_feats;
      if (strategy.kind == FusionKind::naive_drop) {
        for (int i : survivors_local) next_feats.push_back(feats[i]);
      } else {
        std::vector<int> donors = strategy.scope == CompensationScope::dropped
                                      ? drop_local
                                      : [&] {
                                          std::vector<int> all(live);
                                          std::iota(all.begin(), all.end(), 0);
                                          return all;
                                        }();
        next_feats = compensate_on_tape(tape, feats, survivors_local, donors,
                                        StageCompNodes<T>::from(pn, s));
      }

      std::vector<int> next_active;
      for (int i : survivors_local) next_active.push_back(active[i]);
      for (int d : drop_local) st.dropped.push_back(active[d]);
      active = std::move(next_active);
      feats = std::move(next_feats);
    }

    if (trace) trace->stages.push_back(std::move(st));
  }

  if (trace) trace->survivors = active;
  Node* fused = aggregate_on_tape(tape, feats);
  return segmentation_head_on_tape(tape, pn, fused, in_h, in_w);
}

/// Value-only forward pass.
template <typename T>
TensorT<T> forward(const ModalityBundleT<T>& bundle, const ModelParamsT<T>& params,
                   const EncoderConfig& cfg, const FusionStrategy& strategy,
                   ForwardTraceT<T>* trace = nullptr, std::mt19937_64* rng = nullptr) {
  TapeT<T> tape;
  ParamNodesT<T> pn(tape, params);
  return forward_on_tape(tape, pn, params, cfg, strategy, bundle, trace, rng)->value;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct TrainConfig {
  double base_lr = 6e-5;
  double poly_power = 0.9;
  int warmup_epochs = 10;
  double warmup_factor = 0.1;
  int epochs = 200;
  int batch_size = 2;
  AdamWConfig adamw;
  uint64_t seed = 0;
  bool hflip = false;
  int crop = 0;  // 0 disables random cropping

  void validate() const {
    // base_lr == 0 is allowed: it expresses a deliberately frozen run.
    if (base_lr < 0) throw ConfigError("train: base_lr must be non-negative");
    if (poly_power <= 0) throw ConfigError("train: poly_power must be positive");
    if (warmup_factor <= 0) throw ConfigError("train: warmup_factor must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
      throw ConfigError("train: warmup_epochs must lie in [0, epochs)");
    }
  }
};

/// Warmup holds the rate at base_lr·warmup_factor; afterwards the rate decays
/// polynomially to zero, with t counting post-warmup progress.
inline double poly_lr(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) return 0.0;
  const int64_t warm = total_steps * cfg.warmup_epochs / cfg.epochs;
  if (step < warm) return cfg.base_lr * cfg.warmup_factor;
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step - warm);
  const double span = static_cast<double>(total_steps - warm);
  return cfg.base_lr * std::pow(1.0 - t / span, cfg.poly_power);
}

/// Decoupled-weight-decay Adam over the named parameter table.
class AdamW {
public:
  void step(ModelParams& params, double lr, const AdamWConfig& cfg);

private:
  struct Slot {
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Slot> slots_;
  int64_t t_ = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Supervised training with pixel cross-entropy; deterministic under
/// config.seed. Throws NumericError naming the step when the loss leaves the
/// finite range.
TrainResult train_supervised(const Dataset& data, ModelParams& params, const EncoderConfig& cfg,
                             const FusionStrategy& strategy, const TrainConfig& tcfg);

/// Argmax prediction for one sample (ties to the lowest class id).
LabelMap predict_sample(const SampleRecord& sample, const ModelParams& params,
                        const EncoderConfig& cfg, const FusionStrategy& strategy,
                        const std::vector<char>& subset_mask = {});

/// mIoU of the model over a labeled dataset; `subset_mask` (when non-empty)
/// restricts the active modalities.
MetricsReport evaluate(const Dataset& data, const ModelParams& params, const EncoderConfig& cfg,
                       const FusionStrategy& strategy, const std::vector<char>& subset_mask = {});

struct SubsetResult {
  std::vector<char> mask;
  std::string names;  // "+"-joined modality names
  MetricsReport report;
};

/// Evaluates every given subset (each a mask over the modality slots).
std::vector<SubsetResult> evaluate_subsets(const Dataset& data, const ModelParams& params,
                                           const EncoderConfig& cfg, const FusionStrategy& strategy,
                                           const std::vector<std::vector<char>>& subsets);

}  // namespace egfuse
