// SPDX-License-Identifier: Apache-2.0
#include "egfuse/pipeline.hpp"

#include <cmath>

namespace egfuse {

std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::score_drop: return "score_drop";
    case FusionKind::random_drop: return "random_drop";
    case FusionKind::naive_drop: return "naive_drop";
    case FusionKind::average_fusion: return "average_fusion";
  }
  throw ConfigError("unknown fusion kind");
}

FusionKind fusion_kind_from_string(const std::string& s) {
  if (s == "score_drop") return FusionKind::score_drop;
  if (s == "random_drop") return FusionKind::random_drop;
  if (s == "naive_drop") return FusionKind::naive_drop;
  if (s == "average_fusion") return FusionKind::average_fusion;
  throw ConfigError("unknown fusion kind: " + s);
}

void AdamW::step(ModelParams& params, double lr, const AdamWConfig& cfg) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params.table()) {
    Slot& slot = slots_[name];
    if (slot.m.empty()) {
      slot.m = Tensor::zeros_like(p.value);
      slot.v = Tensor::zeros_like(p.value);
    }
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data()[i];
      const double m = cfg.beta1 * slot.m.data()[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * slot.v.data()[i] + (1.0 - cfg.beta2) * g * g;
      slot.m.data()[i] = static_cast<float>(m);
      slot.v.data()[i] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      const double value = p.value.data()[i];
      p.value.data()[i] = static_cast<float>(value - lr * (update + cfg.weight_decay * value));
    }
  }
}

TrainResult train_supervised(const Dataset& data, ModelParams& params, const EncoderConfig& cfg,
                             const FusionStrategy& strategy, const TrainConfig& tcfg) {
  cfg.validate();
  strategy.validate();
  tcfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");

  std::mt19937_64 rng(tcfg.seed);
  const int n = static_cast<int>(data.size());
  const int bs = std::min(tcfg.batch_size, n);
  const int64_t steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = steps_per_epoch * tcfg.epochs;

  AdamW opt;
  TrainResult result;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  int64_t step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double loss_sum = 0.0;
    int64_t batches = 0;

    for (int start = 0; start < n; start += bs) {
      const int stop = std::min(start + bs, n);
      Dataset slice;
      std::vector<int> indices;
      for (int i = start; i < stop; ++i) {
        slice.push_back(tcfg.hflip || tcfg.crop > 0
                            ? augment_sample(data[perm[i]], tcfg.hflip, tcfg.crop, rng)
                            : data[perm[i]]);
        indices.push_back(static_cast<int>(indices.size()));
      }
      ModalityBundle bundle;
      LabelBatch labels;
      assemble_batch(slice, indices, &bundle, &labels);

      Tape tape;
      ParamNodesT<float> pn(tape, params);
      Tape::Node* loss = nullptr;
      int64_t omega = 0;
      double value = 0.0;
      try {
        auto* logits =
            forward_on_tape<float>(tape, pn, params, cfg, strategy, bundle, nullptr, &rng);
        auto* probs = tape.softmax_channel(logits);
        loss = tape.masked_nll(probs, labels, &omega);
        value = loss->value.at(0, 0, 0, 0);
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
      } catch (const NumericError& e) {
        throw NumericError("train step " + std::to_string(step) + ": " + e.what());
      }
      if (omega > 0) {
        tape.backward(loss);
        params.zero_grads();
        pn.harvest(params);
        opt.step(params, poly_lr(step, total_steps, tcfg), tcfg.adamw);
      }
      loss_sum += value;
      ++batches;
      ++step;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

LabelMap predict_sample(const SampleRecord& sample, const ModelParams& params,
                        const EncoderConfig& cfg, const FusionStrategy& strategy,
                        const std::vector<char>& subset_mask) {
  ModalityBundle bundle = make_bundle(sample, subset_mask);
  Tensor logits = forward(bundle, params, cfg, strategy);
  LabelMap pred(logits.height(), logits.width());
  for (int h = 0; h < logits.height(); ++h) {
    for (int w = 0; w < logits.width(); ++w) {
      int best = 0;
      float best_v = logits.at(0, 0, h, w);
      for (int c = 1; c < logits.channels(); ++c) {
        const float v = logits.at(0, c, h, w);
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      pred.at(h, w) = static_cast<uint8_t>(best);
    }
  }
  return pred;
}

MetricsReport evaluate(const Dataset& data, const ModelParams& params, const EncoderConfig& cfg,
                       const FusionStrategy& strategy, const std::vector<char>& subset_mask) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  LabelBatch preds, truths;
  preds.reserve(data.size());
  truths.reserve(data.size());
  for (const auto& sample : data) {
    preds.push_back(predict_sample(sample, params, cfg, strategy, subset_mask));
    truths.push_back(sample.label);
  }
  return compute_miou(preds, truths, cfg.num_classes);
}

std::vector<SubsetResult> evaluate_subsets(const Dataset& data, const ModelParams& params,
                                           const EncoderConfig& cfg, const FusionStrategy& strategy,
                                           const std::vector<std::vector<char>>& subsets) {
  if (data.empty()) throw ConfigError("evaluate_subsets: empty dataset");
  const auto& names = data[0].modality_names;
  std::vector<SubsetResult> out;
  for (const auto& mask : subsets) {
    if (mask.size() != names.size()) throw ConfigError("evaluate_subsets: mask length mismatch");
    SubsetResult r;
    r.mask = mask;
    for (size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      if (!r.names.empty()) r.names += "+";
      r.names += names[i];
    }
    r.report = evaluate(data, params, cfg, strategy, mask);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace egfuse
