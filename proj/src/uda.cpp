// SPDX-License-Identifier: Apache-2.0
#include "egfuse/uda.hpp"

#include <cmath>

#include "egfuse/ops.hpp"

namespace egfuse {

AdaptResult adapt(const ModelParams& teacher, ModelParams& student, const Dataset& target,
                  const EncoderConfig& cfg, const FusionStrategy& strategy,
                  const AdaptConfig& acfg, bool evaluate_each_epoch) {
  cfg.validate();
  strategy.validate();
  if (target.empty()) throw ConfigError("adapt: empty target dataset");
  const int m = static_cast<int>(target[0].modalities.size());
  acfg.validate(m);

  const TrainConfig& tcfg = acfg.train;
  std::mt19937_64 rng(tcfg.seed);
  const int n = static_cast<int>(target.size());
  const int bs = std::min(tcfg.batch_size, n);
  const int64_t steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = steps_per_epoch * tcfg.epochs;

  AdamW opt;
  AdaptResult result;
  std::vector<LabelMap> pseudo(n);
  std::vector<double> coverage(n, 0.0);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  int64_t step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    if (epoch % acfg.refresh_interval == 0) {
      double total_cov = 0.0;
      for (int i = 0; i < n; ++i) {
        PseudoResult pr = generate_pseudo_labels(teacher, cfg, strategy, target[i], acfg.pseudo);
        pseudo[i] = std::move(pr.map);
        coverage[i] = pr.coverage;
        total_cov += pr.coverage;
      }
      if (total_cov == 0.0) {
        throw CoverageError("adapt: pseudo-labels cover zero pixels; threshold too strict");
      }
    }

    std::shuffle(perm.begin(), perm.end(), rng);
    double sum_adapt = 0.0, sum_kl = 0.0;
    int64_t batches = 0;

    for (int start = 0; start < n; start += bs) {
      const int stop = std::min(start + bs, n);
      std::vector<int> indices(perm.begin() + start, perm.begin() + stop);

      ModalityBundle bundle;
      LabelBatch truth_unused;
      assemble_batch(target, indices, &bundle, &truth_unused);
      LabelBatch labels;
      for (int idx : indices) labels.push_back(pseudo[idx]);

      Tape tape;
      ParamNodesT<float> pn(tape, student);
      Tape::Node* l_total = nullptr;
      int64_t omega = 0;
      double va = 0.0, vk = 0.0;
      try {
        Tensor teacher_probs = softmax_channel(forward(bundle, teacher, cfg, strategy));
        auto* logits =
            forward_on_tape<float>(tape, pn, student, cfg, strategy, bundle, nullptr, &rng);
        auto* probs = tape.softmax_channel(logits);
        auto* l_adapt = tape.masked_nll(probs, labels, &omega);
        auto* l_kl = tape.masked_kl(teacher_probs, probs, labels);
        l_total = tape.add(l_adapt, l_kl);
        va = l_adapt->value.at(0, 0, 0, 0);
        vk = l_kl->value.at(0, 0, 0, 0);
        if (!std::isfinite(va) || !std::isfinite(vk)) throw NumericError("non-finite loss");
      } catch (const NumericError& e) {
        throw NumericError("adapt step " + std::to_string(step) + ": " + e.what());
      }
      if (omega > 0) {
        tape.backward(l_total);
        student.zero_grads();
        pn.harvest(student);
        opt.step(student, poly_lr(step, total_steps, tcfg), tcfg.adamw);
      }
      sum_adapt += va;
      sum_kl += vk;
      ++batches;
      ++step;
    }

    const double mean_adapt = sum_adapt / static_cast<double>(batches);
    const double mean_kl = sum_kl / static_cast<double>(batches);
    result.epoch_loss_adapt.push_back(mean_adapt);
    result.epoch_loss_kl.push_back(mean_kl);
    result.epoch_loss_total.push_back(mean_adapt + mean_kl);
    double cov = 0.0;
    for (double c : coverage) cov += c;
    result.epoch_coverage.push_back(cov / n);
    if (evaluate_each_epoch) {
      result.epoch_target_miou.push_back(evaluate(target, student, cfg, strategy).miou);
    }
  }
  return result;
}

}  // namespace egfuse
