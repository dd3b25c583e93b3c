// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "egfuse/model.hpp"
#include "egfuse/ops.hpp"

namespace egfuse {

/// Per-modality reliability scores for one stage.
/// per_sample[b][k] is the score of modality k on batch element b.
template <typename T>
struct ScoreReportT {
  std::vector<std::vector<T>> per_sample;
  std::vector<T> batch_mean;
  int drop_index = -1;
};

using ScoreReport = ScoreReportT<float>;

template <typename T>
struct StageScoringParams {
  const TensorT<T>* p1_w;
  const TensorT<T>* p1_b;
  const TensorT<T>* p2_w;
  const TensorT<T>* p2_b;
  const TensorT<T>* out_w;
  const TensorT<T>* out_b;

  static StageScoringParams from(const ModelParamsT<T>& params, int stage) {
    return StageScoringParams{
        &params.at(keys::stage("score", stage, "p1.w")).value,
        &params.at(keys::stage("score", stage, "p1.b")).value,
        &params.at(keys::stage("score", stage, "p2.w")).value,
        &params.at(keys::stage("score", stage, "p2.b")).value,
        &params.at(keys::stage("score", stage, "out.w")).value,
        &params.at(keys::stage("score", stage, "out.b")).value,
    };
  }
};

/// Scores every modality branch: pool to a channel descriptor, project it
/// through the two-layer bottleneck, squash the resulting logit. Scoring is a
/// selection signal only, so it runs off the gradient tape.
template <typename T>
ScoreReportT<T> score_modalities(const std::vector<TensorT<T>>& features,
                                 const StageScoringParams<T>& sp) {
  if (features.empty()) throw ConfigError("score_modalities: no input features");
  const int n = static_cast<int>(features.size());
  const int b = features[0].batch();
  for (const auto& f : features) {
    if (!f.same_shape(features[0])) throw ShapeError("score_modalities: feature shapes differ");
  }
  if (features[0].channels() != sp.p1_w->channels()) {
    throw ShapeError("score_modalities: feature channels do not match the projection");
  }

  ScoreReportT<T> report;
  report.per_sample.assign(b, std::vector<T>(n, T{0}));
  report.batch_mean.assign(n, T{0});

  const ConvSpec pw{1, 0, 1};
  for (int k = 0; k < n; ++k) {
    TensorT<T> pooled = global_avg_pool(features[k]);
    TensorT<T> h = relu(conv2d(pooled, *sp.p1_w, *sp.p1_b, pw));
    h = conv2d(h, *sp.p2_w, *sp.p2_b, pw);
    TensorT<T> logit = conv2d(h, *sp.out_w, *sp.out_b, pw);
    TensorT<T> s = sigmoid(logit);
    for (int bi = 0; bi < b; ++bi) {
      T v = s.at(bi, 0, 0, 0);
      // Keep the score strictly inside (0,1) even when the logit saturates
      // the working precision.
      v = std::min(v, T{1} - std::numeric_limits<T>::epsilon());
      v = std::max(v, std::numeric_limits<T>::min());
      report.per_sample[bi][k] = v;
      report.batch_mean[k] += v / static_cast<T>(b);
    }
  }

  report.drop_index = 0;
  for (int k = 1; k < n; ++k) {
    if (report.batch_mean[k] < report.batch_mean[report.drop_index]) report.drop_index = k;
  }
  return report;
}

/// Modality indices ordered from least to most reliable; ties keep the lower
/// index first.
template <typename T>
std::vector<int> rank_modalities(const ScoreReportT<T>& report) {
  std::vector<int> order(report.batch_mean.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return report.batch_mean[a] < report.batch_mean[b]; });
  return order;
}

}  // namespace egfuse
