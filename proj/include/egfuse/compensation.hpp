// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "egfuse/model.hpp"
#include "egfuse/ops.hpp"
#include "egfuse/tape.hpp"

namespace egfuse {

template <typename T>
struct StageCompParams {
  const TensorT<T>* ca1_w;
  const TensorT<T>* ca1_b;
  const TensorT<T>* ca2_w;
  const TensorT<T>* ca2_b;
  const TensorT<T>* sa_w;
  const TensorT<T>* sa_b;

  static StageCompParams from(const ModelParamsT<T>& params, int stage) {
    return StageCompParams{
        &params.at(keys::stage("comp", stage, "ca1.w")).value,
        &params.at(keys::stage("comp", stage, "ca1.b")).value,
        &params.at(keys::stage("comp", stage, "ca2.w")).value,
        &params.at(keys::stage("comp", stage, "ca2.b")).value,
        &params.at(keys::stage("comp", stage, "sa.w")).value,
        &params.at(keys::stage("comp", stage, "sa.b")).value,
    };
  }
};

/// Per-channel gate of a donor feature: pool, bottleneck projection, sigmoid.
/// Output shape [B, C, 1, 1].
template <typename T>
TensorT<T> channel_weights(const TensorT<T>& f, const StageCompParams<T>& cp) {
  if (f.channels() != cp.ca1_w->channels()) {
    throw ShapeError("channel_weights: feature channels do not match the projection");
  }
  const ConvSpec pw{1, 0, 1};
  TensorT<T> h = relu(conv2d(global_avg_pool(f), *cp.ca1_w, *cp.ca1_b, pw));
  return sigmoid(conv2d(h, *cp.ca2_w, *cp.ca2_b, pw));
}

/// Per-pixel gate of a donor feature: channel mean/max squeeze, 3x3 conv,
/// sigmoid. Output shape [B, 1, H, W].
template <typename T>
TensorT<T> spatial_weights(const TensorT<T>& f, const StageCompParams<T>& cp) {
  if (cp.sa_w->channels() != 2) throw ShapeError("spatial_weights: squeeze conv must take 2 channels");
  TensorT<T> squeeze = concat_channel(channel_mean(f), channel_max(f));
  return sigmoid(conv2d(squeeze, *cp.sa_w, *cp.sa_b, ConvSpec{1, 1, 1}));
}

template <typename T>
struct FusionOutcomeT {
  std::vector<TensorT<T>> surviving;
  std::vector<int> surviving_indices;
  std::vector<int> dropped_indices;
};

using FusionOutcome = FusionOutcomeT<float>;

/// Applies the compensation rule with externally supplied gates (one pair per
/// entry of drop_set): f̂_i = f_i + 0.5·Σ_j Wc_j⊙f_j + 0.5·Σ_j Ws_j⊙f_j.
template <typename T>
FusionOutcomeT<T> compensate_with_gates(const std::vector<TensorT<T>>& features,
                                        const std::vector<int>& drop_set,
                                        const std::vector<TensorT<T>>& wc,
                                        const std::vector<TensorT<T>>& ws) {
  const int n = static_cast<int>(features.size());
  if (drop_set.empty()) throw ConfigError("compensate: empty drop set");
  if (static_cast<int>(drop_set.size()) >= n) {
    throw ConfigError("compensate: dropping every modality leaves no survivor");
  }
  if (wc.size() != drop_set.size() || ws.size() != drop_set.size()) {
    throw ShapeError("compensate: gate count does not match drop set");
  }
  std::vector<char> dropped(n, 0);
  for (int j : drop_set) {
    if (j < 0 || j >= n) throw ConfigError("compensate: drop index out of range");
    if (dropped[j]) throw ConfigError("compensate: duplicate drop index");
    dropped[j] = 1;
  }
  for (const auto& f : features) {
    if (!f.same_shape(features[0])) throw ShapeError("compensate: feature shapes differ");
  }

  TensorT<T> sum_c = TensorT<T>::zeros_like(features[0]);
  TensorT<T> sum_s = TensorT<T>::zeros_like(features[0]);
  for (size_t di = 0; di < drop_set.size(); ++di) {
    const TensorT<T>& fj = features[drop_set[di]];
    sum_c = add(sum_c, mul(wc[di], fj));
    sum_s = add(sum_s, mul(ws[di], fj));
  }
  TensorT<T> bonus = add(scale(sum_c, T{0.5}), scale(sum_s, T{0.5}));

  FusionOutcomeT<T> out;
  for (int i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    out.surviving.push_back(add(features[i], bonus));
    out.surviving_indices.push_back(i);
  }
  out.dropped_indices = drop_set;
  std::sort(out.dropped_indices.begin(), out.dropped_indices.end());
  return out;
}

/// Drops the listed modalities and redistributes their gated content into
/// every survivor.
template <typename T>
FusionOutcomeT<T> compensate(const std::vector<TensorT<T>>& features,
                             const std::vector<int>& drop_set, const StageCompParams<T>& cp) {
  std::vector<TensorT<T>> wc, ws;
  wc.reserve(drop_set.size());
  ws.reserve(drop_set.size());
  for (int j : drop_set) {
    if (j < 0 || j >= static_cast<int>(features.size())) {
      throw ConfigError("compensate: drop index out of range");
    }
    wc.push_back(channel_weights(features[j], cp));
    ws.push_back(spatial_weights(features[j], cp));
  }
  return compensate_with_gates(features, drop_set, wc, ws);
}

/// Element-wise mean of the surviving features.
template <typename T>
TensorT<T> aggregate(const std::vector<TensorT<T>>& survivors) {
  if (survivors.empty()) throw ConfigError("aggregate: empty survivor set");
  TensorT<T> acc = survivors[0];
  for (size_t i = 1; i < survivors.size(); ++i) acc = add(acc, survivors[i]);
  return scale(acc, T{1} / static_cast<T>(survivors.size()));
}

template <typename T>
TensorT<T> aggregate(const FusionOutcomeT<T>& outcome) {
  return aggregate(outcome.surviving);
}

// --- tape-side counterparts used by the training pipeline ---

template <typename T>
struct StageCompNodes {
  typename TapeT<T>::Node* ca1_w;
  typename TapeT<T>::Node* ca1_b;
  typename TapeT<T>::Node* ca2_w;
  typename TapeT<T>::Node* ca2_b;
  typename TapeT<T>::Node* sa_w;
  typename TapeT<T>::Node* sa_b;

  static StageCompNodes from(const ParamNodesT<T>& pn, int stage) {
    return StageCompNodes{
        pn.at(keys::stage("comp", stage, "ca1.w")), pn.at(keys::stage("comp", stage, "ca1.b")),
        pn.at(keys::stage("comp", stage, "ca2.w")), pn.at(keys::stage("comp", stage, "ca2.b")),
        pn.at(keys::stage("comp", stage, "sa.w")),  pn.at(keys::stage("comp", stage, "sa.b")),
    };
  }
};

template <typename T>
typename TapeT<T>::Node* channel_weights_on_tape(TapeT<T>& tape, typename TapeT<T>::Node* f,
                                                 const StageCompNodes<T>& cn) {
  const ConvSpec pw{1, 0, 1};
  auto* h = tape.relu(tape.conv2d(tape.global_avg_pool(f), cn.ca1_w, cn.ca1_b, pw));
  return tape.sigmoid(tape.conv2d(h, cn.ca2_w, cn.ca2_b, pw));
}

template <typename T>
typename TapeT<T>::Node* spatial_weights_on_tape(TapeT<T>& tape, typename TapeT<T>::Node* f,
                                                 const StageCompNodes<T>& cn) {
  auto* squeeze = tape.concat_channel(tape.channel_mean(f), tape.channel_max(f));
  return tape.sigmoid(tape.conv2d(squeeze, cn.sa_w, cn.sa_b, ConvSpec{1, 1, 1}));
}

/// On-tape compensation over node handles. `donors` selects which features
/// feed the gated sums; each survivor receives the sum of donor terms,
/// excluding its own term when it happens to be a donor.
template <typename T>
std::vector<typename TapeT<T>::Node*> compensate_on_tape(
    TapeT<T>& tape, const std::vector<typename TapeT<T>::Node*>& features,
    const std::vector<int>& survivors, const std::vector<int>& donors,
    const StageCompNodes<T>& cn) {
  using Node = typename TapeT<T>::Node;
  struct Term {
    int donor;
    Node* c;
    Node* s;
  };
  std::vector<Term> terms;
  terms.reserve(donors.size());
  for (int j : donors) {
    Node* wc = channel_weights_on_tape(tape, features[j], cn);
    Node* ws = spatial_weights_on_tape(tape, features[j], cn);
    terms.push_back(Term{j, tape.mul(wc, features[j]), tape.mul(ws, features[j])});
  }

  std::vector<Node*> out;
  out.reserve(survivors.size());
  for (int i : survivors) {
    Node* sum_c = nullptr;
    Node* sum_s = nullptr;
    for (const Term& t : terms) {
      if (t.donor == i) continue;
      sum_c = sum_c ? tape.add(sum_c, t.c) : t.c;
      sum_s = sum_s ? tape.add(sum_s, t.s) : t.s;
    }
    Node* fi = features[i];
    if (sum_c) fi = tape.add(fi, tape.scale(sum_c, T{0.5}));
    if (sum_s) fi = tape.add(fi, tape.scale(sum_s, T{0.5}));
    out.push_back(fi);
  }
  return out;
}

template <typename T>
typename TapeT<T>::Node* aggregate_on_tape(TapeT<T>& tape,
                                           const std::vector<typename TapeT<T>::Node*>& survivors) {
  if (survivors.empty()) throw ConfigError("aggregate: empty survivor set");
  auto* acc = survivors[0];
  for (size_t i = 1; i < survivors.size(); ++i) acc = tape.add(acc, survivors[i]);
  return tape.scale(acc, T{1} / static_cast<T>(survivors.size()));
}

}  // namespace egfuse
