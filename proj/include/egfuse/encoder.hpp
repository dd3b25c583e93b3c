// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "egfuse/model.hpp"
#include "egfuse/ops.hpp"
#include "egfuse/tape.hpp"

namespace egfuse {

/// One encoder stage: strided 3x3 conv, relu, 3x3 conv, relu. The weights are
/// shared across modality branches, so the same nodes are reused for every
/// input passed through the stage.
template <typename T>
typename TapeT<T>::Node* encode_stage_on_tape(TapeT<T>& tape, const ParamNodesT<T>& pn,
                                              const EncoderConfig& cfg, int stage,
                                              typename TapeT<T>::Node* x) {
  if (stage < 0 || stage >= cfg.num_stages) throw ConfigError("encoder: stage index out of range");
  auto* h = tape.conv2d(x, pn.at(keys::stage("enc", stage, "conv1.w")),
                        pn.at(keys::stage("enc", stage, "conv1.b")),
                        ConvSpec{cfg.stage_stride, 1, 1});
  h = tape.relu(h);
  h = tape.conv2d(h, pn.at(keys::stage("enc", stage, "conv2.w")),
                  pn.at(keys::stage("enc", stage, "conv2.b")), ConvSpec{1, 1, 1});
  return tape.relu(h);
}

/// Runs one stage over a set of parallel modality features. All inputs must
/// agree in shape; channel count must match the stage's expected input width.
template <typename T>
std::vector<TensorT<T>> encode_stage(int stage, const std::vector<TensorT<T>>& features,
                                     const ModelParamsT<T>& params, const EncoderConfig& cfg) {
  cfg.validate();
  if (features.empty()) throw ConfigError("encode_stage: no input features");
  const int want_c = cfg.stage_input_channels(stage);
  for (size_t i = 0; i < features.size(); ++i) {
    if (!features[i].same_shape(features[0])) {
      throw ShapeError("encode_stage: modality feature shapes differ");
    }
    if (features[i].channels() != want_c) {
      throw ShapeError("encode_stage: expected " + std::to_string(want_c) + " input channels, got " +
                       std::to_string(features[i].channels()));
    }
  }
  TapeT<T> tape;
  ParamNodesT<T> pn(tape, params);
  std::vector<TensorT<T>> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    out.push_back(encode_stage_on_tape(tape, pn, cfg, stage, tape.leaf(f))->value);
  }
  return out;
}

/// 1x1 classifier conv followed by bilinear upsampling back to (th, tw).
template <typename T>
typename TapeT<T>::Node* segmentation_head_on_tape(TapeT<T>& tape, const ParamNodesT<T>& pn,
                                                   typename TapeT<T>::Node* fused, int th, int tw) {
  auto* logits = tape.conv2d(fused, pn.at("head.w"), pn.at("head.b"), ConvSpec{1, 0, 1});
  const int fh = logits->value.height();
  const int fw = logits->value.width();
  if (fh < 1 || fw < 1) throw ShapeError("segmentation_head: empty fused map");
  if (th % fh != 0 || tw % fw != 0 || th / fh != tw / fw) {
    throw ShapeError("segmentation_head: target extent is not an integer multiple of the fused map");
  }
  return tape.bilinear_upsample(logits, th / fh);
}

template <typename T>
TensorT<T> segmentation_head(const TensorT<T>& fused, const ModelParamsT<T>& params,
                             const EncoderConfig& cfg, int th, int tw) {
  cfg.validate();
  if (fused.channels() != cfg.channels_per_stage.back()) {
    throw ShapeError("segmentation_head: fused channel count does not match the last stage");
  }
  TapeT<T> tape;
  ParamNodesT<T> pn(tape, params);
  return segmentation_head_on_tape(tape, pn, tape.leaf(fused), th, tw)->value;
}

}  // namespace egfuse
