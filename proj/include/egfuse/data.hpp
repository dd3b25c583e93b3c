// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "egfuse/labels.hpp"
#include "egfuse/tensor.hpp"

namespace egfuse {

/// A set of parallel modality tensors entering one forward pass. Inactive
/// entries keep their slot (names stay aligned) but are excluded from
/// encoding and fusion.
template <typename T>
struct ModalityBundleT {
  std::vector<std::string> names;
  std::vector<TensorT<T>> tensors;
  std::vector<char> active;  // 1 = participates in the forward pass

  int size() const { return static_cast<int>(tensors.size()); }

  int active_count() const {
    int n = 0;
    for (char a : active) n += (a != 0);
    return n;
  }

  void validate() const {
    if (tensors.empty()) throw ConfigError("bundle: no modalities");
    if (names.size() != tensors.size() || active.size() != tensors.size()) {
      throw ConfigError("bundle: names/tensors/active lengths differ");
    }
    const TensorT<T>* first = nullptr;
    for (int i = 0; i < size(); ++i) {
      if (!active[i]) continue;
      if (!first) {
        first = &tensors[i];
      } else if (!tensors[i].same_shape(*first)) {
        throw ShapeError("bundle: active modality shapes differ");
      }
    }
    if (!first) throw ConfigError("bundle: no active modalities");
  }
};

using ModalityBundle = ModalityBundleT<float>;

/// One dataset element: per-modality images plus the ground-truth map.
struct SampleRecord {
  std::vector<std::string> modality_names;
  std::vector<Tensor> modalities;  // each [1, 3, H, W]
  LabelMap label;
};

using Dataset = std::vector<SampleRecord>;

inline int find_modality(const std::vector<std::string>& names, const std::string& want) {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == want) return static_cast<int>(i);
  }
  return -1;
}

/// Builds a single-sample bundle; `mask` (when non-empty) selects the active
/// subset by modality position.
inline ModalityBundle make_bundle(const SampleRecord& sample,
                                  const std::vector<char>& mask = {}) {
  if (!mask.empty() && mask.size() != sample.modalities.size()) {
    throw ConfigError("make_bundle: subset mask length mismatch");
  }
  ModalityBundle b;
  b.names = sample.modality_names;
  b.tensors = sample.modalities;
  b.active.assign(sample.modalities.size(), 1);
  if (!mask.empty()) b.active = mask;
  b.validate();
  return b;
}

inline Tensor hflip(const Tensor& t) {
  Tensor out = Tensor::zeros_like(t);
  for (int b = 0; b < t.batch(); ++b)
    for (int c = 0; c < t.channels(); ++c)
      for (int h = 0; h < t.height(); ++h)
        for (int w = 0; w < t.width(); ++w)
          out.at(b, c, h, w) = t.at(b, c, h, t.width() - 1 - w);
  return out;
}

inline LabelMap hflip(const LabelMap& m) {
  LabelMap out = m;
  for (int h = 0; h < m.height; ++h)
    for (int w = 0; w < m.width; ++w) out.at(h, w) = m.ids[h * m.width + (m.width - 1 - w)];
  return out;
}

inline Tensor crop(const Tensor& t, int top, int left, int ch, int cw) {
  if (top < 0 || left < 0 || top + ch > t.height() || left + cw > t.width()) {
    throw ShapeError("crop: window exceeds tensor extent");
  }
  Tensor out(t.batch(), t.channels(), ch, cw);
  for (int b = 0; b < t.batch(); ++b)
    for (int c = 0; c < t.channels(); ++c)
      for (int h = 0; h < ch; ++h)
        for (int w = 0; w < cw; ++w) out.at(b, c, h, w) = t.at(b, c, top + h, left + w);
  return out;
}

inline LabelMap crop(const LabelMap& m, int top, int left, int ch, int cw) {
  if (top < 0 || left < 0 || top + ch > m.height || left + cw > m.width) {
    throw ShapeError("crop: window exceeds label extent");
  }
  LabelMap out;
  out.height = ch;
  out.width = cw;
  out.ids.resize(static_cast<size_t>(ch) * cw);
  for (int h = 0; h < ch; ++h)
    for (int w = 0; w < cw; ++w) out.at(h, w) = m.ids[(top + h) * m.width + (left + w)];
  return out;
}

/// Applies the same flip/crop decision to every modality and the label so the
/// pixel correspondence is never broken.
inline SampleRecord augment_sample(const SampleRecord& sample, bool do_flip, int crop_size,
                                   std::mt19937_64& rng) {
  SampleRecord out = sample;
  if (do_flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
    for (auto& t : out.modalities) t = hflip(t);
    out.label = hflip(out.label);
  }
  if (crop_size > 0 && !out.modalities.empty() && crop_size < out.modalities[0].height()) {
    const int maxtop = out.modalities[0].height() - crop_size;
    const int maxleft = out.modalities[0].width() - crop_size;
    const int top = std::uniform_int_distribution<int>(0, maxtop)(rng);
    const int left = std::uniform_int_distribution<int>(0, maxleft)(rng);
    for (auto& t : out.modalities) t = crop(t, top, left, crop_size, crop_size);
    out.label = crop(out.label, top, left, crop_size, crop_size);
  }
  return out;
}

/// Stacks single-sample records into one batched bundle plus a label batch.
/// All samples must share modality layout and spatial extent.
inline void assemble_batch(const Dataset& data, const std::vector<int>& indices,
                           ModalityBundle* bundle, LabelBatch* labels) {
  if (indices.empty()) throw ConfigError("assemble_batch: empty index list");
  const SampleRecord& first = data.at(indices[0]);
  const int m = static_cast<int>(first.modalities.size());
  const int bsz = static_cast<int>(indices.size());

  bundle->names = first.modality_names;
  bundle->active.assign(m, 1);
  bundle->tensors.clear();
  for (int k = 0; k < m; ++k) {
    const Tensor& proto = first.modalities[k];
    Tensor stacked(bsz, proto.channels(), proto.height(), proto.width());
    for (int bi = 0; bi < bsz; ++bi) {
      const SampleRecord& s = data.at(indices[bi]);
      if (s.modalities.size() != static_cast<size_t>(m) || !s.modalities[k].same_shape(proto)) {
        throw ShapeError("assemble_batch: inconsistent sample shapes");
      }
      const Tensor& src = s.modalities[k];
      std::copy(src.raw().begin(), src.raw().end(),
                stacked.raw().begin() + static_cast<int64_t>(bi) * src.size());
    }
    bundle->tensors.push_back(std::move(stacked));
  }

  labels->clear();
  for (int idx : indices) labels->push_back(data.at(idx).label);
}

}  // namespace egfuse
