// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "egfuse/data.hpp"
#include "egfuse/labels.hpp"
#include "egfuse/model.hpp"
#include "egfuse/tensor.hpp"

namespace egfuse {

// Binary interchange formats, all little-endian, all written atomically
// (temp file + rename):
//   EGT0  tensor      magic, u32 rank (=4), 4xu32 dims, f32 payload
//   EGL0  label map   magic, u32 height, u32 width, u8 payload
//   EGC0  checkpoint  magic, u32 array count, then per array:
//                     u16 name length, name bytes, u32 rank (=4), 4xu32 dims,
//                     f32 payload

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

void write_label_file(const std::string& path, const LabelMap& m);
LabelMap read_label_file(const std::string& path);

void write_checkpoint(const std::string& path, const ModelParams& params);
ModelParams read_checkpoint(const std::string& path);

/// Dataset layout: <dir>/modalities.txt (one name per line) and one
/// directory per sample holding <modality>.egt files plus label.egl.
void write_dataset(const std::string& dir, const Dataset& data);
Dataset read_dataset(const std::string& dir);

/// Atomically replaces `path` with `content`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace egfuse
