// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egfuse/errors.hpp"

namespace egfuse {

inline constexpr int kIgnoreLabel = 255;

/// Per-pixel class assignment [H, W]; 255 marks ignored pixels.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, uint8_t fill = 0) : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int h, int w) { return ids[static_cast<size_t>(h) * width + w]; }
  uint8_t at(int h, int w) const { return ids[static_cast<size_t>(h) * width + w]; }

  int64_t size() const { return static_cast<int64_t>(ids.size()); }

  bool operator==(const LabelMap& other) const {
    return height == other.height && width == other.width && ids == other.ids;
  }

  void check_class_range(int num_classes) const {
    for (uint8_t v : ids) {
      if (v != kIgnoreLabel && v >= num_classes) {
        throw DataError("label map contains class id " + std::to_string(int(v)) +
                        " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
};

using LabelBatch = std::vector<LabelMap>;

}  // namespace egfuse
