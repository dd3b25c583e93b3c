// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egfuse/data.hpp"

namespace egfuse {

enum class Domain { source, target };

/// Procedural scene generator: random rectangles and discs on a background,
/// rendered into complementary modalities. Modality k draws the classes
/// assigned to it brightly and every other object at a shared mid tone, so no
/// single stream separates all classes.
struct SceneSpec {
  int height = 32;
  int width = 32;
  int num_classes = 4;      // class 0 is background
  int num_modalities = 4;
  int shapes_min = 3;
  int shapes_max = 5;
  int shape_min_size = 6;
  int shape_max_size = 14;
  double noise_sigma = 0.02;
  // Target-domain shift, one entry per modality (broadcast when length 1).
  std::vector<double> target_gain = {0.88, 1.13, 0.87, 1.11};
  std::vector<double> target_bias = {0.07, -0.05, 0.07, -0.05};
  std::vector<double> target_noise = {0.045, 0.045, 0.045, 0.045};
  uint64_t seed = 0;

  void validate() const;
  double shift_gain(int modality) const;
  double shift_bias(int modality) const;
  double shift_noise(int modality) const;
};

std::vector<std::string> default_modality_names(int num_modalities);

/// Deterministic dataset: sample i depends only on (spec.seed, domain, i).
Dataset generate(const SceneSpec& spec, int count, Domain domain);

enum class DegradeMode { missing, noise, blackout };

/// Simulates sensor failure on one modality. `missing` removes the branch,
/// `noise` adds seeded Gaussian perturbation of the given sigma, `blackout`
/// zeroes the tensor. The label map is never touched.
SampleRecord degrade(const SampleRecord& sample, const std::string& modality, DegradeMode mode,
                     double sigma = 0.0, uint64_t seed = 0);

}  // namespace egfuse
