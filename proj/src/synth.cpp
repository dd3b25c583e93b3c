// SPDX-License-Identifier: Apache-2.0
#include "egfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace egfuse {

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t domain_tag, uint64_t index) {
  // splitmix64 over the combined identity; stable across platforms.
  uint64_t z = seed ^ (domain_tag * 0x9e3779b97f4a7c15ull) ^ (index + 0x7f4a7c159e3779b9ull);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Shape {
  bool disc = false;
  int cls = 1;
  int cy = 0, cx = 0;   // center
  int sy = 0, sx = 0;   // half extents (disc uses sy as radius)
};

void paint(LabelMap& label, const Shape& s) {
  for (int h = 0; h < label.height; ++h) {
    for (int w = 0; w < label.width; ++w) {
      bool inside;
      if (s.disc) {
        const int dy = h - s.cy, dx = w - s.cx;
        inside = dy * dy + dx * dx <= s.sy * s.sy;
      } else {
        inside = std::abs(h - s.cy) <= s.sy && std::abs(w - s.cx) <= s.sx;
      }
      if (inside) label.at(h, w) = static_cast<uint8_t>(s.cls);
    }
  }
}

/// Per-modality foreground tones. Classes assigned to a modality render
/// bright (0.95). Among the remaining classes each modality designates one
/// "confusion pair" sharing a single mid tone — so no modality alone can
/// separate every class — while the rest sit at a low tone. Across
/// modalities the tone multisets stay distinct per class, so the fused view
/// can separate everything a single stream cannot.
std::vector<std::vector<double>> tone_table(int num_modalities, int num_classes) {
  std::vector<std::vector<double>> tone(num_modalities, std::vector<double>(num_classes, 0.05));
  for (int mk = 0; mk < num_modalities; ++mk) {
    std::vector<int> others;
    for (int c = 1; c < num_classes; ++c) {
      if ((c - 1) % num_modalities == mk) {
        tone[mk][c] = 0.95;
      } else {
        tone[mk][c] = 0.30;
        others.push_back(c);
      }
    }
    if (!others.empty()) {
      const double pair_tone = 0.40 + 0.15 * (mk % 3);
      const int n = static_cast<int>(others.size());
      tone[mk][others[mk % n]] = pair_tone;
      tone[mk][others[(mk + 1) % n]] = pair_tone;
    }
  }
  return tone;
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("scene: grid too small");
  if (num_classes < 2) throw ConfigError("scene: need a background and at least one object class");
  if (num_classes > 255) throw ConfigError("scene: class ids must fit below the ignore value");
  if (num_modalities < 1) throw ConfigError("scene: need at least one modality");
  if (shapes_min < 1 || shapes_max < shapes_min) throw ConfigError("scene: bad shape count range");
  if (shape_min_size < 2 || shape_max_size < shape_min_size) {
    throw ConfigError("scene: bad shape size range");
  }
  if (shape_max_size > std::min(height, width)) {
    throw ConfigError("scene: shape vocabulary exceeds the grid");
  }
  if (noise_sigma < 0) throw ConfigError("scene: negative noise sigma");
}

double SceneSpec::shift_gain(int modality) const {
  if (target_gain.empty()) return 1.0;
  return target_gain[target_gain.size() == 1 ? 0 : modality % target_gain.size()];
}

double SceneSpec::shift_bias(int modality) const {
  if (target_bias.empty()) return 0.0;
  return target_bias[target_bias.size() == 1 ? 0 : modality % target_bias.size()];
}

double SceneSpec::shift_noise(int modality) const {
  if (target_noise.empty()) return noise_sigma;
  return target_noise[target_noise.size() == 1 ? 0 : modality % target_noise.size()];
}

std::vector<std::string> default_modality_names(int num_modalities) {
  if (num_modalities == 4) return {"rgb", "depth", "event", "lidar"};
  std::vector<std::string> names;
  for (int i = 0; i < num_modalities; ++i) names.push_back("m" + std::to_string(i));
  return names;
}

Dataset generate(const SceneSpec& spec, int count, Domain domain) {
  spec.validate();
  if (count < 0) throw ConfigError("generate: negative count");

  const auto names = default_modality_names(spec.num_modalities);
  const int fg_classes = spec.num_classes - 1;
  const auto tone = tone_table(spec.num_modalities, spec.num_classes);
  Dataset data;
  data.reserve(count);

  for (int idx = 0; idx < count; ++idx) {
    std::mt19937_64 rng(mix_seed(spec.seed, domain == Domain::source ? 1 : 2, idx));
    SampleRecord rec;
    rec.modality_names = names;
    rec.label = LabelMap(spec.height, spec.width, 0);

    const int k = std::uniform_int_distribution<int>(spec.shapes_min, spec.shapes_max)(rng);
    for (int si = 0; si < k; ++si) {
      Shape s;
      s.disc = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
      s.cls = 1 + si % fg_classes;
      const int size = std::uniform_int_distribution<int>(spec.shape_min_size, spec.shape_max_size)(rng);
      s.sy = std::max(1, size / 2);
      s.sx = s.disc ? s.sy
                    : std::max(1, std::uniform_int_distribution<int>(spec.shape_min_size,
                                                                     spec.shape_max_size)(rng) / 2);
      s.cy = std::uniform_int_distribution<int>(0, spec.height - 1)(rng);
      s.cx = std::uniform_int_distribution<int>(0, spec.width - 1)(rng);
      paint(rec.label, s);
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int mk = 0; mk < spec.num_modalities; ++mk) {
      const double gain = domain == Domain::source ? 1.0 : spec.shift_gain(mk);
      const double bias = domain == Domain::source ? 0.0 : spec.shift_bias(mk);
      const double sigma = domain == Domain::source ? spec.noise_sigma : spec.shift_noise(mk);

      Tensor img(1, 3, spec.height, spec.width);
      for (int h = 0; h < spec.height; ++h) {
        for (int w = 0; w < spec.width; ++w) {
          const int cls = rec.label.at(h, w);
          double v = gain * tone[mk][cls] + bias;
          const double n0 = sigma > 0 ? sigma * gauss(rng) : 0.0;
          const double n1 = sigma > 0 ? sigma * gauss(rng) : 0.0;
          const double n2 = sigma > 0 ? sigma * gauss(rng) : 0.0;
          img.at(0, 0, h, w) = static_cast<float>(v + n0);
          img.at(0, 1, h, w) = static_cast<float>(0.8 * (1.0 - v) + n1);
          img.at(0, 2, h, w) = static_cast<float>(0.45 + 0.35 * v + n2);
        }
      }
      rec.modalities.push_back(std::move(img));
    }
    data.push_back(std::move(rec));
  }
  return data;
}

SampleRecord degrade(const SampleRecord& sample, const std::string& modality, DegradeMode mode,
                     double sigma, uint64_t seed) {
  const int idx = find_modality(sample.modality_names, modality);
  if (idx < 0) throw ConfigError("degrade: unknown modality " + modality);

  SampleRecord out = sample;
  switch (mode) {
    case DegradeMode::missing:
      out.modality_names.erase(out.modality_names.begin() + idx);
      out.modalities.erase(out.modalities.begin() + idx);
      break;
    case DegradeMode::blackout:
      out.modalities[idx].fill(0.0f);
      break;
    case DegradeMode::noise: {
      if (sigma < 0) throw ConfigError("degrade: negative noise sigma");
      if (sigma == 0) break;
      std::mt19937_64 rng(mix_seed(seed, 3, static_cast<uint64_t>(idx)));
      std::normal_distribution<double> gauss(0.0, sigma);
      Tensor& t = out.modalities[idx];
      for (int64_t i = 0; i < t.size(); ++i) {
        t.data()[i] = static_cast<float>(t.data()[i] + gauss(rng));
      }
      break;
    }
  }
  return out;
}

}  // namespace egfuse
