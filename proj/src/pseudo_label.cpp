// SPDX-License-Identifier: Apache-2.0
#include "egfuse/pseudo_label.hpp"

#include <algorithm>
#include <map>

namespace egfuse {

void PseudoLabelConfig::validate(int num_modalities) const {
  if (combinations.empty()) throw ConfigError("pseudo: empty combination list");
  if (threshold < 1) throw ConfigError("pseudo: threshold must be >= 1");
  if (threshold > static_cast<int>(combinations.size())) {
    throw ConfigError("pseudo: threshold exceeds the number of combinations");
  }
  for (const auto& combo : combinations) {
    if (combo.empty()) throw ConfigError("pseudo: empty combination");
    std::vector<char> seen(num_modalities, 0);
    for (int m : combo) {
      if (m < 0 || m >= num_modalities) throw ConfigError("pseudo: modality index out of range");
      if (seen[m]) throw ConfigError("pseudo: duplicate modality in combination");
      seen[m] = 1;
    }
  }
}

std::vector<std::vector<int>> enumerate_combinations(int num_modalities) {
  if (num_modalities < 1) throw ConfigError("enumerate_combinations: need at least one modality");
  std::vector<std::vector<int>> out;
  for (unsigned mask = 1; mask < (1u << num_modalities); ++mask) {
    std::vector<int> combo;
    for (int i = 0; i < num_modalities; ++i) {
      if (mask & (1u << i)) combo.push_back(i);
    }
    out.push_back(std::move(combo));
  }
  return out;
}

std::vector<std::vector<int>> combinations_from_names(
    const std::vector<std::string>& available,
    const std::vector<std::vector<std::string>>& requested) {
  std::vector<std::vector<int>> out;
  for (const auto& names : requested) {
    std::vector<int> combo;
    for (const auto& name : names) {
      const int idx = find_modality(available, name);
      if (idx < 0) throw ConfigError("unknown modality in combination: " + name);
      combo.push_back(idx);
    }
    out.push_back(std::move(combo));
  }
  return out;
}

int vote_pixel(const std::vector<int>& candidates, int threshold, int ignore_label) {
  if (candidates.empty()) throw ConfigError("vote_pixel: no candidates");
  if (threshold < 1) throw ConfigError("vote_pixel: threshold must be >= 1");
  std::map<int, int> counts;
  for (int c : candidates) ++counts[c];
  int best_class = -1;
  int best_count = 0;
  int at_best = 0;
  for (const auto& [cls, cnt] : counts) {
    if (cnt > best_count) {
      best_count = cnt;
      best_class = cls;
      at_best = 1;
    } else if (cnt == best_count) {
      ++at_best;
    }
  }
  if (best_count >= threshold && at_best == 1) return best_class;
  return ignore_label;
}

PseudoResult generate_pseudo_labels(const ModelParams& teacher, const EncoderConfig& cfg,
                                    const FusionStrategy& strategy, const SampleRecord& sample,
                                    const PseudoLabelConfig& pcfg) {
  const int m = static_cast<int>(sample.modalities.size());
  pcfg.validate(m);

  std::vector<LabelMap> votes;
  votes.reserve(pcfg.combinations.size());
  for (const auto& combo : pcfg.combinations) {
    std::vector<char> mask(m, 0);
    for (int idx : combo) mask[idx] = 1;
    votes.push_back(predict_sample(sample, teacher, cfg, strategy, mask));
  }

  PseudoResult result;
  result.map = LabelMap(votes[0].height, votes[0].width);
  int64_t labeled = 0;
  std::vector<int> candidates(votes.size());
  for (int h = 0; h < result.map.height; ++h) {
    for (int w = 0; w < result.map.width; ++w) {
      for (size_t v = 0; v < votes.size(); ++v) candidates[v] = votes[v].at(h, w);
      const int verdict = vote_pixel(candidates, pcfg.threshold, pcfg.ignore_label);
      result.map.at(h, w) = static_cast<uint8_t>(verdict);
      if (verdict != pcfg.ignore_label) ++labeled;
    }
  }
  result.coverage = static_cast<double>(labeled) / static_cast<double>(result.map.size());
  return result;
}

}  // namespace egfuse
