// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "egfuse/tape.hpp"
#include "egfuse/tensor.hpp"

namespace egfuse {

/// Topology of the shared-weight hierarchical encoder plus the head.
struct EncoderConfig {
  int num_stages = 4;
  std::vector<int> channels_per_stage = {8, 16, 24, 32};
  int stage_stride = 2;
  int num_classes = 0;
  int input_channels = 3;

  void validate() const {
    if (num_stages < 1) throw ConfigError("encoder: num_stages must be >= 1");
    if (static_cast<int>(channels_per_stage.size()) != num_stages) {
      throw ConfigError("encoder: channels_per_stage length must equal num_stages");
    }
    for (int c : channels_per_stage) {
      if (c < 1) throw ConfigError("encoder: stage channel count must be >= 1");
    }
    if (stage_stride < 1) throw ConfigError("encoder: stage_stride must be >= 1");
    if (num_classes < 1) throw ConfigError("encoder: num_classes must be >= 1");
    if (input_channels < 1) throw ConfigError("encoder: input_channels must be >= 1");
  }

  int stage_input_channels(int stage) const {
    return stage == 0 ? input_channels : channels_per_stage[stage - 1];
  }

  /// Spatial extent divisor imposed by the full downsampling schedule.
  int64_t spatial_divisor() const {
    int64_t d = 1;
    for (int s = 0; s < num_stages; ++s) d *= stage_stride;
    return d;
  }

  /// Bottleneck width used by the scoring projection and the channel gate.
  static int reduced(int channels) { return std::max(1, channels / 4); }
};

template <typename T>
struct ParamT {
  TensorT<T> value;
  TensorT<T> grad;
};

/// Named learnable arrays with gradient slots. Iteration order is the
/// lexicographic name order, which keeps checkpoints and optimizer sweeps
/// deterministic.
template <typename T>
class ModelParamsT {
public:
  ParamT<T>& add(const std::string& name, TensorT<T> init) {
    auto [it, fresh] = table_.try_emplace(name);
    if (!fresh) throw StateError("duplicate parameter name: " + name);
    it->second.value = std::move(init);
    it->second.grad = TensorT<T>::zeros_like(it->second.value);
    return it->second;
  }

  bool has(const std::string& name) const { return table_.count(name) != 0; }

  ParamT<T>& at(const std::string& name) {
    auto it = table_.find(name);
    if (it == table_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }
  const ParamT<T>& at(const std::string& name) const {
    auto it = table_.find(name);
    if (it == table_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, ParamT<T>>& table() { return table_; }
  const std::map<std::string, ParamT<T>>& table() const { return table_; }

  void zero_grads() {
    for (auto& [name, p] : table_) p.grad.fill(T{0});
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : table_) n += p.value.size();
    return n;
  }

  /// FNV-1a over the parameter bytes in name order; used to prove that a
  /// frozen model was not touched.
  uint64_t value_checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, p] : table_) {
      for (char ch : name) {
        h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
      }
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (size_t i = 0; i < p.value.raw().size() * sizeof(T); ++i) {
        h = (h ^ bytes[i]) * 1099511628211ull;
      }
    }
    return h;
  }

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    for (const auto& [name, p] : table_) out.add(name, cast_tensor<T, U>(p.value));
    return out;
  }

private:
  std::map<std::string, ParamT<T>> table_;
};

using ModelParams = ModelParamsT<float>;

namespace keys {
inline std::string stage(const char* group, int s, const char* leaf) {
  return std::string(group) + ".s" + std::to_string(s) + "." + leaf;
}
}  // namespace keys

/// Builds the full parameter set: encoder conv blocks, per-stage scoring
/// projections, per-stage compensation gates, segmentation head.
/// Weights get He-normal init, biases start at zero.
template <typename T>
ModelParamsT<T> build_model_params(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParamsT<T> params;
  std::mt19937_64 rng(seed);

  auto conv_init = [&rng](int c_out, int c_in, int k) {
    TensorT<T> w(c_out, c_in, k, k);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (c_in * k * k)));
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
    return w;
  };
  auto bias_init = [](int c_out) { return TensorT<T>(1, c_out, 1, 1); };

  for (int s = 0; s < cfg.num_stages; ++s) {
    const int c_in = cfg.stage_input_channels(s);
    const int c_out = cfg.channels_per_stage[s];
    const int mid = EncoderConfig::reduced(c_out);

    params.add(keys::stage("enc", s, "conv1.w"), conv_init(c_out, c_in, 3));
    params.add(keys::stage("enc", s, "conv1.b"), bias_init(c_out));
    params.add(keys::stage("enc", s, "conv2.w"), conv_init(c_out, c_out, 3));
    params.add(keys::stage("enc", s, "conv2.b"), bias_init(c_out));

    params.add(keys::stage("score", s, "p1.w"), conv_init(mid, c_out, 1));
    params.add(keys::stage("score", s, "p1.b"), bias_init(mid));
    params.add(keys::stage("score", s, "p2.w"), conv_init(mid, mid, 1));
    params.add(keys::stage("score", s, "p2.b"), bias_init(mid));
    params.add(keys::stage("score", s, "out.w"), conv_init(1, mid, 1));
    params.add(keys::stage("score", s, "out.b"), bias_init(1));

    params.add(keys::stage("comp", s, "ca1.w"), conv_init(mid, c_out, 1));
    params.add(keys::stage("comp", s, "ca1.b"), bias_init(mid));
    params.add(keys::stage("comp", s, "ca2.w"), conv_init(c_out, mid, 1));
    params.add(keys::stage("comp", s, "ca2.b"), bias_init(c_out));
    params.add(keys::stage("comp", s, "sa.w"), conv_init(1, 2, 3));
    params.add(keys::stage("comp", s, "sa.b"), bias_init(1));
  }

  params.add("head.w", conv_init(cfg.num_classes, cfg.channels_per_stage.back(), 1));
  params.add("head.b", bias_init(cfg.num_classes));
  return params;
}

/// Binds every model parameter to a tape leaf for one forward/backward pass.
template <typename T>
class ParamNodesT {
public:
  using Node = typename TapeT<T>::Node;

  ParamNodesT(TapeT<T>& tape, const ModelParamsT<T>& params) {
    for (const auto& [name, p] : params.table()) nodes_[name] = tape.leaf(p.value);
  }

  Node* at(const std::string& name) const {
    auto it = nodes_.find(name);
    if (it == nodes_.end()) throw StateError("unbound parameter: " + name);
    return it->second;
  }

  /// Accumulates tape adjoints into the model's gradient slots.
  void harvest(ModelParamsT<T>& params) const {
    for (const auto& [name, node] : nodes_) {
      if (node->grad.empty()) continue;
      TensorT<T>& g = params.at(name).grad;
      for (int64_t i = 0; i < g.size(); ++i) g.data()[i] += node->grad.data()[i];
    }
  }

private:
  std::map<std::string, Node*> nodes_;
};

}  // namespace egfuse
