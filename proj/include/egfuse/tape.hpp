// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "egfuse/labels.hpp"
#include "egfuse/ops.hpp"
#include "egfuse/tensor.hpp"

namespace egfuse {

/// Floor applied to probabilities inside logs.
inline constexpr double kProbFloor = 1e-12;

/// Reverse-mode gradient tape.
///
/// Every operation appends one node holding the forward value and a closure
/// that scatters the node's adjoint into its parents. backward() replays the
/// closures in strict reverse execution order; adjoints accumulate
/// additively, so a value consumed twice receives both contributions.
/// A tape is confined to one logical thread.
template <typename T>
class TapeT {
public:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // allocated lazily; empty means "no adjoint reached"
    std::function<void()> back;
  };

  Node* leaf(TensorT<T> v) { return push(std::move(v), nullptr); }

  Node* conv2d(Node* x, Node* k, Node* bias, ConvSpec spec) {
    TensorT<T> out = egfuse::conv2d(x->value, k->value, bias ? bias->value : TensorT<T>{}, spec);
    Node* n = push(std::move(out), nullptr);
    n->back = [this, n, x, k, bias, spec] {
      conv2d_backward(x->value, k->value, spec, n->grad, &grad_of(x), &grad_of(k),
                      bias ? &grad_of(bias) : nullptr);
    };
    return n;
  }

  Node* global_avg_pool(Node* x) {
    Node* n = push(egfuse::global_avg_pool(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      const T inv = T{1} / static_cast<T>(dx.height() * dx.width());
      for (int b = 0; b < dx.batch(); ++b)
        for (int c = 0; c < dx.channels(); ++c) {
          const T g = n->grad.at(b, c, 0, 0) * inv;
          for (int h = 0; h < dx.height(); ++h)
            for (int w = 0; w < dx.width(); ++w) dx.at(b, c, h, w) += g;
        }
    };
    return n;
  }

  Node* sigmoid(Node* x) {
    Node* n = push(egfuse::sigmoid(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      for (int64_t i = 0; i < dx.size(); ++i) {
        const T y = n->value.data()[i];
        dx.data()[i] += n->grad.data()[i] * y * (T{1} - y);
      }
    };
    return n;
  }

  Node* relu(Node* x) {
    Node* n = push(egfuse::relu(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      for (int64_t i = 0; i < dx.size(); ++i) {
        if (x->value.data()[i] > T{0}) dx.data()[i] += n->grad.data()[i];
      }
    };
    return n;
  }

  Node* log_elem(Node* x) {
    Node* n = push(egfuse::log_elem(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      for (int64_t i = 0; i < dx.size(); ++i) {
        dx.data()[i] += n->grad.data()[i] / x->value.data()[i];
      }
    };
    return n;
  }

  Node* softmax_channel(Node* x) {
    Node* n = push(egfuse::softmax_channel(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      const int c_n = dx.channels();
      for (int b = 0; b < dx.batch(); ++b)
        for (int h = 0; h < dx.height(); ++h)
          for (int w = 0; w < dx.width(); ++w) {
            T dot = 0;
            for (int c = 0; c < c_n; ++c) dot += n->grad.at(b, c, h, w) * n->value.at(b, c, h, w);
            for (int c = 0; c < c_n; ++c) {
              dx.at(b, c, h, w) += n->value.at(b, c, h, w) * (n->grad.at(b, c, h, w) - dot);
            }
          }
    };
    return n;
  }

  Node* add(Node* a, Node* b) {
    Node* n = push(egfuse::add(a->value, b->value), nullptr);
    n->back = [this, n, a, b] {
      accumulate_reduced(grad_of(a), n->grad);
      accumulate_reduced(grad_of(b), n->grad);
    };
    return n;
  }

  Node* mul(Node* a, Node* b) {
    Node* n = push(egfuse::mul(a->value, b->value), nullptr);
    n->back = [this, n, a, b] {
      accumulate_reduced(grad_of(a), egfuse::mul(n->grad, b->value));
      accumulate_reduced(grad_of(b), egfuse::mul(n->grad, a->value));
    };
    return n;
  }

  Node* scale(Node* a, T s) {
    Node* n = push(egfuse::scale(a->value, s), nullptr);
    n->back = [this, n, a, s] {
      TensorT<T>& da = grad_of(a);
      for (int64_t i = 0; i < da.size(); ++i) da.data()[i] += n->grad.data()[i] * s;
    };
    return n;
  }

  Node* bilinear_upsample(Node* x, int factor) {
    Node* n = push(egfuse::bilinear_upsample(x->value, factor), nullptr);
    n->back = [this, n, x, factor] { bilinear_upsample_backward(n->grad, factor, &grad_of(x)); };
    return n;
  }

  Node* channel_mean(Node* x) {
    Node* n = push(egfuse::channel_mean(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      const T inv = T{1} / static_cast<T>(dx.channels());
      for (int b = 0; b < dx.batch(); ++b)
        for (int c = 0; c < dx.channels(); ++c)
          for (int h = 0; h < dx.height(); ++h)
            for (int w = 0; w < dx.width(); ++w) dx.at(b, c, h, w) += n->grad.at(b, 0, h, w) * inv;
    };
    return n;
  }

  Node* channel_max(Node* x) {
    Node* n = push(egfuse::channel_max(x->value), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      for (int b = 0; b < dx.batch(); ++b)
        for (int h = 0; h < dx.height(); ++h)
          for (int w = 0; w < dx.width(); ++w) {
            int arg = 0;
            for (int c = 1; c < dx.channels(); ++c) {
              if (x->value.at(b, c, h, w) > x->value.at(b, arg, h, w)) arg = c;
            }
            dx.at(b, arg, h, w) += n->grad.at(b, 0, h, w);
          }
    };
    return n;
  }

  Node* concat_channel(Node* a, Node* b) {
    Node* n = push(egfuse::concat_channel(a->value, b->value), nullptr);
    n->back = [this, n, a, b] {
      TensorT<T>& da = grad_of(a);
      TensorT<T>& db = grad_of(b);
      for (int bb = 0; bb < n->grad.batch(); ++bb)
        for (int c = 0; c < n->grad.channels(); ++c)
          for (int h = 0; h < n->grad.height(); ++h)
            for (int w = 0; w < n->grad.width(); ++w) {
              if (c < da.channels()) {
                da.at(bb, c, h, w) += n->grad.at(bb, c, h, w);
              } else {
                db.at(bb, c - da.channels(), h, w) += n->grad.at(bb, c, h, w);
              }
            }
    };
    return n;
  }

  Node* sum_all(Node* x) {
    Node* n = push(TensorT<T>::scalar(egfuse::sum_all(x->value)), nullptr);
    n->back = [this, n, x] {
      TensorT<T>& dx = grad_of(x);
      const T g = n->grad.data()[0];
      for (int64_t i = 0; i < dx.size(); ++i) dx.data()[i] += g;
    };
    return n;
  }

  /// Masked negative log-likelihood, the cross-entropy over pixels whose
  /// label is not the ignore id: -(1/|O|) * sum log p(label). Returns 0 when
  /// no pixel is labeled; `omega_out` reports |O| so callers can detect that.
  Node* masked_nll(Node* probs, const LabelBatch& labels, int64_t* omega_out = nullptr) {
    check_prob_batch(probs->value, labels);
    validate_normalized(probs->value);
    const int64_t omega = count_omega(labels);
    if (omega_out) *omega_out = omega;
    T value = 0;
    if (omega > 0) {
      const T inv = T{1} / static_cast<T>(omega);
      for (size_t b = 0; b < labels.size(); ++b) {
        for (int h = 0; h < labels[b].height; ++h)
          for (int w = 0; w < labels[b].width; ++w) {
            const int y = labels[b].at(h, w);
            if (y == kIgnoreLabel) continue;
            const T p = std::max(probs->value.at(int(b), y, h, w), static_cast<T>(kProbFloor));
            value -= std::log(p) * inv;
          }
      }
    }
    Node* n = push(TensorT<T>::scalar(value), nullptr);
    n->back = [this, n, probs, labels, omega] {
      if (omega == 0) return;
      TensorT<T>& dp = grad_of(probs);
      const T g = n->grad.data()[0] / static_cast<T>(omega);
      for (size_t b = 0; b < labels.size(); ++b) {
        for (int h = 0; h < labels[b].height; ++h)
          for (int w = 0; w < labels[b].width; ++w) {
            const int y = labels[b].at(h, w);
            if (y == kIgnoreLabel) continue;
            const T p = probs->value.at(int(b), y, h, w);
            if (p > static_cast<T>(kProbFloor)) dp.at(int(b), y, h, w) -= g / p;
          }
      }
    };
    return n;
  }

  /// Mean KL(teacher || student) over non-ignored pixels. The teacher
  /// distribution is a constant; gradients flow into the student only.
  Node* masked_kl(const TensorT<T>& teacher, Node* student, const LabelBatch& labels) {
    if (!teacher.same_shape(student->value)) {
      throw ShapeError("masked_kl: teacher/student shapes differ");
    }
    check_prob_batch(student->value, labels);
    const int64_t omega = count_omega(labels);
    T value = 0;
    if (omega > 0) {
      const T inv = T{1} / static_cast<T>(omega);
      for (size_t b = 0; b < labels.size(); ++b) {
        for (int h = 0; h < labels[b].height; ++h)
          for (int w = 0; w < labels[b].width; ++w) {
            if (labels[b].at(h, w) == kIgnoreLabel) continue;
            for (int c = 0; c < teacher.channels(); ++c) {
              const T t = std::max(teacher.at(int(b), c, h, w), static_cast<T>(kProbFloor));
              const T s = std::max(student->value.at(int(b), c, h, w), static_cast<T>(kProbFloor));
              value += t * (std::log(t) - std::log(s)) * inv;
            }
          }
      }
    }
    Node* n = push(TensorT<T>::scalar(value), nullptr);
    n->back = [this, n, student, teacher, labels, omega] {
      if (omega == 0) return;
      TensorT<T>& ds = grad_of(student);
      const T g = n->grad.data()[0] / static_cast<T>(omega);
      for (size_t b = 0; b < labels.size(); ++b) {
        for (int h = 0; h < labels[b].height; ++h)
          for (int w = 0; w < labels[b].width; ++w) {
            if (labels[b].at(h, w) == kIgnoreLabel) continue;
            for (int c = 0; c < teacher.channels(); ++c) {
              const T t = std::max(teacher.at(int(b), c, h, w), static_cast<T>(kProbFloor));
              const T s = student->value.at(int(b), c, h, w);
              if (s > static_cast<T>(kProbFloor)) ds.at(int(b), c, h, w) -= g * t / s;
            }
          }
      }
    };
    return n;
  }

  /// Propagates adjoints from a scalar loss back to every reachable node.
  void backward(Node* loss) {
    if (replayed_) throw StateError("tape replayed twice without reset");
    if (loss->value.size() != 1) throw ShapeError("backward: loss must be a scalar");
    grad_of_ptr(loss)->data()[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node* n = it->get();
      if (n->back && !n->grad.empty()) n->back();
    }
    replayed_ = true;
  }

  /// Clears all adjoints and re-arms the tape for another backward pass.
  void reset() {
    for (auto& n : nodes_) n->grad = TensorT<T>{};
    replayed_ = false;
  }

  size_t node_count() const { return nodes_.size(); }

private:
  Node* push(TensorT<T> v, std::function<void()> back) {
    nodes_.push_back(std::make_unique<Node>(Node{std::move(v), TensorT<T>{}, std::move(back)}));
    return nodes_.back().get();
  }

  TensorT<T>& grad_of(Node* n) { return *grad_of_ptr(n); }

  TensorT<T>* grad_of_ptr(Node* n) {
    if (n->grad.empty()) n->grad = TensorT<T>::zeros_like(n->value);
    return &n->grad;
  }

  void accumulate_reduced(TensorT<T>& target, const TensorT<T>& g) {
    if (g.shape() == target.shape()) {
      for (int64_t i = 0; i < g.size(); ++i) target.data()[i] += g.data()[i];
    } else {
      const TensorT<T> r = reduce_to_shape(g, target.shape());
      for (int64_t i = 0; i < r.size(); ++i) target.data()[i] += r.data()[i];
    }
  }

  static void check_prob_batch(const TensorT<T>& probs, const LabelBatch& labels) {
    if (static_cast<int>(labels.size()) != probs.batch()) {
      throw ShapeError("label batch size does not match probability batch");
    }
    for (const LabelMap& m : labels) {
      if (m.height != probs.height() || m.width != probs.width()) {
        throw ShapeError("label map extent does not match probability map");
      }
      m.check_class_range(probs.channels());
    }
  }

  static void validate_normalized(const TensorT<T>& probs) {
    for (int b = 0; b < probs.batch(); ++b)
      for (int h = 0; h < probs.height(); ++h)
        for (int w = 0; w < probs.width(); ++w) {
          T sum = 0;
          for (int c = 0; c < probs.channels(); ++c) sum += probs.at(b, c, h, w);
          if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4) {
            throw NumericError("probabilities not channel-normalized");
          }
        }
  }

  static int64_t count_omega(const LabelBatch& labels) {
    int64_t omega = 0;
    for (const LabelMap& m : labels) {
      for (uint8_t v : m.ids) omega += (v != kIgnoreLabel) ? 1 : 0;
    }
    return omega;
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool replayed_ = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace egfuse
