// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "egfuse/labels.hpp"
#include "egfuse/tape.hpp"
#include "egfuse/tensor.hpp"

namespace egfuse {

struct LossOutputs {
  double l_adapt = 0.0;
  double l_kl = 0.0;
  double l_total = 0.0;
  int64_t omega_size = 0;
  bool empty_omega = false;
};

/// Mean negative log-likelihood of the pseudo-labels over Ω (pixels whose
/// label is not 255). Value-only convenience over the tape op.
template <typename T>
double adapt_loss(const TensorT<T>& student_probs, const LabelBatch& pseudo,
                  int64_t* omega_out = nullptr) {
  TapeT<T> tape;
  int64_t omega = 0;
  auto* loss = tape.masked_nll(tape.leaf(student_probs), pseudo, &omega);
  if (omega_out) *omega_out = omega;
  return static_cast<double>(loss->value.at(0, 0, 0, 0));
}

/// Mean over Ω of KL(teacher ∥ student) summed across channels.
template <typename T>
double kl_loss(const TensorT<T>& teacher_probs, const TensorT<T>& student_probs,
               const LabelBatch& pseudo) {
  TapeT<T> tape;
  auto* loss = tape.masked_kl(teacher_probs, tape.leaf(student_probs), pseudo);
  return static_cast<double>(loss->value.at(0, 0, 0, 0));
}

template <typename T>
LossOutputs total_loss(const TensorT<T>& teacher_probs, const TensorT<T>& student_probs,
                       const LabelBatch& pseudo) {
  LossOutputs out;
  out.l_adapt = adapt_loss(student_probs, pseudo, &out.omega_size);
  out.l_kl = kl_loss(teacher_probs, student_probs, pseudo);
  out.l_total = out.l_adapt + out.l_kl;
  out.empty_omega = (out.omega_size == 0);
  return out;
}

}  // namespace egfuse
