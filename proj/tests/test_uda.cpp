// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "egfuse/synth.hpp"
#include "egfuse/uda.hpp"
#include "test_util.hpp"

using namespace egfuse;

namespace {

EncoderConfig adapt_cfg() {
  EncoderConfig cfg;
  cfg.num_stages = 2;
  cfg.channels_per_stage = {8, 12};
  cfg.num_classes = 3;
  return cfg;
}

Dataset target_data(int count, uint64_t seed) {
  SceneSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.num_classes = 3;
  spec.num_modalities = 3;
  spec.shape_min_size = 4;
  spec.shape_max_size = 10;
  spec.seed = seed;
  return generate(spec, count, Domain::target);
}

AdaptConfig quick_adapt(int num_modalities, int epochs) {
  AdaptConfig acfg;
  acfg.pseudo.combinations = enumerate_combinations(num_modalities);
  acfg.pseudo.threshold = 2;
  acfg.train.base_lr = 1e-3;
  acfg.train.epochs = epochs;
  acfg.train.warmup_epochs = 0;
  acfg.train.batch_size = 2;
  acfg.train.seed = 11;
  return acfg;
}

FusionStrategy average_all() {
  FusionStrategy s;
  s.kind = FusionKind::average_fusion;
  s.drops_per_stage = 0;
  return s;
}

}  // namespace

TEST_CASE("adaptation leaves the teacher untouched and is reproducible") {
  auto cfg = adapt_cfg();
  auto teacher = build_model_params<float>(cfg, 5);
  Dataset target = target_data(4, 7);
  auto acfg = quick_adapt(3, 2);
  auto strategy = average_all();

  const uint64_t teacher_before = teacher.value_checksum();

  auto s1 = teacher.cast<float>();
  auto r1 = adapt(teacher, s1, target, cfg, strategy, acfg);
  CHECK(teacher.value_checksum() == teacher_before);
  CHECK(s1.value_checksum() != teacher_before);  // the student actually moved

  auto s2 = teacher.cast<float>();
  auto r2 = adapt(teacher, s2, target, cfg, strategy, acfg);
  CHECK(s1.value_checksum() == s2.value_checksum());
  REQUIRE(r1.epoch_loss_total.size() == 2);
  for (size_t e = 0; e < 2; ++e) {
    CHECK(r1.epoch_loss_total[e] == r2.epoch_loss_total[e]);
    CHECK(r1.epoch_loss_total[e] ==
          doctest::Approx(r1.epoch_loss_adapt[e] + r1.epoch_loss_kl[e]));
    CHECK(r1.epoch_coverage[e] == r2.epoch_coverage[e]);
    CHECK(r1.epoch_coverage[e] > 0.0);
  }
}

TEST_CASE("student initialized at the teacher starts with zero KL") {
  auto cfg = adapt_cfg();
  auto teacher = build_model_params<float>(cfg, 13);
  Dataset target = target_data(1, 17);
  auto acfg = quick_adapt(3, 1);
  acfg.train.batch_size = 1;

  auto student = teacher.cast<float>();
  auto result = adapt(teacher, student, target, cfg, average_all(), acfg);
  REQUIRE(result.epoch_loss_kl.size() == 1);
  CHECK(std::abs(result.epoch_loss_kl[0]) < 1e-6);
}

TEST_CASE("zero learning rate freezes the student and flattens the curve") {
  auto cfg = adapt_cfg();
  auto teacher = build_model_params<float>(cfg, 19);
  Dataset target = target_data(3, 23);
  auto acfg = quick_adapt(3, 3);
  acfg.train.base_lr = 0.0;

  auto student = teacher.cast<float>();
  const uint64_t before = student.value_checksum();
  auto result = adapt(teacher, student, target, cfg, average_all(), acfg,
                      /*evaluate_each_epoch=*/true);
  CHECK(student.value_checksum() == before);
  REQUIRE(result.epoch_target_miou.size() == 3);
  CHECK(result.epoch_target_miou[1] == result.epoch_target_miou[0]);
  CHECK(result.epoch_target_miou[2] == result.epoch_target_miou[0]);
}

TEST_CASE("zero pseudo-label coverage raises CoverageError") {
  // Hand-built model on a 2-modal sample where the two single-modality
  // predictions disagree at every pixel: modality 0 is uniformly bright and
  // pushes class 1 through a center-tap encoder; modality 1 is uniformly dark,
  // its features die under relu, and the head bias then favors class 0.
  EncoderConfig cfg;
  cfg.num_stages = 1;
  cfg.channels_per_stage = {4};
  cfg.stage_stride = 1;
  cfg.num_classes = 2;
  auto teacher = build_model_params<float>(cfg, 1);
  for (auto& [name, p] : teacher.table()) p.value.fill(0.0f);
  for (int o = 0; o < 4; ++o) {
    teacher.at("enc.s0.conv1.w").value.at(o, 0, 1, 1) = 1.0f;  // center tap on channel 0
    teacher.at("enc.s0.conv2.w").value.at(o, o, 1, 1) = 1.0f;
    teacher.at("head.w").value.at(1, o, 0, 0) = 1.0f;
  }
  teacher.at("head.b").value.at(0, 0, 0, 0) = 1.0f;

  SampleRecord sample;
  sample.modality_names = {"bright", "dark"};
  sample.modalities = {Tensor(1, 3, 4, 4, 5.0f), Tensor(1, 3, 4, 4, -5.0f)};
  sample.label = LabelMap(4, 4, 0);

  AdaptConfig acfg;
  acfg.pseudo.combinations = {{0}, {1}};
  acfg.pseudo.threshold = 2;  // unanimous agreement required, never reached
  acfg.train.epochs = 1;
  acfg.train.warmup_epochs = 0;
  acfg.train.batch_size = 1;

  auto student = teacher.cast<float>();
  CHECK_THROWS_AS(adapt(teacher, student, {sample}, cfg, average_all(), acfg), CoverageError);
}

TEST_CASE("ignored pixels receive exactly zero logit gradient in an adaptation batch") {
  auto cfg = adapt_cfg();
  auto params = build_model_params<float>(cfg, 29);
  Dataset target = target_data(1, 31);

  // A pseudo-label map with a mixed ignore pattern.
  LabelBatch pseudo = {LabelMap(16, 16, kIgnoreLabel)};
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w) {
      if ((h + w) % 3 == 0) pseudo[0].at(h, w) = static_cast<uint8_t>((h * w) % 3);
    }

  ModalityBundle bundle = make_bundle(target[0]);
  Tensor teacher_probs = softmax_channel(forward(bundle, params, cfg, average_all()));

  Tape tape;
  ParamNodesT<float> pn(tape, params);
  auto* logits = forward_on_tape<float>(tape, pn, params, cfg, average_all(), bundle);
  auto* probs = tape.softmax_channel(logits);
  auto* total = tape.add(tape.masked_nll(probs, pseudo),
                         tape.masked_kl(teacher_probs, probs, pseudo));
  tape.backward(total);

  REQUIRE_FALSE(logits->grad.empty());
  double off_mass = 0.0, on_mass = 0.0;
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w)
      for (int c = 0; c < 3; ++c) {
        const double g = std::abs(logits->grad.at(0, c, h, w));
        if (pseudo[0].at(h, w) == kIgnoreLabel) {
          off_mass += g;
          CHECK(logits->grad.at(0, c, h, w) == 0.0f);
        } else {
          on_mass += g;
        }
      }
  CHECK(off_mass == 0.0);
  CHECK(on_mass > 0.0);
}

TEST_CASE("adaptation config validation") {
  AdaptConfig acfg = quick_adapt(3, 2);
  CHECK_NOTHROW(acfg.validate(3));
  acfg.refresh_interval = 0;
  CHECK_THROWS_AS(acfg.validate(3), ConfigError);
}
