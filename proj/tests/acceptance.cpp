// SPDX-License-Identifier: Apache-2.0
//
// Release gate: ten independent checks covering gradients, module oracles,
// fixed-point metric arithmetic, efficiency accounting, the desk-scale fusion
// and adaptation benchmarks, robustness sweeps, and artifact determinism.
// Each check prints exactly one PASS/FAIL line; the process exits nonzero if
// any check fails. argv[1] must name the command-line binary.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "egfuse/compensation.hpp"
#include "egfuse/efficiency.hpp"
#include "egfuse/io.hpp"
#include "egfuse/losses.hpp"
#include "egfuse/metrics.hpp"
#include "egfuse/pipeline.hpp"
#include "egfuse/pseudo_label.hpp"
#include "egfuse/synth.hpp"
#include "egfuse/uda.hpp"

namespace fs = std::filesystem;
using namespace egfuse;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, bool ok, const std::string& what, Clock::time_point begun) {
  const double s = std::chrono::duration<double>(Clock::now() - begun).count();
  std::printf("%s %2d: %s [%.1fs]\n", ok ? "PASS" : "FAIL", idx, what.c_str(), s);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------- check 1
// Analytic gradients of the total adaptation loss against central finite
// differences in double precision.
void check_gradients() {
  auto t0 = Clock::now();

  EncoderConfig cfg;
  cfg.num_stages = 2;
  cfg.channels_per_stage = {4, 6};
  cfg.stage_stride = 2;
  cfg.num_classes = 3;

  FusionStrategy strategy;
  strategy.kind = FusionKind::score_drop;
  strategy.drops_per_stage = 1;

  const int B = 1, H = 8, W = 8, M = 3;
  std::mt19937_64 rng(42);
  std::normal_distribution<double> dist(0.0, 1.0);

  ModalityBundleT<double> bundle;
  for (int k = 0; k < M; ++k) {
    TensorT<double> t(B, 3, H, W);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.5 * dist(rng);
    bundle.names.push_back("m" + std::to_string(k));
    bundle.tensors.push_back(std::move(t));
    bundle.active.push_back(1);
  }

  LabelBatch labels;
  LabelMap lm(H, W, 0);
  std::uniform_int_distribution<int> ldist(0, cfg.num_classes);
  for (int h = 0; h < H; ++h) {
    for (int w = 0; w < W; ++w) {
      const int v = ldist(rng);
      lm.at(h, w) = v == cfg.num_classes ? kIgnoreLabel : static_cast<uint8_t>(v);
    }
  }
  labels.push_back(lm);

  ModelParamsT<double> params = build_model_params<double>(cfg, 9);
  const TensorT<double> teacher_probs =
      softmax_channel(forward(bundle, build_model_params<double>(cfg, 10), cfg, strategy));

  auto loss_value = [&](const ModelParamsT<double>& p) {
    Tape64 tape;
    ParamNodesT<double> pn(tape, p);
    auto* logits = forward_on_tape<double>(tape, pn, p, cfg, strategy, bundle);
    auto* probs = tape.softmax_channel(logits);
    auto* l_adapt = tape.masked_nll(probs, labels);
    auto* l_kl = tape.masked_kl(teacher_probs, probs, labels);
    return tape.add(l_adapt, l_kl)->value.at(0, 0, 0, 0);
  };

  // Analytic pass.
  {
    Tape64 tape;
    ParamNodesT<double> pn(tape, params);
    auto* logits = forward_on_tape<double>(tape, pn, params, cfg, strategy, bundle);
    auto* probs = tape.softmax_channel(logits);
    auto* l_adapt = tape.masked_nll(probs, labels);
    auto* l_kl = tape.masked_kl(teacher_probs, probs, labels);
    tape.backward(tape.add(l_adapt, l_kl));
    params.zero_grads();
    pn.harvest(params);
  }

  const double h = 1e-4;
  int64_t total = 0, within = 0;
  for (auto& [name, p] : params.table()) {
    for (int64_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = loss_value(params);
      p.value.data()[i] = keep - h;
      const double dn = loss_value(params);
      p.value.data()[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = p.grad.data()[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      ++total;
      if (rel <= 1e-4) ++within;
    }
  }

  const double frac = static_cast<double>(within) / static_cast<double>(total);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  report(1, frac >= 0.99 && secs < 60.0,
         "gradient check: " + std::to_string(within) + "/" + std::to_string(total) +
             " parameters within 1e-4 relative error",
         t0);
}

// ---------------------------------------------------------------- check 2
double oracle_score(const TensorT<float>& f, int bi, const StageScoringParams<float>& sp) {
  const int C = f.channels(), H = f.height(), W = f.width();
  std::vector<double> pooled(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) s += f.at(bi, c, y, x);
    pooled[c] = s / (static_cast<double>(H) * W);
  }
  const int mid = sp.p1_w->batch();
  std::vector<double> h1(mid, 0.0);
  for (int m = 0; m < mid; ++m) {
    double s = sp.p1_b->at(0, m, 0, 0);
    for (int c = 0; c < C; ++c) s += sp.p1_w->at(m, c, 0, 0) * pooled[c];
    h1[m] = std::max(0.0, s);
  }
  std::vector<double> h2(mid, 0.0);
  for (int m = 0; m < mid; ++m) {
    double s = sp.p2_b->at(0, m, 0, 0);
    for (int c = 0; c < mid; ++c) s += sp.p2_w->at(m, c, 0, 0) * h1[c];
    h2[m] = s;
  }
  double logit = sp.out_b->at(0, 0, 0, 0);
  for (int c = 0; c < mid; ++c) logit += sp.out_w->at(0, c, 0, 0) * h2[c];
  return 1.0 / (1.0 + std::exp(-logit));
}

void check_scoring_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  bool ok = true;
  std::string detail;

  for (int trial = 0; trial < 200 && ok; ++trial) {
    const int B = 1 + static_cast<int>(rng() % 4);
    const int C = 1 + static_cast<int>(rng() % 16);
    const int N = 1 + static_cast<int>(rng() % 5);
    const int H = 2 + static_cast<int>(rng() % 5);
    const int W = 2 + static_cast<int>(rng() % 5);
    const int mid = std::max(1, C / 4);

    auto make = [&](int b, int c, int hh, int ww) {
      TensorT<float> t(b, c, hh, ww);
      for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
      return t;
    };
    TensorT<float> p1_w = make(mid, C, 1, 1), p1_b = make(1, mid, 1, 1);
    TensorT<float> p2_w = make(mid, mid, 1, 1), p2_b = make(1, mid, 1, 1);
    TensorT<float> out_w = make(1, mid, 1, 1), out_b = make(1, 1, 1, 1);
    StageScoringParams<float> sp{&p1_w, &p1_b, &p2_w, &p2_b, &out_w, &out_b};

    std::vector<TensorT<float>> feats;
    for (int k = 0; k < N; ++k) feats.push_back(make(B, C, H, W));

    auto rep = score_modalities(feats, sp);

    // Scores match the direct computation, stay inside (0,1), and the drop
    // index is the batch-mean argmin with lowest-index ties.
    std::vector<double> means(N, 0.0);
    for (int k = 0; k < N && ok; ++k) {
      for (int bi = 0; bi < B && ok; ++bi) {
        const double want = oracle_score(feats[k], bi, sp);
        const float got = rep.per_sample[bi][k];
        if (!(got > 0.0f && got < 1.0f)) {
          ok = false;
          detail = "score left (0,1)";
        } else if (std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want))) {
          ok = false;
          detail = "score mismatch " + fmt(got) + " vs " + fmt(want);
        }
        means[k] += want / B;
      }
    }
    if (ok) {
      int arg = 0;
      for (int k = 1; k < N; ++k) {
        if (means[k] < means[arg]) arg = k;
      }
      if (rep.drop_index != arg) {
        ok = false;
        detail = "drop index mismatch";
      }
    }

    // Permutation equivariance on the same instance.
    if (ok && N > 1) {
      std::vector<int> perm(N);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<TensorT<float>> moved(N);
      for (int k = 0; k < N; ++k) moved[perm[k]] = feats[k];
      auto rep2 = score_modalities(moved, sp);
      for (int k = 0; k < N && ok; ++k) {
        if (std::abs(rep2.batch_mean[perm[k]] - rep.batch_mean[k]) > 1e-7f) {
          ok = false;
          detail = "permuted scores did not follow the permutation";
        }
      }
      if (ok && perm[rep.drop_index] != rep2.drop_index) {
        // Equal means can legitimately resolve differently under permutation;
        // accept only exact-tie cases.
        if (rep2.batch_mean[rep2.drop_index] != rep2.batch_mean[perm[rep.drop_index]]) {
          ok = false;
          detail = "permuted drop index did not follow the permutation";
        }
      }
    }
  }
  report(2, ok,
         ok ? "modality scoring matches the direct oracle on 200 instances"
            : "modality scoring oracle: " + detail,
         t0);
}

// ---------------------------------------------------------------- check 3
void check_compensation_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(88);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  bool ok = true;
  std::string detail;

  auto make = [&](int b, int c, int hh, int ww, float scale = 1.0f, float shift = 0.0f) {
    TensorT<float> t(b, c, hh, ww);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = scale * dist(rng) + shift;
    return t;
  };

  // Saturated-low gates: compensation must return the surviving inputs.
  {
    const int C = 8, mid = 2;
    TensorT<float> ca1_w = make(mid, C, 1, 1), ca1_b = make(1, mid, 1, 1);
    TensorT<float> ca2_w = make(C, mid, 1, 1), ca2_b(1, C, 1, 1);
    TensorT<float> sa_w = make(1, 2, 3, 3), sa_b(1, 1, 1, 1);
    ca2_b.fill(-40.0f);
    sa_b.fill(-40.0f);
    ca2_w.fill(0.0f);
    sa_w.fill(0.0f);
    StageCompParams<float> cp{&ca1_w, &ca1_b, &ca2_w, &ca2_b, &sa_w, &sa_b};
    std::vector<TensorT<float>> feats = {make(2, C, 4, 4), make(2, C, 4, 4), make(2, C, 4, 4)};
    auto out = compensate(feats, {1}, cp);
    for (size_t s = 0; s < out.surviving.size() && ok; ++s) {
      const TensorT<float>& a = out.surviving[s];
      const TensorT<float>& b = feats[out.surviving_indices[s]];
      for (int64_t i = 0; i < a.size() && ok; ++i) {
        if (std::abs(a.data()[i] - b.data()[i]) > 1e-6f) {
          ok = false;
          detail = "saturated-low gates altered a survivor";
        }
      }
    }
  }

  // Random instances against the element-wise rule computed in double.
  for (int trial = 0; trial < 200 && ok; ++trial) {
    const int B = 1 + static_cast<int>(rng() % 2);
    const int C = 4 + static_cast<int>(rng() % 8);
    const int H = 2 + static_cast<int>(rng() % 4);
    const int W = 2 + static_cast<int>(rng() % 4);
    const int N = 2 + static_cast<int>(rng() % 3);
    const int mid = std::max(1, C / 4);

    TensorT<float> ca1_w = make(mid, C, 1, 1, 0.5f), ca1_b = make(1, mid, 1, 1, 0.5f);
    TensorT<float> ca2_w = make(C, mid, 1, 1, 0.5f), ca2_b = make(1, C, 1, 1, 0.5f);
    TensorT<float> sa_w = make(1, 2, 3, 3, 0.5f), sa_b = make(1, 1, 1, 1, 0.5f);
    StageCompParams<float> cp{&ca1_w, &ca1_b, &ca2_w, &ca2_b, &sa_w, &sa_b};

    std::vector<TensorT<float>> feats;
    for (int k = 0; k < N; ++k) feats.push_back(make(B, C, H, W));
    const int n_drop = 1 + static_cast<int>(rng() % (N - 1));
    std::vector<int> pool(N);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> drop(pool.begin(), pool.begin() + n_drop);

    auto out = compensate(feats, drop, cp);

    // Oracle gates per donor.
    std::vector<TensorT<float>> wc, ws;
    for (int j : drop) {
      wc.push_back(channel_weights(feats[j], cp));
      ws.push_back(spatial_weights(feats[j], cp));
    }
    for (size_t s = 0; s < out.surviving.size() && ok; ++s) {
      const int i = out.surviving_indices[s];
      for (int bi = 0; bi < B && ok; ++bi) {
        for (int c = 0; c < C && ok; ++c) {
          for (int y = 0; y < H && ok; ++y) {
            for (int x = 0; x < W && ok; ++x) {
              double want = feats[i].at(bi, c, y, x);
              double sum_c = 0.0, sum_s = 0.0;
              for (size_t di = 0; di < drop.size(); ++di) {
                const double fj = feats[drop[di]].at(bi, c, y, x);
                sum_c += static_cast<double>(wc[di].at(bi, c, 0, 0)) * fj;
                sum_s += static_cast<double>(ws[di].at(bi, 0, y, x)) * fj;
              }
              want += 0.5 * sum_c + 0.5 * sum_s;
              const double got = out.surviving[s].at(bi, c, y, x);
              if (std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want))) {
                ok = false;
                detail = "element mismatch " + fmt(got) + " vs " + fmt(want);
              }
            }
          }
        }
      }
    }
  }
  report(3, ok,
         ok ? "compensation identity and element-wise oracle hold on 200 instances"
            : "compensation oracle: " + detail,
         t0);
}

// ---------------------------------------------------------------- check 4
void check_vote_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  bool ok = true;
  std::string detail;

  auto brute = [](const std::vector<int>& cand, int threshold) {
    int best = -1, best_count = 0;
    bool tie = false;
    for (int v : cand) {
      int count = 0;
      for (int u : cand) count += (u == v);
      if (count > best_count) {
        best = v;
        best_count = count;
        tie = false;
      } else if (count == best_count && v != best) {
        tie = true;
      }
    }
    if (best_count < threshold || tie) return kIgnoreLabel;
    return best;
  };

  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    const int classes = 1 + static_cast<int>(rng() % 8);
    const int threshold = 1 + static_cast<int>(rng() % n);
    std::vector<int> cand(n);
    for (int& v : cand) v = static_cast<int>(rng() % classes);
    const int got = vote_pixel(cand, threshold, kIgnoreLabel);
    const int want = brute(cand, threshold);
    if (got != want) {
      ok = false;
      detail = "vote mismatch got " + std::to_string(got) + " want " + std::to_string(want);
    }
  }

  // Coverage is non-increasing in the threshold over a fixed instance set.
  if (ok) {
    std::vector<std::vector<int>> instances;
    for (int i = 0; i < 500; ++i) {
      std::vector<int> cand(6);
      for (int& v : cand) v = static_cast<int>(rng() % 5);
      instances.push_back(cand);
    }
    int prev = static_cast<int>(instances.size()) + 1;
    for (int threshold = 1; threshold <= 6 && ok; ++threshold) {
      int labeled = 0;
      for (const auto& cand : instances) {
        labeled += vote_pixel(cand, threshold, kIgnoreLabel) != kIgnoreLabel;
      }
      if (labeled > prev) {
        ok = false;
        detail = "coverage increased when the threshold tightened";
      }
      prev = labeled;
    }
  }
  report(4, ok,
         ok ? "pixel voting matches the brute-force oracle on 1000 instances"
            : "vote oracle: " + detail,
         t0);
}

// ---------------------------------------------------------------- check 5
void check_metric_arithmetic() {
  auto t0 = Clock::now();
  const auto row = report_from_per_class(
      {20.60, 0.00, 0.00, 3.18, 34.22, 0.60, 15.00, 0.00, 0.00, 0.00, 2.25});
  const bool miou_ok = std::abs(row.miou - 6.90) < 0.01;

  const auto gap = domain_gap(report_from_per_class({55.99}), report_from_per_class({19.51}));
  const bool gap_ok =
      std::abs(gap.mean - 36.48) < 1e-9 && std::abs(gap.per_class_gap[0] - 36.48) < 1e-9;

  report(5, miou_ok && gap_ok,
         "metric arithmetic: per-class mean " + fmt(row.miou) + ", domain gap " + fmt(gap.mean),
         t0);
}

// ---------------------------------------------------------------- check 6
void check_efficiency() {
  auto t0 = Clock::now();

  EncoderConfig cfg;  // default four-stage configuration
  cfg.num_classes = 4;
  ModelParams params = build_model_params<float>(cfg, 3);

  std::vector<int64_t> flops;
  for (int drops = 0; drops <= 2; ++drops) {
    FusionStrategy s;
    s.kind = FusionKind::score_drop;
    s.drops_per_stage = drops;
    flops.push_back(count_efficiency(params, cfg, s, 4, 1, 32, 32).flops);
  }
  const bool mono = flops[0] > flops[1] && flops[1] > flops[2];

  // Hand-computed parameter count for a one-stage toy model, channels {8},
  // two classes, three input channels, bottleneck width 8/4 = 2:
  //   encoder   8*3*3*3 + 8 + 8*8*3*3 + 8            = 808
  //   scoring   2*8 + 2 + 2*2 + 2 + 1*2 + 1          =  27
  //   gates     2*8 + 2 + 8*2 + 8 + 1*2*3*3 + 1      =  61
  //   head      2*8 + 2                              =  18
  EncoderConfig toy;
  toy.num_stages = 1;
  toy.channels_per_stage = {8};
  toy.num_classes = 2;
  ModelParams toy_params = build_model_params<float>(toy, 5);
  FusionStrategy avg;
  avg.kind = FusionKind::average_fusion;
  avg.drops_per_stage = 0;
  const int64_t count = count_efficiency(toy_params, toy, avg, 2, 1, 8, 8).param_count;
  const bool params_ok = count == 914;

  report(6, mono && params_ok,
         "efficiency: flops " + std::to_string(flops[0]) + " > " + std::to_string(flops[1]) +
             " > " + std::to_string(flops[2]) + ", toy parameter count " + std::to_string(count),
         t0);
}

// ------------------------------------------------------- checks 7, 8, 9
// Shared desk-scale benchmark state.
struct Benchmark {
  EncoderConfig cfg;
  FusionStrategy fused;
  Dataset train, test, target;
  ModelParams fused_params;
  double fused_miou = 0.0;
};

Dataset solo_view(const Dataset& data, int k) {
  Dataset out;
  for (const auto& s : data) {
    SampleRecord r;
    r.modality_names = {s.modality_names[k]};
    r.modalities = {s.modalities[k]};
    r.label = s.label;
    out.push_back(std::move(r));
  }
  return out;
}

SceneSpec benchmark_scene() {
  SceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.num_classes = 4;
  spec.num_modalities = 4;
  spec.seed = 101;
  return spec;
}

TrainConfig benchmark_train(int epochs, double lr) {
  TrainConfig tc;
  tc.base_lr = lr;
  tc.epochs = epochs;
  tc.warmup_epochs = epochs / 10;
  tc.warmup_factor = 0.1;
  tc.batch_size = 4;
  tc.seed = 7;
  return tc;
}

void check_fusion_benefit(Benchmark& bench) {
  auto t0 = Clock::now();

  SceneSpec spec = benchmark_scene();
  Dataset pool = generate(spec, 96, Domain::source);
  bench.train.assign(pool.begin(), pool.begin() + 64);
  bench.test.assign(pool.begin() + 64, pool.end());
  bench.target = generate(spec, 32, Domain::target);

  bench.cfg.num_stages = 2;
  bench.cfg.channels_per_stage = {12, 24};
  bench.cfg.stage_stride = 2;
  bench.cfg.num_classes = 4;
  bench.fused.kind = FusionKind::average_fusion;
  bench.fused.drops_per_stage = 0;

  bench.fused_params = build_model_params<float>(bench.cfg, 7);
  train_supervised(bench.train, bench.fused_params, bench.cfg, bench.fused,
                   benchmark_train(100, 4e-3));
  bench.fused_miou = evaluate(bench.test, bench.fused_params, bench.cfg, bench.fused).miou;

  double best_solo = 0.0;
  for (int k = 0; k < 4; ++k) {
    ModelParams sp = build_model_params<float>(bench.cfg, 7);
    train_supervised(solo_view(bench.train, k), sp, bench.cfg, bench.fused,
                     benchmark_train(100, 4e-3));
    best_solo = std::max(best_solo,
                         evaluate(solo_view(bench.test, k), sp, bench.cfg, bench.fused).miou);
  }

  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool ok = bench.fused_miou >= 0.80 && bench.fused_miou >= best_solo + 0.05 && secs < 600.0;
  report(7, ok,
         "fusion benefit: fused " + fmt(bench.fused_miou) + ", best solo " + fmt(best_solo), t0);
}

void check_subset_robustness(const Benchmark& bench) {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  try {
    auto combos = enumerate_combinations(4);
    std::vector<std::vector<char>> masks;
    for (const auto& combo : combos) {
      std::vector<char> mask(4, 0);
      for (int slot : combo) mask[slot] = 1;
      masks.push_back(mask);
    }
    auto rows = evaluate_subsets(bench.test, bench.fused_params, bench.cfg, bench.fused, masks);
    if (rows.size() != 15) {
      ok = false;
      detail = "expected 15 subset rows, saw " + std::to_string(rows.size());
    } else if (rows.back().report.miou != bench.fused_miou) {
      ok = false;
      detail = "full-subset evaluation diverged from the standard one";
    }
    for (const auto& r : rows) {
      if (!std::isfinite(r.report.miou)) {
        ok = false;
        detail = "non-finite subset result";
      }
    }
  } catch (const Error& e) {
    ok = false;
    detail = e.what();
  }
  report(8, ok,
         ok ? "all 15 modality subsets evaluate; full subset is bit-exact"
            : "subset robustness: " + detail,
         t0);
}

void check_adaptation(const Benchmark& bench) {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;

  // A moderately trained source model leaves a recoverable domain gap.
  ModelParams teacher = build_model_params<float>(bench.cfg, 7);
  train_supervised(bench.train, teacher, bench.cfg, bench.fused, benchmark_train(60, 3e-3));
  const uint64_t checksum_before = teacher.value_checksum();
  const double teacher_miou =
      evaluate(bench.target, teacher, bench.cfg, bench.fused).miou;

  AdaptConfig ac;
  for (auto& combo : enumerate_combinations(4)) {
    if (combo.size() >= 3) ac.pseudo.combinations.push_back(combo);
  }
  ac.pseudo.threshold = 4;
  ac.train = benchmark_train(6, 1e-3);
  ac.train.warmup_epochs = 0;
  ac.train.seed = 11;
  ac.refresh_interval = 6;

  ModelParams student = teacher.cast<float>();
  adapt(teacher, student, bench.target, bench.cfg, bench.fused, ac);
  const double student_miou =
      evaluate(bench.target, student, bench.cfg, bench.fused).miou;
  const double gain = student_miou - teacher_miou;

  if (gain < 0.03) {
    ok = false;
    detail = "gain " + fmt(gain) + " below 0.03";
  }
  if (teacher.value_checksum() != checksum_before) {
    ok = false;
    detail = "teacher parameters changed during adaptation";
  }

  // Ignore-region neutrality: the loss gradient at every ignored pixel of a
  // real adaptation batch is exactly zero in every logit channel.
  if (ok) {
    PseudoLabelConfig pc;
    pc.combinations = ac.pseudo.combinations;
    pc.threshold = 4;
    auto pr = generate_pseudo_labels(teacher, bench.cfg, bench.fused, bench.target[0], pc);
    ModalityBundle bundle = make_bundle(bench.target[0]);
    LabelBatch labels = {pr.map};

    Tape tape;
    ParamNodesT<float> pn(tape, student);
    auto* logits = forward_on_tape<float>(tape, pn, student, bench.cfg, bench.fused, bundle);
    auto* probs = tape.softmax_channel(logits);
    Tensor teacher_probs =
        softmax_channel(forward(bundle, teacher, bench.cfg, bench.fused));
    auto* l_adapt = tape.masked_nll(probs, labels);
    auto* l_kl = tape.masked_kl(teacher_probs, probs, labels);
    tape.backward(tape.add(l_adapt, l_kl));

    int ignored = 0, labeled = 0;
    for (int h = 0; h < pr.map.height && ok; ++h) {
      for (int w = 0; w < pr.map.width && ok; ++w) {
        if (pr.map.at(h, w) != kIgnoreLabel) {
          ++labeled;
          continue;
        }
        ++ignored;
        for (int c = 0; c < bench.cfg.num_classes; ++c) {
          if (logits->grad.at(0, c, h, w) != 0.0f) {
            ok = false;
            detail = "nonzero gradient at an ignored pixel";
          }
        }
      }
    }
    if (ok && (ignored == 0 || labeled == 0)) {
      ok = false;
      detail = "degenerate pseudo-label map cannot witness neutrality";
    }
  }

  report(9, ok,
         ok ? "adaptation: teacher " + fmt(teacher_miou) + " -> student " + fmt(student_miou) +
                  ", frozen teacher, neutral ignore regions"
            : "adaptation: " + detail,
         t0);
}

// ---------------------------------------------------------------- check 10
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return status < 0 ? status : (status >> 8) & 0xff;
}

void check_determinism_and_formats(const std::string& cli) {
  auto t0 = Clock::now();
  bool ok = true;
  std::string detail;

  const fs::path work = fs::temp_directory_path() / "egfuse-acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // CLI determinism: identical config, identical bytes.
  {
    std::ofstream gen(work / "gen.cfg");
    gen << "scene.height = 16\nscene.width = 16\nscene.classes = 3\nscene.modalities = 3\n"
        << "gen.count = 4\ngen.domain = source\nseed = 5\n";
    gen.close();
    std::ofstream train(work / "train.cfg");
    train << "data.dir = " << (work / "data" / "dataset").string() << "\n"
          << "scene.classes = 3\nencoder.stages = 2\nencoder.channels = 6, 8\n"
          << "strategy.kind = average_fusion\nstrategy.drops_per_stage = 0\n"
          << "train.epochs = 2\ntrain.warmup_epochs = 1\ntrain.batch_size = 2\n"
          << "train.base_lr = 1e-3\nmodel.out = model.egc\nseed = 5\n";
    train.close();

    const std::string q = "\"" + cli + "\"";
    if (run(q + " gen-data --config " + (work / "gen.cfg").string() + " --out " +
            (work / "data").string() + " > /dev/null") != 0) {
      ok = false;
      detail = "gen-data failed";
    }
    for (const char* tag : {"a", "b"}) {
      if (ok && run(q + " train --config " + (work / "train.cfg").string() + " --out " +
                    (work / tag).string() + " > /dev/null") != 0) {
        ok = false;
        detail = "train run failed";
      }
    }
    if (ok && slurp(work / "a" / "metrics.csv") != slurp(work / "b" / "metrics.csv")) {
      ok = false;
      detail = "repeated training produced different CSV bytes";
    }
    if (ok && slurp(work / "a" / "model.egc") != slurp(work / "b" / "model.egc")) {
      ok = false;
      detail = "repeated training produced different checkpoints";
    }
    if (ok && slurp(work / "a" / "model.egc").empty()) {
      ok = false;
      detail = "checkpoint artifact missing";
    }
  }

  // Format round-trips and rejection.
  if (ok) {
    std::mt19937_64 rng(17);
    std::normal_distribution<float> dist(0.0f, 2.0f);
    Tensor t(2, 3, 5, 4);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    const std::string tensor_path = (work / "t.egt").string();
    write_tensor_file(tensor_path, t);
    Tensor back = read_tensor_file(tensor_path);
    if (!back.same_shape(t) || back.raw() != t.raw()) {
      ok = false;
      detail = "tensor round-trip not bit-exact";
    }

    LabelMap lm(6, 7, 2);
    lm.at(0, 0) = kIgnoreLabel;
    lm.at(5, 6) = 1;
    write_label_file((work / "l.egl").string(), lm);
    LabelMap lback = read_label_file((work / "l.egl").string());
    if (ok && (lback.height != lm.height || lback.width != lm.width || lback.ids != lm.ids)) {
      ok = false;
      detail = "label round-trip not bit-exact";
    }

    EncoderConfig small;
    small.num_stages = 1;
    small.channels_per_stage = {4};
    small.num_classes = 2;
    ModelParams mp = build_model_params<float>(small, 23);
    write_checkpoint((work / "m.egc").string(), mp);
    ModelParams mback = read_checkpoint((work / "m.egc").string());
    if (ok && mback.value_checksum() != mp.value_checksum()) {
      ok = false;
      detail = "checkpoint round-trip changed the parameter bytes";
    }

    // Malformed magic.
    if (ok) {
      std::string bytes = slurp(work / "t.egt");
      bytes[0] = 'X';
      std::ofstream bad(work / "bad.egt", std::ios::binary);
      bad << bytes;
      bad.close();
      try {
        read_tensor_file((work / "bad.egt").string());
        ok = false;
        detail = "bad magic was accepted";
      } catch (const FormatError&) {
      }
    }
    // Truncation.
    if (ok) {
      std::string bytes = slurp(work / "t.egt");
      bytes.resize(bytes.size() - 3);
      std::ofstream bad(work / "short.egt", std::ios::binary);
      bad << bytes;
      bad.close();
      try {
        read_tensor_file((work / "short.egt").string());
        ok = false;
        detail = "truncated payload was accepted";
      } catch (const FormatError&) {
      }
    }
  }

  report(10, ok,
         ok ? "determinism and formats: identical artifacts, bit-exact round-trips, malformed "
              "files rejected"
            : "determinism/formats: " + detail,
         t0);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-cli-binary>\n");
    return 2;
  }

  check_gradients();
  check_scoring_oracle();
  check_compensation_oracle();
  check_vote_oracle();
  check_metric_arithmetic();
  check_efficiency();

  Benchmark bench;
  check_fusion_benefit(bench);
  check_subset_robustness(bench);
  check_adaptation(bench);
  check_determinism_and_formats(argv[1]);

  if (g_failures > 0) {
    std::printf("%d criterion failure(s)\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
