// SPDX-License-Identifier: Apache-2.0
//
// egfuse command-line harness. Every command reads one flat config file,
// writes deterministic artifacts under --out, and reports failures through
// typed exit codes: 2 for configuration problems, 3 for data/format problems,
// 4 for numeric failures.
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "egfuse/csv.hpp"
#include "egfuse/efficiency.hpp"
#include "egfuse/io.hpp"
#include "egfuse/pipeline.hpp"
#include "egfuse/pseudo_label.hpp"
#include "egfuse/runconfig.hpp"
#include "egfuse/scoring.hpp"
#include "egfuse/synth.hpp"
#include "egfuse/uda.hpp"

namespace fs = std::filesystem;
using namespace egfuse;

namespace {

const std::set<std::string> kKnownKeys = {
    // scene / generation
    "scene.height", "scene.width", "scene.classes", "scene.modalities", "scene.shapes_min",
    "scene.shapes_max", "scene.shape_min_size", "scene.shape_max_size", "scene.noise_sigma",
    "scene.target_gain", "scene.target_bias", "scene.target_noise", "gen.count", "gen.domain",
    // encoder
    "encoder.stages", "encoder.channels", "encoder.stride",
    // fusion strategy
    "strategy.kind", "strategy.drops_per_stage", "strategy.scope", "strategy.seed",
    // training
    "train.base_lr", "train.poly_power", "train.warmup_epochs", "train.warmup_factor",
    "train.epochs", "train.batch_size", "train.weight_decay", "train.hflip", "train.crop",
    // pseudo-labels / adaptation
    "pseudo.threshold", "pseudo.combinations", "adapt.refresh_interval", "adapt.eval_each_epoch",
    // file plumbing
    "data.dir", "model.in", "model.out",
    // feature scoring
    "score.stage", "score.features",
    // misc
    "seed",
};

struct Ctx {
  RunConfig cfg;
  std::string out_dir;
  uint64_t seed = 0;
  std::string subset_arg;  // --subset override for eval/vote
};

std::vector<double> double_list(const RunConfig& cfg, const std::string& key,
                                const std::vector<double>& fallback) {
  return cfg.get_double_list(key, fallback);
}

SceneSpec scene_from(const Ctx& ctx) {
  const RunConfig& c = ctx.cfg;
  SceneSpec spec;
  spec.height = static_cast<int>(c.get_int("scene.height", 32));
  spec.width = static_cast<int>(c.get_int("scene.width", 32));
  spec.num_classes = static_cast<int>(c.get_int("scene.classes", 4));
  spec.num_modalities = static_cast<int>(c.get_int("scene.modalities", 4));
  spec.shapes_min = static_cast<int>(c.get_int("scene.shapes_min", 3));
  spec.shapes_max = static_cast<int>(c.get_int("scene.shapes_max", 5));
  spec.shape_min_size = static_cast<int>(c.get_int("scene.shape_min_size", 6));
  spec.shape_max_size = static_cast<int>(c.get_int("scene.shape_max_size", 14));
  spec.noise_sigma = c.get_double("scene.noise_sigma", 0.02);
  spec.target_gain = double_list(c, "scene.target_gain", spec.target_gain);
  spec.target_bias = double_list(c, "scene.target_bias", spec.target_bias);
  spec.target_noise = double_list(c, "scene.target_noise", spec.target_noise);
  spec.seed = ctx.seed;
  return spec;
}

EncoderConfig encoder_from(const Ctx& ctx) {
  const RunConfig& c = ctx.cfg;
  EncoderConfig cfg;
  cfg.num_stages = static_cast<int>(c.get_int("encoder.stages", 4));
  cfg.channels_per_stage = c.get_int_list("encoder.channels", {8, 16, 24, 32});
  cfg.stage_stride = static_cast<int>(c.get_int("encoder.stride", 2));
  cfg.num_classes = static_cast<int>(c.get_int("scene.classes", 4));
  return cfg;
}

FusionStrategy strategy_from(const Ctx& ctx) {
  const RunConfig& c = ctx.cfg;
  FusionStrategy s;
  s.kind = fusion_kind_from_string(c.get_string("strategy.kind", "score_drop"));
  s.drops_per_stage = static_cast<int>(
      c.get_int("strategy.drops_per_stage", s.kind == FusionKind::average_fusion ? 0 : 1));
  const std::string scope = c.get_string("strategy.scope", "dropped");
  if (scope == "dropped") {
    s.scope = CompensationScope::dropped;
  } else if (scope == "all_others") {
    s.scope = CompensationScope::all_others;
  } else {
    throw ConfigError("config: strategy.scope must be 'dropped' or 'all_others', got '" + scope +
                      "'");
  }
  s.seed = c.get_uint("strategy.seed", ctx.seed);
  s.validate();
  return s;
}

TrainConfig train_from(const Ctx& ctx) {
  const RunConfig& c = ctx.cfg;
  TrainConfig t;
  t.base_lr = c.get_double("train.base_lr", 6e-5);
  t.poly_power = c.get_double("train.poly_power", 0.9);
  t.warmup_epochs = static_cast<int>(c.get_int("train.warmup_epochs", 10));
  t.warmup_factor = c.get_double("train.warmup_factor", 0.1);
  t.epochs = static_cast<int>(c.get_int("train.epochs", 200));
  t.batch_size = static_cast<int>(c.get_int("train.batch_size", 2));
  t.adamw.weight_decay = c.get_double("train.weight_decay", 1e-2);
  t.hflip = c.get_bool("train.hflip", false);
  t.crop = static_cast<int>(c.get_int("train.crop", 0));
  t.seed = ctx.seed;
  t.validate();
  return t;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  size_t b = s.find_last_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

/// "rgb+depth" -> slots resolved against the dataset's modality names.
std::vector<int> parse_combo(const std::string& text, const std::vector<std::string>& names) {
  std::vector<std::vector<std::string>> requested(1);
  for (const std::string& part : split(text, '+')) {
    const std::string name = trim(part);
    if (!name.empty()) requested[0].push_back(name);
  }
  if (requested[0].empty()) throw ConfigError("config: empty modality subset '" + text + "'");
  return combinations_from_names(names, requested)[0];
}

std::vector<std::vector<int>> combos_from(const Ctx& ctx, const std::vector<std::string>& names,
                                          const std::string& key, const std::string& fallback) {
  const std::string text = ctx.cfg.get_string(key, fallback);
  if (trim(text) == "all") return enumerate_combinations(static_cast<int>(names.size()));
  std::vector<std::vector<int>> combos;
  for (const std::string& part : split(text, ';')) {
    if (trim(part).empty()) continue;
    combos.push_back(parse_combo(part, names));
  }
  if (combos.empty()) throw ConfigError("config: " + key + " names no subsets");
  return combos;
}

std::string joined_names(const std::vector<std::string>& names, const std::vector<int>& combo) {
  std::string out;
  for (int slot : combo) {
    if (!out.empty()) out += "+";
    out += names[slot];
  }
  return out;
}

std::vector<char> combo_mask(const std::vector<int>& combo, size_t n) {
  std::vector<char> mask(n, 0);
  for (int slot : combo) mask[slot] = 1;
  return mask;
}

Dataset load_dataset(const Ctx& ctx) {
  return read_dataset(ctx.cfg.get_string("data.dir"));
}

ModelParams load_model(const Ctx& ctx) {
  return read_checkpoint(ctx.cfg.get_string("model.in"));
}

std::string out_path(const Ctx& ctx, const std::string& name) {
  return (fs::path(ctx.out_dir) / name).string();
}

void write_csv(const Ctx& ctx, const MetricsCsv& csv) {
  csv.write(out_path(ctx, "metrics.csv"));
}

// --- commands ---

int cmd_gen_data(const Ctx& ctx) {
  SceneSpec spec = scene_from(ctx);
  const int count = static_cast<int>(ctx.cfg.get_int("gen.count", 16));
  const std::string domain_name = ctx.cfg.get_string("gen.domain", "source");
  Domain domain;
  if (domain_name == "source") {
    domain = Domain::source;
  } else if (domain_name == "target") {
    domain = Domain::target;
  } else {
    throw ConfigError("config: gen.domain must be 'source' or 'target', got '" + domain_name +
                      "'");
  }
  Dataset data = generate(spec, count, domain);
  write_dataset(out_path(ctx, "dataset"), data);
  std::cout << "wrote " << data.size() << " " << domain_name << " samples to "
            << out_path(ctx, "dataset") << "\n";
  return 0;
}

int cmd_train(const Ctx& ctx) {
  Dataset data = load_dataset(ctx);
  if (data.empty()) throw DataError("train: dataset is empty");
  EncoderConfig cfg = encoder_from(ctx);
  FusionStrategy strategy = strategy_from(ctx);
  TrainConfig tcfg = train_from(ctx);

  ModelParams params = build_model_params<float>(cfg, ctx.seed);
  TrainResult result = train_supervised(data, params, cfg, strategy, tcfg);

  const std::string ckpt = ctx.cfg.get_string("model.out", "model.egc");
  write_checkpoint(out_path(ctx, ckpt), params);

  const std::string run_id = make_run_id(ctx.cfg.text(), "train", ctx.seed);
  const std::string subset = joined_names(
      data[0].modality_names,
      enumerate_combinations(static_cast<int>(data[0].modality_names.size())).back());
  MetricsCsv csv;
  for (size_t e = 0; e < result.epoch_loss.size(); ++e) {
    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "train";
    row.subset = subset;
    row.cls = "mean";
    row.loss_adapt = result.epoch_loss[e];  // supervised cross-entropy
    row.epoch = static_cast<int64_t>(e);
    csv.add(row);
  }
  write_csv(ctx, csv);
  std::cout << "trained " << tcfg.epochs << " epochs; final loss "
            << result.epoch_loss.back() << "; checkpoint " << out_path(ctx, ckpt) << "\n";
  return 0;
}

int cmd_eval(const Ctx& ctx) {
  Dataset data = load_dataset(ctx);
  if (data.empty()) throw DataError("eval: dataset is empty");
  EncoderConfig cfg = encoder_from(ctx);
  FusionStrategy strategy = strategy_from(ctx);
  ModelParams params = load_model(ctx);

  const auto& names = data[0].modality_names;
  std::vector<std::vector<int>> combos;
  if (!ctx.subset_arg.empty() && trim(ctx.subset_arg) != "all") {
    for (const std::string& part : split(ctx.subset_arg, ',')) {
      if (trim(part).empty()) continue;
      combos.push_back(parse_combo(part, names));
    }
    if (combos.empty()) throw ConfigError("eval: --subset names no subsets");
  } else {
    combos = enumerate_combinations(static_cast<int>(names.size()));
  }

  std::vector<std::vector<char>> masks;
  for (const auto& combo : combos) masks.push_back(combo_mask(combo, names.size()));
  auto rows = evaluate_subsets(data, params, cfg, strategy, masks);

  const std::string run_id = make_run_id(ctx.cfg.text(), "eval", ctx.seed);
  MetricsCsv csv;
  for (const auto& r : rows) {
    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "eval";
    row.subset = r.names;
    row.cls = "mean";
    row.miou = r.report.miou;
    csv.add(row);
    std::cout << r.names << " miou " << MetricsCsv::format_double(r.report.miou) << "\n";
  }
  write_csv(ctx, csv);
  return 0;
}

int cmd_adapt(const Ctx& ctx) {
  Dataset target = load_dataset(ctx);
  if (target.empty()) throw DataError("adapt: dataset is empty");
  EncoderConfig cfg = encoder_from(ctx);
  FusionStrategy strategy = strategy_from(ctx);
  ModelParams teacher = load_model(ctx);

  const auto& names = target[0].modality_names;
  AdaptConfig acfg;
  acfg.pseudo.combinations = combos_from(ctx, names, "pseudo.combinations", "all");
  acfg.pseudo.threshold = static_cast<int>(ctx.cfg.get_int("pseudo.threshold", 2));
  acfg.train = train_from(ctx);
  acfg.refresh_interval = static_cast<int>(ctx.cfg.get_int("adapt.refresh_interval", 1));
  const bool eval_each = ctx.cfg.get_bool("adapt.eval_each_epoch", false);

  ModelParams student = teacher.cast<float>();
  AdaptResult result = adapt(teacher, student, target, cfg, strategy, acfg, eval_each);

  const std::string ckpt = ctx.cfg.get_string("model.out", "student.egc");
  write_checkpoint(out_path(ctx, ckpt), student);

  const std::string run_id = make_run_id(ctx.cfg.text(), "adapt", ctx.seed);
  const std::string subset =
      joined_names(names, enumerate_combinations(static_cast<int>(names.size())).back());
  MetricsCsv csv;
  for (size_t e = 0; e < result.epoch_loss_total.size(); ++e) {
    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "adapt";
    row.subset = subset;
    row.cls = "mean";
    row.iou = result.epoch_coverage[e];  // pseudo-label coverage
    if (eval_each) row.miou = result.epoch_target_miou[e];
    row.loss_adapt = result.epoch_loss_adapt[e];
    row.loss_kl = result.epoch_loss_kl[e];
    row.epoch = static_cast<int64_t>(e);
    csv.add(row);
  }
  write_csv(ctx, csv);
  std::cout << "adapted " << acfg.train.epochs << " epochs; student checkpoint "
            << out_path(ctx, ckpt) << "\n";
  return 0;
}

int cmd_vote(const Ctx& ctx) {
  Dataset data = load_dataset(ctx);
  if (data.empty()) throw DataError("vote: dataset is empty");
  EncoderConfig cfg = encoder_from(ctx);
  FusionStrategy strategy = strategy_from(ctx);
  ModelParams teacher = load_model(ctx);

  const auto& names = data[0].modality_names;
  PseudoLabelConfig pcfg;
  if (!ctx.subset_arg.empty()) {
    for (const std::string& part : split(ctx.subset_arg, ',')) {
      if (trim(part).empty()) continue;
      pcfg.combinations.push_back(parse_combo(part, names));
    }
  } else {
    pcfg.combinations = combos_from(ctx, names, "pseudo.combinations", "all");
  }
  pcfg.threshold = static_cast<int>(ctx.cfg.get_int("pseudo.threshold", 2));
  pcfg.validate(static_cast<int>(names.size()));

  const std::string run_id = make_run_id(ctx.cfg.text(), "vote", ctx.seed);
  MetricsCsv csv;
  for (size_t i = 0; i < data.size(); ++i) {
    PseudoResult result = generate_pseudo_labels(teacher, cfg, strategy, data[i], pcfg);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu", i);
    write_label_file(out_path(ctx, std::string(name) + ".egl"), result.map);

    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "vote";
    row.subset = name;
    row.cls = "coverage";
    row.iou = result.coverage;
    csv.add(row);
  }
  write_csv(ctx, csv);
  std::cout << "voted pseudo-labels for " << data.size() << " samples\n";
  return 0;
}

int cmd_flops(const Ctx& ctx) {
  EncoderConfig cfg = encoder_from(ctx);
  FusionStrategy strategy = strategy_from(ctx);
  const int modalities = static_cast<int>(ctx.cfg.get_int("scene.modalities", 4));
  const int h = static_cast<int>(ctx.cfg.get_int("scene.height", 32));
  const int w = static_cast<int>(ctx.cfg.get_int("scene.width", 32));

  ModelParams params = build_model_params<float>(cfg, ctx.seed);
  auto configured = count_efficiency(params, cfg, strategy, modalities, 1, h, w);

  FusionStrategy baseline;
  baseline.kind = FusionKind::average_fusion;
  baseline.drops_per_stage = 0;
  auto averaged = count_efficiency(params, cfg, baseline, modalities, 1, h, w);

  const std::string run_id = make_run_id(ctx.cfg.text(), "flops", ctx.seed);
  MetricsCsv csv;
  for (const auto& [name, report] :
       {std::pair<std::string, const EfficiencyReport&>{to_string(strategy.kind), configured},
        std::pair<std::string, const EfficiencyReport&>{to_string(baseline.kind), averaged}}) {
    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "flops";
    row.subset = name;
    row.cls = "mean";
    row.flops = report.flops;
    row.params = report.param_count;
    csv.add(row);
    std::cout << name << " flops " << report.flops << " params " << report.param_count << "\n";
  }
  write_csv(ctx, csv);
  return 0;
}

int cmd_score(const Ctx& ctx) {
  ModelParams params = load_model(ctx);
  const int stage = static_cast<int>(ctx.cfg.get_int("score.stage", 0));
  std::vector<Tensor> features;
  std::vector<std::string> labels;
  for (const std::string& part : split(ctx.cfg.get_string("score.features"), ',')) {
    const std::string path = trim(part);
    if (path.empty()) continue;
    features.push_back(read_tensor_file(path));
    labels.push_back(fs::path(path).stem().string());
  }
  if (features.empty()) throw ConfigError("score: score.features names no files");

  auto report = score_modalities(features, StageScoringParams<float>::from(params, stage));

  const std::string run_id = make_run_id(ctx.cfg.text(), "score", ctx.seed);
  MetricsCsv csv;
  for (size_t k = 0; k < features.size(); ++k) {
    MetricsCsv::Row row;
    row.run_id = run_id;
    row.command = "score";
    row.subset = labels[k];
    row.cls = std::to_string(k);
    row.iou = report.batch_mean[k];
    csv.add(row);
    std::cout << labels[k] << " score " << MetricsCsv::format_double(report.batch_mean[k]) << "\n";
  }
  MetricsCsv::Row drop;
  drop.run_id = run_id;
  drop.command = "score";
  drop.subset = labels[report.drop_index];
  drop.cls = "drop";
  drop.epoch = report.drop_index;
  csv.add(drop);
  write_csv(ctx, csv);
  std::cout << "drop index " << report.drop_index << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"egfuse: multimodal fusion segmentation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  std::optional<uint64_t> seed_override;
  std::string subset_arg;

  const std::vector<std::pair<std::string, int (*)(const Ctx&)>> commands = {
      {"gen-data", cmd_gen_data}, {"train", cmd_train}, {"eval", cmd_eval},
      {"adapt", cmd_adapt},       {"vote", cmd_vote},   {"flops", cmd_flops},
      {"score", cmd_score},
  };

  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "path to the run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (default: runs)");
    sub->add_option("--seed", seed_override, "seed override");
    if (name == "eval" || name == "vote") {
      sub->add_option("--subset", subset_arg,
                      "comma list of modality subsets like rgb+depth,event (eval default: all)");
    }
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Ctx ctx;
    ctx.cfg = RunConfig::parse_file(config_path);
    ctx.cfg.require_known(kKnownKeys);
    ctx.seed = seed_override ? *seed_override : ctx.cfg.get_uint("seed", 0);
    ctx.out_dir = out_dir;
    ctx.subset_arg = subset_arg;
    fs::create_directories(ctx.out_dir);

    for (const auto& [name, fn] : commands) {
      if (app.get_subcommand(name)->parsed()) return fn(ctx);
    }
    std::cerr << "error: no command selected\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
