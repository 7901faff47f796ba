#include "mcibi/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace mcibi {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

DatasetBundle build_datasets(const ExperimentConfig& cfg) {
  DatasetBundle out;
  out.is_video = cfg.video.history > 0;
  if (cfg.data.source == "synthetic") {
    SyntheticConfig sc;
    sc.num_classes = cfg.model.num_classes;
    sc.size = cfg.data.size;
    sc.noise_level = cfg.data.noise_level;
    sc.class_presence_prob = cfg.data.class_presence_prob;
    sc.ignore_index = cfg.data.ignore_index;
    if (out.is_video) {
      sc.seed = cfg.data.seed * 2;
      sc.num_images = cfg.data.train_images;
      out.train_clips = generate_synthetic_clips(sc, cfg.video.history);
      sc.seed = cfg.data.seed * 2 + 1;
      sc.num_images = cfg.data.val_images;
      out.val_clips = generate_synthetic_clips(sc, cfg.video.history);
      // image views of the target frames, for prescan init
      for (const auto& c : out.train_clips) {
        SegmentationSample s;
        s.image = c.frames.back();
        s.labels = c.labels;
        s.height = c.height;
        s.width = c.width;
        s.id = c.id;
        out.train.push_back(std::move(s));
      }
    } else {
      sc.seed = cfg.data.seed * 2;
      sc.num_images = cfg.data.train_images;
      out.train = generate_synthetic_dataset(sc);
      sc.seed = cfg.data.seed * 2 + 1;
      sc.num_images = cfg.data.val_images;
      out.val = generate_synthetic_dataset(sc);
    }
  } else {
    if (out.is_video) {
      out.train_clips = load_clip_manifest(cfg.data.manifest_train, cfg.video.history);
      out.val_clips = load_clip_manifest(cfg.data.manifest_val, cfg.video.history);
    } else {
      out.train = load_manifest(cfg.data.manifest_train);
      out.val = load_manifest(cfg.data.manifest_val);
    }
  }
  return out;
}

void prescan_init_bank(MemoryBank& bank, const Segmentor& model,
                       const std::vector<SegmentationSample>& train, uint64_t seed,
                       int ignore_index) {
  const int z = bank.feature_dim();
  Rng rng(seed);
  std::map<int, std::pair<std::vector<double>, int64_t>> picked;  // class -> (pixel, seen)
  for (const auto& sample : train) {
    auto features = model.backbone(sample.image);
    Tensor full = upsample_features(features->value, features->value.dim(1) * 8,
                                    features->value.dim(2) * 8);
    auto cropped = ag::crop(ag::constant(full), sample.height, sample.width)->value;
    const int hw = sample.height * sample.width;
    for (int i = 0; i < hw; ++i) {
      int lab = sample.labels[static_cast<size_t>(i)];
      if (lab == ignore_index) continue;
      auto& [pixel, seen] = picked[lab];
      ++seen;
      // reservoir of size one over every labeled pixel of the split
      if (seen == 1 || rng.uniform() < 1.0 / static_cast<double>(seen)) {
        pixel.resize(static_cast<size_t>(z));
        for (int c = 0; c < z; ++c) pixel[static_cast<size_t>(c)] = cropped[c * hw + i];
      }
    }
  }
  for (const auto& [cls, entry] : picked) {
    const auto& pixel = entry.first;
    double mean = 0.0;
    for (double v : pixel) mean += v;
    mean /= z;
    double var = 0.0;
    for (double v : pixel) var += (v - mean) * (v - mean);
    bank.set_row(cls, mean, std::sqrt(var / z), true);
  }
}

namespace {

std::string loss_line(int iter, double lr, const LossReport& rep, const MemoryBank& bank) {
  double mean_abs = 0.0, std_sum = 0.0;
  for (int c = 0; c < bank.num_classes(); ++c) {
    mean_abs += std::fabs(bank.mean_of(c));
    std_sum += bank.std_of(c);
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "iter=" << iter << " lr=" << lr << " loss_w=" << rep.loss_w
     << " loss_o=" << rep.loss_o << " total=" << rep.total
     << " bank_mean_abs=" << mean_abs / bank.num_classes()
     << " bank_std=" << std_sum / bank.num_classes();
  return os.str();
}

}  // namespace

TrainOutput run_training(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::string& resume_from, bool force_resume) {
  cfg.validate();
  fs::create_directories(out_dir);
  save_config(cfg, out_dir + "/config.txt");

  DatasetBundle data = build_datasets(cfg);
  ModelConfig mc = cfg.resolved_model();
  Segmentor model(mc, cfg.training.seed);
  MemoryBank bank(mc.num_classes, mc.feature_dim, cfg.memory.momentum);
  nn::SgdOptimizer opt(cfg.training.lr, cfg.training.sgd_momentum,
                       cfg.training.weight_decay, cfg.training.iterations);

  int start_iter = 0;
  if (!resume_from.empty()) {
    CheckpointMeta meta = load_checkpoint(resume_from, model.params(), opt, bank);
    if (meta.config_hash != cfg.hash() && !force_resume)
      throw ConfigError("resume refused: checkpoint config hash mismatch (use force)");
    start_iter = meta.iteration;
  } else if (!cfg.memory.update) {
    Rng frozen_rng(cfg.training.seed ^ 0xf203e7ULL);
    bank.randomize(frozen_rng);
  } else if (cfg.memory.init_policy == "prescan") {
    prescan_init_bank(bank, model, data.train, cfg.training.seed ^ 0x5ca9ULL,
                      mc.ignore_index);
  }

  std::ofstream log(out_dir + "/train.log", start_iter > 0 ? std::ios::app : std::ios::out);
  Rng batch_rng(cfg.training.seed ^ 0xba7c4ULL);
  TrainOutput out;

  const int n_train = data.is_video ? static_cast<int>(data.train_clips.size())
                                    : static_cast<int>(data.train.size());
  if (n_train == 0) throw std::runtime_error("run_training: empty train split");

  for (int iter = start_iter; iter < cfg.training.iterations; ++iter) {
    Segmentor::StepResult step;
    uint64_t step_seed = batch_rng.raw();
    if (data.is_video) {
      std::vector<const VideoClip*> batch;
      for (int b = 0; b < cfg.training.batch_size; ++b)
        batch.push_back(&data.train_clips[static_cast<size_t>(batch_rng.uniform_int(n_train))]);
      step = model.train_step_video(batch, bank, opt, iter, step_seed, cfg.memory.update);
    } else {
      std::vector<const SegmentationSample*> batch;
      for (int b = 0; b < cfg.training.batch_size; ++b)
        batch.push_back(&data.train[static_cast<size_t>(batch_rng.uniform_int(n_train))]);
      step = model.train_step(batch, bank, opt, iter, step_seed, cfg.memory.update);
    }
    if (!step.applied) {
      log << "iter=" << iter << " ABORTED: non-finite loss total=" << step.loss.total
          << "\n";
      throw std::runtime_error("training aborted: non-finite loss at iteration " +
                               std::to_string(iter));
    }
    out.final_loss = step.loss;
    if ((iter + 1) % cfg.training.log_interval == 0 || iter == start_iter)
      log << loss_line(iter, opt.lr_at(iter), step.loss, bank) << "\n";
    if ((iter + 1) % cfg.training.checkpoint_interval == 0) {
      CheckpointMeta meta{cfg.hash(), iter + 1};
      save_checkpoint(out_dir + "/ckpt_" + std::to_string(iter + 1) + ".bin",
                      model.params(), opt, bank, meta);
    }
  }

  out.final_iteration = cfg.training.iterations;
  out.checkpoint_path = out_dir + "/final.bin";
  CheckpointMeta meta{cfg.hash(), cfg.training.iterations};
  save_checkpoint(out.checkpoint_path, model.params(), opt, bank, meta);
  return out;
}

EvalOutput run_evaluation(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                          const EvalOptions& opts) {
  cfg.validate();
  if (opts.iis_stages < 1) throw ConfigError("eval: iis stages must be >= 1");

  DatasetBundle data = build_datasets(cfg);
  ModelConfig mc = cfg.resolved_model();
  Segmentor model(mc, cfg.training.seed);
  MemoryBank bank(mc.num_classes, mc.feature_dim, cfg.memory.momentum);
  nn::SgdOptimizer opt;
  load_checkpoint(checkpoint_path, model.params(), opt, bank);

  if (opts.frozen_memory) {
    Rng rng(opts.seed ^ 0xf203e7ULL);
    bank.randomize(rng);
  }

  EvalOutput out;
  out.diagnostic = opts.gt_weights || opts.frozen_memory;
  const int stages = mc.use_dca && !data.is_video ? opts.iis_stages : 1;
  std::vector<ConfusionAccumulator> acc(
      static_cast<size_t>(stages), ConfusionAccumulator(mc.num_classes, mc.ignore_index));
  out.stage_seconds.assign(static_cast<size_t>(stages), 0.0);

  Rng seed_rng(opts.seed);
  auto t0 = std::chrono::steady_clock::now();
  if (data.is_video) {
    for (const auto& clip : data.val_clips) {
      auto f = model.forward_video(clip, bank, seed_rng.raw());
      acc[0].add(model.predict_labels(f), clip.labels);
    }
  } else {
    for (const auto& sample : data.val) {
      uint64_t s = seed_rng.raw();
      if (opts.gt_weights) {
        acc[0].add(gt_weight_oracle(sample.image, sample.labels, model, bank, s),
                   sample.labels);
      } else {
        IISConfig iis{stages};
        auto result = run_iis(sample.image, model, bank, iis, s);
        for (int st = 0; st < static_cast<int>(result.per_stage.size()); ++st) {
          acc[static_cast<size_t>(st)].add(result.per_stage[static_cast<size_t>(st)],
                                           sample.labels);
          out.stage_seconds[static_cast<size_t>(st)] +=
              result.stage_seconds[static_cast<size_t>(st)];
        }
      }
    }
  }
  out.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const auto& a : acc) out.per_stage.push_back(a.report());
  out.final_report = out.per_stage.back();
  return out;
}

void write_eval_report(const EvalOutput& out, const ExperimentConfig& cfg,
                       const EvalOptions& opts, const std::string& prefix) {
  fs::create_directories(fs::path(prefix).parent_path().empty()
                             ? "."
                             : fs::path(prefix).parent_path().string());
  ordered_json j;
  j["kind"] = out.diagnostic ? "diagnostic" : "standard";
  j["config"] = cfg.canonical_text();
  j["config_hash"] = cfg.hash();
  j["eval_seed"] = opts.seed;
  j["iis_stages"] = opts.iis_stages;
  j["gt_weights"] = opts.gt_weights;
  j["frozen_memory"] = opts.frozen_memory;
  j["miou"] = out.final_report.miou;
  j["pixel_accuracy"] = out.final_report.pixel_accuracy;
  j["mean_class_accuracy"] = out.final_report.mean_class_accuracy;
  j["per_class_iou"] = out.final_report.per_class_iou;
  j["evaluated_pixels"] = out.final_report.evaluated_pixels;
  std::vector<double> stage_miou;
  for (const auto& r : out.per_stage) stage_miou.push_back(r.miou);
  j["per_stage_miou"] = stage_miou;
  j["stage_seconds"] = out.stage_seconds;
  j["total_seconds"] = out.total_seconds;
  std::ofstream(prefix + ".json") << j.dump(2) << "\n";

  std::ostringstream txt;
  if (out.diagnostic) txt << "### DIAGNOSTIC RUN (not a standard result) ###\n";
  txt << out.final_report.to_table();
  txt << "stages          " << out.per_stage.size() << "\n";
  for (size_t i = 0; i < out.per_stage.size(); ++i)
    txt << "stage " << (i + 1) << " mIoU    " << std::fixed << std::setprecision(4)
        << out.per_stage[i].miou << "  (" << std::setprecision(3)
        << out.stage_seconds[i] << "s)\n";
  std::ofstream(prefix + ".txt") << txt.str();

  // per-stage mIoU bar chart
  std::ostringstream svg;
  const int bw = 60, gap = 20, height = 220, base = 190;
  int width = gap + static_cast<int>(out.per_stage.size()) * (bw + gap);
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << std::max(width, 160)
      << "' height='" << height << "'>\n";
  for (size_t i = 0; i < out.per_stage.size(); ++i) {
    double v = out.per_stage[i].miou;
    int h = static_cast<int>(v * 160.0);
    int x = gap + static_cast<int>(i) * (bw + gap);
    svg << "<rect x='" << x << "' y='" << base - h << "' width='" << bw << "' height='"
        << h << "' fill='#4878a8'/>\n";
    svg << "<text x='" << x + bw / 2 << "' y='" << base + 16
        << "' text-anchor='middle' font-size='12'>s" << (i + 1) << "</text>\n";
    svg << "<text x='" << x + bw / 2 << "' y='" << base - h - 6
        << "' text-anchor='middle' font-size='11'>" << std::fixed << std::setprecision(3)
        << v << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream(prefix + ".svg") << svg.str();
}

AblationResult run_ablation(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                            const std::vector<uint64_t>& seeds,
                            const std::string& out_dir) {
  if (grid.empty()) throw ConfigError("ablation: empty grid");
  for (const auto& axis : grid) {
    ExperimentConfig probe = base;
    probe.set_key(axis.key, axis.values.at(0));  // throws for unknown keys
  }

  // cross product of axes
  std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
  for (const auto& axis : grid) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& cell : cells)
      for (const auto& v : axis.values) {
        auto c = cell;
        c.emplace_back(axis.key, v);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }

  AblationResult result;
  int cell_idx = 0;
  for (const auto& assignment : cells) {
    AblationCell cell;
    cell.assignment = assignment;
    for (uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      for (const auto& [k, v] : assignment) cfg.set_key(k, v);
      cfg.training.seed = seed;
      cfg.validate();
      std::string run_dir =
          out_dir + "/cell" + std::to_string(cell_idx) + "_seed" + std::to_string(seed);
      TrainOutput train = run_training(cfg, run_dir);
      EvalOptions opts;
      opts.iis_stages = cfg.inference.iis_stages;
      opts.seed = seed ^ 0xeba1ULL;
      EvalOutput eval = run_evaluation(cfg, train.checkpoint_path, opts);
      write_eval_report(eval, cfg, opts, run_dir + "/report");
      cell.miou_per_seed.push_back(eval.final_report.miou);
    }
    double sum = 0.0;
    for (double v : cell.miou_per_seed) sum += v;
    cell.mean_miou = sum / static_cast<double>(cell.miou_per_seed.size());
    result.cells.push_back(std::move(cell));
    ++cell_idx;
  }

  std::ostringstream table;
  table << std::fixed << std::setprecision(4);
  for (const auto& cell : result.cells) {
    for (const auto& [k, v] : cell.assignment) table << k << "=" << v << " ";
    table << "| mIoU " << cell.mean_miou << " (seeds:";
    for (double v : cell.miou_per_seed) table << " " << v;
    table << ") | delta " << cell.mean_miou - result.cells.front().mean_miou << "\n";
  }
  result.table_text = table.str();

  fs::create_directories(out_dir);
  std::ofstream(out_dir + "/ablation.txt") << result.table_text;
  ordered_json j = ordered_json::array();
  for (const auto& cell : result.cells) {
    ordered_json c;
    for (const auto& [k, v] : cell.assignment) c["assignment"][k] = v;
    c["miou_per_seed"] = cell.miou_per_seed;
    c["mean_miou"] = cell.mean_miou;
    j.push_back(c);
  }
  std::ofstream(out_dir + "/ablation.json") << j.dump(2) << "\n";
  return result;
}

}  // namespace mcibi
