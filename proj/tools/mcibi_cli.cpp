#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mcibi/experiment.hpp"

namespace {

// exit codes: 0 ok, 1 runtime failure, 2 config error, 3 threshold failure
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitThreshold = 3;

std::string output_root() {
  const char* env = std::getenv("MCIBI_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

std::vector<mcibi::GridAxis> parse_grid(const std::vector<std::string>& specs) {
  std::vector<mcibi::GridAxis> grid;
  for (const auto& spec : specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw mcibi::ConfigError("grid spec must be key=v1,v2,...: " + spec);
    mcibi::GridAxis axis;
    axis.key = spec.substr(0, eq);
    std::istringstream vs(spec.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) axis.values.push_back(v);
    if (axis.values.empty()) throw mcibi::ConfigError("grid axis has no values: " + spec);
    grid.push_back(std::move(axis));
  }
  return grid;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) throw mcibi::ConfigError("empty seed list");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCIBI++ desk-scale segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, resume_path;
  bool force = false;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--out", out_dir, "output directory (default under MCIBI_OUTPUT_ROOT)");
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_flag("--force", force, "resume even if the config hash differs");

  int iis_stages = -1;
  bool gt_weights = false, frozen_memory = false;
  uint64_t eval_seed = 1234;
  double min_miou = -1.0;
  bool compare_stages = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  eval->add_option("--config", config_path, "experiment config file")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--out", out_dir, "report output directory");
  eval->add_option("--iis-stages", iis_stages, "override inference.iis_stages");
  eval->add_flag("--gt-weights", gt_weights, "ground-truth aggregation-weight diagnostic");
  eval->add_flag("--frozen-memory", frozen_memory, "random-bank diagnostic");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--min-miou", min_miou, "exit 3 if final mIoU falls below this");
  eval->add_flag("--compare-stages", compare_stages,
                 "also evaluate with 1 stage and emit a delta table");

  std::string image_path, label_out;
  auto* infer = app.add_subcommand("infer", "segment one image");
  infer->add_option("--config", config_path)->required();
  infer->add_option("--checkpoint", checkpoint_path)->required();
  infer->add_option("--image", image_path, "input PPM image")->required();
  infer->add_option("--out", label_out, "output PGM label raster")->required();
  infer->add_option("--iis-stages", iis_stages, "override inference.iis_stages");
  infer->add_option("--seed", eval_seed, "sampling seed");

  std::vector<std::string> grid_specs;
  std::string seeds_str = "1,2,3";
  auto* ablate = app.add_subcommand("ablate", "grid ablation over config keys");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--grid", grid_specs, "axis spec key=v1,v2,... (repeatable)")
      ->required();
  ablate->add_option("--seeds", seeds_str, "comma-separated training seeds");
  ablate->add_option("--out", out_dir, "output directory");

  auto* export_mem = app.add_subcommand("export-memory", "dump the memory bank as text");
  export_mem->add_option("--config", config_path)->required();
  export_mem->add_option("--checkpoint", checkpoint_path)->required();
  export_mem->add_option("--out", out_dir, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      auto cfg = mcibi::load_config(config_path);
      if (out_dir.empty()) out_dir = output_root() + "/train";
      auto result = mcibi::run_training(cfg, out_dir, resume_path, force);
      std::cout << "final checkpoint: " << result.checkpoint_path << "\n";
      std::cout << "final loss: total=" << result.final_loss.total
                << " loss_w=" << result.final_loss.loss_w
                << " loss_o=" << result.final_loss.loss_o << "\n";
    } else if (eval->parsed()) {
      auto cfg = mcibi::load_config(config_path);
      if (out_dir.empty()) out_dir = output_root() + "/eval";
      mcibi::EvalOptions opts;
      opts.iis_stages = iis_stages > 0 ? iis_stages : cfg.inference.iis_stages;
      opts.gt_weights = gt_weights;
      opts.frozen_memory = frozen_memory;
      opts.seed = eval_seed;
      auto result = mcibi::run_evaluation(cfg, checkpoint_path, opts);
      mcibi::write_eval_report(result, cfg, opts, out_dir + "/report");
      std::cout << result.final_report.to_table();
      if (compare_stages && opts.iis_stages > 1) {
        mcibi::EvalOptions one = opts;
        one.iis_stages = 1;
        auto base = mcibi::run_evaluation(cfg, checkpoint_path, one);
        mcibi::write_eval_report(base, cfg, one, out_dir + "/report_stage1");
        std::ofstream delta(out_dir + "/stage_delta.txt");
        delta << "stages=1 mIoU " << base.final_report.miou << "\n"
              << "stages=" << opts.iis_stages << " mIoU " << result.final_report.miou
              << "\n"
              << "delta " << result.final_report.miou - base.final_report.miou << "\n";
      }
      if (min_miou >= 0.0 && result.final_report.miou < min_miou) {
        std::cerr << "mIoU " << result.final_report.miou << " below threshold "
                  << min_miou << "\n";
        return kExitThreshold;
      }
    } else if (infer->parsed()) {
      auto cfg = mcibi::load_config(config_path);
      auto sample = mcibi::load_image(image_path);
      mcibi::ModelConfig mc = cfg.resolved_model();
      mcibi::Segmentor model(mc, cfg.training.seed);
      mcibi::MemoryBank bank(mc.num_classes, mc.feature_dim, cfg.memory.momentum);
      mcibi::nn::SgdOptimizer opt;
      mcibi::load_checkpoint(checkpoint_path, model.params(), opt, bank);
      mcibi::IISConfig iis{iis_stages > 0 ? iis_stages : cfg.inference.iis_stages};
      auto result = mcibi::run_iis(sample.image, model, bank, iis, eval_seed);
      mcibi::SegmentationSample out_sample;
      out_sample.image = sample.image;
      out_sample.height = sample.height;
      out_sample.width = sample.width;
      out_sample.labels = result.prediction;
      std::string tmp_img = label_out + ".preview.ppm";
      mcibi::save_sample(out_sample, tmp_img, label_out);
      std::cout << "wrote " << label_out << "\n";
    } else if (ablate->parsed()) {
      auto cfg = mcibi::load_config(config_path);
      if (out_dir.empty()) out_dir = output_root() + "/ablate";
      auto grid = parse_grid(grid_specs);
      auto seeds = parse_seeds(seeds_str);
      auto result = mcibi::run_ablation(cfg, grid, seeds, out_dir);
      std::cout << result.table_text;
    } else if (export_mem->parsed()) {
      auto cfg = mcibi::load_config(config_path);
      mcibi::ModelConfig mc = cfg.resolved_model();
      mcibi::Segmentor model(mc, cfg.training.seed);
      mcibi::MemoryBank bank(mc.num_classes, mc.feature_dim, cfg.memory.momentum);
      mcibi::nn::SgdOptimizer opt;
      mcibi::load_checkpoint(checkpoint_path, model.params(), opt, bank);
      std::string text = mcibi::bank_to_text(bank);
      if (out_dir.empty())
        std::cout << text;
      else
        std::ofstream(out_dir) << text;
    }
  } catch (const mcibi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
