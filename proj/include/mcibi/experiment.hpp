#ifndef MCIBI_EXPERIMENT_HPP_
#define MCIBI_EXPERIMENT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "mcibi/checkpoint.hpp"
#include "mcibi/config.hpp"
#include "mcibi/data.hpp"
#include "mcibi/iis.hpp"
#include "mcibi/metrics.hpp"

namespace mcibi {

struct DatasetBundle {
  std::vector<SegmentationSample> train, val;
  std::vector<VideoClip> train_clips, val_clips;
  bool is_video = false;
};

DatasetBundle build_datasets(const ExperimentConfig& cfg);

// One reservoir-sampled pixel representation per class from the train split.
void prescan_init_bank(MemoryBank& bank, const Segmentor& model,
                       const std::vector<SegmentationSample>& train, uint64_t seed,
                       int ignore_index);

struct TrainOutput {
  std::string checkpoint_path;
  int final_iteration = 0;
  LossReport final_loss;
};

// Full training run: builds data, model and bank from cfg, writes periodic
// checkpoints, a training log and the resolved config under out_dir.
TrainOutput run_training(const ExperimentConfig& cfg, const std::string& out_dir,
                         const std::string& resume_from = "", bool force_resume = false);

struct EvalOptions {
  int iis_stages = 1;
  bool gt_weights = false;     // diagnostic: one-hot GT aggregation weights
  bool frozen_memory = false;  // diagnostic: replace bank by a random-init one
  uint64_t seed = 1234;
};

struct EvalOutput {
  MetricReport final_report;
  std::vector<MetricReport> per_stage;   // one per IIS stage
  std::vector<double> stage_seconds;     // cumulative inference seconds per stage
  double total_seconds = 0.0;
  bool diagnostic = false;               // gt_weights or frozen_memory runs
};

EvalOutput run_evaluation(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                          const EvalOptions& opts);

// Writes <prefix>.json, <prefix>.txt and <prefix>.svg (per-stage mIoU bars).
void write_eval_report(const EvalOutput& out, const ExperimentConfig& cfg,
                       const EvalOptions& opts, const std::string& prefix);

// ---- ablation grids ----
struct GridAxis {
  std::string key;                  // e.g. "memory.momentum"
  std::vector<std::string> values;  // e.g. {"0.01","0.1","0.5","0.9"}
};

struct AblationCell {
  std::vector<std::pair<std::string, std::string>> assignment;
  std::vector<double> miou_per_seed;
  double mean_miou = 0.0;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::string table_text;
};

AblationResult run_ablation(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                            const std::vector<uint64_t>& seeds, const std::string& out_dir);

}  // namespace mcibi

#endif  // MCIBI_EXPERIMENT_HPP_
