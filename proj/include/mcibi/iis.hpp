#ifndef MCIBI_IIS_HPP_
#define MCIBI_IIS_HPP_

#include "mcibi/segmentor.hpp"

namespace mcibi {

struct IISConfig {
  int stages = 2;  // 1 = plain forward
};

// Stage weight refinement: element-wise average of the previous stage's
// stride-8 prediction and the base aggregation weights. Preserves the simplex.
ag::Var refine_weights(const ag::Var& prev_prediction, const ag::Var& base_weights);

struct IISResult {
  std::vector<int> prediction;                 // final argmax labels, H*W
  std::vector<std::vector<int>> per_stage;     // prediction after each stage
  std::vector<double> stage_seconds;           // cumulative wall time per stage
  uint64_t reps_identity = 0;                  // address of the shared C_dl node
};

// Coarse-to-fine iterative inference. C_dl is sampled once in stage 1 and
// shared by every later stage; stage i >= 2 replaces W with
// refine_weights(O_{s_{i-1}}, W) and re-runs aggregation + classification.
IISResult run_iis(const Tensor& image, const Segmentor& model, const MemoryBank& bank,
                  const IISConfig& cfg, uint64_t seed);

// Evaluation-only diagnostic: aggregation weights replaced by the one-hot
// ground truth (nearest-neighbor downsampled to stride 8; ignore pixels get
// uniform rows).
std::vector<int> gt_weight_oracle(const Tensor& image, const std::vector<int>& labels,
                                  const Segmentor& model, const MemoryBank& bank,
                                  uint64_t seed);

// One-hot stride-8 weight tensor used by the oracle; exposed for tests.
Tensor gt_weights_stride8(const std::vector<int>& labels, int label_h, int label_w,
                          int grid_h, int grid_w, int num_classes, int ignore_index);

}  // namespace mcibi

#endif  // MCIBI_IIS_HPP_
