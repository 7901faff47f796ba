#include "mcibi/iis.hpp"

#include <chrono>
#include <stdexcept>

namespace mcibi {

ag::Var refine_weights(const ag::Var& prev_prediction, const ag::Var& base_weights) {
  if (prev_prediction->value.shape() != base_weights->value.shape())
    throw std::invalid_argument("refine_weights: shape mismatch");
  return ag::scale(ag::add(prev_prediction, base_weights), 0.5);
}

IISResult run_iis(const Tensor& image, const Segmentor& model, const MemoryBank& bank,
                  const IISConfig& cfg, uint64_t seed) {
  if (cfg.stages < 1) throw std::invalid_argument("run_iis: stages must be >= 1");
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();

  IISResult result;
  auto f = model.forward(image, bank, seed);
  result.reps_identity = reinterpret_cast<uint64_t>(f.reps.get());

  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  Segmentor::Forward* current = &f;
  ag::Var logits_s8 = f.logits_s8;
  ag::Var logits_full = f.logits_full;
  {
    Segmentor::Forward stage_view = f;
    result.per_stage.push_back(model.predict_labels(stage_view));
    result.stage_seconds.push_back(elapsed());
  }

  Segmentor::Restaged restaged;
  for (int stage = 2; stage <= cfg.stages; ++stage) {
    if (!model.config().use_dca) break;  // refinement needs the DCA path
    auto prev_probs = ag::softmax_channels(logits_s8);
    auto refined = refine_weights(prev_probs, current->weight_probs);
    restaged = model.predict_from_weights(f, refined);
    logits_s8 = restaged.logits_s8;
    logits_full = restaged.logits_full;
    Segmentor::Forward stage_view = f;
    stage_view.logits_full = logits_full;
    result.per_stage.push_back(model.predict_labels(stage_view));
    result.stage_seconds.push_back(elapsed());
  }

  result.prediction = result.per_stage.back();
  return result;
}

Tensor gt_weights_stride8(const std::vector<int>& labels, int label_h, int label_w,
                          int grid_h, int grid_w, int num_classes, int ignore_index) {
  Tensor w({num_classes, grid_h, grid_w});
  const double uniform = 1.0 / num_classes;
  for (int gy = 0; gy < grid_h; ++gy)
    for (int gx = 0; gx < grid_w; ++gx) {
      // nearest-neighbor sample at the cell center, clamped into the image
      int sy = std::min(gy * 8 + 4, label_h - 1);
      int sx = std::min(gx * 8 + 4, label_w - 1);
      int lab = labels[static_cast<size_t>(sy * label_w + sx)];
      if (lab == ignore_index) {
        for (int c = 0; c < num_classes; ++c) w.at(c, gy, gx) = uniform;
      } else {
        if (lab < 0 || lab >= num_classes)
          throw std::invalid_argument("gt_weights_stride8: label out of range");
        w.at(lab, gy, gx) = 1.0;
      }
    }
  return w;
}

std::vector<int> gt_weight_oracle(const Tensor& image, const std::vector<int>& labels,
                                  const Segmentor& model, const MemoryBank& bank,
                                  uint64_t seed) {
  auto f = model.forward(image, bank, seed);
  Tensor w = gt_weights_stride8(labels, f.image_h, f.image_w,
                                f.features->value.dim(1), f.features->value.dim(2),
                                model.config().num_classes, model.config().ignore_index);
  auto restaged = model.predict_from_weights(f, ag::constant(w));
  Segmentor::Forward view = f;
  view.logits_full = restaged.logits_full;
  return model.predict_labels(view);
}

}  // namespace mcibi
