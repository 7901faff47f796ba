#ifndef MCIBI_DCA_HEAD_HPP_
#define MCIBI_DCA_HEAD_HPP_

#include <string>

#include "mcibi/memory_bank.hpp"
#include "mcibi/nn.hpp"

namespace mcibi {

// Dataset-level context aggregation: per-pixel class-probability weights
// over sampled category representations, recalibrated by position-confidence
// attention between the pixel features and the coarse context.
class DcaHead {
 public:
  DcaHead() = default;
  DcaHead(nn::ParamRegistry& reg, const std::string& prefix, int feature_dim,
          int num_classes, Rng& rng);

  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  int qk_dim() const { return qk_dim_; }

  // H_pr: two 1x1 convs + channel softmax. Returns {logits, probabilities}.
  struct WeightPrediction {
    ag::Var logits;  // {K,h,w}
    ag::Var probs;   // {K,h,w}, simplex per position
  };
  WeightPrediction predict_weights(const ag::Var& features) const;

  // Eq.-12 style weighted aggregation: {K,h,w} weights x {K,Z} reps -> {hw,Z}.
  ag::Var aggregate_coarse(const ag::Var& weight_probs, const ag::Var& reps) const;

  // Position-confidence attention over the coarse context, output {Z,h,w}.
  ag::Var recalibrate(const ag::Var& features, const ag::Var& coarse_mat) const;

  // aggregate + recalibrate in one call; reps is a sampled constant.
  ag::Var context_from_weights(const ag::Var& features, const ag::Var& weight_probs,
                               const ag::Var& reps) const;

 private:
  int num_classes_ = 0;
  int feature_dim_ = 0;
  int qk_dim_ = 0;
  nn::Conv1x1 pr_hidden_, pr_out_;           // H_pr
  nn::Conv1x1 proj_query_, proj_key_;        // attention projections (Z -> Z/2)
  nn::Conv1x1 proj_value_, proj_out_;        // value / output projections (Z -> Z)
};

}  // namespace mcibi

#endif  // MCIBI_DCA_HEAD_HPP_
