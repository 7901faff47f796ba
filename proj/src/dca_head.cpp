#include "mcibi/dca_head.hpp"

#include <cmath>
#include <stdexcept>

namespace mcibi {

DcaHead::DcaHead(nn::ParamRegistry& reg, const std::string& prefix, int feature_dim,
                 int num_classes, Rng& rng)
    : num_classes_(num_classes),
      feature_dim_(feature_dim),
      qk_dim_(std::max(feature_dim / 2, 1)),
      pr_hidden_(reg, prefix + ".pr_hidden", feature_dim, feature_dim, rng),
      pr_out_(reg, prefix + ".pr_out", feature_dim, num_classes, rng),
      proj_query_(reg, prefix + ".proj_query", feature_dim, qk_dim_, rng),
      proj_key_(reg, prefix + ".proj_key", feature_dim, qk_dim_, rng),
      proj_value_(reg, prefix + ".proj_value", feature_dim, feature_dim, rng),
      proj_out_(reg, prefix + ".proj_out", feature_dim, feature_dim, rng) {}

DcaHead::WeightPrediction DcaHead::predict_weights(const ag::Var& features) const {
  if (features->value.dim(0) != feature_dim_)
    throw std::invalid_argument("predict_weights: feature dim mismatch");
  auto logits = pr_out_(ag::relu(pr_hidden_(features)));
  return {logits, ag::softmax_channels(logits)};
}

ag::Var DcaHead::aggregate_coarse(const ag::Var& weight_probs, const ag::Var& reps) const {
  if (weight_probs->value.dim(0) != reps->value.dim(0))
    throw std::invalid_argument("aggregate_coarse: class count mismatch");
  return ag::matmul(ag::chw_to_mat(weight_probs), reps);
}

ag::Var DcaHead::recalibrate(const ag::Var& features, const ag::Var& coarse_mat) const {
  const int h = features->value.dim(1);
  const int w = features->value.dim(2);
  if (coarse_mat->value.dim(0) != h * w)
    throw std::invalid_argument("recalibrate: pixel count mismatch");

  auto query = proj_query_.rows(ag::chw_to_mat(features));  // {hw, Z/2}
  auto key = proj_key_.rows(coarse_mat);                    // {hw, Z/2}
  auto attn = ag::softmax_rows(
      ag::scale(ag::matmul_nt(query, key), 1.0 / std::sqrt(static_cast<double>(qk_dim_))));
  auto value = proj_value_.rows(coarse_mat);                // {hw, Z}
  auto out = proj_out_.rows(ag::matmul(attn, value));       // {hw, Z}
  return ag::mat_to_chw(out, h, w);
}

ag::Var DcaHead::context_from_weights(const ag::Var& features, const ag::Var& weight_probs,
                                      const ag::Var& reps) const {
  return recalibrate(features, aggregate_coarse(weight_probs, reps));
}

}  // namespace mcibi
