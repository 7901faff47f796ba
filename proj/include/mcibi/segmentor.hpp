#ifndef MCIBI_SEGMENTOR_HPP_
#define MCIBI_SEGMENTOR_HPP_

#include <memory>
#include <string>
#include <vector>

#include "mcibi/data.hpp"
#include "mcibi/dca_head.hpp"
#include "mcibi/memory_bank.hpp"
#include "mcibi/nn.hpp"

namespace mcibi {

enum class FusionKind { kAdd, kWeightedAdd, kConcat };
enum class ContextKind { kIdentity, kPyramid };

FusionKind fusion_from_string(const std::string& s);
std::string to_string(FusionKind k);
ContextKind context_from_string(const std::string& s);
std::string to_string(ContextKind k);

struct ModelConfig {
  int num_classes = 6;
  int feature_dim = 32;
  std::vector<int> backbone_widths = {16, 32};  // stem stages before feature_dim
  int residual_blocks = 1;
  FusionKind fusion = FusionKind::kConcat;
  ContextKind within_image = ContextKind::kIdentity;
  bool use_dca = true;  // false: plain FCN-style baseline
  int history_len = 0;  // >0 enables the video head
  bool video_raw_features = false;  // fuse raw historical R instead of contexts
  int ignore_index = kDefaultIgnoreIndex;
  double epsilon_std = kDefaultEpsilonStd;
  bool mean_mode_sampling = false;
  double alpha = 0.4;

  int fusion_inputs() const {
    return 1 + (use_dca ? 1 : 0) + (within_image == ContextKind::kPyramid ? 1 : 0) +
           history_len;
  }
};

struct LossReport {
  double loss_w = 0.0;
  double loss_o = 0.0;
  double total = 0.0;
  double alpha = 0.4;
  bool all_ignored = false;
};

class Segmentor {
 public:
  Segmentor(const ModelConfig& cfg, uint64_t param_seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamRegistry& params() { return params_; }
  const nn::ParamRegistry& params() const { return params_; }
  const DcaHead& dca() const { return dca_; }

  // F_B: stride-8 features of a (possibly reflect-padded) image.
  ag::Var backbone(const ag::Var& image) const;
  ag::Var backbone(const Tensor& image) const { return backbone(ag::constant(image)); }

  // A_wi: identity passes features through bit-exactly; pyramid is a
  // parameter-free multi-scale average-pool stand-in.
  ag::Var within_image_context(const ag::Var& features) const;

  struct Forward {
    ag::Var features;       // R at stride 8 (padded grid)
    ag::Var weight_logits;  // H_pr logits, empty when DCA disabled
    ag::Var weight_probs;   // W
    ag::Var cwi;            // empty when within-image module is identity
    ag::Var reps;           // sampled C_dl constant, empty when DCA disabled
    ag::Var context;        // C_bi
    ag::Var logits_s8;      // {K,h,w} before UP_8x
    ag::Var logits_full;    // {K,H,W} after upsample and crop
    int image_h = 0, image_w = 0;
  };

  Forward forward(const Tensor& image, const MemoryBank& bank, uint64_t seed) const;
  Forward forward(const ag::Var& image, const MemoryBank& bank, uint64_t seed) const;

  // Re-run Eq. 12-13 + fusion + H_cls with substituted aggregation weights
  // (IIS stages, GT-weights oracle). Shares R, C_dl and C_wi with `f`.
  struct Restaged {
    ag::Var context;
    ag::Var logits_s8;
    ag::Var logits_full;
  };
  Restaged predict_from_weights(const Forward& f, const ag::Var& weight_probs) const;

  // Video path: clip.frames.back() is the target frame.
  Forward forward_video(const VideoClip& clip, const MemoryBank& bank,
                        uint64_t seed) const;
  Forward forward_video(const std::vector<ag::Var>& frames, int image_h, int image_w,
                        const MemoryBank& bank, uint64_t seed) const;

  LossReport joint_loss_report(const Forward& f, const std::vector<int>& labels) const;
  // builds the differentiable total; report receives the scalar pieces
  ag::Var joint_loss(const Forward& f, const std::vector<int>& labels,
                     LossReport* report) const;

  std::vector<int> predict_labels(const Forward& f) const;

  struct StepResult {
    LossReport loss;
    bool applied = false;  // false when a non-finite loss aborted the step
  };
  // forward -> loss -> backward -> optimizer step -> EMA bank update
  StepResult train_step(const std::vector<const SegmentationSample*>& batch,
                        MemoryBank& bank, nn::SgdOptimizer& opt, int iter,
                        uint64_t seed, bool update_bank = true);
  StepResult train_step_video(const std::vector<const VideoClip*>& batch,
                              MemoryBank& bank, nn::SgdOptimizer& opt, int iter,
                              uint64_t seed, bool update_bank = true);

 private:
  ag::Var fuse(const std::vector<ag::Var>& inputs) const;
  ag::Var classify(const ag::Var& raug) const;
  Forward finish_forward(const ag::Var& features, const std::vector<ag::Var>& history,
                         int image_h, int image_w, const MemoryBank& bank,
                         uint64_t seed) const;

  ModelConfig cfg_;
  nn::ParamRegistry params_;
  std::vector<nn::Conv3x3> stem_;       // three stride-2 convs
  std::vector<nn::Conv3x3> res_convs_;  // residual pairs at feature_dim
  DcaHead dca_;
  nn::Conv1x1 fusion_proj_;   // concat fusion projection
  nn::Conv1x1 fusion_gate_;   // weighted_add gate
  nn::Conv1x1 cls_hidden_, cls_out_;
};

}  // namespace mcibi

#endif  // MCIBI_SEGMENTOR_HPP_
