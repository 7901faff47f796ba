#include "mcibi/segmentor.hpp"

#include <cmath>
#include <stdexcept>

namespace mcibi {

FusionKind fusion_from_string(const std::string& s) {
  if (s == "add") return FusionKind::kAdd;
  if (s == "weighted_add") return FusionKind::kWeightedAdd;
  if (s == "concatenation" || s == "concat") return FusionKind::kConcat;
  throw std::invalid_argument("unknown fusion kind: " + s);
}

std::string to_string(FusionKind k) {
  switch (k) {
    case FusionKind::kAdd: return "add";
    case FusionKind::kWeightedAdd: return "weighted_add";
    case FusionKind::kConcat: return "concatenation";
  }
  return "?";
}

ContextKind context_from_string(const std::string& s) {
  if (s == "identity") return ContextKind::kIdentity;
  if (s == "pyramid") return ContextKind::kPyramid;
  throw std::invalid_argument("unknown within-image context kind: " + s);
}

std::string to_string(ContextKind k) {
  return k == ContextKind::kIdentity ? "identity" : "pyramid";
}

Segmentor::Segmentor(const ModelConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("Segmentor: need >= 2 classes");
  if (cfg.feature_dim < 2) throw std::invalid_argument("Segmentor: feature_dim too small");
  Rng rng(param_seed);

  int cin = 3;
  std::vector<int> widths = cfg_.backbone_widths;
  widths.push_back(cfg_.feature_dim);
  if (widths.size() != 3)
    throw std::invalid_argument("Segmentor: backbone needs exactly two stem widths");
  for (size_t i = 0; i < widths.size(); ++i) {
    stem_.emplace_back(params_, "backbone.stem" + std::to_string(i), cin, widths[i], 2,
                       rng);
    cin = widths[i];
  }
  for (int b = 0; b < cfg_.residual_blocks; ++b) {
    res_convs_.emplace_back(params_, "backbone.res" + std::to_string(b) + "a",
                            cfg_.feature_dim, cfg_.feature_dim, 1, rng);
    res_convs_.emplace_back(params_, "backbone.res" + std::to_string(b) + "b",
                            cfg_.feature_dim, cfg_.feature_dim, 1, rng);
  }

  if (cfg_.use_dca)
    dca_ = DcaHead(params_, "dca", cfg_.feature_dim, cfg_.num_classes, rng);

  const int n_in = cfg_.fusion_inputs();
  const int z = cfg_.feature_dim;
  switch (cfg_.fusion) {
    case FusionKind::kAdd:
      break;
    case FusionKind::kWeightedAdd:
      fusion_gate_ = nn::Conv1x1(params_, "fusion.gate", n_in * z, n_in, rng);
      break;
    case FusionKind::kConcat:
      fusion_proj_ = nn::Conv1x1(params_, "fusion.proj", n_in * z, z, rng);
      break;
  }
  cls_hidden_ = nn::Conv1x1(params_, "cls.hidden", z, z, rng);
  cls_out_ = nn::Conv1x1(params_, "cls.out", z, cfg_.num_classes, rng);
}

ag::Var Segmentor::backbone(const ag::Var& image) const {
  const int h = image->value.dim(1), w = image->value.dim(2);
  const int pad_h = (8 - h % 8) % 8, pad_w = (8 - w % 8) % 8;
  ag::Var x = ag::pad_reflect(image, pad_h, pad_w);
  for (const auto& conv : stem_) x = ag::relu(conv(x));
  for (size_t b = 0; b + 1 < res_convs_.size() + 1; b += 2) {
    auto y = res_convs_[b + 1](ag::relu(res_convs_[b](x)));
    x = ag::relu(ag::add(x, y));
  }
  return x;
}

ag::Var Segmentor::within_image_context(const ag::Var& features) const {
  if (cfg_.within_image == ContextKind::kIdentity) return features;
  const int h = features->value.dim(1), w = features->value.dim(2);
  std::vector<ag::Var> scales;
  for (int g : {1, 2, 4}) {
    if (g > h || g > w) continue;
    scales.push_back(ag::resize_bilinear(ag::avgpool_grid(features, g, g), h, w));
  }
  if (scales.empty()) return features;
  return ag::scale(ag::sum_vars(scales), 1.0 / static_cast<double>(scales.size()));
}

ag::Var Segmentor::fuse(const std::vector<ag::Var>& inputs) const {
  if (static_cast<int>(inputs.size()) != cfg_.fusion_inputs())
    throw std::invalid_argument("fuse: input count does not match configuration");
  switch (cfg_.fusion) {
    case FusionKind::kAdd:
      return ag::sum_vars(inputs);
    case FusionKind::kWeightedAdd: {
      auto gates = ag::softmax_channels(fusion_gate_(ag::concat_channels(inputs)));
      return ag::weighted_sum_channel(inputs, gates);
    }
    case FusionKind::kConcat:
      return ag::relu(fusion_proj_(ag::concat_channels(inputs)));
  }
  throw std::logic_error("fuse: unreachable");
}

ag::Var Segmentor::classify(const ag::Var& raug) const {
  return cls_out_(ag::relu(cls_hidden_(raug)));
}

Segmentor::Forward Segmentor::finish_forward(const ag::Var& features,
                                             const std::vector<ag::Var>& history,
                                             int image_h, int image_w,
                                             const MemoryBank& bank,
                                             uint64_t seed) const {
  Forward f;
  f.features = features;
  f.image_h = image_h;
  f.image_w = image_w;

  std::vector<ag::Var> fusion_inputs{features};
  if (cfg_.within_image == ContextKind::kPyramid) {
    f.cwi = within_image_context(features);
    fusion_inputs.push_back(f.cwi);
  }
  if (cfg_.use_dca) {
    if (bank.num_classes() != cfg_.num_classes)
      throw std::invalid_argument("forward: bank class count mismatch");
    auto wp = dca_.predict_weights(features);
    f.weight_logits = wp.logits;
    f.weight_probs = wp.probs;
    f.reps = ag::constant(
        sample_representations(bank, seed, cfg_.epsilon_std, cfg_.mean_mode_sampling)
            .data);
    f.context = dca_.context_from_weights(features, f.weight_probs, f.reps);
    fusion_inputs.push_back(f.context);
  }
  for (const auto& hist : history) fusion_inputs.push_back(hist);

  auto raug = fuse(fusion_inputs);
  f.logits_s8 = classify(raug);
  f.logits_full =
      ag::crop(ag::resize_bilinear(f.logits_s8, features->value.dim(1) * 8,
                                   features->value.dim(2) * 8),
               image_h, image_w);
  return f;
}

Segmentor::Forward Segmentor::forward(const ag::Var& image, const MemoryBank& bank,
                                      uint64_t seed) const {
  if (cfg_.history_len > 0)
    throw std::logic_error("forward: video model requires forward_video");
  return finish_forward(backbone(image), {}, image->value.dim(1), image->value.dim(2),
                        bank, seed);
}

Segmentor::Forward Segmentor::forward(const Tensor& image, const MemoryBank& bank,
                                      uint64_t seed) const {
  return forward(ag::constant(image), bank, seed);
}

Segmentor::Restaged Segmentor::predict_from_weights(const Forward& f,
                                                    const ag::Var& weight_probs) const {
  if (!cfg_.use_dca)
    throw std::logic_error("predict_from_weights: DCA disabled in this model");
  Restaged r;
  r.context = dca_.context_from_weights(f.features, weight_probs, f.reps);
  std::vector<ag::Var> fusion_inputs{f.features};
  if (cfg_.within_image == ContextKind::kPyramid) fusion_inputs.push_back(f.cwi);
  fusion_inputs.push_back(r.context);
  r.logits_s8 = classify(fuse(fusion_inputs));
  r.logits_full =
      ag::crop(ag::resize_bilinear(r.logits_s8, f.features->value.dim(1) * 8,
                                   f.features->value.dim(2) * 8),
               f.image_h, f.image_w);
  return r;
}

Segmentor::Forward Segmentor::forward_video(const std::vector<ag::Var>& frames,
                                            int image_h, int image_w,
                                            const MemoryBank& bank,
                                            uint64_t seed) const {
  if (static_cast<int>(frames.size()) != cfg_.history_len + 1)
    throw std::invalid_argument("forward_video: expected history_len+1 frames");
  auto target_features = backbone(frames.back());
  // C_dl is sampled once and shared across frames
  ag::Var reps;
  if (cfg_.use_dca)
    reps = ag::constant(
        sample_representations(bank, seed, cfg_.epsilon_std, cfg_.mean_mode_sampling)
            .data);

  std::vector<ag::Var> history;
  for (int i = 0; i < cfg_.history_len; ++i) {
    auto hist_features = backbone(frames[static_cast<size_t>(i)]);
    if (cfg_.video_raw_features || !cfg_.use_dca) {
      history.push_back(hist_features);
    } else {
      auto wp = dca_.predict_weights(hist_features);
      history.push_back(dca_.context_from_weights(hist_features, wp.probs, reps));
    }
  }

  Forward f;
  f.features = target_features;
  f.image_h = image_h;
  f.image_w = image_w;
  std::vector<ag::Var> fusion_inputs{target_features};
  if (cfg_.within_image == ContextKind::kPyramid) {
    f.cwi = within_image_context(target_features);
    fusion_inputs.push_back(f.cwi);
  }
  if (cfg_.use_dca) {
    auto wp = dca_.predict_weights(target_features);
    f.weight_logits = wp.logits;
    f.weight_probs = wp.probs;
    f.reps = reps;
    f.context = dca_.context_from_weights(target_features, f.weight_probs, f.reps);
    fusion_inputs.push_back(f.context);
  }
  for (const auto& hist : history) fusion_inputs.push_back(hist);
  f.logits_s8 = classify(fuse(fusion_inputs));
  f.logits_full =
      ag::crop(ag::resize_bilinear(f.logits_s8, target_features->value.dim(1) * 8,
                                   target_features->value.dim(2) * 8),
               image_h, image_w);
  return f;
}

Segmentor::Forward Segmentor::forward_video(const VideoClip& clip,
                                            const MemoryBank& bank,
                                            uint64_t seed) const {
  std::vector<ag::Var> frames;
  std::vector<Tensor> padded = clip.frames;
  while (static_cast<int>(padded.size()) < cfg_.history_len + 1)
    padded.insert(padded.begin(), padded.front());
  size_t start = padded.size() - static_cast<size_t>(cfg_.history_len + 1);
  for (size_t i = start; i < padded.size(); ++i)
    frames.push_back(ag::constant(padded[i]));
  return forward_video(frames, clip.height, clip.width, bank, seed);
}

ag::Var Segmentor::joint_loss(const Forward& f, const std::vector<int>& labels,
                              LossReport* report) const {
  LossReport rep;
  rep.alpha = cfg_.alpha;

  int valid_o = 0;
  auto loss_o = ag::cross_entropy_logits(f.logits_full, labels, cfg_.ignore_index,
                                         &valid_o);
  rep.loss_o = loss_o->value[0];

  ag::Var total;
  if (cfg_.use_dca) {
    auto w_full =
        ag::crop(ag::resize_bilinear(f.weight_logits, f.features->value.dim(1) * 8,
                                     f.features->value.dim(2) * 8),
                 f.image_h, f.image_w);
    auto loss_w = ag::cross_entropy_logits(w_full, labels, cfg_.ignore_index);
    rep.loss_w = loss_w->value[0];
    total = ag::add(ag::scale(loss_w, cfg_.alpha), loss_o);
  } else {
    total = loss_o;
  }
  rep.total = total->value[0];
  rep.all_ignored = (valid_o == 0);
  if (report) *report = rep;
  return total;
}

LossReport Segmentor::joint_loss_report(const Forward& f,
                                        const std::vector<int>& labels) const {
  LossReport rep;
  joint_loss(f, labels, &rep);
  return rep;
}

std::vector<int> Segmentor::predict_labels(const Forward& f) const {
  const Tensor& logits = f.logits_full->value;
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const int hw = h * w;
  std::vector<int> out(static_cast<size_t>(hw));
  for (int i = 0; i < hw; ++i) {
    int best = 0;
    double best_v = logits[i];
    for (int c = 1; c < k; ++c)
      if (logits[c * hw + i] > best_v) {
        best_v = logits[c * hw + i];
        best = c;
      }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

namespace {

// shared post-loss machinery for image and video steps
struct StepContext {
  ag::Var total_loss;
  std::vector<std::pair<const Tensor*, const std::vector<int>*>> stats_sources;
};

}  // namespace

Segmentor::StepResult Segmentor::train_step(
    const std::vector<const SegmentationSample*>& batch, MemoryBank& bank,
    nn::SgdOptimizer& opt, int iter, uint64_t seed, bool update_bank) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  params_.zero_grad();

  std::vector<ag::Var> losses;
  std::vector<Forward> forwards;
  LossReport mean_rep;
  Rng seeds(seed);
  for (const auto* sample : batch) {
    auto f = forward(sample->image, bank, seeds.raw());
    LossReport rep;
    losses.push_back(joint_loss(f, sample->labels, &rep));
    mean_rep.loss_w += rep.loss_w;
    mean_rep.loss_o += rep.loss_o;
    mean_rep.total += rep.total;
    mean_rep.all_ignored = mean_rep.all_ignored || rep.all_ignored;
    forwards.push_back(std::move(f));
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  mean_rep.loss_w *= inv_n;
  mean_rep.loss_o *= inv_n;
  mean_rep.total *= inv_n;
  mean_rep.alpha = cfg_.alpha;

  auto total = ag::scale(ag::sum_vars(losses), inv_n);
  StepResult result;
  result.loss = mean_rep;
  if (!std::isfinite(total->value[0])) return result;  // bank untouched

  ag::backward(total);
  opt.step(params_, iter);

  if (update_bank && cfg_.use_dca) {
    ClassSumAccumulator acc(cfg_.num_classes, cfg_.feature_dim, cfg_.ignore_index);
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto& features = forwards[i].features->value;
      Tensor full = upsample_features(features, features.dim(1) * 8, features.dim(2) * 8);
      auto cropped = ag::crop(ag::constant(full), batch[i]->height, batch[i]->width);
      acc.add(cropped->value, batch[i]->labels);
    }
    bank.ema_update(acc.finalize());
  }
  result.applied = true;
  return result;
}

Segmentor::StepResult Segmentor::train_step_video(
    const std::vector<const VideoClip*>& batch, MemoryBank& bank, nn::SgdOptimizer& opt,
    int iter, uint64_t seed, bool update_bank) {
  if (batch.empty()) throw std::invalid_argument("train_step_video: empty batch");
  params_.zero_grad();

  std::vector<ag::Var> losses;
  std::vector<Forward> forwards;
  LossReport mean_rep;
  Rng seeds(seed);
  for (const auto* clip : batch) {
    auto f = forward_video(*clip, bank, seeds.raw());
    LossReport rep;
    losses.push_back(joint_loss(f, clip->labels, &rep));
    mean_rep.loss_w += rep.loss_w;
    mean_rep.loss_o += rep.loss_o;
    mean_rep.total += rep.total;
    mean_rep.all_ignored = mean_rep.all_ignored || rep.all_ignored;
    forwards.push_back(std::move(f));
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  mean_rep.loss_w *= inv_n;
  mean_rep.loss_o *= inv_n;
  mean_rep.total *= inv_n;
  mean_rep.alpha = cfg_.alpha;

  auto total = ag::scale(ag::sum_vars(losses), inv_n);
  StepResult result;
  result.loss = mean_rep;
  if (!std::isfinite(total->value[0])) return result;

  ag::backward(total);
  opt.step(params_, iter);

  if (update_bank && cfg_.use_dca) {
    ClassSumAccumulator acc(cfg_.num_classes, cfg_.feature_dim, cfg_.ignore_index);
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto& features = forwards[i].features->value;
      Tensor full = upsample_features(features, features.dim(1) * 8, features.dim(2) * 8);
      auto cropped = ag::crop(ag::constant(full), batch[i]->height, batch[i]->width);
      acc.add(cropped->value, batch[i]->labels);
    }
    bank.ema_update(acc.finalize());
  }
  result.applied = true;
  return result;
}

}  // namespace mcibi
