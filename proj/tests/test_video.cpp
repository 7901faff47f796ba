#include <doctest.h>

#include "mcibi/data.hpp"
#include "mcibi/segmentor.hpp"
#include "test_util.hpp"

using namespace mcibi_test;
using mcibi::MemoryBank;
using mcibi::ModelConfig;
using mcibi::Segmentor;
using mcibi::VideoClip;

namespace {

ModelConfig video_config(int history, bool raw = false) {
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.feature_dim = 8;
  cfg.backbone_widths = {4, 6};
  cfg.residual_blocks = 1;
  cfg.history_len = history;
  cfg.video_raw_features = raw;
  return cfg;
}

MemoryBank ready_bank(int k, int z, uint64_t seed = 61) {
  MemoryBank bank(k, z, 0.1);
  Rng rng(seed);
  bank.randomize(rng);
  return bank;
}

Tensor random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor img({3, h, w});
  for (int i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  return img;
}

VideoClip make_clip(int history, int size, uint64_t seed) {
  VideoClip clip;
  clip.height = size;
  clip.width = size;
  for (int i = 0; i <= history; ++i)
    clip.frames.push_back(random_image(size, size, seed + i));
  clip.labels.assign(size * size, 0);
  return clip;
}

}  // namespace

TEST_CASE("history zero matches the image model bit for bit") {
  // same parameter seed builds identical weights whether or not the video
  // path is compiled in; a one-frame clip must reproduce the image forward
  auto icfg = video_config(0);
  Segmentor image_model(icfg, 41);
  Segmentor video_model(icfg, 41);
  auto bank = ready_bank(4, 8);
  auto img = random_image(24, 24, 71);

  auto fi = image_model.forward(img, bank, 5);
  VideoClip clip;
  clip.height = 24;
  clip.width = 24;
  clip.frames = {img};
  auto fv = video_model.forward_video(clip, bank, 5);
  CHECK(fi.logits_full->value.vec() == fv.logits_full->value.vec());
}

TEST_CASE("video forward consumes the configured history length") {
  auto cfg = video_config(2);
  Segmentor model(cfg, 42);
  auto bank = ready_bank(4, 8);
  auto clip = make_clip(2, 24, 81);
  auto f = model.forward_video(clip, bank, 6);
  CHECK(f.logits_full->value.shape() == std::vector<int>{4, 24, 24});
  CHECK(f.logits_full->value.all_finite());
  // fusion sees target features + dca context + 2 historical contexts
  CHECK(cfg.fusion_inputs() == 4);
}

TEST_CASE("identical frames yield identical historical contexts") {
  auto cfg = video_config(2);
  Segmentor model(cfg, 43);
  auto bank = ready_bank(4, 8);
  auto img = random_image(24, 24, 91);
  VideoClip same;
  same.height = same.width = 24;
  same.frames = {img, img, img};
  same.labels.assign(24 * 24, 0);
  auto f_same = model.forward_video(same, bank, 7);

  auto clip = make_clip(2, 24, 92);
  clip.frames.back() = img;
  auto f_diff = model.forward_video(clip, bank, 7);

  // identical history adds no new information relative to the target frame,
  // distinct history must move the logits
  CHECK(f_same.logits_full->value.vec() != f_diff.logits_full->value.vec());

  // and the video pass itself is deterministic
  auto f_again = model.forward_video(same, bank, 7);
  CHECK(f_same.logits_full->value.vec() == f_again.logits_full->value.vec());
}

TEST_CASE("raw-feature history variant runs and differs from context fusion") {
  auto ctx_cfg = video_config(2, false);
  auto raw_cfg = video_config(2, true);
  Segmentor ctx_model(ctx_cfg, 44);
  Segmentor raw_model(raw_cfg, 44);
  auto bank = ready_bank(4, 8);
  auto clip = make_clip(2, 24, 101);
  auto fc = ctx_model.forward_video(clip, bank, 8);
  auto fr = raw_model.forward_video(clip, bank, 8);
  CHECK(fc.logits_full->value.all_finite());
  CHECK(fr.logits_full->value.all_finite());
  CHECK(fc.logits_full->value.vec() != fr.logits_full->value.vec());
}

TEST_CASE("short clips are padded by repeating the earliest frame") {
  mcibi::SyntheticConfig dc;
  dc.seed = 9;
  dc.num_images = 2;
  dc.num_classes = 4;
  dc.size = 16;
  auto clips = mcibi::generate_synthetic_clips(dc, 2);
  REQUIRE(clips.size() == 2u);
  for (const auto& c : clips) {
    CHECK(c.frames.size() == 3u);
    CHECK(c.labels.size() == 16u * 16u);
  }
  // loading a manifest with fewer frames than requested pads with frame 0
  auto cfg = video_config(2);
  Segmentor model(cfg, 45);
  auto bank = ready_bank(4, 8);
  VideoClip padded = clips[0];
  padded.frames.erase(padded.frames.begin());  // now only 2 frames
  padded.frames.insert(padded.frames.begin(), padded.frames.front());
  padded.padded = true;
  CHECK_NOTHROW(model.forward_video(padded, bank, 9));
}

TEST_CASE("video train step applies and updates the bank") {
  auto cfg = video_config(1);
  Segmentor model(cfg, 46);
  MemoryBank bank(4, 8, 0.1);
  mcibi::SyntheticConfig dc;
  dc.seed = 10;
  dc.num_images = 2;
  dc.num_classes = 4;
  dc.size = 16;
  dc.noise_level = 0.1;
  auto clips = mcibi::generate_synthetic_clips(dc, 1);
  std::vector<const VideoClip*> batch;
  for (const auto& c : clips) batch.push_back(&c);
  mcibi::nn::SgdOptimizer opt(0.02, 0.9, 1e-4, 20);
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 20; ++it) {
    auto res = model.train_step_video(batch, bank, opt, it, 500 + it);
    REQUIRE(res.applied);
    if (it == 0) first = res.loss.total;
    last = res.loss.total;
  }
  CHECK(last < first);
  CHECK(bank.all_finite());
}

TEST_CASE("frame list length is enforced, clip overload pads") {
  auto cfg = video_config(3);
  Segmentor model(cfg, 47);
  auto bank = ready_bank(4, 8);
  auto clip = make_clip(1, 16, 111);  // 2 frames, model wants 4

  std::vector<ag::Var> frames;
  for (const auto& fr : clip.frames) frames.push_back(ag::constant(fr));
  CHECK_THROWS(model.forward_video(frames, 16, 16, bank, 1));

  // the clip overload repeats the earliest frame instead
  auto f = model.forward_video(clip, bank, 1);
  CHECK(f.logits_full->value.all_finite());

  // padding with a repeated frame equals an explicitly padded clip
  VideoClip full = clip;
  full.frames.insert(full.frames.begin(), clip.frames.front());
  full.frames.insert(full.frames.begin(), clip.frames.front());
  auto g = model.forward_video(full, bank, 1);
  CHECK(f.logits_full->value.vec() == g.logits_full->value.vec());
}
