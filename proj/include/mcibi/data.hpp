#ifndef MCIBI_DATA_HPP_
#define MCIBI_DATA_HPP_

#include <string>
#include <vector>

#include "mcibi/rng.hpp"
#include "mcibi/tensor.hpp"

namespace mcibi {

struct SegmentationSample {
  Tensor image;             // {3,H,W}, values in [0,1]
  std::vector<int> labels;  // H*W row-major, class id or ignore index
  int height = 0;
  int width = 0;
  std::string id;
};

struct VideoClip {
  std::vector<Tensor> frames;  // ordered oldest..newest; back() is the target
  std::vector<int> labels;     // labels for the target frame
  int height = 0;
  int width = 0;
  std::string id;
  bool padded = false;  // set when short clips were padded by repeating frame 0
};

struct SyntheticConfig {
  uint64_t seed = 1;
  int num_images = 32;
  int num_classes = 6;
  int size = 64;
  double noise_level = 0.25;
  double class_presence_prob = 0.95;
  int ignore_index = 255;
  bool ignore_border = true;  // 1px ignore band along shape boundaries
};

// Colored geometric regions over a textured background; class 0 is the
// background, classes 1..K-1 are shapes. Deterministic per seed; at
// noise_level 0 the classes are linearly separable by color.
std::vector<SegmentationSample> generate_synthetic_dataset(const SyntheticConfig& cfg);

// Same scene model with constant-velocity motion; clip has history_len+1
// frames ending at the labeled target frame.
std::vector<VideoClip> generate_synthetic_clips(const SyntheticConfig& cfg,
                                                int history_len);

int palette_size();
const double* palette_color(int cls);  // 3 doubles in [0,1]

// ---- on-disk format: binary PPM (P6) images, PGM (P5) label rasters ----
void save_sample(const SegmentationSample& s, const std::string& image_path,
                 const std::string& label_path);
SegmentationSample load_sample(const std::string& image_path,
                               const std::string& label_path);
// image only; labels left empty
SegmentationSample load_image(const std::string& image_path);
void write_manifest(const std::vector<SegmentationSample>& samples,
                    const std::string& dir, const std::string& manifest_path);
std::vector<SegmentationSample> load_manifest(const std::string& manifest_path);

// Clip manifest: per line, ordered frame paths then the target label path.
void write_clip_manifest(const std::vector<VideoClip>& clips, const std::string& dir,
                         const std::string& manifest_path);
std::vector<VideoClip> load_clip_manifest(const std::string& manifest_path,
                                          int history_len);

}  // namespace mcibi

#endif  // MCIBI_DATA_HPP_
