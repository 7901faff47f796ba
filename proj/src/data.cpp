#include "mcibi/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mcibi {

namespace {

constexpr int kPaletteSize = 20;
// distinct, roughly max-separated RGB anchors
constexpr double kPalette[kPaletteSize][3] = {
    {0.15, 0.15, 0.15}, {0.90, 0.10, 0.10}, {0.10, 0.80, 0.10}, {0.10, 0.20, 0.90},
    {0.95, 0.85, 0.10}, {0.80, 0.15, 0.80}, {0.10, 0.85, 0.85}, {0.95, 0.55, 0.10},
    {0.55, 0.35, 0.15}, {0.60, 0.90, 0.30}, {0.30, 0.50, 0.60}, {0.90, 0.60, 0.70},
    {0.45, 0.10, 0.50}, {0.70, 0.70, 0.70}, {0.20, 0.60, 0.30}, {0.85, 0.30, 0.45},
    {0.35, 0.35, 0.90}, {0.65, 0.50, 0.90}, {0.50, 0.65, 0.10}, {0.10, 0.40, 0.25}};

enum class ShapeKind { kRect, kCircle, kTriangle };

struct Shape {
  ShapeKind kind;
  int cls;
  double cx, cy;      // center
  double rx, ry;      // half extents / radius
  double vx = 0.0;    // per-frame velocity (video)
  double vy = 0.0;
};

bool shape_contains(const Shape& s, double x, double y, double t) {
  double cx = s.cx + s.vx * t;
  double cy = s.cy + s.vy * t;
  double dx = x - cx, dy = y - cy;
  switch (s.kind) {
    case ShapeKind::kRect:
      return std::fabs(dx) <= s.rx && std::fabs(dy) <= s.ry;
    case ShapeKind::kCircle:
      return (dx * dx) / (s.rx * s.rx) + (dy * dy) / (s.ry * s.ry) <= 1.0;
    case ShapeKind::kTriangle:
      // upward triangle inscribed in the bounding box
      if (std::fabs(dx) > s.rx || std::fabs(dy) > s.ry) return false;
      return std::fabs(dx) / s.rx <= (s.ry + dy) / (2.0 * s.ry);
  }
  return false;
}

struct Scene {
  std::vector<Shape> shapes;  // draw order; later shapes occlude earlier ones
  double texture_phase[3];
};

Scene make_scene(Rng& rng, const SyntheticConfig& cfg, bool with_motion) {
  Scene scene;
  for (int i = 0; i < 3; ++i) scene.texture_phase[i] = rng.uniform(0.0, 2.0 * M_PI);
  const double n = cfg.size;
  for (int cls = 1; cls < cfg.num_classes; ++cls) {
    if (rng.uniform() >= cfg.class_presence_prob) continue;
    int count = 1 + (rng.uniform() < 0.35 ? 1 : 0);
    for (int s = 0; s < count; ++s) {
      Shape sh;
      sh.kind = static_cast<ShapeKind>(rng.uniform_int(3));
      sh.cls = cls;
      sh.rx = rng.uniform(n * 0.10, n * 0.22);
      sh.ry = rng.uniform(n * 0.10, n * 0.22);
      sh.cx = rng.uniform(sh.rx, n - sh.rx);
      sh.cy = rng.uniform(sh.ry, n - sh.ry);
      if (with_motion) {
        sh.vx = rng.uniform(-1.5, 1.5);
        sh.vy = rng.uniform(-1.5, 1.5);
      }
      scene.shapes.push_back(sh);
    }
  }
  return scene;
}

int label_at(const Scene& scene, double x, double y, double t) {
  int cls = 0;
  for (const auto& sh : scene.shapes)
    if (shape_contains(sh, x, y, t)) cls = sh.cls;
  return cls;
}

void render_frame(const Scene& scene, const SyntheticConfig& cfg, double t, Rng& noise_rng,
                  Tensor* image, std::vector<int>* labels) {
  const int n = cfg.size;
  *image = Tensor({3, n, n});
  labels->assign(static_cast<size_t>(n) * n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int cls = label_at(scene, x, y, t);
      (*labels)[static_cast<size_t>(y * n + x)] = cls;
      // class-distinctive texture: per-class frequency sinusoid, scaled by noise
      double tex = std::sin(0.35 * (cls + 1) * x + scene.texture_phase[0]) *
                   std::cos(0.27 * (cls + 1) * y + scene.texture_phase[1]);
      for (int ch = 0; ch < 3; ++ch) {
        double v = kPalette[cls][ch] + cfg.noise_level * (0.12 * tex + noise_rng.normal(0.0, 0.35));
        image->at(ch, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  if (cfg.ignore_border) {
    // mark label-discontinuity pixels as ignore, as real datasets do
    std::vector<int> base = *labels;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        int c = base[static_cast<size_t>(y * n + x)];
        bool boundary = false;
        if (x + 1 < n && base[static_cast<size_t>(y * n + x + 1)] != c) boundary = true;
        if (y + 1 < n && base[static_cast<size_t>((y + 1) * n + x)] != c) boundary = true;
        if (boundary) (*labels)[static_cast<size_t>(y * n + x)] = cfg.ignore_index;
      }
  }
}

}  // namespace

int palette_size() { return kPaletteSize; }
const double* palette_color(int cls) { return kPalette[cls]; }

std::vector<SegmentationSample> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2)
    throw std::invalid_argument("generate_synthetic_dataset: need at least 2 classes");
  if (cfg.num_classes > kPaletteSize)
    throw std::invalid_argument("generate_synthetic_dataset: num_classes exceeds palette");
  std::vector<SegmentationSample> out;
  out.reserve(static_cast<size_t>(cfg.num_images));
  Rng root(cfg.seed);
  for (int i = 0; i < cfg.num_images; ++i) {
    Rng img_rng = root.fork(static_cast<uint64_t>(i) + 1);
    Scene scene = make_scene(img_rng, cfg, /*with_motion=*/false);
    SegmentationSample s;
    s.height = s.width = cfg.size;
    std::ostringstream id;
    id << "img_" << cfg.seed << "_" << i;
    s.id = id.str();
    render_frame(scene, cfg, 0.0, img_rng, &s.image, &s.labels);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<VideoClip> generate_synthetic_clips(const SyntheticConfig& cfg,
                                                int history_len) {
  if (cfg.num_classes < 2 || cfg.num_classes > kPaletteSize)
    throw std::invalid_argument("generate_synthetic_clips: bad class count");
  std::vector<VideoClip> out;
  Rng root(cfg.seed ^ 0x76696445ULL);
  for (int i = 0; i < cfg.num_images; ++i) {
    Rng clip_rng = root.fork(static_cast<uint64_t>(i) + 1);
    Scene scene = make_scene(clip_rng, cfg, /*with_motion=*/true);
    VideoClip clip;
    clip.height = clip.width = cfg.size;
    std::ostringstream id;
    id << "clip_" << cfg.seed << "_" << i;
    clip.id = id.str();
    for (int f = 0; f <= history_len; ++f) {
      double t = static_cast<double>(f - history_len);  // target frame at t=0
      Tensor image;
      std::vector<int> labels;
      render_frame(scene, cfg, t, clip_rng, &image, &labels);
      clip.frames.push_back(std::move(image));
      if (f == history_len) clip.labels = std::move(labels);
    }
    out.push_back(std::move(clip));
  }
  return out;
}

// ---------- IO ----------

namespace {

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

}  // namespace

void save_sample(const SegmentationSample& s, const std::string& image_path,
                 const std::string& label_path) {
  {
    std::ofstream f(image_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + image_path);
    f << "P6\n" << s.width << " " << s.height << "\n255\n";
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        for (int c = 0; c < 3; ++c) {
          uint8_t b = to_byte(s.image.at(c, y, x));
          f.write(reinterpret_cast<const char*>(&b), 1);
        }
  }
  {
    std::ofstream f(label_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + label_path);
    f << "P5\n" << s.width << " " << s.height << "\n255\n";
    for (int i = 0; i < s.height * s.width; ++i) {
      uint8_t b = static_cast<uint8_t>(s.labels[static_cast<size_t>(i)]);
      f.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
}

SegmentationSample load_image(const std::string& image_path) {
  SegmentationSample s;
  std::ifstream f(image_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + image_path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255)
    throw std::runtime_error("unsupported image format: " + image_path);
  f.get();
  s.width = w;
  s.height = h;
  s.image = Tensor({3, h, w});
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        s.image.at(c, y, x) = buf[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  s.id = std::filesystem::path(image_path).stem().string();
  return s;
}

SegmentationSample load_sample(const std::string& image_path,
                               const std::string& label_path) {
  SegmentationSample s;
  {
    std::ifstream f(image_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + image_path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255)
      throw std::runtime_error("unsupported image format: " + image_path);
    f.get();
    s.width = w;
    s.height = h;
    s.image = Tensor({3, h, w});
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          s.image.at(c, y, x) = buf[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  }
  {
    std::ifstream f(label_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + label_path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255)
      throw std::runtime_error("unsupported label format: " + label_path);
    f.get();
    if (w != s.width || h != s.height)
      throw std::runtime_error("label/image size mismatch: " + label_path);
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    s.labels.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) s.labels[i] = buf[i];
  }
  s.id = std::filesystem::path(image_path).stem().string();
  return s;
}

void write_manifest(const std::vector<SegmentationSample>& samples,
                    const std::string& dir, const std::string& manifest_path) {
  std::filesystem::create_directories(dir);
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot write " + manifest_path);
  for (const auto& s : samples) {
    std::string img = dir + "/" + s.id + ".ppm";
    std::string lab = dir + "/" + s.id + "_label.pgm";
    save_sample(s, img, lab);
    mf << img << " " << lab << " " << s.id << "\n";
  }
}

std::vector<SegmentationSample> load_manifest(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot read manifest " + manifest_path);
  std::vector<SegmentationSample> out;
  std::string img, lab, id;
  while (mf >> img >> lab >> id) {
    auto s = load_sample(img, lab);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

void write_clip_manifest(const std::vector<VideoClip>& clips, const std::string& dir,
                         const std::string& manifest_path) {
  std::filesystem::create_directories(dir);
  std::ofstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot write " + manifest_path);
  for (const auto& clip : clips) {
    for (size_t f = 0; f < clip.frames.size(); ++f) {
      SegmentationSample frame;
      frame.image = clip.frames[f];
      frame.height = clip.height;
      frame.width = clip.width;
      frame.labels.assign(static_cast<size_t>(clip.height) * clip.width, 0);
      if (f + 1 == clip.frames.size()) frame.labels = clip.labels;
      std::string img = dir + "/" + clip.id + "_f" + std::to_string(f) + ".ppm";
      std::string lab = dir + "/" + clip.id + "_label.pgm";
      save_sample(frame, img, lab);
      mf << img << (f + 1 == clip.frames.size() ? "" : " ");
    }
    mf << " " << dir + "/" + clip.id + "_label.pgm" << "\n";
  }
}

std::vector<VideoClip> load_clip_manifest(const std::string& manifest_path,
                                          int history_len) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot read clip manifest " + manifest_path);
  std::vector<VideoClip> out;
  std::string line;
  int idx = 0;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.size() < 2)
      throw std::runtime_error("malformed clip manifest line: " + line);
    std::string label_path = tokens.back();
    tokens.pop_back();
    VideoClip clip;
    for (const auto& frame_path : tokens) {
      auto s = load_sample(frame_path, label_path);
      clip.height = s.height;
      clip.width = s.width;
      clip.frames.push_back(std::move(s.image));
      clip.labels = std::move(s.labels);
    }
    // short clips are padded by repeating the earliest frame
    while (static_cast<int>(clip.frames.size()) < history_len + 1) {
      clip.frames.insert(clip.frames.begin(), clip.frames.front());
      clip.padded = true;
    }
    clip.id = "clip_" + std::to_string(idx++);
    out.push_back(std::move(clip));
  }
  return out;
}

}  // namespace mcibi
