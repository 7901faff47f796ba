#include "mcibi/config.hpp"

#include <fstream>
#include <sstream>

namespace mcibi {

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": " + v);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": " + v);
  }
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("invalid integer for " + key + ": " + v);
  }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("invalid seed for " + key + ": " + v);
  }
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(item, key));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::set_key(const std::string& dotted_key, const std::string& value) {
  auto dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("config key must be section.key: " + dotted_key);
  std::string section = dotted_key.substr(0, dot);
  std::string key = dotted_key.substr(dot + 1);

  auto unknown = [&]() -> ConfigError {
    return ConfigError("unknown config key: " + dotted_key);
  };

  try {
    if (section == "model") {
      if (key == "num_classes") model.num_classes = parse_int(value, dotted_key);
      else if (key == "feature_dim") model.feature_dim = parse_int(value, dotted_key);
      else if (key == "backbone_widths") model.backbone_widths = parse_int_list(value, dotted_key);
      else if (key == "residual_blocks") model.residual_blocks = parse_int(value, dotted_key);
      else if (key == "fusion") model.fusion = fusion_from_string(value);
      else if (key == "within_image") model.within_image = context_from_string(value);
      else if (key == "use_dca") model.use_dca = parse_bool(value, dotted_key);
      else throw unknown();
    } else if (section == "memory") {
      if (key == "momentum") memory.momentum = parse_double(value, dotted_key);
      else if (key == "epsilon_std") memory.epsilon_std = parse_double(value, dotted_key);
      else if (key == "init_policy") {
        if (value != "lazy" && value != "prescan")
          throw ConfigError("memory.init_policy must be lazy or prescan");
        memory.init_policy = value;
      } else if (key == "update") memory.update = parse_bool(value, dotted_key);
      else throw unknown();
    } else if (section == "training") {
      if (key == "lr") training.lr = parse_double(value, dotted_key);
      else if (key == "sgd_momentum") training.sgd_momentum = parse_double(value, dotted_key);
      else if (key == "weight_decay") training.weight_decay = parse_double(value, dotted_key);
      else if (key == "iterations") training.iterations = parse_int(value, dotted_key);
      else if (key == "batch_size") training.batch_size = parse_int(value, dotted_key);
      else if (key == "seed") training.seed = parse_u64(value, dotted_key);
      else if (key == "alpha") model.alpha = parse_double(value, dotted_key);
      else if (key == "log_interval") training.log_interval = parse_int(value, dotted_key);
      else if (key == "checkpoint_interval") training.checkpoint_interval = parse_int(value, dotted_key);
      else throw unknown();
    } else if (section == "inference") {
      if (key == "iis_stages") inference.iis_stages = parse_int(value, dotted_key);
      else if (key == "deterministic_sampling")
        inference.deterministic_sampling = parse_bool(value, dotted_key);
      else throw unknown();
    } else if (section == "data") {
      if (key == "source") {
        if (value != "synthetic" && value != "manifest")
          throw ConfigError("data.source must be synthetic or manifest");
        data.source = value;
      } else if (key == "seed") data.seed = parse_u64(value, dotted_key);
      else if (key == "train_images") data.train_images = parse_int(value, dotted_key);
      else if (key == "val_images") data.val_images = parse_int(value, dotted_key);
      else if (key == "size") data.size = parse_int(value, dotted_key);
      else if (key == "noise_level") data.noise_level = parse_double(value, dotted_key);
      else if (key == "class_presence_prob")
        data.class_presence_prob = parse_double(value, dotted_key);
      else if (key == "manifest_train") data.manifest_train = value;
      else if (key == "manifest_val") data.manifest_val = value;
      else if (key == "ignore_index") data.ignore_index = parse_int(value, dotted_key);
      else throw unknown();
    } else if (section == "video") {
      if (key == "history") video.history = parse_int(value, dotted_key);
      else if (key == "raw_features") video.raw_features = parse_bool(value, dotted_key);
      else throw unknown();
    } else {
      throw ConfigError("unknown config section: " + section);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid value for ") + dotted_key + ": " + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (model.num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (model.feature_dim < 2) throw ConfigError("model.feature_dim must be >= 2");
  if (model.backbone_widths.size() != 2)
    throw ConfigError("model.backbone_widths needs exactly two entries");
  if (model.residual_blocks < 0) throw ConfigError("model.residual_blocks must be >= 0");
  if (memory.momentum < 0.0 || memory.momentum > 1.0)
    throw ConfigError("memory.momentum must lie in [0,1]");
  if (memory.epsilon_std <= 0.0) throw ConfigError("memory.epsilon_std must be > 0");
  if (memory.init_policy != "lazy" && memory.init_policy != "prescan")
    throw ConfigError("memory.init_policy must be lazy or prescan");
  if (data.source != "synthetic" && data.source != "manifest")
    throw ConfigError("data.source must be synthetic or manifest");
  if (model.alpha < 0.0) throw ConfigError("training.alpha must be >= 0");
  if (training.iterations <= 0) throw ConfigError("training.iterations must be > 0");
  if (training.batch_size <= 0) throw ConfigError("training.batch_size must be > 0");
  if (training.lr <= 0.0) throw ConfigError("training.lr must be > 0");
  if (inference.iis_stages < 1) throw ConfigError("inference.iis_stages must be >= 1");
  if (data.size < 8) throw ConfigError("data.size must be >= 8");
  if (data.source == "synthetic") {
    if (data.train_images <= 0 || data.val_images <= 0)
      throw ConfigError("data.train_images and data.val_images must be > 0");
    if (model.num_classes > palette_size())
      throw ConfigError("model.num_classes exceeds the synthetic palette");
  } else if (data.manifest_train.empty() || data.manifest_val.empty()) {
    throw ConfigError("manifest data source needs manifest_train and manifest_val");
  }
  if (video.history < 0) throw ConfigError("video.history must be >= 0");
}

ModelConfig ExperimentConfig::resolved_model() const {
  ModelConfig m = model;
  m.ignore_index = data.ignore_index;
  m.epsilon_std = memory.epsilon_std;
  m.mean_mode_sampling = inference.deterministic_sampling;
  m.history_len = video.history;
  m.video_raw_features = video.raw_features;
  return m;
}

std::string ExperimentConfig::canonical_text() const {
  std::ostringstream os;
  os << "[model]\n";
  os << "num_classes = " << model.num_classes << "\n";
  os << "feature_dim = " << model.feature_dim << "\n";
  os << "backbone_widths = " << join_ints(model.backbone_widths) << "\n";
  os << "residual_blocks = " << model.residual_blocks << "\n";
  os << "fusion = " << to_string(model.fusion) << "\n";
  os << "within_image = " << to_string(model.within_image) << "\n";
  os << "use_dca = " << (model.use_dca ? "true" : "false") << "\n";
  os << "[memory]\n";
  os << "momentum = " << fmt(memory.momentum) << "\n";
  os << "epsilon_std = " << fmt(memory.epsilon_std) << "\n";
  os << "init_policy = " << memory.init_policy << "\n";
  os << "update = " << (memory.update ? "true" : "false") << "\n";
  os << "[training]\n";
  os << "lr = " << fmt(training.lr) << "\n";
  os << "sgd_momentum = " << fmt(training.sgd_momentum) << "\n";
  os << "weight_decay = " << fmt(training.weight_decay) << "\n";
  os << "iterations = " << training.iterations << "\n";
  os << "batch_size = " << training.batch_size << "\n";
  os << "seed = " << training.seed << "\n";
  os << "alpha = " << fmt(model.alpha) << "\n";
  os << "log_interval = " << training.log_interval << "\n";
  os << "checkpoint_interval = " << training.checkpoint_interval << "\n";
  os << "[inference]\n";
  os << "iis_stages = " << inference.iis_stages << "\n";
  os << "deterministic_sampling = " << (inference.deterministic_sampling ? "true" : "false")
     << "\n";
  os << "[data]\n";
  os << "source = " << data.source << "\n";
  os << "seed = " << data.seed << "\n";
  os << "train_images = " << data.train_images << "\n";
  os << "val_images = " << data.val_images << "\n";
  os << "size = " << data.size << "\n";
  os << "noise_level = " << fmt(data.noise_level) << "\n";
  os << "class_presence_prob = " << fmt(data.class_presence_prob) << "\n";
  os << "manifest_train = " << data.manifest_train << "\n";
  os << "manifest_val = " << data.manifest_val << "\n";
  os << "ignore_index = " << data.ignore_index << "\n";
  os << "[video]\n";
  os << "history = " << video.history << "\n";
  os << "raw_features = " << (video.raw_features ? "true" : "false") << "\n";
  return os.str();
}

uint64_t ExperimentConfig::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    cfg.set_key(section + "." + key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config file " + path);
  f << cfg.canonical_text();
}

}  // namespace mcibi
