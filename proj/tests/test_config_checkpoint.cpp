#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mcibi/checkpoint.hpp"
#include "mcibi/config.hpp"
#include "test_util.hpp"

using namespace mcibi_test;
using mcibi::ConfigError;
using mcibi::ExperimentConfig;
using mcibi::MemoryBank;

namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("set_key covers every section and rejects unknown keys") {
  ExperimentConfig cfg;
  cfg.set_key("model.num_classes", "5");
  cfg.set_key("model.feature_dim", "16");
  cfg.set_key("model.fusion", "add");
  cfg.set_key("model.within_image", "pyramid");
  cfg.set_key("model.use_dca", "false");
  cfg.set_key("memory.momentum", "0.2");
  cfg.set_key("memory.init_policy", "prescan");
  cfg.set_key("memory.update", "false");
  cfg.set_key("training.lr", "0.05");
  cfg.set_key("training.iterations", "123");
  cfg.set_key("training.alpha", "0.3");
  cfg.set_key("inference.iis_stages", "3");
  cfg.set_key("data.noise_level", "0.5");
  cfg.set_key("video.history", "2");

  CHECK(cfg.model.num_classes == 5);
  CHECK(cfg.model.fusion == mcibi::FusionKind::kAdd);
  CHECK(cfg.model.within_image == mcibi::ContextKind::kPyramid);
  CHECK_FALSE(cfg.model.use_dca);
  CHECK(cfg.memory.momentum == 0.2);
  CHECK_FALSE(cfg.memory.update);
  CHECK(cfg.training.iterations == 123);
  CHECK(cfg.model.alpha == 0.3);
  CHECK(cfg.inference.iis_stages == 3);
  CHECK(cfg.video.history == 2);

  CHECK_THROWS_AS(cfg.set_key("model.bogus", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set_key("nosection.lr", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set_key("plainkey", "1"), ConfigError);
}

TEST_CASE("validation catches out-of-range values") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  auto bad = cfg;
  bad.memory.momentum = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.memory.momentum = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.model.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.training.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.inference.iis_stages = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.memory.init_policy = "eager";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.data.source = "imagenet";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.model.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("canonical text round trips and drives a stable hash") {
  ExperimentConfig cfg;
  cfg.set_key("model.num_classes", "5");
  cfg.set_key("training.lr", "0.034999999999999996");  // exercises precision 17
  auto text = cfg.canonical_text();
  auto back = mcibi::parse_config_text(text);
  CHECK(back.canonical_text() == text);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.training.lr == cfg.training.lr);

  auto other = cfg;
  other.set_key("training.lr", "0.02");
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("parser rejects unknown keys and malformed lines") {
  CHECK_THROWS_AS(mcibi::parse_config_text("[model]\nimaginary = 3\n"), ConfigError);
  CHECK_THROWS_AS(mcibi::parse_config_text("[model]\nnum_classes\n"), ConfigError);
  CHECK_THROWS_AS(mcibi::parse_config_text("num_classes = 4\n"), ConfigError);
  CHECK_NOTHROW(mcibi::parse_config_text("# comment only\n\n"));
  CHECK_NOTHROW(mcibi::parse_config_text("[model]\nnum_classes = 4\n"));
}

TEST_CASE("config file save/load round trip") {
  ExperimentConfig cfg;
  cfg.set_key("data.train_images", "6");
  auto dir = fs::temp_directory_path() / "mcibi_cfg_test";
  fs::create_directories(dir);
  auto path = (dir / "exp.ini").string();
  mcibi::save_config(cfg, path);
  auto back = mcibi::load_config(path);
  CHECK(back.hash() == cfg.hash());
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip is byte identical and restores state") {
  mcibi::nn::ParamRegistry reg;
  Rng rng(5);
  reg.add("a.weight", random_tensor({4, 3}, rng));
  reg.add("a.bias", random_tensor({4}, rng));
  reg.add("b.weight", random_tensor({2, 4, 3, 3}, rng));

  mcibi::nn::SgdOptimizer opt(0.02, 0.9, 1e-4, 100);
  // populate velocity via one step with fake gradients
  for (const auto& p : reg.params()) {
    p->ensure_grad();
    for (int i = 0; i < p->grad.numel(); ++i) p->grad[i] = std::sin(0.1 * i);
  }
  opt.step(reg, 0);

  MemoryBank bank(3, 8, 0.1);
  bank.set_row(0, 1.5, 0.25, true);
  bank.set_row(2, -0.5, 2.0, true);

  auto dir = fs::temp_directory_path() / "mcibi_ckpt_test";
  fs::create_directories(dir);
  auto p1 = (dir / "a.ckpt").string();
  auto p2 = (dir / "b.ckpt").string();
  mcibi::CheckpointMeta meta{0xdeadbeefull, 42};
  mcibi::save_checkpoint(p1, reg, opt, bank, meta);

  // load into a registry with the same layout but different values
  mcibi::nn::ParamRegistry reg2;
  Rng rng2(6);
  reg2.add("a.weight", random_tensor({4, 3}, rng2));
  reg2.add("a.bias", random_tensor({4}, rng2));
  reg2.add("b.weight", random_tensor({2, 4, 3, 3}, rng2));
  mcibi::nn::SgdOptimizer opt2(0.02, 0.9, 1e-4, 100);
  MemoryBank bank2;
  auto meta2 = mcibi::load_checkpoint(p1, reg2, opt2, bank2);

  CHECK(meta2.config_hash == meta.config_hash);
  CHECK(meta2.iteration == 42);
  for (size_t i = 0; i < reg.size(); ++i)
    CHECK(reg2.params()[i]->value.vec() == reg.params()[i]->value.vec());
  CHECK(bank2.stats().vec() == bank.stats().vec());
  CHECK(bank2.momentum() == bank.momentum());
  CHECK(bank2.is_initialized(0));
  CHECK_FALSE(bank2.is_initialized(1));

  mcibi::save_checkpoint(p2, reg2, opt2, bank2, meta2);
  CHECK(read_bytes(p1) == read_bytes(p2));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint layout mismatches are rejected") {
  mcibi::nn::ParamRegistry reg;
  Rng rng(7);
  reg.add("w", random_tensor({2, 2}, rng));
  mcibi::nn::SgdOptimizer opt;
  MemoryBank bank(2, 4, 0.1);
  auto dir = fs::temp_directory_path() / "mcibi_ckpt_bad";
  fs::create_directories(dir);
  auto path = (dir / "a.ckpt").string();
  mcibi::save_checkpoint(path, reg, opt, bank, {1, 1});

  mcibi::nn::ParamRegistry renamed;
  renamed.add("w_other", random_tensor({2, 2}, rng));
  mcibi::nn::SgdOptimizer o2;
  MemoryBank b2;
  CHECK_THROWS(mcibi::load_checkpoint(path, renamed, o2, b2));

  mcibi::nn::ParamRegistry reshaped;
  reshaped.add("w", random_tensor({2, 3}, rng));
  CHECK_THROWS(mcibi::load_checkpoint(path, reshaped, o2, b2));

  CHECK_THROWS(mcibi::load_checkpoint((dir / "missing.ckpt").string(), reg, o2, b2));

  // corrupt the magic
  auto bytes = read_bytes(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary) << bytes;
  CHECK_THROWS(mcibi::load_checkpoint(path, reg, o2, b2));
  fs::remove_all(dir);
}

TEST_CASE("bank text export lists every class row") {
  MemoryBank bank(3, 4, 0.25);
  bank.set_row(0, 1.0, 0.5, true);
  auto text = mcibi::bank_to_text(bank);
  CHECK(text.find("momentum") != std::string::npos);
  CHECK(text.find("0.25") != std::string::npos);
  int lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines >= 4);  // header + 3 class rows
}
