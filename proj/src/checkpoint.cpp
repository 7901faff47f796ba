#include "mcibi/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mcibi {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'B', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  uint32_t n = get<uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put<int32_t>(os, t.dim(i));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double)) * t.numel());
}

Tensor get_tensor(std::istream& is) {
  uint32_t nd = get<uint32_t>(is);
  std::vector<int> shape(nd);
  for (uint32_t i = 0; i < nd; ++i) shape[i] = get<int32_t>(is);
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double)) * t.numel());
  if (!is) throw std::runtime_error("checkpoint: truncated tensor");
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamRegistry& params,
                     const nn::SgdOptimizer& opt, const MemoryBank& bank,
                     const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write(kMagic, 4);
  put<uint32_t>(os, kVersion);
  put<uint64_t>(os, meta.config_hash);
  put<int32_t>(os, meta.iteration);

  put<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    put_string(os, params.names()[i]);
    put_tensor(os, params.params()[i]->value);
  }

  const auto& vel = opt.buffers();
  put<uint32_t>(os, static_cast<uint32_t>(vel.size()));
  for (const auto& t : vel) put_tensor(os, t);

  put<int32_t>(os, bank.num_classes());
  put<int32_t>(os, bank.feature_dim());
  put<double>(os, bank.momentum());
  put_tensor(os, bank.stats());
  for (uint8_t b : bank.initialized_mask()) put<uint8_t>(os, b);
}

CheckpointMeta load_checkpoint(const std::string& path, nn::ParamRegistry& params,
                               nn::SgdOptimizer& opt, MemoryBank& bank) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (get<uint32_t>(is) != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  CheckpointMeta meta;
  meta.config_hash = get<uint64_t>(is);
  meta.iteration = get<int32_t>(is);

  uint32_t n_params = get<uint32_t>(is);
  if (n_params != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name = get_string(is);
    if (name != params.names()[i])
      throw std::runtime_error("checkpoint: parameter name mismatch at " + name);
    Tensor t = get_tensor(is);
    if (t.shape() != params.params()[i]->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    params.params()[i]->value = std::move(t);
  }

  uint32_t n_vel = get<uint32_t>(is);
  auto& vel = opt.buffers();
  vel.clear();
  for (uint32_t i = 0; i < n_vel; ++i) vel.push_back(get_tensor(is));

  int k = get<int32_t>(is);
  int z = get<int32_t>(is);
  double m = get<double>(is);
  bank = MemoryBank(k, z, m);
  bank.mutable_stats() = get_tensor(is);
  for (int c = 0; c < k; ++c) {
    uint8_t b = get<uint8_t>(is);
    bank.set_row(c, bank.mean_of(c), bank.std_of(c), b != 0);
  }
  return meta;
}

std::string bank_to_text(const MemoryBank& bank) {
  std::ostringstream os;
  os << "# momentum " << bank.momentum() << "\n";
  os << "# class mean std initialized\n";
  os << std::setprecision(17);
  for (int c = 0; c < bank.num_classes(); ++c)
    os << c << " " << bank.mean_of(c) << " " << bank.std_of(c) << " "
       << (bank.is_initialized(c) ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace mcibi
