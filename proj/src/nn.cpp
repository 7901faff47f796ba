#include "mcibi/nn.hpp"

namespace mcibi {
namespace nn {

Tensor init_fan_in(std::vector<int> shape, Rng& rng) {
  int fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  double scale = std::sqrt(2.0 / std::max(fan_in, 1));
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

Conv1x1::Conv1x1(ParamRegistry& reg, const std::string& name, int cin, int cout,
                 Rng& rng) {
  weight = reg.add(name + ".weight", init_fan_in({cout, cin}, rng));
  bias = reg.add(name + ".bias", Tensor::zeros({cout}));
}

Conv3x3::Conv3x3(ParamRegistry& reg, const std::string& name, int cin, int cout,
                 int stride_in, Rng& rng)
    : stride(stride_in) {
  weight = reg.add(name + ".weight", init_fan_in({cout, cin, 3, 3}, rng));
  bias = reg.add(name + ".bias", Tensor::zeros({cout}));
}

void SgdOptimizer::step(ParamRegistry& reg, int iter) {
  if (velocity_.empty()) {
    velocity_.reserve(reg.size());
    for (const auto& p : reg.params()) velocity_.push_back(Tensor::zeros(p->value.shape()));
  }
  double lr = lr_at(iter);
  for (size_t i = 0; i < reg.size(); ++i) {
    ag::Node& p = *reg.params()[i];
    if (p.grad.empty()) continue;
    Tensor& v = velocity_[i];
    for (int j = 0; j < p.value.numel(); ++j) {
      double g = p.grad[j] + weight_decay_ * p.value[j];
      v[j] = momentum_ * v[j] + g;
      p.value[j] -= lr * v[j];
    }
  }
}

}  // namespace nn
}  // namespace mcibi
