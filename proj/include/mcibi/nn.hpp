#ifndef MCIBI_NN_HPP_
#define MCIBI_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "mcibi/autograd.hpp"
#include "mcibi/rng.hpp"

namespace mcibi {
namespace nn {

// Named parameter list. Order of registration is the serialization order.
class ParamRegistry {
 public:
  ag::Var add(const std::string& name, Tensor init) {
    auto v = ag::leaf(std::move(init), true);
    names_.push_back(name);
    params_.push_back(v);
    return v;
  }
  size_t size() const { return params_.size(); }
  const std::vector<ag::Var>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  ag::Var find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    return nullptr;
  }
  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> params_;
};

// He fan-in initialization for a {cout, fan_in...} weight tensor.
Tensor init_fan_in(std::vector<int> shape, Rng& rng);

struct Conv1x1 {
  ag::Var weight, bias;
  Conv1x1() = default;
  Conv1x1(ParamRegistry& reg, const std::string& name, int cin, int cout, Rng& rng);
  ag::Var operator()(const ag::Var& x) const { return ag::conv1x1(x, weight, bias); }
  // same parameters applied to {N, cin} row matrices
  ag::Var rows(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct Conv3x3 {
  ag::Var weight, bias;
  int stride = 1;
  Conv3x3() = default;
  Conv3x3(ParamRegistry& reg, const std::string& name, int cin, int cout, int stride,
          Rng& rng);
  ag::Var operator()(const ag::Var& x) const {
    return ag::conv3x3(x, weight, bias, stride);
  }
};

// SGD with momentum, weight decay and poly learning-rate decay.
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(double base_lr, double momentum, double weight_decay, int total_iters,
               double poly_power = 0.9)
      : base_lr_(base_lr),
        momentum_(momentum),
        weight_decay_(weight_decay),
        total_iters_(total_iters),
        poly_power_(poly_power) {}

  double lr_at(int iter) const {
    if (total_iters_ <= 0) return base_lr_;
    double f = 1.0 - static_cast<double>(iter) / total_iters_;
    return base_lr_ * std::pow(std::max(f, 0.0), poly_power_);
  }

  void step(ParamRegistry& reg, int iter);

  std::vector<Tensor>& buffers() { return velocity_; }
  const std::vector<Tensor>& buffers() const { return velocity_; }

  double base_lr() const { return base_lr_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  int total_iters() const { return total_iters_; }
  double poly_power() const { return poly_power_; }

 private:
  double base_lr_ = 0.01;
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  int total_iters_ = 0;
  double poly_power_ = 0.9;
  std::vector<Tensor> velocity_;
};

}  // namespace nn
}  // namespace mcibi

#endif  // MCIBI_NN_HPP_
