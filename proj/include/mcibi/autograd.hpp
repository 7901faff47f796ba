#ifndef MCIBI_AUTOGRAD_HPP_
#define MCIBI_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "mcibi/tensor.hpp"

namespace mcibi {
namespace ag {

struct Node;
using Var = std::shared_ptr<Node>;

// One node of the dynamically built computation tape. Parameters are
// long-lived leaves reused across forward passes; everything else is
// created per forward and freed with the tape.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

Var leaf(Tensor value, bool requires_grad);
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// Reverse pass from a scalar root. Accumulates into leaf grads.
void backward(const Var& root);

// ---- elementwise / arithmetic ----
Var add(const Var& a, const Var& b);
Var sum_vars(const std::vector<Var>& xs);
Var scale(const Var& a, double s);
Var relu(const Var& x);

// ---- projections ----
// x: {Cin,h,w}, weight: {Cout,Cin}, bias: {Cout} -> {Cout,h,w}
Var conv1x1(const Var& x, const Var& weight, const Var& bias);
// x: {Cin,h,w}, weight: {Cout,Cin,3,3}, bias: {Cout}, zero pad 1
Var conv3x3(const Var& x, const Var& weight, const Var& bias, int stride);
// x: {N,Cin}, weight: {Cout,Cin}, bias: {Cout} -> {N,Cout}
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---- matrix products ----
Var matmul(const Var& a, const Var& b);     // {N,M} x {M,P}
Var matmul_nt(const Var& a, const Var& b);  // {N,D} x {M,D}^T -> {N,M}

// ---- shape moves ----
Var chw_to_mat(const Var& x);                    // {C,h,w} -> {h*w,C}
Var mat_to_chw(const Var& x, int h, int w);      // {h*w,C} -> {C,h,w}

// ---- normalization ----
Var softmax_channels(const Var& x);  // {K,h,w}, softmax over K per position
Var softmax_rows(const Var& x);      // {N,M}, softmax per row

// ---- resampling ----
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var avgpool_grid(const Var& x, int grid_h, int grid_w);

// ---- padding / cropping ----
// reflect-pad on the bottom/right edges; pad sizes must be < input dims
Var pad_reflect(const Var& x, int pad_h, int pad_w);
// keep the top-left {C, h, w} region
Var crop(const Var& x, int h, int w);

// ---- fusion helpers ----
Var concat_channels(const std::vector<Var>& xs);
// xs[i]: {Z,h,w}, weights: {n,h,w} -> sum_i weights[i] * xs[i]
Var weighted_sum_channel(const std::vector<Var>& xs, const Var& weights);

// ---- losses ----
// logits: {K,H,W}, labels: row-major H*W ints, ignore_index excluded.
// Returns scalar {1}: mean cross entropy over non-ignored pixels
// (0 when every pixel is ignored). valid_count, if given, receives the
// number of contributing pixels.
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels,
                         int ignore_index, int* valid_count = nullptr);

}  // namespace ag
}  // namespace mcibi

#endif  // MCIBI_AUTOGRAD_HPP_
