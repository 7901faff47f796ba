#include "mcibi/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mcibi {
namespace ag {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

MatMap as_mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }
ConstMatMap as_cmat(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}

Var make_node(Tensor value, std::vector<Var> inputs,
              std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void check_shape(const Var& v, const std::vector<int>& shape, const char* what) {
  if (v->value.shape() != shape)
    throw std::invalid_argument(std::string(what) + ": expected shape " +
                                Tensor::shape_str(shape) + ", got " +
                                Tensor::shape_str(v->value.shape()));
}

struct BilinearTap {
  int lo, hi;
  double w_lo, w_hi;
};

// half-pixel mapping, clamped at borders; taps sum to 1
std::vector<BilinearTap> bilinear_taps(int in_n, int out_n) {
  std::vector<BilinearTap> taps(static_cast<size_t>(out_n));
  for (int o = 0; o < out_n; ++o) {
    double src = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    int lo = static_cast<int>(std::floor(src));
    int hi = std::min(lo + 1, in_n - 1);
    double f = src - lo;
    taps[static_cast<size_t>(o)] = {lo, hi, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) return;

  // iterative post-order topo sort
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  std::unordered_set<Node*> on_stack;
  stack.emplace_back(root.get(), 0);
  on_stack.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child->requires_grad && !visited.count(child) && !on_stack.count(child)) {
        stack.emplace_back(child, 0);
        on_stack.insert(child);
      }
    } else {
      visited.insert(node);
      on_stack.erase(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_shape(b, a->value.shape(), "add");
  Tensor out = a->value;
  for (int i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node& in = *n.inputs[static_cast<size_t>(k)];
      if (!in.requires_grad) continue;
      Tensor& g = in.ensure_grad();
      for (int i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sum_vars(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum_vars: empty input");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (int i = 0; i < out.numel(); ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (int i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make_node(std::move(out), {x}, [](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int i = 0; i < g.numel(); ++i)
      if (in.value[i] > 0.0) g[i] += n.grad[i];
  });
}

Var conv1x1(const Var& x, const Var& weight, const Var& bias) {
  const int cin = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int cout = weight->value.dim(0);
  if (weight->value.dim(1) != cin)
    throw std::invalid_argument("conv1x1: weight/input channel mismatch");
  const int hw = h * w;
  Tensor out({cout, h, w});
  as_mat(out, cout, hw).noalias() =
      as_mat(weight->value, cout, cin) * as_mat(x->value, cin, hw);
  for (int c = 0; c < cout; ++c) {
    double b = bias->value[c];
    for (int i = 0; i < hw; ++i) out[c * hw + i] += b;
  }
  return make_node(std::move(out), {x, weight, bias}, [cin, cout, hw](Node& n) {
    Node& x_in = *n.inputs[0];
    Node& w_in = *n.inputs[1];
    Node& b_in = *n.inputs[2];
    ConstMatMap dy = as_cmat(n.grad, cout, hw);
    if (x_in.requires_grad)
      as_mat(x_in.ensure_grad(), cin, hw).noalias() +=
          as_mat(w_in.value, cout, cin).transpose() * dy;
    if (w_in.requires_grad)
      as_mat(w_in.ensure_grad(), cout, cin).noalias() +=
          dy * as_mat(x_in.value, cin, hw).transpose();
    if (b_in.requires_grad) {
      Tensor& gb = b_in.ensure_grad();
      for (int c = 0; c < cout; ++c) gb[c] += dy.row(c).sum();
    }
  });
}

Var conv3x3(const Var& x, const Var& weight, const Var& bias, int stride) {
  const int cin = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int cout = weight->value.dim(0);
  if (weight->value.dim(1) != cin)
    throw std::invalid_argument("conv3x3: weight/input channel mismatch");
  const int oh = (h + 2 - 3) / stride + 1;
  const int ow = (w + 2 - 3) / stride + 1;
  const int cols = oh * ow, rows = cin * 9;

  Tensor col({rows, cols});
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.data() + ((c * 3 + ky) * 3 + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ky - 1;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kx - 1;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x->value.at(c, iy, ix)
                                    : 0.0;
          }
        }
      }

  Tensor out({cout, oh, ow});
  as_mat(out, cout, cols).noalias() =
      as_mat(weight->value, cout, rows) * as_mat(col, rows, cols);
  for (int c = 0; c < cout; ++c) {
    double b = bias->value[c];
    for (int i = 0; i < cols; ++i) out[c * cols + i] += b;
  }

  auto col_keep = std::make_shared<Tensor>(std::move(col));
  return make_node(
      std::move(out), {x, weight, bias},
      [cin, cout, h, w, oh, ow, stride, rows, cols, col_keep](Node& n) {
        Node& x_in = *n.inputs[0];
        Node& w_in = *n.inputs[1];
        Node& b_in = *n.inputs[2];
        ConstMatMap dy = as_cmat(n.grad, cout, cols);
        if (w_in.requires_grad)
          as_mat(w_in.ensure_grad(), cout, rows).noalias() +=
              dy * as_mat(*col_keep, rows, cols).transpose();
        if (b_in.requires_grad) {
          Tensor& gb = b_in.ensure_grad();
          for (int c = 0; c < cout; ++c) gb[c] += dy.row(c).sum();
        }
        if (x_in.requires_grad) {
          Tensor dcol({rows, cols});
          as_mat(dcol, rows, cols).noalias() =
              as_mat(w_in.value, cout, rows).transpose() * dy;
          Tensor& gx = x_in.ensure_grad();
          for (int c = 0; c < cin; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const double* row = dcol.data() + ((c * 3 + ky) * 3 + kx) * cols;
                for (int oy = 0; oy < oh; ++oy) {
                  int iy = oy * stride + ky - 1;
                  if (iy < 0 || iy >= h) continue;
                  for (int ox = 0; ox < ow; ++ox) {
                    int ix = ox * stride + kx - 1;
                    if (ix >= 0 && ix < w) gx.at(c, iy, ix) += row[oy * ow + ox];
                  }
                }
              }
        }
      });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const int n_rows = x->value.dim(0), cin = x->value.dim(1);
  const int cout = weight->value.dim(0);
  if (weight->value.dim(1) != cin)
    throw std::invalid_argument("linear: weight/input mismatch");
  Tensor out({n_rows, cout});
  as_mat(out, n_rows, cout).noalias() =
      as_mat(x->value, n_rows, cin) * as_mat(weight->value, cout, cin).transpose();
  for (int r = 0; r < n_rows; ++r)
    for (int c = 0; c < cout; ++c) out.at(r, c) += bias->value[c];
  return make_node(std::move(out), {x, weight, bias}, [n_rows, cin, cout](Node& n) {
    Node& x_in = *n.inputs[0];
    Node& w_in = *n.inputs[1];
    Node& b_in = *n.inputs[2];
    ConstMatMap dy = as_cmat(n.grad, n_rows, cout);
    if (x_in.requires_grad)
      as_mat(x_in.ensure_grad(), n_rows, cin).noalias() +=
          dy * as_mat(w_in.value, cout, cin);
    if (w_in.requires_grad)
      as_mat(w_in.ensure_grad(), cout, cin).noalias() +=
          dy.transpose() * as_mat(x_in.value, n_rows, cin);
    if (b_in.requires_grad) {
      Tensor& gb = b_in.ensure_grad();
      for (int c = 0; c < cout; ++c) gb[c] += dy.col(c).sum();
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const int n = a->value.dim(0), m = a->value.dim(1), p = b->value.dim(1);
  if (b->value.dim(0) != m) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor out({n, p});
  as_mat(out, n, p).noalias() = as_mat(a->value, n, m) * as_mat(b->value, m, p);
  return make_node(std::move(out), {a, b}, [n, m, p](Node& nd) {
    Node& a_in = *nd.inputs[0];
    Node& b_in = *nd.inputs[1];
    ConstMatMap dy = as_cmat(nd.grad, n, p);
    if (a_in.requires_grad)
      as_mat(a_in.ensure_grad(), n, m).noalias() +=
          dy * as_mat(b_in.value, m, p).transpose();
    if (b_in.requires_grad)
      as_mat(b_in.ensure_grad(), m, p).noalias() +=
          as_mat(a_in.value, n, m).transpose() * dy;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const int n = a->value.dim(0), d = a->value.dim(1), m = b->value.dim(0);
  if (b->value.dim(1) != d) throw std::invalid_argument("matmul_nt: dim mismatch");
  Tensor out({n, m});
  as_mat(out, n, m).noalias() =
      as_mat(a->value, n, d) * as_mat(b->value, m, d).transpose();
  return make_node(std::move(out), {a, b}, [n, d, m](Node& nd) {
    Node& a_in = *nd.inputs[0];
    Node& b_in = *nd.inputs[1];
    ConstMatMap dy = as_cmat(nd.grad, n, m);
    if (a_in.requires_grad)
      as_mat(a_in.ensure_grad(), n, d).noalias() += dy * as_mat(b_in.value, m, d);
    if (b_in.requires_grad)
      as_mat(b_in.ensure_grad(), m, d).noalias() +=
          dy.transpose() * as_mat(a_in.value, n, d);
  });
}

Var chw_to_mat(const Var& x) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int hw = h * w;
  Tensor out({hw, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out.at(i, ch) = x->value[ch * hw + i];
  return make_node(std::move(out), {x}, [c, hw](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) g[ch * hw + i] += n.grad.at(i, ch);
  });
}

Var mat_to_chw(const Var& x, int h, int w) {
  const int hw = x->value.dim(0), c = x->value.dim(1);
  if (hw != h * w) throw std::invalid_argument("mat_to_chw: spatial size mismatch");
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out[ch * hw + i] = x->value.at(i, ch);
  return make_node(std::move(out), {x}, [c, hw](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) g.at(i, ch) += n.grad[ch * hw + i];
  });
}

Var softmax_channels(const Var& x) {
  const int k = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int hw = h * w;
  Tensor out = x->value;
  for (int i = 0; i < hw; ++i) {
    double mx = -1e300;
    for (int c = 0; c < k; ++c) mx = std::max(mx, out[c * hw + i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      double e = std::exp(out[c * hw + i] - mx);
      out[c * hw + i] = e;
      z += e;
    }
    for (int c = 0; c < k; ++c) out[c * hw + i] /= z;
  }
  return make_node(std::move(out), {x}, [k, hw](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (int c = 0; c < k; ++c) dot += n.grad[c * hw + i] * n.value[c * hw + i];
      for (int c = 0; c < k; ++c)
        g[c * hw + i] += n.value[c * hw + i] * (n.grad[c * hw + i] - dot);
    }
  });
}

Var softmax_rows(const Var& x) {
  const int n_rows = x->value.dim(0), m = x->value.dim(1);
  Tensor out = x->value;
  for (int r = 0; r < n_rows; ++r) {
    double* row = out.data() + r * m;
    double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (int c = 0; c < m; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (int c = 0; c < m; ++c) row[c] /= z;
  }
  return make_node(std::move(out), {x}, [n_rows, m](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int r = 0; r < n_rows; ++r) {
      const double* y = n.value.data() + r * m;
      const double* dy = n.grad.data() + r * m;
      double dot = 0.0;
      for (int c = 0; c < m; ++c) dot += dy[c] * y[c];
      double* gr = g.data() + r * m;
      for (int c = 0; c < m; ++c) gr[c] += y[c] * (dy[c] - dot);
    }
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<size_t>(ox)];
        out.at(ch, oy, ox) =
            a.w_lo * (b.w_lo * x->value.at(ch, a.lo, b.lo) +
                      b.w_hi * x->value.at(ch, a.lo, b.hi)) +
            a.w_hi * (b.w_lo * x->value.at(ch, a.hi, b.lo) +
                      b.w_hi * x->value.at(ch, a.hi, b.hi));
      }
    }
  return make_node(std::move(out), {x}, [c, out_h, out_w, ty, tx](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[static_cast<size_t>(ox)];
          double dy = n.grad.at(ch, oy, ox);
          g.at(ch, a.lo, b.lo) += a.w_lo * b.w_lo * dy;
          g.at(ch, a.lo, b.hi) += a.w_lo * b.w_hi * dy;
          g.at(ch, a.hi, b.lo) += a.w_hi * b.w_lo * dy;
          g.at(ch, a.hi, b.hi) += a.w_hi * b.w_hi * dy;
        }
      }
  });
}

Var avgpool_grid(const Var& x, int grid_h, int grid_w) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (grid_h > h || grid_w > w)
    throw std::invalid_argument("avgpool_grid: grid larger than input");
  auto bin = [](int i, int n, int g) { return (i * n) / g; };
  Tensor out({c, grid_h, grid_w});
  for (int ch = 0; ch < c; ++ch)
    for (int gy = 0; gy < grid_h; ++gy) {
      int y0 = bin(gy, h, grid_h), y1 = bin(gy + 1, h, grid_h);
      for (int gx = 0; gx < grid_w; ++gx) {
        int x0 = bin(gx, w, grid_w), x1 = bin(gx + 1, w, grid_w);
        double s = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += x->value.at(ch, y, xx);
        out.at(ch, gy, gx) = s / ((y1 - y0) * (x1 - x0));
      }
    }
  return make_node(std::move(out), {x}, [c, h, w, grid_h, grid_w, bin](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int gy = 0; gy < grid_h; ++gy) {
        int y0 = bin(gy, h, grid_h), y1 = bin(gy + 1, h, grid_h);
        for (int gx = 0; gx < grid_w; ++gx) {
          int x0 = bin(gx, w, grid_w), x1 = bin(gx + 1, w, grid_w);
          double dy = n.grad.at(ch, gy, gx) / ((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) g.at(ch, y, xx) += dy;
        }
      }
  });
}

Var pad_reflect(const Var& x, int pad_h, int pad_w) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (pad_h >= h || pad_w >= w)
    throw std::invalid_argument("pad_reflect: pad larger than input");
  if (pad_h == 0 && pad_w == 0) return x;
  const int oh = h + pad_h, ow = w + pad_w;
  auto src_y = [h](int y) { return y < h ? y : 2 * h - 2 - y; };
  auto src_x = [w](int xx) { return xx < w ? xx : 2 * w - 2 - xx; };
  Tensor out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        out.at(ch, y, xx) = x->value.at(ch, src_y(y), src_x(xx));
  return make_node(std::move(out), {x}, [c, oh, ow, src_y, src_x](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          g.at(ch, src_y(y), src_x(xx)) += n.grad.at(ch, y, xx);
  });
}

Var crop(const Var& x, int h, int w) {
  const int c = x->value.dim(0), ih = x->value.dim(1), iw = x->value.dim(2);
  if (h > ih || w > iw) throw std::invalid_argument("crop: target larger than input");
  if (h == ih && w == iw) return x;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ch, y, xx) = x->value.at(ch, y, xx);
  return make_node(std::move(out), {x}, [c, h, w](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) g.at(ch, y, xx) += n.grad.at(ch, y, xx);
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  const int h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
  const int hw = h * w;
  int total_c = 0;
  for (const auto& x : xs) {
    if (x->value.dim(1) != h || x->value.dim(2) != w)
      throw std::invalid_argument("concat_channels: spatial mismatch");
    total_c += x->value.dim(0);
  }
  Tensor out({total_c, h, w});
  int off = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data(), x->value.data() + x->value.numel(),
              out.data() + off * hw);
    off += x->value.dim(0);
  }
  return make_node(std::move(out), xs, [hw](Node& n) {
    int off = 0;
    for (auto& inp : n.inputs) {
      int c = inp->value.dim(0);
      if (inp->requires_grad) {
        Tensor& g = inp->ensure_grad();
        const double* src = n.grad.data() + off * hw;
        for (int i = 0; i < g.numel(); ++i) g[i] += src[i];
      }
      off += c;
    }
  });
}

Var weighted_sum_channel(const std::vector<Var>& xs, const Var& weights) {
  const int n_in = static_cast<int>(xs.size());
  if (weights->value.dim(0) != n_in)
    throw std::invalid_argument("weighted_sum_channel: weight count mismatch");
  const int z = xs[0]->value.dim(0), h = xs[0]->value.dim(1), w = xs[0]->value.dim(2);
  const int hw = h * w;
  Tensor out({z, h, w});
  for (int k = 0; k < n_in; ++k) {
    const double* wk = weights->value.data() + k * hw;
    const double* xk = xs[static_cast<size_t>(k)]->value.data();
    for (int c = 0; c < z; ++c)
      for (int i = 0; i < hw; ++i) out[c * hw + i] += wk[i] * xk[c * hw + i];
  }
  std::vector<Var> inputs = xs;
  inputs.push_back(weights);
  return make_node(std::move(out), std::move(inputs), [n_in, z, hw](Node& n) {
    Node& w_in = *n.inputs[static_cast<size_t>(n_in)];
    for (int k = 0; k < n_in; ++k) {
      Node& xk = *n.inputs[static_cast<size_t>(k)];
      const double* wk = w_in.value.data() + k * hw;
      if (xk.requires_grad) {
        Tensor& g = xk.ensure_grad();
        for (int c = 0; c < z; ++c)
          for (int i = 0; i < hw; ++i) g[c * hw + i] += wk[i] * n.grad[c * hw + i];
      }
      if (w_in.requires_grad) {
        Tensor& gw = w_in.ensure_grad();
        for (int i = 0; i < hw; ++i) {
          double s = 0.0;
          for (int c = 0; c < z; ++c) s += xk.value[c * hw + i] * n.grad[c * hw + i];
          gw[k * hw + i] += s;
        }
      }
    }
  });
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels,
                         int ignore_index, int* valid_count) {
  const int k = logits->value.dim(0), h = logits->value.dim(1), w = logits->value.dim(2);
  const int hw = h * w;
  if (static_cast<int>(labels.size()) != hw)
    throw std::invalid_argument("cross_entropy_logits: label size mismatch");

  // log-softmax probabilities, kept for the backward pass
  auto probs = std::make_shared<Tensor>(logits->value);
  Tensor& p = *probs;
  for (int i = 0; i < hw; ++i) {
    double mx = -1e300;
    for (int c = 0; c < k; ++c) mx = std::max(mx, p[c * hw + i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(p[c * hw + i] - mx);
    double lz = mx + std::log(z);
    for (int c = 0; c < k; ++c) p[c * hw + i] = std::exp(p[c * hw + i] - lz);
  }

  int valid = 0;
  double loss = 0.0;
  for (int i = 0; i < hw; ++i) {
    int lab = labels[i];
    if (lab == ignore_index) continue;
    if (lab < 0 || lab >= k)
      throw std::invalid_argument("cross_entropy_logits: label out of range");
    loss -= std::log(std::max(p[lab * hw + i], 1e-300));
    ++valid;
  }
  if (valid_count) *valid_count = valid;
  Tensor out({1});
  out[0] = valid > 0 ? loss / valid : 0.0;

  auto labels_keep = std::make_shared<std::vector<int>>(labels);
  return make_node(std::move(out), {logits},
                   [k, hw, ignore_index, valid, probs, labels_keep](Node& n) {
                     Node& in = *n.inputs[0];
                     if (!in.requires_grad || valid == 0) return;
                     double up = n.grad[0] / valid;
                     Tensor& g = in.ensure_grad();
                     const Tensor& p = *probs;
                     for (int i = 0; i < hw; ++i) {
                       int lab = (*labels_keep)[i];
                       if (lab == ignore_index) continue;
                       for (int c = 0; c < k; ++c) {
                         double d = p[c * hw + i] - (c == lab ? 1.0 : 0.0);
                         g[c * hw + i] += up * d;
                       }
                     }
                   });
}

}  // namespace ag
}  // namespace mcibi
