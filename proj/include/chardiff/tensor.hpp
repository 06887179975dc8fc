#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "chardiff/errors.hpp"
#include "chardiff/rng.hpp"

namespace chardiff {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph construction in scope; inference paths use this so forward
// passes do not retain activations.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
};

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;

  size_t numel() const { return data.size(); }
  S* grad_data() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad.data();
  }
};

// Dense tensor with reverse-mode autodiff. Value semantics on the handle;
// the node (data + graph edge) is shared. S is float for training, double
// for gradient-check tests.
template <class S>
class BasicTensor {
 public:
  using Scalar = S;

  BasicTensor() : node_(std::make_shared<TensorNode<S>>()) {}

  explicit BasicTensor(Shape shape, S fill = S(0)) : node_(std::make_shared<TensorNode<S>>()) {
    node_->shape = std::move(shape);
    node_->data.assign(shape_numel(node_->shape), fill);
  }

  BasicTensor(Shape shape, std::vector<S> data) : node_(std::make_shared<TensorNode<S>>()) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("tensor: " + std::to_string(data.size()) + " elements do not fill shape " +
                       shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static BasicTensor scalar(S v) { return BasicTensor(Shape{}, std::vector<S>{v}); }

  static BasicTensor randn(Shape shape, Rng& rng, S stddev = S(1)) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.node_->data) v = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  size_t numel() const { return node_->data.size(); }

  std::vector<S>& data() { return node_->data; }
  const std::vector<S>& data() const { return node_->data; }
  S* ptr() { return node_->data.data(); }
  const S* ptr() const { return node_->data.data(); }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }
  const std::string& name() const { return node_->name; }
  BasicTensor& set_name(std::string n) {
    node_->name = std::move(n);
    return *this;
  }

  // Gradient accumulated by the last backward(); zeros if never reached.
  std::vector<S> grad() const {
    if (node_->grad.empty()) return std::vector<S>(numel(), S(0));
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  // Reverse-mode sweep from a scalar loss. Populates grad buffers of every
  // requires_grad node reachable through the graph, then releases the tape.
  void backward() const {
    if (numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    // Post-order DFS, iterative to survive deep graphs.
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        TensorNode<S>* p = n->parents[i++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad.assign(1, S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (TensorNode<S>* n : order) {
      n->backward_fn = nullptr;  // free the tape; parameters keep their grads
      if (n != node_.get()) n->parents.clear();
    }
    node_->parents.clear();
  }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

using Tensor = BasicTensor<float>;
using DTensor = BasicTensor<double>;

namespace detail {

template <class S>
BasicTensor<S> make_op_result(Shape shape, std::vector<BasicTensor<S>> parents,
                              std::function<void(TensorNode<S>&)> backward) {
  BasicTensor<S> out(std::move(shape));
  bool track = grad_enabled_flag();
  bool any = false;
  for (auto& p : parents) any = any || p.requires_grad();
  if (track && any) {
    out.set_requires_grad(true);
    auto n = out.node();
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return out;
}

template <class S>
void accumulate(TensorNode<S>& parent, const S* g, size_t n) {
  if (!parent.requires_grad) return;
  S* dst = parent.grad_data();
  for (size_t i = 0; i < n; ++i) dst[i] += g[i];
}

// Right-aligned numpy broadcasting.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int da = i < r - ra ? 1 : a[i - (r - ra)];
    int db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` right-aligned into rank r, zero where broadcast.
inline std::vector<size_t> broadcast_strides(const Shape& s, size_t r) {
  std::vector<size_t> st(r, 0);
  size_t off = r - s.size(), acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[off + i] = (s[i] == 1) ? 0 : acc;
    acc *= static_cast<size_t>(s[i]);
  }
  return st;
}

// Sums `g` (laid out as out_shape) into `dst` (laid out as src_shape,
// broadcast into out_shape).
template <class S>
void reduce_into(const S* g, const Shape& out_shape, const Shape& src_shape, S* dst) {
  size_t r = out_shape.size();
  auto st = broadcast_strides(src_shape, r);
  std::vector<size_t> coord(r, 0);
  size_t n = shape_numel(out_shape);
  size_t src_idx = 0;
  for (size_t i = 0; i < n; ++i) {
    dst[src_idx] += g[i];
    for (size_t d = r; d-- > 0;) {
      if (++coord[d] < static_cast<size_t>(out_shape[d])) {
        src_idx += st[d];
        break;
      }
      coord[d] = 0;
      src_idx -= st[d] * (static_cast<size_t>(out_shape[d]) - 1);
      if (d == 0) break;
    }
  }
}

template <class S, class FwdFn, class DLeft, class DRight>
BasicTensor<S> binary_broadcast(const char* opname, const BasicTensor<S>& a,
                                const BasicTensor<S>& b, FwdFn fwd, DLeft dl, DRight dr) {
  Shape os = broadcast_shape(a.shape(), b.shape(), opname);
  size_t n = shape_numel(os);
  BasicTensor<S> out = make_op_result<S>(
      os, {a, b}, [os, dl, dr](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        size_t n = self.numel();
        size_t r = os.size();
        auto sta = broadcast_strides(pa.shape, r);
        auto stb = broadcast_strides(pb.shape, r);
        std::vector<size_t> coord(r, 0);
        size_t ia = 0, ib = 0;
        S* ga = pa.requires_grad ? pa.grad_data() : nullptr;
        S* gb = pb.requires_grad ? pb.grad_data() : nullptr;
        for (size_t i = 0; i < n; ++i) {
          S g = self.grad[i];
          if (ga) ga[ia] += dl(g, pa.data[ia], pb.data[ib]);
          if (gb) gb[ib] += dr(g, pa.data[ia], pb.data[ib]);
          for (size_t d = r; d-- > 0;) {
            if (++coord[d] < static_cast<size_t>(os[d])) {
              ia += sta[d];
              ib += stb[d];
              break;
            }
            coord[d] = 0;
            ia -= sta[d] * (static_cast<size_t>(os[d]) - 1);
            ib -= stb[d] * (static_cast<size_t>(os[d]) - 1);
            if (d == 0) break;
          }
        }
      });
  // Forward pass. Same-shape fast path covers nearly all calls.
  if (a.shape() == b.shape()) {
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    size_t r = os.size();
    auto sta = broadcast_strides(a.shape(), r);
    auto stb = broadcast_strides(b.shape(), r);
    std::vector<size_t> coord(r, 0);
    size_t ia = 0, ib = 0;
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (size_t i = 0; i < n; ++i) {
      po[i] = fwd(pa[ia], pb[ib]);
      for (size_t d = r; d-- > 0;) {
        if (++coord[d] < static_cast<size_t>(os[d])) {
          ia += sta[d];
          ib += stb[d];
          break;
        }
        coord[d] = 0;
        ia -= sta[d] * (static_cast<size_t>(os[d]) - 1);
        ib -= stb[d] * (static_cast<size_t>(os[d]) - 1);
        if (d == 0) break;
      }
    }
  }
  return out;
}

}  // namespace detail

template <class S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return detail::binary_broadcast<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return g; });
}

template <class S>
BasicTensor<S> sub(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return detail::binary_broadcast<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return -g; });
}

template <class S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return detail::binary_broadcast<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <class S>
BasicTensor<S> add_scalar(const BasicTensor<S>& a, S c) {
  BasicTensor<S> out = detail::make_op_result<S>(a.shape(), {a}, [](TensorNode<S>& self) {
    detail::accumulate(*self.parents[0], self.grad.data(), self.numel());
  });
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (size_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  return out;
}

template <class S>
BasicTensor<S> mul_scalar(const BasicTensor<S>& a, S c) {
  BasicTensor<S> out = detail::make_op_result<S>(a.shape(), {a}, [c](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* g = p.grad_data();
    for (size_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * c;
  });
  const S* pa = a.ptr();
  S* po = out.ptr();
  for (size_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  return out;
}

// [m,k] x [k,n] -> [m,n]
template <class S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<S> out = detail::make_op_result<S>(
      Shape{m, n}, {a, b}, [m, k, n](TensorNode<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const S* A = pa.data.data();
        const S* B = pb.data.data();
        const S* G = self.grad.data();
        if (pa.requires_grad) {  // dA = G * B^T
          S* dA = pa.grad_data();
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              S acc = 0;
              const S* g = G + static_cast<size_t>(i) * n;
              const S* br = B + static_cast<size_t>(kk) * n;
              for (int j = 0; j < n; ++j) acc += g[j] * br[j];
              dA[static_cast<size_t>(i) * k + kk] += acc;
            }
        }
        if (pb.requires_grad) {  // dB = A^T * G
          S* dB = pb.grad_data();
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              S av = A[static_cast<size_t>(i) * k + kk];
              const S* g = G + static_cast<size_t>(i) * n;
              S* db = dB + static_cast<size_t>(kk) * n;
              for (int j = 0; j < n; ++j) db[j] += av * g[j];
            }
        }
      });
  const S* A = a.ptr();
  const S* B = b.ptr();
  S* C = out.ptr();
  for (int i = 0; i < m; ++i) {
    S* cr = C + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      S av = A[static_cast<size_t>(i) * k + kk];
      const S* br = B + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
  return out;
}

// 2D convolution over [C,H,W], stride 1, 'same' zero padding, odd kernel.
template <class S>
BasicTensor<S> conv2d(const BasicTensor<S>& x, const BasicTensor<S>& w, const BasicTensor<S>& bias) {
  if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d: kernel must be odd, got " + shape_str(w.shape()));
  bool has_bias = bias.numel() > 0;
  if (has_bias && !(bias.rank() == 1 && bias.dim(0) == cout))
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");

  auto backward = [cin, h, wd, cout, kh, kw, has_bias](TensorNode<S>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const S* X = px.data.data();
    const S* W = pw.data.data();
    const S* G = self.grad.data();
    size_t plane = static_cast<size_t>(h) * wd;
    if (px.requires_grad) {
      S* dX = px.grad_data();
      for (int co = 0; co < cout; ++co) {
        const S* gpl = G + static_cast<size_t>(co) * plane;
        for (int ci = 0; ci < cin; ++ci) {
          S* dxp = dX + static_cast<size_t>(ci) * plane;
          const S* wk = W + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            int dy = ky - kh / 2;
            for (int kx = 0; kx < kw; ++kx) {
              int dx = kx - kw / 2;
              S wv = wk[static_cast<size_t>(ky) * kw + kx];
              if (wv == S(0)) continue;
              int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
              int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
              for (int yy = y0; yy < y1; ++yy) {
                const S* gr = gpl + static_cast<size_t>(yy) * wd;
                S* dr = dxp + static_cast<size_t>(yy + dy) * wd + dx;
                for (int xx = x0; xx < x1; ++xx) dr[xx] += wv * gr[xx];
              }
            }
          }
        }
      }
    }
    if (pw.requires_grad) {
      S* dW = pw.grad_data();
      for (int co = 0; co < cout; ++co) {
        const S* gpl = G + static_cast<size_t>(co) * plane;
        for (int ci = 0; ci < cin; ++ci) {
          const S* xp = X + static_cast<size_t>(ci) * plane;
          S* dwk = dW + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            int dy = ky - kh / 2;
            for (int kx = 0; kx < kw; ++kx) {
              int dx = kx - kw / 2;
              int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
              int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
              S acc = 0;
              for (int yy = y0; yy < y1; ++yy) {
                const S* gr = gpl + static_cast<size_t>(yy) * wd;
                const S* xr = xp + static_cast<size_t>(yy + dy) * wd + dx;
                for (int xx = x0; xx < x1; ++xx) acc += gr[xx] * xr[xx];
              }
              dwk[static_cast<size_t>(ky) * kw + kx] += acc;
            }
          }
        }
      }
    }
    if (has_bias && self.parents.size() > 2 && self.parents[2]->requires_grad) {
      S* dB = self.parents[2]->grad_data();
      for (int co = 0; co < cout; ++co) {
        const S* gpl = G + static_cast<size_t>(co) * plane;
        S acc = 0;
        for (size_t i = 0; i < plane; ++i) acc += gpl[i];
        dB[co] += acc;
      }
    }
  };

  std::vector<BasicTensor<S>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  BasicTensor<S> out =
      detail::make_op_result<S>(Shape{cout, h, wd}, std::move(parents), std::move(backward));

  const S* X = x.ptr();
  const S* W = w.ptr();
  S* Y = out.ptr();
  size_t plane = static_cast<size_t>(h) * wd;
  for (int co = 0; co < cout; ++co) {
    S* ypl = Y + static_cast<size_t>(co) * plane;
    if (has_bias) {
      S bv = bias.ptr()[co];
      for (size_t i = 0; i < plane; ++i) ypl[i] = bv;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const S* xp = X + static_cast<size_t>(ci) * plane;
      const S* wk = W + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
      for (int ky = 0; ky < kh; ++ky) {
        int dy = ky - kh / 2;
        for (int kx = 0; kx < kw; ++kx) {
          int dx = kx - kw / 2;
          S wv = wk[static_cast<size_t>(ky) * kw + kx];
          if (wv == S(0)) continue;
          int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          for (int yy = y0; yy < y1; ++yy) {
            S* yr = ypl + static_cast<size_t>(yy) * wd;
            const S* xr = xp + static_cast<size_t>(yy + dy) * wd + dx;
            for (int xx = x0; xx < x1; ++xx) yr[xx] += wv * xr[xx];
          }
        }
      }
    }
  }
  return out;
}

template <class S>
BasicTensor<S> conv2d(const BasicTensor<S>& x, const BasicTensor<S>& w) {
  return conv2d(x, w, BasicTensor<S>());
}

// [C,H,W] -> [C,2H,2W]
template <class S>
BasicTensor<S> upsample_nearest2x(const BasicTensor<S>& x) {
  if (x.rank() != 3) throw ShapeError("upsample_nearest2x: expected [C,H,W], got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<S> out = detail::make_op_result<S>(
      Shape{c, 2 * h, 2 * w}, {x}, [c, h, w](TensorNode<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        S* dx = p.grad_data();
        const S* g = self.grad.data();
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              size_t base = (static_cast<size_t>(ci) * 2 * h + 2 * y) * (2 * w) + 2 * xx;
              dx[(static_cast<size_t>(ci) * h + y) * w + xx] +=
                  g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
            }
      });
  const S* X = x.ptr();
  S* Y = out.ptr();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        S v = X[(static_cast<size_t>(ci) * h + y) * w + xx];
        size_t base = (static_cast<size_t>(ci) * 2 * h + 2 * y) * (2 * w) + 2 * xx;
        Y[base] = Y[base + 1] = Y[base + 2 * w] = Y[base + 2 * w + 1] = v;
      }
  return out;
}

// [C,H,W] -> [C,H/2,W/2], 2x2 average
template <class S>
BasicTensor<S> avgpool2x(const BasicTensor<S>& x) {
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
    throw ShapeError("avgpool2x: expected even [C,H,W], got " + shape_str(x.shape()));
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<S> out = detail::make_op_result<S>(
      Shape{c, h / 2, w / 2}, {x}, [c, h, w](TensorNode<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        S* dx = p.grad_data();
        const S* g = self.grad.data();
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx) {
              S gv = g[(static_cast<size_t>(ci) * (h / 2) + y) * (w / 2) + xx] * S(0.25);
              size_t base = (static_cast<size_t>(ci) * h + 2 * y) * w + 2 * xx;
              dx[base] += gv;
              dx[base + 1] += gv;
              dx[base + w] += gv;
              dx[base + w + 1] += gv;
            }
      });
  const S* X = x.ptr();
  S* Y = out.ptr();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx) {
        size_t base = (static_cast<size_t>(ci) * h + 2 * y) * w + 2 * xx;
        Y[(static_cast<size_t>(ci) * (h / 2) + y) * (w / 2) + xx] =
            (X[base] + X[base + 1] + X[base + w] + X[base + w + 1]) * S(0.25);
      }
  return out;
}

template <class S>
BasicTensor<S> silu(const BasicTensor<S>& x) {
  BasicTensor<S> out = detail::make_op_result<S>(x.shape(), {x}, [](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* dx = p.grad_data();
    for (size_t i = 0; i < self.numel(); ++i) {
      S xv = p.data[i];
      S sig = S(1) / (S(1) + std::exp(-xv));
      dx[i] += self.grad[i] * sig * (S(1) + xv * (S(1) - sig));
    }
  });
  const S* X = x.ptr();
  S* Y = out.ptr();
  for (size_t i = 0; i < x.numel(); ++i) Y[i] = X[i] / (S(1) + std::exp(-X[i]));
  return out;
}

namespace detail {
// Decomposes shape around `axis` into [outer, n, inner].
inline void axis_split(const Shape& s, int axis, const char* op, size_t& outer, size_t& n,
                       size_t& inner) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(s));
  outer = inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
  n = static_cast<size_t>(s[axis]);
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<size_t>(s[i]);
}
}  // namespace detail

template <class S>
BasicTensor<S> softmax(const BasicTensor<S>& x, int axis) {
  size_t outer, n, inner;
  detail::axis_split(x.shape(), axis, "softmax", outer, n, inner);
  BasicTensor<S> out = detail::make_op_result<S>(
      x.shape(), {x}, [outer, n, inner](TensorNode<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        S* dx = p.grad_data();
        const S* y = self.data.data();
        const S* g = self.grad.data();
        for (size_t o = 0; o < outer; ++o)
          for (size_t in = 0; in < inner; ++in) {
            size_t base = o * n * inner + in;
            S dot = 0;
            for (size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
            for (size_t i = 0; i < n; ++i) {
              size_t idx = base + i * inner;
              dx[idx] += y[idx] * (g[idx] - dot);
            }
          }
      });
  const S* X = x.ptr();
  S* Y = out.ptr();
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      size_t base = o * n * inner + in;
      S mx = X[base];
      for (size_t i = 1; i < n; ++i) mx = std::max(mx, X[base + i * inner]);
      S sum = 0;
      for (size_t i = 0; i < n; ++i) {
        size_t idx = base + i * inner;
        Y[idx] = std::exp(X[idx] - mx);
        sum += Y[idx];
      }
      if (sum <= S(0) || !std::isfinite(sum))
        throw NumericError("softmax: degenerate line (all logits -inf?)");
      for (size_t i = 0; i < n; ++i) Y[base + i * inner] /= sum;
    }
  return out;
}

// Softmax over the positions where mask is nonzero; exact zero elsewhere.
// An all-zero mask yields an all-zero output (the caller decides whether
// that is a warning). Mask is a constant, gradients flow only through x.
template <class S>
BasicTensor<S> masked_softmax(const BasicTensor<S>& x, const std::vector<uint8_t>& mask) {
  if (mask.size() != x.numel())
    throw ShapeError("masked_softmax: mask size " + std::to_string(mask.size()) +
                     " != tensor " + shape_str(x.shape()));
  auto m = std::make_shared<std::vector<uint8_t>>(mask);
  BasicTensor<S> out = detail::make_op_result<S>(x.shape(), {x}, [m](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* dx = p.grad_data();
    const S* y = self.data.data();
    const S* g = self.grad.data();
    S dot = 0;
    for (size_t i = 0; i < self.numel(); ++i) dot += g[i] * y[i];
    for (size_t i = 0; i < self.numel(); ++i)
      if ((*m)[i]) dx[i] += y[i] * (g[i] - dot);
  });
  const S* X = x.ptr();
  S* Y = out.ptr();
  size_t n = x.numel();
  S mx = -std::numeric_limits<S>::infinity();
  bool any = false;
  for (size_t i = 0; i < n; ++i)
    if (mask[i]) {
      any = true;
      mx = std::max(mx, X[i]);
    }
  if (!any) return out;  // already zero-filled
  S sum = 0;
  for (size_t i = 0; i < n; ++i)
    if (mask[i]) {
      Y[i] = std::exp(X[i] - mx);
      sum += Y[i];
    }
  for (size_t i = 0; i < n; ++i)
    if (mask[i]) Y[i] /= sum;
  return out;
}

// Group normalization over [C,H,W]; affine per channel. Biased variance.
template <class S>
BasicTensor<S> group_norm(const BasicTensor<S>& x, int groups, const BasicTensor<S>& gamma,
                          const BasicTensor<S>& beta, S eps = S(1e-5)) {
  if (x.rank() != 3 || x.dim(0) % groups != 0)
    throw ShapeError("group_norm: channels of " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(groups) + " groups");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (gamma.numel() != static_cast<size_t>(c) || beta.numel() != static_cast<size_t>(c))
    throw ShapeError("group_norm: affine params must be [C]");
  int cg = c / groups;
  size_t plane = static_cast<size_t>(h) * w;
  size_t gsize = static_cast<size_t>(cg) * plane;

  auto mean = std::make_shared<std::vector<S>>(groups);
  auto istd = std::make_shared<std::vector<S>>(groups);

  auto backward = [groups, cg, plane, gsize, mean, istd](TensorNode<S>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const S* X = px.data.data();
    const S* G = self.grad.data();
    const S* gam = pg.data.data();
    S* dgam = pg.requires_grad ? pg.grad_data() : nullptr;
    S* dbet = pb.requires_grad ? pb.grad_data() : nullptr;
    S* dX = px.requires_grad ? px.grad_data() : nullptr;
    for (int g = 0; g < groups; ++g) {
      size_t base = static_cast<size_t>(g) * gsize;
      S mu = (*mean)[g], is = (*istd)[g];
      if (dgam || dbet) {
        for (int cc = 0; cc < cg; ++cc) {
          int ch = g * cg + cc;
          S sg = 0, sb = 0;
          for (size_t i = 0; i < plane; ++i) {
            size_t idx = base + cc * plane + i;
            S xhat = (X[idx] - mu) * is;
            sg += G[idx] * xhat;
            sb += G[idx];
          }
          if (dgam) dgam[ch] += sg;
          if (dbet) dbet[ch] += sb;
        }
      }
      if (dX) {
        // dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        S sum_d = 0, sum_dx = 0;
        for (int cc = 0; cc < cg; ++cc) {
          S gv = gam[g * cg + cc];
          for (size_t i = 0; i < plane; ++i) {
            size_t idx = base + cc * plane + i;
            S dxhat = G[idx] * gv;
            S xhat = (X[idx] - mu) * is;
            sum_d += dxhat;
            sum_dx += dxhat * xhat;
          }
        }
        S inv_n = S(1) / static_cast<S>(gsize);
        for (int cc = 0; cc < cg; ++cc) {
          S gv = gam[g * cg + cc];
          for (size_t i = 0; i < plane; ++i) {
            size_t idx = base + cc * plane + i;
            S dxhat = G[idx] * gv;
            S xhat = (X[idx] - mu) * is;
            dX[idx] += is * (dxhat - inv_n * sum_d - xhat * inv_n * sum_dx);
          }
        }
      }
    }
  };

  BasicTensor<S> out =
      detail::make_op_result<S>(x.shape(), {x, gamma, beta}, std::move(backward));
  const S* X = x.ptr();
  const S* gam = gamma.ptr();
  const S* bet = beta.ptr();
  S* Y = out.ptr();
  for (int g = 0; g < groups; ++g) {
    size_t base = static_cast<size_t>(g) * gsize;
    S s = 0;
    for (size_t i = 0; i < gsize; ++i) s += X[base + i];
    S mu = s / static_cast<S>(gsize);
    S v = 0;
    for (size_t i = 0; i < gsize; ++i) {
      S d = X[base + i] - mu;
      v += d * d;
    }
    v /= static_cast<S>(gsize);
    S is = S(1) / std::sqrt(v + eps);
    (*mean)[g] = mu;
    (*istd)[g] = is;
    for (int cc = 0; cc < cg; ++cc) {
      S gv = gam[g * cg + cc], bv = bet[g * cg + cc];
      for (size_t i = 0; i < plane; ++i) {
        size_t idx = base + cc * plane + i;
        Y[idx] = (X[idx] - mu) * is * gv + bv;
      }
    }
  }
  return out;
}

template <class S>
BasicTensor<S> mean(const BasicTensor<S>& x) {
  size_t n = x.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  BasicTensor<S> out = detail::make_op_result<S>(Shape{}, {x}, [n](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S g = self.grad[0] / static_cast<S>(n);
    S* dx = p.grad_data();
    for (size_t i = 0; i < n; ++i) dx[i] += g;
  });
  S s = 0;
  const S* X = x.ptr();
  for (size_t i = 0; i < n; ++i) s += X[i];
  out.ptr()[0] = s / static_cast<S>(n);
  return out;
}

// Mean squared error over all elements; the training objective's core.
template <class S>
BasicTensor<S> mse(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  size_t n = a.numel();
  BasicTensor<S> out = detail::make_op_result<S>(Shape{}, {a, b}, [n](TensorNode<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    S g = self.grad[0] * S(2) / static_cast<S>(n);
    S* ga = pa.requires_grad ? pa.grad_data() : nullptr;
    S* gb = pb.requires_grad ? pb.grad_data() : nullptr;
    for (size_t i = 0; i < n; ++i) {
      S d = pa.data[i] - pb.data[i];
      if (ga) ga[i] += g * d;
      if (gb) gb[i] -= g * d;
    }
  });
  S s = 0;
  const S* A = a.ptr();
  const S* B = b.ptr();
  for (size_t i = 0; i < n; ++i) {
    S d = A[i] - B[i];
    s += d * d;
  }
  S v = s / static_cast<S>(n);
  if (!std::isfinite(v)) throw NumericError("mse: non-finite loss");
  out.ptr()[0] = v;
  return out;
}

template <class S>
BasicTensor<S> reshape(const BasicTensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  BasicTensor<S> out = detail::make_op_result<S>(shape, {x}, [](TensorNode<S>& self) {
    detail::accumulate(*self.parents[0], self.grad.data(), self.numel());
  });
  std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
  return out;
}

template <class S>
BasicTensor<S> transpose(const BasicTensor<S>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  int m = x.dim(0), n = x.dim(1);
  BasicTensor<S> out = detail::make_op_result<S>(Shape{n, m}, {x}, [m, n](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* dx = p.grad_data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        dx[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
  });
  const S* X = x.ptr();
  S* Y = out.ptr();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) Y[static_cast<size_t>(j) * m + i] = X[static_cast<size_t>(i) * n + j];
  return out;
}

// Concatenate along axis 0; trailing dims must match.
template <class S>
BasicTensor<S> concat(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.rank() != b.rank() || a.rank() == 0)
    throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  for (int i = 1; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw ShapeError("concat: trailing dims differ, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  Shape os = a.shape();
  os[0] += b.dim(0);
  size_t na = a.numel();
  BasicTensor<S> out = detail::make_op_result<S>(os, {a, b}, [na](TensorNode<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::accumulate(pa, self.grad.data(), na);
    if (pb.requires_grad) detail::accumulate(pb, self.grad.data() + na, self.numel() - na);
  });
  std::copy(a.ptr(), a.ptr() + na, out.ptr());
  std::copy(b.ptr(), b.ptr() + b.numel(), out.ptr() + na);
  return out;
}

// Row i of a [n,C] matrix as a [C] vector.
template <class S>
BasicTensor<S> select_row(const BasicTensor<S>& x, int i) {
  if (x.rank() != 2 || i < 0 || i >= x.dim(0))
    throw ShapeError("select_row: index " + std::to_string(i) + " out of " +
                     shape_str(x.shape()));
  int c = x.dim(1);
  BasicTensor<S> out = detail::make_op_result<S>(Shape{c}, {x}, [i, c](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* dx = p.grad_data();
    for (int j = 0; j < c; ++j) dx[static_cast<size_t>(i) * c + j] += self.grad[j];
  });
  std::copy(x.ptr() + static_cast<size_t>(i) * c, x.ptr() + static_cast<size_t>(i + 1) * c,
            out.ptr());
  return out;
}

// Embedding lookup: [V,C] table, integer ids -> [n,C]. Gradients scatter
// into the looked-up rows.
template <class S>
BasicTensor<S> embed(const BasicTensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embed: table must be [vocab,C]");
  int v = table.dim(0), c = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeError("embed: id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(v));
  int n = static_cast<int>(ids.size());
  auto idv = std::make_shared<std::vector<int>>(ids);
  BasicTensor<S> out = detail::make_op_result<S>(Shape{n, c}, {table}, [idv, c](TensorNode<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    S* dt = p.grad_data();
    for (size_t r = 0; r < idv->size(); ++r)
      for (int j = 0; j < c; ++j)
        dt[static_cast<size_t>((*idv)[r]) * c + j] += self.grad[r * c + j];
  });
  for (int r = 0; r < n; ++r)
    std::copy(table.ptr() + static_cast<size_t>(ids[r]) * c,
              table.ptr() + static_cast<size_t>(ids[r] + 1) * c, out.ptr() + static_cast<size_t>(r) * c);
  return out;
}

}  // namespace chardiff
