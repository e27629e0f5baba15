// Copyright 2026 The t2l Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "t2l/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

T2L_NN_BEGIN
namespace ad {

namespace {

using MatR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, std::vector<Real> value, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DomainError(std::string(op) + ": undefined tensor");
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <class F, class G>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, G grads) {
  require_defined(a, op);
  require_defined(b, op);
  if (!is_suffix(a.shape(), b.shape())) shape_fail(op, a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t inner = b.numel();
  std::vector<Real> out(n);
  const Real* av = a.data().data();
  const Real* bv = b.data().data();
  for (std::size_t k = 0; k < n; ++k) out[k] = f(av[k], bv[k % inner]);
  Node* an = a.node();
  Node* bn = b.node();
  return make_result(a.shape(), std::move(out), op, {a.shared(), b.shared()},
                     [an, bn, n, inner, grads](Node& self) {
                       const Real* g = self.grad.data();
                       Real* ga = an->requires_grad ? an->grad_buffer() : nullptr;
                       Real* gb = bn->requires_grad ? bn->grad_buffer() : nullptr;
                       for (std::size_t k = 0; k < n; ++k) {
                         const Real x = an->value[k];
                         const Real y = bn->value[k % inner];
                         Real da, db;
                         grads(x, y, self.value[k], da, db);
                         if (ga) ga[k] += g[k] * da;
                         if (gb) gb[k % inner] += g[k] * db;
                       }
                     });
}

// `deriv(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D deriv) {
  require_defined(a, op);
  const std::size_t n = a.numel();
  std::vector<Real> out(n);
  const Real* av = a.data().data();
  for (std::size_t k = 0; k < n; ++k) out[k] = f(av[k]);
  Node* an = a.node();
  return make_result(a.shape(), std::move(out), op, {a.shared()}, [an, n, deriv](Node& self) {
    Real* ga = an->grad_buffer();
    const Real* g = self.grad.data();
    for (std::size_t k = 0; k < n; ++k) ga[k] += g[k] * deriv(an->value[k], self.value[k]);
  });
}

std::size_t rows_of(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("expected at least one axis, got a scalar");
  return a.numel() / static_cast<std::size_t>(a.shape().back());
}

void require_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k) out += ",";
    out += std::to_string(s[k]);
  }
  return out + "]";
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Real* Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), Real(0));
  return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real v, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<Real>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(ad::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(Real v) { return from({}, {v}); }

int Tensor::dim(int axis) const {
  const int nd = ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError("axis out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

std::vector<Real> Tensor::grad_or_zeros() const {
  if (node_->grad.empty()) return std::vector<Real>(numel(), Real(0));
  return node_->grad;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw DomainError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](Real x, Real y) { return x + y; },
                [](Real, Real, Real, Real& da, Real& db) { da = 1; db = 1; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](Real x, Real y) { return x - y; },
                [](Real, Real, Real, Real& da, Real& db) { da = 1; db = -1; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](Real x, Real y) { return x * y; },
                [](Real x, Real y, Real, Real& da, Real& db) { da = y; db = x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](Real x, Real y) { return x / y; },
                [](Real x, Real y, Real, Real& da, Real& db) {
                  da = 1 / y;
                  db = -x / (y * y);
                });
}

Tensor scale(const Tensor& a, Real k) {
  return unary("scale", a, [k](Real x) { return k * x; }, [k](Real, Real) { return k; });
}

Tensor add_scalar(const Tensor& a, Real k) {
  return unary("add_scalar", a, [k](Real x) { return x + k; }, [](Real, Real) { return Real(1); });
}

Tensor neg(const Tensor& a) { return scale(a, Real(-1)); }

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](Real x) { return x > 0 ? x : Real(0); },
               [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
  for (Real v : a.data()) {
    if (!(v > 0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary("log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1 / x; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](Real x) { return std::sin(x); },
               [](Real x, Real) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](Real x) { return std::cos(x); },
               [](Real x, Real) { return -std::sin(x); });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](Real x) { return std::abs(x); },
               [](Real x, Real) { return x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](Real x) { return x * x; }, [](Real x, Real) { return 2 * x; });
}

Tensor sqrt(const Tensor& a) {
  for (Real v : a.data()) {
    if (v < 0) throw DomainError("sqrt: negative input " + std::to_string(v));
  }
  return unary("sqrt", a, [](Real x) { return std::sqrt(x); },
               [](Real, Real y) { return y > 0 ? Real(0.5) / y : Real(0); });
}

// --- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double s = 0;
  for (Real v : a.data()) s += v;
  Node* an = a.node();
  return make_result({}, {static_cast<Real>(s)}, "sum", {a.shared()}, [an](Node& self) {
    Real* ga = an->grad_buffer();
    const Real g = self.grad[0];
    for (std::size_t k = 0; k < an->value.size(); ++k) ga[k] += g;
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw DomainError("mean: empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

Tensor var(const Tensor& a) {
  require_defined(a, "var");
  const std::size_t n = a.numel();
  if (n == 0) throw DomainError("var: empty tensor");
  double mu = 0;
  for (Real v : a.data()) mu += v;
  mu /= static_cast<double>(n);
  double acc = 0;
  for (Real v : a.data()) acc += (v - mu) * (v - mu);
  Node* an = a.node();
  return make_result({}, {static_cast<Real>(acc / static_cast<double>(n))}, "var", {a.shared()},
                     [an, n](Node& self) {
                       double m = 0;
                       for (Real v : an->value) m += v;
                       m /= static_cast<double>(n);
                       Real* ga = an->grad_buffer();
                       const double g = self.grad[0];
                       for (std::size_t k = 0; k < n; ++k) {
                         ga[k] += static_cast<Real>(g * 2.0 * (an->value[k] - m) /
                                                    static_cast<double>(n));
                       }
                     });
}

Tensor sum_last(const Tensor& a) {
  require_defined(a, "sum_last");
  const std::size_t rows = rows_of(a);
  const std::size_t d = static_cast<std::size_t>(a.shape().back());
  std::vector<Real> out(rows, Real(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r] += a.data()[r * d + c];
  }
  Shape s(a.shape().begin(), a.shape().end() - 1);
  Node* an = a.node();
  return make_result(std::move(s), std::move(out), "sum_last", {a.shared()},
                     [an, rows, d](Node& self) {
                       Real* ga = an->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += self.grad[r];
                       }
                     });
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_fail("matmul", a.shape(), b.shape());
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  MapR(out.data(), m, n).noalias() = CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  Node* an = a.node();
  Node* bn = b.node();
  return make_result({m, n}, std::move(out), "matmul", {a.shared(), b.shared()},
                     [an, bn, m, k, n](Node& self) {
                       CMapR g(self.grad.data(), m, n);
                       if (an->requires_grad) {
                         MapR(an->grad_buffer(), m, k).noalias() +=
                             g * CMapR(bn->value.data(), k, n).transpose();
                       }
                       if (bn->requires_grad) {
                         MapR(bn->grad_buffer(), k, n).noalias() +=
                             CMapR(an->value.data(), m, k).transpose() * g;
                       }
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) shape_fail("matmul_nt", a.shape(), b.shape());
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  MapR(out.data(), m, n).noalias() =
      CMapR(a.data().data(), m, k) * CMapR(b.data().data(), n, k).transpose();
  Node* an = a.node();
  Node* bn = b.node();
  return make_result({m, n}, std::move(out), "matmul_nt", {a.shared(), b.shared()},
                     [an, bn, m, k, n](Node& self) {
                       CMapR g(self.grad.data(), m, n);
                       if (an->requires_grad) {
                         MapR(an->grad_buffer(), m, k).noalias() +=
                             g * CMapR(bn->value.data(), n, k);
                       }
                       if (bn->requires_grad) {
                         MapR(bn->grad_buffer(), n, k).noalias() +=
                             g.transpose() * CMapR(an->value.data(), m, k);
                       }
                     });
}

namespace {

struct ConvGeometry {
  int n, c, h, w, o, kh, kw, ho, wo;
  Conv2dOptions opt;
  std::vector<int> xmap;  // [kw, wo] source column or -1
  std::vector<int> ymap;  // [kh, ho] source row or -1

  int patch() const { return c * kh * kw; }
  int positions() const { return ho * wo; }

  void build_maps() {
    xmap.resize(static_cast<std::size_t>(kw) * wo);
    for (int kx = 0; kx < kw; ++kx) {
      for (int ox = 0; ox < wo; ++ox) {
        int ix = ox * opt.stride - opt.padding + kx;
        if (opt.circular_width) ix = ((ix % w) + w) % w;
        xmap[static_cast<std::size_t>(kx) * wo + ox] = (ix >= 0 && ix < w) ? ix : -1;
      }
    }
    ymap.resize(static_cast<std::size_t>(kh) * ho);
    for (int ky = 0; ky < kh; ++ky) {
      for (int oy = 0; oy < ho; ++oy) {
        const int iy = oy * opt.stride - opt.padding + ky;
        ymap[static_cast<std::size_t>(ky) * ho + oy] = (iy >= 0 && iy < h) ? iy : -1;
      }
    }
  }

  // Visits every (column-matrix row, output position) with a source pointer
  // offset into one image plane stack; `ld` is the column matrix row stride.
  // f(dst_index, src_index) for real taps; z(dst_index) for padding.
  template <class F, class Z>
  void for_each_tap(std::size_t ld, F&& f, Z&& z) const {
    for (int ci = 0; ci < c; ++ci) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const std::size_t row = static_cast<std::size_t>((ci * kh + ky) * kw + kx) * ld;
          const int* xm = xmap.data() + static_cast<std::size_t>(kx) * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = ymap[static_cast<std::size_t>(ky) * ho + oy];
            const std::size_t dst = row + static_cast<std::size_t>(oy) * wo;
            if (iy < 0) {
              for (int ox = 0; ox < wo; ++ox) z(dst + ox);
              continue;
            }
            const std::size_t src = (static_cast<std::size_t>(ci) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              if (xm[ox] >= 0) {
                f(dst + ox, src + xm[ox]);
              } else {
                z(dst + ox);
              }
            }
          }
        }
      }
    }
  }
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt) {
  require_defined(x, "conv2d");
  require_defined(weight, "conv2d");
  if (x.ndim() != 4 || weight.ndim() != 4 || weight.dim(1) != x.dim(1)) {
    shape_fail("conv2d", x.shape(), weight.shape());
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))) {
    shape_fail("conv2d bias", weight.shape(), bias.shape());
  }
  if (opt.stride < 1 || opt.padding < 0) throw DomainError("conv2d: bad stride or padding");
  auto g = std::make_shared<ConvGeometry>(ConvGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                                                       weight.dim(0), weight.dim(2),
                                                       weight.dim(3), 0, 0, opt, {}, {}});
  g->ho = (g->h + 2 * opt.padding - g->kh) / opt.stride + 1;
  g->wo = (g->w + 2 * opt.padding - g->kw) / opt.stride + 1;
  if (g->ho < 1 || g->wo < 1) throw ShapeError("conv2d: kernel larger than padded input " +
                                               shape_str(x.shape()));
  g->build_maps();
  // Columns of all images side by side: [patch, n * positions].
  const std::size_t pos = static_cast<std::size_t>(g->positions());
  const std::size_t ld = pos * g->n;
  const std::size_t in_stride = static_cast<std::size_t>(g->c) * g->h * g->w;
  auto cols = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(g->patch()) * ld);
  for (int ni = 0; ni < g->n; ++ni) {
    Real* col = cols->data() + pos * ni;
    const Real* src = x.data().data() + in_stride * ni;
    g->for_each_tap(
        ld, [&](std::size_t d, std::size_t s) { col[d] = src[s]; },
        [&](std::size_t d) { col[d] = Real(0); });
  }
  MatR prod(g->o, static_cast<Eigen::Index>(ld));
  prod.noalias() = CMapR(weight.data().data(), g->o, g->patch()) *
                   CMapR(cols->data(), g->patch(), static_cast<Eigen::Index>(ld));
  std::vector<Real> out(static_cast<std::size_t>(g->o) * ld);
  for (int ni = 0; ni < g->n; ++ni) {
    for (int oc = 0; oc < g->o; ++oc) {
      const Real b = bias.defined() ? bias.data()[oc] : Real(0);
      const Real* s = prod.data() + static_cast<std::size_t>(oc) * ld + pos * ni;
      Real* d = out.data() + (static_cast<std::size_t>(ni) * g->o + oc) * pos;
      for (std::size_t p = 0; p < pos; ++p) d[p] = s[p] + b;
    }
  }
  const bool keep = grad_enabled() && (x.requires_grad() || weight.requires_grad());
  if (!keep) cols.reset();
  std::vector<NodePtr> parents{x.shared(), weight.shared()};
  if (bias.defined()) parents.push_back(bias.shared());
  Node* xn = x.node();
  Node* wn = weight.node();
  Node* bn = bias.defined() ? bias.node() : nullptr;
  return make_result(
      {g->n, g->o, g->ho, g->wo}, std::move(out), "conv2d", std::move(parents),
      [xn, wn, bn, g, cols, in_stride, pos, ld](Node& self) {
        // Output gradient regrouped as [o, n * positions].
        MatR go(g->o, static_cast<Eigen::Index>(ld));
        for (int ni = 0; ni < g->n; ++ni) {
          for (int oc = 0; oc < g->o; ++oc) {
            std::copy_n(self.grad.data() + (static_cast<std::size_t>(ni) * g->o + oc) * pos, pos,
                        go.data() + static_cast<std::size_t>(oc) * ld + pos * ni);
          }
        }
        if (bn && bn->requires_grad) {
          Real* gb = bn->grad_buffer();
          for (int oc = 0; oc < g->o; ++oc) gb[oc] += go.row(oc).sum();
        }
        if (!cols) return;
        CMapR col(cols->data(), g->patch(), static_cast<Eigen::Index>(ld));
        if (wn->requires_grad) {
          MapR(wn->grad_buffer(), g->o, g->patch()).noalias() += go * col.transpose();
        }
        if (xn->requires_grad) {
          MatR gcol(g->patch(), static_cast<Eigen::Index>(ld));
          gcol.noalias() = CMapR(wn->value.data(), g->o, g->patch()).transpose() * go;
          Real* gx_all = xn->grad_buffer();
          for (int ni = 0; ni < g->n; ++ni) {
            const Real* gc = gcol.data() + pos * ni;
            Real* gx = gx_all + in_stride * ni;
            g->for_each_tap(
                ld, [&](std::size_t d, std::size_t s) { gx[s] += gc[d]; }, [](std::size_t) {});
          }
        }
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_defined(x, "upsample_nearest2x");
  if (x.ndim() != 4) throw ShapeError("upsample_nearest2x: expected [N,C,H,W], got " +
                                      shape_str(x.shape()));
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<Real> out(static_cast<std::size_t>(planes) * 4 * h * w);
  for (int p = 0; p < planes; ++p) {
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        out[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w + xx] =
            x.data()[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2];
      }
    }
  }
  Node* xn = x.node();
  return make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), "upsample",
                     {x.shared()}, [xn, planes, h, w](Node& self) {
                       Real* gx = xn->grad_buffer();
                       for (int p = 0; p < planes; ++p) {
                         for (int y = 0; y < 2 * h; ++y) {
                           for (int xx = 0; xx < 2 * w; ++xx) {
                             gx[(static_cast<std::size_t>(p) * h + y / 2) * w + xx / 2] +=
                                 self.grad[(static_cast<std::size_t>(p) * 2 * h + y) * 2 * w +
                                           xx];
                           }
                         }
                       }
                     });
}

// --- rows, softmax, losses ---------------------------------------------------

Tensor softmax(const Tensor& a) {
  require_defined(a, "softmax");
  const std::size_t rows = rows_of(a);
  const std::size_t d = static_cast<std::size_t>(a.shape().back());
  std::vector<Real> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.data().data() + r * d;
    Real* y = out.data() + r * d;
    const Real mx = *std::max_element(x, x + d);
    double z = 0;
    for (std::size_t c = 0; c < d; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < d; ++c) y[c] = static_cast<Real>(y[c] / z);
  }
  Node* an = a.node();
  return make_result(a.shape(), std::move(out), "softmax", {a.shared()},
                     [an, rows, d](Node& self) {
                       Real* ga = an->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Real* y = self.value.data() + r * d;
                         const Real* g = self.grad.data() + r * d;
                         double dot = 0;
                         for (std::size_t c = 0; c < d; ++c) dot += g[c] * y[c];
                         for (std::size_t c = 0; c < d; ++c) {
                           ga[r * d + c] += static_cast<Real>(y[c] * (g[c] - dot));
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  require_defined(a, "log_softmax");
  const std::size_t rows = rows_of(a);
  const std::size_t d = static_cast<std::size_t>(a.shape().back());
  std::vector<Real> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.data().data() + r * d;
    const Real mx = *std::max_element(x, x + d);
    double z = 0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<Real>(x[c] - lse);
  }
  Node* an = a.node();
  return make_result(a.shape(), std::move(out), "log_softmax", {a.shared()},
                     [an, rows, d](Node& self) {
                       Real* ga = an->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Real* y = self.value.data() + r * d;
                         const Real* g = self.grad.data() + r * d;
                         double gs = 0;
                         for (std::size_t c = 0; c < d; ++c) gs += g[c];
                         for (std::size_t c = 0; c < d; ++c) {
                           ga[r * d + c] += static_cast<Real>(g[c] - std::exp(y[c]) * gs);
                         }
                       }
                     });
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> targets) {
  require_2d(logits, "cross_entropy_with_logits");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n || n == 0) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_str(logits.shape()));
  }
  auto probs = std::make_shared<std::vector<Real>>(logits.numel());
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0;
  for (int r = 0; r < n; ++r) {
    if (tgt[r] < 0 || tgt[r] >= v) {
      throw DomainError("cross_entropy_with_logits: target " + std::to_string(tgt[r]) +
                        " outside vocabulary of " + std::to_string(v));
    }
    const Real* x = logits.data().data() + static_cast<std::size_t>(r) * v;
    const Real mx = *std::max_element(x, x + v);
    double z = 0;
    for (int c = 0; c < v; ++c) z += std::exp(static_cast<double>(x[c]) - mx);
    const double lse = mx + std::log(z);
    total += lse - x[tgt[r]];
    for (int c = 0; c < v; ++c) {
      (*probs)[static_cast<std::size_t>(r) * v + c] =
          static_cast<Real>(std::exp(static_cast<double>(x[c]) - lse));
    }
  }
  Node* ln = logits.node();
  return make_result({}, {static_cast<Real>(total / n)}, "cross_entropy", {logits.shared()},
                     [ln, probs, tgt, n, v](Node& self) {
                       Real* g = ln->grad_buffer();
                       const Real scale_ = self.grad[0] / static_cast<Real>(n);
                       for (int r = 0; r < n; ++r) {
                         for (int c = 0; c < v; ++c) {
                           const std::size_t k = static_cast<std::size_t>(r) * v + c;
                           g[k] += scale_ * ((*probs)[k] - (c == tgt[r] ? Real(1) : Real(0)));
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_2d(x, "layer_norm");
  const int n = x.dim(0), d = x.dim(1);
  if (gain.numel() != static_cast<std::size_t>(d) || bias.numel() != static_cast<std::size_t>(d)) {
    shape_fail("layer_norm", x.shape(), gain.shape());
  }
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
  std::vector<Real> out(x.numel());
  for (int r = 0; r < n; ++r) {
    const Real* xr = x.data().data() + static_cast<std::size_t>(r) * d;
    double mu = 0, sq = 0;
    for (int c = 0; c < d; ++c) mu += xr[c];
    mu /= d;
    for (int c = 0; c < d; ++c) sq += (xr[c] - mu) * (xr[c] - mu);
    const double is = 1.0 / std::sqrt(sq / d + eps);
    (*inv)[r] = static_cast<Real>(is);
    for (int c = 0; c < d; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * d + c;
      (*xhat)[k] = static_cast<Real>((xr[c] - mu) * is);
      out[k] = (*xhat)[k] * gain.data()[c] + bias.data()[c];
    }
  }
  Node* xn = x.node();
  Node* gn = gain.node();
  Node* bn = bias.node();
  return make_result(x.shape(), std::move(out), "layer_norm",
                     {x.shared(), gain.shared(), bias.shared()},
                     [xn, gn, bn, xhat, inv, n, d](Node& self) {
                       for (int r = 0; r < n; ++r) {
                         const Real* g = self.grad.data() + static_cast<std::size_t>(r) * d;
                         const Real* xh = xhat->data() + static_cast<std::size_t>(r) * d;
                         if (gn->requires_grad) {
                           Real* gg = gn->grad_buffer();
                           for (int c = 0; c < d; ++c) gg[c] += g[c] * xh[c];
                         }
                         if (bn->requires_grad) {
                           Real* gb = bn->grad_buffer();
                           for (int c = 0; c < d; ++c) gb[c] += g[c];
                         }
                         if (xn->requires_grad) {
                           double s1 = 0, s2 = 0;
                           for (int c = 0; c < d; ++c) {
                             const double gh = g[c] * gn->value[c];
                             s1 += gh;
                             s2 += gh * xh[c];
                           }
                           Real* gx = xn->grad_buffer() + static_cast<std::size_t>(r) * d;
                           for (int c = 0; c < d; ++c) {
                             const double gh = g[c] * gn->value[c];
                             gx[c] += static_cast<Real>((*inv)[r] / d *
                                                        (d * gh - s1 - xh[c] * s2));
                           }
                         }
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x, Real eps) {
  require_defined(x, "l2_normalize_rows");
  const std::size_t rows = rows_of(x);
  const std::size_t d = static_cast<std::size_t>(x.shape().back());
  auto norms = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += double(x.data()[r * d + c]) * x.data()[r * d + c];
    const double nrm = std::max(std::sqrt(s), static_cast<double>(eps));
    (*norms)[r] = static_cast<Real>(nrm);
    for (std::size_t c = 0; c < d; ++c) {
      out[r * d + c] = static_cast<Real>(x.data()[r * d + c] / nrm);
    }
  }
  Node* xn = x.node();
  return make_result(x.shape(), std::move(out), "l2_normalize", {x.shared()},
                     [xn, norms, rows, d](Node& self) {
                       Real* gx = xn->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Real* y = self.value.data() + r * d;
                         const Real* g = self.grad.data() + r * d;
                         double dot = 0;
                         for (std::size_t c = 0; c < d; ++c) dot += g[c] * y[c];
                         for (std::size_t c = 0; c < d; ++c) {
                           gx[r * d + c] += static_cast<Real>((g[c] - y[c] * dot) / (*norms)[r]);
                         }
                       }
                     });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> indices) {
  std::vector<Real> ones(indices.size(), Real(1));
  return weighted_gather(table, indices, ones, 1);
}

Tensor weighted_gather(const Tensor& table, std::span<const int> indices,
                       std::span<const Real> weights, int taps) {
  require_2d(table, "weighted_gather");
  if (taps < 1 || indices.size() != weights.size() || indices.size() % taps != 0) {
    throw ShapeError("weighted_gather: " + std::to_string(indices.size()) + " indices, " +
                     std::to_string(weights.size()) + " weights, " + std::to_string(taps) +
                     " taps");
  }
  const int v = table.dim(0), d = table.dim(1);
  const std::size_t n = indices.size() / taps;
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<Real> wts(weights.begin(), weights.end());
  for (int i : idx) {
    if (i < 0 || i >= v) {
      throw DomainError("weighted_gather: index " + std::to_string(i) + " outside table of " +
                        std::to_string(v) + " rows");
    }
  }
  std::vector<Real> out(n * d, Real(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (int t = 0; t < taps; ++t) {
      const std::size_t k = r * taps + t;
      const Real w = wts[k];
      const Real* src = table.data().data() + static_cast<std::size_t>(idx[k]) * d;
      for (int c = 0; c < d; ++c) out[r * d + c] += w * src[c];
    }
  }
  Node* tn = table.node();
  return make_result({static_cast<int>(n), d}, std::move(out), "gather", {table.shared()},
                     [tn, idx = std::move(idx), wts = std::move(wts), n, d, taps](Node& self) {
                       Real* g = tn->grad_buffer();
                       for (std::size_t r = 0; r < n; ++r) {
                         for (int t = 0; t < taps; ++t) {
                           const std::size_t k = r * taps + t;
                           Real* dst = g + static_cast<std::size_t>(idx[k]) * d;
                           for (int c = 0; c < d; ++c) dst[c] += wts[k] * self.grad[r * d + c];
                         }
                       }
                     });
}

// --- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (ad::numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<Real> out(a.data().begin(), a.data().end());
  Node* an = a.node();
  return make_result(std::move(shape), std::move(out), "reshape", {a.shared()},
                     [an](Node& self) {
                       Real* g = an->grad_buffer();
                       for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
                     });
}

Tensor permute(const Tensor& a, std::span<const int> perm) {
  require_defined(a, "permute");
  const int nd = a.ndim();
  if (static_cast<int>(perm.size()) != nd) {
    throw ShapeError("permute: permutation rank differs from " + shape_str(a.shape()));
  }
  std::vector<int> p(perm.begin(), perm.end());
  {
    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < nd; ++k) {
      if (sorted[k] != k) throw ShapeError("permute: not a permutation");
    }
  }
  Shape out_shape(nd);
  for (int k = 0; k < nd; ++k) out_shape[k] = a.shape()[p[k]];
  std::vector<std::size_t> in_strides(nd, 1);
  for (int k = nd - 2; k >= 0; --k) in_strides[k] = in_strides[k + 1] * a.shape()[k + 1];
  // Source offset of every output element, in output order.
  auto map = std::make_shared<std::vector<std::size_t>>(a.numel());
  std::vector<int> idx(nd, 0);
  for (std::size_t o = 0; o < a.numel(); ++o) {
    std::size_t src = 0;
    for (int k = 0; k < nd; ++k) src += idx[k] * in_strides[p[k]];
    (*map)[o] = src;
    for (int k = nd - 1; k >= 0; --k) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<Real> out(a.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = a.data()[(*map)[o]];
  Node* an = a.node();
  return make_result(std::move(out_shape), std::move(out), "permute", {a.shared()},
                     [an, map](Node& self) {
                       Real* g = an->grad_buffer();
                       for (std::size_t o = 0; o < map->size(); ++o) g[(*map)[o]] += self.grad[o];
                     });
}

Tensor permute(const Tensor& a, std::initializer_list<int> perm) {
  return permute(a, std::span<const int>(perm.begin(), perm.size()));
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  return permute(a, {1, 0});
}

namespace {

void axis_split(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
}

int norm_axis(int axis, int nd, const char* op) {
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  axis = norm_axis(axis, static_cast<int>(s0.size()), "concat");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != s0.size()) shape_fail("concat", s0, p.shape());
    for (std::size_t k = 0; k < s0.size(); ++k) {
      if (static_cast<int>(k) != axis && p.shape()[k] != s0[k]) shape_fail("concat", s0, p.shape());
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer, inner;
  axis_split(out_shape, axis, outer, inner);
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::vector<Real> out(ad::numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = static_cast<std::size_t>(p.shape()[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * row, row, out.data() + o * out_row + off);
    }
    off += row;
  }
  std::vector<NodePtr> parents;
  std::vector<Node*> raw;
  for (const auto& p : parts) {
    parents.push_back(p.shared());
    raw.push_back(p.node());
  }
  return make_result(std::move(out_shape), std::move(out), "concat", std::move(parents),
                     [raw, offsets, outer, out_row](Node& self) {
                       for (std::size_t k = 0; k < raw.size(); ++k) {
                         if (!raw[k]->requires_grad) continue;
                         const std::size_t row = raw[k]->value.size() / outer;
                         Real* g = raw[k]->grad_buffer();
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t c = 0; c < row; ++c) {
                             g[o * row + c] += self.grad[o * out_row + offsets[k] + c];
                           }
                         }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  require_defined(a, "slice");
  axis = norm_axis(axis, a.ndim(), "slice");
  const int extent = a.shape()[axis];
  if (begin < 0 || end > extent || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside axis of " + std::to_string(extent));
  }
  std::size_t outer, inner;
  axis_split(a.shape(), axis, outer, inner);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t in_row = static_cast<std::size_t>(extent) * inner;
  const std::size_t row = static_cast<std::size_t>(end - begin) * inner;
  const std::size_t off = static_cast<std::size_t>(begin) * inner;
  std::vector<Real> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * in_row + off, row, out.data() + o * row);
  }
  Node* an = a.node();
  return make_result(std::move(out_shape), std::move(out), "slice", {a.shared()},
                     [an, outer, row, in_row, off](Node& self) {
                       Real* g = an->grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t c = 0; c < row; ++c) {
                           g[o * in_row + off + c] += self.grad[o * row + c];
                         }
                       }
                     });
}

// --- attention -----------------------------------------------------------------

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  require_defined(q, "causal_attention");
  require_defined(k, "causal_attention");
  require_defined(v, "causal_attention");
  if (q.ndim() != 3) throw ShapeError("causal_attention: expected [B,T,D], got " + shape_str(q.shape()));
  if (k.shape() != q.shape()) shape_fail("causal_attention", q.shape(), k.shape());
  if (v.shape() != q.shape()) shape_fail("causal_attention", q.shape(), v.shape());
  const int b = q.dim(0), t = q.dim(1), d = q.dim(2);
  if (heads < 1 || d % heads != 0) {
    throw DomainError("causal_attention: width " + std::to_string(d) + " not divisible into " +
                      std::to_string(heads) + " heads");
  }
  const int dh = d / heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  using Strided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;
  using StridedW = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
  auto view = [t, d, dh](const Real* base, int bi, int h) {
    return Strided(base + static_cast<std::size_t>(bi) * t * d + h * dh, t, dh, Eigen::OuterStride<>(d));
  };
  // Attention weights, kept for the backward pass: [B, H, T, T].
  auto probs = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(b) * heads * t * t);
  std::vector<Real> out(q.numel());
  for (int bi = 0; bi < b; ++bi) {
    for (int h = 0; h < heads; ++h) {
      MapR p(probs->data() + (static_cast<std::size_t>(bi) * heads + h) * t * t, t, t);
      p.noalias() = view(q.data().data(), bi, h) * view(k.data().data(), bi, h).transpose();
      for (int i = 0; i < t; ++i) {
        Real mx = p(i, 0) * scale;
        for (int j = 0; j <= i; ++j) mx = std::max(mx, p(i, j) * scale);
        double z = 0;
        for (int j = 0; j <= i; ++j) z += (p(i, j) = std::exp(p(i, j) * scale - mx));
        for (int j = 0; j <= i; ++j) p(i, j) = static_cast<Real>(p(i, j) / z);
        for (int j = i + 1; j < t; ++j) p(i, j) = 0;
      }
      StridedW(out.data() + static_cast<std::size_t>(bi) * t * d + h * dh, t, dh,
               Eigen::OuterStride<>(d))
          .noalias() = p * view(v.data().data(), bi, h);
    }
  }
  Node* qn = q.node();
  Node* kn = k.node();
  Node* vn = v.node();
  return make_result(q.shape(), std::move(out), "causal_attention",
                     {q.shared(), k.shared(), v.shared()},
                     [=](Node& self) {
                       Real* gq = qn->requires_grad ? qn->grad_buffer() : nullptr;
                       Real* gk = kn->requires_grad ? kn->grad_buffer() : nullptr;
                       Real* gv = vn->requires_grad ? vn->grad_buffer() : nullptr;
                       MatR dp(t, t);
                       for (int bi = 0; bi < b; ++bi) {
                         for (int h = 0; h < heads; ++h) {
                           const std::size_t off = static_cast<std::size_t>(bi) * t * d + h * dh;
                           CMapR p(probs->data() + (static_cast<std::size_t>(bi) * heads + h) * t * t, t, t);
                           const Strided go(self.grad.data() + off, t, dh, Eigen::OuterStride<>(d));
                           if (gv) {
                             StridedW(gv + off, t, dh, Eigen::OuterStride<>(d)).noalias() +=
                                 p.transpose() * go;
                           }
                           if (!gq && !gk) continue;
                           dp.noalias() = go * view(vn->value.data(), bi, h).transpose();
                           // Softmax backward, row by row, then the 1/sqrt(dh) scale.
                           for (int i = 0; i < t; ++i) {
                             double dot = 0;
                             for (int j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
                             for (int j = 0; j < t; ++j) {
                               dp(i, j) = j <= i ? static_cast<Real>(p(i, j) * (dp(i, j) - dot) * scale) : 0;
                             }
                           }
                           if (gq) {
                             StridedW(gq + off, t, dh, Eigen::OuterStride<>(d)).noalias() +=
                                 dp * view(kn->value.data(), bi, h);
                           }
                           if (gk) {
                             StridedW(gk + off, t, dh, Eigen::OuterStride<>(d)).noalias() +=
                                 dp.transpose() * view(qn->value.data(), bi, h);
                           }
                         }
                       }
                     });
}

// --- gradient routing --------------------------------------------------------

Tensor detach(const Tensor& a) {
  require_defined(a, "detach");
  return Tensor::from(a.shape(), std::vector<Real>(a.data().begin(), a.data().end()));
}

Tensor straight_through(const Tensor& forward_value, const Tensor& gradient_carrier) {
  require_defined(forward_value, "straight_through");
  require_defined(gradient_carrier, "straight_through");
  if (forward_value.shape() != gradient_carrier.shape()) {
    shape_fail("straight_through", forward_value.shape(), gradient_carrier.shape());
  }
  std::vector<Real> out(forward_value.data().begin(), forward_value.data().end());
  Node* cn = gradient_carrier.node();
  return make_result(forward_value.shape(), std::move(out), "straight_through",
                     {gradient_carrier.shared()}, [cn](Node& self) {
                       Real* g = cn->grad_buffer();
                       for (std::size_t k = 0; k < self.grad.size(); ++k) g[k] += self.grad[k];
                     });
}

}  // namespace ad
T2L_NN_END
