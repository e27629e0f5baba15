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

#pragma once

// Minimal dense-tensor reverse-mode differentiation.
//
// Each op computes its value eagerly and, when any input requires a
// gradient, records a closure that maps the output gradient back onto its
// inputs. The tape is the graph of shared node pointers reachable from the
// loss; it is rebuilt every step and released with the last handle.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t2l/common.hpp"
#include "t2l/precision.hpp"

T2L_NN_BEGIN
namespace ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Real* grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<Real> data() { return node_->value; }
  std::span<const Real> data() const { return node_->value; }
  Real item() const;
  Real at(std::size_t k) const { return node_->value[k]; }

  /// Empty span when no gradient has been accumulated.
  std::span<const Real> grad() const { return node_->grad; }
  std::vector<Real> grad_or_zeros() const;
  void zero_grad() { node_->grad.clear(); }

  /// Reverse sweep from this scalar; gradients accumulate into every
  /// reachable tensor that requires them.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, ops record no backward closures on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// --- elementwise -------------------------------------------------------------
// Binary ops accept either equal shapes or a right operand whose shape is a
// suffix of the left operand's (bias-style broadcasting).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real k);
Tensor add_scalar(const Tensor& a, Real k);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, Real k) { return scale(a, k); }
inline Tensor operator*(Real k, const Tensor& a) { return scale(a, k); }

// --- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Population variance over all elements.
Tensor var(const Tensor& a);
/// Sum over the last axis; the axis is dropped.
Tensor sum_last(const Tensor& a);

// --- linear algebra ----------------------------------------------------------

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [M,K] x [N,K]^T -> [M,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  /// Pad the width axis by wrapping around instead of with zeros.
  bool circular_width = false;
};

/// x [N,C,H,W], weight [O,C,kh,kw], bias [O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt = {});
/// [N,C,H,W] -> [N,C,2H,2W]
Tensor upsample_nearest2x(const Tensor& x);

// --- rows, softmax, losses ---------------------------------------------------

/// Multi-head scaled dot-product attention with a causal mask: position i
/// attends to positions <= i. q, k, v are [B, T, D] with D divisible by
/// `heads`; the result is [B, T, D] (heads concatenated, no projection).
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis
/// Mean over rows of -log softmax(logits)[target]. logits [N,V].
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> targets);
/// x [N,D] normalized over D, then scaled by gain [D] and shifted by bias [D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);
/// Divides every row of [N,D] by its L2 norm.
Tensor l2_normalize_rows(const Tensor& x, Real eps = 1e-12);

/// Rows of table [V,D] selected by indices -> [n,D].
Tensor embedding_lookup(const Tensor& table, std::span<const int> indices);
/// out[i] = sum_k weights[i*taps+k] * table[indices[i*taps+k]] -> [n,D].
Tensor weighted_gather(const Tensor& table, std::span<const int> indices,
                       std::span<const Real> weights, int taps);

// --- shape -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::span<const int> perm);
Tensor permute(const Tensor& a, std::initializer_list<int> perm);
Tensor transpose(const Tensor& a);  // 2-D
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);

// --- gradient routing --------------------------------------------------------

/// Same value, no gradient path.
Tensor detach(const Tensor& a);
/// Forward value of `forward_value`; the backward pass sends the whole
/// gradient to `gradient_carrier` with identity Jacobian.
Tensor straight_through(const Tensor& forward_value, const Tensor& gradient_carrier);

// --- optimization ------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<Real> first;
  std::vector<Real> second;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
void adam_step(std::span<Real> param, std::span<const Real> grad, AdamMoments& moments,
               long step, const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update using the gradients currently stored on the
  /// parameters; parameters without a gradient are treated as zero-gradient.
  void step();
  void zero_grad();
  long steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<AdamMoments> moments_;
  long steps_ = 0;
};

// --- checkpoints ---------------------------------------------------------------

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "T2LCKPT" magic, u32 version, then per record: u32 name length, name
/// bytes, u32 dim count, u32 dims, little-endian f32 values.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

/// Named, ordered collection of trainable tensors.
class ParamStore {
 public:
  /// Registers a new parameter; names must be unique.
  Tensor add(const std::string& name, Shape shape, std::vector<Real> init);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;

  std::vector<NamedArray> to_arrays() const;
  /// Copies values into the registered parameters; every registered name must
  /// be present with a matching shape. Unknown names in `arrays` are ignored.
  void load_arrays(std::span<const NamedArray> arrays);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace ad
T2L_NN_END
