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

// Small layer helpers over the autodiff ops. Each layer registers its
// parameters in a ParamStore under "<prefix>.<name>".

#include <string>

#include "t2l/autodiff.hpp"

T2L_NN_BEGIN
namespace nn {

using ad::ParamStore;
using ad::Tensor;

/// Uniform(-bound, bound) values, bound = 1/sqrt(fan_in).
std::vector<Real> fan_in_uniform(std::size_t count, int fan_in, Rng& rng);
/// Uniform(-bound, bound), bound = sqrt(6/fan_in): keeps activation scale
/// through ReLU stacks. Layers below use it with zero biases.
std::vector<Real> he_uniform(std::size_t count, int fan_in, Rng& rng);
std::vector<Real> normal_values(std::size_t count, double stddev, Rng& rng);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
  /// x [N, in] -> [N, out]
  Tensor operator()(const Tensor& x) const;
  int in() const { return weight.dim(0); }
  int out() const { return weight.dim(1); }
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  ad::Conv2dOptions options;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& prefix, int in, int out, int kernel,
         ad::Conv2dOptions opt, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
  Tensor operator()(const Tensor& x) const;
};

/// [N,C,H,W] -> [N*H*W, C]
Tensor nchw_to_rows(const Tensor& x);
/// [N*H*W, C] -> [N,C,H,W]
Tensor rows_to_nchw(const Tensor& x, int n, int h, int w);

}  // namespace nn
T2L_NN_END
