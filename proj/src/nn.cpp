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

#include "t2l/nn.hpp"

#include <cmath>

T2L_NN_BEGIN
namespace nn {

std::vector<Real> fan_in_uniform(std::size_t count, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<Real> v(count);
  for (auto& x : v) x = static_cast<Real>(uniform(rng, -bound, bound));
  return v;
}

std::vector<Real> he_uniform(std::size_t count, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<Real> v(count);
  for (auto& x : v) x = static_cast<Real>(uniform(rng, -bound, bound));
  return v;
}

std::vector<Real> normal_values(std::size_t count, double stddev, Rng& rng) {
  std::vector<Real> v(count);
  for (auto& x : v) x = static_cast<Real>(stddev * standard_normal(rng));
  return v;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  weight = ps.add(prefix + ".weight", {in, out},
                  he_uniform(static_cast<std::size_t>(in) * out, in, rng));
  bias = ps.add(prefix + ".bias", {out}, std::vector<Real>(static_cast<std::size_t>(out), Real(0)));
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

Conv2d::Conv2d(ParamStore& ps, const std::string& prefix, int in, int out, int kernel,
               ad::Conv2dOptions opt, Rng& rng)
    : options(opt) {
  const int fan_in = in * kernel * kernel;
  weight = ps.add(prefix + ".weight", {out, in, kernel, kernel},
                  he_uniform(static_cast<std::size_t>(out) * fan_in, fan_in, rng));
  bias = ps.add(prefix + ".bias", {out}, std::vector<Real>(static_cast<std::size_t>(out), Real(0)));
}

Tensor Conv2d::operator()(const Tensor& x) const { return ad::conv2d(x, weight, bias, options); }

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim) {
  gain = ps.add(prefix + ".gain", {dim}, std::vector<Real>(static_cast<std::size_t>(dim), Real(1)));
  bias = ps.add(prefix + ".bias", {dim}, std::vector<Real>(static_cast<std::size_t>(dim), Real(0)));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ad::layer_norm(x, gain, bias); }

Tensor nchw_to_rows(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return ad::reshape(ad::permute(x, {0, 2, 3, 1}), {n * h * w, c});
}

Tensor rows_to_nchw(const Tensor& x, int n, int h, int w) {
  const int c = x.dim(1);
  return ad::permute(ad::reshape(x, {n, h, w, c}), {0, 3, 1, 2});
}

}  // namespace nn
T2L_NN_END
