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

#include "t2l/contrastive.hpp"

#include <numeric>
#include <string>

T2L_NN_BEGIN
namespace contrastive {

ad::Tensor contrastive_loss(const ad::Tensor& v, const ad::Tensor& c, Real tau) {
  if (v.ndim() != 2 || v.shape() != c.shape()) {
    throw ShapeError("contrastive_loss: " + ad::shape_str(v.shape()) + " vs " +
                     ad::shape_str(c.shape()));
  }
  const int n = v.dim(0);
  if (n < 2) throw DomainError("contrastive_loss needs at least two pairs");
  if (!(tau > 0 && tau <= 1)) throw DomainError("contrastive_loss: tau outside (0,1]");
  // Row i holds c_i . v_j over j, so row-wise cross entropy against target i
  // is the per-pair term.
  const auto logits = ad::scale(ad::matmul_nt(c, v), Real(1) / tau);
  std::vector<int> targets(static_cast<std::size_t>(n));
  std::iota(targets.begin(), targets.end(), 0);
  return ad::scale(ad::cross_entropy_with_logits(logits, targets), tau * static_cast<Real>(n));
}

}  // namespace contrastive
T2L_NN_END
