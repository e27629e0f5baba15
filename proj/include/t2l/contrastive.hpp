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

// Contrastive regularization between image embeddings and their pseudo text
// features, on the autodiff tape.

#include "t2l/autodiff.hpp"

T2L_NN_BEGIN
namespace contrastive {

inline constexpr double kDefaultTau = 0.07;

/// -tau * sum_i log( exp(v_i . c_i / tau) / sum_j exp(v_j . c_i / tau) )
/// for v, c of shape [n, d], n >= 2. Raw dot products: callers normalize.
ad::Tensor contrastive_loss(const ad::Tensor& v, const ad::Tensor& c, Real tau = kDefaultTau);

}  // namespace contrastive
T2L_NN_END
