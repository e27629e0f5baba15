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

// Interface between the acceptance runner and its 64-bit translation unit.

#include <span>
#include <string>
#include <vector>

namespace t2l::acceptance {

struct GradientResult {
  std::string path;
  double rel_error = 0;
};

/// Central finite differences on randomized small instances of every
/// trainable path, evaluated with the double-precision library.
std::vector<GradientResult> gradient_integrity();

struct ScaleResult {
  double max_diff = 0;  ///< max |L(kappa * pred) - L(pred)|
  double min_loss = 0;
};

/// iTMO loss under global rescaling of the prediction. Lives here because the
/// tolerance only makes sense in 64-bit arithmetic.
ScaleResult itmo_scale_invariance(std::span<const double> kappas, int trials);

}  // namespace t2l::acceptance
