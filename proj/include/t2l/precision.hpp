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

// Scalar type for the trainable parts of the library. The same sources are
// compiled twice: with float for training, and with T2L_DOUBLE_PRECISION for
// finite-difference gradient checks. The two builds live in different inline
// namespaces, so both can be linked into one binary; any translation unit
// sees exactly one of them.

#if defined(T2L_DOUBLE_PRECISION)
#define T2L_PREC_NS f64
#else
#define T2L_PREC_NS f32
#endif

#define T2L_NN_BEGIN  \
  namespace t2l {     \
  inline namespace T2L_PREC_NS {
#define T2L_NN_END \
  }                \
  }

T2L_NN_BEGIN
#if defined(T2L_DOUBLE_PRECISION)
using Real = double;
#else
using Real = float;
#endif
T2L_NN_END
