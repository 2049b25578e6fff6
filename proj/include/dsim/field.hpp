// Copyright 2026 The dsim Authors
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

#include <concepts>

#include "dsim/types.hpp"

namespace dsim {

/// A drift field grad U with its Jacobian (the Hessian of U).
/// Implemented by KernelField (estimated) and SyntheticPotential (exact).
template <typename F>
concept GradientField = requires(const F& f, const Vector& x) {
  { f.dim() } -> std::convertible_to<Index>;
  { f.gradient(x) } -> std::convertible_to<Vector>;
  { f.hessian(x) } -> std::convertible_to<Matrix>;
};

template <GradientField F>
Vector hessian_vector(const F& field, const Vector& x, const Vector& u) {
  if constexpr (requires { field.hessian_vector(x, u); }) {
    return field.hessian_vector(x, u);
  } else {
    return field.hessian(x) * u;
  }
}

}  // namespace dsim
