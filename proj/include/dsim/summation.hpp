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

#include <span>

#include "dsim/types.hpp"

namespace dsim {

// Pairwise (cascade) summation. Error grows as O(log N) instead of O(N),
// which matters for kernel sums over ~1e4 samples.

namespace detail {
inline constexpr Index kPairwiseLeaf = 32;
}

inline double pairwise_sum(std::span<const double> xs) {
  if (static_cast<Index>(xs.size()) <= detail::kPairwiseLeaf) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

/// Pairwise sum of `weights[k] * rows[k]` over the rows in [begin, end).
inline Vector pairwise_weighted_rows(const PointMatrix& rows,
                                     std::span<const double> weights,
                                     Index begin, Index end) {
  if (end - begin <= detail::kPairwiseLeaf) {
    Vector acc = Vector::Zero(rows.cols());
    for (Index k = begin; k < end; ++k)
      acc.noalias() += weights[k] * rows.row(k).transpose();
    return acc;
  }
  const Index mid = begin + (end - begin) / 2;
  return pairwise_weighted_rows(rows, weights, begin, mid) +
         pairwise_weighted_rows(rows, weights, mid, end);
}

}  // namespace dsim
