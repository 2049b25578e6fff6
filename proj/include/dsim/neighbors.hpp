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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <vector>

#include "dsim/errors.hpp"
#include "dsim/types.hpp"

namespace dsim {

struct Neighbor {
  Index id = 0;
  double distance = 0.0;
};

namespace detail {

inline double squared_distance(const double* a, const double* b, Index n) {
  double s = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct Candidate {
  double d2;
  Index id;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && id < o.id);
  }
};

/// Exact kd-tree over the rows of a point matrix. Leaves hold up to
/// kLeafSize points; internal nodes split the widest axis at its median.
class KdTree {
 public:
  static constexpr Index kLeafSize = 16;

  KdTree() = default;
  explicit KdTree(const PointMatrix& pts) : pts_(&pts) {
    ids_.resize(static_cast<std::size_t>(pts.rows()));
    std::iota(ids_.begin(), ids_.end(), Index{0});
    if (!ids_.empty()) build(0, static_cast<Index>(ids_.size()));
  }

  std::vector<Candidate> query(const Vector& x, Index k) const {
    std::priority_queue<Candidate> heap;  // worst candidate on top
    if (!nodes_.empty()) search(0, x.data(), k, heap);
    std::vector<Candidate> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    Index begin, end;      // range in ids_
    Index axis = -1;       // -1 for leaves
    double split = 0.0;
    Index left = -1, right = -1;
  };

  Index build(Index begin, Index end) {
    const Index self = static_cast<Index>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return self;
    const Index n = pts_->cols();
    Index axis = 0;
    double widest = -1.0;
    for (Index a = 0; a < n; ++a) {
      double lo = INFINITY, hi = -INFINITY;
      for (Index i = begin; i < end; ++i) {
        const double v = (*pts_)(ids_[i], a);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = a;
      }
    }
    if (widest <= 0.0) return self;  // all points coincide: keep as a leaf
    const Index mid = begin + (end - begin) / 2;
    std::nth_element(ids_.begin() + begin, ids_.begin() + mid, ids_.begin() + end,
                     [&](Index a, Index b) {
                       const double va = (*pts_)(a, axis), vb = (*pts_)(b, axis);
                       return va < vb || (va == vb && a < b);
                     });
    const double split = (*pts_)(ids_[mid], axis);
    const Index left = build(begin, mid);
    const Index right = build(mid, end);
    nodes_[self].axis = axis;
    nodes_[self].split = split;
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(Index node, const double* x, Index k,
              std::priority_queue<Candidate>& heap) const {
    const Node& nd = nodes_[node];
    const Index n = pts_->cols();
    if (nd.axis < 0) {
      for (Index i = nd.begin; i < nd.end; ++i) {
        const Index id = ids_[i];
        const Candidate c{squared_distance(pts_->row(id).data(), x, n), id};
        if (static_cast<Index>(heap.size()) < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = x[nd.axis] - nd.split;
    const Index near = diff < 0.0 ? nd.left : nd.right;
    const Index far = diff < 0.0 ? nd.right : nd.left;
    search(near, x, k, heap);
    // Prune only on a strict inequality so equal-distance ties are still seen.
    if (static_cast<Index>(heap.size()) < k || !(diff * diff > heap.top().d2))
      search(far, x, k, heap);
  }

  const PointMatrix* pts_ = nullptr;
  std::vector<Index> ids_;
  std::vector<Node> nodes_;
};

}  // namespace detail

/// Immutable point set with an exact nearest-neighbour index. Uses a
/// kd-tree below 30 dimensions and a blocked linear scan above.
class Dataset {
 public:
  enum class IndexKind { Auto, KdTree, BruteForce };

  explicit Dataset(PointMatrix points, IndexKind kind = IndexKind::Auto)
      : points_(std::move(points)) {
    if (points_.rows() == 0 || points_.cols() == 0)
      throw InvalidArgument("dataset must be nonempty");
    if (!points_.allFinite()) throw InvalidArgument("dataset contains NaN or inf");
    lo_ = points_.colwise().minCoeff().transpose();
    hi_ = points_.colwise().maxCoeff().transpose();
    use_tree_ = kind == IndexKind::KdTree ||
                (kind == IndexKind::Auto && points_.cols() < 30);
    if (use_tree_) tree_ = detail::KdTree(points_);
  }

  Dataset(const Dataset& o) : Dataset(o.points_, o.use_tree_ ? IndexKind::KdTree : IndexKind::BruteForce) {}
  Dataset& operator=(const Dataset&) = delete;

  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }
  const PointMatrix& points() const { return points_; }
  Vector point(Index id) const { return points_.row(id).transpose(); }
  const Vector& lower_bounds() const { return lo_; }
  const Vector& upper_bounds() const { return hi_; }
  bool uses_tree() const { return use_tree_; }

  /// Exact k nearest points, ascending by distance, ties by lower id.
  std::vector<Neighbor> nearest(const Vector& x, Index k) const {
    if (x.size() != dim()) throw DimensionMismatch(dim(), x.size());
    if (k < 1 || k > size())
      throw InvalidArgument("k must lie in [1, " + std::to_string(size()) + "]");
    std::vector<detail::Candidate> c = use_tree_ ? tree_.query(x, k) : scan(x, k);
    std::vector<Neighbor> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = {c[i].id, std::sqrt(c[i].d2)};
    return out;
  }

 private:
  std::vector<detail::Candidate> scan(const Vector& x, Index k) const {
    const Index n = dim();
    std::vector<detail::Candidate> all(static_cast<std::size_t>(size()));
    for (Index i = 0; i < size(); ++i)
      all[i] = {detail::squared_distance(points_.row(i).data(), x.data(), n), i};
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    all.resize(static_cast<std::size_t>(k));
    return all;
  }

  PointMatrix points_;
  Vector lo_, hi_;
  bool use_tree_ = false;
  detail::KdTree tree_;
};

/// k-nearest-neighbour ball around a center.
struct Sphere {
  Vector center;
  std::vector<Index> member_ids;  ///< ascending by distance
  double radius = 0.0;            ///< distance of the farthest member
};

inline Sphere data_sphere(const Dataset& ds, const Vector& center, Index k) {
  Sphere s;
  s.center = center;
  for (const Neighbor& nb : ds.nearest(center, k)) {
    s.member_ids.push_back(nb.id);
    s.radius = std::max(s.radius, nb.distance);
  }
  return s;
}

/// Rows of `ds` selected by id, in the given order.
inline PointMatrix gather(const Dataset& ds, const std::vector<Index>& ids) {
  PointMatrix out(static_cast<Index>(ids.size()), ds.dim());
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.row(static_cast<Index>(i)) = ds.points().row(ids[i]);
  return out;
}

struct Sample {
  std::vector<Index> ids;  ///< sorted ascending
  PointMatrix points;
};

/// `count` uniform subsamples of m sphere members each. Sample i draws from
/// its own stream derived from (seed, i).
inline std::vector<Sample> draw_samples(const Sphere& sphere, const Dataset& ds,
                                        Index m, int count, std::uint64_t seed) {
  const Index members = static_cast<Index>(sphere.member_ids.size());
  if (m < 1 || m > members)
    throw InvalidArgument("sample size " + std::to_string(m) +
                          " exceeds the " + std::to_string(members) +
                          " sphere members");
  if (count < 1) throw InvalidArgument("sample count must be positive");
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    std::vector<Index> pool = sphere.member_ids;
    // Partial Fisher-Yates.
    for (Index j = 0; j < m; ++j) {
      const Index r = j + static_cast<Index>(rng.below(static_cast<std::uint64_t>(members - j)));
      std::swap(pool[j], pool[r]);
    }
    pool.resize(static_cast<std::size_t>(m));
    std::sort(pool.begin(), pool.end());
    Sample s;
    s.points = gather(ds, pool);
    s.ids = std::move(pool);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dsim
