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
#include <optional>
#include <vector>

#include "dsim/errors.hpp"
#include "dsim/summation.hpp"
#include "dsim/types.hpp"

/// Gaussian kernel estimates of the log-density gradient.
///
/// With K(s, x) = exp(-beta |s - x|^2) and S(x) = sum_k K(s_k, x), the
/// unnormalized gradient is
///
///     DU(x) = sum_k K(s_k, x) (s_k - x)
///
/// and d/dx log S = 2 beta DU / S. Its derivative has the closed form
///
///     d_i DU_j = 2 beta sum_k K (x - s_k)_i (x - s_k)_j - delta_ij S.
namespace dsim {

inline constexpr double kDefaultKernelFloor = 1e-300;

/// Smoothing parameter plus the active sample. Immutable after
/// construction, so one context can be shared by concurrent readers.
class KernelContext {
 public:
  KernelContext(double beta, PointMatrix sample,
                double kernel_floor = kDefaultKernelFloor)
      : beta_(beta), sample_(std::move(sample)), floor_(kernel_floor) {
    if (!(beta_ > 0.0)) throw InvalidArgument("beta must be positive");
    if (sample_.rows() == 0 || sample_.cols() == 0)
      throw InvalidArgument("kernel sample must be nonempty");
  }

  double beta() const { return beta_; }
  double kernel_floor() const { return floor_; }
  Index dim() const { return sample_.cols(); }
  Index size() const { return sample_.rows(); }
  const PointMatrix& sample() const { return sample_; }

  void check(const Vector& x) const {
    if (x.size() != dim()) throw DimensionMismatch(dim(), x.size());
  }

 private:
  double beta_;
  PointMatrix sample_;
  double floor_;
};

struct GradientEval {
  Vector point;
  Vector du;
  double kernel_sum = 0.0;
  std::optional<Matrix> jacobian;
};

/// K(s_k, x) for every sample point, each in (0, 1].
inline Vector kernel_weights(const KernelContext& ctx, const Vector& x) {
  ctx.check(x);
  const auto& s = ctx.sample();
  Vector w(s.rows());
  for (Index k = 0; k < s.rows(); ++k)
    w[k] = std::exp(-ctx.beta() * (s.row(k).transpose() - x).squaredNorm());
  return w;
}

namespace detail {

inline void evaluate(const KernelContext& ctx, const Vector& x,
                     const Vector& w, GradientEval& out) {
  const std::span<const double> ws(w.data(), static_cast<std::size_t>(w.size()));
  out.point = x;
  out.kernel_sum = pairwise_sum(ws);
  out.du = pairwise_weighted_rows(ctx.sample(), ws, 0, ctx.size()) -
           out.kernel_sum * x;
}

inline Matrix du_jacobian(const KernelContext& ctx, const Vector& x,
                          const Vector& w, double kernel_sum) {
  // Offsets x - s_k, one per row; the outer-product sum is a weighted Gram.
  const Matrix d = (-ctx.sample()).rowwise() + x.transpose();
  const Matrix wd = d.array().colwise() * w.array();
  Matrix j = 2.0 * ctx.beta() * (wd.transpose() * d);
  j.diagonal().array() -= kernel_sum;
  return 0.5 * (j + j.transpose());
}

inline void require_floor(const KernelContext& ctx, double kernel_sum) {
  if (!(kernel_sum >= ctx.kernel_floor())) throw UnderflowError(kernel_sum);
}

}  // namespace detail

/// Unnormalized gradient DU and the kernel sum; no Jacobian.
inline GradientEval grad_u(const KernelContext& ctx, const Vector& x) {
  const Vector w = kernel_weights(ctx, x);
  GradientEval g;
  detail::evaluate(ctx, x, w, g);
  return g;
}

/// Same as grad_u, plus the full n x n Jacobian d_i DU_j.
inline GradientEval grad_u_with_jacobian(const KernelContext& ctx,
                                         const Vector& x) {
  const Vector w = kernel_weights(ctx, x);
  GradientEval g;
  detail::evaluate(ctx, x, w, g);
  g.jacobian = detail::du_jacobian(ctx, x, w, g.kernel_sum);
  return g;
}

inline Matrix grad_u_jacobian(const KernelContext& ctx, const Vector& x) {
  return *grad_u_with_jacobian(ctx, x).jacobian;
}

/// 2 beta [weighted mean - x], the gradient of log sum_k K(s_k, x).
inline Vector grad_log_density(const KernelContext& ctx, const Vector& x) {
  const GradientEval g = grad_u(ctx, x);
  detail::require_floor(ctx, g.kernel_sum);
  return (2.0 * ctx.beta() / g.kernel_sum) * g.du;
}

/// Unnormalized log density log sum_k K(s_k, x).
inline double log_kernel_sum(const KernelContext& ctx, const Vector& x) {
  ctx.check(x);
  // log-sum-exp keeps this finite where the plain sum would underflow.
  const auto& s = ctx.sample();
  Vector e(s.rows());
  for (Index k = 0; k < s.rows(); ++k)
    e[k] = -ctx.beta() * (s.row(k).transpose() - x).squaredNorm();
  const double top = e.maxCoeff();
  Vector shifted = (e.array() - top).exp();
  return top + std::log(pairwise_sum(
                   std::span<const double>(shifted.data(), shifted.size())));
}

/// Fixed-point mean-shift update: the kernel-weighted mean of the sample.
inline Vector mean_shift_step(const KernelContext& ctx, const Vector& x) {
  const GradientEval g = grad_u(ctx, x);
  detail::require_floor(ctx, g.kernel_sum);
  return x + g.du / g.kernel_sum;
}

struct AscentOptions {
  double tol = 1e-6;      ///< Euclidean displacement threshold
  int max_iter = 500;     ///< mean-shift iterations
  int max_rounds = 5000;  ///< sample fetches when resampling
};

struct AscentResult {
  Vector mode;
  int iterations = 0;  ///< total mean-shift steps
  int rounds = 1;      ///< resampling rounds (1 for a fixed sample)
};

/// Mean-shift ascent on a fixed sample until the displacement drops below
/// opts.tol. Throws NonConvergence carrying the last iterate.
inline AscentResult gradient_ascent(const KernelContext& ctx, const Vector& x0,
                                    const AscentOptions& opts = {}) {
  if (!(opts.tol > 0.0)) throw InvalidArgument("tol must be positive");
  Vector x = x0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    Vector next = mean_shift_step(ctx, x);
    const double step = (next - x).norm();
    x = std::move(next);
    if (step < opts.tol) return {x, it, 1};
  }
  throw NonConvergence(opts.max_iter, x);
}

/// Mean-shift ascent with resampling: before every step the sample is
/// re-fetched around the current iterate (`fetch(x)` returns row indices
/// into `pool`). Once two consecutive fetches agree the sample is held
/// fixed and the ascent finishes on it.
template <typename Fetch>
AscentResult gradient_ascent(const PointMatrix& pool, Fetch&& fetch, double beta,
                             const Vector& x0, const AscentOptions& opts = {}) {
  if (!(opts.tol > 0.0)) throw InvalidArgument("tol must be positive");
  Vector x = x0;
  std::vector<Index> previous;
  AscentResult total{x0, 0, 0};
  for (int round = 1; round <= opts.max_rounds; ++round) {
    std::vector<Index> ids = fetch(x);
    std::sort(ids.begin(), ids.end());
    PointMatrix sample(static_cast<Index>(ids.size()), pool.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      sample.row(static_cast<Index>(i)) = pool.row(ids[i]);
    const KernelContext ctx(beta, std::move(sample));
    total.rounds = round;
    if (round > 1 && ids == previous) {
      const AscentResult r = gradient_ascent(ctx, x, opts);
      total.iterations += r.iterations;
      total.mode = r.mode;
      return total;
    }
    Vector next = mean_shift_step(ctx, x);
    ++total.iterations;
    const double step = (next - x).norm();
    x = std::move(next);
    if (step < opts.tol) {
      total.mode = x;
      return total;
    }
    previous = std::move(ids);
  }
  throw NonConvergence(total.iterations, x);
}

/// Gradient field U(x) = (1/2) log S(x) + const estimated from a kernel
/// sample, so that the stationary density exp(2U) matches the estimate.
/// Its gradient is beta * DU / S.
class KernelField {
 public:
  explicit KernelField(KernelContext ctx) : ctx_(std::move(ctx)) {}

  const KernelContext& context() const { return ctx_; }
  Index dim() const { return ctx_.dim(); }

  Vector gradient(const Vector& x) const {
    const GradientEval g = grad_u(ctx_, x);
    detail::require_floor(ctx_, g.kernel_sum);
    return (ctx_.beta() / g.kernel_sum) * g.du;
  }

  /// Jacobian of gradient(): beta [J_DU / S - 2 beta DU DU^T / S^2].
  Matrix hessian(const Vector& x) const {
    const GradientEval g = grad_u_with_jacobian(ctx_, x);
    detail::require_floor(ctx_, g.kernel_sum);
    const double b = ctx_.beta();
    const double s = g.kernel_sum;
    Matrix h = (b / s) * *g.jacobian;
    h.noalias() -= (2.0 * b * b / (s * s)) * g.du * g.du.transpose();
    return h;
  }

  /// hessian(x) * u in O(N n) without forming the matrix.
  Vector hessian_vector(const Vector& x, const Vector& u) const {
    const Vector w = kernel_weights(ctx_, x);
    GradientEval g;
    detail::evaluate(ctx_, x, w, g);
    detail::require_floor(ctx_, g.kernel_sum);
    const auto& smp = ctx_.sample();
    const double b = ctx_.beta();
    const double s = g.kernel_sum;
    // J_DU u = 2 beta sum_k K d_k (d_k . u) - S u, with d_k = x - s_k.
    Vector coeff(smp.rows());
    for (Index k = 0; k < smp.rows(); ++k)
      coeff[k] = w[k] * (x - smp.row(k).transpose()).dot(u);
    const std::span<const double> cs(coeff.data(), coeff.size());
    const Vector sum_cs = pairwise_weighted_rows(smp, cs, 0, smp.rows());
    const double total_c = pairwise_sum(cs);
    Vector jdu = 2.0 * b * (total_c * x - sum_cs) - s * u;
    return (b / s) * jdu - (2.0 * b * b / (s * s)) * g.du * g.du.dot(u);
  }

  /// U(x) up to an additive constant.
  double potential(const Vector& x) const {
    return 0.5 * log_kernel_sum(ctx_, x);
  }

 private:
  KernelContext ctx_;
};

}  // namespace dsim
