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
#include <vector>

#include "dsim/errors.hpp"
#include "dsim/field.hpp"
#include "dsim/types.hpp"

/// Frames built from the drift grad U = (P0, P1, ..., P_{n-1}).
///
/// One ambient axis (the center) supplies P0; the other axes, in increasing
/// order, supply P1..P_{n-1}. The tangent subbundle orthogonal to grad U is
/// spanned by V_i = -P_i e_center + P0 e_{axis i}. Frame coordinates are
/// (rho, theta^1, ..., theta^{n-1}); a vector in frame coordinates has its
/// rho component first.
namespace dsim {

inline constexpr double kDefaultCenterEps = 1e-3;

struct Frame {
  Index center_axis = 0;
  Vector gradient;                 ///< ambient grad U, unpermuted
  Vector p_components;             ///< (P0, P1, ..., P_{n-1})
  std::vector<Index> theta_axes;   ///< ambient axis of P_i, i >= 1
  Matrix basis;                    ///< n x (n-1), column i-1 holds V_i

  Index dim() const { return gradient.size(); }
  double p0() const { return p_components[0]; }

  /// Ambient tangent sum_i v^i V_i for v in R^{n-1}.
  Vector tangent(const Vector& v) const { return basis * v; }

  /// Coefficients v with sum_i v^i V_i = t, for t orthogonal to grad U.
  Vector coefficients(const Vector& t) const {
    Vector v(dim() - 1);
    for (Index i = 0; i < dim() - 1; ++i) v[i] = t[theta_axes[i]] / p0();
    return v;
  }
};

/// Axis with the largest |grad U| component.
inline Index best_center(const Vector& grad) {
  Index c = 0;
  grad.cwiseAbs().maxCoeff(&c);
  return c;
}

inline Frame build_frame(const Vector& grad, Index center_axis,
                         double center_eps = kDefaultCenterEps) {
  const Index n = grad.size();
  if (n < 2) throw InvalidArgument("frames need dimension >= 2");
  if (center_axis < 0 || center_axis >= n)
    throw InvalidArgument("center axis out of range");
  const double p0 = grad[center_axis];
  const double top = grad.cwiseAbs().maxCoeff();
  if (!(std::abs(p0) >= center_eps * top) || p0 == 0.0)
    throw DegenerateCenter("|P0| = " + std::to_string(std::abs(p0)) +
                           " is below the centering threshold");
  Frame f;
  f.center_axis = center_axis;
  f.gradient = grad;
  f.p_components.resize(n);
  f.p_components[0] = p0;
  f.basis = Matrix::Zero(n, n - 1);
  Index i = 0;
  for (Index a = 0; a < n; ++a) {
    if (a == center_axis) continue;
    f.theta_axes.push_back(a);
    f.p_components[i + 1] = grad[a];
    f.basis(center_axis, i) = -grad[a];
    f.basis(a, i) = p0;
    ++i;
  }
  return f;
}

struct MetricEval {
  Matrix g;
  double grad_norm_sq = 0.0;
  double p0_sq = 0.0;
};

/// Dissimilarity metric in frame coordinates: |grad U|^2 on rho, and the
/// Gram matrix <V_i, V_j> = P0^2 delta_ij + P_i P_j on the theta block.
inline MetricEval metric(const Frame& frame) {
  const Index n = frame.dim();
  const Vector& p = frame.p_components;
  MetricEval m;
  m.grad_norm_sq = p.squaredNorm();
  m.p0_sq = p[0] * p[0];
  m.g = Matrix::Zero(n, n);
  m.g(0, 0) = m.grad_norm_sq;
  const auto tail = p.tail(n - 1);
  m.g.bottomRightCorner(n - 1, n - 1) = tail * tail.transpose();
  m.g.bottomRightCorner(n - 1, n - 1).diagonal().array() += m.p0_sq;
  return m;
}

/// Closed-form eigensystem of the metric: |grad U|^2 twice (xi0, xi1) and
/// P0^2 with multiplicity n - 2.
///
/// The minimal eigenvectors use a pivot theta component q (largest |P_q|)
/// and take the form -P_k e_q + P_q e_k for every other k; with q = 1 this
/// is exactly (0, -P_k, 0, ..., P_1, ..., 0).
struct EigenSystem {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  Vector xi0;
  Vector xi1;
  std::vector<Vector> xi_min;
  Index pivot = 1;
};

inline EigenSystem eigensystem(const Frame& frame, double rel_tol = 1e-10) {
  const Index n = frame.dim();
  if (n < 3) throw InvalidArgument("eigensystem needs dimension >= 3");
  const Vector& p = frame.p_components;
  EigenSystem e;
  e.lambda_max = p.squaredNorm();
  e.lambda_min = p[0] * p[0];
  if (e.lambda_max - e.lambda_min <= rel_tol * e.lambda_max)
    throw DegenerateSpectrum(
        "theta components of grad U vanish; eigenvalues coincide");
  e.xi0 = Vector::Unit(n, 0);
  e.xi1 = Vector::Zero(n);
  e.xi1.tail(n - 1) = p.tail(n - 1);
  Index q = 0;
  p.tail(n - 1).cwiseAbs().maxCoeff(&q);
  e.pivot = q + 1;
  for (Index k = 1; k < n; ++k) {
    if (k == e.pivot) continue;
    Vector xi = Vector::Zero(n);
    xi[e.pivot] = -p[k];
    xi[k] = p[e.pivot];
    e.xi_min.push_back(std::move(xi));
  }
  return e;
}

struct ZetaOptions {
  int count = 0;   ///< 0 selects max(10000, 200 (n - 2))
  int stride = 0;  ///< 0 selects count / (n + 1)
};

inline int default_zeta_count(Index n) {
  return std::max(10000, static_cast<int>(200 * (n - 2)));
}

/// Random +-1 combinations of the minimal eigenvectors, sorted by Euclidean
/// norm, keeping every `stride`-th entry. For n = 49 the defaults give
/// 10,000 combinations and every 200th entry.
inline std::vector<Vector> random_min_eigenvectors(const EigenSystem& eig,
                                                   std::uint64_t seed,
                                                   ZetaOptions opts = {}) {
  const Index n = eig.xi0.size();
  const Index m = static_cast<Index>(eig.xi_min.size());
  const int count = opts.count > 0 ? opts.count : default_zeta_count(n);
  if (count < m) throw InvalidArgument("zeta count must be >= n - 2");
  const int stride =
      opts.stride > 0 ? opts.stride
                      : std::max(1, count / static_cast<int>(n + 1));

  Rng rng(seed);
  std::vector<Vector> zetas(static_cast<std::size_t>(count));
  std::vector<double> norms(zetas.size());
  for (std::size_t z = 0; z < zetas.size(); ++z) {
    Vector acc = Vector::Zero(n);
    for (Index k = 0; k < m; ++k) {
      if (rng.next() >> 63)
        acc += eig.xi_min[k];
      else
        acc -= eig.xi_min[k];
    }
    norms[z] = acc.norm();
    zetas[z] = std::move(acc);
  }
  std::vector<std::size_t> order(zetas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return norms[a] < norms[b];
  });
  std::vector<Vector> picked;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(stride))
    picked.push_back(zetas[order[i]]);
  return picked;
}

/// Gram-Schmidt over `zetas` (in order) until n - 2 orthonormal vectors are
/// found. Candidates whose residual falls below drop_tol of their original
/// norm are skipped.
inline std::vector<Vector> orthonormal_directions(const EigenSystem& eig,
                                                  const std::vector<Vector>& zetas,
                                                  double drop_tol = 1e-8) {
  const Index n = eig.xi0.size();
  const int needed = static_cast<int>(n - 2);
  const Vector u1 = eig.xi1.normalized();
  std::vector<Vector> out;
  for (const Vector& z : zetas) {
    if (static_cast<int>(out.size()) == needed) break;
    const double original = z.norm();
    if (original == 0.0) continue;
    Vector r = z;
    // Two passes of modified Gram-Schmidt.
    for (int pass = 0; pass < 2; ++pass) {
      r -= r.dot(u1) * u1;
      r[0] = 0.0;
      for (const Vector& q : out) r -= r.dot(q) * q;
    }
    const double rn = r.norm();
    if (rn < drop_tol * original) continue;
    out.push_back(r / rn);
  }
  if (static_cast<int>(out.size()) < needed)
    throw RankDeficient(static_cast<int>(out.size()), needed);
  return out;
}

/// Magnitude of the Lie bracket [V_i/P0, V_j/P0] (theta indices i, j >= 1),
/// i.e. |P0 [dPi/dxj - dPj/dxi] + Pi [dPj/dxc - dP0/dxj]
///       + Pj [dP0/dxi - dPi/dxc]| / P0^2.
/// With fd_step > 0 the derivatives come from central differences of the
/// field, otherwise from its analytic Jacobian.
template <GradientField F>
double lie_bracket_residual(const F& field, const Vector& x, Index i, Index j,
                            double fd_step, Index center_axis = -1) {
  const Vector grad = field.gradient(x);
  const Index c = center_axis >= 0 ? center_axis : best_center(grad);
  const Frame frame = build_frame(grad, c);
  if (i < 1 || j < 1 || i >= frame.dim() || j >= frame.dim())
    throw InvalidArgument("theta indices must lie in [1, n)");
  if (i == j) return 0.0;
  const Index ai = frame.theta_axes[i - 1];
  const Index aj = frame.theta_axes[j - 1];

  // d(axis_p)/dx_q
  Matrix h;
  if (fd_step > 0.0) {
    const Index n = frame.dim();
    h.resize(n, n);
    for (Index q = 0; q < n; ++q) {
      Vector xp = x, xm = x;
      xp[q] += fd_step;
      xm[q] -= fd_step;
      h.col(q) = (field.gradient(xp) - field.gradient(xm)) / (2.0 * fd_step);
    }
  } else {
    h = field.hessian(x);
  }
  const auto d = [&](Index comp, Index wrt) { return h(comp, wrt); };
  const double p0 = grad[c], pi = grad[ai], pj = grad[aj];
  const double bracket = p0 * (d(ai, aj) - d(aj, ai)) +
                         pi * (d(aj, c) - d(c, aj)) +
                         pj * (d(c, ai) - d(ai, c));
  return std::abs(bracket) / (p0 * p0);
}

}  // namespace dsim
