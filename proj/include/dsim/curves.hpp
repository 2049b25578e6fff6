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
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsim/errors.hpp"
#include "dsim/field.hpp"
#include "dsim/geometry.hpp"
#include "dsim/ode.hpp"
#include "dsim/types.hpp"

namespace dsim {

enum class StopReason {
  Arrived,           ///< reached a stationary point of the drift
  TargetLength,      ///< travelled the requested Euclidean length
  TargetPoint,       ///< came within the proximity radius of a target
  LevelSet,          ///< the level function changed sign
  StopAngle,         ///< reached the requested angle about the origin
  EndOfParameter,    ///< transverse flow reached t_max
  MaxLength,         ///< length budget exhausted (partial path)
  AngleUnreachable,  ///< geodesic stalled before the stop angle (partial)
  Degenerate,        ///< transverse flow hit |P0| ~ 0 (partial)
};

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::Arrived: return "arrived";
    case StopReason::TargetLength: return "target_length";
    case StopReason::TargetPoint: return "target_point";
    case StopReason::LevelSet: return "level_set";
    case StopReason::StopAngle: return "stop_angle";
    case StopReason::EndOfParameter: return "end_of_parameter";
    case StopReason::MaxLength: return "max_length";
    case StopReason::AngleUnreachable: return "angle_unreachable";
    case StopReason::Degenerate: return "degenerate";
  }
  return "unknown";
}

struct CenterEvent {
  double t = 0.0;
  Index axis = 0;
};

/// A discretized curve. Knots are the integrator's accepted steps plus a few
/// dense-output points per step.
struct CurvePath {
  std::vector<double> params;
  std::vector<Vector> points;
  std::vector<Vector> tangents;
  std::vector<double> euclid_len;  ///< cumulative
  std::vector<double> riem_len;    ///< cumulative
  std::vector<Index> center_axis;  ///< frame center in force at each knot
  std::vector<CenterEvent> center_history;
  std::vector<Vector> v_history;   ///< frame coefficients (geodesics, flows)
  StopReason stop = StopReason::Arrived;
  bool partial = false;

  std::size_t size() const { return params.size(); }
  const Vector& end_point() const { return points.back(); }
  double euclid_total() const { return euclid_len.empty() ? 0.0 : euclid_len.back(); }
  double riem_total() const { return riem_len.empty() ? 0.0 : riem_len.back(); }
};

struct CurveOptions {
  OdeOptions ode{};
  int dense_per_step = 3;      ///< extra knots sampled inside each step
  double recenter_eps = 0.05;  ///< re-center when |P0| < eps * max |Pj|
  double center_eps = kDefaultCenterEps;
  double max_length = 1e6;
  /// Transverse flows return the partial path instead of throwing
  /// DegenerateCenter.
  bool partial_on_degenerate = false;
};

/// Speed of an ambient tangent under the dissimilarity metric: the drift
/// component moves rho at Euclidean rate a and costs |grad U| per unit; the
/// component w orthogonal to grad U costs its Euclidean length (Gram
/// identity). So speed^2 = a^2 |grad U|^2 + |w|^2.
inline double riemannian_speed(const Vector& grad, const Vector& xdot) {
  const double gn = grad.norm();
  if (gn == 0.0) return xdot.norm();
  const double a = xdot.dot(grad) / gn;
  const double w2 = std::max(0.0, xdot.squaredNorm() - a * a);
  return std::sqrt(a * a * gn * gn + w2);
}

namespace detail {

/// Drops knots at or beyond te (used after an event inside the last step).
inline void truncate_after(CurvePath& path, double te) {
  while (!path.params.empty() && path.params.back() >= te) {
    path.params.pop_back();
    path.points.pop_back();
    path.tangents.pop_back();
    path.euclid_len.pop_back();
    path.riem_len.pop_back();
    path.center_axis.pop_back();
    if (!path.v_history.empty()) path.v_history.pop_back();
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// rho coordinate curves

enum class RhoDirection { Inward, Outward };

struct RhoStop {
  double grad_floor = 1e-6;  ///< |grad U| below this counts as arrival
  double target_length = std::numeric_limits<double>::infinity();
  std::optional<Vector> target_point;
  double proximity = 1e-6;
  /// Stop where level(x) changes sign relative to its value at x0.
  std::function<double(const Vector&)> level;
};

/// Integral curve of +-grad U / |grad U| (Euclidean arc-length parameter).
/// The Riemannian length accumulates |grad U| per unit of arc length.
template <GradientField F>
CurvePath rho_curve(const F& field, const Vector& x0, RhoDirection direction,
                    const RhoStop& stop = {}, const CurveOptions& opts = {}) {
  const Index n = x0.size();
  const Vector g0 = field.gradient(x0);
  if (g0.norm() < stop.grad_floor)
    throw StationaryStart("rho curve starts at a stationary point");
  const double sign = direction == RhoDirection::Inward ? 1.0 : -1.0;
  const Index axis = best_center(g0);

  auto rhs = [&](double, const Vector& y) {
    const Vector g = field.gradient(y.head(n));
    const double gn = g.norm();
    Vector out(n + 2);
    out.head(n) = (sign / gn) * g;
    out[n] = 1.0;
    out[n + 1] = gn;
    return out;
  };

  CurvePath path;
  auto record = [&](double t, const Vector& y) {
    const Vector g = field.gradient(y.head(n));
    path.params.push_back(t);
    path.points.push_back(y.head(n));
    path.tangents.push_back((sign / g.norm()) * g);
    path.euclid_len.push_back(y[n]);
    path.riem_len.push_back(y[n + 1]);
    path.center_axis.push_back(axis);
  };

  Vector y0(n + 2);
  y0 << x0, 0.0, 0.0;
  Dopri5 ode(rhs, 0.0, y0, opts.ode);
  record(0.0, y0);

  const double t_end = std::min(stop.target_length, opts.max_length);
  auto proximity = [&](double, const Vector& y) {
    return (y.head(n) - *stop.target_point).norm() - stop.proximity;
  };
  const bool level_positive = stop.level && stop.level(x0) > 0.0;

  for (;;) {
    const Vector g_before = field.gradient(ode.y().head(n));
    ode.step(t_end);
    const double h = ode.t() - ode.t_prev();
    for (int k = 1; k <= opts.dense_per_step; ++k) {
      const double t = ode.t_prev() + h * k / (opts.dense_per_step + 1);
      if (stop.target_point && proximity(t, ode.dense(t)) <= 0.0) break;
      record(t, ode.dense(t));
    }

    if (stop.level && (stop.level(ode.y().head(n)) > 0.0) != level_positive) {
      auto crossing = [&](double, const Vector& y) { return stop.level(y.head(n)); };
      const double te = ode.locate(crossing);
      detail::truncate_after(path, te);
      record(te, ode.dense(te));
      path.stop = StopReason::LevelSet;
      return path;
    }
    if (stop.target_point) {
      double te = -1.0;
      if (proximity(ode.t(), ode.y()) <= 0.0) {
        te = ode.locate(proximity);
      } else {
        // The ball may be crossed inside one step: test the closest approach.
        auto approach = [&](double, const Vector& y) {
          const Vector g = field.gradient(y.head(n));
          return sign * (y.head(n) - *stop.target_point).dot(g);
        };
        if (approach(ode.t_prev(), ode.y_prev()) < 0.0 && approach(ode.t(), ode.y()) >= 0.0) {
          const double tc = ode.locate(approach);
          if (proximity(tc, ode.dense(tc)) <= 0.0) te = tc;
        }
      }
      if (te >= 0.0) {
        detail::truncate_after(path, te);
        record(te, ode.dense(te));
        path.stop = StopReason::TargetPoint;
        return path;
      }
    }
    const Vector g_after = field.gradient(ode.y().head(n));
    if (direction == RhoDirection::Inward) {
      if (g_after.dot(g_before) <= 0.0) {
        // Stepped over the mode: stop where the drift turns around.
        auto turn = [&](double, const Vector& y) {
          return field.gradient(y.head(n)).dot(g_before);
        };
        const double te = ode.locate(turn);
        detail::truncate_after(path, te);
        record(te, ode.dense(te));
        path.stop = StopReason::Arrived;
        return path;
      }
      if (g_after.norm() < stop.grad_floor) {
        record(ode.t(), ode.y());
        path.stop = StopReason::Arrived;
        return path;
      }
    }
    record(ode.t(), ode.y());
    if (ode.t() >= t_end) {
      path.stop = ode.t() >= stop.target_length ? StopReason::TargetLength
                                                : StopReason::MaxLength;
      path.partial = path.stop == StopReason::MaxLength;
      return path;
    }
  }
}

// ---------------------------------------------------------------------------
// Geodesics on the integral manifold

/// Initial data for the Euler-Lagrange system: position, multipliers
/// (indexed by ambient axis; the center axis holds lambda_0) and the
/// algebraic coefficients v.
struct GeodesicState {
  Vector x;
  Vector lambda;
  Vector v;
  Index center_axis = 0;
};

/// The algebraic equation for v:
///   v^i = (lambda_i - P_i (sum_j P_j lambda_j) / |P|^2) / P0.
/// Returned in the frame's theta order.
inline Vector geodesic_coefficients(const Frame& frame, const Vector& lambda) {
  const Vector& grad = frame.gradient;
  const double s = grad.dot(lambda) / grad.squaredNorm();
  Vector v(frame.dim() - 1);
  for (Index i = 0; i < v.size(); ++i) {
    const Index a = frame.theta_axes[i];
    v[i] = (lambda[a] - grad[a] * s) / frame.p0();
  }
  return v;
}

/// Multipliers in the gauge sum_j P_j lambda_j = 0 that reproduce v0:
/// lambda_i = P0 v0^i (i >= 1), lambda_0 = -sum_i P_i v0^i. In ambient
/// indexing this is exactly the tangent sum_i v0^i V_i.
inline GeodesicState geodesic_initial_state(const Frame& frame, const Vector& x0,
                                            const Vector& v0) {
  if (v0.size() != frame.dim() - 1)
    throw DimensionMismatch(frame.dim() - 1, v0.size());
  if (!v0.allFinite()) throw InvalidArgument("initial direction is not finite");
  GeodesicState s;
  s.x = x0;
  s.lambda = frame.tangent(v0);
  s.v = geodesic_coefficients(frame, s.lambda);
  s.center_axis = frame.center_axis;
  return s;
}

namespace detail {

/// Velocity-level quantities of the Euler-Lagrange system at (x, lambda).
struct GeodesicKinematics {
  Vector grad;
  Vector v_ambient;  ///< v^i stored at the ambient axis of P_i; 0 at center
  Vector xdot;
  double pv = 0.0;   ///< sum_i P_i v^i
  double vv = 0.0;   ///< |v|^2
  double vl = 0.0;   ///< sum_i v^i lambda_i
  double speed = 0.0;  ///< sqrt(v^T G v)
};

inline GeodesicKinematics geodesic_kinematics(const Vector& grad,
                                              const Vector& lambda, Index c) {
  const Index n = grad.size();
  GeodesicKinematics k;
  k.grad = grad;
  const double pc = grad[c];
  const double s = grad.dot(lambda) / grad.squaredNorm();
  k.v_ambient = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    if (j == c) continue;
    const double vj = (lambda[j] - grad[j] * s) / pc;
    k.v_ambient[j] = vj;
    k.pv += grad[j] * vj;
    k.vv += vj * vj;
    k.vl += vj * lambda[j];
  }
  k.xdot = pc * k.v_ambient;
  k.xdot[c] = -k.pv;
  k.speed = std::sqrt(pc * pc * k.vv + k.pv * k.pv);
  return k;
}

inline Vector theta_part(const Vector& v_ambient, Index c) {
  Vector v(v_ambient.size() - 1);
  for (Index j = 0, i = 0; j < v_ambient.size(); ++j)
    if (j != c) v[i++] = v_ambient[j];
  return v;
}

}  // namespace detail

/// Integrates the Euler-Lagrange system for the energy
/// (1/2) int v^T G v dt subject to x' = sum_i v^i V_i(x):
///
///   lambda_k' = (P0 |v|^2 - v.lambda) dP0/dx_k
///             + (sum_j P_j v^j + lambda_0) sum_j dP_j/dx_k v^j
///   x_center' = -sum_j P_j v^j,   x_j' = P0 v^j
///
/// with v eliminated algebraically at every evaluation. When |P0| becomes
/// small the frame is re-centered on the largest gradient component and
/// the multipliers are re-initialized from the current ambient tangent.
/// Stops when the Euclidean angle about `origin` reaches stop_angle.
template <GradientField F>
CurvePath geodesic_from_state(const F& field, const GeodesicState& init, const Vector& origin,
                              double stop_angle, const CurveOptions& opts = {});

template <GradientField F>
CurvePath geodesic(const F& field, const Vector& x0, const Vector& origin,
                   const Vector& v0, double stop_angle,
                   const CurveOptions& opts = {}, Index center_axis = -1) {
  if ((x0 - origin).norm() == 0.0)
    throw InvalidArgument("geodesic start coincides with the origin");
  const Vector g0 = field.gradient(x0);
  const Frame frame0 =
      build_frame(g0, center_axis >= 0 ? center_axis : best_center(g0), opts.center_eps);
  return geodesic_from_state(field, geodesic_initial_state(frame0, x0, v0), origin, stop_angle,
                             opts);
}

/// Same system from explicit multipliers (any gauge).
template <GradientField F>
CurvePath geodesic_from_state(const F& field, const GeodesicState& init, const Vector& origin,
                              double stop_angle, const CurveOptions& opts) {
  const Index n = init.x.size();
  const Vector& x0 = init.x;
  if ((x0 - origin).norm() == 0.0)
    throw InvalidArgument("geodesic start coincides with the origin");
  if (init.lambda.size() != n) throw DimensionMismatch(n, init.lambda.size());
  Index c = init.center_axis;

  auto rhs = [&](double, const Vector& y) {
    const Vector x = y.head(n);
    const Vector lambda = y.segment(n, n);
    const auto k = detail::geodesic_kinematics(field.gradient(x), lambda, c);
    const double pc = k.grad[c];
    const Vector h_center = hessian_vector(field, x, Vector::Unit(n, c));
    const Vector h_v = hessian_vector(field, x, k.v_ambient);
    Vector out(2 * n + 2);
    out.head(n) = k.xdot;
    out.segment(n, n) = (pc * k.vv - k.vl) * h_center + (k.pv + lambda[c]) * h_v;
    out[2 * n] = k.xdot.norm();
    out[2 * n + 1] = k.speed;
    return out;
  };

  CurvePath path;
  auto record = [&](double t, const Vector& y) {
    const auto k = detail::geodesic_kinematics(field.gradient(y.head(n)),
                                               y.segment(n, n), c);
    path.params.push_back(t);
    path.points.push_back(y.head(n));
    path.tangents.push_back(k.xdot);
    path.euclid_len.push_back(y[2 * n]);
    path.riem_len.push_back(y[2 * n + 1]);
    path.center_axis.push_back(c);
    path.v_history.push_back(detail::theta_part(k.v_ambient, c));
  };

  Vector y0(2 * n + 2);
  y0 << init.x, init.lambda, 0.0, 0.0;
  Dopri5 ode(rhs, 0.0, y0, opts.ode);
  path.center_history.push_back({0.0, c});
  record(0.0, y0);

  auto angle_left = [&](double, const Vector& y) {
    return stop_angle - angle_about(origin, y.head(n), x0);
  };

  bool p0_positive = field.gradient(x0)[c] > 0.0;
  for (;;) {
    ode.step();
    const double h = ode.t() - ode.t_prev();
    if (angle_left(ode.t(), ode.y()) <= 0.0) {
      const double te = ode.locate(angle_left);
      for (int k = 1; k <= opts.dense_per_step; ++k) {
        const double t = ode.t_prev() + h * k / (opts.dense_per_step + 1);
        if (t < te) record(t, ode.dense(t));
      }
      detail::truncate_after(path, te);
      record(te, ode.dense(te));
      path.stop = StopReason::StopAngle;
      return path;
    }
    for (int k = 1; k <= opts.dense_per_step; ++k)
      record(ode.t_prev() + h * k / (opts.dense_per_step + 1),
             ode.dense(ode.t_prev() + h * k / (opts.dense_per_step + 1)));
    record(ode.t(), ode.y());

    if (ode.y()[2 * n] > opts.max_length) {
      path.stop = StopReason::AngleUnreachable;
      path.partial = true;
      return path;
    }

    // Re-center when |P0| is small or has changed sign within the step.
    const Vector grad = field.gradient(ode.y().head(n));
    if (std::abs(grad[c]) < opts.recenter_eps * grad.cwiseAbs().maxCoeff() ||
        (grad[c] > 0.0) != p0_positive) {
      // lambda = ambient tangent is the zero-gauge multiplier for any center.
      Vector y = ode.y();
      y.segment(n, n) = ode.dydt().head(n);
      c = best_center(grad);
      path.center_history.push_back({ode.t(), c});
      ode.reset(ode.t(), y);
      record(ode.t(), y);
    }
    p0_positive = grad[c] > 0.0;
  }
}

// ---------------------------------------------------------------------------
// Transverse flows

/// Piecewise-cubic interpolation of a geodesic's coefficient functions v(t).
/// Knots sharing a center axis form one segment; segments switch at
/// re-centering events.
class CoefficientHistory {
 public:
  CoefficientHistory() = default;

  explicit CoefficientHistory(const CurvePath& geodesic_path) {
    if (geodesic_path.v_history.size() != geodesic_path.size())
      throw InvalidArgument("path carries no coefficient history");
    for (std::size_t i = 0; i < geodesic_path.size(); ++i)
      add(geodesic_path.params[i], geodesic_path.center_axis[i],
          geodesic_path.v_history[i]);
  }

  /// Knots must arrive in non-decreasing t; a center change starts a new
  /// segment (a knot repeated at the switch time is allowed).
  void add(double t, Index center, Vector v) {
    if (segments_.empty() || segments_.back().center != center)
      segments_.push_back({center, {}, {}});
    auto& s = segments_.back();
    if (!s.t.empty() && t <= s.t.back()) {
      if (t == s.t.back()) {
        s.v.back() = std::move(v);
        return;
      }
      throw InvalidArgument("coefficient knots must be increasing");
    }
    s.t.push_back(t);
    s.v.push_back(std::move(v));
  }

  double t_min() const { return segments_.front().t.front(); }
  double t_max() const { return segments_.back().t.back(); }

  /// Times where the center axis changes.
  std::vector<double> breaks() const {
    std::vector<double> b;
    for (std::size_t i = 1; i < segments_.size(); ++i)
      b.push_back(segments_[i].t.front());
    return b;
  }

  std::pair<Index, Vector> at(double t) const {
    std::size_t si = 0;
    while (si + 1 < segments_.size() && t >= segments_[si + 1].t.front()) ++si;
    const auto& s = segments_[si];
    if (s.t.size() == 1) return {s.center, s.v.front()};
    const auto it = std::upper_bound(s.t.begin(), s.t.end(), t);
    std::size_t i = it == s.t.begin() ? 0 : static_cast<std::size_t>(it - s.t.begin()) - 1;
    i = std::min(i, s.t.size() - 2);
    const double t0 = s.t[i], t1 = s.t[i + 1], h = t1 - t0;
    const double u = std::clamp((t - t0) / h, 0.0, 1.0);
    const Vector m0 = slope(s, i), m1 = slope(s, i + 1);
    const double h00 = (1 + 2 * u) * (1 - u) * (1 - u), h10 = u * (1 - u) * (1 - u);
    const double h01 = u * u * (3 - 2 * u), h11 = u * u * (u - 1);
    return {s.center, h00 * s.v[i] + h10 * h * m0 + h01 * s.v[i + 1] + h11 * h * m1};
  }

 private:
  struct Segment {
    Index center;
    std::vector<double> t;
    std::vector<Vector> v;
  };

  // Three-point derivative estimate on a non-uniform grid.
  static Vector slope(const Segment& s, std::size_t i) {
    const std::size_t m = s.t.size();
    if (m == 2) return (s.v[1] - s.v[0]) / (s.t[1] - s.t[0]);
    if (i == 0) return (s.v[1] - s.v[0]) / (s.t[1] - s.t[0]);
    if (i == m - 1) return (s.v[m - 1] - s.v[m - 2]) / (s.t[m - 1] - s.t[m - 2]);
    const double h0 = s.t[i] - s.t[i - 1], h1 = s.t[i + 1] - s.t[i];
    return (h0 * h0 * s.v[i + 1] - h1 * h1 * s.v[i - 1] + (h1 * h1 - h0 * h0) * s.v[i]) /
           (h0 * h1 * (h0 + h1));
  }

  std::vector<Segment> segments_;
};

/// Flow x' = sum_i v^i(t) V_i(x) from an arbitrary start x, reusing a
/// geodesic's coefficient functions. From the geodesic's own start point it
/// retraces that geodesic.
template <GradientField F>
CurvePath transverse_flow(const F& field, const Vector& x,
                          const CoefficientHistory& history, double t_max,
                          const CurveOptions& opts = {}) {
  const Index n = x.size();
  if (t_max < 0.0 || t_max > history.t_max() * (1.0 + 1e-12))
    throw InvalidArgument("t_max outside the coefficient history");

  auto velocity = [&](double t, const Vector& pos, Index* center_out,
                      Vector* v_out) {
    auto [c, v] = history.at(t);
    const Vector grad = field.gradient(pos);
    const double pc = grad[c];
    if (std::abs(pc) < opts.center_eps * grad.cwiseAbs().maxCoeff())
      throw DegenerateCenter("transverse flow reached |P0| ~ 0");
    Vector xdot = Vector::Zero(n);
    for (Index j = 0, i = 0; j < n; ++j) {
      if (j == c) continue;
      xdot[j] = pc * v[i];
      xdot[c] -= grad[j] * v[i];
      ++i;
    }
    if (center_out) *center_out = c;
    if (v_out) *v_out = std::move(v);
    return std::pair{xdot, riemannian_speed(grad, xdot)};
  };
  auto rhs = [&](double t, const Vector& y) {
    auto [xdot, speed] = velocity(t, y.head(n), nullptr, nullptr);
    Vector out(n + 2);
    out.head(n) = xdot;
    out[n] = xdot.norm();
    out[n + 1] = speed;
    return out;
  };

  CurvePath path;
  auto record = [&](double t, const Vector& y) {
    Index c = 0;
    Vector v;
    auto [xdot, speed] = velocity(t, y.head(n), &c, &v);
    path.params.push_back(t);
    path.points.push_back(y.head(n));
    path.tangents.push_back(xdot);
    path.euclid_len.push_back(y[n]);
    path.riem_len.push_back(y[n + 1]);
    path.center_axis.push_back(c);
    path.v_history.push_back(std::move(v));
    if (path.center_history.empty() || path.center_history.back().axis != c)
      path.center_history.push_back({t, c});
  };

  Vector y0(n + 2);
  y0 << x, 0.0, 0.0;
  record(0.0, y0);
  if (t_max == 0.0) {
    path.stop = StopReason::EndOfParameter;
    return path;
  }

  std::vector<double> stops;
  for (double b : history.breaks())
    if (b > 0.0 && b < t_max) stops.push_back(b);
  stops.push_back(t_max);

  Vector y = y0;
  double t = 0.0;
  try {
    for (double seg_end : stops) {
      // Restart at each center switch: v(t) jumps there.
      Dopri5 ode(rhs, t, y, opts.ode);
      while (ode.t() < seg_end) {
        ode.step(seg_end);
        const double h = ode.t() - ode.t_prev();
        for (int k = 1; k <= opts.dense_per_step; ++k) {
          const double tk = ode.t_prev() + h * k / (opts.dense_per_step + 1);
          record(tk, ode.dense(tk));
        }
        record(ode.t(), ode.y());
      }
      t = ode.t();
      y = ode.y();
    }
  } catch (const DegenerateCenter&) {
    if (!opts.partial_on_degenerate) throw;
    path.stop = StopReason::Degenerate;
    path.partial = true;
    return path;
  }
  path.stop = StopReason::EndOfParameter;
  return path;
}

/// Riemannian length by trapezoidal quadrature over the path's knots.
template <GradientField F>
double riemannian_length(const F& field, const CurvePath& path) {
  if (path.size() < 2) throw InvalidArgument("path needs at least two knots");
  double total = 0.0;
  double prev = riemannian_speed(field.gradient(path.points[0]), path.tangents[0]);
  for (std::size_t i = 1; i < path.size(); ++i) {
    const double cur = riemannian_speed(field.gradient(path.points[i]), path.tangents[i]);
    total += 0.5 * (prev + cur) * (path.params[i] - path.params[i - 1]);
    prev = cur;
  }
  return total;
}

}  // namespace dsim
