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

#include "dsim/errors.hpp"
#include "dsim/types.hpp"

namespace dsim {

struct OdeOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double initial_step = 0.0;  ///< 0 picks a step from the derivative scale
  double max_step = std::numeric_limits<double>::infinity();
  double min_step = 1e-12;
  double event_tol = 1e-9;    ///< bisection tolerance in t
  long max_steps = 200000;
};

/// Dormand-Prince 5(4) with the standard fourth-order continuous extension.
/// Steps are taken one at a time so callers can inspect (and restart) the
/// state between accepted steps.
class Dopri5 {
 public:
  using Rhs = std::function<Vector(double, const Vector&)>;

  Dopri5(Rhs rhs, double t0, Vector y0, OdeOptions opts = {})
      : rhs_(std::move(rhs)), opts_(opts) {
    reset(t0, std::move(y0));
  }

  /// Restart from (t, y); the previous step's dense output is discarded.
  void reset(double t, Vector y) {
    t_ = t_prev_ = t;
    y_ = y_prev_ = std::move(y);
    k1_ = rhs_(t_, y_);
    if (h_ <= 0.0) h_ = opts_.initial_step > 0.0 ? opts_.initial_step : guess_step();
    h_ = std::min(h_, opts_.max_step);
    has_dense_ = false;
  }

  double t() const { return t_; }
  double t_prev() const { return t_prev_; }
  const Vector& y() const { return y_; }
  const Vector& y_prev() const { return y_prev_; }
  /// Derivative at the current point (first stage of the next step).
  const Vector& dydt() const { return k1_; }
  double next_step() const { return h_; }
  long steps() const { return steps_; }

  /// Take one accepted step, no further than t_limit.
  void step(double t_limit = std::numeric_limits<double>::infinity()) {
    if (++steps_ > opts_.max_steps)
      throw StepCollapse("step budget exhausted");
    double h = std::min(h_, opts_.max_step);
    bool clipped = false;
    if (t_ + h >= t_limit) {
      h = t_limit - t_;
      clipped = true;
    }
    for (;;) {
      if (!(h >= opts_.min_step) && !clipped)
        throw StepCollapse("adaptive step fell below " +
                           std::to_string(opts_.min_step));
      Vector y_new, err;
      attempt(h, y_new, err);
      double sum = 0.0;
      for (Index i = 0; i < y_.size(); ++i) {
        const double scale =
            opts_.atol + opts_.rtol * std::max(std::abs(y_[i]), std::abs(y_new[i]));
        sum += (err[i] / scale) * (err[i] / scale);
      }
      const double e = std::sqrt(sum / static_cast<double>(y_.size()));
      if (std::isfinite(e) && e <= 1.0) {
        const double fac =
            e == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(e, -0.2), 0.2, 5.0);
        accept(h, std::move(y_new));
        if (!clipped || fac < 1.0) h_ = std::min(h * fac, opts_.max_step);
        return;
      }
      const double fac =
          std::isfinite(e) ? std::clamp(0.9 * std::pow(e, -0.2), 0.1, 0.9) : 0.25;
      h *= fac;
      clipped = false;
    }
  }

  /// State at t within the last accepted step.
  Vector dense(double t) const {
    if (!has_dense_) return y_;
    const double h = t_ - t_prev_;
    const double s = (t - t_prev_) / h;
    const double s1 = 1.0 - s;
    return r1_ + s * (r2_ + s1 * (r3_ + s * (r4_ + s1 * r5_)));
  }

  /// First t in (t_prev, t] where phi(t, y(t)) changes sign from its value
  /// at t_prev, located by bisection on the dense output.
  template <typename Phi>
  double locate(Phi&& phi) const {
    double lo = t_prev_, hi = t_;
    const double f_lo = phi(lo, y_prev_);
    const bool lo_positive = f_lo > 0.0;
    while (hi - lo > opts_.event_tol * std::max(1.0, std::abs(hi))) {
      const double mid = 0.5 * (lo + hi);
      if ((phi(mid, dense(mid)) > 0.0) == lo_positive)
        lo = mid;
      else
        hi = mid;
    }
    return hi;
  }

 private:
  double guess_step() const {
    const double d0 = y_.norm() / std::sqrt(static_cast<double>(y_.size()));
    const double d1 = k1_.norm() / std::sqrt(static_cast<double>(y_.size()));
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * (d0 / d1);
    return std::max(h, 1e-8);
  }

  void attempt(double h, Vector& y_new, Vector& err) {
    const Vector& y = y_;
    const double t = t_;
    k2_ = rhs_(t + h / 5.0, y + h * (k1_ / 5.0));
    k3_ = rhs_(t + 3.0 * h / 10.0, y + h * (3.0 / 40.0 * k1_ + 9.0 / 40.0 * k2_));
    k4_ = rhs_(t + 4.0 * h / 5.0,
               y + h * (44.0 / 45.0 * k1_ - 56.0 / 15.0 * k2_ + 32.0 / 9.0 * k3_));
    k5_ = rhs_(t + 8.0 * h / 9.0,
               y + h * (19372.0 / 6561.0 * k1_ - 25360.0 / 2187.0 * k2_ +
                        64448.0 / 6561.0 * k3_ - 212.0 / 729.0 * k4_));
    k6_ = rhs_(t + h, y + h * (9017.0 / 3168.0 * k1_ - 355.0 / 33.0 * k2_ +
                               46732.0 / 5247.0 * k3_ + 49.0 / 176.0 * k4_ -
                               5103.0 / 18656.0 * k5_));
    y_new = y + h * (35.0 / 384.0 * k1_ + 500.0 / 1113.0 * k3_ +
                     125.0 / 192.0 * k4_ - 2187.0 / 6784.0 * k5_ +
                     11.0 / 84.0 * k6_);
    k7_ = rhs_(t + h, y_new);
    err = h * (71.0 / 57600.0 * k1_ - 71.0 / 16695.0 * k3_ + 71.0 / 1920.0 * k4_ -
               17253.0 / 339200.0 * k5_ + 22.0 / 525.0 * k6_ - 1.0 / 40.0 * k7_);
  }

  void accept(double h, Vector y_new) {
    r1_ = y_;
    r2_ = y_new - y_;
    r3_ = h * k1_ - r2_;
    r4_ = r2_ - h * k7_ - r3_;
    r5_ = h * (-12715105075.0 / 11282082432.0 * k1_ +
               87487479700.0 / 32700410799.0 * k3_ -
               10690763975.0 / 1880347072.0 * k4_ +
               701980252875.0 / 199316789632.0 * k5_ -
               1453857185.0 / 822651844.0 * k6_ + 69997945.0 / 29380423.0 * k7_);
    t_prev_ = t_;
    y_prev_ = y_;
    t_ += h;
    y_ = std::move(y_new);
    k1_ = k7_;
    has_dense_ = true;
  }

  Rhs rhs_;
  OdeOptions opts_;
  double t_ = 0.0, t_prev_ = 0.0, h_ = 0.0;
  Vector y_, y_prev_;
  Vector k1_, k2_, k3_, k4_, k5_, k6_, k7_;
  Vector r1_, r2_, r3_, r4_, r5_;
  bool has_dense_ = false;
  long steps_ = 0;
};

}  // namespace dsim
