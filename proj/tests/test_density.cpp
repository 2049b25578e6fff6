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

#include <gtest/gtest.h>

#include <cmath>

#include "dsim/data.hpp"
#include "dsim/density.hpp"
#include "dsim/summation.hpp"
#include "oracles.hpp"

namespace dsim {
namespace {

PointMatrix uniform_points(Index count, Index dim, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  PointMatrix p(count, dim);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < dim; ++c) p(r, c) = lo + (hi - lo) * rng.uniform();
  return p;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

TEST(KernelWeights, SamplePointHasUnitWeight) {
  const PointMatrix s = uniform_points(5, 3, 1, 0, 1);
  const KernelContext ctx(2.0, s);
  EXPECT_DOUBLE_EQ(kernel_weights(ctx, s.row(2).transpose())[2], 1.0);
}

TEST(KernelWeights, ScalarValues) {
  PointMatrix s(1, 2);
  s << 1, 0;
  EXPECT_NEAR(kernel_weights(KernelContext(1.0, s), Vector::Zero(2))[0], 0.367879441171442, 1e-15);
  s << 2, 0;
  EXPECT_NEAR(kernel_weights(KernelContext(0.125, s), Vector::Zero(2))[0], 0.606530659712633, 1e-15);
}

TEST(KernelWeights, AllInUnitInterval) {
  const KernelContext ctx(1.5, uniform_points(50, 4, 2, -1, 1));
  const Vector w = kernel_weights(ctx, vec({0.3, -0.2, 0.1, 0.9}));
  EXPECT_TRUE((w.array() > 0).all() && (w.array() <= 1).all());
}

TEST(KernelWeights, DimensionMismatch) {
  const KernelContext ctx(1.0, uniform_points(5, 3, 1, 0, 1));
  EXPECT_THROW(kernel_weights(ctx, Vector::Zero(2)), DimensionMismatch);
}

TEST(KernelContext, RejectsBadInput) {
  EXPECT_THROW(KernelContext(0.0, uniform_points(3, 2, 1, 0, 1)), InvalidArgument);
  EXPECT_THROW(KernelContext(1.0, PointMatrix(0, 2)), InvalidArgument);
}

TEST(GradU, SingleSample) {
  PointMatrix s(1, 3);
  s << 0.5, -1, 2;
  const KernelContext ctx(0.7, s);
  const Vector x = vec({0.1, 0.2, 0.3});
  const double k = std::exp(-0.7 * (s.row(0).transpose() - x).squaredNorm());
  const GradientEval g = grad_u(ctx, x);
  EXPECT_TRUE(g.du.isApprox(k * (s.row(0).transpose() - x), 1e-14));
  EXPECT_NEAR(g.kernel_sum, k, 1e-16);
  EXPECT_FALSE(g.jacobian.has_value());
}

TEST(GradU, SymmetricPairCancels) {
  PointMatrix s(2, 2);
  s << 1.5, -0.5, -1.5, 0.5;
  EXPECT_LT(grad_u(KernelContext(1.0, s), Vector::Zero(2)).du.norm(), 1e-16);
}

TEST(GradU, TwoUnitSamples) {
  PointMatrix s(2, 2);
  s << 1, 0, 0, 1;
  const Vector du = grad_u(KernelContext(1.0, s), Vector::Zero(2)).du;
  EXPECT_NEAR(du[0], std::exp(-1.0), 1e-15);
  EXPECT_NEAR(du[1], std::exp(-1.0), 1e-15);
}

TEST(GradLogDensity, SingleSampleIsExact) {
  PointMatrix s(1, 2);
  s << 0.25, 0.75;
  const Vector x = vec({1.0, -1.0});
  const Vector g = grad_log_density(KernelContext(0.5, s), x);
  EXPECT_TRUE(g.isApprox(2 * 0.5 * (s.row(0).transpose() - x), 1e-14));
}

TEST(GradLogDensity, ZeroAtCenterOfSymmetricSample) {
  PointMatrix s(4, 2);
  s << 1, 1, -1, -1, 1, -1, -1, 1;
  EXPECT_LT(grad_log_density(KernelContext(0.3, s), Vector::Zero(2)).norm(), 1e-16);
}

TEST(GradLogDensity, MatchesFiniteDifferencesOfLogDensity) {
  const PointMatrix s = uniform_points(200, 4, 3, 0, 1);
  const KernelContext ctx(3.0, s);
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    Vector x(4);
    for (Index i = 0; i < 4; ++i) x[i] = rng.uniform();
    const Vector fd = oracle::fd_gradient(
        [&](const Vector& y) { return oracle::log_kde(s, 3.0, y); }, x, 1e-5);
    const Vector g = grad_log_density(ctx, x);
    EXPECT_LT((g - fd).norm(), 1e-5 * fd.norm()) << "point " << t;
  }
}

TEST(GradLogDensity, IsTwoBetaDuOverKernelSum) {
  const KernelContext ctx(1.3, uniform_points(300, 5, 5, -1, 1));
  const Vector x = Vector::Constant(5, 0.1);
  const GradientEval g = grad_u(ctx, x);
  EXPECT_EQ(grad_log_density(ctx, x), ((2.0 * 1.3 / g.kernel_sum) * g.du).eval());
}

TEST(GradLogDensity, UnderflowFarFromSample) {
  const KernelContext ctx(1.0, uniform_points(10, 2, 6, 0, 1));
  EXPECT_THROW(grad_log_density(ctx, Vector::Constant(2, 30.0)), UnderflowError);
  EXPECT_THROW(mean_shift_step(ctx, Vector::Constant(2, 30.0)), UnderflowError);
}

TEST(Jacobian, NegativeIdentityAtSingleSample) {
  PointMatrix s(1, 3);
  s << 0.2, 0.4, 0.6;
  const Matrix j = grad_u_jacobian(KernelContext(2.0, s), s.row(0).transpose());
  EXPECT_TRUE(j.isApprox(-Matrix::Identity(3, 3), 1e-15));
}

TEST(Jacobian, SymmetricToMachinePrecision) {
  const KernelContext ctx(0.9, uniform_points(100, 6, 7, 0, 1));
  const Matrix j = grad_u_jacobian(ctx, Vector::Constant(6, 0.4));
  EXPECT_EQ(j, j.transpose());
}

// Property: the analytic Jacobian agrees with central differences of du at
// randomized points inside the sample's bounding box.
TEST(Jacobian, MatchesFiniteDifferencesProperty) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const PointMatrix s = uniform_points(80, 4, seed, 0, 1);
    const KernelContext ctx(2.5, s);
    Rng rng(seed + 100);
    Vector x(4);
    for (Index i = 0; i < 4; ++i) x[i] = rng.uniform();
    const Matrix fd =
        oracle::fd_jacobian([&](const Vector& y) { return grad_u(ctx, y).du; }, x, 1e-5);
    const Matrix a = grad_u_jacobian(ctx, x);
    for (Index r = 0; r < 4; ++r)
      for (Index c = 0; c < 4; ++c)
        EXPECT_LE(std::abs(a(r, c) - fd(c, r)), 1e-5 * (1 + std::abs(a(r, c))))
            << "seed " << seed << " entry " << r << "," << c;
  }
}

TEST(MeanShift, EquidistantSamplesGiveArithmeticMean) {
  PointMatrix s(3, 2);
  s << 1, 0, -0.5, std::sqrt(3.0) / 2, -0.5, -std::sqrt(3.0) / 2;
  const Vector m = mean_shift_step(KernelContext(1.0, s), Vector::Zero(2));
  EXPECT_LT(m.norm(), 1e-15);
}

TEST(MeanShift, SingleSampleJumpsToIt) {
  PointMatrix s(1, 2);
  s << 3, 4;
  EXPECT_TRUE(mean_shift_step(KernelContext(0.1, s), Vector::Zero(2)).isApprox(s.row(0).transpose(), 1e-14));
}

TEST(MeanShift, DensityNonDecreasingAlongIterates) {
  const PointMatrix s = uniform_points(400, 3, 8, 0, 1);
  const KernelContext ctx(6.0, s);
  Vector x = Vector::Constant(3, 0.05);
  double prev = log_kernel_sum(ctx, x);
  for (int it = 0; it < 60; ++it) {
    x = mean_shift_step(ctx, x);
    const double cur = log_kernel_sum(ctx, x);
    EXPECT_GE(cur, prev - 1e-12) << "iteration " << it;
    prev = cur;
  }
}

TEST(MeanShift, FixedPointIsStationary) {
  const PointMatrix s = uniform_points(300, 2, 9, 0, 1);
  const KernelContext ctx(5.0, s);
  const AscentResult r = gradient_ascent(ctx, Vector::Constant(2, 0.5), {1e-12, 20000, 1});
  const GradientEval g = grad_u(ctx, r.mode);
  EXPECT_LT(g.du.norm() / g.kernel_sum, 1e-10);
}

TEST(GradientAscent, GaussianSampleConvergesNearMean) {
  const auto pot = SyntheticPotential::gaussian(Matrix::Identity(3, 3));
  const PointMatrix s = pot.sample(4000, 11);
  const KernelContext ctx(0.125, s);
  const Vector mean = s.colwise().mean().transpose();
  const AscentResult r = gradient_ascent(ctx, s.row(0).transpose());
  // Sampling scale of the mean is sigma / sqrt(N) ~ 0.016.
  EXPECT_LT((r.mode - mean).norm(), 3.0 / std::sqrt(4000.0));
}

TEST(GradientAscent, FixedPointReturnsAfterOneIteration) {
  const KernelContext ctx(1.0, uniform_points(100, 2, 12, 0, 1));
  const AscentResult first = gradient_ascent(ctx, Vector::Constant(2, 0.5), {1e-13, 20000, 1});
  const AscentResult again = gradient_ascent(ctx, first.mode, {1e-6, 500, 1});
  EXPECT_EQ(again.iterations, 1);
  EXPECT_LT((again.mode - first.mode).norm(), 1e-6);
}

TEST(GradientAscent, NonConvergenceCarriesLastIterate) {
  const KernelContext ctx(1.0, uniform_points(100, 2, 13, 0, 1));
  try {
    gradient_ascent(ctx, Vector::Constant(2, 5.0), {1e-15, 2, 1});
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_EQ(e.iterations, 2);
    EXPECT_EQ(e.last.size(), 2);
  }
  EXPECT_THROW(gradient_ascent(ctx, Vector::Zero(2), {0.0, 10, 1}), InvalidArgument);
}

TEST(GradientAscent, MixtureStartStaysInItsCluster) {
  const auto mix = SyntheticPotential::default_mixture(SyntheticPotential::default_curvilinear());
  const PointMatrix s = mix.sample(3000, 14);
  const KernelContext ctx(1.0, s);
  Vector x0 = mix.poses()[0].translation + Vector::Constant(3, 1.0);
  const AscentResult r = gradient_ascent(ctx, x0);
  EXPECT_EQ(mix.nearest_component(r.mode), 0u);
  EXPECT_LT((r.mode - mix.poses()[0].translation).norm(), 9.0);  // 3 sigma of the widest axis
}

TEST(GradientAscent, ResamplingWithWholePoolMatchesFixedSample) {
  const PointMatrix s = uniform_points(200, 2, 15, 0, 1);
  std::vector<Index> all(200);
  for (Index i = 0; i < 200; ++i) all[i] = i;
  const AscentResult fixed = gradient_ascent(KernelContext(4.0, s), Vector::Constant(2, 0.2));
  const AscentResult re = gradient_ascent(s, [&](const Vector&) { return all; }, 4.0,
                                          Vector::Constant(2, 0.2));
  EXPECT_LT((fixed.mode - re.mode).norm(), 1e-5);
}

TEST(GradientAscent, ResamplingNearestEndsStationaryOnFinalSample) {
  const PointMatrix s = uniform_points(500, 2, 16, 0, 1);
  std::vector<Index> last;
  auto fetch = [&](const Vector& x) {
    std::vector<std::pair<double, Index>> d;
    for (Index i = 0; i < s.rows(); ++i) d.push_back({(s.row(i).transpose() - x).squaredNorm(), i});
    std::sort(d.begin(), d.end());
    std::vector<Index> ids;
    for (int i = 0; i < 60; ++i) ids.push_back(d[i].second);
    last = ids;
    return ids;
  };
  const AscentResult r = gradient_ascent(s, fetch, 8.0, Vector::Constant(2, 0.3), {1e-10, 5000, 5000});
  PointMatrix sub(60, 2);
  std::sort(last.begin(), last.end());
  for (int i = 0; i < 60; ++i) sub.row(i) = s.row(last[i]);
  const GradientEval g = grad_u(KernelContext(8.0, sub), r.mode);
  EXPECT_LT(g.du.norm() / g.kernel_sum, 1e-8);
}

TEST(KernelField, GradientIsHalfTheLogDensityGradient) {
  const KernelContext ctx(2.0, uniform_points(150, 3, 17, 0, 1));
  const KernelField f(ctx);
  const Vector x = vec({0.2, 0.5, 0.7});
  EXPECT_TRUE(f.gradient(x).isApprox(0.5 * grad_log_density(ctx, x), 1e-14));
  const Vector fd = oracle::fd_gradient([&](const Vector& y) { return f.potential(y); }, x, 1e-5);
  EXPECT_LT((fd - f.gradient(x)).norm(), 1e-7 * (1 + fd.norm()));
}

TEST(KernelField, HessianMatchesFiniteDifferencesAndProducts) {
  const KernelField f(KernelContext(3.0, uniform_points(120, 4, 18, 0, 1)));
  const Vector x = Vector::Constant(4, 0.45);
  const Matrix h = f.hessian(x);
  const Matrix fd = oracle::fd_jacobian([&](const Vector& y) { return f.gradient(y); }, x, 1e-5);
  EXPECT_LT((h - fd).norm(), 1e-6 * (1 + h.norm()));
  const Vector u = vec({0.3, -1.0, 0.25, 2.0});
  EXPECT_LT((f.hessian_vector(x, u) - h * u).norm(), 1e-12 * (1 + (h * u).norm()));
}

// Estimated vs analytic drift within one sigma of a Gaussian mode. Single
// points near the mode are dominated by sampling noise, so the check is on
// averages over many evaluation points.
TEST(Estimator, AgreesWithAnalyticGradientNearMode) {
  const auto pot = SyntheticPotential::gaussian(Matrix::Identity(3, 3));
  const PointMatrix s = pot.sample(10000, 19);
  const double h = 0.35;
  const KernelContext ctx(1.0 / (2 * h * h), s);
  Rng rng(20);
  double cos_sum = 0, mag_sum = 0;
  const int count = 200;
  for (int t = 0; t < count; ++t) {
    const Vector x = (0.3 + 0.7 * rng.uniform()) * rng.normal_vector(3).normalized();
    const Vector est = grad_log_density(ctx, x);
    const Vector exact = 2.0 * analytic_grad_u(pot, x);
    cos_sum += oracle::cosine(est, exact);
    mag_sum += std::abs(est.norm() - exact.norm()) / exact.norm();
  }
  EXPECT_GT(cos_sum / count, 0.95);
  EXPECT_LT(mag_sum / count, 0.25);
}

TEST(Summation, PairwiseMatchesLongDouble) {
  std::vector<double> xs;
  Rng rng(21);
  long double ref = 0;
  for (int i = 0; i < 10000; ++i) {
    xs.push_back(rng.uniform() * std::pow(10.0, static_cast<int>(rng.below(8)) - 4));
    ref += xs.back();
  }
  EXPECT_NEAR(pairwise_sum(xs), static_cast<double>(ref), 1e-13 * static_cast<double>(ref));
}

TEST(GradLogDensity, InvariantToSampleOrder) {
  PointMatrix s = uniform_points(257, 3, 22, 0, 1);
  const Vector x = Vector::Constant(3, 0.5);
  const Vector a = grad_log_density(KernelContext(2.0, s), x);
  PointMatrix r = s.colwise().reverse();
  const Vector b = grad_log_density(KernelContext(2.0, r), x);
  EXPECT_LT((a - b).norm(), 1e-13 * a.norm());
}

}  // namespace
}  // namespace dsim
