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

#include <numbers>

#include "dsim/data.hpp"
#include "dsim/pipeline.hpp"
#include "oracles.hpp"

namespace dsim {
namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

SyntheticPotential unit_bowl(Index n) {
  return SyntheticPotential::gaussian(0.5 * Matrix::Identity(n, n));
}

std::vector<Vector> random_directions(int count, Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) out.push_back(rng.normal_vector(n).normalized());
  return out;
}

// --- small helpers ------------------------------------------------------------

TEST(DistinctRows, KeepsFirstOccurrenceInOrder) {
  PointMatrix p(5, 2);
  p << 1, 2, 0, 0, 1, 2, 3, 4, 0, 0;
  PointMatrix want(3, 2);
  want << 1, 2, 0, 0, 3, 4;
  EXPECT_EQ(distinct_rows(p), want);
}

TEST(SingleLinkage, ChainsAndLabelsByFirstAppearance) {
  const std::vector<Vector> pts = {vec({5, 0}), vec({0, 0}), vec({0.9, 0}), vec({1.8, 0}),
                                   vec({5.5, 0})};
  EXPECT_EQ(single_linkage(pts, 1.0), (std::vector<int>{0, 1, 1, 1, 0}));
  EXPECT_EQ(single_linkage(pts, 0.1), (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(MergeRadius, HalfTheMedianNearestDistance) {
  const std::vector<Vector> modes = {vec({0, 0}), vec({0, 0.0001}), vec({1, 0}), vec({4, 0}),
                                     vec({4, 2})};
  // Distinct points (0,0), (1,0), (4,0), (4,2): nearest distances 1, 1, 2, 2.
  EXPECT_DOUBLE_EQ(default_merge_radius(modes), 1.0);
  EXPECT_DOUBLE_EQ(default_merge_radius({vec({1, 1})}), 1e-3);
}

TEST(Rms, HomogeneousAndZero) {
  EXPECT_DOUBLE_EQ(rms({3, 4}), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(rms({6, 8}), 2 * rms({3, 4}));
  EXPECT_EQ(rms({}), 0.0);
}

// --- prototypes ---------------------------------------------------------------

PrototypeConfig whole_data_ascent(Index n) {
  PrototypeConfig cfg;
  cfg.ascent_sample = n;
  cfg.data_sphere = 400;
  cfg.coord_sphere = 100;
  cfg.sample = 200;
  return cfg;
}

TEST(Prototypes, SingleGaussianGivesOne) {
  const Dataset ds(SyntheticPotential::gaussian(Matrix::Identity(3, 3)).sample(2000, 1));
  const PrototypeSearch s = find_prototypes(ds, 8, 2, whole_data_ascent(2000));
  ASSERT_EQ(s.prototypes.size(), 1u);
  EXPECT_EQ(s.prototypes[0].support, 8);
  EXPECT_LT(s.prototypes[0].raw_prototype.norm(), 0.2);
  EXPECT_EQ(s.prototypes[0].data_sphere.member_ids.size(), 400u);
  EXPECT_EQ(s.prototypes[0].coord_sphere.member_ids.size(), 100u);
  ASSERT_EQ(s.prototypes[0].samples.size(), 2u);
  EXPECT_EQ(s.prototypes[0].samples[0].ids.size(), 200u);
  EXPECT_NEAR(coverage(s.prototypes, ds.size()), 0.2, 1e-12);
}

TEST(Prototypes, TwoClusterMixtureGivesTwo) {
  const auto mix = SyntheticPotential::default_mixture(SyntheticPotential::gaussian(Matrix::Identity(3, 3)));
  const Dataset ds(mix.sample(2000, 3));
  PrototypeConfig cfg = whole_data_ascent(2000);
  cfg.merge_radius = 2.0;
  const PrototypeSearch s = find_prototypes(ds, 12, 4, cfg);
  ASSERT_EQ(s.prototypes.size(), 2u);
  EXPECT_EQ(s.prototypes[0].support + s.prototypes[1].support, 12);
  std::set<std::size_t> found;
  for (const auto& p : s.prototypes) {
    const std::size_t c = mix.nearest_component(p.raw_prototype);
    EXPECT_LT((p.raw_prototype - mix.poses()[c].translation).norm(), 0.3);
    found.insert(c);
  }
  EXPECT_EQ(found.size(), 2u);
}

TEST(Prototypes, DeterministicForASeed) {
  const Dataset ds(SyntheticPotential::default_curvilinear(3).sample(1500, 5));
  const PrototypeSearch a = find_prototypes(ds, 6, 9);
  const PrototypeSearch b = find_prototypes(ds, 6, 9);
  ASSERT_EQ(a.prototypes.size(), b.prototypes.size());
  for (std::size_t i = 0; i < a.prototypes.size(); ++i) {
    EXPECT_EQ(a.prototypes[i].raw_prototype, b.prototypes[i].raw_prototype);
    EXPECT_EQ(a.prototypes[i].modified_prototype, b.prototypes[i].modified_prototype);
    EXPECT_EQ(a.prototypes[i].samples[1].ids, b.prototypes[i].samples[1].ids);
  }
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_THROW(find_prototypes(ds, 0, 9), InvalidArgument);
}

// The modified prototype is a stationary point of the estimate on sample 0.
TEST(Prototypes, ModifiedPrototypeIsStationaryOnItsSample) {
  const Dataset ds(SyntheticPotential::default_curvilinear(3).sample(1500, 6));
  const PrototypeSearch s = find_prototypes(ds, 4, 7);
  for (const auto& p : s.prototypes) {
    const KernelContext ctx(1.0, p.samples[0].points);
    const GradientEval g = grad_u(ctx, p.modified_prototype);
    EXPECT_LT(g.du.norm() / g.kernel_sum, 1e-8);
  }
}

// --- principal axis -----------------------------------------------------------

TEST(PrincipalAxis, FollowsTheWidestDirection) {
  // Widest spread along x: |grad U| is smallest there on any sphere.
  const auto pot = SyntheticPotential::gaussian(vec({4.0, 1.0, 1.0}).asDiagonal());
  const Vector origin = Vector::Zero(3);
  const AxisResult fast =
      principal_axis(pot, origin, 1.5, random_directions(16, 3, 1), AxisMode::Fast, 2, 1e-6);
  EXPECT_FALSE(fast.stalled);
  EXPECT_LT(std::acos(std::abs(fast.axis_point.normalized()[0])), 10 * kPi / 180);
  EXPECT_NEAR(fast.axis_point.norm(), 1.5, 1e-9);
  // Radial inward curve: Riemannian length is U(0) - U(x) = r^2 / 16.
  EXPECT_NEAR(fast.length, 1.5 * 1.5 / 16, 1e-4);
  const AxisResult refined =
      principal_axis(pot, origin, 1.5, random_directions(16, 3, 1), AxisMode::Refined, 2, 1e-6);
  EXPECT_LE(refined.length, fast.length + 1e-12);
  EXPECT_EQ(refined.fast_length, fast.length);
  EXPECT_THROW(principal_axis(pot, origin, 0.0, random_directions(2, 3, 1), AxisMode::Fast, 2, 1e-6),
               InvalidArgument);
}

TEST(RhoDistances, BowlClosedForms) {
  const auto pot = unit_bowl(3);
  const AxisResult ax =
      principal_axis(pot, Vector::Zero(3), 2.0, random_directions(4, 3, 3), AxisMode::Fast, 1, 1e-6);
  const RhoDistances d = rho_distances(pot, ax);
  EXPECT_NEAR(d.euclid_in, 2.0, 1e-5);
  EXPECT_NEAR(d.riem_in, oracle::isotropic_rho_length(2.0, 0.5), 1e-5);
  EXPECT_NEAR(d.euclid_out, d.euclid_in, 1e-12);
  EXPECT_NEAR(d.riem_out, 0.5 * (16.0 - 4.0), 1e-4);
  // Outward to radius 2r on a bowl costs three times the inward leg.
  EXPECT_NEAR(d.riem_out, 3 * d.riem_in, 1e-4);
}

// --- frames and geodesic batches ---------------------------------------------

CoordinateFrame bowl_frame(double r) {
  const auto pot = unit_bowl(4);
  CoordinateFrame cf;
  cf.origin = Vector::Zero(4);
  cf.radius = r;
  cf.axis_point = r * vec({0.8, 0.4, 0.4, 0.2}).normalized();
  cf.directions = build_frame_at_axis(pot, cf.axis_point, 5);
  return cf;
}

TEST(Frames, DirectionsAreOrthonormal) {
  const CoordinateFrame cf = bowl_frame(1.0);
  ASSERT_EQ(cf.directions.min_directions.size(), 2u);
  for (int a = 0; a <= 2; ++a)
    for (int b = 0; b <= 2; ++b)
      EXPECT_NEAR(cf.direction(a).dot(cf.direction(b)), a == b ? 1.0 : 0.0, 1e-12);
}

// On a sphere every direction traces a great circle: pi r for both senses.
TEST(Geodesics, BowlPairsAreHalfGreatCircles) {
  const double r = 1.5;
  CoordinateFrame cf = bowl_frame(r);
  geodesic_batch(cf, unit_bowl(4), {2, 0, 1}, kPi / 2);
  ASSERT_EQ(cf.geodesics.size(), 3u);
  for (int id = 0; id < 3; ++id) {
    const GeodesicPair& g = cf.geodesics[static_cast<std::size_t>(id)];
    EXPECT_EQ(g.direction_id, id);
    ASSERT_TRUE(g.complete());
    EXPECT_NEAR(g.total(), kPi * r, 1e-3 * kPi * r);
    for (double len : endpoint_rho_lengths(unit_bowl(4), g, 1e-6))
      EXPECT_NEAR(len, oracle::isotropic_rho_length(r, 0.5), 1e-4);
  }
  EXPECT_THROW(geodesic_batch(cf, unit_bowl(4), {}, kPi / 2), InvalidArgument);
  EXPECT_THROW(geodesic_batch(cf, unit_bowl(4), {0}, 4.0), InvalidArgument);
}

// --- coordinate selection -----------------------------------------------------

TEST(Selection, LeastTotalsWithIdTieBreak) {
  const std::vector<CurveTotal> curves = {{0, true, 0.1}, {1, true, 3.0}, {2, true, 1.0},
                                          {3, true, 2.0}, {4, true, 1.0}, {5, false, 0.0}};
  EXPECT_EQ(select_coordinates(curves, 4), (std::vector<int>{0, 2, 4}));
  EXPECT_EQ(select_coordinates(curves, 5), (std::vector<int>{0, 2, 4, 3}));
  EXPECT_EQ(select_coordinates(curves, 2), (std::vector<int>{0}));
  EXPECT_THROW(select_coordinates(curves, 7), InvalidArgument);
  EXPECT_THROW(select_coordinates(curves, 1), InvalidArgument);
}

// Property: dropping the worst curve never changes the selection.
TEST(Selection, StableUnderRemovingTheWorst) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    std::vector<CurveTotal> curves = {{0, true, rng.uniform()}};
    for (int id = 1; id <= 20; ++id) curves.push_back({id, true, std::floor(10 * rng.uniform())});
    const int k = 2 + static_cast<int>(rng.below(15));
    const auto base = select_coordinates(curves, k);
    auto worst = std::max_element(curves.begin() + 1, curves.end(), [](auto& a, auto& b) {
      return a.total < b.total || (a.total == b.total && a.direction_id < b.direction_id);
    });
    curves.erase(worst);
    EXPECT_EQ(select_coordinates(curves, k), base);
  }
}

TEST(Selection, TwelveCoordinatesIn49Dimensions) {
  std::vector<CurveTotal> curves;
  for (int id = 0; id <= 47; ++id) curves.push_back({id, true, 100.0 - id});
  const auto sel = select_coordinates(curves, 12);
  ASSERT_EQ(sel.size(), 11u);  // rho is implicit: 1 + 1 + 10 coordinates
  EXPECT_EQ(sel[0], 0);
  EXPECT_EQ(sel[1], 47);
  EXPECT_EQ(sel[10], 38);
}

// --- reconstruction -----------------------------------------------------------

TEST(Reconstruction, ZeroOnTheKeptCurveAndOrderedOffIt) {
  const auto pot = SyntheticPotential::gaussian(vec({4.0, 2.0, 1.0}).asDiagonal());
  CoordinateFrame cf;
  cf.origin = Vector::Zero(3);
  cf.radius = 2.0;
  cf.axis_point = 2.0 * vec({1.0, 0.3, 0.2}).normalized();
  cf.directions = build_frame_at_axis(pot, cf.axis_point, 1);
  geodesic_batch(cf, pot, {0, 1}, kPi / 2);
  const GeodesicPair& kept = cf.geodesics[1];
  const GeodesicPair& dropped = cf.geodesics[0];

  PointMatrix on(10, 3);
  for (Index i = 0; i < 10; ++i)
    on.row(i) = kept.positive->points[static_cast<std::size_t>(i) * (kept.positive->size() - 1) / 9].transpose();
  const ReconstructionResult zero = reconstruction_rms(pot, cf, on, kept, dropped, 1e-6);
  EXPECT_GE(zero.used, 8);
  EXPECT_LT(zero.rms, 0.05 * cf.radius);

  // A point pushed along the dropped flow reports that flow's length.
  const CoefficientHistory h(*dropped.positive);
  const CurvePath flow = transverse_flow(pot, cf.axis_point, h, 0.5);
  PointMatrix off(1, 3);
  off.row(0) = flow.end_point().transpose();
  const ReconstructionResult one = reconstruction_rms(pot, cf, off, kept, dropped, 1e-6);
  ASSERT_EQ(one.used, 1);
  EXPECT_EQ(one.rows, std::vector<Index>{0});
  EXPECT_NEAR(one.errors[0], flow.euclid_total(), 0.1 * flow.euclid_total());
}

// --- PCA ----------------------------------------------------------------------

TEST(Pca, RecoversTheDominantAxis) {
  const Dataset ds(SyntheticPotential::gaussian(vec({4.0, 1.0, 1.0, 1.0}).asDiagonal()).sample(20000, 9));
  Sphere all;
  for (Index i = 0; i < ds.size(); ++i) all.member_ids.push_back(i);
  const PcaResult p = pca_baseline(all, ds, 3);
  EXPECT_NEAR(p.eigenvalues[0] / p.eigenvalues[1], 4.0, 0.8);
  EXPECT_GT(std::abs(p.eigenvectors(0, 0)), 0.99);
  EXPECT_GE(p.eigenvalues[1], p.eigenvalues[2]);
  EXPECT_LT((p.eigenvectors.transpose() * p.eigenvectors - Matrix::Identity(3, 3)).norm(), 1e-10);
  EXPECT_THROW(pca_baseline(all, ds, 5), InvalidArgument);
}

TEST(StartDirections, UnitAndSeeded) {
  const Dataset ds(SyntheticPotential::gaussian(Matrix::Identity(3, 3)).sample(500, 10));
  const Sphere s = data_sphere(ds, Vector::Zero(3), 100);
  const auto a = sphere_start_directions(s, ds, 10, 3);
  const auto b = sphere_start_directions(s, ds, 10, 3);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].norm(), 1.0, 1e-14);
    EXPECT_EQ(a[i], b[i]);
  }
}

}  // namespace
}  // namespace dsim
