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
#include <unistd.h>
#include <zlib.h>

#include <filesystem>
#include <numbers>

#include "dsim/data.hpp"
#include "oracles.hpp"

namespace dsim {
namespace {

namespace fs = std::filesystem;

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Images whose pixel (r, c) holds (r * cols + c) mod 256, so every patch
// reveals where it was cut from.
IdxTensor coded_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  IdxTensor t;
  t.magic = kIdxImages;
  t.dims = {count, rows, cols};
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t p = 0; p < rows * cols; ++p)
      t.data.push_back(static_cast<std::uint8_t>((p + 3 * i) % 256));
  return t;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("dsim_test_data_" + std::to_string(::getpid()) + "_" + name);
}

// --- IDX ----------------------------------------------------------------------

TEST(Idx, BigEndianHeaderByHand) {
  const std::vector<std::uint8_t> bytes = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 3,
                                           10, 20, 30, 40, 50, 60};
  const IdxTensor t = parse_idx_bytes(bytes);
  EXPECT_EQ(t.magic, kIdxImages);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{2, 1, 3}));
  EXPECT_EQ(t.count(), 2u);
  EXPECT_EQ(t.item_size(), 3u);
  EXPECT_EQ(t.data.back(), 60);
  EXPECT_EQ(idx_bytes(t), bytes);
}

TEST(Idx, LabelsAndErrors) {
  const IdxTensor l = parse_idx_bytes({0, 0, 8, 1, 0, 0, 0, 2, 7, 9});
  EXPECT_EQ(l.magic, kIdxLabels);
  EXPECT_EQ(l.data, (std::vector<std::uint8_t>{7, 9}));
  EXPECT_THROW(parse_idx_bytes({0, 0, 8}), TruncatedFile);
  EXPECT_THROW(parse_idx_bytes({0, 0, 8, 3, 0, 0, 0, 1}), TruncatedFile);
  EXPECT_THROW(parse_idx_bytes({0, 0, 8, 1, 0, 0, 0, 3, 1, 2}), TruncatedFile);
  try {
    parse_idx_bytes({3, 8, 0, 0, 0, 0, 0, 0});
    FAIL() << "expected BadMagic";
  } catch (const BadMagic&) {
  }
}

TEST(Idx, FileRoundTripPlainAndCompressed) {
  const IdxTensor t = coded_images(4, 9, 11);
  const fs::path plain = temp_file("plain.idx");
  write_idx(plain.string(), t);
  EXPECT_EQ(parse_idx(plain.string()).data, t.data);

  const fs::path packed = temp_file("packed.idx.gz");
  const auto bytes = idx_bytes(t);
  gzFile f = gzopen(packed.string().c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  const IdxTensor back = parse_idx(packed.string());
  EXPECT_EQ(back.dims, t.dims);
  EXPECT_EQ(back.data, t.data);
  fs::remove(plain);
  fs::remove(packed);
  EXPECT_THROW(parse_idx(temp_file("missing").string()), InvalidArgument);
}

#ifdef DSIM_DATA_DIR
TEST(Idx, BundledSubsetHeader) {
  const fs::path p = fs::path(DSIM_DATA_DIR) / "mnist5k-images-idx3-ubyte.gz";
  if (!fs::exists(p)) GTEST_SKIP() << "bundled image subset not present";
  const IdxTensor t = parse_idx(p.string());
  EXPECT_EQ(t.magic, kIdxImages);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{5000, 28, 28}));
}
#endif

// --- patches ------------------------------------------------------------------

TEST(Patches, AreContiguousWindows) {
  const IdxTensor imgs = coded_images(3, 12, 10);
  PatchConfig cfg;
  cfg.seed = 5;
  cfg.scale = 1.0;
  const PointMatrix p = extract_patches(imgs, cfg);
  ASSERT_EQ(p.rows(), 30);
  ASSERT_EQ(p.cols(), 49);
  for (Index r = 0; r < p.rows(); ++r) {
    const int img = static_cast<int>(r / 10);
    const int first = static_cast<int>(p(r, 0)) - 3 * img;  // r0 * cols + c0
    const int r0 = first / 10, c0 = first % 10;
    EXPECT_LE(r0, 12 - 7);
    EXPECT_LE(c0, 10 - 7);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        EXPECT_EQ(p(r, i * 7 + j), ((r0 + i) * 10 + c0 + j + 3 * img) % 256);
  }
}

TEST(Patches, SeededScaledAndLimited) {
  const IdxTensor imgs = coded_images(5, 28, 28);
  PatchConfig cfg;
  cfg.seed = 9;
  const PointMatrix a = extract_patches(imgs, cfg);
  EXPECT_EQ(a, extract_patches(imgs, cfg));
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_LE(a.maxCoeff(), 1.0);
  cfg.seed = 10;
  EXPECT_NE(a, extract_patches(imgs, cfg));
  EXPECT_EQ(extract_patches(imgs, cfg, 2).rows(), 20);

  IdxTensor black = imgs;
  std::fill(black.data.begin(), black.data.end(), 0);
  EXPECT_EQ(extract_patches(black, cfg).cwiseAbs().maxCoeff(), 0.0);
  // Every patch lies in the unit cube, so no two are further apart than 7.
  EXPECT_LE((a.row(0) - a.row(1)).norm(), 7.0);

  cfg.patch_size = 29;
  EXPECT_THROW(extract_patches(imgs, cfg), InvalidArgument);
}

// --- synthetic potentials ---------------------------------------------------

TEST(Curvilinear, InverseRoundTripAndJacobian) {
  const CurvilinearMap t(vec({0, 0.15, 0.1, 0.1}));
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const Vector x = 3 * rng.normal_vector(4);
    EXPECT_LT((t.inverse(t.forward(x)) - x).norm(), 1e-12 * (1 + x.norm()));
    EXPECT_LT((t.forward(t.inverse(x)) - x).norm(), 1e-12 * (1 + x.norm()));
    const Matrix fd = oracle::fd_jacobian([&](const Vector& y) { return t.forward(y); }, x, 1e-5);
    EXPECT_LT((t.jacobian(x) - fd).norm(), 1e-8);
  }
}

TEST(Synthetic, SampleCovarianceMatchesGaussian) {
  Matrix cov(3, 3);
  cov << 2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5;
  const PointMatrix s = SyntheticPotential::gaussian(cov).sample(40000, 2);
  const Matrix est = oracle::covariance(s);
  EXPECT_LT((est - cov).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT(s.colwise().mean().norm(), 0.03);
}

TEST(Synthetic, CurvilinearSamplesStraightenUnderTheMap) {
  const auto pot = SyntheticPotential::default_curvilinear(3);
  const PointMatrix s = pot.sample(40000, 3);
  PointMatrix u(s.rows(), 3);
  for (Index r = 0; r < s.rows(); ++r) u.row(r) = pot.map().forward(s.row(r).transpose()).transpose();
  const Matrix est = oracle::covariance(u);
  const Matrix& cov = pot.covariance();
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(est(i, i), cov(i, i), 0.03 * cov(i, i));
}

// Property: analytic gradient and Hessian agree with differences of U.
TEST(Synthetic, AnalyticDerivativesMatchDifferences) {
  const auto curvy = SyntheticPotential::default_curvilinear(3);
  const std::vector<SyntheticPotential> pots = {
      SyntheticPotential::gaussian(vec({1.0, 2.0, 0.5}).asDiagonal()), curvy,
      SyntheticPotential::default_curvilinear(6), SyntheticPotential::default_mixture(curvy)};
  Rng rng(4);
  for (const auto& pot : pots)
    for (int k = 0; k < 10; ++k) {
      Vector x = rng.normal_vector(pot.dim());
      if (pot.kind() == PotentialKind::Mixture) x += pot.poses()[k % 2].translation;
      const Vector fd =
          oracle::fd_gradient([&](const Vector& y) { return pot.potential(y); }, x, 1e-5);
      EXPECT_LT((pot.gradient(x) - fd).norm(), 1e-7 * (1 + fd.norm()));
      EXPECT_EQ(analytic_grad_u(pot, x), pot.gradient(x));
      const Matrix hf = oracle::fd_jacobian([&](const Vector& y) { return pot.gradient(y); }, x, 1e-5);
      EXPECT_LT((pot.hessian(x) - hf).norm(), 1e-6 * (1 + hf.norm()));
    }
}

TEST(Synthetic, ModeHasZeroPotential) {
  EXPECT_EQ(SyntheticPotential::default_curvilinear(3).potential(Vector::Zero(3)), 0.0);
  EXPECT_EQ(SyntheticPotential::default_curvilinear(3).gradient(Vector::Zero(3)), Vector::Zero(3));
}

TEST(Synthetic, MixtureSamplesSplitByWeight) {
  const auto mix = SyntheticPotential::default_mixture(SyntheticPotential::default_curvilinear(3));
  EXPECT_EQ(mix.weights(), (std::vector<double>{0.5, 0.5}));
  const PointMatrix s = mix.sample(20000, 5);
  int first = 0;
  for (Index r = 0; r < s.rows(); ++r) first += mix.nearest_component(s.row(r).transpose()) == 0;
  EXPECT_NEAR(first / 20000.0, 0.5, 0.02);
  EXPECT_THROW(SyntheticPotential::mixture(mix, {}, {}), InvalidArgument);
  EXPECT_THROW(SyntheticPotential::mixture(mix, mix.poses(), {1.0, 0.0}), InvalidArgument);
}

// Near its own center each cluster's drift ignores the other cluster.
TEST(Synthetic, MixtureComponentsDecouple) {
  const auto mix = SyntheticPotential::default_mixture(SyntheticPotential::default_curvilinear(3));
  Rng rng(6);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto single = mix.component(i);
    for (int k = 0; k < 50; ++k) {
      const Vector x = mix.poses()[i].translation +
                       mix.poses()[i].rotation * (rng.uniform() * rng.normal_vector(3).normalized());
      EXPECT_GT(oracle::cosine(mix.gradient(x), single.gradient(x)), 0.99);
      EXPECT_LT((mix.gradient(x) - single.gradient(x)).norm(), 1e-9);
    }
  }
}

TEST(Stationarity, ResidualIsSmallForEveryKind) {
  const auto curvy = SyntheticPotential::default_curvilinear(3);
  const auto mix = SyntheticPotential::default_mixture(curvy);
  const auto gauss = SyntheticPotential::gaussian(vec({1.0, 2.0, 4.0}).asDiagonal());
  const Vector hw = vec({3, 3, 3});
  EXPECT_LT(verify_stationarity(gauss, grid_points(Vector::Zero(3), hw, 7), 1e-3), 1e-5);
  EXPECT_LT(verify_stationarity(curvy, grid_points(Vector::Zero(3), hw, 7), 1e-3), 1e-5);
  EXPECT_LT(verify_stationarity(mix, grid_points(mix.poses()[1].translation, hw, 7), 1e-3), 1e-5);
}

TEST(Stationarity, ResidualShrinksWithTheStep) {
  const auto pot = SyntheticPotential::default_curvilinear(3);
  const auto grid = grid_points(Vector::Zero(3), vec({3, 3, 3}), 5);
  EXPECT_GT(verify_stationarity(pot, grid, 0.3), 10 * verify_stationarity(pot, grid, 1e-3));
}

TEST(Grid, CountsAndCorners) {
  const auto g = grid_points(vec({1, -1}), vec({2, 0.5}), 3);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), vec({-1, -1.5}));
  EXPECT_EQ(g.back(), vec({3, -0.5}));
  EXPECT_EQ(grid_points(vec({1, 2}), vec({1, 1}), 1).front(), vec({1, 2}));
}

}  // namespace
}  // namespace dsim
