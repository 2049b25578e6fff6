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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <zlib.h>

#include "dsim/errors.hpp"
#include "dsim/types.hpp"

namespace dsim {

// ---------------------------------------------------------------------------
// IDX files

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

/// Unsigned-byte IDX tensor (images: count x rows x cols; labels: count).
struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t item_size() const {
    std::size_t s = 1;
    for (std::size_t i = 1; i < dims.size(); ++i) s *= dims[i];
    return s;
  }
};

inline IdxTensor parse_idx_bytes(const std::vector<std::uint8_t>& bytes) {
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
           (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
  };
  if (bytes.size() < 4) throw TruncatedFile("IDX header is incomplete");
  IdxTensor t;
  t.magic = be32(0);
  std::size_t rank;
  if (t.magic == kIdxImages)
    rank = 3;
  else if (t.magic == kIdxLabels)
    rank = 1;
  else
    throw BadMagic(t.magic);
  if (bytes.size() < 4 + 4 * rank) throw TruncatedFile("IDX dimensions are incomplete");
  std::size_t total = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(be32(4 + 4 * i));
    total *= t.dims.back();
  }
  const std::size_t offset = 4 + 4 * rank;
  if (bytes.size() - offset < total)
    throw TruncatedFile("IDX payload has " + std::to_string(bytes.size() - offset) +
                        " bytes, expected " + std::to_string(total));
  t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                bytes.begin() + static_cast<std::ptrdiff_t>(offset + total));
  return t;
}

/// Reads an IDX file, gzip-compressed or not.
inline IdxTensor parse_idx(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw InvalidArgument("cannot open " + path);
  std::vector<std::uint8_t> bytes;
  std::uint8_t buf[1 << 16];
  int got;
  while ((got = gzread(f, buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw TruncatedFile("corrupt compressed stream in " + path);
  return parse_idx_bytes(bytes);
}

inline std::vector<std::uint8_t> idx_bytes(const IdxTensor& t) {
  std::vector<std::uint8_t> out;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  put(t.magic);
  for (auto d : t.dims) put(d);
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

inline void write_idx(const std::string& path, const IdxTensor& t) {
  const auto bytes = idx_bytes(t);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw InvalidArgument("cannot write " + path);
  const std::size_t put = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (put != bytes.size()) throw InvalidArgument("short write to " + path);
}

// ---------------------------------------------------------------------------
// Patches

struct PatchConfig {
  int patch_size = 7;
  int scans_per_image = 10;
  double scale = 1.0 / 255.0;
  std::uint64_t seed = 0;
};

/// scans_per_image patches per image at uniform random offsets, scaled and
/// flattened row-major. Images are visited in order from one seeded stream.
inline PointMatrix extract_patches(const IdxTensor& images, const PatchConfig& cfg,
                                   std::size_t max_images = 0) {
  if (images.magic != kIdxImages || images.count() == 0)
    throw InvalidArgument("patch extraction needs a nonempty image tensor");
  const int rows = static_cast<int>(images.dims[1]);
  const int cols = static_cast<int>(images.dims[2]);
  const int p = cfg.patch_size;
  if (p < 1 || p > rows || p > cols) throw InvalidArgument("patch does not fit the image");
  if (cfg.scans_per_image < 1) throw InvalidArgument("scans_per_image must be positive");
  const std::size_t count =
      max_images > 0 ? std::min(max_images, images.count()) : images.count();
  PointMatrix out(static_cast<Index>(count * cfg.scans_per_image), p * p);
  Rng rng(cfg.seed);
  Index row = 0;
  for (std::size_t img = 0; img < count; ++img) {
    const std::uint8_t* base = images.data.data() + img * images.item_size();
    for (int s = 0; s < cfg.scans_per_image; ++s, ++row) {
      const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(rows - p + 1)));
      const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(cols - p + 1)));
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c)
          out(row, r * p + c) = base[(r0 + r) * cols + (c0 + c)] * cfg.scale;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic potentials

/// Triangular polynomial map with unit Jacobian determinant:
///   u_0 = x_0,  u_1 = x_1 - c_1 x_0^2,  u_k = x_k - c_k x_{k-2} x_{k-1}.
/// With all c_k = 0 it is the identity.
class CurvilinearMap {
 public:
  CurvilinearMap() = default;
  explicit CurvilinearMap(Vector coeffs) : c_(std::move(coeffs)) {}

  Index dim() const { return c_.size(); }
  const Vector& coeffs() const { return c_; }

  Vector forward(const Vector& x) const {
    Vector u = x;
    if (dim() > 1) u[1] -= c_[1] * x[0] * x[0];
    for (Index k = 2; k < dim(); ++k) u[k] -= c_[k] * x[k - 2] * x[k - 1];
    return u;
  }

  Vector inverse(const Vector& u) const {
    Vector x = u;
    if (dim() > 1) x[1] += c_[1] * x[0] * x[0];
    for (Index k = 2; k < dim(); ++k) x[k] += c_[k] * x[k - 2] * x[k - 1];
    return x;
  }

  /// J(i, j) = du_i / dx_j; lower triangular with a unit diagonal.
  Matrix jacobian(const Vector& x) const {
    Matrix j = Matrix::Identity(dim(), dim());
    if (dim() > 1) j(1, 0) = -2.0 * c_[1] * x[0];
    for (Index k = 2; k < dim(); ++k) {
      j(k, k - 2) = -c_[k] * x[k - 1];
      j(k, k - 1) = -c_[k] * x[k - 2];
    }
    return j;
  }

  /// sum_k w_k d^2 u_k / dx dx^T (constant second derivatives).
  Matrix weighted_second(const Vector& w) const {
    Matrix h = Matrix::Zero(dim(), dim());
    if (dim() > 1) h(0, 0) += -2.0 * c_[1] * w[1];
    for (Index k = 2; k < dim(); ++k) {
      h(k - 2, k - 1) += -c_[k] * w[k];
      h(k - 1, k - 2) += -c_[k] * w[k];
    }
    return h;
  }

 private:
  Vector c_;
};

enum class PotentialKind { Gaussian, Curvilinear, Mixture };

/// Rigid placement x = R y + t of a base potential.
struct Pose {
  Matrix rotation;
  Vector translation;
};

inline Matrix rotation_about_axis(Index n, Index a, Index b, double angle) {
  Matrix r = Matrix::Identity(n, n);
  r(a, a) = std::cos(angle);
  r(a, b) = -std::sin(angle);
  r(b, a) = std::sin(angle);
  r(b, b) = std::cos(angle);
  return r;
}

/// Stationary density p = exp(2U) with 2U = -1/2 T(x)^T Sigma^{-1} T(x) for a
/// single component, or the log of a weighted sum of such terms over rigidly
/// placed copies for a mixture.
class SyntheticPotential {
 public:
  static SyntheticPotential gaussian(const Matrix& cov) {
    return SyntheticPotential(PotentialKind::Gaussian, cov,
                              CurvilinearMap(Vector::Zero(cov.rows())), {}, {});
  }

  static SyntheticPotential curvilinear(const Matrix& cov, const Vector& coeffs) {
    if (coeffs.size() != cov.rows()) throw DimensionMismatch(cov.rows(), coeffs.size());
    return SyntheticPotential(PotentialKind::Curvilinear, cov, CurvilinearMap(coeffs),
                              {}, {});
  }

  static SyntheticPotential mixture(const SyntheticPotential& base,
                                    std::vector<Pose> poses, std::vector<double> weights) {
    if (poses.empty() || poses.size() != weights.size())
      throw InvalidArgument("mixture needs one weight per pose");
    double total = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw InvalidArgument("mixture weights must be positive");
      total += w;
    }
    for (double& w : weights) w /= total;
    return SyntheticPotential(PotentialKind::Mixture, base.cov_, base.map_,
                              std::move(poses), std::move(weights));
  }

  /// Default 3D curvilinear potential used by the examples and tests.
  static SyntheticPotential default_curvilinear(Index n = 3) {
    Vector var(n);
    Vector c = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) var[i] = std::pow(0.5, static_cast<double>(i)) * 9.0;
    if (n > 1) c[1] = 0.15;
    for (Index k = 2; k < n; ++k) c[k] = 0.1;
    return curvilinear(var.asDiagonal(), c);
  }

  /// Two copies of a base potential at (20,20,-10) and (-20,-20,10), the
  /// second rotated by pi/2 about the y axis.
  static SyntheticPotential default_mixture(const SyntheticPotential& base) {
    if (base.dim() != 3) throw InvalidArgument("the default mixture is three-dimensional");
    Pose a{Matrix::Identity(3, 3), Vector::Zero(3)};
    a.translation << 20, 20, -10;
    Pose b{rotation_about_axis(3, 2, 0, std::numbers::pi / 2), Vector::Zero(3)};
    b.translation << -20, -20, 10;
    return mixture(base, {a, b}, {0.5, 0.5});
  }

  PotentialKind kind() const { return kind_; }
  Index dim() const { return cov_.rows(); }
  const Matrix& covariance() const { return cov_; }
  const CurvilinearMap& map() const { return map_; }
  const std::vector<Pose>& poses() const { return poses_; }
  const std::vector<double>& weights() const { return weights_; }

  /// U(x), normalized so that U = 0 at the mode of a single component.
  double potential(const Vector& x) const {
    check(x);
    if (kind_ != PotentialKind::Mixture) return 0.5 * component_log(x).value;
    return 0.5 * mixture_terms(x).log_sum;
  }

  /// grad U = -1/2 J_T^T Sigma^{-1} T for one component.
  Vector gradient(const Vector& x) const {
    check(x);
    if (kind_ != PotentialKind::Mixture) return 0.5 * component_log(x).gradient;
    const auto m = mixture_terms(x);
    Vector g = Vector::Zero(dim());
    for (std::size_t i = 0; i < poses_.size(); ++i) g += m.resp[i] * m.parts[i].gradient;
    return 0.5 * g;
  }

  Matrix hessian(const Vector& x) const {
    check(x);
    if (kind_ != PotentialKind::Mixture) return 0.5 * component_log(x, true).hessian;
    const auto m = mixture_terms(x, true);
    Vector mean = Vector::Zero(dim());
    Matrix h = Matrix::Zero(dim(), dim());
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      const auto& p = m.parts[i];
      mean += m.resp[i] * p.gradient;
      h += m.resp[i] * (p.hessian + p.gradient * p.gradient.transpose());
    }
    h -= mean * mean.transpose();
    return 0.5 * h;
  }

  /// Stationary density exp(2U), unnormalized.
  double density(const Vector& x) const { return std::exp(2.0 * potential(x)); }

  /// Index of the component whose pose center is nearest to x.
  std::size_t nearest_component(const Vector& x) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < poses_.size(); ++i)
      if ((x - poses_[i].translation).norm() < (x - poses_[best].translation).norm())
        best = i;
    return best;
  }

  /// The i-th mixture component as a standalone potential.
  SyntheticPotential component(std::size_t i) const {
    if (kind_ != PotentialKind::Mixture) return *this;
    return mixture(SyntheticPotential(PotentialKind::Curvilinear, cov_, map_, {}, {}),
                   {poses_.at(i)}, {1.0});
  }

  /// Draws u ~ N(0, Sigma) and maps through T^{-1} (and the pose).
  PointMatrix sample(Index count, std::uint64_t seed) const {
    Rng rng(seed);
    const Matrix l = Eigen::LLT<Matrix>(cov_).matrixL();
    PointMatrix out(count, dim());
    for (Index r = 0; r < count; ++r) {
      std::size_t comp = 0;
      if (kind_ == PotentialKind::Mixture) {
        double u = rng.uniform();
        while (comp + 1 < weights_.size() && u >= weights_[comp]) u -= weights_[comp++];
      }
      const Vector y = map_.inverse(l * rng.normal_vector(dim()));
      if (kind_ == PotentialKind::Mixture)
        out.row(r) = (poses_[comp].rotation * y + poses_[comp].translation).transpose();
      else
        out.row(r) = y.transpose();
    }
    return out;
  }

 private:
  SyntheticPotential(PotentialKind kind, Matrix cov, CurvilinearMap map,
                     std::vector<Pose> poses, std::vector<double> weights)
      : kind_(kind), cov_(std::move(cov)), map_(std::move(map)),
        poses_(std::move(poses)), weights_(std::move(weights)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() < 1)
      throw InvalidArgument("covariance must be square");
    Eigen::LLT<Matrix> llt(cov_);
    if (llt.info() != Eigen::Success)
      throw InvalidArgument("covariance must be positive definite");
    prec_ = llt.solve(Matrix::Identity(dim(), dim()));
    if (map_.dim() != dim()) throw DimensionMismatch(dim(), map_.dim());
  }

  void check(const Vector& x) const {
    if (x.size() != dim()) throw DimensionMismatch(dim(), x.size());
  }

  // log of one unplaced component, -1/2 T^T Sigma^{-1} T, with derivatives.
  struct LogTerm {
    double value = 0.0;
    Vector gradient;
    Matrix hessian;
  };

  LogTerm component_log(const Vector& y, bool with_hessian = false) const {
    LogTerm t;
    const Vector u = map_.forward(y);
    const Vector pu = prec_ * u;
    const Matrix j = map_.jacobian(y);
    t.value = -0.5 * u.dot(pu);
    t.gradient = -(j.transpose() * pu);
    if (with_hessian) t.hessian = -(j.transpose() * prec_ * j + map_.weighted_second(pu));
    return t;
  }

  struct MixtureTerms {
    double log_sum = 0.0;
    std::vector<double> resp;
    std::vector<LogTerm> parts;
  };

  MixtureTerms mixture_terms(const Vector& x, bool with_hessian = false) const {
    MixtureTerms m;
    std::vector<double> logs;
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      const Matrix& r = poses_[i].rotation;
      const Vector y = r.transpose() * (x - poses_[i].translation);
      LogTerm t = component_log(y, with_hessian);
      t.gradient = r * t.gradient;
      if (with_hessian) t.hessian = r * t.hessian * r.transpose();
      logs.push_back(std::log(weights_[i]) + t.value);
      m.parts.push_back(std::move(t));
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    double s = 0.0;
    for (double l : logs) s += std::exp(l - top);
    m.log_sum = top + std::log(s);
    for (double l : logs) m.resp.push_back(std::exp(l - m.log_sum));
    return m;
  }

  PotentialKind kind_;
  Matrix cov_;
  Matrix prec_;
  CurvilinearMap map_;
  std::vector<Pose> poses_;
  std::vector<double> weights_;
};

inline PointMatrix synthetic_sample(const SyntheticPotential& pot, Index count,
                                    std::uint64_t seed) {
  return pot.sample(count, seed);
}

inline Vector analytic_grad_u(const SyntheticPotential& pot, const Vector& x) {
  return pot.gradient(x);
}

/// Regular grid with m points per axis spanning center +- half_width.
inline std::vector<Vector> grid_points(const Vector& center, const Vector& half_width,
                                       int m) {
  const Index n = center.size();
  std::vector<Vector> out;
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  for (;;) {
    Vector p(n);
    for (Index i = 0; i < n; ++i)
      p[i] = center[i] + half_width[i] * (m == 1 ? 0.0 : -1.0 + 2.0 * idx[i] / (m - 1));
    out.push_back(std::move(p));
    Index i = 0;
    while (i < n && ++idx[i] == m) idx[i++] = 0;
    if (i == n) break;
  }
  return out;
}

/// Finite-difference residual of the forward equation
///   (1/2) Laplacian p - div(grad U p) = 0,  p = exp(2U),
/// as max |residual| / max p over the grid. `scale` multiplies p.
inline double verify_stationarity(const SyntheticPotential& pot,
                                  const std::vector<Vector>& grid, double fd_step,
                                  double scale = 1.0) {
  double worst = 0.0, top = 0.0;
  const Index n = pot.dim();
  auto p = [&](const Vector& x) { return scale * pot.density(x); };
  for (const Vector& x : grid) {
    const double p0 = p(x);
    top = std::max(top, p0);
    double lap = 0.0, div = 0.0;
    for (Index i = 0; i < n; ++i) {
      Vector xp = x, xm = x;
      xp[i] += fd_step;
      xm[i] -= fd_step;
      const double pp = p(xp), pm = p(xm);
      lap += (pp - 2.0 * p0 + pm) / (fd_step * fd_step);
      div += (pot.gradient(xp)[i] * pp - pot.gradient(xm)[i] * pm) / (2.0 * fd_step);
    }
    worst = std::max(worst, std::abs(0.5 * lap - div));
  }
  return top > 0.0 ? worst / top : worst;
}

}  // namespace dsim
