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
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dsim/curves.hpp"
#include "dsim/density.hpp"
#include "dsim/errors.hpp"
#include "dsim/geometry.hpp"
#include "dsim/neighbors.hpp"
#include "dsim/types.hpp"

namespace dsim {

/// Rows of a point matrix with exact duplicates removed (first occurrence
/// kept, order preserved).
inline PointMatrix distinct_rows(const PointMatrix& pts) {
  std::vector<Index> order(static_cast<std::size_t>(pts.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index j = 0; j < pts.cols(); ++j) {
      if (pts(a, j) != pts(b, j)) return pts(a, j) < pts(b, j);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), less);
  std::vector<char> keep(order.size(), 1);
  for (std::size_t i = 1; i < order.size(); ++i)
    if (pts.row(order[i]) == pts.row(order[i - 1])) keep[order[i]] = 0;
  PointMatrix out(std::count(keep.begin(), keep.end(), 1), pts.cols());
  Index r = 0;
  for (Index i = 0; i < pts.rows(); ++i)
    if (keep[i]) out.row(r++) = pts.row(i);
  return out;
}

// ---------------------------------------------------------------------------
// Prototypes

struct PrototypeConfig {
  double beta_coarse = 0.125;
  double beta_fine = 1.0;
  Index data_sphere = 3200;
  Index coord_sphere = 800;
  Index sample = 800;
  double merge_radius = 0.0;  ///< 0 selects 0.5 x median nearest-mode distance
  /// Nearest points re-fetched at every ascent step.
  Index ascent_sample = 128;
  AscentOptions ascent{};
  /// Tolerance of the final ascent that places the modified prototype.
  double mode_tol = 1e-10;
  int mode_max_iter = 20000;
};

struct PrototypeRecord {
  int id = 0;
  int support = 0;  ///< ascents that merged into this prototype
  Vector raw_prototype;
  Vector modified_prototype;
  Sphere data_sphere;
  Sphere coord_sphere;
  std::vector<Sample> samples;  ///< draws from the Data Sphere
  std::uint64_t sample_seed = 0;
};

/// Single-linkage clusters of points at distance <= radius. Returns a
/// cluster label per point; labels follow first appearance.
inline std::vector<int> single_linkage(const std::vector<Vector>& pts, double radius) {
  const std::size_t m = pts.size();
  std::vector<int> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      if ((pts[i] - pts[j]).norm() <= radius) {
        const int a = find(static_cast<int>(i)), b = find(static_cast<int>(j));
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
  std::vector<int> label(m, -1);
  std::map<int, int> names;
  for (std::size_t i = 0; i < m; ++i) {
    const int root = find(static_cast<int>(i));
    auto [it, fresh] = names.try_emplace(root, static_cast<int>(names.size()));
    label[i] = it->second;
  }
  return label;
}

/// 0.5 x the median nearest-neighbour distance among the points, after
/// collapsing points closer than 1e-3.
inline double default_merge_radius(const std::vector<Vector>& modes) {
  std::vector<Vector> distinct;
  for (const Vector& m : modes) {
    bool dup = false;
    for (const Vector& d : distinct) dup = dup || (m - d).norm() < 1e-3;
    if (!dup) distinct.push_back(m);
  }
  if (distinct.size() < 2) return 1e-3;
  std::vector<double> nn;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    double best = INFINITY;
    for (std::size_t j = 0; j < distinct.size(); ++j)
      if (i != j) best = std::min(best, (distinct[i] - distinct[j]).norm());
    nn.push_back(best);
  }
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  return 0.5 * nn[nn.size() / 2];
}

struct PrototypeSearch {
  std::vector<PrototypeRecord> prototypes;
  std::vector<Vector> ascent_modes;  ///< fine-pass output per start
  std::vector<int> labels;           ///< cluster label per start (-1: failed)
  double merge_radius = 0.0;
  int failed = 0;
};

/// Mean-shift ascents from n_starts random data points (coarse beta, then
/// fine beta, re-fetching the nearest ascent_sample points every step),
/// single-linkage merging, and per-prototype spheres. The
/// modified prototype is the stationary point of the fine-beta estimate on
/// the prototype's first sample, reached by mean-shift from the raw one.
inline PrototypeSearch find_prototypes(const Dataset& ds, int n_starts,
                                       std::uint64_t seed,
                                       const PrototypeConfig& cfg = {}) {
  if (n_starts < 1) throw InvalidArgument("n_starts must be >= 1");
  PrototypeSearch out;
  Rng rng(Rng::derive(seed, 0));
  std::vector<Index> starts;
  std::set<Index> used;
  const Index want = std::min<Index>(n_starts, ds.size());
  while (static_cast<Index>(starts.size()) < want) {
    const Index id = static_cast<Index>(rng.below(static_cast<std::uint64_t>(ds.size())));
    if (used.insert(id).second) starts.push_back(id);
  }

  std::vector<Vector> modes;
  std::vector<std::size_t> start_of_mode;
  auto fetch = [&](const Vector& x) {
    std::vector<Index> ids;
    for (const Neighbor& nb : ds.nearest(x, std::min(cfg.ascent_sample, ds.size())))
      ids.push_back(nb.id);
    return ids;
  };
  auto local_ascent = [&](double beta, const Vector& x) {
    return gradient_ascent(ds.points(), fetch, beta, x, cfg.ascent).mode;
  };
  for (std::size_t s = 0; s < starts.size(); ++s) {
    try {
      const Vector coarse = local_ascent(cfg.beta_coarse, ds.point(starts[s]));
      modes.push_back(local_ascent(cfg.beta_fine, coarse));
      start_of_mode.push_back(s);
    } catch (const Error&) {
      ++out.failed;
    }
  }
  out.ascent_modes = modes;
  out.labels.assign(starts.size(), -1);
  if (modes.empty()) return out;

  out.merge_radius = cfg.merge_radius > 0.0 ? cfg.merge_radius : default_merge_radius(modes);
  const std::vector<int> label = single_linkage(modes, out.merge_radius);
  const int clusters = *std::max_element(label.begin(), label.end()) + 1;
  for (std::size_t i = 0; i < modes.size(); ++i) out.labels[start_of_mode[i]] = label[i];

  // Representative: the member closest to the cluster mean.
  struct Cluster {
    int label;
    int support;
    Vector raw;
  };
  std::vector<Cluster> cs;
  for (int c = 0; c < clusters; ++c) {
    Vector mean = Vector::Zero(ds.dim());
    int count = 0;
    for (std::size_t i = 0; i < modes.size(); ++i)
      if (label[i] == c) {
        mean += modes[i];
        ++count;
      }
    mean /= count;
    std::size_t best = 0;
    double bd = INFINITY;
    for (std::size_t i = 0; i < modes.size(); ++i)
      if (label[i] == c && (modes[i] - mean).norm() < bd) {
        bd = (modes[i] - mean).norm();
        best = i;
      }
    cs.push_back({c, count, modes[best]});
  }
  std::stable_sort(cs.begin(), cs.end(),
                   [](const Cluster& a, const Cluster& b) { return a.support > b.support; });

  for (const Cluster& c : cs) {
    PrototypeRecord rec;
    rec.id = static_cast<int>(out.prototypes.size());
    rec.support = c.support;
    rec.raw_prototype = c.raw;
    rec.data_sphere = data_sphere(ds, c.raw, std::min(cfg.data_sphere, ds.size()));
    rec.sample_seed = Rng::derive(seed, 1000 + static_cast<std::uint64_t>(rec.id));
    const Index m = std::min<Index>(cfg.sample, static_cast<Index>(rec.data_sphere.member_ids.size()));
    rec.samples = draw_samples(rec.data_sphere, ds, m, 2, rec.sample_seed);
    const KernelContext ctx(cfg.beta_fine, rec.samples[0].points);
    try {
      rec.modified_prototype =
          gradient_ascent(ctx, c.raw, {cfg.mode_tol, cfg.mode_max_iter, 1}).mode;
    } catch (const NonConvergence& e) {
      rec.modified_prototype = e.last;
    }
    rec.coord_sphere =
        data_sphere(ds, rec.modified_prototype, std::min(cfg.coord_sphere, ds.size()));
    out.prototypes.push_back(std::move(rec));
  }
  return out;
}

/// Fraction of dataset points inside at least one prototype's Data Sphere.
inline double coverage(const std::vector<PrototypeRecord>& protos, Index dataset_size) {
  std::set<Index> covered;
  for (const auto& p : protos)
    covered.insert(p.data_sphere.member_ids.begin(), p.data_sphere.member_ids.end());
  return dataset_size > 0 ? static_cast<double>(covered.size()) / dataset_size : 0.0;
}

// ---------------------------------------------------------------------------
// Step One: principal axis

enum class AxisMode { Fast, Refined };

struct AxisConfig {
  int starts = 64;
  int iterations = 200;
  int refine_rounds = 3;
  int refine_candidates = 16;
  double refine_step = 0.05;     ///< first perturbation, as a fraction of r
  double arrival_tol = 0.1;      ///< inward curve must end within this x r
  CurveOptions curve{};
};

struct AxisResult {
  Vector axis_point;
  CurvePath rho_in;
  double objective = 0.0;       ///< |grad U|^2 at axis_point
  double fast_length = 0.0;     ///< Riemannian length of the fast minimizer
  double length = 0.0;          ///< Riemannian length of the returned point
  bool stalled = false;         ///< no start reached the origin cleanly
};

namespace detail {

template <GradientField F>
double shell_objective(const F& field, const Vector& x) {
  return field.gradient(x).squaredNorm();
}

/// Projected descent of |grad U|^2 on the sphere |x - origin| = r.
template <GradientField F>
Vector shell_descent(const F& field, const Vector& origin, double r, Vector u, int iters) {
  u.normalize();
  Vector x = origin + r * u;
  double f = shell_objective(field, x);
  double step = 0.1 * r;
  for (int it = 0; it < iters; ++it) {
    const Vector g = field.gradient(x);
    Vector grad = 2.0 * hessian_vector(field, x, g);
    grad -= grad.dot(u) * u;
    const double gn = grad.norm();
    if (gn < 1e-14) break;
    const Vector dir = grad / gn;
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls) {
      const Vector un = (u - (step / r) * dir).normalized();
      const Vector xn = origin + r * un;
      const double fn = shell_objective(field, xn);
      if (fn < f) {
        u = un;
        x = xn;
        f = fn;
        moved = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved || step < 1e-12 * r) break;
  }
  return x;
}

template <GradientField F>
std::optional<CurvePath> inward_to(const F& field, const Vector& x, const Vector& origin,
                                   double tol, double grad_floor, const CurveOptions& opts) {
  RhoStop stop;
  stop.grad_floor = grad_floor;
  CurvePath p;
  try {
    p = rho_curve(field, x, RhoDirection::Inward, stop, opts);
  } catch (const Error&) {
    return std::nullopt;
  }
  if ((p.end_point() - origin).norm() > tol) return std::nullopt;
  return p;
}

}  // namespace detail

/// Step One. Fast mode minimizes |grad U|^2 on the shell of radius r
/// around the origin from `start_dirs`; refined mode then perturbs the
/// minimizer and keeps whichever inward rho curve is Riemannian-shorter.
template <GradientField F>
AxisResult principal_axis(const F& field, const Vector& origin, double r,
                          const std::vector<Vector>& start_dirs, AxisMode mode,
                          std::uint64_t seed, double grad_floor,
                          const AxisConfig& cfg = {}) {
  if (!(r > 0.0)) throw InvalidArgument("coordinate sphere radius must be positive");
  if (start_dirs.empty()) throw InvalidArgument("principal axis needs start directions");
  struct Cand {
    double f;
    std::size_t id;
    Vector x;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < start_dirs.size(); ++i) {
    if (start_dirs[i].norm() == 0.0) continue;
    const Vector x = detail::shell_descent(field, origin, r, start_dirs[i], cfg.iterations);
    cands.push_back({detail::shell_objective(field, x), i, x});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.f < b.f || (a.f == b.f && a.id < b.id);
  });

  AxisResult res;
  const double tol = cfg.arrival_tol * r;
  for (const Cand& c : cands) {
    if (auto p = detail::inward_to(field, c.x, origin, tol, grad_floor, cfg.curve)) {
      res.axis_point = c.x;
      res.objective = c.f;
      res.rho_in = std::move(*p);
      break;
    }
  }
  if (res.axis_point.size() == 0) {
    res.stalled = true;
    res.axis_point = cands.front().x;
    res.objective = cands.front().f;
    RhoStop stop;
    stop.grad_floor = grad_floor;
    res.rho_in = rho_curve(field, res.axis_point, RhoDirection::Inward, stop, cfg.curve);
  }
  res.fast_length = res.length = res.rho_in.riem_total();
  if (mode == AxisMode::Fast || res.stalled) return res;

  Rng rng(seed);
  const Index n = origin.size();
  double delta = cfg.refine_step * r;
  for (int round = 0; round < cfg.refine_rounds; ++round, delta *= 0.5) {
    const Vector center = res.axis_point;
    const Vector u = (center - origin).normalized();
    for (int k = 0; k < cfg.refine_candidates; ++k) {
      Vector d = rng.normal_vector(n);
      d -= d.dot(u) * u;
      if (d.norm() == 0.0) continue;
      const Vector x = origin + r * (center + delta * d.normalized() - origin).normalized();
      auto p = detail::inward_to(field, x, origin, tol, grad_floor, cfg.curve);
      if (p && p->riem_total() < res.length) {
        res.length = p->riem_total();
        res.axis_point = x;
        res.objective = detail::shell_objective(field, x);
        res.rho_in = std::move(*p);
      }
    }
  }
  return res;
}

/// Start directions toward `count` members of a sphere (in member order,
/// deterministic per seed).
inline std::vector<Vector> sphere_start_directions(const Sphere& sphere, const Dataset& ds,
                                                   int count, std::uint64_t seed) {
  std::vector<Vector> dirs;
  const Index m = static_cast<Index>(sphere.member_ids.size());
  Rng rng(seed);
  for (int i = 0; i < count && m > 0; ++i) {
    const Index id = sphere.member_ids[rng.below(static_cast<std::uint64_t>(m))];
    const Vector d = ds.point(id) - sphere.center;
    if (d.norm() > 0.0) dirs.push_back(d.normalized());
  }
  return dirs;
}

/// Table 2 row: inward Euclidean/Riemannian length from the axis point,
/// and the Riemannian length outward for the same Euclidean length.
struct RhoDistances {
  double euclid_in = 0.0;
  double riem_in = 0.0;
  double euclid_out = 0.0;
  double riem_out = 0.0;
  CurvePath rho_out;
};

template <GradientField F>
RhoDistances rho_distances(const F& field, const AxisResult& axis,
                           const CurveOptions& opts = {}) {
  RhoDistances d;
  d.euclid_in = axis.rho_in.euclid_total();
  d.riem_in = axis.rho_in.riem_total();
  RhoStop stop;
  stop.target_length = d.euclid_in;
  d.rho_out = rho_curve(field, axis.axis_point, RhoDirection::Outward, stop, opts);
  d.euclid_out = d.rho_out.euclid_total();
  d.riem_out = d.rho_out.riem_total();
  return d;
}

// ---------------------------------------------------------------------------
// Step Two: initial directions

struct DirectionSet {
  Frame frame;
  EigenSystem eigen;
  Vector max_direction;               ///< frame coordinates, unit
  std::vector<Vector> min_directions; ///< frame coordinates, orthonormal
};

/// Eigensystem of the metric at the axis point, zeta sampling and
/// Gram-Schmidt: one maximal and n - 2 minimal directions.
template <GradientField F>
DirectionSet build_frame_at_axis(const F& field, const Vector& axis_point,
                                 std::uint64_t seed, ZetaOptions zopts = {}) {
  DirectionSet d;
  const Vector g = field.gradient(axis_point);
  d.frame = build_frame(g, best_center(g));
  d.eigen = eigensystem(d.frame);
  d.max_direction = d.eigen.xi1.normalized();
  const auto zetas = random_min_eigenvectors(d.eigen, seed, zopts);
  d.min_directions = orthonormal_directions(d.eigen, zetas);
  return d;
}

// ---------------------------------------------------------------------------
// Step Three: geodesics

/// Geodesics in both senses from one initial direction. Direction id 0 is
/// the maximal direction; ids 1.. are the minimal directions in order.
struct GeodesicPair {
  int direction_id = 0;
  Vector direction;  ///< frame coordinates
  std::optional<CurvePath> positive;
  std::optional<CurvePath> negative;
  std::string positive_error;
  std::string negative_error;

  bool complete() const {
    return positive && negative && !positive->partial && !negative->partial;
  }
  double positive_length() const { return positive ? positive->riem_total() : NAN; }
  double negative_length() const { return negative ? negative->riem_total() : NAN; }
  double total() const { return positive_length() + negative_length(); }
};

struct CoordinateFrame {
  Vector origin;
  Vector axis_point;
  double radius = 0.0;
  AxisResult axis;
  RhoDistances rho;
  DirectionSet directions;
  std::vector<GeodesicPair> geodesics;
  std::vector<int> selected;  ///< direction ids of the chosen Theta curves

  Vector direction(int id) const {
    return id == 0 ? directions.max_direction
                   : directions.min_directions.at(static_cast<std::size_t>(id - 1));
  }
};

template <GradientField F>
GeodesicPair geodesic_pair(const F& field, const CoordinateFrame& cf, int id,
                           double stop_angle, const CurveOptions& opts = {}) {
  GeodesicPair gp;
  gp.direction_id = id;
  gp.direction = cf.direction(id);
  const Index n = gp.direction.size();
  const Vector v0 = gp.direction.tail(n - 1);
  const Index center = cf.directions.frame.center_axis;
  try {
    gp.positive = geodesic(field, cf.axis_point, cf.origin, v0, stop_angle, opts, center);
  } catch (const Error& e) {
    gp.positive_error = e.what();
  }
  try {
    gp.negative = geodesic(field, cf.axis_point, cf.origin, Vector(-v0), stop_angle, opts, center);
  } catch (const Error& e) {
    gp.negative_error = e.what();
  }
  return gp;
}

/// Integrates both senses for each direction id; failures are recorded on
/// the pair and the batch continues.
template <GradientField F>
void geodesic_batch(CoordinateFrame& cf, const F& field, const std::vector<int>& ids,
                    double stop_angle, const CurveOptions& opts = {}) {
  if (ids.empty()) throw InvalidArgument("geodesic batch needs directions");
  if (!(stop_angle > 0.0 && stop_angle <= std::numbers::pi))
    throw InvalidArgument("stop angle must lie in (0, pi]");
  for (int id : ids) {
    auto it = std::find_if(cf.geodesics.begin(), cf.geodesics.end(),
                           [&](const GeodesicPair& g) { return g.direction_id == id; });
    GeodesicPair gp = geodesic_pair(field, cf, id, stop_angle, opts);
    if (it != cf.geodesics.end())
      *it = std::move(gp);
    else
      cf.geodesics.push_back(std::move(gp));
  }
  std::sort(cf.geodesics.begin(), cf.geodesics.end(),
            [](const GeodesicPair& a, const GeodesicPair& b) {
              return a.direction_id < b.direction_id;
            });
}

/// Distance summary of one geodesic pair, enough to rank it.
struct CurveTotal {
  int direction_id = 0;
  bool complete = false;
  double total = 0.0;
};

/// rho plus the maximal-direction curve plus the k - 2 minimal-direction
/// curves of least total length (ties by direction id). Returns direction
/// ids; the rho coordinate is implicit.
inline std::vector<int> select_coordinates(std::vector<CurveTotal> curves, int k) {
  if (k < 2) throw InvalidArgument("k must be >= 2");
  std::erase_if(curves, [](const CurveTotal& c) { return c.direction_id == 0 || !c.complete; });
  if (static_cast<int>(curves.size()) < k - 2)
    throw InvalidArgument("k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(curves.size() + 2) + " available coordinates");
  std::sort(curves.begin(), curves.end(), [](const CurveTotal& a, const CurveTotal& b) {
    return a.total < b.total || (a.total == b.total && a.direction_id < b.direction_id);
  });
  std::vector<int> out{0};
  for (int i = 0; i < k - 2; ++i) out.push_back(curves[static_cast<std::size_t>(i)].direction_id);
  return out;
}

inline std::vector<int> select_coordinates(const CoordinateFrame& cf, int k) {
  std::vector<CurveTotal> curves;
  for (const auto& g : cf.geodesics) curves.push_back({g.direction_id, g.complete(), g.total()});
  return select_coordinates(std::move(curves), k);
}

/// Riemannian lengths of inward rho curves dropped from the end points of a
/// geodesic pair (positive, negative).
template <GradientField F>
std::vector<double> endpoint_rho_lengths(const F& field, const GeodesicPair& gp,
                                         double grad_floor, const CurveOptions& opts = {}) {
  std::vector<double> out;
  RhoStop stop;
  stop.grad_floor = grad_floor;
  for (const auto* p : {&gp.positive, &gp.negative})
    if (*p) out.push_back(rho_curve(field, (*p)->end_point(), RhoDirection::Inward, stop, opts).riem_total());
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction error

struct ReconstructionResult {
  double rms = 0.0;
  int used = 0;
  int failed = 0;                 ///< projection or coverage failures
  std::vector<double> errors;     ///< scaled flow distance per used point
  std::vector<Index> rows;        ///< data row of each entry in errors
};

inline double rms(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x * x;
  return std::sqrt(s / static_cast<double>(xs.size()));
}

struct ReconstructionConfig {
  int kept_knots = 60;       ///< knots per sense along the kept curve
  double coverage_tol = 0.1; ///< mesh distance limit, as a fraction of r
  CurveOptions curve{};
};

/// For each data point: project along rho to the level set through the axis
/// point, locate it on the mesh phi_s(theta_t(x0)) spanned by the kept
/// curve and the dropped flow, and report the Euclidean flow length |s|
/// scaled by (rho position of the point) / (rho position of its projection).
template <GradientField F>
ReconstructionResult reconstruction_rms(const F& field, const CoordinateFrame& cf,
                                        const PointMatrix& data, const GeodesicPair& kept,
                                        const GeodesicPair& dropped, double grad_floor,
                                        const ReconstructionConfig& cfg = {}) {
  if (!kept.positive || !kept.negative || !dropped.positive || !dropped.negative)
    throw InvalidArgument("reconstruction needs complete kept and dropped curves");
  const double u0 = field.potential(cf.axis_point);
  CurveOptions flow_opts = cfg.curve;
  flow_opts.partial_on_degenerate = true;

  // Mesh of (point, |s|).
  std::vector<Vector> mesh;
  std::vector<double> mesh_s;
  const CoefficientHistory hp(*dropped.positive), hn(*dropped.negative);
  for (const auto* side : {&*kept.positive, &*kept.negative}) {
    const std::size_t m = side->size();
    const std::size_t knots = std::min<std::size_t>(m, static_cast<std::size_t>(cfg.kept_knots));
    for (std::size_t j = 0; j < knots; ++j) {
      const std::size_t i = knots == 1 ? 0 : j * (m - 1) / (knots - 1);
      const Vector& start = side->points[i];
      for (const auto* h : {&hp, &hn}) {
        try {
          const CurvePath flow = transverse_flow(field, start, *h, h->t_max(), flow_opts);
          for (std::size_t q = 0; q < flow.size(); ++q) {
            mesh.push_back(flow.points[q]);
            mesh_s.push_back(flow.euclid_len[q]);
          }
        } catch (const Error&) {
        }
      }
    }
  }
  if (mesh.empty()) throw InvalidArgument("reconstruction mesh is empty");
  PointMatrix mesh_pts(static_cast<Index>(mesh.size()), cf.origin.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) mesh_pts.row(static_cast<Index>(i)) = mesh[i];
  const Dataset mesh_ds(std::move(mesh_pts));

  ReconstructionResult res;
  RhoStop to_mode;
  to_mode.grad_floor = grad_floor;
  const double tol = cfg.coverage_tol * cf.radius;
  for (Index r = 0; r < data.rows(); ++r) {
    const Vector y = data.row(r).transpose();
    try {
      const double uy = field.potential(y);
      const CurvePath in = rho_curve(field, y, RhoDirection::Inward, to_mode, cfg.curve);
      const double d_y = in.euclid_total();
      RhoStop to_level;
      to_level.grad_floor = grad_floor;
      to_level.level = [&](const Vector& x) { return field.potential(x) - u0; };
      const bool outside = uy < u0;
      const CurvePath proj = rho_curve(
          field, y, outside ? RhoDirection::Inward : RhoDirection::Outward, to_level, cfg.curve);
      if (proj.stop != StopReason::LevelSet) {
        ++res.failed;
        continue;
      }
      const double d_p = outside ? d_y - proj.euclid_total() : d_y + proj.euclid_total();
      if (!(d_p > 0.0)) {
        ++res.failed;
        continue;
      }
      const Neighbor nb = mesh_ds.nearest(proj.end_point(), 1).front();
      if (nb.distance > tol) {
        ++res.failed;
        continue;
      }
      res.errors.push_back(mesh_s[static_cast<std::size_t>(nb.id)] * d_y / d_p);
      res.rows.push_back(r);
      ++res.used;
    } catch (const Error&) {
      ++res.failed;
    }
  }
  res.rms = rms(res.errors);
  return res;
}

// ---------------------------------------------------------------------------
// PCA baseline

struct PcaResult {
  Vector eigenvalues;   ///< descending
  Matrix eigenvectors;  ///< one per column
};

inline PcaResult pca_baseline(const Sphere& sphere, const Dataset& ds, Index k) {
  const Index m = static_cast<Index>(sphere.member_ids.size());
  if (k < 1 || k > ds.dim()) throw InvalidArgument("k out of range for PCA");
  if (m < 2 || m < k) throw InvalidArgument("PCA needs at least k members");
  const PointMatrix pts = gather(ds, sphere.member_ids);
  const Vector mean = pts.colwise().mean().transpose();
  const Matrix centered = pts.rowwise() - mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(m - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  PcaResult r;
  r.eigenvalues.resize(k);
  r.eigenvectors.resize(ds.dim(), k);
  const Index n = ds.dim();
  for (Index i = 0; i < k; ++i) {
    r.eigenvalues[i] = es.eigenvalues()[n - 1 - i];
    Vector v = es.eigenvectors().col(n - 1 - i);
    // Fix the sign: largest-magnitude component positive.
    Index a = 0;
    v.cwiseAbs().maxCoeff(&a);
    if (v[a] < 0) v = -v;
    r.eigenvectors.col(i) = v;
  }
  return r;
}

}  // namespace dsim
