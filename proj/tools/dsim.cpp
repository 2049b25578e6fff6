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

// Stage driver: ingest | synthetic -> prototypes -> axes -> geodesics ->
// coords -> report, plus verify. Every stage reads its inputs from and
// writes its artifacts to the output directory.

#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsim/dsim.hpp"

namespace fs = std::filesystem;
using dsim::io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"dataset", "synthetic"},
      {"images", "data/mnist5k-images-idx3-ubyte.gz"},
      {"max_images", "0"},
      {"synthetic", "curvilinear"},
      {"synthetic_dim", "3"},
      {"synthetic_count", "2000"},
      {"seed", "1"},
      {"beta", "1"},
      {"beta_coarse", "0.125"},
      {"data_sphere", "3200"},
      {"coord_sphere", "800"},
      {"sample", "800"},
      {"ascent_sample", "128"},
      {"starts", "32"},
      {"merge_radius", "0"},
      {"max_prototypes", "3"},
      {"axis_mode", "fast"},
      {"axis_starts", "64"},
      {"stop_angle", "1.5707963267948966"},
      {"directions", "0"},
      {"k", "12"},
      {"grid_tiles", "12"},
  };
  return d;
}

// Keys each stage depends on, cumulative along the pipeline.
const std::vector<std::pair<std::string, std::vector<std::string>>>& stage_keys() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> s = {
      {"dataset", {"dataset", "images", "max_images", "synthetic", "synthetic_dim",
                   "synthetic_count", "seed"}},
      {"prototypes", {"beta", "beta_coarse", "data_sphere", "coord_sphere", "sample",
                      "ascent_sample", "starts", "merge_radius"}},
      {"axes", {"max_prototypes", "axis_mode", "axis_starts"}},
      {"geodesics", {"stop_angle", "directions"}},
      {"coords", {"k"}},
  };
  return s;
}

class RunConfig {
 public:
  explicit RunConfig(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {
    for (const auto& [k, v] : kv_)
      if (!defaults().contains(k) && k != "out") throw ConfigError("unknown config key '" + k + "'");
    for (const auto& [k, v] : defaults()) kv_.try_emplace(k, v);
    kv_.try_emplace("out", "run");
    validate();
  }

  const std::string& str(const std::string& k) const { return kv_.at(k); }

  double num(const std::string& k) const {
    const std::string& v = str(k);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + k + "' expects a number, got '" + v + "'");
    }
  }

  long integer(const std::string& k) const {
    const double d = num(k);
    if (d != std::floor(d)) throw ConfigError("config key '" + k + "' expects an integer");
    return static_cast<long>(d);
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }
  fs::path out() const { return fs::path(str("out")); }

  /// Hash over the keys of `stage` and every stage before it.
  std::string hash(const std::string& stage) const {
    std::map<std::string, std::string> sub;
    for (const auto& [name, keys] : stage_keys()) {
      for (const auto& k : keys) sub[k] = kv_.at(k);
      if (name == stage) return dsim::io::config_hash(sub);
    }
    throw std::logic_error("unknown stage " + stage);
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : kv_)
      if (k != "out") j[k] = v;
    return j;
  }

 private:
  void validate() const {
    auto positive = [&](const std::string& k) {
      if (!(num(k) > 0)) throw ConfigError("config key '" + k + "' must be positive");
    };
    for (const char* k : {"beta", "beta_coarse", "data_sphere", "coord_sphere", "sample",
                          "ascent_sample", "starts", "max_prototypes", "axis_starts",
                          "synthetic_count", "synthetic_dim", "grid_tiles"})
      positive(k);
    for (const char* k : {"data_sphere", "coord_sphere", "sample", "ascent_sample", "starts",
                          "max_prototypes", "axis_starts", "synthetic_count", "synthetic_dim",
                          "max_images", "directions", "k", "seed", "grid_tiles"})
      if (integer(k) < 0) throw ConfigError("config key '" + std::string(k) + "' must be >= 0");
    if (num("merge_radius") < 0) throw ConfigError("merge_radius must be >= 0");
    const double a = num("stop_angle");
    if (!(a > 0 && a <= std::numbers::pi)) throw ConfigError("stop_angle must lie in (0, pi]");
    if (integer("k") < 2) throw ConfigError("k must be >= 2");
    if (integer("sample") > integer("data_sphere"))
      throw ConfigError("sample must not exceed data_sphere");
    const std::set<std::string> datasets{"mnist", "synthetic"};
    if (!datasets.contains(str("dataset"))) throw ConfigError("dataset must be mnist or synthetic");
    const std::set<std::string> kinds{"gaussian", "curvilinear", "mixture"};
    if (!kinds.contains(str("synthetic")))
      throw ConfigError("synthetic must be gaussian, curvilinear or mixture");
    if (str("synthetic") == "mixture" && integer("synthetic_dim") != 3)
      throw ConfigError("the mixture potential is three-dimensional");
    if (str("axis_mode") != "fast" && str("axis_mode") != "refined")
      throw ConfigError("axis_mode must be fast or refined");
  }

  std::map<std::string, std::string> kv_;
};

// ---------------------------------------------------------------------------
// Artifacts

fs::path artifact(const RunConfig& cfg, const std::string& name) { return cfg.out() / name; }

json stamp(const RunConfig& cfg, const std::string& stage, const std::string& upstream) {
  json j;
  j["stage"] = stage;
  j["config_hash"] = cfg.hash(stage);
  j["upstream_hash"] = upstream.empty() ? json(nullptr) : json(cfg.hash(upstream));
  j["seed"] = cfg.seed();
  return j;
}

/// Loads an upstream artifact and checks that it was produced by the same
/// configuration.
json load_stage(const RunConfig& cfg, const std::string& file, const std::string& stage) {
  const fs::path p = artifact(cfg, file);
  if (!fs::exists(p)) throw StageError("missing stage '" + stage + "': " + p.string() + " not found");
  json j = dsim::io::read_json(p.string());
  const std::string want = cfg.hash(stage);
  const std::string got = j.value("config_hash", "");
  if (got != want)
    throw StageError("config mismatch: " + p.string() + " was written with config hash " + got +
                     ", current config hashes to " + want);
  return j;
}

void save(const RunConfig& cfg, const std::string& file, const json& j) {
  fs::create_directories(artifact(cfg, file).parent_path());
  dsim::io::write_json(artifact(cfg, file).string(), j);
}

void save_text(const RunConfig& cfg, const std::string& file, const std::string& text) {
  fs::create_directories(artifact(cfg, file).parent_path());
  dsim::io::write_text(artifact(cfg, file).string(), text);
}

dsim::Dataset load_dataset(const RunConfig& cfg) {
  const json side = load_stage(cfg, "dataset.json", "dataset");
  return dsim::Dataset(dsim::io::read_dataset_cache(artifact(cfg, "dataset").string()).points);
}

std::string num_cell(double v) { return dsim::io::format_double(v); }

json curve_summary(const dsim::CurvePath& p) {
  json j;
  j["euclid_len"] = p.euclid_total();
  j["riem_len"] = p.riem_total();
  j["stop"] = dsim::to_string(p.stop);
  j["knots"] = p.size();
  j["recenters"] = p.center_history.size() > 0 ? p.center_history.size() - 1 : 0;
  return j;
}

dsim::PrototypeConfig prototype_config(const RunConfig& cfg) {
  dsim::PrototypeConfig pc;
  pc.beta_coarse = cfg.num("beta_coarse");
  pc.beta_fine = cfg.num("beta");
  pc.data_sphere = cfg.integer("data_sphere");
  pc.coord_sphere = cfg.integer("coord_sphere");
  pc.sample = cfg.integer("sample");
  pc.ascent_sample = cfg.integer("ascent_sample");
  pc.merge_radius = cfg.num("merge_radius");
  return pc;
}

/// Kernel field on a prototype's first sample.
dsim::KernelField prototype_field(const RunConfig& cfg, const dsim::Dataset& ds,
                                  const json& proto) {
  const auto ids = proto.at("sample_ids").at(0).get<std::vector<dsim::Index>>();
  return dsim::KernelField(dsim::KernelContext(cfg.num("beta"), dsim::gather(ds, ids)));
}

constexpr double kGradFloor = 1e-6;

// ---------------------------------------------------------------------------
// Stages

void write_dataset(const RunConfig& cfg, const dsim::PointMatrix& pts,
                   const std::string& provenance, json extra) {
  fs::create_directories(cfg.out());
  const json st = stamp(cfg, "dataset", "");
  for (const auto& [k, v] : st.items()) extra[k] = v;
  dsim::io::write_dataset_cache(artifact(cfg, "dataset").string(), pts, cfg.seed(), provenance,
                                std::move(extra));
  std::cout << "dataset: " << pts.rows() << " points in " << pts.cols() << " dimensions\n";
}

void cmd_ingest(const RunConfig& cfg) {
  if (cfg.str("dataset") != "mnist") throw ConfigError("ingest needs dataset = mnist");
  dsim::IdxTensor images;
  try {
    images = dsim::parse_idx(cfg.str("images"));
  } catch (const dsim::Error& e) {
    throw StageError(e.what());
  }
  dsim::PatchConfig pc;
  pc.seed = dsim::Rng::derive(cfg.seed(), 7);
  const auto max_images = static_cast<std::size_t>(cfg.integer("max_images"));
  const dsim::PointMatrix patches = dsim::extract_patches(images, pc, max_images);
  const dsim::PointMatrix distinct = dsim::distinct_rows(patches);
  json extra;
  extra["patches"] = patches.rows();
  extra["images"] = max_images > 0 ? std::min(max_images, images.count()) : images.count();
  write_dataset(cfg, distinct, "mnist:" + fs::path(cfg.str("images")).filename().string(),
                std::move(extra));
}

dsim::SyntheticPotential synthetic_potential(const RunConfig& cfg) {
  const auto n = static_cast<dsim::Index>(cfg.integer("synthetic_dim"));
  const std::string kind = cfg.str("synthetic");
  if (kind == "gaussian") return dsim::SyntheticPotential::gaussian(dsim::Matrix::Identity(n, n));
  const auto base = dsim::SyntheticPotential::default_curvilinear(n);
  if (kind == "curvilinear") return base;
  return dsim::SyntheticPotential::default_mixture(base);
}

void cmd_synthetic(const RunConfig& cfg) {
  if (cfg.str("dataset") != "synthetic") throw ConfigError("synthetic needs dataset = synthetic");
  const auto pot = synthetic_potential(cfg);
  const auto pts = dsim::synthetic_sample(pot, cfg.integer("synthetic_count"),
                                          dsim::Rng::derive(cfg.seed(), 7));
  write_dataset(cfg, pts, "synthetic:" + cfg.str("synthetic"), json::object());
}

void cmd_prototypes(const RunConfig& cfg) {
  const dsim::Dataset ds = load_dataset(cfg);
  const auto search = dsim::find_prototypes(ds, static_cast<int>(cfg.integer("starts")),
                                            cfg.seed(), prototype_config(cfg));
  json j = stamp(cfg, "prototypes", "dataset");
  j["merge_radius"] = search.merge_radius;
  j["failed_ascents"] = search.failed;
  j["coverage"] = dsim::coverage(search.prototypes, ds.size());
  j["prototypes"] = json::array();
  for (const auto& p : search.prototypes) {
    json r;
    r["id"] = p.id;
    r["support"] = p.support;
    r["raw"] = dsim::io::to_json(p.raw_prototype);
    r["modified"] = dsim::io::to_json(p.modified_prototype);
    r["data_sphere_radius"] = p.data_sphere.radius;
    r["data_sphere_size"] = p.data_sphere.member_ids.size();
    r["coord_sphere_radius"] = p.coord_sphere.radius;
    r["coord_sphere_size"] = p.coord_sphere.member_ids.size();
    r["sample_seed"] = p.sample_seed;
    json ids = json::array();
    for (const auto& s : p.samples) ids.push_back(s.ids);
    r["sample_ids"] = ids;
    const dsim::KernelField f(dsim::KernelContext(cfg.num("beta"), p.samples[0].points));
    r["modified_grad_norm"] = f.gradient(p.modified_prototype).norm() / cfg.num("beta");
    j["prototypes"].push_back(r);
  }
  save(cfg, "prototypes.json", j);
  std::cout << "prototypes: " << search.prototypes.size() << " (coverage " << j["coverage"]
            << ")\n";
}

void cmd_axes(const RunConfig& cfg) {
  const dsim::Dataset ds = load_dataset(cfg);
  const json protos = load_stage(cfg, "prototypes.json", "prototypes");
  json j = stamp(cfg, "axes", "prototypes");
  j["axes"] = json::array();
  const auto limit = static_cast<std::size_t>(cfg.integer("max_prototypes"));
  const auto mode = cfg.str("axis_mode") == "fast" ? dsim::AxisMode::Fast : dsim::AxisMode::Refined;
  for (const json& p : protos.at("prototypes")) {
    if (j["axes"].size() >= limit) break;
    const int id = p.at("id").get<int>();
    json a;
    a["prototype"] = id;
    try {
      const auto field = prototype_field(cfg, ds, p);
      const dsim::Vector origin = dsim::io::vector_from_json(p.at("modified"));
      const dsim::Sphere cs =
          dsim::data_sphere(ds, origin, std::min<dsim::Index>(cfg.integer("coord_sphere"), ds.size()));
      const auto seed = dsim::Rng::derive(cfg.seed(), 2000 + static_cast<std::uint64_t>(id));
      const auto dirs = dsim::sphere_start_directions(cs, ds, static_cast<int>(cfg.integer("axis_starts")), seed);
      const auto ax = dsim::principal_axis(field, origin, cs.radius, dirs, mode, seed, kGradFloor);
      const auto rho = dsim::rho_distances(field, ax);
      a["radius"] = cs.radius;
      a["axis_point"] = dsim::io::to_json(ax.axis_point);
      a["objective"] = ax.objective;
      a["stalled"] = ax.stalled;
      a["fast_length"] = ax.fast_length;
      a["rho_in"] = curve_summary(ax.rho_in);
      a["rho_out"] = curve_summary(rho.rho_out);
      a["euclid_in"] = rho.euclid_in;
      a["riem_in"] = rho.riem_in;
      a["euclid_out"] = rho.euclid_out;
      a["riem_out"] = rho.riem_out;
      const std::string stem = "curves/p" + std::to_string(id);
      save_text(cfg, stem + "_rho_in.csv", dsim::io::curve_csv(ax.rho_in));
      save_text(cfg, stem + "_rho_out.csv", dsim::io::curve_csv(rho.rho_out));
    } catch (const dsim::Error& e) {
      a["error"] = e.what();
    }
    j["axes"].push_back(a);
  }
  save(cfg, "axes.json", j);
  std::cout << "axes: " << j["axes"].size() << " prototypes\n";
}

void cmd_geodesics(const RunConfig& cfg) {
  const dsim::Dataset ds = load_dataset(cfg);
  const json protos = load_stage(cfg, "prototypes.json", "prototypes");
  const json axes = load_stage(cfg, "axes.json", "axes");
  json j = stamp(cfg, "geodesics", "axes");
  j["frames"] = json::array();
  std::vector<std::vector<std::string>> rows;
  const double stop_angle = cfg.num("stop_angle");
  for (const json& a : axes.at("axes")) {
    if (a.contains("error")) continue;
    const int id = a.at("prototype").get<int>();
    const json& p = protos.at("prototypes").at(static_cast<std::size_t>(id));
    json fr;
    fr["prototype"] = id;
    try {
      const auto field = prototype_field(cfg, ds, p);
      dsim::CoordinateFrame cf;
      cf.origin = dsim::io::vector_from_json(p.at("modified"));
      cf.axis_point = dsim::io::vector_from_json(a.at("axis_point"));
      cf.radius = a.at("radius").get<double>();
      cf.directions = dsim::build_frame_at_axis(
          field, cf.axis_point, dsim::Rng::derive(cfg.seed(), 3000 + static_cast<std::uint64_t>(id)));
      const int available = static_cast<int>(cf.directions.min_directions.size());
      const long want = cfg.integer("directions");
      const int count = want > 0 ? static_cast<int>(std::min<long>(want, available)) : available;
      std::vector<int> ids;
      for (int d = 0; d <= count; ++d) ids.push_back(d);
      dsim::geodesic_batch(cf, field, ids, stop_angle);

      // Orthonormality of the direction set (max |<a,b> - delta|).
      double ortho = 0.0;
      for (int a1 = 0; a1 <= available; ++a1)
        for (int b1 = a1; b1 <= available; ++b1)
          ortho = std::max(ortho, std::abs(cf.direction(a1).dot(cf.direction(b1)) - (a1 == b1 ? 1.0 : 0.0)));
      fr["orthonormality_error"] = ortho;
      fr["center_axis"] = cf.directions.frame.center_axis;
      fr["axis_riem_len"] = a.at("riem_in");
      fr["radius"] = cf.radius;
      fr["pairs"] = json::array();
      const std::string stem = "curves/p" + std::to_string(id) + "_g";
      for (const auto& g : cf.geodesics) {
        json q;
        q["direction"] = g.direction_id;
        q["complete"] = g.complete();
        for (const auto& [name, path, err] :
             {std::tuple{"positive", &g.positive, &g.positive_error},
              std::tuple{"negative", &g.negative, &g.negative_error}}) {
          if (*path) {
            q[name] = curve_summary(**path);
            save_text(cfg, stem + std::to_string(g.direction_id) + "_" + name + ".csv",
                      dsim::io::curve_csv(**path));
          } else {
            q[name] = {{"error", *err}};
          }
        }
        q["total"] = g.complete() ? json(g.total()) : json(nullptr);
        json ends = json::array();
        dsim::RhoStop stop;
        stop.grad_floor = kGradFloor;
        for (const auto* path : {&g.positive, &g.negative}) {
          if (!*path) continue;
          try {
            const auto in = dsim::rho_curve(field, (*path)->end_point(), dsim::RhoDirection::Inward, stop);
            ends.push_back({{"riem_len", in.riem_total()},
                            {"euclid_len", in.euclid_total()},
                            {"end_distance", (in.end_point() - cf.origin).norm()}});
          } catch (const dsim::Error& e) {
            ends.push_back({{"error", e.what()}});
          }
        }
        q["endpoint_rho"] = ends;
        fr["pairs"].push_back(q);
        rows.push_back({std::to_string(id), std::to_string(g.direction_id),
                        num_cell(g.positive_length()), num_cell(g.negative_length()),
                        num_cell(g.total())});
      }
    } catch (const dsim::Error& e) {
      fr["error"] = e.what();
    }
    j["frames"].push_back(fr);
  }
  save(cfg, "geodesics.json", j);
  save_text(cfg, "distances.csv",
            dsim::io::table_csv({"prototype", "direction", "positive", "negative", "total"}, rows));
  std::cout << "geodesics: " << rows.size() << " direction pairs\n";
}

void cmd_coords(const RunConfig& cfg) {
  const json geo = load_stage(cfg, "geodesics.json", "geodesics");
  json j = stamp(cfg, "coords", "geodesics");
  j["frames"] = json::array();
  const int k = static_cast<int>(cfg.integer("k"));
  for (const json& fr : geo.at("frames")) {
    json c;
    c["prototype"] = fr.at("prototype");
    if (fr.contains("error")) {
      c["error"] = fr["error"];
    } else {
      std::vector<dsim::CurveTotal> totals;
      for (const json& q : fr.at("pairs"))
        totals.push_back({q.at("direction").get<int>(), q.at("complete").get<bool>(),
                          q.at("total").is_null() ? 0.0 : q.at("total").get<double>()});
      try {
        c["selected"] = dsim::select_coordinates(totals, k);
      } catch (const dsim::InvalidArgument& e) {
        c["error"] = e.what();
      }
    }
    j["frames"].push_back(c);
  }
  save(cfg, "coords.json", j);
  std::cout << "coords: k = " << k << "\n";
}

struct Check {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

void cmd_verify(const RunConfig& cfg) {
  std::vector<Check> checks;
  // Stationarity of the analytic potentials.
  for (const std::string kind : {"gaussian", "curvilinear"}) {
    const auto pot = kind == "gaussian"
                         ? dsim::SyntheticPotential::gaussian(dsim::Matrix::Identity(3, 3))
                         : dsim::SyntheticPotential::default_curvilinear(3);
    const dsim::Vector half = 2.0 * pot.covariance().diagonal().cwiseSqrt();
    const double r = dsim::verify_stationarity(pot, dsim::grid_points(dsim::Vector::Zero(3), half, 5), 1e-4);
    checks.push_back({"stationarity_" + kind, r, 1e-5, r < 1e-5});
  }
  const fs::path gpath = artifact(cfg, "geodesics.json");
  if (fs::exists(gpath)) {
    const json geo = load_stage(cfg, "geodesics.json", "geodesics");
    for (const json& fr : geo.at("frames")) {
      if (fr.contains("error")) continue;
      const std::string p = "p" + fr.at("prototype").dump();
      const double ortho = fr.at("orthonormality_error").get<double>();
      checks.push_back({p + "_orthonormal_directions", ortho, 1e-8, ortho < 1e-8});
      double worst = 0.0, lo = fr.at("axis_riem_len").get<double>(), hi = lo;
      for (const json& q : fr.at("pairs")) {
        for (const char* side : {"positive", "negative"}) {
          const json& c = q.at(side);
          if (!c.contains("euclid_len")) continue;
          const double e = c.at("euclid_len").get<double>(), r = c.at("riem_len").get<double>();
          if (e > 0) worst = std::max(worst, std::abs(r - e) / e);
        }
        for (const json& end : q.at("endpoint_rho")) {
          if (!end.contains("riem_len")) continue;
          // Curves that drain into another mode measure distance to that mode.
          if (end.at("end_distance").get<double>() > 0.1 * fr.at("radius").get<double>()) continue;
          lo = std::min(lo, end.at("riem_len").get<double>());
          hi = std::max(hi, end.at("riem_len").get<double>());
        }
      }
      checks.push_back({p + "_geodesic_arc_length", worst, 1e-3, worst <= 1e-3});
      const double spread = hi > 0 ? (hi - lo) / hi : 0.0;
      checks.push_back({p + "_constant_rho_distance", spread, 0.05, spread <= 0.05});
    }
  }
  json j = stamp(cfg, "dataset", "");
  j["stage"] = "verify";
  j["checks"] = json::array();
  bool ok = true;
  for (const auto& c : checks) {
    j["checks"].push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " = " << c.value << " (limit "
              << c.threshold << ")\n";
    ok = ok && c.pass;
  }
  save(cfg, "verify.json", j);
  if (!ok) throw StageError("verification failed");
}

void cmd_report(const RunConfig& cfg) {
  const json protos = load_stage(cfg, "prototypes.json", "prototypes");
  const json axes = load_stage(cfg, "axes.json", "axes");
  const json geo = load_stage(cfg, "geodesics.json", "geodesics");
  const json coords = load_stage(cfg, "coords.json", "coords");
  const dsim::Dataset ds = load_dataset(cfg);
  json summary = stamp(cfg, "coords", "geodesics");
  summary["stage"] = "report";
  summary["config"] = cfg.to_json();
  summary["stage_hashes"] = json::object();
  for (const auto& [name, keys] : stage_keys()) summary["stage_hashes"][name] = cfg.hash(name);

  std::vector<std::vector<std::string>> t1, t2, t3, t4, t5;
  for (const json& p : protos.at("prototypes"))
    t1.push_back({p.at("id").dump(), p.at("support").dump(),
                  num_cell(p.at("data_sphere_radius").get<double>()),
                  num_cell(p.at("coord_sphere_radius").get<double>())});
  for (const json& a : axes.at("axes")) {
    if (a.contains("error")) continue;
    t2.push_back({a.at("prototype").dump(), num_cell(a.at("euclid_in").get<double>()),
                  num_cell(a.at("riem_in").get<double>()), num_cell(a.at("euclid_out").get<double>()),
                  num_cell(a.at("riem_out").get<double>())});
  }
  auto len = [](const json& q, const char* side) {
    const json& c = q.at(side);
    return c.contains("riem_len") ? c.at("riem_len").get<double>() : NAN;
  };
  const bool patches = ds.dim() == 49;
  const int tiles = static_cast<int>(cfg.integer("grid_tiles"));
  std::vector<std::string> images;
  for (std::size_t f = 0; f < geo.at("frames").size(); ++f) {
    const json& fr = geo.at("frames")[f];
    if (fr.contains("error")) continue;
    const std::string id = fr.at("prototype").dump();
    std::vector<const json*> mins;
    for (const json& q : fr.at("pairs")) {
      if (q.at("direction").get<int>() == 0)
        t3.push_back({id, num_cell(len(q, "positive")), num_cell(len(q, "negative")),
                      num_cell(len(q, "positive") + len(q, "negative"))});
      else if (q.at("complete").get<bool>())
        mins.push_back(&q);
    }
    std::stable_sort(mins.begin(), mins.end(), [&](const json* a, const json* b) {
      return len(*a, "positive") < len(*b, "positive");
    });
    for (std::size_t i = 0; i < std::min<std::size_t>(3, mins.size()); ++i)
      t4.push_back({id, mins[i]->at("direction").dump(), num_cell(len(*mins[i], "positive")),
                    num_cell(len(*mins[i], "negative")),
                    num_cell(mins[i]->at("total").get<double>())});
    const json& sel = coords.at("frames").at(f);
    if (!sel.contains("selected")) continue;
    std::vector<std::vector<dsim::Vector>> rows;
    for (const json& d : sel.at("selected")) {
      const int dir = d.get<int>();
      for (const json& q : fr.at("pairs"))
        if (q.at("direction").get<int>() == dir && dir > 0)
          t5.push_back({id, d.dump(), num_cell(len(q, "positive")), num_cell(len(q, "negative")),
                        num_cell(q.at("total").get<double>())});
      if (!patches) continue;
      for (const char* side : {"positive", "negative"}) {
        const fs::path csv = artifact(cfg, "curves/p" + id + "_g" + std::to_string(dir) + "_" + side + ".csv");
        if (!fs::exists(csv)) continue;
        // Re-read the knots from the curve CSV.
        dsim::CurvePath path;
        std::istringstream s(dsim::io::read_text(csv.string()));
        std::string line;
        std::getline(s, line);
        while (std::getline(s, line)) {
          std::istringstream ls(line);
          std::string cell;
          std::vector<double> vals;
          while (std::getline(ls, cell, ',')) vals.push_back(std::strtod(cell.c_str(), nullptr));
          path.params.push_back(vals.front());
          path.points.push_back(Eigen::Map<const dsim::Vector>(vals.data() + 1, ds.dim()));
        }
        rows.push_back(dsim::io::sample_path(path, tiles));
      }
    }
    if (patches && !rows.empty()) {
      const std::string name = "grids/p" + id + "_theta.pgm";
      save_text(cfg, name, dsim::io::pgm_bytes(dsim::io::tile_grid(rows, 7)));
      images.push_back(name);
    }
  }
  if (patches) {
    std::vector<std::vector<dsim::Vector>> rows(2);
    for (const json& p : protos.at("prototypes")) {
      rows[0].push_back(dsim::io::vector_from_json(p.at("raw")));
      rows[1].push_back(dsim::io::vector_from_json(p.at("modified")));
    }
    save_text(cfg, "grids/prototypes.pgm", dsim::io::pgm_bytes(dsim::io::tile_grid(rows, 7)));
    images.push_back("grids/prototypes.pgm");
  }

  using dsim::io::table_csv;
  const std::vector<std::pair<std::string, std::string>> tables = {
      {"table1_spheres.csv", table_csv({"prototype", "support", "data_sphere_radius", "coord_sphere_radius"}, t1)},
      {"table2_rho.csv", table_csv({"prototype", "euclid_in", "riem_in", "euclid_out", "riem_out"}, t2)},
      {"table3_max_theta.csv", table_csv({"prototype", "positive", "negative", "total"}, t3)},
      {"table4_min_theta_positive.csv", table_csv({"prototype", "direction", "positive", "negative", "total"}, t4)},
      {"table5_selected_theta.csv", table_csv({"prototype", "direction", "positive", "negative", "total"}, t5)},
  };
  summary["artifacts"] = json::object();
  for (const auto& [name, text] : tables) {
    save_text(cfg, name, text);
    summary["artifacts"][name] = dsim::io::fnv1a_hex(text);
  }
  for (const auto& name : images)
    summary["artifacts"][name] = dsim::io::fnv1a_hex(dsim::io::read_text(artifact(cfg, name).string()));
  summary["artifacts"]["distances.csv"] =
      dsim::io::fnv1a_hex(dsim::io::read_text(artifact(cfg, "distances.csv").string()));
  summary["prototypes"] = protos.at("prototypes").size();
  summary["coverage"] = protos.at("coverage");
  summary["coordinates"] = coords.at("frames");
  save(cfg, "manifest.json", summary);
  std::cout << "report: " << tables.size() << " tables, " << images.size() << " images\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype coordinate charts from the drift of a diffusion fitted to data"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "key = value configuration file");
  auto flag = [&](const char* name, const char* key, const char* help) {
    app.add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  flag("--seed", "seed", "master seed");
  flag("--beta", "beta", "smoothing parameter of the fine pass");
  flag("--data-sphere", "data_sphere", "Data Sphere size");
  flag("--coord-sphere", "coord_sphere", "Coordinate Sphere size");
  flag("--sample", "sample", "sample size drawn from the Data Sphere");
  flag("--stop-angle", "stop_angle", "Euclidean angle at which geodesics stop");
  flag("--k", "k", "target dimension");
  flag("--out", "out", "output directory");
  app.add_option("--set", sets, "override any config key (key=value)");

  const std::vector<std::pair<std::string, void (*)(const RunConfig&)>> commands = {
      {"ingest", cmd_ingest},       {"synthetic", cmd_synthetic}, {"prototypes", cmd_prototypes},
      {"axes", cmd_axes},           {"geodesics", cmd_geodesics}, {"coords", cmd_coords},
      {"verify", cmd_verify},       {"report", cmd_report},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    std::map<std::string, std::string> kv;
    if (!config_file.empty()) {
      try {
        kv = dsim::io::parse_key_values(dsim::io::read_text(config_file));
      } catch (const dsim::Error& e) {
        throw ConfigError(e.what());
      }
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [k, v] : flags) kv[k] = v;
    const RunConfig cfg(std::move(kv));
    for (const auto& [name, fn] : commands)
      if (app.got_subcommand(name)) fn(cfg);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  } catch (const dsim::Error& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  }
}
