#pragma once

// JSON readers and writers for every file the toolkit exchanges. Doubles are
// written in shortest round-trip form, so a write/read cycle is lossless.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrstereo/calibration.hpp"
#include "lrstereo/errors.hpp"
#include "lrstereo/geodesy.hpp"
#include "lrstereo/geometry.hpp"
#include "lrstereo/hybrid.hpp"
#include "lrstereo/mlp.hpp"
#include "lrstereo/stereo.hpp"
#include "lrstereo/synthetic.hpp"

namespace lrstereo {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Files

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::FormatError, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'");
}

inline void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

namespace detail {

/// Runs a reader and rewraps nlohmann access errors as FormatError.
template <class F>
auto parse_guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("malformed ") + what + ": " + e.what());
  }
}

inline Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vec_from(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

inline Eigen::Vector3d vec3_from(const Json& j) {
  if (j.size() != 3) throw Error(ErrorCode::FormatError, "expected a 3-vector");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline ImagePoint pixel_from(const Json& j) {
  if (j.size() != 2) throw Error(ErrorCode::FormatError, "expected a [u, v] pixel");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline Json pixel_json(const ImagePoint& p) { return Json::array({p.u, p.v}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Geometry pieces

inline Json to_json(const Intrinsics& a) {
  return {{"fx", a.fx}, {"fy", a.fy}, {"cx", a.cx}, {"cy", a.cy}, {"skew", a.skew}};
}

inline Intrinsics intrinsics_from_json(const Json& j) {
  return detail::parse_guarded("intrinsics", [&] {
    Intrinsics a{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                 j.at("cy").get<double>(), j.value("skew", 0.0)};
    a.validate();
    return a;
  });
}

inline Json to_json(const Pose& p) {
  return {{"axis_angle", detail::vec_json(p.axis_angle())}, {"t", detail::vec_json(p.translation)}};
}

inline Pose pose_from_json(const Json& j) {
  return detail::parse_guarded("pose", [&] {
    return Pose::from_axis_angle(detail::vec3_from(j.at("axis_angle")), detail::vec3_from(j.at("t")));
  });
}

inline Json to_json(const DistortionShape& s) {
  return {{"radial_num", s.radial_num_order},
          {"radial_den", s.radial_den_order},
          {"tangential", s.tangential},
          {"prism", s.prism_order},
          {"tilt", s.tilt}};
}

inline DistortionShape shape_from_json(const Json& j) {
  return detail::parse_guarded("distortion shape", [&] {
    DistortionShape s{j.at("radial_num").get<int>(), j.at("radial_den").get<int>(), j.at("tangential").get<bool>(),
                      j.at("prism").get<int>(), j.at("tilt").get<bool>()};
    s.validate();
    return s;
  });
}

/// "classical14", "extended20", a lattice parameter count ("14".."24"), or
/// an explicit "num,den,tangential,prism,tilt" tuple such as "5,5,1,3,1".
inline DistortionShape parse_shape_tag(const std::string& tag) {
  if (tag == "classical14") return DistortionShape::classical14();
  if (tag == "extended20") return DistortionShape::extended20();
  if (tag.find(',') != std::string::npos) {
    std::vector<int> v;
    std::stringstream ss(tag);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "bad shape tuple '" + tag + "'");
      }
    }
    if (v.size() != 5) throw Error(ErrorCode::ConfigError, "shape tuple needs 5 fields, got '" + tag + "'");
    DistortionShape s{v[0], v[1], v[2] != 0, v[3], v[4] != 0};
    s.validate();
    return s;
  }
  for (const DistortionShape& s : DistortionShape::default_lattice()) {
    if (tag == std::to_string(s.param_count())) return s;
  }
  throw Error(ErrorCode::ConfigError, "unknown shape '" + tag + "'");
}

inline Json to_json(const DistortionParams& k) {
  Json c = Json::array();
  for (double v : k.coeffs) c.push_back(v);
  return {{"shape", to_json(k.shape)}, {"coeffs", std::move(c)}};
}

inline DistortionParams distortion_from_json(const Json& j) {
  return detail::parse_guarded("distortion", [&] {
    return DistortionParams(shape_from_json(j.at("shape")), j.at("coeffs").get<std::vector<double>>());
  });
}

inline Json to_json(const LMSettings& s) {
  return {{"lambda_init", s.lambda_init}, {"lambda_up", s.lambda_up}, {"lambda_down", s.lambda_down},
          {"max_iter", s.max_iter},       {"cost_tol", s.cost_tol},   {"step_tol", s.step_tol},
          {"diagonal_scaling", s.diagonal_scaling}, {"lambda_max", s.lambda_max}};
}

inline LMSettings lm_settings_from_json(const Json& j) {
  return detail::parse_guarded("LM settings", [&] {
    LMSettings s;
    s.lambda_init = j.value("lambda_init", s.lambda_init);
    s.lambda_up = j.value("lambda_up", s.lambda_up);
    s.lambda_down = j.value("lambda_down", s.lambda_down);
    s.max_iter = j.value("max_iter", s.max_iter);
    s.cost_tol = j.value("cost_tol", s.cost_tol);
    s.step_tol = j.value("step_tol", s.step_tol);
    s.diagonal_scaling = j.value("diagonal_scaling", s.diagonal_scaling);
    s.lambda_max = j.value("lambda_max", s.lambda_max);
    s.validate();
    return s;
  });
}

inline Json to_json(const GeoAnchor& a) {
  return {{"lat", a.lat}, {"lon", a.lon}, {"alt", a.alt}, {"heading", a.heading}};
}

inline GeoAnchor anchor_from_json(const Json& j) {
  return detail::parse_guarded("anchor", [&] {
    GeoAnchor a{j.at("lat").get<double>(), j.at("lon").get<double>(), j.value("alt", 0.0), j.value("heading", 0.0)};
    a.validate();
    return a;
  });
}

/// "lat,lon,alt,heading" in degrees, meters, degrees.
inline GeoAnchor parse_anchor(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "bad anchor '" + text + "'");
    }
  }
  if (v.size() != 4) throw Error(ErrorCode::ConfigError, "anchor needs lat,lon,alt,heading, got '" + text + "'");
  GeoAnchor a{v[0], v[1], v[2], v[3]};
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Correspondences and calibration results

inline Json to_json(const CorrespondenceSet& c) {
  Json views = Json::array();
  for (std::size_t i = 0; i < c.views.size(); ++i) {
    Json pts = Json::array();
    for (const ImagePoint& p : c.views[i]) pts.push_back(detail::pixel_json(p));
    views.push_back({{"id", i < c.view_ids.size() ? c.view_ids[i] : "view" + std::to_string(i)}, {"points", pts}});
  }
  Json doc = {{"target", {{"rows", c.target.rows}, {"cols", c.target.cols}, {"square_size_m", c.target.square_size}}},
              {"views", std::move(views)}};
  if (c.world_reference) {
    doc["world_reference"] = {{"view", c.world_reference->view},
                              {"board_to_world", to_json(c.world_reference->board_to_world)}};
  }
  return doc;
}

inline CorrespondenceSet correspondences_from_json(const Json& j) {
  CorrespondenceSet c = detail::parse_guarded("correspondence file", [&] {
    CorrespondenceSet out;
    const Json& t = j.at("target");
    out.target = PlanarTarget::grid(t.at("rows").get<int>(), t.at("cols").get<int>(), t.at("square_size_m").get<double>());
    for (const Json& v : j.at("views")) {
      out.view_ids.push_back(v.value("id", "view" + std::to_string(out.views.size())));
      std::vector<ImagePoint> pts;
      for (const Json& p : v.at("points")) pts.push_back(detail::pixel_from(p));
      out.views.push_back(std::move(pts));
    }
    if (j.contains("world_reference")) {
      const Json& w = j.at("world_reference");
      out.world_reference = WorldReference{w.at("view").get<int>(), pose_from_json(w.at("board_to_world"))};
    }
    return out;
  });
  c.validate();
  return c;
}

inline Json to_json(const CalibrationResult& r) {
  Json poses = Json::array();
  for (const Pose& p : r.poses) poses.push_back(to_json(p));
  Json doc = {{"intrinsics", to_json(r.intrinsics)},
              {"distortion", to_json(r.distortion)},
              {"poses", std::move(poses)},
              {"rms_px", r.rms_error},
              {"per_view_rms_px", r.per_view_rms}};
  if (r.world_pose) doc["world_pose"] = to_json(*r.world_pose);
  doc["validity_radius"] = r.validity_radius;
  doc["lm"] = to_json(r.lm_settings);
  doc["fix_skew"] = r.fix_skew;
  doc["lm_iterations"] = r.lm_iterations;
  doc["converged"] = r.converged;
  doc["termination"] = r.termination;
  return doc;
}

inline CalibrationResult calibration_from_json(const Json& j) {
  return detail::parse_guarded("calibration result", [&] {
    CalibrationResult r;
    r.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    r.distortion = distortion_from_json(j.at("distortion"));
    for (const Json& p : j.at("poses")) r.poses.push_back(pose_from_json(p));
    r.rms_error = j.at("rms_px").get<double>();
    r.per_view_rms = j.value("per_view_rms_px", std::vector<double>{});
    if (j.contains("world_pose")) r.world_pose = pose_from_json(j.at("world_pose"));
    r.validity_radius = j.value("validity_radius", 0.0);
    if (j.contains("lm")) r.lm_settings = lm_settings_from_json(j.at("lm"));
    r.fix_skew = j.value("fix_skew", true);
    r.lm_iterations = j.value("lm_iterations", 0);
    r.converged = j.value("converged", true);
    r.termination = j.value("termination", std::string{});
    return r;
  });
}

// ---------------------------------------------------------------------------
// Networks and hybrid models

inline Json to_json(const Mlp& net) {
  Json weights = Json::array();
  Json biases = Json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < net.weights[l].rows(); ++i) rows.push_back(detail::vec_json(net.weights[l].row(i).transpose()));
    weights.push_back(std::move(rows));
    biases.push_back(detail::vec_json(net.biases[l]));
  }
  return {{"layer_sizes", net.layer_sizes}, {"weights", std::move(weights)}, {"biases", std::move(biases)},
          {"skip", net.skip}};
}

inline Mlp mlp_from_json(const Json& j) {
  Mlp net = detail::parse_guarded("network", [&] {
    Mlp out;
    out.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    out.skip = j.value("skip", false);
    for (const Json& w : j.at("weights")) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(w.size()), w.empty() ? 0 : static_cast<Eigen::Index>(w.at(0).size()));
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (static_cast<Eigen::Index>(w.at(i).size()) != m.cols()) {
          throw Error(ErrorCode::DimensionMismatch, "ragged weight matrix");
        }
        m.row(static_cast<Eigen::Index>(i)) = detail::vec_from(w.at(i)).transpose();
      }
      out.weights.push_back(std::move(m));
    }
    for (const Json& b : j.at("biases")) out.biases.push_back(detail::vec_from(b));
    return out;
  });
  net.validate();
  return net;
}

inline Json to_json(const HybridModel& m) {
  return {{"base", to_json(m.base)},
          {"residual_net", to_json(m.residual_net)},
          {"inverse_net", to_json(m.inverse_net)},
          {"lambda_cycle", m.lambda_cycle},
          {"seed", m.seed},
          {"normalization_constants",
           {{"input_scale", detail::vec_json(m.input_scale)}, {"output_bound", detail::vec_json(m.output_bound)}}}};
}

inline HybridModel hybrid_from_json(const Json& j) {
  HybridModel m = detail::parse_guarded("hybrid model", [&] {
    HybridModel out;
    out.base = calibration_from_json(j.at("base"));
    out.residual_net = mlp_from_json(j.at("residual_net"));
    out.inverse_net = mlp_from_json(j.at("inverse_net"));
    out.lambda_cycle = j.at("lambda_cycle").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
    const Json& nc = j.at("normalization_constants");
    out.input_scale = detail::vec_from(nc.at("input_scale"));
    out.output_bound = detail::vec_from(nc.at("output_bound"));
    return out;
  });
  m.validate();
  return m;
}

inline bool is_hybrid_document(const Json& j) { return j.is_object() && j.contains("residual_net"); }

/// A camera from either a calibration result (needs world_pose) or a hybrid
/// model file.
inline CameraModel camera_from_json(const Json& j) {
  if (is_hybrid_document(j)) {
    auto m = std::make_shared<HybridModel>(hybrid_from_json(j));
    if (!m->base.world_pose) {
      throw Error(ErrorCode::ConfigError, "hybrid base calibration has no world pose");
    }
    return {m->base.intrinsics, m->base.distortion, *m->base.world_pose, m};
  }
  return camera_from_calibration(calibration_from_json(j));
}

// ---------------------------------------------------------------------------
// Points

/// A correspondence pair, optionally with the surveyed world position.
struct TestPair {
  CorrespondencePair pair;
  std::optional<WorldPoint> truth;
};

inline Json test_pairs_to_json(const std::vector<TestPair>& pairs) {
  Json arr = Json::array();
  for (const TestPair& p : pairs) {
    Json e = {{"label", p.pair.label}, {"left", detail::pixel_json(p.pair.left_px)},
              {"right", detail::pixel_json(p.pair.right_px)}};
    if (p.truth) e["xyz_m"] = detail::vec_json(p.truth->vec());
    arr.push_back(std::move(e));
  }
  return {{"pairs", std::move(arr)}};
}

inline std::vector<TestPair> test_pairs_from_json(const Json& j) {
  return detail::parse_guarded("test-point file", [&] {
    std::vector<TestPair> out;
    for (const Json& e : j.at("pairs")) {
      TestPair p;
      p.pair.label = e.value("label", "P" + std::to_string(out.size() + 1));
      p.pair.left_px = detail::pixel_from(e.at("left"));
      p.pair.right_px = detail::pixel_from(e.at("right"));
      if (e.contains("xyz_m")) p.truth = WorldPoint::from(detail::vec3_from(e.at("xyz_m")));
      out.push_back(std::move(p));
    }
    return out;
  });
}

struct LabeledPoint {
  std::string label;
  TriangulatedPoint point;
};

inline Json triangulation_to_json(const std::vector<LabeledPoint>& pts) {
  Json arr = Json::array();
  for (const LabeledPoint& p : pts) {
    arr.push_back({{"label", p.label},
                   {"xyz_m", detail::vec_json(p.point.world.vec())},
                   {"reproj_err_px", p.point.reproj_err_px},
                   {"condition", p.point.condition}});
  }
  return {{"points", std::move(arr)}};
}

inline std::vector<LabeledPoint> triangulation_from_json(const Json& j) {
  return detail::parse_guarded("triangulation file", [&] {
    std::vector<LabeledPoint> out;
    for (const Json& e : j.at("points")) {
      LabeledPoint p;
      p.label = e.value("label", "P" + std::to_string(out.size() + 1));
      p.point.world = WorldPoint::from(detail::vec3_from(e.at("xyz_m")));
      p.point.reproj_err_px = e.value("reproj_err_px", 0.0);
      p.point.condition = e.value("condition", 0.0);
      out.push_back(std::move(p));
    }
    return out;
  });
}

/// Surveyed world points with their pixel in one camera.
inline Json training_points_to_json(const std::vector<TrainingPoint>& pts) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    arr.push_back({{"label", "S" + std::to_string(i + 1)},
                   {"xyz_m", detail::vec_json(pts[i].world.vec())},
                   {"px", detail::pixel_json(pts[i].pixel)}});
  }
  return {{"points", std::move(arr)}};
}

inline std::vector<TrainingPoint> training_points_from_json(const Json& j) {
  return detail::parse_guarded("training-point file", [&] {
    std::vector<TrainingPoint> out;
    for (const Json& e : j.at("points")) {
      out.push_back({WorldPoint::from(detail::vec3_from(e.at("xyz_m"))), detail::pixel_from(e.at("px"))});
    }
    return out;
  });
}

// ---------------------------------------------------------------------------
// Scene configuration

inline Json to_json(const SceneConfig& c) {
  return {{"baseline_m", c.baseline_m},
          {"focal_px", c.focal_px},
          {"image_size", {c.image_width, c.image_height}},
          {"board", {{"rows", c.board_rows}, {"cols", c.board_cols}, {"square_size_m", c.square_size_m}}},
          {"views", c.views},
          {"board_tilt_rad", c.board_tilt_rad},
          {"noise_sigma_px", c.noise_sigma_px},
          {"true_distortion", to_json(c.true_distortion)},
          {"extra_warp",
           {{"kind", warp_kind_name(c.extra_warp.kind)},
            {"amplitude_px", c.extra_warp.amplitude},
            {"center", c.extra_warp.center},
            {"width", c.extra_warp.width}}},
          {"targets_m", c.targets_m},
          {"seed", c.seed},
          {"marking_upscale", c.marking_upscale},
          {"train_points", c.train_points},
          {"anchor", to_json(c.anchor)}};
}

/// Every key is optional; missing keys keep the SceneConfig defaults.
inline SceneConfig scene_config_from_json(const Json& j) {
  SceneConfig c = detail::parse_guarded("scene config", [&] {
    SceneConfig out;
    if (!j.is_object()) throw Error(ErrorCode::FormatError, "scene config must be a JSON object");
    out.baseline_m = j.value("baseline_m", out.baseline_m);
    out.focal_px = j.value("focal_px", out.focal_px);
    if (j.contains("image_size")) {
      out.image_width = j.at("image_size").at(0).get<int>();
      out.image_height = j.at("image_size").at(1).get<int>();
    }
    if (j.contains("board")) {
      const Json& b = j.at("board");
      out.board_rows = b.value("rows", out.board_rows);
      out.board_cols = b.value("cols", out.board_cols);
      out.square_size_m = b.value("square_size_m", out.square_size_m);
    }
    out.views = j.value("views", out.views);
    out.board_tilt_rad = j.value("board_tilt_rad", out.board_tilt_rad);
    out.noise_sigma_px = j.value("noise_sigma_px", out.noise_sigma_px);
    if (j.contains("true_distortion")) out.true_distortion = distortion_from_json(j.at("true_distortion"));
    if (j.contains("extra_warp")) {
      const Json& w = j.at("extra_warp");
      out.extra_warp.kind = parse_warp_kind(w.value("kind", std::string("none")));
      out.extra_warp.amplitude = w.value("amplitude_px", out.extra_warp.amplitude);
      out.extra_warp.center = w.value("center", out.extra_warp.center);
      out.extra_warp.width = w.value("width", out.extra_warp.width);
    }
    out.targets_m = j.value("targets_m", out.targets_m);
    out.seed = j.value("seed", out.seed);
    out.marking_upscale = j.value("marking_upscale", out.marking_upscale);
    out.train_points = j.value("train_points", out.train_points);
    if (j.contains("anchor")) out.anchor = anchor_from_json(j.at("anchor"));
    return out;
  });
  c.validate();
  return c;
}

}  // namespace lrstereo
