#pragma once

// Command-line front end. run() is the whole program so tests can drive it
// in-process; tools/lrstereo.cpp only forwards argv.
//
// Exit codes: 0 success, 1 domain error (error name on stderr), 2 usage error.

#include <array>
#include <charconv>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrstereo/calibration.hpp"
#include "lrstereo/errors.hpp"
#include "lrstereo/geodesy.hpp"
#include "lrstereo/hybrid.hpp"
#include "lrstereo/io.hpp"
#include "lrstereo/stereo.hpp"
#include "lrstereo/synthetic.hpp"

namespace lrstereo::cli {

namespace fs = std::filesystem;

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::vector<DistortionShape> parse_shape_list(const std::string& text) {
  std::vector<DistortionShape> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (!item.empty()) out.push_back(parse_shape_tag(item));
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, "empty shape list");
  return out;
}

inline CalibrationResult with_refined_orientation(CalibrationResult r, const std::vector<TrainingPoint>& control) {
  r.world_pose = refine_orientation(camera_from_calibration(r), control).pose;
  return r;
}

struct CalibrateArgs {
  std::string corr, shape = "classical14", out, control;
  bool free_skew = false;
  int max_iter = LMSettings{}.max_iter;
  double prior = 0.0;
};

inline int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const CorrespondenceSet corr = correspondences_from_json(read_json_file(a.corr));
  CalibrationOptions opts;
  opts.shape = parse_shape_tag(a.shape);
  opts.fix_skew = !a.free_skew;
  opts.lm.max_iter = a.max_iter;
  opts.coefficient_prior = a.prior;
  CalibrationResult r = calibrate(corr, opts);
  if (!a.control.empty()) r = with_refined_orientation(std::move(r), training_points_from_json(read_json_file(a.control)));
  write_json_file(a.out, to_json(r));
  out << "shape " << opts.shape.describe() << " rms_px " << format_number(r.rms_error) << " iterations "
      << r.lm_iterations << " (" << r.termination << ")\n";
  return 0;
}

struct SweepArgs {
  std::string corr, corr_right, test_points, anchor, out, control_left, control_right;
  std::string shapes;
  double tie_tol = 0.1;
  double prior = SweepOptions{}.coefficient_prior;
  int max_iter = 300;
};

/// Stereo sweep: each shape calibrates both cameras and is scored by the
/// horizontal geodetic RMS of the triangulated test points. With a single
/// camera the score is the reprojection RMS of the test points' left pixels.
inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const CorrespondenceSet left = correspondences_from_json(read_json_file(a.corr));
  std::optional<CorrespondenceSet> right;
  if (!a.corr_right.empty()) right = correspondences_from_json(read_json_file(a.corr_right));
  const std::vector<TestPair> tests = test_pairs_from_json(read_json_file(a.test_points));
  const GeoAnchor anchor = parse_anchor(a.anchor);
  for (const TestPair& t : tests) {
    if (!t.truth) throw Error(ErrorCode::FormatError, "sweep test point '" + t.pair.label + "' has no xyz_m truth");
  }
  if (tests.empty()) throw Error(ErrorCode::FormatError, "sweep needs at least one test point");
  std::optional<std::vector<TrainingPoint>> control_left, control_right;
  if (!a.control_left.empty()) control_left = training_points_from_json(read_json_file(a.control_left));
  if (!a.control_right.empty()) control_right = training_points_from_json(read_json_file(a.control_right));

  SweepOptions so;
  so.lm.max_iter = a.max_iter;
  so.tie_rel_tol = a.tie_tol;
  so.coefficient_prior = a.prior;
  const std::vector<DistortionShape> shapes =
      a.shapes.empty() ? DistortionShape::default_lattice() : parse_shape_list(a.shapes);

  std::vector<std::optional<CalibrationResult>> right_results;
  const ShapeEvaluator eval = [&](const CalibrationResult& lr) {
    CameraModel lcam = camera_from_calibration(control_left ? with_refined_orientation(lr, *control_left) : lr);
    if (!right) {
      double sum = 0.0;
      for (const TestPair& t : tests) {
        const ImagePoint q = project_with(lcam, *t.truth);
        sum += std::pow(q.u - t.pair.left_px.u, 2) + std::pow(q.v - t.pair.left_px.v, 2);
      }
      return std::sqrt(sum / static_cast<double>(tests.size()));
    }
    CalibrationOptions ro;
    ro.shape = lr.distortion.shape;
    ro.lm = so.lm;
    ro.fix_skew = so.fix_skew;
    ro.validity_radius = so.validity_radius;
    ro.coefficient_prior = so.coefficient_prior;
    for (auto it = right_results.rbegin(); it != right_results.rend(); ++it) {
      if (*it && (*it)->distortion.shape.nests_in(ro.shape)) {
        ro.initial_intrinsics = (*it)->intrinsics;
        ro.initial_distortion = (*it)->distortion;
        ro.initial_poses = (*it)->poses;
        break;
      }
    }
    CalibrationResult rr = calibrate(*right, ro);
    right_results.push_back(rr);
    const StereoRig rig{lcam, camera_from_calibration(control_right ? with_refined_orientation(rr, *control_right) : rr)};
    std::vector<GeoPoint> est, truth;
    for (const TestPair& t : tests) {
      est.push_back(world_to_geodetic(triangulate(rig, t.pair).world, anchor));
      truth.push_back(world_to_geodetic(*t.truth, anchor));
    }
    return geodetic_rms(est, truth);
  };
  const SweepResult res = sweep_model_order(left, eval, shapes, so);

  Json entries = Json::array();
  for (const SweepEntry& e : res.entries) {
    Json j = {{"shape", to_json(e.shape)}, {"params", e.shape.param_count()}};
    if (e.ok()) {
      j["train_rms_px"] = e.train_rms;
      j["test_metric"] = e.test_metric.value_or(std::numeric_limits<double>::quiet_NaN());
      j["termination"] = e.result->termination;
    } else {
      j["error"] = *e.error;
    }
    entries.push_back(std::move(j));
    out << e.shape.param_count() << "  "
        << (e.ok() ? "train " + format_number(e.train_rms) + "  test " + format_number(*e.test_metric) : *e.error)
        << "\n";
  }
  const SweepEntry& sel = res.entries[static_cast<std::size_t>(res.selected)];
  Json doc = {{"metric", right ? "geodetic_rms_m" : "reprojection_rms_px"},
              {"entries", std::move(entries)},
              {"selected", sel.shape.param_count()},
              {"selected_calibration", to_json(*sel.result)}};
  write_json_file(a.out, doc);
  out << "selected " << sel.shape.describe() << "\n";
  return 0;
}

struct TrainArgs {
  std::string base, points, out;
  double lambda = 0.1;
  int epochs = TrainSettings{}.epochs;
  std::uint64_t seed = 0;
  double lr = AdamSettings{}.learning_rate;
};

inline int cmd_train_hybrid(const TrainArgs& a, std::ostream& out) {
  const CalibrationResult base = calibration_from_json(read_json_file(a.base));
  const std::vector<TrainingPoint> pts = training_points_from_json(read_json_file(a.points));
  HybridModel model = HybridModel::create(base, a.seed, a.lambda);
  TrainSettings ts;
  ts.epochs = a.epochs;
  ts.adam.learning_rate = a.lr;
  const TrainReport rep = train(model, pts, ts);
  write_json_file(a.out, to_json(model));
  out << "epochs " << rep.epochs << " rms_px " << format_number(rep.base_rms) << " -> " << format_number(rep.final_rms)
      << "\n";
  return 0;
}

struct TriangulateArgs {
  std::string left, right, pairs, out;
};

inline int cmd_triangulate(const TriangulateArgs& a, std::ostream& out) {
  const StereoRig rig{camera_from_json(read_json_file(a.left)), camera_from_json(read_json_file(a.right))};
  rig.validate();
  std::vector<LabeledPoint> pts;
  for (const TestPair& t : test_pairs_from_json(read_json_file(a.pairs))) {
    try {
      pts.push_back({t.pair.label, triangulate(rig, t.pair)});
    } catch (const Error& e) {
      const std::string msg = e.what();
      throw Error(e.code(), "pair '" + t.pair.label + "': " + msg.substr(e.name().size() + 2));
    }
    const WorldPoint& w = pts.back().point.world;
    out << t.pair.label << "  " << format_number(w.x) << " " << format_number(w.y) << " " << format_number(w.z) << "\n";
  }
  write_json_file(a.out, triangulation_to_json(pts));
  return 0;
}

struct ExportArgs {
  std::string points, anchor, out;
};

inline int cmd_export_geo(const ExportArgs& a, std::ostream& out) {
  const GeoAnchor anchor = parse_anchor(a.anchor);
  std::vector<std::pair<std::string, GeoPoint>> geo;
  for (const LabeledPoint& p : triangulation_from_json(read_json_file(a.points))) {
    geo.emplace_back(p.label, world_to_geodetic(p.point.world, anchor));
  }
  std::ostringstream doc;
  export_geojson(geo, doc);
  write_text_file(a.out, doc.str());
  out << geo.size() << " features\n";
  return 0;
}

/// Ground-truth camera written in the calibration-result format, so the
/// other subcommands can consume it.
inline Json truth_camera_json(const TrueCamera& cam, const std::vector<Pose>& board_poses) {
  CalibrationResult r;
  r.intrinsics = cam.intrinsics;
  r.distortion = cam.distortion;
  r.poses = board_poses;
  r.world_pose = cam.pose;
  r.converged = true;
  r.termination = "ground_truth";
  return to_json(r);
}

struct SimulateArgs {
  std::string config, out_dir;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const SceneConfig config = scene_config_from_json(read_json_file(a.config));
  const SyntheticScene s = generate_scene(config);
  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());

  std::vector<TestPair> marked, exact;
  for (const LongRangeTarget& t : s.targets) {
    marked.push_back({t.marked, t.world});
    exact.push_back({t.exact, t.world});
  }
  write_json_file(dir / "scene_config.json", to_json(config));
  write_json_file(dir / "left_corr.json", to_json(s.left_views));
  write_json_file(dir / "right_corr.json", to_json(s.right_views));
  write_json_file(dir / "test_pairs.json", test_pairs_to_json(marked));
  write_json_file(dir / "test_pairs_exact.json", test_pairs_to_json(exact));
  write_json_file(dir / "truth_left.json", truth_camera_json(s.left, s.left_board_poses));
  write_json_file(dir / "truth_right.json", truth_camera_json(s.right, s.right_board_poses));
  if (config.train_points > 0) {
    write_json_file(dir / "train_left.json", training_points_to_json(s.train_left));
    write_json_file(dir / "train_right.json", training_points_to_json(s.train_right));
  }
  out << "wrote scene (" << config.views << " views, " << s.targets.size() << " targets) to " << dir.string() << "\n";
  return 0;
}

struct DepthArgs {
  double z = 0.0, dd = 0.0, f = 0.0, baseline = 0.0;
  bool exact = false;
};

inline int cmd_depth_error(const DepthArgs& a, std::ostream& out) {
  if (!(a.f > 0.0) || !(a.baseline > 0.0) || !(a.z > 0.0)) {
    throw Error(ErrorCode::ConfigError, "z, f and baseline must be positive");
  }
  const double v = a.exact ? depth_error_exact(a.z, a.dd, a.f, a.baseline) : depth_error_approx(a.z, a.dd, a.f, a.baseline);
  out << format_number(v) << "\n";
  return 0;
}

}  // namespace detail

/// Parses argv and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Long-range stereo calibration and localization toolkit", "lrstereo"};
  app.require_subcommand(1);
  const auto existing = CLI::ExistingFile;

  detail::CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Zhang calibration of one camera from board correspondences");
  cal->add_option("--corr", ca.corr, "correspondence file")->required()->check(existing);
  cal->add_option("--shape", ca.shape, "classical14 | extended20 | 14..24 | num,den,tan,prism,tilt");
  cal->add_option("--out", ca.out, "calibration result file")->required();
  cal->add_flag("--fix-skew", "keep skew at zero (default)");
  cal->add_flag("--free-skew", ca.free_skew, "estimate skew");
  cal->add_option("--lm-max-iter", ca.max_iter, "LM iteration limit")->check(CLI::NonNegativeNumber);
  cal->add_option("--prior", ca.prior, "distortion coefficient prior weight, pixels")->check(CLI::NonNegativeNumber);
  cal->add_option("--control", ca.control, "surveyed points that refine the world orientation")->check(existing);

  detail::SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "model-order sweep scored on held-out test points");
  sw->add_option("--corr", sa.corr, "left-camera correspondence file")->required()->check(existing);
  sw->add_option("--corr-right", sa.corr_right, "right-camera correspondences; enables geodetic scoring")->check(existing);
  sw->add_option("--test-points", sa.test_points, "test pairs with xyz_m truth")->required()->check(existing);
  sw->add_option("--anchor", sa.anchor, "lat,lon,alt,heading")->required();
  sw->add_option("--out", sa.out, "sweep report file")->required();
  sw->add_option("--control-left", sa.control_left, "surveyed points for the left orientation")->check(existing);
  sw->add_option("--control-right", sa.control_right, "surveyed points for the right orientation")->check(existing);
  sw->add_option("--shapes", sa.shapes, "';'-separated shape tags (default 14..24 lattice)");
  sw->add_option("--tie-tol", sa.tie_tol, "relative metric band treated as a tie")->check(CLI::NonNegativeNumber);
  sw->add_option("--prior", sa.prior, "distortion coefficient prior weight, pixels")->check(CLI::NonNegativeNumber);
  sw->add_option("--lm-max-iter", sa.max_iter, "LM iteration limit")->check(CLI::NonNegativeNumber);

  detail::TrainArgs ta;
  auto* th = app.add_subcommand("train-hybrid", "train the learned residual and inverse networks");
  th->add_option("--base", ta.base, "calibration result with world_pose")->required()->check(existing);
  th->add_option("--points", ta.points, "surveyed training points for this camera")->required()->check(existing);
  th->add_option("--out", ta.out, "hybrid model file")->required();
  th->add_option("--lambda", ta.lambda, "cycle-loss weight")->check(CLI::NonNegativeNumber);
  th->add_option("--epochs", ta.epochs, "full-batch epochs")->check(CLI::NonNegativeNumber);
  th->add_option("--seed", ta.seed, "weight initialization seed");
  th->add_option("--lr", ta.lr, "ADAM learning rate")->check(CLI::PositiveNumber);

  detail::TriangulateArgs tr;
  auto* tri = app.add_subcommand("triangulate", "triangulate correspondence pairs");
  tri->add_option("--left", tr.left, "left calibration or hybrid model")->required()->check(existing);
  tri->add_option("--right", tr.right, "right calibration or hybrid model")->required()->check(existing);
  tri->add_option("--pairs", tr.pairs, "test-point file")->required()->check(existing);
  tri->add_option("--out", tr.out, "triangulation output")->required();

  detail::ExportArgs ea;
  auto* geo = app.add_subcommand("export-geo", "convert triangulated points to GeoJSON");
  geo->add_option("--points", ea.points, "triangulation output")->required()->check(existing);
  geo->add_option("--anchor", ea.anchor, "lat,lon,alt,heading")->required();
  geo->add_option("--out", ea.out, "GeoJSON file")->required();

  detail::SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic stereo scene");
  sim->add_option("--config", sim_args.config, "scene config")->required()->check(existing);
  sim->add_option("--out-dir", sim_args.out_dir, "output directory")->required();

  detail::DepthArgs da;
  auto* dep = app.add_subcommand("depth-error", "depth error of a parallel rig for a disparity error");
  dep->add_option("--z", da.z, "depth, meters")->required();
  dep->add_option("--dd", da.dd, "disparity error, pixels")->required();
  dep->add_option("--f", da.f, "focal length, pixels")->required();
  dep->add_option("--baseline", da.baseline, "baseline, meters")->required();
  dep->add_flag("--exact", da.exact, "exact law instead of the first-order one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (cal->parsed()) return detail::cmd_calibrate(ca, out);
    if (sw->parsed()) return detail::cmd_sweep(sa, out);
    if (th->parsed()) return detail::cmd_train_hybrid(ta, out);
    if (tri->parsed()) return detail::cmd_triangulate(tr, out);
    if (geo->parsed()) return detail::cmd_export_geo(ea, out);
    if (sim->parsed()) return detail::cmd_simulate(sim_args, out);
    if (dep->parsed()) return detail::cmd_depth_error(da, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace lrstereo::cli
