#pragma once

// World frame <-> WGS84 geodetic coordinates through a local ENU frame
// anchored at the rig.
//
// World frame: +Y along the anchor heading, +X to its right, +Z up.

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrstereo/errors.hpp"
#include "lrstereo/geometry.hpp"

namespace lrstereo {

namespace wgs84 {
inline constexpr double a = 6378137.0;
inline constexpr double f = 1.0 / 298.257223563;
inline constexpr double e2 = f * (2.0 - f);
inline constexpr double b = a * (1.0 - f);
}  // namespace wgs84

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  double alt = 0.0;  // meters above the ellipsoid

  void validate() const {
    if (!std::isfinite(alt) || !(lat >= -90.0 && lat <= 90.0) || !(lon > -180.0 && lon <= 180.0)) {
      throw Error(ErrorCode::ConfigError, "geodetic point out of range");
    }
  }
};

struct GeoAnchor {
  double lat = 0.0;
  double lon = 0.0;
  double alt = 0.0;
  /// Degrees clockwise from true north of the world +Y axis.
  double heading = 0.0;

  GeoPoint point() const { return {lat, lon, alt}; }

  void validate() const {
    point().validate();
    if (!(heading >= 0.0 && heading < 360.0)) throw Error(ErrorCode::ConfigError, "heading must lie in [0, 360)");
  }
};

inline Eigen::Vector3d geodetic_to_ecef(const GeoPoint& g) {
  const double phi = deg2rad(g.lat);
  const double lam = deg2rad(g.lon);
  const double s = std::sin(phi);
  const double n = wgs84::a / std::sqrt(1.0 - wgs84::e2 * s * s);
  return {(n + g.alt) * std::cos(phi) * std::cos(lam), (n + g.alt) * std::cos(phi) * std::sin(lam),
          (n * (1.0 - wgs84::e2) + g.alt) * s};
}

/// Iterative latitude refinement starting from the geocentric latitude.
inline GeoPoint ecef_to_geodetic(const Eigen::Vector3d& x) {
  const double p = std::hypot(x.x(), x.y());
  const double lon = std::atan2(x.y(), x.x());
  double phi = std::atan2(x.z(), p);
  double h = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double s = std::sin(phi);
    const double n = wgs84::a / std::sqrt(1.0 - wgs84::e2 * s * s);
    const double next = std::atan2(x.z(), p * (1.0 - wgs84::e2 * n / (n + h)));
    const double next_h = std::abs(std::cos(next)) > 1e-12 ? p / std::cos(next) - n : std::abs(x.z()) - wgs84::b;
    // Latitude can stall for one step while the height is still moving.
    const bool done = std::abs(next - phi) < 1e-14 && std::abs(next_h - h) < 1e-9;
    phi = next;
    h = next_h;
    if (done) break;
  }
  const double s = std::sin(phi);
  const double n = wgs84::a / std::sqrt(1.0 - wgs84::e2 * s * s);
  // Final height from the better-conditioned expression for this latitude.
  h = std::abs(std::cos(phi)) > 0.5 ? p / std::cos(phi) - n : x.z() / s - n * (1.0 - wgs84::e2);
  double lon_deg = rad2deg(lon);
  if (lon_deg <= -180.0) lon_deg += 360.0;
  return {rad2deg(phi), lon_deg, h};
}

/// Columns are the east, north and up unit vectors in ECEF.
inline Eigen::Matrix3d enu_basis(const GeoPoint& at) {
  const double phi = deg2rad(at.lat);
  const double lam = deg2rad(at.lon);
  Eigen::Matrix3d m;
  m.col(0) << -std::sin(lam), std::cos(lam), 0.0;
  m.col(1) << -std::sin(phi) * std::cos(lam), -std::sin(phi) * std::sin(lam), std::cos(phi);
  m.col(2) << std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi);
  return m;
}

inline Eigen::Vector3d world_to_enu(const WorldPoint& p, double heading_deg) {
  const double h = deg2rad(heading_deg);
  const double c = std::cos(h);
  const double s = std::sin(h);
  return {p.x * c + p.y * s, -p.x * s + p.y * c, p.z};
}

inline WorldPoint enu_to_world(const Eigen::Vector3d& enu, double heading_deg) {
  const double h = deg2rad(heading_deg);
  const double c = std::cos(h);
  const double s = std::sin(h);
  return {enu.x() * c - enu.y() * s, enu.x() * s + enu.y() * c, enu.z()};
}

inline GeoPoint enu_to_geodetic(const Eigen::Vector3d& enu, const GeoPoint& origin) {
  if (enu.isZero(0.0)) return origin;
  return ecef_to_geodetic(geodetic_to_ecef(origin) + enu_basis(origin) * enu);
}

inline Eigen::Vector3d geodetic_to_enu(const GeoPoint& g, const GeoPoint& origin) {
  return enu_basis(origin).transpose() * (geodetic_to_ecef(g) - geodetic_to_ecef(origin));
}

inline GeoPoint world_to_geodetic(const WorldPoint& p, const GeoAnchor& anchor) {
  anchor.validate();
  return enu_to_geodetic(world_to_enu(p, anchor.heading), anchor.point());
}

inline WorldPoint geodetic_to_world(const GeoPoint& g, const GeoAnchor& anchor) {
  anchor.validate();
  return enu_to_world(geodetic_to_enu(g, anchor.point()), anchor.heading);
}

/// RMS horizontal distance, each error measured in the ENU frame at the truth point.
inline double geodetic_rms(const std::vector<GeoPoint>& estimated, const std::vector<GeoPoint>& truth) {
  if (estimated.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch, "estimated and truth lists differ in length");
  }
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const Eigen::Vector3d d = geodetic_to_enu(estimated[i], truth[i]);
    sum += d.head<2>().squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

inline nlohmann::ordered_json geojson_document(const std::vector<std::pair<std::string, GeoPoint>>& points) {
  nlohmann::ordered_json doc;
  doc["type"] = "FeatureCollection";
  doc["features"] = nlohmann::ordered_json::array();
  for (const auto& [label, g] : points) {
    g.validate();
    nlohmann::ordered_json feature;
    feature["type"] = "Feature";
    feature["geometry"] = {{"type", "Point"}, {"coordinates", {g.lon, g.lat}}};
    feature["properties"] = {{"label", label}, {"alt_m", g.alt}};
    doc["features"].push_back(std::move(feature));
  }
  return doc;
}

inline void export_geojson(const std::vector<std::pair<std::string, GeoPoint>>& points, std::ostream& out) {
  out << geojson_document(points).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed to write GeoJSON");
}

inline std::vector<std::pair<std::string, GeoPoint>> parse_geojson(const nlohmann::json& doc) {
  std::vector<std::pair<std::string, GeoPoint>> out;
  try {
    if (doc.at("type") != "FeatureCollection") throw Error(ErrorCode::FormatError, "not a FeatureCollection");
    for (const auto& f : doc.at("features")) {
      const auto& c = f.at("geometry").at("coordinates");
      const auto& props = f.at("properties");
      out.emplace_back(props.at("label").get<std::string>(),
                       GeoPoint{c.at(1).get<double>(), c.at(0).get<double>(), props.at("alt_m").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("malformed GeoJSON: ") + e.what());
  }
  return out;
}

}  // namespace lrstereo
