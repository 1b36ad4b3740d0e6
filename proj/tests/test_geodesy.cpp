#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lrstereo/geodesy.hpp"

using namespace lrstereo;

namespace {

const GeoAnchor kAnchor{19.0, 72.8, 0.0, 0.0};

}  // namespace

TEST(Geodesy, OriginIsAnchor) {
  const GeoAnchor anchor{19.0764, 72.8777, 14.5, 37.0};
  const GeoPoint g = world_to_geodetic({0, 0, 0}, anchor);
  EXPECT_EQ(g.lat, anchor.lat);
  EXPECT_EQ(g.lon, anchor.lon);
  EXPECT_EQ(g.alt, anchor.alt);
}

// Reference values from a 50-digit mpmath evaluation of the same ECEF/ENU
// chain on WGS84 with a closed-form inverse.
TEST(Geodesy, ReferenceValues) {
  const GeoPoint north = world_to_geodetic({0, 1000, 0}, kAnchor);
  EXPECT_NEAR(north.lat - 19.0, 0.00903406631807079, 1e-12);
  EXPECT_NEAR(north.lon, 72.8, 1e-12);
  EXPECT_NEAR(north.alt, 0.0788371140300137, 1e-8);

  const GeoPoint a = enu_to_geodetic({1234.5, -876.25, 42}, kAnchor.point());
  EXPECT_NEAR(a.lat, 18.992083573222622, 1e-12);
  EXPECT_NEAR(a.lon, 72.811723904742431, 1e-12);
  EXPECT_NEAR(a.alt, 42.179958591565158, 1e-7);

  const GeoPoint b = enu_to_geodetic({-50000, 70000, 300}, kAnchor.point());
  EXPECT_NEAR(b.lat, 19.631676456527468, 1e-11);
  EXPECT_NEAR(b.lon, 72.323362951208109, 1e-11);
  EXPECT_NEAR(b.alt, 882.14695539286476, 1e-6);
}

TEST(Geodesy, MeridianDegreeAtEquator) {
  const GeoPoint g = world_to_geodetic({0, 110574, 0}, GeoAnchor{0, 0, 0, 0});
  EXPECT_NEAR(g.lat, 1.0, 1e-3);
}

TEST(Geodesy, EcefKnownPoints) {
  const Eigen::Vector3d eq = geodetic_to_ecef({0, 0, 0});
  EXPECT_NEAR(eq.x(), wgs84::a, 1e-9);
  const Eigen::Vector3d pole = geodetic_to_ecef({90, 0, 0});
  EXPECT_NEAR(pole.z(), wgs84::b, 1e-9);
  const GeoPoint back = ecef_to_geodetic({0, 0, wgs84::b + 100});
  EXPECT_NEAR(back.lat, 90.0, 1e-12);
  EXPECT_NEAR(back.alt, 100.0, 1e-8);
}

TEST(Geodesy, RoundTripWithin100km) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> horiz(-100000, 100000);
  std::uniform_real_distribution<double> up(-500, 3000);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d enu(horiz(rng), horiz(rng), up(rng));
    const GeoPoint g = enu_to_geodetic(enu, kAnchor.point());
    worst = std::max(worst, (geodetic_to_enu(g, kAnchor.point()) - enu).norm());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Geodesy, WorldRoundTrip) {
  const GeoAnchor anchor{-33.9, 151.2, 40, 123.4};
  const WorldPoint p{-350.25, 4800.5, 12.0};
  const WorldPoint q = geodetic_to_world(world_to_geodetic(p, anchor), anchor);
  EXPECT_LT((q.vec() - p.vec()).norm(), 1e-6);
}

TEST(Geodesy, HeadingTurnsWorldY) {
  GeoAnchor east = kAnchor;
  east.heading = 90.0;
  const GeoPoint a = world_to_geodetic({0, 1000, 0}, east);
  const GeoPoint b = enu_to_geodetic({1000, 0, 0}, kAnchor.point());
  EXPECT_NEAR(a.lat, b.lat, 1e-12);
  EXPECT_NEAR(a.lon, b.lon, 1e-12);
}

TEST(Geodesy, HeadingInvariance) {
  const Eigen::Vector3d enu(2500, -1200, 35);
  const GeoPoint ref = enu_to_geodetic(enu, kAnchor.point());
  for (const double h : {0.0, 15.0, 90.0, 181.5, 359.0}) {
    GeoAnchor anchor = kAnchor;
    anchor.heading = h;
    const WorldPoint w = enu_to_world(enu, h);
    const GeoPoint g = world_to_geodetic(w, anchor);
    EXPECT_LT(geodetic_to_enu(g, ref).norm(), 1e-9) << h;
  }
}

TEST(Geodesy, AnchorValidation) {
  EXPECT_THROW((GeoAnchor{19, 72, 0, 360}.validate()), Error);
  EXPECT_THROW((GeoAnchor{19, 72, 0, -1}.validate()), Error);
  EXPECT_THROW((GeoAnchor{91, 72, 0, 0}.validate()), Error);
  EXPECT_NO_THROW((GeoAnchor{-90, 180, 0, 0}.validate()));
}

TEST(GeodeticRms, Examples) {
  const GeoPoint o = kAnchor.point();
  EXPECT_EQ(geodetic_rms({o, o}, {o, o}), 0.0);
  EXPECT_NEAR(geodetic_rms({enu_to_geodetic({3, 4, 0}, o)}, {o}), 5.0, 1e-6);
  const GeoPoint far = enu_to_geodetic({5000, 0, 0}, o);
  EXPECT_NEAR(geodetic_rms({enu_to_geodetic({1, 0, 0}, o), enu_to_geodetic({0, -7, 0}, far)}, {o, far}), 5.0, 1e-6);
}

TEST(GeodeticRms, LengthMismatch) {
  try {
    geodetic_rms({kAnchor.point()}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(GeoJson, EmptyCollection) {
  EXPECT_EQ(geojson_document({}).dump(), R"({"type":"FeatureCollection","features":[]})");
}

TEST(GeoJson, OnePointIsLonLat) {
  const auto doc = geojson_document({{"mast", GeoPoint{19.5, 72.25, 10}}});
  ASSERT_EQ(doc["features"].size(), 1u);
  const auto& f = doc["features"][0];
  EXPECT_EQ(f["type"], "Feature");
  EXPECT_EQ(f["geometry"]["type"], "Point");
  EXPECT_EQ(f["geometry"]["coordinates"][0], 72.25);
  EXPECT_EQ(f["geometry"]["coordinates"][1], 19.5);
  EXPECT_EQ(f["properties"]["label"], "mast");
}

TEST(GeoJson, RoundTrip) {
  std::vector<std::pair<std::string, GeoPoint>> pts;
  for (int i = 0; i < 7; ++i) {
    pts.emplace_back("t" + std::to_string(i), world_to_geodetic({100.0 * i, 700.0 * i + 100, 3.0 * i}, kAnchor));
  }
  std::stringstream ss;
  export_geojson(pts, ss);
  const auto back = parse_geojson(nlohmann::json::parse(ss.str()));
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(back[i].first, pts[i].first);
    EXPECT_NEAR(back[i].second.lat, pts[i].second.lat, 1e-9);
    EXPECT_NEAR(back[i].second.lon, pts[i].second.lon, 1e-9);
    EXPECT_NEAR(back[i].second.alt, pts[i].second.alt, 1e-9);
  }
}

TEST(GeoJson, MalformedInput) {
  try {
    parse_geojson(nlohmann::json::parse(R"({"type":"FeatureCollection","features":[{"geometry":{}}]})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
}
