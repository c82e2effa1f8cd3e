#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <map>

#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/depth_gt.hpp"
#include "tactile_cal/sensor_sim.hpp"

using namespace tactile_cal;
using namespace tactile_cal::mesh;

namespace {

// Unit cube [0,1]^3 as a 12-facet soup, outward winding.
std::vector<std::array<Vec3, 3>> cube_facets(double lo = 0.0, double hi = 1.0) {
  const Vec3 v[8] = {{lo, lo, lo}, {hi, lo, lo}, {hi, hi, lo}, {lo, hi, lo},
                     {lo, lo, hi}, {hi, lo, hi}, {hi, hi, hi}, {lo, hi, hi}};
  const int f[12][3] = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                        {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
  std::vector<std::array<Vec3, 3>> out;
  for (const auto& t : f) out.push_back({v[t[0]], v[t[1]], v[t[2]]});
  return out;
}

std::vector<std::uint8_t> binary_stl(const std::vector<std::array<Vec3, 3>>& facets, std::uint32_t claimed) {
  std::vector<std::uint8_t> out(84, 0);
  std::memcpy(out.data(), "solid but actually binary", 25);  // header text must not fool the parser
  std::memcpy(out.data() + 80, &claimed, 4);
  for (const auto& f : facets) {
    std::uint8_t rec[50] = {};
    const float junk_normal[3] = {9, 9, 9};
    std::memcpy(rec, junk_normal, 12);
    for (int k = 0; k < 3; ++k) {
      const float xyz[3] = {static_cast<float>(f[k][0]), static_cast<float>(f[k][1]), static_cast<float>(f[k][2])};
      std::memcpy(rec + 12 + 12 * k, xyz, 12);
    }
    out.insert(out.end(), rec, rec + 50);
  }
  return out;
}

std::span<const std::uint8_t> bytes_of(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Signed volume via the divergence theorem; positive for outward winding.
double signed_volume(const TriangleMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles) v += dot(m.vertices[t[0]], cross(m.vertices[t[1]], m.vertices[t[2]])) / 6.0;
  return v;
}

// Every undirected edge used by exactly two triangles, once in each direction.
bool is_closed_manifold(const TriangleMesh& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& t : m.triangles) {
    for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
  }
  for (const auto& [e, n] : directed) {
    if (n != 1) return false;
    const auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

SensorGeometry centred_grid(std::size_t rows, std::size_t cols, double pitch, double cx = 0.0, double cy = 0.0) {
  SensorGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.pitch_mm = pitch;
  g.center_x_mm = cx;
  g.center_y_mm = cy;
  return g;
}

}  // namespace

TEST_CASE("binary STL cube: 12 facets weld to 8 vertices", "[depth_gt][stl]") {
  const auto data = binary_stl(cube_facets(), 12);
  const auto m = parse_stl(data);
  CHECK(m.size() == 12);
  CHECK(m.vertices.size() == 8);
  CHECK(is_closed_manifold(m));
  CHECK(signed_volume(m) == Catch::Approx(1.0));
  // stored (junk) normals are ignored; recomputed ones are unit and axis-aligned
  for (std::size_t t = 0; t < m.size(); ++t) {
    const auto n = m.normal(t);
    CHECK(dot(n, n) == Catch::Approx(1.0));
    CHECK(std::abs(n[0]) + std::abs(n[1]) + std::abs(n[2]) == Catch::Approx(1.0));
  }
}

TEST_CASE("ASCII STL single facet", "[depth_gt][stl]") {
  const std::string doc =
      "solid tri\n"
      "  facet normal 0 0 1\n"
      "    outer loop\n"
      "      vertex 0 0 0\n"
      "      vertex 1 0 0\n"
      "      vertex 0 1 0\n"
      "    endloop\n"
      "  endfacet\n"
      "endsolid tri\n";
  const auto m = parse_stl(bytes_of(doc));
  CHECK(m.size() == 1);
  CHECK(m.vertices.size() == 3);
  CHECK(m.normal(0)[2] == Catch::Approx(1.0));
}

TEST_CASE("STL errors", "[depth_gt][stl]") {
  auto facets = cube_facets();
  std::vector<std::array<Vec3, 3>> fifty;
  for (int i = 0; i < 50; ++i) fifty.push_back(facets[static_cast<std::size_t>(i % 12)]);
  CHECK_THROWS_AS(parse_stl(binary_stl(fifty, 100)), ParseError);
  auto truncated = binary_stl(facets, 12);
  truncated.resize(truncated.size() - 7);
  CHECK_THROWS_AS(parse_stl(truncated), ParseError);

  CHECK_THROWS_AS(parse_stl(bytes_of("hello")), FormatError);
  CHECK_THROWS_AS(parse_stl(bytes_of("")), FormatError);

  try {
    parse_stl(bytes_of("solid x\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0\nendloop\n"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
  }
  CHECK_THROWS_AS(parse_stl(bytes_of("solid x\nfacet normal 0 0 1\nouter loop\n")), ParseError);
  CHECK_THROWS_AS(parse_stl(bytes_of("solid x\n")), ParseError);
}

TEST_CASE("degenerate facets are dropped at load", "[depth_gt][stl]") {
  auto facets = cube_facets();
  facets.push_back({Vec3{0, 0, 0}, Vec3{1, 1, 1}, Vec3{2, 2, 2}});  // collinear
  facets.push_back({Vec3{0, 0, 0}, Vec3{0, 0, 0}, Vec3{1, 0, 0}});  // repeated vertex
  const auto m = parse_stl(binary_stl(facets, 14));
  CHECK(m.size() == 12);
}

TEST_CASE("STL writers round-trip through the parser", "[depth_gt][stl]") {
  const auto m = make_pill(16);
  const auto bin = parse_stl(write_stl_binary(m));
  CHECK(bin.size() == m.size());
  const auto txt = write_stl_ascii(m);
  const auto asc = parse_stl(bytes_of(txt));
  CHECK(asc == m);  // shortest round-trip formatting keeps doubles exact
  CHECK(signed_volume(bin) == Catch::Approx(signed_volume(m)).epsilon(1e-6));
}

TEST_CASE("mesh_to_depthmap: cube top face is a constant 1.0", "[depth_gt]") {
  const auto m = parse_stl(binary_stl(cube_facets(), 12));
  // grid footprint strictly inside the cube's top face
  const auto g = centred_grid(9, 9, 0.1, 0.5, 0.5);
  const auto d = mesh_to_depthmap(m, g);
  for (double v : d.values.values()) CHECK(v == Catch::Approx(1.0).margin(1e-12));
  CHECK(d.pitch_mm == 0.1);
  CHECK(d.units == Units::mm);
}

TEST_CASE("mesh_to_depthmap: pixels off the footprint are 0", "[depth_gt]") {
  const auto m = parse_stl(binary_stl(cube_facets(), 12));
  const auto g = centred_grid(30, 30, 0.1, 0.5, 0.5);  // 3 mm wide, cube is 1 mm
  const auto d = mesh_to_depthmap(m, g);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double x = g.x_of_col(static_cast<double>(c)), y = g.y_of_row(static_cast<double>(r));
      const bool inside = x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0;
      const bool outside = x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0;
      if (inside) CHECK(d.values(r, c) == Catch::Approx(1.0));
      if (outside) CHECK(d.values(r, c) == 0.0);
    }
  }
}

TEST_CASE("mesh_to_depthmap: no hit is an empty-intersection error", "[depth_gt]") {
  const auto m = parse_stl(binary_stl(cube_facets(), 12));
  CHECK_THROWS_AS(mesh_to_depthmap(m, centred_grid(10, 10, 0.1, 50.0, 50.0)), EmptyIntersectionError);
  CHECK_THROWS_AS(mesh_to_depthmap(TriangleMesh{}, centred_grid(10, 10, 0.1)), EmptyIntersectionError);
}

TEST_CASE("mesh_to_depthmap: view axis selects the face", "[depth_gt]") {
  // 1 x 1 x 3 box seen along +x has a 3 mm tall face: depth is the 1 mm x extent
  MeshBuilder b;
  for (auto f : cube_facets()) {
    for (auto& v : f) v[2] *= 3.0;
    b.add(f[0], f[1], f[2]);
  }
  const auto m = b.take();
  const auto g = centred_grid(5, 5, 0.1, 0.5, 1.5);  // (u, v) = (y, z) for +x
  const auto d = mesh_to_depthmap(m, g, {ViewAxis::pos_x});
  for (double v : d.values.values()) CHECK(v == Catch::Approx(1.0));
  const auto dz = mesh_to_depthmap(m, centred_grid(5, 5, 0.1, 0.5, -0.5), {ViewAxis::neg_z});  // v = -y
  for (double v : dz.values.values()) CHECK(v == Catch::Approx(3.0));
}

TEST_CASE("mesh_to_depthmap: hemisphere matches the analytic cap within half a pitch", "[depth_gt]") {
  const double R = 5.0, pitch = 0.1;
  // apex up: revolve a semicircle about x, keep z >= 0
  const auto m = half_revolution(sphere_profile(R, 256), 256);
  CHECK(is_closed_manifold(m));
  CHECK(signed_volume(m) == Catch::Approx(2.0 / 3.0 * std::numbers::pi * R * R * R).epsilon(1e-3));
  const auto g = centred_grid(121, 121, pitch);
  const auto d = mesh_to_depthmap(m, g);
  auto cap = [&](double r) { return r < R ? std::sqrt(R * R - r * r) : 0.0; };
  CHECK(d.values(60, 60) > d.values(60, 60 + 45));
  CHECK(d.values(60, 60) == Catch::Approx(R).margin(1e-3));
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double rad = std::hypot(g.x_of_col(static_cast<double>(c)), g.y_of_row(static_cast<double>(r)));
      // analytic value somewhere within half a pitch of the pixel centre,
      // plus the tessellation sag (R (1 - cos(pi / 512)) ~ 1e-4)
      const double hi = cap(std::max(0.0, rad - 0.5 * pitch)) + 1e-3;
      const double lo = cap(rad + 0.5 * pitch) - 1e-3;
      REQUIRE(d.values(r, c) <= hi);
      REQUIRE(d.values(r, c) >= lo);
    }
  }
}

TEST_CASE("mesh_to_depthmap: reference plane override", "[depth_gt]") {
  const auto m = parse_stl(binary_stl(cube_facets(), 12));
  const auto d = mesh_to_depthmap(m, centred_grid(5, 5, 0.1, 0.5, 0.5), {ViewAxis::pos_z, 0.25});
  for (double v : d.values.values()) CHECK(v == Catch::Approx(0.75));
  const auto clamped = mesh_to_depthmap(m, centred_grid(5, 5, 0.1, 0.5, 0.5), {ViewAxis::pos_z, 4.0});
  for (double v : clamped.values.values()) CHECK(v == 0.0);
}

TEST_CASE("ray parity is even on watertight convex meshes", "[depth_gt][property]") {
  const auto cube = parse_stl(binary_stl(cube_facets(), 12));
  const auto dome = half_revolution(sphere_profile(2.0, 40), 40);
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const double u = rng.uniform(0.0, 1.0), v = rng.uniform(0.0, 1.0);
    const auto h = ray_hits(cube, u, v);
    REQUIRE(h.size() == 2);
    CHECK(h[0] == Catch::Approx(1.0));
    CHECK(h[1] == Catch::Approx(0.0).margin(1e-12));
    const double x = rng.uniform(-2.5, 2.5), y = rng.uniform(-2.5, 2.5);
    REQUIRE(ray_hits(dome, x, y).size() % 2 == 0);
  }
}

TEST_CASE("resolution refinement keeps coincident pixels and bounds the in-between ones", "[depth_gt][property]") {
  const auto m = make_pill(32);
  const double pitch = 0.2;
  const auto coarse = mesh_to_depthmap(m, centred_grid(31, 61, pitch));
  const auto fine = mesh_to_depthmap(m, centred_grid(61, 121, pitch / 2));
  for (std::size_t r = 0; r < 31; ++r) {
    for (std::size_t c = 0; c < 61; ++c) REQUIRE(fine.values(2 * r, 2 * c) == Catch::Approx(coarse.values(r, c)).margin(1e-12));
  }
  // Between two converged (in-contact) neighbours, the fine pixel moves by at
  // most one coarse pitch times the local slope.
  for (std::size_t r = 0; r < 31; ++r) {
    for (std::size_t c = 0; c + 2 < 61; ++c) {
      const double a = coarse.values(r, c), b = coarse.values(r, c + 1), z = coarse.values(r, c + 2);
      if (a <= 0.0 || b <= 0.0 || z <= 0.0) continue;
      const double slope = std::max(std::abs(b - a), std::abs(z - b)) / pitch;
      const double mid = fine.values(2 * r, 2 * c + 1);
      CHECK(std::abs(mid - a) <= pitch * slope + 1e-9);
    }
  }
}

TEST_CASE("procedural test objects are closed and fit a 10 mm square", "[depth_gt]") {
  for (const auto& [name, m] : {std::pair{"hemispheres", make_hemispheres()}, std::pair{"pill", make_pill()},
                                std::pair{"pawn", make_pawn()}}) {
    INFO(name);
    CHECK(is_closed_manifold(m));
    CHECK(signed_volume(m) > 0.0);
    for (const auto& v : m.vertices) {
      CHECK(std::abs(v[0]) <= 5.0 + 1e-12);
      CHECK(std::abs(v[1]) <= 5.0 + 1e-12);
      CHECK(v[2] >= 0.0);
    }
  }
  const double hemi = 2.0 / 3.0 * std::numbers::pi * std::pow(2.4, 3);
  CHECK(signed_volume(make_hemispheres(96)) == Catch::Approx(2 * hemi).epsilon(2e-3));
  const double pill = 0.5 * (std::numbers::pi * 6.25 * 5.0 + 4.0 / 3.0 * std::numbers::pi * std::pow(2.5, 3));
  CHECK(signed_volume(make_pill(96)) == Catch::Approx(pill).epsilon(2e-3));
}

TEST_CASE("object depth maps drive the simulator", "[depth_gt]") {
  const auto sensor = default_sensor();
  const auto grid = object_grid(sensor);
  const auto illum = sim::default_illumination(sensor, 0.0);

  const auto hemis = mesh_to_depthmap(make_hemispheres(), grid);
  CHECK(max_value(hemis.values) == Catch::Approx(2.4).margin(0.01));
  const auto pressed = sim::render_object(hemis, 0.0, 0.0, 1.0, illum, 0);
  // two separate contact patches, one either side of x = 0
  std::size_t left = 0, right = 0, centre_line = 0;
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      if (pressed.ground_truth.values(r, c) <= 0.0) continue;
      const double x = grid.x_of_col(static_cast<double>(c));
      (x < 0 ? left : right) += 1;
      if (std::abs(x) < 0.5) ++centre_line;
    }
  }
  CHECK(left > 100);
  CHECK(right > 100);
  CHECK(centre_line == 0);

  // the pawn's neck is reached by a 1 mm press
  const auto pawn = mesh_to_depthmap(make_pawn(), grid);
  const auto gt = sim::render_object(pawn, 0.0, 0.0, 1.0, illum, 0).ground_truth;
  const auto neck_col = static_cast<std::size_t>(std::lround(grid.col_of_x(0.45)));
  const auto mid_row = static_cast<std::size_t>(std::lround(grid.row_of_y(0.0)));
  CHECK(gt.values(mid_row, neck_col) > 0.2);
}
