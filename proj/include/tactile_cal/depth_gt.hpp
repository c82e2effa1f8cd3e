#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/core/text.hpp"

namespace tactile_cal::mesh {

using Vec3 = std::array<double, 3>;

inline Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  [[nodiscard]] std::size_t size() const noexcept { return triangles.size(); }

  /// Unit normal from the winding (right-hand rule).
  [[nodiscard]] Vec3 normal(std::size_t t) const {
    const auto& tri = triangles[t];
    Vec3 n = cross(sub(vertices[tri[1]], vertices[tri[0]]), sub(vertices[tri[2]], vertices[tri[0]]));
    const double len = std::sqrt(dot(n, n));
    return {n[0] / len, n[1] / len, n[2] / len};
  }

  void validate() const {
    for (const auto& t : triangles) {
      for (auto i : t) {
        if (i >= vertices.size()) throw ValidationError("triangle index out of range");
      }
    }
  }

  bool operator==(const TriangleMesh&) const = default;
};

/// Builds a mesh from a triangle soup: vertices welded by exact coordinate
/// equality, zero-area triangles dropped.
class MeshBuilder {
 public:
  void add(const Vec3& a, const Vec3& b, const Vec3& c) {
    const std::array<std::uint32_t, 3> t = {index_of(a), index_of(b), index_of(c)};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return;
    const Vec3 n = cross(sub(b, a), sub(c, a));
    if (dot(n, n) == 0.0) return;
    mesh_.triangles.push_back(t);
  }

  TriangleMesh take() { return std::move(mesh_); }

 private:
  std::uint32_t index_of(const Vec3& v) {
    // +0.0 and -0.0 weld together through operator<
    const auto [it, fresh] = index_.try_emplace(v, static_cast<std::uint32_t>(mesh_.vertices.size()));
    if (fresh) mesh_.vertices.push_back(v);
    return it->second;
  }

  TriangleMesh mesh_;
  std::map<Vec3, std::uint32_t> index_;
};

// ------------------------------------------------------------------ STL

namespace detail {

inline bool starts_with_solid(std::span<const std::uint8_t> data) {
  std::size_t i = 0;
  while (i < data.size() && std::isspace(data[i])) ++i;
  return data.size() - i >= 5 && std::memcmp(data.data() + i, "solid", 5) == 0;
}

inline TriangleMesh parse_binary_stl(std::span<const std::uint8_t> data) {
  std::uint32_t count = 0;
  std::memcpy(&count, data.data() + 80, 4);
  const std::size_t records = (data.size() - 84) / 50;
  if ((data.size() - 84) % 50 != 0 || records != count) {
    throw ParseError(0, "binary STL header claims " + std::to_string(count) + " facets but the file holds " +
                            std::to_string(data.size() - 84) + " bytes of records (" + std::to_string(records) +
                            " whole)");
  }
  MeshBuilder b;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = data.data() + 84 + 50 * i;
    std::array<Vec3, 3> v{};
    for (int k = 0; k < 3; ++k) {
      float xyz[3];
      std::memcpy(xyz, rec + 12 + 12 * k, 12);  // skip the stored normal
      for (int a = 0; a < 3; ++a) {
        if (!std::isfinite(xyz[a])) throw ParseError(0, "facet " + std::to_string(i) + " has a non-finite vertex");
        v[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)] = xyz[a];
      }
    }
    b.add(v[0], v[1], v[2]);
  }
  return b.take();
}

inline TriangleMesh parse_ascii_stl(std::string_view text) {
  // Token stream with line numbers.
  struct Tok {
    std::string_view s;
    std::size_t line;
  };
  std::vector<Tok> toks;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size();) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      toks.push_back({text.substr(i, j - i), line});
      i = j;
    }
  }
  std::size_t p = 0;
  auto at_line = [&]() { return p < toks.size() ? toks[p].line : line; };
  auto expect = [&](std::string_view word) {
    if (p >= toks.size() || toks[p].s != word) {
      throw ParseError(at_line(), "expected '" + std::string(word) + "'");
    }
    ++p;
  };
  auto number = [&]() {
    double v = 0;
    if (p >= toks.size() || !text::parse_double(toks[p].s, v) || !std::isfinite(v)) {
      throw ParseError(at_line(), "expected a number");
    }
    ++p;
    return v;
  };
  expect("solid");
  // optional name: everything up to the first 'facet' or 'endsolid' on later tokens
  const std::size_t name_line = toks[0].line;
  while (p < toks.size() && toks[p].line == name_line && toks[p].s != "facet" && toks[p].s != "endsolid") ++p;
  MeshBuilder b;
  while (true) {
    if (p >= toks.size()) throw ParseError(at_line(), "missing 'endsolid'");
    if (toks[p].s == "endsolid") break;
    expect("facet");
    expect("normal");
    number();
    number();
    number();
    expect("outer");
    expect("loop");
    std::array<Vec3, 3> v{};
    for (auto& vert : v) {
      expect("vertex");
      vert = {number(), number(), number()};
    }
    expect("endloop");
    expect("endfacet");
    b.add(v[0], v[1], v[2]);
  }
  return b.take();
}

}  // namespace detail

/// Binary when the size is exactly 84 + 50 n for the header's n; ASCII when
/// the text starts with "solid"; a count mismatch or truncation is a parse
/// error and anything else a format error.
inline TriangleMesh parse_stl(std::span<const std::uint8_t> data) {
  if (data.size() >= 84) {
    std::uint32_t count = 0;
    std::memcpy(&count, data.data() + 80, 4);
    if (data.size() == 84 + 50 * std::size_t{count}) return detail::parse_binary_stl(data);
  }
  if (detail::starts_with_solid(data)) {
    return detail::parse_ascii_stl(std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
  }
  if (data.size() >= 84) return detail::parse_binary_stl(data);  // throws the count mismatch
  throw FormatError("neither a binary nor an ASCII STL file");
}

inline std::vector<std::uint8_t> write_stl_binary(const TriangleMesh& m, std::string_view header = "tactile_cal") {
  std::vector<std::uint8_t> out(84, 0);
  std::memcpy(out.data(), header.data(), std::min<std::size_t>(header.size(), 80));
  const auto count = static_cast<std::uint32_t>(m.triangles.size());
  std::memcpy(out.data() + 80, &count, 4);
  out.resize(84 + 50 * std::size_t{count}, 0);
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    std::uint8_t* rec = out.data() + 84 + 50 * t;
    const Vec3 n = m.normal(t);
    const float nf[3] = {static_cast<float>(n[0]), static_cast<float>(n[1]), static_cast<float>(n[2])};
    std::memcpy(rec, nf, 12);
    for (int k = 0; k < 3; ++k) {
      const auto& v = m.vertices[m.triangles[t][static_cast<std::size_t>(k)]];
      const float vf[3] = {static_cast<float>(v[0]), static_cast<float>(v[1]), static_cast<float>(v[2])};
      std::memcpy(rec + 12 + 12 * k, vf, 12);
    }
  }
  return out;
}

inline std::string write_stl_ascii(const TriangleMesh& m, std::string_view name = "tactile_cal") {
  std::ostringstream os;
  os << "solid " << name << '\n';
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const Vec3 n = m.normal(t);
    os << "  facet normal " << text::format_double(n[0]) << ' ' << text::format_double(n[1]) << ' '
       << text::format_double(n[2]) << "\n    outer loop\n";
    for (auto i : m.triangles[t]) {
      const auto& v = m.vertices[i];
      os << "      vertex " << text::format_double(v[0]) << ' ' << text::format_double(v[1]) << ' '
         << text::format_double(v[2]) << '\n';
    }
    os << "    endloop\n  endfacet\n";
  }
  os << "endsolid " << name << '\n';
  return os.str();
}

inline TriangleMesh load_stl(const std::filesystem::path& path) { return parse_stl(read_file_bytes(path)); }

// ------------------------------------------------------------- ray casting

/// Which mesh axis points towards the sensor; rays travel along its negative.
enum class ViewAxis { pos_x, neg_x, pos_y, neg_y, pos_z, neg_z };

/// (u, v, w) frame with w along the view axis; right-handed.
inline Vec3 to_view(const Vec3& p, ViewAxis a) {
  switch (a) {
    case ViewAxis::pos_z: return {p[0], p[1], p[2]};
    case ViewAxis::neg_z: return {p[0], -p[1], -p[2]};
    case ViewAxis::pos_x: return {p[1], p[2], p[0]};
    case ViewAxis::neg_x: return {-p[1], p[2], -p[0]};
    case ViewAxis::pos_y: return {p[2], p[0], p[1]};
    case ViewAxis::neg_y: return {-p[2], p[0], -p[1]};
  }
  return p;
}

inline constexpr double kDeterminantEps = 1e-9;

/// Moller-Trumbore for a ray from (u, v, +inf) straight down -w; returns the
/// hit height w, or NaN on a miss. Barycentric bounds are inclusive.
inline double intersect_down(const Vec3& a, const Vec3& b, const Vec3& c, double u, double v) {
  const Vec3 dir = {0.0, 0.0, -1.0};
  const Vec3 e1 = sub(b, a), e2 = sub(c, a);
  const Vec3 pv = cross(dir, e2);
  const double det = dot(e1, pv);
  if (std::abs(det) < kDeterminantEps) return std::nan("");
  const double inv = 1.0 / det;
  // origin on the plane w = a_w; t is then measured from there
  const Vec3 s = {u - a[0], v - a[1], 0.0};
  const double bu = dot(s, pv) * inv;
  if (bu < 0.0 || bu > 1.0) return std::nan("");
  const Vec3 q = cross(s, e1);
  const double bv = dot(dir, q) * inv;
  if (bv < 0.0 || bu + bv > 1.0) return std::nan("");
  const double t = dot(e2, q) * inv;
  return a[2] - t;
}

/// Every hit height along one ray, sorted descending; hits closer than 1e-9
/// (a ray through a shared edge) count once.
inline std::vector<double> ray_hits(const TriangleMesh& m, double u, double v, ViewAxis axis = ViewAxis::pos_z) {
  std::vector<double> hits;
  for (const auto& t : m.triangles) {
    const double w = intersect_down(to_view(m.vertices[t[0]], axis), to_view(m.vertices[t[1]], axis),
                                    to_view(m.vertices[t[2]], axis), u, v);
    if (!std::isnan(w)) hits.push_back(w);
  }
  std::sort(hits.begin(), hits.end(), std::greater<>());
  hits.erase(std::unique(hits.begin(), hits.end(), [](double x, double y) { return std::abs(x - y) < 1e-9; }),
             hits.end());
  return hits;
}

struct DepthOptions {
  ViewAxis view_axis = ViewAxis::pos_z;
  /// Height of the zero-depth plane along the view axis; NaN selects the
  /// mesh's lowest point.
  double reference = std::nan("");
};

/// Top-surface ray cast onto `grid` (pixel centres from the geometry, in mesh
/// coordinates): depth = top hit - reference, 0 where no geometry is hit.
inline DepthMap mesh_to_depthmap(const TriangleMesh& m, const SensorGeometry& grid, DepthOptions opt = {}) {
  m.validate();
  if (m.triangles.empty()) throw EmptyIntersectionError("mesh has no triangles");
  std::vector<Vec3> pv(m.vertices.size());
  double lo = INFINITY;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    pv[i] = to_view(m.vertices[i], opt.view_axis);
    lo = std::min(lo, pv[i][2]);
  }
  const double reference = std::isnan(opt.reference) ? lo : opt.reference;
  Array2D<double> top(grid.rows, grid.cols, -INFINITY);
  bool any = false;
  for (const auto& t : m.triangles) {
    const Vec3 &a = pv[t[0]], &b = pv[t[1]], &c = pv[t[2]];
    const double c0 = std::ceil(grid.col_of_x(std::min({a[0], b[0], c[0]})) - 1e-9);
    const double c1 = std::floor(grid.col_of_x(std::max({a[0], b[0], c[0]})) + 1e-9);
    const double r0 = std::ceil(grid.row_of_y(std::min({a[1], b[1], c[1]})) - 1e-9);
    const double r1 = std::floor(grid.row_of_y(std::max({a[1], b[1], c[1]})) + 1e-9);
    const auto cmin = static_cast<long>(std::max(c0, 0.0));
    const auto cmax = static_cast<long>(std::min(c1, static_cast<double>(grid.cols) - 1));
    const auto rmin = static_cast<long>(std::max(r0, 0.0));
    const auto rmax = static_cast<long>(std::min(r1, static_cast<double>(grid.rows) - 1));
    for (long r = rmin; r <= rmax; ++r) {
      const double y = grid.y_of_row(static_cast<double>(r));
      for (long cc = cmin; cc <= cmax; ++cc) {
        const double w = intersect_down(a, b, c, grid.x_of_col(static_cast<double>(cc)), y);
        if (std::isnan(w)) continue;
        any = true;
        double& slot = top(static_cast<std::size_t>(r), static_cast<std::size_t>(cc));
        slot = std::max(slot, w);  // coincident triangles: highest wins
      }
    }
  }
  if (!any) throw EmptyIntersectionError("no triangle intersects the depth grid");
  DepthMap out{Array2D<double>(grid.rows, grid.cols, 0.0), grid.pitch_mm, Units::mm};
  for (std::size_t i = 0; i < top.size(); ++i) {
    const double w = top.values()[i];
    if (std::isfinite(w)) out.values.values()[i] = std::max(0.0, w - reference);
  }
  return out;
}

// ------------------------------------------------------ procedural objects
// Upper halves (z >= 0) of solids of revolution about the x axis, closed by a
// flat bottom face at z = 0. Footprints fit a 10 mm x 10 mm square centred on
// the origin.

struct ProfilePoint {
  double x;
  double r;
};

/// Half solid of revolution for profile r(x) (r >= 0, x increasing), with
/// `segments` steps over the half turn; z scaled by `z_scale`.
inline TriangleMesh half_revolution(const std::vector<ProfilePoint>& profile, std::size_t segments,
                                    double z_scale = 1.0, double x_offset = 0.0) {
  if (profile.size() < 2 || segments < 2) throw InvalidArgument("profile needs >= 2 points and >= 2 segments");
  std::vector<double> cs(segments + 1), sn(segments + 1);
  for (std::size_t j = 0; j <= segments; ++j) {
    const double th = std::numbers::pi * static_cast<double>(j) / static_cast<double>(segments);
    cs[j] = std::cos(th);
    sn[j] = std::sin(th);
  }
  cs[0] = 1.0;
  sn[0] = 0.0;
  cs[segments] = -1.0;
  sn[segments] = 0.0;
  if (segments % 2 == 0) {
    cs[segments / 2] = 0.0;
    sn[segments / 2] = 1.0;
  }
  auto ring = [&](std::size_t i, std::size_t j) -> Vec3 {
    const auto& p = profile[i];
    return {p.x + x_offset, p.r * cs[j], p.r * sn[j] * z_scale};
  };
  MeshBuilder b;
  for (std::size_t i = 0; i + 1 < profile.size(); ++i) {
    for (std::size_t j = 0; j < segments; ++j) {
      // outward: theta increases from +y over the top towards -y
      const Vec3 a = ring(i, j), bb = ring(i + 1, j), c = ring(i + 1, j + 1), d = ring(i, j + 1);
      b.add(a, c, bb);
      b.add(a, d, c);
    }
    // bottom face, split at the axis so its edges meet the end-cap fans
    const Vec3 a0 = ring(i, 0), b0 = ring(i + 1, 0), a1 = ring(i, segments), b1 = ring(i + 1, segments);
    const Vec3 ca = {profile[i].x + x_offset, 0.0, 0.0}, cb = {profile[i + 1].x + x_offset, 0.0, 0.0};
    b.add(a0, b0, cb);
    b.add(a0, cb, ca);
    b.add(a1, cb, b1);
    b.add(a1, ca, cb);
  }
  // end caps (half discs) where the profile does not close on the axis
  auto cap = [&](std::size_t i, bool at_end) {
    if (profile[i].r <= 0.0) return;
    const Vec3 centre = {profile[i].x + x_offset, 0.0, 0.0};
    for (std::size_t j = 0; j < segments; ++j) {
      if (at_end) {
        b.add(centre, ring(i, j), ring(i, j + 1));
      } else {
        b.add(centre, ring(i, j + 1), ring(i, j));
      }
    }
  };
  cap(0, false);
  cap(profile.size() - 1, true);
  return b.take();
}

/// Profile of a sphere of radius r centred at x = 0, `n` samples.
inline std::vector<ProfilePoint> sphere_profile(double radius, std::size_t n) {
  std::vector<ProfilePoint> p;
  for (std::size_t i = 0; i <= n; ++i) {
    const double phi = std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    const double x = -radius * std::cos(phi);
    p.push_back({i == 0 ? -radius : (i == n ? radius : x), i == 0 || i == n ? 0.0 : radius * std::sin(phi)});
  }
  return p;
}

inline TriangleMesh merge(const TriangleMesh& a, const TriangleMesh& b) {
  TriangleMesh out = a;
  const auto base = static_cast<std::uint32_t>(a.vertices.size());
  out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto t : b.triangles) out.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  return out;
}

/// Two hemispheres of radius 2.4 mm at x = -2.6 and +2.6.
inline TriangleMesh make_hemispheres(std::size_t resolution = 48) {
  const auto prof = sphere_profile(2.4, resolution);
  return merge(half_revolution(prof, resolution, 1.0, -2.6), half_revolution(prof, resolution, 1.0, 2.6));
}

/// Capsule of radius 2.5 mm, 10 mm long, lying along x.
inline TriangleMesh make_pill(std::size_t resolution = 48) {
  std::vector<ProfilePoint> prof;
  const double r = 2.5, half = 2.5;
  for (std::size_t i = 0; i <= resolution / 2; ++i) {
    const double phi = 0.5 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(resolution / 2);
    prof.push_back({-half - r * std::cos(phi), i == 0 ? 0.0 : r * std::sin(phi)});
  }
  prof.back() = {-half, r};
  prof.push_back({half, r});
  for (std::size_t i = 1; i <= resolution / 2; ++i) {
    const double phi = 0.5 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(resolution / 2);
    prof.push_back({half + r * std::sin(phi), i == resolution / 2 ? 0.0 : r * std::cos(phi)});
  }
  return half_revolution(prof, resolution);
}

/// Chess pawn on its side: base disc, tapering body, thin neck, round head.
/// Heights are compressed by 0.3 (base top 1.2 mm, head 0.72, neck 0.48) so a
/// 1 mm press reaches the neck.
inline TriangleMesh make_pawn(std::size_t resolution = 48) {
  std::vector<ProfilePoint> prof = {{-5.0, 0.0}, {-5.0, 4.0}, {-4.2, 4.0}, {-3.8, 3.4}, {-3.0, 3.0},
                                    {-1.5, 2.5}, {-0.4, 1.9}, {0.0, 1.6},  {0.9, 1.6}};
  // head: circle of radius 2.4 centred at x = 2.6, entered just past the neck
  const double hc = 2.6, hr = 2.4;
  const double a0 = std::acos((0.9 - hc) / hr);
  for (std::size_t i = 1; i <= resolution; ++i) {
    const double a = a0 * (1.0 - static_cast<double>(i) / static_cast<double>(resolution));
    prof.push_back({i == resolution ? hc + hr : hc + hr * std::cos(a), i == resolution ? 0.0 : hr * std::sin(a)});
  }
  return half_revolution(prof, resolution, 0.3);
}

/// Grid centred on the object origin with the sensor's resolution and pitch.
inline SensorGeometry object_grid(const SensorGeometry& sensor) {
  SensorGeometry g = sensor;
  g.center_x_mm = 0.0;
  g.center_y_mm = 0.0;
  return g;
}

}  // namespace tactile_cal::mesh
