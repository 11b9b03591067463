#pragma once

// Conforming triangular meshes with classified boundary edges.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nudgeflow/errors.hpp"

namespace nudgeflow {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

enum class BoundaryMarker : std::uint8_t { Dirichlet, Slip, Inflow, Outflow };

inline const char* to_string(BoundaryMarker m) {
  switch (m) {
    case BoundaryMarker::Dirichlet: return "dirichlet";
    case BoundaryMarker::Slip: return "slip";
    case BoundaryMarker::Inflow: return "inflow";
    case BoundaryMarker::Outflow: return "outflow";
  }
  return "?";
}

inline std::optional<BoundaryMarker> parse_marker(std::string_view s) {
  if (s == "dirichlet") return BoundaryMarker::Dirichlet;
  if (s == "slip") return BoundaryMarker::Slip;
  if (s == "inflow") return BoundaryMarker::Inflow;
  if (s == "outflow") return BoundaryMarker::Outflow;
  return std::nullopt;
}

/// Inflow is Dirichlet with (possibly nonzero) data.
inline bool is_essential(BoundaryMarker m) {
  return m == BoundaryMarker::Dirichlet || m == BoundaryMarker::Inflow;
}

struct BoundaryEdge {
  std::array<int, 2> v{};
  BoundaryMarker marker = BoundaryMarker::Dirichlet;
  int profile = -1;  ///< inflow profile id, -1 when unused
};

/// Unit outward normal and tangent (normal rotated by +90 degrees).
struct SlipFrame {
  Point normal;
  Point tangent;
};

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

namespace side {
inline constexpr unsigned bottom = 1u, right = 2u, top = 4u, left = 8u, all = 15u;
}
using SideSet = unsigned;

class Mesh {
 public:
  using Triangle = std::array<int, 3>;
  using Edge = std::array<int, 2>;

  /// Builds topology (edge list, edge-triangle adjacency, boundary frames).
  /// Vertex indices must be in range; geometric invariants are checked by
  /// validate(), not here.
  Mesh(std::vector<Point> vertices, std::vector<Triangle> triangles,
       std::vector<BoundaryEdge> boundary)
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)), boundary_(std::move(boundary)) {
    const int nv = static_cast<int>(vertices_.size());
    auto in_range = [nv](int i) { return i >= 0 && i < nv; };
    for (std::size_t t = 0; t < triangles_.size(); ++t)
      for (int i : triangles_[t])
        if (!in_range(i))
          throw InvalidArgument("triangle " + std::to_string(t) + " references vertex " + std::to_string(i));
    for (std::size_t b = 0; b < boundary_.size(); ++b)
      for (int i : boundary_[b].v)
        if (!in_range(i))
          throw InvalidArgument("boundary edge " + std::to_string(b) + " references vertex " + std::to_string(i));
    build_topology();
  }

  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_; }
  const std::vector<Edge>& edges() const { return edges_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  /// Global edge ids of (v0,v1), (v1,v2), (v2,v0).
  const std::array<int, 3>& triangle_edges(std::size_t t) const { return tri_edges_[t]; }
  /// Number of triangles sharing edge e.
  int edge_valence(std::size_t e) const { return edge_count_[e]; }
  /// First triangle containing edge e.
  int edge_triangle(std::size_t e) const { return edge_tri_[e]; }

  /// Edge id of {a,b}, -1 if not an edge of any triangle.
  int find_edge(int a, int b) const {
    Edge key{std::min(a, b), std::max(a, b)};
    auto it = std::lower_bound(edges_.begin(), edges_.end(), key);
    if (it == edges_.end() || *it != key) return -1;
    return static_cast<int>(it - edges_.begin());
  }

  /// Index into boundary_edges() for mesh edge e, -1 if none.
  int boundary_of_edge(std::size_t e) const { return edge_boundary_[e]; }

  /// Outward frame of boundary edge b; nullopt when the edge has no owning triangle.
  const std::optional<SlipFrame>& frame(std::size_t b) const { return frames_[b]; }

  double signed_area(std::size_t t) const {
    const auto& tr = triangles_[t];
    return 0.5 * cross(vertices_[tr[1]] - vertices_[tr[0]], vertices_[tr[2]] - vertices_[tr[0]]);
  }

  double total_area() const {
    double a = 0.0;
    for (std::size_t t = 0; t < triangles_.size(); ++t) a += signed_area(t);
    return a;
  }

  double edge_length(std::size_t b) const {
    const auto& e = boundary_[b].v;
    return norm(vertices_[e[1]] - vertices_[e[0]]);
  }

  double boundary_length(BoundaryMarker m) const {
    double len = 0.0;
    for (std::size_t b = 0; b < boundary_.size(); ++b)
      if (boundary_[b].marker == m) len += edge_length(b);
    return len;
  }

  bool has_marker(BoundaryMarker m) const {
    return std::any_of(boundary_.begin(), boundary_.end(), [m](const BoundaryEdge& e) { return e.marker == m; });
  }

  Rect bounding_box() const {
    Rect r{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
           std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
    for (const auto& p : vertices_) {
      r.x0 = std::min(r.x0, p.x);
      r.y0 = std::min(r.y0, p.y);
      r.x1 = std::max(r.x1, p.x);
      r.y1 = std::max(r.y1, p.y);
    }
    return r;
  }

  /// Longest edge length over all triangles.
  double max_edge_length() const {
    double h = 0.0;
    for (const auto& e : edges_) h = std::max(h, norm(vertices_[e[1]] - vertices_[e[0]]));
    return h;
  }

 private:
  void build_topology() {
    std::vector<std::pair<Edge, int>> all;
    all.reserve(3 * triangles_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tr = triangles_[t];
      for (int k = 0; k < 3; ++k) {
        int a = tr[k], b = tr[(k + 1) % 3];
        all.push_back({Edge{std::min(a, b), std::max(a, b)}, static_cast<int>(t)});
      }
    }
    std::sort(all.begin(), all.end());
    for (const auto& [e, t] : all) {
      if (edges_.empty() || edges_.back() != e) {
        edges_.push_back(e);
        edge_count_.push_back(0);
        edge_tri_.push_back(t);
      }
      ++edge_count_.back();
    }
    tri_edges_.resize(triangles_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tr = triangles_[t];
      for (int k = 0; k < 3; ++k) tri_edges_[t][k] = find_edge(tr[k], tr[(k + 1) % 3]);
    }
    edge_boundary_.assign(edges_.size(), -1);
    frames_.assign(boundary_.size(), std::nullopt);
    for (std::size_t b = 0; b < boundary_.size(); ++b) {
      const auto& be = boundary_[b];
      int e = find_edge(be.v[0], be.v[1]);
      if (e < 0) continue;
      if (edge_boundary_[e] < 0) edge_boundary_[e] = static_cast<int>(b);
      Point pa = vertices_[be.v[0]], pb = vertices_[be.v[1]];
      Point d = pb - pa;
      double len = norm(d);
      if (len <= 0.0) continue;
      const auto& tr = triangles_[edge_tri_[e]];
      int opposite = tr[0] + tr[1] + tr[2] - be.v[0] - be.v[1];
      Point n{d.y / len, -d.x / len};
      if (dot(vertices_[opposite] - pa, n) > 0.0) n = -1.0 * n;
      frames_[b] = SlipFrame{n, Point{-n.y, n.x}};
    }
  }

  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<BoundaryEdge> boundary_;
  std::vector<Edge> edges_;
  std::vector<int> edge_count_;
  std::vector<int> edge_tri_;
  std::vector<std::array<int, 3>> tri_edges_;
  std::vector<int> edge_boundary_;
  std::vector<std::optional<SlipFrame>> frames_;
};

/// Lists every invariant violation; empty when the mesh is valid.
inline std::vector<std::string> validate(const Mesh& mesh) {
  std::vector<std::string> out;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t)
    if (!(mesh.signed_area(t) > 0.0)) out.push_back("triangle " + std::to_string(t) + " is not counterclockwise");

  std::vector<int> listed(mesh.num_edges(), 0);
  const auto& bnd = mesh.boundary_edges();
  for (std::size_t b = 0; b < bnd.size(); ++b) {
    const auto& be = bnd[b];
    std::string name = "boundary edge " + std::to_string(b) + " (" + std::to_string(be.v[0]) + "," +
                       std::to_string(be.v[1]) + ")";
    int e = mesh.find_edge(be.v[0], be.v[1]);
    if (e < 0) {
      out.push_back(name + " is not an edge of any triangle");
      continue;
    }
    if (mesh.edge_valence(e) != 1) out.push_back(name + " is shared by " + std::to_string(mesh.edge_valence(e)) + " triangles");
    if (++listed[e] == 2) out.push_back(name + " is listed more than once");
    const auto& fr = mesh.frame(b);
    if (!fr) {
      out.push_back(name + " has degenerate geometry");
    } else if (be.marker == BoundaryMarker::Slip) {
      const double tol = 1e-12;
      if (std::abs(norm(fr->normal) - 1.0) > tol || std::abs(norm(fr->tangent) - 1.0) > tol ||
          std::abs(dot(fr->normal, fr->tangent)) > tol)
        out.push_back(name + " has a non-orthonormal slip frame");
    }
  }
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    if (mesh.edge_valence(e) > 2)
      out.push_back("edge (" + std::to_string(mesh.edges()[e][0]) + "," + std::to_string(mesh.edges()[e][1]) +
                    ") is shared by more than two triangles");
    if (mesh.edge_valence(e) == 1 && listed[e] == 0)
      out.push_back("missing boundary edge (" + std::to_string(mesh.edges()[e][0]) + "," +
                    std::to_string(mesh.edges()[e][1]) + ")");
  }
  return out;
}

/// Finds the triangle containing a point via a uniform bucket grid.
class PointLocator {
 public:
  struct Hit {
    int triangle;
    std::array<double, 3> bary;  ///< barycentric coordinates w.r.t. the triangle's vertices
  };

  explicit PointLocator(const Mesh& mesh) : mesh_(&mesh), box_(mesh.bounding_box()) {
    std::size_t nt = std::max<std::size_t>(mesh.num_triangles(), 1);
    double aspect = box_.width() / std::max(box_.height(), 1e-300);
    nx_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(nt) * aspect)));
    ny_ = std::max(1, static_cast<int>(static_cast<double>(nt) / nx_));
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
      const auto& tr = mesh.triangles()[t];
      double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
      for (int v : tr) {
        const auto& p = mesh.vertices()[v];
        x0 = std::min(x0, p.x), y0 = std::min(y0, p.y), x1 = std::max(x1, p.x), y1 = std::max(y1, p.y);
      }
      auto [i0, j0] = cell({x0, y0});
      auto [i1, j1] = cell({x1, y1});
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(t));
    }
  }

  std::optional<Hit> locate(Point p, double tol = 1e-10) const {
    if (p.x < box_.x0 - tol || p.x > box_.x1 + tol || p.y < box_.y0 - tol || p.y > box_.y1 + tol) return std::nullopt;
    auto [i, j] = cell(p);
    std::optional<Hit> best;
    double best_min = -1e300;
    for (int t : buckets_[static_cast<std::size_t>(j) * nx_ + i]) {
      auto bary = barycentric(t, p);
      double mn = std::min({bary[0], bary[1], bary[2]});
      if (mn > best_min) {
        best_min = mn;
        best = Hit{t, bary};
      }
      if (mn >= 0.0) return best;
    }
    if (best && best_min >= -tol) return best;
    return std::nullopt;
  }

  std::array<double, 3> barycentric(int t, Point p) const {
    const auto& tr = mesh_->triangles()[t];
    const auto& v = mesh_->vertices();
    Point a = v[tr[0]], e1 = v[tr[1]] - a, e2 = v[tr[2]] - a, d = p - a;
    double det = cross(e1, e2);
    double l1 = cross(d, e2) / det;
    double l2 = cross(e1, d) / det;
    return {1.0 - l1 - l2, l1, l2};
  }

 private:
  std::pair<int, int> cell(Point p) const {
    double fx = (p.x - box_.x0) / std::max(box_.width(), 1e-300) * nx_;
    double fy = (p.y - box_.y0) / std::max(box_.height(), 1e-300) * ny_;
    int i = std::clamp(static_cast<int>(std::floor(fx)), 0, nx_ - 1);
    int j = std::clamp(static_cast<int>(std::floor(fy)), 0, ny_ - 1);
    return {i, j};
  }

  const Mesh* mesh_;
  Rect box_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

/// Structured rectangle; each cell is split along its lower-left to
/// upper-right diagonal. Side markers are given as {bottom, right, top, left}.
inline Mesh build_rect_mesh(int nx, int ny, const Rect& rect, const std::array<BoundaryMarker, 4>& sides) {
  if (nx < 1 || ny < 1) throw InvalidArgument("build_rect_mesh: cell counts must be >= 1");
  if (!(rect.x1 > rect.x0) || !(rect.y1 > rect.y0)) throw InvalidArgument("build_rect_mesh: empty rectangle");
  std::vector<Point> verts;
  verts.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      verts.push_back({rect.x0 + rect.width() * i / nx, rect.y0 + rect.height() * j / ny});
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<Mesh::Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      tris.push_back({a, b, c});
      tris.push_back({a, c, d});
    }
  std::vector<BoundaryEdge> bnd;
  for (int i = 0; i < nx; ++i) bnd.push_back({{id(i, 0), id(i + 1, 0)}, sides[0]});
  for (int j = 0; j < ny; ++j) bnd.push_back({{id(nx, j), id(nx, j + 1)}, sides[1]});
  for (int i = nx; i > 0; --i) bnd.push_back({{id(i, ny), id(i - 1, ny)}, sides[2]});
  for (int j = ny; j > 0; --j) bnd.push_back({{id(0, j), id(0, j - 1)}, sides[3]});
  return Mesh(std::move(verts), std::move(tris), std::move(bnd));
}

/// Sides listed in `slip_sides` are Slip, the rest Dirichlet.
inline Mesh build_rect_mesh(int nx, int ny, const Rect& rect = {}, SideSet slip_sides = 0) {
  auto pick = [slip_sides](unsigned s) { return (slip_sides & s) ? BoundaryMarker::Slip : BoundaryMarker::Dirichlet; };
  return build_rect_mesh(nx, ny, rect, {pick(side::bottom), pick(side::right), pick(side::top), pick(side::left)});
}

namespace detail {

inline std::vector<std::string> tokenize(std::string_view line) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double to_double(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + s + "'", line);
  }
  if (pos != s.size() || !std::isfinite(v)) throw ParseError("expected a finite number, got '" + s + "'", line);
  return v;
}

inline long to_long(const std::string& s, std::size_t line) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw ParseError("expected an integer, got '" + s + "'", line);
  }
  if (pos != s.size()) throw ParseError("expected an integer, got '" + s + "'", line);
  return v;
}

// shortest text that reads back to the same double
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// Parses `mesh2d v1` text and validates the result.
inline Mesh import_mesh(std::string_view text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> lines;
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    auto toks = detail::tokenize(text.substr(start, end - start));
    if (!toks.empty()) lines.emplace_back(lineno, std::move(toks));
    start = end + 1;
  }
  std::size_t cur = 0;
  auto expect_section = [&](const char* name) -> std::size_t {
    if (cur >= lines.size()) throw ParseError(std::string("missing section '") + name + "'", lineno);
    const auto& [ln, toks] = lines[cur];
    if (toks.size() != 2 || toks[0] != name) throw ParseError(std::string("expected '") + name + " <count>'", ln);
    long n = detail::to_long(toks[1], ln);
    if (n < 0) throw ParseError("negative count", ln);
    ++cur;
    return static_cast<std::size_t>(n);
  };
  auto next_row = [&](std::size_t min_tokens, std::size_t max_tokens,
                      const char* what) -> const std::pair<std::size_t, std::vector<std::string>>& {
    if (cur >= lines.size()) throw ParseError(std::string("unexpected end of file in ") + what + " section", lineno);
    const auto& row = lines[cur++];
    if (row.second.size() < min_tokens || row.second.size() > max_tokens)
      throw ParseError(std::string("malformed ") + what + " line", row.first);
    return row;
  };

  if (lines.empty() || lines[0].second != std::vector<std::string>{"mesh2d", "v1"})
    throw ParseError("missing header 'mesh2d v1'", lines.empty() ? 1 : lines[0].first);
  cur = 1;

  std::size_t nv = expect_section("vertices");
  std::vector<Point> verts;
  verts.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    const auto& [ln, t] = next_row(2, 2, "vertex");
    verts.push_back({detail::to_double(t[0], ln), detail::to_double(t[1], ln)});
  }

  auto index = [nv](const std::string& s, std::size_t ln) {
    long v = detail::to_long(s, ln);
    if (v < 0 || static_cast<std::size_t>(v) >= nv) throw ParseError("vertex index " + s + " out of range", ln);
    return static_cast<int>(v);
  };

  std::size_t nt = expect_section("triangles");
  std::vector<Mesh::Triangle> tris;
  tris.reserve(nt);
  for (std::size_t i = 0; i < nt; ++i) {
    const auto& [ln, t] = next_row(3, 3, "triangle");
    tris.push_back({index(t[0], ln), index(t[1], ln), index(t[2], ln)});
  }

  std::size_t nb = expect_section("boundary");
  std::vector<BoundaryEdge> bnd;
  bnd.reserve(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    const auto& [ln, t] = next_row(3, 4, "boundary");
    auto marker = parse_marker(t[2]);
    if (!marker) throw ParseError("unknown boundary marker '" + t[2] + "'", ln);
    BoundaryEdge be{{index(t[0], ln), index(t[1], ln)}, *marker, -1};
    if (t.size() == 4) {
      if (*marker != BoundaryMarker::Inflow) throw ParseError("profile id is only allowed on inflow edges", ln);
      be.profile = static_cast<int>(detail::to_long(t[3], ln));
    }
    bnd.push_back(be);
  }
  if (cur != lines.size()) throw ParseError("trailing content", lines[cur].first);

  Mesh mesh(std::move(verts), std::move(tris), std::move(bnd));
  if (auto report = validate(mesh); !report.empty()) throw ValidationError(std::move(report));
  return mesh;
}

inline std::string export_mesh(const Mesh& mesh) {
  std::ostringstream os;
  os << "mesh2d v1\n";
  os << "vertices " << mesh.num_vertices() << "\n";
  for (const auto& p : mesh.vertices()) os << detail::format_double(p.x) << ' ' << detail::format_double(p.y) << "\n";
  os << "triangles " << mesh.num_triangles() << "\n";
  for (const auto& t : mesh.triangles()) os << t[0] << ' ' << t[1] << ' ' << t[2] << "\n";
  os << "boundary " << mesh.boundary_edges().size() << "\n";
  for (const auto& b : mesh.boundary_edges()) {
    os << b.v[0] << ' ' << b.v[1] << ' ' << to_string(b.marker);
    if (b.profile >= 0) os << ' ' << b.profile;
    os << "\n";
  }
  return os.str();
}

}  // namespace nudgeflow
