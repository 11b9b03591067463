#pragma once

// Builtin scenarios, block-structured mesh generation for the channel
// geometries, VTK export and error tables.

#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "nudgeflow/cda.hpp"

namespace nudgeflow {

// ---------------------------------------------------------------------------
// Block-structured meshes

/// Logical quad [0,1]^2 mapped into the plane, split into nu x nv cells.
struct MeshBlock {
  std::function<Point(double, double)> map;
  int nu = 1, nv = 1;
};

struct EdgeClass {
  BoundaryMarker marker = BoundaryMarker::Dirichlet;
  int profile = -1;
};

/// Merges the blocks (coincident vertices within 1e-9 are shared), splits
/// every cell along its shorter diagonal and classifies the resulting
/// boundary edges by their endpoints.
inline Mesh build_block_mesh(const std::vector<MeshBlock>& blocks,
                             const std::function<EdgeClass(Point, Point)>& classify) {
  std::vector<Point> verts;
  std::map<std::pair<long long, long long>, int> index;
  auto vertex = [&](Point p) {
    auto key = std::make_pair(std::llround(p.x * 1e9), std::llround(p.y * 1e9));
    auto [it, fresh] = index.try_emplace(key, static_cast<int>(verts.size()));
    if (fresh) verts.push_back(p);
    return it->second;
  };
  std::vector<Mesh::Triangle> tris;
  auto add = [&](int a, int b, int c) {
    Point pa = verts[a], pb = verts[b], pc = verts[c];
    double cross = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
    if (cross < 0) std::swap(b, c);
    tris.push_back({a, b, c});
  };
  for (const auto& blk : blocks) {
    if (blk.nu < 1 || blk.nv < 1) throw InvalidArgument("mesh block needs at least one cell per direction");
    std::vector<int> id((blk.nu + 1) * (blk.nv + 1));
    for (int j = 0; j <= blk.nv; ++j)
      for (int i = 0; i <= blk.nu; ++i)
        id[j * (blk.nu + 1) + i] = vertex(blk.map(static_cast<double>(i) / blk.nu, static_cast<double>(j) / blk.nv));
    for (int j = 0; j < blk.nv; ++j)
      for (int i = 0; i < blk.nu; ++i) {
        int a = id[j * (blk.nu + 1) + i], b = id[j * (blk.nu + 1) + i + 1];
        int c = id[(j + 1) * (blk.nu + 1) + i + 1], d = id[(j + 1) * (blk.nu + 1) + i];
        if (norm(verts[a] - verts[c]) <= norm(verts[b] - verts[d])) {
          add(a, b, c);
          add(a, c, d);
        } else {
          add(a, b, d);
          add(b, c, d);
        }
      }
  }
  // boundary = edges used by one triangle, oriented as in that triangle (CCW)
  std::map<std::pair<int, int>, int> count;
  for (const auto& t : tris)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  std::vector<BoundaryEdge> bnd;
  for (const auto& t : tris)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (count[{std::min(a, b), std::max(a, b)}] != 1) continue;
      EdgeClass c = classify(verts[a], verts[b]);
      bnd.push_back({{a, b}, c.marker, c.profile});
    }
  std::sort(bnd.begin(), bnd.end(), [](const BoundaryEdge& x, const BoundaryEdge& y) { return x.v < y.v; });
  Mesh m(std::move(verts), std::move(tris), std::move(bnd));
  auto bad = validate(m);
  if (!bad.empty()) throw ValidationError(std::move(bad));
  return m;
}

/// Channel (0,6)x(0,1) around a disk of radius 0.15 at (1, 0.5); n cells
/// across the channel (n even, >= 4). O-grid around the disk.
inline Mesh build_cylinder_mesh(int n = 16) {
  if (n < 4 || n % 2) throw InvalidArgument("cylinder mesh resolution must be even and >= 4");
  const Point c{1.0, 0.5};
  const double r = 0.15;
  std::vector<MeshBlock> blocks;
  blocks.push_back({[](double u, double v) { return Point{0.5 * u, v}; }, n / 2, n});
  blocks.push_back({[](double u, double v) { return Point{1.5 + 4.5 * u, v}; }, 9 * n / 2, n});
  // ring between the circle and the square [0.5,1.5]x[0,1]; one block per side
  const int nr = std::max(3, n / 2);
  auto square = [](int side, double s) -> Point {
    switch (side) {
      case 0: return {1.5, s};          // right, upward
      case 1: return {1.5 - s, 1.0};    // top, leftward
      case 2: return {0.5, 1.0 - s};    // left, downward
      default: return {0.5 + s, 0.0};   // bottom, rightward
    }
  };
  for (int side = 0; side < 4; ++side)
    blocks.push_back({[=](double u, double v) {
                        Point s = square(side, u);
                        Point d = s - c;
                        Point on_circle = c + (r / norm(d)) * d;
                        double rho = std::pow(v, 1.4);  // cluster layers at the disk
                        return on_circle + rho * (s - on_circle);
                      },
                      n, nr});
  return build_block_mesh(blocks, [](Point a, Point b) {
    auto on = [&](auto pred) { return pred(a) && pred(b); };
    if (on([](Point p) { return std::abs(p.x) < 1e-9; })) return EdgeClass{BoundaryMarker::Inflow, 0};
    if (on([](Point p) { return std::abs(p.x - 6.0) < 1e-9; })) return EdgeClass{BoundaryMarker::Outflow};
    if (on([](Point p) { return std::abs(p.y) < 1e-9; })) return EdgeClass{BoundaryMarker::Slip};
    return EdgeClass{BoundaryMarker::Dirichlet};
  });
}

/// Sideways Y: two branches of vertical width 1 entering at x = 0 join a main
/// vessel (2,6)x(0,2) whose bottom lies on the x-axis; outlet at x = 6.
/// n cells across a branch.
inline Mesh build_ypipe_mesh(int n = 8) {
  if (n < 2) throw InvalidArgument("Y-pipe mesh resolution must be >= 2");
  std::vector<MeshBlock> blocks;
  blocks.push_back({[](double u, double v) { return Point{2.0 * u, 2.0 - u + v}; }, 2 * n, n});   // upper branch
  blocks.push_back({[](double u, double v) { return Point{2.0 * u, -1.0 + u + v}; }, 2 * n, n});  // lower branch
  blocks.push_back({[](double u, double v) { return Point{2.0 + 4.0 * u, 2.0 * v}; }, 4 * n, 2 * n});
  return build_block_mesh(blocks, [](Point a, Point b) {
    auto on = [&](auto pred) { return pred(a) && pred(b); };
    if (on([](Point p) { return std::abs(p.x) < 1e-9 && p.y > 1.0; })) return EdgeClass{BoundaryMarker::Inflow, 0};
    if (on([](Point p) { return std::abs(p.x) < 1e-9 && p.y < 1.0; })) return EdgeClass{BoundaryMarker::Inflow, 1};
    if (on([](Point p) { return std::abs(p.x - 6.0) < 1e-9; })) return EdgeClass{BoundaryMarker::Outflow};
    if (on([](Point p) { return std::abs(p.y) < 1e-9 && p.x >= 2.0 - 1e-9; })) return EdgeClass{BoundaryMarker::Slip};
    return EdgeClass{BoundaryMarker::Dirichlet};
  });
}

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioDefaults {
  double nu = 1e-3, g = 1.0, eps = 1e-5, mu = 20.0, h_coarse = 0.125, h = 1.0 / 32, dt = 1e-3, t_end = 30.0;
};

struct Scenario {
  std::string id;
  std::function<Mesh(double h)> mesh;  ///< builds the mesh for a target spacing
  std::string mesh_file;               ///< when set, used instead of `mesh`
  VelocityFunction u0;                 ///< true initial velocity; null when unknown (reference starts at rest)
  VelocityFunction guess;              ///< initial guess for assimilation; null means zero
  BoundaryData boundary;               ///< inflow data (null: homogeneous)
  VelocityFunction force;
  ScenarioDefaults defaults;
};

inline double startup_ramp(double t) {
  return 0.5 * (1.0 - std::cos(std::numbers::pi * std::clamp(t, 0.0, 1.0)));
}

inline Point rect_initial_velocity(Point x) {
  using std::numbers::pi;
  const double sx = std::sin(pi * x.x), cx = std::cos(pi * x.x), sy = std::sin(pi * x.y), cy = std::cos(pi * x.y);
  return {2 * pi * sx * sx * sy * cy, -2 * pi * sx * cx * sy * sy};
}

inline Scenario scenario_rect() {
  Scenario s;
  s.id = "rect";
  s.mesh = [](double h) {
    int n = std::max(1, static_cast<int>(std::lround(1.0 / h)));
    return build_rect_mesh(n, n, Rect{}, side::bottom);
  };
  s.u0 = [](Point x, double) { return rect_initial_velocity(x); };
  return s;
}

/// Parabolic inlet -y(y-1) ramped up from rest over t in [0, 1].
inline Scenario scenario_cylinder(std::string mesh_file = {}) {
  Scenario s;
  s.id = "cylinder";
  s.mesh_file = std::move(mesh_file);
  s.mesh = [](double h) {
    int n = std::max(4, 2 * static_cast<int>(std::lround(0.5 / h)));
    return build_cylinder_mesh(n);
  };
  s.boundary = [](int, Point x, double t) { return Point{-x.y * (x.y - 1.0) * startup_ramp(t), 0.0}; };
  s.guess = [](Point x, double) { double e = std::exp(-(x.x + x.y)); return Point{e, e}; };
  return s;
}

/// Inlet profile 1.2 - 1.2 (y-1)^2 with y running over [0, 2] across each
/// branch inlet, ramped up from rest.
inline double ypipe_profile(double y) { return 1.2 - 1.2 * (y - 1.0) * (y - 1.0); }

inline Scenario scenario_ypipe(std::string mesh_file = {}) {
  Scenario s;
  s.id = "ypipe";
  s.mesh_file = std::move(mesh_file);
  s.mesh = [](double h) { return build_ypipe_mesh(std::max(2, static_cast<int>(std::lround(1.0 / h)))); };
  s.boundary = [](int profile, Point x, double t) {
    double local = profile == 0 ? x.y - 2.0 : x.y + 1.0;  // position across the inlet, in [0, 1]
    return Point{ypipe_profile(2.0 * local) * startup_ramp(t), 0.0};
  };
  s.guess = [](Point x, double) { double e = std::exp(-(x.x + x.y)); return Point{e, e}; };
  return s;
}

inline Scenario scenario_by_id(const std::string& id, const std::string& mesh_file = {}) {
  if (id == "rect") return scenario_rect();
  if (id == "cylinder") return scenario_cylinder(mesh_file);
  if (id == "ypipe") return scenario_ypipe(mesh_file);
  throw InvalidArgument("unknown scenario '" + id + "' (expected rect, cylinder or ypipe)");
}

inline Mesh scenario_mesh(const Scenario& s, double h) {
  if (!s.mesh_file.empty()) {
    std::ifstream in(s.mesh_file);
    if (!in) throw IoError("cannot open mesh file '" + s.mesh_file + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return import_mesh(buf.str());
  }
  return s.mesh(h);
}

/// Discretizes a scenario. The reference starts from u0 or, when unknown, from rest.
inline Model scenario_model(const Scenario& s, double h) {
  auto mesh = scenario_mesh(s, h);
  const bool inflow = mesh.has_marker(BoundaryMarker::Inflow);
  if (inflow && !s.boundary) throw ValidationError({"scenario " + s.id + ": mesh has inflow edges but no inflow data"});
  auto space = build_space(std::move(mesh));
  ProblemData data{s.force, inflow ? s.boundary : BoundaryData{}};
  VelocityFunction u0 = s.u0 ? s.u0 : VelocityFunction([](Point, double) { return Point{0.0, 0.0}; });
  return make_model(std::move(space), std::move(data), std::move(u0));
}

// ---------------------------------------------------------------------------
// Output

/// Legacy ASCII VTK on the P1 subdivision of the P2 mesh (four triangles per
/// element, one point per velocity node).
inline void export_vtk(std::ostream& os, const TaylorHoodSpace& space, const FieldState& state) {
  if (state.u.size() != space.n_u() || state.p.size() != space.n_p())
    throw DimensionError("export_vtk: state does not match the space");
  const auto& mesh = space.mesh();
  const std::size_t nn = space.num_nodes(), nv = mesh.num_vertices();
  os << "# vtk DataFile Version 3.0\nnudgeflow t=" << detail::format_double(state.t) << "\nASCII\n"
     << "DATASET UNSTRUCTURED_GRID\nPOINTS " << nn << " double\n";
  for (std::size_t n = 0; n < nn; ++n) {
    Point x = space.node_point(n);
    os << detail::format_double(x.x) << ' ' << detail::format_double(x.y) << " 0\n";
  }
  const std::size_t nc = 4 * mesh.num_triangles();
  os << "CELLS " << nc << ' ' << 4 * nc << '\n';
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    auto e = space.element_nodes(t);
    for (auto tri : {std::array{e[0], e[3], e[5]}, std::array{e[3], e[1], e[4]}, std::array{e[5], e[4], e[2]},
                     std::array{e[3], e[4], e[5]}})
      os << "3 " << tri[0] << ' ' << tri[1] << ' ' << tri[2] << '\n';
  }
  os << "CELL_TYPES " << nc << '\n';
  for (std::size_t k = 0; k < nc; ++k) os << "5\n";
  os << "POINT_DATA " << nn << "\nVECTORS velocity double\n";
  for (std::size_t n = 0; n < nn; ++n)
    os << detail::format_double(state.u[space.velocity_dof(n, 0)]) << ' '
       << detail::format_double(state.u[space.velocity_dof(n, 1)]) << " 0\n";
  os << "SCALARS pressure double 1\nLOOKUP_TABLE default\n";
  const auto& edges = mesh.edges();
  for (std::size_t n = 0; n < nn; ++n) {
    double p = n < nv ? state.p[static_cast<Eigen::Index>(n)]
                      : 0.5 * (state.p[edges[n - nv][0]] + state.p[edges[n - nv][1]]);
    os << detail::format_double(p) << '\n';
  }
}

inline void export_vtk(const std::string& path, const TaylorHoodSpace& space, const FieldState& state) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  export_vtk(os, space, state);
  if (!os) throw IoError("write to '" + path + "' failed");
}

struct TableColumn {
  std::string name;
  std::vector<double> values;
};

enum class TableFormat { Csv, Markdown };

/// Values of a series at the requested times: the latest sample at or before
/// each time.
inline std::vector<double> sample_at(const std::vector<double>& t, const std::vector<double>& v,
                                     const std::vector<double>& times) {
  if (t.size() != v.size() || t.empty()) throw ValidationError({"series is empty or ragged"});
  std::vector<double> out;
  for (double q : times) {
    auto it = std::upper_bound(t.begin(), t.end(), q + 1e-9 * std::max(1.0, std::abs(q)));
    if (it == t.begin()) throw ValidationError({"no sample at or before t=" + detail::format_double(q)});
    out.push_back(v[static_cast<std::size_t>(it - t.begin() - 1)]);
  }
  return out;
}

/// Rows are the sample times, one column per series.
inline std::string make_table(const std::vector<double>& times, const std::vector<TableColumn>& columns,
                              TableFormat format = TableFormat::Csv) {
  if (times.empty() || columns.empty()) throw InvalidArgument("make_table: nothing to tabulate");
  for (const auto& c : columns)
    if (c.values.size() != times.size())
      throw ValidationError({"column '" + c.name + "' has " + std::to_string(c.values.size()) + " rows, expected " +
                             std::to_string(times.size())});
  std::ostringstream os;
  auto sci = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    std::ostringstream s;
    s << std::scientific << std::setprecision(3) << std::uppercase << v;
    return s.str();
  };
  if (format == TableFormat::Csv) {
    os << 't';
    for (const auto& c : columns) os << ',' << c.name;
    os << '\n';
    for (std::size_t r = 0; r < times.size(); ++r) {
      os << detail::format_double(times[r]);
      for (const auto& c : columns) os << ',' << sci(c.values[r]);
      os << '\n';
    }
  } else {
    os << "| t |";
    for (const auto& c : columns) os << ' ' << c.name << " |";
    os << "\n|---|";
    for (std::size_t k = 0; k < columns.size(); ++k) os << "---|";
    os << '\n';
    for (std::size_t r = 0; r < times.size(); ++r) {
      os << "| " << detail::format_double(times[r]) << " |";
      for (const auto& c : columns) os << ' ' << sci(c.values[r]) << " |";
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace nudgeflow
