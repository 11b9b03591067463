#pragma once

// Taylor-Hood P2/P1 space: node numbering, reference basis, boundary
// constraints and nodal interpolation.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nudgeflow/linalg.hpp"
#include "nudgeflow/mesh.hpp"

namespace nudgeflow {

/// Quadratic Lagrange basis on the reference triangle. Local order: the
/// three vertices, then midpoints of (v0,v1), (v1,v2), (v2,v0).
struct P2Basis {
  static std::array<double, 6> values(double xi, double eta) {
    const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
    return {l0 * (2.0 * l0 - 1.0), l1 * (2.0 * l1 - 1.0), l2 * (2.0 * l2 - 1.0),
            4.0 * l0 * l1,         4.0 * l1 * l2,         4.0 * l2 * l0};
  }
  /// d/dxi, d/deta per basis function.
  static std::array<Point, 6> gradients(double xi, double eta) {
    const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
    // dl0 = (-1,-1), dl1 = (1,0), dl2 = (0,1)
    return {Point{-(4.0 * l0 - 1.0), -(4.0 * l0 - 1.0)},
            Point{4.0 * l1 - 1.0, 0.0},
            Point{0.0, 4.0 * l2 - 1.0},
            Point{4.0 * (l0 - l1), -4.0 * l1},
            Point{4.0 * l2, 4.0 * l1},
            Point{-4.0 * l2, 4.0 * (l0 - l2)}};
  }
};

struct P1Basis {
  static std::array<double, 3> values(double xi, double eta) { return {1.0 - xi - eta, xi, eta}; }
  static std::array<Point, 3> gradients() { return {Point{-1.0, -1.0}, Point{1.0, 0.0}, Point{0.0, 1.0}}; }
};

/// 1D quadratic basis on an edge: start vertex, midpoint, end vertex.
inline std::array<double, 3> edge_p2_values(double s) {
  return {(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)};
}

/// Affine map of one triangle.
struct ElementGeometry {
  Point origin;
  double j00, j01, j10, j11;  ///< columns are v1-v0 and v2-v0
  double det;

  ElementGeometry(Point a, Point b, Point c)
      : origin(a), j00(b.x - a.x), j01(c.x - a.x), j10(b.y - a.y), j11(c.y - a.y), det(j00 * j11 - j01 * j10) {}

  Point map(double xi, double eta) const { return {origin.x + j00 * xi + j01 * eta, origin.y + j10 * xi + j11 * eta}; }

  /// Reference gradient to physical gradient (J^{-T} g).
  Point grad(Point g) const { return {(j11 * g.x - j10 * g.y) / det, (-j01 * g.x + j00 * g.y) / det}; }

  double area() const { return 0.5 * std::abs(det); }
};

/// Velocity data for essential nodes: (inflow profile id, point, time).
using BoundaryData = std::function<Point(int, Point, double)>;
using VelocityFunction = std::function<Point(Point, double)>;
using ScalarFunction = std::function<double(Point, double)>;

enum class NodeKind : std::uint8_t { Free, Slip, Wall, Inflow };

struct FieldState {
  double t = 0.0;
  Vector u;  ///< velocity, component-major: [x-components | y-components]
  Vector p;  ///< pressure at vertices
};

class TaylorHoodSpace {
 public:
  explicit TaylorHoodSpace(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh)) {
    if (!mesh_) throw InvalidArgument("TaylorHoodSpace: null mesh");
    if (auto report = validate(*mesh_); !report.empty()) throw ValidationError(std::move(report));
    locator_ = std::make_unique<PointLocator>(*mesh_);
    classify();
    build_free_map();
  }

  const Mesh& mesh() const { return *mesh_; }
  std::shared_ptr<const Mesh> mesh_ptr() const { return mesh_; }
  const PointLocator& locator() const { return *locator_; }

  std::size_t num_nodes() const { return mesh_->num_vertices() + mesh_->num_edges(); }
  Eigen::Index n_u() const { return static_cast<Eigen::Index>(2 * num_nodes()); }
  Eigen::Index n_p() const { return static_cast<Eigen::Index>(mesh_->num_vertices()); }
  Eigen::Index n_free() const { return free_map_.cols(); }

  Eigen::Index velocity_dof(std::size_t node, int comp) const {
    return static_cast<Eigen::Index>(node + comp * num_nodes());
  }

  Point node_point(std::size_t node) const {
    const std::size_t nv = mesh_->num_vertices();
    if (node < nv) return mesh_->vertices()[node];
    const auto& e = mesh_->edges()[node - nv];
    return 0.5 * (mesh_->vertices()[e[0]] + mesh_->vertices()[e[1]]);
  }

  /// Global P2 nodes of triangle t in local basis order.
  std::array<int, 6> element_nodes(std::size_t t) const {
    const auto& tr = mesh_->triangles()[t];
    const auto& te = mesh_->triangle_edges(t);
    const int nv = static_cast<int>(mesh_->num_vertices());
    return {tr[0], tr[1], tr[2], nv + te[0], nv + te[1], nv + te[2]};
  }

  ElementGeometry geometry(std::size_t t) const {
    const auto& tr = mesh_->triangles()[t];
    const auto& v = mesh_->vertices();
    return ElementGeometry(v[tr[0]], v[tr[1]], v[tr[2]]);
  }

  /// Global P2 nodes along boundary edge b: start, midpoint, end.
  std::array<int, 3> boundary_nodes(std::size_t b) const {
    const auto& be = mesh_->boundary_edges()[b];
    int e = mesh_->find_edge(be.v[0], be.v[1]);
    return {be.v[0], static_cast<int>(mesh_->num_vertices()) + e, be.v[1]};
  }

  NodeKind node_kind(std::size_t node) const { return kind_[node]; }
  int node_profile(std::size_t node) const { return profile_[node]; }
  /// Outward unit normal at a slip node.
  Point slip_normal(std::size_t node) const { return normal_[node]; }

  /// Per velocity DOF: true when the DOF is fixed by an essential or slip condition.
  const std::vector<bool>& constrained() const { return constrained_; }
  /// Normal-component DOFs of slip nodes.
  const std::vector<Eigen::Index>& slip_constrained_dofs() const { return slip_dofs_; }

  /// u = P * u_free + lift; P has orthonormal columns.
  const SparseMatrix& free_map() const { return free_map_; }
  const SparseMatrix& free_map_transpose() const { return free_map_t_; }

  /// Essential boundary values at time t; zero elsewhere.
  Vector lift(const BoundaryData& data, double t) const {
    Vector g = Vector::Zero(n_u());
    if (!data) return g;
    for (std::size_t n = 0; n < num_nodes(); ++n) {
      if (kind_[n] != NodeKind::Inflow) continue;
      Point v = data(profile_[n], node_point(n), t);
      if (!std::isfinite(v.x) || !std::isfinite(v.y))
        throw EvaluationError("non-finite boundary data at " + describe(node_point(n)));
      g[velocity_dof(n, 0)] = v.x;
      g[velocity_dof(n, 1)] = v.y;
    }
    return g;
  }

  /// Projects u onto the affine constraint set: P P^T u + lift.
  Vector constrain(const Vector& u, const Vector& lift) const {
    if (u.size() != n_u() || lift.size() != n_u()) throw DimensionError("constrain: size mismatch");
    return free_map_ * (free_map_t_ * u) + lift;
  }

  /// Largest violation of the constraints by u (against the given lift).
  double constraint_violation(const Vector& u, const Vector& lift) const {
    return (constrain(u, lift) - u).lpNorm<Eigen::Infinity>();
  }

  static std::string describe(Point p) {
    return "(" + detail::format_double(p.x) + ", " + detail::format_double(p.y) + ")";
  }

 private:
  void classify() {
    const std::size_t nv = mesh_->num_vertices(), nn = num_nodes();
    kind_.assign(nn, NodeKind::Free);
    profile_.assign(nn, -1);
    normal_.assign(nn, Point{});
    std::vector<std::vector<Point>> normals(nn);
    std::vector<int> wall(nn, 0), inflow(nn, 0);
    const auto& bnd = mesh_->boundary_edges();
    for (std::size_t b = 0; b < bnd.size(); ++b) {
      const auto& be = bnd[b];
      for (int n : boundary_nodes(b)) {
        switch (be.marker) {
          case BoundaryMarker::Dirichlet: wall[n] = 1; break;
          case BoundaryMarker::Inflow:
            if (!inflow[n]) profile_[n] = be.profile;
            inflow[n] = 1;
            break;
          case BoundaryMarker::Slip: normals[n].push_back(mesh_->frame(b)->normal); break;
          case BoundaryMarker::Outflow: break;
        }
      }
    }
    for (std::size_t n = 0; n < nn; ++n) {
      if (wall[n]) {
        kind_[n] = NodeKind::Wall;
      } else if (inflow[n]) {
        kind_[n] = NodeKind::Inflow;
      } else if (!normals[n].empty()) {
        Point n0 = normals[n][0];
        bool corner = false;
        for (const auto& m : normals[n]) corner = corner || std::abs(cross(n0, m)) > 1e-8 || dot(n0, m) < 0.0;
        if (corner) {
          kind_[n] = NodeKind::Wall;
        } else {
          kind_[n] = NodeKind::Slip;
          if (std::abs(n0.x) < 1e-12) n0 = {0.0, n0.y > 0 ? 1.0 : -1.0};
          if (std::abs(n0.y) < 1e-12) n0 = {n0.x > 0 ? 1.0 : -1.0, 0.0};
          normal_[n] = n0;
        }
      }
      if (kind_[n] != NodeKind::Inflow) profile_[n] = -1;
    }
    (void)nv;
  }

  void build_free_map() {
    const std::size_t nn = num_nodes();
    constrained_.assign(static_cast<std::size_t>(n_u()), false);
    slip_dofs_.clear();
    struct Column {
      Eigen::Index key;
      std::size_t node;
      int comp;
    };
    std::vector<Column> cols;
    for (int c = 0; c < 2; ++c)
      for (std::size_t n = 0; n < nn; ++n) {
        const Eigen::Index dof = velocity_dof(n, c);
        switch (kind_[n]) {
          case NodeKind::Free: cols.push_back({dof, n, c}); break;
          case NodeKind::Wall:
          case NodeKind::Inflow: constrained_[dof] = true; break;
          case NodeKind::Slip: {
            const Point nr = normal_[n];
            const int normal_comp = std::abs(nr.x) >= std::abs(nr.y) ? 0 : 1;
            if (c == normal_comp) {
              constrained_[dof] = true;
              slip_dofs_.push_back(dof);
            } else {
              cols.push_back({dof, n, -1});
            }
            break;
          }
        }
      }
    TripletBuilder pb(n_u(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& col = cols[k];
      if (col.comp >= 0) {
        pb.add(col.key, static_cast<Eigen::Index>(k), 1.0);
      } else {
        const Point nr = normal_[col.node];
        const Point tau{-nr.y, nr.x};
        if (tau.x != 0.0) pb.add(velocity_dof(col.node, 0), static_cast<Eigen::Index>(k), tau.x);
        if (tau.y != 0.0) pb.add(velocity_dof(col.node, 1), static_cast<Eigen::Index>(k), tau.y);
      }
    }
    free_map_ = pb.build();
    free_map_t_ = SparseMatrix(free_map_.transpose());
    free_map_t_.makeCompressed();
  }

  std::shared_ptr<const Mesh> mesh_;
  std::unique_ptr<PointLocator> locator_;
  std::vector<NodeKind> kind_;
  std::vector<int> profile_;
  std::vector<Point> normal_;
  std::vector<bool> constrained_;
  std::vector<Eigen::Index> slip_dofs_;
  SparseMatrix free_map_, free_map_t_;
};

inline std::shared_ptr<const TaylorHoodSpace> build_space(std::shared_ptr<const Mesh> mesh) {
  return std::make_shared<const TaylorHoodSpace>(std::move(mesh));
}

inline std::shared_ptr<const TaylorHoodSpace> build_space(Mesh mesh) {
  return build_space(std::make_shared<const Mesh>(std::move(mesh)));
}

/// Nodal interpolation; a null pressure function gives zero pressure.
inline FieldState interpolate_field(const TaylorHoodSpace& space, const VelocityFunction& velocity,
                                    const ScalarFunction& pressure, double t) {
  FieldState s;
  s.t = t;
  s.u = Vector::Zero(space.n_u());
  s.p = Vector::Zero(space.n_p());
  for (std::size_t n = 0; n < space.num_nodes(); ++n) {
    Point x = space.node_point(n);
    Point v = velocity ? velocity(x, t) : Point{};
    if (!std::isfinite(v.x) || !std::isfinite(v.y))
      throw EvaluationError("non-finite velocity at " + TaylorHoodSpace::describe(x));
    s.u[space.velocity_dof(n, 0)] = v.x;
    s.u[space.velocity_dof(n, 1)] = v.y;
  }
  if (pressure)
    for (Eigen::Index n = 0; n < space.n_p(); ++n) {
      Point x = space.mesh().vertices()[n];
      double p = pressure(x, t);
      if (!std::isfinite(p)) throw EvaluationError("non-finite pressure at " + TaylorHoodSpace::describe(x));
      s.p[n] = p;
    }
  return s;
}

/// Velocity of coefficient vector u at reference point (xi, eta) of triangle t.
inline Point velocity_at(const TaylorHoodSpace& space, const Vector& u, std::size_t t, double xi, double eta) {
  auto nodes = space.element_nodes(t);
  auto phi = P2Basis::values(xi, eta);
  Point v;
  for (int i = 0; i < 6; ++i) {
    v.x += phi[i] * u[space.velocity_dof(nodes[i], 0)];
    v.y += phi[i] * u[space.velocity_dof(nodes[i], 1)];
  }
  return v;
}

struct FieldValue {
  Point velocity;
  double pressure = 0.0;
};

inline FieldValue eval_field(const TaylorHoodSpace& space, const FieldState& state, Point x) {
  if (state.u.size() != space.n_u() || state.p.size() != space.n_p())
    throw DimensionError("eval_field: state does not match the space");
  auto hit = space.locator().locate(x);
  if (!hit) throw LocationError("point " + TaylorHoodSpace::describe(x) + " is outside the mesh");
  const double xi = hit->bary[1], eta = hit->bary[2];
  FieldValue out;
  out.velocity = velocity_at(space, state.u, hit->triangle, xi, eta);
  const auto& tr = space.mesh().triangles()[hit->triangle];
  auto psi = P1Basis::values(xi, eta);
  for (int i = 0; i < 3; ++i) out.pressure += psi[i] * state.p[tr[i]];
  return out;
}

}  // namespace nudgeflow
