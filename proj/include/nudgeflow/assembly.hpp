#pragma once

// Finite element forms on a TaylorHoodSpace: mass, stiffness, divergence,
// convection, the regularized slip term and load vectors.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "nudgeflow/linalg.hpp"
#include "nudgeflow/quadrature.hpp"
#include "nudgeflow/space.hpp"

namespace nudgeflow {

/// Worker count for element loops: NUDGEFLOW_THREADS if set, else the
/// hardware concurrency.
inline int assembly_threads() {
  if (const char* env = std::getenv("NUDGEFLOW_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(std::min<long>(v, 256));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs kernel(t, builder) over all triangles. Triangles are split into
/// contiguous chunks, one builder each; chunks are merged in triangle order
/// so the result does not depend on the thread count.
template <class Kernel>
SparseMatrix assemble_elements(const TaylorHoodSpace& space, Eigen::Index rows, Eigen::Index cols, Kernel&& kernel) {
  const std::size_t nt = space.mesh().num_triangles();
  const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(assembly_threads()), std::max<std::size_t>(nt / 64, 1)));
  std::vector<TripletBuilder> parts(static_cast<std::size_t>(nthreads), TripletBuilder(rows, cols));
  auto run = [&](int k) {
    std::size_t lo = nt * k / nthreads, hi = nt * (k + 1) / nthreads;
    for (std::size_t t = lo; t < hi; ++t) kernel(t, parts[k]);
  };
  if (nthreads == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nthreads));
    for (int k = 0; k < nthreads; ++k)
      pool.emplace_back([&, k] {
        try {
          run(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  TripletBuilder all(rows, cols);
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  all.reserve(total);
  for (const auto& p : parts) all.append(p);
  return all.build();
}

namespace detail {

template <class Local>
void scatter_vector_block(const TaylorHoodSpace& space, const std::array<int, 6>& nodes, const Local& local,
                          TripletBuilder& out) {
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        out.add(space.velocity_dof(nodes[i], c), space.velocity_dof(nodes[j], c), local[i][j]);
}

}  // namespace detail

using Local6 = std::array<std::array<double, 6>, 6>;

/// Velocity mass matrix, block diagonal in the two components.
inline SparseMatrix assemble_mass(const TaylorHoodSpace& space, const QuadratureRule& rule = default_rule()) {
  return assemble_elements(space, space.n_u(), space.n_u(), [&](std::size_t t, TripletBuilder& out) {
    auto geo = space.geometry(t);
    Local6 m{};
    for (const auto& q : rule.triangle) {
      auto phi = P2Basis::values(q.xi, q.eta);
      double w = q.weight * std::abs(geo.det);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) m[i][j] += w * phi[i] * phi[j];
    }
    detail::scatter_vector_block(space, space.element_nodes(t), m, out);
  });
}

/// (grad u, grad v) for both components.
inline SparseMatrix assemble_stiffness(const TaylorHoodSpace& space, const QuadratureRule& rule = default_rule()) {
  return assemble_elements(space, space.n_u(), space.n_u(), [&](std::size_t t, TripletBuilder& out) {
    auto geo = space.geometry(t);
    Local6 k{};
    for (const auto& q : rule.triangle) {
      auto dref = P2Basis::gradients(q.xi, q.eta);
      std::array<Point, 6> d;
      for (int i = 0; i < 6; ++i) d[i] = geo.grad(dref[i]);
      double w = q.weight * std::abs(geo.det);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) k[i][j] += w * dot(d[i], d[j]);
    }
    detail::scatter_vector_block(space, space.element_nodes(t), k, out);
  });
}

/// D[q, v] = (psi_q, div phi_v); rows are pressure DOFs.
inline SparseMatrix assemble_divergence(const TaylorHoodSpace& space, const QuadratureRule& rule = default_rule()) {
  return assemble_elements(space, space.n_p(), space.n_u(), [&](std::size_t t, TripletBuilder& out) {
    auto geo = space.geometry(t);
    auto nodes = space.element_nodes(t);
    const auto& tr = space.mesh().triangles()[t];
    std::array<std::array<double, 6>, 3> dx{}, dy{};
    for (const auto& q : rule.triangle) {
      auto dref = P2Basis::gradients(q.xi, q.eta);
      auto psi = P1Basis::values(q.xi, q.eta);
      double w = q.weight * std::abs(geo.det);
      for (int j = 0; j < 6; ++j) {
        Point g = geo.grad(dref[j]);
        for (int i = 0; i < 3; ++i) {
          dx[i][j] += w * psi[i] * g.x;
          dy[i][j] += w * psi[i] * g.y;
        }
      }
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 6; ++j) {
        out.add(tr[i], space.velocity_dof(nodes[j], 0), dx[i][j]);
        out.add(tr[i], space.velocity_dof(nodes[j], 1), dy[i][j]);
      }
  });
}

/// P1 pressure mass matrix.
inline SparseMatrix assemble_pressure_mass(const TaylorHoodSpace& space, const QuadratureRule& rule = default_rule()) {
  return assemble_elements(space, space.n_p(), space.n_p(), [&](std::size_t t, TripletBuilder& out) {
    auto geo = space.geometry(t);
    const auto& tr = space.mesh().triangles()[t];
    std::array<std::array<double, 3>, 3> m{};
    for (const auto& q : rule.triangle) {
      auto psi = P1Basis::values(q.xi, q.eta);
      double w = q.weight * std::abs(geo.det);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] += w * psi[i] * psi[j];
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out.add(tr[i], tr[j], m[i][j]);
  });
}

enum class ConvectionForm { SkewSymmetric, Standard };

/// Matrix of u -> (w . grad u, v). The skew form is half of N - N^T, which
/// makes v^T C(w) v vanish for every w.
inline SparseMatrix assemble_convection(const TaylorHoodSpace& space, const Vector& w,
                                        ConvectionForm form = ConvectionForm::SkewSymmetric,
                                        const QuadratureRule& rule = degree5_rule()) {
  if (w.size() != space.n_u()) throw DimensionError("assemble_convection: w has wrong size");
  if (!w.allFinite()) throw InvalidArgument("assemble_convection: non-finite advecting velocity");
  return assemble_elements(space, space.n_u(), space.n_u(), [&](std::size_t t, TripletBuilder& out) {
    auto geo = space.geometry(t);
    auto nodes = space.element_nodes(t);
    std::array<double, 6> wx, wy;
    for (int i = 0; i < 6; ++i) {
      wx[i] = w[space.velocity_dof(nodes[i], 0)];
      wy[i] = w[space.velocity_dof(nodes[i], 1)];
    }
    Local6 n{};
    for (const auto& q : rule.triangle) {
      auto phi = P2Basis::values(q.xi, q.eta);
      auto dref = P2Basis::gradients(q.xi, q.eta);
      Point wq;
      for (int i = 0; i < 6; ++i) wq = wq + Point{phi[i] * wx[i], phi[i] * wy[i]};
      double wt = q.weight * std::abs(geo.det);
      for (int j = 0; j < 6; ++j) {
        double adv = dot(wq, geo.grad(dref[j]));
        for (int i = 0; i < 6; ++i) n[i][j] += wt * adv * phi[i];
      }
    }
    if (form == ConvectionForm::SkewSymmetric) {
      Local6 s{};
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) s[i][j] = 0.5 * (n[i][j] - n[j][i]);
      detail::scatter_vector_block(space, nodes, s, out);
    } else {
      detail::scatter_vector_block(space, nodes, n, out);
    }
  });
}

/// Friction coefficient g >= 0 on S and regularization eps > 0.
struct SlipParams {
  std::function<double(Point)> g = [](Point) { return 1.0; };
  double eps = 1e-5;
};

/// beta(x) = g x / sqrt(x^2 + eps^2).
inline double beta(double x, double g, double eps) { return g * (x / std::hypot(x, eps)); }

namespace detail {

inline void check_slip_params(const SlipParams& params) {
  if (!(params.eps > 0.0)) throw InvalidArgument("slip regularization eps must be positive");
  if (!params.g) throw InvalidArgument("slip friction coefficient g is not set");
}

/// Calls fn(point, weight*length, g, u_tau, basis, tangent, nodes) at every
/// edge quadrature point of every slip edge.
template <class Fn>
void for_each_slip_point(const TaylorHoodSpace& space, const SlipParams& params, const Vector& u,
                         const QuadratureRule& rule, Fn&& fn) {
  check_slip_params(params);
  if (u.size() != space.n_u()) throw DimensionError("slip term: velocity has wrong size");
  const auto& mesh = space.mesh();
  std::vector<std::string> negative;
  for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b) {
    if (mesh.boundary_edges()[b].marker != BoundaryMarker::Slip) continue;
    auto nodes = space.boundary_nodes(b);
    Point tau = mesh.frame(b)->tangent;
    Point a = mesh.vertices()[nodes[0]], c = mesh.vertices()[nodes[2]];
    double len = norm(c - a);
    std::array<double, 3> ut;
    for (int k = 0; k < 3; ++k)
      ut[k] = tau.x * u[space.velocity_dof(nodes[k], 0)] + tau.y * u[space.velocity_dof(nodes[k], 1)];
    for (const auto& q : rule.edge) {
      Point x = a + q.s * (c - a);
      double g = params.g(x);
      if (!(g >= 0.0)) {
        negative.push_back("friction coefficient " + detail::format_double(g) + " at " + TaylorHoodSpace::describe(x));
        continue;
      }
      auto nb = edge_p2_values(q.s);
      double u_tau = nb[0] * ut[0] + nb[1] * ut[1] + nb[2] * ut[2];
      fn(x, q.weight * len, g, u_tau, nb, tau, nodes);
    }
  }
  if (!negative.empty()) throw ValidationError(std::move(negative));
}

}  // namespace detail

struct SlipForms {
  SparseMatrix matrix;
  Vector vector;  ///< zero for the lagged-denominator linearization
};

/// Lagged-denominator linearization of (beta(u_tau), v_tau)_S around u_prev.
inline SlipForms assemble_slip(const TaylorHoodSpace& space, const SlipParams& params, const Vector& u_prev,
                               const QuadratureRule& rule = default_rule()) {
  TripletBuilder tb(space.n_u(), space.n_u());
  detail::for_each_slip_point(space, params, u_prev, rule,
                              [&](Point, double w, double g, double u_tau, const std::array<double, 3>& nb, Point tau,
                                  const std::array<int, 3>& nodes) {
                                double coef = w * g / std::sqrt(u_tau * u_tau + params.eps * params.eps);
                                const double tc[2] = {tau.x, tau.y};
                                for (int k = 0; k < 3; ++k)
                                  for (int l = 0; l < 3; ++l)
                                    for (int c = 0; c < 2; ++c)
                                      for (int d = 0; d < 2; ++d)
                                        tb.add(space.velocity_dof(nodes[k], c), space.velocity_dof(nodes[l], d),
                                               coef * nb[k] * nb[l] * tc[c] * tc[d]);
                              });
  return {tb.build(), Vector::Zero(space.n_u())};
}

/// Regularized functional: integral of g sqrt(u_tau^2 + eps^2) over S.
inline double j_eps(const TaylorHoodSpace& space, const SlipParams& params, const Vector& u,
                    const QuadratureRule& rule = default_rule()) {
  double sum = 0.0;
  detail::for_each_slip_point(space, params, u, rule, [&](Point, double w, double g, double u_tau, auto&&...) {
    sum += w * g * std::sqrt(u_tau * u_tau + params.eps * params.eps);
  });
  return sum;
}

/// Unregularized functional: integral of g |u_tau| over S.
inline double j_abs(const TaylorHoodSpace& space, const SlipParams& params, const Vector& u,
                    const QuadratureRule& rule = default_rule()) {
  double sum = 0.0;
  detail::for_each_slip_point(space, params, u, rule,
                              [&](Point, double w, double g, double u_tau, auto&&...) { sum += w * g * std::abs(u_tau); });
  return sum;
}

/// (beta(u_tau), u_tau)_S.
inline double slip_dissipation(const TaylorHoodSpace& space, const SlipParams& params, const Vector& u,
                               const QuadratureRule& rule = default_rule()) {
  double sum = 0.0;
  detail::for_each_slip_point(space, params, u, rule,
                              [&](Point, double w, double g, double u_tau, auto&&...) {
                                sum += w * beta(u_tau, g, params.eps) * u_tau;
                              });
  return sum;
}

/// Integral of g over S.
inline double slip_weight(const TaylorHoodSpace& space, const SlipParams& params,
                          const QuadratureRule& rule = default_rule()) {
  double sum = 0.0;
  detail::for_each_slip_point(space, params, Vector::Zero(space.n_u()), rule,
                              [&](Point, double w, double g, auto&&...) { sum += w * g; });
  return sum;
}

/// F[(i,c)] = (f_c, phi_i). A null f gives zero.
inline Vector assemble_load(const TaylorHoodSpace& space, const VelocityFunction& f, double t,
                            const QuadratureRule& rule = default_rule()) {
  Vector out = Vector::Zero(space.n_u());
  if (!f) return out;
  for (std::size_t e = 0; e < space.mesh().num_triangles(); ++e) {
    auto geo = space.geometry(e);
    auto nodes = space.element_nodes(e);
    for (const auto& q : rule.triangle) {
      Point x = geo.map(q.xi, q.eta);
      Point fv = f(x, t);
      if (!std::isfinite(fv.x) || !std::isfinite(fv.y))
        throw EvaluationError("non-finite body force at " + TaylorHoodSpace::describe(x));
      auto phi = P2Basis::values(q.xi, q.eta);
      double w = q.weight * std::abs(geo.det);
      for (int i = 0; i < 6; ++i) {
        out[space.velocity_dof(nodes[i], 0)] += w * fv.x * phi[i];
        out[space.velocity_dof(nodes[i], 1)] += w * fv.y * phi[i];
      }
    }
  }
  return out;
}

/// Squared L2 norm of an analytic field by quadrature.
inline double l2_norm_squared(const TaylorHoodSpace& space, const VelocityFunction& f, double t,
                              const QuadratureRule& rule = default_rule()) {
  if (!f) return 0.0;
  double sum = 0.0;
  for (std::size_t e = 0; e < space.mesh().num_triangles(); ++e) {
    auto geo = space.geometry(e);
    for (const auto& q : rule.triangle) {
      Point fv = f(geo.map(q.xi, q.eta), t);
      sum += q.weight * std::abs(geo.det) * dot(fv, fv);
    }
  }
  return sum;
}

/// Matrices that depend only on the space.
struct FormSet {
  SparseMatrix M;   ///< velocity mass
  SparseMatrix K;   ///< velocity stiffness
  SparseMatrix D;   ///< divergence, n_p x n_u
  SparseMatrix Mp;  ///< pressure mass
  Vector mean;      ///< (psi_q, 1), the zero-mean constraint weights
};

inline FormSet assemble_forms(const TaylorHoodSpace& space, const QuadratureRule& rule = default_rule()) {
  FormSet f;
  f.M = assemble_mass(space, rule);
  f.K = assemble_stiffness(space, rule);
  f.D = assemble_divergence(space, rule);
  f.Mp = assemble_pressure_mass(space, rule);
  f.mean = f.Mp * Vector::Ones(space.n_p());
  return f;
}

struct Norms {
  double l2 = 0.0;        ///< ||u||
  double h1 = 0.0;        ///< ||grad u||
  double pressure = 0.0;  ///< ||p||
};

inline Norms norms(const FormSet& forms, const Vector& u, const Vector& p) {
  if (u.size() != forms.M.rows()) throw DimensionError("norms: velocity has wrong size");
  if (p.size() != forms.Mp.rows()) throw DimensionError("norms: pressure has wrong size");
  return {std::sqrt(std::max(0.0, u.dot(forms.M * u))), std::sqrt(std::max(0.0, u.dot(forms.K * u))),
          std::sqrt(std::max(0.0, p.dot(forms.Mp * p)))};
}

inline Norms norms(const FormSet& forms, const FieldState& s) { return norms(forms, s.u, s.p); }

/// Pressure mean over the domain.
inline double pressure_mean(const FormSet& forms, const Vector& p) {
  return p.dot(forms.mean) / forms.mean.sum();
}

}  // namespace nudgeflow
