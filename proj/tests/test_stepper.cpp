#include <gtest/gtest.h>

#include <numbers>

#include "nudgeflow/stepper.hpp"
#include "oracle.hpp"

using namespace nudgeflow;
using oracle::Poly;
using std::numbers::pi;

namespace {

Point rect_initial(Point x, double) {
  return {2 * pi * std::pow(std::sin(pi * x.x), 2) * std::sin(pi * x.y) * std::cos(pi * x.y),
          -2 * pi * std::sin(pi * x.x) * std::cos(pi * x.x) * std::pow(std::sin(pi * x.y), 2)};
}

struct Case {
  std::shared_ptr<const TaylorHoodSpace> space;
  FormSet forms;
  explicit Case(int n, SideSet slip = {}) : space(build_space(build_rect_mesh(n, n, {}, slip))) {
    forms = assemble_forms(*space);
  }
};

// stream function x^2 (1-x)^2 y^2 (1-y)^2, pressure x^2 - 1/3
struct StokesCase {
  Poly ux, uy, p, fx, fy;
  explicit StokesCase(double nu) {
    Poly x = Poly::x(), y = Poly::y(), one = Poly::constant(1.0);
    Poly sx = x * x * (one - x) * (one - x), sy = y * y * (one - y) * (one - y);
    Poly psi = sx * sy;
    ux = psi.dy();
    uy = psi.dx() * -1.0;
    p = x * x - Poly::constant(1.0 / 3.0);
    auto lap = [](const Poly& q) { return q.dx().dx() + q.dy().dy(); };
    fx = lap(ux) * -nu + p.dx();
    fy = lap(uy) * -nu + p.dy();
  }
};

}  // namespace

TEST(Stepper, ConfigValidation) {
  SolverConfig c;
  c.dt = 0.0;
  c.slip.eps = -1.0;
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.violations().size(), 2u);
  }
  c = SolverConfig{};
  c.t_end = 1.0;
  c.dt = 0.3;
  EXPECT_EQ(c.steps(), 4u);
  c.dt = 0.1;
  EXPECT_EQ(c.steps(), 10u);
}

TEST(Stepper, RestStateStaysAtRest) {
  Case s(4, side::bottom);
  SolverConfig c;
  c.dt = 0.1;
  Stepper st(s.space, s.forms, c);
  auto u0 = st.initial_state(Vector::Zero(s.space->n_u()));
  StepDiagnostics d;
  auto u1 = st.step(u0, nullptr, &d, 1);
  EXPECT_EQ(u1.u.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(u1.p.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(d.kinetic, 0.0);
}

TEST(Stepper, StokesFixedPoint) {
  const double nu = 0.5;
  StokesCase mc(nu);
  Case s(8);
  ProblemData data;
  data.force = [&](Point x, double) { return Point{mc.fx(x.x, x.y), mc.fy(x.x, x.y)}; };
  // discrete steady Stokes solution
  const auto& P = s.space->free_map();
  const auto& Pt = s.space->free_map_transpose();
  SaddleSystem sys;
  sys.A = SparseMatrix(Pt * (nu * s.forms.K) * P);
  sys.B = SparseMatrix(-1.0 * (s.forms.D * P));
  sys.f_u = Pt * assemble_load(*s.space, data.force, 0.0);
  sys.f_p = Vector::Zero(s.space->n_p());
  sys.mean_row = s.forms.mean;
  auto sol = solve_saddle(sys);
  FieldState steady{0.0, P * sol.u, sol.p};

  // close to the exact field
  auto exact = interpolate_field(
      *s.space, [&](Point x, double) { return Point{mc.ux(x.x, x.y), mc.uy(x.x, x.y)}; }, nullptr, 0.0);
  Vector e = steady.u - exact.u;
  EXPECT_LE(std::sqrt(e.dot(s.forms.M * e)), 1e-2 * std::sqrt(exact.u.dot(s.forms.M * exact.u)));

  SolverConfig c;
  c.nu = nu;
  c.dt = 0.05;
  c.convection = false;
  c.project_initial = false;
  Stepper st(s.space, s.forms, c, data);
  auto next = st.step(steady, nullptr);
  EXPECT_LE((next.u - steady.u).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LE((next.p - steady.p).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Stepper, SelfObservationLeavesStepUnchanged) {
  Case s(8, side::bottom);
  SolverConfig c;
  c.nu = 0.01;
  c.dt = 0.01;
  Stepper plain(s.space, s.forms, c);
  auto u0 = plain.initial_state(rect_initial);
  auto u1 = plain.step(u0, nullptr);

  ObservationOperator op(s.space, 0.25);
  ObservationStream obs;
  obs.meta = stream_meta(op, c.dt);
  obs.frames = {{0.0, op.apply(u0.u)}, {c.dt, op.apply(u1.u)}};
  StreamFrameSource src(obs);
  c.mu = 1e3;
  Stepper nudged(s.space, s.forms, c);
  nudged.set_nudging(op, src);
  auto v1 = nudged.step(u0, nullptr);
  EXPECT_LE((v1.u - u1.u).lpNorm<Eigen::Infinity>(), 1e-10 * u1.u.lpNorm<Eigen::Infinity>());
}

TEST(Stepper, NudgingPullsTowardObservations) {
  Case s(8);
  SolverConfig c;
  c.nu = 0.01;
  c.dt = 0.01;
  c.t_end = 0.2;
  c.mu = 50.0;
  c.convection = false;
  ObservationOperator op(s.space, 0.25);
  // a coarse-representable target
  Stepper st(s.space, s.forms, c);
  auto target = st.initial_state(rect_initial);
  ObservationStream obs;
  obs.meta = stream_meta(op, c.dt);
  for (int k = 0; k <= 20; ++k) obs.frames.push_back({k * c.dt, op.apply(target.u)});
  StreamFrameSource src(obs);
  st.set_nudging(op, src);
  auto tr = st.run(st.initial_state(Vector::Zero(s.space->n_u())));
  Vector d0 = op.apply(target.u), d1 = op.apply(target.u - tr.states.back().u);
  EXPECT_LT(d1.norm(), 0.5 * d0.norm());
}

TEST(Stepper, ViscousDecayIsStrict) {
  Case s(8);
  SolverConfig c;
  c.nu = 1.0;
  c.dt = 0.01;
  c.t_end = 0.1;
  Stepper st(s.space, s.forms, c);
  auto u0 = st.initial_state(rect_initial);
  auto tr = st.run(u0);
  ASSERT_EQ(tr.diagnostics.size(), 10u);
  double prev = st.diagnostics(u0).kinetic;
  for (const auto& d : tr.diagnostics) {
    EXPECT_LT(d.kinetic, prev);
    prev = d.kinetic;
  }
  EXPECT_EQ(tr.states.size(), 11u);
  EXPECT_NEAR(tr.states.back().t, 0.1, 1e-15);
}

TEST(Stepper, SlipDissipationAndEnergyBound) {
  Case s(8, side::bottom);
  SolverConfig c;
  c.nu = 0.01;
  c.dt = 0.01;
  c.t_end = 0.5;
  c.slip.eps = 1e-3;
  c.output_every = 0;
  Stepper st(s.space, s.forms, c);
  auto u0 = st.initial_state(rect_initial);
  auto tr = st.run(u0);
  EXPECT_EQ(tr.states.size(), 2u);
  auto rep = energy_report(tr, st.diagnostics(u0).kinetic, c.nu);
  EXPECT_TRUE(rep.monotone);
  EXPECT_TRUE(rep.dissipation_nonnegative);
  EXPECT_LE(rep.worst_ratio, 1.05);
  EXPECT_LE(rep.max_div_residual, 10 * c.tol);
  double slip = 0.0;
  for (const auto& d : tr.diagnostics) slip += d.mid_slip;
  EXPECT_GT(slip, 0.0);
}

TEST(Stepper, ForcedEnergyBound) {
  Case s(8);
  SolverConfig c;
  c.nu = 0.05;
  c.dt = 0.02;
  c.t_end = 0.4;
  ProblemData data;
  data.force = [](Point x, double t) { return Point{std::sin(pi * x.y) * (1 + t), x.x * x.x}; };
  Stepper st(s.space, s.forms, c, data);
  auto u0 = st.initial_state(rect_initial);
  auto tr = st.run(u0);
  auto rep = energy_report(tr, st.diagnostics(u0).kinetic, c.nu);
  EXPECT_LE(rep.worst_ratio, 1.0);
}

TEST(Stepper, SecondOrderInTime) {
  Case s(6);
  auto run = [&](double dt) {
    SolverConfig c;
    c.nu = 0.05;
    c.dt = dt;
    c.t_end = 0.4;
    c.output_every = 0;
    Stepper st(s.space, s.forms, c);
    return st.run(st.initial_state(rect_initial)).states.back().u;
  };
  Vector ref = run(0.4 / 256);
  std::vector<double> err;
  for (int n : {8, 16, 32}) {
    Vector e = run(0.4 / n) - ref;
    err.push_back(std::sqrt(e.dot(s.forms.M * e)));
  }
  EXPECT_GE(std::log2(err[1] / err[2]), 1.8) << err[0] << " " << err[1] << " " << err[2];
}

TEST(Stepper, NonFiniteForceReported) {
  Case s(4);
  SolverConfig c;
  ProblemData data;
  data.force = [](Point, double t) { return Point{t > 0.0 ? NAN : 0.0, 0.0}; };
  Stepper st(s.space, s.forms, c, data);
  auto u0 = st.initial_state(Vector::Zero(s.space->n_u()));
  EXPECT_THROW(st.step(u0, nullptr), EvaluationError);
}

TEST(Stepper, InflowDataHonored) {
  auto mesh = build_rect_mesh(8, 4, Rect{0, 0, 2, 1},
                              {BoundaryMarker::Dirichlet, BoundaryMarker::Outflow, BoundaryMarker::Dirichlet,
                               BoundaryMarker::Inflow});
  auto space = build_space(std::move(mesh));
  auto forms = assemble_forms(*space);
  SolverConfig c;
  c.nu = 0.1;
  c.dt = 0.05;
  c.t_end = 0.5;
  ProblemData data;
  data.boundary = [](int, Point x, double) { return Point{4 * x.y * (1 - x.y), 0.0}; };
  Stepper st(space, forms, c, data);
  auto tr = st.run(st.initial_state(Vector::Zero(space->n_u())));
  Vector g = space->lift(data.boundary, 0.5);
  EXPECT_LE(space->constraint_violation(tr.states.back().u, g), 1e-14);
  // flux through the inlet is carried to the outlet
  auto v = eval_field(*space, tr.states.back(), Point{1.9, 0.5});
  EXPECT_GT(v.velocity.x, 0.5);
}
