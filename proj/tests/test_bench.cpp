#include <gtest/gtest.h>

#include <numbers>

#include "nudgeflow/bench.hpp"

using namespace nudgeflow;

namespace {

double length_of(const Mesh& m, BoundaryMarker k) { return m.boundary_length(k); }

}  // namespace

TEST(Bench, ScenarioDefaults) {
  ScenarioDefaults d;
  EXPECT_EQ(d.nu, 1e-3);
  EXPECT_EQ(d.g, 1.0);
  EXPECT_EQ(d.eps, 1e-5);
  EXPECT_EQ(d.mu, 20.0);
  EXPECT_EQ(d.h_coarse, 0.125);
  EXPECT_EQ(d.h, 1.0 / 32);
  EXPECT_EQ(d.dt, 1e-3);
  EXPECT_EQ(d.t_end, 30.0);
}

TEST(Bench, UnknownScenario) { EXPECT_THROW(scenario_by_id("duct"), InvalidArgument); }

TEST(Bench, CylinderInflow) {
  auto s = scenario_cylinder();
  EXPECT_NEAR(s.boundary(0, {0.0, 0.5}, 2.0).x, 0.25, 1e-15);
  EXPECT_EQ(s.boundary(0, {0.0, 0.5}, 0.0).x, 0.0);
  EXPECT_NEAR(s.boundary(0, {0.0, 0.5}, 0.5).x, 0.125, 1e-15);
  EXPECT_EQ(s.boundary(0, {0.0, 0.0}, 2.0).x, 0.0);
  auto g = s.guess({0.3, 0.2}, 0.0);
  EXPECT_NEAR(g.x, std::exp(-0.5), 1e-15);
  EXPECT_EQ(g.x, g.y);
}

TEST(Bench, YpipeInflow) {
  auto s = scenario_ypipe();
  EXPECT_NEAR(s.boundary(0, {0.0, 2.5}, 1.0).x, 1.2, 1e-14);
  EXPECT_NEAR(s.boundary(1, {0.0, -0.5}, 1.0).x, 1.2, 1e-14);
  EXPECT_NEAR(s.boundary(0, {0.0, 2.0}, 1.0).x, 0.0, 1e-14);
  EXPECT_NEAR(s.boundary(1, {0.0, 0.0}, 1.0).x, 0.0, 1e-14);
  EXPECT_EQ(s.boundary(0, {0.0, 2.5}, 1.0).y, 0.0);
}

TEST(Bench, CylinderMeshMarkers) {
  auto m = build_cylinder_mesh(8);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Inflow), 1.0, 1e-12);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Outflow), 1.0, 1e-12);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Slip), 6.0, 1e-12);
  // top wall plus the polygonal disk
  double wall = length_of(m, BoundaryMarker::Dirichlet);
  EXPECT_GT(wall, 6.0 + 0.95 * 2 * std::numbers::pi * 0.15);
  EXPECT_LT(wall, 6.0 + 2 * std::numbers::pi * 0.15);
  EXPECT_NEAR(m.total_area(), 6.0 - std::numbers::pi * 0.0225, 0.01);
  EXPECT_TRUE(validate(m).empty());
  EXPECT_THROW(build_cylinder_mesh(5), InvalidArgument);
}

TEST(Bench, YpipeMeshMarkers) {
  auto m = build_ypipe_mesh(4);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Inflow), 2.0, 1e-12);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Outflow), 2.0, 1e-12);
  EXPECT_NEAR(length_of(m, BoundaryMarker::Slip), 4.0, 1e-12);
  EXPECT_NEAR(m.total_area(), 12.0, 1e-12);
  int profile0 = 0, profile1 = 0;
  for (const auto& e : m.boundary_edges()) {
    if (e.marker != BoundaryMarker::Inflow) continue;
    (e.profile == 0 ? profile0 : profile1) += 1;
  }
  EXPECT_EQ(profile0, 4);
  EXPECT_EQ(profile1, 4);
}

TEST(Bench, BlockMeshSharesInterfaceVertices) {
  const int n = 3;
  std::vector<MeshBlock> blocks = {{[](double u, double v) { return Point{u, v}; }, n, n},
                                   {[](double u, double v) { return Point{1.0 + u, v}; }, n, n}};
  auto m = build_block_mesh(blocks, [](Point, Point) { return EdgeClass{}; });
  EXPECT_EQ(m.num_vertices(), static_cast<std::size_t>((2 * n + 1) * (n + 1)));
  EXPECT_EQ(m.num_triangles(), static_cast<std::size_t>(4 * n * n));
  EXPECT_EQ(m.boundary_edges().size(), static_cast<std::size_t>(6 * n));
}

TEST(Bench, InitialStatesSatisfyConstraints) {
  for (const char* id : {"cylinder", "ypipe"}) {
    auto s = scenario_by_id(id);
    auto model = scenario_model(s, 0.25);
    Stepper st(model.space, model.forms, SolverConfig{}, model.data);
    auto u0 = st.initial_state(model.u0);
    auto g = model.space->lift(model.data.boundary, 0.0);
    EXPECT_LE(model.space->constraint_violation(u0.u, g), 1e-14) << id;
    auto v0 = st.initial_state(s.guess);
    EXPECT_LE(model.space->constraint_violation(v0.u, g), 1e-14) << id;
  }
}

TEST(Bench, RectReferenceDecaysWithoutForcing) {
  auto model = scenario_model(scenario_rect(), 0.25);
  SolverConfig c;
  c.nu = 0.05;
  c.dt = 0.05;
  c.t_end = 0.2;
  Stepper st(model.space, model.forms, c, model.data);
  auto u0 = st.initial_state(model.u0);
  auto tr = st.run(u0);
  EXPECT_LT(tr.diagnostics.back().kinetic, st.diagnostics(u0).kinetic);
}

TEST(Bench, VtkExport) {
  auto model = scenario_model(scenario_rect(), 0.5);
  const auto& space = *model.space;
  FieldState zero{0.0, Vector::Zero(space.n_u()), Vector::Zero(space.n_p())};
  std::ostringstream os;
  export_vtk(os, space, zero);
  const std::string s = os.str();
  // 2x2 cells, 8 triangles: 9 vertices + 16 edges
  EXPECT_NE(s.find("POINTS 25 double"), std::string::npos);
  EXPECT_NE(s.find("CELLS 32 128"), std::string::npos);
  EXPECT_NE(s.find("POINT_DATA 25"), std::string::npos);
  auto vec = s.find("VECTORS velocity double\n");
  ASSERT_NE(vec, std::string::npos);
  std::istringstream rest(s.substr(vec + 24));
  for (int k = 0; k < 25; ++k) {
    double a = 1, b = 1, c = 1;
    rest >> a >> b >> c;
    EXPECT_EQ(a, 0.0);
    EXPECT_EQ(b, 0.0);
    EXPECT_EQ(c, 0.0);
  }
  FieldState wrong{0.0, Vector::Zero(3), Vector::Zero(space.n_p())};
  EXPECT_THROW(export_vtk(os, space, wrong), DimensionError);
}

TEST(Bench, TableShape) {
  std::vector<double> times = {1, 10, 30};
  auto csv = make_table(times, {{"a", {1, 2, 3}}, {"b", {0.5, 0.25, 0.125}}});
  EXPECT_EQ(csv, "t,a,b\n1,1.000E+00,5.000E-01\n10,2.000E+00,2.500E-01\n30,3.000E+00,1.250E-01\n");
  auto md = make_table(times, {{"a", {1, 2, 3}}}, TableFormat::Markdown);
  EXPECT_EQ(md.substr(0, md.find('\n')), "| t | a |");
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 5);
  EXPECT_THROW(make_table(times, {{"a", {1, 2}}}), ValidationError);
  EXPECT_THROW(make_table({}, {{"a", {}}}), InvalidArgument);
  EXPECT_THROW(make_table(times, {}), InvalidArgument);
}

TEST(Bench, SampleAt) {
  std::vector<double> t = {0.0, 0.1, 0.2, 0.30000000000000004}, v = {4, 3, 2, 1};
  auto s = sample_at(t, v, {0.0, 0.15, 0.3});
  EXPECT_EQ(s, (std::vector<double>{4, 3, 1}));
  EXPECT_THROW(sample_at(t, v, {-1.0}), ValidationError);
  EXPECT_THROW(sample_at(t, {1.0}, {0.0}), ValidationError);
}
