#include <gtest/gtest.h>

#include "nudgeflow/config.hpp"

using namespace nudgeflow;

TEST(Config, Defaults) {
  RunConfig c;
  EXPECT_EQ(c.scenario, "rect");
  EXPECT_EQ(c.solver.nu, 1e-3);
  EXPECT_EQ(c.solver.dt, 1e-3);
  EXPECT_EQ(c.solver.t_end, 30.0);
  EXPECT_EQ(c.solver.slip.eps, 1e-5);
  EXPECT_EQ(c.g, 1.0);
  EXPECT_EQ(c.mu, 20.0);
  EXPECT_EQ(c.h_coarse, 0.125);
  EXPECT_EQ(c.h, 1.0 / 32);
  EXPECT_NO_THROW(validate_config(c));
}

TEST(Config, ParseSectionsAndComments) {
  auto c = parse_config(
      "# comment\n"
      "[solver]\n"
      "nu = 0.01   # trailing\n"
      "mode = picard\n"
      "convection = false\n"
      "\n"
      "[cda]\n"
      "kind = cell-average\n"
      "v0 = scenario\n"
      "twin = concurrent\n"
      "[scenario]\n"
      "id = cylinder\n");
  EXPECT_EQ(c.solver.nu, 0.01);
  EXPECT_EQ(c.solver.mode, Linearization::Picard);
  EXPECT_FALSE(c.solver.convection);
  EXPECT_EQ(c.kind, ObservationKind::CellAverage);
  EXPECT_EQ(c.v0, InitialGuess::Scenario);
  EXPECT_EQ(c.twin, TwinMode::Concurrent);
  EXPECT_EQ(c.scenario, "cylinder");
}

TEST(Config, EchoRoundTrip) {
  RunConfig c;
  c.solver.nu = 0.1 + 0.2;  // not exactly representable in short form
  c.mesh_file = "data/meshes/ypipe.mesh";
  c.kind = ObservationKind::CellAverage;
  c.recovery.max_iterations = 7;
  c.solver.convection = false;
  auto text = echo_config(c);
  auto d = parse_config(text);
  EXPECT_EQ(echo_config(d), text);
  EXPECT_EQ(d.solver.nu, c.solver.nu);
  EXPECT_EQ(d.mesh_file, c.mesh_file);
  EXPECT_EQ(d.recovery.max_iterations, 7);
}

TEST(Config, UnknownKeyNamed) {
  try {
    parse_config("[solver]\nviscosity = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "solver.viscosity");
  }
  RunConfig c;
  EXPECT_THROW(apply_override(c, "nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "nu"), ConfigError);
  EXPECT_THROW(parse_config("[solver\n"), ConfigError);
}

TEST(Config, BadValuesNamed) {
  RunConfig c;
  for (const char* bad : {"nu=abc", "cda.kind=spectral", "convection=maybe", "max_iterations=1.5", "scenario.id=duct"}) {
    try {
      apply_override(c, bad);
      ADD_FAILURE() << bad;
    } catch (const ConfigError& e) {
      std::string s(bad);
      EXPECT_NE(s.find(e.key().substr(e.key().find('.') + 1)), std::string::npos) << e.what();
    }
  }
}

TEST(Config, OverridesLeftToRight) {
  RunConfig c;
  apply_override(c, "mu=5");
  apply_override(c, "cda.mu = 7");
  EXPECT_EQ(c.mu, 7.0);
  apply_override(c, "solver.tol=1e-8");
  EXPECT_EQ(c.solver.tol, 1e-8);
  // tol exists in two sections
  EXPECT_THROW(apply_override(c, "tol=1"), ConfigError);
}

TEST(Config, ValidationNamesFirstKey) {
  RunConfig c;
  c.solver.dt = -1;
  c.h_coarse = 0;
  try {
    validate_config(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "solver.dt");
    EXPECT_NE(std::string(e.what()).find("cda.h_coarse"), std::string::npos);
  }
}

TEST(Config, SolverConfigCarriesSlipBound) {
  RunConfig c;
  c.g = 2.5;
  auto s = c.solver_config();
  EXPECT_EQ(s.slip.g({0.3, 0.0}), 2.5);
  EXPECT_EQ(s.slip.eps, 1e-5);
}
