// nudgeflow command line: mesh tools, reference runs, observation
// recording, assimilation runs, viscosity recovery and reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "nudgeflow/nudgeflow.hpp"

namespace fs = std::filesystem;
using namespace nudgeflow;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "configuration file");
  cmd->add_option("--set", c.sets, "override key=value (repeatable, applied left to right)");
  cmd->add_option("--out", c.out, "output directory");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& s : c.sets) apply_override(cfg, s);
  validate_config(cfg);
  return cfg;
}

fs::path prepare_out(const Common& c, const RunConfig& cfg) {
  fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  std::ofstream os(dir / "config.ini");
  if (!os) throw IoError("cannot write '" + (dir / "config.ini").string() + "'");
  os << echo_config(cfg);
  return dir;
}

std::string fmt(double v) { return detail::format_double(v); }

void result(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "RESULT";
  for (const auto& [k, v] : kv) std::cout << ' ' << k << '=' << v;
  std::cout << std::endl;
}

struct Setup {
  Scenario scenario;
  Model model;
  SolverConfig solver;
  std::unique_ptr<ObservationOperator> op;
};

Setup build(const RunConfig& cfg) {
  Setup s;
  s.scenario = scenario_by_id(cfg.scenario, cfg.mesh_file);
  s.model = scenario_model(s.scenario, cfg.h);
  s.solver = cfg.solver_config();
  s.op = std::make_unique<ObservationOperator>(s.model.space, cfg.h_coarse, cfg.kind);
  if (!s.op->coarser_than_mesh())
    std::cerr << "warning: observation spacing " << cfg.h_coarse << " is finer than the mesh\n";
  return s;
}

void write_diagnostics(const fs::path& path, const Trajectory& tr) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << "step,t,kinetic,h1,j_eps,div_residual,slip_dissipation\n";
  for (const auto& d : tr.diagnostics)
    os << d.step << ',' << fmt(d.t) << ',' << fmt(d.kinetic) << ',' << fmt(d.h1) << ',' << fmt(d.j_eps) << ','
       << fmt(d.div_residual) << ',' << fmt(d.slip_dissipation) << '\n';
}

void write_vtk_series(const fs::path& dir, const std::string& stem, const TaylorHoodSpace& space,
                      const Trajectory& tr, int every) {
  if (every <= 0) return;
  for (std::size_t k = 0; k < tr.states.size(); k += static_cast<std::size_t>(every))
    export_vtk((dir / (stem + "_" + std::to_string(k) + ".vtk")).string(), space, tr.states[k]);
}

std::vector<std::pair<std::string, std::string>> csv_meta(const RunConfig& cfg) {
  return {{"scenario", cfg.scenario},   {"h", fmt(cfg.h)},
          {"nu", fmt(cfg.solver.nu)},   {"nu_guess", fmt(cfg.nu_guess)},
          {"mu", fmt(cfg.mu)},          {"h_coarse", fmt(cfg.h_coarse)},
          {"kind", to_string(cfg.kind)}, {"dt", fmt(cfg.solver.dt)},
          {"t_end", fmt(cfg.solver.t_end)}, {"eps", fmt(cfg.solver.slip.eps)}};
}

// --- commands ---------------------------------------------------------------

int mesh_gen(const std::string& which, int n, const std::string& out) {
  Mesh m = which == "rect"       ? build_rect_mesh(n, n, Rect{}, side::bottom)
           : which == "cylinder" ? build_cylinder_mesh(n)
           : which == "ypipe"    ? build_ypipe_mesh(n)
                                 : throw InvalidArgument("unknown mesh '" + which + "' (rect, cylinder, ypipe)");
  std::ofstream os(out);
  if (!os) throw IoError("cannot write '" + out + "'");
  os << "# " << which << " mesh, resolution " << n << "\n" << export_mesh(m);
  if (!os) throw IoError("write to '" + out + "' failed");
  result({{"vertices", std::to_string(m.num_vertices())},
          {"triangles", std::to_string(m.num_triangles())},
          {"area", fmt(m.total_area())}});
  return 0;
}

int mesh_check(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Mesh m = import_mesh(buf.str());
  result({{"vertices", std::to_string(m.num_vertices())},
          {"triangles", std::to_string(m.num_triangles())},
          {"boundary_edges", std::to_string(m.boundary_edges().size())},
          {"area", fmt(m.total_area())}});
  return 0;
}

int run_reference_cmd(const Common& c) {
  auto cfg = resolve(c);
  auto dir = prepare_out(c, cfg);
  auto s = build(cfg);
  auto ref = run_reference(s.model, s.solver, *s.op, cfg.obs_every);
  write_trajectory((dir / "reference.traj").string(), ref.trajectory);
  write_diagnostics(dir / "diagnostics.csv", ref.trajectory);
  write_vtk_series(dir, "reference", *s.model.space, ref.trajectory, cfg.vtk_every);
  const auto& d = ref.trajectory.diagnostics.back();
  result({{"steps", std::to_string(ref.trajectory.diagnostics.size())},
          {"t", fmt(d.t)},
          {"kinetic", fmt(d.kinetic)},
          {"div_residual", fmt(d.div_residual)}});
  return 0;
}

int observe_record_cmd(const Common& c) {
  auto cfg = resolve(c);
  auto dir = prepare_out(c, cfg);
  auto s = build(cfg);
  auto path = (dir / "observations.obs").string();
  StreamRecorder rec(path, stream_meta(*s.op, s.solver.dt * cfg.obs_every));
  auto ref = run_reference(s.model, s.solver, *s.op, cfg.obs_every, [&](const ObservationFrame& f) { rec.write(f); });
  rec.close();
  write_trajectory((dir / "reference.traj").string(), ref.trajectory);
  write_diagnostics(dir / "diagnostics.csv", ref.trajectory);
  result({{"frames", std::to_string(rec.frames_written())},
          {"values_per_frame", std::to_string(s.op->values_per_frame())},
          {"stream", path}});
  return 0;
}

void report_errors(const ErrorSeries& e, std::vector<std::pair<std::string, std::string>> extra = {}) {
  std::vector<std::pair<std::string, std::string>> kv = {{"samples", std::to_string(e.size())},
                                                         {"err_initial", fmt(e.l2.front())},
                                                         {"err_final", fmt(e.l2.back())}};
  kv.insert(kv.end(), extra.begin(), extra.end());
  result(kv);
}

int cda_run_cmd(const Common& c, const std::string& stream_path, const std::string& reference_path) {
  auto cfg = resolve(c);
  auto dir = prepare_out(c, cfg);
  auto s = build(cfg);
  auto cda = cfg.cda(s.scenario);
  CdaRun run;
  if (!stream_path.empty()) {
    auto stream = read_stream(stream_path);
    check_compatible(stream.meta, *s.op);
    std::optional<Trajectory> ref;
    if (!reference_path.empty()) ref = read_trajectory(reference_path);
    StreamFrameSource src(stream);
    run = run_cda(s.model, s.solver, cda, *s.op, src, ref ? &*ref : nullptr);
  } else if (cfg.twin == TwinMode::Concurrent) {
    run = run_twin_concurrent(s.model, s.solver, cda, *s.op, static_cast<std::size_t>(cfg.queue_capacity)).cda;
  } else {
    run = run_twin(s.model, s.solver, cda, *s.op).cda;
  }
  write_csv((dir / "errors.csv").string(), run.errors, csv_meta(cfg));
  write_trajectory((dir / "assimilated.traj").string(), run.trajectory);
  write_vtk_series(dir, "assimilated", *s.model.space, run.trajectory, cfg.vtk_every);
  report_errors(run.errors, {{"quasi_steady", fmt(run.quasi_steady)}});
  return 0;
}

int cda_recover_cmd(const Common& c, const std::string& stream_path, const std::string& reference_path) {
  auto cfg = resolve(c);
  auto dir = prepare_out(c, cfg);
  auto s = build(cfg);
  auto cda = cfg.cda(s.scenario);
  ObservationStream stream;
  std::optional<Trajectory> ref;
  if (!stream_path.empty()) {
    stream = read_stream(stream_path);
    check_compatible(stream.meta, *s.op);
    if (!reference_path.empty()) ref = read_trajectory(reference_path);
  } else {
    auto r = run_reference(s.model, s.solver, *s.op, cfg.obs_every);
    stream = std::move(r.stream);
    ref = std::move(r.trajectory);
  }
  StreamFrameSource src(stream);
  const bool know_truth = stream_path.empty();
  auto rec = recover_viscosity(s.model, s.solver, cda, *s.op, src, cfg.nu0,
                               know_truth ? cfg.solver.nu : std::numeric_limits<double>::quiet_NaN(),
                               ref ? &*ref : nullptr);
  auto meta = csv_meta(cfg);
  meta.emplace_back("nu0", fmt(cfg.nu0));
  write_csv((dir / "recovery.csv").string(), rec.errors, meta);
  {
    std::ofstream os(dir / "viscosity.csv");
    os << "update,t,nu\n";
    for (std::size_t k = 0; k < rec.nu.size(); ++k)
      os << k << ',' << fmt(k == 0 ? 0.0 : rec.update_t[k - 1]) << ',' << fmt(rec.nu[k]) << '\n';
    if (!os) throw IoError("cannot write viscosity.csv");
  }
  std::vector<std::pair<std::string, std::string>> kv = {{"updates", std::to_string(rec.nu.size() - 1)},
                                                         {"nu_final", fmt(rec.nu.back())}};
  if (know_truth) kv.emplace_back("rel_err", fmt(std::abs(rec.nu.back() - cfg.solver.nu) / cfg.solver.nu));
  result(kv);
  return 0;
}

struct CsvSeries {
  std::vector<double> t, l2, nu_err;
};

CsvSeries read_error_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvSeries s;
  std::string line;
  bool header = false;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("t,err_L2", 0) != 0) throw ParseError("'" + path + "' is not an error series", ln);
      header = true;
      continue;
    }
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(cell == "nan" ? std::numeric_limits<double>::quiet_NaN() : detail::to_double(cell, ln));
    if (v.size() != 4) throw ParseError("expected 4 columns", ln);
    s.t.push_back(v[0]);
    s.l2.push_back(v[1]);
    s.nu_err.push_back(v[3]);
  }
  if (s.t.empty()) throw ParseError("'" + path + "' has no rows", ln);
  return s;
}

int report_table_cmd(const std::string& idm, const std::string& vcm, const std::string& recovery,
                     const std::vector<double>& times, const std::string& format, const std::string& out) {
  if (times.empty()) throw ConfigError("times", "at least one sample time is required");
  std::vector<TableColumn> cols;
  if (!idm.empty()) {
    auto s = read_error_csv(idm);
    cols.push_back({"err_L2 (IDM)", sample_at(s.t, s.l2, times)});
  }
  if (!vcm.empty()) {
    auto s = read_error_csv(vcm);
    cols.push_back({"err_L2 (VCM)", sample_at(s.t, s.l2, times)});
  }
  if (!recovery.empty()) {
    auto s = read_error_csv(recovery);
    cols.push_back({"|nu - nu~|", sample_at(s.t, s.nu_err, times)});
  }
  if (cols.empty()) throw ConfigError("idm", "give at least one of --idm, --vcm, --recovery");
  auto table = make_table(times, cols, format == "md" ? TableFormat::Markdown : TableFormat::Csv);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream os(out);
    if (!os) throw IoError("cannot write '" + out + "'");
    os << table;
  }
  result({{"rows", std::to_string(times.size())}, {"columns", std::to_string(cols.size() + 1)}});
  return 0;
}

int report_vtk_cmd(const Common& c, const std::string& traj_path, int every) {
  auto cfg = resolve(c);
  auto dir = prepare_out(c, cfg);
  auto scenario = scenario_by_id(cfg.scenario, cfg.mesh_file);
  auto space = build_space(scenario_mesh(scenario, cfg.h));
  auto tr = read_trajectory(traj_path);
  if (!tr.states.empty() && tr.states.front().u.size() != space->n_u())
    throw ValidationError({"trajectory does not match the configured mesh (" + std::to_string(tr.states.front().u.size()) +
                           " velocity coefficients, mesh has " + std::to_string(space->n_u()) + ")"});
  write_vtk_series(dir, fs::path(traj_path).stem().string(), *space, tr, std::max(1, every));
  result({{"files", std::to_string((tr.states.size() + std::max(1, every) - 1) / std::max(1, every))}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Navier-Stokes with nonlinear slip: simulation and continuous data assimilation"};
  app.require_subcommand(1);

  auto* mesh = app.add_subcommand("mesh", "mesh generation and validation")->require_subcommand(1);
  std::string gen_which, gen_out, check_path;
  int gen_n = 16;
  auto* gen = mesh->add_subcommand("gen", "write a builtin mesh");
  gen->add_option("geometry", gen_which, "rect, cylinder or ypipe")->required();
  gen->add_option("--n", gen_n, "cells across the channel / per unit length");
  gen->add_option("--out", gen_out, "mesh file")->required();
  auto* check = mesh->add_subcommand("check", "validate a mesh file");
  check->add_option("file", check_path)->required();

  Common ref_c, obs_c, cda_c, rec_c, vtk_c;
  auto* run = app.add_subcommand("run", "simulations")->require_subcommand(1);
  add_common(run->add_subcommand("reference", "reference run from the true initial state"), ref_c);

  auto* observe = app.add_subcommand("observe", "observation streams")->require_subcommand(1);
  add_common(observe->add_subcommand("record", "reference run recording an observation stream"), obs_c);

  std::string cda_stream, cda_ref, rec_stream, rec_ref;
  auto* cda = app.add_subcommand("cda", "data assimilation")->require_subcommand(1);
  auto* cda_run = cda->add_subcommand("run", "nudged run (twin experiment unless --stream is given)");
  add_common(cda_run, cda_c);
  cda_run->add_option("--stream", cda_stream, "observation stream file");
  cda_run->add_option("--reference", cda_ref, "reference trajectory for fine-space errors");
  auto* cda_rec = cda->add_subcommand("recover", "viscosity recovery");
  add_common(cda_rec, rec_c);
  cda_rec->add_option("--stream", rec_stream, "observation stream file");
  cda_rec->add_option("--reference", rec_ref, "reference trajectory for fine-space errors");

  auto* report = app.add_subcommand("report", "tables and field export")->require_subcommand(1);
  std::string t_idm, t_vcm, t_rec, t_format = "csv", t_out, v_traj;
  std::vector<double> t_times;
  int v_every = 1;
  auto* table = report->add_subcommand("table", "error table at selected times");
  table->add_option("--idm", t_idm, "errors.csv of a missing-initial-data run");
  table->add_option("--vcm", t_vcm, "errors.csv of a wrong-viscosity run");
  table->add_option("--recovery", t_rec, "recovery.csv of a viscosity recovery");
  table->add_option("--times", t_times, "sample times")->delimiter(',')->required();
  table->add_option("--format", t_format, "csv or md")->check(CLI::IsMember({"csv", "md"}));
  table->add_option("--out", t_out, "output file (default stdout)");
  auto* vtk = report->add_subcommand("vtk", "export a trajectory as VTK files");
  add_common(vtk, vtk_c);
  vtk->add_option("--trajectory", v_traj, "trajectory file")->required();
  vtk->add_option("--every", v_every, "export every k-th state");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return mesh_gen(gen_which, gen_n, gen_out);
    if (check->parsed()) return mesh_check(check_path);
    if (run->got_subcommand("reference")) return run_reference_cmd(ref_c);
    if (observe->got_subcommand("record")) return observe_record_cmd(obs_c);
    if (cda_run->parsed()) return cda_run_cmd(cda_c, cda_stream, cda_ref);
    if (cda_rec->parsed()) return cda_recover_cmd(rec_c, rec_stream, rec_ref);
    if (table->parsed()) return report_table_cmd(t_idm, t_vcm, t_rec, t_times, t_format, t_out);
    if (vtk->parsed()) return report_vtk_cmd(vtk_c, v_traj, v_every);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation failed:\n";
    for (const auto& v : e.violations()) std::cerr << "  " << v << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
