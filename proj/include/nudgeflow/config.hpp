#pragma once

// Run configuration: sectioned key = value text, `--set section.key=value`
// overrides and a canonical echo.

#include <sstream>

#include "nudgeflow/bench.hpp"

namespace nudgeflow {

enum class TwinMode { Sequential, Concurrent };
enum class InitialGuess { Zero, True, Scenario };

struct RunConfig {
  // [scenario]
  std::string scenario = "rect";
  std::string mesh_file;
  double h = 1.0 / 32;
  // [solver]
  SolverConfig solver = [] {
    SolverConfig c;
    c.nu = 1e-3;
    c.dt = 1e-3;
    c.t_end = 30.0;
    c.slip.eps = 1e-5;
    return c;
  }();
  double g = 1.0;
  // [cda]
  double mu = 20.0;
  double h_coarse = 0.125;
  ObservationKind kind = ObservationKind::CoarseP1Nodal;
  InitialGuess v0 = InitialGuess::Zero;
  double nu_guess = 0.0;
  int obs_every = 1;
  TwinMode twin = TwinMode::Sequential;
  int queue_capacity = 8;
  // [recovery]
  double nu0 = 1e-2;
  RecoverySchedule recovery;
  // [output]
  int vtk_every = 0;
  std::uint64_t seed = 1;

  CdaConfig cda(const Scenario& s) const {
    CdaConfig c;
    c.mu = mu;
    c.h_coarse = h_coarse;
    c.kind = kind;
    c.nu_guess = nu_guess;
    c.obs_every = obs_every;
    c.recovery = recovery;
    if (v0 == InitialGuess::True) c.v0 = s.u0;
    if (v0 == InitialGuess::Scenario) c.v0 = s.guess;
    return c;
  }

  SolverConfig solver_config() const {
    SolverConfig c = solver;
    const double gv = g;
    c.slip.g = [gv](Point) { return gv; };
    return c;
  }
};

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline double parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline long parse_integer(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string allowed;
  for (auto [name, e] : opts) {
    if (v == name) return e;
    allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError(key, "expected one of " + allowed + ", got '" + v + "'");
}

template <class E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> opts) {
  for (auto [name, x] : opts)
    if (x == e) return name;
  return "?";
}

inline const std::vector<ConfigKey>& config_keys() {
  using R = RunConfig;
  static const std::initializer_list<std::pair<const char*, Linearization>> modes = {
      {"semi-implicit", Linearization::SemiImplicit}, {"picard", Linearization::Picard}};
  static const std::initializer_list<std::pair<const char*, ObservationKind>> kinds = {
      {"nodal", ObservationKind::CoarseP1Nodal}, {"cell-average", ObservationKind::CellAverage}};
  static const std::initializer_list<std::pair<const char*, InitialGuess>> guesses = {
      {"zero", InitialGuess::Zero}, {"true", InitialGuess::True}, {"scenario", InitialGuess::Scenario}};
  static const std::initializer_list<std::pair<const char*, TwinMode>> twins = {
      {"sequential", TwinMode::Sequential}, {"concurrent", TwinMode::Concurrent}};

#define NF_DOUBLE(key, field)                                                         \
  ConfigKey{key, [](R& r, const std::string& v) { r.field = parse_number(key, v); }, \
            [](const R& r) { return format_double(r.field); }}
#define NF_INT(key, field)                                                                                     \
  ConfigKey{key, [](R& r, const std::string& v) { r.field = static_cast<decltype(r.field)>(parse_integer(key, v)); }, \
            [](const R& r) { return std::to_string(r.field); }}
#define NF_ENUM(key, field, table)                                                         \
  ConfigKey{key, [](R& r, const std::string& v) { r.field = parse_enum(key, v, table); }, \
            [](const R& r) { return enum_name(r.field, table); }}

  static const std::vector<ConfigKey> keys = {
      ConfigKey{"scenario.id", [](R& r, const std::string& v) {
                  if (v != "rect" && v != "cylinder" && v != "ypipe")
                    throw ConfigError("scenario.id", "expected rect, cylinder or ypipe, got '" + v + "'");
                  r.scenario = v;
                },
                [](const R& r) { return r.scenario; }},
      ConfigKey{"scenario.mesh_file", [](R& r, const std::string& v) { r.mesh_file = v; },
                [](const R& r) { return r.mesh_file; }},
      NF_DOUBLE("scenario.h", h),
      NF_DOUBLE("solver.nu", solver.nu),
      NF_DOUBLE("solver.dt", solver.dt),
      NF_DOUBLE("solver.t_end", solver.t_end),
      NF_DOUBLE("solver.eps", solver.slip.eps),
      NF_DOUBLE("solver.g", g),
      NF_ENUM("solver.mode", solver.mode, modes),
      NF_INT("solver.picard_iterations", solver.picard_iterations),
      NF_DOUBLE("solver.tol", solver.tol),
      NF_INT("solver.output_every", solver.output_every),
      ConfigKey{"solver.convection", [](R& r, const std::string& v) { r.solver.convection = parse_bool("solver.convection", v); },
                [](const R& r) { return std::string(r.solver.convection ? "true" : "false"); }},
      NF_DOUBLE("cda.mu", mu),
      NF_DOUBLE("cda.h_coarse", h_coarse),
      NF_ENUM("cda.kind", kind, kinds),
      NF_ENUM("cda.v0", v0, guesses),
      NF_DOUBLE("cda.nu_guess", nu_guess),
      NF_INT("cda.obs_every", obs_every),
      NF_ENUM("cda.twin", twin, twins),
      NF_INT("cda.queue_capacity", queue_capacity),
      NF_DOUBLE("recovery.nu0", nu0),
      NF_DOUBLE("recovery.interval", recovery.update_interval),
      NF_INT("recovery.max_iterations", recovery.max_iterations),
      NF_DOUBLE("recovery.clip_low", recovery.clip_low),
      NF_DOUBLE("recovery.clip_high", recovery.clip_high),
      NF_DOUBLE("recovery.tol", recovery.tol),
      NF_INT("output.vtk_every", vtk_every),
      NF_INT("output.seed", seed),
  };
#undef NF_DOUBLE
#undef NF_INT
#undef NF_ENUM
  return keys;
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Resolves `key` (either `section.key` or a bare key unique across
/// sections) and assigns it.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  const detail::ConfigKey* hit = nullptr;
  for (const auto& k : keys)
    if (k.name == key) hit = &k;
  if (!hit && key.find('.') == std::string::npos) {
    for (const auto& k : keys)
      if (k.name.substr(k.name.find('.') + 1) == key) {
        if (hit) throw ConfigError(key, "ambiguous; qualify it with its section");
        hit = &k;
      }
  }
  if (!hit) throw ConfigError(key, "unknown key");
  hit->set(cfg, value);
}

/// Applies a `key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must look like key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Parses sectioned `key = value` text on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header on line " + std::to_string(ln));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value on line " + std::to_string(ln));
    std::string key = detail::trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    const auto& keys = detail::config_keys();
    if (std::none_of(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; }))
      throw ConfigError(key, "unknown key (line " + std::to_string(ln) + ")");
    set_config_value(base, key, detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

/// Canonical text; parse_config(echo_config(c)) reproduces c.
inline std::string echo_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : detail::config_keys()) {
    auto dot = k.name.find('.');
    std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    std::string v = k.get(cfg);
    if (!v.empty()) os << k.name.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

/// Range checks across the whole configuration; violations name their keys.
inline void validate_config(const RunConfig& c) {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const char* key, const char* what) {
    if (!ok) bad.push_back(std::string(key) + ": " + what);
  };
  need(c.h > 0.0, "scenario.h", "must be positive");
  need(c.solver.nu > 0.0, "solver.nu", "must be positive");
  need(c.solver.dt > 0.0, "solver.dt", "must be positive");
  need(c.solver.t_end > 0.0, "solver.t_end", "must be positive");
  need(c.solver.slip.eps > 0.0, "solver.eps", "must be positive");
  need(c.g >= 0.0, "solver.g", "must be >= 0");
  need(c.solver.picard_iterations >= 1, "solver.picard_iterations", "must be >= 1");
  need(c.solver.tol > 0.0, "solver.tol", "must be positive");
  need(c.solver.output_every >= 0, "solver.output_every", "must be >= 0");
  need(c.mu >= 0.0, "cda.mu", "must be >= 0");
  need(c.h_coarse > 0.0, "cda.h_coarse", "must be positive");
  need(c.nu_guess >= 0.0, "cda.nu_guess", "must be >= 0");
  need(c.obs_every >= 1, "cda.obs_every", "must be >= 1");
  need(c.queue_capacity >= 2, "cda.queue_capacity", "must be >= 2");
  need(c.nu0 > 0.0, "recovery.nu0", "must be positive");
  need(c.recovery.update_interval > 0.0, "recovery.interval", "must be positive");
  need(c.recovery.max_iterations >= 1, "recovery.max_iterations", "must be >= 1");
  need(c.recovery.clip_low > 0.0 && c.recovery.clip_low < c.recovery.clip_high, "recovery.clip_low",
       "must satisfy 0 < clip_low < clip_high");
  need(c.vtk_every >= 0, "output.vtk_every", "must be >= 0");
  if (!bad.empty()) {
    std::string key = bad.front().substr(0, bad.front().find(':'));
    std::string all;
    for (const auto& b : bad) all += (all.empty() ? "" : "; ") + b;
    throw ConfigError(key, all);
  }
}

}  // namespace nudgeflow
