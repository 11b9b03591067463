#pragma once

// Twin experiments: reference run with recorded observations, nudged runs
// from a wrong initial state or with a wrong viscosity, and the viscosity
// recovery iteration.

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "nudgeflow/stepper.hpp"

namespace nudgeflow {

/// Discretized problem shared by reference and assimilated runs.
struct Model {
  std::shared_ptr<const TaylorHoodSpace> space;
  FormSet forms;
  ProblemData data;
  VelocityFunction u0;  ///< true initial velocity
};

inline Model make_model(std::shared_ptr<const TaylorHoodSpace> space, ProblemData data, VelocityFunction u0) {
  Model m;
  m.forms = assemble_forms(*space);
  m.space = std::move(space);
  m.data = std::move(data);
  m.u0 = std::move(u0);
  return m;
}

struct RecoverySchedule {
  double update_interval = 1.0;  ///< T_u
  int max_iterations = 20;
  double clip_low = 1e-6;   ///< times the initial guess
  double clip_high = 1e3;
  double tol = 1e-10;       ///< stop when |nu_{k+1} - nu_k| < tol
};

struct CdaConfig {
  double mu = 20.0;
  double h_coarse = 0.125;
  ObservationKind kind = ObservationKind::CoarseP1Nodal;
  VelocityFunction v0;      ///< null: zero initial guess
  double nu_guess = 0.0;    ///< 0: use the true viscosity
  int obs_every = 1;        ///< observation interval in solver steps
  RecoverySchedule recovery;

  void validate() const {
    std::vector<std::string> bad;
    if (!(mu > 0.0)) bad.push_back("mu must be positive for assimilation");
    if (!(h_coarse > 0.0)) bad.push_back("h_coarse must be positive");
    if (nu_guess < 0.0) bad.push_back("nu_guess must be positive");
    if (obs_every < 1) bad.push_back("obs_every must be >= 1");
    if (!(recovery.update_interval > 0.0)) bad.push_back("recovery interval must be positive");
    if (recovery.max_iterations < 1) bad.push_back("recovery max_iterations must be >= 1");
    if (!(recovery.clip_low > 0.0 && recovery.clip_low < recovery.clip_high)) bad.push_back("bad recovery clip bounds");
    if (!bad.empty()) throw ValidationError(std::move(bad));
  }
};

struct ErrorSeries {
  std::vector<double> t, l2, h1;
  std::vector<double> nu_err;  ///< |nu - nu_guess|, NaN when not applicable

  std::size_t size() const { return t.size(); }
  void push(double time, double e2, double e1, double ne = std::numeric_limits<double>::quiet_NaN()) {
    t.push_back(time);
    l2.push_back(e2);
    h1.push_back(e1);
    nu_err.push_back(ne);
  }
};

/// L2 and V norms of the difference at every common time; the grids must match.
inline ErrorSeries error_series(const FormSet& forms, const Trajectory& a, const Trajectory& b) {
  if (a.states.size() != b.states.size())
    throw ValidationError({"trajectories have " + std::to_string(a.states.size()) + " and " +
                           std::to_string(b.states.size()) + " samples"});
  ErrorSeries e;
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    const auto &x = a.states[k], &y = b.states[k];
    if (std::abs(x.t - y.t) > 1e-9 * std::max(1.0, std::abs(x.t)))
      throw ValidationError({"sample " + std::to_string(k) + " times differ: " + detail::format_double(x.t) + " vs " +
                             detail::format_double(y.t)});
    if (x.u.size() != y.u.size()) throw DimensionError("trajectories live on different spaces");
    Vector d = x.u - y.u;
    e.push(x.t, std::sqrt(std::max(0.0, d.dot(forms.M * d))), std::sqrt(std::max(0.0, d.dot(forms.K * d))));
  }
  return e;
}

inline void write_csv(std::ostream& os, const ErrorSeries& e, const std::vector<std::pair<std::string, std::string>>& meta = {}) {
  for (const auto& [k, v] : meta) os << "# " << k << '=' << v << '\n';
  os << "t,err_L2,err_H1,nu_err\n";
  auto num = [&](double v) { return std::isnan(v) ? std::string("nan") : detail::format_double(v); };
  for (std::size_t k = 0; k < e.size(); ++k)
    os << num(e.t[k]) << ',' << num(e.l2[k]) << ',' << num(e.h1[k]) << ',' << num(e.nu_err[k]) << '\n';
}

inline void write_csv(const std::string& path, const ErrorSeries& e,
                      const std::vector<std::pair<std::string, std::string>>& meta = {}) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_csv(os, e, meta);
  if (!os) throw IoError("write to '" + path + "' failed");
}

/// Binary trajectory file: magic `TRJ1`, {n_u: u64, n_p: u64, count: u64, dt: f64},
/// then per state {t: f64, u: f64[n_u], p: f64[n_p]}, little-endian.
inline void write_trajectory(const std::string& path, const Trajectory& tr) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  std::string buf("TRJ1");
  const std::uint64_t nu = tr.states.empty() ? 0 : tr.states.front().u.size();
  const std::uint64_t np = tr.states.empty() ? 0 : tr.states.front().p.size();
  detail::put(buf, nu);
  detail::put(buf, np);
  detail::put(buf, static_cast<std::uint64_t>(tr.states.size()));
  detail::put(buf, tr.dt);
  for (const auto& s : tr.states) {
    if (static_cast<std::uint64_t>(s.u.size()) != nu || static_cast<std::uint64_t>(s.p.size()) != np)
      throw DimensionError("trajectory states differ in size");
    detail::put(buf, s.t);
    buf.append(reinterpret_cast<const char*>(s.u.data()), 8 * nu);
    buf.append(reinterpret_cast<const char*>(s.p.data()), 8 * np);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t head = 4 + 3 * 8 + 8;
  if (b.size() < head || b.compare(0, 4, "TRJ1") != 0) throw ParseError("'" + path + "' is not a trajectory file", 0);
  const char* p = b.data() + 4;
  auto nu = detail::get<std::uint64_t>(p), np = detail::get<std::uint64_t>(p + 8), n = detail::get<std::uint64_t>(p + 16);
  Trajectory tr;
  tr.dt = detail::get<double>(p + 24);
  const std::uint64_t rec = 8 * (1 + nu + np);
  if (nu > (1ull << 32) || np > (1ull << 32) || b.size() != head + n * rec)
    throw ParseError("trajectory file '" + path + "' size does not match its header", 0);
  const char* q = b.data() + head;
  for (std::uint64_t k = 0; k < n; ++k, q += rec) {
    FieldState s;
    s.t = detail::get<double>(q);
    s.u.resize(static_cast<Eigen::Index>(nu));
    s.p.resize(static_cast<Eigen::Index>(np));
    std::memcpy(s.u.data(), q + 8, 8 * nu);
    std::memcpy(s.p.data(), q + 8 + 8 * nu, 8 * np);
    tr.states.push_back(std::move(s));
  }
  return tr;
}

struct ReferenceRun {
  Trajectory trajectory;
  ObservationStream stream;
};

/// Reference run from the true initial state. Each recorded frame is also
/// passed to `sink` when given (for the concurrent twin).
inline ReferenceRun run_reference(const Model& model, const SolverConfig& cfg, const ObservationOperator& op,
                                  int obs_every = 1,
                                  const std::function<void(const ObservationFrame&)>& sink = {}) {
  if (obs_every < 1) throw InvalidArgument("obs_every must be >= 1");
  SolverConfig c = cfg;
  c.mu = 0.0;
  Stepper st(model.space, model.forms, c, model.data);
  ReferenceRun out;
  out.stream.meta = stream_meta(op, c.dt * obs_every);
  out.stream.source = StreamSource::ReferenceRun;
  auto record = [&](const FieldState& s) {
    ObservationFrame f{s.t, op.apply(s.u)};
    if (sink) sink(f);
    out.stream.frames.push_back(std::move(f));
  };
  auto u0 = st.initial_state(model.u0);
  record(u0);
  out.trajectory = st.run(u0, [&](const FieldState& s, const StepDiagnostics& d) {
    if (d.step % static_cast<std::size_t>(obs_every) == 0) record(s);
  });
  return out;
}

struct CdaRun {
  Trajectory trajectory;
  ErrorSeries errors;
  double quasi_steady = 0.0;  ///< mean L2 error over the final 10% of the window
};

namespace detail {

// mean of e.l2 over samples with t >= (1 - frac) * t_last
inline double trailing_mean(const ErrorSeries& e, double frac) {
  if (e.size() == 0) return 0.0;
  const double t0 = e.t.front(), t1 = e.t.back(), cut = t1 - frac * (t1 - t0) - 1e-12;
  double s = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < e.size(); ++k)
    if (e.t[k] >= cut) s += e.l2[k], ++n;
  return n ? s / n : 0.0;
}

// coarse-norm error of v against the frame in effect at t
inline std::pair<double, double> frame_error(const ObservationOperator& op, const FormSet& forms, FrameSource& src,
                                             const FieldState& v) {
  Vector d = op.prolong(src.values_at(v.t) - op.apply(v.u));
  return {std::sqrt(std::max(0.0, d.dot(forms.M * d))), std::sqrt(std::max(0.0, d.dot(forms.K * d)))};
}

}  // namespace detail

/// Nudged run from cda.v0 with viscosity cda.nu_guess (or cfg.nu). Errors are
/// against `reference` when given, else against the frames in coarse norm.
inline CdaRun run_cda(const Model& model, const SolverConfig& cfg, const CdaConfig& cda, const ObservationOperator& op,
                      FrameSource& source, const Trajectory* reference = nullptr) {
  cda.validate();
  SolverConfig c = cfg;
  c.mu = cda.mu;
  const double nu_true = cfg.nu;
  if (cda.nu_guess > 0.0) c.nu = cda.nu_guess;
  Stepper st(model.space, model.forms, c, model.data);
  st.set_nudging(op, source);
  FieldState v0 = cda.v0 ? st.initial_state(cda.v0) : st.initial_state(Vector::Zero(model.space->n_u()));
  CdaRun out;
  // coarse errors are taken while each frame is current (queues discard old frames)
  std::vector<std::pair<double, double>> coarse;
  if (!reference) coarse.push_back(detail::frame_error(op, model.forms, source, v0));
  out.trajectory = st.run(v0, [&](const FieldState& s, const StepDiagnostics&) {
    if (!reference) coarse.push_back(detail::frame_error(op, model.forms, source, s));
  });
  if (reference) {
    out.errors = error_series(model.forms, *reference, out.trajectory);
  } else {
    for (const auto& s : out.trajectory.states) {
      auto k = static_cast<std::size_t>(std::llround((s.t - v0.t) / c.dt));
      out.errors.push(s.t, coarse[k].first, coarse[k].second);
    }
  }
  if (cda.nu_guess > 0.0)
    for (auto& v : out.errors.nu_err) v = std::abs(nu_true - c.nu);
  out.quasi_steady = detail::trailing_mean(out.errors, 0.1);
  return out;
}

/// Nudged run from the true initial state with a fixed wrong viscosity.
inline CdaRun run_cda_viscosity(const Model& model, const SolverConfig& cfg, CdaConfig cda,
                                const ObservationOperator& op, FrameSource& source, double nu_guess,
                                const Trajectory* reference = nullptr) {
  if (!(nu_guess > 0.0)) throw InvalidArgument("viscosity guess must be positive");
  cda.nu_guess = nu_guess;
  cda.v0 = model.u0;
  return run_cda(model, cfg, cda, op, source, reference);
}

struct RecoveryResult {
  std::vector<double> nu;        ///< nu_0, nu_1, ... one per update plus the initial guess
  std::vector<double> update_t;  ///< time of each update
  ErrorSeries errors;            ///< one row per update, nu_err = |nu_true - nu_k|
  Trajectory trajectory;
};

/// Viscosity recovery: run nudged for T_u, then update
///   nu <- clip(nu - mu <P(I u - I v), v> / ||v||_V^2)
/// with both terms averaged over the last quarter of the window. With
/// v tracking u the correction vanishes, so the true viscosity is a fixed
/// point. `nu_true` is only used for reporting (pass NaN when unknown).
inline RecoveryResult recover_viscosity(const Model& model, const SolverConfig& cfg, const CdaConfig& cda,
                                        const ObservationOperator& op, FrameSource& source, double nu_guess,
                                        double nu_true, const Trajectory* reference = nullptr) {
  cda.validate();
  if (!(nu_guess > 0.0)) throw InvalidArgument("viscosity guess must be positive");
  const auto& rs = cda.recovery;
  SolverConfig c = cfg;
  c.mu = cda.mu;
  c.nu = nu_guess;
  c.output_every = 0;
  Stepper st(model.space, model.forms, c, model.data);
  st.set_nudging(op, source);
  FieldState cur = cda.v0 ? st.initial_state(cda.v0) : st.initial_state(model.u0);
  FieldState prev;
  bool have_prev = false;

  RecoveryResult out;
  out.nu.push_back(nu_guess);
  out.trajectory.dt = c.dt;
  out.trajectory.states.push_back(cur);
  const auto steps_per_window = static_cast<std::size_t>(std::max(1.0, std::round(rs.update_interval / c.dt)));
  const std::size_t total = c.steps();
  const std::size_t avg_from = steps_per_window - std::max<std::size_t>(1, steps_per_window / 4);
  const double lo = rs.clip_low * nu_guess, hi = rs.clip_high * nu_guess;
  std::size_t k = 0;
  int growth = 0;
  double last_mismatch = std::numeric_limits<double>::infinity();
  const std::size_t ref_stride = reference && reference->states.size() > 1
                                     ? static_cast<std::size_t>(std::llround((reference->states[1].t - reference->states[0].t) / c.dt))
                                     : 0;
  auto ref_at = [&](std::size_t step) -> const FieldState* {
    if (!reference || ref_stride == 0 || step % ref_stride) return nullptr;
    std::size_t i = step / ref_stride;
    return i < reference->states.size() ? &reference->states[i] : nullptr;
  };

  for (int it = 0; it < rs.max_iterations && k < total; ++it) {
    double ip = 0.0, vv = 0.0, mismatch = 0.0;
    int samples = 0;
    for (std::size_t w = 0; w < steps_per_window && k < total; ++w) {
      ++k;
      StepDiagnostics d;
      FieldState next = st.step(cur, have_prev ? &prev : nullptr, &d, k);
      next.t = static_cast<double>(k) * c.dt + out.trajectory.states.front().t;
      out.trajectory.diagnostics.push_back(d);
      if (w >= avg_from) {
        Vector diff = op.prolong(source.values_at(next.t) - op.apply(next.u));
        Vector mv = model.forms.M * next.u;
        ip += cda.mu * diff.dot(mv);
        vv += next.u.dot(model.forms.K * next.u);
        mismatch += std::sqrt(std::max(0.0, diff.dot(model.forms.M * diff)));
        ++samples;
      }
      prev = std::move(cur);
      cur = std::move(next);
      have_prev = true;
    }
    if (samples == 0) break;
    ip /= samples;
    vv /= samples;
    mismatch /= samples;
    if (!(vv > 1e-14)) throw NumericalError("viscosity recovery undefined: flow is quiescent (||v||_V ~ 0)", k, cur.t);
    const double nu_old = st.config().nu;
    const double nu_new = std::clamp(nu_old - ip / vv, lo, hi);
    st.config().nu = nu_new;
    out.nu.push_back(nu_new);
    out.update_t.push_back(cur.t);
    double e2 = mismatch, e1 = std::numeric_limits<double>::quiet_NaN();
    if (const FieldState* r = ref_at(k)) {
      Vector diff = r->u - cur.u;
      e2 = std::sqrt(std::max(0.0, diff.dot(model.forms.M * diff)));
      e1 = std::sqrt(std::max(0.0, diff.dot(model.forms.K * diff)));
    }
    out.errors.push(cur.t, e2, e1, std::isnan(nu_true) ? std::abs(nu_new - nu_old) : std::abs(nu_true - nu_new));
    if (!std::isfinite(nu_new)) throw NumericalError("viscosity recovery produced a non-finite value", k, cur.t);
    growth = mismatch > last_mismatch ? growth + 1 : 0;
    last_mismatch = mismatch;
    if (growth >= 3)
      throw NumericalError("viscosity recovery diverging: observation mismatch grew over 3 consecutive updates (nu=" +
                               detail::format_double(nu_new) + ", mismatch=" + detail::format_double(mismatch) + ")",
                           k, cur.t);
    if (std::abs(nu_new - nu_old) < rs.tol) break;
  }
  out.trajectory.states.push_back(cur);
  return out;
}

struct TwinResult {
  ReferenceRun reference;
  CdaRun cda;
};

/// Reference and assimilated runs on two threads joined by a bounded frame queue.
inline TwinResult run_twin_concurrent(const Model& model, const SolverConfig& cfg, const CdaConfig& cda,
                                      const ObservationOperator& op, std::size_t capacity = 8) {
  cda.validate();
  FrameQueue queue(stream_meta(op, cfg.dt * cda.obs_every), capacity);
  TwinResult out;
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      out.reference = run_reference(model, cfg, op, cda.obs_every, [&](const ObservationFrame& f) { queue.push(f); });
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  try {
    out.cda = run_cda(model, cfg, cda, op, queue);
  } catch (...) {
    queue.close();
    producer.join();
    if (producer_error) std::rethrow_exception(producer_error);
    throw;
  }
  producer.join();
  if (producer_error) std::rethrow_exception(producer_error);
  out.cda.errors = error_series(model.forms, out.reference.trajectory, out.cda.trajectory);
  out.cda.quasi_steady = detail::trailing_mean(out.cda.errors, 0.1);
  return out;
}

/// Sequential twin: reference run, then the assimilated run fed from the
/// recorded stream.
inline TwinResult run_twin(const Model& model, const SolverConfig& cfg, const CdaConfig& cda,
                           const ObservationOperator& op) {
  TwinResult out;
  out.reference = run_reference(model, cfg, op, cda.obs_every);
  StreamFrameSource src(out.reference.stream);
  out.cda = run_cda(model, cfg, cda, op, src, &out.reference.trajectory);
  return out;
}

/// Least-squares line through (x, y); returns slope, intercept and R^2.
struct LineFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_line needs at least two matching points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  if (sxx == 0.0) throw InvalidArgument("fit_line: x values are all equal");
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

}  // namespace nudgeflow
