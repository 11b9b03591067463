#pragma once

// Crank-Nicolson time stepping of the regularized (optionally nudged)
// Navier-Stokes system, one saddle solve per step.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nudgeflow/assembly.hpp"
#include "nudgeflow/observe.hpp"

namespace nudgeflow {

enum class Linearization { SemiImplicit, Picard };

struct SolverConfig {
  double nu = 1e-3;
  double dt = 1e-3;
  double t_end = 1.0;
  SlipParams slip;
  double mu = 0.0;  ///< 0 disables nudging
  Linearization mode = Linearization::SemiImplicit;
  int picard_iterations = 2;
  double tol = 1e-10;
  bool convection = true;
  ConvectionForm convection_form = ConvectionForm::SkewSymmetric;
  bool project_initial = true;  ///< project u0 onto discretely divergence-free fields
  int output_every = 1;         ///< keep every k-th state in the trajectory (0: first and last only)

  void validate() const {
    std::vector<std::string> bad;
    if (!(dt > 0.0)) bad.push_back("dt must be positive");
    if (!(nu > 0.0)) bad.push_back("nu must be positive");
    if (!(mu >= 0.0)) bad.push_back("mu must be >= 0");
    if (!(slip.eps > 0.0)) bad.push_back("eps must be positive");
    if (!(t_end > 0.0)) bad.push_back("t_end must be positive");
    if (!(tol > 0.0)) bad.push_back("tol must be positive");
    if (mode == Linearization::Picard && picard_iterations < 1) bad.push_back("picard_iterations must be >= 1");
    if (output_every < 0) bad.push_back("output_every must be >= 0");
    if (!bad.empty()) throw ValidationError(std::move(bad));
  }

  std::size_t steps() const { return static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9)); }
};

/// Body force and essential boundary data.
struct ProblemData {
  VelocityFunction force;  ///< null: f = 0
  BoundaryData boundary;   ///< null: homogeneous
};

struct StepDiagnostics {
  std::size_t step = 0;
  double t = 0.0;
  double kinetic = 0.0;        ///< 1/2 ||u||^2
  double h1 = 0.0;             ///< ||u||_V
  double j_eps = 0.0;
  double div_residual = 0.0;   ///< ||D u||_inf
  double slip_dissipation = 0.0;  ///< (beta(u_tau), u_tau)_S
  double mid_h1_sq = 0.0;      ///< ||u^{n+1/2}||_V^2
  double mid_slip = 0.0;       ///< u^{n+1/2}^T S_lin u^{n+1/2}
  double mid_dissipation = 0.0;   ///< (beta(u^{n+1/2}_tau), u^{n+1/2}_tau)_S
  double force_sq = 0.0;       ///< ||f(t^{n+1/2})||^2
  double solve_residual = 0.0;
};

struct Trajectory {
  std::vector<FieldState> states;
  std::vector<StepDiagnostics> diagnostics;  ///< one per step
  double dt = 0.0;
};

/// Checks of the discrete energy law along a trajectory with homogeneous
/// boundary data and no nudging.
struct EnergyReport {
  bool monotone = true;            ///< kinetic energy never increases (meaningful for f = 0)
  bool dissipation_nonnegative = true;
  double bound_lhs = 0.0;          ///< ||u^n||^2 + nu dt sum ||u_mid||_V^2 + 2 dt sum u_mid^T S u_mid
  double bound_rhs = 0.0;          ///< ||u^0||^2 + dt/nu sum ||f||^2 (L2 norm of f bounds its dual norm)
  double worst_ratio = 0.0;        ///< max over n of lhs / rhs
  double max_div_residual = 0.0;
};

inline EnergyReport energy_report(const Trajectory& tr, double kinetic0, double nu) {
  EnergyReport r;
  double visc = 0.0, slip = 0.0, force = 0.0, prev = kinetic0;
  for (const auto& d : tr.diagnostics) {
    if (d.kinetic > prev * (1.0 + 1e-12) + 1e-300) r.monotone = false;
    prev = d.kinetic;
    if (d.slip_dissipation < 0.0 || d.mid_slip < 0.0) r.dissipation_nonnegative = false;
    visc += tr.dt * d.mid_h1_sq;
    slip += tr.dt * d.mid_slip;
    force += tr.dt * d.force_sq;
    r.bound_lhs = 2.0 * d.kinetic + nu * visc + 2.0 * slip;
    r.bound_rhs = 2.0 * kinetic0 + force / nu;
    r.worst_ratio = std::max(r.worst_ratio, r.bound_rhs > 0.0 ? r.bound_lhs / r.bound_rhs : 0.0);
    r.max_div_residual = std::max(r.max_div_residual, d.div_residual);
  }
  return r;
}

/// Nudging setup: operator, factored matrix and a frame source.
struct Nudging {
  const ObservationOperator* op = nullptr;
  NudgingForms forms;
  FrameSource* source = nullptr;
};

class Stepper {
 public:
  Stepper(std::shared_ptr<const TaylorHoodSpace> space, const FormSet& forms, SolverConfig config,
          ProblemData data = {})
      : space_(std::move(space)), forms_(&forms), cfg_(std::move(config)), data_(std::move(data)), solver_(cfg_.tol) {
    if (!space_) throw InvalidArgument("Stepper: null space");
    cfg_.validate();
    if (forms.M.rows() != space_->n_u()) throw DimensionError("Stepper: forms do not match the space");
    has_slip_ = space_->mesh().has_marker(BoundaryMarker::Slip);
    zero_mean_ = !space_->mesh().has_marker(BoundaryMarker::Outflow);
  }

  const SolverConfig& config() const { return cfg_; }
  SolverConfig& config() { return cfg_; }
  const TaylorHoodSpace& space() const { return *space_; }

  /// Enables the feedback term. The operator and source must outlive the stepper.
  void set_nudging(const ObservationOperator& op, FrameSource& source) {
    if (op.space_ptr() != space_ && op.space().n_u() != space_->n_u())
      throw DimensionError("observation operator was built on a different space");
    check_compatible(source.meta(), op);
    nudge_ = Nudging{&op, assemble_nudging(op, forms_->M, cfg_.mu), &source};
  }
  void clear_nudging() { nudge_.reset(); }

  /// Initial state from coefficients: constraints applied, optionally
  /// projected to discretely divergence-free, plus a consistent pressure.
  FieldState initial_state(const Vector& u0, double t0 = 0.0) {
    if (u0.size() != space_->n_u()) throw DimensionError("initial velocity has wrong size");
    const auto& P = space_->free_map();
    const auto& Pt = space_->free_map_transpose();
    Vector g = space_->lift(data_.boundary, t0);
    FieldState s;
    s.t = t0;
    s.u = space_->constrain(u0, g);
    if (cfg_.project_initial) {
      SaddleSystem sys = base_system(SparseMatrix(Pt * forms_->M * P), g);
      sys.f_u = Pt * (forms_->M * (s.u - g));
      auto sol = solve(sys, 0, t0);
      s.u = P * sol.u + g;
    }
    s.p = initial_pressure(s.u, t0);
    check_finite(s.u, 0, t0, "initial velocity");
    return s;
  }

  FieldState initial_state(const VelocityFunction& u0, double t0 = 0.0) {
    return initial_state(interpolate_field(*space_, u0, nullptr, t0).u, t0);
  }

  /// Advances one step from `cur`; `prev` is the state before it (for the
  /// extrapolated convection velocity), null on the first step.
  FieldState step(const FieldState& cur, const FieldState* prev, StepDiagnostics* diag = nullptr,
                  std::size_t step_index = 0) {
    const double dt = cfg_.dt, t0 = cur.t, t1 = cur.t + dt, th = cur.t + 0.5 * dt;
    const auto& P = space_->free_map();
    const auto& Pt = space_->free_map_transpose();
    const SparseMatrix& M = forms_->M;
    Vector w = prev ? Vector(1.5 * cur.u - 0.5 * prev->u) : cur.u;
    Vector g1 = space_->lift(data_.boundary, t1);
    Vector load = assemble_load(*space_, data_.force, th);
    Vector nudge_rhs;
    if (nudge_) {
      // sequenced: a queue drops the t0 frame once t1 is requested
      nudge_rhs = nudge_->forms.rhs(nudge_->source->values_at(t0));
      nudge_rhs += nudge_->forms.rhs(nudge_->source->values_at(t1));
      nudge_rhs *= 0.5;
      nudge_rhs -= 0.5 * nudge_->forms.U * (nudge_->forms.V * cur.u);
    }
    const int iterations = cfg_.mode == Linearization::Picard ? cfg_.picard_iterations : 1;
    FieldState next;
    next.t = t1;
    SparseMatrix slip_mat;
    SaddleSolution sol;
    for (int it = 0; it < iterations; ++it) {
      SparseMatrix L = cfg_.nu * forms_->K;
      if (cfg_.convection) L += assemble_convection(*space_, w, cfg_.convection_form);
      if (has_slip_) {
        slip_mat = assemble_slip(*space_, cfg_.slip, w).matrix;
        L += slip_mat;
      }
      SparseMatrix A = M / dt + 0.5 * L;
      Vector rhs = M * cur.u / dt - 0.5 * (L * cur.u) + load;
      if (nudge_) rhs += nudge_rhs;
      rhs -= A * g1;
      SaddleSystem sys = base_system(SparseMatrix(Pt * A * P), g1);
      sys.f_u = Pt * rhs;
      if (nudge_) {
        sys.low_rank = LowRankTerm{SparseMatrix(0.5 * (Pt * nudge_->forms.U)), SparseMatrix(nudge_->forms.V * P)};
        sys.f_u -= 0.5 * (Pt * (nudge_->forms.U * (nudge_->forms.V * g1)));
      }
      sol = solve(sys, step_index, t1);
      next.u = P * sol.u + g1;
      next.p = sol.p;
      if (it + 1 < iterations) w = 0.5 * (cur.u + next.u);
    }
    check_finite(next.u, step_index, t1, "velocity");
    check_finite(next.p, step_index, t1, "pressure");
    if (diag) {
      *diag = diagnostics(next, step_index);
      Vector mid = 0.5 * (cur.u + next.u);
      diag->mid_h1_sq = mid.dot(forms_->K * mid);
      if (has_slip_) {
        diag->mid_slip = mid.dot(slip_mat * mid);
        diag->mid_dissipation = slip_dissipation(*space_, cfg_.slip, mid);
      }
      diag->force_sq = l2_norm_squared(*space_, data_.force, th);
      diag->solve_residual = sol.residual;
      check_diagnostics(*diag);
    }
    return next;
  }

  /// Kinetic energy, norms, j_eps and divergence of one state.
  StepDiagnostics diagnostics(const FieldState& s, std::size_t step_index = 0) const {
    StepDiagnostics d;
    d.step = step_index;
    d.t = s.t;
    d.kinetic = 0.5 * s.u.dot(forms_->M * s.u);
    d.h1 = std::sqrt(std::max(0.0, s.u.dot(forms_->K * s.u)));
    d.div_residual = (forms_->D * s.u).lpNorm<Eigen::Infinity>();
    if (has_slip_) {
      d.j_eps = j_eps(*space_, cfg_.slip, s.u);
      d.slip_dissipation = slip_dissipation(*space_, cfg_.slip, s.u);
    }
    return d;
  }

  using StepCallback = std::function<void(const FieldState&, const StepDiagnostics&)>;

  /// Runs ceil(t_end / dt) steps from `initial`.
  Trajectory run(const FieldState& initial, const StepCallback& on_step = {}) {
    Trajectory tr;
    tr.dt = cfg_.dt;
    tr.states.push_back(initial);
    const std::size_t n = cfg_.steps();
    FieldState prev, cur = initial;
    bool have_prev = false;
    for (std::size_t k = 1; k <= n; ++k) {
      StepDiagnostics d;
      FieldState next = step(cur, have_prev ? &prev : nullptr, &d, k);
      // keep the time grid exact
      next.t = initial.t + static_cast<double>(k) * cfg_.dt;
      d.t = next.t;
      tr.diagnostics.push_back(d);
      if (on_step) on_step(next, d);
      if ((cfg_.output_every > 0 && k % static_cast<std::size_t>(cfg_.output_every) == 0) || k == n)
        tr.states.push_back(next);
      prev = std::move(cur);
      cur = std::move(next);
      have_prev = true;
    }
    return tr;
  }

 private:
  SaddleSystem base_system(SparseMatrix A, const Vector& g) const {
    SaddleSystem sys;
    sys.A = std::move(A);
    sys.B = SparseMatrix(-1.0 * (forms_->D * space_->free_map()));
    sys.f_p = forms_->D * g;
    if (zero_mean_) sys.mean_row = forms_->mean;
    return sys;
  }

  SaddleSolution solve(const SaddleSystem& sys, std::size_t step_index, double t) {
    try {
      return solver_.solve(sys);
    } catch (const SolverError&) {
      throw;
    } catch (const Error& e) {
      throw NumericalError(e.what(), step_index, t);
    }
  }

  // pressure from the momentum equation at t with a = du/dt unknown
  Vector initial_pressure(const Vector& u, double t) {
    const auto& P = space_->free_map();
    const auto& Pt = space_->free_map_transpose();
    SparseMatrix L = cfg_.nu * forms_->K;
    if (cfg_.convection) L += assemble_convection(*space_, u, cfg_.convection_form);
    if (has_slip_) L += assemble_slip(*space_, cfg_.slip, u).matrix;
    SaddleSystem sys = base_system(SparseMatrix(Pt * forms_->M * P), Vector::Zero(space_->n_u()));
    sys.f_u = Pt * (assemble_load(*space_, data_.force, t) - L * u);
    return solve(sys, 0, t).p;
  }

  static void check_finite(const Vector& v, std::size_t step, double t, const char* what) {
    if (!v.allFinite()) throw NumericalError(std::string("non-finite ") + what, step, t);
  }

  static void check_diagnostics(const StepDiagnostics& d) {
    for (double v : {d.kinetic, d.h1, d.j_eps, d.div_residual, d.slip_dissipation, d.mid_h1_sq, d.mid_slip,
                     d.mid_dissipation, d.force_sq})
      if (!std::isfinite(v)) throw NumericalError("non-finite diagnostic", d.step, d.t);
  }

  std::shared_ptr<const TaylorHoodSpace> space_;
  const FormSet* forms_;
  SolverConfig cfg_;
  ProblemData data_;
  SaddleSolver solver_;
  std::optional<Nudging> nudge_;
  bool has_slip_ = false;
  bool zero_mean_ = true;
};

}  // namespace nudgeflow
