//! Time integration of the Keller-Segel system.
//!
//! One step advances the density first and the signal second:
//!
//! ```text
//! (I - dt Lap_h) u' = u - dt chi div(upwind(u) grad v)
//! (lambda/dt + 1 - Lap_h) v' = (lambda/dt) v + u'
//! ```
//!
//! Diffusion is implicit in both equations and the chemotactic flux is
//! explicit first-order upwind, so `dt` is limited only by the advective CFL
//! bound. With `lambda = 0` the second line is the screened Poisson equation
//! of the parabolic-elliptic system, evaluated at every step.

use std::sync::Arc;

use crate::elliptic::implicit_diffusion_into;
use crate::error::{Error, Result};
use crate::functionals::{DiagnosticsRecord, DiagnosticsSpec};
use crate::mesh::{Field, Geometry, Grid};
use crate::operators::{
    divergence_into, gradient_faces, solve_spd_into, CgWorkspace, ScreenedOperator, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// Pointwise negativity tolerated relative to the field's sup norm.
pub const POSITIVITY_TOL: f64 = 1e-12;
/// Default blow-up threshold as a multiple of `||u_init||_inf`.
pub const DEFAULT_BLOWUP_FACTOR: f64 = 1e6;

/// One point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PPState {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    /// Signal relaxation time; zero selects the parabolic-elliptic system.
    pub lambda: f64,
    pub chi: f64,
}

impl PPState {
    pub fn new(u: Field, v: Field, lambda: f64, chi: f64) -> Result<Self> {
        u.check_same_grid(&v)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(chi.is_finite() && chi >= 0.0) {
            return Err(Error::Config(format!("chi must be >= 0, got {chi}")));
        }
        for (name, f) in [("u", &u), ("v", &v)] {
            if !f.all_finite() || f.min() < -POSITIVITY_TOL * f.linf() {
                return Err(Error::Config(format!("initial {name} must be finite and nonnegative")));
            }
        }
        Ok(PPState { u, v, t: 0.0, lambda, chi })
    }

    /// State whose signal solves the elliptic constraint `(I - Lap_h) v = u`.
    pub fn consistent(u: Field, lambda: f64, chi: f64, tol: f64) -> Result<Self> {
        let v = crate::elliptic::solve_screened_poisson(&u, tol)?;
        PPState::new(u, v, lambda, chi)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.u.grid_arc()
    }
}

/// Stepper and run controls.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub dt_max: f64,
    pub dt_min: f64,
    pub cfl_safety: f64,
    pub linear_tol: f64,
    pub max_iter: usize,
    /// Absolute `||u||_inf` threshold; `None` means
    /// `blowup_linf_factor * ||u_init||_inf`.
    pub blowup_linf_threshold: Option<f64>,
    pub blowup_linf_factor: f64,
    pub t_end: f64,
    pub diag_stride: usize,
    pub diagnostics: DiagnosticsSpec,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt_max: 1e-2,
            dt_min: 1e-9,
            cfl_safety: 0.4,
            linear_tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            blowup_linf_threshold: None,
            blowup_linf_factor: DEFAULT_BLOWUP_FACTOR,
            t_end: 2.0,
            diag_stride: 1,
            diagnostics: DiagnosticsSpec::default(),
        }
    }
}

impl StepperConfig {
    /// The `||u||_inf` level that flags a trajectory started from `u_init`.
    pub fn blowup_threshold(&self, u_init: &Field) -> f64 {
        self.blowup_linf_threshold.unwrap_or(self.blowup_linf_factor * u_init.linf().max(f64::MIN_POSITIVE))
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {x}")))
            }
        };
        pos("dt_max", self.dt_max)?;
        pos("dt_min", self.dt_min)?;
        pos("linear_tol", self.linear_tol)?;
        pos("t_end", self.t_end)?;
        if self.dt_min > self.dt_max {
            return Err(Error::Config(format!("dt_min {} exceeds dt_max {}", self.dt_min, self.dt_max)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Config(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if let Some(th) = self.blowup_linf_threshold {
            pos("blowup_linf_threshold", th)?;
        }
        if !(self.blowup_linf_factor.is_finite() && self.blowup_linf_factor > 1.0) {
            return Err(Error::Config(format!("blowup_linf_factor must exceed 1, got {}", self.blowup_linf_factor)));
        }
        if self.diag_stride == 0 {
            return Err(Error::Config("diag_stride must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.diagnostics.theta >= 1.0 && self.diagnostics.q >= 1.0) {
            return Err(Error::Config("diagnostic exponents must be >= 1".into()));
        }
        Ok(())
    }
}

/// The CFL bound asks for a step below `dt_min`: the trajectory is aborted as
/// a suspected blow-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtCollapse {
    pub required: f64,
}

/// `min(dt_max, cfl_safety h / (chi max|grad v|))`.
pub fn cfl_dt(state: &PPState, cfg: &StepperConfig) -> std::result::Result<f64, DtCollapse> {
    let speed = state.chi * gradient_faces(&state.v).max_abs();
    let h = state.grid().min_spacing();
    let dt = if speed > 0.0 { cfg.dt_max.min(cfg.cfl_safety * h / speed) } else { cfg.dt_max };
    if dt < cfg.dt_min || !dt.is_finite() {
        Err(DtCollapse { required: dt })
    } else {
        Ok(dt)
    }
}

/// Reusable buffers for stepping one trajectory.
#[derive(Debug, Default, Clone)]
pub struct Stepper {
    ws: CgWorkspace,
    rhs: Vec<f64>,
    div: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances `state` by `dt` in place, using `state.lambda`.
    pub fn step(&mut self, state: &mut PPState, dt: f64, cfg: &StepperConfig) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let grid = state.grid().clone();
        let n = grid.len();
        let chi = state.chi;
        let lambda = state.lambda;

        // chemotactic flux chi u grad v with the donor-cell value of u
        let grad = gradient_faces(&state.v);
        let u = state.u.values();
        self.fx.clear();
        self.fy.clear();
        match grid.geometry() {
            Geometry::Rectangle => {
                let nx = grid.nx();
                let ny = grid.ny();
                for j in 0..ny {
                    for i in 0..nx - 1 {
                        let (l, r) = (i + nx * j, i + 1 + nx * j);
                        let g = grad.x[i + (nx - 1) * j];
                        self.fx.push(chi * g * if g > 0.0 { u[l] } else { u[r] });
                    }
                }
                for j in 0..ny - 1 {
                    for i in 0..nx {
                        let (l, r) = (i + nx * j, i + nx * (j + 1));
                        let g = grad.y[i + nx * j];
                        self.fy.push(chi * g * if g > 0.0 { u[l] } else { u[r] });
                    }
                }
            }
            Geometry::RadialDisk => {
                for (i, &g) in grad.x.iter().enumerate() {
                    self.fx.push(chi * g * if g > 0.0 { u[i] } else { u[i + 1] });
                }
            }
        }
        self.div.resize(n, 0.0);
        divergence_into(&grid, &self.fx, &self.fy, &mut self.div);
        self.rhs.clear();
        self.rhs.extend(u.iter().zip(&self.div).map(|(u, d)| u - dt * d));

        let t_new = state.t + dt;
        implicit_diffusion_into(
            &grid,
            &self.rhs,
            state.u.values_mut(),
            dt,
            cfg.linear_tol,
            cfg.max_iter,
            &mut self.ws,
        )?;

        let relax = lambda / dt;
        let op = ScreenedOperator::new(grid.clone(), relax + 1.0)?;
        self.rhs.clear();
        self.rhs.extend(state.v.values().iter().zip(state.u.values()).map(|(v, u)| relax * v + u));
        solve_spd_into(&op, &self.rhs, state.v.values_mut(), cfg.linear_tol, cfg.max_iter, &mut self.ws)?;
        state.t = t_new;

        for (name, f) in [("u", &state.u), ("v", &state.v)] {
            if !f.all_finite() {
                return Err(Error::Scheme { t: t_new, message: format!("{name} is not finite") });
            }
            let min = f.min();
            if min < -POSITIVITY_TOL * f.linf() {
                return Err(Error::Scheme {
                    t: t_new,
                    message: format!("{name} lost positivity: min {min:e}, sup {:e}", f.linf()),
                });
            }
        }
        Ok(())
    }
}

/// One parabolic-parabolic step with the state's own `lambda`.
pub fn step_pp(state: &PPState, dt: f64, cfg: &StepperConfig) -> Result<PPState> {
    let mut next = state.clone();
    Stepper::new().step(&mut next, dt, cfg)?;
    Ok(next)
}

/// One parabolic-elliptic step: [`step_pp`] with `lambda = 0`.
pub fn step_pe(state: &PPState, dt: f64, cfg: &StepperConfig) -> Result<PPState> {
    let mut next = state.clone();
    next.lambda = 0.0;
    Stepper::new().step(&mut next, dt, cfg)?;
    Ok(next)
}

/// How step sizes are chosen along a run.
#[derive(Debug, Clone, PartialEq)]
pub enum DtPolicy {
    /// Advective CFL bound capped by `dt_max`; last step shortened to hit `t_end`.
    Cfl,
    /// Replay a recorded schedule (shared across runs that must stay
    /// synchronized). The run stops at `t_end` or when the schedule ends.
    Schedule(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    BlowupSuspected,
    SolverFailure,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::BlowupSuspected => "blowup_suspected",
            Termination::SolverFailure => "solver_failure",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Last valid state reached.
    pub final_state: PPState,
    pub trajectory: Vec<DiagnosticsRecord>,
    pub termination: Termination,
    pub steps: usize,
    /// Step sizes actually taken.
    pub dt_history: Vec<f64>,
    /// `(t, ||u||_inf)` after every step, the growth history on blow-up.
    pub linf_history: Vec<(f64, f64)>,
    pub message: Option<String>,
}

impl RunResult {
    pub fn max_linf(&self) -> f64 {
        self.linf_history.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn min_dt(&self) -> f64 {
        self.dt_history.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Integrates to `cfg.t_end` under the CFL policy.
pub fn run(initial: PPState, cfg: &StepperConfig) -> Result<RunResult> {
    run_observed(initial, cfg, &DtPolicy::Cfl, |_, _| Ok(()))
}

/// Integrates with a step policy and calls `observer(state, dt)` on the
/// initial state (`dt = 0`) and after every accepted step. Observer errors
/// abort the run and are returned.
pub fn run_observed<F>(initial: PPState, cfg: &StepperConfig, policy: &DtPolicy, mut observer: F) -> Result<RunResult>
where
    F: FnMut(&PPState, f64) -> Result<()>,
{
    cfg.validate()?;
    if let DtPolicy::Schedule(s) = policy {
        if s.iter().any(|dt| !(dt.is_finite() && *dt > 0.0)) {
            return Err(Error::Config("dt schedule entries must be positive".into()));
        }
    }
    let threshold = cfg.blowup_threshold(&initial.u);
    let spec = cfg.diagnostics;
    let mut state = initial;
    let mut stepper = Stepper::new();
    let mut trajectory = vec![DiagnosticsRecord::measure(&state.u, &state.v, state.chi, state.t, 0.0, &spec)?];
    observer(&state, 0.0)?;

    let mut dt_history = Vec::new();
    let mut linf_history = vec![(state.t, state.u.linf())];
    let mut termination = Termination::Completed;
    let mut message = None;
    let mut steps = 0usize;
    let snap = 1e-12 * cfg.t_end;

    loop {
        let remaining = cfg.t_end - state.t;
        if remaining <= snap {
            break;
        }
        let cfl = cfl_dt(&state, cfg);
        let dt = match policy {
            DtPolicy::Cfl => match cfl {
                Ok(dt) => {
                    if dt >= remaining * (1.0 - 1e-9) {
                        remaining
                    } else {
                        dt
                    }
                }
                Err(c) => {
                    termination = Termination::BlowupSuspected;
                    message = Some(format!("CFL step {:e} fell below dt_min {:e}", c.required, cfg.dt_min));
                    break;
                }
            },
            DtPolicy::Schedule(s) => {
                if let Err(c) = cfl {
                    termination = Termination::BlowupSuspected;
                    message = Some(format!("CFL step {:e} fell below dt_min {:e}", c.required, cfg.dt_min));
                    break;
                }
                match s.get(steps) {
                    Some(&dt) => dt.min(remaining),
                    None => break,
                }
            }
        };

        let backup = (state.u.clone(), state.v.clone(), state.t);
        if let Err(e) = stepper.step(&mut state, dt, cfg) {
            state.u = backup.0;
            state.v = backup.1;
            state.t = backup.2;
            termination = Termination::SolverFailure;
            message = Some(e.to_string());
            break;
        }
        steps += 1;
        dt_history.push(dt);
        let linf = state.u.linf();
        linf_history.push((state.t, linf));
        observer(&state, dt)?;

        let done = cfg.t_end - state.t <= snap;
        if steps.is_multiple_of(cfg.diag_stride) || done || linf > threshold {
            trajectory.push(DiagnosticsRecord::measure(&state.u, &state.v, state.chi, state.t, dt, &spec)?);
        }
        if linf > threshold {
            termination = Termination::BlowupSuspected;
            message = Some(format!("||u||_inf = {linf:e} exceeded threshold {threshold:e}"));
            break;
        }
    }
    Ok(RunResult { final_state: state, trajectory, termination, steps, dt_history, linf_history, message })
}
