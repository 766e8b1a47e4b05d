//! Runnable studies built on the stepper: the `lambda -> 0` sweep, the
//! critical-mass scan, continuous dependence twins, order-of-accuracy studies
//! and the small-data barrier monitor.
//!
//! Runs that must be compared pointwise in time advance in lockstep: every
//! member takes the same step, the minimum of the members' CFL bounds.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{cfl_dt, run_observed, DtPolicy, PPState, Stepper, StepperConfig, Termination};
use crate::elliptic::{solve_screened_poisson, HeatMarcher};
use crate::error::{Error, Result};
use crate::functionals::{lyapunov, semigroup_deviation, PpPeError, PpPeErrorAccumulator};
use crate::mesh::{restrict, sample_initial, Field, Geometry, Grid, GridSpec, Preset};
use crate::operators::gradient_faces;
use crate::theory::ParamWitness;

/// Relative slack allowed when checking that an error sequence decreases.
pub const MONOTONE_SLACK: f64 = 0.05;

/// Initial signal.
#[derive(Debug, Clone, PartialEq)]
pub enum VInit {
    /// `v_init` solves `(I - Lap_h) v = u_init`.
    Consistent,
    Preset(Preset),
}

/// Everything needed to start a trajectory except `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridSpec,
    pub chi: f64,
    pub u_init: Preset,
    pub v_init: VInit,
    pub stepper: StepperConfig,
}

impl Scenario {
    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(self.grid.build()?))
    }

    /// Initial state sampled on `grid`.
    pub fn state_on(&self, grid: &Arc<Grid>, lambda: f64) -> Result<PPState> {
        let u = sample_initial(&self.u_init, grid)?;
        let v = match &self.v_init {
            VInit::Consistent => solve_screened_poisson(&u, self.stepper.linear_tol)?,
            VInit::Preset(p) => sample_initial(p, grid)?,
        };
        PPState::new(u, v, lambda, self.chi)
    }

    pub fn state(&self, lambda: f64) -> Result<PPState> {
        self.state_on(&self.build_grid()?, lambda)
    }
}

/// Returns `preset` with its total mass replaced by `mass`.
pub fn with_mass(preset: &Preset, mass: f64) -> Result<Preset> {
    match *preset {
        Preset::GaussianBump { center, width, .. } => Ok(Preset::GaussianBump { center, width, target_mass: mass }),
        Preset::RadialGaussian { width, .. } => Ok(Preset::RadialGaussian { width, target_mass: mass }),
        _ => Err(Error::Config("mass scans need a gaussian profile".into())),
    }
}

fn grid_half(spec: &GridSpec) -> Option<GridSpec> {
    let even = spec.nx.is_multiple_of(2) && (spec.geometry == Geometry::RadialDisk || spec.ny.is_multiple_of(2));
    let big = spec.nx >= 8 && (spec.geometry == Geometry::RadialDisk || spec.ny >= 8);
    if !(even && big) {
        return None;
    }
    let mut s = *spec;
    s.nx /= 2;
    if s.geometry == Geometry::Rectangle {
        s.ny /= 2;
    }
    Some(s)
}

/// Outcome of [`lockstep`].
#[derive(Debug, Clone)]
pub struct LockstepOutcome {
    pub states: Vec<PPState>,
    pub termination: Termination,
    /// Member responsible for an abnormal termination.
    pub culprit: Option<usize>,
    pub message: Option<String>,
    pub schedule: Vec<f64>,
}

/// Advances all `states` to `cfg.t_end` with a common step. `observer` sees
/// the initial ensemble (`dt = 0`) and every accepted step; its errors abort
/// the run. On abnormal termination the last valid ensemble is returned.
pub fn lockstep<F>(states: Vec<PPState>, cfg: &StepperConfig, mut observer: F) -> Result<LockstepOutcome>
where
    F: FnMut(&[PPState], f64) -> Result<()>,
{
    cfg.validate()?;
    if states.is_empty() {
        return Err(Error::Config("lockstep needs at least one trajectory".into()));
    }
    let thresholds: Vec<f64> = states.iter().map(|s| cfg.blowup_threshold(&s.u)).collect();
    let mut states = states;
    let mut steppers: Vec<Stepper> = states.iter().map(|_| Stepper::new()).collect();
    observer(&states, 0.0)?;
    let snap = 1e-12 * cfg.t_end;
    let mut schedule = Vec::new();
    let out = |states, termination, culprit, message: Option<String>, schedule| {
        Ok(LockstepOutcome { states, termination, culprit, message, schedule })
    };
    loop {
        let remaining = cfg.t_end - states[0].t;
        if remaining <= snap {
            return out(states, Termination::Completed, None, None, schedule);
        }
        let mut dt = f64::INFINITY;
        for (k, s) in states.iter().enumerate() {
            match cfl_dt(s, cfg) {
                Ok(d) => dt = dt.min(d),
                Err(c) => {
                    let msg = format!("member {k}: CFL step {:e} fell below dt_min {:e}", c.required, cfg.dt_min);
                    return out(states, Termination::BlowupSuspected, Some(k), Some(msg), schedule);
                }
            }
        }
        if dt >= remaining * (1.0 - 1e-9) {
            dt = remaining;
        }
        let backup = states.clone();
        let results: Vec<Result<()>> =
            states.par_iter_mut().zip(steppers.par_iter_mut()).map(|(s, st)| st.step(s, dt, cfg)).collect();
        if let Some((k, e)) = results.into_iter().enumerate().find_map(|(k, r)| r.err().map(|e| (k, e))) {
            let msg = format!("member {k}: {e}");
            return out(backup, Termination::SolverFailure, Some(k), Some(msg), schedule);
        }
        schedule.push(dt);
        observer(&states, dt)?;
        for (k, s) in states.iter().enumerate() {
            let linf = s.u.linf();
            if linf > thresholds[k] {
                let msg = format!("member {k}: ||u||_inf = {linf:e} exceeded {:e}", thresholds[k]);
                return out(states, Termination::BlowupSuspected, Some(k), Some(msg), schedule);
            }
        }
    }
}

/// Least-squares slope of `ln y` against `ln x`; `NaN` with fewer than two
/// usable points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// `true` when each entry is at most `(1 + slack)` times its predecessor.
pub fn is_monotone_decreasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Every `lambda` must lie in `[0, lambda_cap)`.
    pub lambda_cap: f64,
    /// Start of the window of the integrated signal error.
    pub t0: f64,
    pub t_end: f64,
    /// Also run the grid at half resolution to report how the floor scales.
    pub coarse_control: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { lambda_cap: 1.0, t0: 0.1, t_end: 2.0, coarse_control: true }
    }
}

/// Per-trajectory Lyapunov bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl LyapunovTrace {
    /// Largest `W(t_{k+1}) - W(t_k)` relative to `|W(0)|`.
    pub fn max_relative_increase(&self) -> f64 {
        let w0 = self.values.first().map_or(1.0, |w| w.abs().max(f64::MIN_POSITIVE));
        self.values.windows(2).map(|w| (w[1] - w[0]) / w0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.values.len() < 2 || self.max_relative_increase() <= slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub lambda_values: Vec<f64>,
    pub err_u_cloc: Vec<f64>,
    pub err_v_l2w12: Vec<f64>,
    pub fitted_rate_u: f64,
    pub fitted_rate_v: f64,
    /// Distance between the parabolic-elliptic runs on the grid and on its
    /// refinement: the discretization floor of both errors.
    pub floor_u: f64,
    pub floor_v: f64,
    /// The same distance one level coarser, when requested.
    pub coarse_floor_u: Option<f64>,
    pub coarse_floor_v: Option<f64>,
    /// Error of the `lambda = 0` parabolic-parabolic anchor run.
    pub anchor: PpPeError,
    pub monotone_u: bool,
    pub monotone_v: bool,
    /// Parabolic-elliptic run first, then one trace per `lambda`.
    pub lyapunov: Vec<LyapunovTrace>,
    pub steps: usize,
    pub termination: Termination,
    pub message: Option<String>,
}

impl SweepReport {
    /// `err_u(lambda_min) / floor_u`.
    pub fn floor_ratio_u(&self) -> f64 {
        self.err_u_cloc.last().copied().unwrap_or(f64::NAN) / self.floor_u
    }

    pub fn floor_ratio_v(&self) -> f64 {
        self.err_v_l2w12.last().copied().unwrap_or(f64::NAN) / self.floor_v
    }

    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let opt = |x: Option<f64>| x.map_or_else(|| "nan".into(), |v| format!("{v:.6e}"));
        let _ = writeln!(s, "# lambda sweep: termination {}, steps {}", self.termination.name(), self.steps);
        if let Some(m) = &self.message {
            let _ = writeln!(s, "# message: {m}");
        }
        let _ = writeln!(s, "# floor_u {:.6e} floor_v {:.6e}", self.floor_u, self.floor_v);
        let _ =
            writeln!(s, "# coarse_floor_u {} coarse_floor_v {}", opt(self.coarse_floor_u), opt(self.coarse_floor_v));
        let _ = writeln!(s, "# fitted_rate_u {:.4} fitted_rate_v {:.4}", self.fitted_rate_u, self.fitted_rate_v);
        let _ = writeln!(s, "# monotone_u {} monotone_v {}", self.monotone_u, self.monotone_v);
        let _ = writeln!(s, "# anchor (lambda = 0) errors {:e} {:e}", self.anchor.sup_linf_u, self.anchor.int_l2_w12_v);
        s.push_str("lambda,err_u_cloc,err_v_l2w12,lyapunov_max_increase\n");
        for (k, lam) in self.lambda_values.iter().enumerate() {
            let inc = self.lyapunov.get(k + 1).map_or(f64::NAN, |t| t.max_relative_increase());
            let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.6e}", lam, self.err_u_cloc[k], self.err_v_l2w12[k], inc);
        }
        s
    }
}

/// Runs the parabolic-elliptic system once and the parabolic-parabolic system
/// once per `lambda`, all in lockstep, and measures how the latter approach
/// the former. Control runs of the parabolic-elliptic system on the refined
/// (and optionally the coarsened) grid give the discretization floor.
///
/// A run flagged as blow-up or failing a solve stops the sweep; the report
/// then carries the errors accumulated so far and the abnormal termination.
pub fn lambda_sweep(base: &Scenario, lambdas: &[f64], opts: &SweepOptions) -> Result<SweepReport> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda list is empty".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("lambdas must be strictly decreasing".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && **l < opts.lambda_cap)) {
        return Err(Error::Config(format!("lambda {l} outside [0, {})", opts.lambda_cap)));
    }
    let cfg = StepperConfig { t_end: opts.t_end, ..base.stepper.clone() };
    let grid = base.build_grid()?;
    let fine = Arc::new(base.grid.refined().build()?);
    let coarse = match (opts.coarse_control, grid_half(&base.grid)) {
        (true, Some(c)) => Some(Arc::new(c.build()?)),
        (true, None) => return Err(Error::Config("grid too small or odd for the coarse control run".into())),
        _ => None,
    };

    // members: PE, PP anchor (lambda = 0), PP(lambda_k)..., PE fine, [PE coarse]
    let mut states = vec![base.state_on(&grid, 0.0)?, base.state_on(&grid, 0.0)?];
    for &l in lambdas {
        states.push(base.state_on(&grid, l)?);
    }
    let i_fine = states.len();
    states.push(base.state_on(&fine, 0.0)?);
    if let Some(c) = &coarse {
        states.push(base.state_on(c, 0.0)?);
    }
    let n_pp = lambdas.len();

    let mk = || PpPeErrorAccumulator::new(opts.t0, opts.t_end);
    let mut acc_pp: Vec<PpPeErrorAccumulator> = (0..n_pp).map(|_| mk()).collect::<Result<_>>()?;
    let mut acc_anchor = mk()?;
    let mut acc_floor = mk()?;
    let mut acc_coarse = mk()?;
    let mut traces: Vec<LyapunovTrace> = std::iter::once("pe".to_string())
        .chain(lambdas.iter().map(|l| format!("lambda={l}")))
        .map(|label| LyapunovTrace { label, times: Vec::new(), values: Vec::new() })
        .collect();

    let outcome = lockstep(states, &cfg, |ens, _dt| {
        let pe = &ens[0];
        let t = pe.t;
        acc_anchor.push(ens[1].t, &ens[1].u, &ens[1].v, t, &pe.u, &pe.v)?;
        for k in 0..n_pp {
            let s = &ens[2 + k];
            acc_pp[k].push(s.t, &s.u, &s.v, t, &pe.u, &pe.v)?;
        }
        let f = &ens[i_fine];
        acc_floor.push(t, &pe.u, &pe.v, f.t, &restrict(&f.u, &grid)?, &restrict(&f.v, &grid)?)?;
        if let Some(c) = ens.get(i_fine + 1) {
            acc_coarse.push(c.t, &c.u, &c.v, t, &restrict(&pe.u, c.grid())?, &restrict(&pe.v, c.grid())?)?;
        }
        let traced = std::iter::once(pe).chain(ens[2..2 + n_pp].iter());
        for (tr, s) in traces.iter_mut().zip(traced) {
            tr.times.push(s.t);
            tr.values.push(lyapunov(&s.u, &s.v, s.chi)?);
        }
        Ok(())
    })?;

    let errs: Vec<PpPeError> = acc_pp.iter().map(|a| a.finish()).collect();
    let err_u: Vec<f64> = errs.iter().map(|e| e.sup_linf_u).collect();
    let err_v: Vec<f64> = errs.iter().map(|e| e.int_l2_w12_v).collect();
    let floor = acc_floor.finish();
    let coarse_floor = coarse.as_ref().map(|_| acc_coarse.finish());

    // rates over the points that sit above the floor
    let rate = |errs: &[f64], floor: f64| {
        let (x, y): (Vec<f64>, Vec<f64>) =
            lambdas.iter().zip(errs).filter(|(l, e)| **l > 0.0 && **e > floor).map(|(l, e)| (*l, *e)).unzip();
        loglog_slope(&x, &y)
    };
    Ok(SweepReport {
        lambda_values: lambdas.to_vec(),
        fitted_rate_u: rate(&err_u, floor.sup_linf_u),
        fitted_rate_v: rate(&err_v, floor.int_l2_w12_v),
        monotone_u: is_monotone_decreasing(&err_u, MONOTONE_SLACK),
        monotone_v: is_monotone_decreasing(&err_v, MONOTONE_SLACK),
        err_u_cloc: err_u,
        err_v_l2w12: err_v,
        floor_u: floor.sup_linf_u,
        floor_v: floor.int_l2_w12_v,
        coarse_floor_u: coarse_floor.map(|e| e.sup_linf_u),
        coarse_floor_v: coarse_floor.map(|e| e.int_l2_w12_v),
        anchor: acc_anchor.finish(),
        lyapunov: traces,
        steps: outcome.schedule.len(),
        termination: outcome.termination,
        message: outcome.message,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Bounded,
    BlowupSuspected,
    Inconclusive,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Bounded => "bounded",
            Classification::BlowupSuspected => "blowup_suspected",
            Classification::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    /// A completed run whose final `||u||_inf` exceeds this multiple of the
    /// value at `t_end / 2` is still growing and is inconclusive.
    pub growth_factor: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions { growth_factor: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry {
    pub mass: f64,
    pub classification: Classification,
    pub termination: Termination,
    pub t_reached: f64,
    pub max_linf: f64,
    pub min_dt: f64,
    pub steps: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub chi: f64,
    pub entries: Vec<ScanEntry>,
    /// `(largest bounded mass, smallest blow-up mass)` when both exist and
    /// the former is smaller.
    pub bracket: Option<(f64, f64)>,
    /// A bounded mass above a blow-up mass.
    pub inversion: bool,
}

impl ScanReport {
    pub fn classification_of(&self, mass: f64) -> Option<Classification> {
        self.entries.iter().find(|e| e.mass == mass).map(|e| e.classification)
    }

    pub fn bracket_midpoint(&self) -> Option<f64> {
        self.bracket.map(|(a, b)| 0.5 * (a + b))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# critical mass scan: chi {}", self.chi);
        match self.bracket {
            Some((a, b)) => {
                let _ = writeln!(s, "# bracket {a:.6e} {b:.6e}");
            }
            None => s.push_str("# bracket none\n"),
        }
        let _ = writeln!(s, "# inversion {}", self.inversion);
        s.push_str("mass,classification,termination,t_reached,max_linf,min_dt,steps\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{}",
                e.mass,
                e.classification.name(),
                e.termination.name(),
                e.t_reached,
                e.max_linf,
                e.min_dt,
                e.steps
            );
        }
        s
    }
}

/// Runs one trajectory per mass (in parallel) and classifies each.
pub fn blowup_scan(base: &Scenario, lambda: f64, masses: &[f64], opts: &ScanOptions) -> Result<ScanReport> {
    if masses.is_empty() || masses.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("masses must be nonempty and strictly increasing".into()));
    }
    if let Some(m) = masses.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::Config(format!("mass {m} must be positive")));
    }
    let grid = base.build_grid()?;
    let profiles: Vec<Preset> = masses.iter().map(|m| with_mass(&base.u_init, *m)).collect::<Result<_>>()?;
    let entries: Vec<ScanEntry> = masses
        .par_iter()
        .zip(profiles.par_iter())
        .map(|(&mass, profile)| {
            let sc = Scenario { u_init: profile.clone(), ..base.clone() };
            let res = run_observed(sc.state_on(&grid, lambda)?, &sc.stepper, &DtPolicy::Cfl, |_, _| Ok(()))?;
            let half = sc.stepper.t_end / 2.0;
            let at_half = res.linf_history.iter().rev().find(|p| p.0 <= half).map_or(f64::NAN, |p| p.1);
            let last = res.linf_history.last().map_or(f64::NAN, |p| p.1);
            let classification = match res.termination {
                Termination::BlowupSuspected => Classification::BlowupSuspected,
                Termination::SolverFailure => Classification::Inconclusive,
                Termination::Completed if last > opts.growth_factor * at_half => Classification::Inconclusive,
                Termination::Completed => Classification::Bounded,
            };
            Ok(ScanEntry {
                mass,
                classification,
                termination: res.termination,
                t_reached: res.final_state.t,
                max_linf: res.max_linf(),
                min_dt: res.min_dt(),
                steps: res.steps,
                message: res.message.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let largest_bounded =
        entries.iter().filter(|e| e.classification == Classification::Bounded).map(|e| e.mass).fold(f64::NAN, f64::max);
    let smallest_blowup = entries
        .iter()
        .filter(|e| e.classification == Classification::BlowupSuspected)
        .map(|e| e.mass)
        .fold(f64::NAN, f64::min);
    let inversion = largest_bounded > smallest_blowup;
    let bracket = if largest_bounded < smallest_blowup { Some((largest_bounded, smallest_blowup)) } else { None };
    Ok(ScanReport { chi: base.chi, entries, bracket, inversion })
}

/// Ratio of bracket midpoints, `b / a`.
pub fn bracket_ratio(a: &ScanReport, b: &ScanReport) -> Option<f64> {
    Some(b.bracket_midpoint()? / a.bracket_midpoint()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinReport {
    pub delta: f64,
    /// `sup_t ||u_1 - u_2||_inf / delta`; zero when `delta = 0`.
    pub amplification: f64,
    pub sup_diff: f64,
    /// `(t, ||u_1 - u_2||_inf)` per step.
    pub history: Vec<(f64, f64)>,
    pub bit_identical: bool,
    pub termination: Termination,
    pub flagged: bool,
    pub message: Option<String>,
}

impl TwinReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# stability twin: delta {:e}, amplification {:.6e}, bit_identical {}, termination {}, flagged {}",
            self.delta,
            self.amplification,
            self.bit_identical,
            self.termination.name(),
            self.flagged
        );
        s.push_str("t,linf_diff\n");
        for (t, d) in &self.history {
            let _ = writeln!(s, "{t:.16e},{d:.16e}");
        }
        s
    }
}

/// Two parabolic-elliptic runs from `u_init` and `u_init + delta (b - mean b)`
/// with `b` sampled from `bump`.
pub fn stability_twin(base: &Scenario, delta: f64, bump: &Preset) -> Result<TwinReport> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config(format!("delta must be >= 0, got {delta}")));
    }
    let grid = base.build_grid()?;
    let a = base.state_on(&grid, 0.0)?;
    let b = sample_initial(bump, &grid)?.minus_mean();
    let u2 = a.u.combine(1.0, &b, delta)?;
    let v2 = match &base.v_init {
        VInit::Consistent => solve_screened_poisson(&u2, base.stepper.linear_tol)?,
        VInit::Preset(_) => a.v.clone(),
    };
    let twin = PPState::new(u2, v2, 0.0, base.chi)?;
    let mut history = Vec::new();
    let mut identical = true;
    let outcome = lockstep(vec![a, twin], &base.stepper, |ens, _| {
        let d = ens[0].u.sub(&ens[1].u)?.linf();
        identical &= ens[0].u == ens[1].u && ens[0].v == ens[1].v;
        history.push((ens[0].t, d));
        Ok(())
    })?;
    let sup_diff = history.iter().map(|h| h.1).fold(0.0, f64::max);
    let flagged = outcome.termination != Termination::Completed;
    Ok(TwinReport {
        delta,
        amplification: if delta > 0.0 { sup_diff / delta } else { 0.0 },
        sup_diff,
        history,
        bit_identical: identical,
        termination: outcome.termination,
        flagged,
        message: outcome.message,
    })
}

/// One order-of-accuracy fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    /// Mesh width or step size per level, coarsest first.
    pub levels: Vec<f64>,
    pub errors: Vec<f64>,
    /// Order between consecutive levels.
    pub local_orders: Vec<f64>,
    pub order: f64,
    pub valid: bool,
    pub reason: Option<String>,
}

impl OrderStudy {
    fn assess(levels: Vec<f64>, errors: Vec<f64>, local_orders: Vec<f64>, order: f64) -> OrderStudy {
        let reason = if levels.len() < 3 {
            Some("fewer than three levels".to_string())
        } else if levels.windows(2).any(|w| !(w[1] < w[0])) {
            Some("levels are not strictly refining".to_string())
        } else if errors.windows(2).any(|w| !(w[1] < w[0])) {
            Some("error sequence is not decreasing".to_string())
        } else if !order.is_finite() {
            Some("order is not finite".to_string())
        } else {
            None
        };
        OrderStudy { levels, errors, local_orders, order, valid: reason.is_none(), reason }
    }
}

fn check_levels<T: PartialOrd + Copy + std::fmt::Debug>(levels: &[T], refining: impl Fn(T, T) -> bool) -> Result<()> {
    if levels.len() < 3 {
        return Err(Error::Config(format!("need at least three levels, got {levels:?}")));
    }
    if levels.windows(2).any(|w| !refining(w[0], w[1])) {
        return Err(Error::Config(format!("levels must strictly refine: {levels:?}")));
    }
    Ok(())
}

/// Spatial order on the decoupled (`chi = 0`) heat flow of
/// `1 + cos(pi x / Lx)`, against its exact solution. The step is tied to the
/// mesh by `dt = dt_factor h^2` so that both error sources scale alike.
pub fn space_order(lx: f64, ly: f64, cells: &[usize], dt_factor: f64, t_end: f64) -> Result<OrderStudy> {
    check_levels(cells, |a, b| a < b)?;
    let k = std::f64::consts::PI / lx;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for &n in cells {
        let grid = Arc::new(Grid::rectangle(lx, ly, n, n)?);
        let h = grid.hx();
        let steps = (t_end / (dt_factor * h * h)).ceil().max(1.0);
        let dt = t_end / steps;
        let u0 = Field::from_fn(grid.clone(), |x, _| 1.0 + (k * x).cos())?;
        let state = PPState::new(u0.clone(), u0, 0.0, 0.0)?;
        let cfg = StepperConfig { dt_max: dt, t_end, linear_tol: 1e-12, ..Default::default() };
        let res = run_observed(state, &cfg, &DtPolicy::Schedule(vec![dt; steps as usize]), |_, _| Ok(()))?;
        if res.termination != Termination::Completed {
            return Err(Error::Scheme { t: res.final_state.t, message: "heat reference run did not complete".into() });
        }
        let decay = (-k * k * t_end).exp();
        let exact = Field::from_fn(grid, |x, _| 1.0 + decay * (k * x).cos())?;
        hs.push(h);
        errs.push(res.final_state.u.sub(&exact)?.linf());
    }
    let local: Vec<f64> = (0..hs.len() - 1).map(|i| (errs[i] / errs[i + 1]).ln() / (hs[i] / hs[i + 1]).ln()).collect();
    let order = loglog_slope(&hs, &errs);
    Ok(OrderStudy::assess(hs, errs, local, order))
}

/// Temporal order by self-convergence at fixed mesh.
///
/// Each level runs with a constant step. `errors` are distances to a
/// reference run at an eighth of the finest step; the order is estimated
/// from differences of consecutive levels, which do not depend on the
/// reference: `p_i = ln(d_i / d_{i+1}) / ln r` with `d_i = ||u_i - u_{i+1}||_inf`
/// and the common ratio `r` of the levels.
pub fn time_order(base: &Scenario, lambda: f64, dts: &[f64], t_end: f64) -> Result<OrderStudy> {
    check_levels(dts, |a, b| b < a)?;
    let ratio = dts[0] / dts[1];
    if dts.windows(2).any(|w| ((w[0] / w[1]) / ratio - 1.0).abs() > 1e-9) {
        return Err(Error::Config("step levels must form a geometric sequence".into()));
    }
    let grid = base.build_grid()?;
    let start = base.state_on(&grid, lambda)?;
    let finish = |dt: f64| -> Result<Field> {
        let steps = (t_end / dt).round();
        if ((steps * dt) / t_end - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("step {dt} does not divide t_end {t_end}")));
        }
        let cfg = StepperConfig { dt_max: dt, t_end, ..base.stepper.clone() };
        let res = run_observed(start.clone(), &cfg, &DtPolicy::Schedule(vec![dt; steps as usize]), |_, _| Ok(()))?;
        match res.termination {
            Termination::Completed => Ok(res.final_state.u),
            _ => Err(Error::Scheme {
                t: res.final_state.t,
                message: res.message.unwrap_or_else(|| "time level did not complete".into()),
            }),
        }
    };
    let mut all: Vec<f64> = dts.to_vec();
    all.push(dts[dts.len() - 1] / 8.0);
    let finals: Vec<Field> = all.par_iter().map(|&dt| finish(dt)).collect::<Result<_>>()?;
    let reference = finals.last().expect("reference level");
    let errs: Vec<f64> =
        finals[..dts.len()].iter().map(|f| f.sub(reference).map(|d| d.linf())).collect::<Result<_>>()?;
    let diffs: Vec<f64> =
        finals[..dts.len()].windows(2).map(|w| w[0].sub(&w[1]).map(|d| d.linf())).collect::<Result<_>>()?;
    let local: Vec<f64> = diffs.windows(2).map(|w| (w[0] / w[1]).ln() / ratio.ln()).collect();
    let order = if local.is_empty() { f64::NAN } else { local.iter().sum::<f64>() / local.len() as f64 };
    Ok(OrderStudy::assess(dts.to_vec(), errs, local, order))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub space: OrderStudy,
    pub time: OrderStudy,
}

impl RefinementReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (name, st) in [("space", &self.space), ("time", &self.time)] {
            let _ = writeln!(
                s,
                "# {name}: order {:.4}, valid {}{}",
                st.order,
                st.valid,
                st.reason.as_ref().map_or(String::new(), |r| format!(" ({r})"))
            );
        }
        s.push_str("kind,level,error,local_order\n");
        for (name, st) in [("space", &self.space), ("time", &self.time)] {
            for (i, (l, e)) in st.levels.iter().zip(&st.errors).enumerate() {
                let lo = if i == 0 { f64::NAN } else { st.local_orders.get(i - 1).copied().unwrap_or(f64::NAN) };
                let _ = writeln!(s, "{name},{l:.16e},{e:.16e},{lo:.6}");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPlan {
    pub lx: f64,
    pub ly: f64,
    pub space_cells: Vec<usize>,
    pub dt_factor: f64,
    pub space_t_end: f64,
    pub time_lambda: f64,
    pub dt_levels: Vec<f64>,
    pub time_t_end: f64,
}

/// Space and time order studies.
pub fn refinement_study(base: &Scenario, plan: &RefinementPlan) -> Result<RefinementReport> {
    let space = space_order(plan.lx, plan.ly, &plan.space_cells, plan.dt_factor, plan.space_t_end)?;
    let time = time_order(base, plan.time_lambda, &plan.dt_levels, plan.time_t_end)?;
    Ok(RefinementReport { space, time })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDataSeries {
    pub lambda: f64,
    pub times: Vec<f64>,
    pub deviations: Vec<f64>,
    pub termination: Termination,
}

impl SmallDataSeries {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDataReport {
    pub theta: f64,
    pub epsilon: f64,
    /// Factor applied to `u_init` (and to the consistent `v_init`).
    pub scale: f64,
    pub u_init_lp: f64,
    pub grad_v_init_lq: f64,
    pub series: Vec<SmallDataSeries>,
    /// Every series completed and stayed strictly below `epsilon`.
    pub held: bool,
}

impl SmallDataReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# small data: theta {:.6}, epsilon {:e}, scale {:e}, ||u_init||_p {:e}, ||grad v_init||_q {:e}, held {}",
            self.theta, self.epsilon, self.scale, self.u_init_lp, self.grad_v_init_lq, self.held
        );
        s.push_str("lambda,t,deviation\n");
        for ser in &self.series {
            for (t, d) in ser.times.iter().zip(&ser.deviations) {
                let _ = writeln!(s, "{:.16e},{t:.16e},{d:.16e}", ser.lambda);
            }
        }
        s
    }
}

fn grad_lq(v: &Field, q: f64) -> Result<f64> {
    crate::mesh::lp_norm_of(&gradient_faces(v).cell_magnitude(), v.grid().weights(), q)
}

/// Scales the initial data until `||u_init||_p <= epsilon` and
/// `||grad v_init||_q <= epsilon` (never scaling up), then monitors
/// `||u_lambda(t) - e^{t Lap} u_init||_theta` for each `lambda`, with
/// `(p, q, theta)` taken from `witness`.
pub fn small_data_monitor(
    base: &Scenario,
    witness: &ParamWitness,
    epsilon: f64,
    lambdas: &[f64],
) -> Result<SmallDataReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if lambdas.is_empty() {
        return Err(Error::Config("lambda list is empty".into()));
    }
    let (p, q, theta) = (witness.p, witness.q, witness.theta);
    let grid = base.build_grid()?;
    let raw = base.state_on(&grid, 0.0)?;
    let up = raw.u.lp_norm(p)?;
    let gq = grad_lq(&raw.v, q)?;
    let mut scale: f64 = 1.0;
    for norm in [up, gq] {
        if norm > epsilon {
            scale = scale.min(epsilon / norm * (1.0 - 1e-6));
        }
    }
    let u0 = raw.u.scaled(scale);
    let v0 = match &base.v_init {
        VInit::Consistent => solve_screened_poisson(&u0, base.stepper.linear_tol)?,
        VInit::Preset(_) => raw.v.scaled(scale),
    };
    let (u_lp, gv_lq) = (u0.lp_norm(p)?, grad_lq(&v0, q)?);
    if u_lp > epsilon || gv_lq > epsilon {
        return Err(Error::Invariant(format!("scaled data still exceeds epsilon: {u_lp:e}, {gv_lq:e}")));
    }
    let heat_dt = base.stepper.dt_max;
    let series: Vec<SmallDataSeries> = lambdas
        .par_iter()
        .map(|&lambda| {
            let state = PPState::new(u0.clone(), v0.clone(), lambda, base.chi)?;
            let mut heat = HeatMarcher::with_tolerance(u0.clone(), heat_dt, base.stepper.linear_tol)?;
            let (mut times, mut devs) = (Vec::new(), Vec::new());
            let res = run_observed(state, &base.stepper, &DtPolicy::Cfl, |s, _| {
                let h = heat.advance_to(s.t)?;
                times.push(s.t);
                devs.push(semigroup_deviation(&s.u, h, theta)?);
                Ok(())
            })?;
            Ok(SmallDataSeries { lambda, times, deviations: devs, termination: res.termination })
        })
        .collect::<Result<_>>()?;
    let held = series.iter().all(|s| s.termination == Termination::Completed && s.max_deviation() < epsilon);
    Ok(SmallDataReport { theta, epsilon, scale, u_init_lp: u_lp, grad_v_init_lq: gv_lq, series, held })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{param_witness, Selector};
    use std::f64::consts::PI;

    fn scenario(n: usize, mass: f64, t_end: f64) -> Scenario {
        Scenario {
            grid: GridSpec::rectangle(PI, PI, n, n),
            chi: 1.0,
            u_init: Preset::GaussianBump { center: (1.3, 1.7), width: 0.8, target_mass: mass },
            v_init: VInit::Consistent,
            stepper: StepperConfig { t_end, dt_max: 0.05, ..Default::default() },
        }
    }

    #[test]
    fn degenerate_sweep_is_exactly_zero() {
        let sc = scenario(16, 6.0, 0.3);
        let opts = SweepOptions { t0: 0.05, t_end: 0.3, ..Default::default() };
        let r = lambda_sweep(&sc, &[0.0], &opts).unwrap();
        assert!(r.completed());
        assert_eq!(r.err_u_cloc, vec![0.0]);
        assert_eq!(r.err_v_l2w12, vec![0.0]);
        assert_eq!(r.anchor, PpPeError::default());
        assert!(r.floor_u > 0.0 && r.coarse_floor_u.unwrap() > r.floor_u);
    }

    #[test]
    fn small_sweep_decreases_and_is_deterministic() {
        let sc = scenario(16, 0.9 * 4.0 * PI, 0.5);
        let opts = SweepOptions { t0: 0.1, t_end: 0.5, coarse_control: false, ..Default::default() };
        let lambdas = [0.2, 0.1, 0.05];
        let r = lambda_sweep(&sc, &lambdas, &opts).unwrap();
        assert!(r.completed() && r.monotone_u && r.monotone_v, "{r:?}");
        assert!(r.err_u_cloc.windows(2).all(|w| w[1] < w[0]));
        assert!(r.lyapunov.iter().all(|t| t.is_monotone(1e-6)));
        let again = lambda_sweep(&sc, &lambdas, &opts).unwrap();
        assert_eq!(r, again);
        assert!(r.to_csv().starts_with("# lambda sweep"));
    }

    #[test]
    fn sweep_rejects_bad_lambdas() {
        let sc = scenario(16, 6.0, 0.3);
        let opts = SweepOptions::default();
        assert!(lambda_sweep(&sc, &[0.1, 0.2], &opts).is_err());
        assert!(lambda_sweep(&sc, &[2.0, 0.1], &opts).is_err());
        assert!(lambda_sweep(&sc, &[], &opts).is_err());
    }

    #[test]
    fn twin_with_zero_delta_is_identical() {
        let sc = scenario(16, 6.0, 0.3);
        let bump = Preset::GaussianBump { center: (2.0, 1.0), width: 0.5, target_mass: 1.0 };
        let r = stability_twin(&sc, 0.0, &bump).unwrap();
        assert!(r.bit_identical && r.sup_diff == 0.0 && !r.flagged);
        let r = stability_twin(&sc, 1e-6, &bump).unwrap();
        assert!(!r.bit_identical && r.amplification > 0.0 && r.amplification < 1e3);
    }

    #[test]
    fn space_order_of_heat_mode() {
        let st = space_order(PI, PI, &[16, 32, 64], 0.5, 0.25).unwrap();
        assert!(st.valid, "{st:?}");
        assert!((st.order - 2.0).abs() < 0.1, "{st:?}");
        assert!(space_order(PI, PI, &[16, 16, 32], 0.5, 0.25).is_err());
        assert!(space_order(PI, PI, &[16, 32], 0.5, 0.25).is_err());
    }

    #[test]
    fn order_study_flags_non_monotone_errors() {
        let st = OrderStudy::assess(vec![0.4, 0.2, 0.1], vec![1.0, 2.0, 0.5], vec![], 1.0);
        assert!(!st.valid);
        let st = OrderStudy::assess(vec![0.4, 0.4, 0.1], vec![1.0, 0.5, 0.25], vec![], 1.0);
        assert!(!st.valid);
    }

    #[test]
    fn time_order_is_one() {
        let mut sc = scenario(16, 0.0, 0.4);
        sc.u_init = Preset::CosinePerturbed { base: 1.0, amplitude: 0.1, mode: (1, 1) };
        let st = time_order(&sc, 0.1, &[0.04, 0.02, 0.01], 0.4).unwrap();
        assert!(st.valid, "{st:?}");
        assert!((st.order - 1.0).abs() < 0.2, "{st:?}");
        assert!(time_order(&sc, 0.1, &[0.04, 0.02, 0.005], 0.4).is_err());
    }

    #[test]
    fn scan_classifies_and_brackets() {
        // masses far apart on a coarse disk so that the test stays quick
        let sc = Scenario {
            grid: GridSpec::radial_disk(1.0, 64),
            chi: 1.0,
            u_init: Preset::RadialGaussian { width: 0.1, target_mass: 1.0 },
            v_init: VInit::Consistent,
            stepper: StepperConfig { t_end: 0.5, blowup_linf_factor: 5.0, ..Default::default() },
        };
        let m = 8.0 * PI;
        let r = blowup_scan(&sc, 0.0, &[0.3 * m, 2.0 * m], &ScanOptions::default()).unwrap();
        assert_eq!(r.classification_of(0.3 * m), Some(Classification::Bounded), "{r:?}");
        assert_eq!(r.classification_of(2.0 * m), Some(Classification::BlowupSuspected), "{r:?}");
        assert_eq!(r.bracket, Some((0.3 * m, 2.0 * m)));
        assert!(!r.inversion);
        assert!(blowup_scan(&sc, 0.0, &[2.0, 1.0], &ScanOptions::default()).is_err());
    }

    #[test]
    fn small_data_barrier_and_decoupled_case() {
        let mut sc = scenario(16, 4.0, 0.5);
        let w = param_witness(3, 2.0, 4.0, Selector::Midpoint).unwrap();
        let r = small_data_monitor(&sc, &w, 0.1, &[0.1, 0.01]).unwrap();
        assert!(r.held && r.scale < 1.0);
        for s in &r.series {
            assert_eq!(s.deviations[0], 0.0);
        }
        sc.chi = 0.0;
        let r = small_data_monitor(&sc, &w, 1e-3, &[0.1]).unwrap();
        assert!(r.series[0].max_deviation() <= 1e-12, "{}", r.series[0].max_deviation());
    }

    #[test]
    fn lockstep_members_share_schedule() {
        let sc = scenario(16, 6.0, 0.2);
        let g = sc.build_grid().unwrap();
        let states = vec![sc.state_on(&g, 0.0).unwrap(), sc.state_on(&g, 0.5).unwrap()];
        let mut seen = Vec::new();
        let out = lockstep(states, &sc.stepper, |ens, _| {
            assert_eq!(ens[0].t, ens[1].t);
            seen.push(ens[0].t);
            Ok(())
        })
        .unwrap();
        assert_eq!(out.termination, Termination::Completed);
        assert_eq!(seen.len(), out.schedule.len() + 1);
        assert!((out.states[0].t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn slope_helper() {
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 12.0, 48.0];
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_nan());
        assert!(is_monotone_decreasing(&[1.0, 1.04, 0.5], 0.05));
        assert!(!is_monotone_decreasing(&[1.0, 1.06], 0.05));
    }
}
