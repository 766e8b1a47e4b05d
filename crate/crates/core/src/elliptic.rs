//! The screened Poisson solve `(I - Lap_h) v = u` of the parabolic-elliptic
//! system and the backward-Euler Neumann heat propagator approximating
//! `e^{t Lap}`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Field, Grid};
use crate::operators::{solve_spd_into, CgWorkspace, ScreenedOperator, SolveStats, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Solves `(I - Lap_h) v = u` starting from `v = u`.
pub fn solve_screened_poisson(u: &Field, tol: f64) -> Result<Field> {
    let mut v = u.values().to_vec();
    let mut ws = CgWorkspace::new();
    screened_poisson_into(u, &mut v, tol, DEFAULT_MAX_ITER, &mut ws)?;
    Ok(Field::from_raw(u.grid_arc().clone(), v))
}

/// Screened Poisson solve with a caller-supplied initial guess in `v`.
pub fn screened_poisson_into(
    u: &Field,
    v: &mut [f64],
    tol: f64,
    max_iter: usize,
    ws: &mut CgWorkspace,
) -> Result<SolveStats> {
    let op = ScreenedOperator::new(u.grid_arc().clone(), 1.0)?;
    solve_spd_into(&op, u.values(), v, tol, max_iter, ws)
}

/// One backward-Euler diffusion step `(I - dt Lap_h) x = rhs`; `x` holds the
/// initial guess on entry.
pub(crate) fn implicit_diffusion_into(
    grid: &Arc<Grid>,
    rhs: &[f64],
    x: &mut [f64],
    dt: f64,
    tol: f64,
    max_iter: usize,
    ws: &mut CgWorkspace,
) -> Result<SolveStats> {
    let op = ScreenedOperator::with_diffusivity(grid.clone(), 1.0, dt)?;
    solve_spd_into(&op, rhs, x, tol, max_iter, ws)
}

/// Backward-Euler march of `f_t = Lap_h f` on the time lattice `k dt`.
///
/// Each call to [`HeatMarcher::advance_to`] walks the lattice and shortens the
/// last step so that it lands exactly on the target. Marching to `t` in one
/// call therefore takes `ceil(t / dt)` steps.
#[derive(Debug, Clone)]
pub struct HeatMarcher {
    state: Field,
    t: f64,
    dt: f64,
    lattice_index: u64,
    tol: f64,
    max_iter: usize,
    ws: CgWorkspace,
    scratch: Vec<f64>,
}

impl HeatMarcher {
    pub fn new(f0: Field, dt: f64) -> Result<Self> {
        Self::with_tolerance(f0, dt, DEFAULT_TOL)
    }

    pub fn with_tolerance(f0: Field, dt: f64, tol: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("heat step must be positive, got {dt}")));
        }
        let n = f0.values().len();
        Ok(HeatMarcher {
            state: f0,
            t: 0.0,
            dt,
            lattice_index: 0,
            tol,
            max_iter: DEFAULT_MAX_ITER,
            ws: CgWorkspace::new(),
            scratch: vec![0.0; n],
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &Field {
        &self.state
    }

    pub fn into_state(self) -> Field {
        self.state
    }

    pub fn advance_to(&mut self, target: f64) -> Result<&Field> {
        if !(target.is_finite()) || target < self.t {
            return Err(Error::Config(format!("cannot march backwards from t = {} to {target}", self.t)));
        }
        let snap = 1e-9 * self.dt;
        while self.t < target {
            let next = (self.lattice_index + 1) as f64 * self.dt;
            let (end, on_lattice) =
                if next >= target - snap { (target, (next - target).abs() <= snap) } else { (next, true) };
            let h = end - self.t;
            self.step(h)?;
            self.t = end;
            if on_lattice {
                self.lattice_index += 1;
            }
        }
        Ok(&self.state)
    }

    fn step(&mut self, h: f64) -> Result<()> {
        let grid = self.state.grid_arc().clone();
        self.scratch.copy_from_slice(self.state.values());
        let rhs = std::mem::take(&mut self.scratch);
        let result =
            implicit_diffusion_into(&grid, &rhs, self.state.values_mut(), h, self.tol, self.max_iter, &mut self.ws);
        self.scratch = rhs;
        result.map(|_| ())
    }
}

/// Approximates `e^{t Lap} f0` with `ceil(t / dt)` backward-Euler steps.
pub fn heat_propagate(f0: &Field, t: f64, dt: f64) -> Result<Field> {
    heat_propagate_with_tol(f0, t, dt, DEFAULT_TOL)
}

pub fn heat_propagate_with_tol(f0: &Field, t: f64, dt: f64, tol: f64) -> Result<Field> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Config(format!("propagation time must be >= 0, got {t}")));
    }
    let mut m = HeatMarcher::with_tolerance(f0.clone(), dt, tol)?;
    m.advance_to(t)?;
    Ok(m.into_state())
}

/// Snapshots of `e^{t Lap} u_init` at every time of an increasing grid,
/// computed by one continuous march. When the grid times are multiples of
/// `dt` each snapshot is bit-identical to [`heat_propagate`] at that time.
pub fn semigroup_cache(u_init: &Field, t_grid: &[f64], dt: f64) -> Result<Vec<Field>> {
    if t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("semigroup cache times must be strictly increasing".into()));
    }
    let mut m = HeatMarcher::new(u_init.clone(), dt)?;
    t_grid.iter().map(|&t| m.advance_to(t).cloned()).collect()
}
