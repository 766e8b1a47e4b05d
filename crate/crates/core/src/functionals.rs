//! Scalar observables tracked along trajectories: norms, the Lyapunov
//! functional and its dissipation balance, the distance to the heat flow, and
//! the parabolic-parabolic vs. parabolic-elliptic error accumulators.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{compensated_sum, lp_norm_of, Field};
use crate::operators::{gradient_faces, FaceVector};

/// Relative threshold below which `u` is treated as zero in `log u` terms.
pub const U_FLOOR_REL: f64 = 1e-14;
/// Relative negativity tolerated before `u log u` is rejected.
pub const NEGATIVITY_TOL: f64 = 1e-12;

/// Exponents of the norms reported in each diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsSpec {
    /// Exponent of the extra `L^theta` norm of `u`.
    pub theta: f64,
    /// Exponent of the `W^{1,q}` norm of `v`.
    pub q: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec { theta: 3.0, q: 4.0 }
    }
}

/// One row of per-step observables.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub linf_u: f64,
    pub l2_u: f64,
    pub lp_u: f64,
    pub w1q_v: f64,
    pub lyapunov: f64,
    pub dissipation_residual: Option<f64>,
    pub semigroup_deviation: Option<f64>,
    pub dt_used: f64,
}

impl DiagnosticsRecord {
    /// Evaluates every observable of `(u, v)` at time `t`.
    pub fn measure(u: &Field, v: &Field, chi: f64, t: f64, dt_used: f64, spec: &DiagnosticsSpec) -> Result<Self> {
        Ok(DiagnosticsRecord {
            t,
            mass: u.integrate(),
            linf_u: u.linf(),
            l2_u: u.lp_norm(2.0)?,
            lp_u: u.lp_norm(spec.theta)?,
            w1q_v: w1q_norm(v, spec.q)?,
            lyapunov: lyapunov(u, v, chi)?,
            dissipation_residual: None,
            semigroup_deviation: None,
            dt_used,
        })
    }

    /// Header comment followed by the column row. Absent optional values are
    /// written as `nan`.
    pub fn csv_header(spec: &DiagnosticsSpec) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# columns: t, mass = int u, linf_u, l2_u, lp_u = ||u||_{{{}}}, w1q_v = ||v||_{{W^1,{}}}, lyapunov, dissipation_residual, semigroup_deviation, dt_used",
            spec.theta, spec.q
        );
        s.push_str("t,mass,linf_u,l2_u,lp_u,w1q_v,lyapunov,dissipation_residual,semigroup_deviation,dt_used\n");
        s
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}"));
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
            self.t,
            self.mass,
            self.linf_u,
            self.l2_u,
            self.lp_u,
            self.w1q_v,
            self.lyapunov,
            opt(self.dissipation_residual),
            opt(self.semigroup_deviation),
            self.dt_used
        )
    }
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn check_nonnegative(u: &Field) -> Result<()> {
    let tol = NEGATIVITY_TOL * u.linf();
    let min = u.min();
    if min < -tol {
        Err(Error::Domain(format!("density has negative value {min:e}")))
    } else {
        Ok(())
    }
}

fn face_energy(grad: &FaceVector) -> f64 {
    let (wx, wy) = FaceVector::face_weights(grad.grid());
    compensated_sum(grad.x.iter().zip(&wx).chain(grad.y.iter().zip(&wy)).map(|(g, w)| g * g * w))
}

/// Discrete `int (u log u - chi u v + chi/2 (|grad v|^2 + v^2))`, with the
/// gradient term integrated over faces.
pub fn lyapunov(u: &Field, v: &Field, chi: f64) -> Result<f64> {
    u.check_same_grid(v)?;
    check_nonnegative(u)?;
    let w = u.grid().weights();
    let cells = compensated_sum(
        u.values()
            .iter()
            .zip(v.values())
            .zip(w)
            .map(|((&ui, &vi), &wi)| (xlogx(ui) - chi * ui * vi + 0.5 * chi * vi * vi) * wi),
    );
    Ok(cells + 0.5 * chi * face_energy(&gradient_faces(v)))
}

fn log_mean(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() <= 1e-12 * a.max(b) {
        0.5 * (a + b)
    } else {
        d / (a.ln() - b.ln())
    }
}

/// Discrete `int u |grad(log u - chi v)|^2`, with `u` on faces taken as the
/// logarithmic mean of its neighbours so that `u grad log u = grad u`.
/// Faces touching a cell with `u <= 1e-14 ||u||_inf` contribute nothing.
pub fn dissipation(u: &Field, v: &Field, chi: f64) -> Result<f64> {
    u.check_same_grid(v)?;
    check_nonnegative(u)?;
    let floor = U_FLOOR_REL * u.linf();
    let g = u.grid();
    let (uv, vv) = (u.values(), v.values());
    let (wx, wy) = FaceVector::face_weights(g);
    let mut terms = Vec::with_capacity(wx.len() + wy.len());
    let mut face = |a: usize, b: usize, h: f64, w: f64| {
        let (ua, ub) = (uv[a], uv[b]);
        if ua <= floor || ub <= floor {
            return;
        }
        let d = ((ub.ln() - ua.ln()) - chi * (vv[b] - vv[a])) / h;
        terms.push(log_mean(ua, ub) * d * d * w);
    };
    match g.geometry() {
        crate::mesh::Geometry::Rectangle => {
            let (nx, ny) = (g.nx(), g.ny());
            for j in 0..ny {
                for i in 0..nx - 1 {
                    face(i + nx * j, i + 1 + nx * j, g.hx(), wx[i + (nx - 1) * j]);
                }
            }
            for j in 0..ny - 1 {
                for i in 0..nx {
                    face(i + nx * j, i + nx * (j + 1), g.hy(), wy[i + nx * j]);
                }
            }
        }
        crate::mesh::Geometry::RadialDisk => {
            for i in 0..g.nx() - 1 {
                face(i, i + 1, g.hx(), wx[i]);
            }
        }
    }
    Ok(compensated_sum(terms))
}

/// A stored trajectory point.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

/// `|dW/dt + chi lambda ||v_t||_2^2 + int u |grad(log u - chi v)|^2|` at the
/// middle of three equally spaced snapshots. Time derivatives are centered
/// differences of the stored states.
pub fn dissipation_residual(window: [&Snapshot; 3], chi: f64, lambda: f64) -> Result<f64> {
    let [a, b, c] = window;
    let (h1, h2) = (b.t - a.t, c.t - b.t);
    if !(h1 > 0.0 && h2 > 0.0) || (h1 - h2).abs() > 1e-9 * (h1 + h2) {
        return Err(Error::Config(format!(
            "dissipation residual needs uniformly spaced samples, got steps {h1:e} and {h2:e}"
        )));
    }
    let span = c.t - a.t;
    let dw = (lyapunov(&c.u, &c.v, chi)? - lyapunov(&a.u, &a.v, chi)?) / span;
    let vt = c.v.sub(&a.v)?.scaled(1.0 / span);
    let vt2 = vt.lp_norm(2.0)?.powi(2);
    let d = dissipation(&b.u, &b.v, chi)?;
    Ok((dw + chi * lambda * vt2 + d).abs())
}

/// `||u_t - heat_snapshot||_theta`.
pub fn semigroup_deviation(u_t: &Field, heat_snapshot: &Field, theta: f64) -> Result<f64> {
    if !(theta >= 1.0) {
        return Err(Error::Domain(format!("theta must be >= 1, got {theta}")));
    }
    u_t.sub(heat_snapshot)?.lp_norm(theta)
}

/// `(||v||_q^q + || |grad v| ||_q^q)^(1/q)` with face gradients averaged to cells.
pub fn w1q_norm(v: &Field, q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::Domain(format!("W^(1,q) norm requires q >= 1, got {q}")));
    }
    let grad = gradient_faces(v).cell_magnitude();
    let w = v.grid().weights();
    let nv = v.lp_norm(q)?;
    let ng = lp_norm_of(&grad, w, q)?;
    if q.is_infinite() {
        return Ok(nv.max(ng));
    }
    if nv == 0.0 && ng == 0.0 {
        return Ok(0.0);
    }
    // (a^q + b^q)^(1/q) without overflow
    let m = nv.max(ng);
    Ok(m * ((nv / m).powf(q) + (ng / m).powf(q)).powf(1.0 / q))
}

/// Result of comparing a parabolic-parabolic trajectory with the
/// parabolic-elliptic one.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpPeError {
    /// `sup_t ||u_lambda - u||_inf` over `[0, t_end]`.
    pub sup_linf_u: f64,
    /// `int_{t0}^{t_end} ||v_lambda - v||_{W^{1,2}}^2 dt` by the trapezoid rule.
    pub int_l2_w12_v: f64,
}

/// Streaming accumulator of [`PpPeError`] over synchronized samples.
#[derive(Debug, Clone)]
pub struct PpPeErrorAccumulator {
    t0: f64,
    t_end: f64,
    last: Option<(f64, f64)>,
    acc: PpPeError,
}

impl PpPeErrorAccumulator {
    pub fn new(t0: f64, t_end: f64) -> Result<Self> {
        if !(t0 >= 0.0 && t_end > t0) {
            return Err(Error::Config(format!("need 0 <= t0 < t_end, got t0 = {t0}, t_end = {t_end}")));
        }
        Ok(PpPeErrorAccumulator { t0, t_end, last: None, acc: PpPeError::default() })
    }

    /// Adds one pair of synchronized states.
    pub fn push(&mut self, t_a: f64, u_a: &Field, v_a: &Field, t_b: f64, u_b: &Field, v_b: &Field) -> Result<()> {
        if (t_a - t_b).abs() > 1e-12 * t_a.abs().max(1.0) {
            return Err(Error::Structure(format!("timestamps differ: {t_a} vs {t_b}")));
        }
        let t = t_a;
        if let Some((tp, _)) = self.last {
            if t <= tp {
                return Err(Error::Structure(format!("timestamps must increase: {tp} then {t}")));
            }
        }
        if t <= self.t_end * (1.0 + 1e-12) {
            self.acc.sup_linf_u = self.acc.sup_linf_u.max(u_a.sub(u_b)?.linf());
        }
        let e = w1q_norm(&v_a.sub(v_b)?, 2.0)?.powi(2);
        if let Some((tp, ep)) = self.last {
            // integrand is linear between samples; clip the segment to [t0, t_end]
            let lo = tp.max(self.t0);
            let hi = t.min(self.t_end);
            if hi > lo {
                let at = |s: f64| ep + (e - ep) * (s - tp) / (t - tp);
                self.acc.int_l2_w12_v += 0.5 * (at(lo) + at(hi)) * (hi - lo);
            }
        }
        self.last = Some((t, e));
        Ok(())
    }

    pub fn finish(&self) -> PpPeError {
        self.acc
    }
}

/// One-shot [`PpPeError`] over two stored trajectories.
pub fn pp_pe_error(pp: &[Snapshot], pe: &[Snapshot], t0: f64, t_end: f64) -> Result<PpPeError> {
    if pp.len() != pe.len() {
        return Err(Error::Structure(format!("trajectories have {} and {} samples", pp.len(), pe.len())));
    }
    let mut acc = PpPeErrorAccumulator::new(t0, t_end)?;
    for (a, b) in pp.iter().zip(pe) {
        acc.push(a.t, &a.u, &a.v, b.t, &b.u, &b.v)?;
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::solve_screened_poisson;
    use crate::mesh::Grid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::rectangle(PI, PI, n, n).unwrap())
    }

    #[test]
    fn lyapunov_of_simple_states() {
        let g = square(32);
        let z = Field::zeros(g.clone());
        assert_eq!(lyapunov(&z, &z, 1.0).unwrap(), 0.0);
        let one = Field::constant(g, 1.0);
        let w = lyapunov(&one, &one, 2.0).unwrap();
        assert!((w + PI * PI).abs() < 1e-12, "{w}");
    }

    // Simpson quadrature of the continuum functional with the analytic signal
    // v = 1 + cos(x)/4, independent of the grid machinery.
    fn lyapunov_oracle() -> f64 {
        let n = 20_000;
        let h = PI / n as f64;
        let f = |x: f64| {
            let u = 1.0 + 0.5 * x.cos();
            let v = 1.0 + 0.25 * x.cos();
            let vx = -0.25 * x.sin();
            u * u.ln() - u * v + 0.5 * (vx * vx + v * v)
        };
        let mut s = f(0.0) + f(PI);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 * PI
    }

    #[test]
    fn lyapunov_matches_fine_quadrature() {
        let g = square(128);
        let u = Field::from_fn(g, |x, _| 1.0 + 0.5 * x.cos()).unwrap();
        let v = solve_screened_poisson(&u, 1e-12).unwrap();
        let w = lyapunov(&u, &v, 1.0).unwrap();
        let oracle = lyapunov_oracle();
        assert!(((w - oracle) / oracle).abs() < 1e-4, "{w} vs {oracle}");
    }

    #[test]
    fn lyapunov_rejects_negative_density() {
        let g = square(8);
        let mut u = Field::constant(g.clone(), 1.0);
        u.values_mut()[5] = -0.1;
        assert!(matches!(lyapunov(&u, &Field::zeros(g), 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn residual_vanishes_on_stationary_state() {
        let g = square(16);
        let c = Field::constant(g, 1.3);
        let snaps: Vec<Snapshot> = (0..3).map(|k| Snapshot { t: k as f64 * 0.1, u: c.clone(), v: c.clone() }).collect();
        let r = dissipation_residual([&snaps[0], &snaps[1], &snaps[2]], 1.0, 0.5).unwrap();
        assert!(r <= 1e-12);
        let bad = Snapshot { t: 0.35, u: c.clone(), v: c.clone() };
        assert!(dissipation_residual([&snaps[0], &snaps[1], &bad], 1.0, 0.5).is_err());
    }

    #[test]
    fn w1q_norms() {
        let g = square(32);
        let c = Field::constant(g, 3.0);
        assert!((w1q_norm(&c, 2.0).unwrap() - 3.0 * PI).abs() < 1e-12);

        let unit = Arc::new(Grid::rectangle(1.0, 1.0, 64, 64).unwrap());
        let x = Field::from_fn(unit, |x, _| x).unwrap();
        let n = w1q_norm(&x, 2.0).unwrap();
        assert!((n - (4.0f64 / 3.0).sqrt()).abs() < 2e-2, "{n}");
        assert!(n >= x.lp_norm(2.0).unwrap());
        assert!(w1q_norm(&x, 0.5).is_err());
    }

    #[test]
    fn deviation_is_a_norm_of_the_difference() {
        let g = square(16);
        let a = Field::from_fn(g.clone(), |x, y| x * y).unwrap();
        let b = Field::from_fn(g, |x, _| x.cos()).unwrap();
        assert_eq!(semigroup_deviation(&a, &a, 3.0).unwrap(), 0.0);
        let d1 = semigroup_deviation(&a, &b, 3.0).unwrap();
        let d2 = semigroup_deviation(&b, &a, 3.0).unwrap();
        assert!(d1 > 0.0 && (d1 - d2).abs() <= 1e-15 * d1);
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let g = square(8);
        let snaps: Vec<Snapshot> = (0..5)
            .map(|k| {
                let f = Field::constant(g.clone(), 1.0 + k as f64);
                Snapshot { t: 0.1 * k as f64, u: f.clone(), v: f }
            })
            .collect();
        let e = pp_pe_error(&snaps, &snaps, 0.1, 0.4).unwrap();
        assert_eq!(e, PpPeError::default());
        let mut shifted = snaps.clone();
        shifted[2].t += 1e-3;
        assert!(pp_pe_error(&snaps, &shifted, 0.1, 0.4).is_err());
    }

    #[test]
    fn trapezoid_accumulates_over_window() {
        let g = Arc::new(Grid::rectangle(1.0, 1.0, 8, 8).unwrap());
        let zero = Field::zeros(g.clone());
        let one = Field::constant(g, 1.0);
        // constant unit difference in v: integrand 1, window [0.25, 1.0]
        let mut acc = PpPeErrorAccumulator::new(0.25, 1.0).unwrap();
        for k in 0..=4 {
            let t = 0.5 * k as f64;
            acc.push(t, &zero, &one, t, &zero, &zero).unwrap();
        }
        assert!((acc.finish().int_l2_w12_v - 0.75).abs() < 1e-12);
    }
}
