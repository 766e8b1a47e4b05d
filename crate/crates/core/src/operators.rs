//! Finite-volume operators with homogeneous Neumann boundaries and a
//! Jacobi-preconditioned conjugate gradient solver for `sigma I - kappa Lap`.
//!
//! The Laplacian is the composition of [`divergence`] and [`gradient_faces`];
//! the fused stencil used inside the solver performs the same floating-point
//! operations in the same order, so the two agree bit for bit.
//!
//! On a disk the operators act on radial functions, `(1/r)(r f_r)_r`, with a
//! zero-flux face at the axis. Every operator is self-adjoint in the weighted
//! inner product `<a, b> = sum w_i a_i b_i`, and conjugate gradient works in
//! that inner product.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Field, Geometry, Grid};

/// Default relative residual for linear solves.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap for conjugate gradient.
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Normal components on interior faces. Boundary faces carry no entry and
/// are identically zero.
///
/// Rectangle: `x[i + (nx-1) j]` sits between cells `(i, j)` and `(i+1, j)`,
/// `y[i + nx j]` between `(i, j)` and `(i, j+1)`. Disk: `x[i]` sits at radius
/// `(i+1) h` and `y` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVector {
    grid: Arc<Grid>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn face_counts(grid: &Grid) -> (usize, usize) {
    match grid.geometry() {
        Geometry::Rectangle => ((grid.nx() - 1) * grid.ny(), grid.nx() * (grid.ny() - 1)),
        Geometry::RadialDisk => (grid.nx() - 1, 0),
    }
}

impl FaceVector {
    pub fn zeros(grid: Arc<Grid>) -> FaceVector {
        let (nxf, nyf) = face_counts(&grid);
        FaceVector { grid, x: vec![0.0; nxf], y: vec![0.0; nyf] }
    }

    pub fn new(grid: Arc<Grid>, x: Vec<f64>, y: Vec<f64>) -> Result<FaceVector> {
        let (nxf, nyf) = face_counts(&grid);
        if x.len() != nxf || y.len() != nyf {
            return Err(Error::Structure(format!(
                "face vector has {}+{} entries, grid expects {nxf}+{nyf}",
                x.len(),
                y.len()
            )));
        }
        Ok(FaceVector { grid, x, y })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Largest face value in magnitude.
    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Quadrature weight attached to each interior face: the dual volume
    /// `hx hy` on rectangles and `2 pi r_face h` on disks.
    pub fn face_weights(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
        let (nxf, nyf) = face_counts(grid);
        match grid.geometry() {
            Geometry::Rectangle => {
                let w = grid.hx() * grid.hy();
                (vec![w; nxf], vec![w; nyf])
            }
            Geometry::RadialDisk => {
                let h = grid.hx();
                let fr = grid.face_radii();
                ((0..nxf).map(|i| 2.0 * std::f64::consts::PI * fr[i + 1] * h).collect(), Vec::new())
            }
        }
    }

    /// Face values averaged to cells and combined into a magnitude per cell.
    /// A boundary face contributes zero to the average.
    pub fn cell_magnitude(&self) -> Vec<f64> {
        let g = &*self.grid;
        match g.geometry() {
            Geometry::Rectangle => {
                let (nx, ny) = (g.nx(), g.ny());
                let mut out = Vec::with_capacity(nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        let w = if i > 0 { self.x[i - 1 + (nx - 1) * j] } else { 0.0 };
                        let e = if i + 1 < nx { self.x[i + (nx - 1) * j] } else { 0.0 };
                        let s = if j > 0 { self.y[i + nx * (j - 1)] } else { 0.0 };
                        let n = if j + 1 < ny { self.y[i + nx * j] } else { 0.0 };
                        let gx = 0.5 * (w + e);
                        let gy = 0.5 * (s + n);
                        out.push(gx.hypot(gy));
                    }
                }
                out
            }
            Geometry::RadialDisk => {
                let nr = g.nx();
                (0..nr)
                    .map(|i| {
                        let w = if i > 0 { self.x[i - 1] } else { 0.0 };
                        let e = if i + 1 < nr { self.x[i] } else { 0.0 };
                        (0.5 * (w + e)).abs()
                    })
                    .collect()
            }
        }
    }
}

/// Centered two-point differences on interior faces.
pub fn gradient_faces(f: &Field) -> FaceVector {
    let g = f.grid();
    let v = f.values();
    let mut out = FaceVector::zeros(f.grid_arc().clone());
    match g.geometry() {
        Geometry::Rectangle => {
            let (nx, ny) = (g.nx(), g.ny());
            let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
            for j in 0..ny {
                for i in 0..nx - 1 {
                    let c = i + nx * j;
                    out.x[i + (nx - 1) * j] = (v[c + 1] - v[c]) * ihx;
                }
            }
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let c = i + nx * j;
                    out.y[c] = (v[c + nx] - v[c]) * ihy;
                }
            }
        }
        Geometry::RadialDisk => {
            let ih = 1.0 / g.hx();
            for i in 0..g.nx() - 1 {
                out.x[i] = (v[i + 1] - v[i]) * ih;
            }
        }
    }
    out
}

/// Conservative divergence of a face flux with zero flux through the boundary.
pub fn divergence(flux: &FaceVector) -> Result<Field> {
    let grid = flux.grid.clone();
    let (nxf, nyf) = face_counts(&grid);
    if flux.x.len() != nxf || flux.y.len() != nyf {
        return Err(Error::Structure("face vector does not match its grid".into()));
    }
    let mut out = vec![0.0; grid.len()];
    divergence_into(&grid, &flux.x, &flux.y, &mut out);
    Ok(Field::from_raw(grid, out))
}

pub(crate) fn divergence_into(g: &Grid, fx: &[f64], fy: &[f64], out: &mut [f64]) {
    match g.geometry() {
        Geometry::Rectangle => {
            let (nx, ny) = (g.nx(), g.ny());
            let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
            for j in 0..ny {
                for i in 0..nx {
                    let w = if i > 0 { fx[i - 1 + (nx - 1) * j] } else { 0.0 };
                    let e = if i + 1 < nx { fx[i + (nx - 1) * j] } else { 0.0 };
                    let s = if j > 0 { fy[i + nx * (j - 1)] } else { 0.0 };
                    let n = if j + 1 < ny { fy[i + nx * j] } else { 0.0 };
                    out[i + nx * j] = (e - w) * ihx + (n - s) * ihy;
                }
            }
        }
        Geometry::RadialDisk => {
            let nr = g.nx();
            let h = g.hx();
            let (r, fr) = (g.radii(), g.face_radii());
            for i in 0..nr {
                let w = if i > 0 { fx[i - 1] } else { 0.0 };
                let e = if i + 1 < nr { fx[i] } else { 0.0 };
                out[i] = (fr[i + 1] * e - fr[i] * w) * (1.0 / (r[i] * h));
            }
        }
    }
}

/// Fused `divergence(gradient_faces(f))`, same arithmetic, no face storage.
fn laplacian_into(g: &Grid, v: &[f64], out: &mut [f64]) {
    match g.geometry() {
        Geometry::Rectangle => {
            let (nx, ny) = (g.nx(), g.ny());
            let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
            for j in 0..ny {
                let row = nx * j;
                for i in 0..nx {
                    let c = row + i;
                    let vc = v[c];
                    let w = if i > 0 { (vc - v[c - 1]) * ihx } else { 0.0 };
                    let e = if i + 1 < nx { (v[c + 1] - vc) * ihx } else { 0.0 };
                    let s = if j > 0 { (vc - v[c - nx]) * ihy } else { 0.0 };
                    let n = if j + 1 < ny { (v[c + nx] - vc) * ihy } else { 0.0 };
                    out[c] = (e - w) * ihx + (n - s) * ihy;
                }
            }
        }
        Geometry::RadialDisk => {
            let nr = g.nx();
            let h = g.hx();
            let ih = 1.0 / h;
            let (r, fr) = (g.radii(), g.face_radii());
            for i in 0..nr {
                let w = if i > 0 { (v[i] - v[i - 1]) * ih } else { 0.0 };
                let e = if i + 1 < nr { (v[i + 1] - v[i]) * ih } else { 0.0 };
                out[i] = (fr[i + 1] * e - fr[i] * w) * (1.0 / (r[i] * h));
            }
        }
    }
}

/// Five-point (or conservative radial) Neumann Laplacian.
pub fn laplacian_neumann(f: &Field) -> Field {
    let mut out = vec![0.0; f.values().len()];
    laplacian_into(f.grid(), f.values(), &mut out);
    Field::from_raw(f.grid_arc().clone(), out)
}

/// The operator `sigma I - kappa Lap_h`.
///
/// `kappa = 1` is the screened Poisson operator; implicit diffusion over a
/// step `dt` uses `sigma = 1, kappa = dt`.
#[derive(Debug, Clone)]
pub struct ScreenedOperator {
    grid: Arc<Grid>,
    sigma: f64,
    kappa: f64,
    diagonal: Vec<f64>,
}

impl ScreenedOperator {
    pub fn new(grid: Arc<Grid>, sigma: f64) -> Result<Self> {
        Self::with_diffusivity(grid, sigma, 1.0)
    }

    pub fn with_diffusivity(grid: Arc<Grid>, sigma: f64, kappa: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain(format!("screening coefficient must be >= 0, got {sigma}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Domain(format!("diffusivity must be > 0, got {kappa}")));
        }
        let diagonal = Self::build_diagonal(&grid, sigma, kappa);
        Ok(ScreenedOperator { grid, sigma, kappa, diagonal })
    }

    fn build_diagonal(g: &Grid, sigma: f64, kappa: f64) -> Vec<f64> {
        match g.geometry() {
            Geometry::Rectangle => {
                let (nx, ny) = (g.nx(), g.ny());
                let (ihx2, ihy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
                let mut d = Vec::with_capacity(nx * ny);
                for j in 0..ny {
                    for i in 0..nx {
                        let cx = (i > 0) as u8 + (i + 1 < nx) as u8;
                        let cy = (j > 0) as u8 + (j + 1 < ny) as u8;
                        d.push(sigma + kappa * (cx as f64 * ihx2 + cy as f64 * ihy2));
                    }
                }
                d
            }
            Geometry::RadialDisk => {
                let nr = g.nx();
                let h = g.hx();
                let (r, fr) = (g.radii(), g.face_radii());
                (0..nr)
                    .map(|i| {
                        let mut s = 0.0;
                        if i > 0 {
                            s += fr[i];
                        }
                        if i + 1 < nr {
                            s += fr[i + 1];
                        }
                        sigma + kappa * s / (r[i] * h * h)
                    })
                    .collect()
            }
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `out = sigma x - kappa Lap_h x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        laplacian_into(&self.grid, x, out);
        let (s, k) = (self.sigma, self.kappa);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = s * xi - k * *o;
        }
    }

    pub fn apply(&self, x: &Field) -> Field {
        let mut out = vec![0.0; x.values().len()];
        self.apply_into(x.values(), &mut out);
        Field::from_raw(x.grid_arc().clone(), out)
    }
}

/// Scratch vectors for conjugate gradient; reuse one per thread.
#[derive(Debug, Default, Clone)]
pub struct CgWorkspace {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    b: Vec<f64>,
}

impl CgWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, n: usize) {
        for v in [&mut self.r, &mut self.z, &mut self.p, &mut self.q, &mut self.b] {
            v.clear();
            v.resize(n, 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[inline]
fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Solves `op x = rhs` from a zero initial guess.
pub fn solve_spd(op: &ScreenedOperator, rhs: &Field, tol: f64, max_iter: usize) -> Result<Field> {
    let mut x = vec![0.0; rhs.values().len()];
    let mut ws = CgWorkspace::new();
    solve_spd_into(op, rhs.values(), &mut x, tol, max_iter, &mut ws)?;
    Ok(Field::from_raw(rhs.grid_arc().clone(), x))
}

/// Preconditioned conjugate gradient starting from the contents of `x`.
///
/// On success `||op x - rhs||_2 <= tol ||rhs||_2` in the weighted norm. When
/// at least one iteration ran, the constant mode is corrected afterwards so
/// that the residual has zero weighted mean (for `sigma > 0`) or `x` has zero
/// mean (for `sigma = 0`); this keeps mass exact to rounding regardless of
/// `tol`. If the initial guess already satisfies the tolerance, `x` is
/// returned untouched.
pub fn solve_spd_into(
    op: &ScreenedOperator,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    ws: &mut CgWorkspace,
) -> Result<SolveStats> {
    let n = op.grid.len();
    if rhs.len() != n || x.len() != n {
        return Err(Error::Structure("solver vectors do not match the grid".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain(format!("solver tolerance must be positive, got {tol}")));
    }
    let w = op.grid.weights();
    let area = op.grid.area();
    ws.resize(n);
    ws.b.copy_from_slice(rhs);

    let singular = op.sigma == 0.0;
    if singular {
        let total: f64 = ws.b.iter().zip(w).map(|(b, w)| b * w).sum();
        let scale: f64 = ws.b.iter().zip(w).map(|(b, w)| b.abs() * w).sum();
        if total.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Solvability { mean: total / area });
        }
        // remove the rounding-level inconsistency so CG cannot drift
        let mean = total / area;
        ws.b.iter_mut().for_each(|b| *b -= mean);
    }

    let b_norm = wdot(w, &ws.b, &ws.b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let target = tol * b_norm;

    let mut total_iter = 0usize;
    let mut rel = f64::INFINITY;
    // restarts guard against drift of the recursive residual at tight tolerances
    for _restart in 0..4 {
        op.apply_into(x, &mut ws.q);
        for i in 0..n {
            ws.r[i] = ws.b[i] - ws.q[i];
        }
        let r_norm = wdot(w, &ws.r, &ws.r).sqrt();
        rel = r_norm / b_norm;
        if r_norm <= target {
            break;
        }
        if total_iter >= max_iter {
            break;
        }
        for i in 0..n {
            ws.z[i] = ws.r[i] / op.diagonal[i];
        }
        ws.p.copy_from_slice(&ws.z);
        let mut rz = wdot(w, &ws.r, &ws.z);
        while total_iter < max_iter {
            op.apply_into(&ws.p, &mut ws.q);
            let pq = wdot(w, &ws.p, &ws.q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            let mut rr = 0.0;
            for i in 0..n {
                x[i] += alpha * ws.p[i];
                ws.r[i] -= alpha * ws.q[i];
                rr += w[i] * ws.r[i] * ws.r[i];
            }
            total_iter += 1;
            if rr.sqrt() <= 0.5 * target {
                break;
            }
            let mut rz_new = 0.0;
            for i in 0..n {
                ws.z[i] = ws.r[i] / op.diagonal[i];
                rz_new += w[i] * ws.r[i] * ws.z[i];
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                ws.p[i] = ws.z[i] + beta * ws.p[i];
            }
        }
        correct_constant_mode(op, &ws.b, x, w, area);
    }
    if rel <= tol {
        Ok(SolveStats { iterations: total_iter, relative_residual: rel })
    } else {
        Err(Error::Solver { iterations: total_iter, residual: rel })
    }
}

fn correct_constant_mode(op: &ScreenedOperator, b: &[f64], x: &mut [f64], w: &[f64], area: f64) {
    let sx: f64 = x.iter().zip(w).map(|(x, w)| x * w).sum();
    let c = if op.sigma == 0.0 {
        -sx / area
    } else {
        let sb: f64 = b.iter().zip(w).map(|(b, w)| b * w).sum();
        (sb - op.sigma * sx) / (op.sigma * area)
    };
    x.iter_mut().for_each(|v| *v += c);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(n: usize) -> Arc<Grid> {
        Arc::new(Grid::rectangle(PI, PI, n, n).unwrap())
    }

    fn noise(grid: &Arc<Grid>, seed: u64) -> Field {
        // xorshift, enough for test data
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let vals = (0..grid.len())
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Field::new(grid.clone(), vals).unwrap()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        for g in [square(16), Arc::new(Grid::radial_disk(1.0, 16).unwrap())] {
            let f = Field::constant(g.clone(), 3.5);
            assert!(laplacian_neumann(&f).values().iter().all(|v| *v == 0.0));
            assert!(gradient_faces(&f).max_abs() == 0.0);
        }
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let g = Arc::new(Grid::rectangle(1.0, 1.0, 32, 32).unwrap());
        let f = Field::from_fn(g, |x, _| x).unwrap();
        let grad = gradient_faces(&f);
        assert!(grad.x.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(grad.y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_of_gradient_is_the_laplacian_bitwise() {
        for g in [square(24), Arc::new(Grid::radial_disk(2.0, 24).unwrap())] {
            let f = noise(&g, 7);
            let lap = laplacian_neumann(&f);
            let dg = divergence(&gradient_faces(&f)).unwrap();
            assert_eq!(lap.values(), dg.values());
        }
    }

    #[test]
    fn divergence_rejects_mismatched_flux() {
        let g = square(8);
        let bad = FaceVector { grid: g, x: vec![0.0; 3], y: vec![] };
        assert!(matches!(divergence(&bad), Err(Error::Structure(_))));
    }

    #[test]
    fn laplacian_conserves_mass() {
        for g in [square(32), Arc::new(Grid::radial_disk(1.0, 64).unwrap())] {
            let f = noise(&g, 11);
            let l1 = f.lp_norm(1.0).unwrap();
            assert!(laplacian_neumann(&f).integrate().abs() <= 1e-12 * l1);
        }
    }

    #[test]
    fn laplacian_of_cosine_is_second_order() {
        let err = |n: usize| {
            let g = square(n);
            let f = Field::from_fn(g.clone(), |x, _| x.cos()).unwrap();
            let lap = laplacian_neumann(&f);
            lap.values().iter().enumerate().map(|(i, v)| (v + g.center(i).0.cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(128) / err(256);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn screened_solve_of_constant() {
        let g = square(32);
        let op = ScreenedOperator::new(g.clone(), 1.0).unwrap();
        let v = solve_spd(&op, &Field::constant(g, 2.0), 1e-10, 1000).unwrap();
        assert!(v.values().iter().all(|x| (x - 2.0).abs() < 1e-10));
    }

    #[test]
    fn residual_contract_holds() {
        for g in [square(48), Arc::new(Grid::radial_disk(1.0, 96).unwrap())] {
            let op = ScreenedOperator::new(g.clone(), 1.0).unwrap();
            let rhs = noise(&g, 3).combine(1.0, &Field::constant(g.clone(), 1.0), 1.0).unwrap();
            let x = solve_spd(&op, &rhs, 1e-10, 10_000).unwrap();
            let res = op.apply(&x).sub(&rhs).unwrap().lp_norm(2.0).unwrap();
            assert!(res <= 1e-10 * rhs.lp_norm(2.0).unwrap());
            // residual carries no mass
            assert!(x.integrate() - rhs.integrate() <= 1e-12 * rhs.integrate().abs());
        }
    }

    #[test]
    fn singular_solve_needs_zero_mean() {
        let g = square(32);
        let op = ScreenedOperator::new(g.clone(), 0.0).unwrap();
        let rhs = Field::from_fn(g.clone(), |x, _| x.cos()).unwrap();
        let x = solve_spd(&op, &rhs, 1e-10, 10_000).unwrap();
        assert!(x.mean().abs() < 1e-12);
        let res = op.apply(&x).sub(&rhs).unwrap().lp_norm(2.0).unwrap();
        assert!(res <= 1e-10 * rhs.lp_norm(2.0).unwrap());

        let bad = Field::constant(g, 1.0);
        assert!(matches!(solve_spd(&op, &bad, 1e-10, 100), Err(Error::Solvability { .. })));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = square(64);
        let op = ScreenedOperator::new(g.clone(), 1.0).unwrap();
        let rhs = noise(&g, 5);
        match solve_spd(&op, &rhs, 1e-12, 3) {
            Err(Error::Solver { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected solver error, got {other:?}"),
        }
    }
}
