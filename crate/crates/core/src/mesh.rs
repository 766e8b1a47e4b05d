//! Cell-centered grids on rectangles and radially symmetric disks, scalar
//! fields living on them, quadrature, norms and initial-condition presets.
//!
//! Rectangle cells are indexed `i + nx * j`. A radial disk of radius `R` is a
//! one-dimensional array of annuli `[r_i - h/2, r_i + h/2]` carrying the metric
//! weight `2 pi r_i h`, so every integral over the grid is an integral over the
//! full two-dimensional disk.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Smallest admissible cell count along any axis.
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    Rectangle,
    RadialDisk,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Geometry::Rectangle => "rectangle",
            Geometry::RadialDisk => "radial_disk",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(Geometry::Rectangle),
            "radial_disk" | "radial" | "disk" => Ok(Geometry::RadialDisk),
            other => Err(Error::Config(format!("unknown geometry `{other}`"))),
        }
    }
}

/// Plain description of a grid, as it appears in configuration files.
///
/// For a radial disk `lx` is the radius and `nx` the number of annuli;
/// `ly` and `ny` are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub geometry: Geometry,
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        GridSpec { geometry: Geometry::Rectangle, lx, ly, nx, ny }
    }

    pub fn radial_disk(radius: f64, nr: usize) -> Self {
        GridSpec { geometry: Geometry::RadialDisk, lx: radius, ly: 0.0, nx: nr, ny: 1 }
    }

    /// The same domain with every cell count doubled.
    pub fn refined(&self) -> Self {
        let mut spec = *self;
        spec.nx *= 2;
        if self.geometry == Geometry::Rectangle {
            spec.ny *= 2;
        }
        spec
    }

    pub fn build(&self) -> Result<Grid> {
        make_grid(self)
    }
}

/// Uniform cell-centered grid with its quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    geometry: Geometry,
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    weights: Vec<f64>,
    // radial only: cell-center radii and the radii of the nx+1 faces
    radii: Vec<f64>,
    face_radii: Vec<f64>,
}

/// Builds a grid from its description, validating dimensions and cell counts.
pub fn make_grid(spec: &GridSpec) -> Result<Grid> {
    match spec.geometry {
        Geometry::Rectangle => Grid::rectangle(spec.lx, spec.ly, spec.nx, spec.ny),
        Geometry::RadialDisk => Grid::radial_disk(spec.lx, spec.nx),
    }
}

fn check_length(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {value}")))
    }
}

fn check_cells(name: &str, value: usize) -> Result<()> {
    if value >= MIN_CELLS {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least {MIN_CELLS}, got {value}")))
    }
}

impl Grid {
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Grid> {
        check_length("Lx", lx)?;
        check_length("Ly", ly)?;
        check_cells("nx", nx)?;
        check_cells("ny", ny)?;
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        Ok(Grid {
            geometry: Geometry::Rectangle,
            lx,
            ly,
            nx,
            ny,
            hx,
            hy,
            weights: vec![hx * hy; nx * ny],
            radii: Vec::new(),
            face_radii: Vec::new(),
        })
    }

    pub fn radial_disk(radius: f64, nr: usize) -> Result<Grid> {
        check_length("R", radius)?;
        check_cells("nr", nr)?;
        let h = radius / nr as f64;
        let radii: Vec<f64> = (0..nr).map(|i| (i as f64 + 0.5) * h).collect();
        let face_radii: Vec<f64> = (0..=nr).map(|i| i as f64 * h).collect();
        let weights = radii.iter().map(|r| 2.0 * PI * r * h).collect();
        Ok(Grid {
            geometry: Geometry::RadialDisk,
            lx: radius,
            ly: 0.0,
            nx: nr,
            ny: 1,
            hx: h,
            hy: h,
            weights,
            radii,
            face_radii,
        })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { geometry: self.geometry, lx: self.lx, ly: self.ly, nx: self.nx, ny: self.ny }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    /// Radius of a disk grid (equal to `lx`).
    pub fn radius(&self) -> f64 {
        self.lx
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Smallest cell spacing, the length scale of the advective CFL bound.
    pub fn min_spacing(&self) -> f64 {
        match self.geometry {
            Geometry::Rectangle => self.hx.min(self.hy),
            Geometry::RadialDisk => self.hx,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature weight of cell `(i, j)`; `j` is ignored on a disk.
    pub fn cell_weight(&self, i: usize, j: usize) -> f64 {
        match self.geometry {
            Geometry::Rectangle => self.weights[i + self.nx * j],
            Geometry::RadialDisk => self.weights[i],
        }
    }

    /// Measure of the domain, `Lx Ly` or `pi R^2`.
    pub fn area(&self) -> f64 {
        match self.geometry {
            Geometry::Rectangle => self.lx * self.ly,
            Geometry::RadialDisk => PI * self.lx * self.lx,
        }
    }

    /// Cell-center coordinates of a flat index: `(x, y)` or `(r, 0)`.
    pub fn center(&self, idx: usize) -> (f64, f64) {
        match self.geometry {
            Geometry::Rectangle => {
                let i = idx % self.nx;
                let j = idx / self.nx;
                ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
            }
            Geometry::RadialDisk => (self.radii[idx], 0.0),
        }
    }

    pub(crate) fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub(crate) fn face_radii(&self) -> &[f64] {
        &self.face_radii
    }

    /// Distance from a cell center to the domain's symmetry center.
    pub(crate) fn distance_to_center(&self, idx: usize) -> f64 {
        let (x, y) = self.center(idx);
        match self.geometry {
            Geometry::Rectangle => (x - 0.5 * self.lx).hypot(y - 0.5 * self.ly),
            Geometry::RadialDisk => x,
        }
    }
}

/// Scalar cell-centered function bound to a grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.values == other.values
    }
}

impl Field {
    /// Wraps values, rejecting wrong lengths and non-finite entries.
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::Structure(format!(
                "field has {} values but the grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value {} in cell {pos}", values[pos])));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Field {
        let n = grid.len();
        Field { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<Grid>) -> Field {
        Field::constant(grid, 0.0)
    }

    /// Evaluates `f(x, y)` (rectangle) or `f(r, 0)` (disk) at every cell center.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        let values = (0..grid.len())
            .map(|idx| {
                let (x, y) = grid.center(idx);
                f(x, y)
            })
            .collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Structure("fields live on different grids".into()))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Quadrature `sum_cells f * weight`.
    pub fn integrate(&self) -> f64 {
        compensated_sum(self.values.iter().zip(self.grid.weights()).map(|(f, w)| f * w))
    }

    /// Spatial mean `integrate / |Omega|`.
    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.area()
    }

    /// `(int |f|^p)^(1/p)`, or `max |f|` for `p = inf`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_norm_of(&self.values, self.grid.weights(), p)
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::from_raw(self.grid.clone(), self.values.iter().map(|v| s * v).collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Field::from_raw(self.grid.clone(), values))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x - y).collect();
        Ok(Field::from_raw(self.grid.clone(), values))
    }

    /// The field minus its spatial mean.
    pub fn minus_mean(&self) -> Field {
        let m = self.mean();
        Field::from_raw(self.grid.clone(), self.values.iter().map(|v| v - m).collect())
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

pub(crate) fn lp_norm_of(values: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("L^p norm requires p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    }
    if p == 1.0 {
        return Ok(values.iter().zip(weights).map(|(v, w)| v.abs() * w).sum());
    }
    if p == 2.0 {
        return Ok(values.iter().zip(weights).map(|(v, w)| v * v * w).sum::<f64>().sqrt());
    }
    // scale by the max to keep |f|^p representable for large p
    let scale = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = values.iter().zip(weights).map(|(v, w)| (v.abs() / scale).powf(p) * w).sum();
    Ok(scale * sum.powf(1.0 / p))
}

/// Averages a field on a grid refined once (see [`GridSpec::refined`]) down to
/// the coarse grid. Rectangles average the four children; disks take the
/// area-weighted mean of the two child annuli.
pub fn restrict(fine: &Field, coarse: &Arc<Grid>) -> Result<Field> {
    let fg = fine.grid();
    if fg.spec() != coarse.spec().refined() {
        return Err(Error::Structure("restriction needs a grid refined exactly once".into()));
    }
    let f = fine.values();
    let values = match coarse.geometry() {
        Geometry::Rectangle => {
            let (nx, ny, fnx) = (coarse.nx(), coarse.ny(), fg.nx());
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let a = 2 * i + fnx * 2 * j;
                    out.push(0.25 * (f[a] + f[a + 1] + f[a + fnx] + f[a + fnx + 1]));
                }
            }
            out
        }
        Geometry::RadialDisk => {
            let w = fg.weights();
            (0..coarse.nx())
                .map(|i| {
                    let (a, b) = (2 * i, 2 * i + 1);
                    (f[a] * w[a] + f[b] * w[b]) / (w[a] + w[b])
                })
                .collect()
        }
    };
    Ok(Field::from_raw(coarse.clone(), values))
}

/// Initial-condition presets.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Constant {
        value: f64,
    },
    /// `base + amplitude * cos(kx pi x / Lx) cos(ky pi y / Ly)`; on a disk
    /// `base + amplitude * cos(kx pi r / R)`.
    CosinePerturbed {
        base: f64,
        amplitude: f64,
        mode: (u32, u32),
    },
    /// Gaussian of standard deviation `width` around `center`, rescaled so
    /// its discrete integral equals `target_mass`.
    GaussianBump {
        center: (f64, f64),
        width: f64,
        target_mass: f64,
    },
    /// Gaussian centered on the domain's center (the origin of a disk).
    RadialGaussian {
        width: f64,
        target_mass: f64,
    },
}

/// Samples a preset on a grid.
pub fn sample_initial(preset: &Preset, grid: &Arc<Grid>) -> Result<Field> {
    match *preset {
        Preset::Constant { value } => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("constant preset must be >= 0, got {value}")));
            }
            Ok(Field::constant(grid.clone(), value))
        }
        Preset::CosinePerturbed { base, amplitude, mode } => {
            if !(base.is_finite() && amplitude.is_finite()) || amplitude.abs() > base {
                return Err(Error::Config(format!(
                    "cosine preset needs |amplitude| <= base to stay nonnegative (base {base}, amplitude {amplitude})"
                )));
            }
            let (kx, ky) = (mode.0 as f64, mode.1 as f64);
            let (lx, ly) = (grid.lx(), grid.ly());
            match grid.geometry() {
                Geometry::Rectangle => Field::from_fn(grid.clone(), |x, y| {
                    base + amplitude * (kx * PI * x / lx).cos() * (ky * PI * y / ly).cos()
                }),
                Geometry::RadialDisk => {
                    Field::from_fn(grid.clone(), |r, _| base + amplitude * (kx * PI * r / lx).cos())
                }
            }
        }
        Preset::GaussianBump { center, width, target_mass } => {
            check_gaussian(width, target_mass)?;
            let profile = match grid.geometry() {
                Geometry::Rectangle => Field::from_fn(grid.clone(), |x, y| {
                    let d2 = (x - center.0).powi(2) + (y - center.1).powi(2);
                    (-d2 / (2.0 * width * width)).exp()
                })?,
                Geometry::RadialDisk => {
                    Field::from_fn(grid.clone(), |r, _| (-(r - center.0).powi(2) / (2.0 * width * width)).exp())?
                }
            };
            normalize_mass(profile, target_mass)
        }
        Preset::RadialGaussian { width, target_mass } => {
            check_gaussian(width, target_mass)?;
            let values = (0..grid.len())
                .map(|idx| {
                    let d = grid.distance_to_center(idx);
                    (-d * d / (2.0 * width * width)).exp()
                })
                .collect();
            normalize_mass(Field::new(grid.clone(), values)?, target_mass)
        }
    }
}

fn check_gaussian(width: f64, target_mass: f64) -> Result<()> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Config(format!("gaussian width must be positive, got {width}")));
    }
    if !(target_mass.is_finite() && target_mass > 0.0) {
        return Err(Error::Config(format!("gaussian mass must be positive, got {target_mass}")));
    }
    Ok(())
}

fn normalize_mass(profile: Field, target_mass: f64) -> Result<Field> {
    let m = profile.integrate();
    if !(m > 0.0) {
        return Err(Error::Config("gaussian profile underflows on this grid".into()));
    }
    Ok(profile.scaled(target_mass / m))
}

/// Writes a snapshot: one header line `# geometry nx ny Lx Ly t` followed by
/// one `x y value` row (rectangle) or `r value` row (disk) per cell, all
/// reals with 17 significant digits.
pub fn write_snapshot<W: Write>(field: &Field, t: f64, mut out: W) -> std::io::Result<()> {
    let g = field.grid();
    writeln!(out, "# {} {} {} {:.16e} {:.16e} {:.16e}", g.geometry(), g.nx(), g.ny(), g.lx(), g.ly(), t)?;
    for (idx, v) in field.values().iter().enumerate() {
        let (x, y) = g.center(idx);
        match g.geometry() {
            Geometry::Rectangle => writeln!(out, "{x:.16e} {y:.16e} {v:.16e}")?,
            Geometry::RadialDisk => writeln!(out, "{x:.16e} {v:.16e}")?,
        }
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`], returning the field and its time.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<(Field, f64)> {
    let io_err = |e: std::io::Error| Error::Config(format!("snapshot read failed: {e}"));
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty snapshot".into()))?.map_err(io_err)?;
    let parts: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
    if parts.len() != 6 {
        return Err(Error::Config(format!("malformed snapshot header `{header}`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}")));
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Config(format!("bad count `{s}`: {e}")));
    let geometry: Geometry = parts[0].parse()?;
    let spec = GridSpec { geometry, nx: int(parts[1])?, ny: int(parts[2])?, lx: num(parts[3])?, ly: num(parts[4])? };
    let t = num(parts[5])?;
    let grid = Arc::new(make_grid(&spec)?);
    let mut values = Vec::with_capacity(grid.len());
    for line in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let last = line.split_whitespace().last().ok_or_else(|| Error::Config("empty snapshot row".into()))?;
        values.push(num(last)?);
    }
    Ok((Field::new(grid, values)?, t))
}
