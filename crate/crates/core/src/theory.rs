//! Computable objects from the analysis of the higher-dimensional problem:
//! the admissible parameter intervals for `theta`, `q0`, `mu`, the `L^1`-`L^theta`
//! interpolation exponent, the first nonzero Neumann eigenvalue, and an
//! empirical check of the `L^p`-`L^q` heat semigroup estimates.
//!
//! Interval endpoints follow the positive-part convention: `x_+ = max(x, 0)`
//! and a positive numerator over `0_+` is `+inf`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::semigroup_cache;
use crate::error::{Error, Result};
use crate::mesh::{lp_norm_of, Field, Geometry, Grid};
use crate::operators::{divergence, gradient_faces, FaceVector};

/// Finite stand-in for `+inf` when a selector must pick a point.
pub const INFINITY_CAP: f64 = 1e6;
/// First positive zero of `J_1`, equivalently of `J_0'`.
pub const BESSEL_J1_FIRST_ZERO: f64 = 3.831_705_970_207_512;

/// Open interval `(lo, hi)`; `hi` may be `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Picks a point by `selector`, clamping `+inf` to [`INFINITY_CAP`].
    pub fn select(&self, selector: Selector) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Invariant(format!("interval {self} is empty")));
        }
        let hi = if self.hi.is_infinite() { INFINITY_CAP.max(2.0 * self.lo + 1.0) } else { self.hi };
        let x = match selector {
            Selector::Midpoint => 0.5 * (self.lo + hi),
            Selector::LowerQuartile => self.lo + 0.25 * (hi - self.lo),
        };
        Ok(x)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |x: f64| if x.is_infinite() { "inf".to_string() } else { format!("{x:.6}") };
        write!(f, "({}, {})", show(self.lo), show(self.hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Midpoint,
    LowerQuartile,
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Selector::Midpoint),
            "lower_quartile" => Ok(Selector::LowerQuartile),
            other => Err(Error::Config(format!("unknown selector `{other}` (midpoint, lower_quartile)"))),
        }
    }
}

/// `num / den_+` under the positive-part convention; `num > 0` assumed.
fn over_positive_part(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

fn check_hypotheses(n: u32, p: f64, q: f64) -> Result<()> {
    let nf = n as f64;
    if n < 3 {
        return Err(Error::Domain(format!("dimension n must be >= 3, got {n}")));
    }
    if !(p.is_finite() && p > nf / 2.0) {
        return Err(Error::Domain(format!("p must exceed n/2 = {}, got {p}", nf / 2.0)));
    }
    if !(q.is_finite() && q > nf) {
        return Err(Error::Domain(format!("q must exceed n = {n}, got {q}")));
    }
    Ok(())
}

/// Staged interval family for fixed `(n, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervals {
    pub n: u32,
    pub p: f64,
    pub q: f64,
}

/// Validates `(n, p, q)` and returns the staged interval family.
pub fn intervals(n: u32, p: f64, q: f64) -> Result<Intervals> {
    check_hypotheses(n, p, q)?;
    Ok(Intervals { n, p, q })
}

impl Intervals {
    /// Range of admissible `theta`.
    pub fn i1(&self) -> Interval {
        let (n, p, q) = (self.n as f64, self.p, self.q);
        let a = over_positive_part(n * p * q, n * p + n * q - p * q);
        let b = over_positive_part(n * p, 2.0 * (n - p));
        Interval::new(p, a.min(b))
    }

    /// Range of admissible `q0` given `theta`.
    pub fn i2(&self, theta: f64) -> Interval {
        let (n, p, q) = (self.n as f64, self.p, self.q);
        let den = p * theta + n * p - n * theta;
        let lower = if den > 0.0 { n * p * theta / den } else { f64::INFINITY };
        let upper = q.min(over_positive_part(n * p, n - p));
        Interval::new(lower.max(1.0), upper)
    }

    /// Range of admissible `mu` given `theta` and `q0`.
    pub fn i3(&self, theta: f64, q0: f64) -> Interval {
        let (n, p) = (self.n as f64, self.p);
        let den = p * theta + 2.0 * n * p - n * theta;
        let third = if den > 0.0 { n * p * theta / den } else { f64::INFINITY };
        let lower = 1f64.max(n * theta / (n + theta)).max(third);
        let upper = q0.min(q0 * theta / (q0 + theta));
        Interval::new(lower, upper)
    }
}

/// A concrete admissible parameter chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamWitness {
    pub n: u32,
    pub p: f64,
    pub q: f64,
    pub i1: Interval,
    pub i2: Interval,
    pub i3: Interval,
    pub theta: f64,
    pub q0: f64,
    pub mu: f64,
    pub a: f64,
}

impl ParamWitness {
    /// `q0 mu / (q0 - mu)`, the exponent interpolated between `L^1` and `L^theta`.
    pub fn interpolated_exponent(&self) -> f64 {
        self.q0 * self.mu / (self.q0 - self.mu)
    }

    /// Margins of the seven inequalities used downstream, each of which must
    /// be positive:
    ///
    /// ```text
    /// theta - p
    /// q - q0
    /// q0 - mu
    /// min(r - 1, theta - r)                      r = q0 mu / (q0 - mu)
    /// 1/2 - (n/2)(1/p - 1/q0)
    /// 1/2 - (n/2)(1/mu - 1/theta)
    /// 1/2 - (n/2)(1/mu - 1/theta) - (n/2)(1/p - 1/theta)
    /// ```
    pub fn margins(&self) -> [f64; 7] {
        let hn = self.n as f64 / 2.0;
        let r = self.interpolated_exponent();
        [
            self.theta - self.p,
            self.q - self.q0,
            self.q0 - self.mu,
            (r - 1.0).min(self.theta - r),
            0.5 - hn * (1.0 / self.p - 1.0 / self.q0),
            0.5 - hn * (1.0 / self.mu - 1.0 / self.theta),
            0.5 - hn * (1.0 / self.mu - 1.0 / self.theta) - hn * (1.0 / self.p - 1.0 / self.theta),
        ]
    }

    pub fn min_margin(&self) -> f64 {
        self.margins().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self) -> Result<()> {
        if !self.i1.contains(self.theta) || !self.i2.contains(self.q0) || !self.i3.contains(self.mu) {
            return Err(Error::Invariant(format!(
                "witness outside its intervals: theta {} in {}, q0 {} in {}, mu {} in {}",
                self.theta, self.i1, self.q0, self.i2, self.mu, self.i3
            )));
        }
        if let Some(k) = self.margins().iter().position(|m| !(*m > 0.0)) {
            return Err(Error::Invariant(format!("derived inequality {} fails for {:?}", k + 1, self)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::Invariant(format!("interpolation exponent {} not in (0, 1)", self.a)));
        }
        Ok(())
    }
}

/// Chooses `theta`, then `q0`, then `mu`, each by `selector`, and verifies the
/// whole chain. An empty interval is an internal error: the hypotheses
/// guarantee nonempty intervals.
pub fn param_witness(n: u32, p: f64, q: f64, selector: Selector) -> Result<ParamWitness> {
    let iv = intervals(n, p, q)?;
    let i1 = iv.i1();
    let theta = i1.select(selector)?;
    let i2 = iv.i2(theta);
    let q0 = i2.select(selector)?;
    let i3 = iv.i3(theta, q0);
    let mu = i3.select(selector)?;
    let a = interpolation_exponent(theta, q0, mu)?;
    let w = ParamWitness { n, p, q, i1, i2, i3, theta, q0, mu, a };
    w.check()?;
    Ok(w)
}

/// `a = ((q0 - mu) theta - q0 mu) / (q0 mu (theta - 1))`, so that
/// `1/r = a + (1 - a)/theta` with `r = q0 mu / (q0 - mu)`.
pub fn interpolation_exponent(theta: f64, q0: f64, mu: f64) -> Result<f64> {
    if !(theta > 1.0 && q0 > mu && mu > 0.0) {
        return Err(Error::Domain(format!("need theta > 1 and q0 > mu > 0, got ({theta}, {q0}, {mu})")));
    }
    let a = ((q0 - mu) * theta - q0 * mu) / (q0 * mu * (theta - 1.0));
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("interpolation exponent {a} not in (0, 1)")));
    }
    let lhs = (q0 - mu) / (q0 * mu);
    let rhs = a + (1.0 - a) / theta;
    if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(1.0) {
        return Err(Error::Invariant(format!("interpolation identity off by {:e}", lhs - rhs)));
    }
    Ok(a)
}

/// Outcome of a randomized sweep over `(n, p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySweep {
    pub cases: usize,
    pub min_margin: f64,
    pub max_identity_error: f64,
    pub failures: Vec<String>,
}

/// Draws `n` from {3, 4, 5}, `p` from `(n/2, n]`, `q` from `(n, 3n]` and
/// builds a midpoint witness for each.
pub fn property_sweep(cases: usize, seed: u64) -> PropertySweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PropertySweep { cases, min_margin: f64::INFINITY, max_identity_error: 0.0, failures: Vec::new() };
    for _ in 0..cases {
        let n: u32 = rng.gen_range(3..=5);
        let nf = n as f64;
        // 1 - U lies in (0, 1], which makes the lower endpoints open
        let p = nf / 2.0 + nf / 2.0 * (1.0 - rng.gen::<f64>());
        let q = nf + 2.0 * nf * (1.0 - rng.gen::<f64>());
        match param_witness(n, p, q, Selector::Midpoint) {
            Ok(w) => {
                out.min_margin = out.min_margin.min(w.min_margin());
                let lhs = 1.0 / w.interpolated_exponent();
                let err = (lhs - (w.a + (1.0 - w.a) / w.theta)).abs();
                out.max_identity_error = out.max_identity_error.max(err);
            }
            Err(e) => out.failures.push(format!("(n, p, q) = ({n}, {p}, {q}): {e}")),
        }
    }
    out
}

/// First nonzero eigenvalue of the Neumann Laplacian on the grid's domain.
/// On a disk only radial eigenfunctions are representable, so the value is
/// the first radial one, `(j/R)^2` with `J_0'(j) = 0`.
pub fn neumann_alpha(grid: &Grid) -> f64 {
    match grid.geometry() {
        Geometry::Rectangle => {
            let l = grid.lx().max(grid.ly());
            std::f64::consts::PI * std::f64::consts::PI / (l * l)
        }
        Geometry::RadialDisk => {
            let j = bessel_j1_first_zero();
            (j / grid.radius()).powi(2)
        }
    }
}

/// `J_1(x)` by its power series; accurate to roundoff for `|x| <= 10`.
pub fn bessel_j1(x: f64) -> f64 {
    let y = -0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..60 {
        term *= y / (m as f64 * (m + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Bisection for the root of `J_1` in `(3, 4)`.
pub fn bessel_j1_first_zero() -> f64 {
    let (mut lo, mut hi) = (3.0, 4.0);
    let flo = bessel_j1(lo);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if bessel_j1(mid).signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The four smoothing estimates of the Neumann heat semigroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemigroupEstimate {
    /// `||e^{t Lap} phi||_p` for zero-mean `phi`, against `||phi||_q`.
    ZeroMean,
    /// `||grad e^{t Lap} phi||_p` against `||phi||_q`.
    Gradient,
    /// `||grad e^{t Lap} phi||_p` against `||grad phi||_q`.
    GradientOfGradient,
    /// `||e^{t Lap} div phi||_p` for a vector field `phi`, against `||phi||_q`.
    Divergence,
}

impl SemigroupEstimate {
    pub const ALL: [SemigroupEstimate; 4] = [
        SemigroupEstimate::ZeroMean,
        SemigroupEstimate::Gradient,
        SemigroupEstimate::GradientOfGradient,
        SemigroupEstimate::Divergence,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SemigroupEstimate::ZeroMean => "i",
            SemigroupEstimate::Gradient => "ii",
            SemigroupEstimate::GradientOfGradient => "iii",
            SemigroupEstimate::Divergence => "iv",
        }
    }

    /// Power of `t` in the envelope `(1 + t^power) e^{-alpha t}`.
    pub fn power(self, n: f64, p: f64, q: f64) -> f64 {
        let s = n / 2.0 * (1.0 / q - 1.0 / p);
        match self {
            SemigroupEstimate::ZeroMean => s,
            SemigroupEstimate::Gradient | SemigroupEstimate::Divergence => -0.5 - s,
            SemigroupEstimate::GradientOfGradient => -s,
        }
    }

    fn admits(self, p: f64, q: f64) -> bool {
        let lo = match self {
            SemigroupEstimate::ZeroMean | SemigroupEstimate::Gradient => q >= 1.0,
            SemigroupEstimate::GradientOfGradient => q >= 2.0,
            SemigroupEstimate::Divergence => q > 1.0,
        };
        lo && q <= p
    }
}

/// Inputs of [`semigroup_empirical_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupCheckSpec {
    pub dt: f64,
    /// Log-spaced sample times in `[t_min, t_max]`.
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    /// The decay fit uses samples with `t >= tail_start`.
    pub tail_start: f64,
    /// `(p, q)` pairs; `f64::INFINITY` is allowed for `p`.
    pub pairs: Vec<(f64, f64)>,
}

impl Default for SemigroupCheckSpec {
    fn default() -> Self {
        SemigroupCheckSpec { dt: 1e-3, t_min: 1e-2, t_max: 4.0, samples: 40, tail_start: 1.0, pairs: vec![(2.0, 2.0)] }
    }
}

/// A test datum: a scalar field for estimates (i)-(iii), a face vector field
/// for (iv).
#[derive(Debug, Clone)]
pub enum TestDatum {
    Scalar { name: String, phi: Field },
    Vector { name: String, phi: FaceVector },
}

impl TestDatum {
    pub fn name(&self) -> &str {
        match self {
            TestDatum::Scalar { name, .. } | TestDatum::Vector { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: SemigroupEstimate,
    pub field: String,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    /// Least-squares decay rate of the tail; `inf` when the curve vanishes.
    pub decay_exponent: f64,
    /// Smallest `k` with `measured <= k (1 + t^power) e^{-alpha t} ||phi||`.
    pub prefactor: f64,
    pub passed: bool,
}

fn magnitude_norm(g: &FaceVector, p: f64) -> Result<f64> {
    let grid = g.grid().clone();
    lp_norm_of(&g.cell_magnitude(), grid.weights(), p)
}

fn log_times(spec: &SemigroupCheckSpec) -> Vec<f64> {
    let (a, b) = (spec.t_min.ln(), spec.t_max.ln());
    let m = spec.samples;
    (0..m).map(|k| (a + (b - a) * k as f64 / (m - 1) as f64).exp()).collect()
}

/// Slope of the least-squares line through `(t, ln y)`, negated.
fn tail_rate(ts: &[f64], ys: &[f64], tail_start: f64, floor: f64) -> f64 {
    let pts: Vec<(f64, f64)> =
        ts.iter().zip(ys).filter(|(t, y)| **t >= tail_start && **y > floor).map(|(t, y)| (*t, y.ln())).collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -sxy / sxx
}

/// Evolves every datum under the discrete heat semigroup and tests each
/// applicable estimate for each `(p, q)` pair. Scalar data feed (i)-(iii);
/// vector data feed (iv). Estimate (i) requires zero-mean data and returns a
/// configuration error otherwise.
pub fn semigroup_empirical_check(
    grid: &Arc<Grid>,
    spec: &SemigroupCheckSpec,
    data: &[TestDatum],
    estimates: &[SemigroupEstimate],
) -> Result<Vec<EstimateReport>> {
    if spec.samples < 3 || !(spec.t_min > 0.0 && spec.t_max > spec.t_min) {
        return Err(Error::Config("semigroup check needs >= 3 samples on 0 < t_min < t_max".into()));
    }
    for &(p, q) in &spec.pairs {
        if !(q >= 1.0 && p >= q) {
            return Err(Error::Config(format!("need 1 <= q <= p, got (p, q) = ({p}, {q})")));
        }
    }
    let alpha = neumann_alpha(grid);
    let n = 2.0;
    let ts = log_times(spec);
    let mut reports = Vec::new();
    for datum in data {
        let (start, applicable): (Field, Vec<SemigroupEstimate>) = match datum {
            TestDatum::Scalar { phi, .. } => {
                if !Arc::ptr_eq(phi.grid_arc(), grid) && phi.grid() != grid.as_ref() {
                    return Err(Error::Structure("test field lives on another grid".into()));
                }
                (phi.clone(), estimates.iter().copied().filter(|e| *e != SemigroupEstimate::Divergence).collect())
            }
            TestDatum::Vector { phi, .. } => {
                (divergence(phi)?, estimates.iter().copied().filter(|e| *e == SemigroupEstimate::Divergence).collect())
            }
        };
        if applicable.is_empty() {
            continue;
        }
        if applicable.contains(&SemigroupEstimate::ZeroMean) {
            let scale = start.lp_norm(1.0)?.max(f64::MIN_POSITIVE);
            if start.integrate().abs() > 1e-10 * scale {
                return Err(Error::Config(format!(
                    "estimate (i) needs zero-mean data; `{}` has integral {:e}",
                    datum.name(),
                    start.integrate()
                )));
            }
        }
        let snaps = semigroup_cache(&start, &ts, spec.dt)?;
        for &est in &applicable {
            for &(p, q) in &spec.pairs {
                if !est.admits(p, q) {
                    continue;
                }
                let reference = match (est, datum) {
                    (SemigroupEstimate::GradientOfGradient, TestDatum::Scalar { phi, .. }) => {
                        magnitude_norm(&gradient_faces(phi), q)?
                    }
                    (_, TestDatum::Scalar { phi, .. }) => phi.lp_norm(q)?,
                    (_, TestDatum::Vector { phi, .. }) => magnitude_norm(phi, q)?,
                };
                let measured: Vec<f64> = snaps
                    .iter()
                    .map(|f| match est {
                        SemigroupEstimate::ZeroMean | SemigroupEstimate::Divergence => f.lp_norm(p),
                        _ => magnitude_norm(&gradient_faces(f), p),
                    })
                    .collect::<Result<_>>()?;
                let power = est.power(n, p, q);
                let mut k: f64 = 0.0;
                for (t, m) in ts.iter().zip(&measured) {
                    if *m == 0.0 {
                        continue;
                    }
                    let env = (1.0 + t.powf(power)) * (-alpha * t).exp() * reference;
                    k = k.max(m / env);
                }
                let peak = measured.iter().fold(0.0, |a: f64, b| a.max(*b));
                let rate = tail_rate(&ts, &measured, spec.tail_start, 1e-11 * peak.max(reference));
                let passed = k.is_finite() && rate >= alpha * (1.0 - 0.05);
                reports.push(EstimateReport {
                    estimate: est,
                    field: datum.name().to_string(),
                    p,
                    q,
                    alpha,
                    decay_exponent: rate,
                    prefactor: k,
                    passed,
                });
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn worked_example_intervals() {
        let iv = intervals(3, 2.0, 4.0).unwrap();
        let i1 = iv.i1();
        assert!((i1.lo - 2.0).abs() < 1e-15 && (i1.hi - 2.4).abs() < 1e-14);
        let i2 = iv.i2(2.2);
        assert!((i2.lo - 13.2 / 3.8).abs() < 1e-13 && (i2.hi - 4.0).abs() < 1e-15);
        let i3 = iv.i3(2.2, 3.7);
        assert!((i3.lo - 13.2 / 9.8).abs() < 1e-13, "{}", i3.lo);
        assert!((i3.hi - 8.14 / 5.9).abs() < 1e-13);
    }

    #[test]
    fn midpoint_witness_for_worked_example() {
        let w = param_witness(3, 2.0, 4.0, Selector::Midpoint).unwrap();
        assert!((w.theta - 2.2).abs() < 1e-14);
        assert!((w.q0 - 0.5 * (13.2 / 3.8 + 4.0)).abs() < 1e-13);
        assert!(w.min_margin() > 1e-9);
        let lq = param_witness(3, 2.0, 4.0, Selector::LowerQuartile).unwrap();
        assert!((lq.theta - 2.1).abs() < 1e-14);
    }

    #[test]
    fn hypotheses_are_enforced() {
        assert!(matches!(intervals(3, 1.4, 4.0), Err(Error::Domain(_))));
        assert!(matches!(intervals(3, 1.5, 4.0), Err(Error::Domain(_))));
        assert!(matches!(intervals(3, 2.0, 3.0), Err(Error::Domain(_))));
        assert!(matches!(intervals(2, 2.0, 4.0), Err(Error::Domain(_))));
    }

    #[test]
    fn exponent_worked_example() {
        let a = interpolation_exponent(2.2, 3.7, 1.36).unwrap();
        assert!((a - 0.116 / 6.0384).abs() < 1e-12);
        let (q0, mu, th) = (3.7, 1.36, 2.2);
        let r = q0 * mu / (q0 - mu);
        assert!((1.0 / r - (a + (1.0 - a) / th)).abs() < 1e-12);
    }

    #[test]
    fn exponent_vanishes_at_upper_endpoint() {
        let (th, q0) = (2.2, 3.7);
        let top = q0 * th / (q0 + th);
        let a = interpolation_exponent(th, q0, top * (1.0 - 1e-9)).unwrap();
        assert!(a > 0.0 && a < 1e-7);
        assert!(interpolation_exponent(th, q0, top * (1.0 + 1e-9)).is_err());
    }

    #[test]
    fn infinite_endpoint_is_explicit() {
        // n = p makes (n - p)_+ vanish
        let iv = intervals(3, 3.0, 4.0).unwrap();
        assert!(iv.i2(3.5).hi == 4.0);
        assert!(over_positive_part(1.0, 0.0).is_infinite());
        assert!(over_positive_part(1.0, -2.0).is_infinite());
        let open = Interval::new(1.0, f64::INFINITY);
        assert_eq!(open.select(Selector::Midpoint).unwrap(), 0.5 * (1.0 + INFINITY_CAP));
        assert_eq!(open.to_string(), "(1.000000, inf)");
    }

    #[test]
    fn randomized_sweep_is_clean() {
        let s = property_sweep(1000, 7);
        assert!(s.failures.is_empty(), "{:?}", &s.failures[..s.failures.len().min(3)]);
        assert!(s.min_margin > 1e-9, "{}", s.min_margin);
        assert!(s.max_identity_error <= 1e-12);
    }

    #[test]
    fn larger_q_never_shrinks_first_interval() {
        for n in 3..=5u32 {
            let nf = n as f64;
            for k in 1..20 {
                let p = nf / 2.0 + nf / 2.0 * k as f64 / 20.0;
                let mut prev = intervals(n, p, nf + 1e-3).unwrap().i1();
                for j in 1..40 {
                    let cur = intervals(n, p, nf + 0.1 * j as f64).unwrap().i1();
                    assert!(cur.lo <= prev.lo && cur.hi >= prev.hi);
                    prev = cur;
                }
            }
        }
    }

    #[test]
    fn bessel_root_and_alpha() {
        assert!(bessel_j1(0.0) == 0.0);
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-15);
        let j = bessel_j1_first_zero();
        assert!((j - BESSEL_J1_FIRST_ZERO).abs() < 1e-10);
        let disk = Grid::radial_disk(1.0, 32).unwrap();
        assert!((neumann_alpha(&disk) - 14.681_970_642_123_89).abs() < 1e-8);
        let sq = Grid::rectangle(PI, PI, 8, 8).unwrap();
        assert!((neumann_alpha(&sq) - 1.0).abs() < 1e-15);
        let a = Grid::rectangle(2.0 * PI, PI, 8, 8).unwrap();
        let b = Grid::rectangle(PI, 2.0 * PI, 8, 8).unwrap();
        assert_eq!(neumann_alpha(&a), 0.25);
        assert_eq!(neumann_alpha(&a), neumann_alpha(&b));
    }

    #[test]
    fn cosine_mode_decays_at_alpha() {
        let g = Arc::new(Grid::rectangle(PI, PI, 64, 64).unwrap());
        let phi = Field::from_fn(g.clone(), |x, _| x.cos()).unwrap();
        let spec = SemigroupCheckSpec::default();
        let rep = semigroup_empirical_check(
            &g,
            &spec,
            &[TestDatum::Scalar { name: "cos".into(), phi }],
            &[SemigroupEstimate::ZeroMean, SemigroupEstimate::GradientOfGradient],
        )
        .unwrap();
        assert_eq!(rep.len(), 2);
        for r in &rep {
            assert!(r.passed, "{r:?}");
            assert!((r.decay_exponent - 1.0).abs() < 0.05, "{r:?}");
        }
        // single mode: ||grad e^{t Lap} phi|| = e^{-t} ||grad phi|| up to discretization
        assert!((rep[1].prefactor - 0.5).abs() < 0.02, "{}", rep[1].prefactor);
    }

    #[test]
    fn constant_has_vanishing_gradient() {
        let g = Arc::new(Grid::rectangle(PI, PI, 16, 16).unwrap());
        let phi = Field::constant(g.clone(), 3.0);
        let spec = SemigroupCheckSpec { t_max: 2.0, samples: 8, dt: 1e-2, ..Default::default() };
        let rep = semigroup_empirical_check(
            &g,
            &spec,
            &[TestDatum::Scalar { name: "c".into(), phi: phi.clone() }],
            &[SemigroupEstimate::Gradient],
        )
        .unwrap();
        assert!(rep[0].passed && rep[0].prefactor == 0.0 && rep[0].decay_exponent.is_infinite());
        let err = semigroup_empirical_check(
            &g,
            &spec,
            &[TestDatum::Scalar { name: "c".into(), phi }],
            &[SemigroupEstimate::ZeroMean],
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn all_four_estimates_on_mixed_data() {
        let g = Arc::new(Grid::rectangle(PI, PI, 32, 32).unwrap());
        let phi = Field::from_fn(g.clone(), |x, y| (2.0 * x).cos() + x.cos() * y.cos() + 0.3 * y.cos()).unwrap();
        let vec = gradient_faces(&Field::from_fn(g.clone(), |x, y| x.sin() * (y * y)).unwrap());
        let spec = SemigroupCheckSpec {
            dt: 2e-3,
            t_max: 6.0,
            tail_start: 3.0,
            pairs: vec![(2.0, 2.0), (4.0, 2.0), (f64::INFINITY, 2.0), (2.0, 1.0)],
            ..Default::default()
        };
        let data = [TestDatum::Scalar { name: "mix".into(), phi }, TestDatum::Vector { name: "grad".into(), phi: vec }];
        let rep = semigroup_empirical_check(&g, &spec, &data, &SemigroupEstimate::ALL).unwrap();
        // (iii) rejects q = 1 and (iv) accepts only q > 1
        assert_eq!(rep.len(), 4 + 4 + 3 + 3);
        for r in &rep {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn interpolation_inequality_on_random_fields() {
        let g = Grid::rectangle(1.3, 0.7, 12, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = param_witness(3, 2.0, 4.0, Selector::Midpoint).unwrap();
        let r = w.interpolated_exponent();
        for _ in 0..200 {
            let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>().powi(4) * 10.0).collect();
            let lhs = lp_norm_of(&vals, g.weights(), r).unwrap();
            let l1 = lp_norm_of(&vals, g.weights(), 1.0).unwrap();
            let lt = lp_norm_of(&vals, g.weights(), w.theta).unwrap();
            assert!(lhs <= l1.powf(w.a) * lt.powf(1.0 - w.a) * (1.0 + 1e-12));
        }
    }
}
