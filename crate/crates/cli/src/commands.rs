//! One function per subcommand. Each writes its data files plus
//! `manifest.txt` into the output directory and reports whether the
//! experiment met its own success condition.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use kslab_core::dynamics::{run_observed, DtPolicy, StepperConfig, Termination};
use kslab_core::experiments::{
    blowup_scan, bracket_ratio, lambda_sweep, refinement_study, small_data_monitor, stability_twin, Scenario,
};
use kslab_core::functionals::DiagnosticsRecord;
use kslab_core::mesh::write_snapshot;
use kslab_core::operators::gradient_faces;
use kslab_core::theory::{
    param_witness, property_sweep, semigroup_empirical_check, Selector, SemigroupEstimate, TestDatum,
};
use kslab_core::{Field, Geometry, GridSpec};

use crate::config::{Experiment, RunConfig};
use crate::output::{write_atomic, Manifest};

/// Result of a subcommand that ran to the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The experiment ran but failed its own criterion; data were written.
    Failure(String),
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Self {
        Writer { dir, files: Vec::new() }
    }

    fn put(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, cfg: &RunConfig, exp: Experiment, dt_policy: String, outcome: &Outcome) -> Result<()> {
        let status = match outcome {
            Outcome::Success => "success".to_string(),
            Outcome::Failure(m) => format!("failure: {m}"),
        };
        let manifest = Manifest {
            experiment: exp.name().to_string(),
            canonical_config: cfg.canonical.clone(),
            grid: describe_grid(&cfg.scenario.grid),
            dt_policy,
            status,
            files: std::mem::take(&mut self.files),
        };
        write_atomic(&self.dir.join("manifest.txt"), manifest.render().as_bytes())
    }
}

fn describe_grid(g: &GridSpec) -> String {
    match g.geometry {
        Geometry::Rectangle => format!("rectangle {}x{} on (0,{})x(0,{})", g.nx, g.ny, g.lx, g.ly),
        Geometry::RadialDisk => format!("radial_disk nr={} R={}", g.nx, g.lx),
    }
}

fn cfl_policy(s: &StepperConfig) -> String {
    format!("cfl safety={} dt_max={} dt_min={}", s.cfl_safety, s.dt_max, s.dt_min)
}

fn status(ok: bool, why: impl FnOnce() -> String) -> Outcome {
    if ok {
        Outcome::Success
    } else {
        Outcome::Failure(why())
    }
}

/// Dispatches `exp`.
pub fn execute(exp: Experiment, cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    cfg.require_for(exp)?;
    match exp {
        Experiment::Run => run(cfg, dir),
        Experiment::Sweep => sweep(cfg, dir),
        Experiment::Blowup => blowup(cfg, dir),
        Experiment::Semigroup => semigroup(cfg, dir),
        Experiment::Refine => refine(cfg, dir),
        Experiment::Stability => stability(cfg, dir),
        Experiment::Smalldata => smalldata(cfg, dir),
        Experiment::Intervals => unreachable!("intervals is driven by flags, not a config file"),
    }
}

fn run(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let lambda = cfg.lambda.expect("checked by require_for");
    let sc = &cfg.scenario;
    let state = sc.state(lambda)?;
    let res = run_observed(state, &sc.stepper, &DtPolicy::Cfl, |_, _| Ok(()))?;
    let mut csv = DiagnosticsRecord::csv_header(&sc.stepper.diagnostics);
    for rec in &res.trajectory {
        csv.push_str(&rec.to_csv_row());
        csv.push('\n');
    }
    let mut w = Writer::new(dir);
    w.put("trajectory.csv", csv.as_bytes())?;
    let mut u = Vec::new();
    write_snapshot(&res.final_state.u, res.final_state.t, &mut u)?;
    w.put("final_u.txt", &u)?;
    let mut v = Vec::new();
    write_snapshot(&res.final_state.v, res.final_state.t, &mut v)?;
    w.put("final_v.txt", &v)?;
    let outcome = status(res.termination == Termination::Completed, || {
        format!("{}: {}", res.termination.name(), res.message.clone().unwrap_or_default())
    });
    w.finish(cfg, Experiment::Run, cfl_policy(&sc.stepper), &outcome)?;
    Ok(outcome)
}

fn sweep(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let lambdas = cfg.lambdas.as_ref().expect("checked by require_for");
    let report = lambda_sweep(&cfg.scenario, lambdas, &cfg.sweep)?;
    let mut w = Writer::new(dir);
    w.put("sweep.csv", report.to_csv().as_bytes())?;
    let mut ly = String::from("# lyapunov functional per trajectory\nlabel,t,lyapunov\n");
    for tr in &report.lyapunov {
        for (t, v) in tr.times.iter().zip(&tr.values) {
            let _ = writeln!(ly, "{},{t:.16e},{v:.16e}", tr.label);
        }
    }
    w.put("lyapunov.csv", ly.as_bytes())?;
    let outcome = if !report.completed() {
        Outcome::Failure(format!("{}: {}", report.termination.name(), report.message.clone().unwrap_or_default()))
    } else {
        status(report.monotone_u && report.monotone_v, || "error sequence is not monotone".into())
    };
    let policy = format!("lockstep {} (shared by all runs)", cfl_policy(&cfg.scenario.stepper));
    w.finish(cfg, Experiment::Sweep, policy, &outcome)?;
    Ok(outcome)
}

fn blowup(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let p = &cfg.blowup;
    let mut sc: Scenario = cfg.scenario.clone();
    sc.stepper.blowup_linf_factor = p.linf_factor;
    let lambda = cfg.lambda.unwrap_or(0.0);
    let base = blowup_scan(&sc, lambda, &p.masses, &p.options)?;
    let mut w = Writer::new(dir);
    w.put("scan.csv", base.to_csv().as_bytes())?;
    let mut failures = Vec::new();
    if base.inversion {
        failures.push(format!("classification inversion at chi = {}", sc.chi));
    }
    if p.double_chi {
        let mut doubled = sc.clone();
        doubled.chi *= 2.0;
        let masses: Vec<f64> = p.masses.iter().map(|m| m / 2.0).collect();
        let other = blowup_scan(&doubled, lambda, &masses, &p.options)?;
        w.put("scan_double_chi.csv", other.to_csv().as_bytes())?;
        if other.inversion {
            failures.push(format!("classification inversion at chi = {}", doubled.chi));
        }
        let ratio = bracket_ratio(&base, &other);
        let summary = format!(
            "# bracket midpoint ratio after doubling chi\nchi,bracket_lo,bracket_hi\n{},{},{}\n{},{},{}\nratio,{},\n",
            base.chi,
            base.bracket.map_or(f64::NAN, |b| b.0),
            base.bracket.map_or(f64::NAN, |b| b.1),
            other.chi,
            other.bracket.map_or(f64::NAN, |b| b.0),
            other.bracket.map_or(f64::NAN, |b| b.1),
            ratio.map_or(f64::NAN, |r| r)
        );
        w.put("chi_scaling.csv", summary.as_bytes())?;
    }
    let outcome = status(failures.is_empty(), || failures.join("; "));
    let policy = format!("{}; blow-up flag at {} x ||u_init||_inf", cfl_policy(&sc.stepper), p.linf_factor);
    w.finish(cfg, Experiment::Blowup, policy, &outcome)?;
    Ok(outcome)
}

fn semigroup(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let grid = cfg.scenario.build_grid()?;
    let mode = match grid.geometry() {
        Geometry::Rectangle => {
            let k = std::f64::consts::PI / grid.lx();
            Field::from_fn(grid.clone(), move |x, _| (k * x).cos())?
        }
        Geometry::RadialDisk => {
            let k = std::f64::consts::PI / grid.radius();
            Field::from_fn(grid.clone(), move |r, _| (k * r).cos())?.minus_mean()
        }
    };
    let u0 = kslab_core::sample_initial(&cfg.scenario.u_init, &grid)?;
    let data = [
        TestDatum::Scalar { name: "mode".into(), phi: mode },
        TestDatum::Scalar { name: "u_init_centered".into(), phi: u0.minus_mean() },
        TestDatum::Vector { name: "grad_u_init".into(), phi: gradient_faces(&u0) },
    ];
    let reports = semigroup_empirical_check(&grid, &cfg.semigroup, &data, &SemigroupEstimate::ALL)?;
    let mut csv = String::from("# heat semigroup estimates: envelope (1 + t^power) exp(-alpha t)\n");
    csv.push_str("estimate,field,p,q,alpha,decay_exponent,prefactor,passed\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.10},{:.6},{:.6e},{}",
            r.estimate.label(),
            r.field,
            r.p,
            r.q,
            r.alpha,
            r.decay_exponent,
            r.prefactor,
            r.passed
        );
    }
    let mut w = Writer::new(dir);
    w.put("semigroup.csv", csv.as_bytes())?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("({}) {} p={} q={}", r.estimate.label(), r.field, r.p, r.q))
        .collect();
    let outcome = status(failed.is_empty(), || format!("estimates failed: {}", failed.join(", ")));
    w.finish(cfg, Experiment::Semigroup, format!("backward Euler dt={}", cfg.semigroup.dt), &outcome)?;
    Ok(outcome)
}

fn refine(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let report = refinement_study(&cfg.scenario, &cfg.refine)?;
    let mut w = Writer::new(dir);
    w.put("refine.csv", report.to_csv().as_bytes())?;
    let outcome = status(report.space.valid && report.time.valid, || {
        let reasons: Vec<String> = [("space", &report.space), ("time", &report.time)]
            .iter()
            .filter_map(|(n, s)| s.reason.as_ref().map(|r| format!("{n}: {r}")))
            .collect();
        format!("study invalid ({})", reasons.join("; "))
    });
    let policy = format!("space: dt = {} h^2; time: fixed steps {:?}", cfg.refine.dt_factor, cfg.refine.dt_levels);
    w.finish(cfg, Experiment::Refine, policy, &outcome)?;
    Ok(outcome)
}

fn stability(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let p = &cfg.stability;
    let report = stability_twin(&cfg.scenario, p.delta, &p.bump)?;
    let mut w = Writer::new(dir);
    w.put("stability.csv", report.to_csv().as_bytes())?;
    let outcome = status(!report.flagged, || {
        format!("{}: {}", report.termination.name(), report.message.clone().unwrap_or_default())
    });
    let policy = format!("lockstep {}", cfl_policy(&cfg.scenario.stepper));
    w.finish(cfg, Experiment::Stability, policy, &outcome)?;
    Ok(outcome)
}

fn smalldata(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let s = &cfg.smalldata;
    let witness = param_witness(s.n, s.p, s.q, s.selector)?;
    let lambdas = match (&cfg.lambdas, cfg.lambda) {
        (Some(l), _) => l.clone(),
        (None, Some(l)) => vec![l],
        (None, None) => vec![0.1, 0.01],
    };
    let report = small_data_monitor(&cfg.scenario, &witness, s.epsilon, &lambdas)?;
    let mut w = Writer::new(dir);
    w.put("smalldata.csv", report.to_csv().as_bytes())?;
    let outcome = status(report.held, || format!("deviation reached epsilon = {}", s.epsilon));
    w.finish(cfg, Experiment::Smalldata, cfl_policy(&cfg.scenario.stepper), &outcome)?;
    Ok(outcome)
}

/// The interval table for `(n, p, q)`, as aligned text or CSV.
pub fn intervals_table(n: u32, p: f64, q: f64, selector: Selector, csv: bool) -> Result<String> {
    let w = param_witness(n, p, q, selector)?;
    let iv = [("I1", w.i1, w.theta, "theta"), ("I2", w.i2, w.q0, "q0"), ("I3", w.i3, w.mu, "mu")];
    let num = |x: f64| if x.is_infinite() { "inf".to_string() } else { format!("{x}") };
    let fixed = |x: f64| if x.is_infinite() { "inf".to_string() } else { format!("{x:.8}") };
    let mut s = String::new();
    if csv {
        s.push_str("# admissible parameter intervals and the chosen witness\n");
        s.push_str("n,p,q,interval,lo,hi,choice,value,a\n");
        for (name, i, v, label) in iv {
            let _ = writeln!(s, "{n},{p},{q},{name},{},{},{label},{v},{}", num(i.lo), num(i.hi), w.a);
        }
    } else {
        let _ = writeln!(s, "n = {n}, p = {p}, q = {q}");
        let _ = writeln!(s, "{:<4} {:>14} {:>14}   {:<6} {:>14}", "", "lo", "hi", "choice", "value");
        for (name, i, v, label) in iv {
            let _ = writeln!(s, "{name:<4} {:>14} {:>14}   {label:<6} {v:>14.8}", fixed(i.lo), fixed(i.hi));
        }
        let _ = writeln!(s, "a = {:.8}", w.a);
    }
    Ok(s)
}

/// Randomized witness sweep; returns the summary text and whether it was clean.
pub fn intervals_sweep(cases: usize, seed: u64) -> (String, bool) {
    let s = property_sweep(cases, seed);
    let mut text = format!(
        "cases = {}, failures = {}, min margin = {:e}, max identity error = {:e}\n",
        s.cases,
        s.failures.len(),
        s.min_margin,
        s.max_identity_error
    );
    for f in s.failures.iter().take(10) {
        let _ = writeln!(text, "  {f}");
    }
    (text, s.failures.is_empty())
}
