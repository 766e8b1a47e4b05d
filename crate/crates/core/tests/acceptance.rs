//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test -p kslab-core --test acceptance -- 3 4` runs a subset. Failing
//! criteria are reported, and the exit status turns nonzero on a failure only
//! when `KSLAB_ACCEPTANCE_STRICT=1`; errors inside the harness always fail.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use kslab_core::dynamics::{run_observed, step_pe, DtPolicy};
use kslab_core::elliptic::HeatMarcher;
use kslab_core::experiments::{
    blowup_scan, bracket_ratio, lambda_sweep, small_data_monitor, space_order, stability_twin, time_order,
    Classification, ScanOptions, Scenario, SweepOptions, SweepReport, VInit,
};
use kslab_core::functionals::{dissipation_residual, lyapunov, Snapshot};
use kslab_core::theory::{
    param_witness, property_sweep, semigroup_empirical_check, Selector, SemigroupCheckSpec, SemigroupEstimate,
    TestDatum,
};
use kslab_core::{Field, Grid, GridSpec, Preset, Result, StepperConfig, Termination};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

const SUBCRITICAL_MASS: f64 = 0.9 * 4.0 * PI;

/// The subcritical bump on `(0, pi)^2` shared by several criteria.
fn bump(n: usize, t_end: f64) -> Scenario {
    Scenario {
        grid: GridSpec::rectangle(PI, PI, n, n),
        chi: 1.0,
        u_init: Preset::GaussianBump { center: (1.3, 1.7), width: 0.8, target_mass: SUBCRITICAL_MASS },
        v_init: VInit::Consistent,
        stepper: StepperConfig { t_end, ..StepperConfig::default() },
    }
}

// 1: mass over a long run
fn mass_conservation() -> Result<Verdict> {
    let steps = 10_000;
    let dt = 1e-4;
    let sc = bump(128, steps as f64 * dt);
    let s0 = sc.state(0.1)?;
    let m0 = s0.u.integrate();
    let cfg = StepperConfig { diag_stride: steps, ..sc.stepper.clone() };
    let mut worst: f64 = 0.0;
    let res = run_observed(s0, &cfg, &DtPolicy::Schedule(vec![dt; steps]), |s, _| {
        worst = worst.max((s.u.integrate() - m0).abs() / m0);
        Ok(())
    })?;
    let ok = res.termination == Termination::Completed && res.steps >= steps && worst <= 1e-10;
    verdict(ok, format!("{} steps at 128x128, lambda 0.1: max relative drift {worst:.2e} (tol 1e-10)", res.steps))
}

// 2: lambda = 0 reproduces the parabolic-elliptic stepper bit for bit
fn lambda_zero_identity() -> Result<Verdict> {
    let sc = bump(64, 0.5);
    let s0 = sc.state(0.0)?;
    let mut pp = Vec::new();
    let res = run_observed(s0.clone(), &sc.stepper, &DtPolicy::Cfl, |s, dt| {
        pp.push((dt, s.u.values().to_vec(), s.v.values().to_vec()));
        Ok(())
    })?;
    let mut pe = s0;
    let mut mismatches = 0usize;
    for (dt, u, v) in pp.iter().skip(1) {
        pe = step_pe(&pe, *dt, &sc.stepper)?;
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !(same(pe.u.values(), u) && same(pe.v.values(), v)) {
            mismatches += 1;
        }
    }
    let ok = res.termination == Termination::Completed && mismatches == 0;
    verdict(ok, format!("{} steps at 64x64 compared bitwise, {mismatches} mismatching", res.steps))
}

// 3: fast signal diffusion
fn fast_diffusion(r: &SweepReport) -> Result<Verdict> {
    let ok_u = r.monotone_u && r.floor_ratio_u() <= 3.0;
    let ok_v = r.monotone_v && r.floor_ratio_v() <= 3.0;
    let detail = format!(
        "err_u {:?} (monotone {}, {:.2}x floor {:.3e}); err_v {:?} (monotone {}, {:.2}x floor {:.3e}); fitted rates u {:.2}, v {:.2}; {}",
        r.err_u_cloc.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
        r.monotone_u,
        r.floor_ratio_u(),
        r.floor_u,
        r.err_v_l2w12.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
        r.monotone_v,
        r.floor_ratio_v(),
        r.floor_v,
        r.fitted_rate_u,
        r.fitted_rate_v,
        r.termination.name(),
    );
    verdict(r.completed() && ok_u && ok_v, detail)
}

/// Snapshots at `t* - dt`, `t*` and `t* + dt` of a fixed-step run.
fn window_at(sc: &Scenario, lambda: f64, dt: f64, t_star: f64) -> Result<[Snapshot; 3]> {
    let k = (t_star / dt).round() as usize;
    let cfg = StepperConfig { t_end: (k + 1) as f64 * dt, diag_stride: usize::MAX / 2, ..sc.stepper.clone() };
    let mut snaps = Vec::new();
    let mut count = 0usize;
    run_observed(sc.state(lambda)?, &cfg, &DtPolicy::Schedule(vec![dt; k + 1]), |s, _| {
        if count + 1 >= k {
            snaps.push(Snapshot { t: s.t, u: s.u.clone(), v: s.v.clone() });
        }
        count += 1;
        Ok(())
    })?;
    let n = snaps.len();
    assert!(n >= 3, "window needs three snapshots");
    let mut it = snaps.into_iter().skip(n - 3);
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

// 4: Lyapunov monotonicity and the dissipation identity
fn lyapunov_identity(r: &SweepReport) -> Result<Verdict> {
    let worst = r.lyapunov.iter().map(|t| t.max_relative_increase()).fold(f64::NEG_INFINITY, f64::max);
    let monotone = r.lyapunov.iter().all(|t| t.is_monotone(1e-6));
    let lambda = 0.1;
    let mut rel = Vec::new();
    for (n, dt) in [(64, 1e-3), (128, 5e-4)] {
        let w = window_at(&bump(n, 1.0), lambda, dt, 1.0)?;
        let res = dissipation_residual([&w[0], &w[1], &w[2]], 1.0, lambda)?;
        rel.push(res / lyapunov(&w[1].u, &w[1].v, 1.0)?.abs());
    }
    let ok = monotone && rel[0] <= 1e-2 && rel[1] < rel[0];
    verdict(
        ok,
        format!(
            "{} traces, max W increase {worst:.2e} |W(0)| (tol 1e-6); residual at t=1, lambda {lambda}: {:.2e} |W| at 64x64 dt 1e-3, {:.2e} |W| at 128x128 dt 5e-4 (tol 1e-2, must shrink)",
            r.lyapunov.len(),
            rel[0],
            rel[1]
        ),
    )
}

// 5: critical mass on the disk
fn critical_mass() -> Result<Verdict> {
    let crit = 8.0 * PI;
    let fractions = [0.5, 0.7, 0.9, 1.1, 1.3, 1.5];
    let sc = Scenario {
        grid: GridSpec::radial_disk(1.0, 128),
        chi: 1.0,
        u_init: Preset::RadialGaussian { width: 0.05, target_mass: crit },
        v_init: VInit::Consistent,
        stepper: StepperConfig { t_end: 1.0, blowup_linf_factor: 5.0, ..StepperConfig::default() },
    };
    let masses: Vec<f64> = fractions.iter().map(|f| f * crit).collect();
    let base = blowup_scan(&sc, 0.0, &masses, &ScanOptions::default())?;
    let doubled_sc = Scenario { chi: 2.0, ..sc };
    let halved: Vec<f64> = masses.iter().map(|m| m / 2.0).collect();
    let doubled = blowup_scan(&doubled_sc, 0.0, &halved, &ScanOptions::default())?;
    let class = |m: f64| base.classification_of(m);
    let ok_classes = class(masses[0]) == Some(Classification::Bounded)
        && class(masses[2]) == Some(Classification::Bounded)
        && class(masses[5]) == Some(Classification::BlowupSuspected);
    let ratio = bracket_ratio(&base, &doubled);
    let ok_ratio = ratio.is_some_and(|r| (r - 0.5).abs() <= 0.15 * 0.5);
    let names: Vec<String> =
        base.entries.iter().map(|e| format!("{:.1}:{}", e.mass / crit, e.classification.name())).collect();
    let bracket = |r: &kslab_core::experiments::ScanReport| {
        r.bracket.map_or("none".to_string(), |(a, b)| format!("({:.2}, {:.2}) 8pi", a / crit, b / crit))
    };
    verdict(
        ok_classes && ok_ratio && !base.inversion && !doubled.inversion,
        format!(
            "chi 1 [{}] bracket {}; chi 2 bracket {}; ratio {} (0.5 +- 15%)",
            names.join(" "),
            bracket(&base),
            bracket(&doubled),
            ratio.map_or("none".into(), |r| format!("{r:.3}"))
        ),
    )
}

// 6: interval witnesses
fn witness_sweep() -> Result<Verdict> {
    let s = property_sweep(1000, 20240601);
    let ok = s.failures.is_empty() && s.min_margin > 0.0 && s.max_identity_error <= 1e-12;
    verdict(
        ok,
        format!(
            "{} cases, {} failures, min margin {:.2e}, max identity error {:.2e} (tol 1e-12)",
            s.cases,
            s.failures.len(),
            s.min_margin,
            s.max_identity_error
        ),
    )
}

// 7: heat decay and the maximum principle
fn heat_decay() -> Result<Verdict> {
    let grid = Arc::new(Grid::rectangle(PI, PI, 64, 64)?);
    let phi = Field::from_fn(grid.clone(), |x, _| x.cos())?;
    let reports = semigroup_empirical_check(
        &grid,
        &SemigroupCheckSpec::default(),
        &[TestDatum::Scalar { name: "cos x".into(), phi }],
        &[SemigroupEstimate::ZeroMean],
    )?;
    let rate = reports[0].decay_exponent;
    let ok_rate = (rate - 1.0).abs() <= 0.05;

    let u0 = kslab_core::sample_initial(
        &Preset::GaussianBump { center: (1.3, 1.7), width: 0.3, target_mass: SUBCRITICAL_MASS },
        &grid,
    )?;
    let cap = u0.linf();
    let dt = 1e-3;
    let mut heat = HeatMarcher::new(u0, dt)?;
    let mut over: f64 = 0.0;
    for k in 1..=2000 {
        over = over.max(heat.advance_to(k as f64 * dt)?.linf() - cap);
    }
    // the solve is exact up to the linear tolerance
    let ok_max = over <= 1e-10 * cap;
    verdict(
        ok_rate && ok_max,
        format!(
            "decay exponent {rate:.4} (1 +- 5%); max principle over 2000 steps: largest excess {:.2e} |u_init|_inf",
            over.max(0.0) / cap
        ),
    )
}

// 8: small-data barrier
fn small_data() -> Result<Verdict> {
    let sc = Scenario {
        grid: GridSpec::rectangle(PI, PI, 64, 64),
        chi: 1.0,
        u_init: Preset::CosinePerturbed { base: 1.0, amplitude: 0.5, mode: (1, 1) },
        v_init: VInit::Consistent,
        stepper: StepperConfig { t_end: 2.0, ..StepperConfig::default() },
    };
    let w = param_witness(3, 2.0, 4.0, Selector::Midpoint)?;
    let eps = 0.05;
    let rep = small_data_monitor(&sc, &w, eps, &[0.1, 0.01])?;
    let starts_at_zero = rep.series.iter().all(|s| s.deviations.first() == Some(&0.0));
    let worst = rep.series.iter().map(|s| s.max_deviation()).fold(0.0, f64::max);
    let inert = small_data_monitor(&Scenario { chi: 0.0, ..sc }, &w, eps, &[0.1, 0.01])?;
    let inert_worst = inert.series.iter().map(|s| s.max_deviation()).fold(0.0, f64::max);
    let ok = rep.held && starts_at_zero && inert_worst <= 1e-8 * eps;
    verdict(
        ok,
        format!(
            "theta {:.2}, eps {eps}: max deviation {worst:.3e} over lambda {{0.1, 0.01}}, t in [0, 2]; zero at t=0: {starts_at_zero}; chi=0 max deviation {inert_worst:.2e}",
            rep.theta
        ),
    )
}

// 9: orders of accuracy
fn scheme_orders() -> Result<Verdict> {
    let space = space_order(PI, PI, &[32, 64, 128], 0.5, 0.5)?;
    let sc = Scenario {
        grid: GridSpec::rectangle(PI, PI, 32, 32),
        chi: 1.0,
        u_init: Preset::CosinePerturbed { base: 1.0, amplitude: 0.2, mode: (1, 1) },
        v_init: VInit::Consistent,
        stepper: StepperConfig::default(),
    };
    let time = time_order(&sc, 0.1, &[0.02, 0.01, 0.005], 0.4)?;
    let ok = space.valid && time.valid && (space.order - 2.0).abs() <= 0.3 && (time.order - 1.0).abs() <= 0.2;
    verdict(ok, format!("space order {:.3} (2 +- 0.3), time order {:.3} (1 +- 0.2)", space.order, time.order))
}

// 10: twin runs
fn twins() -> Result<Verdict> {
    let mut sc = bump(64, 1.0);
    sc.stepper.linear_tol = 1e-12;
    let b = Preset::GaussianBump { center: (2.3, 0.8), width: 0.4, target_mass: 1.0 };
    let same = stability_twin(&sc, 0.0, &b)?;
    let a6 = stability_twin(&sc, 1e-6, &b)?;
    let a7 = stability_twin(&sc, 1e-7, &b)?;
    let lin = (a6.amplification / a7.amplification - 1.0).abs();
    let ok = same.bit_identical
        && [&a6, &a7]
            .iter()
            .all(|r| r.amplification.is_finite() && r.termination == Termination::Completed && !r.flagged)
        && lin <= 0.1;
    verdict(
        ok,
        format!(
            "delta 0 bit-identical: {}; amplification {:.4} at 1e-6, {:.4} at 1e-7, relative gap {lin:.2e} (tol 0.1); runs {} {}{}",
            same.bit_identical,
            a6.amplification,
            a7.amplification,
            a6.termination.name(),
            a7.termination.name(),
            a6.message.as_deref().map(|m| format!(" ({m})")).unwrap_or_default()
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let strict = std::env::var("KSLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    // criteria 3 and 4 read the same sweep
    let sweep: OnceCell<std::result::Result<SweepReport, String>> = OnceCell::new();
    let get_sweep = || -> Result<SweepReport> {
        sweep
            .get_or_init(|| {
                let opts = SweepOptions { t0: 0.1, ..SweepOptions::default() };
                lambda_sweep(&bump(128, 2.0), &[0.1, 0.05, 0.025, 0.0125], &opts).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(kslab_core::Error::Config)
    };

    type Check<'a> = (usize, &'a str, Box<dyn FnMut() -> Result<Verdict> + 'a>);
    let checks: Vec<Check> = vec![
        (1, "mass conservation", Box::new(mass_conservation)),
        (2, "lambda=0 structural limit", Box::new(lambda_zero_identity)),
        (3, "fast signal diffusion limit", Box::new(|| fast_diffusion(&get_sweep()?))),
        (4, "Lyapunov monotonicity", Box::new(|| lyapunov_identity(&get_sweep()?))),
        (5, "critical-mass bracket", Box::new(critical_mass)),
        (6, "interval witness property suite", Box::new(witness_sweep)),
        (7, "semigroup decay", Box::new(heat_decay)),
        (8, "small-data barrier", Box::new(small_data)),
        (9, "scheme orders", Box::new(scheme_orders)),
        (10, "uniqueness proxy", Box::new(twins)),
    ];

    let (mut passed, mut failed, mut errors) = (0, 0, 0);
    for (k, name, mut f) in checks {
        if !on(k) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        match out {
            Ok(v) if v.pass => {
                passed += 1;
                println!("PASS {k:>2} {name} [{secs:.1}s]: {}", v.detail);
            }
            Ok(v) => {
                failed += 1;
                println!("FAIL {k:>2} {name} [{secs:.1}s]: {}", v.detail);
            }
            Err(e) => {
                errors += 1;
                println!("FAIL {k:>2} {name} [{secs:.1}s]: error: {e}");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {errors} errors");
    if errors > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
