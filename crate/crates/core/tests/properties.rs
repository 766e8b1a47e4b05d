use std::sync::Arc;

use kslab_core::dynamics::Stepper;
use kslab_core::elliptic::solve_screened_poisson;
use kslab_core::mesh::{read_snapshot, write_snapshot};
use kslab_core::operators::{divergence, gradient_faces, laplacian_neumann};
use kslab_core::theory::{param_witness, Selector};
use kslab_core::{Field, Grid, PPState, StepperConfig};
use proptest::prelude::*;

fn grid(disk: bool, n: usize) -> Arc<Grid> {
    let pi = std::f64::consts::PI;
    Arc::new(if disk { Grid::radial_disk(1.0, n).unwrap() } else { Grid::rectangle(pi, 2.0, n, n + 3).unwrap() })
}

fn field_on(g: &Arc<Grid>, seed: &[f64]) -> Field {
    let vals = (0..g.len()).map(|k| 0.05 + seed[k % seed.len()] * (1.0 + (k as f64 * 0.37).sin().abs())).collect();
    Field::new(g.clone(), vals).unwrap()
}

fn grids() -> impl Strategy<Value = Arc<Grid>> {
    (any::<bool>(), 6usize..14).prop_map(|(d, n)| grid(d, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fused_laplacian_is_div_grad(g in grids(), seed in prop::collection::vec(0.0f64..3.0, 7)) {
        let f = field_on(&g, &seed);
        let fused = laplacian_neumann(&f);
        let composed = divergence(&gradient_faces(&f)).unwrap();
        prop_assert_eq!(fused.values(), composed.values());
        prop_assert!(fused.integrate().abs() <= 1e-11 * f.linf() * g.len() as f64);
    }

    #[test]
    fn screened_poisson_keeps_the_mean(g in grids(), seed in prop::collection::vec(0.0f64..3.0, 5)) {
        let u = field_on(&g, &seed);
        let v = solve_screened_poisson(&u, 1e-12).unwrap();
        prop_assert!((v.integrate() - u.integrate()).abs() <= 1e-9 * u.integrate());
        prop_assert!(v.min() >= 0.0);
    }

    #[test]
    fn a_step_conserves_mass_and_positivity(
        g in grids(),
        seed in prop::collection::vec(0.0f64..3.0, 5),
        lambda in prop_oneof![Just(0.0), 1e-3f64..1.0],
        chi in 0.0f64..2.0,
        dt in 1e-4f64..1e-2,
    ) {
        let u = field_on(&g, &seed);
        let mut s = PPState::consistent(u, lambda, chi, 1e-12).unwrap();
        let m0 = s.u.integrate();
        let cfg = StepperConfig { linear_tol: 1e-12, ..StepperConfig::default() };
        let mut stepper = Stepper::new();
        // the explicit flux needs the CFL bound; clip to it
        let dt = dt.min(kslab_core::dynamics::cfl_dt(&s, &cfg).unwrap());
        stepper.step(&mut s, dt, &cfg).unwrap();
        prop_assert!((s.u.integrate() - m0).abs() <= 1e-11 * m0);
        prop_assert!(s.u.min() >= 0.0);
        prop_assert!(s.v.min() >= 0.0);
    }

    #[test]
    fn witness_lies_in_its_intervals(n in 3u32..7, fp in 0.01f64..0.99, fq in 0.01f64..2.0, lower in any::<bool>()) {
        let nf = n as f64;
        let p = nf / 2.0 + fp * nf / 2.0;
        let q = nf * (1.0 + fq);
        let sel = if lower { Selector::LowerQuartile } else { Selector::Midpoint };
        let w = param_witness(n, p, q, sel).unwrap();
        prop_assert!(w.check().is_ok());
        prop_assert!(w.a > 0.0 && w.a < 1.0);
        prop_assert!(w.min_margin() > 0.0);
    }

    #[test]
    fn snapshots_round_trip(g in grids(), seed in prop::collection::vec(0.0f64..3.0, 4), t in 0.0f64..10.0) {
        let f = field_on(&g, &seed);
        let mut buf = Vec::new();
        write_snapshot(&f, t, &mut buf).unwrap();
        let (back, t_back) = read_snapshot(&buf[..]).unwrap();
        prop_assert_eq!(t_back, t);
        prop_assert_eq!(back.values(), f.values());
    }
}
