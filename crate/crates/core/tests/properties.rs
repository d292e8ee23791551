//! Cross-module properties of the grid, integrator, diagnostics and sweeps.

use std::f64::consts::PI;

use proptest::prelude::*;

use skt_core::diagnostics::{compute_q, energy_ea, energy_eb, eps_init, fast_share_identity_residual};
use skt_core::experiments::{convergence_sweep, fit_rate, to_csv_string, RateReport, SweepPlan};
use skt_core::grid::{h1_seminorm, integrate, l2_norm, sobolev_seminorm, Field, Grid, InteriorMask};
use skt_core::integrator::{
    relax_exact, run, run_observed, step_micro, LimitSystem, MicroSystem, StepConfig,
};
use skt_core::model::{build_hk, well_prepared_split, MicroState, SktParams};

fn arb_grid() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (0.2f64..5.0, 3usize..40).prop_map(|(l, n)| Grid::line(l, n).unwrap()),
        (0.2f64..5.0, 0.2f64..5.0, 3usize..15, 3usize..15)
            .prop_map(|(a, b, n, m)| Grid::rect([a, b], [n, m]).unwrap()),
    ]
}

fn smooth(g: Grid, a: f64, b: f64) -> Field {
    let (lx, ly) = (g.extent(0), if g.dim() == 2 { g.extent(1) } else { 1.0 });
    Field::from_fn(g, |p| a + b * (PI * p[0] / lx).cos() + 0.3 * (PI * p[1] / ly).sin())
}

proptest! {
    #[test]
    fn trapezoid_rule_is_exact_on_affine_functions(
        g in arb_grid(), c0 in -3.0f64..3.0, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0,
    ) {
        let f = Field::from_fn(g, |p| c0 + c1 * p[0] + c2 * p[1]);
        let (lx, ly) = (g.extent(0), if g.dim() == 2 { g.extent(1) } else { 0.0 });
        let exact = if g.dim() == 1 {
            c0 * lx + c1 * lx * lx / 2.0
        } else {
            (c0 + c1 * lx / 2.0 + c2 * ly / 2.0) * lx * ly
        };
        let got = integrate(&f, &InteriorMask::full(g)).unwrap();
        let scale = (c0.abs() + c1.abs() * lx + c2.abs() * ly) * g.measure();
        prop_assert!((got - exact).abs() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn l2_norm_is_homogeneous(g in arb_grid(), c in -50.0f64..50.0, a in -2.0f64..2.0) {
        let f = smooth(g, a, 1.0);
        let m = InteriorMask::full(g);
        let lhs = l2_norm(&f.scale(c), &m).unwrap();
        let rhs = c.abs() * l2_norm(&f, &m).unwrap();
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn shrinking_the_mask_never_grows_the_norm(
        g in arb_grid(), m1 in 0.0f64..0.45, m2 in 0.0f64..0.45, a in -2.0f64..2.0,
    ) {
        let (small, large) = if m1 >= m2 { (m1, m2) } else { (m2, m1) };
        let f = smooth(g, a, 1.5);
        let inner = l2_norm(&f, &InteriorMask::new(g, small).unwrap()).unwrap();
        let outer = l2_norm(&f, &InteriorMask::new(g, large).unwrap()).unwrap();
        prop_assert!(inner <= outer * (1.0 + 1e-14));
    }

    #[test]
    fn first_sobolev_seminorm_is_the_h1_seminorm(n in 20usize..60, a in -2.0f64..2.0, k in 1.0f64..3.0) {
        let g = Grid::line(1.0, n).unwrap();
        let f = Field::from_fn(g, |p| a + (k * PI * p[0]).cos());
        let m = InteriorMask::new(g, 0.2).unwrap();
        let s = sobolev_seminorm(&f, 1, &m).unwrap();
        let h = h1_seminorm(&f, &m).unwrap();
        prop_assert!((s - h).abs() <= 1e-12 * h);
    }

    #[test]
    fn relaxation_decreases_q_at_every_node(
        vals in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0, 0.0f64..2.0), 9),
        eps in 1e-4f64..1.0, dt in 0.0f64..0.5,
    ) {
        let g = Grid::line(1.0, 9).unwrap();
        let ua = Field::new(g, vals.iter().map(|x| x.0).collect()).unwrap();
        let ub = Field::new(g, vals.iter().map(|x| x.1).collect()).unwrap();
        let v = Field::new(g, vals.iter().map(|x| x.2).collect()).unwrap();
        let spec = build_hk(&SktParams::default(), 2.0).unwrap();
        let s0 = MicroState::new(0.0, ua, ub, v.clone(), eps).unwrap();
        let (a, b) = relax_exact(&s0.ua, &s0.ub, &v, &spec, eps, dt).unwrap();
        let s1 = MicroState { ua: a, ub: b, ..s0.clone() };
        let (q0, q1) = (compute_q(&s0, &spec), compute_q(&s1, &spec));
        for i in 0..9 {
            prop_assert!(q1.values()[i].abs() <= q0.values()[i].abs() * (1.0 + 1e-12) + 1e-15);
            let before = s0.ua.values()[i] + s0.ub.values()[i];
            let after = s1.ua.values()[i] + s1.ub.values()[i];
            prop_assert!((after - before).abs() <= 1e-15 * before.max(f64::MIN_POSITIVE) + f64::EPSILON * before);
        }
    }

    #[test]
    fn energies_are_nonnegative(a in 0.5f64..2.0, b in -0.4f64..0.4, eps in 1e-3f64..1.0) {
        let g = Grid::rect([1.0, 1.0], [9, 9]).unwrap();
        let spec = build_hk(&SktParams::default(), 2.0).unwrap();
        let ua = smooth(g, a, b);
        let ub = smooth(g, a, -b);
        let v = smooth(g, 1.0, 0.5 * b);
        let s = MicroState::new(0.0, ua, ub, v, eps).unwrap();
        prop_assert!(energy_ea(&s, &spec) >= 0.0);
        prop_assert!(energy_eb(&s, &spec) >= 0.0);
    }

    #[test]
    fn eps_init_is_nondecreasing_in_l(a in -1.0f64..1.0, k in 0.5f64..4.0, n in 11usize..40) {
        let g = Grid::line(1.0, n).unwrap();
        let q = Field::from_fn(g, |p| a + (k * PI * p[0]).cos());
        let e: Vec<f64> = (-1..=3).map(|l| eps_init(l, &q).unwrap()).collect();
        for w in e.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn well_prepared_split_has_no_deviation(a in 0.2f64..3.0, b in -0.19f64..0.19, c in 0.0f64..2.0) {
        let g = Grid::line(2.0, 17).unwrap();
        let spec = build_hk(&SktParams::default(), 3.0).unwrap();
        let u = smooth(g, a, b);
        let v = Field::from_fn(g, |p| c * (1.0 + 0.5 * (PI * p[0]).cos()));
        let (ua, ub) = well_prepared_split(&u, &v, &spec).unwrap();
        let s = MicroState::new(0.0, ua, ub, v, 0.1).unwrap();
        let q = compute_q(&s, &spec);
        let scale = spec.s * u.max();
        prop_assert!(q.values().iter().all(|x| x.abs() <= 1e-13 * scale));
    }
}

#[test]
fn linear_work_does_not_depend_on_eps() {
    let g = Grid::rect([1.0, 1.0], [17, 17]).unwrap();
    let mut counts = Vec::new();
    for eps in [1e-2, 1e-4, 1e-6] {
        let plan = SweepPlan::new(g, 0.02, 2e-3, vec![eps]);
        let sys = MicroSystem {
            params: plan.params,
            spec: plan.spec().unwrap(),
            cfg: plan.step,
        };
        let traj = run(&sys, plan.initial_micro(eps, true).unwrap(), 0.02, 2e-3, &[]).unwrap();
        assert!(traj.stats.linear_iterations > 0);
        counts.push(traj.stats.linear_iterations as f64);
    }
    let max = counts.iter().cloned().fold(0.0, f64::max);
    let min = counts.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 1.1, "iteration counts {counts:?}");
}

#[test]
fn max_v_does_not_grow_without_v_growth() {
    let mut p = SktParams::default();
    p.r_v = 0.0;
    let g = Grid::line(1.0, 65).unwrap();
    let mut plan = SweepPlan::new(g, 1.0, 1e-2, vec![1e-2]);
    plan.params = p;
    let sys = MicroSystem {
        params: p,
        spec: plan.spec().unwrap(),
        cfg: plan.step,
    };
    let mut last = f64::INFINITY;
    run_observed(&sys, plan.initial_micro(1e-2, false).unwrap(), 1.0, 1e-2, &[], |s, _| {
        let m = s.v.max();
        assert!(m <= last + 1e-10, "max v grew from {last} to {m} at t = {}", s.t);
        last = m;
        Ok(())
    })
    .unwrap();
}

#[test]
fn limit_system_max_v_does_not_grow_either() {
    let mut p = SktParams::default();
    p.r_v = 0.0;
    let g = Grid::line(1.0, 65).unwrap();
    let mut plan = SweepPlan::new(g, 1.0, 1e-2, vec![1e-2]);
    plan.params = p;
    let sys = LimitSystem { params: p, cfg: plan.step };
    let mut last = f64::INFINITY;
    run_observed(&sys, plan.initial_limit(), 1.0, 1e-2, &[], |s, _| {
        assert!(s.v.max() <= last + 1e-10);
        last = s.v.max();
        Ok(())
    })
    .unwrap();
}

#[test]
fn fast_share_identity_along_a_trajectory() {
    let g = Grid::line(1.0, 65).unwrap();
    let plan = SweepPlan::new(g, 0.1, 1e-3, vec![1e-2]);
    let spec = plan.spec().unwrap();
    let micro = MicroSystem {
        params: plan.params,
        spec,
        cfg: plan.step,
    };
    let limit = LimitSystem {
        params: plan.params,
        cfg: plan.step,
    };
    let samples = plan.sample_times();
    let m = run(&micro, plan.initial_micro(1e-2, false).unwrap(), 0.1, 1e-3, &samples).unwrap();
    let l = run(&limit, plan.initial_limit(), 0.1, 1e-3, &samples).unwrap();
    assert_eq!(m.sample_times, l.sample_times);
    for (a, b) in m.snapshots.iter().zip(&l.snapshots) {
        assert!(fast_share_identity_residual(a, b, &spec).unwrap() <= 1e-12);
    }
}

#[test]
fn micro_step_is_deterministic() {
    let g = Grid::rect([1.0, 1.0], [9, 13]).unwrap();
    let plan = SweepPlan::new(g, 0.1, 1e-3, vec![0.05]);
    let spec = plan.spec().unwrap();
    let s0 = plan.initial_micro(0.05, false).unwrap();
    let cfg = StepConfig::new(1e-3);
    let (a, _) = step_micro(&s0, &plan.params, &spec, &cfg).unwrap();
    let (b, _) = step_micro(&s0, &plan.params, &spec, &cfg).unwrap();
    assert_eq!(a, b);
}

fn sweep(well_prepared: bool) -> RateReport {
    let eps: Vec<f64> = (0..6).map(|k| 10f64.powf(-1.0 - 0.5 * k as f64)).collect();
    let mut plan = SweepPlan::new(Grid::line(1.0, 129).unwrap(), 0.25, 5e-5, eps);
    plan.well_prepared = well_prepared;
    convergence_sweep(&plan).unwrap()
}

#[test]
fn sweep_properties() {
    let ill = sweep(false);
    let wp = sweep(true);
    assert!(!ill.reference_limited && !wp.reference_limited);

    // determinism
    assert_eq!(to_csv_string(&ill), to_csv_string(&sweep(false)));

    // well-prepared data never does worse
    for (a, b) in wp.rows.iter().zip(&ill.rows) {
        assert_eq!(a.eps, b.eps);
        assert!(a.u_l2_l2 <= b.u_l2_l2, "eps {}: {} > {}", a.eps, a.u_l2_l2, b.u_l2_l2);
    }

    // dissipation stays bounded across each decade
    for w in ill.rows.windows(3) {
        let d: Vec<f64> = w.iter().map(|r| r.dissipation).collect();
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min <= 5.0, "dissipation {d:?}");
    }

    // dropping the largest eps barely moves the fitted slope
    let pts: Vec<(f64, f64)> = wp.rows.iter().map(|r| (r.eps, r.u_l2_l2)).collect();
    let all = fit_rate(&pts, None).unwrap();
    let tail = fit_rate(&pts[1..], None).unwrap();
    assert!((all.slope - tail.slope).abs() < 0.1, "{} vs {}", all.slope, tail.slope);
}

#[test]
fn two_dimensional_micro_runs_approach_the_limit() {
    let g = Grid::rect([1.0, 0.5], [17, 13]).unwrap();
    let plan = SweepPlan::new(g, 0.05, 1e-3, vec![1e-2, 1e-4]);
    let full = InteriorMask::full(g);
    let limit = run(
        &LimitSystem { params: plan.params, cfg: plan.step },
        plan.initial_limit(),
        0.05,
        2.5e-4,
        &[],
    )
    .unwrap();
    let mut errs = Vec::new();
    for &eps in &plan.eps_list {
        let sys = MicroSystem {
            params: plan.params,
            spec: plan.spec().unwrap(),
            cfg: plan.step,
        };
        let m = run(&sys, plan.initial_micro(eps, true).unwrap(), 0.05, 1e-3, &[]).unwrap();
        errs.push(l2_norm(&m.last().total().sub(&limit.last().u).unwrap(), &full).unwrap());
    }
    assert!(errs[1] < errs[0], "{errs:?}");
    assert!(errs[1] < 5e-3, "{errs:?}");
}
