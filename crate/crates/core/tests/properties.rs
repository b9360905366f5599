use malab_core::bounds::{eval_theorem_bounds, log_grid, BoundConstants, BoundReport, ClosedForm, Modulus};
use malab_core::experiments::{measure_holder, mollify, random_polygon};
use malab_core::field::{Grid, ScalarField};
use malab_core::sections::first_section_height;
use malab_core::solver::{comparison_violation, grid_for, solve_on, solve_unit_on, Domain, SolverConfig};
use proptest::prelude::*;

fn small(n: usize) -> SolverConfig {
    SolverConfig { grid: n, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn bound_reports_replay_from_their_constants(h in 0.001f64..0.05, alpha in 0.2f64..0.9, d in 1e-6f64..1e-3, f_max in 1.0f64..2.0) {
        let m = Modulus::closed(ClosedForm::Holder { h, alpha }, log_grid(1e-7, 1.0, 50)).unwrap();
        let consts = BoundConstants { c5: 0.03 + h, ..Default::default() };
        let r = eval_theorem_bounds(&m, d, &consts, f_max, 0.4);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        let back: BoundReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        let again = eval_theorem_bounds(&m, back.d_bar, &back.constants, back.f_max, back.rho).unwrap();
        for (x, y) in [(r.hessian, again.hessian), (r.e_d, again.e_d), (r.hessian_difference.small, again.hessian_difference.small)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn mollified_data_satisfy_both_conditions(i in 6usize..24, jump in 0.0f64..0.5, off in -0.3f64..0.3, alpha in 0.2f64..0.9, seed in 0u64..100) {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let f = move |p: [f64; 2]| 1.0 + if p[0] > off { jump } else { 0.0 } + 0.1 * (p[0] - p[1]).abs().powf(alpha);
        let m = mollify(&f, &disk, &grid_for(&disk, 65).unwrap(), i, 0.4, seed).unwrap();
        let d = &m.diagnostics;
        prop_assert!(d.cond1_ok && d.cond2_ok, "{d:?}");
        prop_assert!(m.field.valid_nodes().all(|(_, _, v)| (1.0..=d.f_max).contains(&v)));
    }

    #[test]
    fn ordered_data_give_ordered_solutions(a in 0.3f64..1.0, b in 0.3f64..1.0, t in 0.0f64..3.2, k in -3.0f64..3.0, amp in 0.0f64..0.5) {
        let dom = Domain::ellipse([0.0, 0.0], [a.max(b), a.min(b)], t).unwrap();
        let grid = grid_for(&dom, 33).unwrap();
        let f1 = move |p: [f64; 2]| 1.0 + 0.3 * (k * p[0]).sin().abs();
        let f2 = move |p: [f64; 2]| f1(p) + amp * (1.0 + (k * p[1]).cos()) / 2.0;
        let (u1, _) = solve_on(&dom, &grid, &f1, &|_| 0.0, &small(33)).unwrap();
        let (u2, _) = solve_on(&dom, &grid, &f2, &|_| 0.0, &small(33)).unwrap();
        prop_assert!(comparison_violation(&u1, &u2).unwrap() <= 1e-7);
    }

    #[test]
    fn unit_solutions_are_convex_and_bracketed(seed in 0u64..10_000) {
        let dom = Domain::polygon(random_polygon(seed).unwrap()).unwrap();
        let (w, rep) = solve_unit_on(&dom, &grid_for(&dom, 65).unwrap(), &small(65)).unwrap();
        prop_assert_eq!(rep.convexity_violations, 0);
        let min = w.min().unwrap().0;
        prop_assert!((-2.0 - 5e-3..=-0.5 + 5e-3).contains(&min), "min {min}");
    }

    #[test]
    fn first_height_is_monotone_in_rho(c in 0.5f64..2.0, e in -0.4f64..0.4, x0 in -0.2f64..0.2, r1 in 0.1f64..0.3, dr in 0.01f64..0.2) {
        let g = Grid::covering([-1.0, -1.0], [1.0, 1.0], 129).unwrap();
        let v = ScalarField::from_fn(g, |p| 0.5 * (c * p[0] * p[0] + 2.0 * e * p[0] * p[1] + p[1] * p[1]) + 0.05 * p[0].powi(4), |p| p[0].hypot(p[1]) <= 1.0).unwrap();
        let x = [x0, 0.0];
        let h1 = first_section_height(&v, x, r1).unwrap();
        let h2 = first_section_height(&v, x, r1 + dr).unwrap();
        prop_assert!(h1 > 0.0 && h1 <= h2 * (1.0 + 1e-9));
    }

    #[test]
    fn seminorm_sampling_is_deterministic(seed in 0u64..1000) {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let g = grid_for(&disk, 65).unwrap();
        let v = ScalarField::from_fn(g, |p| (0.5 * (p[0] * p[0] + p[1] * p[1])).exp(), |p| disk.contains(p)).unwrap();
        let a = measure_holder(&v, &disk, 0.3, 2, 0.5, seed).unwrap();
        let b = measure_holder(&v, &disk, 0.3, 2, 0.5, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
