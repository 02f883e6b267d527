use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use pluripot::capacity::{capacity, CapacityOrder};
use pluripot::dirichlet::{ma_residual_l1, solve_c1};
use pluripot::field::{sample, ScalarField};
use pluripot::grid::{make_domain, make_grid, region_from_predicate, Domain, DomainKind, Grid, RadialSet, RegionMask};
use pluripot::lab::{theorem1_experiment, theorem3_experiment, ConvergenceOptions, ConvergenceReport};
use pluripot::measure::{ma_auto, ma_smooth, mixed_ma, pair_on, TestFunctionBank};
use pluripot::model::parse_model;
use pluripot::psh::{check_psh, psh_envelope_with, EnvelopeOptions, Scheme};

fn grid(n: usize, res: usize) -> Arc<Grid> {
    make_grid(&Domain::unit_ball(n).unwrap(), res).unwrap()
}

fn field(g: &Arc<Grid>, text: &str) -> ScalarField {
    sample(&parse_model(text).unwrap(), g).unwrap()
}

fn fast() -> ProptestConfig {
    ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() }
}

#[test]
fn mask_volume_error_is_first_order() {
    let r = 0.61;
    let exact = PI * r * r;
    let mut worst: f64 = 0.0;
    for res in [32, 64, 128, 256] {
        let g = grid(1, res);
        let m = region_from_predicate(&g, |x| x[0].hypot(x[1]) <= r);
        worst = worst.max((m.volume() - exact).abs() / g.spacing());
    }
    // empirical constant of the first-order boundary error
    assert!(worst < 2.0 * PI * r, "C = {worst}");
}

#[test]
fn envelope_is_a_fixed_point_of_one_sweep() {
    let g = grid(1, 32);
    let obstacle = ScalarField::from_fn(&g, |x| if x[0].hypot(x[1] - 0.2) < 0.3 { -1.0 } else { 0.0 });
    let tol = 1e-10;
    let opts = EnvelopeOptions { radial_lane: false, tol_stop: tol, ..Default::default() };
    let env = psh_envelope_with(&obstacle, &opts).unwrap().field;
    let once = EnvelopeOptions { radial_lane: false, tol_stop: tol, scheme: Scheme::Jacobi, max_sweeps: 1, omega: None };
    let again = psh_envelope_with(&env, &once).unwrap().field;
    assert!(again.sup_distance(&env).unwrap() <= tol);
}

#[test]
fn mollified_shell_mass_on_annulus() {
    let g = grid(1, 256);
    let eps = 8.0 * g.spacing();
    let u = ScalarField::from_fn(&g, |x| {
        let s = x[0].hypot(x[1]).max(1e-300).ln();
        let (a, b) = (s / eps, -1.0 / eps);
        let m = a.max(b);
        eps * (m + ((a - m).exp() + (b - m).exp()).ln())
    });
    let mu = ma_smooth(&u).unwrap();
    let r0 = (-1.0f64).exp();
    let annulus = RegionMask::radial(&g, RadialSet::from_intervals(vec![[r0 * (-0.5f64).exp(), r0 * 0.5f64.exp()]]));
    let got = pair_on(&1.0, &mu, Some(&annulus)).unwrap();
    let model = ma_auto(&field(&g, "max(log(abs(z)), -1)")).unwrap();
    let want = pair_on(&1.0, &model, Some(&annulus)).unwrap();
    assert_relative_eq!(want, 2.0 * PI, max_relative = 1e-12);
    assert!((got - want).abs() < 0.02 * want, "{got} vs {want}");
}

#[test]
fn monotone_limit_pairings_improve_monotonically() {
    let g = grid(1, 64);
    let bank = TestFunctionBank::standard(&g).unwrap();
    let limit = ma_auto(&field(&g, "abs2(z) - 1")).unwrap();
    for b in &bank.bumps {
        let target = pair_on(b, &limit, None).unwrap();
        let errs: Vec<f64> = [1, 2, 4, 8, 16]
            .iter()
            .map(|k| {
                let u = field(&g, &format!("{}*(abs2(z) - 1)", 1.0 + 1.0 / *k as f64));
                (pair_on(b, &ma_auto(&u).unwrap(), None).unwrap() - target).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{}: {errs:?}", b.name);
    }
}

#[test]
fn capacity_decreases_as_the_domain_grows() {
    let r = 0.3;
    let mut last = f64::INFINITY;
    for big in [1.0, 1.5, 2.0, 3.0] {
        let dom = make_domain(DomainKind::Ball, 1, big, &[]).unwrap();
        let g = make_grid(&dom, 64).unwrap();
        let c = capacity(&RegionMask::radial(&g, RadialSet::ball(r)), &g, CapacityOrder::FullN).unwrap().value;
        assert!(c <= last + 1e-10);
        assert_relative_eq!(c, 2.0 * PI / (big / r).ln(), max_relative = 1e-9);
        last = c;
    }
}

#[test]
fn grid_refinement_gap_shrinks() {
    let gaps: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&res| {
            let g = grid(1, res);
            let k = region_from_predicate(&g, |x| (x[0] - 0.2).hypot(x[1]) <= 0.3);
            capacity(&k, &g, CapacityOrder::FullN).unwrap().refinement_gap
        })
        .collect();
    eprintln!("refinement gaps {gaps:?}");
    let shrink = gaps[0] / gaps[2];
    // over two doublings: at least 1.5x per doubling on average
    assert!(shrink >= 1.5 * 1.5, "{gaps:?}");
}

#[test]
fn verdicts_survive_serialization() {
    let g = grid(1, 32);
    let idx = vec![1, 2, 4, 8, 16];
    let u = field(&g, "abs2(z) - 1");
    let seq: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("{}*(abs2(z) - 1)", 1.0 + 1.0 / *j as f64))).collect();
    let a = theorem1_experiment(&seq, &idx, &u, &RegionMask::ball(&g, 0.9), CapacityOrder::FullN, &ConvergenceOptions::default()).unwrap();
    let zero = field(&g, "0");
    let kinks: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("max({j}*log(abs(z)), -1)"))).collect();
    let b = theorem3_experiment(&kinks, &idx, &zero, CapacityOrder::InnerNMinus1, &ConvergenceOptions::default()).unwrap();
    for rep in [a, b] {
        let back: ConvergenceReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert!(back.verdicts_consistent());
        assert_eq!(back.recomputed(), rep.recomputed());
        assert_eq!(back, rep);
    }
}

#[test]
fn poisson_round_trip_battery() {
    let g = grid(1, 64);
    let zero = field(&g, "0");
    for f in ["4", "4 + re(z)", "2 + abs2(z)", "1 + 3*abs2(z) - im(z)"] {
        let f = field(&g, f);
        let u = solve_c1(&f, &zero).unwrap().field;
        let l1 = g.sum(|i, _, _| if g.is_interior(i) { f.value(i).abs() } else { 0.0 }) * g.cell_volume();
        let r = ma_residual_l1(&u, &f).unwrap();
        assert!(r <= 10.0 * g.spacing() * l1, "{r} > {}", 10.0 * g.spacing() * l1);
    }
}

proptest! {
    #![proptest_config(fast())]

    #[test]
    fn weaker_predicate_gives_superset(a in 0.05f64..0.9, extra in 0.0f64..0.5) {
        let g = grid(1, 24);
        let small = region_from_predicate(&g, |x| x[0].hypot(x[1]) < a);
        let large = region_from_predicate(&g, |x| x[0].hypot(x[1]) < a + extra);
        for i in 0..g.len() {
            prop_assert!(!small.contains(i) || large.contains(i));
        }
    }

    #[test]
    fn envelope_monotone_in_obstacle(cx in -0.4f64..0.4, cy in -0.4f64..0.4, r in 0.1f64..0.4, lift in 0.0f64..1.0) {
        let g = grid(1, 24);
        let o1 = ScalarField::from_fn(&g, |x| if (x[0] - cx).hypot(x[1] - cy) < r { -1.0 } else { 0.0 });
        let o2 = ScalarField::from_fn(&g, |x| if (x[0] - cx).hypot(x[1] - cy) < r { -1.0 + lift } else { 0.0 });
        let opts = EnvelopeOptions { radial_lane: false, tol_stop: 1e-12, ..Default::default() };
        let e1 = psh_envelope_with(&o1, &opts).unwrap().field;
        let e2 = psh_envelope_with(&o2, &opts).unwrap().field;
        for i in 0..g.len() {
            prop_assert!(e1.value(i) <= e2.value(i) + 1e-10);
        }
    }

    #[test]
    fn psh_test_is_max_stable(a in 0.1f64..2.0, b in -1.0f64..1.0, c in 0.2f64..3.0, d in 0.1f64..1.5, p in -0.3f64..0.3) {
        let g = grid(2, 12);
        let f = field(&g, &format!("{a}*(abs2(z1) + abs2(z2)) + {b}*re(z1)"));
        let h = field(&g, &format!("max({c}*log(abs(z1 - {p})), -{d})"));
        let tol = 1e-9;
        let m = f.max(&h).unwrap();
        if check_psh(&f, tol).is_psh_within && check_psh(&h, tol).is_psh_within {
            prop_assert!(check_psh(&m, tol).is_psh_within);
        }
    }

    #[test]
    fn ma_ignores_pluriharmonic_terms(a in 0.2f64..2.0, b in -1.0f64..1.0, c in -1.0f64..1.0, e in -0.3f64..0.3) {
        let g = grid(2, 10);
        let u = field(&g, &format!("{a}*abs2(z1) + abs2(z2)"));
        let w = field(&g, &format!("{a}*abs2(z1) + abs2(z2) + {b}*re(z1) + {c}*im(z2) + {e}*(re(z1)*re(z2) - im(z1)*im(z2))"));
        let (mu, mw) = (ma_smooth(&u).unwrap(), ma_smooth(&w).unwrap());
        let scale = mu.density().iter().fold(0.0f64, |m, x| m.max(*x));
        for (x, y) in mu.density().iter().zip(mw.density()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn ma_scales_like_power_n(c in 0.1f64..5.0, a in 0.2f64..2.0) {
        let g = grid(2, 10);
        let u = field(&g, &format!("{a}*abs2(z1) + abs2(z2) + 0.3*abs2(z1)*abs2(z2)"));
        let mu = ma_smooth(&u).unwrap();
        let mc = ma_smooth(&u.scale(c)).unwrap();
        for (x, y) in mu.density().iter().zip(mc.density()) {
            prop_assert!((c * c * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn mixed_ma_is_symmetric(a in 0.2f64..2.0, b in 0.2f64..2.0) {
        let g = grid(2, 10);
        let u = field(&g, &format!("{a}*abs2(z1) + abs2(z2)"));
        let v = field(&g, &format!("abs2(z1) + {b}*abs2(z2) + 0.2*abs2(z1)*abs2(z2)"));
        let ab = mixed_ma(&[&u, &v]).unwrap();
        let ba = mixed_ma(&[&v, &u]).unwrap();
        prop_assert_eq!(ab.density(), ba.density());
    }

    #[test]
    fn capacity_monotone_in_the_set(r1 in 0.05f64..0.6, grow in 0.0f64..0.1, inner in prop::bool::ANY) {
        let g = grid(2, 8);
        let order = if inner { CapacityOrder::InnerNMinus1 } else { CapacityOrder::FullN };
        let small = capacity(&RegionMask::radial(&g, RadialSet::ball(r1)), &g, order).unwrap().value;
        let large = capacity(&RegionMask::radial(&g, RadialSet::ball(r1 + grow)), &g, order).unwrap().value;
        prop_assert!(small <= large + 1e-10);
    }

    #[test]
    fn capacity_subadditive(a in 0.05f64..0.4, b in 0.45f64..0.75, w in 0.02f64..0.1) {
        let g = grid(1, 32);
        let k1 = RegionMask::radial(&g, RadialSet::from_intervals(vec![[a, a + w]]));
        let k2 = RegionMask::radial(&g, RadialSet::from_intervals(vec![[b, b + w]]));
        let both = k1.union(&k2).unwrap();
        let c = |k: &RegionMask| capacity(k, &g, CapacityOrder::FullN).unwrap().value;
        prop_assert!(c(&both) <= c(&k1) + c(&k2) + 1e-10);
    }

    #[test]
    fn no_competitor_beats_the_capacity(r in 0.1f64..0.8, c in 0.05f64..1.0, a in 0.1f64..5.0, b in 0.05f64..1.0) {
        let g = grid(1, 64);
        let k = RegionMask::radial(&g, RadialSet::ball(r));
        let cap = capacity(&k, &g, CapacityOrder::FullN).unwrap().value;
        // competitors with values in (-1, 0)
        let competitors = [
            format!("{}*(abs2(z) - 1)", c * 0.999),
            format!("max({a}*log(abs(z)), -{})", b * 0.999),
        ];
        for w in &competitors {
            let mass = pair_on(&1.0, &ma_auto(&field(&g, w)).unwrap(), Some(&k)).unwrap();
            prop_assert!(mass <= cap + 1e-9 * (1.0 + cap), "{} gives {} > {}", w, mass, cap);
        }
    }

    #[test]
    fn poisson_comparison_principle(c1 in 0.5f64..4.0, extra in 0.0f64..2.0, slope in -0.4f64..0.4) {
        let g = grid(1, 32);
        let zero = field(&g, "0");
        let f1 = field(&g, &format!("{c1} + {slope}*re(z)"));
        let f2 = field(&g, &format!("{} + {slope}*re(z)", c1 + extra));
        let u1 = solve_c1(&f1, &zero).unwrap().field;
        let u2 = solve_c1(&f2, &zero).unwrap().field;
        for i in 0..g.len() {
            if g.is_interior(i) {
                prop_assert!(u1.value(i) >= u2.value(i) - 1e-9);
            }
        }
    }
}
