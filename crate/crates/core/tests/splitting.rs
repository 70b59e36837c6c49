use std::collections::BTreeMap;
use std::f64::consts::PI;

use melnikov_core::phase::{catalog, Hamiltonian, SystemDef};
use melnikov_core::splitting::{
    first_order_check, gap_at, geometry, manifold_polyline, perturbed_fixed_point, Branch, Side, SplitOptions,
};

fn pendulum() -> SystemDef {
    catalog("forced-pendulum", &BTreeMap::new()).unwrap()
}

fn m_closed(t0: f64) -> f64 {
    2.0 * PI / (PI / 2.0).cosh() * t0.sin()
}

#[test]
fn fixed_point_continuation() {
    let s = pendulum();
    let o = SplitOptions::default();
    assert_eq!(perturbed_fixed_point(&s, 0.0, 0.3, &[0.0, 0.0], &o).unwrap(), vec![0.0, 0.0]);
    let fp = perturbed_fixed_point(&s, 1e-3, 0.3, &[0.0, 0.0], &o).unwrap();
    assert!(fp[0].hypot(fp[1]) < 1e-2);
    assert!(perturbed_fixed_point(&s, 0.5, 0.3, &[0.0, 0.0], &o).is_err());
}

#[test]
fn unperturbed_curves_trace_the_separatrix() {
    let s = pendulum();
    let o = SplitOptions::default();
    let g = geometry(&s).unwrap();
    let ub = Branch::new(&s, Side::Unstable, 0.0, 0.0, &[0.0, 0.0], &[0.0, 0.0], g.orient.0, &o).unwrap();
    let sb = Branch::new(&s, Side::Stable, 0.0, 0.0, &[0.0, 0.0], &g.lift, g.orient.1, &o).unwrap();
    for b in [&ub, &sb] {
        let line = manifold_polyline(&s, b, 4.0, &o).unwrap();
        assert!(!line.truncated);
        let mut checked = 0;
        for p in &line.points {
            if p[0] > 0.05 && p[0] < 2.0 * PI - 0.05 {
                assert!((p[1] - 2.0 * (p[0] / 2.0).sin()).abs() < 1e-6, "{p:?}");
                checked += 1;
            }
        }
        assert!(checked > 20);
        for w in line.points.windows(2) {
            assert!(((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt() <= o.refine_max + 1e-12);
        }
    }
    assert!(gap_at(&s, &g, 0.0, 0.0, &o).unwrap().abs() < 1e-9);
}

#[test]
fn gap_follows_the_first_order_term() {
    let s = pendulum();
    let o = SplitOptions::default();
    let g = geometry(&s).unwrap();
    let eps = 1e-3;
    let top = gap_at(&s, &g, PI / 2.0, eps, &o).unwrap() / eps;
    assert!((top - m_closed(PI / 2.0)).abs() < 0.05 * 2.504088, "{top}");
    // Sign flips across the zero at t0 = pi.
    let before = gap_at(&s, &g, PI - 0.3, eps, &o).unwrap();
    let after = gap_at(&s, &g, PI + 0.3, eps, &o).unwrap();
    assert!(before > 0.0 && after < 0.0, "{before} {after}");
    let h = s.hamiltonian(Hamiltonian::H0, &[PI, 2.0], 0.0).unwrap();
    assert!((h - 1.0).abs() < 1e-15);
}

#[test]
fn residual_scales_with_eps() {
    let s = pendulum();
    let phases: Vec<f64> = (0..5).map(|j| PI / 2.0 + j as f64 * 2.0 * PI / 5.0).collect();
    let amp = 2.0 * PI / (PI / 2.0).cosh();
    let r = first_order_check(&s, &phases, &[1e-2, 1e-3], &m_closed, amp, &SplitOptions::default()).unwrap();
    assert!(r.max_deviation(1e-3) < 0.05, "{}", r.to_json());
    let ratio = r.residual_ratio();
    assert!((5.0..=20.0).contains(&ratio), "{ratio} {}", r.to_json());
    assert!((0.8..=1.2).contains(&r.order), "{}", r.order);
}
