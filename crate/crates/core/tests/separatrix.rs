use std::collections::BTreeMap;
use std::f64::consts::PI;

use melnikov_core::dynamics::flow_to;
use melnikov_core::ode::OdeOptions;
use melnikov_core::phase::{catalog, extend_periodic, Hamiltonian, SystemDef};
use melnikov_core::separatrix::{
    analytic_separatrix, conserved_frame, numeric_separatrix, paper_example_separatrix, EndOrbit, OrbitKind,
    SeparatrixOptions, ASYM_TOL,
};

fn sys(name: &str) -> SystemDef {
    catalog(name, &BTreeMap::new()).unwrap()
}

#[test]
fn closed_forms_solve_hamiltons_equations() {
    for name in ["pendulum", "duffing"] {
        let s = sys(name);
        let o = analytic_separatrix(&s).unwrap();
        let h = 1e-5;
        for i in 0..200 {
            let t = -10.0 + 0.1 * i as f64;
            let (a, b) = (o.state(t - h), o.state(t + h));
            let v = s.vector_field(Hamiltonian::H0, &o.state(t), 0.0).unwrap();
            for k in 0..2 {
                let fd = (b[k] - a[k]) / (2.0 * h);
                assert!((fd - v[k]).abs() < 1e-8, "{name} s={t} k={k}");
            }
            let e = s.hamiltonian(Hamiltonian::H0, &o.state(t), 0.0).unwrap();
            assert!((e - o.energy).abs() < 1e-12);
        }
    }
    let d = analytic_separatrix(&sys("duffing")).unwrap();
    let y = d.state(0.0);
    assert!((y[0] - 2f64.sqrt()).abs() < 1e-15 && y[1] == 0.0);
}

#[test]
fn pendulum_numeric_matches_closed_form() {
    let s = sys("pendulum");
    let exact = analytic_separatrix(&s).unwrap();
    let saddle = EndOrbit::equilibrium(&s, &[0.0, 0.0]).unwrap();
    let branch = if saddle.unstable[1] > 0.0 { 1.0 } else { -1.0 };
    let num = numeric_separatrix(&s, &saddle, &saddle, branch, &SeparatrixOptions::default()).unwrap();
    assert_eq!(num.kind, OrbitKind::Homoclinic);
    let mut worst: f64 = 0.0;
    for i in 0..=200 {
        let t = -10.0 + 0.1 * i as f64;
        worst = worst.max(s.distance(&num.state(t), &exact.state(t)));
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn wrong_branch_is_reported() {
    let s = sys("paper-example");
    let left = EndOrbit::from_guess(&s, &[0.0, 0.0, 0.0, 0.0], 0).unwrap();
    let right = EndOrbit::from_guess(&s, &[0.0, 0.0, 2.0 * PI, 0.0], 0).unwrap();
    let toward_plus = if left.unstable[2] > 0.0 { 1.0 } else { -1.0 };
    let ok = numeric_separatrix(&s, &left, &right, toward_plus, &SeparatrixOptions::default()).unwrap();
    assert_eq!(ok.kind, OrbitKind::Heteroclinic);
    let end = ok.state(ok.truncation.1);
    assert!((end[2] - 2.0 * PI).abs() < 1e-7 && end[3].abs() < 1e-7);
    let err = numeric_separatrix(&s, &left, &right, -toward_plus, &SeparatrixOptions::default()).unwrap_err();
    assert!(err.to_string().contains("no connection found"), "{err}");
}

#[test]
fn paper_example_connection_invariants() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    assert_eq!(o.kind, OrbitKind::Heteroclinic);
    // Source over x = 2 pi (period 1), target over x = 0 (period 2/3).
    assert!((o.source.period().unwrap() - 1.0).abs() < 1e-9);
    assert!((o.target.period().unwrap() - 2.0 / 3.0).abs() < 1e-9);
    assert!((o.lambda_plus() - 2f64.sqrt()).abs() < 1e-6 && (o.lambda_minus() - 2f64.sqrt()).abs() < 1e-6);
    let (sm, sp) = o.truncation;
    for k in 0..=100 {
        let t = -sm + (sm + sp) * k as f64 / 100.0;
        let e = s.hamiltonian(Hamiltonian::H0, &o.state(t), 0.0).unwrap();
        assert!((e - 1.0).abs() < 1e-9, "s={t} e={e}");
    }
    let (a, _) = o.end_distances(&s, -sm);
    let (_, b) = o.end_distances(&s, sp);
    assert!(a < ASYM_TOL && b < ASYM_TOL, "{a} {b}");
    let (a1, _) = o.end_distances(&s, -sm - 1.0);
    let (_, b1) = o.end_distances(&s, sp + 1.0);
    let l = 2f64.sqrt();
    assert!(a1 < a * (-l / 2.0).exp() && b1 < b * (-l / 2.0).exp());
    // (x, xi) follows the pure F separatrix: x = 4 arctan e^{-sqrt2 s} shifted.
    let y = o.state(0.0);
    assert!((y[2] - PI).abs() < 1e-8 && (y[3] + 2f64.sqrt()).abs() < 1e-8, "{y:?}");
}

#[test]
fn flow_compatibility() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    let opts = OdeOptions::with_tol(1e-13);
    let (sm, sp) = o.truncation;
    for k in 0..25 {
        let t = -sm + 1.0 + (sm + sp - 2.0) * k as f64 / 24.0;
        for sigma in [-1.0, 0.5, 1.0] {
            let a = flow_to(&s, Hamiltonian::H0, &o.state(t), 0.0, sigma, &opts).unwrap();
            let b = o.state(t + sigma);
            assert!(s.distance(&a, &b) < 1e-8, "s={t} sigma={sigma} {}", s.distance(&a, &b));
        }
    }
}

#[test]
fn frames() {
    let ext = extend_periodic(&sys("forced-pendulum")).unwrap();
    let o = analytic_separatrix(&ext).unwrap();
    let f = conserved_frame(&ext, &["p^2/2 + cos(q)", "eta"], &o).unwrap();
    assert!(f.certificate > 0.1, "{}", f.certificate);
    let err = conserved_frame(&ext, &["p^2/2 + cos(q) + eta", "(p^2/2 + cos(q) + eta)^2"], &o).unwrap_err();
    assert!(err.to_string().contains("rank deficient"), "{err}");
    let pe = sys("paper-example");
    let po = paper_example_separatrix(&pe).unwrap();
    let h = pe.h0().to_string();
    let f = conserved_frame(&pe, &[h.as_str(), "eta"], &po).unwrap();
    assert!(f.certificate > FRAME_MIN);
    let err = conserved_frame(&pe, &["x", "eta"], &po).unwrap_err();
    assert!(err.to_string().contains("H0"), "{err}");
}

const FRAME_MIN: f64 = 1e-3;

#[test]
fn frame_fields_are_tangent() {
    // X_eta is the t-translation, which maps the connecting manifold of the
    // paper example to itself; its normal component against the span of
    // X_H and the family direction d/dt must vanish.
    let pe = sys("paper-example");
    let o = paper_example_separatrix(&pe).unwrap();
    let eta = pe.observable("eta").unwrap();
    for k in 0..20 {
        let t = -4.0 + 0.4 * k as f64;
        let y = o.state(t);
        let xa = eta.vector_field(&y, 0.0).unwrap();
        let xh = pe.vector_field(Hamiltonian::H0, &y, 0.0).unwrap();
        let mut fam = vec![0.0; 4];
        fam[0] = 1.0;
        let m = nalgebra::DMatrix::from_fn(4, 2, |i, j| if j == 0 { xh[i] } else { fam[i] });
        let b = nalgebra::DVector::from_vec(xa.clone());
        let c = melnikov_core::dynamics::least_squares(&m, &b, 1e-12);
        let r = (&m * c - b).norm();
        assert!(r < 1e-6, "{r}");
    }
}
