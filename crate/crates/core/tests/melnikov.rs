use std::collections::BTreeMap;
use std::f64::consts::PI;

use melnikov_core::melnikov::{
    boundary_terms, check_hypothesis, critical_integral_basis, extended_setup, find_zeros, melnikov_convergent,
    melnikov_function, melnikov_prescribed, potential_consistency, symmetric_windows, Base, MelnikovOptions, Mode,
};
use melnikov_core::phase::{catalog, SystemDef};
use melnikov_core::quad;
use melnikov_core::separatrix::{conserved_frame, paper_example_separatrix};
use melnikov_core::Error;

fn sys(name: &str) -> SystemDef {
    catalog(name, &BTreeMap::new()).unwrap()
}

fn closed_form(omega: f64, t0: f64) -> f64 {
    2.0 * PI * omega / (PI * omega / 2.0).cosh() * (omega * t0).sin()
}

#[test]
fn forced_pendulum_against_closed_form() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    let opts = MelnikovOptions::default();
    let grid: Vec<f64> = (0..16).map(|k| 2.0 * PI * k as f64 / 16.0).collect();
    let m = melnikov_function(&ext, &a, "H0", &orbit, 0.0, &grid, &opts).unwrap();
    for s in &m {
        assert_eq!(s.mode, Mode::CriticalA);
        assert!((s.value - closed_form(1.0, s.t0)).abs() < 1e-8, "t0={} {} {}", s.t0, s.value, closed_form(1.0, s.t0));
        assert!(s.error < 1e-8, "{}", s.error);
    }
    // Independent route: trapezoid on the closed-form integrand sin q(u) cos(t0 + u),
    // with sin q = -2 sech u tanh u on the upper separatrix.
    let t0 = 0.9;
    let f = |u: f64| Ok(-2.0 / u.cosh() * u.tanh() * (t0 + u).cos());
    let tr = quad::trapezoid(f, -40.0, 40.0, 8000).unwrap();
    let base = Base::with_time(&ext, &orbit, 0.0, t0);
    let ours = melnikov_convergent(&ext, &a, "H0", &orbit, &base, &opts).unwrap();
    assert!((tr - ours.value).abs() < 1e-8, "{tr} {}", ours.value);
}

#[test]
fn zeros_of_the_forced_pendulum_function() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    let opts = MelnikovOptions::default();
    let grid: Vec<f64> = (0..64).map(|k| 2.0 * PI * k as f64 / 64.0).collect();
    let m = melnikov_function(&ext, &a, "H0", &orbit, 0.0, &grid, &opts).unwrap();
    let vals: Vec<f64> = m.iter().map(|s| s.value).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let amp = vals.iter().fold(0.0f64, |x, v| x.max(v.abs()));
    assert!((amp - 2.0 * PI / (PI / 2.0).cosh()).abs() < 1e-6 * amp, "{amp}");
    assert!(mean.abs() < 1e-8 * amp);
    let eval = |t: f64| melnikov_convergent(&ext, &a, "H0", &orbit, &Base::with_time(&ext, &orbit, 0.0, t), &opts).map(|s| s.value);
    let zeros = find_zeros(&grid, &vals, 2.0 * PI, &eval, None).unwrap();
    assert_eq!(zeros.len(), 2);
    for (z, k) in zeros.iter().zip([0.0, PI]) {
        assert!((z.t0 - k).abs() < 1e-9, "{z:?}");
        assert!(z.nondegenerate && z.residual < 1e-9);
        assert!((z.slope.abs() - amp).abs() < 1e-4 * amp);
    }
}

#[test]
fn flow_shift_invariance() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    let opts = MelnikovOptions::default();
    for (sigma, t0) in [(0.7, 1.1), (-2.0, 0.3), (3.5, 4.0)] {
        let moved = melnikov_convergent(&ext, &a, "H0", &orbit, &Base::with_time(&ext, &orbit, sigma, t0), &opts).unwrap();
        let home = melnikov_convergent(&ext, &a, "H0", &orbit, &Base::with_time(&ext, &orbit, 0.0, t0 - sigma), &opts).unwrap();
        assert!((moved.value - home.value).abs() < 1e-9, "{} {}", moved.value, home.value);
    }
}

#[test]
fn beta_vanishes_on_the_hamiltonian_field() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let h = ext.observable(&ext.h0().to_string()).unwrap();
    let opts = MelnikovOptions::default();
    for t0 in [0.0, 1.0, 2.5] {
        let s = melnikov_convergent(&ext, &h, "H0~", &orbit, &Base::with_time(&ext, &orbit, 0.0, t0), &opts).unwrap();
        assert_eq!(s.mode, Mode::Energy);
        assert!(s.value.abs() < 1e-9, "{}", s.value);
    }
}

#[test]
fn paper_example_counting() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    let h = s.h0().to_string();
    let f = conserved_frame(&s, &[h.as_str(), "eta"], &o).unwrap();
    let r = critical_integral_basis(&s, &f, &o.target, &o.source).unwrap();
    assert!((r.c_plus[0] - 1.0).abs() < 1e-8 && (r.c_plus[1] - 2.0 / 3.0).abs() < 1e-8, "{:?}", r.c_plus);
    assert!((r.c_minus[0] - 1.0).abs() < 1e-8 && (r.c_minus[1] - 1.0).abs() < 1e-8, "{:?}", r.c_minus);
    assert_eq!(r.p, 0);
    let e = sys("paper-example-equal");
    let oe = paper_example_separatrix(&e).unwrap();
    let h = e.h0().to_string();
    let f = conserved_frame(&e, &[h.as_str(), "eta"], &oe).unwrap();
    let r = critical_integral_basis(&e, &f, &oe.target, &oe.source).unwrap();
    assert_eq!(r.p, 1);
    // The critical integral is H - eta, i.e. the F part.
    let b = &r.basis[0];
    assert!((b[0] + b[1]).abs() < 1e-8, "{b:?}");
}

#[test]
fn homoclinic_counting() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let f = conserved_frame(&ext, &["p^2/2 + cos(q)", "eta"], &orbit).unwrap();
    let r = critical_integral_basis(&ext, &f, &orbit.target, &orbit.source).unwrap();
    assert!(r.homoclinic);
    assert!(r.c_plus[0].abs() < 1e-10 && (r.c_plus[1] - 1.0).abs() < 1e-10);
    assert_eq!(r.p, 1);
    assert!(r.basis[0][1].abs() < 1e-10);
}

#[test]
fn guard_names_the_failing_orbit() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    let eta = s.observable("eta").unwrap();
    match check_hypothesis(&s, &eta, &o, 1e-8) {
        Err(Error::Guard { guard, detail }) => {
            assert_eq!(guard, "convergence-hypothesis");
            assert!(detail.contains("gamma"), "{detail}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn windows_on_the_period_lattice_settle() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    let eta = s.observable("eta").unwrap();
    let base = Base::with_time(&s, &o, 0.0, 0.2);
    let r = melnikov_prescribed(&s, &eta, "eta", &o, &base, &MelnikovOptions::default()).unwrap();
    assert!(!r.diverging);
    assert!(r.error < 1e-6, "{} {:?}", r.error, r.sequence);
    let ts: Vec<f64> = (0..7).map(|k| 6.25 + 0.9 * k as f64).collect();
    let sym = symmetric_windows(&s, &eta, &o, &base, &ts, 1e-11).unwrap();
    let spread = sym.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sym.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread > 1e-2, "{sym:?}");
}

#[test]
fn potential_differential_matches_beta() {
    let forced = sys("forced-pendulum").with_h1("(1 - cos(q))*cos(t)", Some(2.0 * PI)).unwrap();
    let (ext, orbit) = extended_setup(&forced).unwrap();
    let f = conserved_frame(&ext, &["p^2/2 + cos(q)", "eta"], &orbit).unwrap();
    let opts = MelnikovOptions::default();
    let base = Base::with_time(&ext, &orbit, 0.4, 1.3);
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    assert_eq!(check_hypothesis(&ext, &a, &orbit, 1e-8).unwrap(), Mode::CriticalA);
    let checks = potential_consistency(&ext, &f, &orbit, &base, 1e-3, &opts).unwrap();
    for c in &checks {
        assert!(c.difference < 1e-5, "{c:?}");
    }
    assert!(checks.iter().any(|c| c.beta.abs() > 0.1), "{checks:?}");
}

#[test]
fn potential_guard_trips_when_h1_varies() {
    let (ext, orbit) = extended_setup(&sys("forced-duffing")).unwrap();
    let base = Base::with_time(&ext, &orbit, 0.0, 0.0);
    let f = conserved_frame(&ext, &["p^2/2 - q^2/2 + q^4/4", "eta"], &orbit);
    // -q cos t is constant (zero) on the saddle, so use a forcing that is not.
    let _ = f;
    let bad = sys("forced-duffing").with_h1("(1 + q)*cos(t)", Some(2.0 * PI)).unwrap();
    let (ebad, obad) = extended_setup(&bad).unwrap();
    let fb = conserved_frame(&ebad, &["p^2/2 - q^2/2 + q^4/4", "eta"], &obad).unwrap();
    let err = potential_consistency(&ebad, &fb, &obad, &base, 1e-3, &MelnikovOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Guard { guard: "h1-constant-on-orbits", .. }), "{err}");
    let _ = ext;
}

#[test]
fn boundary_terms_close_the_windowed_formula() {
    let s = sys("paper-example");
    let o = paper_example_separatrix(&s).unwrap();
    let h = s.h0().to_string();
    let f = conserved_frame(&s, &[h.as_str(), "eta"], &o).unwrap();
    let eta = s.observable("eta").unwrap();
    let base = Base::with_time(&s, &o, 0.0, 0.2);
    let bt = boundary_terms(&s, &eta, &f, &o, &base, 1e-4).unwrap();
    let pr = melnikov_prescribed(&s, &eta, "eta", &o, &base, &MelnikovOptions::default()).unwrap();
    let total = bt.plus - bt.minus + pr.value;
    let oracle = bt.manifold_beta();
    assert!((total - oracle).abs() <= 1e-4 * oracle.abs(), "total {total} oracle {oracle} {bt:?} {}", pr.value);
}

#[test]
fn boundary_terms_vanish_for_critical_integrals() {
    let (ext, orbit) = extended_setup(&sys("forced-pendulum")).unwrap();
    let f = conserved_frame(&ext, &["p^2/2 + cos(q)", "eta"], &orbit).unwrap();
    let a = ext.observable("p^2/2 + cos(q)").unwrap();
    let base = Base::with_time(&ext, &orbit, 0.0, 0.5);
    let bt = boundary_terms(&ext, &a, &f, &orbit, &base, 1e-4).unwrap();
    assert!(bt.plus.abs() < 1e-6 && bt.minus.abs() < 1e-6, "{bt:?}");
}
