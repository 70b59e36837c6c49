use std::collections::BTreeMap;
use std::f64::consts::PI;

use melnikov_core::dynamics::{
    find_periodic_orbit, flow, flow_to, return_time, stroboscopic_jacobian, stroboscopic_map, symplectic_defect,
    variational_flow, Classification, OrbitMode, OrbitOptions,
};
use melnikov_core::ode::OdeOptions;
use melnikov_core::phase::{catalog, extend_periodic, Hamiltonian};

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

#[test]
fn paper_example_orbit_periods() {
    let sys = catalog("paper-example", &none()).unwrap();
    let section = OrbitMode::Section { index: 0, value: 0.0 };
    let inner = find_periodic_orbit(&sys, &[0.0, 0.01, 0.0, 0.0], section, &OrbitOptions::default()).unwrap();
    assert!((inner.period - 2.0 / 3.0).abs() < 1e-10, "{}", inner.period);
    assert!(inner.residual < 1e-10);
    assert_eq!(inner.classification, Classification::NondegenerateHyperbolic);
    let outer = find_periodic_orbit(&sys, &[0.0, 0.01, 6.2832, 0.0], section, &OrbitOptions::default()).unwrap();
    assert!((outer.period - 1.0).abs() < 1e-10, "{}", outer.period);
    assert!((outer.point[2] - 2.0 * PI).abs() < 1e-9);
    assert!(symplectic_defect(&inner.monodromy_matrix()) < 1e-7);
    assert!(symplectic_defect(&outer.monodromy_matrix()) < 1e-7);
}

#[test]
fn orbit_solver_is_idempotent() {
    let sys = catalog("paper-example", &none()).unwrap();
    let section = OrbitMode::Section { index: 0, value: 0.0 };
    let first = find_periodic_orbit(&sys, &[0.0, 0.01, 6.2832, 0.0], section, &OrbitOptions::default()).unwrap();
    let again = find_periodic_orbit(&sys, &first.point, section, &OrbitOptions::default()).unwrap();
    let shift = first.point.iter().zip(&again.point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(shift < 1e-12, "{shift}");
}

#[test]
fn extended_pendulum_saddle_multipliers() {
    let ext = extend_periodic(&catalog("forced-pendulum", &none()).unwrap()).unwrap();
    let rec = find_periodic_orbit(&ext, &[0.0, 0.0, 0.0, 0.0], OrbitMode::Section { index: 2, value: 0.0 }, &OrbitOptions::default())
        .unwrap();
    assert!((rec.period - 2.0 * PI).abs() < 1e-10);
    let big = (2.0 * PI).exp();
    assert!((rec.multipliers[0].re - big).abs() / big < 1e-6, "{:?}", rec.multipliers);
    assert!((rec.multipliers[3].re - 1.0 / big).abs() * big < 1e-6, "{:?}", rec.multipliers);
    assert_eq!(rec.unit_multiplicity(), 2);
    assert_eq!(rec.classification, Classification::NondegenerateHyperbolic);
    // Multipliers pair up as (mu, 1/mu).
    assert!((rec.multipliers[0].re * rec.multipliers[3].re - 1.0).abs() < 1e-6);
}

#[test]
fn extended_flow_projects_to_original() {
    let forced = catalog("forced-pendulum", &none()).unwrap();
    let ext = extend_periodic(&forced).unwrap();
    let opts = OdeOptions::with_tol(1e-12);
    let t0 = 0.7;
    let a = flow_to(&forced, Hamiltonian::H0, &[1.0, 0.5], t0, 4.0, &opts).unwrap();
    let b = flow_to(&ext, Hamiltonian::H0, &[1.0, 0.5, t0, 0.3], 0.0, 4.0, &opts).unwrap();
    assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    assert!((b[2] - (t0 + 4.0)).abs() < 1e-12);
    // Perturbed flows also agree: eta absorbs the energy exchange.
    let a = flow_to(&forced, Hamiltonian::Perturbed(0.1), &[1.0, 0.5], t0, 4.0, &opts).unwrap();
    let b = flow_to(&ext, Hamiltonian::Perturbed(0.1), &[1.0, 0.5, t0, 0.3], 0.0, 4.0, &opts).unwrap();
    assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
}

#[test]
fn paper_example_separatrix_flow_reaches_next_saddle() {
    let sys = catalog("paper-example", &none()).unwrap();
    // eta = 0, mid-separatrix point of F = xi^2 + cos x at level 1.
    let m = [0.0, 0.0, PI, 2f64.sqrt()];
    // Short enough that the rounding offset from the level set has not yet grown.
    let tr = flow(&sys, Hamiltonian::H0, &m, 0.0, 10.0, &OdeOptions::with_tol(1e-13)).unwrap();
    let end = tr.last();
    let dist = ((end[2] - 2.0 * PI).powi(2) + end[3].powi(2)).sqrt();
    // Exact solution x = 4 arctan(e^{sqrt2 s}) + pi: the distance decays like sqrt24 e^{-sqrt2 T}.
    let expect = 24f64.sqrt() * (-(2f64.sqrt()) * 10.0).exp();
    assert!((dist - expect).abs() < 1e-2 * expect, "{end:?} {dist} {expect}");
}

#[test]
fn symplectic_variational_matrices() {
    let sys = catalog("paper-example", &none()).unwrap();
    let (_, m) = variational_flow(&sys, Hamiltonian::H0, &[0.1, 0.02, 0.3, 0.4], 0.0, 3.0, &OdeOptions::with_tol(1e-13)).unwrap();
    assert!(symplectic_defect(&m) < 1e-7);
}

#[test]
fn return_time_of_inner_orbit() {
    let sys = catalog("paper-example", &none()).unwrap();
    let t = return_time(&sys, Hamiltonian::H0, &[0.0, 0.01, 0.0, 0.0], 0, 0.0, &OdeOptions::with_tol(1e-13), 10.0).unwrap();
    assert!((t - 2.0 / 3.0).abs() < 1e-11, "{t}");
}

#[test]
fn strobe_fixed_point_persists() {
    let sys = catalog("forced-pendulum", &none()).unwrap();
    let opts = OdeOptions::with_tol(1e-12);
    let eps = 1e-3;
    let mut x = vec![0.0, 0.0];
    for _ in 0..10 {
        let (y, j) = stroboscopic_jacobian(&sys, &x, 0.0, eps, &opts).unwrap();
        let a = j - nalgebra::DMatrix::identity(2, 2);
        let r = nalgebra::DVector::from_vec(vec![y[0] - x[0], y[1] - x[1]]);
        let dx = a.lu().solve(&(-r)).unwrap();
        x[0] += dx[0];
        x[1] += dx[1];
    }
    let y = stroboscopic_map(&sys, &x, 0.0, eps, &opts).unwrap();
    assert!(((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt() < 1e-11);
    assert!((x[0].powi(2) + x[1].powi(2)).sqrt() < 10.0 * eps);
}
