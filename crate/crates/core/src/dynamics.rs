//! Flows, variational equations, periodic orbits and stroboscopic maps.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ode::{self, OdeOptions, Trajectory};
use crate::phase::{Hamiltonian, SystemDef};
use crate::{Error, Result};

pub const ORBIT_TOL: f64 = 1e-10;
pub const UNIT_CLUSTER_TOL: f64 = 1e-6;

/// Trajectory of `X_H` from `(m, t0)` over `duration` (either sign).
/// Coordinates are not reduced, so circle positions unwind continuously.
pub fn flow(sys: &SystemDef, which: Hamiltonian, m: &[f64], t0: f64, duration: f64, opts: &OdeOptions) -> Result<Trajectory> {
    opts.validate()?;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| sys.vector_field_into(which, y, t, dy);
    ode::integrate(rhs, t0, m, t0 + duration, opts, true)
}

/// Endpoint `phi^duration(m)` without storing samples.
pub fn flow_to(sys: &SystemDef, which: Hamiltonian, m: &[f64], t0: f64, duration: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| sys.vector_field_into(which, y, t, dy);
    ode::advance(rhs, t0, m, t0 + duration, opts)
}

/// Flow jointly with the fundamental matrix of the linearization.
pub fn variational_flow(
    sys: &SystemDef,
    which: Hamiltonian,
    m: &[f64],
    t0: f64,
    duration: f64,
    opts: &OdeOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = sys.dim();
    let mut y0 = m.to_vec();
    for i in 0..n {
        for j in 0..n {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    let mut jac = vec![0.0; n * n];
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        sys.vector_field_into(which, &y[..n], t, &mut dy[..n])?;
        sys.jacobian_into(which, &y[..n], t, &mut jac)?;
        let phi = &y[n..];
        let out = &mut dy[n..];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += jac[i * n + k] * phi[k * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        Ok(())
    };
    let end = ode::advance(rhs, t0, &y0, t0 + duration, opts)?;
    let point = end[..n].to_vec();
    let mat = DMatrix::from_row_slice(n, n, &end[n..]);
    Ok((point, mat))
}

/// Canonical matrix for pair ordering `(q1, p1, ..., qn, pn)`.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n / 2 {
        omega[(2 * i, 2 * i + 1)] = 1.0;
        omega[(2 * i + 1, 2 * i)] = -1.0;
    }
    omega
}

/// `max |M^T Omega M - Omega|`.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let omega = symplectic_form(m.nrows());
    (m.transpose() * &omega * m - omega).amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    NondegenerateHyperbolic,
    NondegenerateNonhyperbolic,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
}

impl Multiplier {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbitRecord {
    pub point: Vec<f64>,
    pub period: f64,
    /// Row-major monodromy matrix.
    pub monodromy: Vec<Vec<f64>>,
    pub multipliers: Vec<Multiplier>,
    pub classification: Classification,
    pub residual: f64,
    pub energy: f64,
    pub iterations: usize,
}

impl PeriodicOrbitRecord {
    pub fn monodromy_matrix(&self) -> DMatrix<f64> {
        let n = self.monodromy.len();
        DMatrix::from_fn(n, n, |i, j| self.monodromy[i][j])
    }

    /// Number of multipliers within the cluster tolerance of 1.
    pub fn unit_multiplicity(&self) -> usize {
        self.multipliers.iter().filter(|m| (m.re - 1.0).hypot(m.im) < UNIT_CLUSTER_TOL).count()
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.classification == Classification::NondegenerateHyperbolic
    }

    /// Largest real multiplier of modulus > 1, if any.
    pub fn unstable_multiplier(&self) -> Option<f64> {
        self.multipliers
            .iter()
            .filter(|m| m.im.abs() < 1e-9 && m.modulus() > 1.0 + UNIT_CLUSTER_TOL)
            .map(|m| m.re)
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

/// Multipliers sorted by decreasing modulus, then by argument.
pub fn floquet_multipliers(m: &DMatrix<f64>) -> Vec<Multiplier> {
    let eig: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    let mut out: Vec<Multiplier> = eig.into_iter().map(|z| Multiplier { re: z.re, im: z.im }).collect();
    out.sort_by(|a, b| b.modulus().total_cmp(&a.modulus()).then(a.im.total_cmp(&b.im)));
    out
}

pub fn classify(multipliers: &[Multiplier]) -> Classification {
    let ones = multipliers.iter().filter(|m| (m.re - 1.0).hypot(m.im) < UNIT_CLUSTER_TOL).count();
    if ones != 2 {
        return Classification::Degenerate;
    }
    let mut rest = multipliers.iter().filter(|m| (m.re - 1.0).hypot(m.im) >= UNIT_CLUSTER_TOL);
    if rest.all(|m| (m.modulus() - 1.0).abs() > UNIT_CLUSTER_TOL) {
        Classification::NondegenerateHyperbolic
    } else {
        Classification::NondegenerateNonhyperbolic
    }
}

/// Unit eigenvector of `m` for a real eigenvalue `mu` (SVD null vector).
pub fn real_eigenvector(m: &DMatrix<f64>, mu: f64) -> DVector<f64> {
    let n = m.nrows();
    let shifted = m - DMatrix::identity(n, n) * mu;
    let svd = shifted.svd(true, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: DVector<f64> = v_t.row(k).transpose();
    v.normalize()
}

/// Moore–Penrose solve of `a x = b` with relative singular-value cutoff.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rcond * smax.max(f64::MIN_POSITIVE);
    svd.solve(b, cut).expect("SVD with U and V")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrbitMode {
    /// Period held fixed; phase fixed orthogonally to the flow at the guess.
    FixedPeriod(f64),
    /// Period free; state index `index` pinned to `value`.
    Section { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitOptions {
    pub orbit_tol: f64,
    pub max_iter: usize,
    /// Energy pin; defaults to `H(guess)` in section mode.
    pub energy: Option<f64>,
    pub ode: OdeOptions,
    pub which: Hamiltonian,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions { orbit_tol: ORBIT_TOL, max_iter: 50, energy: None, ode: OdeOptions::with_tol(1e-13), which: Hamiltonian::H0 }
    }
}

/// Newton (Gauss–Newton with SVD pseudo-inverse) on the periodicity map.
pub fn find_periodic_orbit(sys: &SystemDef, guess: &[f64], mode: OrbitMode, opts: &OrbitOptions) -> Result<PeriodicOrbitRecord> {
    if sys.time_dependent() {
        return Err(Error::config("periodic orbits are sought for autonomous systems; extend the system first"));
    }
    let n = sys.dim();
    if guess.len() != n {
        return Err(Error::config(format!("guess has {} coordinates, system has {n}", guess.len())));
    }
    let which = opts.which;
    let mut m0 = guess.to_vec();
    let (mut tau, free_period) = match mode {
        OrbitMode::FixedPeriod(tau) => {
            if !(tau > 0.0) {
                return Err(Error::config("period must be positive"));
            }
            (tau, false)
        }
        OrbitMode::Section { index, value } => {
            if index >= n {
                return Err(Error::config(format!("section index {index} out of range")));
            }
            m0[index] = value;
            let tau = return_time(sys, which, &m0, index, value, &opts.ode, 200.0)?;
            (tau, true)
        }
    };
    let energy = match (opts.energy, mode) {
        (Some(e), _) => Some(e),
        (None, OrbitMode::Section { .. }) => Some(sys.hamiltonian(which, &m0, 0.0)?),
        (None, OrbitMode::FixedPeriod(_)) => None,
    };
    let phase_dir = sys.vector_field(which, guess, 0.0)?;
    let phase_norm = phase_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unknowns = n + usize::from(free_period);
    let mut iterations = 0;
    let mut residual;
    loop {
        let (end, mono) = variational_flow(sys, which, &m0, 0.0, tau, &opts.ode)?;
        let diff = sys.difference(&end, &m0);
        residual = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for i in 0..n {
            let mut row = vec![0.0; unknowns];
            for j in 0..n {
                row[j] = mono[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            rows.push(row);
            rhs.push(-diff[i]);
        }
        if free_period {
            let v = sys.vector_field(which, &end, tau)?;
            for i in 0..n {
                rows[i][n] = v[i];
            }
        }
        let mut constraint = 0.0;
        if let Some(e) = energy {
            let g = {
                let mut g = vec![0.0; n];
                sys.gradient_into(which, &m0, 0.0, &mut g)?;
                g
            };
            let mut row = vec![0.0; unknowns];
            row[..n].copy_from_slice(&g);
            rows.push(row);
            let r = sys.hamiltonian(which, &m0, 0.0)? - e;
            constraint += r.abs();
            rhs.push(-r);
        }
        match mode {
            OrbitMode::Section { index, value } => {
                let mut row = vec![0.0; unknowns];
                row[index] = 1.0;
                rows.push(row);
                rhs.push(-(m0[index] - value));
            }
            OrbitMode::FixedPeriod(_) if phase_norm > 1e-12 => {
                let mut row = vec![0.0; unknowns];
                for j in 0..n {
                    row[j] = phase_dir[j] / phase_norm;
                }
                rows.push(row);
                let d = sys.difference(&m0, guess);
                rhs.push(-d.iter().zip(&phase_dir).map(|(a, b)| a * b / phase_norm).sum::<f64>());
            }
            OrbitMode::FixedPeriod(_) => {}
        }
        if residual < opts.orbit_tol && constraint < opts.orbit_tol {
            let multipliers = floquet_multipliers(&mono);
            let classification = classify(&multipliers);
            let mut point = m0.clone();
            sys.reduce(&mut point);
            return Ok(PeriodicOrbitRecord {
                point,
                period: tau,
                monodromy: (0..n).map(|i| (0..n).map(|j| mono[(i, j)]).collect()).collect(),
                multipliers,
                classification,
                residual,
                energy: sys.hamiltonian(which, &m0, 0.0)?,
                iterations,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::solver(format!(
                "periodic-orbit Newton did not converge after {iterations} iterations (residual {residual:.3e})"
            )));
        }
        let a = DMatrix::from_fn(rows.len(), unknowns, |i, j| rows[i][j]);
        let b = DVector::from_vec(rhs);
        let step = least_squares(&a, &b, 1e-12);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::solver("periodic-orbit Newton produced a non-finite step"));
        }
        for j in 0..n {
            m0[j] += step[j];
        }
        if free_period {
            tau += step[n];
            if !(tau > 0.0) {
                return Err(Error::solver("periodic-orbit Newton drove the period nonpositive"));
            }
        }
        iterations += 1;
    }
}

/// First return of the flow to `y[index] = value` (modulo the circumference
/// for circle coordinates), crossing in the direction of the initial motion.
pub fn return_time(
    sys: &SystemDef,
    which: Hamiltonian,
    m: &[f64],
    index: usize,
    value: f64,
    opts: &OdeOptions,
    t_max: f64,
) -> Result<f64> {
    let v0 = sys.vector_field(which, m, 0.0)?[index];
    if v0.abs() < 1e-12 {
        return Err(Error::solver(format!(
            "no return: the flow is not transversal to the section (velocity {v0:.3e}); fixed points never return"
        )));
    }
    let dir = v0.signum();
    let target = match sys.circumference(index) {
        Some(l) => {
            let k = (m[index] - value) / l;
            let k = if dir > 0.0 { k.floor() + 1.0 } else { k.ceil() - 1.0 };
            value + k * l
        }
        None => value,
    };
    let g = |y: &[f64]| dir * (y[index] - target);
    let chunk = 2.0;
    let mut s0 = 0.0;
    let mut y0 = m.to_vec();
    while s0 < t_max {
        let tr = flow(sys, which, &y0, s0, chunk, opts)?;
        for i in 0..tr.len() - 1 {
            let (ga, gb) = (g(tr.sample(i)), g(tr.sample(i + 1)));
            if ga < 0.0 && gb >= 0.0 {
                let (sa, ya) = (tr.times()[i], tr.sample(i).to_vec());
                let f = |s: f64| -> Result<f64> { Ok(g(&flow_to(sys, which, &ya, sa, s - sa, opts)?)) };
                return crate::roots::bisect(f, sa, tr.times()[i + 1], 1e-12);
            }
        }
        s0 = tr.end();
        y0 = tr.last().to_vec();
    }
    Err(Error::solver(format!("no return to the section within t_max = {t_max}")))
}

/// Time-`T_f` map of `H0 + eps H1` starting at phase `t0`.
pub fn stroboscopic_map(sys: &SystemDef, m: &[f64], t0: f64, eps: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    let tf = sys.forcing_period().ok_or_else(|| Error::config("stroboscopic maps need a time-dependent system"))?;
    flow_to(sys, Hamiltonian::Perturbed(eps), m, t0, tf, opts)
}

/// Inverse of [`stroboscopic_map`] for the same phase.
pub fn inverse_stroboscopic_map(sys: &SystemDef, m: &[f64], t0: f64, eps: f64, opts: &OdeOptions) -> Result<Vec<f64>> {
    let tf = sys.forcing_period().ok_or_else(|| Error::config("stroboscopic maps need a time-dependent system"))?;
    flow_to(sys, Hamiltonian::Perturbed(eps), m, t0 + tf, -tf, opts)
}

/// Strobe map with its Jacobian.
pub fn stroboscopic_jacobian(sys: &SystemDef, m: &[f64], t0: f64, eps: f64, opts: &OdeOptions) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let tf = sys.forcing_period().ok_or_else(|| Error::config("stroboscopic maps need a time-dependent system"))?;
    variational_flow(sys, Hamiltonian::Perturbed(eps), m, t0, tf, opts)
}

/// True when `H0 = T(p) + V(q)` symbolically.
pub fn is_separable(sys: &SystemDef) -> bool {
    let names = sys.coordinate_names();
    let (qs, ps): (Vec<&String>, Vec<&String>) = (names.iter().step_by(2).collect(), names.iter().skip(1).step_by(2).collect());
    qs.iter().all(|q| {
        let d = sys.h0().differentiate(q);
        ps.iter().all(|p| !d.depends_on(p))
    })
}

/// Fixed-step Störmer–Verlet for separable `H0`; a structure-preserving
/// cross-check for the adaptive integrator, never the primary method.
pub fn stormer_verlet(sys: &SystemDef, m: &[f64], duration: f64, steps: usize) -> Result<Vec<f64>> {
    if !is_separable(sys) {
        return Err(Error::config("Störmer–Verlet needs a separable H0"));
    }
    let n = sys.dim();
    let h = duration / steps as f64;
    let mut y = m.to_vec();
    let mut g = vec![0.0; n];
    for _ in 0..steps {
        sys.gradient_into(Hamiltonian::H0, &y, 0.0, &mut g)?;
        for i in 0..n / 2 {
            y[2 * i + 1] -= 0.5 * h * g[2 * i];
        }
        sys.gradient_into(Hamiltonian::H0, &y, 0.0, &mut g)?;
        for i in 0..n / 2 {
            y[2 * i] += h * g[2 * i + 1];
        }
        sys.gradient_into(Hamiltonian::H0, &y, 0.0, &mut g)?;
        for i in 0..n / 2 {
            y[2 * i + 1] -= 0.5 * h * g[2 * i];
        }
    }
    Ok(y)
}

/// `max_i |H0(m_i) - H0(m_0)|` over the stored samples.
pub fn energy_drift(sys: &SystemDef, traj: &Trajectory) -> Result<f64> {
    let e0 = sys.hamiltonian(Hamiltonian::H0, traj.first(), traj.start())?;
    let mut worst: f64 = 0.0;
    for i in 0..traj.len() {
        let e = sys.hamiltonian(Hamiltonian::H0, traj.sample(i), traj.times()[i])?;
        worst = worst.max((e - e0).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::catalog;
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn sys(name: &str) -> SystemDef {
        catalog(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn saddle_linearization_matches_matrix_exponential() {
        let pend = sys("pendulum");
        let (_, m) = variational_flow(&pend, Hamiltonian::H0, &[0.0, 0.0], 0.0, 1.0, &OdeOptions::with_tol(1e-13)).unwrap();
        let (c, s) = (1f64.cosh(), 1f64.sinh());
        assert!((m[(0, 0)] - c).abs() < 1e-11 && (m[(0, 1)] - s).abs() < 1e-11);
        assert!((m[(1, 0)] - s).abs() < 1e-11 && (m[(1, 1)] - c).abs() < 1e-11);
        assert!((m.determinant() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_time_gives_identity() {
        let pend = sys("pendulum");
        let (_, m) = variational_flow(&pend, Hamiltonian::H0, &[0.4, 0.1], 0.0, 0.0, &OdeOptions::default()).unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
    }

    #[test]
    fn pendulum_energy_is_conserved() {
        let pend = sys("pendulum");
        for d in [10.0, -10.0] {
            let tr = flow(&pend, Hamiltonian::H0, &[PI, 2.0], 0.0, d, &OdeOptions::with_tol(1e-12)).unwrap();
            assert!(energy_drift(&pend, &tr).unwrap() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_does_not_move() {
        let pend = sys("pendulum");
        let y = flow_to(&pend, Hamiltonian::H0, &[0.0, 0.0], 0.0, 7.0, &OdeOptions::default()).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn saddle_never_returns() {
        let pend = sys("pendulum");
        assert!(return_time(&pend, Hamiltonian::H0, &[0.0, 0.0], 0, 0.0, &OdeOptions::default(), 50.0).is_err());
    }

    #[test]
    fn verlet_agrees_with_runge_kutta() {
        let duff = sys("duffing");
        let rk = flow_to(&duff, Hamiltonian::H0, &[1.0, 0.3], 0.0, 3.0, &OdeOptions::with_tol(1e-13)).unwrap();
        let sv = stormer_verlet(&duff, &[1.0, 0.3], 3.0, 30_000).unwrap();
        assert!((rk[0] - sv[0]).abs() < 1e-7 && (rk[1] - sv[1]).abs() < 1e-7);
        assert!(stormer_verlet(&sys("paper-example"), &[0.0; 4], 1.0, 10).is_err());
    }

    #[test]
    fn strobe_of_forced_pendulum_at_eps_zero() {
        let fp = sys("forced-pendulum");
        let opts = OdeOptions::with_tol(1e-12);
        assert_eq!(stroboscopic_map(&fp, &[0.0, 0.0], 0.0, 0.0, &opts).unwrap(), vec![0.0, 0.0]);
        let m = [1.0, 0.4];
        let y = stroboscopic_map(&fp, &m, 0.3, 0.0, &opts).unwrap();
        let e = |y: &[f64]| fp.hamiltonian(Hamiltonian::H0, y, 0.0).unwrap();
        assert!((e(&y) - e(&m)).abs() < 1e-9);
        let back = inverse_stroboscopic_map(&fp, &y, 0.3, 0.0, &opts).unwrap();
        assert!((back[0] - m[0]).abs() < 1e-9 && (back[1] - m[1]).abs() < 1e-9);
    }

    #[test]
    fn classification_counts_unit_multipliers() {
        let one = Multiplier { re: 1.0, im: 0.0 };
        let hyper = [Multiplier { re: 4.0, im: 0.0 }, one, one, Multiplier { re: 0.25, im: 0.0 }];
        assert_eq!(classify(&hyper), Classification::NondegenerateHyperbolic);
        let ell = [Multiplier { re: 0.6, im: 0.8 }, one, one, Multiplier { re: 0.6, im: -0.8 }];
        assert_eq!(classify(&ell), Classification::NondegenerateNonhyperbolic);
        let four = [one; 4];
        assert_eq!(classify(&four), Classification::Degenerate);
    }
}
