//! Unperturbed connecting orbits and commuting frames along them.
//!
//! A connecting orbit is stored as a map `s -> m(s)` in unwrapped
//! coordinates (circle positions move continuously), with `s = 0` at the
//! point farthest from both end orbits. Closed forms cover the catalog
//! separatrices; everything else is integrated from the end orbits.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{find_periodic_orbit, flow, real_eigenvector, OrbitMode, OrbitOptions, PeriodicOrbitRecord};
use crate::expr::Expression;
use crate::ode::{OdeOptions, Trajectory};
use crate::phase::{wrap_diff, Hamiltonian, Observable, SystemDef};
use crate::roots::{brent, golden_max};
use crate::{Error, Result};

pub const ASYM_TOL: f64 = 1e-8;
pub const FRAME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitKind {
    Homoclinic,
    Heteroclinic,
}

/// A hyperbolic end orbit: an equilibrium or a periodic orbit, with its
/// linear asymptotics.
#[derive(Debug, Clone)]
pub struct EndOrbit {
    pub point: Vec<f64>,
    /// `None` for equilibria.
    pub record: Option<PeriodicOrbitRecord>,
    /// Rate of approach along the stable fibres, per unit of flow time.
    pub lambda: f64,
    pub unstable: Vec<f64>,
    pub stable: Vec<f64>,
    cycle: Option<Trajectory>,
    drift: Vec<f64>,
}

impl EndOrbit {
    pub fn equilibrium(sys: &SystemDef, point: &[f64]) -> Result<Self> {
        let n = sys.dim();
        let v = sys.vector_field(Hamiltonian::H0, point, 0.0)?;
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-10 {
            return Err(Error::config("end point is not an equilibrium of H0"));
        }
        let mut jac = vec![0.0; n * n];
        sys.jacobian_into(Hamiltonian::H0, point, 0.0, &mut jac)?;
        let j = DMatrix::from_row_slice(n, n, &jac);
        let lambda = j
            .complex_eigenvalues()
            .iter()
            .filter(|z| z.im.abs() < 1e-9)
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(lambda > 1e-6) {
            return Err(Error::solver("equilibrium is not hyperbolic"));
        }
        let unstable = real_eigenvector(&j, lambda).iter().copied().collect();
        let stable = real_eigenvector(&j, -lambda).iter().copied().collect();
        Ok(EndOrbit { point: point.to_vec(), record: None, lambda, unstable, stable, cycle: None, drift: vec![0.0; n] })
    }

    pub fn periodic(sys: &SystemDef, record: PeriodicOrbitRecord) -> Result<Self> {
        let mu = record
            .unstable_multiplier()
            .ok_or_else(|| Error::solver("end orbit has no real unstable multiplier"))?;
        let tau = record.period;
        let mono = record.monodromy_matrix();
        let unstable = real_eigenvector(&mono, mu).iter().copied().collect();
        let stable = real_eigenvector(&mono, 1.0 / mu).iter().copied().collect();
        let opts = OdeOptions { max_step: 0.02, ..OdeOptions::with_tol(1e-13) };
        let cycle = flow(sys, Hamiltonian::H0, &record.point, 0.0, tau, &opts)?;
        let drift = cycle.last().iter().zip(cycle.first()).map(|(a, b)| a - b).collect();
        Ok(EndOrbit {
            point: record.point.clone(),
            lambda: mu.abs().ln() / tau,
            unstable,
            stable,
            cycle: Some(cycle),
            drift,
            record: Some(record),
        })
    }

    /// Solve for the periodic orbit through `guess` on the section
    /// `y[index] = guess[index]`, then attach its asymptotics.
    pub fn from_guess(sys: &SystemDef, guess: &[f64], index: usize) -> Result<Self> {
        let mode = OrbitMode::Section { index, value: guess[index] };
        let rec = find_periodic_orbit(sys, guess, mode, &OrbitOptions::default())?;
        if !rec.is_hyperbolic() {
            return Err(Error::solver(format!("end orbit is {:?}, not hyperbolic", rec.classification)));
        }
        Self::periodic(sys, rec)
    }

    pub fn period(&self) -> Option<f64> {
        self.record.as_ref().map(|r| r.period)
    }

    /// Point at flow time `phi` from the representative, unwrapped.
    pub fn state_at_phase(&self, phi: f64) -> Vec<f64> {
        match (&self.cycle, self.period()) {
            (Some(c), Some(tau)) => {
                let k = (phi / tau).floor();
                let mut y = c.state_at(phi - k * tau);
                for (v, d) in y.iter_mut().zip(&self.drift) {
                    *v += k * d;
                }
                y
            }
            _ => self.point.clone(),
        }
    }

    /// Distance from `y` to the orbit and the phase of the nearest point.
    pub fn nearest(&self, sys: &SystemDef, y: &[f64]) -> (f64, f64) {
        let Some(c) = &self.cycle else {
            return (sys.distance(y, &self.point), 0.0);
        };
        let (mut best, mut bi) = (f64::INFINITY, 0);
        for i in 0..c.len() {
            let d = sys.distance(y, c.sample(i));
            if d < best {
                best = d;
                bi = i;
            }
        }
        let lo = c.times()[bi.saturating_sub(1)];
        let hi = c.times()[(bi + 1).min(c.len() - 1)];
        let dist = |s: f64| sys.distance(y, &c.state_at(s));
        let s = golden_max(|s| Ok(-dist(s)), lo, hi, 1e-12).unwrap_or(c.times()[bi]);
        let d = dist(s);
        if d < best {
            (d, s)
        } else {
            (best, c.times()[bi])
        }
    }

    pub fn distance(&self, sys: &SystemDef, y: &[f64]) -> f64 {
        self.nearest(sys, y).0
    }

    /// Same orbit as `other` (representatives within `tol`).
    pub fn same_as(&self, sys: &SystemDef, other: &EndOrbit, tol: f64) -> bool {
        self.distance(sys, &other.point) < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClosedForm {
    Pendulum,
    Duffing,
}

impl ClosedForm {
    fn state(self, s: f64) -> [f64; 2] {
        let sech = 1.0 / s.cosh();
        match self {
            ClosedForm::Pendulum => [4.0 * s.exp().atan(), 2.0 * sech],
            ClosedForm::Duffing => [2f64.sqrt() * sech, -(2f64.sqrt()) * sech * s.tanh()],
        }
    }

    fn energy(self) -> f64 {
        match self {
            ClosedForm::Pendulum => 1.0,
            ClosedForm::Duffing => 0.0,
        }
    }
}

/// Exponential continuation of a dense path beyond its stored span.
#[derive(Debug, Clone)]
struct Tail {
    edge: f64,
    phase: f64,
    offset: Vec<f64>,
    gap: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Path {
    Closed(ClosedForm),
    /// Closed form in `(q, p)` with `t = s` and `eta` fixed.
    Lifted(ClosedForm, f64),
    Dense { core: Trajectory, before: Tail, after: Tail },
}

#[derive(Debug, Clone)]
pub struct ConnectingOrbit {
    /// Backward-asymptotic orbit, gamma^-.
    pub source: EndOrbit,
    /// Forward-asymptotic orbit, gamma^+.
    pub target: EndOrbit,
    pub kind: OrbitKind,
    /// `(S-, S+)`: beyond `-S-` and `S+` the path is within the asymptotic
    /// tolerance of its end orbits.
    pub truncation: (f64, f64),
    pub energy: f64,
    path: Path,
}

impl ConnectingOrbit {
    pub fn state_into(&self, s: f64, out: &mut [f64]) {
        match &self.path {
            Path::Closed(f) => out.copy_from_slice(&f.state(s)),
            Path::Lifted(f, eta) => {
                let [q, p] = f.state(s);
                out.copy_from_slice(&[q, p, s, *eta]);
            }
            Path::Dense { core, before, after } => {
                if s < core.start() {
                    self.tail_into(&self.source, before, s, out);
                } else if s > core.end() {
                    self.tail_into(&self.target, after, s, out);
                } else {
                    core.state_into(s, out);
                }
            }
        }
    }

    fn tail_into(&self, orbit: &EndOrbit, tail: &Tail, s: f64, out: &mut [f64]) {
        let u = s - tail.edge;
        let g = orbit.state_at_phase(tail.phase + u);
        let decay = (-orbit.lambda * u.abs()).exp();
        for k in 0..out.len() {
            out[k] = g[k] + tail.offset[k] + tail.gap[k] * decay;
        }
    }

    pub fn state(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.source.point.len()];
        self.state_into(s, &mut out);
        out
    }

    pub fn lambda_minus(&self) -> f64 {
        self.source.lambda
    }

    pub fn lambda_plus(&self) -> f64 {
        self.target.lambda
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self.path, Path::Dense { .. })
    }

    /// Stored span of a dense path (the truncation range for closed forms).
    pub fn span(&self) -> (f64, f64) {
        match &self.path {
            Path::Dense { core, .. } => (core.start(), core.end()),
            _ => (-self.truncation.0, self.truncation.1),
        }
    }

    /// `n` samples over `[-S-, S+]`.
    pub fn samples(&self, n: usize) -> Vec<(f64, Vec<f64>)> {
        let (a, b) = (-self.truncation.0, self.truncation.1);
        (0..n)
            .map(|i| {
                let s = a + (b - a) * i as f64 / (n.max(2) - 1) as f64;
                (s, self.state(s))
            })
            .collect()
    }

    /// CSV `s,q1,p1,...` over the truncated range.
    pub fn to_csv(&self, sys: &SystemDef, n: usize) -> String {
        let mut out = String::from("s");
        for name in sys.coordinate_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for (s, y) in self.samples(n) {
            out.push_str(&crate::fmt17(s));
            for v in y {
                out.push(',');
                out.push_str(&crate::fmt17(v));
            }
            out.push('\n');
        }
        out
    }

    /// Distance to the end orbits at `s`: `(to source, to target)`.
    pub fn end_distances(&self, sys: &SystemDef, s: f64) -> (f64, f64) {
        let y = self.state(s);
        (self.source.distance(sys, &y), self.target.distance(sys, &y))
    }
}

/// First `s >= from` (stepping by `step` in the sign of `step`) where the
/// distance to `orbit` falls below `tol`.
fn reach(sys: &SystemDef, orbit: &EndOrbit, f: impl Fn(f64) -> Vec<f64>, from: f64, step: f64, tol: f64) -> Result<f64> {
    let mut s = from;
    for _ in 0..100_000 {
        if orbit.distance(sys, &f(s)) < tol {
            return Ok(s.abs());
        }
        s += step;
    }
    Err(Error::solver("connecting orbit never reaches its end orbit"))
}

fn closed_form_for(sys: &SystemDef) -> Option<(ClosedForm, bool)> {
    match sys.name.as_str() {
        "pendulum" => Some((ClosedForm::Pendulum, false)),
        "duffing" => Some((ClosedForm::Duffing, false)),
        "forced-pendulum-extended" => Some((ClosedForm::Pendulum, true)),
        "forced-duffing-extended" => Some((ClosedForm::Duffing, true)),
        _ => None,
    }
}

/// Closed-form separatrix of the pendulum or the Duffing oscillator, or of
/// their extended forced versions (with `t = s`, `eta = 0`).
pub fn analytic_separatrix(sys: &SystemDef) -> Result<ConnectingOrbit> {
    let (form, lifted) = closed_form_for(sys)
        .ok_or_else(|| Error::config(format!("no closed-form separatrix for `{}` (pendulum, duffing and their forced extensions)", sys.name)))?;
    let path = if lifted { Path::Lifted(form, 0.0) } else { Path::Closed(form) };
    // Guard against a renamed system with a different H0.
    for s in [-3.0, -0.7, 0.0, 0.4, 2.5] {
        let [q, p] = form.state(s);
        let y = if lifted { vec![q, p, s, 0.0] } else { vec![q, p] };
        let e = sys.hamiltonian(Hamiltonian::H0, &y, 0.0)?;
        if (e - form.energy()).abs() > 1e-12 {
            return Err(Error::config(format!("closed-form separatrix does not lie on H0 = {} for `{}`", form.energy(), sys.name)));
        }
    }
    let end = if lifted {
        let mode = OrbitMode::Section { index: 2, value: 0.0 };
        let rec = find_periodic_orbit(sys, &[0.0, 0.0, 0.0, 0.0], mode, &OrbitOptions::default())?;
        EndOrbit::periodic(sys, rec)?
    } else {
        EndOrbit::equilibrium(sys, &[0.0, 0.0])?
    };
    let mut orbit =
        ConnectingOrbit { source: end.clone(), target: end, kind: OrbitKind::Homoclinic, truncation: (0.0, 0.0), energy: form.energy(), path };
    let margin = 2.0;
    let sm = reach(sys, &orbit.source, |s| orbit.state(s), 0.0, -0.01, ASYM_TOL)? + margin;
    let sp = reach(sys, &orbit.target, |s| orbit.state(s), 0.0, 0.01, ASYM_TOL)? + margin;
    orbit.truncation = (sm, sp);
    Ok(orbit)
}

#[derive(Debug, Clone, Copy)]
pub struct SeparatrixOptions {
    pub seed_offset: f64,
    pub asym_tol: f64,
    pub t_max: f64,
    pub ode: OdeOptions,
    /// Largest mismatch accepted where the two halves are joined.
    pub glue_tol: f64,
}

impl Default for SeparatrixOptions {
    fn default() -> Self {
        SeparatrixOptions {
            seed_offset: 1e-7,
            asym_tol: ASYM_TOL,
            t_max: 100.0,
            ode: OdeOptions { max_step: 0.02, ..OdeOptions::with_tol(1e-13) },
            glue_tol: 1e-6,
        }
    }
}

struct Half {
    traj: Trajectory,
    center: f64,
}

/// Integrate from `seed` (direction `dir`) until the path has crossed over
/// to the other end orbit; returns the samples and the point of maximal
/// distance from both ends.
fn grow_half(sys: &SystemDef, from: &EndOrbit, to: &EndOrbit, seed: &[f64], dir: f64, opts: &SeparatrixOptions) -> Result<Half> {
    let escape = 10.0 * sys.distance(&from.point, &to.point).max(1.0);
    let r_of = |y: &[f64]| from.distance(sys, y).min(to.distance(sys, y));
    let mut pieces: Vec<Trajectory> = Vec::new();
    let mut y = seed.to_vec();
    let mut s = 0.0;
    let mut r_max: f64 = 0.0;
    loop {
        let piece = flow(sys, Hamiltonian::H0, &y, s, dir, &opts.ode)?;
        let mut done = false;
        let idx: Vec<usize> = if dir > 0.0 { (0..piece.len()).collect() } else { (0..piece.len()).rev().collect() };
        for i in idx {
            let p = piece.sample(i);
            let (a, b) = (from.distance(sys, p), to.distance(sys, p));
            if a > escape && b > escape {
                return Err(Error::solver(format!(
                    "no connection found at this tolerance: the branch escapes (distance {:.3e} from both end orbits)",
                    a.min(b)
                )));
            }
            let r = a.min(b);
            r_max = r_max.max(r);
            if r_max > 100.0 * opts.seed_offset && r < 0.25 * r_max && b <= a {
                done = true;
            }
        }
        s += dir;
        y = if dir > 0.0 { piece.last().to_vec() } else { piece.first().to_vec() };
        pieces.push(piece);
        if done {
            break;
        }
        if s.abs() > opts.t_max {
            return Err(Error::solver(format!("no connection found at this tolerance within t_max = {}", opts.t_max)));
        }
    }
    if dir < 0.0 {
        pieces.reverse();
    }
    let mut traj = pieces[0].clone();
    for p in &pieces[1..] {
        traj.append(p);
    }
    let (mut best, mut bi) = (f64::NEG_INFINITY, 0);
    for i in 0..traj.len() {
        let r = r_of(traj.sample(i));
        if r > best {
            best = r;
            bi = i;
        }
    }
    let lo = traj.times()[bi.saturating_sub(1)];
    let hi = traj.times()[(bi + 1).min(traj.len() - 1)];
    let center = golden_max(|s| Ok(r_of(&traj.state_at(s))), lo, hi, 1e-10)?;
    Ok(Half { traj, center })
}

/// Coordinates that take part in the matching of the two halves.
fn glue_mask(sys: &SystemDef) -> Vec<bool> {
    let cyclic = sys.cyclic_coordinates();
    (0..sys.dim()).map(|k| !cyclic.contains(&k)).collect()
}

fn glue_difference(sys: &SystemDef, mask: &[bool], a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|k| {
            if !mask[k] {
                0.0
            } else if let Some(l) = sys.circumference(k) {
                wrap_diff(a[k] - b[k], l)
            } else {
                a[k] - b[k]
            }
        })
        .collect()
}

/// Join an unstable half and a stable half at the centre of the former.
/// Returns (mismatch, parameter on the stable half).
fn glue(sys: &SystemDef, mask: &[bool], u: &Half, v: &Half) -> Option<(f64, f64)> {
    let yc = u.traj.state_at(u.center);
    let f = |sig: f64| -> Result<f64> {
        let d = glue_difference(sys, mask, &v.traj.state_at(sig), &yc);
        let dv = v.traj.derivative_at(sig);
        Ok(d.iter().zip(&dv).zip(mask).filter(|(_, m)| **m).map(|((a, b), _)| a * b).sum())
    };
    let lo = (v.center - 0.5).max(v.traj.start());
    let hi = (v.center + 0.5).min(v.traj.end());
    let sig = brent(f, lo, hi, 1e-13).ok()?;
    let d = glue_difference(sys, mask, &v.traj.state_at(sig), &yc);
    Some((d.iter().map(|x| x * x).sum::<f64>().sqrt(), sig))
}

/// The part of `traj` left (or right) of `at`, ending (starting) at `at`
/// exactly, with the last step recomputed instead of interpolated.
fn cut(sys: &SystemDef, traj: &Trajectory, at: f64, left: bool, opts: &OdeOptions) -> Result<Trajectory> {
    let ts = traj.times();
    if left {
        let i = ts.partition_point(|&x| x < at).saturating_sub(1);
        let mut out = traj.restrict(f64::NEG_INFINITY, ts[i]);
        out.append(&flow(sys, Hamiltonian::H0, traj.sample(i), ts[i], at - ts[i], opts)?);
        Ok(out)
    } else {
        let j = ts.partition_point(|&x| x <= at).min(ts.len() - 1);
        let mut out = flow(sys, Hamiltonian::H0, traj.sample(j), ts[j], at - ts[j], opts)?;
        out.append(&traj.restrict(ts[j], f64::INFINITY));
        Ok(out)
    }
}

fn make_tail(sys: &SystemDef, orbit: &EndOrbit, edge: f64, y: &[f64]) -> Tail {
    let (_, phase) = orbit.nearest(sys, y);
    let g = orbit.state_at_phase(phase);
    let gap = sys.difference(y, &g);
    let offset = (0..y.len()).map(|k| y[k] - g[k] - gap[k]).collect();
    Tail { edge, phase, offset, gap }
}

/// Connecting orbit from `source` to `target` leaving along `branch` times
/// the unstable eigenvector.
pub fn numeric_separatrix(
    sys: &SystemDef,
    source: &EndOrbit,
    target: &EndOrbit,
    branch: f64,
    opts: &SeparatrixOptions,
) -> Result<ConnectingOrbit> {
    if sys.time_dependent() {
        return Err(Error::config("connecting orbits are built for autonomous systems; extend the system first"));
    }
    if !(1e-9..=1e-5).contains(&opts.seed_offset) {
        return Err(Error::config("seed offset must lie in [1e-9, 1e-5]"));
    }
    opts.ode.validate()?;
    let d0 = opts.seed_offset;
    let seed = |o: &EndOrbit, v: &[f64], sign: f64| -> Vec<f64> { o.point.iter().zip(v).map(|(p, e)| p + sign * d0 * e).collect() };
    let useed = seed(source, &source.unstable, branch.signum());
    let mut u = grow_half(sys, source, target, &useed, 1.0, opts)?;
    let mask = glue_mask(sys);
    let mut best: Option<(f64, f64, Half)> = None;
    for sign in [1.0, -1.0] {
        let vseed = seed(target, &target.stable, sign);
        let Ok(v) = grow_half(sys, target, source, &vseed, -1.0, opts) else { continue };
        if let Some((mis, sig)) = glue(sys, &mask, &u, &v) {
            if best.as_ref().is_none_or(|b| mis < b.0) {
                best = Some((mis, sig, v));
            }
        }
    }
    let Some((mismatch, sig, mut v)) = best else {
        return Err(Error::solver("no connection found at this tolerance: the stable branch of the target was not reached"));
    };
    if mismatch > opts.glue_tol {
        return Err(Error::solver(format!(
            "no connection found at this tolerance: halves miss each other by {mismatch:.3e}"
        )));
    }
    // Extend both halves deeper into the end orbits.
    let reach_time = |o: &EndOrbit| (d0 / opts.asym_tol).ln() / o.lambda + 3.0;
    let back = flow(sys, Hamiltonian::H0, &useed, 0.0, -reach_time(source), &opts.ode)?;
    let mut ut = back;
    ut.append(&u.traj);
    u.traj = ut;
    let vseed = v.traj.state_at(0.0);
    let fwd = flow(sys, Hamiltonian::H0, &vseed, 0.0, reach_time(target), &opts.ode)?;
    v.traj.append(&fwd);

    let yc = u.traj.state_at(u.center);
    let ys = v.traj.state_at(sig);
    let shift: Vec<f64> = (0..yc.len())
        .map(|k| {
            if !mask[k] {
                yc[k] - ys[k]
            } else if let Some(l) = sys.circumference(k) {
                l * ((yc[k] - ys[k]) / l).round()
            } else {
                0.0
            }
        })
        .collect();
    let mut core = cut(sys, &u.traj, u.center, true, &opts.ode)?;
    core.shift(-u.center);
    let mut rest = cut(sys, &v.traj, sig, false, &opts.ode)?;
    rest.shift(-sig);
    rest.translate(&shift);
    core.append(&rest);

    let before = make_tail(sys, source, core.start(), core.first());
    let after = make_tail(sys, target, core.end(), core.last());
    let energy = sys.hamiltonian(Hamiltonian::H0, &yc, 0.0)?;
    let kind = if source.same_as(sys, target, 1e-8) { OrbitKind::Homoclinic } else { OrbitKind::Heteroclinic };
    let mut orbit = ConnectingOrbit {
        source: source.clone(),
        target: target.clone(),
        kind,
        truncation: (0.0, 0.0),
        energy,
        path: Path::Dense { core, before, after },
    };
    let margin = 2.0;
    let sm = reach(sys, source, |s| orbit.state(s), 0.0, -0.01, opts.asym_tol)? + margin;
    let sp = reach(sys, target, |s| orbit.state(s), 0.0, 0.01, opts.asym_tol)? + margin;
    orbit.truncation = (sm, sp);
    Ok(orbit)
}

/// Heteroclinic orbit of the paper example on the level `eta = 0`, from
/// the orbit over `x = 2 pi` to the orbit over `x = 0`.
pub fn paper_example_separatrix(sys: &SystemDef) -> Result<ConnectingOrbit> {
    if !sys.name.starts_with("paper-example") {
        return Err(Error::config("expected a paper-example system"));
    }
    let left = EndOrbit::from_guess(sys, &[0.0, 0.0, 0.0, 0.0], 0)?;
    let right = EndOrbit::from_guess(sys, &[0.0, 0.0, 2.0 * std::f64::consts::PI, 0.0], 0)?;
    // The lower branch (xi < 0) runs from x = 2 pi down to x = 0.
    let branch = if right.unstable[3] < 0.0 { 1.0 } else { -1.0 };
    numeric_separatrix(sys, &right, &left, branch, &SeparatrixOptions::default())
}

/// Connecting orbit used by default for a system: closed forms where
/// available, the paper example's heteroclinic orbit otherwise.
pub fn standard_separatrix(sys: &SystemDef) -> Result<ConnectingOrbit> {
    if closed_form_for(sys).is_some() {
        analytic_separatrix(sys)
    } else if sys.name.starts_with("paper-example") {
        paper_example_separatrix(sys)
    } else {
        Err(Error::config(format!(
            "no default connecting orbit for `{}`; give source and target orbit guesses",
            sys.name
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConservedFrame {
    pub labels: Vec<String>,
    #[serde(skip)]
    pub observables: Vec<Observable>,
    /// Minimum over samples of the smallest singular value of `(dA_j)`.
    pub certificate: f64,
    /// Largest `|{A_i, A_j}|` and `|{A_i, H0}|` seen on the samples.
    pub worst_commutator: f64,
}

impl ConservedFrame {
    pub fn expressions(&self) -> Vec<&Expression> {
        self.observables.iter().map(|o| &o.expr).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("frame serializes")
    }
}

/// Validate `d` commuting first integrals along `orbit` and certify that
/// their differentials are independent away from the end orbits.
pub fn conserved_frame(sys: &SystemDef, sources: &[&str], orbit: &ConnectingOrbit) -> Result<ConservedFrame> {
    let d = sys.degrees_of_freedom();
    if sources.len() != d {
        return Err(Error::config(format!("a frame needs {d} quantities for this system, got {}", sources.len())));
    }
    let obs: Vec<Observable> = sources.iter().map(|s| sys.observable(s)).collect::<Result<_>>()?;
    let h0 = sys.h0_observable();
    let n = sys.dim();
    let (a, b) = (-orbit.truncation.0, orbit.truncation.1);
    let mut worst: f64 = 0.0;
    for i in 0..64 {
        let s = a + (b - a) * i as f64 / 63.0;
        let y = orbit.state(s);
        for (x, ox) in obs.iter().enumerate() {
            let c = sys.poisson_bracket(ox, h0, &y, 0.0)?;
            worst = worst.max(c.abs());
            if c.abs() > 1e-10 {
                return Err(Error::config(format!("{{{}, H0}} = {c:.3e} at s = {s:.4}", sources[x])));
            }
            for (z, oz) in obs.iter().enumerate().skip(x + 1) {
                let c = sys.poisson_bracket(ox, oz, &y, 0.0)?;
                worst = worst.max(c.abs());
                if c.abs() > 1e-10 {
                    return Err(Error::config(format!("{{{}, {}}} = {c:.3e} at s = {s:.4}", sources[x], sources[z])));
                }
            }
        }
    }
    // Regularity on the middle part, where both end distances exceed a
    // tenth of their value at s = 0.
    let (d0a, d0b) = orbit.end_distances(sys, 0.0);
    let r0 = d0a.min(d0b);
    let edge = |dir: f64| -> Result<f64> {
        let mut s = 0.0;
        loop {
            let (p, q) = orbit.end_distances(sys, s + dir * 0.05);
            if p.min(q) < 0.1 * r0 || s.abs() > 50.0 {
                return Ok(s);
            }
            s += dir * 0.05;
        }
    };
    let (lo, hi) = (edge(-1.0)?, edge(1.0)?);
    let mut cert = f64::INFINITY;
    for i in 0..64 {
        let s = lo + (hi - lo) * i as f64 / 63.0;
        let y = orbit.state(s);
        let mut m = DMatrix::zeros(d, n);
        for (j, o) in obs.iter().enumerate() {
            let g = o.gradient(&y, 0.0)?;
            for k in 0..n {
                m[(j, k)] = g[k];
            }
        }
        let sv = m.singular_values();
        cert = cert.min(sv.min());
    }
    if !(cert > FRAME_TOL) {
        return Err(Error::config(format!(
            "frame is rank deficient on the connecting orbit (certificate {cert:.3e} < {FRAME_TOL:e})"
        )));
    }
    Ok(ConservedFrame { labels: sources.iter().map(|s| s.to_string()).collect(), observables: obs, certificate: cert, worst_commutator: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{catalog, extend_periodic};
    use std::collections::BTreeMap;
    use std::f64::consts::PI;

    fn sys(name: &str) -> SystemDef {
        catalog(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn pendulum_closed_form() {
        let s = sys("pendulum");
        let o = analytic_separatrix(&s).unwrap();
        let y = o.state(0.0);
        assert!((y[0] - PI).abs() < 1e-15 && (y[1] - 2.0).abs() < 1e-15);
        assert_eq!(o.kind, OrbitKind::Homoclinic);
        let (sm, sp) = o.truncation;
        assert!(sm > 20.0 && sp > 20.0, "{sm} {sp}");
        assert!(o.end_distances(&s, sp).1 < ASYM_TOL);
    }

    #[test]
    fn extended_pendulum_lift() {
        let s = extend_periodic(&sys("forced-pendulum")).unwrap();
        let o = analytic_separatrix(&s).unwrap();
        assert!((o.lambda_plus() - 1.0).abs() < 1e-8);
        let e = s.hamiltonian(Hamiltonian::H0, &o.state(0.3), 0.0).unwrap();
        assert!((e - 1.0).abs() < 1e-14);
    }

    #[test]
    fn renamed_system_rejected() {
        let s = SystemDef::new("pendulum", vec![crate::CoordinatePair::line("q", "p")], "p^2/2 + q^2", "0", BTreeMap::new(), false, None)
            .unwrap();
        assert!(analytic_separatrix(&s).is_err());
    }
}
