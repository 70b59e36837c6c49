//! Integral expressions for the Mel'nikov 1-form along a connecting orbit.
//!
//! `beta(X_A)` at a base point `m` is computed either as a convergent
//! improper integral of `{H1, A}` along the unperturbed orbit (when the
//! hypotheses guarantee decay) or through period windows
//! `[-n tau-, n tau+]`, to which the boundary terms at the perturbed end
//! orbits are added by the caller.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{find_periodic_orbit, flow_to, least_squares, real_eigenvector, OrbitMode, OrbitOptions};
use crate::ode::{self, OdeOptions};
use crate::phase::{bracket_from_gradients, symplectic_gradient, wrap_diff, Hamiltonian, Observable, SystemDef};
use crate::quad::{self, QuadResult};
use crate::roots::brent;
use crate::separatrix::{ConnectingOrbit, ConservedFrame, EndOrbit, OrbitKind};
use crate::{par, Error, Result};

pub const HYPOTHESIS_TOL: f64 = 1e-8;
pub const ZERO_RES_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    #[serde(rename = "convergent-criticalA")]
    CriticalA,
    #[serde(rename = "convergent-criticalH1")]
    CriticalH1,
    /// `A` is the unperturbed Hamiltonian and `H1` is constant on both end
    /// orbits, so the integrand is an exact derivative with limits.
    #[serde(rename = "convergent-energy")]
    Energy,
    #[serde(rename = "prescribed")]
    Prescribed,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::CriticalA => "convergent-criticalA",
            Mode::CriticalH1 => "convergent-criticalH1",
            Mode::Energy => "convergent-energy",
            Mode::Prescribed => "prescribed",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MelnikovOptions {
    /// Absolute tolerance of each quadrature.
    pub quad_tol: f64,
    pub n_max: usize,
    pub hypothesis_tol: f64,
}

impl Default for MelnikovOptions {
    fn default() -> Self {
        MelnikovOptions { quad_tol: 1e-11, n_max: 12, hypothesis_tol: HYPOTHESIS_TOL }
    }
}

/// A base point on the connecting manifold: the orbit point at `s0`,
/// translated along the cyclic coordinates by `shift`.
#[derive(Debug, Clone)]
pub struct Base {
    pub s0: f64,
    pub shift: Vec<f64>,
}

impl Base {
    pub fn at(orbit: &ConnectingOrbit, s0: f64) -> Base {
        Base { s0, shift: vec![0.0; orbit.state(s0).len()] }
    }

    /// Base at `s0` whose time coordinate reads `t0` (extended systems);
    /// plain `at` otherwise.
    pub fn with_time(sys: &SystemDef, orbit: &ConnectingOrbit, s0: f64, t0: f64) -> Base {
        let mut b = Base::at(orbit, s0);
        if let Some(k) = sys.time_pair() {
            b.shift[2 * k] = t0 - orbit.state(s0)[2 * k];
        }
        b
    }

    /// Chart inverse: the base equal to `m`, if `m` lies on the manifold.
    pub fn locate(sys: &SystemDef, orbit: &ConnectingOrbit, m: &[f64]) -> Result<Base> {
        let cyclic = sys.cyclic_coordinates();
        let mask: Vec<bool> = (0..m.len()).map(|k| !cyclic.contains(&k)).collect();
        let diff = |s: f64| -> Vec<f64> {
            let y = orbit.state(s);
            (0..m.len())
                .map(|k| {
                    if !mask[k] {
                        0.0
                    } else if let Some(l) = sys.circumference(k) {
                        wrap_diff(y[k] - m[k], l)
                    } else {
                        y[k] - m[k]
                    }
                })
                .collect()
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (a, b) = (-orbit.truncation.0, orbit.truncation.1);
        let step = 0.05;
        let (mut best, mut bs) = (f64::INFINITY, 0.0);
        let mut s = a;
        while s <= b {
            let d = norm(&diff(s));
            if d < best {
                best = d;
                bs = s;
            }
            s += step;
        }
        let g = |s: f64| -> Result<f64> {
            let d = diff(s);
            let v = sys.vector_field(Hamiltonian::H0, &orbit.state(s), 0.0)?;
            Ok(d.iter().zip(&v).zip(&mask).filter(|(_, k)| **k).map(|((x, y), _)| x * y).sum())
        };
        let s0 = brent(g, bs - step, bs + step, 1e-14).unwrap_or(bs);
        let dist = norm(&diff(s0));
        if dist > 1e-6 {
            return Err(Error::config(format!("point is not on the connecting manifold (distance {dist:.3e})")));
        }
        let y = orbit.state(s0);
        let shift = (0..m.len()).map(|k| if mask[k] { 0.0 } else { m[k] - y[k] }).collect();
        Ok(Base { s0, shift })
    }

    pub fn state_into(&self, orbit: &ConnectingOrbit, u: f64, out: &mut [f64]) {
        orbit.state_into(self.s0 + u, out);
        for (o, d) in out.iter_mut().zip(&self.shift) {
            *o += d;
        }
    }

    pub fn point(&self, orbit: &ConnectingOrbit) -> Vec<f64> {
        let mut y = vec![0.0; self.shift.len()];
        self.state_into(orbit, 0.0, &mut y);
        y
    }
}

/// `{H1, A}` along `phi^u(base)`.
struct Integrand<'a> {
    h1: &'a Observable,
    a: &'a Observable,
    orbit: &'a ConnectingOrbit,
    base: &'a Base,
}

impl Integrand<'_> {
    fn eval(&self, u: f64) -> Result<f64> {
        let n = self.base.shift.len();
        let mut y = vec![0.0; n];
        self.base.state_into(self.orbit, u, &mut y);
        let mut g1 = vec![0.0; n];
        let mut ga = vec![0.0; n];
        self.h1.gradient_into(&y, 0.0, &mut g1)?;
        self.a.gradient_into(&y, 0.0, &mut ga)?;
        Ok(bracket_from_gradients(&g1, &ga))
    }
}

/// `{H1, A}` at `m(s)` with the time coordinate shifted by `t_offset`.
pub fn bracket_along_orbit(sys: &SystemDef, h1: &Observable, a: &Observable, orbit: &ConnectingOrbit, s: f64, t_offset: f64) -> Result<f64> {
    let mut base = Base::at(orbit, 0.0);
    if let Some(k) = sys.time_pair() {
        base.shift[2 * k] = t_offset;
    }
    Integrand { h1, a, orbit, base: &base }.eval(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct MelnikovSample {
    pub s0: f64,
    /// Time coordinate of the base point (extended systems).
    pub t0: f64,
    pub label: String,
    pub value: f64,
    pub error: f64,
    pub mode: Mode,
    /// Number of windows (prescribed mode), 0 otherwise.
    pub windows: usize,
    pub tail_bound: f64,
    /// Window partial values `I_1 .. I_n` (prescribed mode).
    pub sequence: Vec<f64>,
    pub diverging: bool,
}

fn orbit_samples(o: &EndOrbit) -> Vec<Vec<f64>> {
    match o.period() {
        Some(tau) => (0..32).map(|i| o.state_at_phase(tau * i as f64 / 32.0)).collect(),
        None => vec![o.point.clone()],
    }
}

fn max_gradient(obs: &Observable, pts: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for y in pts {
        let g = obs.gradient(y, 0.0)?;
        worst = worst.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(worst)
}

fn value_range(obs: &Observable, pts: &[Vec<f64>]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for y in pts {
        let v = obs.value(y, 0.0)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Is `a` the unperturbed Hamiltonian up to a constant? Checked on the
/// orbit and end-orbit samples.
fn is_h0(sys: &SystemDef, a: &Observable, orbit: &ConnectingOrbit) -> Result<bool> {
    let mut pts = orbit_samples(&orbit.source);
    pts.extend(orbit_samples(&orbit.target));
    pts.extend(orbit.samples(16).into_iter().map(|(_, y)| y));
    for y in &pts {
        let ga = a.gradient(y, 0.0)?;
        let gh = sys.h0_observable().gradient(y, 0.0)?;
        if ga.iter().zip(&gh).any(|(x, z)| (x - z).abs() > 1e-12 * (1.0 + z.abs())) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Which convergence hypothesis holds for `(A, H1)` on the end orbits.
pub fn check_hypothesis(sys: &SystemDef, a: &Observable, orbit: &ConnectingOrbit, tol: f64) -> Result<Mode> {
    let h1 = sys.h1_observable();
    let plus = orbit_samples(&orbit.target);
    let minus = orbit_samples(&orbit.source);
    let (ga_p, ga_m) = (max_gradient(a, &plus)?, max_gradient(a, &minus)?);
    if ga_p < tol && ga_m < tol {
        return Ok(Mode::CriticalA);
    }
    let (gh_p, gh_m) = (max_gradient(h1, &plus)?, max_gradient(h1, &minus)?);
    let (rp, rm) = (value_range(h1, &plus)?, value_range(h1, &minus)?);
    let equal_values = orbit.kind == OrbitKind::Homoclinic || (rp.0 - rm.0).abs() < tol;
    if gh_p < tol && gh_m < tol && equal_values {
        return Ok(Mode::CriticalH1);
    }
    let constant = rp.1 - rp.0 < tol && rm.1 - rm.0 < tol;
    if constant && is_h0(sys, a, orbit)? {
        return Ok(Mode::Energy);
    }
    let (which, ga, gh) = if ga_p.max(gh_p) >= ga_m.max(gh_m) { ("gamma+", ga_p, gh_p) } else { ("gamma-", ga_m, gh_m) };
    Err(Error::Guard {
        guard: "convergence-hypothesis",
        detail: format!(
            "neither A nor H1 is critical on both end orbits: on {which} |dA| = {ga:.3e}, |dH1| = {gh:.3e} (limit {tol:e}); \
             use the prescribed mode"
        ),
    })
}

/// Fitted bound on `|f|` beyond `edge` (moving outward in direction `dir`):
/// `|f(u)| <= C e^{-lambda |u - edge|}`; returns `C`.
fn tail_constant(f: &dyn Fn(f64) -> Result<f64>, edge: f64, dir: f64, lambda: f64, window: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for i in 0..64 {
        let d = window * i as f64 / 63.0;
        let u = edge - dir * d;
        c = c.max(f(u)?.abs() * (-lambda * d).exp());
    }
    // The outermost window feeds the fit; allow for samples missing the peak.
    Ok(1.5 * c)
}

/// `int_{-inf}^{inf} f` given exponential decay rates on both sides.
fn improper(
    f: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    lambdas: (f64, f64),
    window: f64,
    tol: f64,
) -> Result<(QuadResult, f64)> {
    let (lm, lp) = lambdas;
    let mut tails = (0.0, 0.0);
    for _ in 0..6 {
        let cp = tail_constant(f, hi, 1.0, lp, window)?;
        let cm = tail_constant(f, lo, -1.0, lm, window)?;
        tails = (cm / lm, cp / lp);
        let mut grown = false;
        if tails.1 > 0.1 * tol {
            hi += ((tails.1 / (0.1 * tol)).ln() / lp).clamp(1.0, 20.0);
            grown = true;
        }
        if tails.0 > 0.1 * tol {
            lo -= ((tails.0 / (0.1 * tol)).ln() / lm).clamp(1.0, 20.0);
            grown = true;
        }
        if !grown {
            break;
        }
    }
    let panels = ((hi - lo) / 2.0).ceil() as usize;
    let q = quad::integrate(f, lo, hi, tol, 0.0, panels)?;
    Ok((q, tails.0 + tails.1))
}

fn fit_window(orbit: &ConnectingOrbit) -> f64 {
    let mut w: f64 = 2.0;
    for o in [&orbit.source, &orbit.target] {
        if let Some(t) = o.period() {
            w = w.max(t);
        }
    }
    w
}

/// Convergent form: `beta(X_A) = int {H1, A} o phi^t(m) dt`.
pub fn melnikov_convergent(
    sys: &SystemDef,
    a: &Observable,
    label: &str,
    orbit: &ConnectingOrbit,
    base: &Base,
    opts: &MelnikovOptions,
) -> Result<MelnikovSample> {
    let mode = check_hypothesis(sys, a, orbit, opts.hypothesis_tol)?;
    convergent_with_mode(sys, a, label, orbit, base, opts, mode)
}

fn convergent_with_mode(
    sys: &SystemDef,
    a: &Observable,
    label: &str,
    orbit: &ConnectingOrbit,
    base: &Base,
    opts: &MelnikovOptions,
    mode: Mode,
) -> Result<MelnikovSample> {
    let ig = Integrand { h1: sys.h1_observable(), a, orbit, base };
    let f = |u: f64| ig.eval(u);
    let lo = -orbit.truncation.0 - base.s0;
    let hi = orbit.truncation.1 - base.s0;
    let (q, tail) = improper(&f, lo, hi, (orbit.lambda_minus(), orbit.lambda_plus()), fit_window(orbit), opts.quad_tol)?;
    Ok(MelnikovSample {
        s0: base.s0,
        t0: base_time(sys, orbit, base),
        label: label.to_string(),
        value: q.value,
        error: q.total_error() + tail,
        mode,
        windows: 0,
        tail_bound: tail,
        sequence: Vec::new(),
        diverging: false,
    })
}

fn base_time(sys: &SystemDef, orbit: &ConnectingOrbit, base: &Base) -> f64 {
    sys.time_pair().map(|k| base.point(orbit)[2 * k]).unwrap_or(0.0)
}

/// `int_a^b {H1, A}` along the base trajectory; building block of the
/// window diagnostics.
pub fn window_integral(sys: &SystemDef, a: &Observable, orbit: &ConnectingOrbit, base: &Base, lo: f64, hi: f64, tol: f64) -> Result<QuadResult> {
    let ig = Integrand { h1: sys.h1_observable(), a, orbit, base };
    let panels = ((hi - lo).abs() / 0.5).ceil().max(1.0) as usize;
    quad::integrate(|u| ig.eval(u), lo, hi, tol, 0.0, panels)
}

/// Prescribed form: windows `[-n tau-, n tau+]`, `n = 1..n_max`.
pub fn melnikov_prescribed(
    sys: &SystemDef,
    a: &Observable,
    label: &str,
    orbit: &ConnectingOrbit,
    base: &Base,
    opts: &MelnikovOptions,
) -> Result<MelnikovSample> {
    if opts.n_max < 4 {
        return Err(Error::config("prescribed windows need n_max >= 4"));
    }
    let (tm, tp) = match (orbit.source.period(), orbit.target.period()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::config("prescribed windows need periodic end orbits (extend forced systems first)")),
    };
    let tol = opts.quad_tol / (2.0 * opts.n_max as f64);
    let mut q = window_integral(sys, a, orbit, base, -tm, tp, tol)?;
    let mut seq = vec![q.value];
    let mut quad_err = q.total_error();
    for n in 1..opts.n_max {
        let nf = n as f64;
        let right = window_integral(sys, a, orbit, base, nf * tp, (nf + 1.0) * tp, tol)?;
        let left = window_integral(sys, a, orbit, base, -(nf + 1.0) * tm, -nf * tm, tol)?;
        q = q.merge(right).merge(left);
        quad_err += right.total_error() + left.total_error();
        seq.push(q.value);
    }
    let spread = |w: &[f64]| w.iter().copied().fold(f64::NEG_INFINITY, f64::max) - w.iter().copied().fold(f64::INFINITY, f64::min);
    let k = seq.len();
    let last = &seq[k - 3..];
    let s_last = spread(last);
    let diverging = k >= 6 && s_last > 1e-6 && s_last > 2.0 * spread(&seq[k - 6..k - 3]);
    Ok(MelnikovSample {
        s0: base.s0,
        t0: base_time(sys, orbit, base),
        label: label.to_string(),
        value: last.iter().sum::<f64>() / 3.0,
        error: s_last + quad_err,
        mode: Mode::Prescribed,
        windows: k,
        tail_bound: 0.0,
        sequence: seq,
        diverging,
    })
}

/// Integrals over symmetric windows `[-T, T]`; off the period lattice these
/// do not settle when the integrand does not decay.
pub fn symmetric_windows(sys: &SystemDef, a: &Observable, orbit: &ConnectingOrbit, base: &Base, ts: &[f64], tol: f64) -> Result<Vec<f64>> {
    ts.iter().map(|&t| Ok(window_integral(sys, a, orbit, base, -t, t, tol)?.value)).collect()
}

/// Grid evaluation of `M(t0) = beta(X_A)` at bases `m(s0)` with time `t0`.
pub fn melnikov_function(
    sys: &SystemDef,
    a: &Observable,
    label: &str,
    orbit: &ConnectingOrbit,
    s0: f64,
    grid: &[f64],
    opts: &MelnikovOptions,
) -> Result<Vec<MelnikovSample>> {
    if sys.time_pair().is_none() {
        return Err(Error::config("Mel'nikov functions are sampled on extended systems"));
    }
    let mode = check_hypothesis(sys, a, orbit, opts.hypothesis_tol)?;
    par::map(grid, |&t0| {
        let base = Base::with_time(sys, orbit, s0, t0);
        convergent_with_mode(sys, a, label, orbit, &base, opts, mode)
    })
    .into_iter()
    .collect()
}

/// Same, in prescribed mode.
pub fn melnikov_function_prescribed(
    sys: &SystemDef,
    a: &Observable,
    label: &str,
    orbit: &ConnectingOrbit,
    s0: f64,
    grid: &[f64],
    opts: &MelnikovOptions,
) -> Result<Vec<MelnikovSample>> {
    par::map(grid, |&t0| {
        let base = Base::with_time(sys, orbit, s0, t0);
        melnikov_prescribed(sys, a, label, orbit, &base, opts)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ZeroRecord {
    pub t0: f64,
    pub residual: f64,
    pub slope: f64,
    pub nondegenerate: bool,
}

/// Zeros of a periodic function sampled on `grid` (one period `[0, period)`),
/// refined on the continuous evaluator `eval`.
pub fn find_zeros(
    grid: &[f64],
    values: &[f64],
    period: f64,
    eval: &(dyn Fn(f64) -> Result<f64> + Sync),
    slope_tol: Option<f64>,
) -> Result<Vec<ZeroRecord>> {
    if grid.len() < 16 || grid.len() != values.len() {
        return Err(Error::config("zero search needs at least 16 samples over one period"));
    }
    let amp = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slope_tol = slope_tol.unwrap_or(1e-4 * amp);
    let n = grid.len();
    let mut out: Vec<ZeroRecord> = Vec::new();
    for i in 0..n {
        let (a, fa) = (grid[i], values[i]);
        let (b, fb) = if i + 1 < n { (grid[i + 1], values[i + 1]) } else { (grid[0] + period, values[0]) };
        if fa == 0.0 && fb == 0.0 {
            continue;
        }
        if fa.signum() == fb.signum() && fa != 0.0 && fb != 0.0 {
            continue;
        }
        if fb == 0.0 {
            // Counted by the next bracket.
            continue;
        }
        let t = brent(eval, a, b, 1e-13)?;
        let t = t.rem_euclid(period);
        let t = if period - t < 1e-9 { t - period } else { t };
        let residual = eval(t)?.abs();
        let h = 1e-5;
        let slope = (eval(t + h)? - eval(t - h)?) / (2.0 * h);
        out.push(ZeroRecord { t0: t, residual, slope, nondegenerate: slope.abs() > slope_tol });
    }
    out.sort_by(|x, y| x.t0.total_cmp(&y.t0));
    Ok(out)
}

/// Value of the Mel'nikov potential at `m` relative to the base `m0`.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialValue {
    pub value: f64,
    pub error: f64,
    pub s: f64,
}

/// `L(m) = int (H1 o phi^t(m) - H1 o phi^t(m0)) dt`; legal only when H1 is
/// constant on both end orbits.
pub fn melnikov_potential(sys: &SystemDef, orbit: &ConnectingOrbit, m0: &Base, m: &[f64], opts: &MelnikovOptions) -> Result<PotentialValue> {
    potential_guard(sys, orbit, opts.hypothesis_tol)?;
    let bm = Base::locate(sys, orbit, m)?;
    potential_between(sys, orbit, m0, &bm, opts)
}

fn potential_guard(sys: &SystemDef, orbit: &ConnectingOrbit, tol: f64) -> Result<()> {
    let h1 = sys.h1_observable();
    for (name, o) in [("gamma+", &orbit.target), ("gamma-", &orbit.source)] {
        let (lo, hi) = value_range(h1, &orbit_samples(o))?;
        if hi - lo > tol {
            return Err(Error::Guard {
                guard: "h1-constant-on-orbits",
                detail: format!("H1 varies by {:.3e} on {name}; the potential integral does not converge", hi - lo),
            });
        }
    }
    if orbit.kind == OrbitKind::Heteroclinic {
        let a = h1.value(&orbit.target.point, 0.0)?;
        let b = h1.value(&orbit.source.point, 0.0)?;
        if (a - b).abs() > tol {
            return Err(Error::Guard {
                guard: "h1-constant-on-orbits",
                detail: format!("H1 takes different values on the end orbits ({a:.6e} vs {b:.6e})"),
            });
        }
    }
    Ok(())
}

fn potential_between(sys: &SystemDef, orbit: &ConnectingOrbit, m0: &Base, m: &Base, opts: &MelnikovOptions) -> Result<PotentialValue> {
    let h1 = sys.h1_observable();
    let n = m.shift.len();
    let f = |u: f64| -> Result<f64> {
        let mut y = vec![0.0; n];
        m.state_into(orbit, u, &mut y);
        let a = h1.value(&y, 0.0)?;
        m0.state_into(orbit, u, &mut y);
        Ok(a - h1.value(&y, 0.0)?)
    };
    let lo = -orbit.truncation.0 - m.s0.min(m0.s0);
    let hi = orbit.truncation.1 - m.s0.max(m0.s0);
    let (q, tail) = improper(&f, lo, hi, (orbit.lambda_minus(), orbit.lambda_plus()), fit_window(orbit), opts.quad_tol)?;
    Ok(PotentialValue { value: q.value, error: q.total_error() + tail, s: m.s0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialCheck {
    pub label: String,
    /// Central difference of `L` along the flow of `X_A`.
    pub dl: f64,
    pub beta: f64,
    pub beta_error: f64,
    pub difference: f64,
}

/// Compare `dL(X_A)` by finite differences along the frame flows with
/// `beta(X_A)` from the convergent integral, at the base `m`.
pub fn potential_consistency(
    sys: &SystemDef,
    frame: &ConservedFrame,
    orbit: &ConnectingOrbit,
    m: &Base,
    h: f64,
    opts: &MelnikovOptions,
) -> Result<Vec<PotentialCheck>> {
    potential_guard(sys, orbit, opts.hypothesis_tol)?;
    let y0 = m.point(orbit);
    let ode = OdeOptions::with_tol(1e-13);
    let mut out = Vec::new();
    for (label, a) in frame.labels.iter().zip(&frame.observables) {
        let along = |d: f64| -> Result<f64> {
            let n = y0.len();
            let mut g = vec![0.0; n];
            let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
                a.gradient_into(y, 0.0, &mut g)?;
                symplectic_gradient(&g, dy);
                Ok(())
            };
            let y = ode::advance(rhs, 0.0, &y0, d, &ode)?;
            let b = Base::locate(sys, orbit, &y)?;
            Ok(potential_between(sys, orbit, m, &b, opts)?.value)
        };
        let dl = (along(h)? - along(-h)?) / (2.0 * h);
        let beta = melnikov_convergent(sys, a, label, orbit, m, opts)?;
        out.push(PotentialCheck { label: label.clone(), dl, beta: beta.value, beta_error: beta.error, difference: (dl - beta.value).abs() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalIntegralReport {
    pub labels: Vec<String>,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub fit_residual_plus: Vec<f64>,
    pub fit_residual_minus: Vec<f64>,
    pub homoclinic: bool,
    /// Coefficients of the basis integrals in the frame.
    pub basis: Vec<Vec<f64>>,
    /// The same basis written out as expressions.
    pub basis_expressions: Vec<String>,
    pub p: usize,
    pub d: usize,
}

impl CriticalIntegralReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Least-squares `c` in `X_A = c X_H` over samples of an end orbit.
pub fn fit_c(sys: &SystemDef, a: &Observable, orbit: &EndOrbit) -> Result<(f64, f64)> {
    let pts = match orbit.period() {
        Some(tau) => (0..32).map(|i| orbit.state_at_phase(tau * i as f64 / 32.0)).collect(),
        None => vec![orbit.point.clone()],
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut fields = Vec::new();
    for y in &pts {
        let xa = a.vector_field(y, 0.0)?;
        let xh = sys.vector_field(Hamiltonian::H0, y, 0.0)?;
        num += xa.iter().zip(&xh).map(|(p, q)| p * q).sum::<f64>();
        den += xh.iter().map(|q| q * q).sum::<f64>();
        fields.push((xa, xh));
    }
    if den < 1e-24 {
        return Err(Error::solver("X_H vanishes on the end orbit; c(A) is undefined at an equilibrium"));
    }
    let c = num / den;
    let mut res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (xa, xh) in &fields {
        let r = xa.iter().zip(xh).map(|(p, q)| (p - c * q).powi(2)).sum::<f64>().sqrt();
        res = res.max(r);
        scale = scale.max(xh.iter().map(|q| q * q).sum::<f64>().sqrt());
    }
    Ok((c, res / scale))
}

/// Count the integrals of the frame that are critical on both end orbits.
pub fn critical_integral_basis(
    sys: &SystemDef,
    frame: &ConservedFrame,
    plus: &EndOrbit,
    minus: &EndOrbit,
) -> Result<CriticalIntegralReport> {
    let d = frame.observables.len();
    let homoclinic = plus.same_as(sys, minus, 1e-8);
    let mut cp = Vec::new();
    let mut cm = Vec::new();
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    for (label, a) in frame.labels.iter().zip(&frame.observables) {
        let (c1, r1) = fit_c(sys, a, plus)?;
        let (c2, r2) = fit_c(sys, a, minus)?;
        for r in [r1, r2] {
            if r > 1e-6 {
                return Err(Error::solver(format!("X_{label} is not a multiple of X_H on an end orbit (fit residual {r:.3e})")));
            }
        }
        cp.push(c1);
        cm.push(c2);
        rp.push(r1);
        rm.push(r2);
    }
    let rows = if homoclinic { 1 } else { 2 };
    let m = DMatrix::from_fn(rows, d, |i, j| if i == 0 { cp[j] } else { cm[j] });
    // Pad to a square matrix so the SVD exposes the full null space.
    let mut sq = DMatrix::zeros(d.max(rows), d);
    sq.view_mut((0, 0), (rows, d)).copy_from(&m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut basis = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s < 1e-8 {
            let v: Vec<f64> = v_t.row(k).iter().copied().collect();
            let mx = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            basis.push(v.iter().map(|x| x / mx).collect::<Vec<f64>>());
        }
    }
    let basis_expressions = basis
        .iter()
        .map(|b| {
            let mut e = frame.observables[0].expr.scale(b[0]);
            for j in 1..d {
                e = e.add(&frame.observables[j].expr.scale(b[j]));
            }
            e.to_string()
        })
        .collect();
    Ok(CriticalIntegralReport {
        labels: frame.labels.clone(),
        c_plus: cp,
        c_minus: cm,
        fit_residual_plus: rp,
        fit_residual_minus: rm,
        homoclinic,
        p: basis.len(),
        basis,
        basis_expressions,
        d,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryTerms {
    /// `d/de A(m_e^+)` and `d/de A(m_e^-)` at `e = 0`.
    pub plus: f64,
    pub minus: f64,
    pub plus_error: f64,
    pub minus_error: f64,
    /// `d/de A(p_e^+)` and `d/de A(p_e^-)`: A on the perturbed manifolds at
    /// the normal plane through the base point.
    pub manifold_plus: f64,
    pub manifold_minus: f64,
    pub step: f64,
}

impl BoundaryTerms {
    /// The manifold-side value of `beta(X_A)`.
    pub fn manifold_beta(&self) -> f64 {
        self.manifold_plus - self.manifold_minus
    }
}

struct Continued {
    point: Vec<f64>,
    period: f64,
    fibre: Vec<f64>,
}

fn continue_orbit(sys: &SystemDef, end: &EndOrbit, eps: f64, stable: bool, reference: &[f64]) -> Result<Continued> {
    let rec = end.record.as_ref().ok_or_else(|| Error::config("boundary terms need periodic end orbits"))?;
    let index = (0..sys.dim())
        .step_by(2)
        .max_by(|&i, &j| {
            let v = sys.vector_field(Hamiltonian::H0, &rec.point, 0.0).unwrap_or_default();
            v.get(i).unwrap_or(&0.0).abs().total_cmp(&v.get(j).unwrap_or(&0.0).abs())
        })
        .unwrap_or(0);
    let opts = OrbitOptions { which: Hamiltonian::Perturbed(eps), energy: Some(rec.energy), ..OrbitOptions::default() };
    let r = find_periodic_orbit(sys, &rec.point, OrbitMode::Section { index, value: rec.point[index] }, &opts)
        .map_err(|e| Error::solver(format!("continuation of an end orbit failed at eps = {eps:e}: {e}")))?;
    let mu = r.unstable_multiplier().ok_or_else(|| Error::solver("continued orbit lost hyperbolicity"))?;
    let target = if stable { 1.0 / mu } else { mu };
    let mut v: Vec<f64> = real_eigenvector(&r.monodromy_matrix(), target).iter().copied().collect();
    if v.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(Continued { point: r.point, period: r.period, fibre: v })
}

/// Boundary terms of the windowed formula by continuing the end orbits to
/// `e = +-h` and locating, on each perturbed manifold, the point in the
/// normal plane through the base point (the plane orthogonal to the frame
/// fields). Two-degree-of-freedom systems only.
pub fn boundary_terms(
    sys: &SystemDef,
    a: &Observable,
    frame: &ConservedFrame,
    orbit: &ConnectingOrbit,
    base: &Base,
    h: f64,
) -> Result<BoundaryTerms> {
    if sys.degrees_of_freedom() != 2 {
        return Err(Error::config("boundary terms are implemented for two degrees of freedom"));
    }
    let m = base.point(orbit);
    let n = m.len();
    let tangents = {
        let mut t = DMatrix::zeros(n, frame.observables.len());
        for (j, o) in frame.observables.iter().enumerate() {
            let v = o.vector_field(&m, 0.0)?;
            for k in 0..n {
                t[(k, j)] = v[k];
            }
        }
        let svd = t.svd(true, false);
        let u = svd.u.expect("requested U");
        if svd.singular_values.min() < 1e-8 {
            return Err(Error::solver("frame fields are dependent at the base point"));
        }
        (0..frame.observables.len()).map(|j| u.column(j).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>()
    };
    let ode = OdeOptions::with_tol(1e-13);
    let mut result = [(0.0, 0.0, 0.0); 2];
    for (side, stable) in [(0, true), (1, false)] {
        let end = if stable { &orbit.target } else { &orbit.source };
        let tau0 = end.period().ok_or_else(|| Error::config("boundary terms need periodic end orbits"))?;
        let reach = 10.0;
        let nwin = (reach / tau0).ceil().max(1.0);
        let dir = if stable { 1.0 } else { -1.0 };
        let c0 = continue_orbit(sys, end, 0.0, stable, if stable { &end.stable } else { &end.unstable })?;
        // Initial guess from the unperturbed orbit itself.
        let far = base.point_at(orbit, dir * nwin * tau0);
        let (_, sigma0) = end.nearest(sys, &far);
        let z = base.point_at(orbit, dir * nwin * tau0 - sigma0);
        let dz = sys.difference(&z, &c0.point);
        let grow = (end.lambda * nwin * tau0).exp();
        let alpha0 = dz.iter().zip(&c0.fibre).map(|(p, q)| p * q).sum::<f64>() * grow;
        let mut guess = (sigma0, alpha0);
        let mut vals = Vec::new();
        for eps in [0.0, h, -h] {
            let c = if eps == 0.0 { Continued { point: c0.point.clone(), period: c0.period, fibre: c0.fibre.clone() } } else {
                continue_orbit(sys, end, eps, stable, &c0.fibre)?
            };
            let which = Hamiltonian::Perturbed(eps);
            let tt = nwin * c.period;
            let scale = (-end.lambda * tt).exp();
            let shoot = |sigma: f64, alpha: f64| -> Result<Vec<f64>> {
                let start: Vec<f64> = c.point.iter().zip(&c.fibre).map(|(p, v)| p + alpha * scale * v).collect();
                flow_to(sys, which, &start, 0.0, sigma - dir * tt, &ode)
            };
            let resid = |sigma: f64, alpha: f64| -> Result<DVector<f64>> {
                let p = shoot(sigma, alpha)?;
                let d = sys.difference(&p, &m);
                Ok(DVector::from_iterator(tangents.len(), tangents.iter().map(|t| t.iter().zip(&d).map(|(x, y)| x * y).sum())))
            };
            let (mut sg, mut al) = guess;
            let mut ok = false;
            for _ in 0..30 {
                let r = resid(sg, al)?;
                if r.norm() < 1e-12 {
                    ok = true;
                    break;
                }
                let (ds, da) = (1e-7, 1e-7 * al.abs().max(1e-3));
                let js = (resid(sg + ds, al)? - &r) / ds;
                let ja = (resid(sg, al + da)? - &r) / da;
                let jm = DMatrix::from_columns(&[js, ja]);
                let step = least_squares(&jm, &(-r.clone()), 1e-14);
                sg += step[0];
                al += step[1];
                // Forward flow off the source orbit amplifies integration
                // error; accept the noise floor once Newton stagnates.
                if r.norm() < 1e-8 && step[0].abs() < 1e-9 && step[1].abs() < 1e-8 * (1.0 + al.abs()) {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::solver(format!("phase projection did not converge at eps = {eps:e}")));
            }
            if eps == 0.0 {
                guess = (sg, al);
            }
            let p = shoot(sg, al)?;
            let on_orbit = flow_to(sys, which, &c.point, 0.0, sg, &ode)?;
            vals.push((a.value(&on_orbit, 0.0)?, a.value(&p, 0.0)?));
        }
        let (b0, o0) = vals[0];
        let (bp, op) = vals[1];
        let (bm, om) = vals[2];
        let d = (bp - bm) / (2.0 * h);
        let err = ((bp - b0) / h - (b0 - bm) / h).abs() / 2.0;
        result[side] = (d, err, (op - om) / (2.0 * h));
        let _ = o0;
    }
    Ok(BoundaryTerms {
        plus: result[0].0,
        plus_error: result[0].1,
        manifold_plus: result[0].2,
        minus: result[1].0,
        minus_error: result[1].1,
        manifold_minus: result[1].2,
        step: h,
    })
}

impl Base {
    /// `phi^u` of the base point.
    pub fn point_at(&self, orbit: &ConnectingOrbit, u: f64) -> Vec<f64> {
        let mut y = vec![0.0; self.shift.len()];
        self.state_into(orbit, u, &mut y);
        y
    }
}

/// Mel'nikov setup for a time-periodic system: its extension and the
/// closed-form connecting orbit.
pub fn extended_setup(sys: &SystemDef) -> Result<(SystemDef, ConnectingOrbit)> {
    let ext = if sys.time_dependent() { crate::phase::extend_periodic(sys)? } else { sys.clone() };
    let orbit = crate::separatrix::standard_separatrix(&ext)?;
    Ok((ext, orbit))
}

/// Amplitude and mean of sampled values.
pub fn summary(values: &[f64]) -> (f64, f64) {
    let amp = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    (amp, mean)
}
