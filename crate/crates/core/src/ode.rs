//! Dormand–Prince 5(4) with FSAL and cubic Hermite dense output.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    /// Mixed absolute/relative tolerance per step.
    pub tol: f64,
    /// Upper bound on the step; also bounds the Hermite interpolation error.
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { tol: 1e-12, max_step: 0.05, min_step: 1e-14, max_steps: 5_000_000 }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-14..=1e-6).contains(&self.tol) {
            return Err(Error::Config(format!("integration tolerance {} outside [1e-14, 1e-6]", self.tol)));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Samples `(s_i, y_i, y'_i)` with `s` strictly increasing.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    s: Vec<f64>,
    y: Vec<f64>,
    dy: Vec<f64>,
    pub tol: f64,
    pub stats: StepStats,
}

impl Trajectory {
    fn new(dim: usize, tol: f64) -> Self {
        Trajectory { dim, s: Vec::new(), y: Vec::new(), dy: Vec::new(), tol, stats: StepStats::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.s
    }

    pub fn start(&self) -> f64 {
        self.s[0]
    }

    pub fn end(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sample_derivative(&self, i: usize) -> &[f64] {
        &self.dy[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.sample(0)
    }

    pub fn last(&self) -> &[f64] {
        self.sample(self.len() - 1)
    }

    fn push(&mut self, s: f64, y: &[f64], dy: &[f64]) {
        self.s.push(s);
        self.y.extend_from_slice(y);
        self.dy.extend_from_slice(dy);
    }

    fn reverse(&mut self) {
        let n = self.len();
        let d = self.dim;
        self.s.reverse();
        for buf in [&mut self.y, &mut self.dy] {
            let mut out = Vec::with_capacity(buf.len());
            for i in (0..n).rev() {
                out.extend_from_slice(&buf[i * d..(i + 1) * d]);
            }
            *buf = out;
        }
    }

    /// Shift the parameter so that the old value `s` becomes `s + delta`.
    pub fn shift(&mut self, delta: f64) {
        for s in &mut self.s {
            *s += delta;
        }
    }

    /// Add `offset[k]` to component `k` of every sample.
    pub fn translate(&mut self, offset: &[f64]) {
        for i in 0..self.len() {
            for (k, o) in offset.iter().enumerate() {
                self.y[i * self.dim + k] += o;
            }
        }
    }

    /// Concatenate `other`, which must start where `self` ends.
    pub fn append(&mut self, other: &Trajectory) {
        assert_eq!(self.dim, other.dim);
        let skip = usize::from(!self.is_empty() && other.start() <= self.end());
        for i in skip..other.len() {
            let s = other.s[i];
            if self.is_empty() || s > self.end() {
                self.push(s, other.sample(i), other.sample_derivative(i));
            }
        }
        self.stats.accepted += other.stats.accepted;
        self.stats.rejected += other.stats.rejected;
        self.stats.evaluations += other.stats.evaluations;
    }

    /// Keep samples with `s` in `[lo, hi]`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Trajectory {
        let mut out = Trajectory::new(self.dim, self.tol);
        for i in 0..self.len() {
            if self.s[i] >= lo && self.s[i] <= hi {
                out.push(self.s[i], self.sample(i), self.sample_derivative(i));
            }
        }
        out
    }

    fn segment(&self, s: f64) -> usize {
        let n = self.len();
        if s <= self.s[0] {
            return 0;
        }
        if s >= self.s[n - 1] {
            return n.saturating_sub(2);
        }
        self.s.partition_point(|&x| x <= s).saturating_sub(1).min(n - 2)
    }

    /// Cubic Hermite interpolation; clamps outside the stored span.
    pub fn state_into(&self, s: f64, out: &mut [f64]) {
        let n = self.len();
        if n == 1 || s <= self.s[0] {
            out.copy_from_slice(self.sample(0));
            return;
        }
        if s >= self.s[n - 1] {
            out.copy_from_slice(self.sample(n - 1));
            return;
        }
        let i = self.segment(s);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        let th = (s - s0) / h;
        let th2 = th * th;
        let th3 = th2 * th;
        let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
        let h10 = th3 - 2.0 * th2 + th;
        let h01 = -2.0 * th3 + 3.0 * th2;
        let h11 = th3 - th2;
        let (y0, y1) = (self.sample(i), self.sample(i + 1));
        let (d0, d1) = (self.sample_derivative(i), self.sample_derivative(i + 1));
        for k in 0..self.dim {
            out[k] = h00 * y0[k] + h * h10 * d0[k] + h01 * y1[k] + h * h11 * d1[k];
        }
    }

    pub fn state_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.state_into(s, &mut out);
        out
    }

    /// Derivative of the Hermite interpolant.
    pub fn derivative_at(&self, s: f64) -> Vec<f64> {
        let n = self.len();
        if n == 1 {
            return self.sample_derivative(0).to_vec();
        }
        let s = s.clamp(self.s[0], self.s[n - 1]);
        let i = self.segment(s);
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        let th = (s - s0) / h;
        let th2 = th * th;
        let g00 = (6.0 * th2 - 6.0 * th) / h;
        let g10 = 3.0 * th2 - 4.0 * th + 1.0;
        let g01 = (-6.0 * th2 + 6.0 * th) / h;
        let g11 = 3.0 * th2 - 2.0 * th;
        let (y0, y1) = (self.sample(i), self.sample(i + 1));
        let (d0, d1) = (self.sample_derivative(i), self.sample_derivative(i + 1));
        (0..self.dim).map(|k| g00 * y0[k] + g10 * d0[k] + g01 * y1[k] + g11 * d1[k]).collect()
    }

    /// CSV with header `s,<names...>`, 17 significant digits.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("s");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&crate::fmt17(self.s[i]));
            for v in self.sample(i) {
                out.push(',');
                out.push_str(&crate::fmt17(*v));
            }
            out.push('\n');
        }
        out
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th minus 4th order weights.
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 - (-92097.0 / 339200.0);
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

/// Integrate `y' = f(s, y)` from `s0` to `s1` (either direction).
///
/// With `keep` false only the endpoint sample is stored, which is what the
/// stroboscopic maps and shooting residuals need.
pub fn integrate<F>(mut f: F, s0: f64, y0: &[f64], s1: f64, opts: &OdeOptions, keep: bool) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let mut traj = Trajectory::new(n, opts.tol);
    let dir = if s1 >= s0 { 1.0 } else { -1.0 };
    let span = (s1 - s0).abs();
    let mut k1 = vec![0.0; n];
    f(s0, y0, &mut k1)?;
    traj.stats.evaluations += 1;
    if y0.iter().chain(k1.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Solver(format!("non-finite state or vector field at s = {s0}")));
    }
    traj.push(s0, y0, &k1);
    if span == 0.0 {
        return Ok(traj);
    }
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut y = y0.to_vec();
    let mut s = s0;
    let mut h = opts.max_step.min(span).min(0.01);

    while (s1 - s) * dir > 0.0 {
        if traj.stats.accepted + traj.stats.rejected >= opts.max_steps {
            return Err(Error::Solver(format!("step budget exhausted at s = {s}")));
        }
        let remaining = (s1 - s).abs();
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        let hs = h * dir;
        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        f(s + C2 * hs, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(s + C3 * hs, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(s + C4 * hs, &tmp, &mut k4)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(s + C5 * hs, &tmp, &mut k5)?;
        for i in 0..n {
            tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(s + hs, &tmp, &mut k6)?;
        for i in 0..n {
            ynew[i] = y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        let snew = if last { s1 } else { s + hs };
        f(snew, &ynew, &mut k7)?;
        traj.stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.tol * (1.0 + y[i].abs().max(ynew[i].abs()));
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            h *= 0.25;
            traj.stats.rejected += 1;
            if h < opts.min_step {
                return Err(Error::Solver(format!("step size underflow near s = {s} (solution blows up)")));
            }
            continue;
        }
        if err <= 1.0 {
            s = snew;
            y.copy_from_slice(&ynew);
            k1.copy_from_slice(&k7);
            traj.stats.accepted += 1;
            if keep || last {
                if !keep {
                    traj.s.clear();
                    traj.y.clear();
                    traj.dy.clear();
                }
                traj.push(s, &y, &k1);
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.max_step);
        } else {
            traj.stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < opts.min_step {
                return Err(Error::Solver(format!("step size underflow near s = {s} (solution blows up)")));
            }
        }
    }
    if dir < 0.0 {
        traj.reverse();
    }
    Ok(traj)
}

/// Endpoint of the flow only.
pub fn advance<F>(f: F, s0: f64, y0: &[f64], s1: f64, opts: &OdeOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let traj = integrate(f, s0, y0, s1, opts, false)?;
    Ok(if s1 >= s0 { traj.last().to_vec() } else { traj.first().to_vec() })
}
