//! Brute-force splitting oracle for one-degree-of-freedom forced systems.
//!
//! The perturbed saddle of the stroboscopic map is continued by Newton, its
//! stable and unstable curves are grown from the linear eigendirections, and
//! the unperturbed energy is compared where both curves cross a transversal
//! to the separatrix. At first order the gap is `eps * M(t0)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{inverse_stroboscopic_map, real_eigenvector, stroboscopic_jacobian, stroboscopic_map};
use crate::ode::OdeOptions;
use crate::phase::{Hamiltonian, SystemDef};
use crate::roots::brent;
use crate::{fmt17, par, Error, Result};

/// Orientation of the gap: H0 on the stable curve minus H0 on the unstable
/// one. Calibrated on the forced pendulum at the maximum of M, where the gap
/// and M(pi/2) are both positive.
pub const GAP_SIGN: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    pub ode: OdeOptions,
    /// Offset of the seed along the eigenvector.
    pub delta0: f64,
    pub refine_max: f64,
    pub angle_max: f64,
    pub budget: usize,
    pub escape_radius: f64,
    /// Half-width of the transversal window.
    pub window: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ode: OdeOptions::with_tol(1e-12),
            delta0: 1e-8,
            refine_max: 0.05,
            angle_max: 0.2,
            budget: 200_000,
            escape_radius: 10.0,
            window: 0.1,
        }
    }
}

fn check_system(sys: &SystemDef) -> Result<f64> {
    if sys.degrees_of_freedom() != 1 {
        return Err(Error::config("the splitting oracle works on one-degree-of-freedom forced systems"));
    }
    sys.forcing_period().ok_or_else(|| Error::config("the splitting oracle needs a periodically forced system"))
}

/// Newton on `strobe(x) - x` starting from `guess`.
pub fn perturbed_fixed_point(sys: &SystemDef, eps: f64, t0: f64, guess: &[f64], opts: &SplitOptions) -> Result<Vec<f64>> {
    check_system(sys)?;
    if eps.abs() > 0.1 {
        return Err(Error::config("perturbation too large for the splitting oracle (|eps| <= 0.1)"));
    }
    let mut x = guess.to_vec();
    for _ in 0..30 {
        let (y, j) = stroboscopic_jacobian(sys, &x, t0, eps, &opts.ode)?;
        let r = DVector::from_vec(sys.difference(&y, &x));
        if r.norm() < 1e-13 {
            return Ok(x);
        }
        let a = j - DMatrix::identity(2, 2);
        let dx = a.lu().solve(&(-&r)).ok_or_else(|| Error::solver("strobe fixed point: singular Newton matrix"))?;
        x[0] += dx[0];
        x[1] += dx[1];
        if dx.norm() < 1e-15 {
            break;
        }
    }
    let y = stroboscopic_map(sys, &x, t0, eps, &opts.ode)?;
    let res = sys.distance(&y, &x);
    if res > 1e-11 {
        return Err(Error::solver(format!("strobe fixed point did not converge (residual {res:.3e})")));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Stable,
    Unstable,
}

/// Generator of one branch: `point(u) = P^{floor u}(fp + delta0 mu^{frac u} v)`,
/// with `P` the strobe map (unstable) or its inverse (stable).
#[derive(Debug, Clone)]
pub struct Branch {
    pub side: Side,
    pub eps: f64,
    pub t0: f64,
    pub fixed_point: Vec<f64>,
    pub direction: Vec<f64>,
    /// Expansion factor of `P` (or `P^-1`) along `direction`.
    pub multiplier: f64,
    delta0: f64,
    ode: OdeOptions,
}

impl Branch {
    /// The branch leaving `fp` in the direction whose first component has the
    /// sign of `orient`; `lift` is added to the fixed point (unwrapped
    /// coordinates on circles).
    pub fn new(sys: &SystemDef, side: Side, eps: f64, t0: f64, fp: &[f64], lift: &[f64], orient: f64, opts: &SplitOptions) -> Result<Branch> {
        let (_, j) = stroboscopic_jacobian(sys, fp, t0, eps, &opts.ode)?;
        let ev = j.clone().complex_eigenvalues();
        let mut mu: Vec<f64> = ev.iter().map(|z| z.re).collect();
        if ev.iter().any(|z| z.im.abs() > 1e-9) {
            return Err(Error::solver("strobe fixed point is not hyperbolic"));
        }
        mu.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        if (mu[1].abs() - 1.0).abs() < 1e-6 {
            return Err(Error::solver("strobe fixed point is not hyperbolic"));
        }
        let (target, multiplier) = match side {
            Side::Unstable => (mu[1], mu[1]),
            Side::Stable => (mu[0], 1.0 / mu[0]),
        };
        if multiplier < 0.0 {
            return Err(Error::solver("reflection hyperbolic strobe maps are not supported"));
        }
        let mut v: Vec<f64> = real_eigenvector(&j, target).iter().copied().collect();
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        if v[0] * orient < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let fixed_point = fp.iter().zip(lift).map(|(a, b)| a + b).collect();
        Ok(Branch { side, eps, t0, fixed_point, direction: v, multiplier, delta0: opts.delta0, ode: opts.ode })
    }

    fn map(&self, sys: &SystemDef, y: &[f64]) -> Result<Vec<f64>> {
        match self.side {
            Side::Unstable => stroboscopic_map(sys, y, self.t0, self.eps, &self.ode),
            Side::Stable => inverse_stroboscopic_map(sys, y, self.t0, self.eps, &self.ode),
        }
    }

    pub fn point(&self, sys: &SystemDef, u: f64) -> Result<Vec<f64>> {
        let k = u.floor().max(0.0);
        let r = self.delta0 * self.multiplier.powf(u - k);
        let mut y: Vec<f64> = self.fixed_point.iter().zip(&self.direction).map(|(a, b)| a + r * b).collect();
        for _ in 0..k as usize {
            y = self.map(sys, &y)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldPolyline {
    pub side: Side,
    pub eps: f64,
    pub t0: f64,
    pub fixed_point: Vec<f64>,
    pub params: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub arclen: Vec<f64>,
    pub truncated: bool,
}

impl ManifoldPolyline {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arclen,q,p\n");
        for (a, p) in self.arclen.iter().zip(&self.points) {
            s.push_str(&format!("{},{},{}\n", fmt17(*a), fmt17(p[0]), fmt17(p[1])));
        }
        s
    }

    pub fn length(&self) -> f64 {
        *self.arclen.last().unwrap_or(&0.0)
    }
}

fn turning(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    let (u, v) = ([b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]]);
    let cross = u[0] * v[1] - u[1] * v[0];
    let dot = u[0] * v[0] + u[1] * v[1];
    cross.atan2(dot).abs()
}

fn seg(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// Grow a branch to arc length `target` with adaptive insertion.
pub fn manifold_polyline(sys: &SystemDef, branch: &Branch, target: f64, opts: &SplitOptions) -> Result<ManifoldPolyline> {
    check_system(sys)?;
    let pt = |u: f64| -> Result<[f64; 2]> {
        let y = branch.point(sys, u)?;
        Ok([y[0], y[1]])
    };
    let mut params = vec![0.0];
    let mut points = vec![pt(0.0)?];
    let mut length = 0.0;
    let mut truncated = false;
    let step = 1.0 / 16.0;
    let fp = [branch.fixed_point[0], branch.fixed_point[1]];
    'grow: while length < target {
        let u1 = params.last().copied().unwrap_or(0.0) + step;
        let mut pending = vec![(u1, pt(u1)?)];
        while let Some((u, p)) = pending.pop() {
            let (ul, pl) = (*params.last().unwrap(), *points.last().unwrap());
            let too_long = seg(&pl, &p) > opts.refine_max;
            let too_sharp = points.len() >= 2 && turning(&points[points.len() - 2], &pl, &p) > opts.angle_max;
            if (too_long || too_sharp) && u - ul > 1e-9 {
                if points.len() + pending.len() >= opts.budget {
                    truncated = true;
                    break 'grow;
                }
                let um = 0.5 * (u + ul);
                pending.push((u, p));
                pending.push((um, pt(um)?));
                continue;
            }
            length += seg(&pl, &p);
            params.push(u);
            points.push(p);
            if seg(&fp, &p) > opts.escape_radius {
                truncated = true;
                break 'grow;
            }
            if length >= target {
                break 'grow;
            }
        }
    }
    let mut arclen = vec![0.0];
    for w in points.windows(2) {
        arclen.push(arclen.last().unwrap() + seg(&w[0], &w[1]));
    }
    Ok(ManifoldPolyline { side: branch.side, eps: branch.eps, t0: branch.t0, fixed_point: branch.fixed_point.clone(), params, points, arclen, truncated })
}

/// The transversal `q = q_cross` near the separatrix point `(q_cross, p_ref)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Transversal {
    pub q: f64,
    pub p: f64,
    pub window: f64,
}

/// First crossing of the polyline with the transversal, refined on the
/// branch generator. Returns the crossing state.
pub fn crossing(sys: &SystemDef, branch: &Branch, line: &ManifoldPolyline, tr: &Transversal) -> Result<Vec<f64>> {
    for (i, w) in line.points.windows(2).enumerate() {
        let (a, b) = (w[0][0] - tr.q, w[1][0] - tr.q);
        if a == 0.0 || a.signum() != b.signum() {
            let mid = 0.5 * (w[0][1] + w[1][1]);
            if (mid - tr.p).abs() > tr.window + 0.05 {
                continue;
            }
            let (ua, ub) = (line.params[i], line.params[i + 1]);
            let u = brent(|u| Ok(branch.point(sys, u)?[0] - tr.q), ua, ub, 1e-15)?;
            let y = branch.point(sys, u)?;
            if (y[1] - tr.p).abs() <= tr.window {
                return Ok(y);
            }
        }
    }
    Err(Error::solver(format!(
        "{:?} curve does not cross the transversal q = {} within |p - {}| <= {}",
        line.side, tr.q, tr.p, tr.window
    )))
}

/// `H0(stable crossing) - H0(unstable crossing)`.
pub fn energy_gap(
    sys: &SystemDef,
    stable: (&Branch, &ManifoldPolyline),
    unstable: (&Branch, &ManifoldPolyline),
    tr: &Transversal,
) -> Result<f64> {
    let s = crossing(sys, stable.0, stable.1, tr)?;
    let u = crossing(sys, unstable.0, unstable.1, tr)?;
    let hs = sys.hamiltonian(Hamiltonian::H0, &s, 0.0)?;
    let hu = sys.hamiltonian(Hamiltonian::H0, &u, 0.0)?;
    Ok(GAP_SIGN * (hs - hu))
}

/// Saddle, transversal and branch orientation for a catalog forced system.
#[derive(Debug, Clone)]
pub struct SplitGeometry {
    pub saddle: Vec<f64>,
    /// Shift from the saddle to the far end of the separatrix (unwrapped).
    pub lift: Vec<f64>,
    pub transversal: Transversal,
    /// Sign of the q-component of the unstable and stable directions.
    pub orient: (f64, f64),
}

pub fn geometry(sys: &SystemDef) -> Result<SplitGeometry> {
    match sys.name.as_str() {
        // Upper separatrix p = 2 sin(q/2) from q = 0 to q = 2 pi.
        "forced-pendulum" => Ok(SplitGeometry {
            saddle: vec![0.0, 0.0],
            lift: vec![2.0 * std::f64::consts::PI, 0.0],
            transversal: Transversal { q: std::f64::consts::PI, p: 2.0, window: 0.1 },
            orient: (1.0, -1.0),
        }),
        other => Err(Error::config(format!("no splitting geometry for `{other}`"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitCell {
    pub t0: f64,
    pub eps: f64,
    pub gap: f64,
    pub ratio: f64,
    pub reference: f64,
    /// `|gap/eps - M(t0)| / amplitude`.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplittingReport {
    pub cells: Vec<SplitCell>,
    pub amplitude: f64,
    /// Mean `|gap/eps - M|` per eps value.
    pub residuals: Vec<(f64, f64)>,
    /// Slope of log residual against log eps.
    pub order: f64,
}

impl SplittingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Residual at the largest eps over the residual at the smallest.
    pub fn residual_ratio(&self) -> f64 {
        let first = self.residuals.first().map(|r| r.1).unwrap_or(f64::NAN);
        let last = self.residuals.last().map(|r| r.1).unwrap_or(f64::NAN);
        first / last
    }

    pub fn max_deviation(&self, eps: f64) -> f64 {
        self.cells.iter().filter(|c| c.eps == eps).map(|c| c.deviation).fold(0.0, f64::max)
    }
}

/// Energy gap at one `(t0, eps)` cell.
pub fn gap_at(sys: &SystemDef, geo: &SplitGeometry, t0: f64, eps: f64, opts: &SplitOptions) -> Result<f64> {
    let fp = perturbed_fixed_point(sys, eps, t0, &geo.saddle, opts)?;
    let zero = vec![0.0; fp.len()];
    let ub = Branch::new(sys, Side::Unstable, eps, t0, &fp, &zero, geo.orient.0, opts)?;
    let sb = Branch::new(sys, Side::Stable, eps, t0, &fp, &geo.lift, geo.orient.1, opts)?;
    // Enough arc to pass the transversal: half the separatrix plus slack.
    let reach = 5.0;
    let ul = manifold_polyline(sys, &ub, reach, opts)?;
    let sl = manifold_polyline(sys, &sb, reach, opts)?;
    energy_gap(sys, (&sb, &sl), (&ub, &ul), &geo.transversal)
}

/// Compare `gap/eps` with `M(t0)` over the product grid.
pub fn first_order_check(
    sys: &SystemDef,
    phases: &[f64],
    eps_list: &[f64],
    reference: &dyn Fn(f64) -> f64,
    amplitude: f64,
    opts: &SplitOptions,
) -> Result<SplittingReport> {
    if eps_list.len() < 2 {
        return Err(Error::config("first-order check needs at least two eps values"));
    }
    let geo = geometry(sys)?;
    let grid: Vec<(f64, f64)> = eps_list.iter().flat_map(|&e| phases.iter().map(move |&t| (t, e))).collect();
    let gaps: Vec<Result<f64>> = par::map(&grid, |&(t0, eps)| gap_at(sys, &geo, t0, eps, opts));
    let mut cells = Vec::new();
    for (&(t0, eps), g) in grid.iter().zip(gaps) {
        let gap = g?;
        let m = reference(t0);
        let ratio = gap / eps;
        cells.push(SplitCell { t0, eps, gap, ratio, reference: m, deviation: (ratio - m).abs() / amplitude });
    }
    let residuals: Vec<(f64, f64)> = eps_list
        .iter()
        .map(|&e| {
            let sel: Vec<&SplitCell> = cells.iter().filter(|c| c.eps == e).collect();
            (e, sel.iter().map(|c| (c.ratio - c.reference).abs()).sum::<f64>() / sel.len() as f64)
        })
        .collect();
    let n = residuals.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = residuals.iter().map(|(e, r)| (e.ln(), r.ln())).unzip();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(SplittingReport { cells, amplitude, residuals, order: num / den })
}
