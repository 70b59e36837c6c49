//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Sum of the per-panel |Kronrod − Gauss| estimates.
    pub error: f64,
    /// Integral of |f|, used for rounding floors.
    pub abs_value: f64,
    pub evaluations: usize,
}

impl QuadResult {
    pub fn zero() -> Self {
        QuadResult { value: 0.0, error: 0.0, abs_value: 0.0, evaluations: 0 }
    }

    pub fn merge(self, other: QuadResult) -> QuadResult {
        QuadResult {
            value: self.value + other.value,
            error: self.error + other.error,
            abs_value: self.abs_value + other.abs_value,
            evaluations: self.evaluations + other.evaluations,
        }
    }

    /// Error estimate including a floor for accumulated rounding.
    pub fn total_error(&self) -> f64 {
        self.error + 64.0 * f64::EPSILON * self.abs_value
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_value: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F>(f: &mut F, a: f64, b: f64) -> Result<Panel>
where
    F: FnMut(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for j in 0..7 {
        let x = h * XGK[j];
        let (f1, f2) = (f(c - x)?, f(c + x)?);
        k += WGK[j] * (f1 + f2);
        abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    let value = k * h;
    if !value.is_finite() {
        return Err(Error::Solver(format!("non-finite integrand on [{a}, {b}]")));
    }
    Ok(Panel { a, b, value, error: ((k - g) * h).abs(), abs_value: abs * h.abs() })
}

/// Integrate `f` over `[a, b]` until the summed panel error is below
/// `max(abs_tol, rel_tol * |I|)`, starting from `initial` equal panels.
pub fn integrate<F>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64, initial: usize) -> Result<QuadResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(QuadResult::zero());
    }
    let pieces = initial.max(1);
    let mut heap = BinaryHeap::new();
    let (mut value, mut error) = (0.0, 0.0);
    for i in 0..pieces {
        let lo = a + (b - a) * i as f64 / pieces as f64;
        let hi = a + (b - a) * (i + 1) as f64 / pieces as f64;
        let p = kronrod(&mut f, lo, hi)?;
        value += p.value;
        error += p.error;
        heap.push(p);
    }
    let mut evaluations = 15 * pieces;
    const MAX_PANELS: usize = 20_000;
    while error > abs_tol.max(rel_tol * value.abs()) && heap.len() < MAX_PANELS {
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            heap.push(worst);
            break;
        }
        let left = kronrod(&mut f, worst.a, mid)?;
        let right = kronrod(&mut f, mid, worst.b)?;
        evaluations += 30;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed drift from the running updates.
    let (mut v, mut e, mut av) = (0.0, 0.0, 0.0);
    for p in heap.iter() {
        v += p.value;
        e += p.error;
        av += p.abs_value;
    }
    Ok(QuadResult { value: v, error: e, abs_value: av, evaluations })
}

/// Composite trapezoid rule on `n` panels; used as an independent check.
pub fn trapezoid<F>(mut f: F, a: f64, b: f64, n: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a)? + f(b)?);
    for i in 1..n {
        sum += f(a + h * i as f64)?;
    }
    Ok(sum * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| Ok(x.powi(7) - 3.0 * x * x), -1.0, 2.0, 1e-14, 0.0, 1).unwrap();
        let exact = (256.0 - 1.0) / 8.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn sech_squared_integral() {
        let r = integrate(|x: f64| Ok(1.0 / x.cosh().powi(2)), -40.0, 40.0, 1e-13, 0.0, 8).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12, "{:?}", r);
        assert!(r.error < 1e-12);
    }

    #[test]
    fn oscillatory_integral_matches_closed_form() {
        // ∫ sech(s) tanh(s) sin(s) ds = π sech(π/2)
        let f = |s: f64| Ok(s.tanh() / s.cosh() * s.sin());
        let r = integrate(f, -45.0, 45.0, 1e-13, 0.0, 16).unwrap();
        let exact = std::f64::consts::PI / (std::f64::consts::FRAC_PI_2).cosh();
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let a = integrate(|x: f64| Ok(x.exp()), 0.0, 1.0, 1e-14, 0.0, 1).unwrap().value;
        let b = integrate(|x: f64| Ok(x.exp()), 1.0, 0.0, 1e-14, 0.0, 1).unwrap().value;
        assert!((a + b).abs() < 1e-15);
    }
}
