//! The acceptance suite as library code, shared by `melnikov verify` and the
//! `acceptance` test target.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{find_periodic_orbit, symplectic_defect, OrbitMode, OrbitOptions};
use crate::expr;
use crate::melnikov::{
    critical_integral_basis, extended_setup, find_zeros, melnikov_convergent, melnikov_function, melnikov_potential,
    melnikov_prescribed, potential_consistency, symmetric_windows, summary, Base, MelnikovOptions, Mode,
};
use crate::phase::{catalog, extend_periodic, SystemDef};
use crate::quad;
use crate::separatrix::{conserved_frame, paper_example_separatrix};
use crate::splitting::{first_order_check, SplitOptions};
use crate::{Error, Result};

pub const CHECKS: &[&str] = &[
    "example-periods",
    "example-counting",
    "pendulum-melnikov",
    "exactness",
    "flow-shift",
    "beta-h0",
    "mode-consistency",
    "splitting",
    "numerics",
    "potential",
];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget: Option<f64>,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let budget = self.budget.map(|b| format!(" (limit {b} s)")).unwrap_or_default();
        format!(
            "{:<5} {:<18} {:>7.2} s{}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            budget,
            self.detail
        )
    }
}

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn sys(name: &str) -> Result<SystemDef> {
    catalog(name, &none())
}

pub fn pendulum_amplitude() -> f64 {
    2.0 * PI / (PI / 2.0).cosh()
}

/// Closed form for the forced pendulum at `omega = 1`.
pub fn pendulum_closed_form(t0: f64) -> f64 {
    pendulum_amplitude() * t0.sin()
}

/// Dense trapezoid on the closed-form integrand `sin q(u) cos(t0 + u)`,
/// `sin q = -2 sech u tanh u`; spectrally accurate for this analytic,
/// exponentially decaying integrand.
pub fn pendulum_trapezoid(t0: f64) -> f64 {
    quad::trapezoid(|u| Ok(-2.0 / u.cosh() * u.tanh() * (t0 + u).cos()), -45.0, 45.0, 18_000).expect("finite integrand")
}

type Outcome = Result<(bool, String)>;

fn example_periods() -> Outcome {
    let s = sys("paper-example")?;
    let section = OrbitMode::Section { index: 0, value: 0.0 };
    let inner = find_periodic_orbit(&s, &[0.0, 0.01, 0.0, 0.0], section, &OrbitOptions::default())?;
    let outer = find_periodic_orbit(&s, &[0.0, 0.01, 6.2832, 0.0], section, &OrbitOptions::default())?;
    let ok = (outer.period - 1.0).abs() < 1e-8 && (inner.period - 2.0 / 3.0).abs() < 1e-8;
    Ok((ok, format!("periods {:.10} and {:.10}", outer.period, inner.period)))
}

fn example_counting() -> Outcome {
    let s = sys("paper-example")?;
    let o = paper_example_separatrix(&s)?;
    let h = s.h0().to_string();
    let f = conserved_frame(&s, &[h.as_str(), "eta"], &o)?;
    let r = critical_integral_basis(&s, &f, &o.target, &o.source)?;
    let e = sys("paper-example-equal")?;
    let oe = paper_example_separatrix(&e)?;
    let he = e.h0().to_string();
    let fe = conserved_frame(&e, &[he.as_str(), "eta"], &oe)?;
    let re = critical_integral_basis(&e, &fe, &oe.target, &oe.source)?;
    let ok = (r.c_plus[1] - 2.0 / 3.0).abs() < 1e-6 && (r.c_minus[1] - 1.0).abs() < 1e-6 && r.p == 0 && re.p == 1;
    Ok((ok, format!("c+(eta) = {:.9}, c-(eta) = {:.9}, p = {}, equal-period p = {}", r.c_plus[1], r.c_minus[1], r.p, re.p)))
}

struct Pendulum {
    ext: SystemDef,
    orbit: crate::separatrix::ConnectingOrbit,
    a: crate::phase::Observable,
    opts: MelnikovOptions,
}

impl Pendulum {
    fn new() -> Result<Self> {
        let (ext, orbit) = extended_setup(&sys("forced-pendulum")?)?;
        let a = ext.observable("p^2/2 + cos(q)")?;
        Ok(Pendulum { ext, orbit, a, opts: MelnikovOptions::default() })
    }

    fn at(&self, s0: f64, t0: f64) -> Result<crate::melnikov::MelnikovSample> {
        melnikov_convergent(&self.ext, &self.a, "H0", &self.orbit, &Base::with_time(&self.ext, &self.orbit, s0, t0), &self.opts)
    }

    fn grid() -> Vec<f64> {
        (0..128).map(|k| 2.0 * PI * k as f64 / 128.0).collect()
    }

    fn samples(&self) -> Result<Vec<f64>> {
        let m = melnikov_function(&self.ext, &self.a, "H0", &self.orbit, 0.0, &Self::grid(), &self.opts)?;
        Ok(m.into_iter().map(|s| s.value).collect())
    }
}

fn pendulum_melnikov() -> Outcome {
    let p = Pendulum::new()?;
    let vals = p.samples()?;
    let (amp, _) = summary(&vals);
    let exact = pendulum_amplitude();
    let rel = (amp - exact).abs() / exact;
    let mut oracle: f64 = 0.0;
    for t0 in [0.4, 1.3, 2.2, 5.0] {
        oracle = oracle.max((p.at(0.0, t0)?.value - pendulum_trapezoid(t0)).abs());
    }
    let eval = |t: f64| p.at(0.0, t).map(|s| s.value);
    let zeros = find_zeros(&Pendulum::grid(), &vals, 2.0 * PI, &eval, None)?;
    let zero_err = zeros.iter().map(|z| {
        let k = (z.t0 / PI).round();
        (z.t0 - k * PI).abs()
    });
    let zero_err = zero_err.fold(0.0, f64::max);
    let all_nondeg = zeros.iter().all(|z| z.nondegenerate);
    let ok = rel < 1e-6 && oracle < 1e-10 && zeros.len() == 2 && zero_err < 1e-6 && all_nondeg;
    Ok((
        ok,
        format!(
            "amplitude {amp:.9} (rel err {rel:.1e}), oracle gap {oracle:.1e}, {} zeros, max |t* - k pi| {zero_err:.1e}, nondegenerate {all_nondeg}",
            zeros.len()
        ),
    ))
}

fn exactness() -> Outcome {
    let vals = Pendulum::new()?.samples()?;
    let (amp, mean) = summary(&vals);
    let ok = mean.abs() < 1e-8 * amp;
    Ok((ok, format!("|mean| / amplitude = {:.2e}", mean.abs() / amp)))
}

fn flow_shift() -> Outcome {
    let p = Pendulum::new()?;
    let mut worst: f64 = 0.0;
    for sigma in [0.3, 1.7] {
        for t0 in [0.0, 0.9, 2.6, 4.4] {
            let moved = p.at(sigma, t0)?.value;
            let home = p.at(0.0, t0 - sigma)?.value;
            worst = worst.max((moved - home).abs());
        }
    }
    Ok((worst < 1e-8, format!("max difference {worst:.2e}")))
}

fn beta_h0() -> Outcome {
    let p = Pendulum::new()?;
    let h = p.ext.observable(&p.ext.h0().to_string())?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..16 {
        let t0 = 2.0 * PI * k as f64 / 16.0;
        let s0 = -1.5 + 0.2 * k as f64;
        let s = melnikov_convergent(&p.ext, &h, "H0~", &p.orbit, &Base::with_time(&p.ext, &p.orbit, s0, t0), &p.opts)?;
        ok &= s.value.abs() <= 2.0 * s.error;
        worst = worst.max(s.value.abs() / s.error);
    }
    Ok((ok, format!("max |value| / error = {worst:.3} over 16 base points")))
}

fn mode_consistency() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    let opts = MelnikovOptions::default();
    let cases: [(&str, &str, f64, f64); 3] =
        [("forced-pendulum", "p^2/2 + cos(q)", 0.0, 0.7), ("forced-pendulum", "p^2/2 + cos(q)", 1.2, 2.9), ("forced-duffing", "p^2/2 - q^2/2 + q^4/4", 0.0, 1.1)];
    for (name, a_src, s0, t0) in cases {
        let (ext, orbit) = extended_setup(&sys(name)?)?;
        let a = ext.observable(a_src)?;
        let base = Base::with_time(&ext, &orbit, s0, t0);
        let c = melnikov_convergent(&ext, &a, "A", &orbit, &base, &opts)?;
        let pr = melnikov_prescribed(&ext, &a, "A", &orbit, &base, &opts)?;
        let diff = (c.value - pr.value).abs();
        let good = c.mode == Mode::CriticalA && diff <= c.error + pr.error;
        ok &= good;
        detail.push(format!("{name}@{t0}: |diff| {diff:.1e} vs {:.1e}", c.error + pr.error));
    }
    let s = sys("paper-example")?;
    let o = paper_example_separatrix(&s)?;
    let eta = s.observable("eta")?;
    let base = Base::with_time(&s, &o, 0.0, 0.2);
    let pr = melnikov_prescribed(&s, &eta, "eta", &o, &base, &opts)?;
    let tail = &pr.sequence[pr.sequence.len() - 3..];
    let spread = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min);
    let ts: Vec<f64> = (0..7).map(|k| 6.25 + 0.9 * k as f64).collect();
    let sym = symmetric_windows(&s, &eta, &o, &base, &ts, 1e-11)?;
    let osc = sym.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sym.iter().copied().fold(f64::INFINITY, f64::min);
    ok &= pr.windows <= 12 && spread < 1e-6 && osc > 1e-2;
    detail.push(format!("windows spread {spread:.1e}, symmetric oscillation {osc:.3}"));
    Ok((ok, detail.join("; ")))
}

fn splitting() -> Outcome {
    let s = sys("forced-pendulum")?;
    let phases: Vec<f64> = (0..5).map(|j| PI / 2.0 + j as f64 * 2.0 * PI / 5.0).collect();
    let r = first_order_check(&s, &phases, &[1e-2, 1e-3], &pendulum_closed_form, pendulum_amplitude(), &SplitOptions::default())?;
    let dev = r.max_deviation(1e-3);
    let ratio = r.residual_ratio();
    let ok = dev < 0.05 && (5.0..=20.0).contains(&ratio);
    Ok((ok, format!("max deviation {:.2}% at eps 1e-3, residual ratio {ratio:.2}, order {:.2}", 100.0 * dev, r.order)))
}

/// A random smooth expression in `q` and `p`, built so that it is finite on
/// `[-1, 1]^2`.
pub fn random_expression(rng: &mut impl Rng, depth: usize) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..3) {
            0 => "q".into(),
            1 => "p".into(),
            _ => format!("{:.3}", rng.random_range(-2.0..2.0)),
        };
    }
    let a = random_expression(rng, depth - 1);
    match rng.random_range(0..9) {
        0 => format!("sin({a})"),
        1 => format!("cos({a})"),
        2 => format!("exp(sin({a}))"),
        3 => format!("({a})^2"),
        4 => format!("sqrt(1 + ({a})^2)"),
        k => {
            let b = random_expression(rng, depth - 1);
            match k {
                5 => format!("({a}) + ({b})"),
                6 => format!("({a}) - ({b})"),
                7 => format!("({a}) * ({b})"),
                _ => format!("({a}) / (2 + ({b})^2)"),
            }
        }
    }
}

/// Worst relative gap between symbolic and central-difference derivatives.
pub fn derivative_gap(src: &str, q: f64, p: f64) -> Result<f64> {
    let e = expr::parse(src, &["q", "p"])?;
    let at = |q: f64, p: f64| -> Result<f64> { Ok(e.evaluate(&HashMap::from([("q".to_string(), q), ("p".to_string(), p)]))?) };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (var, fd) in [("q", (at(q + h, p)? - at(q - h, p)?) / (2.0 * h)), ("p", (at(q, p + h)? - at(q, p - h)?) / (2.0 * h))] {
        let d = e.differentiate(var).evaluate(&HashMap::from([("q".to_string(), q), ("p".to_string(), p)]))?;
        worst = worst.max((d - fd).abs() / d.abs().max(1.0));
    }
    Ok(worst)
}

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let src = random_expression(&mut rng, 4);
        let (q, p) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        worst = worst.max(derivative_gap(&src, q, p)?);
    }
    let ext = extend_periodic(&sys("forced-pendulum")?)?;
    let rec = find_periodic_orbit(&ext, &[0.0, 0.0, 0.0, 0.0], OrbitMode::Section { index: 2, value: 0.0 }, &OrbitOptions::default())?;
    let big = (2.0 * PI).exp();
    let mut mods: Vec<f64> = rec.multipliers.iter().map(|m| m.re).collect();
    mods.sort_by(|a, b| b.total_cmp(a));
    let pair = ((mods[0] - big) / big).abs().max(((mods[3] - 1.0 / big) * big).abs());
    let pe = sys("paper-example")?;
    let inner = find_periodic_orbit(&pe, &[0.0, 0.01, 0.0, 0.0], OrbitMode::Section { index: 0, value: 0.0 }, &OrbitOptions::default())?;
    let defect = symplectic_defect(&rec.monodromy_matrix()).max(symplectic_defect(&inner.monodromy_matrix()));
    let ok = worst < 1e-6 && defect < 1e-7 && pair < 1e-6 && rec.unit_multiplicity() == 2;
    Ok((
        ok,
        format!(
            "derivative gap {worst:.1e}, symplectic defect {defect:.1e}, multiplier {:.4} (rel err {pair:.1e}), unit multiplicity {}",
            mods[0],
            rec.unit_multiplicity()
        ),
    ))
}

fn potential() -> Outcome {
    let forced = sys("forced-pendulum")?.with_h1("(1 - cos(q))*cos(t)", Some(2.0 * PI))?;
    let (ext, orbit) = extended_setup(&forced)?;
    let f = conserved_frame(&ext, &["p^2/2 + cos(q)", "eta"], &orbit)?;
    let opts = MelnikovOptions::default();
    let base = Base::with_time(&ext, &orbit, 0.4, 1.3);
    let checks = potential_consistency(&ext, &f, &orbit, &base, 1e-3, &opts)?;
    let worst = checks.iter().map(|c| c.difference).fold(0.0, f64::max);
    let s = sys("paper-example")?;
    let o = paper_example_separatrix(&s)?;
    let m = o.state(0.5);
    let guard = match melnikov_potential(&s, &o, &Base::at(&o, 0.0), &m, &opts) {
        Err(Error::Guard { guard, .. }) => guard == "h1-constant-on-orbits",
        _ => false,
    };
    Ok((worst < 1e-5 && guard, format!("max |dL(X_A) - beta(X_A)| {worst:.1e}, guard on paper example {guard}")))
}

fn budget(name: &str) -> Option<f64> {
    match name {
        "example-periods" => Some(5.0),
        "example-counting" => Some(10.0),
        "pendulum-melnikov" => Some(5.0),
        "splitting" => Some(60.0),
        _ => None,
    }
}

pub fn run_check(name: &str) -> Result<CheckResult> {
    let name: &'static str = CHECKS.iter().find(|c| **c == name).ok_or_else(|| Error::config(format!("unknown check `{name}`")))?;
    let start = Instant::now();
    let out = match name {
        "example-periods" => example_periods(),
        "example-counting" => example_counting(),
        "pendulum-melnikov" => pendulum_melnikov(),
        "exactness" => exactness(),
        "flow-shift" => flow_shift(),
        "beta-h0" => beta_h0(),
        "mode-consistency" => mode_consistency(),
        "splitting" => splitting(),
        "numerics" => numerics(),
        _ => potential(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let limit = budget(name);
    let in_time = limit.is_none_or(|b| seconds < b);
    let (passed, detail) = match out {
        Ok((ok, d)) => (ok && in_time, if in_time { d } else { format!("{d}; over time budget") }),
        Err(e) => (false, format!("error: {e}")),
    };
    Ok(CheckResult { name, passed, detail, seconds, budget: limit })
}

/// Run the named checks (all when `only` is empty), in suite order.
pub fn run(only: &[String]) -> Result<Vec<CheckResult>> {
    for o in only {
        if !CHECKS.contains(&o.as_str()) {
            return Err(Error::config(format!("unknown check `{o}` (known: {})", CHECKS.join(", "))));
        }
    }
    CHECKS.iter().filter(|c| only.is_empty() || only.iter().any(|o| o == *c)).map(|c| run_check(c)).collect()
}
