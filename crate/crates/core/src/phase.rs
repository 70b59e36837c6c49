//! Canonical phase spaces built from (position, momentum) pairs.
//!
//! Sign convention: `q' = dH/dp`, `p' = -dH/dq` and
//! `{f, g} = sum(df/dq dg/dp - df/dp dg/dq)`, so `df/dt = {f, H}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{self, Compiled, Expression};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Line,
    Circle(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePair {
    pub position: String,
    pub momentum: String,
    pub topology: Topology,
}

impl CoordinatePair {
    pub fn line(q: &str, p: &str) -> Self {
        CoordinatePair { position: q.into(), momentum: p.into(), topology: Topology::Line }
    }

    pub fn circle(q: &str, p: &str, circumference: f64) -> Self {
        CoordinatePair { position: q.into(), momentum: p.into(), topology: Topology::Circle(circumference) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hamiltonian {
    H0,
    H1,
    Perturbed(f64),
}

impl Hamiltonian {
    fn weights(self) -> (f64, f64) {
        match self {
            Hamiltonian::H0 => (1.0, 0.0),
            Hamiltonian::H1 => (0.0, 1.0),
            Hamiltonian::Perturbed(eps) => (1.0, eps),
        }
    }
}

static FLIP_BRACKET: AtomicBool = AtomicBool::new(false);

/// Mutation hook for the verification suite: flips the sign of the second
/// term of every Poisson bracket. Never enable outside tests.
pub fn set_bracket_fault(on: bool) {
    FLIP_BRACKET.store(on, Ordering::SeqCst);
}

pub fn bracket_fault() -> bool {
    FLIP_BRACKET.load(Ordering::SeqCst)
}

/// A scalar field compiled with its gradient, and optionally its Hessian,
/// against the slot layout `(q1, p1, ..., qn, pn, t)`.
#[derive(Debug, Clone)]
pub struct Observable {
    pub expr: Expression,
    value: Compiled,
    grad: Vec<Compiled>,
    hess: Option<Vec<Compiled>>,
    dim: usize,
}

impl Observable {
    fn build(expr: Expression, slots: &[&str], dim: usize, with_hessian: bool) -> Result<Self> {
        let value = expr.compile(slots)?;
        let partials: Vec<Expression> = slots[..dim].iter().map(|v| expr.differentiate(v)).collect();
        let grad = partials.iter().map(|d| d.compile(slots)).collect::<std::result::Result<Vec<_>, _>>()?;
        let hess = if with_hessian {
            let mut out = Vec::with_capacity(dim * dim);
            for d in &partials {
                for v in &slots[..dim] {
                    out.push(d.differentiate(v).compile(slots)?);
                }
            }
            Some(out)
        } else {
            None
        };
        Ok(Observable { expr, value, grad, hess, dim })
    }

    pub fn value(&self, y: &[f64], t: f64) -> Result<f64> {
        Ok(self.value.eval_split(y, &[t])?)
    }

    pub fn gradient_into(&self, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval_split(y, &[t])?;
        }
        Ok(())
    }

    pub fn gradient(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(y, t, &mut out)?;
        Ok(out)
    }

    /// Row-major Hessian; only for observables compiled with one.
    pub fn hessian_into(&self, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let hess = self.hess.as_ref().ok_or_else(|| Error::config("observable compiled without Hessian"))?;
        for (o, h) in out.iter_mut().zip(hess) {
            *o = h.eval_split(y, &[t])?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    /// Hamiltonian vector field of this observable.
    pub fn vector_field(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let g = self.gradient(y, t)?;
        let mut out = vec![0.0; self.dim];
        symplectic_gradient(&g, &mut out);
        Ok(out)
    }
}

/// `X = J grad H` with `J` the canonical structure in pair ordering.
pub fn symplectic_gradient(grad: &[f64], out: &mut [f64]) {
    for i in 0..grad.len() / 2 {
        out[2 * i] = grad[2 * i + 1];
        out[2 * i + 1] = -grad[2 * i];
    }
}

/// `{f, g}` from gradients, honoring the fault hook.
pub fn bracket_from_gradients(df: &[f64], dg: &[f64]) -> f64 {
    let flip = if bracket_fault() { -1.0 } else { 1.0 };
    let mut acc = 0.0;
    for i in 0..df.len() / 2 {
        acc += df[2 * i] * dg[2 * i + 1] - flip * df[2 * i + 1] * dg[2 * i];
    }
    acc
}

#[derive(Debug)]
struct CompiledSystem {
    h: [Observable; 2],
}

#[derive(Debug, Clone)]
pub struct SystemDef {
    pub name: String,
    pairs: Vec<CoordinatePair>,
    h0: Expression,
    h1: Expression,
    params: BTreeMap<String, f64>,
    time_dependent: bool,
    forcing_period: Option<f64>,
    time_pair: Option<usize>,
    compiled: Arc<CompiledSystem>,
}

/// A finite point with circle coordinates reduced to `[0, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint(pub Vec<f64>);

impl PhasePoint {
    pub fn new(sys: &SystemDef, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != sys.dim() {
            return Err(Error::config(format!("expected {} coordinates, got {}", sys.dim(), coords.len())));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("phase point has non-finite entries"));
        }
        let mut c = coords;
        sys.reduce(&mut c);
        Ok(PhasePoint(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn wrap(v: f64, l: f64) -> f64 {
    let r = v.rem_euclid(l);
    if r >= l {
        0.0
    } else {
        r
    }
}

/// Shortest signed representative of `d` modulo `l`.
pub fn wrap_diff(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

impl SystemDef {
    /// Build and validate a system. `h0`/`h1` may use coordinate names,
    /// parameter names and, when `time_dependent`, the name `t`.
    pub fn new(
        name: &str,
        pairs: Vec<CoordinatePair>,
        h0: &str,
        h1: &str,
        params: BTreeMap<String, f64>,
        time_dependent: bool,
        forcing_period: Option<f64>,
    ) -> Result<Self> {
        let declared = declared_names(&pairs, &params, time_dependent)?;
        let refs: Vec<&str> = declared.iter().map(String::as_str).collect();
        let h0 = expr::parse(h0, &refs)?;
        let h1 = expr::parse(if h1.trim().is_empty() { "0" } else { h1 }, &refs)?;
        Self::from_expressions(name, pairs, h0, h1, params, time_dependent, forcing_period, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_expressions(
        name: &str,
        pairs: Vec<CoordinatePair>,
        h0: Expression,
        h1: Expression,
        params: BTreeMap<String, f64>,
        time_dependent: bool,
        forcing_period: Option<f64>,
        time_pair: Option<usize>,
    ) -> Result<Self> {
        declared_names(&pairs, &params, time_dependent)?;
        for p in &pairs {
            if let Topology::Circle(l) = p.topology {
                if !(l.is_finite() && l > 0.0) {
                    return Err(Error::config(format!("circumference of `{}` must be finite and positive", p.position)));
                }
            }
        }
        if h0.depends_on("t") && !pairs.iter().any(|p| p.position == "t") {
            return Err(Error::config("H0 must not depend on `t`"));
        }
        if h1.depends_on("t") && !time_dependent && !pairs.iter().any(|p| p.position == "t") {
            return Err(Error::config("H1 references `t` but the system is not flagged time-dependent"));
        }
        if time_dependent {
            match forcing_period {
                Some(tf) if tf.is_finite() && tf > 0.0 => {}
                _ => return Err(Error::config("time-dependent systems need a positive forcing period")),
            }
        }
        if let Some(k) = time_pair {
            if k >= pairs.len() || !matches!(pairs[k].topology, Topology::Circle(_)) {
                return Err(Error::config("time coordinate must be a circle position"));
            }
        }
        let dim = 2 * pairs.len();
        let lookup = |n: &str| params.get(n).copied();
        let h0s = h0.substitute(&lookup);
        let h1s = h1.substitute(&lookup);
        let mut slots: Vec<&str> = Vec::with_capacity(dim + 1);
        for p in &pairs {
            slots.push(&p.position);
            slots.push(&p.momentum);
        }
        slots.push("t");
        let compiled = CompiledSystem {
            h: [Observable::build(h0s, &slots, dim, true)?, Observable::build(h1s, &slots, dim, true)?],
        };
        let sys = SystemDef {
            name: name.to_string(),
            pairs,
            h0,
            h1,
            params,
            time_dependent,
            forcing_period: if time_dependent { forcing_period } else { None },
            time_pair,
            compiled: Arc::new(compiled),
        };
        if time_dependent {
            sys.check_periodicity()?;
        }
        Ok(sys)
    }

    fn check_periodicity(&self) -> Result<()> {
        let tf = self.forcing_period.expect("checked by constructor");
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let h1 = &self.compiled.h[1];
        for _ in 0..32 {
            let y: Vec<f64> = (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(0.0..tf);
            let (a, b) = (h1.value(&y, t)?, h1.value(&y, t + tf)?);
            if (a - b).abs() >= 1e-12 {
                return Err(Error::config(format!(
                    "H1 is not periodic with period {tf}: |H1(t) - H1(t + T)| = {:.3e} at t = {t}",
                    (a - b).abs()
                )));
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[CoordinatePair] {
        &self.pairs
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn h0(&self) -> &Expression {
        &self.h0
    }

    pub fn h1(&self) -> &Expression {
        &self.h1
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn forcing_period(&self) -> Option<f64> {
        self.forcing_period
    }

    /// Pair index of the cyclic time coordinate of an autonomous system.
    pub fn time_pair(&self) -> Option<usize> {
        self.time_pair
    }

    /// Coordinate names in state order `(q1, p1, ..., qn, pn)`.
    pub fn coordinate_names(&self) -> Vec<String> {
        self.pairs.iter().flat_map(|p| [p.position.clone(), p.momentum.clone()]).collect()
    }

    /// Names an observable on this system may reference.
    pub fn declared_names(&self) -> Vec<String> {
        declared_names(&self.pairs, &self.params, self.time_dependent).expect("validated")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coordinate_names().iter().position(|n| n == name)
    }

    /// Parse and compile a user observable with this system's names.
    pub fn observable(&self, source: &str) -> Result<Observable> {
        let names = self.declared_names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        self.observable_from(expr::parse(source, &refs)?)
    }

    pub fn observable_from(&self, e: Expression) -> Result<Observable> {
        let lookup = |n: &str| self.params.get(n).copied();
        let e = e.substitute(&lookup);
        let mut slots: Vec<String> = self.coordinate_names();
        slots.push("t".into());
        let refs: Vec<&str> = slots.iter().map(String::as_str).collect();
        Observable::build(e, &refs, self.dim(), true)
    }

    pub fn h0_observable(&self) -> &Observable {
        &self.compiled.h[0]
    }

    pub fn h1_observable(&self) -> &Observable {
        &self.compiled.h[1]
    }

    pub fn hamiltonian(&self, which: Hamiltonian, y: &[f64], t: f64) -> Result<f64> {
        let (a, b) = which.weights();
        let mut v = 0.0;
        if a != 0.0 {
            v += a * self.compiled.h[0].value(y, t)?;
        }
        if b != 0.0 {
            v += b * self.compiled.h[1].value(y, t)?;
        }
        Ok(v)
    }

    pub fn gradient_into(&self, which: Hamiltonian, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (a, b) = which.weights();
        let [h0, h1] = &self.compiled.h;
        for i in 0..self.dim() {
            let mut v = 0.0;
            if a != 0.0 {
                v += a * h0.grad[i].eval_split(y, &[t])?;
            }
            if b != 0.0 {
                v += b * h1.grad[i].eval_split(y, &[t])?;
            }
            out[i] = v;
        }
        Ok(())
    }

    /// `X_H` written into `out`.
    pub fn vector_field_into(&self, which: Hamiltonian, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let (a, b) = which.weights();
        let [h0, h1] = &self.compiled.h;
        for i in 0..n / 2 {
            let (q, p) = (2 * i, 2 * i + 1);
            let mut dq = 0.0;
            let mut dp = 0.0;
            if a != 0.0 {
                dq += a * h0.grad[p].eval_split(y, &[t])?;
                dp -= a * h0.grad[q].eval_split(y, &[t])?;
            }
            if b != 0.0 {
                dq += b * h1.grad[p].eval_split(y, &[t])?;
                dp -= b * h1.grad[q].eval_split(y, &[t])?;
            }
            out[q] = dq;
            out[p] = dp;
        }
        Ok(())
    }

    pub fn vector_field(&self, which: Hamiltonian, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.vector_field_into(which, y, t, &mut out)?;
        Ok(out)
    }

    /// Row-major Jacobian of `X_H`: `J * Hess(H)`.
    pub fn jacobian_into(&self, which: Hamiltonian, y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let (a, b) = which.weights();
        let mut hess = vec![0.0; n * n];
        let mut tmp = vec![0.0; n * n];
        if a != 0.0 {
            self.compiled.h[0].hessian_into(y, t, &mut tmp)?;
            for (h, v) in hess.iter_mut().zip(&tmp) {
                *h += a * v;
            }
        }
        if b != 0.0 {
            self.compiled.h[1].hessian_into(y, t, &mut tmp)?;
            for (h, v) in hess.iter_mut().zip(&tmp) {
                *h += b * v;
            }
        }
        for i in 0..n / 2 {
            let (q, p) = (2 * i, 2 * i + 1);
            for j in 0..n {
                out[q * n + j] = hess[p * n + j];
                out[p * n + j] = -hess[q * n + j];
            }
        }
        Ok(())
    }

    /// `{f, g}` at `(y, t)`.
    pub fn poisson_bracket(&self, f: &Observable, g: &Observable, y: &[f64], t: f64) -> Result<f64> {
        let df = f.gradient(y, t)?;
        let dg = g.gradient(y, t)?;
        Ok(bracket_from_gradients(&df, &dg))
    }

    /// Reduce circle coordinates into `[0, L)`.
    pub fn reduce(&self, y: &mut [f64]) {
        for (i, p) in self.pairs.iter().enumerate() {
            if let Topology::Circle(l) = p.topology {
                y[2 * i] = wrap(y[2 * i], l);
            }
        }
    }

    /// `a - b` with circle components taken as shortest angular differences.
    pub fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        for (i, p) in self.pairs.iter().enumerate() {
            if let Topology::Circle(l) = p.topology {
                d[2 * i] = wrap_diff(d[2 * i], l);
            }
        }
        d
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.difference(a, b).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// State indices of positions that H0 does not depend on.
    pub fn cyclic_coordinates(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !self.h0.depends_on(&p.position))
            .map(|(i, _)| 2 * i)
            .collect()
    }

    /// Circumference of the circle at state index `k`, if any.
    pub fn circumference(&self, k: usize) -> Option<f64> {
        if k % 2 == 1 {
            return None;
        }
        match self.pairs[k / 2].topology {
            Topology::Circle(l) => Some(l),
            Topology::Line => None,
        }
    }

    /// Same phase space and `H0`, new perturbation.
    pub fn with_h1(&self, h1: &str, forcing_period: Option<f64>) -> Result<SystemDef> {
        let may_use_t = self.time_pair.is_none();
        let declared = declared_names(&self.pairs, &self.params, may_use_t)?;
        let refs: Vec<&str> = declared.iter().map(String::as_str).collect();
        let h1e = expr::parse(h1, &refs)?;
        // A forced system stays forced even when the new H1 ignores t.
        let td = may_use_t && (h1e.depends_on("t") || self.time_dependent);
        let period = if td { forcing_period.or(self.forcing_period) } else { None };
        Self::from_expressions(&self.name, self.pairs.clone(), self.h0.clone(), h1e, self.params.clone(), td, period, self.time_pair)
    }

    /// Same system with a different parameter set.
    pub fn with_params(&self, params: BTreeMap<String, f64>) -> Result<SystemDef> {
        Self::from_expressions(
            &self.name,
            self.pairs.clone(),
            self.h0.clone(),
            self.h1.clone(),
            params,
            self.time_dependent,
            self.forcing_period,
            self.time_pair,
        )
    }

    /// Load the TOML system file format documented in `docs/system-file.md`.
    pub fn from_toml(text: &str) -> Result<SystemDef> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(format!("system file: {e}")))?;
        let section = |name: &str| -> Result<toml::Table> {
            match doc.get(name) {
                Some(toml::Value::Table(t)) => Ok(t.clone()),
                Some(_) => Err(Error::config(format!("[{name}] must be a table"))),
                None => Ok(toml::Table::new()),
            }
        };
        for key in doc.keys() {
            if !["name", "pairs", "params", "hamiltonian"].contains(&key.as_str()) {
                return Err(Error::config(format!("unknown top-level key `{key}`")));
            }
        }
        let mut params = BTreeMap::new();
        for (k, v) in section("params")? {
            let x = match v {
                toml::Value::Float(x) => x,
                toml::Value::Integer(i) => i as f64,
                _ => return Err(Error::config(format!("parameter `{k}` must be a number"))),
            };
            params.insert(k, x);
        }
        let constant = |src: &str| -> Result<f64> {
            let names: Vec<&str> = params.keys().map(String::as_str).collect();
            let e = expr::parse(src, &names)?;
            Ok(e.evaluate_with(&|n| params.get(n).copied())?)
        };
        let mut pairs = Vec::new();
        let pair_table = section("pairs")?;
        if pair_table.is_empty() {
            return Err(Error::config("[pairs] must declare at least one coordinate pair"));
        }
        for (q, v) in pair_table {
            let toml::Value::String(spec) = v else {
                return Err(Error::config(format!("pair `{q}` must be a string like \"p, circle(2*pi)\"")));
            };
            let mut parts = spec.splitn(2, ',');
            let p = parts.next().unwrap_or("").trim().to_string();
            let topo = parts.next().map(str::trim).unwrap_or("line");
            let topology = if topo == "line" {
                Topology::Line
            } else if let Some(inner) = topo.strip_prefix("circle(").and_then(|r| r.strip_suffix(')')) {
                Topology::Circle(constant(inner)?)
            } else {
                return Err(Error::config(format!("pair `{q}`: topology must be `line` or `circle(L)`, got `{topo}`")));
            };
            pairs.push(CoordinatePair { position: q, momentum: p, topology });
        }
        let ham = section("hamiltonian")?;
        let get_str = |k: &str| -> Result<Option<String>> {
            match ham.get(k) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s.clone())),
                Some(_) => Err(Error::config(format!("[hamiltonian] `{k}` must be a string"))),
            }
        };
        let h0 = get_str("h0")?.ok_or_else(|| Error::config("[hamiltonian] needs `h0`"))?;
        let h1 = get_str("h1")?.unwrap_or_else(|| "0".into());
        let time_dependent = match ham.get("time_dependent") {
            None => false,
            Some(toml::Value::Boolean(b)) => *b,
            Some(_) => return Err(Error::config("`time_dependent` must be a boolean")),
        };
        let forcing_period = match ham.get("forcing_period") {
            None => None,
            Some(toml::Value::Float(x)) => Some(*x),
            Some(toml::Value::Integer(i)) => Some(*i as f64),
            Some(toml::Value::String(s)) => Some(constant(s)?),
            Some(_) => return Err(Error::config("`forcing_period` must be a number or constant expression")),
        };
        for k in ham.keys() {
            if !["h0", "h1", "time_dependent", "forcing_period", "time_coordinate"].contains(&k.as_str()) {
                return Err(Error::config(format!("unknown [hamiltonian] key `{k}`")));
            }
        }
        let name = match doc.get("name") {
            Some(toml::Value::String(s)) => s.clone(),
            _ => "custom".into(),
        };
        let mut sys = SystemDef::new(&name, pairs, &h0, &h1, params, time_dependent, forcing_period)?;
        if let Some(tc) = get_str("time_coordinate")? {
            let k = sys
                .pairs
                .iter()
                .position(|p| p.position == tc)
                .ok_or_else(|| Error::config(format!("time coordinate `{tc}` is not a position")))?;
            sys = SystemDef::from_expressions(
                &sys.name,
                sys.pairs.clone(),
                sys.h0.clone(),
                sys.h1.clone(),
                sys.params.clone(),
                false,
                None,
                Some(k),
            )?;
        }
        Ok(sys)
    }
}

fn declared_names(pairs: &[CoordinatePair], params: &BTreeMap<String, f64>, time_dependent: bool) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    for p in pairs {
        names.push(p.position.clone());
        names.push(p.momentum.clone());
    }
    if time_dependent {
        names.push("t".into());
    }
    names.extend(params.keys().cloned());
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::config(format!("name `{n}` is declared more than once")));
        }
    }
    // Reuse the parser's declaration checks (reserved words, syntax).
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    expr::parse("0", &refs)?;
    Ok(names)
}

/// Autonomous extension: append `(t, eta)` with `t` on a circle of length
/// `T_f`, `H0 + eta` as the new unperturbed Hamiltonian and `H1` unchanged.
pub fn extend_periodic(sys: &SystemDef) -> Result<SystemDef> {
    if !sys.time_dependent {
        return Err(Error::config("only time-dependent systems can be extended"));
    }
    let tf = sys.forcing_period.expect("time-dependent systems carry a period");
    let names = sys.coordinate_names();
    if names.iter().any(|n| n == "t" || n == "eta") || sys.params.contains_key("eta") {
        return Err(Error::config("extension needs the names `t` and `eta` to be free"));
    }
    let mut pairs = sys.pairs.clone();
    pairs.push(CoordinatePair::circle("t", "eta", tf));
    let h0 = sys.h0.add(&Expression::variable("eta"));
    let k = pairs.len() - 1;
    SystemDef::from_expressions(&format!("{}-extended", sys.name), pairs, h0, sys.h1.clone(), sys.params.clone(), false, None, Some(k))
}

/// Pull back an observable of the original system to the extended one.
pub fn pullback(extended: &SystemDef, source: &str) -> Result<Observable> {
    extended.observable(source)
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// The smooth bump used by the paper example: `c` on the disc of radius
/// sqrt(delta/2), zero outside radius sqrt(delta).
fn bump(x: &str, xi: &str) -> String {
    let u = format!("((delta - ({x}^2 + {xi}^2))/(delta/2))");
    format!("(c*flat({u})/(flat({u}) + flat(1 - {u})))")
}

pub const CATALOG: &[&str] =
    &["pendulum", "forced-pendulum", "duffing", "forced-duffing", "paper-example", "paper-example-equal"];

pub fn catalog(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemDef> {
    let allowed: &[&str] = match name {
        "pendulum" | "duffing" => &[],
        "forced-pendulum" | "forced-duffing" => &["omega"],
        "paper-example" => &["c", "delta"],
        "paper-example-equal" => &["delta"],
        _ => return Err(Error::config(format!("unknown catalog system `{name}` (known: {})", CATALOG.join(", ")))),
    };
    for k in overrides.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::config(format!("`{name}` has no parameter `{k}`")));
        }
    }
    let none = BTreeMap::new();
    match name {
        "pendulum" => SystemDef::new(name, vec![CoordinatePair::circle("q", "p", 2.0 * PI)], "p^2/2 + cos(q)", "0", none, false, None),
        "duffing" => SystemDef::new(name, vec![CoordinatePair::line("q", "p")], "p^2/2 - q^2/2 + q^4/4", "0", none, false, None),
        "forced-pendulum" | "forced-duffing" => {
            let omega = param(overrides, "omega", 1.0);
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(Error::config("omega must be positive"));
            }
            let params = BTreeMap::from([("omega".to_string(), omega)]);
            let (pair, h0, h1) = if name == "forced-pendulum" {
                (CoordinatePair::circle("q", "p", 2.0 * PI), "p^2/2 + cos(q)", "p*cos(omega*t)")
            } else {
                (CoordinatePair::line("q", "p"), "p^2/2 - q^2/2 + q^4/4", "-q*cos(omega*t)")
            };
            SystemDef::new(name, vec![pair], h0, h1, params, true, Some(2.0 * PI / omega))
        }
        "paper-example" | "paper-example-equal" => {
            let delta = param(overrides, "delta", 0.3);
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::config("delta must be positive"));
            }
            let mut params = BTreeMap::from([("delta".to_string(), delta)]);
            let h0 = if name == "paper-example" {
                let c = param(overrides, "c", 0.5);
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::config("c must be positive"));
                }
                params.insert("c".into(), c);
                format!("eta*(1 + {}) + xi^2 + cos(x)", bump("x", "xi"))
            } else {
                "eta + xi^2 + cos(x)".to_string()
            };
            let pairs = vec![CoordinatePair::circle("t", "eta", 1.0), CoordinatePair::line("x", "xi")];
            let declared = declared_names(&pairs, &params, false)?;
            let refs: Vec<&str> = declared.iter().map(String::as_str).collect();
            let h0e = expr::parse(&h0, &refs)?;
            let h1e = expr::parse("cos(2*pi*t)*cos(x)", &refs)?;
            SystemDef::from_expressions(name, pairs, h0e, h1e, params, false, None, Some(0))
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn pendulum_vector_field() {
        let sys = catalog("pendulum", &no_params()).unwrap();
        assert_eq!(sys.vector_field(Hamiltonian::H0, &[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
        let v = sys.vector_field(Hamiltonian::H0, &[PI, 2.0], 0.0).unwrap();
        assert_eq!(v[0], 2.0);
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn paper_example_values() {
        let sys = catalog("paper-example", &no_params()).unwrap();
        assert_eq!(sys.hamiltonian(Hamiltonian::H0, &[0.0, 0.0, 0.0, 0.0], 0.0).unwrap(), 1.0);
        let h = sys.hamiltonian(Hamiltonian::H0, &[0.0, 0.2, 0.0, 0.0], 0.0).unwrap();
        assert!((h - 1.3).abs() < 1e-15);
        // F-part of the field at (x, xi) = (0, 0.1) with eta = 0.
        let v = sys.vector_field(Hamiltonian::H0, &[0.0, 0.0, 0.0, 0.1], 0.0).unwrap();
        assert!((v[2] - 0.2).abs() < 1e-15 && v[3].abs() < 1e-15);
    }

    #[test]
    fn bump_is_flat_inside_and_zero_outside() {
        let sys = catalog("paper-example", &no_params()).unwrap();
        let g = |r: f64| {
            let y = [0.0, 1.0, r, 0.0];
            sys.hamiltonian(Hamiltonian::H0, &y, 0.0).unwrap() - 1.0 - r.cos()
        };
        assert!((g(0.0) - 0.5).abs() < 1e-15);
        assert!((g(0.3872) - 0.5).abs() < 1e-12);
        assert!(g(0.5478).abs() < 1e-12);
        assert!(g(0.45) > 0.0 && g(0.45) < 0.5);
    }

    #[test]
    fn bracket_of_forced_pendulum_terms() {
        let sys = catalog("forced-pendulum", &no_params()).unwrap();
        let f = sys.observable("p*cos(t)").unwrap();
        let g = sys.observable("p^2/2 + cos(q)").unwrap();
        assert!(sys.poisson_bracket(&f, &g, &[PI, 2.0], 0.0).unwrap().abs() < 1e-15);
        assert!((sys.poisson_bracket(&f, &g, &[PI / 2.0, 0.7], 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn extension_rules() {
        let sys = catalog("forced-pendulum", &no_params()).unwrap();
        let ext = extend_periodic(&sys).unwrap();
        assert_eq!(ext.degrees_of_freedom(), 2);
        assert_eq!(ext.time_pair(), Some(1));
        assert_eq!(ext.h0().to_string(), "(((p^2.0) / 2.0) + cos(q)) + eta");
        assert!(extend_periodic(&ext).is_err());
        let eta = ext.observable("eta").unwrap();
        let h = ext.h0_observable();
        let b = ext.poisson_bracket(h, &eta, &[0.3, 0.2, 1.0, 0.5], 0.0).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn catalog_rejects_bad_parameters() {
        let bad_c = BTreeMap::from([("c".to_string(), 0.0)]);
        assert!(catalog("paper-example", &bad_c).is_err());
        let bad_d = BTreeMap::from([("delta".to_string(), -1.0)]);
        assert!(catalog("paper-example", &bad_d).is_err());
        assert!(catalog("van-der-pol", &no_params()).is_err());
    }

    #[test]
    fn non_periodic_forcing_is_rejected() {
        let err = SystemDef::new(
            "bad",
            vec![CoordinatePair::line("q", "p")],
            "p^2/2",
            "q*cos(t)",
            no_params(),
            true,
            Some(1.0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("not periodic"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let src = r#"
name = "forced"
[pairs]
q = "p, circle(2*pi)"
[params]
omega = 2
[hamiltonian]
h0 = "p^2/2 + cos(q)"
h1 = "p*cos(omega*t)"
time_dependent = true
forcing_period = "2*pi/omega"
"#;
        let sys = SystemDef::from_toml(src).unwrap();
        assert!((sys.forcing_period().unwrap() - PI).abs() < 1e-15);
        assert_eq!(sys.hamiltonian(Hamiltonian::H1, &[0.0, 1.0], 0.0).unwrap(), 1.0);
        assert!(SystemDef::from_toml("[pairs]\nq = \"p, torus\"\n[hamiltonian]\nh0 = \"p\"").is_err());
    }

    #[test]
    fn reduction_and_differences() {
        let sys = catalog("pendulum", &no_params()).unwrap();
        let p = PhasePoint::new(&sys, vec![-0.5, 1.0]).unwrap();
        assert!((p.0[0] - (2.0 * PI - 0.5)).abs() < 1e-15);
        assert!((sys.distance(&[0.1, 0.0], &[2.0 * PI - 0.1, 0.0]) - 0.2).abs() < 1e-14);
    }
}
