use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use melnikov_core::dynamics::{find_periodic_orbit, OrbitMode, OrbitOptions};
use melnikov_core::melnikov::{
    check_hypothesis, critical_integral_basis, find_zeros, melnikov_convergent, melnikov_function,
    melnikov_function_prescribed, melnikov_potential, potential_consistency, summary, Base, MelnikovOptions,
    MelnikovSample, ZeroRecord,
};
use melnikov_core::phase::{catalog, extend_periodic, set_bracket_fault, SystemDef};
use melnikov_core::separatrix::{
    conserved_frame, numeric_separatrix, paper_example_separatrix, standard_separatrix, ConnectingOrbit, EndOrbit,
    SeparatrixOptions,
};
use melnikov_core::splitting::{
    first_order_check, gap_at, geometry, manifold_polyline, perturbed_fixed_point, Branch, Side, SplitOptions,
};
use melnikov_core::{fmt17, verify, Error, Result};

#[derive(Parser)]
#[command(name = "melnikov", version, about = "Mel'nikov 1-form, separatrix and splitting computations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve and classify a periodic orbit.
    Orbit(OrbitArgs),
    /// Compute a connecting orbit and write `s,q1,p1,...` samples.
    Separatrix(SepArgs),
    /// Sample M(t0) = beta(X_A) over one period.
    Melnikov(MelArgs),
    /// Zeros of M(t0) with nondegeneracy flags.
    Zeros(MelArgs),
    /// Splitting oracle: perturbed manifolds and the energy gap.
    Split(SplitArgs),
    /// Mel'nikov potential at a point of the connecting manifold.
    Potential(PotentialArgs),
    /// Count integrals critical on both end orbits.
    Integrals(IntegralArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
    /// Periods of the example's two orbits and its counting report.
    ExamplePaper(ExampleArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Catalog system name.
    #[arg(long)]
    system: Option<String>,
    /// System definition file (TOML).
    #[arg(long, conflicts_with = "system")]
    file: Option<PathBuf>,
    /// Parameter override `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Replace H1 by this expression (time-periodic with the system's period).
    #[arg(long)]
    h1: Option<String>,
    /// Output directory for data files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Config file with defaults for the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OrbitArgs {
    #[command(flatten)]
    common: Common,
    /// Initial guess, comma separated in (q1,p1,...) order.
    #[arg(long, allow_hyphen_values = true)]
    guess: String,
    /// Solve for this fixed period instead of using a section.
    #[arg(long)]
    period: Option<f64>,
    /// Coordinate index of the Poincare section (default 0).
    #[arg(long, default_value_t = 0)]
    section: usize,
    /// Pin the orbit energy.
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct SepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    source: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    target: Option<String>,
    /// Sign of the unstable direction followed out of the source.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    branch: f64,
    #[arg(long, default_value_t = 0)]
    section: usize,
    #[arg(long, default_value_t = 401)]
    samples: usize,
    /// Conserved quantities, separated by `;`, to validate as a frame.
    #[arg(long)]
    frame: Option<String>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModeArg {
    Convergent,
    Prescribed,
}

#[derive(Args)]
struct MelArgs {
    #[command(flatten)]
    common: Common,
    /// The integral A (default: the unperturbed Hamiltonian of the forced system).
    #[arg(long)]
    a: Option<String>,
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Convergent)]
    mode: ModeArg,
    /// Base point parameter on the connecting orbit.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    s0: f64,
    #[arg(long, default_value_t = 12)]
    n_max: usize,
    #[arg(long, default_value_t = 1e-11)]
    quad_tol: f64,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Perturbation sizes, comma separated.
    #[arg(long, default_value = "1e-2,1e-3")]
    eps: String,
    /// Number of section phases t0 = pi/2 + j 2pi/n.
    #[arg(long, default_value_t = 5)]
    phases: usize,
    /// Write manifold polylines at this phase (first eps) to the output directory.
    #[arg(long, allow_hyphen_values = true)]
    polyline_t0: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    arc: f64,
}

#[derive(Args)]
struct PotentialArgs {
    #[command(flatten)]
    common: Common,
    /// Point on the connecting manifold (default: the orbit at s = 1, time shifted by 0.5).
    #[arg(long, allow_hyphen_values = true)]
    point: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    s0: f64,
    /// Also compare dL(X_A) with beta(X_A) along these integrals (`;` separated).
    #[arg(long)]
    frame: Option<String>,
}

#[derive(Args)]
struct IntegralArgs {
    #[command(flatten)]
    common: Common,
    /// Frame of conserved quantities, `;` separated (default: H0 and eta).
    #[arg(long)]
    frame: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run only these checks (comma separated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Test hook: flip one term of every Poisson bracket.
    #[arg(long, hide = true)]
    inject_bracket_fault: bool,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| cfg(format!("malformed {what} `{s}`: `{}` is not a number", x.trim()))))
        .collect()
}

impl Common {
    /// Fill unset flags from the config file.
    fn merged(&self) -> Result<Common> {
        let mut c = self.clone();
        let Some(path) = &self.config else { return Ok(c) };
        let text = fs::read_to_string(path).map_err(|e| cfg(format!("config {}: {e}", path.display())))?;
        let t: toml::Table = text.parse().map_err(|e| cfg(format!("config {}: {e}", path.display())))?;
        for (k, v) in &t {
            match (k.as_str(), v) {
                ("system", toml::Value::String(s)) => c.system = c.system.or(Some(s.clone())),
                ("file", toml::Value::String(s)) => c.file = c.file.or(Some(PathBuf::from(s))),
                ("h1", toml::Value::String(s)) => c.h1 = c.h1.or(Some(s.clone())),
                ("out", toml::Value::String(s)) => c.out = c.out.or(Some(PathBuf::from(s))),
                ("format", toml::Value::String(s)) => {
                    if c.format.is_none() {
                        c.format = Some(Format::from_str(s, true).map_err(|_| cfg(format!("config: bad format `{s}`")))?);
                    }
                }
                ("params", toml::Value::Table(p)) => {
                    for (name, val) in p {
                        if !c.params.iter().any(|x| x.split('=').next() == Some(name.as_str())) {
                            c.params.push(format!("{name}={val}"));
                        }
                    }
                }
                _ => return Err(cfg(format!("config: unknown or mistyped key `{k}`"))),
            }
        }
        Ok(c)
    }

    fn load(&self) -> Result<SystemDef> {
        let c = self.merged()?;
        let mut params = BTreeMap::new();
        for p in &c.params {
            let (k, v) = p.split_once('=').ok_or_else(|| cfg(format!("parameter `{p}` is not NAME=VALUE")))?;
            let v: f64 = v.trim().parse().map_err(|_| cfg(format!("parameter `{k}` has a malformed value `{v}`")))?;
            params.insert(k.trim().to_string(), v);
        }
        let mut sys = match (&c.system, &c.file) {
            (Some(name), None) => catalog(name, &params)?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
                let s = SystemDef::from_toml(&text)?;
                if params.is_empty() { s } else { s.with_params(params)? }
            }
            _ => return Err(cfg("give exactly one of --system or --file")),
        };
        if let Some(h1) = &c.h1 {
            sys = sys.with_h1(h1, sys.forcing_period())?;
        }
        Ok(sys)
    }

    fn out_dir(&self) -> Result<Option<PathBuf>> {
        let c = self.merged()?;
        if let Some(d) = &c.out {
            fs::create_dir_all(d).map_err(|e| cfg(format!("output directory {}: {e}", d.display())))?;
        }
        Ok(c.out)
    }

    fn format(&self) -> Result<Format> {
        Ok(self.merged()?.format.unwrap_or(Format::Csv))
    }
}

fn write(dir: &Option<PathBuf>, name: &str, body: &str) -> Result<()> {
    match dir {
        Some(d) => {
            let p: &Path = d.as_ref();
            fs::write(p.join(name), body).map_err(|e| cfg(format!("writing {}: {e}", p.join(name).display())))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Extended system (when forced) and its default connecting orbit.
fn setup(sys: &SystemDef) -> Result<(SystemDef, ConnectingOrbit)> {
    let ext = if sys.time_dependent() { extend_periodic(sys)? } else { sys.clone() };
    let orbit = standard_separatrix(&ext)?;
    Ok((ext, orbit))
}

fn default_a(orig: &SystemDef, ext: &SystemDef, a: &Option<String>) -> Result<(String, String)> {
    match a {
        Some(src) => Ok((src.clone(), "A".into())),
        None if orig.time_dependent() => Ok((orig.h0().to_string(), "H0".into())),
        None if ext.time_pair().is_some() => Ok(("eta".into(), "eta".into())),
        None => Err(cfg("give the integral with --a")),
    }
}

fn time_period(ext: &SystemDef) -> Result<f64> {
    let k = ext.time_pair().ok_or_else(|| cfg("Mel'nikov functions need a time coordinate (forced or extended system)"))?;
    ext.circumference(2 * k).ok_or_else(|| cfg("the time coordinate must be a circle"))
}

struct MelRun {
    ext: SystemDef,
    orbit: ConnectingOrbit,
    a: melnikov_core::phase::Observable,
    label: String,
    grid: Vec<f64>,
    period: f64,
    samples: Vec<MelnikovSample>,
    opts: MelnikovOptions,
    s0: f64,
    mode: ModeArg,
}

fn mel_run(args: &MelArgs) -> Result<MelRun> {
    let sys = args.common.load()?;
    let (ext, orbit) = setup(&sys)?;
    let (src, label) = default_a(&sys, &ext, &args.a)?;
    let a = ext.observable(&src)?;
    let period = time_period(&ext)?;
    if args.samples < 16 {
        return Err(cfg("--samples must be at least 16"));
    }
    let grid: Vec<f64> = (0..args.samples).map(|k| period * k as f64 / args.samples as f64).collect();
    let opts = MelnikovOptions { quad_tol: args.quad_tol, n_max: args.n_max, ..MelnikovOptions::default() };
    if !(args.quad_tol > 0.0 && args.quad_tol < 1e-3) {
        return Err(cfg("--quad-tol must lie in (0, 1e-3)"));
    }
    let samples = match args.mode {
        ModeArg::Convergent => melnikov_function(&ext, &a, &label, &orbit, args.s0, &grid, &opts)?,
        ModeArg::Prescribed => melnikov_function_prescribed(&ext, &a, &label, &orbit, args.s0, &grid, &opts)?,
    };
    Ok(MelRun { ext, orbit, a, label, grid, period, samples, opts, s0: args.s0, mode: args.mode })
}

impl MelRun {
    fn zeros(&self) -> Result<Vec<ZeroRecord>> {
        let values: Vec<f64> = self.samples.iter().map(|s| s.value).collect();
        let eval = |t0: f64| -> Result<f64> {
            let base = Base::with_time(&self.ext, &self.orbit, self.s0, t0);
            match self.mode {
                ModeArg::Convergent => Ok(melnikov_convergent(&self.ext, &self.a, &self.label, &self.orbit, &base, &self.opts)?.value),
                ModeArg::Prescribed => {
                    Ok(melnikov_core::melnikov::melnikov_prescribed(&self.ext, &self.a, &self.label, &self.orbit, &base, &self.opts)?.value)
                }
            }
        };
        find_zeros(&self.grid, &values, self.period, &eval, None)
    }

    fn csv(&self) -> String {
        let mut s = String::from("t0,value,err,mode,n\n");
        for m in &self.samples {
            s.push_str(&format!("{},{},{},{},{}\n", fmt17(m.t0), fmt17(m.value), fmt17(m.error), m.mode.label(), m.windows));
        }
        s
    }
}

fn cmd_orbit(a: &OrbitArgs) -> Result<()> {
    let sys = a.common.load()?;
    let guess = parse_list(&a.guess, "guess")?;
    if guess.len() != sys.dim() {
        return Err(cfg(format!("guess has {} entries, the system has dimension {}", guess.len(), sys.dim())));
    }
    let mode = match a.period {
        Some(t) => OrbitMode::FixedPeriod(t),
        None => {
            if a.section >= sys.dim() {
                return Err(cfg("section index out of range"));
            }
            OrbitMode::Section { index: a.section, value: guess[a.section] }
        }
    };
    let opts = OrbitOptions { orbit_tol: a.tol, energy: a.energy, ..OrbitOptions::default() };
    let rec = find_periodic_orbit(&sys, &guess, mode, &opts)?;
    let dir = a.common.out_dir()?;
    if dir.is_some() {
        write(&dir, "orbit.json", &rec.to_json())?;
    }
    println!("{}", rec.to_json());
    Ok(())
}

fn cmd_separatrix(a: &SepArgs) -> Result<()> {
    let sys = a.common.load()?;
    let sys = if sys.time_dependent() { extend_periodic(&sys)? } else { sys };
    let orbit = match (&a.source, &a.target) {
        (None, None) => standard_separatrix(&sys)?,
        (Some(s), Some(t)) => {
            let (gs, gt) = (parse_list(s, "source guess")?, parse_list(t, "target guess")?);
            if gs.len() != sys.dim() || gt.len() != sys.dim() {
                return Err(cfg("orbit guesses must have the system dimension"));
            }
            let end = |g: &[f64]| -> Result<EndOrbit> {
                if sys.vector_field(melnikov_core::Hamiltonian::H0, g, 0.0)?.iter().all(|v| v.abs() < 1e-12) {
                    EndOrbit::equilibrium(&sys, g)
                } else {
                    EndOrbit::from_guess(&sys, g, a.section)
                }
            };
            numeric_separatrix(&sys, &end(&gs)?, &end(&gt)?, a.branch, &SeparatrixOptions::default())?
        }
        _ => return Err(cfg("give both --source and --target, or neither")),
    };
    let dir = a.common.out_dir()?;
    if let Some(f) = &a.frame {
        let list: Vec<&str> = f.split(';').map(str::trim).collect();
        let frame = conserved_frame(&sys, &list, &orbit)?;
        eprintln!("{}", frame.to_json());
    }
    write(&dir, "separatrix.csv", &orbit.to_csv(&sys, a.samples))?;
    if dir.is_some() {
        print_json(&json!({
            "kind": orbit.kind,
            "truncation": [orbit.truncation.0, orbit.truncation.1],
            "energy": orbit.energy,
            "lambda": [orbit.lambda_minus(), orbit.lambda_plus()],
            "samples": a.samples,
        }));
    }
    Ok(())
}

fn cmd_melnikov(a: &MelArgs) -> Result<()> {
    let run = mel_run(a)?;
    let dir = a.common.out_dir()?.or_else(|| Some(PathBuf::from(".")));
    if a.common.format()? == Format::Json {
        write(&dir, "melnikov.json", &serde_json::to_string_pretty(&run.samples).expect("serializable"))?;
    } else {
        write(&dir, "melnikov.csv", &run.csv())?;
    }
    let values: Vec<f64> = run.samples.iter().map(|s| s.value).collect();
    let (amplitude, mean) = summary(&values);
    let zeros = run.zeros()?;
    let mut out = json!({
        "system": run.ext.name,
        "integral": run.label,
        "samples": run.samples.len(),
        "mode": run.samples.first().map(|s| s.mode.label()),
        "amplitude": amplitude,
        "mean": mean,
        "zeros": zeros,
    });
    if run.mode == ModeArg::Prescribed {
        let worst = run.samples.iter().max_by(|x, y| x.error.total_cmp(&y.error)).expect("nonempty grid");
        out["windows"] = json!({
            "n": worst.windows,
            "worst_t0": worst.t0,
            "sequence": worst.sequence,
            "spread": worst.error,
            "diverging": run.samples.iter().any(|s| s.diverging),
        });
    }
    print_json(&out);
    Ok(())
}

fn cmd_zeros(a: &MelArgs) -> Result<()> {
    let run = mel_run(a)?;
    let zeros = run.zeros()?;
    if zeros.is_empty() {
        eprintln!("no sign change over the sampled period");
    }
    print_json(&zeros);
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let sys = a.common.load()?;
    let eps = parse_list(&a.eps, "eps list")?;
    let opts = SplitOptions::default();
    if let Some(t0) = a.polyline_t0 {
        let geo = geometry(&sys)?;
        let e = eps[0];
        let fp = perturbed_fixed_point(&sys, e, t0, &geo.saddle, &opts)?;
        let zero = vec![0.0; fp.len()];
        let ub = Branch::new(&sys, Side::Unstable, e, t0, &fp, &zero, geo.orient.0, &opts)?;
        let sb = Branch::new(&sys, Side::Stable, e, t0, &fp, &geo.lift, geo.orient.1, &opts)?;
        let dir = a.common.out_dir()?.or_else(|| Some(PathBuf::from(".")));
        let ul = manifold_polyline(&sys, &ub, a.arc, &opts)?;
        let sl = manifold_polyline(&sys, &sb, a.arc, &opts)?;
        write(&dir, "unstable.csv", &ul.to_csv())?;
        write(&dir, "stable.csv", &sl.to_csv())?;
        let gap = gap_at(&sys, &geo, t0, e, &opts)?;
        print_json(&json!({
            "t0": t0, "eps": e, "fixed_point": fp, "gap": gap,
            "unstable": {"points": ul.points.len(), "truncated": ul.truncated},
            "stable": {"points": sl.points.len(), "truncated": sl.truncated},
        }));
        return Ok(());
    }
    if a.phases == 0 {
        return Err(cfg("--phases must be positive"));
    }
    let (ext, orbit) = setup(&sys)?;
    let h0 = ext.observable(&sys.h0().to_string())?;
    let mopts = MelnikovOptions::default();
    let reference = |t0: f64| {
        melnikov_convergent(&ext, &h0, "H0", &orbit, &Base::with_time(&ext, &orbit, 0.0, t0), &mopts).map(|s| s.value).unwrap_or(f64::NAN)
    };
    let period = sys.forcing_period().unwrap_or(2.0 * PI);
    let grid: Vec<f64> = (0..64).map(|k| period * k as f64 / 64.0).collect();
    let (amp, _) = summary(&grid.iter().map(|&t| reference(t)).collect::<Vec<_>>());
    let phases: Vec<f64> = (0..a.phases).map(|j| period / 4.0 + j as f64 * period / a.phases as f64).collect();
    let r = first_order_check(&sys, &phases, &eps, &reference, amp, &opts)?;
    let dir = a.common.out_dir()?;
    if dir.is_some() {
        write(&dir, "split.json", &r.to_json())?;
    }
    println!("{}", r.to_json());
    Ok(())
}

fn frame_list(s: &Option<String>, orig: &SystemDef, ext: &SystemDef) -> Result<Vec<String>> {
    match s {
        Some(f) => Ok(f.split(';').map(|x| x.trim().to_string()).collect()),
        None if orig.time_dependent() => Ok(vec![orig.h0().to_string(), "eta".into()]),
        None if ext.time_pair().is_some() => Ok(vec![ext.h0().to_string(), "eta".into()]),
        None => Err(cfg("give the frame with --frame")),
    }
}

fn cmd_potential(a: &PotentialArgs) -> Result<()> {
    let sys = a.common.load()?;
    let (ext, orbit) = setup(&sys)?;
    let opts = MelnikovOptions::default();
    let m = match &a.point {
        Some(p) => {
            let v = parse_list(p, "point")?;
            if v.len() != ext.dim() {
                return Err(cfg(format!("point needs {} coordinates", ext.dim())));
            }
            v
        }
        // Off the base trajectory: advance the time coordinate as well.
        None => {
            let mut y = orbit.state(1.0);
            if let Some(k) = ext.time_pair() {
                y[2 * k] += 0.5;
            }
            y
        }
    };
    let base = Base::at(&orbit, a.s0);
    let val = melnikov_potential(&ext, &orbit, &base, &m, &opts)?;
    let mut out = json!({"point": m, "value": val.value, "error": val.error, "s": val.s});
    if a.frame.is_some() || sys.time_dependent() {
        let list = frame_list(&a.frame, &sys, &ext)?;
        let refs: Vec<&str> = list.iter().map(String::as_str).collect();
        let frame = conserved_frame(&ext, &refs, &orbit)?;
        let located = Base::locate(&ext, &orbit, &m)?;
        // beta needs a convergence hypothesis; skip integrals that have none.
        let ok: Vec<usize> =
            (0..frame.observables.len()).filter(|&i| check_hypothesis(&ext, &frame.observables[i], &orbit, opts.hypothesis_tol).is_ok()).collect();
        if !ok.is_empty() {
            let checks = potential_consistency(&ext, &frame, &orbit, &located, 1e-3, &opts)?;
            out["checks"] = json!(checks);
        }
    }
    print_json(&out);
    Ok(())
}

fn cmd_integrals(a: &IntegralArgs) -> Result<()> {
    let sys = a.common.load()?;
    let (ext, orbit) = setup(&sys)?;
    let list = frame_list(&a.frame, &sys, &ext)?;
    let refs: Vec<&str> = list.iter().map(String::as_str).collect();
    let frame = conserved_frame(&ext, &refs, &orbit)?;
    let r = critical_integral_basis(&ext, &frame, &orbit.target, &orbit.source)?;
    let dir = a.common.out_dir()?;
    if dir.is_some() {
        write(&dir, "integrals.json", &r.to_json())?;
    }
    println!("{}", r.to_json());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    if a.inject_bracket_fault {
        set_bracket_fault(true);
    }
    let results = verify::run(&a.only)?;
    for r in &results {
        println!("{}", r.line());
    }
    match results.iter().find(|r| !r.passed) {
        Some(r) => {
            eprintln!("verification failed: {}", r.name);
            Ok(false)
        }
        None => Ok(true),
    }
}

fn cmd_example(a: &ExampleArgs) -> Result<()> {
    let params = BTreeMap::from([("c".to_string(), a.c), ("delta".to_string(), a.delta)]);
    let sys = catalog("paper-example", &params)?;
    let section = OrbitMode::Section { index: 0, value: 0.0 };
    let inner = find_periodic_orbit(&sys, &[0.0, a.eta, 0.0, 0.0], section, &OrbitOptions::default())?;
    let outer = find_periodic_orbit(&sys, &[0.0, a.eta, 2.0 * PI, 0.0], section, &OrbitOptions::default())?;
    let orbit = paper_example_separatrix(&sys)?;
    let h = sys.h0().to_string();
    let frame = conserved_frame(&sys, &[h.as_str(), "eta"], &orbit)?;
    let r = critical_integral_basis(&sys, &frame, &orbit.target, &orbit.source)?;
    println!("period over x = 2 pi: {:.9}", outer.period);
    println!("period over x = 0:    {:.9}  (1/(1+c) = {:.9})", inner.period, 1.0 / (1.0 + a.c));
    println!("c+ = {:?}, c- = {:?}, p = {}", r.c_plus, r.c_minus, r.p);
    print_json(&json!({
        "c": a.c, "delta": a.delta, "eta": a.eta,
        "periods": {"x=2pi": outer.period, "x=0": inner.period},
        "counting": r,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Orbit(a) => cmd_orbit(a),
        Cmd::Separatrix(a) => cmd_separatrix(a),
        Cmd::Melnikov(a) => cmd_melnikov(a),
        Cmd::Zeros(a) => cmd_zeros(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Potential(a) => cmd_potential(a),
        Cmd::Integrals(a) => cmd_integrals(a),
        Cmd::ExamplePaper(a) => cmd_example(a),
        Cmd::Verify(a) => match cmd_verify(a) {
            Ok(true) => return ExitCode::SUCCESS,
            Ok(false) => return ExitCode::from(4),
            Err(e) => Err(e),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
