//! Experiment orchestration behind the command-line tool: solve, sweep,
//! sample, reproduce and decompose. Every run writes CSV tables whose rows
//! carry the seed and the crate version, plus a JSON report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bounds::{
    lemma6_nonatomic_bound, lemma7_quantities, random_poa_bound, scale_game, theorem1_bound, BoundInputs,
};
use crate::catalog;
use crate::decomposition::{decomposition_prediction, DemandFamily};
use crate::error::SolverError;
use crate::game::{Game, MixedProfile};
use crate::numeric::{integer, rational, rational_pow, Rational};
use crate::poa::{
    atomic_poa, mixed_poa_small, nonatomic_poa, sample_random_poa, write_distribution_csv, RandomPoaDistribution,
    SamplingPlan,
};
use crate::schema::{load_family, load_game, load_mixed_profile};
use crate::solvers::{
    enumerate_atomic_equilibria, solve_atomic_so, solve_mixed_ne_small, solve_nonatomic_so,
    verify_mixed_ne, Cost, SolverConfig,
};
use crate::VERSION;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Input(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => EXIT_INPUT,
            RunError::NotConverged(_) => EXIT_NONCONVERGENCE,
        }
    }
}

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> RunError {
    move |e| RunError::Input(format!("{context}: {e}"))
}

fn solver_error(e: SolverError) -> RunError {
    match e {
        SolverError::NotConverged(m) => RunError::NotConverged(m),
        other => RunError::Input(other.to_string()),
    }
}

/// One named assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Wall-clock checks stay out of the CSV tables.
    pub timing: bool,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into(), timing: false }
    }

    fn timing(name: impl Into<String>, elapsed: Duration, limit: Duration) -> Self {
        Self {
            name: name.into(),
            passed: elapsed < limit,
            detail: format!("{:.3} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs_f64()),
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: &'static str,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Some solver stopped at its iteration limit.
    pub nonconverged: bool,
    pub document: Value,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn exit_code(&self) -> i32 {
        if !self.passed() {
            EXIT_ASSERTION
        } else if self.nonconverged {
            EXIT_NONCONVERGENCE
        } else {
            EXIT_PASS
        }
    }

    fn checks_json(&self) -> Value {
        Value::Array(
            self.checks
                .iter()
                .map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail, "timing": c.timing }))
                .collect(),
        )
    }

    fn finish(mut self, out: Option<&Path>, started: Instant) -> Result<Self, RunError> {
        self.document["mode"] = json!(self.mode);
        self.document["seed"] = json!(self.seed);
        self.document["version"] = json!(VERSION);
        self.document["checks"] = self.checks_json();
        self.document["passed"] = json!(self.passed());
        self.document["wall_time_seconds"] = json!(started.elapsed().as_secs_f64());
        if let Some(dir) = out {
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(&self.document).expect("json values serialize");
            fs::write(&path, text + "\n").map_err(input(path.display()))?;
            self.files.push(path);
            let path = dir.join("checks.csv");
            let rows: Vec<Vec<String>> = self
                .checks
                .iter()
                .filter(|c| !c.timing)
                .map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()])
                .collect();
            write_table(&path, &["check", "passed", "detail"], rows, self.seed)?;
            self.files.push(path);
        }
        Ok(self)
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(input(path.display()))
}

fn prepare_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(input(dir.display()))
}

/// Writes a CSV table, appending `seed` and `version` columns to every row.
fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>, seed: u64) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(input(path.display()))?;
    let mut head: Vec<&str> = header.to_vec();
    head.extend(["seed", "version"]);
    w.write_record(&head).map_err(input(path.display()))?;
    for mut row in rows {
        row.push(seed.to_string());
        row.push(VERSION.to_string());
        w.write_record(&row).map_err(input(path.display()))?;
    }
    w.flush().map_err(input(path.display()))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn bound_values(game: &Game) -> (Option<f64>, Option<f64>) {
    match BoundInputs::from_game(game) {
        Ok(inputs) => (theorem1_bound(&inputs).ok(), lemma6_nonatomic_bound(&inputs).ok()),
        Err(_) => (None, None),
    }
}

/// Solves one game with every applicable solver and reports the PoAs and
/// the bounds.
pub fn run_solve(game_path: &Path, out: &Path, config: &SolverConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    config.validate().map_err(solver_error)?;
    let game = load_game(&read(game_path)?).map_err(input(game_path.display()))?;
    prepare_dir(out)?;

    let mut doc = json!({ "game": game_path.display().to_string() });
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut checks = Vec::new();
    let mut nonconverged = false;
    let mut row = |metric: &str, value: Option<f64>, exact: Option<&Cost>, status: &str| {
        let exact = exact.and_then(|c| c.exact.as_ref()).map(|r| format!("{}/{}", r.numer(), r.denom()));
        rows.push(vec![metric.into(), opt(value), exact.unwrap_or_default(), status.into()]);
    };

    let mut poa_values = Vec::new();
    match atomic_poa(&game, config) {
        Ok(p) => {
            row("atomic_poa", Some(p.value.value), Some(&p.value), "value");
            row("atomic_ne_cost", Some(p.worst_cost.value), Some(&p.worst_cost), "value");
            row("atomic_so_cost", Some(p.so_cost.value), Some(&p.so_cost), "value");
            doc["atomic"] = json!({
                "poa": p.value.display(),
                "worst_ne": p.worst_ne.choices,
                "worst_cost": p.worst_cost.display(),
                "so": p.so.choices,
                "so_cost": p.so_cost.display(),
            });
            poa_values.push(("atomic", p.value.value, Some(p.so_cost.value)));
        }
        Err(e) => {
            row("atomic_poa", None, None, &format!("unavailable: {e}"));
            doc["atomic"] = json!({ "unavailable": e.to_string() });
        }
    }
    match nonatomic_poa(&game, config) {
        Ok(p) => {
            row("nonatomic_poa", Some(p.value), None, "value");
            row("nonatomic_ne_cost", Some(p.ne.total_cost.value), None, "value");
            row("nonatomic_so_cost", Some(p.so.total_cost.value), None, "value");
            doc["nonatomic"] = json!({ "poa": p.value, "ne": p.ne.to_report(&game), "so": p.so.to_report(&game) });
            poa_values.push(("nonatomic", p.value, Some(p.so.total_cost.value)));
        }
        Err(e) => {
            nonconverged |= matches!(e, SolverError::NotConverged(_));
            row("nonatomic_poa", None, None, &format!("unavailable: {e}"));
            doc["nonatomic"] = json!({ "unavailable": e.to_string() });
        }
    }
    match mixed_poa_small(&game, config) {
        Ok(p) => {
            let status = if p.lower_bound { "lower-bound" } else { "certified" };
            row("mixed_poa", Some(p.value), None, status);
            doc["mixed"] = json!({ "poa": p.value, "status": status, "profile": p.profile.probs, "expected_cost": p.expected_cost });
            poa_values.push(("mixed", p.value, None));
        }
        Err(e) => {
            row("mixed_poa", None, None, &format!("unavailable: {e}"));
            doc["mixed"] = json!({ "unavailable": e.to_string() });
        }
    }
    let (t1, l6) = bound_values(&game);
    let bound_status = if t1.is_some() { "value" } else { "unavailable: mixed degrees" };
    row("theorem1_bound", t1, None, bound_status);
    row("lemma6_bound", l6, None, bound_status);
    doc["bounds"] = json!({ "theorem1": t1, "lemma6": l6 });

    for (name, value, _) in &poa_values {
        checks.push(Check::new(format!("{name} PoA ≥ 1"), *value >= 1.0 - 1e-9, value.to_string()));
    }
    let so = |n: &str| poa_values.iter().find(|p| p.0 == n).and_then(|p| p.2);
    if let (Some(at), Some(nat)) = (so("atomic"), so("nonatomic")) {
        checks.push(Check::new(
            "atomic optimum ≥ non-atomic optimum",
            at >= nat - 1e-9 * (1.0 + nat.abs()),
            format!("{at} vs {nat}"),
        ));
    }
    if let (Some(b), Some(v)) = (t1, poa_values.iter().find(|p| p.0 == "atomic").map(|p| p.1)) {
        checks.push(Check::new("atomic PoA ≤ atomic bound", v <= b + 1e-9, format!("{v} ≤ {b}")));
    }
    if let (Some(b), Some(v)) = (l6, poa_values.iter().find(|p| p.0 == "nonatomic").map(|p| p.1)) {
        checks.push(Check::new("non-atomic PoA ≤ non-atomic bound", v <= b + 1e-9, format!("{v} ≤ {b}")));
    }

    let path = out.join("solve.csv");
    write_table(&path, &["metric", "value", "exact", "status"], rows, config.rng_seed)?;
    RunReport { mode: "solve", seed: config.rng_seed, checks, nonconverged, document: doc, files: vec![path] }
        .finish(Some(out), started)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: u64,
    pub total_demand: f64,
    pub d_max: f64,
    pub atomic_poa: Option<f64>,
    pub atomic_exact: Option<Rational>,
    pub nonatomic_poa: Option<f64>,
    pub theorem1: Option<f64>,
    pub lemma6: Option<f64>,
    pub notes: Vec<String>,
}

fn sweep_row(family: &DemandFamily, n: u64, config: &SolverConfig) -> Result<SweepRow, RunError> {
    let game = family.instantiate(n).map_err(input(format!("n = {n}")))?;
    let mut notes = Vec::new();
    let (atomic_poa_value, atomic_exact) = match atomic_poa(&game, config) {
        Ok(p) => (Some(p.value.value), p.value.exact),
        Err(e) => {
            notes.push(format!("atomic: {e}"));
            (None, None)
        }
    };
    let nonatomic = match nonatomic_poa(&game, config) {
        Ok(p) => Some(p.value),
        Err(SolverError::NotConverged(m)) => return Err(RunError::NotConverged(format!("n = {n}: {m}"))),
        Err(e) => {
            notes.push(format!("non-atomic: {e}"));
            None
        }
    };
    let (theorem1, lemma6) = bound_values(&game);
    Ok(SweepRow {
        n,
        total_demand: game.total_demand_f64(),
        d_max: game.max_demand_f64(),
        atomic_poa: atomic_poa_value,
        atomic_exact,
        nonatomic_poa: nonatomic,
        theorem1,
        lemma6,
        notes,
    })
}

pub fn validate_grid(grid: &[u64]) -> Result<(), RunError> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Input("grid must be nonempty, positive and strictly increasing".into()));
    }
    Ok(())
}

/// PoAs and bounds over a family grid. Asserts measured PoAs under their
/// bounds and, when `d_max/T` shrinks along the grid, decay toward 1.
pub fn run_sweep(family_path: &Path, grid: &[u64], out: &Path, config: &SolverConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    config.validate().map_err(solver_error)?;
    validate_grid(grid)?;
    let family = load_family(&read(family_path)?).map_err(input(family_path.display()))?;
    prepare_dir(out)?;
    let rows: Vec<SweepRow> =
        grid.par_iter().map(|&n| sweep_row(&family, n, config)).collect::<Result<_, _>>()?;

    let mut checks = Vec::new();
    for r in &rows {
        if let (Some(v), Some(b)) = (r.atomic_poa, r.theorem1) {
            checks.push(Check::new(format!("n = {}: atomic PoA ≤ atomic bound", r.n), v <= b + 1e-9, format!("{v} ≤ {b}")));
        }
        if let (Some(v), Some(b)) = (r.nonatomic_poa, r.lemma6) {
            checks.push(Check::new(format!("n = {}: non-atomic PoA ≤ non-atomic bound", r.n), v <= b + 1e-9, format!("{v} ≤ {b}")));
        }
    }
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    if rows.len() > 1 && last.d_max / last.total_demand < first.d_max / first.total_demand {
        if let (Some(a), Some(b)) = (first.theorem1, last.theorem1) {
            checks.push(Check::new("atomic bound decays", b <= a, format!("{a} → {b}")));
        }
        if let (Some(a), Some(b)) = (first.atomic_poa, last.atomic_poa) {
            checks.push(Check::new("atomic PoA decays toward 1", b <= a + 1e-9, format!("{a} → {b}")));
        }
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.total_demand.to_string(),
                r.d_max.to_string(),
                opt(r.atomic_poa),
                r.atomic_exact.as_ref().map(|x| format!("{}/{}", x.numer(), x.denom())).unwrap_or_default(),
                opt(r.nonatomic_poa),
                opt(r.theorem1),
                opt(r.lemma6),
            ]
        })
        .collect();
    let path = out.join("sweep.csv");
    write_table(
        &path,
        &["n", "total_demand", "d_max", "atomic_poa", "atomic_poa_exact", "nonatomic_poa", "theorem1_bound", "lemma6_bound"],
        table,
        config.rng_seed,
    )?;
    let doc = json!({
        "family": family_path.display().to_string(),
        "grid": grid,
        "notes": rows.iter().map(|r| json!({ "n": r.n, "notes": r.notes })).collect::<Vec<_>>(),
    });
    RunReport { mode: "sweep", seed: config.rng_seed, checks, nonconverged: false, document: doc, files: vec![path] }
        .finish(Some(out), started)
}

/// The composed random-PoA threshold and its failure probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomPoaThreshold {
    pub threshold: f64,
    pub p_delta: f64,
    pub rho_nat: f64,
    pub scaled_so_cost: f64,
}

/// `ρ_nat + (expected gap + random gap) / C^[g](f*_nat)` with `g = T^β`,
/// where β is the largest degree and lower-degree costs are read with
/// zero leading coefficients.
pub fn random_poa_threshold(game: &Game, config: &SolverConfig, delta: f64) -> Result<RandomPoaThreshold, RunError> {
    let inputs = BoundInputs::padded(game);
    let g = rational_pow(&game.total_demand(), inputs.beta);
    let scaled = scale_game(game, &g).map_err(input("scaling"))?;
    let so = solve_nonatomic_so(&scaled.game, config).map_err(solver_error)?;
    if !so.converged {
        return Err(RunError::NotConverged("scaled non-atomic optimum".into()));
    }
    let rho_nat = nonatomic_poa(game, config).map_err(solver_error)?.value;
    let threshold = random_poa_bound(&inputs, delta, rho_nat, so.total_cost.value).map_err(input("random PoA bound"))?;
    let p_delta = lemma7_quantities(&inputs, delta).map_err(input("tail quantities"))?.p_delta;
    Ok(RandomPoaThreshold { threshold, p_delta, rho_nat, scaled_so_cost: so.total_cost.value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub game: PathBuf,
    pub profile: Option<PathBuf>,
    pub plan: SamplingPlan,
    pub out: Option<PathBuf>,
    pub delta: f64,
}

/// Samples the random PoA at a mixed profile: the given one, or the mixed
/// NE behind the mixed PoA.
pub fn run_sample(sample: &SampleConfig, config: &SolverConfig) -> Result<(RunReport, RandomPoaDistribution), RunError> {
    let started = Instant::now();
    config.validate().map_err(solver_error)?;
    sample.plan.validate().map_err(|e| RunError::Input(e.to_string()))?;
    let game = load_game(&read(&sample.game)?).map_err(input(sample.game.display()))?;
    let profile: MixedProfile = match &sample.profile {
        Some(p) => load_mixed_profile(&game, &read(p)?).map_err(input(p.display()))?,
        None => mixed_poa_small(&game, config).map_err(solver_error)?.profile,
    };
    let so = solve_atomic_so(&game, config).map_err(solver_error)?;
    let dist = sample_random_poa(&game, &profile, &sample.plan, so.total_cost.value).map_err(solver_error)?;

    let mut checks = Vec::new();
    let n = dist.sample_count as f64;
    if let Some(exact) = dist.exact_mean() {
        let slack = 3.0 * dist.sample_std / n.sqrt();
        checks.push(Check::new(
            "sample mean within 3σ of exact mean",
            (dist.sample_mean - exact).abs() <= slack + 1e-12,
            format!("|{} − {exact}| ≤ {slack}", dist.sample_mean),
        ));
    }
    let bound = random_poa_threshold(&game, config, sample.delta).ok();
    let mut doc = json!({
        "game": sample.game.display().to_string(),
        "profile": profile.probs,
        "samples": sample.plan.samples,
        "so_cost": so.total_cost.value,
        "sample_mean": dist.sample_mean,
        "sample_std": dist.sample_std,
        "exact_mean": dist.exact_mean(),
        "mixed_ne_residual": verify_mixed_ne(&game, &profile),
    });
    if let Some(b) = bound {
        let freq = dist.sample_frequency_above(b.threshold);
        let allowed = b.p_delta.min(1.0);
        let slack = 3.0 * (allowed * (1.0 - allowed) / n).sqrt();
        checks.push(Check::new(
            "P[random PoA > composed bound] ≤ P_δ",
            freq <= allowed + slack,
            format!("{freq} ≤ {allowed} + {slack} (threshold {})", b.threshold),
        ));
        doc["bound"] = json!({ "threshold": b.threshold, "p_delta": b.p_delta, "delta": sample.delta, "frequency_above": freq });
    }
    let mut files = Vec::new();
    if let Some(dir) = &sample.out {
        prepare_dir(dir)?;
        let path = dir.join("distribution.csv");
        let file = fs::File::create(&path).map_err(input(path.display()))?;
        write_distribution_csv(file, &dist, VERSION).map_err(input(path.display()))?;
        files.push(path);
    }
    let report = RunReport { mode: "sample", seed: sample.plan.seed, checks, nonconverged: false, document: doc, files }
        .finish(sample.out.as_deref(), started)?;
    Ok((report, dist))
}

fn load_asset(dir: Option<&Path>, name: &str) -> Result<String, RunError> {
    match dir {
        None => catalog::ASSETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| RunError::Input(format!("asset not found: {name}"))),
        Some(d) => {
            let path = d.join(name);
            fs::read_to_string(&path).map_err(|_| RunError::Input(format!("asset not found: {}", path.display())))
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn reproduce_example1(game: &Game, config: &SolverConfig, checks: &mut Vec<Check>) -> Result<(), RunError> {
    let sqrt2 = 2f64.sqrt();
    let nat = nonatomic_poa(game, config).map_err(solver_error)?;
    let flow = nat.ne.path_flow(game).values;
    checks.push(Check::new(
        "Example 1 non-atomic NE (√2, 4 − √2)",
        close(flow[0], sqrt2, 1e-7) && close(flow[1], 4.0 - sqrt2, 1e-7),
        format!("{flow:?}"),
    ));
    let rho = 18.0 / (18.0 - 6f64.sqrt());
    checks.push(Check::new("Example 1 ρ_nat = 18/(18 − √6)", close(nat.value, rho, 1e-6), format!("{} vs {rho}", nat.value)));

    let e = enumerate_atomic_equilibria(game, config).map_err(solver_error)?;
    let count: f64 = e.equilibria.iter().map(|q| q.multiplicity).sum();
    let at_flow = e.worst.as_ref().map(|w| w.profile.induced_flow::<f64>(game).values);
    let at = atomic_poa(game, config).map_err(solver_error)?;
    checks.push(Check::new(
        "Example 1 unique atomic NE (0, 4) with ρ_at = 1",
        count == 1.0 && at_flow == Some(vec![0.0, 4.0]) && at.value.exact == Some(integer(1)),
        format!("{count} equilibria, flow {at_flow:?}, ρ_at = {}", at.value.display()),
    ));

    let a = (sqrt2 - 1.0) / 2.0;
    let mixed = solve_mixed_ne_small(game, config).map_err(solver_error)?;
    let profile = mixed.mixed_profile().expect("mixed solution");
    let symmetric = profile.probs.iter().all(|p| close(p[0], a, 1e-8));
    let residual = verify_mixed_ne(game, profile);
    checks.push(Check::new(
        "Example 1 symmetric mixed NE Π = (√2 − 1)/2",
        symmetric && residual <= 1e-9,
        format!("{:?}, residual {residual:e}", profile.probs),
    ));
    let target = 5.0 - 2.5 * sqrt2;
    let m = mixed_poa_small(game, config).map_err(solver_error)?;
    checks.push(Check::new(
        "Example 1 mixed PoA 5 − (5/2)√2",
        close(m.value, target, 1e-8) && m.value >= 1.25,
        format!("{} vs {target}", m.value),
    ));
    Ok(())
}

/// Runs the four worked examples and names the failing anchor on failure.
pub fn run_reproduce(assets: Option<&Path>, out: Option<&Path>, config: &SolverConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    config.validate().map_err(solver_error)?;
    let example1 = load_game(&load_asset(assets, "example1.json")?).map_err(input("example1.json"))?;
    let example2 = load_game(&load_asset(assets, "example2.json")?).map_err(input("example2.json"))?;
    let example3 = load_game(&load_asset(assets, "example3.json")?).map_err(input("example3.json"))?;
    let example4 = load_family(&load_asset(assets, "example4_family.json")?).map_err(input("example4_family.json"))?;
    let mut checks = Vec::new();

    reproduce_example1(&example1, config, &mut checks)?;

    for n in [1u32, 2, 5] {
        let t = Instant::now();
        let users = 4 * n as usize;
        let game = example2
            .with_demands(vec![vec![rational(1, 4 * n as i64); users]])
            .map_err(input("example2.json"))?;
        let p = atomic_poa(&game, config).map_err(solver_error)?;
        checks.push(Check::new(
            format!("Example 2 PoA 8/7 (n = {n})"),
            p.value.exact == Some(rational(8, 7)),
            p.value.display(),
        ));
        checks.push(Check::timing(format!("Example 2 runtime (n = {n})"), t.elapsed(), Duration::from_secs(1)));
    }

    for n in [1i64, 2] {
        let game = example3.with_demands(vec![vec![integer(n); 2]]).map_err(input("example3.json"))?;
        let p = atomic_poa(&game, config).map_err(solver_error)?;
        let ok = p.value.exact == Some(rational(4, 3))
            && p.worst_cost.exact == Some(integer(4 * n * n))
            && p.so_cost.exact == Some(integer(3 * n * n));
        checks.push(Check::new(
            format!("Example 3 PoA 4/3 (n = {n})"),
            ok,
            format!("PoA {}, worst NE {}, SO {}", p.value.display(), p.worst_cost.display(), p.so_cost.display()),
        ));
    }

    let t = Instant::now();
    let grid = [100u64, 1_000, 10_000];
    let mut poas = Vec::new();
    for &n in &grid {
        let game = example4.instantiate(n).map_err(input("example4_family.json"))?;
        poas.push(atomic_poa(&game, config).map_err(solver_error)?.value.value);
    }
    let target = 16.0 / 9.0;
    let increasing = poas.windows(2).all(|w| w[1] >= w[0]);
    let last = poas[poas.len() - 1];
    checks.push(Check::new(
        "Example 4 PoA → 16/9",
        increasing && (last - target).abs() <= 0.002,
        format!("PoA at n = 10², 10³, 10⁴: {poas:?}; target {target}"),
    ));
    checks.push(Check::timing("Example 4 runtime", t.elapsed(), Duration::from_secs(30)));

    let doc = json!({ "assets": assets.map(|p| p.display().to_string()) });
    if let Some(dir) = out {
        prepare_dir(dir)?;
    }
    RunReport { mode: "reproduce", seed: config.rng_seed, checks, nonconverged: false, document: doc, files: Vec::new() }
        .finish(out, started)
}

/// Decomposition prediction over a grid, written as `decompose.csv`.
pub fn run_decompose(family_path: &Path, grid: &[u64], out: &Path, config: &SolverConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    config.validate().map_err(solver_error)?;
    validate_grid(grid)?;
    let family = load_family(&read(family_path)?).map_err(input(family_path.display()))?;
    prepare_dir(out)?;
    let report = decomposition_prediction(&family, grid, config).map_err(input(family_path.display()))?;

    let mut checks = Vec::new();
    let first = &report.rows[0];
    let last = &report.rows[report.rows.len() - 1];
    if report.rows.len() > 1 {
        if let (Some(a), Some(b)) = (first.nonatomic_ratio, last.nonatomic_ratio) {
            checks.push(Check::new(
                "non-atomic measured/predicted approaches 1",
                (b - 1.0).abs() <= (a - 1.0).abs() + 1e-9,
                format!("{a} → {b}"),
            ));
        }
        for u in 1..report.classes.len() {
            let ratio = |r: &crate::decomposition::PredictionRow| r.class_demands[u] / r.class_demands[u - 1];
            let series: Vec<f64> = report.rows.iter().map(ratio).collect();
            checks.push(Check::new(
                format!("class demand ratio T_{}/T_{} decreases", u + 1, u),
                series.windows(2).all(|w| w[1] < w[0]),
                format!("{series:?}"),
            ));
        }
    }

    let table = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.total_demand.to_string(),
                r.class_costs.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                r.predicted.to_string(),
                opt(r.measured_atomic),
                r.atomic_lower_bound.to_string(),
                opt(r.measured_nonatomic),
                opt(r.atomic_ratio),
                opt(r.nonatomic_ratio),
                opt(r.atomic_poa),
            ]
        })
        .collect();
    let path = out.join("decompose.csv");
    write_table(
        &path,
        &[
            "n",
            "total_demand",
            "class_costs",
            "predicted",
            "measured_atomic",
            "atomic_lower_bound",
            "measured_nonatomic",
            "atomic_ratio",
            "nonatomic_ratio",
            "atomic_poa",
        ],
        table,
        config.rng_seed,
    )?;
    let classes: Vec<Value> = report
        .classes
        .iter()
        .map(|c| {
            json!({
                "groups": c.groups,
                "gamma": c.gamma.to_string(),
                "lambda": c.lambda,
                "tight": c.paths.iter().map(|l| json!({ "path": family.base().path_label(l.path), "tight": l.tight })).collect::<Vec<_>>(),
                "limit_flow": c.limit_ne.result.path_flow(&c.limit.game).values,
                "limit_cost": c.limit_ne.cost,
            })
        })
        .collect();
    let doc = json!({
        "family": family_path.display().to_string(),
        "grid": grid,
        "classes": classes,
        "irregular": report.irregular,
        "notes": report.rows.iter().map(|r| json!({ "n": r.n, "notes": r.notes })).collect::<Vec<_>>(),
    });
    RunReport { mode: "decompose", seed: config.rng_seed, checks, nonconverged: false, document: doc, files: vec![path] }
        .finish(Some(out), started)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Input("x".into()).exit_code(), 3);
        assert_eq!(RunError::NotConverged("x".into()).exit_code(), 4);
        let mut r = RunReport {
            mode: "solve",
            seed: 0,
            checks: vec![Check::new("a", true, "")],
            nonconverged: false,
            document: json!({}),
            files: vec![],
        };
        assert_eq!(r.exit_code(), 0);
        r.nonconverged = true;
        assert_eq!(r.exit_code(), 4);
        r.checks.push(Check::new("b", false, ""));
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn grid_rules() {
        assert!(validate_grid(&[1, 2, 3]).is_ok());
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[2, 1]).is_err());
        assert!(validate_grid(&[0, 1]).is_err());
    }

    #[test]
    fn bundled_assets_resolve() {
        assert!(load_asset(None, "example1.json").is_ok());
        let err = load_asset(None, "missing.json").unwrap_err();
        assert!(err.to_string().contains("asset not found"));
    }
}
