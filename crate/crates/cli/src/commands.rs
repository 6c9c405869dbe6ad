use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lagvac_core::diagnostics::{
    energy, exact_boundary_q, momentum, theoretical_rate, DecayTarget, Identity34,
};
use lagvac_core::model::{m_of_q, min_moment_order};
use lagvac_core::{
    fit_decay, run_observed, DecayFit, DiagnosticsError, DiagnosticsRecord, Endpoint, InitialData,
    LagrangianState, ModelError, ModelParams, RatePrediction, Recorder, SolverError,
};
use thiserror::Error;

use crate::config::{load_config, ConfigError, RunConfig};
use crate::output::{self, FormatError, Manifest};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Other(String),
}

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const VERDICT: i32 = 2;
}

/// A decay fit of one monitored quantity, or why it was not attempted.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub quantity: &'static str,
    pub fit: Result<DecayFit, String>,
}

impl FitReport {
    pub fn passed(&self) -> bool {
        self.fit.as_ref().map_or(true, |f| f.verdict)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub prediction: RatePrediction,
    pub fits: Vec<FitReport>,
    pub rows: usize,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.fits.iter().all(FitReport::passed)
    }
}

fn prepare_dir(dir: &Path) -> Result<(), RunError> {
    let snaps = dir.join(output::SNAPSHOT_DIR);
    fs::create_dir_all(&snaps).map_err(|source| FormatError::Io {
        path: snaps.clone(),
        source,
    })?;
    // stale snapshots from an earlier run would confuse `verify`
    for entry in fs::read_dir(&snaps).map_err(|source| FormatError::Io {
        path: snaps.clone(),
        source,
    })? {
        let path = entry.map_err(|source| FormatError::Io {
            path: snaps.clone(),
            source,
        })?;
        let _ = fs::remove_file(path.path());
    }
    Ok(())
}

/// Writes a MANIFEST for a run that never started.
pub fn write_failure_manifest(dir: &Path, err: &dyn std::fmt::Display) {
    let _ = fs::create_dir_all(dir);
    let mut m = Manifest::default();
    m.set("version", output::VERSION);
    m.set("status", "invalid_config");
    m.set("error", err);
    let _ = m.write(dir);
}

/// Runs one configuration into `out_dir`.
///
/// The MANIFEST is written whatever happens once the directory exists.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, RunError> {
    let mut manifest = Manifest::default();
    manifest.set("version", output::VERSION);
    manifest.set("status", "running");
    manifest.set("config", output::CONFIG);
    manifest.set("regime", cfg.regime.name());
    manifest.set("cells", cfg.cells);
    manifest.set("t_end", output::fmt17(cfg.control.t_end));
    manifest.set("seed", cfg.seed);

    if let Err(e) = prepare_dir(out_dir) {
        write_failure_manifest(out_dir, &e);
        return Err(e);
    }
    let result = execute_inner(cfg, out_dir, &mut manifest);
    match &result {
        Ok(report) => {
            manifest.set("status", "complete");
            manifest.set("verdict", if report.passed() { "pass" } else { "fail" });
        }
        Err(e) => {
            manifest.set("status", "aborted");
            manifest.set("error", e);
        }
    }
    manifest.write(out_dir)?;
    result
}

fn execute_inner(
    cfg: &RunConfig,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> Result<RunReport, RunError> {
    let config_path = out_dir.join(output::CONFIG);
    fs::write(&config_path, cfg.to_text()).map_err(|source| FormatError::Io {
        path: config_path,
        source,
    })?;

    let initial = cfg.initial_data()?;
    let prediction = theoretical_rate(&cfg.params, &cfg.regime)?;
    let mut recorder = Recorder::new(&initial, &cfg.params, cfg.diagnostics.probe_x)?;
    let times = cfg.samples.times(cfg.control.t_end);

    let mut rows: Vec<DiagnosticsRecord> = Vec::with_capacity(times.len() + 1);
    let mut next = 0;
    let mut write_error: Option<FormatError> = None;
    let rho_l = cfg.params.rho_l;
    let solved = run_observed(&initial, &cfg.params, &cfg.control, &times, |s| {
        let record = recorder.record(s);
        let sampled = if s.steps == 0 {
            true
        } else if next < times.len() && s.t == times[next] {
            next += 1;
            true
        } else {
            false
        };
        if sampled {
            if cfg.diagnostics.snapshots && write_error.is_none() {
                let path = output::snapshot_path(out_dir, rows.len());
                write_error = output::write_snapshot(&path, s, rho_l).err();
            }
            rows.push(record);
        }
    });

    output::write_diagnostics(&out_dir.join(output::DIAGNOSTICS), &rows)?;
    manifest.set("rows", rows.len());
    manifest.set(
        "snapshots",
        if cfg.diagnostics.snapshots {
            rows.len()
        } else {
            0
        },
    );
    if let Some(e) = write_error {
        return Err(e.into());
    }
    solved?;

    let fits = if cfg.diagnostics.fit {
        let target = DecayTarget::from_prediction(&prediction, cfg.diagnostics.slack);
        let window = cfg.fit_window();
        let series = |f: fn(&DiagnosticsRecord) -> f64| -> Vec<(f64, f64)> {
            rows.iter().map(|r| (r.t, f(r))).collect()
        };
        vec![
            FitReport {
                quantity: "sup_m",
                fit: fit_decay(&series(|r| r.sup_m), window, &target).map_err(|e| e.to_string()),
            },
            FitReport {
                quantity: "sup_n",
                fit: fit_decay(&series(|r| r.sup_n), window, &target).map_err(|e| e.to_string()),
            },
        ]
    } else {
        Vec::new()
    };
    let report = RunReport {
        out_dir: out_dir.to_path_buf(),
        prediction,
        fits,
        rows: rows.len(),
    };
    let summary_path = out_dir.join(output::SUMMARY);
    fs::write(&summary_path, summary_text(cfg, &report)).map_err(|source| FormatError::Io {
        path: summary_path,
        source,
    })?;
    Ok(report)
}

pub fn summary_text(cfg: &RunConfig, report: &RunReport) -> String {
    let p = &report.prediction;
    let mut s = String::new();
    let _ = writeln!(s, "regime = {}", cfg.regime.name());
    let _ = writeln!(s, "gamma = {}", cfg.params.gamma);
    let _ = writeln!(s, "beta = {}", cfg.params.beta);
    let _ = writeln!(s, "case = {}", p.case.label());
    let _ = writeln!(s, "theta = {}", p.theta);
    let _ = writeln!(s, "rate = {}", p.rate);
    let _ = writeln!(s, "log_corrected = {}", p.log_corrected);
    let _ = writeln!(s, "slack = {}", cfg.diagnostics.slack);
    for f in &report.fits {
        match &f.fit {
            Ok(fit) => {
                let q = f.quantity;
                let _ = writeln!(s, "{q}.window = {} {}", fit.window.0, fit.window.1);
                let _ = writeln!(s, "{q}.points = {}", fit.points);
                let _ = writeln!(s, "{q}.exponent = {}", output::fmt17(fit.exponent));
                let _ = writeln!(s, "{q}.r2 = {}", fit.r2);
                let _ = writeln!(
                    s,
                    "{q}.threshold = {}",
                    -fit.theoretical_rate * (1.0 - cfg.diagnostics.slack)
                );
                let _ = writeln!(
                    s,
                    "{q}.verdict = {}",
                    if fit.verdict { "pass" } else { "fail" }
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{}.verdict = skipped ({e})", f.quantity);
            }
        }
    }
    s
}

/// `lagvac run`: returns the exit code.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> i32 {
    match execute(cfg, out_dir) {
        Ok(report) => {
            print!("{}", summary_text(cfg, &report));
            if report.passed() {
                exit::PASS
            } else {
                exit::VERDICT
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::ERROR
        }
    }
}

/// Parses `gamma=2,3,beta=0.5,1` into the list of values per key; bare
/// values continue the list of the preceding key.
pub fn parse_grid(spec: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut gammas = Vec::new();
    let mut betas = Vec::new();
    let mut current: Option<&mut Vec<f64>> = None;
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let value = match token.split_once('=') {
            Some((key, value)) => {
                current = Some(match key.trim() {
                    "gamma" => &mut gammas,
                    "beta" => &mut betas,
                    other => return Err(format!("unknown grid key `{other}`")),
                });
                value.trim()
            }
            None => token,
        };
        let list = current
            .as_deref_mut()
            .ok_or_else(|| format!("value `{token}` before any key"))?;
        list.push(
            value
                .parse::<f64>()
                .map_err(|_| format!("cannot parse `{value}`"))?,
        );
    }
    if gammas.is_empty() || betas.is_empty() {
        return Err("grid needs at least one gamma and one beta".into());
    }
    Ok(gammas
        .iter()
        .flat_map(|&g| betas.iter().map(move |&b| (g, b)))
        .collect())
}

/// One line of the sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub gamma: f64,
    pub beta: f64,
    pub outcome: Result<RunReport, String>,
}

impl SweepRow {
    pub fn passed(&self) -> bool {
        matches!(&self.outcome, Ok(r) if r.passed())
    }
}

fn cell_config(
    template: &RunConfig,
    gamma: f64,
    beta: f64,
    out: &Path,
) -> Result<RunConfig, RunError> {
    let mut cfg = template.clone();
    let t = template.params;
    let moment_n = if t.moment_n == min_moment_order(t.gamma, t.beta) {
        min_moment_order(gamma, beta)
    } else {
        t.moment_n
    };
    cfg.params = ModelParams::new(gamma, beta, t.rho_l, moment_n)?;
    cfg.out_dir = out.join(format!("gamma_{gamma}_beta_{beta}"));
    cfg.initial_data()?;
    Ok(cfg)
}

/// Runs every `(gamma, beta)` cell, `jobs` at a time.
pub fn sweep(template: &RunConfig, grid: &[(f64, f64)], out: &Path, jobs: usize) -> Vec<SweepRow> {
    let slots: Vec<Mutex<Option<SweepRow>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(grid.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(gamma, beta)) = grid.get(k) else {
                    break;
                };
                let outcome = match cell_config(template, gamma, beta, out) {
                    Ok(cfg) => execute(&cfg, &cfg.out_dir).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                *slots[k].lock().unwrap() = Some(SweepRow {
                    gamma,
                    beta,
                    outcome,
                });
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every cell is visited"))
        .collect()
}

pub fn sweep_table(template: &RunConfig, rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>6} {:>14} {:>6} {:>8} {:>10} {:>10} {:>8}",
        "gamma", "beta", "regime", "theta", "rate", "fit_m", "fit_n", "verdict"
    );
    let exp = |r: &RunReport, q: &str| {
        r.fits
            .iter()
            .find(|f| f.quantity == q)
            .and_then(|f| f.fit.as_ref().ok())
            .map_or("-".to_string(), |f| format!("{:.4}", f.exponent))
    };
    for row in rows {
        match &row.outcome {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{:>6} {:>6} {:>14} {:>6.3} {:>8.4} {:>10} {:>10} {:>8}",
                    row.gamma,
                    row.beta,
                    template.regime.name(),
                    r.prediction.theta,
                    r.prediction.rate,
                    exp(r, "sup_m"),
                    exp(r, "sup_n"),
                    if r.passed() { "pass" } else { "fail" }
                );
            }
            Err(e) => {
                let _ = writeln!(
                    s,
                    "{:>6} {:>6} {:>14} {:>6} {:>8} {:>10} {:>10} {:>8}  {e}",
                    row.gamma,
                    row.beta,
                    template.regime.name(),
                    "-",
                    "-",
                    "-",
                    "-",
                    "error"
                );
            }
        }
    }
    s
}

/// `lagvac sweep`: returns the exit code.
pub fn cmd_sweep(template: &RunConfig, grid: &[(f64, f64)], out: &Path, jobs: usize) -> i32 {
    let rows = sweep(template, grid, out, jobs);
    let table = sweep_table(template, &rows);
    print!("{table}");
    let path = out.join("sweep.txt");
    if let Err(e) = fs::create_dir_all(out).and_then(|_| fs::write(&path, &table)) {
        eprintln!("error: {}: {e}", path.display());
        return exit::ERROR;
    }
    if rows.iter().any(|r| r.outcome.is_err()) {
        exit::ERROR
    } else if rows.iter().all(SweepRow::passed) {
        exit::PASS
    } else {
        exit::VERDICT
    }
}

/// One offline check of a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    /// `None` when the check does not apply to this run.
    pub passed: Option<bool>,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64) -> Self {
        Check {
            name,
            value,
            tolerance,
            passed: Some(value <= tolerance),
        }
    }

    fn skipped(name: &'static str) -> Self {
        Check {
            name,
            value: f64::NAN,
            tolerance: f64::NAN,
            passed: None,
        }
    }
}

pub const ENERGY_STEP_TOL: f64 = 1.0e-8;
pub const ENERGY_BALANCE_TOL: f64 = 1.0e-6;
pub const MOMENTUM_TOL: f64 = 1.0e-8;
pub const BOUNDARY_TOL: f64 = 0.02;
pub const BOUNDARY_HORIZON: f64 = 100.0;
pub const IDENTITY_HORIZON: f64 = 10.0;
pub const IDENTITY_TOL: f64 = 1.0e-3;
/// Largest relative difference between replayed and stored snapshots.
pub const REPLAY_TOL: f64 = 1.0e-9;

/// Integrates the stored configuration again up to the last snapshot with
/// `t <= IDENTITY_HORIZON`, evaluating the identity residual at every step.
///
/// Returns the largest residual and the largest relative mismatch between
/// the replayed states and the stored snapshots.
fn replay_early(
    cfg: &RunConfig,
    initial: &InitialData,
    states: &[LagrangianState],
) -> Result<(f64, f64), RunError> {
    let early: Vec<&LagrangianState> = states.iter().filter(|s| s.t <= IDENTITY_HORIZON).collect();
    let times: Vec<f64> = early.iter().map(|s| s.t).filter(|&t| t > 0.0).collect();
    let mut identity = Identity34::new(initial, &cfg.params, cfg.diagnostics.probe_x);
    let mut residual = 0.0f64;
    let mut ctrl = cfg.control;
    ctrl.t_end = times.last().copied().unwrap_or(0.0);
    let replayed = run_observed(initial, &cfg.params, &ctrl, &times, |s| {
        residual = residual.max(identity.push(s).abs());
    })?;
    let start = LagrangianState::from_initial(initial);
    let mut mismatch = 0.0f64;
    let pairs = std::iter::once(&start).chain(&replayed);
    for (stored, fresh) in early.iter().zip(pairs) {
        if stored.t != fresh.t {
            mismatch = f64::INFINITY;
            continue;
        }
        let fields = stored
            .q
            .iter()
            .zip(&fresh.q)
            .chain(stored.u.iter().zip(&fresh.u))
            .chain(stored.c.iter().zip(fresh.c.iter()));
        for (a, b) in fields {
            mismatch = mismatch.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    Ok((residual, mismatch))
}

fn read_run(dir: &Path) -> Result<(RunConfig, Vec<LagrangianState>), RunError> {
    Manifest::read(dir)?;
    let cfg = load_config(&dir.join(output::CONFIG))?;
    let snaps = dir.join(output::SNAPSHOT_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&snaps)
        .map_err(|source| FormatError::Io {
            path: snaps.clone(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunError::Other(format!(
            "{}: no snapshots",
            snaps.display()
        )));
    }
    let states = paths
        .iter()
        .map(|p| output::read_snapshot(p))
        .collect::<Result<Vec<_>, _>>()?;
    for (p, s) in paths.iter().zip(&states) {
        if s.q.len() != cfg.cells {
            return Err(RunError::Other(format!(
                "{}: {} cells, config has {}",
                p.display(),
                s.q.len(),
                cfg.cells
            )));
        }
    }
    Ok((cfg, states))
}

/// Recomputes the run invariants from the snapshots of `dir`.
pub fn verify(dir: &Path) -> Result<Vec<Check>, RunError> {
    let (cfg, states) = read_run(dir)?;
    let params = &cfg.params;
    let initial: InitialData = cfg.initial_data()?;
    let start = LagrangianState::from_initial(&initial);
    let mut checks = Vec::new();

    let e0 = energy(&start, params)?;
    let energies = states
        .iter()
        .map(|s| energy(s, params))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    let rise = energies
        .windows(2)
        .map(|w| (w[1] - w[0]) / scale)
        .fold(f64::NEG_INFINITY, f64::max)
        .max((energies[0] - e0) / scale);
    checks.push(Check::at_most(
        "energy_non_increasing",
        rise,
        ENERGY_STEP_TOL,
    ));
    let balance = states
        .iter()
        .zip(&energies)
        .map(|(s, e)| ((e + s.dissipated) - e0).abs() / scale)
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "energy_balance",
        balance,
        ENERGY_BALANCE_TOL,
    ));

    let p0 = momentum(&start);
    let drift = states
        .iter()
        .map(|s| (momentum(s) - p0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("momentum", drift, MOMENTUM_TOL));

    let (residual, mismatch) = replay_early(&cfg, &initial, &states)?;
    checks.push(Check::at_most("identity_residual", residual, IDENTITY_TOL));
    checks.push(Check::at_most("replay_matches", mismatch, REPLAY_TOL));

    if cfg.regime.is_continuous() {
        checks.push(Check::skipped("boundary_oracle"));
    } else {
        let mut worst = 0.0f64;
        let cells = cfg.cells;
        for s in states.iter().filter(|s| s.t <= BOUNDARY_HORIZON) {
            for (end, q) in [(Endpoint::Left, s.q[0]), (Endpoint::Right, s.q[cells - 1])] {
                let exact = exact_boundary_q(s.t, end, params, &initial)?;
                worst = worst.max((q / exact - 1.0).abs());
            }
        }
        checks.push(Check::at_most("boundary_oracle", worst, BOUNDARY_TOL));
    }

    let prediction = theoretical_rate(params, &cfg.regime)?;
    let target = DecayTarget::from_prediction(&prediction, cfg.diagnostics.slack);
    let window = cfg.fit_window();
    let sup = |f: &dyn Fn(f64, f64) -> f64| -> Vec<(f64, f64)> {
        states
            .iter()
            .map(|s| {
                let v =
                    s.c.iter()
                        .zip(&s.q)
                        .map(|(&c, &q)| f(c, m_of_q(q, params.rho_l).unwrap_or(f64::NAN)))
                        .fold(0.0, f64::max);
                (s.t, v)
            })
            .collect()
    };
    let threshold = -prediction.rate * (1.0 - cfg.diagnostics.slack);
    for (name, series) in [
        ("decay_sup_m", sup(&|_, m| m)),
        ("decay_sup_n", sup(&|c, m| c * m)),
    ] {
        match fit_decay(&series, window, &target) {
            Ok(fit) if cfg.diagnostics.fit => {
                checks.push(Check::at_most(name, fit.exponent, threshold))
            }
            _ => checks.push(Check::skipped(name)),
        }
    }
    Ok(checks)
}

pub fn check_table(checks: &[Check]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:>14} {:>12} {:>8}",
        "check", "value", "limit", "result"
    );
    for c in checks {
        let result = match c.passed {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "skipped",
        };
        let _ = writeln!(
            s,
            "{:<22} {:>14.6e} {:>12.3e} {:>8}",
            c.name, c.value, c.tolerance, result
        );
    }
    s
}

/// `lagvac verify`: returns the exit code.
pub fn cmd_verify(dir: &Path) -> i32 {
    match verify(dir) {
        Ok(checks) => {
            print!("{}", check_table(&checks));
            if checks.iter().any(|c| c.passed == Some(false)) {
                exit::VERDICT
            } else {
                exit::PASS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::ERROR
        }
    }
}
