//! Run configuration: a flat `key = value` file split into `[sections]`.
//!
//! ```text
//! [model]
//! gamma = 2
//! beta = 0.5
//!
//! [grid]
//! cells = 256
//! ```
//!
//! Every key is optional and falls back to the default listed in
//! [`RunConfig::default`]. Unknown sections or keys, and keys given twice,
//! are errors. `#` and `;` start a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lagvac_core::model::min_moment_order;
use lagvac_core::{
    make_initial_data, InitialData, ModelError, ModelParams, Profile, ProfileSpec, StepControl,
    VacuumRegime,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ConfigError {
    fn invalid(key: &str, msg: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

/// How sample times are laid out over `(0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    /// Uniform in `log(1 + t)`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Samples {
    pub count: usize,
    pub spacing: Spacing,
}

impl Samples {
    /// Sample times for a run ending at `t_end`; empty when `t_end = 0`.
    pub fn times(&self, t_end: f64) -> Vec<f64> {
        if t_end <= 0.0 {
            return Vec::new();
        }
        let n = self.count as f64;
        let mut times: Vec<f64> = (1..=self.count)
            .map(|k| {
                let s = k as f64 / n;
                match self.spacing {
                    Spacing::Linear => t_end * s,
                    Spacing::Log => (s * t_end.ln_1p()).exp_m1(),
                }
            })
            .collect();
        *times.last_mut().unwrap() = t_end;
        times.dedup_by(|a, b| a <= b);
        times
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsConfig {
    pub probe_x: f64,
    /// Fit decay exponents and report verdicts.
    pub fit: bool,
    pub slack: f64,
    /// Fit window; the last decade of the run when unset.
    pub window: Option<(f64, f64)>,
    pub snapshots: bool,
}

/// Initial profile choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Builtin(ProfileSpec),
    /// Smooth bumps with seeded random mode weights.
    Random {
        m_base: f64,
        m_amp: f64,
        n_base: f64,
        n_amp: f64,
        u_amp: f64,
        modes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    /// Constant added to the initial velocity.
    pub u_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub regime: VacuumRegime,
    pub profile: ProfileConfig,
    pub cells: usize,
    pub control: StepControl,
    pub samples: Samples,
    pub diagnostics: DiagnosticsConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_K: [f64; 4] = [1.25, 1.25, 5.5, 5.5];

impl Default for RunConfig {
    fn default() -> Self {
        let (gamma, beta) = (2.0, 0.5);
        RunConfig {
            params: ModelParams {
                gamma,
                beta,
                rho_l: 1.0,
                moment_n: min_moment_order(gamma, beta),
            },
            regime: VacuumRegime::Discontinuous,
            profile: ProfileConfig {
                kind: ProfileKind::Builtin(ProfileSpec::SmoothBump {
                    m_base: 0.7,
                    m_amp: 0.15,
                    n_base: 2.0,
                    n_amp: 1.0,
                    u_amp: 0.2,
                }),
                u_drift: 0.0,
            },
            cells: 256,
            control: StepControl {
                dt_init: 1.0e-3,
                cfl_visc: 1.0,
                dt_min: 1.0e-12,
                t_end: 200.0,
                positivity_guard: 0.01,
            },
            samples: Samples {
                count: 200,
                spacing: Spacing::Log,
            },
            diagnostics: DiagnosticsConfig {
                probe_x: 0.5,
                fit: true,
                slack: 0.2,
                window: None,
                snapshots: true,
            },
            out_dir: PathBuf::from("lagvac-out"),
            seed: 0,
        }
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("model", &["gamma", "beta", "rho_l", "moment_n"]),
    ("regime", &["kind", "alpha", "k1", "k2", "k3", "k4"]),
    (
        "profile",
        &[
            "kind", "m", "n", "m_base", "m_amp", "n_base", "n_amp", "km", "kn", "u_amp", "u_drift",
            "modes",
        ],
    ),
    ("grid", &["cells"]),
    (
        "step",
        &["dt_init", "cfl_visc", "dt_min", "t_end", "positivity_guard"],
    ),
    ("samples", &["count", "spacing"]),
    (
        "diagnostics",
        &[
            "probe_x",
            "fit",
            "slack",
            "window_lo",
            "window_hi",
            "snapshots",
        ],
    ),
    ("output", &["dir"]),
    ("run", &["seed"]),
];

fn profile_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "constant" => &["m", "n", "u_amp"],
        "smooth_bump" => &["m_base", "m_amp", "n_base", "n_amp", "u_amp"],
        "phi_power" => &["km", "kn", "u_amp"],
        "random" => &["m_base", "m_amp", "n_base", "n_amp", "u_amp", "modes"],
        _ => return None,
    })
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed but not yet interpreted file contents.
#[derive(Debug, Default)]
struct Raw {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Raw {
    fn parse(text: &str) -> Result<Raw> {
        let mut raw = Raw::default();
        let mut current: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.split(['#', ';']).next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: lineno,
                    msg: format!("malformed section header `{line}`"),
                })?;
                let name = name.trim().to_string();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        msg: format!("unknown section [{name}]"),
                    });
                }
                raw.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: lineno,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().trim_matches('"').to_string();
            let section = current.clone().ok_or(ConfigError::Parse {
                line: lineno,
                msg: format!("key `{key}` appears before any [section]"),
            })?;
            let allowed = SCHEMA.iter().find(|(s, _)| *s == section).unwrap().1;
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    line: lineno,
                    section,
                    key,
                });
            }
            if value.is_empty() {
                return Err(ConfigError::Parse {
                    line: lineno,
                    msg: format!("empty value for `{key}`"),
                });
            }
            let table = raw.sections.get_mut(&section).unwrap();
            if let Some(first) = table.get(&key) {
                return Err(ConfigError::Duplicate {
                    line: lineno,
                    key: format!("{section}.{key}"),
                    first: first.line,
                });
            }
            table.insert(
                key,
                Entry {
                    value,
                    line: lineno,
                },
            );
        }
        Ok(raw)
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|t| t.get(key))
    }

    fn value<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| ConfigError::Parse {
                line: e.line,
                msg: format!("cannot parse `{}` as the value of {section}.{key}", e.value),
            }),
        }
    }

    fn number(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.value(section, key, default)?;
        if !v.is_finite() {
            return Err(ConfigError::invalid(
                &format!("{section}.{key}"),
                "must be finite",
            ));
        }
        Ok(v)
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw = Raw::parse(text)?;
    let d = RunConfig::default();

    let gamma = raw.number("model", "gamma", d.params.gamma)?;
    let beta = raw.number("model", "beta", d.params.beta)?;
    let rho_l = raw.number("model", "rho_l", d.params.rho_l)?;
    let moment_n = match raw.get("model", "moment_n") {
        Some(_) => raw.value("model", "moment_n", 0u32)?,
        None if beta > 0.0 && gamma.is_finite() => min_moment_order(gamma, beta),
        None => 1,
    };
    let params = ModelParams::new(gamma, beta, rho_l, moment_n)?;

    let regime = match raw
        .value("regime", "kind", "discontinuous".to_string())?
        .as_str()
    {
        "discontinuous" => {
            for key in ["alpha", "k1", "k2", "k3", "k4"] {
                if let Some(e) = raw.get("regime", key) {
                    return Err(ConfigError::Parse {
                        line: e.line,
                        msg: format!("`{key}` only applies to the continuous regime"),
                    });
                }
            }
            VacuumRegime::Discontinuous
        }
        "continuous" => {
            let alpha = raw.number("regime", "alpha", DEFAULT_ALPHA)?;
            let mut k = DEFAULT_K;
            for (i, key) in ["k1", "k2", "k3", "k4"].iter().enumerate() {
                k[i] = raw.number("regime", key, DEFAULT_K[i])?;
            }
            VacuumRegime::continuous(alpha, k, rho_l)?
        }
        other => {
            return Err(ConfigError::invalid(
                "regime.kind",
                format!("`{other}` is not one of discontinuous, continuous"),
            ))
        }
    };

    let profile = parse_profile(&raw, &regime, &d)?;

    let cells: usize = raw.value("grid", "cells", d.cells)?;
    let control = StepControl {
        dt_init: raw.number("step", "dt_init", d.control.dt_init)?,
        cfl_visc: raw.number("step", "cfl_visc", d.control.cfl_visc)?,
        dt_min: raw.number("step", "dt_min", d.control.dt_min)?,
        t_end: raw.number("step", "t_end", d.control.t_end)?,
        positivity_guard: raw.number("step", "positivity_guard", d.control.positivity_guard)?,
    };
    control
        .validate()
        .map_err(|e| ConfigError::invalid("step", e.to_string()))?;

    let count: usize = raw.value("samples", "count", d.samples.count)?;
    if count == 0 {
        return Err(ConfigError::invalid("samples.count", "must be at least 1"));
    }
    let spacing = match raw.value("samples", "spacing", "log".to_string())?.as_str() {
        "linear" => Spacing::Linear,
        "log" => Spacing::Log,
        other => {
            return Err(ConfigError::invalid(
                "samples.spacing",
                format!("`{other}` is not one of linear, log"),
            ))
        }
    };

    let probe_x = raw.number("diagnostics", "probe_x", d.diagnostics.probe_x)?;
    if !(0.0..=1.0).contains(&probe_x) {
        return Err(ConfigError::invalid(
            "diagnostics.probe_x",
            "must lie in [0, 1]",
        ));
    }
    let slack = raw.number("diagnostics", "slack", d.diagnostics.slack)?;
    if !(0.0..1.0).contains(&slack) {
        return Err(ConfigError::invalid(
            "diagnostics.slack",
            "must lie in [0, 1)",
        ));
    }
    let window = match (
        raw.get("diagnostics", "window_lo"),
        raw.get("diagnostics", "window_hi"),
    ) {
        (None, None) => None,
        (Some(_), Some(_)) => {
            let lo = raw.number("diagnostics", "window_lo", 0.0)?;
            let hi = raw.number("diagnostics", "window_hi", 0.0)?;
            if !(lo > 0.0 && hi >= 10.0 * lo && hi <= control.t_end) {
                return Err(ConfigError::invalid(
                    "diagnostics.window_lo",
                    format!("window [{lo}, {hi}] must have 0 < lo, hi >= 10 lo and hi <= t_end"),
                ));
            }
            Some((lo, hi))
        }
        _ => {
            return Err(ConfigError::invalid(
                "diagnostics.window_lo",
                "window_lo and window_hi must be given together",
            ))
        }
    };

    let cfg = RunConfig {
        params,
        regime,
        profile,
        cells,
        control,
        samples: Samples { count, spacing },
        diagnostics: DiagnosticsConfig {
            probe_x,
            fit: raw.value("diagnostics", "fit", d.diagnostics.fit)?,
            slack,
            window,
            snapshots: raw.value("diagnostics", "snapshots", d.diagnostics.snapshots)?,
        },
        out_dir: raw
            .get("output", "dir")
            .map(|e| PathBuf::from(&e.value))
            .unwrap_or(d.out_dir),
        seed: raw.value("run", "seed", d.seed)?,
    };
    cfg.initial_data()?;
    Ok(cfg)
}

fn parse_profile(raw: &Raw, regime: &VacuumRegime, d: &RunConfig) -> Result<ProfileConfig> {
    let kind = raw.value("profile", "kind", "smooth_bump".to_string())?;
    let allowed = profile_keys(&kind).ok_or_else(|| {
        ConfigError::invalid(
            "profile.kind",
            format!("`{kind}` is not one of constant, smooth_bump, phi_power, random"),
        )
    })?;
    if let Some(table) = raw.sections.get("profile") {
        for (key, e) in table {
            if key != "kind" && key != "u_drift" && !allowed.contains(&key.as_str()) {
                return Err(ConfigError::Parse {
                    line: e.line,
                    msg: format!("`{key}` does not apply to profile kind {kind}"),
                });
            }
        }
    }
    let num = |key: &str, default: f64| raw.number("profile", key, default);
    let (bm, bam, bn, ban, bu) = match d.profile.kind {
        ProfileKind::Builtin(ProfileSpec::SmoothBump {
            m_base,
            m_amp,
            n_base,
            n_amp,
            u_amp,
        }) => (m_base, m_amp, n_base, n_amp, u_amp),
        _ => unreachable!("the default profile is a smooth bump"),
    };
    let kind = match kind.as_str() {
        "constant" => ProfileKind::Builtin(ProfileSpec::Constant {
            m: num("m", 0.5)?,
            n: num("n", 0.5)?,
            u_amp: num("u_amp", 0.0)?,
        }),
        "smooth_bump" => ProfileKind::Builtin(ProfileSpec::SmoothBump {
            m_base: num("m_base", bm)?,
            m_amp: num("m_amp", bam)?,
            n_base: num("n_base", bn)?,
            n_amp: num("n_amp", ban)?,
            u_amp: num("u_amp", bu)?,
        }),
        "phi_power" => {
            let (alpha, k) = match *regime {
                VacuumRegime::Continuous { alpha, k } => (alpha, k),
                VacuumRegime::Discontinuous => (DEFAULT_ALPHA, DEFAULT_K),
            };
            ProfileKind::Builtin(ProfileSpec::PhiPower {
                km: num("km", 0.5 * (k[0] + k[1]))?,
                kn: num("kn", 0.5 * (k[2] + k[3]))?,
                alpha,
                u_amp: num("u_amp", bu)?,
            })
        }
        _ => {
            if regime.is_continuous() {
                return Err(ConfigError::invalid(
                    "profile.kind",
                    "random profiles need the discontinuous regime",
                ));
            }
            let modes: usize = raw.value("profile", "modes", 3)?;
            if modes == 0 {
                return Err(ConfigError::invalid("profile.modes", "must be at least 1"));
            }
            ProfileKind::Random {
                m_base: num("m_base", bm)?,
                m_amp: num("m_amp", bam)?,
                n_base: num("n_base", bn)?,
                n_amp: num("n_amp", ban)?,
                u_amp: num("u_amp", bu)?,
                modes,
            }
        }
    };
    Ok(ProfileConfig {
        kind,
        u_drift: num("u_drift", 0.0)?,
    })
}

/// Profile with its random weights drawn.
#[derive(Debug, Clone)]
pub struct RealizedProfile {
    kind: ProfileKind,
    u_drift: f64,
    m_weights: Vec<f64>,
    n_weights: Vec<f64>,
    u_weights: Vec<f64>,
}

impl RealizedProfile {
    pub fn new(profile: &ProfileConfig, seed: u64) -> Self {
        let mut out = RealizedProfile {
            kind: profile.kind,
            u_drift: profile.u_drift,
            m_weights: Vec::new(),
            n_weights: Vec::new(),
            u_weights: Vec::new(),
        };
        if let ProfileKind::Random { modes, .. } = profile.kind {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let simplex = |rng: &mut ChaCha8Rng| {
                let w: Vec<f64> = (0..modes).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
                w.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            out.m_weights = simplex(&mut rng);
            out.n_weights = simplex(&mut rng);
            out.u_weights = (0..modes)
                .map(|_| rng.gen_range(-1.0..1.0) / modes as f64)
                .collect();
        }
        out
    }

    fn bumps(weights: &[f64], x: f64) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * ((k + 1) as f64 * std::f64::consts::PI * x).sin().powi(2))
            .sum()
    }
}

impl Profile for RealizedProfile {
    fn n0(&self, x: f64) -> f64 {
        match self.kind {
            ProfileKind::Builtin(spec) => spec.n0(x),
            ProfileKind::Random { n_base, n_amp, .. } => {
                n_base + n_amp * Self::bumps(&self.n_weights, x)
            }
        }
    }

    fn m0(&self, x: f64) -> f64 {
        match self.kind {
            ProfileKind::Builtin(spec) => spec.m0(x),
            ProfileKind::Random { m_base, m_amp, .. } => {
                m_base + m_amp * Self::bumps(&self.m_weights, x)
            }
        }
    }

    fn u0(&self, x: f64) -> f64 {
        let u = match self.kind {
            ProfileKind::Builtin(spec) => spec.u0(x),
            ProfileKind::Random { u_amp, .. } => {
                u_amp
                    * self
                        .u_weights
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * (2.0 * (k + 1) as f64 * std::f64::consts::PI * x).sin())
                        .sum::<f64>()
            }
        };
        u + self.u_drift
    }
}

impl RunConfig {
    /// Samples the configured profile and checks the assumptions on it.
    pub fn initial_data(&self) -> std::result::Result<InitialData, ModelError> {
        let profile = RealizedProfile::new(&self.profile, self.seed);
        make_initial_data(&self.params, &self.regime, &profile, self.cells)
    }

    /// Fit window, defaulting to the last decade of the run.
    pub fn fit_window(&self) -> (f64, f64) {
        self.diagnostics
            .window
            .unwrap_or_else(|| lagvac_core::diagnostics::last_decade(self.control.t_end))
    }

    /// Full configuration text; parsing it back gives `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "gamma = {:?}", p.gamma);
        let _ = writeln!(s, "beta = {:?}", p.beta);
        let _ = writeln!(s, "rho_l = {:?}", p.rho_l);
        let _ = writeln!(s, "moment_n = {}", p.moment_n);
        let _ = writeln!(s, "\n[regime]");
        match self.regime {
            VacuumRegime::Discontinuous => {
                let _ = writeln!(s, "kind = discontinuous");
            }
            VacuumRegime::Continuous { alpha, k } => {
                let _ = writeln!(s, "kind = continuous");
                let _ = writeln!(s, "alpha = {alpha:?}");
                for (i, v) in k.iter().enumerate() {
                    let _ = writeln!(s, "k{} = {v:?}", i + 1);
                }
            }
        }
        let _ = writeln!(s, "\n[profile]");
        match self.profile.kind {
            ProfileKind::Builtin(ProfileSpec::Constant { m, n, u_amp }) => {
                let _ = writeln!(
                    s,
                    "kind = constant\nm = {m:?}\nn = {n:?}\nu_amp = {u_amp:?}"
                );
            }
            ProfileKind::Builtin(ProfileSpec::SmoothBump {
                m_base,
                m_amp,
                n_base,
                n_amp,
                u_amp,
            }) => {
                let _ = writeln!(
                    s,
                    "kind = smooth_bump\nm_base = {m_base:?}\nm_amp = {m_amp:?}\n\
                     n_base = {n_base:?}\nn_amp = {n_amp:?}\nu_amp = {u_amp:?}"
                );
            }
            ProfileKind::Builtin(ProfileSpec::PhiPower { km, kn, u_amp, .. }) => {
                let _ = writeln!(
                    s,
                    "kind = phi_power\nkm = {km:?}\nkn = {kn:?}\nu_amp = {u_amp:?}"
                );
            }
            ProfileKind::Random {
                m_base,
                m_amp,
                n_base,
                n_amp,
                u_amp,
                modes,
            } => {
                let _ = writeln!(
                    s,
                    "kind = random\nm_base = {m_base:?}\nm_amp = {m_amp:?}\n\
                     n_base = {n_base:?}\nn_amp = {n_amp:?}\nu_amp = {u_amp:?}\nmodes = {modes}"
                );
            }
        }
        let _ = writeln!(s, "u_drift = {:?}", self.profile.u_drift);
        let c = &self.control;
        let _ = writeln!(s, "\n[grid]\ncells = {}", self.cells);
        let _ = writeln!(
            s,
            "\n[step]\ndt_init = {:?}\ncfl_visc = {:?}\ndt_min = {:?}\nt_end = {:?}\npositivity_guard = {:?}",
            c.dt_init, c.cfl_visc, c.dt_min, c.t_end, c.positivity_guard
        );
        let spacing = match self.samples.spacing {
            Spacing::Linear => "linear",
            Spacing::Log => "log",
        };
        let _ = writeln!(
            s,
            "\n[samples]\ncount = {}\nspacing = {spacing}",
            self.samples.count
        );
        let dg = &self.diagnostics;
        let _ = writeln!(
            s,
            "\n[diagnostics]\nprobe_x = {:?}\nfit = {}\nslack = {:?}\nsnapshots = {}",
            dg.probe_x, dg.fit, dg.slack, dg.snapshots
        );
        if let Some((lo, hi)) = dg.window {
            let _ = writeln!(s, "window_lo = {lo:?}\nwindow_hi = {hi:?}");
        }
        let _ = writeln!(s, "\n[output]\ndir = {}", self.out_dir.display());
        let _ = writeln!(s, "\n[run]\nseed = {}", self.seed);
        s
    }
}
