//! On-disk formats of a run directory.
//!
//! ```text
//! run_dir/
//!   MANIFEST            key = value
//!   config.ini          resolved configuration
//!   diagnostics.csv     one row per sample time
//!   summary.txt         decay fits
//!   snapshots/snap_00000.txt ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lagvac_core::model::m_of_q;
use lagvac_core::{DiagnosticsRecord, Grid, LagrangianState};
use thiserror::Error;

pub const MANIFEST: &str = "MANIFEST";
pub const CONFIG: &str = "config.ini";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const SUMMARY: &str = "summary.txt";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// `git describe`-style version of this build.
pub const VERSION: &str = env!("LAGVAC_VERSION");

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}, line {line}: {msg}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Floating point text with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Diagnostics header: the record fields plus `log1p_t`.
pub fn csv_header() -> String {
    let mut cols: Vec<&str> = DiagnosticsRecord::FIELDS.to_vec();
    cols.push("log1p_t");
    cols.join(",")
}

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let mut cols: Vec<String> = r.values().iter().map(|v| fmt17(*v)).collect();
    cols.push(fmt17(r.t.ln_1p()));
    cols.join(",")
}

pub fn write_diagnostics(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", csv_header()).map_err(io_err(path))?;
    for r in records {
        writeln!(w, "{}", csv_row(r)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let corrupt = |line: usize, msg: String| FormatError::Corrupt {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == csv_header() => {}
        _ => return Err(corrupt(1, "unexpected header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| corrupt(i + 1, e.to_string()))?;
        if vals.len() != DiagnosticsRecord::FIELDS.len() + 1 {
            return Err(corrupt(i + 1, format!("{} columns", vals.len())));
        }
        let mut arr = [0.0; 16];
        arr.copy_from_slice(&vals[..16]);
        out.push(DiagnosticsRecord::from_values(&arr));
    }
    Ok(out)
}

pub fn snapshot_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("snap_{index:05}.txt"))
}

/// Writes the state as two column blocks, cell centers then nodes.
pub fn write_snapshot(path: &Path, state: &LagrangianState, rho_l: f64) -> Result<(), FormatError> {
    let grid = state.grid();
    let mut s = String::new();
    let _ = writeln!(s, "# t = {}", fmt17(state.t));
    let _ = writeln!(s, "# steps = {}", state.steps);
    let _ = writeln!(s, "# left_boundary = {}", fmt17(state.left_boundary));
    let _ = writeln!(s, "# dissipated = {}", fmt17(state.dissipated));
    let _ = writeln!(s, "# cells = {}", grid.cells());
    let _ = writeln!(s, "# xi_center c Q m n");
    for i in 0..grid.cells() {
        let (c, q) = (state.c[i], state.q[i]);
        let m = m_of_q(q, rho_l).unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            fmt17(grid.center(i)),
            fmt17(c),
            fmt17(q),
            fmt17(m),
            fmt17(c * m)
        );
    }
    let _ = writeln!(s, "# xi_node u");
    for j in 0..grid.nodes() {
        let _ = writeln!(s, "{} {}", fmt17(grid.node(j)), fmt17(state.u[j]));
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<LagrangianState, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let corrupt = |line: usize, msg: &str| FormatError::Corrupt {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut t = None;
    let mut steps = None;
    let mut left = None;
    let mut dissipated = None;
    let mut cells: Option<usize> = None;
    let (mut c, mut q, mut u) = (Vec::new(), Vec::new(), Vec::new());
    let mut block = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((k, v)) = rest.split_once('=') {
                let v = v.trim();
                let bad = || corrupt(lineno, "bad header value");
                match k.trim() {
                    "t" => t = Some(v.parse::<f64>().map_err(|_| bad())?),
                    "steps" => steps = Some(v.parse::<u64>().map_err(|_| bad())?),
                    "left_boundary" => left = Some(v.parse::<f64>().map_err(|_| bad())?),
                    "dissipated" => dissipated = Some(v.parse::<f64>().map_err(|_| bad())?),
                    "cells" => cells = Some(v.parse::<usize>().map_err(|_| bad())?),
                    _ => return Err(corrupt(lineno, "unknown header key")),
                }
            } else if rest.starts_with("xi_center") {
                block = 1;
            } else if rest.starts_with("xi_node") {
                block = 2;
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| corrupt(lineno, "unparsable number"))?;
        match (block, vals.len()) {
            (1, 5) => {
                c.push(vals[1]);
                q.push(vals[2]);
            }
            (2, 2) => u.push(vals[1]),
            _ => return Err(corrupt(lineno, "unexpected row")),
        }
    }
    let missing = |what: &str| corrupt(0, &format!("missing {what}"));
    let cells = cells.ok_or_else(|| missing("cells"))?;
    if cells == 0 || c.len() != cells || u.len() != cells + 1 {
        return Err(corrupt(0, "row counts do not match the cell count"));
    }
    if !c.iter().chain(&q).chain(&u).all(|x| x.is_finite()) {
        return Err(corrupt(0, "non-finite field value"));
    }
    let state = LagrangianState {
        t: t.ok_or_else(|| missing("t"))?,
        c: Arc::from(c),
        q,
        u,
        left_boundary: left.ok_or_else(|| missing("left_boundary"))?,
        dissipated: dissipated.ok_or_else(|| missing("dissipated"))?,
        steps: steps.ok_or_else(|| missing("steps"))?,
    };
    debug_assert_eq!(state.grid(), Grid::new(cells));
    Ok(state)
}

/// Ordered key-value pairs written as `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<(), FormatError> {
        let path = dir.join(MANIFEST);
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        fs::write(&path, s).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Manifest, FormatError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| FormatError::Corrupt {
                path: path.clone(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }
}
