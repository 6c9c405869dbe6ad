//! Time integration of the Lagrangian system
//!
//! ```text
//! c_t = 0,   Q_t + rho_l Q^2 u_x = 0,   u_t + P_x = (E u_x)_x
//! ```
//!
//! on a staggered grid: `c` and `Q` live at cell centers, `u` at the nodes.
//! The liquid mass enters through `V = 1/Q`, which obeys `V_t = rho_l u_x`.
//!
//! Each step is an implicit midpoint rule in `u` with discrete-gradient
//! averages for pressure and viscosity,
//!
//! ```text
//! P~ = -rho_l [e(V')  - e(V)] / (V' - V),   e(V) = c^g V^(1-g) / (rho_l (g - 1))
//! E~ = -rho_l [h(V')  - h(V)] / (V' - V),   h(V) = c^b V^(-b) / (b rho_l)
//! ```
//!
//! so that the discrete energy balance and the pointwise identity linking
//! `(cQ)^beta` to the time integral of the pressure hold exactly, up to the
//! Newton tolerance. The momentum flux `E u_x - P` is zero outside both
//! ends, which closes the stress-free boundary problem and, because `E` and
//! `P` vanish with the masses, the continuous-vacuum one as well.

use std::sync::Arc;

use thiserror::Error;

use crate::model::{pow, InitialData, ModelError, ModelParams};
use crate::tridiag;

/// Newton iterations are stopped once the update is below this relative size.
const NEWTON_RTOL: f64 = 1.0e-13;
/// Converged-enough threshold when the iteration cap is hit.
const NEWTON_ACCEPT: f64 = 1.0e-10;
const NEWTON_MAX_ITERS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("time step underflow at t = {t}: dt = {dt} < dt_min; {dump}")]
    DtUnderflow { t: f64, dt: f64, dump: String },
    #[error("non-finite values at t = {t}")]
    NonFinite { t: f64 },
    #[error("bad sample schedule: {0}")]
    Sampling(String),
    #[error("invalid step control: {0}")]
    Control(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform grid in the mass coordinate on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    cells: usize,
    dxi: f64,
}

impl Grid {
    pub fn new(cells: usize) -> Self {
        Grid {
            cells,
            dxi: 1.0 / cells as f64,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn dxi(&self) -> f64 {
        self.dxi
    }

    /// Mass coordinate of the center of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.cells as f64
    }

    /// Mass coordinate of node `j`.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.cells as f64
    }

    /// Mass of the control volume around node `j` (half cells at the ends).
    pub fn node_mass(&self, j: usize) -> f64 {
        if j == 0 || j == self.cells {
            0.5 * self.dxi
        } else {
            self.dxi
        }
    }
}

/// Solution at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub t: f64,
    /// Gas-to-liquid mass ratio per cell; shared with the initial data and
    /// never written after construction.
    pub c: Arc<[f64]>,
    /// `Q(m)` per cell.
    pub q: Vec<f64>,
    /// Velocity per node.
    pub u: Vec<f64>,
    /// Eulerian position of the left free boundary, `a(t)`.
    pub left_boundary: f64,
    /// Accumulated viscous dissipation `int_0^t int E u_x^2`.
    pub dissipated: f64,
    /// Accepted steps so far.
    pub steps: u64,
}

impl LagrangianState {
    pub fn from_initial(initial: &InitialData) -> Self {
        LagrangianState {
            t: 0.0,
            c: Arc::from(initial.c0.as_slice()),
            q: initial.q0.clone(),
            u: initial.u0.clone(),
            left_boundary: 0.0,
            dissipated: 0.0,
            steps: 0,
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.c.len())
    }

    fn dump(&self) -> String {
        let q_min = self.q.iter().copied().fold(f64::INFINITY, f64::min);
        let u_max = self.u.iter().fold(0.0f64, |a, u| a.max(u.abs()));
        format!(
            "steps = {}, min Q = {q_min:e}, max |u| = {u_max:e}",
            self.steps
        )
    }
}

/// Time step policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Largest step taken.
    pub dt_init: f64,
    /// Safety factor for a fully explicit update; the implicit scheme does
    /// not use it.
    pub cfl_visc: f64,
    /// Abort once halving drives the step below this.
    pub dt_min: f64,
    pub t_end: f64,
    /// Largest accepted relative decrease of any `Q` in one step.
    pub positivity_guard: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 1.0e-3,
            cfl_visc: 1.0,
            dt_min: 1.0e-12,
            t_end: 1.0,
            positivity_guard: 0.01,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Control(m));
        if !(self.dt_init > 0.0 && self.dt_init.is_finite()) {
            return bad(format!("dt_init = {} must be positive", self.dt_init));
        }
        if !(self.cfl_visc > 0.0 && self.cfl_visc <= 1.0) {
            return bad(format!("cfl_visc = {} must lie in (0, 1]", self.cfl_visc));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init) {
            return bad(format!("dt_min = {} must lie in (0, dt_init]", self.dt_min));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be non-negative", self.t_end));
        }
        if !(self.positivity_guard > 0.0 && self.positivity_guard < 1.0) {
            return bad(format!(
                "positivity_guard = {} must lie in (0, 1)",
                self.positivity_guard
            ));
        }
        Ok(())
    }
}

/// `(1 - r^-a) / (a (r - 1))` given `ln r`, equal to 1 at `r = 1`.
#[inline]
fn divided_power(a: f64, d: f64, ln_r: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        -(-a * ln_r).exp_m1() / (a * d)
    }
}

/// Per-cell constants of one step, all evaluated at the start of the step.
struct CellCoeffs {
    /// `1/Q`
    v: Vec<f64>,
    /// `P = c^gamma V^-gamma`
    p: Vec<f64>,
    /// `E = c^beta V^(-beta-1)`
    e: Vec<f64>,
}

enum Rejection {
    Positivity,
    NoConvergence,
    NonFinite,
}

/// Workspace for the Newton iteration of a single step.
struct Newton {
    ubar: Vec<f64>,
    flux: Vec<f64>,
    k: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
}

impl Newton {
    fn new(cells: usize) -> Self {
        Newton {
            ubar: vec![0.0; cells + 1],
            flux: vec![0.0; cells],
            k: vec![0.0; cells],
            lower: vec![0.0; cells],
            diag: vec![0.0; cells + 1],
            upper: vec![0.0; cells],
            rhs: vec![0.0; cells + 1],
        }
    }
}

/// Result of a successful trial step.
struct Trial {
    u: Vec<f64>,
    v_new: Vec<f64>,
    dissipation: f64,
    boundary_velocity: f64,
}

fn try_step(
    state: &LagrangianState,
    coeffs: &CellCoeffs,
    params: &ModelParams,
    dt: f64,
    guard: f64,
    ws: &mut Newton,
) -> Result<Trial, Rejection> {
    let grid = state.grid();
    let cells = grid.cells();
    let h = grid.dxi();
    let rho = params.rho_l;
    let (gamma, beta) = (params.gamma, params.beta);
    let max_ratio = 1.0 / (1.0 - guard);

    let u_old = &state.u;
    let mut u = u_old.clone();
    let mut v_new = vec![0.0; cells];

    let mut converged = false;
    let mut last_update = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        for j in 0..=cells {
            ws.ubar[j] = 0.5 * (u_old[j] + u[j]);
        }
        for i in 0..cells {
            let g = (ws.ubar[i + 1] - ws.ubar[i]) / h;
            let v = coeffs.v[i];
            let w = v + dt * rho * g;
            if !(w > 0.0) || w / v > max_ratio {
                return Err(if w.is_finite() {
                    Rejection::Positivity
                } else {
                    Rejection::NonFinite
                });
            }
            v_new[i] = w;
            let d = (w - v) / v;
            let ln_r = d.ln_1p();
            let p = coeffs.p[i] * divided_power(gamma - 1.0, d, ln_r);
            let e = coeffs.e[i] * divided_power(beta, d, ln_r);
            ws.flux[i] = e * g - p;

            // approximate derivatives of E~ and P~ with respect to the new V
            let dp = -0.5 * gamma * coeffs.p[i] / v;
            let de = -0.5 * (beta + 1.0) * coeffs.e[i] / v;
            let k = e + dt * rho * (de * g - dp);
            ws.k[i] = k.max(0.0) / (2.0 * h);
        }
        for j in 0..=cells {
            let right = if j < cells { ws.flux[j] } else { 0.0 };
            let left = if j > 0 { ws.flux[j - 1] } else { 0.0 };
            let mass = grid.node_mass(j);
            ws.rhs[j] = -(mass * (u[j] - u_old[j]) / dt - (right - left));
            let kr = if j < cells { ws.k[j] } else { 0.0 };
            let kl = if j > 0 { ws.k[j - 1] } else { 0.0 };
            ws.diag[j] = mass / dt + kr + kl;
        }
        for i in 0..cells {
            ws.lower[i] = -ws.k[i];
            ws.upper[i] = -ws.k[i];
        }
        tridiag::solve_in_place(&ws.lower, &mut ws.diag, &ws.upper, &mut ws.rhs);

        let mut update = 0.0f64;
        let mut scale = 1.0f64;
        for j in 0..=cells {
            u[j] += ws.rhs[j];
            update = update.max(ws.rhs[j].abs());
            scale = scale.max(u[j].abs());
        }
        if !update.is_finite() {
            return Err(Rejection::NonFinite);
        }
        last_update = update / scale;
        if last_update <= NEWTON_RTOL {
            converged = true;
            break;
        }
    }
    if !converged && last_update > NEWTON_ACCEPT {
        return Err(Rejection::NoConvergence);
    }

    // final consistent update of V and the dissipation with the accepted u
    let mut dissipation = 0.0;
    for i in 0..cells {
        let g = 0.5 * ((u_old[i + 1] + u[i + 1]) - (u_old[i] + u[i])) / h;
        let v = coeffs.v[i];
        let w = v + dt * rho * g;
        if !(w > 0.0) || w / v > max_ratio {
            return Err(Rejection::Positivity);
        }
        v_new[i] = w;
        let d = (w - v) / v;
        let e = coeffs.e[i] * divided_power(beta, d, d.ln_1p());
        dissipation += e * g * g * h;
    }
    Ok(Trial {
        boundary_velocity: 0.5 * (u_old[0] + u[0]),
        u,
        v_new,
        dissipation: dt * dissipation,
    })
}

fn cell_coeffs(state: &LagrangianState, params: &ModelParams) -> CellCoeffs {
    let (gamma, beta) = (params.gamma, params.beta);
    let mut coeffs = CellCoeffs {
        v: Vec::with_capacity(state.q.len()),
        p: Vec::with_capacity(state.q.len()),
        e: Vec::with_capacity(state.q.len()),
    };
    for (&c, &q) in state.c.iter().zip(&state.q) {
        coeffs.v.push(1.0 / q);
        coeffs.p.push(pow(c * q, gamma));
        coeffs.e.push(pow(c, beta) * pow(q, beta + 1.0));
    }
    coeffs
}

/// Largest step allowed by the positivity guard for the current velocity.
fn guard_step(state: &LagrangianState, params: &ModelParams, guard: f64) -> f64 {
    let h = state.grid().dxi();
    let rate = state
        .q
        .iter()
        .zip(state.u.windows(2))
        .map(|(q, w)| (params.rho_l * q * (w[1] - w[0]) / h).abs())
        .fold(0.0f64, f64::max);
    if rate > 0.0 {
        0.5 * guard / rate
    } else {
        f64::INFINITY
    }
}

/// One accepted step that does not pass `t_target`.
fn advance(
    state: &LagrangianState,
    params: &ModelParams,
    ctrl: &StepControl,
    t_target: f64,
    ws: &mut Newton,
) -> Result<LagrangianState, SolverError> {
    let coeffs = cell_coeffs(state, params);
    let remaining = t_target - state.t;
    let mut dt = ctrl
        .dt_init
        .min(guard_step(state, params, ctrl.positivity_guard));
    let mut clipped = false;
    if remaining <= dt {
        dt = remaining;
        clipped = true;
    }
    if !clipped && dt < ctrl.dt_min {
        return Err(SolverError::DtUnderflow {
            t: state.t,
            dt,
            dump: state.dump(),
        });
    }
    loop {
        match try_step(state, &coeffs, params, dt, ctrl.positivity_guard, ws) {
            Ok(trial) => {
                let q: Vec<f64> = trial.v_new.iter().map(|v| 1.0 / v).collect();
                if !q.iter().chain(&trial.u).all(|x| x.is_finite()) {
                    return Err(SolverError::NonFinite { t: state.t });
                }
                return Ok(LagrangianState {
                    t: if clipped { t_target } else { state.t + dt },
                    c: Arc::clone(&state.c),
                    q,
                    u: trial.u,
                    left_boundary: state.left_boundary + dt * trial.boundary_velocity,
                    dissipated: state.dissipated + trial.dissipation,
                    steps: state.steps + 1,
                });
            }
            Err(Rejection::NonFinite) if dt < ctrl.dt_min => {
                return Err(SolverError::NonFinite { t: state.t });
            }
            Err(_) => {
                dt *= 0.5;
                clipped = false;
                if dt < ctrl.dt_min {
                    return Err(SolverError::DtUnderflow {
                        t: state.t,
                        dt,
                        dump: state.dump(),
                    });
                }
            }
        }
    }
}

/// Advances `state` by one step of at most `ctrl.dt_init`.
pub fn step(
    state: &LagrangianState,
    params: &ModelParams,
    ctrl: &StepControl,
) -> Result<LagrangianState, SolverError> {
    let mut ws = Newton::new(state.grid().cells());
    advance(state, params, ctrl, f64::INFINITY, &mut ws)
}

/// Integrates from the initial data and returns one snapshot per sample time.
pub fn run(
    initial: &InitialData,
    params: &ModelParams,
    ctrl: &StepControl,
    sample_times: &[f64],
) -> Result<Vec<LagrangianState>, SolverError> {
    run_observed(initial, params, ctrl, sample_times, |_| {})
}

/// Like [`run`], and hands every accepted state (the initial one included)
/// to `observer`.
///
/// Steps are clipped so that each sample time is hit exactly; snapshots are
/// never interpolated.
pub fn run_observed(
    initial: &InitialData,
    params: &ModelParams,
    ctrl: &StepControl,
    sample_times: &[f64],
    mut observer: impl FnMut(&LagrangianState),
) -> Result<Vec<LagrangianState>, SolverError> {
    params.validate()?;
    ctrl.validate()?;
    check_schedule(sample_times, ctrl.t_end)?;

    let mut state = LagrangianState::from_initial(initial);
    let mut ws = Newton::new(state.grid().cells());
    observer(&state);
    let mut out = Vec::with_capacity(sample_times.len());
    for &target in sample_times {
        while state.t < target {
            state = advance(&state, params, ctrl, target, &mut ws)?;
            observer(&state);
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn check_schedule(times: &[f64], t_end: f64) -> Result<(), SolverError> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(SolverError::Sampling(
            "sample times must be finite and non-negative".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::Sampling(
            "sample times must be strictly increasing".into(),
        ));
    }
    if let Some(&last) = times.last() {
        if last > t_end {
            return Err(SolverError::Sampling(format!(
                "last sample time {last} exceeds t_end = {t_end}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_initial_data, ProfileSpec, VacuumRegime};

    #[test]
    fn divided_power_against_series() {
        for a in [0.5f64, 1.0, 2.0, 3.7] {
            for d in [-1.0e-3f64, -1.0e-6, 1.0e-9, 1.0e-4] {
                let series = 1.0 - (a + 1.0) * d / 2.0 + (a + 1.0) * (a + 2.0) * d * d / 6.0
                    - (a + 1.0) * (a + 2.0) * (a + 3.0) * d.powi(3) / 24.0
                    + (a + 1.0) * (a + 2.0) * (a + 3.0) * (a + 4.0) * d.powi(4) / 120.0;
                let got = divided_power(a, d, d.ln_1p());
                assert!((got - series).abs() < 1e-12, "a={a} d={d}");
            }
            assert_eq!(divided_power(a, 0.0, 0.0), 1.0);
            let r: f64 = 1.7;
            let direct = (1.0 - r.powf(-a)) / (a * (r - 1.0));
            assert!((divided_power(a, r - 1.0, r.ln()) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(4);
        assert_eq!(g.dxi() * 4.0, 1.0);
        assert_eq!(g.center(0), 0.125);
        assert_eq!(g.node(4), 1.0);
        let total: f64 = (0..g.nodes()).map(|j| g.node_mass(j)).sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn control_validation() {
        let mut c = StepControl::default();
        assert!(c.validate().is_ok());
        c.positivity_guard = 1.0;
        assert!(c.validate().is_err());
        c = StepControl {
            dt_min: 0.0,
            ..StepControl::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule_checks() {
        assert!(check_schedule(&[0.0, 1.0], 1.0).is_ok());
        assert!(check_schedule(&[1.0, 0.5], 1.0).is_err());
        assert!(check_schedule(&[0.0, 2.0], 1.0).is_err());
        assert!(check_schedule(&[-1.0], 1.0).is_err());
    }

    #[test]
    fn zero_end_time_returns_initial_state() {
        let params = ModelParams::with_default_moment(2.0, 0.5, 1.0).unwrap();
        let profile = ProfileSpec::SmoothBump {
            m_base: 0.3,
            m_amp: 0.2,
            n_base: 0.2,
            n_amp: 0.1,
            u_amp: 0.1,
        };
        let init = make_initial_data(&params, &VacuumRegime::Discontinuous, &profile, 16).unwrap();
        let ctrl = StepControl {
            t_end: 0.0,
            ..StepControl::default()
        };
        let traj = run(&init, &params, &ctrl, &[0.0]).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0], LagrangianState::from_initial(&init));
    }

    #[test]
    fn underflow_reported() {
        let params = ModelParams::with_default_moment(2.0, 0.5, 1.0).unwrap();
        let profile = ProfileSpec::Constant {
            m: 0.5,
            n: 0.5,
            u_amp: 0.0,
        };
        let init = make_initial_data(&params, &VacuumRegime::Discontinuous, &profile, 8).unwrap();
        let mut state = LagrangianState::from_initial(&init);
        // a violent compression that no admissible step can follow
        state.u = (0..=8)
            .map(|j| if j < 4 { 1.0e12 } else { -1.0e12 })
            .collect();
        let ctrl = StepControl {
            dt_init: 1.0e-3,
            dt_min: 1.0e-6,
            ..StepControl::default()
        };
        let err = step(&state, &params, &ctrl);
        assert!(
            matches!(err, Err(SolverError::DtUnderflow { .. })),
            "{err:?}"
        );
    }
}
