//! Functionals, identities and rate predictions evaluated on solver states.
//!
//! Integrals over nodes use trapezoid weights (half cells at the ends), which
//! are the weights the momentum update conserves exactly. Integrals over
//! cells are midpoint sums. Cells with `Q = 0` are vacuum and contribute
//! nothing.

use thiserror::Error;

use crate::model::{m_of_q, pow, InitialData, ModelParams, VacuumRegime};
use crate::solver::{Grid, LagrangianState};

/// Largest `|int u dxi|` treated as zero mean velocity.
pub const ZERO_MEAN_TOL: f64 = 1.0e-10;
/// Default relative slack of the decay verdict.
pub const DEFAULT_SLACK: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("reconstruction error: {0}")]
    Reconstruction(String),
}

pub type Result<T, E = DiagnosticsError> = std::result::Result<T, E>;

fn node_integral(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    (0..grid.nodes()).map(|j| grid.node_mass(j) * f(j)).sum()
}

fn cell_integral(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    (0..grid.cells()).map(f).sum::<f64>() * grid.dxi()
}

/// Total energy: kinetic `u^2/2` plus internal `c^gamma Q^(gamma-1) / (rho_l (gamma - 1))`.
pub fn energy(state: &LagrangianState, params: &ModelParams) -> Result<f64> {
    let gamma = params.gamma;
    if gamma <= 1.0 {
        return Err(DiagnosticsError::Domain(format!(
            "energy needs gamma > 1, got {gamma}"
        )));
    }
    let grid = state.grid();
    let kinetic = node_integral(&grid, |j| 0.5 * state.u[j] * state.u[j]);
    let scale = 1.0 / (params.rho_l * (gamma - 1.0));
    let internal = cell_integral(&grid, |i| {
        let q = state.q[i];
        if q == 0.0 {
            0.0
        } else {
            scale * pow(state.c[i] * q, gamma) / q
        }
    });
    Ok(kinetic + internal)
}

/// Instantaneous dissipation rate `int E u_x^2`.
pub fn dissipation_rate(state: &LagrangianState, params: &ModelParams) -> f64 {
    let grid = state.grid();
    let h = grid.dxi();
    cell_integral(&grid, |i| {
        let e = pow(state.c[i], params.beta) * pow(state.q[i], params.beta + 1.0);
        let ux = (state.u[i + 1] - state.u[i]) / h;
        e * ux * ux
    })
}

/// `int u dxi`.
pub fn momentum(state: &LagrangianState) -> f64 {
    node_integral(&state.grid(), |j| state.u[j])
}

/// The two ends of the mass interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Left,
    Right,
}

/// Closed-form `Q` at a stress-free end,
/// `Q0 (1 + (gamma - beta) rho_l c0^(gamma-beta) Q0^(gamma-beta) t)^(-1/(gamma-beta))`.
///
/// The boundary-adjacent cell values of `initial` stand in for the traces
/// of `c0` and `Q(m0)` at the end.
pub fn exact_boundary_q(
    t: f64,
    end: Endpoint,
    params: &ModelParams,
    initial: &InitialData,
) -> Result<f64> {
    if initial.regime.is_continuous() {
        return Err(DiagnosticsError::Unsupported(
            "boundary Q vanishes identically for continuous vacuum".into(),
        ));
    }
    let k = params.gamma - params.beta;
    if k <= 0.0 {
        return Err(DiagnosticsError::Domain(format!(
            "needs gamma > beta, got gamma - beta = {k}"
        )));
    }
    let i = match end {
        Endpoint::Left => 0,
        Endpoint::Right => initial.cells() - 1,
    };
    let (c0, q0) = (initial.c0[i], initial.q0[i]);
    let growth = k * params.rho_l * pow(c0 * q0, k) * t + 1.0;
    Ok(q0 * growth.powf(-1.0 / k))
}

/// The three cases of the weighted time estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaCase {
    /// `0 < beta < 1`
    SubLinear,
    /// `beta = 1`
    Linear,
    /// `beta > 1`
    SuperLinear,
}

impl ThetaCase {
    pub fn of(beta: f64) -> Self {
        if (beta - 1.0).abs() <= 1.0e-12 {
            ThetaCase::Linear
        } else if beta < 1.0 {
            ThetaCase::SubLinear
        } else {
            ThetaCase::SuperLinear
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ThetaCase::SubLinear => "I",
            ThetaCase::Linear => "II",
            ThetaCase::SuperLinear => "III",
        }
    }
}

/// Weight exponent and predicted decay rate of the masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePrediction {
    pub case: ThetaCase,
    pub theta: f64,
    /// Masses decay at least like `(1+t)^-rate`, up to the log factor.
    pub rate: f64,
    pub log_corrected: bool,
    /// Power of `ln(1+t)` in the bound, `1/(gamma - 1 + k beta)`.
    pub log_exponent: f64,
}

/// Decay rate predicted for `params` under `regime`.
pub fn theoretical_rate(params: &ModelParams, regime: &VacuumRegime) -> Result<RatePrediction> {
    let (gamma, beta) = (params.gamma, params.beta);
    if !(beta > 0.0 && gamma >= 1.0 + beta) {
        return Err(DiagnosticsError::Domain(format!(
            "(A4) violated: beta = {beta}, gamma = {gamma}"
        )));
    }
    let case = ThetaCase::of(beta);
    let ratio = (gamma - 1.0) / (gamma - beta);
    let (theta, log_corrected) = match case {
        ThetaCase::SubLinear => (beta, false),
        ThetaCase::Linear => (1.0, true),
        ThetaCase::SuperLinear if ratio > 2.0 => (2.0, false),
        ThetaCase::SuperLinear => (ratio, true),
    };
    let k = if regime.is_continuous() { 4.0 } else { 2.0 };
    let denom = gamma - 1.0 + k * beta;
    Ok(RatePrediction {
        case,
        theta,
        rate: theta / denom,
        log_corrected,
        log_exponent: 1.0 / denom,
    })
}

/// Auxiliary function
/// `w = rho_l u - (1+t)^-1 int_0^x 1/Q + (1+t)^-1 int_0^1 int_0^x 1/Q`
/// at the nodes.
pub fn w_function(state: &LagrangianState, params: &ModelParams) -> Result<Vec<f64>> {
    let mean = momentum(state);
    if mean.abs() > ZERO_MEAN_TOL {
        return Err(DiagnosticsError::Precondition(format!(
            "w needs zero mean velocity, got {mean:e}"
        )));
    }
    Ok(w_profile(state, params, 0.0))
}

/// `w` built from `u - shift`.
fn w_profile(state: &LagrangianState, params: &ModelParams, shift: f64) -> Vec<f64> {
    let grid = state.grid();
    let h = grid.dxi();
    let decay = 1.0 / (1.0 + state.t);
    let mut running = Vec::with_capacity(grid.nodes());
    let mut acc = 0.0;
    running.push(acc);
    for &q in &state.q {
        if q > 0.0 {
            acc += h / q;
        }
        running.push(acc);
    }
    let normalizer = node_integral(&grid, |j| running[j]);
    state
        .u
        .iter()
        .zip(&running)
        .map(|(u, r)| params.rho_l * (u - shift) - decay * r + decay * normalizer)
        .collect()
}

fn l2_nodes(grid: &Grid, w: &[f64]) -> f64 {
    node_integral(grid, |j| w[j] * w[j])
}

/// Non-integrated part of the weighted estimate for `case` with weight `theta`.
pub fn lyapunov_functional(
    state: &LagrangianState,
    params: &ModelParams,
    case: ThetaCase,
    theta: f64,
) -> Result<f64> {
    if case == ThetaCase::SubLinear && params.beta >= 1.0 {
        return Err(DiagnosticsError::Domain(format!(
            "sub-linear case needs beta < 1, got {}",
            params.beta
        )));
    }
    let w = w_function(state, params)?;
    Ok(lyapunov_from_w(state, params, case, theta, &w))
}

fn lyapunov_from_w(
    state: &LagrangianState,
    params: &ModelParams,
    case: ThetaCase,
    theta: f64,
    w: &[f64],
) -> f64 {
    let grid = state.grid();
    let (gamma, beta, rho) = (params.gamma, params.beta, params.rho_l);
    let one_t = 1.0 + state.t;
    let weight = one_t.powf(theta);
    let kinetic = 0.5 * weight * l2_nodes(&grid, w);
    let internal = cell_integral(&grid, |i| {
        let q = state.q[i];
        if q == 0.0 {
            0.0
        } else {
            pow(state.c[i] * q, gamma) / q
        }
    });
    match case {
        ThetaCase::SubLinear => {
            let visc = cell_integral(&grid, |i| {
                let q = state.q[i];
                if q == 0.0 {
                    0.0
                } else {
                    pow(state.c[i] * q, beta) / q
                }
            });
            kinetic
                + one_t.powf(theta - 1.0) / (1.0 - beta) * visc
                + rho * weight / (gamma - 1.0) * internal
        }
        ThetaCase::Linear => kinetic + rho * weight / (gamma - 1.0) * internal,
        ThetaCase::SuperLinear => kinetic + rho * weight / (2.0 * (gamma - 1.0)) * internal,
    }
}

/// Cell whose center is closest to `x` (ties go left).
pub fn probe_cell(grid: &Grid, x: f64) -> usize {
    let offset = x * grid.cells() as f64 - 0.5;
    ((offset - 0.5).ceil().max(0.0) as usize).min(grid.cells() - 1)
}

/// Running residual of the pointwise identity
///
/// ```text
/// (cQ)^b / (b rho_l) + int_0^t (cQ)^g ds = (c0 Q0)^b / (b rho_l) - int_0^x (u(t) - u0) dy
/// ```
///
/// at one probe cell, with the time integral by the trapezoid rule over the
/// states fed to [`Identity34::push`].
#[derive(Debug, Clone)]
pub struct Identity34 {
    cell: usize,
    beta: f64,
    gamma: f64,
    rho_l: f64,
    initial_term: f64,
    initial_u_integral: f64,
    pressure_integral: f64,
    last: (f64, f64),
}

impl Identity34 {
    pub fn new(initial: &InitialData, params: &ModelParams, probe_x: f64) -> Self {
        let grid = Grid::new(initial.cells());
        let cell = probe_cell(&grid, probe_x);
        let h_term = |c: f64, q: f64| pow(c * q, params.beta) / (params.beta * params.rho_l);
        Identity34 {
            cell,
            beta: params.beta,
            gamma: params.gamma,
            rho_l: params.rho_l,
            initial_term: h_term(initial.c0[cell], initial.q0[cell]),
            initial_u_integral: partial_node_integral(&grid, &initial.u0, cell),
            pressure_integral: 0.0,
            last: (0.0, pow(initial.c0[cell] * initial.q0[cell], params.gamma)),
        }
    }

    pub fn cell(&self) -> usize {
        self.cell
    }

    /// Adds a state (times must not decrease) and returns the residual at it.
    pub fn push(&mut self, state: &LagrangianState) -> f64 {
        let cq = state.c[self.cell] * state.q[self.cell];
        let p = pow(cq, self.gamma);
        let (t_prev, p_prev) = self.last;
        self.pressure_integral += 0.5 * (state.t - t_prev) * (p + p_prev);
        self.last = (state.t, p);
        let lhs = pow(cq, self.beta) / (self.beta * self.rho_l) + self.pressure_integral;
        let u_integral = partial_node_integral(&state.grid(), &state.u, self.cell);
        let rhs = self.initial_term - (u_integral - self.initial_u_integral);
        lhs - rhs
    }
}

/// `int_0^x u` from the left end up to the center of cell `cell`.
fn partial_node_integral(grid: &Grid, u: &[f64], cell: usize) -> f64 {
    (0..=cell).map(|j| grid.node_mass(j) * u[j]).sum()
}

/// Residual of the pointwise identity along a sampled trajectory.
pub fn identity_residual_34(
    trajectory: &[LagrangianState],
    initial: &InitialData,
    probe_x: f64,
    params: &ModelParams,
) -> Vec<(f64, f64)> {
    let mut id = Identity34::new(initial, params, probe_x);
    trajectory.iter().map(|s| (s.t, id.push(s))).collect()
}

/// Power-law fit of a positive time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub exponent: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub theoretical_rate: f64,
    pub log_corrected: bool,
    /// `exponent <= -theoretical_rate (1 - slack)`.
    pub verdict: bool,
    pub points: usize,
}

/// What a fitted exponent is judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayTarget {
    pub rate: f64,
    /// Power `p` of the `ln(1+t)^p` factor divided out before fitting.
    pub log_exponent: Option<f64>,
    pub slack: f64,
}

impl DecayTarget {
    pub fn from_prediction(pred: &RatePrediction, slack: f64) -> Self {
        DecayTarget {
            rate: pred.rate,
            log_exponent: pred.log_corrected.then_some(pred.log_exponent),
            slack,
        }
    }

    /// No log factor, zero rate; only the slope is of interest.
    pub fn plain() -> Self {
        DecayTarget {
            rate: 0.0,
            log_exponent: None,
            slack: DEFAULT_SLACK,
        }
    }
}

/// Least-squares slope of `log(value)` against `log(1+t)` over `window`.
///
/// The window must cover at least a factor ten in `t`.
pub fn fit_decay(
    series: &[(f64, f64)],
    window: (f64, f64),
    target: &DecayTarget,
) -> Result<DecayFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= 10.0 * lo) {
        return Err(DiagnosticsError::Fit(format!(
            "window [{lo}, {hi}] must satisfy 0 < t_lo and t_hi >= 10 t_lo"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in series.iter().filter(|(t, _)| *t >= lo && *t <= hi) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(DiagnosticsError::Fit(format!(
                "non-positive value {v} at t = {t}"
            )));
        }
        let lt = t.ln_1p();
        let mut y = v.ln();
        if let Some(p) = target.log_exponent {
            y -= p * lt.ln();
        }
        xs.push(lt);
        ys.push(y);
    }
    if xs.len() < 3 {
        return Err(DiagnosticsError::Fit(format!(
            "only {} samples in window [{lo}, {hi}]",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        exponent: slope,
        window,
        r2,
        theoretical_rate: target.rate,
        log_corrected: target.log_exponent.is_some(),
        verdict: slope <= -target.rate * (1.0 - target.slack),
        points: xs.len(),
    })
}

/// Default fit window, the last decade `[t_end/10, t_end]`.
pub fn last_decade(t_end: f64) -> (f64, f64) {
    (t_end / 10.0, t_end)
}

/// State mapped back to physical space.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianSample {
    pub a_t: f64,
    pub b_t: f64,
    /// Node positions.
    pub x: Vec<f64>,
    /// Cell-center positions.
    pub x_center: Vec<f64>,
    /// Liquid mass per cell.
    pub m: Vec<f64>,
    /// Gas mass per cell.
    pub n: Vec<f64>,
    /// Velocity per node.
    pub u: Vec<f64>,
    pub alpha_l: Vec<f64>,
    pub alpha_g: Vec<f64>,
    /// Gas density, where gas occupies volume.
    pub rho_g: Vec<Option<f64>>,
}

/// Positions from `dx = dxi / m`, starting at the left boundary `a_t`.
pub fn reconstruct_eulerian(
    state: &LagrangianState,
    params: &ModelParams,
    a_t: f64,
) -> Result<EulerianSample> {
    let grid = state.grid();
    let h = grid.dxi();
    let mut x = Vec::with_capacity(grid.nodes());
    let mut x_center = Vec::with_capacity(grid.cells());
    let mut m = Vec::with_capacity(grid.cells());
    let mut n = Vec::with_capacity(grid.cells());
    let mut alpha_l = Vec::with_capacity(grid.cells());
    let mut alpha_g = Vec::with_capacity(grid.cells());
    let mut rho_g = Vec::with_capacity(grid.cells());
    x.push(a_t);
    let mut pos = a_t;
    for (i, (&c, &q)) in state.c.iter().zip(&state.q).enumerate() {
        let mi = m_of_q(q, params.rho_l)
            .map_err(|e| DiagnosticsError::Reconstruction(format!("cell {i}: {e}")))?;
        if mi <= 0.0 {
            return Err(DiagnosticsError::Reconstruction(format!(
                "cell {i} is vacuum, its width is unbounded"
            )));
        }
        let width = h / mi;
        x_center.push(pos + 0.5 * width);
        pos += width;
        x.push(pos);
        let ni = c * mi;
        let al = mi / params.rho_l;
        let ag = 1.0 - al;
        m.push(mi);
        n.push(ni);
        alpha_l.push(al);
        alpha_g.push(ag);
        rho_g.push((ag > 0.0).then(|| ni / ag));
    }
    Ok(EulerianSample {
        a_t,
        b_t: pos,
        x,
        x_center,
        m,
        n,
        u: state.u.clone(),
        alpha_l,
        alpha_g,
        rho_g,
    })
}

/// One sample of every monitored functional.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub sup_m: f64,
    pub sup_n: f64,
    pub energy: f64,
    pub dissipation: f64,
    /// Accumulated dissipation since `t = 0`, as integrated by the solver.
    pub dissipated: f64,
    pub momentum: f64,
    pub sup_cq: f64,
    pub lp_cq_gamma: f64,
    pub moment_2n: f64,
    pub grad_cq_beta: f64,
    pub q_left: f64,
    pub q_right: f64,
    pub id34_residual: f64,
    pub w_norm: f64,
    pub lyapunov: f64,
}

impl DiagnosticsRecord {
    pub const FIELDS: [&'static str; 16] = [
        "t",
        "sup_m",
        "sup_n",
        "energy",
        "dissipation",
        "dissipated",
        "momentum",
        "sup_cq",
        "lp_cq_gamma",
        "moment_2n",
        "grad_cq_beta",
        "q_left",
        "q_right",
        "id34_residual",
        "w_norm",
        "lyapunov",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.t,
            self.sup_m,
            self.sup_n,
            self.energy,
            self.dissipation,
            self.dissipated,
            self.momentum,
            self.sup_cq,
            self.lp_cq_gamma,
            self.moment_2n,
            self.grad_cq_beta,
            self.q_left,
            self.q_right,
            self.id34_residual,
            self.w_norm,
            self.lyapunov,
        ]
    }

    pub fn from_values(v: &[f64; 16]) -> Self {
        DiagnosticsRecord {
            t: v[0],
            sup_m: v[1],
            sup_n: v[2],
            energy: v[3],
            dissipation: v[4],
            dissipated: v[5],
            momentum: v[6],
            sup_cq: v[7],
            lp_cq_gamma: v[8],
            moment_2n: v[9],
            grad_cq_beta: v[10],
            q_left: v[11],
            q_right: v[12],
            id34_residual: v[13],
            w_norm: v[14],
            lyapunov: v[15],
        }
    }
}

/// Builds [`DiagnosticsRecord`]s along one run; keeps the running time
/// integral needed by the identity residual.
#[derive(Debug, Clone)]
pub struct Recorder {
    params: ModelParams,
    identity: Identity34,
    case: ThetaCase,
    theta: f64,
}

/// Default probe position of the identity residual.
pub const DEFAULT_PROBE: f64 = 0.5;

impl Recorder {
    pub fn new(initial: &InitialData, params: &ModelParams, probe_x: f64) -> Result<Self> {
        let pred = theoretical_rate(params, &initial.regime)?;
        Ok(Recorder {
            params: *params,
            identity: Identity34::new(initial, params, probe_x),
            case: pred.case,
            theta: pred.theta,
        })
    }

    /// Evaluates every field at `state`. States must arrive in time order.
    pub fn record(&mut self, state: &LagrangianState) -> DiagnosticsRecord {
        let p = &self.params;
        let grid = state.grid();
        let h = grid.dxi();
        let mut sup_m = 0.0f64;
        let mut sup_n = 0.0f64;
        let mut sup_cq = 0.0f64;
        let mut lp = 0.0;
        for (&c, &q) in state.c.iter().zip(&state.q) {
            let m = p.rho_l * q / (1.0 + q);
            sup_m = sup_m.max(m);
            sup_n = sup_n.max(c * m);
            sup_cq = sup_cq.max(c * q);
            lp += pow(c * q, p.gamma) * h;
        }
        let grad_cq_beta: f64 = state
            .c
            .iter()
            .zip(&state.q)
            .map(|(c, q)| pow(c * q, p.beta))
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| (w[1] - w[0]).powi(2) / h)
            .sum();
        let n2 = 2 * p.moment_n as i32;
        let moment_2n = node_integral(&grid, |j| state.u[j].powi(n2));
        let mom = momentum(state);
        // the weighted functionals are taken relative to the conserved mean velocity
        let w = w_profile(state, p, mom);
        DiagnosticsRecord {
            t: state.t,
            sup_m,
            sup_n,
            energy: energy(state, p).unwrap_or(f64::NAN),
            dissipation: dissipation_rate(state, p),
            dissipated: state.dissipated,
            momentum: mom,
            sup_cq,
            lp_cq_gamma: lp,
            moment_2n,
            grad_cq_beta,
            q_left: state.q[0],
            q_right: state.q[grid.cells() - 1],
            id34_residual: self.identity.push(state),
            w_norm: l2_nodes(&grid, &w),
            lyapunov: lyapunov_from_w(state, p, self.case, self.theta, &w),
        }
    }
}

/// Cumulative trapezoid integral of `values` over `times`.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for k in 0..times.len() {
        if k > 0 {
            acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_initial_data, ProfileSpec};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn uniform_state(cells: usize, c: f64, q: f64, u: f64, t: f64) -> LagrangianState {
        LagrangianState {
            t,
            c: Arc::from(vec![c; cells]),
            q: vec![q; cells],
            u: vec![u; cells + 1],
            left_boundary: 0.0,
            dissipated: 0.0,
            steps: 0,
        }
    }

    fn params(gamma: f64, beta: f64) -> ModelParams {
        ModelParams::with_default_moment(gamma, beta, 1.0).unwrap()
    }

    #[test]
    fn energy_of_trivial_states() {
        let p = params(2.0, 0.5);
        assert_eq!(
            energy(&uniform_state(16, 0.0, 1.0, 0.0, 0.0), &p).unwrap(),
            0.0
        );
        assert_relative_eq!(
            energy(&uniform_state(16, 1.0, 1.0, 0.0, 0.0), &p).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        let bad = ModelParams { gamma: 1.0, ..p };
        assert!(energy(&uniform_state(8, 1.0, 1.0, 0.0, 0.0), &bad).is_err());
    }

    #[test]
    fn boundary_closed_form() {
        let p = params(2.0, 1.0);
        let profile = ProfileSpec::Constant {
            m: 0.5,
            n: 0.5,
            u_amp: 0.0,
        };
        let init = make_initial_data(&p, &VacuumRegime::Discontinuous, &profile, 16).unwrap();
        assert_eq!(
            exact_boundary_q(0.0, Endpoint::Left, &p, &init).unwrap(),
            1.0
        );
        for t in [0.5, 3.0, 100.0] {
            assert_relative_eq!(
                exact_boundary_q(t, Endpoint::Right, &p, &init).unwrap(),
                1.0 / (1.0 + t),
                max_relative = 1e-14
            );
        }
        let cont = VacuumRegime::continuous(0.5, [0.5, 0.5, 0.3, 0.3], 1.0).unwrap();
        let prof = ProfileSpec::PhiPower {
            km: 0.5,
            kn: 0.3,
            alpha: 0.5,
            u_amp: 0.0,
        };
        let init = make_initial_data(&p, &cont, &prof, 16).unwrap();
        assert!(matches!(
            exact_boundary_q(1.0, Endpoint::Left, &p, &init),
            Err(DiagnosticsError::Unsupported(_))
        ));
    }

    #[test]
    fn boundary_log_slope() {
        let p = params(3.0, 0.5);
        let init = InitialData {
            regime: VacuumRegime::Discontinuous,
            c0: vec![0.7; 8],
            q0: vec![1.3; 8],
            u0: vec![0.0; 9],
        };
        let series: Vec<(f64, f64)> = (0..60)
            .map(|k| {
                let t = 1.0e4 * 10f64.powf(k as f64 / 59.0);
                (t, exact_boundary_q(t, Endpoint::Left, &p, &init).unwrap())
            })
            .collect();
        let fit = fit_decay(&series, (1.0e4, 1.0e5), &DecayTarget::plain()).unwrap();
        assert!((fit.exponent + 1.0 / 2.5).abs() < 1e-3, "{}", fit.exponent);
    }

    #[test]
    fn rate_cases() {
        let d = VacuumRegime::Discontinuous;
        let c = VacuumRegime::continuous(0.5, [0.1, 0.1, 0.1, 0.1], 1.0).unwrap();
        let r = theoretical_rate(&params(2.0, 0.5), &d).unwrap();
        assert_eq!((r.theta, r.rate, r.log_corrected), (0.5, 0.25, false));
        let r = theoretical_rate(&params(2.0, 1.0), &d).unwrap();
        assert_eq!(r.theta, 1.0);
        assert_relative_eq!(r.rate, 1.0 / 3.0);
        assert!(r.log_corrected);
        assert_relative_eq!(r.log_exponent, 1.0 / 3.0);
        let r = theoretical_rate(&params(2.0, 0.5), &c).unwrap();
        assert_relative_eq!(r.rate, 1.0 / 6.0);
        assert!(!r.log_corrected);
        // beta > 1: (gamma-1)/(gamma-beta) = 3.5/1 > 2
        let r = theoretical_rate(&params(4.5, 3.5), &d).unwrap();
        assert_eq!(
            (r.case, r.theta, r.log_corrected),
            (ThetaCase::SuperLinear, 2.0, false)
        );
        // (gamma-1)/(gamma-beta) = 4/2.5 <= 2
        let r = theoretical_rate(&params(5.0, 2.5), &d).unwrap();
        assert_relative_eq!(r.theta, 1.6);
        assert!(r.log_corrected);
        let bad = ModelParams {
            gamma: 1.2,
            beta: 0.5,
            rho_l: 1.0,
            moment_n: 10,
        };
        assert!(theoretical_rate(&bad, &d).is_err());
    }

    #[test]
    fn w_at_rest_with_unit_q() {
        let p = params(2.0, 0.5);
        let s = uniform_state(32, 1.0, 1.0, 0.0, 0.0);
        let w = w_function(&s, &p).unwrap();
        let grid = s.grid();
        for (j, wj) in w.iter().enumerate() {
            assert_relative_eq!(*wj, 0.5 - grid.node(j), epsilon = 1e-14);
        }
        assert!(node_integral(&grid, |j| w[j]).abs() < 1e-15);
    }

    #[test]
    fn w_tends_to_scaled_velocity() {
        let p = ModelParams::with_default_moment(2.0, 0.5, 2.0).unwrap();
        let mut s = uniform_state(32, 1.0, 0.5, 0.0, 1.0e12);
        s.u = (0..=32)
            .map(|j| (2.0 * std::f64::consts::PI * j as f64 / 32.0).sin())
            .collect();
        let w = w_function(&s, &p).unwrap();
        for (wj, uj) in w.iter().zip(&s.u) {
            assert!((wj - 2.0 * uj).abs() < 1e-10);
        }
    }

    #[test]
    fn w_rejects_nonzero_mean() {
        let p = params(2.0, 0.5);
        let s = uniform_state(8, 1.0, 1.0, 0.3, 0.0);
        assert!(matches!(
            w_function(&s, &p),
            Err(DiagnosticsError::Precondition(_))
        ));
    }

    #[test]
    fn w_gradient_identity() {
        let p = params(2.0, 0.5);
        let cells = 64;
        let mut s = uniform_state(cells, 1.0, 1.0, 0.0, 3.0);
        let grid = s.grid();
        s.q = (0..cells).map(|i| 1.0 + 0.5 * grid.center(i)).collect();
        s.u = (0..=cells)
            .map(|j| (2.0 * std::f64::consts::PI * grid.node(j)).sin())
            .collect();
        let w = w_function(&s, &p).unwrap();
        let h = grid.dxi();
        for i in 0..cells {
            let wx = (w[i + 1] - w[i]) / h;
            let expect = p.rho_l * (s.u[i + 1] - s.u[i]) / h - 1.0 / ((1.0 + s.t) * s.q[i]);
            assert!((wx - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn lyapunov_zero_and_case_guard() {
        let p = params(2.0, 0.5);
        let s = uniform_state(8, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(
            lyapunov_functional(&s, &p, ThetaCase::SubLinear, 0.5).unwrap(),
            0.0
        );
        let p1 = params(2.0, 1.0);
        assert!(lyapunov_functional(&s, &p1, ThetaCase::SubLinear, 1.0).is_err());
    }

    #[test]
    fn fit_pure_powers() {
        let series: Vec<(f64, f64)> = (0..50)
            .map(|k| {
                let t = 10f64.powf(k as f64 / 49.0 * 3.0);
                (t, (1.0 + t).powi(-2))
            })
            .collect();
        let fit = fit_decay(&series, (1.0, 1000.0), &DecayTarget::plain()).unwrap();
        assert_relative_eq!(fit.exponent, -2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);

        let flat: Vec<(f64, f64)> = series.iter().map(|&(t, _)| (t, 3.0)).collect();
        let fit = fit_decay(&flat, (1.0, 1000.0), &DecayTarget::plain()).unwrap();
        assert!(fit.exponent.abs() < 1e-14);
    }

    #[test]
    fn fit_rejections() {
        let series = vec![(1.0, 1.0), (5.0, 0.0), (20.0, 0.5)];
        assert!(fit_decay(&series, (1.0, 20.0), &DecayTarget::plain()).is_err());
        let series = vec![(1.0, 1.0), (2.0, 0.8), (3.0, 0.7)];
        assert!(fit_decay(&series, (1.0, 3.0), &DecayTarget::plain()).is_err());
        let series = vec![(1.0, 1.0), (20.0, 0.5)];
        assert!(fit_decay(&series, (1.0, 20.0), &DecayTarget::plain()).is_err());
    }

    #[test]
    fn fit_log_corrected() {
        let p = 1.0 / 3.0;
        let series: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = 20.0 * 10f64.powf(k as f64 / 39.0);
                (t, (1.0 + t).powf(-0.3) * t.ln_1p().powf(p))
            })
            .collect();
        let target = DecayTarget {
            rate: 1.0 / 3.0,
            log_exponent: Some(p),
            slack: 0.2,
        };
        let fit = fit_decay(&series, (20.0, 200.0), &target).unwrap();
        assert_relative_eq!(fit.exponent, -0.3, epsilon = 1e-12);
        assert!(fit.verdict);
        assert!(fit.log_corrected);
    }

    #[test]
    fn eulerian_uniform() {
        let p = params(2.0, 0.5);
        let s = uniform_state(16, 1.0, 1.0, 0.0, 0.0);
        let e = reconstruct_eulerian(&s, &p, 0.0).unwrap();
        assert_relative_eq!(e.b_t, 2.0, epsilon = 1e-14);
        assert_eq!(e.x[0], 0.0);
        assert!(e.x.windows(2).all(|w| w[1] > w[0]));
        let mass: f64 =
            e.m.iter()
                .zip(e.x.windows(2))
                .map(|(m, w)| m * (w[1] - w[0]))
                .sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-14);
        for (al, ag) in e.alpha_l.iter().zip(&e.alpha_g) {
            assert_eq!(al + ag, 1.0);
        }
        let v = uniform_state(16, 1.0, 0.0, 0.0, 0.0);
        assert!(reconstruct_eulerian(&v, &p, 0.0).is_err());
    }

    #[test]
    fn zero_state_record() {
        let p = params(2.0, 0.5);
        let init = InitialData {
            regime: VacuumRegime::Discontinuous,
            c0: vec![0.0; 8],
            q0: vec![0.0; 8],
            u0: vec![0.0; 9],
        };
        let mut rec = Recorder::new(&init, &p, 0.5).unwrap();
        let r = rec.record(&LagrangianState::from_initial(&init));
        assert!(r.values().iter().all(|&v| v == 0.0), "{r:?}");
    }

    #[test]
    fn probe_cells() {
        let g = Grid::new(8);
        assert_eq!(probe_cell(&g, 0.0), 0);
        assert_eq!(probe_cell(&g, 1.0), 7);
        assert_eq!(probe_cell(&g, 0.5), 3);
        assert_eq!(probe_cell(&g, 0.44), 3);
        assert_eq!(probe_cell(&g, 0.57), 4);
    }

    #[test]
    fn trapezoid_of_linear() {
        let t = [0.0, 1.0, 3.0];
        let v = [0.0, 1.0, 3.0];
        assert_eq!(cumulative_trapezoid(&t, &v), vec![0.0, 0.5, 4.5]);
    }
}
