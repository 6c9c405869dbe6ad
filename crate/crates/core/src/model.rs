//! Physical parameters, constitutive laws and initial data of the
//! simplified liquid-gas model in Lagrangian mass coordinates.
//!
//! The unknowns are the mass ratio `c = n/m`, the transformed liquid mass
//! `Q(m) = m/(rho_l - m)` and the common velocity `u`. Pressure and viscosity
//! constants are fixed to one.

use std::fmt;

use thiserror::Error;

/// Upper bound used for the discrete gradient-energy check on `(c0 q0)^beta`.
pub const GRADIENT_ENERGY_BOUND: f64 = 1.0e6;

/// Relative slack allowed when checking sampled profiles against envelopes.
const ENVELOPE_RTOL: f64 = 1.0e-12;

/// Hypotheses on data and exponents that the analysis relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assumption {
    /// Masses bounded away from zero and the liquid below its pure density.
    A1,
    /// Masses vanish at the ends like powers of `x(1-x)`.
    A1Prime,
    /// Finite `2n`-th moment of the initial velocity.
    A2,
    /// Square-integrable gradient of `(c0 Q0)^beta`.
    A3,
    /// `beta > 0` and `gamma >= 1 + beta`.
    A4,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Assumption::A1 => "(A1)",
            Assumption::A1Prime => "(A1)'",
            Assumption::A2 => "(A2)",
            Assumption::A3 => "(A3)",
            Assumption::A4 => "(A4)",
        };
        f.write_str(tag)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("assumption {assumption} violated: {detail}")]
    Assumption {
        assumption: Assumption,
        detail: String,
    },
    #[error("invalid grid: {0}")]
    Grid(String),
}

impl ModelError {
    fn assumption(assumption: Assumption, detail: impl Into<String>) -> Self {
        ModelError::Assumption {
            assumption,
            detail: detail.into(),
        }
    }

    /// The violated assumption, if this is a validation failure.
    pub fn violated(&self) -> Option<Assumption> {
        match self {
            ModelError::Assumption { assumption, .. } => Some(*assumption),
            _ => None,
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Smallest integer `n` with `n >= (2 gamma + beta) / (2 beta)`.
pub fn min_moment_order(gamma: f64, beta: f64) -> u32 {
    let bound = (2.0 * gamma + beta) / (2.0 * beta);
    // guard against 2.9999999999 style roundoff pushing the ceiling up
    let n = (bound - 1.0e-12).ceil();
    n.max(1.0) as u32
}

/// Exponents and liquid density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub beta: f64,
    pub rho_l: f64,
    pub moment_n: u32,
}

impl ModelParams {
    /// Validated parameters with an explicit moment order.
    pub fn new(gamma: f64, beta: f64, rho_l: f64, moment_n: u32) -> Result<Self> {
        let params = ModelParams {
            gamma,
            beta,
            rho_l,
            moment_n,
        };
        params.validate()?;
        Ok(params)
    }

    /// Validated parameters using the smallest admissible moment order.
    pub fn with_default_moment(gamma: f64, beta: f64, rho_l: f64) -> Result<Self> {
        check_exponents(gamma, beta)?;
        Self::new(gamma, beta, rho_l, min_moment_order(gamma, beta))
    }

    pub fn validate(&self) -> Result<()> {
        check_exponents(self.gamma, self.beta)?;
        if !(self.rho_l.is_finite() && self.rho_l > 0.0) {
            return Err(ModelError::Domain(format!(
                "rho_l must be positive, got {}",
                self.rho_l
            )));
        }
        let needed = min_moment_order(self.gamma, self.beta);
        if self.moment_n < needed {
            return Err(ModelError::assumption(
                Assumption::A2,
                format!(
                    "moment order n = {} but n >= (2 gamma + beta)/(2 beta) requires n >= {}",
                    self.moment_n, needed
                ),
            ));
        }
        Ok(())
    }
}

fn check_exponents(gamma: f64, beta: f64) -> Result<()> {
    if !(gamma.is_finite() && beta.is_finite()) {
        return Err(ModelError::assumption(
            Assumption::A4,
            "exponents must be finite",
        ));
    }
    if beta <= 0.0 {
        return Err(ModelError::assumption(
            Assumption::A4,
            format!("beta = {beta} must be positive"),
        ));
    }
    if gamma < 1.0 + beta {
        return Err(ModelError::assumption(
            Assumption::A4,
            format!(
                "gamma = {gamma} must satisfy gamma >= 1 + beta = {}",
                1.0 + beta
            ),
        ));
    }
    Ok(())
}

/// `x(1 - x)`, the distance-to-boundary weight of the continuous vacuum profile.
pub fn phi(x: f64) -> f64 {
    x * (1.0 - x)
}

/// Which free-boundary problem is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VacuumRegime {
    /// Masses jump to zero at the free boundary; stress-free ends.
    Discontinuous,
    /// Masses decay to zero at the ends; `k = [K1, K2, K3, K4]` are the
    /// envelope constants for `m0` (`K1, K2`) and `n0` (`K3, K4`).
    Continuous { alpha: f64, k: [f64; 4] },
}

impl VacuumRegime {
    pub fn continuous(alpha: f64, k: [f64; 4], rho_l: f64) -> Result<Self> {
        let regime = VacuumRegime::Continuous { alpha, k };
        regime.validate(rho_l)?;
        Ok(regime)
    }

    pub fn validate(&self, rho_l: f64) -> Result<()> {
        let VacuumRegime::Continuous { alpha, k } = *self else {
            return Ok(());
        };
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ModelError::assumption(
                Assumption::A1Prime,
                format!("alpha = {alpha} must lie in (0, 1)"),
            ));
        }
        let [k1, k2, k3, k4] = k;
        if !(k1 > 0.0 && k1 <= k2 && k3 > 0.0 && k3 <= k4) {
            return Err(ModelError::assumption(
                Assumption::A1Prime,
                format!("envelope constants need 0 < K1 <= K2, 0 < K3 <= K4, got {k:?}"),
            ));
        }
        // sup phi = 1/4 at x = 1/2
        let sup_m = k2 * 0.25f64.powf(alpha / 2.0);
        if sup_m >= rho_l {
            return Err(ModelError::assumption(
                Assumption::A1Prime,
                format!("K2 sup phi^(alpha/2) = {sup_m} must stay below rho_l = {rho_l}"),
            ));
        }
        Ok(())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, VacuumRegime::Continuous { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            VacuumRegime::Discontinuous => "discontinuous",
            VacuumRegime::Continuous { .. } => "continuous",
        }
    }
}

/// `Q(m) = m / (rho_l - m)`.
pub fn q_of_m(m: f64, rho_l: f64) -> Result<f64> {
    if !(m >= 0.0 && m < rho_l) {
        return Err(ModelError::Domain(format!(
            "liquid mass m = {m} outside [0, rho_l = {rho_l})"
        )));
    }
    Ok(m / (rho_l - m))
}

/// `m = rho_l Q / (1 + Q)`, the inverse of [`q_of_m`].
pub fn m_of_q(q: f64, rho_l: f64) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(ModelError::Domain(format!("Q = {q} must be non-negative")));
    }
    if q.is_infinite() {
        return Err(ModelError::Domain("Q must be finite".into()));
    }
    Ok(rho_l * q / (1.0 + q))
}

/// Polytropic pressure `(c Q)^gamma`.
pub fn pressure(c: f64, q: f64, gamma: f64) -> Result<f64> {
    check_nonneg(c, q)?;
    Ok(pow(c * q, gamma))
}

/// Degenerate viscosity coefficient `c^beta Q^(beta + 1)`.
pub fn visc_coeff(c: f64, q: f64, beta: f64) -> Result<f64> {
    check_nonneg(c, q)?;
    Ok(pow(c, beta) * pow(q, beta + 1.0))
}

fn check_nonneg(c: f64, q: f64) -> Result<()> {
    if !(c >= 0.0 && q >= 0.0) {
        return Err(ModelError::Domain(format!(
            "c = {c} and Q = {q} must be non-negative"
        )));
    }
    Ok(())
}

/// `x^p` for `x >= 0` and `p > 0`, with `0^p = 0` exactly.
#[inline]
pub(crate) fn pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if p == 1.0 {
        x
    } else if p == 2.0 {
        x * x
    } else if p == 0.5 {
        x.sqrt()
    } else {
        x.powf(p)
    }
}

/// Closed-form initial masses and velocity as functions of the mass coordinate.
pub trait Profile {
    /// Gas mass `n0(x)`.
    fn n0(&self, x: f64) -> f64;
    /// Liquid mass `m0(x)`.
    fn m0(&self, x: f64) -> f64;
    /// Velocity `u0(x)`.
    fn u0(&self, x: f64) -> f64;
}

/// Built-in profile families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileSpec {
    /// Uniform masses and a velocity `u_amp sin(2 pi x)`.
    Constant { m: f64, n: f64, u_amp: f64 },
    /// `base + amp sin^2(pi x)` for both masses; velocity `u_amp sin(2 pi x)`.
    SmoothBump {
        m_base: f64,
        m_amp: f64,
        n_base: f64,
        n_amp: f64,
        u_amp: f64,
    },
    /// `m0 = km phi^(alpha/2)`, `n0 = kn phi^alpha`, velocity `u_amp sin(2 pi x)`.
    PhiPower {
        km: f64,
        kn: f64,
        alpha: f64,
        u_amp: f64,
    },
}

impl Profile for ProfileSpec {
    fn n0(&self, x: f64) -> f64 {
        match *self {
            ProfileSpec::Constant { n, .. } => n,
            ProfileSpec::SmoothBump { n_base, n_amp, .. } => {
                n_base + n_amp * (std::f64::consts::PI * x).sin().powi(2)
            }
            ProfileSpec::PhiPower { kn, alpha, .. } => kn * phi(x).max(0.0).powf(alpha),
        }
    }

    fn m0(&self, x: f64) -> f64 {
        match *self {
            ProfileSpec::Constant { m, .. } => m,
            ProfileSpec::SmoothBump { m_base, m_amp, .. } => {
                m_base + m_amp * (std::f64::consts::PI * x).sin().powi(2)
            }
            ProfileSpec::PhiPower { km, alpha, .. } => km * phi(x).max(0.0).powf(alpha / 2.0),
        }
    }

    fn u0(&self, x: f64) -> f64 {
        let amp = match *self {
            ProfileSpec::Constant { u_amp, .. }
            | ProfileSpec::SmoothBump { u_amp, .. }
            | ProfileSpec::PhiPower { u_amp, .. } => u_amp,
        };
        if amp == 0.0 {
            0.0
        } else {
            amp * (2.0 * std::f64::consts::PI * x).sin()
        }
    }
}

/// Sampled initial state on the staggered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub regime: VacuumRegime,
    /// `n0/m0` at cell centers.
    pub c0: Vec<f64>,
    /// `Q(m0)` at cell centers.
    pub q0: Vec<f64>,
    /// `u0` at nodes.
    pub u0: Vec<f64>,
}

impl InitialData {
    pub fn cells(&self) -> usize {
        self.c0.len()
    }
}

/// Minimum number of cells accepted by [`make_initial_data`].
pub const MIN_CELLS: usize = 8;

/// Samples `profile` on an `cells`-cell grid and checks every assumption
/// that applies to `regime`.
pub fn make_initial_data(
    params: &ModelParams,
    regime: &VacuumRegime,
    profile: &dyn Profile,
    cells: usize,
) -> Result<InitialData> {
    params.validate()?;
    regime.validate(params.rho_l)?;
    if cells < MIN_CELLS {
        return Err(ModelError::Grid(format!(
            "need at least {MIN_CELLS} cells, got {cells}"
        )));
    }
    let h = 1.0 / cells as f64;
    let center = |i: usize| (i as f64 + 0.5) * h;
    let node = |j: usize| j as f64 * h;

    match *regime {
        VacuumRegime::Discontinuous => {
            // cell centers and nodes, so the endpoints are seen too
            let points = (0..cells).map(center).chain((0..=cells).map(node));
            check_bounded_away(params, profile, points)?;
        }
        VacuumRegime::Continuous { alpha, k } => {
            check_envelopes(params, profile, alpha, k, cells)?;
        }
    }

    let mut c0 = Vec::with_capacity(cells);
    let mut q0 = Vec::with_capacity(cells);
    for i in 0..cells {
        let x = center(i);
        let (n, m) = (profile.n0(x), profile.m0(x));
        c0.push(n / m);
        q0.push(q_of_m(m, params.rho_l)?);
    }
    let u0: Vec<f64> = (0..=cells).map(|j| profile.u0(node(j))).collect();

    check_velocity_moment(params, &u0, h)?;
    check_gradient_energy(params, &c0, &q0, h)?;

    Ok(InitialData {
        regime: *regime,
        c0,
        q0,
        u0,
    })
}

fn check_bounded_away(
    params: &ModelParams,
    profile: &dyn Profile,
    points: impl Iterator<Item = f64>,
) -> Result<()> {
    for x in points {
        let (n, m) = (profile.n0(x), profile.m0(x));
        if !(n.is_finite() && m.is_finite()) {
            return Err(ModelError::assumption(
                Assumption::A1,
                format!("non-finite mass at x = {x}"),
            ));
        }
        if n <= 0.0 {
            return Err(ModelError::assumption(
                Assumption::A1,
                format!("n0({x}) = {n} but inf n0 > 0 is required"),
            ));
        }
        if m <= 0.0 {
            return Err(ModelError::assumption(
                Assumption::A1,
                format!("m0({x}) = {m} but inf m0 > 0 is required"),
            ));
        }
        if m >= params.rho_l {
            return Err(ModelError::assumption(
                Assumption::A1,
                format!(
                    "m0({x}) = {m} but sup m0 < rho_l = {} is required",
                    params.rho_l
                ),
            ));
        }
    }
    Ok(())
}

fn check_envelopes(
    params: &ModelParams,
    profile: &dyn Profile,
    alpha: f64,
    k: [f64; 4],
    cells: usize,
) -> Result<()> {
    let [k1, k2, k3, k4] = k;
    let fail = |detail: String| Err(ModelError::assumption(Assumption::A1Prime, detail));
    for x in [0.0, 1.0] {
        let (n, m) = (profile.n0(x), profile.m0(x));
        if n.abs() > ENVELOPE_RTOL || m.abs() > ENVELOPE_RTOL {
            return fail(format!(
                "masses must vanish at x = {x}, got n0 = {n}, m0 = {m}"
            ));
        }
    }
    let h = 1.0 / cells as f64;
    let centers = (0..cells).map(|i| (i as f64 + 0.5) * h);
    let interior_nodes = (1..cells).map(|j| j as f64 * h);
    for x in centers.chain(interior_nodes) {
        let (n, m) = (profile.n0(x), profile.m0(x));
        let pm = phi(x).powf(alpha / 2.0);
        let pn = phi(x).powf(alpha);
        let within = |v: f64, lo: f64, hi: f64| {
            v.is_finite() && v >= lo * (1.0 - ENVELOPE_RTOL) && v <= hi * (1.0 + ENVELOPE_RTOL)
        };
        if !within(m, k1 * pm, k2 * pm) {
            return fail(format!(
                "m0({x}) = {m} outside [K1, K2] phi^(alpha/2) = [{}, {}]",
                k1 * pm,
                k2 * pm
            ));
        }
        if !within(n, k3 * pn, k4 * pn) {
            return fail(format!(
                "n0({x}) = {n} outside [K3, K4] phi^alpha = [{}, {}]",
                k3 * pn,
                k4 * pn
            ));
        }
        if m >= params.rho_l {
            return fail(format!("m0({x}) = {m} reaches rho_l = {}", params.rho_l));
        }
    }
    Ok(())
}

fn check_velocity_moment(params: &ModelParams, u0: &[f64], h: f64) -> Result<()> {
    let n2 = 2 * params.moment_n as i32;
    let moment: f64 = trapezoid_weights(u0.len())
        .zip(u0)
        .map(|(w, u)| w * u.powi(n2) * h)
        .sum();
    if !moment.is_finite() {
        return Err(ModelError::assumption(
            Assumption::A2,
            format!("integral of u0^{n2} is not finite"),
        ));
    }
    Ok(())
}

fn check_gradient_energy(params: &ModelParams, c0: &[f64], q0: &[f64], h: f64) -> Result<()> {
    let s: Vec<f64> = c0
        .iter()
        .zip(q0)
        .map(|(c, q)| pow(c * q, params.beta))
        .collect();
    let energy: f64 = s.windows(2).map(|w| (w[1] - w[0]).powi(2) / h).sum();
    if !(energy.is_finite() && energy <= GRADIENT_ENERGY_BOUND) {
        return Err(ModelError::assumption(
            Assumption::A3,
            format!(
                "discrete gradient energy of (c0 Q0)^beta is {energy}, bound {GRADIENT_ENERGY_BOUND}"
            ),
        ));
    }
    Ok(())
}

/// Trapezoid weights (1/2 at both ends) for `len` equally spaced nodes.
pub(crate) fn trapezoid_weights(len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |j| if j == 0 || j + 1 == len { 0.5 } else { 1.0 })
}
