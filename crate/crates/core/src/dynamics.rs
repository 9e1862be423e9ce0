//! Exogenous generation dynamics and the controlled state-of-charge transition.
//!
//! Two generation models are supported: an Euler-Maruyama discretisation of the
//! bounded Jacobi diffusion
//!
//! ```text
//! X_{k+1} = X_k + a_k (m_k - X_k) dt + s_k sqrt(X_k (X_max - X_k)) sqrt(dt) Z_k
//! ```
//!
//! clipped to `[0, X_max]`, and the hourly forecast-binned model whose shocks
//! are bootstrapped from calibrated residual banks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::stream_rng;

/// Slack allowed when checking a control against the admissible range.
pub const CONTROL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobiParams {
    pub alpha: Vec<f64>,
    pub m: Vec<f64>,
    pub sigma: Vec<f64>,
    pub x_max: f64,
    pub dt: f64,
}

impl JacobiParams {
    /// Time-homogeneous parameters repeated over `n_steps` steps.
    pub fn stationary(alpha: f64, m: f64, sigma: f64, x_max: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let p = Self {
            alpha: vec![alpha; n_steps],
            m: vec![m; n_steps],
            sigma: vec![sigma; n_steps],
            x_max,
            dt,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n_steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alpha.len();
        if self.m.len() != k || self.sigma.len() != k {
            return Err(Error::InvalidInput(format!(
                "alpha, m, sigma lengths differ: {}, {}, {}",
                k,
                self.m.len(),
                self.sigma.len()
            )));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput("x_max and dt must be positive".into()));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidInput("alpha must be positive".into()));
        }
        // sigma = 0 is accepted for deterministic test cases.
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("sigma must be non-negative".into()));
        }
        if self.m.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("m"));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step of the Jacobi diffusion, clipped to `[0, x_max]`.
pub fn jacobi_step(x: f64, k: usize, p: &JacobiParams, z: f64) -> Result<f64> {
    ensure_finite(x, "jacobi_step state")?;
    ensure_finite(z, "jacobi_step shock")?;
    if k >= p.n_steps() {
        return Err(Error::InvalidInput(format!("step {k} beyond horizon {}", p.n_steps())));
    }
    let diffusion = (x * (p.x_max - x)).max(0.0).sqrt();
    let next = x + p.alpha[k] * (p.m[k] - x) * p.dt + p.sigma[k] * diffusion * p.dt.sqrt() * z;
    Ok(next.clamp(0.0, p.x_max))
}

/// Forecast-binned hourly model with bootstrapped shocks and boundary point masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedModel {
    pub bin_edges: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Standardised residuals per bin.
    pub residual_banks: Vec<Vec<f64>>,
    pub p_zero: Option<f64>,
    pub p_one: Option<f64>,
}

impl CalibratedModel {
    pub fn n_bins(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.len();
        if n == 0 || self.sigma.len() != n || self.residual_banks.len() != n || self.bin_edges.len() != n + 1 {
            return Err(Error::InvalidInput("calibrated model arrays have inconsistent lengths".into()));
        }
        if self.bin_edges.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("bin edges must be nondecreasing".into()));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("sigma must be non-negative".into()));
        }
        for p in [self.p_zero, self.p_one].into_iter().flatten() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("point mass {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Bin map R: the lowest bin whose upper edge is at least `forecast`.
    pub fn bin_of(&self, forecast: f64) -> usize {
        bin_index(&self.bin_edges, forecast)
    }

    /// Deterministic update for a given standardised shock.
    pub fn advance(&self, x: f64, forecast: f64, eps: f64) -> f64 {
        let r = self.bin_of(forecast);
        calibrated_update(x, forecast, self.alpha[r], self.sigma[r], eps)
    }
}

pub(crate) fn bin_index(edges: &[f64], value: f64) -> usize {
    let n_bins = edges.len() - 1;
    edges[1..].partition_point(|&e| e < value).min(n_bins - 1)
}

/// `x + alpha (forecast - x) + sigma eps`, clipped to `[0, 1]`.
pub fn calibrated_update(x: f64, forecast: f64, alpha: f64, sigma: f64, eps: f64) -> f64 {
    (x + alpha * (forecast - x) + sigma * eps).clamp(0.0, 1.0)
}

/// One hourly step of the calibrated model.
pub fn calibrated_step<R: Rng + ?Sized>(x: f64, forecast: f64, model: &CalibratedModel, rng: &mut R) -> Result<f64> {
    ensure_finite(x, "calibrated_step state")?;
    ensure_finite(forecast, "calibrated_step forecast")?;
    let r = model.bin_of(forecast);
    let bank = &model.residual_banks[r];
    if bank.is_empty() {
        return Err(Error::EmptyResidualBank(r));
    }
    let eps = match (forecast, model.p_zero, model.p_one) {
        (0.0, Some(p), _) => {
            if rng.random::<f64>() < p {
                return Ok(0.0);
            }
            signed_draw(bank, 1.0, rng)
        }
        (1.0, _, Some(p)) => {
            if rng.random::<f64>() < p {
                return Ok(1.0);
            }
            signed_draw(bank, -1.0, rng)
        }
        _ => bank[rng.random_range(0..bank.len())],
    };
    Ok(calibrated_update(x, forecast, model.alpha[r], model.sigma[r], eps))
}

/// Rejection-samples a residual with the sign of `sign`; falls back to `sign * |eps|`
/// when the bank holds no residual of that sign.
fn signed_draw<R: Rng + ?Sized>(bank: &[f64], sign: f64, rng: &mut R) -> f64 {
    const QUICK_TRIES: usize = 64;
    for _ in 0..QUICK_TRIES {
        let e = bank[rng.random_range(0..bank.len())];
        if e * sign > 0.0 {
            return e;
        }
    }
    if bank.iter().any(|e| e * sign > 0.0) {
        loop {
            let e = bank[rng.random_range(0..bank.len())];
            if e * sign > 0.0 {
                return e;
            }
        }
    }
    sign * bank[rng.random_range(0..bank.len())].abs()
}

/// Generation dynamics driving the solver, rollouts and pilot simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindModel {
    Jacobi(JacobiParams),
    /// Hourly calibrated model driven by a day-ahead forecast profile (one value per step).
    Calibrated { model: CalibratedModel, forecast: Vec<f64> },
}

impl WindModel {
    pub fn n_steps(&self) -> usize {
        match self {
            WindModel::Jacobi(p) => p.n_steps(),
            WindModel::Calibrated { forecast, .. } => forecast.len(),
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            WindModel::Jacobi(p) => p.dt,
            WindModel::Calibrated { .. } => 1.0,
        }
    }

    /// Closed state domain `[lo, hi]`.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            WindModel::Jacobi(p) => (0.0, p.x_max),
            WindModel::Calibrated { .. } => (0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WindModel::Jacobi(p) => p.validate(),
            WindModel::Calibrated { model, forecast } => {
                model.validate()?;
                if forecast.iter().any(|f| !(0.0..=1.0).contains(f)) {
                    return Err(Error::InvalidInput("forecast ratios must lie in [0, 1]".into()));
                }
                Ok(())
            }
        }
    }

    /// Advances the state from step `k` to `k + 1`.
    pub fn step<R: Rng + ?Sized>(&self, k: usize, x: f64, rng: &mut R) -> Result<f64> {
        match self {
            WindModel::Jacobi(p) => {
                let z: f64 = rng.sample(StandardNormal);
                jacobi_step(x, k, p, z)
            }
            WindModel::Calibrated { model, forecast } => {
                let f = *forecast
                    .get(k)
                    .ok_or_else(|| Error::InvalidInput(format!("step {k} beyond forecast horizon {}", forecast.len())))?;
                calibrated_step(x, f, model, rng)
            }
        }
    }
}

/// `n_paths` independent paths of `n_steps + 1` states each, path `p` drawn from stream `p` of `seed`.
pub fn simulate_paths(model: &WindModel, x0: f64, n_paths: usize, n_steps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    if n_steps > model.n_steps() {
        return Err(Error::InvalidInput(format!(
            "requested {n_steps} steps but model covers {}",
            model.n_steps()
        )));
    }
    (0..n_paths)
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let mut path = Vec::with_capacity(n_steps + 1);
            path.push(x0);
            let mut x = x0;
            for k in 0..n_steps {
                x = model.step(k, x, &mut rng)?;
                path.push(x);
            }
            Ok(path)
        })
        .collect()
}

/// Storage constraints and terminal target of the battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub i_min: f64,
    pub i_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub eta: f64,
    pub i_target: f64,
    pub terminal_penalty: f64,
}

impl BatterySpec {
    pub fn new(i_min: f64, i_max: f64, b_min: f64, b_max: f64, eta: f64, i_target: f64, terminal_penalty: f64) -> Result<Self> {
        let spec = Self {
            i_min,
            i_max,
            b_min,
            b_max,
            eta,
            i_target,
            terminal_penalty,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the SoC window from a rated capacity and fractional SoC limits.
    #[allow(clippy::too_many_arguments)]
    pub fn from_capacity(
        i_cap: f64,
        soc_min: f64,
        soc_max: f64,
        b_min: f64,
        b_max: f64,
        eta: f64,
        i_target: f64,
        terminal_penalty: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&soc_min) || !(0.0..=1.0).contains(&soc_max) {
            return Err(Error::InvalidInput("SoC limits must lie in [0, 1]".into()));
        }
        Self::new(soc_min * i_cap, soc_max * i_cap, b_min, b_max, eta, i_target, terminal_penalty)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.i_min, self.i_max, self.b_min, self.b_max, self.eta, self.i_target, self.terminal_penalty];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("battery spec"));
        }
        if !(self.i_min < self.i_max) {
            return Err(Error::InvalidInput("i_min must be below i_max".into()));
        }
        if !(self.b_min < 0.0 && 0.0 < self.b_max) {
            return Err(Error::InvalidInput("power rating must satisfy b_min < 0 < b_max".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidInput("eta must lie in (0, 1]".into()));
        }
        if self.terminal_penalty < 0.0 {
            return Err(Error::InvalidInput("terminal penalty must be non-negative".into()));
        }
        Ok(())
    }

    /// `I_m = (I_max - I_min) / 2`, the centring level of the LQ penalty.
    pub fn i_mid(&self) -> f64 {
        0.5 * (self.i_max - self.i_min)
    }

    /// Net energy added to storage by rate `b` over `dt` hours.
    #[inline]
    pub fn energy_delta(&self, b: f64, dt: f64) -> f64 {
        if b > 0.0 {
            self.eta * b * dt
        } else {
            b / self.eta * dt
        }
    }

    /// Unchecked transition; may leave `[i_min, i_max]` for unconstrained `b`.
    #[inline]
    pub fn advance(&self, i: f64, b: f64, dt: f64) -> f64 {
        i + self.energy_delta(b, dt)
    }

    /// Rates keeping the next SoC inside `[i_min, i_max]`.
    pub fn admissible_range(&self, i: f64, dt: f64) -> (f64, f64) {
        let lo = self.b_min.max(self.eta * (self.i_min - i) / dt).min(0.0);
        let hi = self.b_max.min((self.i_max - i) / (self.eta * dt)).max(0.0);
        (lo, hi)
    }

    /// Clip of `b` into the admissible range at `i`.
    #[inline]
    pub fn project(&self, b: f64, i: f64, dt: f64) -> f64 {
        let (lo, hi) = self.admissible_range(i, dt);
        b.clamp(lo, hi)
    }

    /// Checked SoC transition.
    pub fn soc_step(&self, i: f64, b: f64, dt: f64) -> Result<f64> {
        ensure_finite(b, "soc_step rate")?;
        ensure_finite(i, "soc_step SoC")?;
        if i < self.i_min - CONTROL_TOLERANCE || i > self.i_max + CONTROL_TOLERANCE {
            return Err(Error::StateDomain {
                value: i,
                lo: self.i_min,
                hi: self.i_max,
                step: 0,
            });
        }
        let (lo, hi) = self.admissible_range(i, dt);
        if b < lo - CONTROL_TOLERANCE || b > hi + CONTROL_TOLERANCE {
            return Err(Error::InfeasibleControl { b, lo, hi, i });
        }
        Ok(self.advance(i, b, dt).clamp(self.i_min, self.i_max))
    }

    /// Quadratic terminal penalty `P (i - i_target)^2`.
    pub fn terminal_cost(&self, i_t: f64) -> f64 {
        let d = i_t - self.i_target;
        self.terminal_penalty * d * d
    }
}
