//! Stepwise and terminal costs, rainflow counting and the cycle-degradation law.

use serde::{Deserialize, Serialize};

use crate::dynamics::BatterySpec;
use crate::error::{Error, Result};

/// Coefficient of the depth-of-discharge stress law.
pub const THETA_COEF: f64 = 5.24e-4;
/// Exponent of the depth-of-discharge stress law.
pub const THETA_EXP: f64 = 2.03;
/// Default curtailment threshold as a multiple of the target.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveKind {
    Quadratic,
    L1,
    Degradation {
        lambda_bl: f64,
    },
    Curtailment {
        lambda_cm: f64,
        #[serde(default = "default_threshold_factor")]
        threshold_factor: f64,
    },
    LqPenalized {
        c1: f64,
        c2: f64,
    },
}

fn default_threshold_factor() -> f64 {
    DEFAULT_THRESHOLD_FACTOR
}

/// Running cost specification with its per-step target trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    /// Target output `M_k`, one entry per control step.
    pub target: Vec<f64>,
    /// Optional explicit curtailment thresholds; defaults to `threshold_factor * M_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Vec<f64>>,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, target: Vec<f64>) -> Result<Self> {
        let o = Self {
            kind,
            target,
            threshold: None,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn constant(kind: ObjectiveKind, target: f64, n_steps: usize) -> Result<Self> {
        Self::new(kind, vec![target; n_steps])
    }

    pub fn with_threshold(mut self, threshold: Vec<f64>) -> Result<Self> {
        self.threshold = Some(threshold);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let weights: &[f64] = match &self.kind {
            ObjectiveKind::Quadratic | ObjectiveKind::L1 => &[],
            ObjectiveKind::Degradation { lambda_bl } => &[*lambda_bl],
            ObjectiveKind::Curtailment {
                lambda_cm,
                threshold_factor,
            } => &[*lambda_cm, *threshold_factor],
            ObjectiveKind::LqPenalized { c1, c2 } => &[*c1, *c2],
        };
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!("objective weights must be non-negative: {:?}", self.kind)));
        }
        if self.target.is_empty() || self.target.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("target trajectory must be non-empty and finite".into()));
        }
        if let Some(th) = &self.threshold {
            if th.len() != self.target.len() {
                return Err(Error::InvalidInput("threshold and target lengths differ".into()));
            }
            if th.iter().zip(&self.target).any(|(t, m)| !(t >= m)) {
                return Err(Error::InvalidInput("curtailment threshold must not undercut the target".into()));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.target.len()
    }

    #[inline]
    pub fn target_at(&self, k: usize) -> f64 {
        self.target[k]
    }

    pub fn threshold_at(&self, k: usize) -> f64 {
        match (&self.threshold, &self.kind) {
            (Some(th), _) => th[k],
            (None, ObjectiveKind::Curtailment { threshold_factor, .. }) => threshold_factor * self.target[k],
            (None, _) => DEFAULT_THRESHOLD_FACTOR * self.target[k],
        }
    }

    /// Stepwise cost at step `k` for output `x`, battery rate `b` and SoC `i`.
    pub fn step_cost(&self, x: f64, b: f64, k: usize, i: f64, battery: &BatterySpec) -> f64 {
        let dev = x - b - self.target[k];
        match self.kind {
            ObjectiveKind::Quadratic => dev * dev,
            ObjectiveKind::L1 => dev.abs(),
            ObjectiveKind::Degradation { lambda_bl } => dev * dev + lambda_bl * degradation_penalty(b, i, battery.i_max),
            ObjectiveKind::Curtailment { lambda_cm, .. } => {
                dev * dev + lambda_cm * (x - b - self.threshold_at(k)).max(0.0)
            }
            ObjectiveKind::LqPenalized { c1, c2 } => {
                let di = i - battery.i_mid();
                dev * dev + c1 * b * b + c2 * di * di
            }
        }
    }

    /// Whether the cost is differentiable in `b` away from `b = 0`.
    pub fn is_smooth_in_b(&self) -> bool {
        match self.kind {
            ObjectiveKind::Quadratic | ObjectiveKind::Degradation { .. } | ObjectiveKind::LqPenalized { .. } => true,
            ObjectiveKind::L1 => false,
            ObjectiveKind::Curtailment { lambda_cm, .. } => lambda_cm == 0.0,
        }
    }

    /// Rates `b` at which the cost has a kink, other than `b = 0`.
    pub fn kinks(&self, x: f64, k: usize) -> Vec<f64> {
        match self.kind {
            ObjectiveKind::L1 => vec![x - self.target[k]],
            ObjectiveKind::Curtailment { lambda_cm, .. } if lambda_cm > 0.0 => vec![x - self.threshold_at(k)],
            _ => Vec::new(),
        }
    }

    /// Partial derivative of [`step_cost`](Self::step_cost) in `b` for `b != 0` on smooth kinds.
    pub fn step_cost_db(&self, x: f64, b: f64, k: usize, i: f64, battery: &BatterySpec) -> f64 {
        let dev = x - b - self.target[k];
        match self.kind {
            ObjectiveKind::Quadratic => -2.0 * dev,
            ObjectiveKind::L1 => -dev.signum(),
            ObjectiveKind::Degradation { lambda_bl } => {
                let phi = if b < 0.0 { -soc_weight(i, battery.i_max) } else { 0.0 };
                -2.0 * dev + lambda_bl * phi
            }
            ObjectiveKind::Curtailment { lambda_cm, .. } => {
                let over = if x - b > self.threshold_at(k) { 1.0 } else { 0.0 };
                -2.0 * dev - lambda_cm * over
            }
            ObjectiveKind::LqPenalized { c1, .. } => -2.0 * dev + 2.0 * c1 * b,
        }
    }
}

#[inline]
fn soc_weight(i: f64, i_max: f64) -> f64 {
    let r = i / i_max;
    1.0 - 0.5 * r * r
}

/// Discharge stress `(1 - 0.5 (i / i_max)^2) * max(-b, 0)`.
pub fn degradation_penalty(b: f64, i: f64, i_max: f64) -> f64 {
    soc_weight(i, i_max) * (-b).max(0.0)
}

/// Terminal penalty `P (i_T - i_target)^2`.
pub fn terminal_cost(battery: &BatterySpec, i_t: f64) -> f64 {
    battery.terminal_cost(i_t)
}

/// Half-cycle depths as fractions of capacity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HalfCycleSet {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
}

impl HalfCycleSet {
    pub fn total_depth(&self) -> f64 {
        self.charge.iter().chain(&self.discharge).sum()
    }

    pub fn len(&self) -> usize {
        self.charge.len() + self.discharge.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn turning_points(series: &[f64]) -> Vec<f64> {
    let mut tp: Vec<f64> = Vec::with_capacity(series.len());
    for &v in series {
        match tp.len() {
            0 => tp.push(v),
            _ if v == tp[tp.len() - 1] => {}
            1 => tp.push(v),
            n => {
                let (a, b) = (tp[n - 2], tp[n - 1]);
                if (b - a) * (v - b) > 0.0 {
                    tp[n - 1] = v;
                } else {
                    tp.push(v);
                }
            }
        }
    }
    tp
}

/// Four-point rainflow decomposition of an SoC path normalised by `i_cap`.
///
/// Each closed cycle contributes one charge and one discharge half-cycle of the
/// same depth; unclosed residual excursions count as single half-cycles.
pub fn rainflow(soc: &[f64], i_cap: f64) -> HalfCycleSet {
    let mut out = HalfCycleSet::default();
    let mut stack: Vec<f64> = Vec::new();
    for p in turning_points(soc) {
        stack.push(p / i_cap);
        while stack.len() >= 4 {
            let n = stack.len();
            let (a, b, c, d) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (b - c).abs();
            if inner <= (a - b).abs() && inner <= (c - d).abs() {
                out.charge.push(inner);
                out.discharge.push(inner);
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        let delta = w[1] - w[0];
        if delta > 0.0 {
            out.charge.push(delta);
        } else if delta < 0.0 {
            out.discharge.push(-delta);
        }
    }
    out
}

/// Stress of one full cycle of depth `dod`.
pub fn theta(dod: f64) -> f64 {
    THETA_COEF * dod.powf(THETA_EXP)
}

/// Fractional capacity loss `sum(theta(depth)) / 2` over all half-cycles.
pub fn degradation(cycles: &HalfCycleSet) -> f64 {
    cycles.charge.iter().chain(&cycles.discharge).map(|d| theta(*d)).sum::<f64>() / 2.0
}
