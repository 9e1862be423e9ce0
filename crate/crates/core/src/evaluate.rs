//! Monte Carlo rollouts of dispatch policies and the reported metrics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_paths, BatterySpec, WindModel};
use crate::error::{Error, Result};
use crate::lq_baseline::LqPolicy;
use crate::objectives::{degradation, rainflow, Objective};
use crate::solver::Policy;
use crate::stats;

/// Lifetime reported for paths that never cycle the battery.
pub const EBL_CAP_YEARS: f64 = 100.0;

/// Quantile levels of the reported confidence bands.
pub const BAND_LEVELS: (f64, f64) = (0.1, 0.9);

/// Anything that returns a feasible rate for `(k, x, i)`.
pub trait ControlPolicy {
    fn control(&self, k: usize, x: f64, i: f64) -> f64;
}

impl ControlPolicy for Policy {
    fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        Policy::control(self, k, x, i)
    }
}

impl ControlPolicy for LqPolicy {
    fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        LqPolicy::control(self, k, x, i)
    }
}

/// Battery left idle.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl ControlPolicy for ZeroPolicy {
    fn control(&self, _k: usize, _x: f64, _i: f64) -> f64 {
        0.0
    }
}

impl<F: Fn(usize, f64, f64) -> f64> ControlPolicy for F {
    fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        self(k, x, i)
    }
}

/// One simulated or replayed day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub path_id: u64,
    /// Generation `X_0..X_{K-1}`.
    pub x: Vec<f64>,
    pub b: Vec<f64>,
    /// SoC `I_0..I_K`.
    pub soc: Vec<f64>,
    /// Firmed output `X_k - B_k`.
    pub output: Vec<f64>,
    /// `f(X_k, B_k, k, I_k) dt` per step.
    pub step_costs: Vec<f64>,
    pub terminal_cost: f64,
}

impl Trajectory {
    pub fn cost(&self) -> f64 {
        self.step_costs.iter().sum::<f64>() + self.terminal_cost
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Applies `policy` along each generation path (`K` or more states; the first `K` are used).
pub fn rollout_paths<P: ControlPolicy + ?Sized>(
    policy: &P,
    paths: &[Vec<f64>],
    battery: &BatterySpec,
    objective: &Objective,
    i0: f64,
    dt: f64,
) -> Result<Vec<Trajectory>> {
    let n_steps = objective.n_steps();
    paths
        .iter()
        .enumerate()
        .map(|(p, path)| {
            if path.len() < n_steps {
                return Err(Error::InvalidInput(format!(
                    "path {p} has {} states, need {n_steps}",
                    path.len()
                )));
            }
            let mut tr = Trajectory {
                path_id: p as u64,
                x: path[..n_steps].to_vec(),
                b: Vec::with_capacity(n_steps),
                soc: Vec::with_capacity(n_steps + 1),
                output: Vec::with_capacity(n_steps),
                step_costs: Vec::with_capacity(n_steps),
                terminal_cost: 0.0,
            };
            let mut i = i0;
            tr.soc.push(i);
            for k in 0..n_steps {
                let x = path[k];
                let b = policy.control(k, x, i);
                let next = battery.soc_step(i, b, dt).map_err(|e| match e {
                    Error::StateDomain { value, lo, hi, .. } => Error::StateDomain { value, lo, hi, step: k },
                    other => other,
                })?;
                tr.step_costs.push(objective.step_cost(x, b, k, i, battery) * dt);
                tr.b.push(b);
                tr.output.push(x - b);
                i = next;
                tr.soc.push(i);
            }
            tr.terminal_cost = battery.terminal_cost(i);
            Ok(tr)
        })
        .collect()
}

/// Simulates `n_paths` generation paths from `x0` and rolls `policy` out along them.
///
/// Paths depend only on `seed`, so policies evaluated with the same seed share common random numbers.
pub fn rollout<P: ControlPolicy + ?Sized>(
    policy: &P,
    model: &WindModel,
    battery: &BatterySpec,
    objective: &Objective,
    x0: f64,
    i0: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let paths = simulate_paths(model, x0, n_paths, objective.n_steps(), seed)?;
    rollout_paths(policy, &paths, battery, objective, i0, model.dt())
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Like [`from_samples`](Self::from_samples) but a single sample gets an undefined (NaN) error.
    pub fn of(values: &[f64]) -> Result<Self> {
        match values {
            [] => Err(Error::InvalidInput("no samples".into())),
            [v] => Ok(Self { mean: *v, se: f64::NAN }),
            _ => Self::from_samples(values),
        }
    }

    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("an estimate needs at least 2 samples".into()));
        }
        Ok(Self {
            mean: stats::mean(values),
            se: stats::std_error(values),
        })
    }
}

pub fn value_estimate(trajectories: &[Trajectory]) -> Result<Estimate> {
    let costs: Vec<f64> = trajectories.iter().map(Trajectory::cost).collect();
    Estimate::from_samples(&costs)
}

/// Percentage reduction of the absolute deviation from `forecast`.
pub fn deviation_reduction(actual: &[f64], firmed: &[f64], forecast: &[f64]) -> Result<f64> {
    if actual.len() != firmed.len() || actual.len() != forecast.len() {
        return Err(Error::InvalidInput("deviation paths differ in length".into()));
    }
    let base: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f).abs()).sum();
    if base <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let firm: f64 = firmed.iter().zip(forecast).map(|(o, f)| (o - f).abs()).sum();
    Ok((base - firm) / base * 100.0)
}

/// Mean of per-path deviation reductions; paths with zero baseline deviation are skipped.
pub fn expected_deviation_reduction(trajectories: &[Trajectory], forecast: &[f64]) -> Result<(Estimate, usize)> {
    let mut dr = Vec::with_capacity(trajectories.len());
    let mut skipped = 0;
    for t in trajectories {
        match deviation_reduction(&t.x, &t.output, &forecast[..t.len()]) {
            Ok(v) => dr.push(v),
            Err(Error::ZeroBaseline) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if dr.is_empty() {
        return Err(Error::ZeroBaseline);
    }
    Ok((Estimate::of(&dr)?, skipped))
}

/// Ratio-of-sums deviation reduction pooled over paths.
pub fn pooled_deviation_reduction(trajectories: &[Trajectory], forecast: &[f64]) -> Result<f64> {
    let (mut base, mut firm) = (0.0, 0.0);
    for t in trajectories {
        for k in 0..t.len() {
            base += (t.x[k] - forecast[k]).abs();
            firm += (t.output[k] - forecast[k]).abs();
        }
    }
    if base <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((base - firm) / base * 100.0)
}

/// Battery life in years implied by one day's SoC path.
pub fn path_life_years(soc: &[f64], i_cap: f64) -> f64 {
    let loss = degradation(&rainflow(soc, i_cap));
    if loss <= 0.0 {
        return EBL_CAP_YEARS;
    }
    (1.0 / loss / 365.0).min(EBL_CAP_YEARS)
}

pub fn expected_battery_life(trajectories: &[Trajectory], i_cap: f64) -> Result<Estimate> {
    if trajectories.is_empty() {
        return Err(Error::InvalidInput("no trajectories".into()));
    }
    let years: Vec<f64> = trajectories.iter().map(|t| path_life_years(&t.soc, i_cap)).collect();
    Estimate::of(&years)
}

/// Mean over paths of the summed exceedance of `thresholds`.
pub fn expected_cumulative_violation(trajectories: &[Trajectory], thresholds: &[f64]) -> Result<Estimate> {
    if trajectories.is_empty() {
        return Err(Error::InvalidInput("no trajectories".into()));
    }
    let mut v = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        if thresholds.len() < t.len() {
            return Err(Error::InvalidInput("threshold profile shorter than the path".into()));
        }
        v.push(t.output.iter().zip(thresholds).map(|(o, m)| (o - m).max(0.0)).sum::<f64>());
    }
    Estimate::of(&v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourBand {
    pub step: usize,
    pub raw_lo: f64,
    pub raw_hi: f64,
    pub firmed_lo: f64,
    pub firmed_hi: f64,
}

impl HourBand {
    pub fn raw_width(&self) -> f64 {
        self.raw_hi - self.raw_lo
    }

    pub fn firmed_width(&self) -> f64 {
        self.firmed_hi - self.firmed_lo
    }
}

/// Per-step quantile bands of `X - F` and `O - F`.
pub fn quantile_bands(trajectories: &[Trajectory], forecast: &[f64], levels: (f64, f64)) -> Result<Vec<HourBand>> {
    let Some(first) = trajectories.first() else {
        return Err(Error::InvalidInput("no trajectories".into()));
    };
    let n_steps = first.len();
    if forecast.len() < n_steps {
        return Err(Error::InvalidInput("forecast shorter than the paths".into()));
    }
    (0..n_steps)
        .map(|k| {
            let mut raw: Vec<f64> = trajectories.iter().map(|t| t.x[k] - forecast[k]).collect();
            let mut firm: Vec<f64> = trajectories.iter().map(|t| t.output[k] - forecast[k]).collect();
            raw.sort_by(f64::total_cmp);
            firm.sort_by(f64::total_cmp);
            Ok(HourBand {
                step: k,
                raw_lo: stats::quantile_sorted(&raw, levels.0),
                raw_hi: stats::quantile_sorted(&raw, levels.1),
                firmed_lo: stats::quantile_sorted(&firm, levels.0),
                firmed_hi: stats::quantile_sorted(&firm, levels.1),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_paths: usize,
    pub value: Estimate,
    /// Mean per-path deviation reduction (percent).
    pub edr: Estimate,
    pub edr_skipped_paths: usize,
    pub pooled_dr: f64,
    pub ebl_years: Estimate,
    pub ecv: Option<Estimate>,
    /// Scenario coverage, only when scenarios were scored against recorded actuals.
    pub ecr: Option<f64>,
    pub bands: Vec<HourBand>,
}

/// All metrics for a set of trajectories; `forecast` is the firming target profile.
pub fn metrics(
    trajectories: &[Trajectory],
    forecast: &[f64],
    battery: &BatterySpec,
    thresholds: Option<&[f64]>,
) -> Result<MetricsReport> {
    let (edr, skipped) = expected_deviation_reduction(trajectories, forecast)?;
    Ok(MetricsReport {
        n_paths: trajectories.len(),
        value: Estimate::of(&trajectories.iter().map(Trajectory::cost).collect::<Vec<_>>())?,
        edr,
        edr_skipped_paths: skipped,
        pooled_dr: pooled_deviation_reduction(trajectories, forecast)?,
        ebl_years: expected_battery_life(trajectories, battery.i_max)?,
        ecv: thresholds.map(|m| expected_cumulative_violation(trajectories, m)).transpose()?,
        ecr: None,
        bands: quantile_bands(trajectories, forecast, BAND_LEVELS)?,
    })
}

/// Delimited dump with one row per path and step.
pub fn write_trajectories_csv<W: std::io::Write>(writer: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["path", "step", "x", "b", "soc", "output", "step_cost"])
        .map_err(csv_err)?;
    for t in trajectories {
        for k in 0..t.len() {
            w.write_record(&[
                t.path_id.to_string(),
                k.to_string(),
                t.x[k].to_string(),
                t.b[k].to_string(),
                t.soc[k].to_string(),
                t.output[k].to_string(),
                t.step_costs[k].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Profile(e.to_string())
}
