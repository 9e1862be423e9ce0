//! Fitting the forecast-binned hourly model from actual/forecast ratio profiles.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{bin_index, calibrated_step, CalibratedModel};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats::quantile_sorted;

pub const DEFAULT_BINS: usize = 10;
/// Lower and upper quantile levels of the coverage band.
pub const ECR_BAND: (f64, f64) = (0.1, 0.9);

/// One day of hourly generation ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub label: String,
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
}

/// Hourly actual and forecast ratios for one asset, grouped by day.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileSeries {
    pub days: Vec<DayProfile>,
}

impl ProfileSeries {
    pub fn validate(&self) -> Result<()> {
        if self.days.is_empty() {
            return Err(Error::Profile("no days in series".into()));
        }
        for d in &self.days {
            if d.actual.len() != d.forecast.len() {
                return Err(Error::Profile(format!("day {}: actual and forecast lengths differ", d.label)));
            }
            if d.actual.len() < 2 {
                return Err(Error::Profile(format!("day {}: at least 2 hourly records needed", d.label)));
            }
            if d.actual.iter().chain(&d.forecast).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Profile(format!("day {}: ratios must lie in [0, 1]", d.label)));
            }
        }
        Ok(())
    }

    pub fn n_records(&self) -> usize {
        self.days.iter().map(|d| d.actual.len()).sum()
    }

    pub fn forecasts(&self) -> Vec<f64> {
        self.days.iter().flat_map(|d| d.forecast.iter().copied()).collect()
    }

    pub fn day(&self, label: &str) -> Option<&DayProfile> {
        self.days.iter().find(|d| d.label == label)
    }
}

/// Decile edges of the forecast sample and the resulting bin of every record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinAssignment {
    pub edges: Vec<f64>,
    pub bins: Vec<usize>,
    pub counts: Vec<usize>,
    /// True when tied edges leave at least one bin empty.
    pub degenerate: bool,
}

/// Equi-probable binning: inner edges are the order statistics at ranks `floor(r n / n_bins)`,
/// outer edges 0 and 1; a forecast equal to an edge falls in the lower bin.
pub fn assign_bins(forecasts: &[f64], n_bins: usize) -> Result<BinAssignment> {
    if n_bins == 0 || forecasts.len() < n_bins {
        return Err(Error::InvalidInput(format!(
            "need at least {n_bins} records for {n_bins} bins, got {}",
            forecasts.len()
        )));
    }
    let mut sorted = forecasts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::with_capacity(n_bins + 1);
    edges.push(0.0f64.min(sorted[0]));
    for r in 1..n_bins {
        edges.push(sorted[r * n / n_bins - 1]);
    }
    edges.push(1.0f64.max(sorted[n - 1]));
    let bins: Vec<usize> = forecasts.iter().map(|f| bin_index(&edges, *f)).collect();
    let mut counts = vec![0; n_bins];
    for b in &bins {
        counts[*b] += 1;
    }
    let degenerate = counts.contains(&0);
    if degenerate {
        warn!("forecast deciles are tied; bin populations {counts:?}");
    }
    Ok(BinAssignment {
        edges,
        bins,
        counts,
        degenerate,
    })
}

/// An increment pair `(A_{k+1} - A_k, F_k - A_k)`.
pub type IncrementPair = (f64, f64);

/// No-intercept least squares `sum(dA * gap) / sum(gap^2)`.
pub fn fit_bin_alpha(pairs: &[IncrementPair]) -> Result<f64> {
    let sxx: f64 = pairs.iter().map(|(_, g)| g * g).sum();
    if pairs.is_empty() || sxx == 0.0 {
        return Err(Error::Inestimable("mean-reversion rate (no gap variation)"));
    }
    let sxy: f64 = pairs.iter().map(|(d, g)| d * g).sum();
    Ok(sxy / sxx)
}

/// Population standard deviation of the residuals and the standardised residual bank.
pub fn fit_bin_sigma(pairs: &[IncrementPair], alpha: f64) -> (f64, Vec<f64>) {
    if pairs.is_empty() {
        return (0.0, Vec::new());
    }
    let resid: Vec<f64> = pairs.iter().map(|(d, g)| d - alpha * g).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let sigma = (resid.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sigma > 0.0 {
        (sigma, resid.iter().map(|e| e / sigma).collect())
    } else {
        (0.0, vec![0.0; resid.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Zero,
    One,
}

/// Share of consecutive in-day hour pairs with the forecast staying at `boundary`.
/// `None` when the forecast never sits at the boundary with a successor hour.
pub fn estimate_point_mass(series: &ProfileSeries, boundary: Boundary) -> Option<f64> {
    let level = match boundary {
        Boundary::Zero => 0.0,
        Boundary::One => 1.0,
    };
    let (mut hits, mut stays) = (0usize, 0usize);
    for d in &series.days {
        for w in d.forecast.windows(2) {
            if w[0] == level {
                hits += 1;
                if w[1] == level {
                    stays += 1;
                }
            }
        }
    }
    (hits > 0).then(|| stays as f64 / hits as f64)
}

/// Per-bin diagnostics of a calibration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub record_counts: Vec<usize>,
    pub pair_counts: Vec<usize>,
    /// Standard error of each fitted mean-reversion rate; `None` where it is undefined.
    pub alpha_se: Vec<Option<f64>>,
    pub degenerate_bins: bool,
    /// Bins with no usable increments, whose parameters were borrowed from the nearest populated bin.
    pub borrowed_bins: Vec<usize>,
    /// Bins where the rate was inestimable and set to 0.
    pub inestimable_bins: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: CalibratedModel,
    pub report: CalibrationReport,
}

/// Fits the binned model: decile bins on all forecasts, then per-bin rate, volatility and
/// residual bank from within-day increments, plus boundary point masses.
pub fn calibrate(series: &ProfileSeries, n_bins: usize) -> Result<Calibration> {
    series.validate()?;
    let assignment = assign_bins(&series.forecasts(), n_bins)?;
    let mut pairs: Vec<Vec<IncrementPair>> = vec![Vec::new(); n_bins];
    for d in &series.days {
        for k in 0..d.actual.len() - 1 {
            let r = bin_index(&assignment.edges, d.forecast[k]);
            pairs[r].push((d.actual[k + 1] - d.actual[k], d.forecast[k] - d.actual[k]));
        }
    }

    let mut alpha = vec![0.0; n_bins];
    let mut sigma = vec![0.0; n_bins];
    let mut banks = vec![Vec::new(); n_bins];
    let mut alpha_se = vec![None; n_bins];
    let mut inestimable = Vec::new();
    for r in 0..n_bins {
        if pairs[r].is_empty() {
            continue;
        }
        let a = match fit_bin_alpha(&pairs[r]) {
            Ok(a) => a,
            Err(_) => {
                inestimable.push(r);
                0.0
            }
        };
        let (s, bank) = fit_bin_sigma(&pairs[r], a);
        let sxx: f64 = pairs[r].iter().map(|(_, g)| g * g).sum();
        alpha_se[r] = (sxx > 0.0).then(|| s / sxx.sqrt());
        alpha[r] = a;
        sigma[r] = s;
        banks[r] = bank;
    }

    let populated: Vec<usize> = (0..n_bins).filter(|r| !banks[*r].is_empty()).collect();
    if populated.is_empty() {
        return Err(Error::Profile("no within-day increments to fit".into()));
    }
    let mut borrowed = Vec::new();
    for r in 0..n_bins {
        if banks[r].is_empty() {
            let src = *populated
                .iter()
                .min_by_key(|p| (p.abs_diff(r), **p > r))
                .expect("non-empty");
            alpha[r] = alpha[src];
            sigma[r] = sigma[src];
            banks[r] = banks[src].clone();
            borrowed.push(r);
        }
    }

    let model = CalibratedModel {
        bin_edges: assignment.edges,
        alpha,
        sigma,
        residual_banks: banks,
        p_zero: estimate_point_mass(series, Boundary::Zero),
        p_one: estimate_point_mass(series, Boundary::One),
    };
    model.validate()?;
    Ok(Calibration {
        model,
        report: CalibrationReport {
            record_counts: assignment.counts,
            pair_counts: pairs.iter().map(Vec::len).collect(),
            alpha_se,
            degenerate_bins: assignment.degenerate,
            borrowed_bins: borrowed,
            inestimable_bins: inestimable,
        },
    })
}

/// Fraction of hours whose actual lies inside the hourly `[q_0.1, q_0.9]` scenario band.
/// `scenarios[p][k]` is path `p` at hour `k`.
pub fn ecr(actual: &[f64], scenarios: &[Vec<f64>]) -> Result<f64> {
    if scenarios.is_empty() || scenarios.iter().any(|s| s.len() != actual.len()) || actual.is_empty() {
        return Err(Error::InvalidInput("scenario matrix must be non-empty and match the actual profile".into()));
    }
    let mut column = vec![0.0; scenarios.len()];
    let mut covered = 0usize;
    for (k, a) in actual.iter().enumerate() {
        for (c, s) in column.iter_mut().zip(scenarios) {
            *c = s[k];
        }
        column.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&column, ECR_BAND.0);
        let hi = quantile_sorted(&column, ECR_BAND.1);
        if *a >= lo && *a <= hi {
            covered += 1;
        }
    }
    Ok(covered as f64 / actual.len() as f64)
}

/// Settings for synthetic profile generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_days: usize,
    pub hours: usize,
    /// Per-bin rates and volatilities of the generating model.
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    pub p_zero: Option<f64>,
    pub p_one: Option<f64>,
    /// Range of the daily forecast level before clipping to `[0, 1]`.
    pub level: (f64, f64),
    pub amplitude: f64,
    pub forecast_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_days: 365,
            hours: 24,
            alpha: vec![0.5, 0.45, 0.4, 0.35, 0.3, 0.3, 0.35, 0.4, 0.45, 0.5],
            sigma: vec![0.02, 0.04, 0.06, 0.08, 0.09, 0.09, 0.08, 0.06, 0.04, 0.03],
            p_zero: Some(0.75),
            p_one: Some(0.35),
            level: (-0.2, 1.1),
            amplitude: 0.3,
            forecast_noise: 0.05,
        }
    }
}

/// Synthetic year of profiles together with the model that generated the actuals.
///
/// Forecasts are diurnal sinusoids with a random daily level, clipped to `[0, 1]`.
/// The generating model uses the decile edges of those forecasts, Gaussian shocks,
/// and starts each day at the first-hour forecast.
pub fn synthetic_profiles(spec: &SyntheticSpec, seed: u64) -> Result<(ProfileSeries, CalibratedModel)> {
    let n_bins = spec.alpha.len();
    if spec.sigma.len() != n_bins || spec.hours < 2 || spec.n_days == 0 {
        return Err(Error::InvalidInput("inconsistent synthetic spec".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut forecasts = Vec::with_capacity(spec.n_days);
    for _ in 0..spec.n_days {
        let level = rng.random_range(spec.level.0..spec.level.1);
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let f: Vec<f64> = (0..spec.hours)
            .map(|k| {
                let diurnal = spec.amplitude * (std::f64::consts::TAU * k as f64 / 24.0 + phase).sin();
                let z: f64 = rng.sample(StandardNormal);
                (level + diurnal + spec.forecast_noise * z).clamp(0.0, 1.0)
            })
            .collect();
        forecasts.push(f);
    }
    let flat: Vec<f64> = forecasts.iter().flatten().copied().collect();
    let edges = assign_bins(&flat, n_bins)?.edges;
    let mut bank_rng = stream_rng(seed, 1);
    let banks: Vec<Vec<f64>> = (0..n_bins)
        .map(|_| (0..4096).map(|_| bank_rng.sample(StandardNormal)).collect())
        .collect();
    let truth = CalibratedModel {
        bin_edges: edges,
        alpha: spec.alpha.clone(),
        sigma: spec.sigma.clone(),
        residual_banks: banks,
        p_zero: spec.p_zero,
        p_one: spec.p_one,
    };
    truth.validate()?;

    let mut path_rng = stream_rng(seed, 2);
    let mut days = Vec::with_capacity(spec.n_days);
    for (d, f) in forecasts.into_iter().enumerate() {
        let mut a = Vec::with_capacity(spec.hours);
        a.push(f[0]);
        for k in 0..spec.hours - 1 {
            let next = calibrated_step(a[k], f[k], &truth, &mut path_rng)?;
            a.push(next);
        }
        days.push(DayProfile {
            label: format!("day{:03}", d + 1),
            actual: a,
            forecast: f,
        });
    }
    Ok((ProfileSeries { days }, truth))
}
