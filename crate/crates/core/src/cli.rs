//! Run configuration, profile ingestion and the subcommand drivers behind the binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, ecr, synthetic_profiles, Calibration, DayProfile, ProfileSeries, SyntheticSpec, DEFAULT_BINS};
use crate::design::DesignConfig;
use crate::dynamics::{BatterySpec, CalibratedModel, JacobiParams, WindModel};
use crate::error::{Error, Result};
use crate::evaluate::{self, ControlPolicy, MetricsReport, Trajectory};
use crate::lq_baseline::{sweep_weights, weight_grid, LqParams, LqPolicy, DEFAULT_SUBSTEPS};
use crate::objectives::{Objective, ObjectiveKind, DEFAULT_THRESHOLD_FACTOR};
use crate::solver::{backward_solve, Policy, Problem, SolverConfig};

// ---------------------------------------------------------------------------
// configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Jacobi {
        alpha: f64,
        m: f64,
        sigma: f64,
        x_max: f64,
    },
    /// Calibrated hourly model; the forecast comes from `forecast` or from day `day` of `profiles`.
    Calibrated {
        path: PathBuf,
        #[serde(default)]
        forecast: Option<Vec<f64>>,
        #[serde(default)]
        profiles: Option<PathBuf>,
        #[serde(default)]
        day: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySection {
    pub b_max: f64,
    /// Defaults to `-b_max`.
    #[serde(default)]
    pub b_min: Option<f64>,
    /// Capacity; may be given instead of, or together with, `duration`.
    #[serde(default)]
    pub i_cap: Option<f64>,
    /// Hours at rated power, `i_cap / b_max`.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub soc_min: f64,
    #[serde(default = "one")]
    pub soc_max: f64,
    #[serde(default = "one")]
    pub eta: f64,
    /// Absolute terminal SoC target; defaults to the middle of the window.
    #[serde(default)]
    pub i_target: Option<f64>,
    pub terminal_penalty: f64,
    /// Initial SoC; defaults to the terminal target.
    #[serde(default)]
    pub i0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Day-ahead forecast of the calibrated model.
    Forecast,
    /// Long-run mean `m` of the Jacobi model.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Constant(f64),
    Source(TargetSource),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Quadratic,
    L1,
    Degradation,
    Curtailment,
    LqPenalized,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: Option<ObjectiveName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    /// Defaults to the forecast for calibrated models and `m` for the Jacobi model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
}

impl ObjectiveSection {
    pub fn from_kind(kind: &ObjectiveKind, target: Option<TargetSpec>) -> Self {
        let mut s = Self {
            target,
            ..Self::default()
        };
        s.set_kind(kind);
        s
    }

    pub fn set_kind(&mut self, kind: &ObjectiveKind) {
        let target = self.target.take();
        *self = Self {
            target,
            ..Self::default()
        };
        self.kind = Some(match *kind {
            ObjectiveKind::Quadratic => ObjectiveName::Quadratic,
            ObjectiveKind::L1 => ObjectiveName::L1,
            ObjectiveKind::Degradation { lambda_bl } => {
                self.lambda_bl = Some(lambda_bl);
                ObjectiveName::Degradation
            }
            ObjectiveKind::Curtailment {
                lambda_cm,
                threshold_factor,
            } => {
                self.lambda_cm = Some(lambda_cm);
                self.threshold_factor = Some(threshold_factor);
                ObjectiveName::Curtailment
            }
            ObjectiveKind::LqPenalized { c1, c2 } => {
                self.c1 = Some(c1);
                self.c2 = Some(c2);
                ObjectiveName::LqPenalized
            }
        });
    }

    /// Objective kind; weights that do not belong to the kind are rejected.
    pub fn kind(&self) -> Result<ObjectiveKind> {
        let name = self.kind.ok_or_else(|| Error::Config("objective.kind is required".into()))?;
        let given = [
            ("lambda_bl", self.lambda_bl.is_some()),
            ("lambda_cm", self.lambda_cm.is_some()),
            ("threshold_factor", self.threshold_factor.is_some()),
            ("c1", self.c1.is_some()),
            ("c2", self.c2.is_some()),
        ];
        let allowed: &[&str] = match name {
            ObjectiveName::Quadratic | ObjectiveName::L1 => &[],
            ObjectiveName::Degradation => &["lambda_bl"],
            ObjectiveName::Curtailment => &["lambda_cm", "threshold_factor"],
            ObjectiveName::LqPenalized => &["c1", "c2"],
        };
        if let Some((key, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            return Err(Error::Config(format!("objective key `{key}` does not apply to {name:?}")));
        }
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("objective.{key} is required")));
        Ok(match name {
            ObjectiveName::Quadratic => ObjectiveKind::Quadratic,
            ObjectiveName::L1 => ObjectiveKind::L1,
            ObjectiveName::Degradation => ObjectiveKind::Degradation {
                lambda_bl: need(self.lambda_bl, "lambda_bl")?,
            },
            ObjectiveName::Curtailment => ObjectiveKind::Curtailment {
                lambda_cm: need(self.lambda_cm, "lambda_cm")?,
                threshold_factor: self.threshold_factor.unwrap_or(DEFAULT_THRESHOLD_FACTOR),
            },
            ObjectiveName::LqPenalized => ObjectiveKind::LqPenalized {
                c1: need(self.c1, "c1")?,
                c2: need(self.c2, "c2")?,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Control steps; calibrated models take it from the forecast length.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Initial generation; defaults to the target at step 0.
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_paths() -> usize {
    2000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_sanity")]
    pub sanity_ratio: f64,
    #[serde(default = "default_scan")]
    pub scan_points: usize,
}

fn default_sanity() -> f64 {
    SolverConfig::default().sanity_ratio
}

fn default_scan() -> usize {
    SolverConfig::default().scan_points
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            sanity_ratio: default_sanity(),
            scan_points: default_scan(),
        }
    }
}

/// Top-level TOML run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub battery: BatterySection,
    pub objective: ObjectiveSection,
    #[serde(default = "desk_design")]
    pub design: DesignConfig,
    #[serde(default)]
    pub solver: SolverSection,
    pub run: RunSection,
}

/// Desk-scale design defaults.
pub fn desk_design() -> DesignConfig {
    DesignConfig {
        n_loc: 200,
        n_rep: 20,
        n_b: 200,
        ..DesignConfig::default()
    }
}

/// Full-size design (640 sites, 50 replicates).
pub fn paper_design(base: &DesignConfig) -> DesignConfig {
    DesignConfig {
        n_loc: 640,
        n_rep: 50,
        n_b: 640,
        ..base.clone()
    }
}

/// Configuration resolved into solver inputs.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub problem: Problem,
    pub solver: SolverConfig,
    pub seed: u64,
    pub n_paths: usize,
    pub out_dir: PathBuf,
    /// Recorded generation for the configured day, when it came from a profile file.
    pub actual: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `path`; relative file references are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let ModelSection::Calibrated { path, profiles, .. } = &mut cfg.model {
            *path = rebase(base, path);
            if let Some(p) = profiles {
                *p = rebase(base, p);
            }
        }
        cfg.run.out_dir = rebase(base, &cfg.run.out_dir);
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn battery_spec(&self) -> Result<BatterySpec> {
        let b = &self.battery;
        let i_cap = match (b.i_cap, b.duration) {
            (Some(cap), Some(h)) => {
                if (cap - h * b.b_max).abs() > 1e-9 * cap.abs().max(1.0) {
                    return Err(Error::Config(format!(
                        "battery i_cap = {cap} disagrees with duration {h} h at b_max = {}",
                        b.b_max
                    )));
                }
                cap
            }
            (Some(cap), None) => cap,
            (None, Some(h)) => h * b.b_max,
            (None, None) => return Err(Error::Config("battery needs i_cap or duration".into())),
        };
        let (lo, hi) = (b.soc_min * i_cap, b.soc_max * i_cap);
        let i_target = b.i_target.unwrap_or(0.5 * (lo + hi));
        BatterySpec::from_capacity(
            i_cap,
            b.soc_min,
            b.soc_max,
            b.b_min.unwrap_or(-b.b_max),
            b.b_max,
            b.eta,
            i_target,
            b.terminal_penalty,
        )
    }

    /// Builds the model, objective and solver settings, reading any referenced files.
    pub fn resolve(&self) -> Result<Resolved> {
        let battery = self.battery_spec()?;
        let (model, default_target, actual) = match &self.model {
            ModelSection::Jacobi { alpha, m, sigma, x_max } => {
                let k = self
                    .run
                    .n_steps
                    .ok_or_else(|| Error::Config("run.n_steps is required for the Jacobi model".into()))?;
                let dt = self
                    .run
                    .dt
                    .ok_or_else(|| Error::Config("run.dt is required for the Jacobi model".into()))?;
                let p = JacobiParams::stationary(*alpha, *m, *sigma, *x_max, dt, k)?;
                (WindModel::Jacobi(p), vec![*m; k], None)
            }
            ModelSection::Calibrated {
                path,
                forecast,
                profiles,
                day,
            } => {
                let model = load_calibrated(path)?;
                let (forecast, actual) = match (forecast, profiles, day) {
                    (Some(f), None, None) => (f.clone(), None),
                    (None, Some(p), Some(d)) => {
                        let series = load_profiles(p)?;
                        let day = series
                            .day(d)
                            .ok_or_else(|| Error::Config(format!("day {d} not found in {}", p.display())))?;
                        (day.forecast.clone(), Some(day.actual.clone()))
                    }
                    _ => {
                        return Err(Error::Config(
                            "calibrated model needs either `forecast` or both `profiles` and `day`".into(),
                        ))
                    }
                };
                if let Some(k) = self.run.n_steps {
                    if k != forecast.len() {
                        return Err(Error::Config(format!(
                            "run.n_steps = {k} but the forecast has {} hours",
                            forecast.len()
                        )));
                    }
                }
                if self.run.dt.is_some_and(|dt| dt != 1.0) {
                    return Err(Error::Config("calibrated models are hourly; run.dt must be 1".into()));
                }
                let model = WindModel::Calibrated {
                    model,
                    forecast: forecast.clone(),
                };
                (model, forecast, actual)
            }
        };
        let k = model.n_steps();
        let target = match &self.objective.target {
            None => default_target.clone(),
            Some(TargetSpec::Constant(c)) => vec![*c; k],
            Some(TargetSpec::Source(TargetSource::Forecast)) => match &self.model {
                ModelSection::Calibrated { .. } => default_target.clone(),
                _ => return Err(Error::Config("target = \"forecast\" needs a calibrated model".into())),
            },
            Some(TargetSpec::Source(TargetSource::Mean)) => match &self.model {
                ModelSection::Jacobi { m, .. } => vec![*m; k],
                _ => return Err(Error::Config("target = \"mean\" needs the Jacobi model".into())),
            },
        };
        let mut objective = Objective::new(self.objective.kind()?, target)?;
        if let ObjectiveKind::Curtailment { threshold_factor, .. } = objective.kind {
            let thr = objective.target.iter().map(|m| threshold_factor * m).collect();
            objective = objective.with_threshold(thr)?;
        }
        let x0 = self.run.x0.unwrap_or(objective.target_at(0));
        let i0 = self.battery.i0.unwrap_or(battery.i_target);
        let problem = Problem {
            model,
            battery,
            objective,
            x0,
            i0,
        };
        problem.validate()?;
        let solver = SolverConfig {
            design: self.design.clone(),
            sanity_ratio: self.solver.sanity_ratio,
            scan_points: self.solver.scan_points,
            ..SolverConfig::default()
        };
        Ok(Resolved {
            problem,
            solver,
            seed: self.run.seed,
            n_paths: self.run.n_paths,
            out_dir: self.run.out_dir.clone(),
            actual,
        })
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_calibrated(path: &Path) -> Result<CalibratedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    // either a bare model or a calibrate artifact
    if let Ok(a) = serde_json::from_str::<Artifact<Calibration>>(&text) {
        return Ok(a.payload.model);
    }
    let model: CalibratedModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// profiles

#[derive(Debug, Deserialize)]
struct ProfileRow {
    date: String,
    hour: usize,
    actual: f64,
    forecast: f64,
}

/// Reads `date,hour,actual,forecast` rows into whole days.
pub fn load_profiles(path: &Path) -> Result<ProfileSeries> {
    let file = fs::File::open(path).map_err(|e| Error::Profile(format!("{}: {e}", path.display())))?;
    parse_profiles(file)
}

pub fn parse_profiles<R: std::io::Read>(reader: R) -> Result<ProfileSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut days: BTreeMap<String, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for (n, rec) in rdr.deserialize::<ProfileRow>().enumerate() {
        // data rows are numbered from 1, after the header
        let row_no = n + 1;
        let row = rec.map_err(|e| Error::Profile(format!("row {row_no}: {e}")))?;
        if !is_iso_date(&row.date) {
            return Err(Error::Profile(format!("row {row_no}: date {:?} is not YYYY-MM-DD", row.date)));
        }
        if row.hour > 23 {
            return Err(Error::Profile(format!("row {row_no}: hour {} outside 0..=23", row.hour)));
        }
        for (name, v) in [("actual", row.actual), ("forecast", row.forecast)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Profile(format!("row {row_no}: {name} = {v} outside [0, 1]")));
            }
        }
        if days.entry(row.date.clone()).or_default().insert(row.hour, (row.actual, row.forecast)).is_some() {
            return Err(Error::Profile(format!("row {row_no}: duplicate hour {} on {}", row.hour, row.date)));
        }
    }
    if days.is_empty() {
        return Err(Error::Profile("no data rows".into()));
    }
    let days = days
        .into_iter()
        .map(|(label, hours)| {
            if hours.len() != 24 {
                let missing: Vec<usize> = (0..24).filter(|h| !hours.contains_key(h)).collect();
                return Err(Error::Profile(format!("{label}: missing hours {missing:?}")));
            }
            Ok(DayProfile {
                label,
                actual: hours.values().map(|v| v.0).collect(),
                forecast: hours.values().map(|v| v.1).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let series = ProfileSeries { days };
    series.validate()?;
    Ok(series)
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

pub fn write_profiles<W: std::io::Write>(writer: W, series: &ProfileSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Profile(e.to_string());
    w.write_record(["date", "hour", "actual", "forecast"]).map_err(err)?;
    for d in &series.days {
        for h in 0..d.actual.len() {
            w.write_record(&[d.label.clone(), h.to_string(), d.actual[h].to_string(), d.forecast[h].to_string()])
                .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Consecutive calendar labels starting 2021-01-01 (non-leap year).
pub fn day_labels(n: usize) -> Vec<String> {
    const MONTHS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut out = Vec::with_capacity(n);
    let (mut year, mut month, mut day) = (2021u32, 0usize, 1u32);
    for _ in 0..n {
        out.push(format!("{year:04}-{:02}-{day:02}", month + 1));
        day += 1;
        if day > MONTHS[month] {
            day = 1;
            month += 1;
            if month == 12 {
                month = 0;
                year += 1;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// artifacts

/// Every file written by the tool carries the hash of the config (or input data) and the seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_sha256: String,
    pub seed: u64,
    pub tool_version: String,
    pub payload: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(config_sha256: String, seed: u64, payload: T) -> Self {
        Self {
            config_sha256,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            payload,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Solved policy together with the configuration that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyFile {
    pub config: RunConfig,
    pub policy: Policy,
}

pub fn read_policy(path: &Path) -> Result<Artifact<PolicyFile>> {
    let text = fs::read_to_string(path)?;
    let art: Artifact<PolicyFile> = serde_json::from_str(&text)?;
    // route through the version check
    let policy = Policy::from_json(&serde_json::to_string(&art.payload.policy)?)?;
    Ok(Artifact {
        payload: PolicyFile {
            config: art.payload.config,
            policy,
        },
        ..art
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

// ---------------------------------------------------------------------------
// drivers

/// Metrics of `policy` on paths simulated from the resolved problem.
pub fn evaluate_policy<P: ControlPolicy + ?Sized>(policy: &P, r: &Resolved, n_paths: usize, seed: u64) -> Result<(Vec<Trajectory>, MetricsReport)> {
    let p = &r.problem;
    let tr = evaluate::rollout(policy, &p.model, &p.battery, &p.objective, p.x0, p.i0, n_paths, seed)?;
    let mut report = report_for(&tr, p)?;
    if let Some(actual) = &r.actual {
        let scenarios: Vec<Vec<f64>> = tr.iter().map(|t| t.x.clone()).collect();
        report.ecr = Some(ecr(&actual[..p.n_steps()], &scenarios)?);
    }
    Ok((tr, report))
}

fn report_for(tr: &[Trajectory], p: &Problem) -> Result<MetricsReport> {
    let thresholds: Vec<f64> = (0..p.objective.n_steps()).map(|k| p.objective.threshold_at(k)).collect();
    evaluate::metrics(tr, &p.objective.target, &p.battery, Some(&thresholds))
}

pub fn run_solve(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let r = cfg.resolve()?;
    info!("solving {} steps with seed {}", r.problem.n_steps(), r.seed);
    let policy = backward_solve(&r.problem, &r.solver, r.seed)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| r.out_dir.join("policy.json"));
    Artifact::new(
        cfg.sha256(),
        r.seed,
        PolicyFile {
            config: cfg.clone(),
            policy,
        },
    )
    .write(&path)?;
    Ok(path)
}

/// Rolls a saved policy out, on simulated paths or on recorded days from `replay`.
///
/// Replayed days are scored against the policy's own target, so they should share its
/// forecast; `day` restricts the replay to one labelled day.
#[allow(clippy::too_many_arguments)]
pub fn run_rollout(
    policy_path: &Path,
    n_paths: usize,
    seed: Option<u64>,
    replay: Option<&Path>,
    day: Option<&str>,
    out_dir: &Path,
    dump: bool,
) -> Result<MetricsReport> {
    let art = read_policy(policy_path)?;
    let seed = seed.unwrap_or(art.seed);
    let policy = &art.payload.policy;
    let p = &policy.problem;
    let (trajectories, report) = match replay {
        None => {
            let r = art.payload.config.resolve()?;
            evaluate_policy(policy, &r, n_paths, seed)?
        }
        Some(csv) => {
            let series = load_profiles(csv)?;
            let k = p.n_steps();
            let paths: Vec<Vec<f64>> = series
                .days
                .iter()
                .filter(|d| day.is_none_or(|l| d.label == l))
                .map(|d| d.actual.clone())
                .collect();
            if paths.is_empty() {
                return Err(Error::Profile(format!("no day {} in {}", day.unwrap_or("?"), csv.display())));
            }
            if paths[0].len() < k {
                return Err(Error::Profile(format!("replay days have {} hours, policy needs {k}", paths[0].len())));
            }
            let tr = evaluate::rollout_paths(policy, &paths, &p.battery, &p.objective, p.i0, p.dt())?;
            let report = report_for(&tr, p)?;
            (tr, report)
        }
    };
    fs::create_dir_all(out_dir)?;
    Artifact::new(art.config_sha256.clone(), seed, &report).write(&out_dir.join("metrics.json"))?;
    write_bands(&out_dir.join("bands.csv"), &report)?;
    if dump {
        let f = fs::File::create(out_dir.join("trajectories.csv"))?;
        evaluate::write_trajectories_csv(f, &trajectories)?;
    }
    Ok(report)
}

fn write_bands(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Profile(e.to_string()))?;
    let err = |e: csv::Error| Error::Profile(e.to_string());
    w.write_record(["step", "raw_lo", "raw_hi", "firmed_lo", "firmed_hi"]).map_err(err)?;
    for b in &report.bands {
        w.write_record(&[
            b.step.to_string(),
            b.raw_lo.to_string(),
            b.raw_hi.to_string(),
            b.firmed_lo.to_string(),
            b.firmed_hi.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LqReport {
    pub c1: f64,
    pub c2: f64,
    pub metrics: MetricsReport,
    /// Sweep table, best first; empty without `--sweep-c`.
    pub sweep: Vec<(f64, f64, f64)>,
}

fn lq_params(r: &Resolved, c1: f64, c2: f64) -> Result<LqParams> {
    match &r.problem.model {
        WindModel::Jacobi(p) => LqParams::new(p, &r.problem.battery, &r.problem.objective.target, c1, c2),
        WindModel::Calibrated { .. } => Err(Error::Config("the LQ baseline needs the Jacobi model".into())),
    }
}

/// Projected LQ policy at `(c1, c2)`, optionally after a Monte Carlo sweep of the weights.
pub fn run_lq(cfg: &RunConfig, weights: (f64, f64), sweep: Option<f64>) -> Result<LqReport> {
    let r = cfg.resolve()?;
    let (mut c1, mut c2) = weights;
    let mut table = Vec::new();
    if let Some(step) = sweep {
        let grid = weight_grid(0.0, 1.0, step);
        let points = sweep_weights(&grid, &grid, |a, b| {
            let lq = LqPolicy::new(&lq_params(&r, a, b)?, &r.problem.battery, DEFAULT_SUBSTEPS)?;
            let (_, m) = evaluate_policy(&lq, &r, r.n_paths, r.seed)?;
            Ok(m.value.mean)
        })?;
        c1 = points[0].c1;
        c2 = points[0].c2;
        table = points.iter().map(|p| (p.c1, p.c2, p.cost)).collect();
    }
    let lq = LqPolicy::new(&lq_params(&r, c1, c2)?, &r.problem.battery, DEFAULT_SUBSTEPS)?;
    let (_, metrics) = evaluate_policy(&lq, &r, r.n_paths, r.seed)?;
    let report = LqReport { c1, c2, metrics, sweep: table };
    Artifact::new(cfg.sha256(), r.seed, &report).write(&r.out_dir.join("lq_baseline.json"))?;
    Ok(report)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Duration,
    LambdaBl,
    LambdaCm,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: MetricsReport,
}

/// Config with `param` set to `value`.
pub fn with_param(cfg: &RunConfig, param: SweepParam, value: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Duration => {
            c.battery.duration = Some(value);
            c.battery.i_cap = None;
            c.battery.i_target = None;
            c.battery.i0 = None;
        }
        SweepParam::LambdaBl => c.objective.set_kind(&ObjectiveKind::Degradation { lambda_bl: value }),
        SweepParam::LambdaCm => {
            let threshold_factor = match cfg.objective.kind()? {
                ObjectiveKind::Curtailment { threshold_factor, .. } => threshold_factor,
                _ => DEFAULT_THRESHOLD_FACTOR,
            };
            c.objective.set_kind(&ObjectiveKind::Curtailment {
                lambda_cm: value,
                threshold_factor,
            })
        }
    }
    Ok(c)
}

/// Solves and evaluates one policy per grid value with common random numbers.
pub fn run_sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &v in grid {
        let c = with_param(cfg, param, v)?;
        let r = c.resolve()?;
        info!("sweep {param:?} = {v}");
        let policy = backward_solve(&r.problem, &r.solver, r.seed)?;
        let (_, metrics) = evaluate_policy(&policy, &r, r.n_paths, r.seed)?;
        rows.push(SweepRow { value: v, metrics });
    }
    Artifact::new(cfg.sha256(), cfg.run.seed, &rows).write(&cfg.run.out_dir.join(format!("sweep_{}.json", param_name(param))))?;
    Ok(rows)
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Duration => "duration",
        SweepParam::LambdaBl => "lambda_bl",
        SweepParam::LambdaCm => "lambda_cm",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub gp: MetricsReport,
    pub lq: MetricsReport,
    pub lq_weights: (f64, f64),
    /// Paired per-path cost difference LQ minus GP.
    pub excess: evaluate::Estimate,
    pub excess_percent: f64,
    pub solve_seconds: f64,
}

/// Stationary benchmark: learned policy against the projected LQ policy on common paths.
pub fn table1_config(paper_scale: bool) -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelSection::Jacobi {
            alpha: 0.5,
            m: 5.0,
            sigma: 0.2,
            x_max: 10.0,
        },
        battery: BatterySection {
            b_max: 1.0,
            b_min: Some(-1.0),
            i_cap: Some(3.0),
            duration: None,
            soc_min: 0.0,
            soc_max: 1.0,
            eta: 1.0,
            i_target: Some(1.5),
            terminal_penalty: 10.0,
            i0: Some(1.5),
        },
        objective: ObjectiveSection::from_kind(&ObjectiveKind::Quadratic, Some(TargetSpec::Constant(5.0))),
        design: desk_design(),
        solver: SolverSection::default(),
        run: RunSection {
            n_steps: Some(24),
            dt: Some(0.25),
            x0: Some(5.0),
            n_paths: 10_000,
            seed: 1,
            out_dir: default_out(),
        },
    };
    if paper_scale {
        cfg.run.n_steps = Some(96);
        cfg.design = paper_design(&cfg.design);
    }
    cfg
}

pub fn run_benchmark(cfg: &RunConfig, lq_weights: (f64, f64)) -> Result<BenchmarkReport> {
    let r = cfg.resolve()?;
    let started = std::time::Instant::now();
    let policy = backward_solve(&r.problem, &r.solver, r.seed)?;
    let solve_seconds = started.elapsed().as_secs_f64();
    let lq = LqPolicy::new(&lq_params(&r, lq_weights.0, lq_weights.1)?, &r.problem.battery, DEFAULT_SUBSTEPS)?;
    let eval_seed = r.seed.wrapping_add(1);
    let (gp_tr, gp) = evaluate_policy(&policy, &r, r.n_paths, eval_seed)?;
    let (lq_tr, lqm) = evaluate_policy(&lq, &r, r.n_paths, eval_seed)?;
    let diff: Vec<f64> = lq_tr.iter().zip(&gp_tr).map(|(a, b)| a.cost() - b.cost()).collect();
    let excess = evaluate::Estimate::from_samples(&diff)?;
    let report = BenchmarkReport {
        excess_percent: 100.0 * excess.mean / gp.value.mean,
        gp,
        lq: lqm,
        lq_weights,
        excess,
        solve_seconds,
    };
    Artifact::new(cfg.sha256(), r.seed, &report).write(&r.out_dir.join("benchmark.json"))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "hybrid-dispatch", version, about = "Wind-battery firming: calibration, policy learning and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the binned hourly model to a profile CSV.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Write a synthetic profile CSV (and its generating model) for testing.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the generating model here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Learn a policy from a run config.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full-size design (640 sites, 50 replicates).
        #[arg(long)]
        paper_scale: bool,
    },
    /// Evaluate a saved policy.
    Rollout {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 2000)]
        paths: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Replay recorded days from a profile CSV instead of simulating.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Only replay this day (YYYY-MM-DD).
        #[arg(long, requires = "replay")]
        day: Option<String>,
        #[arg(long, default_value = "out/rollout")]
        out: PathBuf,
        /// Also write every trajectory.
        #[arg(long)]
        dump: bool,
    },
    /// Evaluate the projected LQ policy.
    LqBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.08)]
        c1: f64,
        #[arg(long, default_value_t = 0.06)]
        c2: f64,
        /// Choose (c1, c2) by Monte Carlo over a grid on [0, 1]^2.
        #[arg(long)]
        sweep_c: bool,
        /// Grid spacing 0.01 instead of 0.5 when sweeping.
        #[arg(long)]
        fine: bool,
    },
    /// Solve and evaluate over a grid of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        grid: Vec<f64>,
    },
    /// Learned policy versus the LQ baseline on the stationary benchmark.
    Benchmark {
        /// Overrides the built-in benchmark config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { data, out, bins } => {
            let series = load_profiles(&data)?;
            let cal = calibrate(&series, bins)?;
            Artifact::new(sha256_file(&data)?, 0, &cal).write(&out)?;
            println!("calibrated {} records into {} bins -> {}", series.n_records(), bins, out.display());
        }
        Command::Synth { out, days, seed, truth } => {
            let spec = SyntheticSpec {
                n_days: days,
                ..SyntheticSpec::default()
            };
            let (mut series, model) = synthetic_profiles(&spec, seed)?;
            for (d, label) in series.days.iter_mut().zip(day_labels(days)) {
                d.label = label;
            }
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir)?;
            }
            write_profiles(fs::File::create(&out)?, &series)?;
            if let Some(t) = truth {
                Artifact::new(String::new(), seed, &model).write(&t)?;
            }
            println!("wrote {} days -> {}", days, out.display());
        }
        Command::Solve { config, out, paper_scale } => {
            let mut cfg = RunConfig::load(&config)?;
            if paper_scale {
                cfg.design = paper_design(&cfg.design);
            }
            let path = run_solve(&cfg, out.as_deref())?;
            println!("policy -> {}", path.display());
        }
        Command::Rollout {
            policy,
            paths,
            seed,
            replay,
            day,
            out,
            dump,
        } => {
            let report = run_rollout(&policy, paths, seed, replay.as_deref(), day.as_deref(), &out, dump)?;
            print_metrics(&report);
            println!("metrics -> {}", out.join("metrics.json").display());
        }
        Command::LqBaseline {
            config,
            c1,
            c2,
            sweep_c,
            fine,
        } => {
            let cfg = RunConfig::load(&config)?;
            let step = sweep_c.then_some(if fine { 0.01 } else { 0.5 });
            let report = run_lq(&cfg, (c1, c2), step)?;
            println!("LQ weights c1 = {}, c2 = {}", report.c1, report.c2);
            print_metrics(&report.metrics);
        }
        Command::Sweep { config, param, grid } => {
            if grid.is_empty() {
                return Err(Error::Config("--grid needs at least one value".into()));
            }
            let cfg = RunConfig::load(&config)?;
            let rows = run_sweep(&cfg, param, &grid)?;
            println!("{:>10} {:>12} {:>10} {:>10} {:>10}", param_name(param), "value", "EDR%", "EBL(y)", "ECV");
            for row in rows {
                let m = &row.metrics;
                println!(
                    "{:>10} {:>12.4} {:>10.2} {:>10.2} {:>10.4}",
                    row.value,
                    m.value.mean,
                    m.edr.mean,
                    m.ebl_years.mean,
                    m.ecv.map_or(f64::NAN, |e| e.mean)
                );
            }
        }
        Command::Benchmark {
            config,
            paper_scale,
            paths,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => table1_config(paper_scale),
            };
            if paper_scale {
                cfg.design = paper_design(&cfg.design);
            }
            if let Some(n) = paths {
                cfg.run.n_paths = n;
            }
            if let Some(o) = out {
                cfg.run.out_dir = o;
            }
            let rep = run_benchmark(&cfg, (0.08, 0.06))?;
            println!("solve time {:.1} s", rep.solve_seconds);
            println!("learned policy cost {:.4} +/- {:.4}", rep.gp.value.mean, rep.gp.value.se);
            println!("LQ policy cost      {:.4} +/- {:.4}", rep.lq.value.mean, rep.lq.value.se);
            println!("LQ excess {:.2}% (paired {:.4} +/- {:.4})", rep.excess_percent, rep.excess.mean, rep.excess.se);
        }
    }
    Ok(())
}

fn print_metrics(m: &MetricsReport) {
    println!("paths          {}", m.n_paths);
    println!("value          {:.6} +/- {:.6}", m.value.mean, m.value.se);
    println!("EDR (%)        {:.3} +/- {:.3}", m.edr.mean, m.edr.se);
    println!("pooled DR (%)  {:.3}", m.pooled_dr);
    println!("EBL (years)    {:.3} +/- {:.3}", m.ebl_years.mean, m.ebl_years.se);
    if let Some(e) = m.ecv {
        println!("ECV            {:.6} +/- {:.6}", e.mean, e.se);
    }
    if let Some(c) = m.ecr {
        println!("ECR            {c:.3}");
    }
}
