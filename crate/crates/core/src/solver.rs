//! Backward dynamic programming with Gaussian-process q-value and control emulators.
//!
//! `Q_k(x, iota)` is the expected cost-to-go from step `k + 1` given wind `x` at step `k`
//! and post-decision SoC `iota = I_{k+1}`; the last step uses the terminal penalty directly.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::design::{build_designs, training_domain, DesignConfig, PilotMoments};
use crate::dynamics::{BatterySpec, WindModel};
use crate::error::{Error, Result};
use crate::gp::{GpModel, GpSection, Hyper, KernelFamily, KernelSpec, MleBounds, MleConfig};
use crate::objectives::Objective;
use crate::optim::{brent_minimize, brent_root};
use crate::rng::stream_rng;

pub const POLICY_VERSION: u32 = 1;

const DESIGN_STREAM: u64 = 1 << 32;
const SIM_STREAM: u64 = 2 << 32;

/// Everything that defines a dispatch problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub model: WindModel,
    pub battery: BatterySpec,
    pub objective: Objective,
    pub x0: f64,
    pub i0: f64,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.battery.validate()?;
        self.objective.validate()?;
        if self.objective.n_steps() != self.model.n_steps() {
            return Err(Error::InvalidInput(format!(
                "objective covers {} steps, model {}",
                self.objective.n_steps(),
                self.model.n_steps()
            )));
        }
        let (lo, hi) = self.model.domain();
        if !(lo..=hi).contains(&self.x0) {
            return Err(Error::InvalidInput(format!("x0 = {} outside [{lo}, {hi}]", self.x0)));
        }
        if !(self.battery.i_min..=self.battery.i_max).contains(&self.i0) {
            return Err(Error::InvalidInput(format!("i0 = {} outside the SoC window", self.i0)));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.model.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.model.dt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub design: DesignConfig,
    /// MLE settings for the first fit of each emulator family.
    pub mle: MleConfig,
    /// MLE settings for fits warm-started from the previous step.
    pub warm_mle: MleConfig,
    pub bounds: MleBounds,
    /// Maximum training RMSE as a fraction of the target standard deviation.
    pub sanity_ratio: f64,
    /// Scan points per branch in the pointwise optimisation.
    pub scan_points: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            design: DesignConfig::default(),
            mle: MleConfig::default(),
            warm_mle: MleConfig {
                restarts: 0,
                max_evals: 80,
                min_improvement: 1e-6,
            },
            bounds: MleBounds::default(),
            sanity_ratio: 0.1,
            scan_points: 24,
        }
    }
}

/// Emulator fit diagnostics for one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rmse: f64,
    pub target_std: f64,
    pub log_likelihood: f64,
    pub evaluations: usize,
    pub mle_warning: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepPolicy {
    /// Control emulator over `(X_k, I_k)`.
    pub control: GpModel,
    /// q-value emulator over `(X_k, I_{k+1})`; absent at the last step.
    pub q: Option<GpModel>,
    pub x_range: (f64, f64),
    pub control_fit: FitDiagnostics,
    pub q_fit: Option<FitDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveMetadata {
    pub seed: u64,
    pub config: SolverConfig,
}

/// Solved dispatch policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Policy {
    pub version: u32,
    pub problem: Problem,
    pub steps: Vec<StepPolicy>,
    pub metadata: SolveMetadata,
    /// Wall-clock seconds per backward step; not persisted.
    #[serde(skip)]
    pub timings: Vec<f64>,
}

/// Continuation value as a function of post-decision SoC at fixed wind.
pub enum Continuation<'a> {
    Terminal(&'a BatterySpec),
    Section(GpSection<'a>),
}

impl Continuation<'_> {
    #[inline]
    pub fn value(&self, iota: f64) -> f64 {
        match self {
            Continuation::Terminal(b) => b.terminal_cost(iota),
            Continuation::Section(s) => s.mean(iota),
        }
    }

    #[inline]
    pub fn grad(&self, iota: f64) -> f64 {
        match self {
            Continuation::Terminal(b) => 2.0 * b.terminal_penalty * (iota - b.i_target),
            Continuation::Section(s) => s.grad(iota),
        }
    }
}

fn continuation<'a>(q: Option<&'a GpModel>, battery: &'a BatterySpec, x: f64) -> Continuation<'a> {
    match q {
        Some(gp) => Continuation::Section(gp.section(0, x)),
        None => Continuation::Terminal(battery),
    }
}

/// Minimiser over all real `b` of `f(x, b, k, i) dt + C(i + dI(b))`.
///
/// Smooth objectives: sign changes of the first-order condition on each side of the
/// kink at `b = 0` are bracketed on a scan grid and refined with Brent; the best of the
/// roots, the branch ends and `b = 0` wins. Nonsmooth objectives and bracketing
/// failures use a grid scan refined by Brent minimisation.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_control(
    x: f64,
    i: f64,
    k: usize,
    cont: &Continuation<'_>,
    objective: &Objective,
    battery: &BatterySpec,
    dt: f64,
    scan_points: usize,
) -> f64 {
    let d = x - objective.target_at(k);
    let span = battery.b_max - battery.b_min;
    let lo = (2.0 * battery.b_min).min(d - span);
    let hi = (2.0 * battery.b_max).max(d + span);
    let eta = battery.eta;
    let j = |b: f64| objective.step_cost(x, b, k, i, battery) * dt + cont.value(battery.advance(i, b, dt));

    let mut best_b = 0.0;
    let mut best_j = j(0.0);
    let consider = |b: f64, best_b: &mut f64, best_j: &mut f64| {
        let v = j(b);
        if v < *best_j {
            *best_j = v;
            *best_b = b;
        }
    };
    let n = scan_points.max(4);
    let tol = 1e-10 * (1.0 + span);

    for (a, z, rate, positive) in [(0.0, hi, eta * dt, true), (lo, 0.0, dt / eta, false)] {
        // keep the derivative on the branch side of the kink
        let nudge = |b: f64| if positive { b.max(1e-14) } else { b.min(-1e-14) };
        let grid: Vec<f64> = (0..=n).map(|s| a + (z - a) * s as f64 / n as f64).collect();
        let mut fallback = !objective.is_smooth_in_b();
        if !fallback {
            let h = |b: f64| {
                let b = nudge(b);
                objective.step_cost_db(x, b, k, i, battery) * dt + rate * cont.grad(battery.advance(i, b, dt))
            };
            let hv: Vec<f64> = grid.iter().map(|b| h(*b)).collect();
            for s in 0..n {
                if hv[s] < 0.0 && hv[s + 1] >= 0.0 {
                    match brent_root(h, grid[s], grid[s + 1], tol, 100) {
                        Some(r) => consider(r, &mut best_b, &mut best_j),
                        None => fallback = true,
                    }
                }
            }
            consider(if positive { z } else { a }, &mut best_b, &mut best_j);
        }
        if fallback {
            let jv: Vec<f64> = grid.iter().map(|b| j(*b)).collect();
            for s in 0..=n {
                let left = if s == 0 { f64::INFINITY } else { jv[s - 1] };
                let right = if s == n { f64::INFINITY } else { jv[s + 1] };
                if jv[s] <= left && jv[s] <= right {
                    let (ba, bz) = (grid[s.saturating_sub(1)], grid[(s + 1).min(n)]);
                    let (b, _) = brent_minimize(j, ba, bz, 1e-10, 200);
                    consider(b, &mut best_b, &mut best_j);
                    consider(grid[s], &mut best_b, &mut best_j);
                }
            }
            for kink in objective.kinks(x, k) {
                if kink > a && kink < z {
                    consider(kink, &mut best_b, &mut best_j);
                }
            }
        }
    }
    best_b
}

/// Clip into the admissible range at SoC `i`.
pub fn project_control(b_raw: f64, i: f64, battery: &BatterySpec, dt: f64) -> f64 {
    battery.project(b_raw, i, dt)
}

fn target_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn default_hyper(family: KernelFamily) -> Hyper {
    Hyper {
        kernel: KernelSpec {
            family,
            signal_variance: 1.0,
            lengthscales: [0.7, 0.7],
        },
        noise_variance: 1e-4,
    }
}

fn fit_emulator(
    inputs: &[[f64; 2]],
    targets: &[f64],
    family: KernelFamily,
    warm: Option<Hyper>,
    cfg: &SolverConfig,
    step: usize,
    which: &'static str,
    mc_variance: f64,
) -> Result<(GpModel, FitDiagnostics)> {
    let (init, mle) = match warm {
        Some(h) => (h, &cfg.warm_mle),
        None => (default_hyper(family), &cfg.mle),
    };
    let std = target_std(targets);
    // replicate-averaged targets carry Monte Carlo error the fit should not chase;
    // twice its variance leaves room for sampling error in the estimate itself
    let allowed = ((cfg.sanity_ratio * std).powi(2) + 2.0 * mc_variance).sqrt() + 1e-9 * (1.0 + std);
    let (mut gp, mut outcome) = GpModel::fit_mle(inputs, targets, &init, &cfg.bounds, mle)?;
    let mut rmse = gp.training_rmse();
    if !(rmse <= allowed) {
        // retry cold, then with the noise variance capped below the tolerated residual
        let half = gp.output_scaler.half.max(f64::MIN_POSITIVE);
        let cap = (0.5 * cfg.sanity_ratio * std / half).powi(2).max(cfg.bounds.noise_variance.0);
        let capped = MleBounds {
            noise_variance: (cfg.bounds.noise_variance.0, cap.min(cfg.bounds.noise_variance.1)),
            ..cfg.bounds
        };
        let mut cold = default_hyper(family);
        for bounds in [cfg.bounds, capped] {
            cold.noise_variance = cold.noise_variance.clamp(bounds.noise_variance.0, bounds.noise_variance.1);
            let (g, o) = GpModel::fit_mle(inputs, targets, &cold, &bounds, &cfg.mle)?;
            let r = g.training_rmse();
            info!("step {step} {which}: refit rmse {r:.3e} (was {rmse:.3e}, allowed {allowed:.3e})");
            if r < rmse {
                (gp, outcome, rmse) = (g, o, r);
            }
            if rmse <= allowed {
                break;
            }
        }
    }
    debug!(
        "step {step} {which}: rmse {rmse:.3e} std {std:.3e} mc {:.3e} hyper {:?}",
        mc_variance.sqrt(),
        gp.hyper()
    );
    if !(rmse <= allowed) {
        return Err(Error::EmulatorSanity { step, which, rmse, std });
    }
    Ok((
        gp,
        FitDiagnostics {
            rmse,
            target_std: std,
            log_likelihood: outcome.log_likelihood,
            evaluations: outcome.evaluations,
            mle_warning: outcome.warning,
        },
    ))
}

/// Control emulator `B_k` from unconstrained pointwise minimisers on the control design.
pub fn fit_control_emulator(
    design: &[[f64; 2]],
    targets: &[f64],
    warm: Option<Hyper>,
    cfg: &SolverConfig,
    step: usize,
) -> Result<(GpModel, FitDiagnostics)> {
    if design.len() != targets.len() {
        return Err(Error::InvalidInput("control design and targets differ in length".into()));
    }
    fit_emulator(design, targets, KernelFamily::Matern32, warm, cfg, step, "control", 0.0)
}

/// Realised value `f(x, b, k, i) dt + C_k(x, i + dI(b))` with `b` the projected emulated control.
pub fn q_target(
    x: f64,
    i: f64,
    k: usize,
    control: &GpModel,
    q: Option<&GpModel>,
    objective: &Objective,
    battery: &BatterySpec,
    dt: f64,
) -> f64 {
    let b = project_control(control.posterior_mean([x, i]), i, battery, dt);
    let next = battery.advance(i, b, dt);
    let cont = match q {
        Some(gp) => gp.posterior_mean([x, next]),
        None => battery.terminal_cost(next),
    };
    objective.step_cost(x, b, k, i, battery) * dt + cont
}

/// Runs the backward recursion and returns the fitted emulators.
pub fn backward_solve(problem: &Problem, cfg: &SolverConfig, seed: u64) -> Result<Policy> {
    problem.validate()?;
    cfg.design.validate()?;
    let n_steps = problem.n_steps();
    if n_steps < 2 {
        return Err(Error::InvalidInput("need at least 2 control steps".into()));
    }
    let dt = problem.dt();
    let battery = &problem.battery;
    let objective = &problem.objective;
    let design_cfg = DesignConfig {
        seed,
        ..cfg.design.clone()
    };
    let moments = PilotMoments::estimate(&problem.model, problem.x0, &design_cfg)?;
    let domain = problem.model.domain();
    let x_ranges: Vec<(f64, f64)> = (0..n_steps)
        .map(|k| training_domain(k, &moments, domain, &design_cfg))
        .collect::<Result<_>>()?;

    let mut steps: Vec<Option<StepPolicy>> = (0..n_steps).map(|_| None).collect();
    let mut timings = vec![0.0; n_steps];
    let mut warm_control: Option<Hyper> = None;
    let mut warm_q: Option<Hyper> = None;
    // q emulator of the step being processed (Q_k); None at the last step
    let mut q_k: Option<GpModel> = None;
    let mut q_k_fit: Option<FitDiagnostics> = None;

    for k in (0..n_steps).rev() {
        let started = Instant::now();
        let mut rng = stream_rng(seed, DESIGN_STREAM + k as u64);
        let designs = build_designs(x_ranges[k], battery, &design_cfg, &mut rng)?;

        let b_dagger: Vec<f64> = designs
            .control
            .iter()
            .map(|p| {
                let cont = continuation(q_k.as_ref(), battery, p[0]);
                pointwise_control(p[0], p[1], k, &cont, objective, battery, dt, cfg.scan_points)
            })
            .collect();
        let (control, control_fit) = fit_control_emulator(&designs.control, &b_dagger, warm_control, cfg, k)?;
        warm_control = Some(control.hyper());

        let mut q_prev = None;
        let mut q_prev_fit = None;
        if k > 0 {
            let prev = build_designs(x_ranges[k - 1], battery, &design_cfg, &mut rng)?;
            let mut sim = stream_rng(seed, SIM_STREAM + k as u64);
            let mut averaged = Vec::with_capacity(prev.sites.len());
            let mut mc_variance = 0.0;
            let reps = prev.n_rep as f64;
            for site in &prev.sites {
                let (mut acc, mut acc2) = (0.0, 0.0);
                for _ in 0..prev.n_rep {
                    let x_next = problem.model.step(k - 1, site[0], &mut sim)?;
                    let v = q_target(x_next, site[1], k, &control, q_k.as_ref(), objective, battery, dt);
                    acc += v;
                    acc2 += v * v;
                }
                let mean = acc / reps;
                if prev.n_rep > 1 {
                    mc_variance += (acc2 - reps * mean * mean).max(0.0) / (reps - 1.0) / reps;
                }
                averaged.push(mean);
            }
            mc_variance /= prev.sites.len() as f64;
            let (gp, fit) = fit_emulator(
                &prev.sites,
                &averaged,
                KernelFamily::Matern52,
                warm_q,
                cfg,
                k - 1,
                "q-value",
                mc_variance,
            )?;
            warm_q = Some(gp.hyper());
            q_prev = Some(gp);
            q_prev_fit = Some(fit);
        }

        steps[k] = Some(StepPolicy {
            control,
            q: q_k.take(),
            x_range: x_ranges[k],
            control_fit,
            q_fit: q_k_fit.take(),
        });
        q_k = q_prev;
        q_k_fit = q_prev_fit;
        timings[k] = started.elapsed().as_secs_f64();
        info!("backward step {k} done in {:.2}s", timings[k]);
    }

    let steps: Vec<StepPolicy> = steps.into_iter().map(|s| s.expect("all steps solved")).collect();
    Ok(Policy {
        version: POLICY_VERSION,
        problem: problem.clone(),
        steps,
        metadata: SolveMetadata {
            seed,
            config: cfg.clone(),
        },
        timings,
    })
}

impl Policy {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        self.problem.dt()
    }

    /// Emulated control before projection.
    pub fn raw_control(&self, k: usize, x: f64, i: f64) -> f64 {
        self.steps[k].control.posterior_mean([x, i])
    }

    /// Feasible control at step `k`.
    pub fn control(&self, k: usize, x: f64, i: f64) -> f64 {
        project_control(self.raw_control(k, x, i), i, &self.problem.battery, self.dt())
    }

    /// Continuation `Q_k(x, iota)`, the terminal penalty at the last step.
    pub fn continuation(&self, k: usize, x: f64, iota: f64) -> f64 {
        match &self.steps[k].q {
            Some(gp) => gp.posterior_mean([x, iota]),
            None => self.problem.battery.terminal_cost(iota),
        }
    }

    /// Emulated cost-to-go at step `k` under the projected policy control.
    pub fn value(&self, k: usize, x: f64, i: f64) -> f64 {
        let step = &self.steps[k];
        q_target(
            x,
            i,
            k,
            &step.control,
            step.q.as_ref(),
            &self.problem.objective,
            &self.problem.battery,
            self.dt(),
        )
    }

    /// Unconstrained pointwise minimiser against the stored continuation at step `k`.
    pub fn pointwise(&self, k: usize, x: f64, i: f64) -> f64 {
        let cont = continuation(self.steps[k].q.as_ref(), &self.problem.battery, x);
        pointwise_control(
            x,
            i,
            k,
            &cont,
            &self.problem.objective,
            &self.problem.battery,
            self.dt(),
            self.metadata.config.scan_points,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Policy = serde_json::from_str(text)?;
        if p.version != POLICY_VERSION {
            return Err(Error::InvalidInput(format!(
                "policy file version {} is not supported (expected {POLICY_VERSION})",
                p.version
            )));
        }
        if p.steps.len() != p.problem.n_steps() {
            return Err(Error::InvalidInput("policy step count does not match its problem".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
